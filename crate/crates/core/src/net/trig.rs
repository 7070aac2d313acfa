//! Vectorizable `sin`/`cos` used by the sine layers.
//!
//! Cody–Waite reduction by π/2 followed by the fdlibm minimax kernels.
//! Accurate to a couple of ulp for |x| below 1e6; larger or non-finite
//! arguments fall back to the standard library.

use std::f64::consts::FRAC_2_PI;

const PIO2_1: f64 = 1.570_796_326_734_125_6;
const PIO2_2: f64 = 6.077_100_506_303_966e-11;
const PIO2_3: f64 = 2.022_266_248_711_166_5e-21;
const SHIFTER: f64 = 6_755_399_441_055_744.0;
const FAST_LIMIT: f64 = 1.0e6;

#[inline(always)]
fn kernel(x: f64) -> (f64, f64) {
    let t = x * FRAC_2_PI + SHIFTER;
    let q = t.to_bits();
    let k = t - SHIFTER;
    let r = ((x - k * PIO2_1) - k * PIO2_2) - k * PIO2_3;
    let z = r * r;
    let s = r + r
        * z
        * (-1.666_666_666_666_663_2e-1
            + z * (8.333_333_333_322_49e-3
                + z * (-1.984_126_982_985_795e-4
                    + z * (2.755_731_370_707_006_8e-6
                        + z * (-2.505_076_025_340_686_3e-8 + z * 1.589_690_995_211_55e-10)))));
    let c = 1.0 - 0.5 * z
        + z * z
            * (4.166_666_666_666_66e-2
                + z * (-1.388_888_888_887_411e-3
                    + z * (2.480_158_728_947_673e-5
                        + z * (-2.755_731_435_139_066_3e-7
                            + z * (2.087_572_321_298_175e-9 + z * -1.135_964_755_778_819_5e-11)))));
    // Quadrant q: odd quadrants swap sin and cos, bit 1 flips signs. Integer
    // masks keep the loop free of int-to-float conversions so it vectorizes.
    let swap = 0u64.wrapping_sub(q & 1);
    let (sb, cb) = (s.to_bits(), c.to_bits());
    let s1 = (sb & !swap) | (cb & swap);
    let c1 = (cb & !swap) | (sb & swap);
    let s2 = f64::from_bits(s1 ^ ((q & 2) << 62));
    let c2 = f64::from_bits(c1 ^ ((q.wrapping_add(1) & 2) << 62));
    (s2, c2)
}

/// `(sin x, cos x)`.
#[inline]
pub fn sin_cos(x: f64) -> (f64, f64) {
    if x.abs() < FAST_LIMIT {
        kernel(x)
    } else {
        x.sin_cos()
    }
}

/// `s[i], c[i] = sin(ω z[i]), cos(ω z[i])`.
pub fn sin_cos_scaled(z: &[f64], omega: f64, s: &mut [f64], c: &mut [f64]) {
    assert!(z.len() == s.len() && z.len() == c.len());
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2, checked just above.
            unsafe { sin_cos_scaled_avx2(z, omega, s, c) };
            return;
        }
    }
    sin_cos_scaled_generic(z, omega, s, c);
}

#[inline(always)]
fn sin_cos_scaled_generic(z: &[f64], omega: f64, s: &mut [f64], c: &mut [f64]) {
    let mut out_of_range = false;
    for ((zi, si), ci) in z.iter().zip(s.iter_mut()).zip(c.iter_mut()) {
        let x = omega * zi;
        out_of_range |= !(x.abs() < FAST_LIMIT);
        let (a, b) = kernel(x);
        *si = a;
        *ci = b;
    }
    if out_of_range {
        for ((zi, si), ci) in z.iter().zip(s.iter_mut()).zip(c.iter_mut()) {
            let x = omega * zi;
            if !(x.abs() < FAST_LIMIT) {
                (*si, *ci) = x.sin_cos();
            }
        }
    }
}

/// Same arithmetic as the generic loop (no FMA contraction), so results are
/// bit-identical; only the vector width differs.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn sin_cos_scaled_avx2(z: &[f64], omega: f64, s: &mut [f64], c: &mut [f64]) {
    sin_cos_scaled_generic(z, omega, s, c)
}
