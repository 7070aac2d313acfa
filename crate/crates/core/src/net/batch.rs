//! Row-batched versions of the network passes.
//!
//! A batch is a `B × 3` matrix of points; layer `l` keeps `B × width`
//! matrices so every sweep is a handful of matrix products. The passes are:
//!
//! * [`primal`]: `z_l = a_{l-1} W_lᵀ + b_l`, caching `s_l = sin ω z_l` and
//!   `c_l = cos ω z_l`.
//! * [`reverse`]: `∂f/∂a_l` for every layer, ending in `∇f`.
//! * [`tangent`]: directional derivative of the reverse sweep along an input
//!   direction `v`, ending in `H_f v`.
//! * [`param_adjoint`]: the parameter gradient of
//!   `Φ = Σ_b [c_f f + c_gᵀ ∇f + Σ_j w_jᵀ (H_f v_j)]` for per-row seeds
//!   `c_f, c_g, w_j`, by reverse-differentiating the three passes above.
//!
//! Matrices come from [`pool`](super::pool); call `recycle` on pass results
//! once they are no longer needed.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;

use super::pool::{self, matmul};
use super::{trig, NetworkParams, ParamGradient};
use crate::linalg::Vec3;

/// Rows per work unit.
pub const CHUNK: usize = 256;

pub fn points_to_matrix(xs: &[Vec3]) -> Array2<f64> {
    let mut m = pool::zeros(xs.len(), 3);
    for (mut row, x) in m.rows_mut().into_iter().zip(xs) {
        row[0] = x.x;
        row[1] = x.y;
        row[2] = x.z;
    }
    m
}

pub fn row_vec3(m: &Array2<f64>, i: usize) -> Vec3 {
    Vec3::new(m[[i, 0]], m[[i, 1]], m[[i, 2]])
}

pub struct Primal {
    pub inputs: Array2<f64>,
    pub s: Vec<Array2<f64>>,
    pub c: Vec<Array2<f64>>,
    pub f: Array1<f64>,
}

impl Primal {
    fn layer_input(&self, l: usize) -> ArrayView2<'_, f64> {
        if l == 0 {
            self.inputs.view()
        } else {
            self.s[l - 1].view()
        }
    }

    pub fn recycle(self) {
        pool::recycle(self.inputs);
        pool::recycle_all(self.s);
        pool::recycle_all(self.c);
    }
}

pub struct Reverse {
    /// `∂f/∂a_l` per hidden layer.
    pub da: Vec<Array2<f64>>,
    /// `∂f/∂z_l = ω c_l ⊙ da_l`.
    pub dz: Vec<Array2<f64>>,
    pub grad: Array2<f64>,
}

impl Reverse {
    pub fn recycle(self) {
        pool::recycle_all(self.da);
        pool::recycle_all(self.dz);
        pool::recycle(self.grad);
    }
}

pub struct Tangent {
    pub dir: Array2<f64>,
    pub zdot: Vec<Array2<f64>>,
    pub adot: Vec<Array2<f64>>,
    /// Tangent of `dz_l`.
    pub dzdot: Vec<Array2<f64>>,
    /// Tangent of `da_l`; the top entry is identically zero.
    pub dadot: Vec<Array2<f64>>,
    pub hv: Array2<f64>,
}

impl Tangent {
    pub fn recycle(self) {
        pool::recycle(self.dir);
        pool::recycle_all(self.zdot);
        pool::recycle_all(self.adot);
        pool::recycle_all(self.dzdot);
        pool::recycle_all(self.dadot);
        pool::recycle(self.hv);
    }
}

/// Per-row seeds of the scalar `Φ` differentiated by [`param_adjoint`].
#[derive(Default)]
pub struct Seeds {
    pub cf: Option<Array1<f64>>,
    pub cg: Option<Array2<f64>>,
    /// One seed matrix per tangent, in the same order.
    pub w: Vec<Array2<f64>>,
}

impl Seeds {
    pub fn recycle(self) {
        if let Some(cg) = self.cg {
            pool::recycle(cg);
        }
        pool::recycle_all(self.w);
    }
}

pub fn primal(params: &NetworkParams, inputs: Array2<f64>) -> Primal {
    let depth = params.depth();
    let rows = inputs.nrows();
    let omega = params.omega0;
    let mut s: Vec<Array2<f64>> = Vec::with_capacity(depth);
    let mut c: Vec<Array2<f64>> = Vec::with_capacity(depth);
    let mut z = pool::zeros(rows, params.width());
    for l in 0..depth {
        let layer = &params.layers[l];
        let input = if l == 0 {
            inputs.view()
        } else {
            s[l - 1].view()
        };
        for mut row in z.rows_mut() {
            row.assign(&layer.bias);
        }
        general_mat_mul(1.0, &input, &layer.weight.t(), 1.0, &mut z);
        let mut sl = pool::zeros(rows, layer.out_dim());
        let mut cl = pool::zeros(rows, layer.out_dim());
        trig::sin_cos_scaled(
            z.as_slice().unwrap(),
            omega,
            sl.as_slice_mut().unwrap(),
            cl.as_slice_mut().unwrap(),
        );
        s.push(sl);
        c.push(cl);
    }
    pool::recycle(z);
    let out = &params.layers[depth];
    let f = s[depth - 1].dot(&out.weight.row(0)) + out.bias[0];
    Primal { inputs, s, c, f }
}

pub fn reverse(params: &NetworkParams, primal: &Primal) -> Reverse {
    let depth = params.depth();
    let rows = primal.inputs.nrows();
    let omega = params.omega0;
    let w_out = params.layers[depth].weight.row(0);
    let mut current = pool::zeros(rows, params.width());
    for mut r in current.rows_mut() {
        r.assign(&w_out);
    }

    let mut da = Vec::with_capacity(depth);
    let mut dz = Vec::with_capacity(depth);
    for l in (0..depth).rev() {
        let mut d = pool::zeros(rows, params.width());
        {
            let out = d.as_slice_mut().unwrap();
            let cur = current.as_slice().unwrap();
            let c = primal.c[l].as_slice().unwrap();
            for i in 0..out.len() {
                out[i] = omega * c[i] * cur[i];
            }
        }
        let next = matmul(&d.view(), &params.layers[l].weight.view());
        da.push(std::mem::replace(&mut current, next));
        dz.push(d);
    }
    da.reverse();
    dz.reverse();
    Reverse {
        da,
        dz,
        grad: current,
    }
}

pub fn tangent(
    params: &NetworkParams,
    primal: &Primal,
    rev: &Reverse,
    dir: Array2<f64>,
) -> Tangent {
    let depth = params.depth();
    let omega = params.omega0;
    let omega2 = omega * omega;
    let rows = dir.nrows();
    let width = params.width();
    let mut zdot: Vec<Array2<f64>> = Vec::with_capacity(depth);
    let mut adot: Vec<Array2<f64>> = Vec::with_capacity(depth);
    for l in 0..depth {
        let input = if l == 0 {
            dir.view()
        } else {
            adot[l - 1].view()
        };
        let zd = matmul(&input, &params.layers[l].weight.t());
        let mut ad = pool::zeros(rows, width);
        {
            let out = ad.as_slice_mut().unwrap();
            let zs = zd.as_slice().unwrap();
            let c = primal.c[l].as_slice().unwrap();
            for i in 0..out.len() {
                out[i] = omega * c[i] * zs[i];
            }
        }
        zdot.push(zd);
        adot.push(ad);
    }

    let mut dzdot = Vec::with_capacity(depth);
    let mut dadot = Vec::with_capacity(depth);
    let mut current = pool::zeros(rows, width);
    for l in (0..depth).rev() {
        let mut d = pool::zeros(rows, width);
        {
            let out = d.as_slice_mut().unwrap();
            let s = primal.s[l].as_slice().unwrap();
            let c = primal.c[l].as_slice().unwrap();
            let zd = zdot[l].as_slice().unwrap();
            let da = rev.da[l].as_slice().unwrap();
            if l + 1 == depth {
                for i in 0..out.len() {
                    out[i] = -omega2 * s[i] * zd[i] * da[i];
                }
            } else {
                let dad = current.as_slice().unwrap();
                for i in 0..out.len() {
                    out[i] = omega * c[i] * dad[i] - omega2 * s[i] * zd[i] * da[i];
                }
            }
        }
        let next = matmul(&d.view(), &params.layers[l].weight.view());
        dadot.push(std::mem::replace(&mut current, next));
        dzdot.push(d);
    }
    dadot.reverse();
    dzdot.reverse();
    Tangent {
        dir,
        zdot,
        adot,
        dzdot,
        dadot,
        hv: current,
    }
}

/// Accumulates `∂Φ/∂θ` into `grad`. `rev` must be present whenever `c_g` or
/// any tangent is seeded.
pub fn param_adjoint(
    params: &NetworkParams,
    primal: &Primal,
    rev: Option<&Reverse>,
    tangents: &[Tangent],
    seeds: &Seeds,
    grad: &mut ParamGradient,
) {
    let depth = params.depth();
    let rows = primal.inputs.nrows();
    let width = params.width();
    let omega = params.omega0;
    let omega2 = omega * omega;
    assert_eq!(tangents.len(), seeds.w.len(), "one seed per tangent");
    assert!(
        rev.is_some() || (seeds.cg.is_none() && tangents.is_empty()),
        "gradient and tangent seeds need the reverse pass"
    );

    // Adjoints of c_l and s_l collected from the reverse and tangent sweeps,
    // and of ż_l from the reverse-tangent sweep.
    let mut c_hat: Vec<Array2<f64>> = Vec::new();
    let mut s_hat: Vec<Array2<f64>> = Vec::new();
    let mut zdot_hat: Vec<Vec<Array2<f64>>> = vec![Vec::with_capacity(depth); tangents.len()];

    if let Some(rev) = rev {
        // Both reverse sweeps run top-down, so their adjoints run bottom-up.
        let mut r_prev: Option<Array2<f64>> = None;
        let mut p_prev: Vec<Array2<f64>> = Vec::new();
        for l in 0..depth {
            let weight = &params.layers[l].weight;
            let r_in = match (&r_prev, &seeds.cg) {
                (Some(r), _) => Some(r.view()),
                (None, Some(cg)) => Some(cg.view()),
                (None, None) => None,
            };
            let t = r_in.map(|r| {
                general_mat_mul(1.0, &rev.dz[l].t(), &r, 1.0, &mut grad.layers[l].weight);
                matmul(&r, &weight.t())
            });
            let mut qs = Vec::with_capacity(tangents.len());
            for (j, tan) in tangents.iter().enumerate() {
                let p = if l == 0 {
                    seeds.w[j].view()
                } else {
                    p_prev[j].view()
                };
                qs.push(matmul(&p, &weight.t()));
                general_mat_mul(1.0, &tan.dzdot[l].t(), &p, 1.0, &mut grad.layers[l].weight);
            }

            let top = l + 1 == depth;
            let s = primal.s[l].as_slice().unwrap();
            let c = primal.c[l].as_slice().unwrap();
            let da = rev.da[l].as_slice().unwrap();
            let mut r = pool::zeros(rows, width);
            let mut ch = pool::zeros(rows, width);
            let mut sh = pool::zeros(rows, width);
            if let Some(t) = &t {
                let t = t.as_slice().unwrap();
                let r = r.as_slice_mut().unwrap();
                let ch = ch.as_slice_mut().unwrap();
                for i in 0..r.len() {
                    r[i] = omega * c[i] * t[i];
                    ch[i] = omega * da[i] * t[i];
                }
            }
            let mut next_p = Vec::with_capacity(tangents.len());
            for (j, (tan, q)) in tangents.iter().zip(&qs).enumerate() {
                let q = q.as_slice().unwrap();
                let zd = tan.zdot[l].as_slice().unwrap();
                let mut zh = pool::zeros(rows, width);
                {
                    let r = r.as_slice_mut().unwrap();
                    let sh = sh.as_slice_mut().unwrap();
                    let zh = zh.as_slice_mut().unwrap();
                    for i in 0..r.len() {
                        let k = -omega2 * q[i];
                        r[i] += k * s[i] * zd[i];
                        sh[i] += k * zd[i] * da[i];
                        zh[i] = k * s[i] * da[i];
                    }
                }
                if !top {
                    let dad = tan.dadot[l].as_slice().unwrap();
                    let ch = ch.as_slice_mut().unwrap();
                    let mut p = pool::zeros(rows, width);
                    let ps = p.as_slice_mut().unwrap();
                    for i in 0..ps.len() {
                        ch[i] += omega * dad[i] * q[i];
                        ps[i] = omega * c[i] * q[i];
                    }
                    next_p.push(p);
                }
                zdot_hat[j].push(zh);
            }
            if top {
                let mut w_out = grad.layers[depth].weight.row_mut(0);
                w_out += &r.sum_axis(Axis(0));
            }
            c_hat.push(ch);
            s_hat.push(sh);
            if let Some(t) = t {
                pool::recycle(t);
            }
            pool::recycle_all(qs);
            if let Some(old) = r_prev.replace(r) {
                pool::recycle(old);
            }
            pool::recycle_all(std::mem::replace(&mut p_prev, next_p));
        }
        if let Some(r) = r_prev {
            pool::recycle(r);
        }
        pool::recycle_all(p_prev);
    }

    // The tangent and primal passes run bottom-up; their adjoints top-down.
    let w_out = params.layers[depth].weight.row(0);
    let mut a_hat: Option<Array2<f64>> = None;
    if let Some(cf) = &seeds.cf {
        let mut ah = pool::zeros(rows, width);
        for (mut row, &cv) in ah.rows_mut().into_iter().zip(cf) {
            row.zip_mut_with(&w_out, |a, &w| *a = w * cv);
        }
        a_hat = Some(ah);
        let out = &mut grad.layers[depth];
        let mut w_row = out.weight.row_mut(0);
        w_row += &primal.s[depth - 1].t().dot(cf);
        out.bias[0] += cf.sum();
    }
    let mut adot_hat: Vec<Option<Array2<f64>>> = (0..tangents.len()).map(|_| None).collect();

    for l in (0..depth).rev() {
        let weight = &params.layers[l].weight;
        let s = primal.s[l].as_slice().unwrap();
        let c = primal.c[l].as_slice().unwrap();
        for (j, tan) in tangents.iter().enumerate() {
            let mut zh = zdot_hat[j].pop().expect("one adjoint per layer");
            if let Some(ah) = adot_hat[j].take() {
                {
                    let ahs = ah.as_slice().unwrap();
                    let zd = tan.zdot[l].as_slice().unwrap();
                    let zhs = zh.as_slice_mut().unwrap();
                    let ch = c_hat[l].as_slice_mut().unwrap();
                    for i in 0..zhs.len() {
                        zhs[i] += omega * c[i] * ahs[i];
                        ch[i] += omega * zd[i] * ahs[i];
                    }
                }
                pool::recycle(ah);
            }
            let input = if l == 0 {
                tan.dir.view()
            } else {
                tan.adot[l - 1].view()
            };
            general_mat_mul(1.0, &zh.t(), &input, 1.0, &mut grad.layers[l].weight);
            if l > 0 {
                adot_hat[j] = Some(matmul(&zh.view(), &weight.view()));
            }
            pool::recycle(zh);
        }

        if a_hat.is_none() && rev.is_none() {
            continue;
        }
        let mut zh = pool::zeros(rows, width);
        {
            let zs = zh.as_slice_mut().unwrap();
            if let Some(ah) = &a_hat {
                let ah = ah.as_slice().unwrap();
                for i in 0..zs.len() {
                    zs[i] = omega * c[i] * ah[i];
                }
            }
            if rev.is_some() {
                let sh = s_hat[l].as_slice().unwrap();
                let ch = c_hat[l].as_slice().unwrap();
                for i in 0..zs.len() {
                    zs[i] += omega * (c[i] * sh[i] - s[i] * ch[i]);
                }
            }
        }
        let layer = &mut grad.layers[l];
        general_mat_mul(1.0, &zh.t(), &primal.layer_input(l), 1.0, &mut layer.weight);
        layer.bias += &zh.sum_axis(Axis(0));
        let next = (l > 0).then(|| matmul(&zh.view(), &weight.view()));
        if let Some(old) = std::mem::replace(&mut a_hat, next) {
            pool::recycle(old);
        }
        pool::recycle(zh);
    }
    if let Some(ah) = a_hat {
        pool::recycle(ah);
    }
    pool::recycle_all(c_hat);
    pool::recycle_all(s_hat);
}

/// Ordered map over `CHUNK`-row slices of `xs`, run in parallel.
pub(crate) fn map_chunks<T, F>(xs: &[Vec3], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&[Vec3]) -> T + Sync + Send,
{
    xs.par_chunks(CHUNK).map(f).collect()
}

pub fn values(params: &NetworkParams, xs: &[Vec3]) -> Vec<f64> {
    map_chunks(xs, |chunk| {
        let p = primal(params, points_to_matrix(chunk));
        let f = p.f.to_vec();
        p.recycle();
        f
    })
    .into_iter()
    .flatten()
    .collect()
}

pub fn values_and_gradients(params: &NetworkParams, xs: &[Vec3]) -> Vec<(f64, Vec3)> {
    map_chunks(xs, |chunk| {
        let p = primal(params, points_to_matrix(chunk));
        let r = reverse(params, &p);
        let out = (0..chunk.len())
            .map(|i| (p.f[i], row_vec3(&r.grad, i)))
            .collect::<Vec<_>>();
        p.recycle();
        r.recycle();
        out
    })
    .into_iter()
    .flatten()
    .collect()
}

/// `(f, ∇f, H_f v)` per point.
pub fn values_gradients_hvps(
    params: &NetworkParams,
    xs: &[Vec3],
    dirs: &[Vec3],
) -> Vec<(f64, Vec3, Vec3)> {
    assert_eq!(xs.len(), dirs.len());
    let idx: Vec<usize> = (0..xs.len()).collect();
    idx.par_chunks(CHUNK)
        .map(|ids| {
            let pts: Vec<Vec3> = ids.iter().map(|&i| xs[i]).collect();
            let ds: Vec<Vec3> = ids.iter().map(|&i| dirs[i]).collect();
            let p = primal(params, points_to_matrix(&pts));
            let r = reverse(params, &p);
            let t = tangent(params, &p, &r, points_to_matrix(&ds));
            let out = (0..ids.len())
                .map(|i| (p.f[i], row_vec3(&r.grad, i), row_vec3(&t.hv, i)))
                .collect::<Vec<_>>();
            p.recycle();
            r.recycle();
            t.recycle();
            out
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}
