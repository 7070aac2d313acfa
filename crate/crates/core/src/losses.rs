//! Training terms and their weighted sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_dm: f64,
    pub w_dnm: f64,
    pub w_eik: f64,
    pub w_proxy: f64,
    pub w_gauss: f64,
    pub alpha: f64,
}

impl Default for LossWeights {
    /// 7000 / 600 / 50 / 10 with `α = 100`, curvature weight on the proxy.
    fn default() -> Self {
        Self {
            w_dm: 7000.0,
            w_dnm: 600.0,
            w_eik: 50.0,
            w_proxy: 10.0,
            w_gauss: 0.0,
            alpha: 100.0,
        }
    }
}

impl LossWeights {
    /// The curvature weight in use, whichever slot holds it.
    pub fn curvature_weight(&self) -> f64 {
        self.w_proxy.max(self.w_gauss)
    }

    /// Moves the curvature weight into the slot the route reads, zeroing the
    /// other one.
    pub fn for_route(mut self, route: CurvatureRoute) -> Self {
        let w = self.curvature_weight();
        let (p, g) = match route {
            CurvatureRoute::ProxyFd { .. } | CurvatureRoute::ProxyAd => (w, 0.0),
            CurvatureRoute::GaussBaseline => (0.0, w),
            CurvatureRoute::None => (0.0, 0.0),
        };
        self.w_proxy = p;
        self.w_gauss = g;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.w_dm,
            self.w_dnm,
            self.w_eik,
            self.w_proxy,
            self.w_gauss,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config("alpha must be positive".into()));
        }
        if self.w_proxy > 0.0 && self.w_gauss > 0.0 {
            return Err(Error::Config(
                "at most one of w_proxy and w_gauss may be non-zero".into(),
            ));
        }
        Ok(())
    }
}

/// How the curvature term on the shell is computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CurvatureRoute {
    /// Mixed forward difference with step `h`.
    ProxyFd {
        h: f64,
    },
    /// One Hessian-vector product per shell point.
    ProxyAd,
    /// `|K|` from the full Hessian (three Hessian-vector products).
    GaussBaseline,
    None,
}

impl CurvatureRoute {
    pub fn name(&self) -> &'static str {
        match self {
            CurvatureRoute::ProxyFd { .. } => "proxy_fd",
            CurvatureRoute::ProxyAd => "proxy_ad",
            CurvatureRoute::GaussBaseline => "gauss",
            CurvatureRoute::None => "none",
        }
    }

    /// Parses `proxy_fd`, `proxy_ad`, `gauss`, `none` (case-insensitive,
    /// with a few aliases); `h` is used by the FD route.
    pub fn parse(name: &str, h: f64) -> Result<Self> {
        match name.to_ascii_lowercase().replace('-', "_").as_str() {
            "proxy_fd" | "proxyfd" | "fd" => Ok(CurvatureRoute::ProxyFd { h }),
            "proxy_ad" | "proxyad" | "ad" => Ok(CurvatureRoute::ProxyAd),
            "gauss" | "gauss_baseline" | "gaussbaseline" => Ok(CurvatureRoute::GaussBaseline),
            "none" => Ok(CurvatureRoute::None),
            other => Err(Error::Config(format!("unknown route {other:?}"))),
        }
    }
}

/// Penalty applied to each `S₁₂` sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ProxyNorm {
    /// `|S₁₂|`.
    #[default]
    L1,
    /// `S₁₂²`.
    L2,
}

impl ProxyNorm {
    pub fn penalty(self, s: f64) -> f64 {
        match self {
            ProxyNorm::L1 => s.abs(),
            ProxyNorm::L2 => s * s,
        }
    }

    /// Derivative of [`ProxyNorm::penalty`], with `d|t|/dt = 0` at `t = 0`.
    pub fn derivative(self, s: f64) -> f64 {
        match self {
            ProxyNorm::L1 => sign(s),
            ProxyNorm::L2 => 2.0 * s,
        }
    }
}

/// `sign(t)` with `sign(0) = 0`.
pub fn sign(t: f64) -> f64 {
    if t > 0.0 {
        1.0
    } else if t < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Unweighted term values.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub dm: f64,
    pub dnm: f64,
    pub eik: f64,
    pub proxy: f64,
    pub gauss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub dm: f64,
    pub dnm: f64,
    pub eik: f64,
    pub proxy: f64,
    pub gauss: f64,
    pub total: f64,
}

fn mean_of(values: &[f64], term: impl Fn(f64) -> f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(values.iter().map(|&v| term(v)).sum::<f64>() / values.len() as f64)
}

/// Mean `|f|` over on-surface points.
pub fn manifold_loss(values: &[f64]) -> Result<f64> {
    mean_of(values, f64::abs)
}

/// Mean `exp(−α|f|)` over free-space points.
pub fn nonmanifold_loss(values: &[f64], alpha: f64) -> Result<f64> {
    mean_of(values, |v| (-alpha * v.abs()).exp())
}

/// Mean `(‖∇f‖ − 1)²`.
pub fn eikonal_loss(grad_norms: &[f64]) -> Result<f64> {
    mean_of(grad_norms, |n| (n - 1.0) * (n - 1.0))
}

/// Mean `|S₁₂|`.
pub fn proxy_loss(s12_values: &[f64]) -> Result<f64> {
    proxy_loss_with(s12_values, ProxyNorm::L1)
}

pub fn proxy_loss_with(s12_values: &[f64], norm: ProxyNorm) -> Result<f64> {
    mean_of(s12_values, |s| norm.penalty(s))
}

/// Mean `|K|`.
pub fn gauss_loss(k_values: &[f64]) -> Result<f64> {
    mean_of(k_values, f64::abs)
}

pub fn total_loss(c: LossComponents, w: &LossWeights) -> LossBreakdown {
    let total = w.w_dm * c.dm
        + w.w_dnm * c.dnm
        + w.w_eik * c.eik
        + w.w_proxy * c.proxy
        + w.w_gauss * c.gauss;
    LossBreakdown {
        dm: c.dm,
        dnm: c.dnm,
        eik: c.eik,
        proxy: c.proxy,
        gauss: c.gauss,
        total,
    }
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [
            self.dm, self.dnm, self.eik, self.proxy, self.gauss, self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn manifold_examples() {
        assert_eq!(manifold_loss(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!((manifold_loss(&[0.1, -0.3]).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(manifold_loss(&[-0.5]).unwrap(), 0.5);
        assert!(matches!(manifold_loss(&[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn nonmanifold_examples() {
        assert_eq!(nonmanifold_loss(&[0.0], 100.0).unwrap(), 1.0);
        assert!((nonmanifold_loss(&[0.01], 100.0).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert!(nonmanifold_loss(&[10.0], 100.0).unwrap() < 1e-300);
    }

    #[test]
    fn eikonal_examples() {
        assert_eq!(eikonal_loss(&[1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(eikonal_loss(&[0.0]).unwrap(), 1.0);
        assert!((eikonal_loss(&[0.9, 1.1]).unwrap() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn proxy_and_gauss_examples() {
        assert_eq!(proxy_loss(&[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(proxy_loss(&[0.25, -0.25]).unwrap(), 0.25);
        assert_eq!(gauss_loss(&[1.0, -1.0]).unwrap(), 1.0);
        assert_eq!(proxy_loss_with(&[0.5, -0.5], ProxyNorm::L2).unwrap(), 0.25);
    }

    #[test]
    fn total_examples() {
        let ones = LossComponents {
            dm: 1.0,
            dnm: 1.0,
            eik: 1.0,
            proxy: 1.0,
            gauss: 0.0,
        };
        assert_eq!(total_loss(ones, &LossWeights::default()).total, 7660.0);
        assert_eq!(
            total_loss(LossComponents::default(), &LossWeights::default()).total,
            0.0
        );
        let w = LossWeights::default().for_route(CurvatureRoute::GaussBaseline);
        let c = LossComponents {
            gauss: 1.0,
            ..Default::default()
        };
        assert_eq!(total_loss(c, &w).total, 10.0);
    }

    #[test]
    fn route_exclusivity_is_validated() {
        let mut w = LossWeights::default();
        assert!(w.validate().is_ok());
        w.w_gauss = 1.0;
        assert!(w.validate().is_err());
        assert!(LossWeights::default()
            .for_route(CurvatureRoute::ProxyAd)
            .validate()
            .is_ok());
    }

    #[test]
    fn route_names_round_trip() {
        for r in [
            CurvatureRoute::ProxyFd { h: 1e-3 },
            CurvatureRoute::ProxyAd,
            CurvatureRoute::GaussBaseline,
            CurvatureRoute::None,
        ] {
            assert_eq!(CurvatureRoute::parse(r.name(), 1e-3).unwrap(), r);
        }
        assert!(CurvatureRoute::parse("hessian", 1e-3).is_err());
    }

    proptest! {
        #[test]
        fn terms_are_non_negative(vals in prop::collection::vec(-5.0f64..5.0, 1..40)) {
            prop_assert!(manifold_loss(&vals).unwrap() >= 0.0);
            prop_assert!(nonmanifold_loss(&vals, 100.0).unwrap() >= 0.0);
            let norms: Vec<f64> = vals.iter().map(|v| v.abs()).collect();
            prop_assert!(eikonal_loss(&norms).unwrap() >= 0.0);
            prop_assert!(proxy_loss(&vals).unwrap() >= 0.0);
            prop_assert!(gauss_loss(&vals).unwrap() >= 0.0);
        }

        #[test]
        fn proxy_is_sign_invariant(vals in prop::collection::vec(-5.0f64..5.0, 1..40)) {
            let flipped: Vec<f64> = vals.iter().map(|v| -v).collect();
            prop_assert_eq!(proxy_loss(&vals).unwrap(), proxy_loss(&flipped).unwrap());
        }

        #[test]
        fn nonmanifold_decreases_in_magnitude(a in 0.0f64..0.1, d in 1e-4f64..0.1) {
            prop_assert!(nonmanifold_loss(&[a + d], 100.0).unwrap() < nonmanifold_loss(&[a], 100.0).unwrap());
            prop_assert!(nonmanifold_loss(&[-(a + d)], 100.0).unwrap() < nonmanifold_loss(&[-a], 100.0).unwrap());
        }
    }
}
