//! Sinusoidal MLP `f_θ: ℝ³ → ℝ` with hand-written derivative passes.
//!
//! Hidden layer `l` computes `a_l = sin(ω₀ (W_l a_{l-1} + b_l))`; the last
//! layer is affine. Every derivative here (input gradient, Hessian-vector
//! product, parameter gradient of the training objective) is an explicit
//! adjoint or tangent sweep over the same layer recurrences.

pub mod batch;
pub mod checkpoint;
mod objective;
mod pool;
pub mod trig;

use ndarray::{Array1, Array2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::linalg::{Mat3Sym, Vec3};

pub use checkpoint::{load_checkpoint, save_checkpoint, to_json};
pub use objective::{frozen_frames, loss_parameter_gradient, loss_value, BatchSpec};

pub const DEFAULT_OMEGA0: f64 = 30.0;

/// One affine layer: `weight` is `out × in`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    /// `depth` hidden layers followed by the scalar output layer.
    pub layers: Vec<Layer>,
    pub omega0: f64,
}

/// Derivative of a scalar with respect to every weight and bias; same
/// layout as [`NetworkParams::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient {
    pub layers: Vec<Layer>,
}

/// Intermediates of one forward pass. `pre[l]` is `W_l a_{l-1} + b_l` (before
/// the ω₀ scaling), `act[l]` the layer output; the last entry of each is
/// the scalar output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub pre: Vec<Array1<f64>>,
    pub act: Vec<Array1<f64>>,
}

impl EvalRecord {
    pub fn len(&self) -> usize {
        self.pre.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pre.is_empty()
    }
}

/// SIREN initialization. First-layer weights are uniform on `±1/3`, later
/// weights on `±√(6/n)/ω₀` with `n` the fan-in; biases uniform on `±1/√n`.
pub fn init_siren(depth: usize, width: usize, omega0: f64, seed: u64) -> NetworkParams {
    assert!(depth >= 1 && width >= 1, "depth and width must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(depth + 1);
    for l in 0..=depth {
        let in_dim = if l == 0 { 3 } else { width };
        let out_dim = if l == depth { 1 } else { width };
        let w_bound = if l == 0 {
            1.0 / in_dim as f64
        } else {
            (6.0 / in_dim as f64).sqrt() / omega0
        };
        let b_bound = 1.0 / (in_dim as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((out_dim, in_dim), || {
            rng.random_range(-w_bound..=w_bound)
        });
        let bias = Array1::from_shape_simple_fn(out_dim, || rng.random_range(-b_bound..=b_bound));
        layers.push(Layer { weight, bias });
    }
    NetworkParams { layers, omega0 }
}

impl NetworkParams {
    /// Builds a network from explicit layers after checking the shape chain.
    pub fn from_layers(layers: Vec<Layer>, omega0: f64) -> Result<Self> {
        let p = Self { layers, omega0 };
        p.validate()?;
        Ok(p)
    }

    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn width(&self) -> usize {
        self.layers[0].out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.len() < 2 {
            return Err(Error::ShapeMismatch(format!(
                "need at least one hidden layer, got {} layers",
                self.layers.len()
            )));
        }
        let width = self.width();
        for (l, layer) in self.layers.iter().enumerate() {
            let in_dim = if l == 0 { 3 } else { width };
            let out_dim = if l == self.depth() { 1 } else { width };
            if layer.weight.dim() != (out_dim, in_dim) || layer.bias.len() != out_dim {
                return Err(Error::ShapeMismatch(format!(
                    "layer {l}: weight {:?} bias {}, expected ({out_dim}, {in_dim}) and {out_dim}",
                    layer.weight.dim(),
                    layer.bias.len()
                )));
            }
        }
        if !self.omega0.is_finite() || !self.is_finite() {
            return Err(Error::ShapeMismatch("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite()))
    }

    /// Output weights `w_o` as a vector of length `width`.
    fn output_weights(&self) -> Array1<f64> {
        self.layers[self.depth()].weight.row(0).to_owned()
    }

    pub fn forward(&self, x: Vec3) -> f64 {
        self.forward_with_record(x).0
    }

    pub fn forward_with_record(&self, x: Vec3) -> (f64, EvalRecord) {
        let depth = self.depth();
        let mut pre = Vec::with_capacity(depth + 1);
        let mut act = Vec::with_capacity(depth + 1);
        let mut a = Array1::from(x.to_array().to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.weight.dot(&a) + &layer.bias;
            a = if l < depth {
                z.mapv(|v| trig::sin_cos(self.omega0 * v).0)
            } else {
                z.clone()
            };
            pre.push(z);
            act.push(a.clone());
        }
        (a[0], EvalRecord { pre, act })
    }

    /// Value and exact `∇f(x)` from one adjoint sweep.
    pub fn input_gradient(&self, x: Vec3) -> (f64, Vec3) {
        let (value, record) = self.forward_with_record(x);
        let (grad, _) = self.reverse_sweep(&record);
        (value, grad)
    }

    /// Adjoint sweep: returns `∇f` and the per-layer adjoints `∂f/∂a_l`.
    fn reverse_sweep(&self, record: &EvalRecord) -> (Vec3, Vec<Array1<f64>>) {
        let depth = self.depth();
        let w = self.omega0;
        let mut da_layers = vec![Array1::zeros(0); depth];
        let mut da = self.output_weights();
        for l in (0..depth).rev() {
            let dz = Zip::from(&record.pre[l])
                .and(&da)
                .map_collect(|&z, &d| w * trig::sin_cos(w * z).1 * d);
            let next = self.layers[l].weight.t().dot(&dz);
            da_layers[l] = std::mem::replace(&mut da, next);
        }
        (Vec3::new(da[0], da[1], da[2]), da_layers)
    }

    /// `H_f(x) v` by a forward tangent pass through the gradient sweep.
    pub fn hvp(&self, x: Vec3, v: Vec3) -> Vec3 {
        let (_, record) = self.forward_with_record(x);
        let (_, da) = self.reverse_sweep(&record);
        let depth = self.depth();
        let w = self.omega0;

        let mut zdots = Vec::with_capacity(depth);
        let mut adot = Array1::from(v.to_array().to_vec());
        for l in 0..depth {
            let zdot = self.layers[l].weight.dot(&adot);
            adot = Zip::from(&record.pre[l])
                .and(&zdot)
                .map_collect(|&z, &zd| w * trig::sin_cos(w * z).1 * zd);
            zdots.push(zdot);
        }

        // d(∂f/∂a_l)/dv, zero at the top because ∂f/∂a_{D-1} = w_o.
        let mut dadot: Array1<f64> = Array1::zeros(self.width());
        for l in (0..depth).rev() {
            let mut dzdot = Array1::zeros(self.width());
            Zip::from(&mut dzdot)
                .and(&record.pre[l])
                .and(&dadot)
                .and(&zdots[l])
                .and(&da[l])
                .for_each(|out, &z, &dad, &zd, &d| {
                    let (s, c) = trig::sin_cos(w * z);
                    *out = w * c * dad - w * w * s * zd * d;
                });
            dadot = self.layers[l].weight.t().dot(&dzdot);
        }
        Vec3::new(dadot[0], dadot[1], dadot[2])
    }

    /// Hessian from `H e₁, H e₂, H e₃`, symmetrized.
    pub fn full_hessian(&self, x: Vec3) -> Mat3Sym {
        Mat3Sym::from_columns_symmetrized(
            self.hvp(x, Vec3::X),
            self.hvp(x, Vec3::Y),
            self.hvp(x, Vec3::Z),
        )
    }

    /// `self += scale · dir`, used by optimizers and finite-difference checks.
    pub fn add_scaled(&mut self, dir: &ParamGradient, scale: f64) {
        for (p, d) in self.layers.iter_mut().zip(&dir.layers) {
            p.weight.scaled_add(scale, &d.weight);
            p.bias.scaled_add(scale, &d.bias);
        }
    }
}

impl Field for NetworkParams {
    fn value(&self, x: Vec3) -> f64 {
        self.forward(x)
    }

    fn value_and_gradient(&self, x: Vec3) -> (f64, Vec3) {
        self.input_gradient(x)
    }

    fn hvp(&self, x: Vec3, v: Vec3) -> Vec3 {
        NetworkParams::hvp(self, x, v)
    }

    fn hessian(&self, x: Vec3) -> Mat3Sym {
        self.full_hessian(x)
    }

    fn values(&self, xs: &[Vec3]) -> Vec<f64> {
        batch::values(self, xs)
    }

    fn values_and_gradients(&self, xs: &[Vec3]) -> Vec<(f64, Vec3)> {
        batch::values_and_gradients(self, xs)
    }
}

impl ParamGradient {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| Layer::zeros(l.out_dim(), l.in_dim()))
                .collect(),
        }
    }

    pub fn check_shape(&self, params: &NetworkParams) -> Result<()> {
        let ok = self.layers.len() == params.layers.len()
            && self
                .layers
                .iter()
                .zip(&params.layers)
                .all(|(g, p)| g.weight.dim() == p.weight.dim() && g.bias.len() == p.bias.len());
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(
                "gradient layout differs from parameters".into(),
            ))
        }
    }

    pub fn add_assign(&mut self, other: &ParamGradient) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn dot(&self, other: &ParamGradient) -> f64 {
        self.layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| {
                a.weight
                    .iter()
                    .zip(&b.weight)
                    .map(|(x, y)| x * y)
                    .sum::<f64>()
                    + a.bias.iter().zip(&b.bias).map(|(x, y)| x * y).sum::<f64>()
            })
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite()))
    }

    /// A random direction with i.i.d. entries on `[-1, 1]`.
    pub fn random_like(params: &NetworkParams, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Self::zeros_like(params);
        for l in &mut g.layers {
            l.weight.mapv_inplace(|_| rng.random_range(-1.0..=1.0));
            l.bias.mapv_inplace(|_| rng.random_range(-1.0..=1.0));
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    /// One hidden unit reading `x`, identity output.
    fn one_unit(omega0: f64) -> NetworkParams {
        let mut hidden = Layer::zeros(1, 3);
        hidden.weight[[0, 0]] = 1.0;
        let mut out = Layer::zeros(1, 1);
        out.weight[[0, 0]] = 1.0;
        NetworkParams::from_layers(vec![hidden, out], omega0).unwrap()
    }

    fn constant_net(c: f64) -> NetworkParams {
        let mut p = init_siren(2, 8, 30.0, 3);
        for l in &mut p.layers {
            l.weight.fill(0.0);
        }
        p.layers[2].bias[0] = c;
        p
    }

    #[test]
    fn init_shapes_follow_the_architecture() {
        let p = init_siren(4, 256, 30.0, 1);
        let shapes: Vec<_> = p.layers.iter().map(|l| l.weight.dim()).collect();
        assert_eq!(
            shapes,
            vec![(256, 3), (256, 256), (256, 256), (256, 256), (1, 256)]
        );
        assert_eq!(p.depth(), 4);
        assert_eq!(p.width(), 256);
    }

    #[test]
    fn init_is_deterministic() {
        assert_eq!(init_siren(3, 16, 30.0, 9), init_siren(3, 16, 30.0, 9));
        assert_ne!(init_siren(3, 16, 30.0, 9), init_siren(3, 16, 30.0, 10));
    }

    #[test]
    fn init_respects_bounds() {
        let p = init_siren(1, 8, 30.0, 7);
        assert!(p.layers[0].weight.iter().all(|w| w.abs() <= 1.0 / 3.0));
        let p = init_siren(3, 64, 30.0, 7);
        let bound = (6.0f64 / 64.0).sqrt() / 30.0;
        for l in &p.layers[1..] {
            assert!(l.weight.iter().all(|w| w.abs() <= bound));
        }
    }

    #[test]
    fn constant_net_is_constant() {
        let p = constant_net(0.5);
        for x in [Vec3::ZERO, Vec3::new(0.3, -0.7, 0.1)] {
            assert_eq!(p.forward(x), 0.5);
            assert_eq!(p.input_gradient(x).1, Vec3::ZERO);
        }
        let (_, rec) = p.forward_with_record(Vec3::X);
        for (z, a) in rec.pre[..2].iter().zip(&rec.act[..2]) {
            for (&zi, &ai) in z.iter().zip(a) {
                assert!((ai - (30.0 * zi).sin()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn one_unit_hand_values() {
        let p = one_unit(1.0);
        assert_eq!(p.forward(Vec3::ZERO), 0.0);
        assert!((p.forward(Vec3::new(FRAC_PI_2, 0.0, 0.0)) - 1.0).abs() < 1e-15);
        let p = one_unit(30.0);
        let (_, g) = p.input_gradient(Vec3::ZERO);
        assert_eq!(g, Vec3::new(30.0, 0.0, 0.0));
    }

    #[test]
    fn record_matches_forward() {
        let p = init_siren(4, 32, 30.0, 2);
        let x = Vec3::new(0.1, 0.2, -0.3);
        let (v, rec) = p.forward_with_record(x);
        assert_eq!(v, p.forward(x));
        assert_eq!(rec.len(), p.depth() + 1);
    }

    #[test]
    fn affine_net_has_zero_hessian() {
        // f = sin(x) has zero second derivative at the origin.
        let p = one_unit(1.0);
        assert_eq!(p.hvp(Vec3::ZERO, Vec3::new(1.0, 2.0, 3.0)), Vec3::ZERO);
        assert_eq!(p.full_hessian(Vec3::ZERO), Mat3Sym::ZERO);
    }

    #[test]
    fn shape_validation_rejects_broken_chain() {
        let mut p = init_siren(2, 4, 30.0, 0);
        p.layers[1].weight = Array2::zeros((4, 5));
        assert!(matches!(p.validate(), Err(Error::ShapeMismatch(_))));
    }
}
