//! The assembled training objective and its exact parameter gradient.
//!
//! The tangent frame `(u, v)` at each shell point is treated as part of the
//! Monte-Carlo sample, like the angle `θ` that rotates it: it is built from
//! the current normal but not differentiated. The `1/‖∇f‖` normalization and
//! every field evaluation are differentiated.

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use super::batch::{self, points_to_matrix, row_vec3, Seeds};
use super::{pool, NetworkParams, ParamGradient};
use crate::error::{Error, Result};
use crate::geometry::{
    gaussian_curvature_from_hessian, gaussian_curvature_partials, s12_autodiff_in_frame,
    s12_fd_in_frame, tangent_frame,
};
use crate::linalg::{Mat3Sym, Vec3, EPS_NORM};
use crate::losses::{
    eikonal_loss, gauss_loss, manifold_loss, nonmanifold_loss, proxy_loss_with, sign, total_loss,
    CurvatureRoute, LossBreakdown, LossComponents, LossWeights, ProxyNorm,
};

/// One optimizer step's worth of samples.
#[derive(Debug, Clone, Copy)]
pub struct BatchSpec<'a> {
    /// On-surface minibatch.
    pub manifold: &'a [Vec3],
    /// Free-space points for the sign-agnostic and eikonal terms.
    pub freespace: &'a [Vec3],
    pub shell: &'a [Vec3],
    /// Frame angle per shell point.
    pub thetas: &'a [f64],
    /// Precomputed `(u, v)` per shell point; when absent they are built
    /// from the current normal and `thetas`.
    pub frames: Option<&'a [(Vec3, Vec3)]>,
    pub weights: LossWeights,
    pub route: CurvatureRoute,
    pub proxy_norm: ProxyNorm,
    /// Reported in [`Error::NonFiniteLoss`].
    pub iteration: usize,
}

impl<'a> BatchSpec<'a> {
    fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.thetas.len() != self.shell.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} angles for {} shell points",
                self.thetas.len(),
                self.shell.len()
            )));
        }
        if let Some(frames) = self.frames {
            if frames.len() != self.shell.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} frames for {} shell points",
                    frames.len(),
                    self.shell.len()
                )));
            }
        }
        if let CurvatureRoute::ProxyFd { h } = self.route {
            if !(h > 0.0) {
                return Err(Error::Config(format!(
                    "stencil step must be positive, got {h}"
                )));
            }
        }
        let w = &self.weights;
        if w.w_dm > 0.0 && self.manifold.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if (w.w_dnm > 0.0 || w.w_eik > 0.0) && self.freespace.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if self.curvature_weight() > 0.0 && self.shell.is_empty() {
            return Err(Error::EmptyBatch);
        }
        Ok(())
    }

    fn curvature_weight(&self) -> f64 {
        match self.route {
            CurvatureRoute::ProxyFd { .. } | CurvatureRoute::ProxyAd => self.weights.w_proxy,
            CurvatureRoute::GaussBaseline => self.weights.w_gauss,
            CurvatureRoute::None => 0.0,
        }
    }

    fn uses_shell(&self) -> bool {
        self.route != CurvatureRoute::None && !self.shell.is_empty()
    }

    fn uses_freespace(&self) -> bool {
        !self.freespace.is_empty()
    }
}

/// Frames for every shell point from the current field, the same ones
/// [`loss_parameter_gradient`] builds when `frames` is absent. Degenerate
/// points get a zero frame.
pub fn frozen_frames(params: &NetworkParams, shell: &[Vec3], thetas: &[f64]) -> Vec<(Vec3, Vec3)> {
    batch::values_and_gradients(params, shell)
        .into_iter()
        .zip(thetas)
        .map(|((_, g), &theta)| frame_from_gradient(g, theta))
        .collect()
}

fn frame_from_gradient(g: Vec3, theta: f64) -> (Vec3, Vec3) {
    let norm = g.norm();
    if norm > EPS_NORM && norm.is_finite() {
        let f = tangent_frame(g / norm, theta);
        (f.u, f.v)
    } else {
        (Vec3::ZERO, Vec3::ZERO)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    Manifold,
    Free,
    Shell,
}

struct Partial {
    grad: ParamGradient,
    manifold_f: Vec<f64>,
    free_f: Vec<f64>,
    free_gnorm: Vec<f64>,
    curvature: Vec<f64>,
}

impl Partial {
    fn new(params: &NetworkParams) -> Self {
        Self {
            grad: ParamGradient::zeros_like(params),
            manifold_f: Vec::new(),
            free_f: Vec::new(),
            free_gnorm: Vec::new(),
            curvature: Vec::new(),
        }
    }

    fn append(&mut self, other: Partial) {
        self.grad.add_assign(&other.grad);
        self.manifold_f.extend(other.manifold_f);
        self.free_f.extend(other.free_f);
        self.free_gnorm.extend(other.free_gnorm);
        self.curvature.extend(other.curvature);
    }
}

/// Work units folded sequentially before the ordered cross-group sum. Fixed,
/// so the floating-point reduction order does not depend on thread count.
const GROUP: usize = 4;

/// Total loss on the batch and its exact gradient with respect to every
/// network parameter.
pub fn loss_parameter_gradient(
    params: &NetworkParams,
    spec: &BatchSpec<'_>,
) -> Result<(LossBreakdown, ParamGradient)> {
    spec.validate()?;
    let mut work: Vec<(Kind, usize, usize)> = Vec::new();
    let mut push = |kind: Kind, n: usize| {
        let mut start = 0;
        while start < n {
            let end = (start + batch::CHUNK).min(n);
            work.push((kind, start, end));
            start = end;
        }
    };
    push(Kind::Manifold, spec.manifold.len());
    if spec.uses_freespace() {
        push(Kind::Free, spec.freespace.len());
    }
    if spec.uses_shell() {
        push(Kind::Shell, spec.shell.len());
    }

    let groups: Vec<Partial> = work
        .par_chunks(GROUP)
        .map(|units| {
            let mut acc = Partial::new(params);
            for &(kind, start, end) in units {
                match kind {
                    Kind::Manifold => manifold_chunk(params, spec, start, end, &mut acc),
                    Kind::Free => free_chunk(params, spec, start, end, &mut acc),
                    Kind::Shell => shell_chunk(params, spec, start, end, &mut acc),
                }
            }
            acc
        })
        .collect();
    let mut total = Partial::new(params);
    for g in groups {
        total.append(g);
    }

    let breakdown = assemble(
        spec,
        &total.manifold_f,
        &total.free_f,
        &total.free_gnorm,
        &total.curvature,
    )?;
    if !breakdown.is_finite() || !total.grad.is_finite() {
        return Err(Error::NonFiniteLoss {
            iteration: spec.iteration,
        });
    }
    Ok((breakdown, total.grad))
}

fn assemble(
    spec: &BatchSpec<'_>,
    manifold_f: &[f64],
    free_f: &[f64],
    free_gnorm: &[f64],
    curvature: &[f64],
) -> Result<LossBreakdown> {
    let mut c = LossComponents::default();
    if !manifold_f.is_empty() {
        c.dm = manifold_loss(manifold_f)?;
    }
    if !free_f.is_empty() {
        c.dnm = nonmanifold_loss(free_f, spec.weights.alpha)?;
        c.eik = eikonal_loss(free_gnorm)?;
    }
    if !curvature.is_empty() {
        match spec.route {
            CurvatureRoute::ProxyFd { .. } | CurvatureRoute::ProxyAd => {
                c.proxy = proxy_loss_with(curvature, spec.proxy_norm)?
            }
            CurvatureRoute::GaussBaseline => c.gauss = gauss_loss(curvature)?,
            CurvatureRoute::None => {}
        }
    }
    Ok(total_loss(c, &spec.weights))
}

fn manifold_chunk(
    params: &NetworkParams,
    spec: &BatchSpec<'_>,
    start: usize,
    end: usize,
    acc: &mut Partial,
) {
    let p = batch::primal(params, points_to_matrix(&spec.manifold[start..end]));
    let scale = spec.weights.w_dm / spec.manifold.len() as f64;
    if scale > 0.0 {
        let seeds = Seeds {
            cf: Some(p.f.mapv(|f| scale * sign(f))),
            ..Default::default()
        };
        batch::param_adjoint(params, &p, None, &[], &seeds, &mut acc.grad);
    }
    acc.manifold_f.extend(p.f.iter());
    p.recycle();
}

fn free_chunk(
    params: &NetworkParams,
    spec: &BatchSpec<'_>,
    start: usize,
    end: usize,
    acc: &mut Partial,
) {
    let w = &spec.weights;
    let n = spec.freespace.len() as f64;
    let p = batch::primal(params, points_to_matrix(&spec.freespace[start..end]));
    let r = batch::reverse(params, &p);
    let rows = end - start;
    let mut cf = Array1::zeros(rows);
    let mut cg = pool::zeros(rows, 3);
    for i in 0..rows {
        let f = p.f[i];
        let g = row_vec3(&r.grad, i);
        let gn = g.norm();
        cf[i] = w.w_dnm * (-w.alpha * sign(f) * (-w.alpha * f.abs()).exp()) / n;
        if gn > EPS_NORM {
            let d = g * (w.w_eik * 2.0 * (gn - 1.0) / (gn * n));
            for k in 0..3 {
                cg[[i, k]] = d[k];
            }
        }
        acc.free_f.push(f);
        acc.free_gnorm.push(gn);
    }
    if w.w_dnm > 0.0 || w.w_eik > 0.0 {
        let seeds = Seeds {
            cf: Some(cf),
            cg: Some(cg),
            w: Vec::new(),
        };
        batch::param_adjoint(params, &p, Some(&r), &[], &seeds, &mut acc.grad);
        seeds.recycle();
    } else {
        pool::recycle(cg);
    }
    p.recycle();
    r.recycle();
}

fn shell_chunk(
    params: &NetworkParams,
    spec: &BatchSpec<'_>,
    start: usize,
    end: usize,
    acc: &mut Partial,
) {
    let xs = &spec.shell[start..end];
    let rows = xs.len();
    let n = spec.shell.len() as f64;
    let lambda = spec.curvature_weight();
    let p = batch::primal(params, points_to_matrix(xs));
    let r = batch::reverse(params, &p);
    let grads: Vec<Vec3> = (0..rows).map(|i| row_vec3(&r.grad, i)).collect();
    let frames: Vec<(Vec3, Vec3)> = match spec.frames {
        Some(f) => f[start..end].to_vec(),
        None => grads
            .iter()
            .zip(&spec.thetas[start..end])
            .map(|(&g, &t)| frame_from_gradient(g, t))
            .collect(),
    };
    let valid: Vec<bool> = grads.iter().map(|g| g.norm() > EPS_NORM).collect();
    let mut cg = pool::zeros(rows, 3);
    let set_row = |m: &mut Array2<f64>, i: usize, v: Vec3| {
        for k in 0..3 {
            m[[i, k]] = v[k];
        }
    };

    match spec.route {
        CurvatureRoute::ProxyAd => {
            let dirs: Vec<Vec3> = frames.iter().map(|f| f.1).collect();
            let t = batch::tangent(params, &p, &r, points_to_matrix(&dirs));
            let mut w = pool::zeros(rows, 3);
            for i in 0..rows {
                if !valid[i] {
                    acc.curvature.push(0.0);
                    continue;
                }
                let (u, _) = frames[i];
                let g = grads[i];
                let gn = g.norm();
                let s12 = u.dot(row_vec3(&t.hv, i)) / gn;
                let e = lambda * spec.proxy_norm.derivative(s12) / n;
                set_row(&mut w, i, u * (e / gn));
                set_row(&mut cg, i, g * (-e * s12 / (gn * gn)));
                acc.curvature.push(s12);
            }
            if lambda > 0.0 {
                let seeds = Seeds {
                    cf: None,
                    cg: Some(cg),
                    w: vec![w],
                };
                let ts = [t];
                batch::param_adjoint(params, &p, Some(&r), &ts, &seeds, &mut acc.grad);
                seeds.recycle();
                ts.into_iter().for_each(batch::Tangent::recycle);
            } else {
                pool::recycle_all([cg, w]);
                t.recycle();
            }
        }
        CurvatureRoute::ProxyFd { h } => {
            let mut stencil = Vec::with_capacity(3 * rows);
            for k in 0..3 {
                for (x, (u, v)) in xs.iter().zip(&frames) {
                    stencil.push(match k {
                        0 => *x + *u * h + *v * h,
                        1 => *x + *u * h,
                        _ => *x + *v * h,
                    });
                }
            }
            let ps = batch::primal(params, points_to_matrix(&stencil));
            let mut cf = Array1::zeros(rows);
            let mut cf_stencil = Array1::zeros(3 * rows);
            let h2 = h * h;
            for i in 0..rows {
                if !valid[i] {
                    acc.curvature.push(0.0);
                    continue;
                }
                let g = grads[i];
                let gn = g.norm();
                let d = (ps.f[i] - ps.f[rows + i] - ps.f[2 * rows + i] + p.f[i]) / h2;
                let s12 = d / gn;
                let e = lambda * spec.proxy_norm.derivative(s12) / n;
                let k = e / (h2 * gn);
                cf[i] = k;
                cf_stencil[i] = k;
                cf_stencil[rows + i] = -k;
                cf_stencil[2 * rows + i] = -k;
                set_row(&mut cg, i, g * (-e * s12 / (gn * gn)));
                acc.curvature.push(s12);
            }
            if lambda > 0.0 {
                let seeds = Seeds {
                    cf: Some(cf),
                    cg: Some(cg),
                    w: Vec::new(),
                };
                batch::param_adjoint(params, &p, Some(&r), &[], &seeds, &mut acc.grad);
                let seeds = Seeds {
                    cf: Some(cf_stencil),
                    ..Default::default()
                };
                batch::param_adjoint(params, &ps, None, &[], &seeds, &mut acc.grad);
            } else {
                pool::recycle(cg);
            }
            ps.recycle();
        }
        CurvatureRoute::GaussBaseline => {
            let tangents: Vec<batch::Tangent> = (0..3)
                .map(|k| {
                    let mut dir = pool::zeros(rows, 3);
                    dir.column_mut(k).fill(1.0);
                    batch::tangent(params, &p, &r, dir)
                })
                .collect();
            let mut ws: Vec<Array2<f64>> = (0..3).map(|_| pool::zeros(rows, 3)).collect();
            for i in 0..rows {
                if !valid[i] {
                    acc.curvature.push(0.0);
                    continue;
                }
                let g = grads[i];
                let h = Mat3Sym::from_columns_symmetrized(
                    row_vec3(&tangents[0].hv, i),
                    row_vec3(&tangents[1].hv, i),
                    row_vec3(&tangents[2].hv, i),
                );
                let (k, dk_dg, dk_dh) = gaussian_curvature_partials(g, &h);
                let e = lambda * sign(k) / n;
                set_row(&mut cg, i, dk_dg * e);
                // H_ij = ½(column_j[i] + column_i[j]) off the diagonal.
                for (col, w) in ws.iter_mut().enumerate() {
                    for row in 0..3 {
                        let share = if row == col { 1.0 } else { 0.5 };
                        w[[i, row]] = e * share * dk_dh.get(row, col);
                    }
                }
                acc.curvature.push(k);
            }
            if lambda > 0.0 {
                let seeds = Seeds {
                    cf: None,
                    cg: Some(cg),
                    w: ws,
                };
                batch::param_adjoint(params, &p, Some(&r), &tangents, &seeds, &mut acc.grad);
                seeds.recycle();
            } else {
                pool::recycle(cg);
                pool::recycle_all(ws);
            }
            tangents.into_iter().for_each(batch::Tangent::recycle);
        }
        CurvatureRoute::None => pool::recycle(cg),
    }
    p.recycle();
    r.recycle();
}

/// The same total loss evaluated point by point through the per-sample
/// passes. Used as an independent check of [`loss_parameter_gradient`].
pub fn loss_value(params: &NetworkParams, spec: &BatchSpec<'_>) -> Result<LossBreakdown> {
    spec.validate()?;
    let manifold_f: Vec<f64> = spec.manifold.iter().map(|&x| params.forward(x)).collect();
    let mut free_f = Vec::new();
    let mut free_gnorm = Vec::new();
    if spec.uses_freespace() {
        for &x in spec.freespace {
            let (f, g) = params.input_gradient(x);
            free_f.push(f);
            free_gnorm.push(g.norm());
        }
    }
    let mut curvature = Vec::new();
    if spec.uses_shell() {
        for (i, &x) in spec.shell.iter().enumerate() {
            let (f0, g) = params.input_gradient(x);
            if !(g.norm() > EPS_NORM) {
                curvature.push(0.0);
                continue;
            }
            let (u, v) = match spec.frames {
                Some(fr) => fr[i],
                None => frame_from_gradient(g, spec.thetas[i]),
            };
            curvature.push(match spec.route {
                CurvatureRoute::ProxyAd => s12_autodiff_in_frame(params, x, g, u, v),
                CurvatureRoute::ProxyFd { h } => s12_fd_in_frame(params, x, f0, g, u, v, h),
                CurvatureRoute::GaussBaseline => {
                    gaussian_curvature_from_hessian(g, &params.full_hessian(x))?
                }
                CurvatureRoute::None => unreachable!(),
            });
        }
    }
    assemble(spec, &manifold_f, &free_f, &free_gnorm, &curvature)
}
