//! Adam on the total objective, with a Chamfer plateau for early stopping.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::geometry::{s12_autodiff, DEFAULT_FD_STEP};
use crate::linalg::{Vec3, EPS_NORM};
use crate::losses::{CurvatureRoute, LossBreakdown, LossWeights, ProxyNorm};
use crate::metrics::chamfer_l1;
use crate::net::{
    init_siren, loss_parameter_gradient, BatchSpec, NetworkParams, ParamGradient, DEFAULT_OMEGA0,
};
use crate::sampling::{
    build_shell, knn_sigma, minibatch, sample_thetas, sample_uniform_box, stream_rng, PointCloud,
    ShellSet, Stream, DEFAULT_KNN,
};

/// Improvements of the evaluated Chamfer value smaller than this do not
/// reset the plateau counter.
pub const PLATEAU_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub init: u64,
    pub shell: u64,
    pub batch: u64,
    pub theta: u64,
    pub freespace: u64,
}

impl Seeds {
    pub fn all(seed: u64) -> Self {
        Self {
            init: seed,
            shell: seed,
            batch: seed,
            theta: seed,
            freespace: seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub depth: usize,
    pub width: usize,
    pub omega0: f64,
    /// The curvature weight may sit in either `w_proxy` or `w_gauss`; it is
    /// moved to the slot the route reads.
    pub weights: LossWeights,
    pub route: CurvatureRoute,
    pub proxy_norm: ProxyNorm,
    pub lr: f64,
    pub max_iters: usize,
    pub plateau_window: usize,
    pub eval_every: usize,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    pub batch_manifold: usize,
    pub batch_freespace: usize,
    pub shell_count: usize,
    pub knn_k: usize,
    pub probe_count: usize,
    /// Draw fresh free-space points every iteration instead of once.
    pub resample_freespace: bool,
    pub seeds: Seeds,
    pub adam: AdamParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            width: 256,
            omega0: DEFAULT_OMEGA0,
            weights: LossWeights::default(),
            route: CurvatureRoute::ProxyFd { h: DEFAULT_FD_STEP },
            proxy_norm: ProxyNorm::L1,
            lr: 5e-5,
            max_iters: 10_000,
            plateau_window: 1500,
            eval_every: 250,
            checkpoint_every: 1000,
            batch_manifold: 20_000,
            batch_freespace: 20_000,
            shell_count: 15_000,
            knn_k: DEFAULT_KNN,
            probe_count: 2000,
            resample_freespace: true,
            seeds: Seeds::all(1),
            adam: AdamParams::default(),
        }
    }
}

impl TrainConfig {
    /// Reduced profile for a single desk core: width 64, 2000 iterations and
    /// batches sized for a 5000-point cloud.
    pub fn desk() -> Self {
        Self {
            width: 64,
            max_iters: 2000,
            batch_manifold: 2000,
            batch_freespace: 2000,
            shell_count: 1500,
            ..Self::default()
        }
    }

    pub fn effective_weights(&self) -> LossWeights {
        self.weights.for_route(self.route)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.depth == 0 || self.width == 0 {
            return bad("depth and width must be at least 1");
        }
        if !(self.omega0 > 0.0 && self.omega0.is_finite()) {
            return bad("omega0 must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.plateau_window > self.max_iters && self.max_iters > 0 {
            return bad("plateau_window exceeds max_iters");
        }
        if self.eval_every == 0 || self.plateau_window == 0 {
            return bad("eval_every and plateau_window must be at least 1");
        }
        if self.batch_manifold == 0 || self.batch_freespace == 0 || self.shell_count == 0 {
            return bad("batch and shell sizes must be at least 1");
        }
        if self.knn_k == 0 || self.probe_count == 0 {
            return bad("knn_k and probe_count must be at least 1");
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad("adam constants out of range");
        }
        if let CurvatureRoute::ProxyFd { h } = self.route {
            if !(h > 0.0 && h.is_finite()) {
                return bad("stencil step h must be positive");
            }
        }
        self.effective_weights().validate()
    }
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ParamGradient,
    pub v: ParamGradient,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &NetworkParams) -> Self {
        Self {
            m: ParamGradient::zeros_like(params),
            v: ParamGradient::zeros_like(params),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(
    params: &mut NetworkParams,
    state: &mut AdamState,
    grad: &ParamGradient,
    lr: f64,
    adam: AdamParams,
) -> Result<()> {
    grad.check_shape(params)?;
    state.m.check_shape(params)?;
    state.v.check_shape(params)?;
    state.t += 1;
    let AdamParams { beta1, beta2, eps } = adam;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for (l, layer) in params.layers.iter_mut().enumerate() {
        let g = &grad.layers[l];
        let m = &mut state.m.layers[l];
        let v = &mut state.v.layers[l];
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        ndarray::Zip::from(&mut layer.weight)
            .and(&mut m.weight)
            .and(&mut v.weight)
            .and(&g.weight)
            .for_each(|p, m, v, &g| update(p, m, v, g));
        ndarray::Zip::from(&mut layer.bias)
            .and(&mut m.bias)
            .and(&mut v.bias)
            .and(&g.bias)
            .for_each(|p, m, v, &g| update(p, m, v, g));
    }
    Ok(())
}

/// Moves each probe once onto the zero set, `x − f ∇f/‖∇f‖²`, and returns
/// the Chamfer distance to `references`. Probes with a vanishing gradient
/// are dropped.
pub fn cd_proxy_estimate<F: Field + ?Sized>(
    field: &F,
    probes: &[Vec3],
    references: &[Vec3],
) -> Result<f64> {
    if probes.is_empty() || references.is_empty() {
        return Err(Error::EmptySet);
    }
    let projected: Vec<Vec3> = field
        .values_and_gradients(probes)
        .into_iter()
        .zip(probes)
        .filter_map(|((f, g), &x)| {
            let g2 = g.norm_squared();
            (g2.sqrt() > EPS_NORM).then(|| x - g * (f / g2))
        })
        .collect();
    if projected.is_empty() {
        return Err(Error::DegenerateGradient { norm: 0.0 });
    }
    chamfer_l1(&projected, references)
}

/// Mean `|S₁₂|` over `points` with one frame angle per point, skipping
/// points with a degenerate gradient.
pub fn mean_abs_s12<F: Field + ?Sized>(field: &F, points: &[Vec3], thetas: &[f64]) -> f64 {
    assert_eq!(points.len(), thetas.len());
    let vals: Vec<Option<f64>> = points
        .par_iter()
        .zip(thetas)
        .map(|(&x, &t)| s12_autodiff(field, x, t).ok().map(f64::abs))
        .collect();
    let kept: Vec<f64> = vals.into_iter().flatten().collect();
    if kept.is_empty() {
        return f64::NAN;
    }
    kept.iter().sum::<f64>() / kept.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Optimizer steps completed, starting at 1.
    pub iteration: usize,
    /// Loss of the batch at the parameters before the step.
    pub loss: LossBreakdown,
    pub iter_ms: f64,
    /// Chamfer estimate in raw units after the step, when evaluated.
    pub cd_eval: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub records: Vec<IterationRecord>,
    /// Step count of the returned parameters (0 for the initialization).
    pub best_iteration: usize,
    pub best_cd: Option<f64>,
    pub stopped_early: bool,
}

impl RunHistory {
    pub fn evaluations(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.records
            .iter()
            .filter_map(|r| r.cd_eval.map(|cd| (r.iteration, cd)))
    }

    pub fn last_iteration(&self) -> usize {
        self.records.last().map_or(0, |r| r.iteration)
    }

    /// Mean and standard deviation of step time over iterations that did not
    /// run an evaluation.
    pub fn iter_ms_stats(&self) -> (f64, f64) {
        let t: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.cd_eval.is_none())
            .map(|r| r.iter_ms)
            .collect();
        if t.is_empty() {
            return (f64::NAN, f64::NAN);
        }
        let mean = t.iter().sum::<f64>() / t.len() as f64;
        let var = t.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t.len() as f64;
        (mean, var.sqrt())
    }

    /// CSV with columns `iteration, dm, dnm, eik, proxy, gauss, total,
    /// iter_ms, cd_eval`; `iter_ms` is left out when `timing` is false.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut out = String::from("iteration,dm,dnm,eik,proxy,gauss,total");
        if timing {
            out += ",iter_ms";
        }
        out += ",cd_eval\n";
        for r in &self.records {
            let l = &r.loss;
            out += &format!(
                "{},{:?},{:?},{:?},{:?},{:?},{:?}",
                r.iteration, l.dm, l.dnm, l.eik, l.proxy, l.gauss, l.total
            );
            if timing {
                out += &format!(",{:.4}", r.iter_ms);
            }
            match r.cd_eval {
                Some(cd) => out += &format!(",{cd:?}\n"),
                None => out += ",\n",
            }
        }
        out
    }
}

pub enum TrainEvent<'a> {
    /// Periodic snapshot every `checkpoint_every` steps.
    Checkpoint {
        iteration: usize,
        params: &'a NetworkParams,
    },
    /// A new best Chamfer estimate.
    Best {
        iteration: usize,
        cd: f64,
        params: &'a NetworkParams,
    },
}

/// Fixed inputs of a run derived from the cloud and the config.
pub struct TrainingSetup {
    pub shell: ShellSet,
    pub probes: Vec<Vec3>,
}

impl TrainingSetup {
    pub fn new(config: &TrainConfig, cloud: &PointCloud) -> Result<Self> {
        let sigmas = knn_sigma(&cloud.points, config.knn_k)?;
        let shell = build_shell(
            &cloud.points,
            &sigmas,
            config.shell_count,
            config.seeds.shell,
        )?;
        let n = cloud.len();
        let probes = if config.probe_count >= n {
            cloud.points.clone()
        } else {
            let mut rng = stream_rng(config.seeds.batch, Stream::Probe, 0);
            let mut idx = rand::seq::index::sample(&mut rng, n, config.probe_count).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| cloud.points[i]).collect()
        };
        Ok(Self { shell, probes })
    }
}

pub fn train(config: &TrainConfig, cloud: &PointCloud) -> Result<(NetworkParams, RunHistory)> {
    train_with(config, cloud, |_| Ok(()))
}

/// Runs the optimization, reporting checkpoints and improvements to `hook`.
/// Returns the parameters with the best Chamfer estimate.
pub fn train_with(
    config: &TrainConfig,
    cloud: &PointCloud,
    mut hook: impl FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<(NetworkParams, RunHistory)> {
    config.validate()?;
    let mut params = init_siren(config.depth, config.width, config.omega0, config.seeds.init);
    let mut history = RunHistory::default();
    if config.max_iters == 0 {
        return Ok((params, history));
    }
    let setup = TrainingSetup::new(config, cloud)?;
    let weights = config.effective_weights();
    let n = cloud.len();
    let m = config.batch_manifold.min(n);
    let raw = |cd: f64| cloud.transform.raw_length(cd);

    let mut adam = AdamState::new(&params);
    let mut best = params.clone();
    let mut best_cd = raw(cd_proxy_estimate(&params, &setup.probes, &cloud.points)?);
    history.best_cd = Some(best_cd);
    let mut freespace = Vec::new();
    let mut manifold = Vec::with_capacity(m);

    for it in 0..config.max_iters {
        let start = Instant::now();
        let idx = minibatch(n, m, config.seeds.batch, it as u64)?;
        manifold.clear();
        manifold.extend(idx.iter().map(|&i| cloud.points[i]));
        if config.resample_freespace || it == 0 {
            freespace =
                sample_uniform_box(config.batch_freespace, config.seeds.freespace, it as u64);
        }
        let thetas = sample_thetas(setup.shell.len(), config.seeds.theta, it as u64);
        let spec = BatchSpec {
            manifold: &manifold,
            freespace: &freespace,
            shell: setup.shell.points(),
            thetas: &thetas,
            frames: None,
            weights,
            route: config.route,
            proxy_norm: config.proxy_norm,
            iteration: it,
        };
        let (loss, grad) = loss_parameter_gradient(&params, &spec)?;
        if !grad.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        adam_step(&mut params, &mut adam, &grad, config.lr, config.adam)?;
        let iter_ms = start.elapsed().as_secs_f64() * 1e3;
        let step = it + 1;

        let mut record = IterationRecord {
            iteration: step,
            loss,
            iter_ms,
            cd_eval: None,
        };
        if step % config.eval_every == 0 || step == config.max_iters {
            let cd = raw(cd_proxy_estimate(&params, &setup.probes, &cloud.points)?);
            record.cd_eval = Some(cd);
            if cd < best_cd - PLATEAU_TOLERANCE {
                best_cd = cd;
                best.clone_from(&params);
                history.best_iteration = step;
                history.best_cd = Some(cd);
                hook(TrainEvent::Best {
                    iteration: step,
                    cd,
                    params: &params,
                })?;
            }
        }
        history.records.push(record);
        if config.checkpoint_every > 0 && step % config.checkpoint_every == 0 {
            hook(TrainEvent::Checkpoint {
                iteration: step,
                params: &params,
            })?;
        }
        if record.cd_eval.is_some() && step - history.best_iteration >= config.plateau_window {
            history.stopped_early = step < config.max_iters;
            break;
        }
    }
    Ok((best, history))
}

/// Mean and standard deviation of optimizer-step wall time per route.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouteTiming {
    pub route: CurvatureRoute,
    pub mean_ms: f64,
    pub std_ms: f64,
}

/// Times `iters` optimizer steps for each route in lockstep: every route
/// sees the same manifold, free-space and shell batches and the same
/// angles, and the routes alternate within each iteration so slow drifts
/// of the machine affect all of them alike. Each route keeps its own
/// parameters and Adam state.
pub fn time_routes(
    config: &TrainConfig,
    cloud: &PointCloud,
    routes: &[CurvatureRoute],
    iters: usize,
) -> Result<Vec<RouteTiming>> {
    config.validate()?;
    let setup = TrainingSetup::new(config, cloud)?;
    let init = init_siren(config.depth, config.width, config.omega0, config.seeds.init);
    let mut states: Vec<(NetworkParams, AdamState, Vec<f64>)> = routes
        .iter()
        .map(|_| {
            (
                init.clone(),
                AdamState::new(&init),
                Vec::with_capacity(iters),
            )
        })
        .collect();
    let n = cloud.len();
    let m = config.batch_manifold.min(n);
    for it in 0..iters {
        let idx = minibatch(n, m, config.seeds.batch, it as u64)?;
        let manifold: Vec<Vec3> = idx.iter().map(|&i| cloud.points[i]).collect();
        let freespace =
            sample_uniform_box(config.batch_freespace, config.seeds.freespace, it as u64);
        let thetas = sample_thetas(setup.shell.len(), config.seeds.theta, it as u64);
        for j in 0..routes.len() {
            // Rotate the starting route so none always runs first.
            let k = (j + it) % routes.len();
            let route = routes[k];
            let (params, adam, times) = &mut states[k];
            let start = Instant::now();
            let spec = BatchSpec {
                manifold: &manifold,
                freespace: &freespace,
                shell: setup.shell.points(),
                thetas: &thetas,
                frames: None,
                weights: config.weights.for_route(route),
                route,
                proxy_norm: config.proxy_norm,
                iteration: it,
            };
            let (_, grad) = loss_parameter_gradient(params, &spec)?;
            adam_step(params, adam, &grad, config.lr, config.adam)?;
            times.push(start.elapsed().as_secs_f64() * 1e3);
        }
    }
    Ok(routes
        .iter()
        .zip(&states)
        .map(|(&route, (_, _, t))| {
            let mean = t.iter().sum::<f64>() / t.len().max(1) as f64;
            let var =
                t.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t.len().max(1) as f64;
            RouteTiming {
                route,
                mean_ms: mean,
                std_ms: var.sqrt(),
            }
        })
        .collect())
}
