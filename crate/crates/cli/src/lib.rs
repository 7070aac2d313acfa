//! Commands behind the `sdfcurv` binary, callable in-process.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use sdfcurv::config::{config_to_string, load_config};
use sdfcurv::geometry::{
    frame_at, gaussian_curvature, mixed_difference, principal_curvatures, s12_autodiff,
    s12_finite_difference, shape_operator, DEFAULT_FD_STEP,
};
use sdfcurv::io::{read_geometry, write_obj, write_ply, PlyFormat};
use sdfcurv::losses::CurvatureRoute;
use sdfcurv::meshing::{marching_cubes, Bounds, TriangleMesh, DEFAULT_RESOLUTION};
use sdfcurv::metrics::{
    evaluate, hausdorff_map, sample_mesh, MetricsRecord, DEFAULT_EVAL_SAMPLES, DEFAULT_F1_TAU,
};
use sdfcurv::net::checkpoint::MAGIC;
use sdfcurv::net::{load_checkpoint, save_checkpoint, NetworkParams};
use sdfcurv::sampling::{normalize_cloud, PointCloud, Transform};
use sdfcurv::shapes::AnalyticShape;
use sdfcurv::training::{train_with, RunHistory, Seeds, TrainConfig, TrainEvent};
use sdfcurv::{Error, Field, Mat3Sym, Result, Vec3};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;
pub const EXIT_EMPTY_SURFACE: i32 = 3;

/// Sidecar written next to checkpoints; maps normalized to raw coordinates.
pub const TRANSFORM_FILE: &str = "transform.json";
pub const MODEL_FILE: &str = "model.ckpt";
pub const BEST_FILE: &str = "best.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.txt";

/// Caps the worker count.
pub const THREADS_ENV: &str = "FLATCAD_THREADS";

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFiniteLoss { .. } => EXIT_DIVERGED,
        Error::EmptySurface => EXIT_EMPTY_SURFACE,
        _ => EXIT_ERROR,
    }
}

/// Sizes the global rayon pool from `FLATCAD_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n >= 1).ok_or_else(|| {
        Error::Config(format!(
            "{THREADS_ENV} must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Command-line settings that win over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub route: Option<String>,
    pub h: Option<f64>,
}

pub fn resolve_config(path: Option<&Path>, o: &Overrides) -> Result<TrainConfig> {
    let mut c = match path {
        Some(p) => load_config(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = o.seed {
        c.seeds = Seeds::all(seed);
    }
    let current_h = match c.route {
        CurvatureRoute::ProxyFd { h } => Some(h),
        _ => None,
    };
    match (&o.route, o.h) {
        (Some(r), h) => {
            c.route = CurvatureRoute::parse(r, h.or(current_h).unwrap_or(DEFAULT_FD_STEP))?
        }
        (None, Some(h)) if current_h.is_some() => c.route = CurvatureRoute::ProxyFd { h },
        (None, Some(_)) => {
            return Err(Error::Config(
                "--h only applies to the proxy_fd route".into(),
            ))
        }
        (None, None) => {}
    }
    if o.h.is_some() && !matches!(c.route, CurvatureRoute::ProxyFd { .. }) {
        return Err(Error::Config(
            "--h only applies to the proxy_fd route".into(),
        ));
    }
    c.validate()?;
    Ok(c)
}

pub fn save_transform(dir: &Path, t: &Transform) -> Result<()> {
    let text = serde_json::to_string_pretty(t).expect("transform serializes");
    write_text(&dir.join(TRANSFORM_FILE), &text)
}

/// The transform stored beside `checkpoint`, or the identity when absent.
pub fn transform_for(checkpoint: &Path) -> Result<Transform> {
    let dir = checkpoint.parent().unwrap_or(Path::new("."));
    let path = dir.join(TRANSFORM_FILE);
    match fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).map_err(|e| Error::Parse {
            path,
            line: e.line(),
            message: e.to_string(),
        }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Transform::IDENTITY),
        Err(e) => Err(Error::io(path, e)),
    }
}

pub fn load_cloud(path: &Path) -> Result<PointCloud> {
    let g = read_geometry(path)?;
    if g.points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    normalize_cloud(&g.points, g.normals.as_deref())
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub params: NetworkParams,
    pub history: RunHistory,
    pub transform: Transform,
}

/// Normalizes the cloud, trains and writes into `out_dir`:
/// `model.ckpt` (best parameters), `best.ckpt`, `checkpoints/iter_NNNNNN.ckpt`,
/// `history.csv`, `summary.json`, `config.txt` and `transform.json`.
pub fn fit(config: &TrainConfig, cloud_path: &Path, out_dir: &Path) -> Result<FitReport> {
    let cloud = load_cloud(cloud_path)?;
    fit_cloud(config, &cloud, out_dir)
}

pub fn fit_cloud(config: &TrainConfig, cloud: &PointCloud, out_dir: &Path) -> Result<FitReport> {
    config.validate()?;
    let ckpt_dir = out_dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    write_text(&out_dir.join(CONFIG_FILE), &config_to_string(config))?;
    save_transform(out_dir, &cloud.transform)?;

    let best_path = out_dir.join(BEST_FILE);
    let (params, history) = train_with(config, cloud, |event| match event {
        TrainEvent::Checkpoint { iteration, params } => {
            save_checkpoint(params, ckpt_dir.join(format!("iter_{iteration:06}.ckpt")))
        }
        TrainEvent::Best { params, .. } => save_checkpoint(params, &best_path),
    })?;
    save_checkpoint(&params, out_dir.join(MODEL_FILE))?;
    write_text(&out_dir.join(HISTORY_FILE), &history.to_csv(true))?;
    let (mean_ms, std_ms) = history.iter_ms_stats();
    let summary = json!({
        "points": cloud.len(),
        "route": config.route.name(),
        "iterations": history.last_iteration(),
        "best_iteration": history.best_iteration,
        "best_cd": history.best_cd,
        "stopped_early": history.stopped_early,
        "iter_ms_mean": finite_or_null(mean_ms),
        "iter_ms_std": finite_or_null(std_ms),
        "checkpoint": MODEL_FILE,
    });
    write_text(
        &out_dir.join(SUMMARY_FILE),
        &serde_json::to_string_pretty(&summary).unwrap(),
    )?;
    Ok(FitReport {
        params,
        history,
        transform: cloud.transform,
    })
}

fn finite_or_null(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else {
        serde_json::Value::Null
    }
}

/// Extracts the zero set in normalized space.
pub fn extract_mesh(params: &NetworkParams, resolution: usize) -> Result<TriangleMesh> {
    marching_cubes(params, resolution, Bounds::default())
}

/// Writes OBJ or PLY by extension.
pub fn export_mesh(mesh: &TriangleMesh, path: &Path, ply: PlyFormat) -> Result<()> {
    match extension(path).as_str() {
        "obj" => write_obj(path, mesh),
        "ply" => write_ply(path, mesh, ply),
        other => Err(Error::Config(format!(
            "unsupported mesh extension {other:?} for {} (use .obj or .ply)",
            path.display()
        ))),
    }
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

/// Meshes a checkpoint and writes it in raw coordinates.
pub fn mesh(
    checkpoint: &Path,
    resolution: usize,
    out: &Path,
    ply: PlyFormat,
) -> Result<TriangleMesh> {
    let params = load_checkpoint(checkpoint)?;
    let transform = transform_for(checkpoint)?;
    let m = extract_mesh(&params, resolution)?.denormalized(&transform);
    export_mesh(&m, out, ply)?;
    Ok(m)
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub resolution: usize,
    pub samples: usize,
    pub tau: f64,
    pub seed: u64,
    /// Compute normal consistency; fails with `MissingNormals` when a side
    /// has none.
    pub normals: bool,
    pub heatmap: Option<PathBuf>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            resolution: DEFAULT_RESOLUTION,
            samples: DEFAULT_EVAL_SAMPLES,
            tau: DEFAULT_F1_TAU,
            seed: 0,
            normals: true,
            heatmap: None,
        }
    }
}

/// Points with normals standing in for a surface during evaluation.
pub struct Surface {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
    /// The mesh the points came from, in raw coordinates.
    pub mesh: Option<TriangleMesh>,
}

/// Samples the network's zero set: marching cubes in normalized space,
/// area-uniform samples, normals from `∇f`, then mapped to raw units.
pub fn network_surface(
    params: &NetworkParams,
    transform: &Transform,
    resolution: usize,
    samples: usize,
    seed: u64,
) -> Result<Surface> {
    let m = extract_mesh(params, resolution)?;
    let (pts, face_normals) = sample_mesh(&m, samples, seed)?;
    let normals = params
        .values_and_gradients(&pts)
        .into_iter()
        .zip(face_normals)
        .map(|((_, g), fallback)| g.normalize().unwrap_or(fallback))
        .collect();
    Ok(Surface {
        points: pts.iter().map(|&p| transform.invert(p)).collect(),
        normals: Some(normals),
        mesh: Some(m.denormalized(transform)),
    })
}

fn is_checkpoint(path: &Path) -> Result<bool> {
    use std::io::Read;
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 8];
    match f.read_exact(&mut magic) {
        Ok(()) => Ok(&magic == MAGIC),
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Ok(false),
        Err(e) => Err(Error::io(path, e)),
    }
}

/// Reads a checkpoint, mesh or point cloud as an evaluation surface. Meshes
/// are sampled with face normals; clouds are used as they are.
pub fn load_surface(path: &Path, opts: &EvalOptions) -> Result<Surface> {
    if is_checkpoint(path)? {
        let params = load_checkpoint(path)?;
        let t = transform_for(path)?;
        return network_surface(&params, &t, opts.resolution, opts.samples, opts.seed);
    }
    let g = read_geometry(path)?;
    if g.triangles.is_empty() {
        if g.points.is_empty() {
            return Err(Error::EmptySet);
        }
        return Ok(Surface {
            points: g.points,
            normals: g.normals,
            mesh: None,
        });
    }
    let m = g.into_mesh();
    m.validate()?;
    let (points, normals) = sample_mesh(&m, opts.samples, opts.seed)?;
    Ok(Surface {
        points,
        normals: Some(normals),
        mesh: Some(m),
    })
}

/// Metrics of `pred` against `gt`, written to `out` as JSON (or a CSV row
/// for a `.csv` path), plus an optional Hausdorff heat-map PLY.
pub fn eval(
    pred_path: &Path,
    gt_path: &Path,
    out: Option<&Path>,
    opts: &EvalOptions,
) -> Result<MetricsRecord> {
    let pred = load_surface(pred_path, opts)?;
    let gt = load_surface(
        gt_path,
        &EvalOptions {
            seed: opts.seed.wrapping_add(1),
            ..opts.clone()
        },
    )?;
    let record = evaluate_surfaces(&pred, &gt, opts)?;
    if let Some(hm) = &opts.heatmap {
        let m = pred.mesh.as_ref().ok_or_else(|| {
            Error::Config("a heat map needs a mesh or checkpoint to evaluate".into())
        })?;
        let (colored, _) = hausdorff_map(m, &gt.points)?;
        write_ply(hm, &colored, PlyFormat::Ascii)?;
    }
    if let Some(out) = out {
        write_record(&record, out)?;
    }
    Ok(record)
}

pub fn evaluate_surfaces(
    pred: &Surface,
    gt: &Surface,
    opts: &EvalOptions,
) -> Result<MetricsRecord> {
    let (pn, gn) = if opts.normals {
        let pn = pred.normals.as_deref().ok_or(Error::MissingNormals)?;
        let gn = gt.normals.as_deref().ok_or(Error::MissingNormals)?;
        (Some(pn), Some(gn))
    } else {
        (None, None)
    };
    evaluate(&pred.points, pn, &gt.points, gn, opts.tau)
}

pub fn write_record(record: &MetricsRecord, out: &Path) -> Result<()> {
    let text = if extension(out) == "csv" {
        format!("{}\n{}\n", MetricsRecord::CSV_HEADER, record.csv_row())
    } else {
        serde_json::to_string_pretty(record).unwrap() + "\n"
    };
    write_text(out, &text)
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    /// Input points sampled from each shape.
    pub points: usize,
    /// Fresh oracle points the reconstruction is scored against.
    pub gt_points: usize,
    pub eval: EvalOptions,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            points: 5000,
            gt_points: 10_000,
            eval: EvalOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub shape: String,
    pub route: CurvatureRoute,
    pub iter_ms_mean: f64,
    pub iter_ms_std: f64,
    /// Step of the best Chamfer estimate.
    pub conv_iter: usize,
    pub iterations: usize,
    pub metrics: MetricsRecord,
}

impl BenchRow {
    pub const CSV_HEADER: &'static str =
        "shape,route,iter_ms_mean,iter_ms_std,conv_iter,iterations,nc_x100,cd_x1000,f1_x100,hausdorff_raw";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.4},{:.4},{},{},{}",
            self.shape,
            self.route.name(),
            self.iter_ms_mean,
            self.iter_ms_std,
            self.conv_iter,
            self.iterations,
            self.metrics.csv_row()
        )
    }
}

/// Parses shape names, failing on the first unknown one.
pub fn parse_shapes(names: &[String]) -> Result<Vec<AnalyticShape>> {
    names.iter().map(|n| n.parse()).collect()
}

pub fn parse_routes(names: &[String], h: f64) -> Result<Vec<CurvatureRoute>> {
    names.iter().map(|n| CurvatureRoute::parse(n, h)).collect()
}

/// Trains every (shape, route) pair from the same seeds and samples and
/// scores the result against a fresh oracle sample.
pub fn bench(
    shapes: &[AnalyticShape],
    routes: &[CurvatureRoute],
    base: &TrainConfig,
    opts: &BenchOptions,
) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for shape in shapes {
        let raw = shape.sample_surface(opts.points, base.seeds.shell);
        let cloud = normalize_cloud(&raw.points, None)?;
        let gt = shape.sample_surface(opts.gt_points, base.seeds.shell.wrapping_add(1));
        let gt = Surface {
            points: gt.points,
            normals: gt.normals,
            mesh: None,
        };
        for &route in routes {
            let config = TrainConfig {
                route,
                ..base.clone()
            };
            config.validate()?;
            let (params, history) = train_with(&config, &cloud, |_| Ok(()))?;
            let pred = network_surface(
                &params,
                &cloud.transform,
                opts.eval.resolution,
                opts.eval.samples,
                opts.eval.seed,
            )?;
            let (mean, std) = history.iter_ms_stats();
            rows.push(BenchRow {
                shape: shape.to_string(),
                route,
                iter_ms_mean: mean,
                iter_ms_std: std,
                conv_iter: history.best_iteration,
                iterations: history.last_iteration(),
                metrics: evaluate_surfaces(&pred, &gt, &opts.eval)?,
            });
        }
    }
    Ok(rows)
}

pub fn write_bench_csv(rows: &[BenchRow], out: &Path) -> Result<()> {
    let mut text = String::from(BenchRow::CSV_HEADER);
    text.push('\n');
    for r in rows {
        text += &r.csv_row();
        text.push('\n');
    }
    write_text(out, &text)
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, worst: f64, tol: f64) -> Check {
    Check {
        name,
        passed: worst <= tol,
        detail: format!("worst {worst:.3e} (tolerance {tol:e})"),
    }
}

fn angles(n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| std::f64::consts::TAU * (i as f64 + 0.5) / n as f64)
}

/// Geometry invariants against the analytic oracles.
pub fn curvcheck() -> Result<Vec<Check>> {
    let mut out = Vec::new();

    // On the r = 2 cylinder at (√2, √2, 0) the base frame starts on the axis,
    // the zero-curvature direction.
    let cyl = AnalyticShape::cylinder(2.0)?;
    let x = Vec3::new(2f64.sqrt(), 2f64.sqrt(), 0.0);
    let k = principal_curvatures(shape_operator(&cyl, x)?);
    let mut worst: f64 = 0.0;
    for t in angles(64) {
        let want = 0.5 * k.gap() * (2.0 * t).sin();
        worst = worst.max((s12_autodiff(&cyl, x, t)? - want).abs());
    }
    out.push(check("frame rotation law (cylinder r=2)", worst, 1e-8));

    for (name, shape, x) in [
        (
            "umbilic sphere r=0.5",
            AnalyticShape::sphere(0.5)?,
            Vec3::new(0.3, 0.0, 0.4),
        ),
        (
            "umbilic plane",
            AnalyticShape::plane(Vec3::Z, 0.1)?,
            Vec3::new(0.2, -0.3, 0.1),
        ),
    ] {
        let mut worst: f64 = 0.0;
        for t in angles(100) {
            worst = worst.max(s12_autodiff(&shape, x, t)?.abs());
        }
        out.push(check(name, worst, 1e-8));
    }

    let k_cyl = gaussian_curvature(&cyl, x)?.abs();
    out.push(check("gaussian curvature of cylinder", k_cyl, 1e-8));

    let torus = AnalyticShape::torus(0.6, 0.2)?;
    let k_torus = gaussian_curvature(&torus, Vec3::new(0.8, 0.0, 0.0))?;
    out.push(check(
        "torus outer equator K = 6.25",
        (k_torus - 6.25).abs(),
        1e-6,
    ));

    let a = Mat3Sym::new(0.7, 0.2, -0.1, 1.3, 0.4, -0.6);
    let quad = sdfcurv::field::QuadraticField::new(a, Vec3::new(0.1, -0.2, 0.3), 0.05);
    let mut worst: f64 = 0.0;
    for (i, t) in angles(16).enumerate() {
        let x = Vec3::new(0.1 * i as f64, 0.3, -0.2);
        let (_, frame) = frame_at(&quad, x, t)?;
        // Exact for any step on a quadratic; a moderate one keeps the
        // cancellation in the /h² division small.
        let d = mixed_difference(&quad, x, quad.value(x), frame.u, frame.v, 1e-2);
        worst = worst.max((d - a.bilinear(frame.u, frame.v)).abs());
    }
    out.push(check("stencil exact on quadratics", worst, 1e-10));

    let y = Vec3::new(0.5, 0.45, 0.1);
    let errs: Vec<f64> = [1e-2, 1e-3, 1e-4]
        .iter()
        .map(|&h| {
            let fd = s12_finite_difference(&torus, y, 0.4, h)?;
            Ok((fd - s12_autodiff(&torus, y, 0.4)?).abs())
        })
        .collect::<Result<_>>()?;
    let order = (errs[0] / errs[2]).log10() / 2.0;
    out.push(Check {
        name: "stencil error order on torus",
        passed: (0.8..=2.2).contains(&order),
        detail: format!(
            "order {order:.3} from errors {:.2e}, {:.2e}, {:.2e}",
            errs[0], errs[1], errs[2]
        ),
    });
    Ok(out)
}
