use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sdfcurv::io::{read_geometry, write_obj, write_xyz};
use sdfcurv::meshing::{marching_cubes, Bounds};
use sdfcurv::metrics::sample_mesh;
use sdfcurv::net::checkpoint::save_checkpoint;
use sdfcurv::net::init_siren;
use sdfcurv::shapes::AnalyticShape;
use sdfcurv_cli::{
    resolve_config, Overrides, CONFIG_FILE, EXIT_DIVERGED, EXIT_EMPTY_SURFACE, EXIT_ERROR,
};
use tempfile::TempDir;

const SMALL: &str = "\
depth = 3
width = 16
max_iters = 30
plateau_window = 30
eval_every = 10
checkpoint_every = 10
batch_manifold = 300
batch_freespace = 300
shell_count = 200
probe_count = 200
";

fn sdfcurv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdfcurv"))
        .args(args)
        .env("FLATCAD_THREADS", "2")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Scratch {
    dir: TempDir,
}

impl Scratch {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn text(&self, name: &str, body: &str) -> PathBuf {
        let p = self.path(name);
        fs::write(&p, body).unwrap();
        p
    }

    fn sphere_cloud(&self, name: &str, n: usize, normals: bool) -> PathBuf {
        let c = AnalyticShape::sphere(0.5).unwrap().sample_surface(n, 2);
        let p = self.path(name);
        write_xyz(
            &p,
            &c.points,
            if normals { c.normals.as_deref() } else { None },
        )
        .unwrap();
        p
    }
}

#[test]
fn fit_writes_checkpoint_history_and_config() {
    let t = Scratch::new();
    let cloud = t.sphere_cloud("sphere.xyz", 800, false);
    let cfg = t.text("small.cfg", SMALL);
    let out = t.path("run");
    let o = sdfcurv(&[
        "fit",
        s(&cloud),
        "--config",
        s(&cfg),
        "--seed",
        "3",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in [
        "model.ckpt",
        "history.csv",
        "summary.json",
        "transform.json",
        "config.txt",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
    for it in [10, 20, 30] {
        assert!(out.join(format!("checkpoints/iter_{it:06}.ckpt")).is_file());
    }
    let history = fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 31);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["iterations"], 30);

    // The echoed config reparses to the one the run used.
    let used = resolve_config(
        Some(&cfg),
        &Overrides {
            seed: Some(3),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(
        resolve_config(Some(&out.join(CONFIG_FILE)), &Overrides::default()).unwrap(),
        used
    );
}

#[test]
fn fit_names_a_missing_cloud() {
    let t = Scratch::new();
    let missing = t.path("nowhere.xyz");
    let o = sdfcurv(&["fit", s(&missing), "--out", s(&t.path("run"))]);
    assert_eq!(code(&o), EXIT_ERROR);
    assert!(stderr(&o).contains(s(&missing)), "{}", stderr(&o));
}

#[test]
fn fit_reports_divergence() {
    let t = Scratch::new();
    let cloud = t.sphere_cloud("sphere.xyz", 500, false);
    let cfg = t.text("huge.cfg", &format!("{SMALL}lr = 1e100\n"));
    let o = sdfcurv(&[
        "fit",
        s(&cloud),
        "--config",
        s(&cfg),
        "--out",
        s(&t.path("run")),
    ]);
    assert_eq!(code(&o), EXIT_DIVERGED, "{}", stderr(&o));
}

#[test]
fn fit_rejects_bad_configs() {
    let t = Scratch::new();
    let cloud = t.sphere_cloud("sphere.xyz", 500, false);
    let cfg = t.text("typo.cfg", "widht = 64\n");
    let o = sdfcurv(&[
        "fit",
        s(&cloud),
        "--config",
        s(&cfg),
        "--out",
        s(&t.path("a")),
    ]);
    assert_eq!(code(&o), EXIT_ERROR);
    assert!(stderr(&o).contains("widht"));
    let o = sdfcurv(&[
        "fit",
        s(&cloud),
        "--route",
        "proxy_ad",
        "--h",
        "1e-4",
        "--out",
        s(&t.path("b")),
    ]);
    assert_eq!(code(&o), EXIT_ERROR);
}

#[test]
fn mesh_exports_the_zero_set() {
    let t = Scratch::new();
    let mut p = init_siren(3, 16, 30.0, 4);
    p.layers.last_mut().unwrap().bias.fill(0.0);
    let ckpt = t.path("net.ckpt");
    save_checkpoint(&p, &ckpt).unwrap();
    for name in ["m.obj", "m.ply"] {
        let out = t.path(name);
        let o = sdfcurv(&["mesh", s(&ckpt), "--resolution", "24", "--out", s(&out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let g = read_geometry(&out).unwrap();
        assert!(!g.points.is_empty() && !g.triangles.is_empty());
    }
}

#[test]
fn mesh_rejects_coarse_resolution() {
    let t = Scratch::new();
    let ckpt = t.path("net.ckpt");
    save_checkpoint(&init_siren(2, 8, 30.0, 0), &ckpt).unwrap();
    let o = sdfcurv(&[
        "mesh",
        s(&ckpt),
        "--resolution",
        "4",
        "--out",
        s(&t.path("m.obj")),
    ]);
    assert_eq!(code(&o), EXIT_ERROR);
}

#[test]
fn mesh_of_a_constant_field_is_empty() {
    let t = Scratch::new();
    let mut p = init_siren(2, 8, 30.0, 0);
    for l in &mut p.layers {
        l.weight.fill(0.0);
    }
    p.layers.last_mut().unwrap().bias.fill(0.5);
    let ckpt = t.path("flat.ckpt");
    save_checkpoint(&p, &ckpt).unwrap();
    let o = sdfcurv(&[
        "mesh",
        s(&ckpt),
        "--resolution",
        "16",
        "--out",
        s(&t.path("m.obj")),
    ]);
    assert_eq!(code(&o), EXIT_EMPTY_SURFACE, "{}", stderr(&o));
}

#[test]
fn eval_of_identical_clouds_is_perfect() {
    let t = Scratch::new();
    let a = t.sphere_cloud("a.xyz", 2000, true);
    let b = t.sphere_cloud("b.xyz", 2000, true);
    let rec = t.path("rec.json");
    let o = sdfcurv(&["eval", s(&a), s(&b), "--out", s(&rec)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(rec).unwrap()).unwrap();
    assert_eq!(r["cd_x1000"], 0.0);
    assert_eq!(r["f1_x100"], 100.0);
    assert!((r["nc_x100"].as_f64().unwrap() - 100.0).abs() < 1e-9);
}

#[test]
fn eval_needs_normals_for_consistency() {
    let t = Scratch::new();
    let a = t.sphere_cloud("a.xyz", 500, true);
    let bare = t.sphere_cloud("bare.xyz", 500, false);
    let o = sdfcurv(&["eval", s(&a), s(&bare)]);
    assert_eq!(code(&o), EXIT_ERROR);
    assert!(
        stderr(&o).to_lowercase().contains("normal"),
        "{}",
        stderr(&o)
    );
    assert_eq!(
        code(&sdfcurv(&["eval", s(&a), s(&bare), "--no-normals"])),
        0
    );
}

/// Two independent area-uniform samples of `N` points on a surface of area
/// `A` sit about `½·√(A/N)` apart; for a radius-0.3 sphere and 5·10⁵ points
/// that is 7.5·10⁻⁴.
#[test]
fn eval_of_a_mesh_against_its_own_dense_samples() {
    let t = Scratch::new();
    let sphere = AnalyticShape::sphere(0.3).unwrap();
    let mesh = marching_cubes(&sphere, 48, Bounds::default()).unwrap();
    let obj = t.path("m.obj");
    write_obj(&obj, &mesh).unwrap();
    let (pts, normals) = sample_mesh(&mesh, 500_000, 77).unwrap();
    let dense = t.path("dense.xyz");
    write_xyz(&dense, &pts, Some(&normals)).unwrap();
    let rec = t.path("rec.csv");
    let o = sdfcurv(&[
        "eval",
        s(&obj),
        s(&dense),
        "--samples",
        "500000",
        "--out",
        s(&rec),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(rec).unwrap();
    let row: Vec<f64> = text
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert!(row[1] < 1.0, "CD×10³ = {}", row[1]);
    assert!(row[0] > 99.0, "NC×10² = {}", row[0]);
}

#[test]
fn eval_writes_a_heat_map() {
    let t = Scratch::new();
    let sphere = AnalyticShape::sphere(0.5).unwrap();
    let obj = t.path("m.obj");
    write_obj(
        &obj,
        &marching_cubes(&sphere, 16, Bounds::default()).unwrap(),
    )
    .unwrap();
    let gt = t.sphere_cloud("gt.xyz", 3000, true);
    let heat = t.path("heat.ply");
    let o = sdfcurv(&[
        "eval",
        s(&obj),
        s(&gt),
        "--samples",
        "5000",
        "--heatmap",
        s(&heat),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let body = fs::read_to_string(&heat).unwrap();
    assert!(body.contains("property double quality"));
    assert!(read_geometry(&heat).unwrap().scalars.is_some());
}

fn bench_config(t: &Scratch, body: &str) -> PathBuf {
    t.text("bench.cfg", body)
}

#[test]
fn bench_single_cell_gives_one_row() {
    let t = Scratch::new();
    let cfg = bench_config(&t, &format!("{SMALL}lr = 1e-3\ncheckpoint_every = 0\n"));
    let out = t.path("bench.csv");
    let o = sdfcurv(&[
        "bench",
        "--shapes",
        "sphere",
        "--routes",
        "proxy_fd",
        "--config",
        s(&cfg),
        "--points",
        "600",
        "--resolution",
        "32",
        "--samples",
        "3000",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("sphere:0.5,proxy_fd,"), "{}", lines[1]);
}

#[test]
fn bench_rejects_unknown_shapes() {
    let t = Scratch::new();
    let o = sdfcurv(&["bench", "--shapes", "teapot", "--out", s(&t.path("b.csv"))]);
    assert_eq!(code(&o), EXIT_ERROR);
    assert!(stderr(&o).contains("teapot"));
}

/// A shell-heavy batch makes the per-point curvature cost dominate, where
/// the full-Hessian route does about twice the work of either proxy.
#[test]
fn bench_gauss_route_is_slowest_on_a_cylinder() {
    let t = Scratch::new();
    let cfg = bench_config(
        &t,
        "width = 32\nmax_iters = 40\nplateau_window = 40\neval_every = 40\ncheckpoint_every = 0\n\
         batch_manifold = 200\nbatch_freespace = 200\nshell_count = 2000\nprobe_count = 200\nlr = 1e-3\n",
    );
    let out = t.path("bench.csv");
    let o = sdfcurv(&[
        "bench",
        "--shapes",
        "cylinder:0.4",
        "--config",
        s(&cfg),
        "--points",
        "2000",
        "--resolution",
        "32",
        "--samples",
        "3000",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(out).unwrap();
    let rows: Vec<(String, f64)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[1].to_string(), f[2].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 3);
    let gauss = rows.iter().find(|r| r.0 == "gauss").unwrap().1;
    for (name, ms) in &rows {
        if name != "gauss" {
            assert!(gauss > *ms, "{rows:?}");
        }
    }
}

#[test]
fn curvcheck_passes() {
    let o = sdfcurv(&["curvcheck"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.lines().all(|l| l.starts_with("PASS")), "{out}");
}

#[test]
fn thread_cap_must_be_a_positive_integer() {
    let o = Command::new(env!("CARGO_BIN_EXE_sdfcurv"))
        .arg("curvcheck")
        .env("FLATCAD_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), EXIT_ERROR);
}
