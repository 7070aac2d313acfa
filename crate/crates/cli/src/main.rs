use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sdfcurv::geometry::DEFAULT_FD_STEP;
use sdfcurv::io::PlyFormat;
use sdfcurv::meshing::DEFAULT_RESOLUTION;
use sdfcurv::metrics::{MetricsRecord, DEFAULT_EVAL_SAMPLES, DEFAULT_F1_TAU};
use sdfcurv::Result;
use sdfcurv_cli as cli;

#[derive(Parser)]
#[command(
    name = "sdfcurv",
    version,
    about = "Fit curvature-regularized neural SDFs to point clouds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct TrainArgs {
    /// `key = value` training config; unset keys take the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sets all five seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// proxy_fd, proxy_ad, gauss or none.
    #[arg(long)]
    route: Option<String>,
    /// Stencil step for proxy_fd.
    #[arg(long)]
    h: Option<f64>,
}

impl TrainArgs {
    fn overrides(&self) -> cli::Overrides {
        cli::Overrides {
            seed: self.seed,
            route: self.route.clone(),
            h: self.h,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train on a point cloud (.xyz, .ply or .obj vertices).
    Fit {
        cloud: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract the zero set of a checkpoint to .obj or .ply.
    Mesh {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        resolution: usize,
        #[arg(long)]
        out: PathBuf,
        /// Binary little-endian PLY instead of ASCII.
        #[arg(long)]
        binary: bool,
    },
    /// Score a checkpoint, mesh or cloud against a reference.
    Eval {
        pred: PathBuf,
        gt: PathBuf,
        /// Record path, JSON or `.csv`; printed as CSV when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        resolution: usize,
        #[arg(long, default_value_t = DEFAULT_EVAL_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = DEFAULT_F1_TAU)]
        tau: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Skip normal consistency.
        #[arg(long)]
        no_normals: bool,
        /// Per-vertex Hausdorff heat map (PLY, `quality` property).
        #[arg(long)]
        heatmap: Option<PathBuf>,
    },
    /// Train every shape with every route and tabulate time and accuracy.
    Bench {
        /// Catalog shapes, e.g. `sphere`, `torus:0.6,0.2`.
        #[arg(long, num_args = 1.., required = true)]
        shapes: Vec<String>,
        #[arg(long, num_args = 1.., value_delimiter = ',', default_values_t = ["proxy_ad".to_string(), "proxy_fd".to_string(), "gauss".to_string()])]
        routes: Vec<String>,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value_t = 5000)]
        points: usize,
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        resolution: usize,
        #[arg(long, default_value_t = DEFAULT_EVAL_SAMPLES)]
        samples: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the curvature code against analytic shapes.
    Curvcheck,
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::Fit { cloud, train, out } => {
            let config = cli::resolve_config(train.config.as_deref(), &train.overrides())?;
            let report = cli::fit(&config, &cloud, &out)?;
            let h = &report.history;
            println!(
                "{} iterations, best CD {:.6e} at {}; wrote {}",
                h.last_iteration(),
                h.best_cd.unwrap_or(f64::NAN),
                h.best_iteration,
                out.display()
            );
        }
        Command::Mesh {
            checkpoint,
            resolution,
            out,
            binary,
        } => {
            let format = if binary {
                PlyFormat::BinaryLittleEndian
            } else {
                PlyFormat::Ascii
            };
            let m = cli::mesh(&checkpoint, resolution, &out, format)?;
            println!(
                "{} vertices, {} triangles -> {}",
                m.vertices.len(),
                m.triangles.len(),
                out.display()
            );
        }
        Command::Eval {
            pred,
            gt,
            out,
            resolution,
            samples,
            tau,
            seed,
            no_normals,
            heatmap,
        } => {
            let opts = cli::EvalOptions {
                resolution,
                samples,
                tau,
                seed,
                normals: !no_normals,
                heatmap,
            };
            let r = cli::eval(&pred, &gt, out.as_deref(), &opts)?;
            println!("{}\n{}", MetricsRecord::CSV_HEADER, r.csv_row());
        }
        Command::Bench {
            shapes,
            routes,
            train,
            points,
            resolution,
            samples,
            out,
        } => {
            let shapes = cli::parse_shapes(&shapes)?;
            let base = cli::resolve_config(train.config.as_deref(), &train.overrides())?;
            let routes = cli::parse_routes(&routes, train.h.unwrap_or(DEFAULT_FD_STEP))?;
            let opts = cli::BenchOptions {
                points,
                eval: cli::EvalOptions {
                    resolution,
                    samples,
                    ..Default::default()
                },
                ..Default::default()
            };
            let rows = cli::bench(&shapes, &routes, &base, &opts)?;
            cli::write_bench_csv(&rows, &out)?;
            for r in &rows {
                println!("{}", r.csv_row());
            }
        }
        Command::Curvcheck => {
            let checks = cli::curvcheck()?;
            let mut failed = 0;
            for c in &checks {
                println!(
                    "{} {}: {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
                failed += usize::from(!c.passed);
            }
            if failed > 0 {
                return Ok(cli::EXIT_ERROR);
            }
        }
    }
    Ok(cli::EXIT_OK)
}

fn main() -> ExitCode {
    let args = Cli::parse();
    let code = cli::configure_threads()
        .and_then(|()| run(args.command))
        .unwrap_or_else(|e| {
            eprintln!("error: {e}");
            cli::exit_code(&e)
        });
    ExitCode::from(code as u8)
}
