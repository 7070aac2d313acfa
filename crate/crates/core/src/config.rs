//! Plain-text `key = value` configuration for [`TrainConfig`].
//!
//! One assignment per line; `#` starts a comment. Unknown keys are errors.
//! `seed` sets all five seeds at once and may be refined afterwards with
//! `seed_init`, `seed_shell`, `seed_batch`, `seed_theta`, `seed_freespace`.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::{CurvatureRoute, ProxyNorm};
use crate::training::{Seeds, TrainConfig};

fn value<T: FromStr>(key: &str, raw: &str) -> std::result::Result<T, String> {
    raw.parse()
        .map_err(|_| format!("invalid value {raw:?} for {key}"))
}

fn set_key(
    c: &mut TrainConfig,
    route: &mut String,
    h: &mut f64,
    key: &str,
    raw: &str,
) -> std::result::Result<(), String> {
    match key {
        "depth" => c.depth = value(key, raw)?,
        "width" => c.width = value(key, raw)?,
        "omega0" => c.omega0 = value(key, raw)?,
        "lr" => c.lr = value(key, raw)?,
        "max_iters" => c.max_iters = value(key, raw)?,
        "plateau_window" => c.plateau_window = value(key, raw)?,
        "eval_every" => c.eval_every = value(key, raw)?,
        "checkpoint_every" => c.checkpoint_every = value(key, raw)?,
        "batch_manifold" => c.batch_manifold = value(key, raw)?,
        "batch_freespace" => c.batch_freespace = value(key, raw)?,
        "shell_count" => c.shell_count = value(key, raw)?,
        "knn_k" => c.knn_k = value(key, raw)?,
        "probe_count" => c.probe_count = value(key, raw)?,
        "resample_freespace" => c.resample_freespace = value(key, raw)?,
        "route" => *route = raw.to_string(),
        "h" => *h = value(key, raw)?,
        "proxy_norm" => {
            c.proxy_norm = match raw.to_ascii_lowercase().as_str() {
                "l1" => ProxyNorm::L1,
                "l2" => ProxyNorm::L2,
                _ => return Err(format!("invalid value {raw:?} for proxy_norm (l1 or l2)")),
            }
        }
        "w_dm" => c.weights.w_dm = value(key, raw)?,
        "w_dnm" => c.weights.w_dnm = value(key, raw)?,
        "w_eik" => c.weights.w_eik = value(key, raw)?,
        "w_proxy" => c.weights.w_proxy = value(key, raw)?,
        "w_gauss" => c.weights.w_gauss = value(key, raw)?,
        "alpha" => c.weights.alpha = value(key, raw)?,
        "seed" => c.seeds = Seeds::all(value(key, raw)?),
        "seed_init" => c.seeds.init = value(key, raw)?,
        "seed_shell" => c.seeds.shell = value(key, raw)?,
        "seed_batch" => c.seeds.batch = value(key, raw)?,
        "seed_theta" => c.seeds.theta = value(key, raw)?,
        "seed_freespace" => c.seeds.freespace = value(key, raw)?,
        "adam_beta1" => c.adam.beta1 = value(key, raw)?,
        "adam_beta2" => c.adam.beta2 = value(key, raw)?,
        "adam_eps" => c.adam.eps = value(key, raw)?,
        _ => return Err(format!("unknown key {key:?}")),
    }
    Ok(())
}

/// Parses a config over the defaults. `path` is only used in error messages.
pub fn parse_config(text: &str, path: &Path) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    let (mut route, mut h) = match config.route {
        CurvatureRoute::ProxyFd { h } => ("proxy_fd".to_string(), h),
        r => (r.name().to_string(), crate::geometry::DEFAULT_FD_STEP),
    };
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, raw) = line
            .split_once('=')
            .ok_or_else(|| parse_err(i + 1, format!("expected `key = value`, got {line:?}")))?;
        set_key(&mut config, &mut route, &mut h, key.trim(), raw.trim())
            .map_err(|m| parse_err(i + 1, m))?;
    }
    config.route = CurvatureRoute::parse(&route, h)?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, path)
}

/// Prints a string without quotes.
struct Bare<'a>(&'a str);

impl std::fmt::Debug for Bare<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.0)
    }
}

/// Every key with its resolved value; parses back to an equal config.
pub fn config_to_string(c: &TrainConfig) -> String {
    let h = match c.route {
        CurvatureRoute::ProxyFd { h } => h,
        _ => crate::geometry::DEFAULT_FD_STEP,
    };
    let norm = match c.proxy_norm {
        ProxyNorm::L1 => "l1",
        ProxyNorm::L2 => "l2",
    };
    let mut s = String::new();
    let mut kv = |k: &str, v: &dyn std::fmt::Debug| {
        let _ = writeln!(s, "{k} = {v:?}");
    };
    kv("depth", &c.depth);
    kv("width", &c.width);
    kv("omega0", &c.omega0);
    kv("lr", &c.lr);
    kv("max_iters", &c.max_iters);
    kv("plateau_window", &c.plateau_window);
    kv("eval_every", &c.eval_every);
    kv("checkpoint_every", &c.checkpoint_every);
    kv("batch_manifold", &c.batch_manifold);
    kv("batch_freespace", &c.batch_freespace);
    kv("shell_count", &c.shell_count);
    kv("knn_k", &c.knn_k);
    kv("probe_count", &c.probe_count);
    kv("resample_freespace", &c.resample_freespace);
    kv("route", &Bare(c.route.name()));
    kv("h", &h);
    kv("proxy_norm", &Bare(norm));
    let w = &c.weights;
    kv("w_dm", &w.w_dm);
    kv("w_dnm", &w.w_dnm);
    kv("w_eik", &w.w_eik);
    kv("w_proxy", &w.w_proxy);
    kv("w_gauss", &w.w_gauss);
    kv("alpha", &w.alpha);
    kv("seed_init", &c.seeds.init);
    kv("seed_shell", &c.seeds.shell);
    kv("seed_batch", &c.seeds.batch);
    kv("seed_theta", &c.seeds.theta);
    kv("seed_freespace", &c.seeds.freespace);
    kv("adam_beta1", &c.adam.beta1);
    kv("adam_beta2", &c.adam.beta2);
    kv("adam_eps", &c.adam.eps);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(text: &str) -> Result<TrainConfig> {
        parse_config(text, Path::new("test.cfg"))
    }

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(p("# nothing\n\n").unwrap(), TrainConfig::default());
    }

    #[test]
    fn overrides_and_comments() {
        let c = p("width = 64  # desk\nroute = proxy_ad\nseed = 7\nseed_theta = 9\nresample_freespace = false\n").unwrap();
        assert_eq!(c.width, 64);
        assert_eq!(c.route, CurvatureRoute::ProxyAd);
        assert_eq!(c.seeds.init, 7);
        assert_eq!(c.seeds.theta, 9);
        assert!(!c.resample_freespace);
    }

    #[test]
    fn errors_name_the_line() {
        match p("width = 64\nwidht = 3\n") {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("widht"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(p("lr = fast"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(p("lr = -1"), Err(Error::Config(_))));
        assert!(matches!(p("route = magic"), Err(Error::Config(_))));
    }

    #[test]
    fn round_trip() {
        let c = TrainConfig {
            route: CurvatureRoute::ProxyFd { h: 1e-4 },
            proxy_norm: ProxyNorm::L2,
            lr: 1.2345678901234567e-5,
            seeds: Seeds {
                init: 1,
                shell: 2,
                batch: 3,
                theta: 4,
                freespace: 5,
            },
            ..TrainConfig::desk()
        };
        assert_eq!(p(&config_to_string(&c)).unwrap(), c);
        let d = TrainConfig::default();
        assert_eq!(p(&config_to_string(&d)).unwrap(), d);
    }
}
