//! Settings files and their merge with command-line flags.
//!
//! A settings file holds one `key=value` pair per line; blank lines and lines
//! starting with `#` are skipped. Keys are the long flag names with dashes or
//! underscores. Relative paths are resolved against the file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use octen::cp::AlsConfig;
use octen::streaming::OctenConfig;

use crate::args::{Axis, Dims, Options};
use crate::error::{CliError, Result};

/// Keys a settings file may contain.
pub const KEYS: &[&str] = &[
    "dims",
    "rank",
    "seed",
    "noise_mu",
    "noise_sigma",
    "p",
    "q",
    "shared",
    "batch",
    "temporal_mode",
    "enforce_bounds",
    "strict",
    "workers",
    "als_max_iters",
    "als_tol",
    "als_restarts",
    "oracle",
    "input",
    "truth",
    "out",
    "checkpoint_every",
    "resume",
    "stop_after",
    "no_timings",
    "axis",
    "values",
    "repeats",
];

/// A parsed settings file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    base: PathBuf,
    entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str, base: impl Into<PathBuf>) -> Result<ConfigFile> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key=value", n + 1)))?;
            let key = key.trim().replace('-', "_");
            if !KEYS.contains(&key.as_str()) {
                return Err(CliError::Config(format!("line {}: unknown key {key:?}", n + 1)));
            }
            if entries.insert(key.clone(), value.trim().to_owned()).is_some() {
                return Err(CliError::Config(format!("line {}: duplicate key {key:?}", n + 1)));
            }
        }
        Ok(ConfigFile {
            base: base.into(),
            entries,
        })
    }

    pub fn load(path: &Path) -> Result<ConfigFile> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        ConfigFile::parse(&text, base).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.entries
            .get(key)
            .map(|v| v.parse().map_err(|e| CliError::Config(format!("{key} = {v:?}: {e}"))))
            .transpose()
    }

    fn flag(&self, key: &str) -> Result<bool> {
        Ok(self.get::<bool>(key)?.unwrap_or(false))
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.entries.get(key).map(|v| self.base.join(v))
    }
}

/// Fully merged settings of one invocation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    pub dims: Option<Vec<usize>>,
    pub rank: Option<usize>,
    pub seed: u64,
    pub noise_mu: f64,
    pub noise_sigma: f64,
    pub p: Option<usize>,
    pub q: Option<usize>,
    pub shared: Option<usize>,
    pub batch: Option<usize>,
    /// 0-based.
    pub temporal_mode: Option<usize>,
    pub enforce_bounds: bool,
    pub strict: bool,
    pub workers: usize,
    pub als_max_iters: Option<usize>,
    pub als_tol: Option<f64>,
    pub als_restarts: Option<usize>,
    pub oracle: bool,
    pub input: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint_every: usize,
    pub resume: bool,
    pub stop_after: Option<usize>,
    pub no_timings: bool,
    pub axis: Option<Axis>,
    pub values: Option<Vec<usize>>,
    pub repeats: usize,
}

impl Settings {
    /// Merges flags over the `--config` file, if any.
    pub fn resolve(o: &Options) -> Result<Settings> {
        let file = match &o.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };
        let values = match &o.values {
            Some(v) => Some(v.clone()),
            None => file
                .entries
                .get("values")
                .map(|v| {
                    v.split(',')
                        .map(|x| x.trim().parse::<usize>())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|e| CliError::Config(format!("values = {v:?}: {e}")))
                })
                .transpose()?,
        };
        let temporal_mode = match o
            .temporal_mode
            .map_or_else(|| file.get::<usize>("temporal_mode"), |m| Ok(Some(m)))?
        {
            Some(0) => return Err(CliError::Config("temporal_mode is 1-based".into())),
            m => m.map(|m| m - 1),
        };
        Ok(Settings {
            dims: match &o.dims {
                Some(d) => Some(d.0.clone()),
                None => file.get::<Dims>("dims")?.map(|d| d.0),
            },
            rank: pick(o.rank, &file, "rank")?,
            seed: pick(o.seed, &file, "seed")?.unwrap_or(0),
            noise_mu: pick(o.noise_mu, &file, "noise_mu")?.unwrap_or(0.0),
            noise_sigma: pick(o.noise_sigma, &file, "noise_sigma")?.unwrap_or(0.0),
            p: pick(o.p, &file, "p")?,
            q: pick(o.q, &file, "q")?,
            shared: pick(o.shared, &file, "shared")?,
            batch: pick(o.batch, &file, "batch")?,
            temporal_mode,
            enforce_bounds: o.enforce_bounds || file.flag("enforce_bounds")?,
            strict: o.strict || file.flag("strict")?,
            workers: pick(o.workers, &file, "workers")?.unwrap_or(0),
            als_max_iters: pick(o.als_max_iters, &file, "als_max_iters")?,
            als_tol: pick(o.als_tol, &file, "als_tol")?,
            als_restarts: pick(o.als_restarts, &file, "als_restarts")?,
            oracle: o.oracle || file.flag("oracle")?,
            input: o.input.clone().or_else(|| file.path("input")),
            truth: o.truth.clone().or_else(|| file.path("truth")),
            out: o.out.clone().or_else(|| file.path("out")),
            checkpoint_every: pick(o.checkpoint_every, &file, "checkpoint_every")?.unwrap_or(0),
            resume: o.resume || file.flag("resume")?,
            stop_after: pick(o.stop_after, &file, "stop_after")?,
            no_timings: o.no_timings || file.flag("no_timings")?,
            axis: pick(o.axis, &file, "axis")?,
            values,
            repeats: pick(o.repeats, &file, "repeats")?.unwrap_or(1),
        })
    }

    pub fn require<T: Copy>(value: Option<T>, key: &str) -> Result<T> {
        value.ok_or_else(|| CliError::Config(format!("missing setting `{key}`")))
    }

    pub fn rank(&self) -> Result<usize> {
        Settings::require(self.rank, "rank")
    }

    pub fn batch(&self) -> Result<usize> {
        match Settings::require(self.batch, "batch")? {
            0 => Err(CliError::Config("batch must be at least 1".into())),
            b => Ok(b),
        }
    }

    pub fn out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Config("missing setting `out`".into()))
    }

    /// Decomposition settings shared by the replicas and the oracle.
    pub fn als(&self) -> Result<AlsConfig> {
        let mut als = OctenConfig::new(self.rank()?, 1, 1, 0).als;
        if let Some(n) = self.als_max_iters {
            als.max_iters = n;
        }
        if let Some(t) = self.als_tol {
            als.rel_tol = t;
        }
        if let Some(n) = self.als_restarts {
            als.n_restarts = n;
        }
        Ok(als)
    }

    pub fn octen_config(&self) -> Result<OctenConfig> {
        let mut cfg = OctenConfig::new(
            self.rank()?,
            Settings::require(self.p, "p")?,
            Settings::require(self.q, "q")?,
            Settings::require(self.shared, "shared")?,
        )
        .with_seed(self.seed);
        cfg.temporal_mode = self.temporal_mode;
        cfg.als = self.als()?;
        cfg.enforce_bounds = self.enforce_bounds;
        cfg.strict = self.strict;
        cfg.workers = self.workers;
        Ok(cfg)
    }
}

fn pick<T: FromStr>(flag: Option<T>, file: &ConfigFile, key: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match flag {
        Some(v) => Ok(Some(v)),
        None => file.get(key),
    }
}
