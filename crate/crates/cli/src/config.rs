//! Run configuration: defaults, `key = value` config files and overrides.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use lwinnn::maps::{DEFAULT_BLUR_SIGMA, DEFAULT_KNN_K};
use lwinnn::metrics::{EvalOptions, DEFAULT_BINS, DEFAULT_FPR_CAP};
use lwinnn::{Aggregation, EmbeddingConfig, SearchConfig};

/// Input and output locations. Any of them can come from the config file or
/// the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Paths {
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub bank: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub embedding: EmbeddingConfig,
    pub search: SearchConfig,
    pub aggregation: Aggregation,
    /// Take the image score from the blurred pixel map instead of the patch map.
    pub max_after_blur: bool,
    pub blur_sigma: f64,
    pub knn_k: usize,
    pub fpr_cap: f64,
    /// Threshold bins for AUPRO; `None` is exact.
    pub bins: Option<usize>,
    pub max_train_samples: Option<usize>,
    /// Test images embedded and scored together.
    pub batch_size: usize,
    /// 0 lets rayon decide.
    pub threads: usize,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            embedding: EmbeddingConfig::default(),
            search: SearchConfig::default(),
            aggregation: Aggregation::MaxPatch,
            max_after_blur: false,
            blur_sigma: DEFAULT_BLUR_SIGMA,
            knn_k: DEFAULT_KNN_K,
            fpr_cap: DEFAULT_FPR_CAP,
            bins: None,
            max_train_samples: None,
            batch_size: 16,
            threads: 0,
            paths: Paths::default(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "pooling",
    "pool_kernel",
    "pool_stride",
    "interpolation",
    "layers",
    "window_size",
    "mode",
    "memory_budget",
    "aggregation",
    "max_after_blur",
    "blur_sigma",
    "knn_k",
    "fpr_cap",
    "bins",
    "max_train_samples",
    "batch_size",
    "threads",
    "train_manifest",
    "test_manifest",
    "bank",
    "output_dir",
];

pub fn parse_bool(value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        other => bail!("expected a boolean, got {other:?}"),
    }
}

fn parse_optional(value: &str) -> Result<Option<usize>> {
    match value {
        "none" | "unlimited" | "exact" => Ok(None),
        v => Ok(Some(v.parse()?)),
    }
}

impl RunConfig {
    /// Applies one setting. Relative paths are joined onto `base`.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "pooling" => self.embedding.pooling = parse_bool(v)?,
            "pool_kernel" => self.embedding.pool_kernel = v.parse()?,
            "pool_stride" => self.embedding.pool_stride = v.parse()?,
            "interpolation" => self.embedding.interpolation = v.parse()?,
            "layers" => {
                self.embedding.layer_indices =
                    v.split(',').map(|s| s.trim().parse::<usize>()).collect::<std::result::Result<_, _>>()?
            }
            "window_size" => self.search.window_size = v.parse()?,
            "mode" => self.search.mode = v.parse()?,
            "memory_budget" => self.search.memory_budget = parse_bytes(v)?,
            "aggregation" => self.aggregation = v.parse()?,
            "max_after_blur" => self.max_after_blur = parse_bool(v)?,
            "blur_sigma" => self.blur_sigma = v.parse()?,
            "knn_k" => self.knn_k = v.parse()?,
            "fpr_cap" => self.fpr_cap = v.parse()?,
            "bins" => {
                self.bins = match v {
                    "default" => Some(DEFAULT_BINS),
                    v => parse_optional(v)?,
                }
            }
            "max_train_samples" => self.max_train_samples = parse_optional(v)?,
            "batch_size" => self.batch_size = v.parse()?,
            "threads" => self.threads = v.parse()?,
            "train_manifest" => self.paths.train_manifest = Some(base.join(v)),
            "test_manifest" => self.paths.test_manifest = Some(base.join(v)),
            "bank" => self.paths.bank = Some(base.join(v)),
            "output_dir" => self.paths.output_dir = Some(base.join(v)),
            other => bail!("unknown config key {other:?} (known: {})", KEYS.join(", ")),
        }
        Ok(())
    }

    /// Applies a config file on top of `self`.
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{}:{}: expected `key = value`", path.display(), i + 1))?;
            self.set(k, v, base).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        }
        Ok(())
    }

    /// Applies `key=value` overrides given on the command line.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| anyhow!("--set expects key=value, got {o:?}"))?;
            self.set(k, v, Path::new("")).with_context(|| format!("--set {o}"))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.embedding.validate()?;
        self.search.validate()?;
        if !(self.blur_sigma > 0.0 && self.blur_sigma.is_finite()) {
            bail!("blur_sigma must be positive, got {}", self.blur_sigma);
        }
        if self.knn_k == 0 {
            bail!("knn_k must be at least 1");
        }
        if !(self.fpr_cap > 0.0 && self.fpr_cap <= 1.0) {
            bail!("fpr_cap must be in (0, 1], got {}", self.fpr_cap);
        }
        if self.bins == Some(0) {
            bail!("bins must be at least 1");
        }
        if self.batch_size == 0 {
            bail!("batch_size must be at least 1");
        }
        Ok(())
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions { fpr_cap: self.fpr_cap, bins: self.bins }
    }
}

/// Byte counts with optional `K`, `M` or `G` suffix (powers of 1024).
pub fn parse_bytes(v: &str) -> Result<usize> {
    let v = v.trim();
    let (digits, shift) = match v.chars().last() {
        Some('K' | 'k') => (&v[..v.len() - 1], 10),
        Some('M' | 'm') => (&v[..v.len() - 1], 20),
        Some('G' | 'g') => (&v[..v.len() - 1], 30),
        _ => (v, 0),
    };
    let n: usize = digits.trim().parse().with_context(|| format!("bad byte count {v:?}"))?;
    n.checked_mul(1 << shift).ok_or_else(|| anyhow!("byte count {v:?} overflows"))
}
