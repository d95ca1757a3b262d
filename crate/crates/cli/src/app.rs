//! Argument parsing and dispatch for the `lwinnn` binary.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use lwinnn::synth::{generate, write_dataset, SyntheticSpec};

use crate::commands::{ablate, eval, fit, heatmap, score, Sweep};
use crate::config::RunConfig;
use crate::failure::{CmdResult, Failure};

#[derive(Debug, Parser)]
#[command(name = "lwinnn", version, about = "Local-window nearest-neighbour anomaly detection")]
pub struct Cli {
    /// Config file with `key = value` lines.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Worker threads; 0 picks one per core.
    #[arg(long, global = true, env = "LWINN_THREADS")]
    pub threads: Option<usize>,
    /// Replace an existing bank even if it was built differently.
    #[arg(long, global = true)]
    pub force: bool,
    /// Override a config key, e.g. `--set window_size=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(flatten)]
    pub tuning: Tuning,
    #[command(subcommand)]
    pub command: Command,
}

/// Shortcuts for the most used config keys.
#[derive(Debug, Args, Default)]
pub struct Tuning {
    /// Window side δ (odd).
    #[arg(long, global = true)]
    pub window_size: Option<usize>,
    /// local_window, per_location or global.
    #[arg(long, global = true)]
    pub mode: Option<String>,
    /// max_patch or knn_image.
    #[arg(long, global = true)]
    pub aggregation: Option<String>,
    /// Take the max image score from the blurred pixel map.
    #[arg(long, global = true)]
    pub max_after_blur: bool,
    /// Use only the first N training entries.
    #[arg(long, global = true)]
    pub max_train_samples: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a training bank from a train manifest.
    Fit {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        bank: Option<PathBuf>,
    },
    /// Score a test manifest against a bank.
    Score {
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        bank: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute image AUROC and AUPRO from a scores index.
    Eval {
        /// `scores.tsv` written by `score`.
        #[arg(long)]
        scores: PathBuf,
        /// Defaults to the directory of the scores index.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run fit, score and eval over a grid of settings.
    Ablate {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        /// e.g. `delta=1,3,5,7;pooling=on,off;interpolation=bilinear,nearest`.
        #[arg(long, default_value = "")]
        sweep: String,
        /// Table destination (tab separated).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a pixel map as a PNG heat map.
    Heatmap {
        map: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Original image to blend under the heat map.
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        alpha: f32,
    },
    /// Write a seeded synthetic dataset (bundles, masks, manifests).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 6)]
        train: usize,
        #[arg(long, default_value_t = 6)]
        test_normal: usize,
        #[arg(long, default_value_t = 6)]
        test_anomalous: usize,
        #[arg(long, default_value_t = 16)]
        grid: usize,
        #[arg(long, default_value_t = 8)]
        channels: usize,
        #[arg(long, default_value_t = 3)]
        layers: usize,
        #[arg(long, default_value_t = 2)]
        max_shift: usize,
        /// Shift every test object by exactly ±max-shift.
        #[arg(long)]
        exact_shift: bool,
        #[arg(long, default_value_t = 1.0)]
        defect_strength: f32,
        #[arg(long, default_value_t = 0.0)]
        noise: f32,
    },
}

/// Defaults, then the config file, then `--set`, then the shortcut flags.
pub fn resolve_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.load_file(path)?;
    }
    cfg.apply_overrides(&cli.overrides)?;
    let t = &cli.tuning;
    let base = Path::new("");
    if let Some(w) = t.window_size {
        cfg.set("window_size", &w.to_string(), base)?;
    }
    if let Some(m) = &t.mode {
        cfg.set("mode", m, base)?;
    }
    if let Some(a) = &t.aggregation {
        cfg.set("aggregation", a, base)?;
    }
    if t.max_after_blur {
        cfg.max_after_blur = true;
    }
    if let Some(n) = t.max_train_samples {
        cfg.max_train_samples = Some(n);
    }
    if let Some(n) = cli.threads {
        cfg.threads = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn required(flag: Option<&PathBuf>, fallback: Option<&PathBuf>, what: &str) -> anyhow::Result<PathBuf> {
    flag.or(fallback).cloned().ok_or_else(|| anyhow!("no {what} given (flag or config key)"))
}

pub fn run(cli: Cli) -> CmdResult<()> {
    let cfg = resolve_config(&cli)?;
    // A pool can only be installed once per process; later calls keep the first.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    let p = &cfg.paths;
    match &cli.command {
        Command::Fit { train, bank } => {
            let train = required(train.as_ref(), p.train_manifest.as_ref(), "train manifest")?;
            let bank = required(bank.as_ref(), p.bank.as_ref(), "bank path")?;
            let s = fit(&cfg, &train, &bank, cli.force)?;
            println!("category\t{}", s.category);
            println!("n_train\t{}", s.n_train);
            println!("dims\t{}x{}x{}", s.dims.0, s.dims.1, s.dims.2);
            println!("wall_seconds\t{:.3}", s.seconds);
        }
        Command::Score { test, bank, out } => {
            let test = required(test.as_ref(), p.test_manifest.as_ref(), "test manifest")?;
            let bank = required(bank.as_ref(), p.bank.as_ref(), "bank path")?;
            let out = required(out.as_ref(), p.output_dir.as_ref(), "output directory")?;
            let s = score(&cfg, &test, &bank, &out)?;
            println!("images\t{}", s.images);
            println!("index\t{}", s.index.display());
            println!("seconds_per_image\t{:.6}", s.seconds_per_image);
            println!("wall_seconds\t{:.3}", s.seconds);
        }
        Command::Eval { scores, out } => {
            let out = match out {
                Some(o) => o.clone(),
                None => scores.parent().map(Path::to_path_buf).unwrap_or_default(),
            };
            let report = eval(&cfg, scores, &out)?;
            println!("category\t{}", report.category);
            println!("auroc_image\t{:.6}", report.auroc_image);
            match report.aupro {
                Some(v) => println!("aupro\t{v:.6}"),
                None => println!("aupro\tNA"),
            }
        }
        Command::Ablate { train, test, sweep, out } => {
            let train = required(train.as_ref(), p.train_manifest.as_ref(), "train manifest")?;
            let test = required(test.as_ref(), p.test_manifest.as_ref(), "test manifest")?;
            let sweep = Sweep::parse(sweep, &cfg)?;
            let rows = ablate(&cfg, &train, &test, &sweep, out.as_deref())?;
            print!("{}", crate::commands::ablate::table(&rows));
        }
        Command::Heatmap { map, out, image, alpha } => {
            if !(0.0..=1.0).contains(alpha) {
                return Err(Failure::Other(anyhow!("alpha must be in [0, 1], got {alpha}")));
            }
            let (w, h) = heatmap(map, image.as_deref(), *alpha, out)?;
            println!("wrote {} ({w}x{h})", out.display());
        }
        Command::Synth { out, seed, train, test_normal, test_anomalous, grid, channels, layers, max_shift, exact_shift, defect_strength, noise } => {
            let spec = SyntheticSpec {
                seed: *seed,
                train: *train,
                test_normal: *test_normal,
                test_anomalous: *test_anomalous,
                grid: *grid,
                channels: *channels,
                layers: *layers,
                max_shift: *max_shift,
                exact_shift: *exact_shift,
                defect_strength: *defect_strength,
                noise: *noise,
                ..SyntheticSpec::default()
            };
            let data = generate(&spec)?;
            let written = write_dataset(&data, out).with_context(|| format!("writing {}", out.display()))?;
            println!("train_manifest\t{}", written.train_manifest.display());
            println!("test_manifest\t{}", written.test_manifest.display());
        }
    }
    Ok(())
}
