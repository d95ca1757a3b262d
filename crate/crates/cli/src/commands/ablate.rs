use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use lwinnn::metrics::{ScoredImage, Segmentation};
use lwinnn::{evaluate, read_mask, EmbeddingBank, Interpolation, Label, Mask, ScoredDataset, SearchMode, Split};

use crate::config::{parse_bool, RunConfig};
use crate::failure::CmdResult;
use crate::pipeline::{embed_entries, load_manifest, score_entries};

/// Axes of an ablation sweep. Axes not named in the sweep string keep the run config's value.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub deltas: Vec<usize>,
    pub modes: Vec<SearchMode>,
    pub pooling: Vec<bool>,
    pub interpolation: Vec<Interpolation>,
    /// Not applied here; feature normalisation happens at extraction time.
    pub normalization: Vec<String>,
}

impl Sweep {
    /// Parses `axis=v1,v2;axis=...`, e.g. `delta=1,3,5,7;pooling=on,off`.
    pub fn parse(spec: &str, cfg: &RunConfig) -> anyhow::Result<Self> {
        let mut sweep = Sweep {
            deltas: vec![cfg.search.window_size],
            modes: vec![cfg.search.mode],
            pooling: vec![cfg.embedding.pooling],
            interpolation: vec![cfg.embedding.interpolation],
            normalization: vec!["-".into()],
        };
        fn list<T: FromStr>(v: &str) -> anyhow::Result<Vec<T>>
        where
            T::Err: std::fmt::Display,
        {
            v.split(',').map(|s| s.trim().parse::<T>().map_err(|e| anyhow!("{s:?}: {e}"))).collect()
        }
        for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (axis, values) = part.split_once('=').ok_or_else(|| anyhow!("sweep axis {part:?} needs `=`"))?;
            match axis.trim() {
                "delta" | "window_size" => sweep.deltas = list(values)?,
                "mode" => sweep.modes = list(values)?,
                "pooling" => sweep.pooling = values.split(',').map(|v| parse_bool(v.trim())).collect::<Result<_, _>>()?,
                "interpolation" => sweep.interpolation = list(values)?,
                "normalization" => sweep.normalization = values.split(',').map(|v| v.trim().to_string()).collect(),
                other => bail!("unknown sweep axis {other:?}"),
            }
        }
        if let Some(d) = sweep.deltas.iter().find(|d| *d % 2 == 0) {
            bail!("window sizes must be odd, got {d}");
        }
        Ok(sweep)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub delta: Option<usize>,
    pub mode: SearchMode,
    pub pooling: bool,
    pub interpolation: Interpolation,
    pub normalization: String,
    pub n_train: usize,
    pub n_test: usize,
    pub auroc_image: f64,
    pub aupro: Option<f64>,
    pub fit_seconds: f64,
    pub test_seconds_per_image: f64,
}

pub const TABLE_HEADER: &str =
    "delta\tmode\tpooling\tinterpolation\tnormalization\tn_train\tn_test\tauroc_image\taupro\tfit_seconds\ttest_seconds_per_image";

pub fn table(rows: &[AblationRow]) -> String {
    let mut s = String::from(TABLE_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}",
            r.delta.map_or("-".to_string(), |d| d.to_string()),
            r.mode,
            if r.pooling { "on" } else { "off" },
            r.interpolation,
            r.normalization,
            r.n_train,
            r.n_test,
            r.auroc_image,
            r.aupro.map_or("NA".to_string(), |v| v.to_string()),
            r.fit_seconds,
            r.test_seconds_per_image
        );
    }
    s
}

/// Runs fit, score and eval in memory for every sweep configuration and
/// writes the table to `out` when given.
pub fn ablate(
    cfg: &RunConfig,
    train_manifest: &Path,
    test_manifest: &Path,
    sweep: &Sweep,
    out: Option<&Path>,
) -> CmdResult<Vec<AblationRow>> {
    let mut train = load_manifest(train_manifest, Split::Train)?;
    if let Some(limit) = cfg.max_train_samples {
        train.entries.truncate(limit);
    }
    let test = load_manifest(test_manifest, Split::Test)?;
    let masks: Vec<Option<Mask>> = test
        .entries
        .iter()
        .map(|e| e.mask_path.as_ref().map(read_mask).transpose())
        .collect::<Result<_, _>>()?;
    let segmented = masks.iter().any(Option::is_some);

    let mut rows = Vec::new();
    for &pooling in &sweep.pooling {
        for &interpolation in &sweep.interpolation {
            let mut run = cfg.clone();
            run.embedding.pooling = pooling;
            run.embedding.interpolation = interpolation;
            let fit_start = Instant::now();
            let embeddings = embed_entries(&train.entries, &run.embedding)?;
            let bank = EmbeddingBank::from_embeddings(train.category.clone(), run.embedding.fingerprint(), &embeddings)?;
            let fit_seconds = fit_start.elapsed().as_secs_f64();

            let mut searches = Vec::new();
            for &mode in &sweep.modes {
                if mode == SearchMode::LocalWindow {
                    searches.extend(sweep.deltas.iter().map(|&d| (mode, Some(d))));
                } else {
                    searches.push((mode, None));
                }
            }
            for (mode, delta) in searches {
                run.search.mode = mode;
                if let Some(d) = delta {
                    run.search.window_size = d;
                }
                run.validate()?;
                let mut images = Vec::with_capacity(test.entries.len());
                let busy = score_entries(&test.entries, &bank, &run, |_, s| {
                    let segmentation = if segmented {
                        match (&masks[s.index], s.label) {
                            (Some(m), _) => Some(Segmentation { map: s.pixel, mask: m.clone() }),
                            (None, Label::Normal) => {
                                let mask = Mask::empty(s.pixel.height(), s.pixel.width());
                                Some(Segmentation { map: s.pixel, mask })
                            }
                            (None, _) => None,
                        }
                    } else {
                        None
                    };
                    images.push(ScoredImage { image_id: s.image_id, score: s.score, label: s.label, segmentation });
                    Ok(())
                })?;
                let dataset = ScoredDataset { category: test.category.clone(), images };
                let report = evaluate(&dataset, &run.eval_options())?;
                for norm in &sweep.normalization {
                    rows.push(AblationRow {
                        delta,
                        mode,
                        pooling,
                        interpolation,
                        normalization: norm.clone(),
                        n_train: bank.len(),
                        n_test: dataset.images.len(),
                        auroc_image: report.auroc_image,
                        aupro: report.aupro,
                        fit_seconds,
                        test_seconds_per_image: busy / dataset.images.len().max(1) as f64,
                    });
                }
            }
        }
    }
    if let Some(out) = out {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        fs::write(out, table(&rows)).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(rows)
}
