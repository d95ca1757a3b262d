use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use lwinnn::metrics::{ScoredImage, Segmentation};
use lwinnn::{evaluate, read_mask, EvalReport, Label, Mask, PixelAnomalyMap, ScoredDataset};

use crate::config::RunConfig;
use crate::failure::{CmdResult, Failure};

use super::score::INDEX_HEADER;

pub const REPORT_FILE: &str = "report.txt";
pub const CURVES_FILE: &str = "curves.csv";

/// One row of a scores index.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexRow {
    pub image_id: String,
    pub score: f32,
    pub label: Label,
    pub pixel_map: PathBuf,
    pub mask: Option<PathBuf>,
}

/// Parses a scores index; relative paths resolve against its directory.
pub fn read_index(path: &Path) -> anyhow::Result<(String, Vec<IndexRow>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut category = String::from("default");
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(c) = line.strip_prefix("# category:") {
            category = c.trim().to_string();
            continue;
        }
        if line.starts_with('#') || line.trim().is_empty() || line == INDEX_HEADER {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            bail!("{}:{}: expected 5 tab-separated fields", path.display(), i + 1);
        }
        let score: f32 = f[1].parse().map_err(|e| anyhow!("{}:{}: score: {e}", path.display(), i + 1))?;
        rows.push(IndexRow {
            image_id: f[0].to_string(),
            score,
            label: f[2].parse()?,
            pixel_map: base.join(f[3]),
            mask: Some(f[4]).filter(|m| !m.is_empty()).map(|m| base.join(m)),
        });
    }
    Ok((category, rows))
}

/// Loads maps and masks for the rows. Segmentation is attached to every row
/// once any row has a mask; normal images without one get an empty mask.
pub fn load_dataset(category: String, rows: &[IndexRow]) -> anyhow::Result<ScoredDataset> {
    let segmented = rows.iter().any(|r| r.mask.is_some());
    let mut images = Vec::with_capacity(rows.len());
    for r in rows {
        let segmentation = if segmented {
            let map = PixelAnomalyMap::read(&r.pixel_map)
                .with_context(|| format!("reading pixel map {}", r.pixel_map.display()))?;
            let mask = match (&r.mask, r.label) {
                (Some(p), _) => Some(read_mask(p)?),
                (None, Label::Normal) => Some(Mask::empty(map.height(), map.width())),
                (None, _) => None,
            };
            match mask {
                Some(m) if (m.height(), m.width()) != (map.height(), map.width()) => bail!(
                    "mask of {:?} is {}x{} but its pixel map is {}x{}",
                    r.image_id,
                    m.height(),
                    m.width(),
                    map.height(),
                    map.width()
                ),
                Some(mask) => Some(Segmentation { map, mask }),
                None => None,
            }
        } else {
            None
        };
        images.push(ScoredImage { image_id: r.image_id.clone(), score: r.score, label: r.label, segmentation });
    }
    Ok(ScoredDataset { category, images })
}

/// Evaluates a scores index and writes the report and curve files to `out_dir`.
pub fn eval(cfg: &RunConfig, index: &Path, out_dir: &Path) -> CmdResult<EvalReport> {
    let (category, rows) = read_index(index)?;
    if rows.is_empty() {
        return Err(Failure::Metric(format!("{} lists no images", index.display())));
    }
    let dataset = load_dataset(category, &rows)?;
    let report = evaluate(&dataset, &cfg.eval_options())?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    fs::write(out_dir.join(REPORT_FILE), report.to_text()).context("writing report")?;
    fs::write(out_dir.join(CURVES_FILE), report.curves_csv()).context("writing curves")?;
    Ok(report)
}
