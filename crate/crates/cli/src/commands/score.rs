use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use lwinnn::{EmbeddingBank, Split};

use crate::config::RunConfig;
use crate::failure::CmdResult;
use crate::pipeline::{check_fingerprint, file_stem, load_manifest, score_entries};

pub const INDEX_FILE: &str = "scores.tsv";
pub const INDEX_HEADER: &str = "image_id\tscore\tlabel\tpixel_map_path\tmask_path";

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSummary {
    pub images: usize,
    pub index: PathBuf,
    /// Embedding, search and post-processing time per test image.
    pub seconds_per_image: f64,
    pub seconds: f64,
}

fn tsv_field(s: &str) -> String {
    s.chars().map(|c| if c.is_control() { ' ' } else { c }).collect()
}

/// Scores every image of a test manifest against a bank.
///
/// Writes `patch/` and `pixel/` map files plus a `scores.tsv` index under
/// `out_dir`. Map paths in the index are relative to `out_dir`; mask paths
/// are absolute.
pub fn score(cfg: &RunConfig, test_manifest: &Path, bank_path: &Path, out_dir: &Path) -> CmdResult<ScoreSummary> {
    let start = Instant::now();
    let bank = EmbeddingBank::read(bank_path).with_context(|| format!("loading bank {}", bank_path.display()))?;
    check_fingerprint(&bank, &cfg.embedding)?;
    let manifest = load_manifest(test_manifest, Split::Test)?;
    for sub in ["patch", "pixel"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
    }

    let mut index = String::new();
    let _ = writeln!(index, "# category: {}", manifest.category);
    let _ = writeln!(index, "# fingerprint: {}", bank.fingerprint());
    let _ = writeln!(index, "# aggregation: {}", cfg.aggregation);
    index.push_str(INDEX_HEADER);
    index.push('\n');
    let mut count = 0;
    let busy = score_entries(&manifest.entries, &bank, cfg, |entry, scored| {
        let stem = file_stem(scored.index, &scored.image_id);
        let patch_rel = format!("patch/{stem}.lwnm");
        let pixel_rel = format!("pixel/{stem}.lwnm");
        scored.patch.write(out_dir.join(&patch_rel))?;
        scored.pixel.write(out_dir.join(&pixel_rel))?;
        let mask = match &entry.mask_path {
            Some(p) => std::path::absolute(p).unwrap_or_else(|_| p.clone()).display().to_string(),
            None => String::new(),
        };
        let _ = writeln!(
            index,
            "{}\t{}\t{}\t{}\t{}",
            tsv_field(&scored.image_id),
            scored.score,
            scored.label,
            pixel_rel,
            tsv_field(&mask)
        );
        count += 1;
        Ok(())
    })?;
    let index_path = out_dir.join(INDEX_FILE);
    fs::write(&index_path, index).with_context(|| format!("writing {}", index_path.display()))?;
    Ok(ScoreSummary {
        images: count,
        index: index_path,
        seconds_per_image: busy / count.max(1) as f64,
        seconds: start.elapsed().as_secs_f64(),
    })
}
