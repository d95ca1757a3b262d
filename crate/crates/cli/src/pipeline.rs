//! Steps shared by the commands: manifest loading, embedding and scoring.

use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use lwinnn::maps::{image_score_knn, image_score_max, postprocess};
use lwinnn::{
    build_embedding, read_bundle, score_patches_batch, validate_manifest, Aggregation, DatasetManifest,
    EmbeddingBank, EmbeddingConfig, EmbeddingTensor, Label, ManifestEntry, PatchScoreMap, PixelAnomalyMap, Split,
};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::failure::{CmdResult, Failure};

/// Reads and validates a manifest. Every problem is reported at once.
pub fn load_manifest(path: &Path, split: Split) -> CmdResult<DatasetManifest> {
    if !path.is_file() {
        return Err(Failure::Manifest(format!("{} does not exist", path.display())));
    }
    let manifest =
        DatasetManifest::read(path, split).map_err(|e| Failure::Manifest(format!("{}: {e}", path.display())))?;
    let violations = validate_manifest(&manifest);
    if !violations.is_empty() {
        let lines: Vec<String> = violations.iter().map(|v| format!("  {v}")).collect();
        return Err(Failure::Manifest(format!("{}:\n{}", path.display(), lines.join("\n"))));
    }
    Ok(manifest)
}

/// Embeds manifest entries in parallel, preserving their order.
pub fn embed_entries(entries: &[ManifestEntry], cfg: &EmbeddingConfig) -> anyhow::Result<Vec<EmbeddingTensor>> {
    entries
        .par_iter()
        .map(|e| {
            let bundle = read_bundle(&e.bundle_path)?;
            build_embedding(&bundle, cfg).with_context(|| format!("embedding {}", e.bundle_path.display()))
        })
        .collect()
}

pub fn check_fingerprint(bank: &EmbeddingBank, cfg: &EmbeddingConfig) -> CmdResult<()> {
    let want = cfg.fingerprint();
    if bank.fingerprint() != want {
        return Err(Failure::Fingerprint(format!(
            "bank was built with `{}`, the run uses `{want}`",
            bank.fingerprint()
        )));
    }
    Ok(())
}

/// Everything produced for one test image.
pub struct ScoredEntry {
    pub index: usize,
    pub image_id: String,
    pub label: Label,
    pub score: f32,
    pub patch: PatchScoreMap,
    pub pixel: PixelAnomalyMap,
}

/// Scores test entries batch by batch and hands each result to `sink` in
/// manifest order. Returns the wall time spent outside `sink`.
pub fn score_entries(
    entries: &[ManifestEntry],
    bank: &EmbeddingBank,
    cfg: &RunConfig,
    mut sink: impl FnMut(&ManifestEntry, ScoredEntry) -> CmdResult<()>,
) -> CmdResult<f64> {
    let mut busy = 0.0;
    for (b, batch) in entries.chunks(cfg.batch_size).enumerate() {
        let start = Instant::now();
        let tests = embed_entries(batch, &cfg.embedding)?;
        for t in &tests {
            if t.dims() != bank.patch_dims() {
                return Err(Failure::Fingerprint(format!(
                    "test embedding {:?} has dims {:?} but the bank holds {:?}",
                    t.image_id,
                    t.dims(),
                    bank.patch_dims()
                )));
            }
        }
        let patches = score_patches_batch(&tests, bank, &cfg.search)?;
        let results: Vec<CmdResult<(f32, PixelAnomalyMap)>> = tests
            .par_iter()
            .zip(&patches)
            .map(|(t, p)| {
                let pixel = postprocess(p, t.original_height, t.original_width, cfg.blur_sigma)?;
                let score = match (cfg.aggregation, cfg.max_after_blur) {
                    (Aggregation::KnnImage, _) => image_score_knn(t, bank, cfg.knn_k)?.score,
                    (Aggregation::MaxPatch, false) => image_score_max(p).score,
                    (Aggregation::MaxPatch, true) => pixel.max(),
                };
                Ok((score, pixel))
            })
            .collect();
        busy += start.elapsed().as_secs_f64();
        for (i, ((entry, patch), result)) in batch.iter().zip(patches).zip(results).enumerate() {
            let (score, pixel) = result?;
            sink(
                entry,
                ScoredEntry {
                    index: b * cfg.batch_size + i,
                    image_id: patch.image_id.clone(),
                    label: entry.label,
                    score,
                    patch,
                    pixel,
                },
            )?;
        }
    }
    Ok(busy)
}

/// Keeps characters that are safe in file names and caps the length.
pub fn file_stem(index: usize, image_id: &str) -> String {
    let clean: String = image_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .take(80)
        .collect();
    format!("{index:05}_{clean}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stems_are_safe_and_ordered() {
        assert_eq!(file_stem(3, "bottle/000.png"), "00003_bottle_000.png");
        assert_eq!(file_stem(12, "a b\tc"), "00012_a_b_c");
        assert_eq!(file_stem(0, &"x".repeat(200)).len(), 86);
    }
}
