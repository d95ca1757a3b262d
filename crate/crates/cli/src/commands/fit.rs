use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use lwinnn::{EmbeddingBank, Split};

use crate::config::RunConfig;
use crate::failure::{CmdResult, Failure};
use crate::pipeline::{embed_entries, load_manifest};

#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub category: String,
    pub n_train: usize,
    /// `(C, H1, W1)`.
    pub dims: (usize, usize, usize),
    pub seconds: f64,
}

/// Builds the training bank from a train manifest and writes it to `bank_path`.
///
/// An existing file is only replaced when it is a bank of the same category
/// and fingerprint, unless `force` is set.
pub fn fit(cfg: &RunConfig, train_manifest: &Path, bank_path: &Path, force: bool) -> CmdResult<FitSummary> {
    let start = Instant::now();
    let mut manifest = load_manifest(train_manifest, Split::Train)?;
    if manifest.split != Split::Train {
        return Err(Failure::Manifest(format!("{} is not a train split", train_manifest.display())));
    }
    if let Some(limit) = cfg.max_train_samples {
        manifest.entries.truncate(limit);
    }
    let fingerprint = cfg.embedding.fingerprint();
    if bank_path.exists() && !force {
        match EmbeddingBank::read(bank_path) {
            Ok(old) if old.fingerprint() == fingerprint && old.category() == manifest.category => {}
            Ok(old) => {
                return Err(Failure::Overwrite(format!(
                    "{} holds category {:?} with `{}`; pass --force to replace it",
                    bank_path.display(),
                    old.category(),
                    old.fingerprint()
                )))
            }
            Err(e) => {
                return Err(Failure::Overwrite(format!(
                    "{} exists and is not a readable bank ({e}); pass --force to replace it",
                    bank_path.display()
                )))
            }
        }
    }
    let embeddings = embed_entries(&manifest.entries, &cfg.embedding)?;
    let bank = EmbeddingBank::from_embeddings(manifest.category.clone(), fingerprint, &embeddings)?;
    if let Some(parent) = bank_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    bank.write(bank_path)?;
    Ok(FitSummary {
        category: manifest.category,
        n_train: bank.len(),
        dims: bank.patch_dims(),
        seconds: start.elapsed().as_secs_f64(),
    })
}
