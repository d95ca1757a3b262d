//! Line-oriented dataset manifests.
//!
//! One entry per line, tab separated: `bundle_path<TAB>label[<TAB>mask_path]`.
//! Lines starting with `#` are comments. Two comment directives are
//! recognised: `# category: <name>` and `# split: train|test`. Relative paths
//! are resolved against the manifest's directory.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::bundle::{read_bundle_header, Label};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!("unknown split {other:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub bundle_path: PathBuf,
    pub label: Label,
    pub mask_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub split: Split,
    pub category: String,
    pub entries: Vec<ManifestEntry>,
}

/// A problem found by [`validate_manifest`]. `entries` holds the indices of
/// the entries involved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub entries: Vec<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.entries.is_empty() {
            f.write_str(&self.message)
        } else {
            let ids: Vec<String> = self.entries.iter().map(|e| format!("#{e}")).collect();
            write!(f, "entries {}: {}", ids.join(", "), self.message)
        }
    }
}

impl DatasetManifest {
    /// Parses manifest text. `default_split` applies unless a `# split:`
    /// directive is present.
    pub fn parse(text: &str, base_dir: &Path, default_split: Split) -> Result<Self> {
        let mut split = default_split;
        let mut category = String::from("default");
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some((key, value)) = comment.split_once(':') {
                    match key.trim() {
                        "category" => category = value.trim().to_string(),
                        "split" => split = value.trim().parse()?,
                        _ => {}
                    }
                }
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 2 || fields.len() > 3 || fields[0].is_empty() {
                return Err(Error::Format(format!(
                    "manifest line {}: expected `bundle_path<TAB>label[<TAB>mask_path]`",
                    lineno + 1
                )));
            }
            let label: Label = fields[1].trim().parse()?;
            if label == Label::Unknown {
                return Err(Error::Format(format!(
                    "manifest line {}: label must be normal or anomalous",
                    lineno + 1
                )));
            }
            let mask_path = fields.get(2).map(|s| s.trim()).filter(|s| !s.is_empty()).map(|s| base_dir.join(s));
            entries.push(ManifestEntry { bundle_path: base_dir.join(fields[0]), label, mask_path });
        }
        Ok(Self { split, category, entries })
    }

    pub fn read(path: impl AsRef<Path>, default_split: Split) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, default_split)
    }

    /// Renders the manifest, writing paths relative to `base_dir` where possible.
    pub fn to_text(&self, base_dir: &Path) -> String {
        let rel = |p: &Path| p.strip_prefix(base_dir).unwrap_or(p).display().to_string();
        let mut out = format!("# category: {}\n# split: {}\n", self.category, self.split);
        for e in &self.entries {
            out.push_str(&rel(&e.bundle_path));
            out.push('\t');
            out.push_str(e.label.as_str());
            if let Some(m) = &e.mask_path {
                out.push('\t');
                out.push_str(&rel(m));
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new("."));
        crate::binio::atomic_write(path, self.to_text(base).as_bytes())
    }
}

/// Checks paths, split/label consistency and per-layer channel agreement.
/// Never fails; every problem is returned as a [`Violation`].
pub fn validate_manifest(manifest: &DatasetManifest) -> Vec<Violation> {
    let mut out = Vec::new();
    if manifest.entries.is_empty() {
        out.push(Violation { entries: vec![], message: "manifest has no entries".into() });
        return out;
    }
    let mut reference: Option<(usize, Vec<usize>)> = None;
    for (i, entry) in manifest.entries.iter().enumerate() {
        if manifest.split == Split::Train && entry.label != Label::Normal {
            out.push(Violation { entries: vec![i], message: "train split must be normal-only".into() });
        }
        if let Some(mask) = &entry.mask_path {
            if !mask.is_file() {
                out.push(Violation {
                    entries: vec![i],
                    message: format!("mask {} does not resolve", mask.display()),
                });
            }
        }
        if !entry.bundle_path.is_file() {
            out.push(Violation {
                entries: vec![i],
                message: format!("bundle {} does not resolve", entry.bundle_path.display()),
            });
            continue;
        }
        let header = match read_bundle_header(&entry.bundle_path) {
            Ok(h) => h,
            Err(e) => {
                out.push(Violation {
                    entries: vec![i],
                    message: format!("bundle {} is unreadable: {e}", entry.bundle_path.display()),
                });
                continue;
            }
        };
        if header.label != Label::Unknown && header.label != entry.label {
            out.push(Violation {
                entries: vec![i],
                message: format!("manifest says {} but bundle says {}", entry.label, header.label),
            });
        }
        let channels: Vec<usize> = header.layer_dims.iter().map(|d| d.0).collect();
        match &reference {
            None => reference = Some((i, channels)),
            Some((j, ref_channels)) => {
                if *ref_channels != channels {
                    out.push(Violation {
                        entries: vec![*j, i],
                        message: format!(
                            "per-layer channel counts differ: {:?} vs {:?}",
                            ref_channels, channels
                        ),
                    });
                }
            }
        }
    }
    out
}
