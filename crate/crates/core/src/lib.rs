//! Local-window nearest-neighbour anomaly detection.
//!
//! The pipeline takes per-layer feature maps of an image (a [`FeatureBundle`]),
//! turns them into one multi-layer patch embedding, and scores every patch by
//! its distance to the closest training patch found inside a small spatial
//! window. Searching a window instead of a single location makes the scores
//! tolerant to small object translations without any coreset subsampling.
//!
//! ```
//! use lwinnn::{build_embedding, score_patches, EmbeddingBank, EmbeddingConfig, SearchConfig};
//! use lwinnn::synth::{generate, SyntheticSpec};
//!
//! let data = generate(&SyntheticSpec::default()).unwrap();
//! let cfg = EmbeddingConfig::default();
//! let train: Vec<_> = data.train.iter().map(|i| build_embedding(&i.bundle, &cfg).unwrap()).collect();
//! let bank = EmbeddingBank::from_embeddings("synthetic", cfg.fingerprint(), &train).unwrap();
//! let test = build_embedding(&data.test[0].bundle, &cfg).unwrap();
//! let scores = score_patches(&test, &bank, &SearchConfig::local(5)).unwrap();
//! assert_eq!((scores.height(), scores.width()), (14, 14));
//! ```
//!
//! Modules:
//! - [`tensor`], [`bundle`], [`manifest`], [`mask`]: data containers and file formats.
//! - [`embedding`]: pooling, resizing and concatenation of feature maps.
//! - [`bank`], [`search`]: the training bank and the window search engine.
//! - [`maps`]: pixel anomaly maps and image scores.
//! - [`metrics`]: AUROC and AUPRO.
//! - [`synth`]: seeded synthetic datasets.

mod binio;

pub mod bank;
pub mod bundle;
pub mod embedding;
pub mod error;
pub mod manifest;
pub mod maps;
pub mod mask;
pub mod metrics;
pub mod search;
pub mod synth;
pub mod tensor;

pub use bank::EmbeddingBank;
pub use bundle::{read_bundle, read_bundle_header, write_bundle, FeatureBundle, Label};
pub use embedding::{avg_pool, build_embedding, resize_map, EmbeddingConfig, EmbeddingTensor, Interpolation};
pub use error::{Error, Result};
pub use manifest::{validate_manifest, DatasetManifest, ManifestEntry, Split, Violation};
pub use maps::{
    gaussian_blur, image_score_knn, image_score_max, postprocess, upsample_scores, Aggregation, ImageScore,
    PixelAnomalyMap,
};
pub use mask::{read_mask, write_mask, Mask};
pub use metrics::{aupro, auroc, connected_components, evaluate, EvalOptions, EvalReport, ScoredDataset};
pub use search::{effective_window, score_patches, score_patches_batch, PatchScoreMap, SearchConfig, SearchMode};
pub use tensor::Tensor;
