//! The guide under `book/` is plain mdbook markdown. Each chapter is pulled
//! in as the docs of an empty module so that `cargo test` compiles and runs
//! every listing.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/embeddings.md")]
pub mod embeddings {}
#[doc = include_str!("../../../book/src/window-search.md")]
pub mod window_search {}
#[doc = include_str!("../../../book/src/post-processing.md")]
pub mod post_processing {}
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
#[doc = include_str!("../../../book/src/file-formats.md")]
pub mod file_formats {}
