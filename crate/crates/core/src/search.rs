//! Local-window nearest-neighbour patch scoring.
//!
//! Each test patch `(h, w)` is compared against every training embedding at
//! every grid position inside a centred `δ×δ` window, and its score is the
//! smallest Euclidean distance found. Positions outside the grid are skipped,
//! never padded with real values. `δ = 1` is the classic per-location search
//! and a window covering the whole grid is a global search.
//!
//! The engine iterates over window offsets and compares the test embedding
//! with a shifted slice of each training embedding, keeping a running minimum
//! of squared distances and taking one square root at the end. Training
//! members are processed in chunks whose transposed scratch copy fits the
//! configured memory budget; since `min` is exact, chunking never changes
//! the result.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::bank::EmbeddingBank;
use crate::embedding::EmbeddingTensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SearchMode {
    LocalWindow,
    PerLocation,
    Global,
}

impl fmt::Display for SearchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SearchMode::LocalWindow => "local_window",
            SearchMode::PerLocation => "per_location",
            SearchMode::Global => "global",
        })
    }
}

impl FromStr for SearchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local_window" => Ok(SearchMode::LocalWindow),
            "per_location" => Ok(SearchMode::PerLocation),
            "global" => Ok(SearchMode::Global),
            other => Err(Error::Config(format!("unknown search mode {other:?}"))),
        }
    }
}

pub const DEFAULT_WINDOW: usize = 7;
pub const DEFAULT_MEMORY_BUDGET: usize = 1 << 30;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchConfig {
    /// Window side δ; odd. Only used by [`SearchMode::LocalWindow`].
    pub window_size: usize,
    pub mode: SearchMode,
    /// Upper bound in bytes on the transposed training scratch buffer.
    pub memory_budget: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { window_size: DEFAULT_WINDOW, mode: SearchMode::LocalWindow, memory_budget: DEFAULT_MEMORY_BUDGET }
    }
}

impl SearchConfig {
    pub fn local(window_size: usize) -> Self {
        Self { window_size, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_size == 0 || self.window_size.is_multiple_of(2) {
            return Err(Error::Config(format!("window size must be odd and >= 1, got {}", self.window_size)));
        }
        Ok(())
    }

    fn radius(&self) -> usize {
        match self.mode {
            SearchMode::PerLocation => 0,
            _ => self.window_size / 2,
        }
    }
}

/// Per-patch anomaly scores on the `H1 x W1` embedding grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchScoreMap {
    pub image_id: String,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl PatchScoreMap {
    pub fn new(image_id: impl Into<String>, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width || data.is_empty() {
            return Err(Error::Shape(format!("score map {height}x{width} with {} values", data.len())));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Precondition(format!("score {} at index {i} is not a finite nonnegative value", data[i])));
        }
        Ok(Self { image_id: image_id.into(), height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, h: usize, w: usize) -> f32 {
        self.data[h * self.width + w]
    }
}

/// The grid coordinates the minimum for patch `(h, w)` ranges over, in
/// row-major order. Empty when `(h, w)` lies outside the grid.
pub fn effective_window(cfg: &SearchConfig, height: usize, width: usize, h: usize, w: usize) -> Vec<(usize, usize)> {
    if h >= height || w >= width {
        return Vec::new();
    }
    let (rows, cols) = match cfg.mode {
        SearchMode::Global => (0..height, 0..width),
        _ => {
            let r = cfg.radius();
            (h.saturating_sub(r)..(h + r + 1).min(height), w.saturating_sub(r)..(w + r + 1).min(width))
        }
    };
    rows.flat_map(|a| cols.clone().map(move |b| (a, b))).collect()
}

/// Squared Euclidean distance. Channel `k` accumulates into lane `k % 8`;
/// lanes are combined in a fixed tree, so the result does not depend on
/// scheduling.
#[inline]
pub fn squared_l2(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let mut tail = 0.0f32;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        let d = x - y;
        tail += d * d;
    }
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            let d = x[k] - y[k];
            acc[k] += d * d;
        }
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `(C, H, W)` to `(H, W, C)` so each patch vector is contiguous.
fn to_patch_major(src: &[f32], c: usize, h: usize, w: usize, dst: &mut [f32]) {
    let plane = h * w;
    for ch in 0..c {
        let s = &src[ch * plane..(ch + 1) * plane];
        for (p, &v) in s.iter().enumerate() {
            dst[p * c + ch] = v;
        }
    }
}

struct Grid {
    c: usize,
    h: usize,
    w: usize,
}

impl Grid {
    fn slice(&self) -> usize {
        self.c * self.h * self.w
    }
}

/// Updates the running minima of one test row against a chunk of
/// patch-major training members.
#[allow(clippy::too_many_arguments)]
fn scan_row(mode: SearchMode, radius: usize, grid: &Grid, test: &[f32], chunk: &[f32], members: usize, row: usize, out: &mut [f32]) {
    let Grid { c, h, w } = *grid;
    let slice = grid.slice();
    let test_row = &test[row * w * c..(row + 1) * w * c];
    let mut relax = |x: usize, train: &[f32]| {
        let d = squared_l2(&test_row[x * c..(x + 1) * c], train);
        if d < out[x] {
            out[x] = d;
        }
    };
    match mode {
        SearchMode::PerLocation => {
            for m in 0..members {
                let train_row = &chunk[m * slice + row * w * c..m * slice + (row + 1) * w * c];
                for x in 0..w {
                    relax(x, &train_row[x * c..(x + 1) * c]);
                }
            }
        }
        SearchMode::Global => {
            for m in 0..members {
                let member = &chunk[m * slice..(m + 1) * slice];
                for patch in member.chunks_exact(c) {
                    for x in 0..w {
                        relax(x, patch);
                    }
                }
            }
        }
        SearchMode::LocalWindow => {
            let r = radius as isize;
            for dh in -r..=r {
                let a = row as isize + dh;
                if a < 0 || a >= h as isize {
                    continue;
                }
                let a = a as usize;
                for dw in -r..=r {
                    let x_lo = (-dw).max(0) as usize;
                    let x_hi = (w as isize - dw.max(0)).max(0) as usize;
                    if x_lo >= x_hi {
                        continue;
                    }
                    for m in 0..members {
                        let train_row = &chunk[m * slice + a * w * c..m * slice + (a + 1) * w * c];
                        for x in x_lo..x_hi {
                            let b = (x as isize + dw) as usize;
                            relax(x, &train_row[b * c..(b + 1) * c]);
                        }
                    }
                }
            }
        }
    }
}

/// Scores a batch of test embeddings against the bank.
///
/// Results are bit-identical to scoring each image alone, and independent of
/// `memory_budget` and of the rayon thread count.
pub fn score_patches_batch(tests: &[EmbeddingTensor], bank: &EmbeddingBank, cfg: &SearchConfig) -> Result<Vec<PatchScoreMap>> {
    cfg.validate()?;
    if bank.is_empty() {
        return Err(Error::EmptyBank);
    }
    let (c, h, w) = bank.patch_dims();
    for t in tests {
        if t.dims() != (c, h, w) {
            return Err(Error::Shape(format!(
                "test embedding {:?} has dims {:?}, bank has {:?}",
                t.image_id,
                t.dims(),
                (c, h, w)
            )));
        }
    }
    let grid = Grid { c, h, w };
    let slice = grid.slice();
    let slice_bytes = slice * std::mem::size_of::<f32>();
    if cfg.memory_budget < slice_bytes {
        return Err(Error::Config(format!(
            "memory budget of {} bytes is below one ({c}, {h}, {w}) slice ({slice_bytes} bytes)",
            cfg.memory_budget
        )));
    }
    if tests.is_empty() {
        return Ok(Vec::new());
    }
    let per_chunk = (cfg.memory_budget / slice_bytes).clamp(1, bank.len());
    let radius = cfg.radius();

    let tests_pm: Vec<Vec<f32>> = tests
        .par_iter()
        .map(|t| {
            let mut buf = vec![0.0f32; slice];
            to_patch_major(t.data(), c, h, w, &mut buf);
            buf
        })
        .collect();
    let mut minima: Vec<Vec<f32>> = vec![vec![f32::INFINITY; h * w]; tests.len()];
    let mut scratch = vec![0.0f32; per_chunk * slice];

    let mut start = 0;
    while start < bank.len() {
        let members = per_chunk.min(bank.len() - start);
        scratch[..members * slice]
            .par_chunks_mut(slice)
            .enumerate()
            .for_each(|(i, dst)| to_patch_major(bank.member(start + i), c, h, w, dst));
        let chunk = &scratch[..members * slice];
        minima.par_iter_mut().zip(&tests_pm).for_each(|(running, test)| {
            running
                .par_chunks_mut(w)
                .enumerate()
                .for_each(|(row, out)| scan_row(cfg.mode, radius, &grid, test, chunk, members, row, out));
        });
        start += members;
    }

    tests
        .iter()
        .zip(minima)
        .map(|(t, mut m)| {
            for v in &mut m {
                *v = v.sqrt();
            }
            PatchScoreMap::new(t.image_id.clone(), h, w, m)
        })
        .collect()
}

pub fn score_patches(test: &EmbeddingTensor, bank: &EmbeddingBank, cfg: &SearchConfig) -> Result<PatchScoreMap> {
    let mut maps = score_patches_batch(std::slice::from_ref(test), bank, cfg)?;
    Ok(maps.pop().expect("one map per test"))
}
