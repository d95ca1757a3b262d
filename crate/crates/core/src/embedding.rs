//! Multi-layer patch embeddings: pool each selected layer, resize it to the
//! reference grid, and concatenate along channels.

use std::fmt;
use std::str::FromStr;

use crate::bundle::FeatureBundle;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Interpolation {
    Bilinear,
    Nearest,
}

impl fmt::Display for Interpolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Interpolation::Bilinear => "bilinear",
            Interpolation::Nearest => "nearest",
        })
    }
}

impl FromStr for Interpolation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bilinear" => Ok(Interpolation::Bilinear),
            "nearest" => Ok(Interpolation::Nearest),
            other => Err(Error::Config(format!("unknown interpolation mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EmbeddingConfig {
    pub pooling: bool,
    pub pool_kernel: usize,
    pub pool_stride: usize,
    pub interpolation: Interpolation,
    /// Bundle layers to use, in concatenation order. The first one sets the grid.
    pub layer_indices: Vec<usize>,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            pooling: true,
            pool_kernel: 3,
            pool_stride: 1,
            interpolation: Interpolation::Bilinear,
            layer_indices: vec![0, 1, 2],
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pool_kernel == 0 || self.pool_stride == 0 {
            return Err(Error::Config("pool_kernel and pool_stride must be >= 1".into()));
        }
        if self.layer_indices.is_empty() {
            return Err(Error::Config("at least one layer must be selected".into()));
        }
        Ok(())
    }

    /// Canonical text identifying every setting that changes embedding values.
    /// Banks store it so that scoring with a different config can be refused.
    pub fn fingerprint(&self) -> String {
        let layers: Vec<String> = self.layer_indices.iter().map(|i| i.to_string()).collect();
        format!(
            "pooling={};pool_kernel={};pool_stride={};interpolation={};layers={}",
            u8::from(self.pooling),
            self.pool_kernel,
            self.pool_stride,
            self.interpolation,
            layers.join(",")
        )
    }
}

/// One image's embedding, `(C, H1, W1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTensor {
    pub image_id: String,
    pub original_height: usize,
    pub original_width: usize,
    tensor: Tensor,
}

impl EmbeddingTensor {
    pub fn new(
        image_id: impl Into<String>,
        original_height: usize,
        original_width: usize,
        tensor: Tensor,
    ) -> Result<Self> {
        tensor.chw()?;
        Ok(Self { image_id: image_id.into(), original_height, original_width, tensor })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.tensor.chw().expect("checked at construction")
    }

    pub fn data(&self) -> &[f32] {
        self.tensor.data()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor {
        self.tensor
    }
}

/// Valid (unpadded) average pooling over each channel.
pub fn avg_pool(map: &Tensor, kernel: usize, stride: usize) -> Result<Tensor> {
    let (c, h, w) = map.chw()?;
    if kernel == 0 || stride == 0 {
        return Err(Error::Config("pool kernel and stride must be >= 1".into()));
    }
    if h < kernel || w < kernel {
        return Err(Error::Precondition(format!(
            "map of {h}x{w} is smaller than the {kernel}x{kernel} pooling kernel"
        )));
    }
    let oh = (h - kernel) / stride + 1;
    let ow = (w - kernel) / stride + 1;
    let area = (kernel * kernel) as f64;
    let src = map.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let (y0, x0) = (oy * stride, ox * stride);
                let mut sum = 0.0f64;
                for y in y0..y0 + kernel {
                    let row = &plane[y * w + x0..y * w + x0 + kernel];
                    sum += row.iter().map(|&v| v as f64).sum::<f64>();
                }
                out.push((sum / area) as f32);
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// Per-axis source taps for half-pixel-centre interpolation.
#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn bilinear_taps(src: usize, dst: usize) -> Vec<Tap> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (s.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            let frac = if lo == src - 1 { 0.0 } else { s - lo as f64 };
            Tap { lo, hi, frac }
        })
        .collect()
}

fn nearest_taps(src: usize, dst: usize) -> Vec<usize> {
    let scale = src as f64 / dst as f64;
    (0..dst).map(|d| (((d as f64 + 0.5) * scale).floor() as usize).min(src - 1)).collect()
}

/// Resizes one `h x w` plane into `out` (`oh x ow`).
///
/// Source coordinates use half-pixel centres, `src = (dst + 0.5) * in / out - 0.5`,
/// clamped to the edge. Nearest mode picks the cell containing `(dst + 0.5) * in / out`.
pub fn resize_plane(src: &[f32], h: usize, w: usize, oh: usize, ow: usize, mode: Interpolation, out: &mut [f32]) {
    assert_eq!(src.len(), h * w);
    assert_eq!(out.len(), oh * ow);
    if h == oh && w == ow {
        out.copy_from_slice(src);
        return;
    }
    match mode {
        Interpolation::Nearest => {
            let ys = nearest_taps(h, oh);
            let xs = nearest_taps(w, ow);
            for (oy, &sy) in ys.iter().enumerate() {
                for (ox, &sx) in xs.iter().enumerate() {
                    out[oy * ow + ox] = src[sy * w + sx];
                }
            }
        }
        Interpolation::Bilinear => {
            let ys = bilinear_taps(h, oh);
            let xs = bilinear_taps(w, ow);
            for (oy, ty) in ys.iter().enumerate() {
                let r0 = &src[ty.lo * w..(ty.lo + 1) * w];
                let r1 = &src[ty.hi * w..(ty.hi + 1) * w];
                for (ox, tx) in xs.iter().enumerate() {
                    let top = r0[tx.lo] as f64 * (1.0 - tx.frac) + r0[tx.hi] as f64 * tx.frac;
                    let bot = r1[tx.lo] as f64 * (1.0 - tx.frac) + r1[tx.hi] as f64 * tx.frac;
                    out[oy * ow + ox] = (top * (1.0 - ty.frac) + bot * ty.frac) as f32;
                }
            }
        }
    }
}

/// Resizes every channel of a `(C, h, w)` map to `target = (H1, W1)`.
pub fn resize_map(map: &Tensor, target: (usize, usize), mode: Interpolation) -> Result<Tensor> {
    let (c, h, w) = map.chw()?;
    let (oh, ow) = target;
    if oh == 0 || ow == 0 {
        return Err(Error::Precondition("resize target must be at least 1x1".into()));
    }
    if (h, w) == (oh, ow) {
        return Ok(map.clone());
    }
    let mut out = vec![0.0f32; c * oh * ow];
    for (src, dst) in map.data().chunks_exact(h * w).zip(out.chunks_exact_mut(oh * ow)) {
        resize_plane(src, h, w, oh, ow, mode, dst);
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// Pools (when enabled), resizes and channel-concatenates the selected layers.
pub fn build_embedding(bundle: &FeatureBundle, cfg: &EmbeddingConfig) -> Result<EmbeddingTensor> {
    cfg.validate()?;
    let layers = bundle.layers();
    if let Some(&bad) = cfg.layer_indices.iter().find(|&&i| i >= layers.len()) {
        return Err(Error::Config(format!(
            "layer index {bad} out of range: bundle {:?} has {} layers",
            bundle.image_id,
            layers.len()
        )));
    }
    let prepare = |i: usize| -> Result<Tensor> {
        if cfg.pooling {
            avg_pool(&layers[i], cfg.pool_kernel, cfg.pool_stride).map_err(|e| match e {
                Error::Precondition(m) => {
                    Error::Config(format!("bundle {:?} layer {i}: {m}", bundle.image_id))
                }
                other => other,
            })
        } else {
            Ok(layers[i].clone())
        }
    };
    let first = prepare(cfg.layer_indices[0])?;
    let (_, gh, gw) = first.chw()?;
    let mut parts = vec![first];
    for &i in &cfg.layer_indices[1..] {
        parts.push(resize_map(&prepare(i)?, (gh, gw), cfg.interpolation)?);
    }
    let channels: usize = parts.iter().map(|p| p.dims()[0]).sum();
    let mut data = Vec::with_capacity(channels * gh * gw);
    for p in parts {
        data.extend_from_slice(p.data());
    }
    EmbeddingTensor::new(
        bundle.image_id.clone(),
        bundle.original_height,
        bundle.original_width,
        Tensor::new(vec![channels, gh, gw], data)?,
    )
}
