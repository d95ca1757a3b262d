//! Pixel anomaly maps and image-level scores.
//!
//! A patch score map is upsampled bilinearly to the original image size and
//! smoothed with a Gaussian. The image score is, by default, the largest
//! patch score taken before any post-processing.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use image::{Rgb, RgbImage};
use rayon::prelude::*;

use crate::bank::EmbeddingBank;
use crate::binio::{self, LeWriter, FORMAT_VERSION};
use crate::embedding::{resize_plane, EmbeddingTensor, Interpolation};
use crate::error::{Error, Result};
use crate::search::PatchScoreMap;

pub const MAP_MAGIC: &[u8; 4] = b"LWNM";
pub const DEFAULT_BLUR_SIGMA: f64 = 4.0;
pub const DEFAULT_KNN_K: usize = 5;

/// Full-resolution anomaly map, `H0 x W0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelAnomalyMap {
    pub image_id: String,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl PixelAnomalyMap {
    pub fn new(image_id: impl Into<String>, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::Shape(format!("pixel map {height}x{width} with {} values", data.len())));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Precondition(format!(
                "pixel value {} at index {i} is not a finite nonnegative value",
                data[i]
            )));
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

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_map_file(path.as_ref(), &self.image_id, self.height, self.width, &self.data)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let (id, h, w, data) = read_map_file(path.as_ref())?;
        Self::new(id, h, w, data)
    }
}

impl PatchScoreMap {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_map_file(path.as_ref(), &self.image_id, self.height(), self.width(), self.data())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let (id, h, w, data) = read_map_file(path.as_ref())?;
        Self::new(id, h, w, data)
    }
}

fn write_map_file(path: &Path, id: &str, h: usize, w: usize, data: &[f32]) -> Result<()> {
    let mut out = LeWriter::default();
    out.bytes(MAP_MAGIC);
    out.u32(FORMAT_VERSION);
    out.short_str(id, "image id")?;
    out.dim(h, "height")?;
    out.dim(w, "width")?;
    binio::atomic_write_parts(path, &out.into_inner(), data)
}

fn read_map_file(path: &Path) -> Result<(String, usize, usize, Vec<f32>)> {
    let mut r = binio::open(path)?;
    r.magic(MAP_MAGIC)?;
    let id = r.short_str("image id")?;
    let h = r.dim("height")?;
    let w = r.dim("width")?;
    let data = r.f32s(h * w, "map payload")?;
    r.expect_end()?;
    Ok((id, h, w, data))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Aggregation {
    /// Largest patch score.
    MaxPatch,
    /// Mean whole-embedding distance to the K closest training images.
    KnnImage,
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::MaxPatch => "max_patch",
            Aggregation::KnnImage => "knn_image",
        })
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max_patch" => Ok(Aggregation::MaxPatch),
            "knn_image" => Ok(Aggregation::KnnImage),
            other => Err(Error::Config(format!("unknown aggregation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageScore {
    pub image_id: String,
    pub score: f32,
    pub aggregation: Aggregation,
}

pub fn image_score_max(map: &PatchScoreMap) -> ImageScore {
    ImageScore {
        image_id: map.image_id.clone(),
        score: map.data().iter().copied().fold(0.0, f32::max),
        aggregation: Aggregation::MaxPatch,
    }
}

/// Mean Euclidean distance between the flattened test embedding and its `k`
/// nearest training embeddings.
pub fn image_score_knn(test: &EmbeddingTensor, bank: &EmbeddingBank, k: usize) -> Result<ImageScore> {
    if k == 0 || k > bank.len() {
        return Err(Error::Config(format!("K must be in 1..={}, got {k}", bank.len())));
    }
    if test.dims() != bank.patch_dims() {
        return Err(Error::Shape(format!("test dims {:?} vs bank {:?}", test.dims(), bank.patch_dims())));
    }
    let mut dists: Vec<f64> = (0..bank.len())
        .into_par_iter()
        .map(|m| {
            test.data()
                .iter()
                .zip(bank.member(m))
                .map(|(&a, &b)| {
                    let d = a as f64 - b as f64;
                    d * d
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    dists.sort_by(f64::total_cmp);
    let mean = dists[..k].iter().sum::<f64>() / k as f64;
    Ok(ImageScore { image_id: test.image_id.clone(), score: mean as f32, aggregation: Aggregation::KnnImage })
}

/// Bilinear upsampling with the same half-pixel convention as feature resizing.
pub fn upsample_scores(map: &PatchScoreMap, height: usize, width: usize) -> Result<PixelAnomalyMap> {
    if height == 0 || width == 0 {
        return Err(Error::Precondition("target size must be at least 1x1".into()));
    }
    let mut out = vec![0.0f32; height * width];
    resize_plane(map.data(), map.height(), map.width(), height, width, Interpolation::Bilinear, &mut out);
    PixelAnomalyMap::new(map.image_id.clone(), height, width, out)
}

/// Normalised 1-D Gaussian taps for offsets `-r..=r`, `r = ceil(4 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-radius..=radius).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`).
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m >= n {
        2 * n - 1 - m
    } else {
        m
    }
}

/// Separable Gaussian blur with reflected borders. The kernel is normalised,
/// so constants are preserved and the map's mean is unchanged.
pub fn gaussian_blur(map: &PixelAnomalyMap, sigma: f64) -> Result<PixelAnomalyMap> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Precondition(format!("sigma must be positive, got {sigma}")));
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let (h, w) = (map.height, map.width);
    let src = &map.data;

    let mut horizontal = vec![0.0f64; h * w];
    horizontal.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let s = &src[y * w..(y + 1) * w];
        for (x, out) in row.iter_mut().enumerate() {
            *out = kernel
                .iter()
                .enumerate()
                .map(|(k, &wt)| wt * s[reflect(x as isize + k as isize - r, w)] as f64)
                .sum();
        }
    });
    let mut out = vec![0.0f32; h * w];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let v: f64 = kernel
                .iter()
                .enumerate()
                .map(|(k, &wt)| wt * horizontal[reflect(y as isize + k as isize - r, h) * w + x])
                .sum();
            *o = v.max(0.0) as f32;
        }
    });
    PixelAnomalyMap::new(map.image_id.clone(), h, w, out)
}

/// Upsample to `H0 x W0`, then blur.
pub fn postprocess(map: &PatchScoreMap, height: usize, width: usize, sigma: f64) -> Result<PixelAnomalyMap> {
    gaussian_blur(&upsample_scores(map, height, width)?, sigma)
}

/// Blue-cyan-yellow-red ramp for `t` in `[0, 1]`.
fn jet(t: f32) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let ch = |centre: f32| ((1.5 - (4.0 * t - centre).abs()).clamp(0.0, 1.0) * 255.0).round() as u8;
    [ch(3.0), ch(2.0), ch(1.0)]
}

/// Min-max normalised colour rendering of a map, optionally alpha-blended over
/// the original image. For visual inspection only.
pub fn render_heatmap(map: &PixelAnomalyMap, background: Option<&RgbImage>, alpha: f32) -> Result<RgbImage> {
    if let Some(bg) = background {
        if (bg.height() as usize, bg.width() as usize) != (map.height, map.width) {
            return Err(Error::Shape(format!(
                "image is {}x{} but the map is {}x{}",
                bg.height(),
                bg.width(),
                map.height,
                map.width
            )));
        }
    }
    let lo = map.data.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = map.data.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = hi - lo;
    Ok(RgbImage::from_fn(map.width as u32, map.height as u32, |x, y| {
        let v = map.get(y as usize, x as usize);
        let t = if span > 0.0 { (v - lo) / span } else { 0.0 };
        let c = jet(t);
        match background {
            None => Rgb(c),
            Some(bg) => {
                let b = bg.get_pixel(x, y).0;
                let mix = |i: usize| (alpha * c[i] as f32 + (1.0 - alpha) * b[i] as f32).round() as u8;
                Rgb([mix(0), mix(1), mix(2)])
            }
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn patch(h: usize, w: usize, data: Vec<f32>) -> PatchScoreMap {
        PatchScoreMap::new("m", h, w, data).unwrap()
    }

    fn random_pixels(rng: &mut ChaCha8Rng, h: usize, w: usize) -> PixelAnomalyMap {
        PixelAnomalyMap::new("r", h, w, (0..h * w).map(|_| rng.gen_range(0.0f32..3.0)).collect()).unwrap()
    }

    #[test]
    fn max_score() {
        assert_eq!(image_score_max(&patch(3, 3, vec![0.0; 9])).score, 0.0);
        let mut d = vec![0.0; 9];
        d[4] = 7.5;
        assert_eq!(image_score_max(&patch(3, 3, d)).score, 7.5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d: Vec<f32> = (0..62 * 62).map(|_| rng.gen_range(0.0f32..10.0)).collect();
        let mut best = d[0];
        for &v in &d {
            if v > best {
                best = v;
            }
        }
        assert_eq!(image_score_max(&patch(62, 62, d)).score, best);
    }

    #[test]
    fn knn_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let embs: Vec<EmbeddingTensor> = (0..4)
            .map(|i| {
                let d = (0..2 * 3 * 3).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
                EmbeddingTensor::new(format!("e{i}"), 12, 12, Tensor::new(vec![2, 3, 3], d).unwrap()).unwrap()
            })
            .collect();
        let bank = EmbeddingBank::from_embeddings("c", "f", &embs).unwrap();
        assert_eq!(image_score_knn(&embs[2], &bank, 1).unwrap().score, 0.0);
        let test = {
            let d = (0..18).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            EmbeddingTensor::new("q", 12, 12, Tensor::new(vec![2, 3, 3], d).unwrap()).unwrap()
        };
        let mut all: Vec<f64> = embs
            .iter()
            .map(|e| e.data().iter().zip(test.data()).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>().sqrt())
            .collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let k2 = image_score_knn(&test, &bank, 2).unwrap().score as f64;
        assert!((k2 - (all[0] + all[1]) / 2.0).abs() < 1e-5);
        let k4 = image_score_knn(&test, &bank, 4).unwrap().score as f64;
        assert!((k4 - all.iter().sum::<f64>() / 4.0).abs() < 1e-5);
        assert!(image_score_knn(&test, &bank, 0).is_err());
        assert!(image_score_knn(&test, &bank, 5).is_err());
    }

    #[test]
    fn upsample_identity_and_constant() {
        let p = patch(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(upsample_scores(&p, 2, 3).unwrap().data(), p.data());
        let c = patch(3, 3, vec![1.25; 9]);
        assert!(upsample_scores(&c, 17, 11).unwrap().data().iter().all(|&v| v == 1.25));
    }

    #[test]
    fn upsample_two_by_two_formula() {
        let vals = [1.0f32, 3.0, 2.0, 7.0];
        let p = patch(2, 2, vals.to_vec());
        let up = upsample_scores(&p, 8, 8).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let sy = ((y as f64 + 0.5) * 0.25 - 0.5).clamp(0.0, 1.0);
                let sx = ((x as f64 + 0.5) * 0.25 - 0.5).clamp(0.0, 1.0);
                let want = vals[0] as f64 * (1.0 - sy) * (1.0 - sx)
                    + vals[1] as f64 * (1.0 - sy) * sx
                    + vals[2] as f64 * sy * (1.0 - sx)
                    + vals[3] as f64 * sy * sx;
                assert!((up.get(y, x) as f64 - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn kernel_shape() {
        let k = gaussian_kernel(4.0);
        assert_eq!(k.len(), 33);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(k[16] > k[15] && k[15] == k[17]);
    }

    #[test]
    fn blur_constant_is_fixed_point() {
        let m = PixelAnomalyMap::new("c", 20, 13, vec![0.75; 260]).unwrap();
        let b = gaussian_blur(&m, 4.0).unwrap();
        assert!(b.data().iter().all(|&v| (v - 0.75).abs() < 1e-7));
    }

    #[test]
    fn blur_impulse_matches_kernel() {
        let n = 41;
        let mut d = vec![0.0f32; n * n];
        d[20 * n + 20] = 1.0;
        let m = PixelAnomalyMap::new("i", n, n, d).unwrap();
        let b = gaussian_blur(&m, 4.0).unwrap();
        let sigma = 4.0f64;
        let g = |i: i32| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp();
        let z: f64 = (-16..=16).map(g).sum();
        for y in 0..n {
            for x in 0..n {
                let (dy, dx) = (y as i32 - 20, x as i32 - 20);
                let want = if dy.abs() <= 16 && dx.abs() <= 16 { g(dy) * g(dx) / (z * z) } else { 0.0 };
                assert!((b.get(y, x) as f64 - want).abs() < 1e-6);
            }
        }
        assert!((b.get(20, 20) as f64 - 1.0 / (z * z)).abs() < 1e-7);
    }

    #[test]
    fn blur_preserves_mean_and_bounds_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (h, w, sigma) in [(30, 25, 4.0), (7, 9, 4.0), (16, 16, 1.5)] {
            let m = random_pixels(&mut rng, h, w);
            let b = gaussian_blur(&m, sigma).unwrap();
            let mean = |v: &[f32]| v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
            assert!((mean(m.data()) - mean(b.data())).abs() < 1e-5);
            assert!(b.max() <= m.max());
        }
    }

    #[test]
    fn blur_rejects_bad_sigma() {
        let m = PixelAnomalyMap::new("c", 2, 2, vec![0.0; 4]).unwrap();
        assert!(gaussian_blur(&m, 0.0).is_err());
        assert!(gaussian_blur(&m, f64::NAN).is_err());
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-4..8).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0]);
        assert_eq!(reflect(-1, 1), 0);
        assert_eq!(reflect(5, 1), 0);
    }

    #[test]
    fn map_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.lwnm");
        let m = PixelAnomalyMap::new("img/1", 3, 2, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.5]).unwrap();
        m.write(&p).unwrap();
        assert_eq!(PixelAnomalyMap::read(&p).unwrap(), m);
        let pm = patch(2, 2, vec![0.5; 4]);
        pm.write(&p).unwrap();
        assert_eq!(PatchScoreMap::read(&p).unwrap(), pm);
        assert_eq!(&std::fs::read(&p).unwrap()[..4], b"LWNM");
    }

    #[test]
    fn heatmaps() {
        let flat = PixelAnomalyMap::new("c", 4, 5, vec![2.0; 20]).unwrap();
        let img = render_heatmap(&flat, None, 0.5).unwrap();
        assert_eq!(img.dimensions(), (5, 4));
        let first = *img.get_pixel(0, 0);
        assert!(img.pixels().all(|p| *p == first));

        let mut d = vec![0.0f32; 25];
        d[12] = 1.0;
        let spike = PixelAnomalyMap::new("s", 5, 5, d).unwrap();
        let img = render_heatmap(&spike, None, 0.5).unwrap();
        let hot = *img.get_pixel(2, 2);
        assert_eq!(img.pixels().filter(|p| **p == hot).count(), 1);

        let bg = RgbImage::new(4, 4);
        assert!(render_heatmap(&spike, Some(&bg), 0.5).is_err());
        let bg = RgbImage::from_pixel(5, 5, Rgb([10, 10, 10]));
        assert!(render_heatmap(&spike, Some(&bg), 0.5).is_ok());
    }
}
