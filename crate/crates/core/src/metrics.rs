//! Image-level AUROC and pixel-level AUPRO.

use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::bundle::Label;
use crate::error::{Error, Result};
use crate::maps::PixelAnomalyMap;
use crate::mask::Mask;

pub const DEFAULT_FPR_CAP: f64 = 0.3;
pub const DEFAULT_BINS: usize = 200;

/// Area under the ROC curve, i.e. the Mann-Whitney U statistic over
/// `#pos * #neg` with ties counted as one half. `true` marks a positive.
pub fn auroc(scores: &[(f32, bool)]) -> Result<f64> {
    let pos = scores.iter().filter(|s| s.1).count();
    let neg = scores.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUROC needs both classes, got {pos} positive and {neg} negative"
        )));
    }
    let mut sorted: Vec<(f32, bool)> = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // rank sum of positives with mid-ranks for ties, doubled to stay integral
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        let twice_mid = (i + 1 + j) as u64; // ranks i+1..=j
        let group_pos = sorted[i..j].iter().filter(|s| s.1).count() as u64;
        twice_rank_sum += twice_mid * group_pos;
        i = j;
    }
    let pos = pos as u64;
    let twice_u = twice_rank_sum - pos * (pos + 1);
    Ok(twice_u as f64 / 2.0 / (pos as f64 * neg as f64))
}

/// ROC polyline `(fpr, tpr)` over descending distinct thresholds, starting
/// at `(0, 0)`.
pub fn roc_curve(scores: &[(f32, bool)]) -> Result<Vec<(f64, f64)>> {
    let pos = scores.iter().filter(|s| s.1).count();
    let neg = scores.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("ROC curve needs both classes".into()));
    }
    let mut sorted: Vec<(f32, bool)> = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(points)
}

/// Connected regions of a mask. `labels[i]` is 0 for background, otherwise
/// the 1-based region id; ids follow first-encounter in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Regions {
    pub labels: Vec<u32>,
    pub sizes: Vec<usize>,
}

impl Regions {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }
}

/// 8-connected component labelling.
pub fn connected_components(mask: &Mask) -> Regions {
    let (h, w) = (mask.height(), mask.width());
    let mut labels = vec![0u32; h * w];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if !mask.data()[start] || labels[start] != 0 {
            continue;
        }
        let id = sizes.len() as u32 + 1;
        let mut size = 0;
        labels[start] = id;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            size += 1;
            let (y, x) = (p / w, p % w);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let q = ny * w + nx;
                    if mask.data()[q] && labels[q] == 0 {
                        labels[q] = id;
                        queue.push_back(q);
                    }
                }
            }
        }
        sizes.push(size);
    }
    Regions { labels, sizes }
}

/// A pixel anomaly map together with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub map: PixelAnomalyMap,
    pub mask: Mask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProCurve {
    /// Area under the PRO curve up to the cap, divided by the cap.
    pub aupro: f64,
    /// `(fpr, pro)` points up to and including `fpr = cap`.
    pub points: Vec<(f64, f64)>,
}

struct PixelTable {
    /// `(score, global region index or u32::MAX for a negative pixel)`
    pixels: Vec<(f32, u32)>,
    region_sizes: Vec<usize>,
    negatives: usize,
}

const NEGATIVE: u32 = u32::MAX;

fn pixel_table(images: &[Segmentation]) -> Result<PixelTable> {
    let mut pixels = Vec::new();
    let mut region_sizes = Vec::new();
    let mut negatives = 0;
    for seg in images {
        let (m, k) = (&seg.map, &seg.mask);
        if (m.height(), m.width()) != (k.height(), k.width()) {
            return Err(Error::Shape(format!(
                "map {:?} is {}x{} but its mask is {}x{}",
                m.image_id,
                m.height(),
                m.width(),
                k.height(),
                k.width()
            )));
        }
        let regions = connected_components(k);
        let offset = region_sizes.len() as u32;
        region_sizes.extend_from_slice(&regions.sizes);
        for (&score, &label) in m.data().iter().zip(&regions.labels) {
            if label == 0 {
                negatives += 1;
                pixels.push((score, NEGATIVE));
            } else {
                pixels.push((score, offset + label - 1));
            }
        }
    }
    if region_sizes.is_empty() {
        return Err(Error::UndefinedMetric("AUPRO needs at least one ground-truth region".into()));
    }
    if negatives == 0 {
        return Err(Error::UndefinedMetric("AUPRO needs at least one negative pixel".into()));
    }
    Ok(PixelTable { pixels, region_sizes, negatives })
}

/// Trapezoid area of a polyline over `[0, cap]`, plus the points used,
/// with an interpolated point at exactly `fpr = cap`.
fn integrate_to_cap(curve: &[(f64, f64)], cap: f64) -> (f64, Vec<(f64, f64)>) {
    let mut area = 0.0;
    let mut kept = vec![curve[0]];
    for seg in curve.windows(2) {
        let ((x0, y0), (x1, y1)) = (seg[0], seg[1]);
        if x1 <= cap {
            area += (x1 - x0) * (y0 + y1) / 2.0;
            kept.push((x1, y1));
            if x1 == cap {
                break;
            }
        } else {
            let yc = y0 + (y1 - y0) * (cap - x0) / (x1 - x0);
            area += (cap - x0) * (y0 + yc) / 2.0;
            kept.push((cap, yc));
            break;
        }
    }
    (area, kept)
}

fn check_cap(cap: f64) -> Result<()> {
    if !(cap > 0.0 && cap <= 1.0) {
        return Err(Error::Config(format!("FPR cap must be in (0, 1], got {cap}")));
    }
    Ok(())
}

/// Exact AUPRO: every distinct pixel score across the set is a threshold.
pub fn aupro(images: &[Segmentation], fpr_cap: f64) -> Result<ProCurve> {
    check_cap(fpr_cap)?;
    let mut table = pixel_table(images)?;
    table.pixels.sort_by(|a, b| b.0.total_cmp(&a.0));
    let inv: Vec<f64> = table.region_sizes.iter().map(|&s| 1.0 / s as f64).collect();
    let regions = inv.len() as f64;
    let neg = table.negatives as f64;
    let mut curve = vec![(0.0, 0.0)];
    let (mut fp, mut pro_sum) = (0usize, 0.0f64);
    let px = &table.pixels;
    let mut i = 0;
    while i < px.len() {
        let t = px[i].0;
        while i < px.len() && px[i].0 == t {
            match px[i].1 {
                NEGATIVE => fp += 1,
                r => pro_sum += inv[r as usize],
            }
            i += 1;
        }
        curve.push((fp as f64 / neg, (pro_sum / regions).min(1.0)));
    }
    let (area, points) = integrate_to_cap(&curve, fpr_cap);
    Ok(ProCurve { aupro: area / fpr_cap, points })
}

/// AUPRO over `bins` equal-width score thresholds between the global min
/// and max pixel score. Cheaper than [`aupro`] on large sets.
pub fn aupro_binned(images: &[Segmentation], fpr_cap: f64, bins: usize) -> Result<ProCurve> {
    check_cap(fpr_cap)?;
    if bins == 0 {
        return Err(Error::Config("bin count must be positive".into()));
    }
    let table = pixel_table(images)?;
    let lo = table.pixels.iter().map(|p| p.0).fold(f32::INFINITY, f32::min) as f64;
    let hi = table.pixels.iter().map(|p| p.0).fold(f32::NEG_INFINITY, f32::max) as f64;
    let span = hi - lo;
    let bin_of = |s: f32| -> usize {
        if span <= 0.0 {
            0
        } else {
            (((s as f64 - lo) / span * bins as f64) as usize).min(bins - 1)
        }
    };
    let mut fp_hist = vec![0usize; bins];
    // per-bin, per-region positive counts, kept sparse
    let mut hits: Vec<std::collections::BTreeMap<u32, usize>> = vec![Default::default(); bins];
    for &(s, r) in &table.pixels {
        let b = bin_of(s);
        if r == NEGATIVE {
            fp_hist[b] += 1;
        } else {
            *hits[b].entry(r).or_default() += 1;
        }
    }
    let regions = table.region_sizes.len() as f64;
    let neg = table.negatives as f64;
    let mut curve = vec![(0.0, 0.0)];
    let (mut fp, mut pro_sum) = (0usize, 0.0f64);
    for b in (0..bins).rev() {
        fp += fp_hist[b];
        for (&r, &n) in &hits[b] {
            pro_sum += n as f64 / table.region_sizes[r as usize] as f64;
        }
        curve.push((fp as f64 / neg, (pro_sum / regions).min(1.0)));
    }
    let (area, points) = integrate_to_cap(&curve, fpr_cap);
    Ok(ProCurve { aupro: area / fpr_cap, points })
}

/// One scored test image.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredImage {
    pub image_id: String,
    pub score: f32,
    pub label: Label,
    /// Pixel map and mask; normal images may carry an all-background mask.
    pub segmentation: Option<Segmentation>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoredDataset {
    pub category: String,
    pub images: Vec<ScoredImage>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub fpr_cap: f64,
    /// `None` evaluates AUPRO exactly.
    pub bins: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { fpr_cap: DEFAULT_FPR_CAP, bins: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub category: String,
    pub auroc_image: f64,
    /// `None` when no image carries a segmentation.
    pub aupro: Option<f64>,
    pub fpr_cap: f64,
    pub roc_points: Vec<(f64, f64)>,
    pub pro_points: Vec<(f64, f64)>,
}

pub fn evaluate(dataset: &ScoredDataset, opts: &EvalOptions) -> Result<EvalReport> {
    let mut pairs = Vec::with_capacity(dataset.images.len());
    for img in &dataset.images {
        let positive = match img.label {
            Label::Normal => false,
            Label::Anomalous => true,
            Label::Unknown => {
                return Err(Error::UndefinedMetric(format!("image {:?} has no ground-truth label", img.image_id)))
            }
        };
        pairs.push((img.score, positive));
    }
    let auroc_image = auroc(&pairs)?;
    let roc_points = roc_curve(&pairs)?;

    let with_seg = dataset.images.iter().filter(|i| i.segmentation.is_some()).count();
    let (aupro_value, pro_points) = if with_seg == 0 {
        (None, Vec::new())
    } else {
        let mut segs = Vec::with_capacity(with_seg);
        for img in &dataset.images {
            match (&img.segmentation, img.label) {
                (Some(seg), Label::Anomalous) if seg.mask.positive_count() == 0 => {
                    return Err(Error::UndefinedMetric(format!(
                        "anomalous image {:?} has an empty mask",
                        img.image_id
                    )))
                }
                (Some(seg), _) => segs.push(seg.clone()),
                (None, Label::Anomalous) => {
                    return Err(Error::UndefinedMetric(format!(
                        "anomalous image {:?} has no mask",
                        img.image_id
                    )))
                }
                (None, _) => {}
            }
        }
        let curve = match opts.bins {
            None => aupro(&segs, opts.fpr_cap)?,
            Some(b) => aupro_binned(&segs, opts.fpr_cap, b)?,
        };
        (Some(curve.aupro), curve.points)
    };
    Ok(EvalReport {
        category: dataset.category.clone(),
        auroc_image,
        aupro: aupro_value,
        fpr_cap: opts.fpr_cap,
        roc_points,
        pro_points,
    })
}

fn fmt_points(points: &[(f64, f64)]) -> String {
    points.iter().map(|(x, y)| format!("{x}:{y}")).collect::<Vec<_>>().join(" ")
}

impl EvalReport {
    /// `key = value` lines; curve values are space-separated `fpr:value` pairs.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "category = {}", self.category);
        let _ = writeln!(s, "auroc_image = {}", self.auroc_image);
        match self.aupro {
            Some(v) => {
                let _ = writeln!(s, "aupro = {v}");
            }
            None => s.push_str("aupro = NA\n"),
        }
        let _ = writeln!(s, "fpr_cap = {}", self.fpr_cap);
        let _ = writeln!(s, "roc_points = {}", fmt_points(&self.roc_points));
        let _ = writeln!(s, "pro_points = {}", fmt_points(&self.pro_points));
        s
    }

    /// Comma-separated `curve,fpr,value` rows for plotting.
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("curve,fpr,value\n");
        for (x, y) in &self.roc_points {
            let _ = writeln!(s, "roc,{x},{y}");
        }
        for (x, y) in &self.pro_points {
            let _ = writeln!(s, "pro,{x},{y}");
        }
        s
    }
}
