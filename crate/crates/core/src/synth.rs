//! Seeded synthetic datasets for demos, tests and benchmarks.
//!
//! Every image shows the same textured square object on a flat background.
//! Training images place it at the centre; test images translate it by up
//! to `max_shift` grid cells per axis, and anomalous ones additionally carry
//! a perturbed block of cells whose footprint becomes the ground-truth mask.
//! Deeper layers are 2x2 average pools of the previous layer with the channel
//! count doubled by appending `1 - x`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bundle::{write_bundle, FeatureBundle, Label};
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, ManifestEntry, Split};
use crate::mask::{write_mask, Mask};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub category: String,
    /// Channels of the first layer.
    pub channels: usize,
    /// Side of the first layer's square grid.
    pub grid: usize,
    pub layers: usize,
    /// Image pixels per first-layer cell.
    pub pixel_stride: usize,
    pub object_size: usize,
    pub max_shift: usize,
    /// Shift every test object by exactly `±max_shift` on both axes.
    pub exact_shift: bool,
    pub train: usize,
    pub test_normal: usize,
    pub test_anomalous: usize,
    pub defect_size: usize,
    pub defect_strength: f32,
    /// Uniform per-value noise amplitude added to every image.
    pub noise: f32,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            category: "synthetic".into(),
            channels: 8,
            grid: 16,
            layers: 3,
            pixel_stride: 4,
            object_size: 8,
            max_shift: 2,
            exact_shift: false,
            train: 6,
            test_normal: 6,
            test_anomalous: 6,
            defect_size: 2,
            defect_strength: 1.0,
            noise: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticImage {
    pub bundle: FeatureBundle,
    pub mask: Option<Mask>,
    /// Object translation in first-layer cells.
    pub shift: (isize, isize),
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub category: String,
    pub train: Vec<SyntheticImage>,
    pub test: Vec<SyntheticImage>,
}

struct Scene<'a> {
    spec: &'a SyntheticSpec,
    background: Vec<f32>,
    texture: Vec<f32>,
}

impl Scene<'_> {
    /// First-layer `(C, grid, grid)` data with the object shifted by `shift`.
    fn render(&self, shift: (isize, isize), rng: &mut ChaCha8Rng) -> Vec<f32> {
        let s = self.spec;
        let (c, g, o) = (s.channels, s.grid, s.object_size);
        let origin = (g - o) as isize / 2;
        let mut out = vec![0.0f32; c * g * g];
        for y in 0..g {
            for x in 0..g {
                let oy = y as isize - origin - shift.0;
                let ox = x as isize - origin - shift.1;
                let inside = oy >= 0 && ox >= 0 && (oy as usize) < o && (ox as usize) < o;
                for ch in 0..c {
                    let v = if inside {
                        self.texture[(oy as usize * o + ox as usize) * c + ch]
                    } else {
                        self.background[ch]
                    };
                    let n = if s.noise > 0.0 { rng.gen_range(-s.noise..s.noise) } else { 0.0 };
                    out[ch * g * g + y * g + x] = v + n;
                }
            }
        }
        out
    }
}

fn pyramid(first: Vec<f32>, spec: &SyntheticSpec) -> Result<Vec<Tensor>> {
    let mut layers = vec![Tensor::new(vec![spec.channels, spec.grid, spec.grid], first)?];
    for _ in 1..spec.layers {
        let prev = layers.last().expect("non-empty");
        let (c, h, w) = prev.chw()?;
        let (nh, nw) = (h / 2, w / 2);
        let mut next = vec![0.0f32; 2 * c * nh * nw];
        for ch in 0..c {
            let p = &prev.data()[ch * h * w..(ch + 1) * h * w];
            for y in 0..nh {
                for x in 0..nw {
                    let v = (p[2 * y * w + 2 * x] + p[2 * y * w + 2 * x + 1] + p[(2 * y + 1) * w + 2 * x] + p[(2 * y + 1) * w + 2 * x + 1])
                        / 4.0;
                    next[ch * nh * nw + y * nw + x] = v;
                    next[(c + ch) * nh * nw + y * nw + x] = 1.0 - v;
                }
            }
        }
        layers.push(Tensor::new(vec![2 * c, nh, nw], next)?);
    }
    Ok(layers)
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    if spec.channels == 0 || spec.layers == 0 || spec.pixel_stride == 0 || spec.object_size == 0 {
        return Err(Error::Config("synthetic spec sizes must be positive".into()));
    }
    if !spec.grid.is_multiple_of(1 << (spec.layers - 1)) || spec.grid >> (spec.layers - 1) == 0 {
        return Err(Error::Config(format!("grid {} cannot be halved {} times", spec.grid, spec.layers - 1)));
    }
    if spec.object_size + 2 * spec.max_shift > spec.grid {
        return Err(Error::Config("shifted object does not fit in the grid".into()));
    }
    if spec.defect_size == 0 || spec.defect_size > spec.object_size {
        return Err(Error::Config("defect must fit inside the object".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let c = spec.channels;
    let scene = Scene {
        spec,
        background: (0..c).map(|_| rng.gen_range(0.0..1.0)).collect(),
        texture: (0..spec.object_size * spec.object_size * c).map(|_| rng.gen_range(0.0..1.0)).collect(),
    };
    let h0 = spec.grid * spec.pixel_stride;
    let max = spec.max_shift as isize;
    let make = |id: String, label: Label, data: Vec<f32>| -> Result<FeatureBundle> {
        FeatureBundle::new(id, h0, h0, label, pyramid(data, spec)?)
    };

    let mut train = Vec::with_capacity(spec.train);
    for i in 0..spec.train {
        let data = scene.render((0, 0), &mut rng);
        train.push(SyntheticImage { bundle: make(format!("train_{i:03}"), Label::Normal, data)?, mask: None, shift: (0, 0) });
    }

    let mut test = Vec::with_capacity(spec.test_normal + spec.test_anomalous);
    for i in 0..spec.test_normal + spec.test_anomalous {
        let anomalous = i >= spec.test_normal;
        let shift = if spec.exact_shift {
            (if rng.gen_bool(0.5) { max } else { -max }, if rng.gen_bool(0.5) { max } else { -max })
        } else {
            (rng.gen_range(-max..=max), rng.gen_range(-max..=max))
        };
        let mut data = scene.render(shift, &mut rng);
        let (g, o, d) = (spec.grid, spec.object_size, spec.defect_size);
        if !anomalous {
            let id = format!("test_{i:03}_good");
            test.push(SyntheticImage { bundle: make(id, Label::Normal, data)?, mask: None, shift });
            continue;
        }
        let origin = (g - o) as isize / 2;
        let dy = (origin + shift.0) as usize + rng.gen_range(0..=o - d);
        let dx = (origin + shift.1) as usize + rng.gen_range(0..=o - d);
        let mut dir: Vec<f32> = (0..c).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-6);
        for v in &mut dir {
            *v *= spec.defect_strength / norm;
        }
        let mut mask = Mask::empty(h0, h0);
        for y in dy..dy + d {
            for x in dx..dx + d {
                for (ch, dv) in dir.iter().enumerate() {
                    data[ch * g * g + y * g + x] += dv;
                }
                for py in y * spec.pixel_stride..(y + 1) * spec.pixel_stride {
                    for px in x * spec.pixel_stride..(x + 1) * spec.pixel_stride {
                        mask.set(py, px, true);
                    }
                }
            }
        }
        let id = format!("test_{i:03}_defect");
        test.push(SyntheticImage { bundle: make(id, Label::Anomalous, data)?, mask: Some(mask), shift });
    }
    Ok(SyntheticDataset { category: spec.category.clone(), train, test })
}

/// Paths produced by [`write_dataset`].
#[derive(Debug, Clone)]
pub struct WrittenDataset {
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
}

/// Writes bundles, masks and the two manifests under `dir`.
pub fn write_dataset(dataset: &SyntheticDataset, dir: impl AsRef<Path>) -> Result<WrittenDataset> {
    let dir = dir.as_ref();
    for sub in ["train", "test", "masks"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let write_split = |images: &[SyntheticImage], split: Split| -> Result<PathBuf> {
        let mut entries = Vec::with_capacity(images.len());
        for img in images {
            let bundle_path = dir.join(split.to_string()).join(format!("{}.lwnb", img.bundle.image_id));
            write_bundle(&img.bundle, &bundle_path)?;
            let mask_path = match &img.mask {
                Some(m) => {
                    let p = dir.join("masks").join(format!("{}.png", img.bundle.image_id));
                    write_mask(m, &p)?;
                    Some(p)
                }
                None => None,
            };
            entries.push(ManifestEntry { bundle_path, label: img.bundle.label, mask_path });
        }
        let manifest = DatasetManifest { split, category: dataset.category.clone(), entries };
        let path = dir.join(format!("{split}.manifest"));
        manifest.write(&path)?;
        Ok(path)
    };
    let train_manifest = write_split(&dataset.train, Split::Train)?;
    let test_manifest = write_split(&dataset.test, Split::Test)?;
    Ok(WrittenDataset { train_manifest, test_manifest })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::validate_manifest;

    #[test]
    fn deterministic_and_shaped() {
        let spec = SyntheticSpec::default();
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.test[3].bundle, b.test[3].bundle);
        assert_eq!(a.train[0].bundle.layer_dims(), vec![(8, 16, 16), (16, 8, 8), (32, 4, 4)]);
        let defects: Vec<_> = a.test.iter().filter(|t| t.mask.is_some()).collect();
        assert_eq!(defects.len(), 6);
        assert!(defects.iter().all(|t| t.mask.as_ref().unwrap().positive_count() == 4 * 16));
        assert!(a.test.iter().all(|t| t.shift.0.abs() <= 2 && t.shift.1.abs() <= 2));
        let exact = generate(&SyntheticSpec { exact_shift: true, ..spec }).unwrap();
        assert!(exact.test.iter().all(|t| t.shift.0.abs() == 2 && t.shift.1.abs() == 2));
    }

    #[test]
    fn written_manifests_validate() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate(&SyntheticSpec { train: 2, test_normal: 1, test_anomalous: 1, ..Default::default() }).unwrap();
        let out = write_dataset(&ds, dir.path()).unwrap();
        let train = DatasetManifest::read(&out.train_manifest, Split::Test).unwrap();
        assert_eq!(train.split, Split::Train);
        assert!(validate_manifest(&train).is_empty());
        let test = DatasetManifest::read(&out.test_manifest, Split::Test).unwrap();
        assert!(validate_manifest(&test).is_empty());
        assert_eq!(test.entries.len(), 2);
        assert!(test.entries[1].mask_path.is_some());
    }

    #[test]
    fn rejects_impossible_specs() {
        assert!(generate(&SyntheticSpec { grid: 10, layers: 3, ..Default::default() }).is_err());
        assert!(generate(&SyntheticSpec { object_size: 14, ..Default::default() }).is_err());
    }
}
