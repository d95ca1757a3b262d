//! Per-image feature bundles and the LWNB container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "LWNB"  u32 version=1
//! u16 id_len, id_len bytes of UTF-8 image id
//! u32 H0, u32 W0
//! u8 label (0 normal, 1 anomalous, 2 unknown)
//! u8 layer count
//! per layer: u32 C, u32 H, u32 W, then C*H*W f32 (channel, row, column order)
//! ```

use std::fmt;
use std::io::{Read, Seek};
use std::path::Path;
use std::str::FromStr;

use crate::binio::{self, LeReader, LeWriter, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BUNDLE_MAGIC: &[u8; 4] = b"LWNB";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Normal,
    Anomalous,
    Unknown,
}

impl Label {
    pub fn code(self) -> u8 {
        match self {
            Label::Normal => 0,
            Label::Anomalous => 1,
            Label::Unknown => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Label::Normal),
            1 => Ok(Label::Anomalous),
            2 => Ok(Label::Unknown),
            other => Err(Error::Format(format!("unknown label code {other}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Anomalous => "anomalous",
            Label::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Label::Normal),
            "anomalous" => Ok(Label::Anomalous),
            "unknown" => Ok(Label::Unknown),
            other => Err(Error::Format(format!("unknown label {other:?}"))),
        }
    }
}

/// Raw per-layer feature maps for one image, shallowest layer first.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub image_id: String,
    pub original_height: usize,
    pub original_width: usize,
    pub label: Label,
    /// Ground-truth mask location. Not stored in the LWNB file; filled in
    /// from the dataset manifest.
    pub mask_path: Option<String>,
    layers: Vec<Tensor>,
}

impl FeatureBundle {
    pub fn new(
        image_id: impl Into<String>,
        original_height: usize,
        original_width: usize,
        label: Label,
        layers: Vec<Tensor>,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("a bundle needs at least one layer".into()));
        }
        if layers.len() > u8::MAX as usize {
            return Err(Error::Shape(format!("too many layers ({})", layers.len())));
        }
        if original_height == 0 || original_width == 0 {
            return Err(Error::Shape("original image size must be positive".into()));
        }
        let mut prev: Option<(usize, usize)> = None;
        for (i, layer) in layers.iter().enumerate() {
            let (_, h, w) = layer
                .chw()
                .map_err(|_| Error::Shape(format!("layer {i} is not (C, H, W): {:?}", layer.dims())))?;
            if let Some((ph, pw)) = prev {
                if h > ph || w > pw {
                    return Err(Error::Shape(format!(
                        "layer {i} is {h}x{w}, larger than the preceding {ph}x{pw}; layers must be shallowest-first"
                    )));
                }
            }
            prev = Some((h, w));
        }
        Ok(Self {
            image_id: image_id.into(),
            original_height,
            original_width,
            label,
            mask_path: None,
            layers,
        })
    }

    pub fn layers(&self) -> &[Tensor] {
        &self.layers
    }

    /// `(C_i, H_i, W_i)` per layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize, usize)> {
        self.layers.iter().map(|l| l.chw().expect("validated at construction")).collect()
    }
}

/// Everything in an LWNB file except the float payloads.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleHeader {
    pub image_id: String,
    pub original_height: usize,
    pub original_width: usize,
    pub label: Label,
    pub layer_dims: Vec<(usize, usize, usize)>,
}

pub fn write_bundle(bundle: &FeatureBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    for (i, layer) in bundle.layers.iter().enumerate() {
        if let Some(index) = layer.first_non_finite() {
            return Err(Error::NonFinite { layer: i, index });
        }
    }
    let payload: usize = bundle.layers.iter().map(|l| l.len() * 4 + 12).sum();
    let mut w = LeWriter::with_capacity(payload + 64 + bundle.image_id.len());
    w.bytes(BUNDLE_MAGIC);
    w.u32(FORMAT_VERSION);
    w.short_str(&bundle.image_id, "image id")?;
    w.dim(bundle.original_height, "H0")?;
    w.dim(bundle.original_width, "W0")?;
    w.u8(bundle.label.code());
    w.u8(bundle.layers.len() as u8);
    for layer in &bundle.layers {
        let (c, h, wd) = layer.chw()?;
        w.dim(c, "C")?;
        w.dim(h, "H")?;
        w.dim(wd, "W")?;
        w.f32s(layer.data());
    }
    binio::atomic_write(path, &w.into_inner())
}

pub fn read_bundle(path: impl AsRef<Path>) -> Result<FeatureBundle> {
    let path = path.as_ref();
    let mut r = binio::open(path)?;
    let (image_id, h0, w0, label, count) = read_preamble(&mut r)?;
    let mut layers = Vec::with_capacity(count);
    for i in 0..count {
        let (c, h, w) = read_layer_dims(&mut r, i)?;
        let data = r.f32s(c * h * w, &format!("layer {i} payload"))?;
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { layer: i, index });
        }
        layers.push(Tensor::new(vec![c, h, w], data)?);
    }
    r.expect_end()?;
    FeatureBundle::new(image_id, h0, w0, label, layers)
}

/// Reads the header and layer shapes without loading the payloads.
pub fn read_bundle_header(path: impl AsRef<Path>) -> Result<BundleHeader> {
    let path = path.as_ref();
    let mut r = binio::open(path)?;
    let (image_id, h0, w0, label, count) = read_preamble(&mut r)?;
    let mut layer_dims = Vec::with_capacity(count);
    for i in 0..count {
        let (c, h, w) = read_layer_dims(&mut r, i)?;
        r.skip_f32s(c * h * w, &format!("layer {i} payload"))?;
        layer_dims.push((c, h, w));
    }
    r.expect_end()?;
    Ok(BundleHeader { image_id, original_height: h0, original_width: w0, label, layer_dims })
}

fn read_preamble<R: Read + Seek>(r: &mut LeReader<R>) -> Result<(String, usize, usize, Label, usize)> {
    r.magic(BUNDLE_MAGIC)?;
    let image_id = r.short_str("image id")?;
    let h0 = r.dim("H0")?;
    let w0 = r.dim("W0")?;
    let label = Label::from_code(r.u8("label")?)?;
    let count = r.u8("layer count")? as usize;
    if count == 0 {
        return Err(Error::Format("bundle declares zero layers".into()));
    }
    Ok((image_id, h0, w0, label, count))
}

fn read_layer_dims<R: Read + Seek>(r: &mut LeReader<R>, i: usize) -> Result<(usize, usize, usize)> {
    let c = r.dim(&format!("layer {i} C"))?;
    let h = r.dim(&format!("layer {i} H"))?;
    let w = r.dim(&format!("layer {i} W"))?;
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::Format(format!("layer {i} has a zero dimension ({c}, {h}, {w})")));
    }
    Ok((c, h, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn sample() -> FeatureBundle {
        let l0 = Tensor::new(vec![2, 4, 4], (0..32).map(|v| v as f32 * 0.25 - 3.0).collect()).unwrap();
        let l1 = Tensor::new(vec![3, 2, 2], (0..12).map(|v| -(v as f32)).collect()).unwrap();
        FeatureBundle::new("bottle/000", 16, 16, Label::Anomalous, vec![l0, l1]).unwrap()
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.lwnb");
        let b = sample();
        write_bundle(&b, &p).unwrap();
        let back = read_bundle(&p).unwrap();
        assert_eq!(back, b);
        for (x, y) in back.layers().iter().zip(b.layers()) {
            assert!(x.bit_eq(y));
        }
        let header = read_bundle_header(&p).unwrap();
        assert_eq!(header.layer_dims, vec![(2, 4, 4), (3, 2, 2)]);
        assert_eq!(header.label, Label::Anomalous);
    }

    #[test]
    fn header_bytes_are_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.lwnb");
        let l0 = Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap();
        let b = FeatureBundle::new("ab", 3, 5, Label::Unknown, vec![l0]).unwrap();
        write_bundle(&b, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        let mut expected = b"LWNB".to_vec();
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u16.to_le_bytes());
        expected.extend_from_slice(b"ab");
        expected.extend_from_slice(&3u32.to_le_bytes());
        expected.extend_from_slice(&5u32.to_le_bytes());
        expected.push(2);
        expected.push(1);
        for d in [1u32, 1, 1] {
            expected.extend_from_slice(&d.to_le_bytes());
        }
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn short_payload_is_corruption() {
        // declared (64, 64, 64) with only 64*64*63 floats
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("short.lwnb");
        let mut w = LeWriter::default();
        w.bytes(BUNDLE_MAGIC);
        w.u32(1);
        w.short_str("x", "id").unwrap();
        w.u32(256);
        w.u32(256);
        w.u8(0);
        w.u8(1);
        for d in [64u32, 64, 64] {
            w.u32(d);
        }
        w.f32s(&vec![0.5; 64 * 64 * 63]);
        fs::write(&p, w.into_inner()).unwrap();
        assert!(matches!(read_bundle(&p), Err(Error::Corrupt(_))));
        assert!(matches!(read_bundle_header(&p), Err(Error::Corrupt(_))));
    }

    #[test]
    fn nan_names_layer() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nan.lwnb");
        let b = sample();
        write_bundle(&b, &p).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        // last float belongs to layer 1
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&p, bytes).unwrap();
        match read_bundle(&p) {
            Err(Error::NonFinite { layer, index }) => {
                assert_eq!(layer, 1);
                assert_eq!(index, 11);
            }
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn write_refuses_non_finite() {
        let dir = tempfile::tempdir().unwrap();
        let l0 = Tensor::new(vec![1, 1, 2], vec![0.0, f32::INFINITY]).unwrap();
        let b = FeatureBundle::new("x", 1, 2, Label::Normal, vec![l0]).unwrap();
        let err = write_bundle(&b, dir.path().join("x.lwnb")).unwrap_err();
        assert!(matches!(err, Error::NonFinite { layer: 0, index: 1 }));
    }

    #[test]
    fn bad_magic_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.lwnb");
        fs::write(&p, b"NOPE\x01\0\0\0").unwrap();
        assert!(matches!(read_bundle(&p), Err(Error::Format(_))));
        fs::write(&p, b"LWNB\x07\0\0\0").unwrap();
        assert!(matches!(read_bundle(&p), Err(Error::Format(_))));
    }

    #[test]
    fn trailing_bytes_are_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.lwnb");
        write_bundle(&sample(), &p).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        fs::write(&p, bytes).unwrap();
        assert!(matches!(read_bundle(&p), Err(Error::Corrupt(_))));
    }

    #[test]
    fn second_write_wins() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.lwnb");
        let first = sample();
        let l0 = Tensor::filled(vec![1, 2, 2], 9.0).unwrap();
        let second = FeatureBundle::new("other", 8, 8, Label::Normal, vec![l0]).unwrap();
        write_bundle(&first, &p).unwrap();
        write_bundle(&second, &p).unwrap();
        assert_eq!(read_bundle(&p).unwrap(), second);
        // no temp files left behind
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[cfg(unix)]
    #[test]
    fn read_only_directory_is_io_error() {
        use std::os::unix::fs::PermissionsExt;
        let dir = tempfile::tempdir().unwrap();
        let ro = dir.path().join("ro");
        fs::create_dir(&ro).unwrap();
        fs::set_permissions(&ro, fs::Permissions::from_mode(0o555)).unwrap();
        // root ignores directory permissions
        if fs::write(ro.join("probe"), b"x").is_ok() {
            return;
        }
        let err = write_bundle(&sample(), ro.join("a.lwnb")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn missing_directory_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = write_bundle(&sample(), dir.path().join("nope").join("a.lwnb")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn layers_must_shrink() {
        let big = Tensor::zeros(vec![1, 4, 4]).unwrap();
        let small = Tensor::zeros(vec![1, 2, 2]).unwrap();
        assert!(FeatureBundle::new("x", 4, 4, Label::Normal, vec![small, big]).is_err());
    }
}
