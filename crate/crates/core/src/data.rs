//! Images, AU vectors, identity labels, manifests and unpaired minibatch
//! sampling.
//!
//! Images are held channel-major (`[3, H, W]`) so that batches stack directly
//! into the NCHW layout the networks consume.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{imageops, DynamicImage, ImageFormat, RgbImage};
use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GathError, Result};
use crate::tensor::Tensor;

/// Width of the AU coefficient vector.
pub const AU_DIM: usize = 46;

/// Overshoot outside `[0, 1]` that is silently clamped.
pub const AU_CLAMP_TOLERANCE: f32 = 1e-3;

/// 8-bit interleaved RGB raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(GathError::Shape(format!(
                "raster {width}x{height} needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(RasterImage { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        RasterImage { width, height, data }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: u8) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    fn from_rgb(img: RgbImage) -> Self {
        let (w, h) = img.dimensions();
        RasterImage {
            width: w as usize,
            height: h as usize,
            data: img.into_raw(),
        }
    }

    fn to_rgb(&self) -> RgbImage {
        RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone()).expect("consistent raster size")
    }

    /// Decode an encoded raster that must carry exactly three colour channels.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        Self::decode_inner(bytes, false)
    }

    /// Like [`RasterImage::decode`] but also accepts RGBA, discarding alpha.
    pub fn decode_lenient(bytes: &[u8]) -> Result<Self> {
        Self::decode_inner(bytes, true)
    }

    fn decode_inner(bytes: &[u8], allow_alpha: bool) -> Result<Self> {
        let img = image::load_from_memory(bytes).map_err(|e| GathError::Decode(e.to_string()))?;
        let channels = img.color().channel_count() as usize;
        if channels != 3 && !(allow_alpha && channels == 4) {
            return Err(GathError::Channels(channels));
        }
        Ok(Self::from_rgb(img.to_rgb8()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| GathError::io(path, e))?;
        Self::decode(&bytes).map_err(|e| match e {
            GathError::Decode(msg) => GathError::Decode(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_png(&self) -> Vec<u8> {
        let mut out = Cursor::new(Vec::new());
        DynamicImage::ImageRgb8(self.to_rgb())
            .write_to(&mut out, ImageFormat::Png)
            .expect("PNG encoding to memory");
        out.into_inner()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_png()).map_err(|e| GathError::io(path, e))
    }

    /// Bilinear resample to `width`×`height`.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        Self::from_rgb(imageops::resize(
            &self.to_rgb(),
            width as u32,
            height as u32,
            imageops::FilterType::Triangle,
        ))
    }
}

/// `[3, H, W]` real image with every entry finite and in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor(Tensor<f32>);

impl ImageTensor {
    pub fn new(t: Tensor<f32>) -> Result<Self> {
        if t.shape().len() != 3 || t.shape()[0] != 3 {
            return Err(GathError::Shape(format!("expected [3, H, W], got {:?}", t.shape())));
        }
        if let Some(v) = t.data().iter().find(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(GathError::Precondition(format!("image value {v} outside [-1, 1]")));
        }
        Ok(ImageTensor(t))
    }

    /// Clamp into `[-1, 1]` (non-finite entries become 0) and wrap.
    pub fn clamped(mut t: Tensor<f32>) -> Result<Self> {
        for v in t.data_mut() {
            *v = if v.is_finite() { v.clamp(-1.0, 1.0) } else { 0.0 };
        }
        Self::new(t)
    }

    /// `v ↦ 2·v/255 − 1` per channel.
    pub fn from_raster(r: &RasterImage) -> Self {
        let (h, w) = (r.height, r.width);
        let mut t = Tensor::zeros(&[3, h, w]);
        let d = t.data_mut();
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    d[(c * h + y) * w + x] = 2.0 * (r.get(y, x, c) as f32 / 255.0) - 1.0;
                }
            }
        }
        ImageTensor(t)
    }

    /// Inverse of [`ImageTensor::from_raster`]: `round(127.5·(x + 1))`, ties up.
    pub fn to_raster(&self) -> RasterImage {
        let (h, w) = (self.height(), self.width());
        let d = self.0.data();
        let mut r = RasterImage::filled(w, h, [0; 3]);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    r.set(y, x, c, denormalize_value(d[(c * h + y) * w + x]));
                }
            }
        }
        r
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        self.0
    }

    /// `[1, 3, H, W]` batch of one.
    pub fn to_batch(&self) -> Tensor<f32> {
        let (h, w) = (self.height(), self.width());
        self.0.clone().reshape(&[1, 3, h, w]).expect("same element count")
    }
}

pub fn denormalize_value(x: f32) -> u8 {
    (127.5 * (x as f64 + 1.0) + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Decode `path` into a `side`×`side` image, resampling bilinearly if needed.
pub fn load_image(path: &Path, side: usize) -> Result<ImageTensor> {
    let r = RasterImage::read(path)?;
    Ok(ImageTensor::from_raster(&r.resized(side, side)))
}

/// AU coefficients, each in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuVector(Vec<f32>);

impl AuVector {
    /// Validate `values` against `dim`, clamping overshoot up to
    /// [`AU_CLAMP_TOLERANCE`].
    pub fn new(values: Vec<f32>, dim: usize) -> Result<Self> {
        if values.len() != dim {
            return Err(GathError::Arity {
                expected: dim,
                found: values.len(),
            });
        }
        let mut values = values;
        for (i, v) in values.iter_mut().enumerate() {
            if !v.is_finite() || *v < -AU_CLAMP_TOLERANCE || *v > 1.0 + AU_CLAMP_TOLERANCE {
                return Err(GathError::Range { index: i, value: *v as f64 });
            }
            *v = v.clamp(0.0, 1.0);
        }
        Ok(AuVector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        AuVector(vec![0.0; dim])
    }

    /// Whitespace- or comma-separated decimals.
    pub fn parse(text: &str, dim: usize) -> Result<Self> {
        let mut values = Vec::new();
        for tok in text.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            let v: f32 = tok
                .parse()
                .map_err(|_| GathError::Schema(format!("`{tok}` is not a number")))?;
            values.push(v);
        }
        Self::new(values, dim)
    }

    /// Single line of space-separated values that parses back exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            write!(s, "{v}").expect("write to string");
        }
        s.push('\n');
        s
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn to_batch(&self) -> Tensor<f32> {
        Tensor::from_vec(&[1, self.0.len()], self.0.clone()).expect("length matches")
    }
}

impl AsRef<[f32]> for AuVector {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

pub fn load_au_vector(path: &Path, dim: usize) -> Result<AuVector> {
    let text = std::fs::read_to_string(path).map_err(|e| GathError::io(path, e))?;
    AuVector::parse(&text, dim).map_err(|e| match e {
        GathError::Schema(msg) => GathError::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg,
        },
        other => other,
    })
}

/// One AU vector per non-blank line, tab-separated columns.
pub fn load_au_sequence(path: &Path, dim: usize) -> Result<Vec<AuVector>> {
    let text = std::fs::read_to_string(path).map_err(|e| GathError::io(path, e))?;
    let mut frames = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let frame = AuVector::parse(&line.replace('\t', " "), dim).map_err(|e| GathError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        frames.push(frame);
    }
    Ok(frames)
}

/// Face-region mask: `true` inside the face.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn full(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            data: vec![true; width * height],
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&m| m).count()
    }
}

/// Single-channel raster, nonzero = face; nearest-neighbour resampled to
/// `side`×`side`.
pub fn load_mask(path: &Path, side: usize) -> Result<Mask> {
    let bytes = std::fs::read(path).map_err(|e| GathError::io(path, e))?;
    let img = image::load_from_memory(&bytes).map_err(|e| GathError::Decode(format!("{}: {e}", path.display())))?;
    let channels = img.color().channel_count() as usize;
    if channels != 1 {
        return Err(GathError::Channels(channels));
    }
    let luma = img.to_luma8();
    let luma = if luma.dimensions() != (side as u32, side as u32) {
        imageops::resize(&luma, side as u32, side as u32, imageops::FilterType::Nearest)
    } else {
        luma
    };
    Ok(Mask {
        width: side,
        height: side,
        data: luma.into_raw().into_iter().map(|v| v != 0).collect(),
    })
}

pub fn save_mask(mask: &Mask, path: &Path) -> Result<()> {
    let raw = mask.data.iter().map(|&m| if m { 255 } else { 0 }).collect();
    let img = image::GrayImage::from_raw(mask.width as u32, mask.height as u32, raw).expect("mask size");
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| GathError::io(path, std::io::Error::other(e)))
}

/// Subject index in `[0, C)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IdentityLabel(pub usize);

impl IdentityLabel {
    pub fn check(self, classes: usize) -> Result<Self> {
        if self.0 < classes {
            Ok(self)
        } else {
            Err(GathError::Label {
                label: self.0,
                classes,
            })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Source,
    Target,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRecord {
    pub image: PathBuf,
    pub identity: Option<IdentityLabel>,
    pub au_path: Option<PathBuf>,
    pub mask_path: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub role: Role,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    /// Largest identity index plus one.
    pub fn class_count(&self) -> usize {
        self.records.iter().filter_map(|r| r.identity).map(|l| l.0 + 1).max().unwrap_or(0)
    }

    /// Tab-separated text form; paths are written as stored.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let p = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        for r in &self.records {
            let id = r.identity.map(|l| l.0.to_string()).unwrap_or_default();
            writeln!(s, "{}\t{}\t{}\t{}", r.image.display(), id, p(&r.au_path), p(&r.mask_path)).expect("write");
        }
        s
    }
}

/// Parse a tab-separated manifest. Relative paths resolve against the
/// manifest's directory; blank lines and `#` comments are skipped.
pub fn load_manifest(path: &Path, role: Role) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| GathError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let parse_err = |line: usize, msg: String| GathError::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() > 4 {
            return Err(parse_err(lineno, format!("expected at most 4 fields, found {}", fields.len())));
        }
        let field = |k: usize| fields.get(k).map(|f| f.trim()).filter(|f| !f.is_empty());
        let resolve = |f: &str| {
            let p = Path::new(f);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let image = field(0)
            .map(resolve)
            .ok_or_else(|| parse_err(lineno, "missing image path".into()))?;
        let identity = field(1)
            .map(|f| {
                f.parse::<usize>()
                    .map(IdentityLabel)
                    .map_err(|_| parse_err(lineno, format!("identity `{f}` is not a nonnegative integer")))
            })
            .transpose()?;
        let au_path = field(2).map(resolve);
        let mask_path = field(3).map(resolve);
        match role {
            Role::Source if identity.is_none() => {
                return Err(GathError::Schema(format!(
                    "{}:{lineno}: source record without identity",
                    path.display()
                )))
            }
            Role::Target if au_path.is_none() => {
                return Err(GathError::Schema(format!(
                    "{}:{lineno}: target record without AU path",
                    path.display()
                )))
            }
            _ => {}
        }
        records.push(ManifestRecord {
            image,
            identity,
            au_path,
            mask_path,
        });
    }
    Ok(DatasetManifest { role, records })
}

/// Identities present in both manifests. A nonempty result is logged as a
/// warning, never an error.
pub fn shared_identities(source: &DatasetManifest, target: &DatasetManifest) -> Vec<IdentityLabel> {
    let src: BTreeSet<_> = source.records.iter().filter_map(|r| r.identity).collect();
    let tgt: BTreeSet<_> = target.records.iter().filter_map(|r| r.identity).collect();
    let shared: Vec<_> = src.intersection(&tgt).copied().collect();
    if !shared.is_empty() {
        warn!(
            "{} identities appear in both source and target sets; the sets are expected to be disjoint",
            shared.len()
        );
    }
    shared
}

/// A decoded record kept in memory for sampling.
#[derive(Clone, Debug)]
pub struct LoadedRecord {
    pub image: ImageTensor,
    pub identity: Option<IdentityLabel>,
    pub au: Option<AuVector>,
}

/// All records of one manifest, decoded at a fixed side.
#[derive(Clone, Debug)]
pub struct LoadedSet {
    pub role: Role,
    pub side: usize,
    pub records: Vec<LoadedRecord>,
}

impl LoadedSet {
    pub fn load(manifest: &DatasetManifest, side: usize, au_dim: usize) -> Result<Self> {
        let mut records = Vec::with_capacity(manifest.records.len());
        for r in &manifest.records {
            let au = r.au_path.as_deref().map(|p| load_au_vector(p, au_dim)).transpose()?;
            records.push(LoadedRecord {
                image: load_image(&r.image, side)?,
                identity: r.identity,
                au,
            });
        }
        Ok(LoadedSet {
            role: manifest.role,
            side,
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// One unpaired minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainBatch {
    /// Source stills `[N, 3, H, W]` fed to the generator.
    pub x_src: Tensor<f32>,
    /// Labels of `x_src`, used as the target class of the synthesized images.
    pub c_src: Vec<usize>,
    /// Independently drawn real source images.
    pub x_re: Tensor<f32>,
    /// Labels of `x_re`.
    pub c: Vec<usize>,
    /// Target expressive frames.
    pub y_tgt: Tensor<f32>,
    /// AU vectors of `y_tgt`, `[N, A]`.
    pub e_tgt: Tensor<f32>,
}

impl TrainBatch {
    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }
}

/// Draw `x_src`, `x_re` i.i.d. with replacement from `source` and
/// `(y_tgt, e_tgt)` from `target`. Per sample the draw order is
/// source, real, target.
pub fn sample_minibatch(source: &LoadedSet, target: &LoadedSet, rng: &mut impl Rng, n: usize) -> Result<TrainBatch> {
    if source.is_empty() || target.is_empty() {
        return Err(GathError::Sampling(format!(
            "cannot sample from {} source and {} target records",
            source.len(),
            target.len()
        )));
    }
    if n == 0 {
        return Err(GathError::Sampling("batch size must be at least 1".into()));
    }
    let label = |r: &LoadedRecord| {
        r.identity
            .map(|l| l.0)
            .ok_or_else(|| GathError::Schema("source record without identity".into()))
    };
    let (mut x_src, mut x_re, mut y_tgt) = (Vec::new(), Vec::new(), Vec::new());
    let (mut c_src, mut c, mut e) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let s = &source.records[rng.random_range(0..source.len())];
        let r = &source.records[rng.random_range(0..source.len())];
        let t = &target.records[rng.random_range(0..target.len())];
        let au = t
            .au
            .as_ref()
            .ok_or_else(|| GathError::Schema("target record without AU vector".into()))?;
        x_src.push(s.image.to_batch());
        c_src.push(label(s)?);
        x_re.push(r.image.to_batch());
        c.push(label(r)?);
        y_tgt.push(t.image.to_batch());
        e.extend_from_slice(au.values());
    }
    let a = e.len() / n;
    Ok(TrainBatch {
        x_src: Tensor::stack(&x_src)?,
        c_src,
        x_re: Tensor::stack(&x_re)?,
        c,
        y_tgt: Tensor::stack(&y_tgt)?,
        e_tgt: Tensor::from_vec(&[n, a], e)?,
    })
}
