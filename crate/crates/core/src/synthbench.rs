//! Procedural cartoon-face corpus with analytic identity and expression.
//!
//! Faces are drawn in normalized coordinates `(u, v) ∈ [-1, 1]²` (v grows
//! downwards) by compositing soft-edged shapes; every edge is a clamped
//! signed distance, so pixels vary continuously with the parameters.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    AuVector, DatasetManifest, IdentityLabel, ImageTensor, LoadedRecord, LoadedSet, ManifestRecord, Mask, Role,
    AU_DIM,
};
use crate::error::{GathError, Result};
use crate::tensor::Tensor;

/// AU indices carrying the four expressive degrees of freedom.
pub const MOUTH_OPEN_AU: usize = 0;
pub const MOUTH_CURVE_AU: usize = 1;
pub const BROW_RAISE_AU: usize = 2;
pub const EYE_CLOSE_AU: usize = 3;

/// Per-field ranges of [`SpriteIdentity`], in declaration order.
pub const IDENTITY_RANGES: [(f64, f64); 5] = [(0.0, 1.0), (0.72, 0.95), (0.22, 0.34), (0.3, 0.95), (0.0, 1.0)];

/// Minimum normalized difference, in at least one field, between two
/// identities of one corpus.
pub const IDENTITY_SEPARATION: f64 = 0.2;

const BACKDROP: [f64; 3] = [0.32, 0.38, 0.44];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpriteIdentity {
    /// Hue of the skin.
    pub face_hue: f64,
    /// Head width over head height.
    pub face_shape_ratio: f64,
    /// Horizontal offset of each eye from the midline.
    pub eye_spacing: f64,
    /// Skin lightness.
    pub skin_tone: f64,
    /// Hue of the hair band.
    pub hair_band_color: f64,
}

impl SpriteIdentity {
    fn fields(&self) -> [f64; 5] {
        [
            self.face_hue,
            self.face_shape_ratio,
            self.eye_spacing,
            self.skin_tone,
            self.hair_band_color,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (i, (v, (lo, hi))) in self.fields().iter().zip(IDENTITY_RANGES).enumerate() {
            if !(lo..=hi).contains(v) {
                return Err(GathError::Range { index: i, value: *v });
            }
        }
        Ok(())
    }

    pub fn random(rng: &mut impl Rng) -> Self {
        let mut f = [0.0; 5];
        for (v, (lo, hi)) in f.iter_mut().zip(IDENTITY_RANGES) {
            *v = rng.random_range(lo..=hi);
        }
        SpriteIdentity {
            face_hue: f[0],
            face_shape_ratio: f[1],
            eye_spacing: f[2],
            skin_tone: f[3],
            hair_band_color: f[4],
        }
    }

    /// Largest per-field difference, each field scaled by its range.
    pub fn separation(&self, other: &SpriteIdentity) -> f64 {
        self.fields()
            .iter()
            .zip(other.fields())
            .zip(IDENTITY_RANGES)
            .map(|((a, b), (lo, hi))| (a - b).abs() / (hi - lo))
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpriteExpression {
    pub mouth_open: f64,
    pub mouth_curve: f64,
    pub brow_raise: f64,
    pub eye_close: f64,
}

impl SpriteExpression {
    pub const NEUTRAL: SpriteExpression = SpriteExpression {
        mouth_open: 0.0,
        mouth_curve: 0.0,
        brow_raise: 0.0,
        eye_close: 0.0,
    };

    fn fields(&self) -> [f64; 4] {
        [self.mouth_open, self.mouth_curve, self.brow_raise, self.eye_close]
    }

    pub fn validate(&self) -> Result<()> {
        for (i, v) in self.fields().iter().enumerate() {
            if !(0.0..=1.0).contains(v) {
                return Err(GathError::Range { index: i, value: *v });
            }
        }
        Ok(())
    }

    /// Each component is zero with probability 1/4, otherwise uniform on
    /// `[0, 1]`, so resting parts are well represented.
    pub fn random(rng: &mut impl Rng) -> Self {
        let mut f = [0.0; 4];
        for v in &mut f {
            let active = rng.random_bool(0.75);
            let u: f64 = rng.random();
            *v = if active { u } else { 0.0 };
        }
        SpriteExpression {
            mouth_open: f[0],
            mouth_curve: f[1],
            brow_raise: f[2],
            eye_close: f[3],
        }
    }

    pub fn max_component(&self) -> f64 {
        self.fields().into_iter().fold(0.0, f64::max)
    }

    /// Embed into a `dim`-wide AU vector; all other components are zero.
    pub fn to_au(&self, dim: usize) -> Result<AuVector> {
        if dim < 4 {
            return Err(GathError::Arity { expected: 4, found: dim });
        }
        let mut v = vec![0.0f32; dim];
        for (i, x) in self.fields().iter().enumerate() {
            v[[MOUTH_OPEN_AU, MOUTH_CURVE_AU, BROW_RAISE_AU, EYE_CLOSE_AU][i]] = *x as f32;
        }
        AuVector::new(v, dim)
    }

    pub fn from_au(au: &AuVector) -> Result<Self> {
        let v = au.values();
        if v.len() < 4 {
            return Err(GathError::Arity { expected: 4, found: v.len() });
        }
        Ok(SpriteExpression {
            mouth_open: v[MOUTH_OPEN_AU] as f64,
            mouth_curve: v[MOUTH_CURVE_AU] as f64,
            brow_raise: v[BROW_RAISE_AU] as f64,
            eye_close: v[EYE_CLOSE_AU] as f64,
        })
    }
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(1.0) * 6.0;
    let i = h.floor();
    let f = h - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Signed distance (approximate, negative inside) to an axis-aligned ellipse.
fn ellipse_sd(u: f64, v: f64, cu: f64, cv: f64, au: f64, av: f64) -> f64 {
    let (du, dv) = (u - cu, v - cv);
    let k = ((du / au).powi(2) + (dv / av).powi(2)).sqrt();
    (k - 1.0) * au.min(av)
}

// Geometry of the facial parts.
const HEAD_CENTER: f64 = 0.06;
const HEAD_HALF_HEIGHT: f64 = 0.8;
const HAIR_LINE: f64 = -0.54;
const EYE_Y: f64 = -0.1;
const EYE_HALF_WIDTH: f64 = 0.14;
const EYE_HALF_HEIGHT: f64 = 0.11;
const BROW_REST_Y: f64 = -0.3;
const BROW_LIFT: f64 = 0.14;
const BROW_HALF_WIDTH: f64 = 0.16;
const BROW_HALF_THICKNESS: f64 = 0.055;
const MOUTH_Y: f64 = 0.42;
const MOUTH_HALF_WIDTH: f64 = 0.32;
const MOUTH_CORNER_LIFT: f64 = 0.16;
const MOUTH_REST_HALF_HEIGHT: f64 = 0.035;
const MOUTH_MAX_OPEN: f64 = 0.2;

/// Normalized-coordinate box `(u0, v0, u1, v1)` containing every pixel the
/// given part can touch, for any expression.
pub fn part_bounds(part: &str, id: &SpriteIdentity) -> Option<(f64, f64, f64, f64)> {
    let s = id.eye_spacing;
    match part {
        "mouth" => Some((
            -MOUTH_HALF_WIDTH,
            MOUTH_Y - MOUTH_CORNER_LIFT - MOUTH_REST_HALF_HEIGHT - MOUTH_MAX_OPEN,
            MOUTH_HALF_WIDTH,
            MOUTH_Y + MOUTH_REST_HALF_HEIGHT + MOUTH_MAX_OPEN,
        )),
        "eyes" => Some((
            -s - EYE_HALF_WIDTH,
            EYE_Y - EYE_HALF_HEIGHT,
            s + EYE_HALF_WIDTH,
            EYE_Y + EYE_HALF_HEIGHT,
        )),
        "brows" => Some((
            -s - BROW_HALF_WIDTH - BROW_HALF_THICKNESS,
            BROW_REST_Y - BROW_LIFT - BROW_HALF_THICKNESS,
            s + BROW_HALF_WIDTH + BROW_HALF_THICKNESS,
            BROW_REST_Y + BROW_HALF_THICKNESS,
        )),
        _ => None,
    }
}

/// Render one face. Returns the image and the head-ellipse mask.
pub fn sprite_render(id: &SpriteIdentity, ex: &SpriteExpression, side: usize) -> Result<(ImageTensor, Mask)> {
    id.validate()?;
    ex.validate()?;
    if side < 4 {
        return Err(GathError::Shape(format!("sprite side {side} too small")));
    }
    // One pixel in normalized units; edges ramp over this width.
    let px = 2.0 / side as f64;
    let cover = |sd: f64| (0.5 - sd / px).clamp(0.0, 1.0);

    let skin = hsv(id.face_hue, 0.45, id.skin_tone);
    let hair = hsv(id.hair_band_color, 0.75, 0.55);
    // Features are shades of the skin so expression contrast stays below
    // identity contrast.
    let dark = skin.map(|c| c * 0.4);
    let lips = [0.5 * skin[0] + 0.3, 0.5 * skin[1], 0.5 * skin[2]];
    let head_au = HEAD_HALF_HEIGHT * id.face_shape_ratio;

    let mut img = Tensor::zeros(&[3, side, side]);
    let mut mask = Mask::full(side, side);
    for y in 0..side {
        for x in 0..side {
            let u = -1.0 + (x as f64 + 0.5) * px;
            let v = -1.0 + (y as f64 + 0.5) * px;
            let mut c = BACKDROP;
            let mut paint = |col: [f64; 3], a: f64| {
                for k in 0..3 {
                    c[k] += (col[k] - c[k]) * a;
                }
            };
            let head_sd = ellipse_sd(u, v, 0.0, HEAD_CENTER, head_au, HEAD_HALF_HEIGHT);
            paint(skin, cover(head_sd));
            mask.data[y * side + x] = head_sd <= 0.0;
            // Hair: a band capping the top of the head.
            let hair_sd = ellipse_sd(u, v, 0.0, HEAD_CENTER - 0.04, head_au + 0.06, HEAD_HALF_HEIGHT + 0.05);
            paint(hair, cover((v - HAIR_LINE).max(hair_sd)));
            // Eyes: aperture shrinks to nothing as the lid closes.
            let aperture = EYE_HALF_HEIGHT * (1.0 - ex.eye_close);
            for sgn in [-1.0, 1.0] {
                let cu = sgn * id.eye_spacing;
                let a = if aperture > 0.0 {
                    let k = ((u - cu) / EYE_HALF_WIDTH).powi(2) + ((v - EYE_Y) / aperture).powi(2);
                    cover((k.sqrt() - 1.0) * aperture)
                } else {
                    0.0
                };
                paint(dark, a);
                // Brows: rounded bars lifted by brow_raise.
                let by = BROW_REST_Y - BROW_LIFT * ex.brow_raise;
                let du = ((u - cu).abs() - BROW_HALF_WIDTH).max(0.0);
                let dv = v - by;
                let brow_sd = (du * du + dv * dv).sqrt() - BROW_HALF_THICKNESS;
                paint(hair.map(|h| h * 0.5), cover(brow_sd));
            }
            // Mouth: a lens around a parabolic centerline.
            let t = u / MOUTH_HALF_WIDTH;
            if t.abs() < 1.0 + px / MOUTH_HALF_WIDTH {
                let tc = t.clamp(-1.0, 1.0);
                let center = MOUTH_Y - ex.mouth_curve * MOUTH_CORNER_LIFT * tc * tc;
                let half = (MOUTH_REST_HALF_HEIGHT + MOUTH_MAX_OPEN * ex.mouth_open) * (1.0 - tc * tc).sqrt().max(0.15);
                let sd = ((v - center).abs() - half).max(u.abs() - MOUTH_HALF_WIDTH);
                let col = if ex.mouth_open > 0.0 {
                    let w = ex.mouth_open.min(1.0);
                    [
                        lips[0] * (1.0 - w) + dark[0] * w,
                        lips[1] * (1.0 - w) + dark[1] * w,
                        lips[2] * (1.0 - w) + dark[2] * w,
                    ]
                } else {
                    lips
                };
                paint(col, cover(sd));
            }
            let d = img.data_mut();
            for k in 0..3 {
                d[(k * side + y) * side + x] = (2.0 * c[k] - 1.0).clamp(-1.0, 1.0) as f32;
            }
        }
    }
    Ok((ImageTensor::new(img)?, mask))
}

/// Plain L2 distance between two images.
pub fn oracle_distance(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    if a.tensor().shape() != b.tensor().shape() {
        return Err(GathError::Shape(format!(
            "oracle_distance: {:?} vs {:?}",
            a.tensor().shape(),
            b.tensor().shape()
        )));
    }
    Ok(a.tensor()
        .data()
        .iter()
        .zip(b.tensor().data())
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Neutral render of an identity and the displacement each corner of the
/// expression cube applies to it.
struct ExpressionReach {
    neutral: Vec<f64>,
    deltas: Vec<Vec<f64>>,
}

fn flat(img: &ImageTensor) -> Vec<f64> {
    img.tensor().data().iter().map(|&v| v as f64).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl ExpressionReach {
    fn new(id: &SpriteIdentity, side: usize) -> Result<Self> {
        let neutral = flat(&sprite_render(id, &SpriteExpression::NEUTRAL, side)?.0);
        let mut deltas = Vec::with_capacity(15);
        for corner in 1..16u32 {
            let bit = |k: u32| ((corner >> k) & 1) as f64;
            let ex = SpriteExpression {
                mouth_open: bit(0),
                mouth_curve: bit(1),
                brow_raise: bit(2),
                eye_close: bit(3),
            };
            let img = flat(&sprite_render(id, &ex, side)?.0);
            deltas.push(img.iter().zip(&neutral).map(|(a, b)| a - b).collect());
        }
        Ok(ExpressionReach { neutral, deltas })
    }

    /// `x = n_a + δ` is nearer `n_a` than `n_b` iff
    /// `|n_a − n_b|² + 2⟨n_a − n_b, δ⟩ > 0`. Require that with a margin for
    /// every probed displacement of either identity.
    fn separated_from(&self, other: &ExpressionReach) -> bool {
        let diff: Vec<f64> = self.neutral.iter().zip(&other.neutral).map(|(a, b)| a - b).collect();
        let d2 = dot(&diff, &diff);
        if d2.sqrt() < MIN_NEUTRAL_DISTANCE {
            return false;
        }
        let ok = |sign: f64, deltas: &[Vec<f64>]| {
            deltas.iter().all(|dl| d2 + 2.0 * sign * dot(&diff, dl) > BISECTOR_MARGIN * d2)
        };
        ok(1.0, &self.deltas) && ok(-1.0, &other.deltas)
    }
}

/// Smallest oracle distance allowed between two neutral renders.
const MIN_NEUTRAL_DISTANCE: f64 = 2.0;
/// Fraction of the squared neutral distance kept in reserve by the bisector
/// test, covering expressions between the probed corners.
const BISECTOR_MARGIN: f64 = 0.3;

/// One rendered record of the corpus.
#[derive(Clone, Debug)]
pub struct SpriteRecord {
    /// Index into [`Corpus::identities`]; also the identity label.
    pub identity: usize,
    pub expression: SpriteExpression,
    pub image: ImageTensor,
    pub mask: Mask,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_identities: usize,
    pub n_expressions: usize,
    pub side: usize,
    pub seed: u64,
    /// Fraction of target records replaced by renders of source identities.
    pub mix_fraction: f64,
    pub au_dim: usize,
}

impl CorpusSpec {
    pub fn new(n_identities: usize, n_expressions: usize, side: usize, seed: u64) -> Self {
        CorpusSpec {
            n_identities,
            n_expressions,
            side,
            seed,
            mix_fraction: 0.0,
            au_dim: AU_DIM,
        }
    }
}

/// Source identities are `0..n`, target identities `n..2n`.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub identities: Vec<SpriteIdentity>,
    pub source: Vec<SpriteRecord>,
    pub target: Vec<SpriteRecord>,
    /// Neutral render of each source identity, indexed by label.
    pub neutral: Vec<ImageTensor>,
    /// Smallest oracle distance between neutral renders of two identities.
    pub separation_floor: f64,
}

/// Draw `2·n_identities` mutually separated identities and render the
/// source stills, target frames and neutral references.
pub fn generate_corpus(spec: CorpusSpec) -> Result<Corpus> {
    if spec.n_identities < 2 || spec.n_expressions < 2 {
        return Err(GathError::Precondition("corpus needs at least 2 identities and 2 expressions".into()));
    }
    if !(0.0..=1.0).contains(&spec.mix_fraction) {
        return Err(GathError::Config(format!("mix_fraction {} outside [0, 1]", spec.mix_fraction)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_identities;
    let mut identities: Vec<SpriteIdentity> = Vec::with_capacity(2 * n);
    let mut reach: Vec<ExpressionReach> = Vec::with_capacity(2 * n);
    let mut attempts = 0;
    while identities.len() < 2 * n {
        attempts += 1;
        if attempts > 20_000 {
            return Err(GathError::Precondition(format!(
                "could not draw {} separated identities",
                2 * n
            )));
        }
        let cand = SpriteIdentity::random(&mut rng);
        if identities.iter().all(|o| o.separation(&cand) >= IDENTITY_SEPARATION) {
            let probe = ExpressionReach::new(&cand, spec.side)?;
            if reach.iter().all(|r| r.separated_from(&probe)) {
                identities.push(cand);
                reach.push(probe);
            }
        }
    }
    let render = |id: usize, ex: SpriteExpression| -> Result<SpriteRecord> {
        let (image, mask) = sprite_render(&identities[id], &ex, spec.side)?;
        Ok(SpriteRecord {
            identity: id,
            expression: ex,
            image,
            mask,
        })
    };
    let mut source = Vec::with_capacity(n * spec.n_expressions);
    let mut target = Vec::with_capacity(n * spec.n_expressions);
    for id in 0..n {
        for _ in 0..spec.n_expressions {
            source.push(render(id, SpriteExpression::random(&mut rng))?);
        }
    }
    for id in n..2 * n {
        for _ in 0..spec.n_expressions {
            target.push(render(id, SpriteExpression::random(&mut rng))?);
        }
    }
    let mixed = (spec.mix_fraction * target.len() as f64).round() as usize;
    for k in 0..mixed {
        let slot = k * target.len() / mixed.max(1);
        let id = rng.random_range(0..n);
        target[slot] = render(id, SpriteExpression::random(&mut rng))?;
    }
    let neutral = (0..2 * n)
        .map(|id| sprite_render(&identities[id], &SpriteExpression::NEUTRAL, spec.side).map(|r| r.0))
        .collect::<Result<Vec<_>>>()?;
    let mut floor = f64::INFINITY;
    for i in 0..neutral.len() {
        for j in i + 1..neutral.len() {
            floor = floor.min(oracle_distance(&neutral[i], &neutral[j])?);
        }
    }
    Ok(Corpus {
        spec,
        identities,
        source,
        target,
        neutral: neutral.into_iter().take(n).collect(),
        separation_floor: floor,
    })
}

/// Paths written by [`Corpus::write`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusPaths {
    pub source_manifest: PathBuf,
    pub target_manifest: PathBuf,
    /// `identity<TAB>neutral image` lines.
    pub neutral_table: PathBuf,
    pub identities: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GathError + '_ {
    move |e| GathError::io(path, e)
}

impl Corpus {
    fn loaded(&self, records: &[SpriteRecord], role: Role) -> Result<LoadedSet> {
        let records = records
            .iter()
            .map(|r| {
                Ok(LoadedRecord {
                    image: r.image.clone(),
                    identity: Some(IdentityLabel(r.identity)),
                    au: Some(r.expression.to_au(self.spec.au_dim)?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LoadedSet {
            role,
            side: self.spec.side,
            records,
        })
    }

    /// The source stills as an in-memory training set.
    pub fn source_set(&self) -> Result<LoadedSet> {
        self.loaded(&self.source, Role::Source)
    }

    pub fn target_set(&self) -> Result<LoadedSet> {
        self.loaded(&self.target, Role::Target)
    }

    /// Write PNGs, AU files, masks, manifests, the neutral table and an
    /// identity sidecar under `dir`. Manifests use paths relative to `dir`.
    pub fn write(&self, dir: &Path) -> Result<CorpusPaths> {
        for sub in ["images", "au", "masks", "neutral"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(io_err(&p))?;
        }
        let write_set = |records: &[SpriteRecord], prefix: &str, role: Role| -> Result<DatasetManifest> {
            let mut out = Vec::with_capacity(records.len());
            for (k, r) in records.iter().enumerate() {
                let stem = format!("{prefix}_{:03}_{k:05}", r.identity);
                let image = PathBuf::from(format!("images/{stem}.png"));
                let au = PathBuf::from(format!("au/{stem}.txt"));
                let mask = PathBuf::from(format!("masks/{stem}.png"));
                r.image.to_raster().save_png(&dir.join(&image))?;
                let au_text = r.expression.to_au(self.spec.au_dim)?.to_text();
                std::fs::write(dir.join(&au), au_text).map_err(io_err(&dir.join(&au)))?;
                crate::data::save_mask(&r.mask, &dir.join(&mask))?;
                out.push(ManifestRecord {
                    image,
                    identity: Some(IdentityLabel(r.identity)),
                    au_path: Some(au),
                    mask_path: Some(mask),
                });
            }
            Ok(DatasetManifest { role, records: out })
        };
        let source = write_set(&self.source, "src", Role::Source)?;
        let target = write_set(&self.target, "tgt", Role::Target)?;
        let paths = CorpusPaths {
            source_manifest: dir.join("source.tsv"),
            target_manifest: dir.join("target.tsv"),
            neutral_table: dir.join("neutral.tsv"),
            identities: dir.join("identities.json"),
        };
        std::fs::write(&paths.source_manifest, source.to_text()).map_err(io_err(&paths.source_manifest))?;
        std::fs::write(&paths.target_manifest, target.to_text()).map_err(io_err(&paths.target_manifest))?;
        let mut table = String::new();
        for (id, img) in self.neutral.iter().enumerate() {
            let rel = format!("neutral/id_{id:03}.png");
            img.to_raster().save_png(&dir.join(&rel))?;
            table.push_str(&format!("{id}\t{rel}\n"));
        }
        std::fs::write(&paths.neutral_table, table).map_err(io_err(&paths.neutral_table))?;
        let sidecar = serde_json::json!({
            "spec": self.spec,
            "source_identities": &self.identities[..self.spec.n_identities],
            "target_identities": &self.identities[self.spec.n_identities..],
            "separation_floor": self.separation_floor,
        });
        let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
        std::fs::write(&paths.identities, text).map_err(io_err(&paths.identities))?;
        Ok(paths)
    }
}

/// Read a neutral table written by [`Corpus::write`]: label → image.
pub fn load_neutral_table(path: &Path, side: usize) -> Result<Vec<(IdentityLabel, ImageTensor)>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse = |msg: &str| GathError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: msg.to_string(),
        };
        let (id, img) = line.split_once('\t').ok_or_else(|| parse("expected `identity<TAB>image`"))?;
        let id: usize = id.trim().parse().map_err(|_| parse("identity is not an integer"))?;
        out.push((IdentityLabel(id), crate::data::load_image(&base.join(img.trim()), side)?));
    }
    Ok(out)
}
