//! Pixel MAE/RMSE (full and masked, raw and CLAHE) and AU-intensity RMSE
//! for same-subject and cross-subject synthesis.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{load_image, load_mask, AuVector, DatasetManifest, IdentityLabel, ImageTensor, Mask, RasterImage};
use crate::error::{GathError, Result};
use crate::networks::{AuEstimator, Generator};
use crate::postprocess::{clahe, denormalize, PostprocessConfig};
use crate::training::Checkpoint;

/// Anything mapping (portrait, AU vector) to a portrait.
pub trait Synthesizer {
    fn synthesize(&self, x: &ImageTensor, e: &AuVector) -> Result<ImageTensor>;
}

impl Synthesizer for Generator<f32> {
    fn synthesize(&self, x: &ImageTensor, e: &AuVector) -> Result<ImageTensor> {
        let out = self.generate(&x.to_batch(), &e.to_batch())?;
        let (h, w) = (x.height(), x.width());
        ImageTensor::clamped(out.reshape(&[3, h, w])?)
    }
}

/// Per-channel error sums over one or more image pairs, in 8-bit levels.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ErrorSums {
    abs: [f64; 3],
    sq: [f64; 3],
    pixels: usize,
}

impl ErrorSums {
    pub fn add(&mut self, other: &ErrorSums) {
        for c in 0..3 {
            self.abs[c] += other.abs[c];
            self.sq[c] += other.sq[c];
        }
        self.pixels += other.pixels;
    }

    pub fn errors(&self) -> PixelErrors {
        if self.pixels == 0 {
            return PixelErrors::default();
        }
        let n = self.pixels as f64;
        let abs: f64 = self.abs.iter().sum();
        let sq: f64 = self.sq.iter().sum();
        PixelErrors {
            mae: abs / (3.0 * n),
            rmse: (sq / (3.0 * n)).sqrt(),
            mae_channel_sum: abs / n,
            rmse_channel_sum: self.sq.iter().map(|s| (s / n).sqrt()).sum(),
            pixels: self.pixels,
        }
    }
}

/// `mae`/`rmse` average over every channel of every counted pixel. The
/// `_channel_sum` variants add up the per-channel MAE (resp. RMSE) of the
/// three channels; the summed MAE is exactly 3× `mae`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PixelErrors {
    pub mae: f64,
    pub rmse: f64,
    pub mae_channel_sum: f64,
    pub rmse_channel_sum: f64,
    pub pixels: usize,
}

pub fn error_sums(x: &RasterImage, y: &RasterImage, mask: Option<&Mask>) -> Result<ErrorSums> {
    if (x.width, x.height) != (y.width, y.height) {
        return Err(GathError::Shape(format!(
            "images are {}x{} and {}x{}",
            x.width, x.height, y.width, y.height
        )));
    }
    if let Some(m) = mask {
        if (m.width, m.height) != (x.width, x.height) {
            return Err(GathError::Shape(format!(
                "mask is {}x{}, images are {}x{}",
                m.width, m.height, x.width, x.height
            )));
        }
        if m.count() == 0 {
            return Err(GathError::Precondition("empty mask".into()));
        }
    }
    let mut s = ErrorSums::default();
    for (i, (a, b)) in x.data.chunks_exact(3).zip(y.data.chunks_exact(3)).enumerate() {
        if mask.is_some_and(|m| !m.data[i]) {
            continue;
        }
        for c in 0..3 {
            let d = a[c] as f64 - b[c] as f64;
            s.abs[c] += d.abs();
            s.sq[c] += d * d;
        }
        s.pixels += 1;
    }
    Ok(s)
}

/// MAE and RMSE between two rasters, optionally restricted to `mask`.
pub fn pixel_errors(x: &RasterImage, y: &RasterImage, mask: Option<&Mask>) -> Result<PixelErrors> {
    Ok(error_sums(x, y, mask)?.errors())
}

/// Root mean squared error over all frames and dimensions.
pub fn au_rmse<P: AsRef<[f32]>, G: AsRef<[f32]>>(pred: &[P], gt: &[G]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(GathError::Arity {
            expected: gt.len(),
            found: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(GathError::Precondition("au_rmse of an empty sequence".into()));
    }
    let mut sq = 0.0;
    let mut n = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        let (p, g) = (p.as_ref(), g.as_ref());
        if p.len() != g.len() {
            return Err(GathError::Arity {
                expected: g.len(),
                found: p.len(),
            });
        }
        for (a, b) in p.iter().zip(g) {
            let d = *a as f64 - *b as f64;
            sq += d * d;
        }
        n += p.len();
    }
    Ok((sq / n as f64).sqrt())
}

/// Centred ellipse whose axes span 60% of the height and of the width.
pub fn ellipse_mask(width: usize, height: usize) -> Mask {
    let (ry, rx) = (0.3 * height as f64, 0.3 * width as f64);
    let (cy, cx) = (height as f64 / 2.0, width as f64 / 2.0);
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let dy = (y as f64 + 0.5 - cy) / ry;
            let dx = (x as f64 + 0.5 - cx) / rx;
            data.push(dy * dy + dx * dx <= 1.0);
        }
    }
    Mask { width, height, data }
}

/// A frame available to the evaluator.
#[derive(Clone, Debug)]
pub struct EvalRecord {
    pub image: ImageTensor,
    pub identity: IdentityLabel,
    pub au: AuVector,
    pub mask: Option<Mask>,
}

/// The record's own mask, or the centred ellipse fallback.
pub fn face_mask(record: &EvalRecord) -> Mask {
    record
        .mask
        .clone()
        .unwrap_or_else(|| ellipse_mask(record.image.width(), record.image.height()))
}

/// Load every record of a manifest that carries both an identity and an AU
/// file, with its mask when one is listed.
pub fn load_eval_records(manifest: &DatasetManifest, side: usize, au_dim: usize) -> Result<Vec<EvalRecord>> {
    let mut out = Vec::new();
    for (i, r) in manifest.records.iter().enumerate() {
        let (Some(identity), Some(au_path)) = (r.identity, r.au_path.as_deref()) else {
            return Err(GathError::Schema(format!(
                "evaluation record {} needs an identity and an AU file",
                i + 1
            )));
        };
        out.push(EvalRecord {
            image: load_image(&r.image, side)?,
            identity,
            au: crate::data::load_au_vector(au_path, au_dim)?,
            mask: r.mask_path.as_deref().map(|p| load_mask(p, side)).transpose()?,
        });
    }
    Ok(out)
}

/// A source portrait and the ordered frames whose AUs drive it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPair {
    pub source: usize,
    pub targets: Vec<usize>,
    /// Source and targets show the same subject.
    pub intra: bool,
}

/// Group records by identity (first-appearance order). Each identity with
/// at least two frames yields an intra pair: its first frame drives from
/// the rest. Inter pairs take the first frame of identity `k` as source
/// and all frames of identity `k + 1` (cyclically) as targets.
pub fn build_pairs(records: &[EvalRecord]) -> (Vec<EvalPair>, Vec<EvalPair>) {
    let mut groups: Vec<(IdentityLabel, Vec<usize>)> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        match groups.iter_mut().find(|(id, _)| *id == r.identity) {
            Some((_, v)) => v.push(i),
            None => groups.push((r.identity, vec![i])),
        }
    }
    let intra = groups
        .iter()
        .filter(|(_, v)| v.len() >= 2)
        .map(|(_, v)| EvalPair {
            source: v[0],
            targets: v[1..].to_vec(),
            intra: true,
        })
        .collect();
    let inter = if groups.len() < 2 {
        Vec::new()
    } else {
        (0..groups.len())
            .map(|k| EvalPair {
                source: groups[k].1[0],
                targets: groups[(k + 1) % groups.len()].1.clone(),
                intra: false,
            })
            .collect()
    };
    (intra, inter)
}

/// Error pair for one evaluation condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionMetrics {
    pub masked: bool,
    pub clahe: bool,
    #[serde(flatten)]
    pub errors: PixelErrors,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub pairs: usize,
    pub frames: usize,
    /// Full/masked × raw/CLAHE; empty for cross-subject evaluation.
    pub conditions: Vec<ConditionMetrics>,
    /// Oracle AUs of the synthesis against oracle AUs of the driving frame.
    pub au_rmse: Option<f64>,
    /// Oracle AUs of the synthesis against the AU vector it was given.
    pub au_rmse_conditioning: Option<f64>,
}

impl MetricsReport {
    pub fn condition(&self, masked: bool, clahe: bool) -> Option<&PixelErrors> {
        self.conditions
            .iter()
            .find(|c| c.masked == masked && c.clahe == clahe)
            .map(|c| &c.errors)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Rows: region × CLAHE; columns: per-channel and channel-summed errors.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "pairs {}  frames {}", self.pairs, self.frames);
        if !self.conditions.is_empty() {
            let _ = writeln!(
                s,
                "{:<24} {:>9} {:>9} {:>12} {:>12}",
                "condition", "MAE", "RMSE", "MAE(sum)", "RMSE(sum)"
            );
            for c in &self.conditions {
                let name = format!(
                    "{}, {}",
                    if c.masked { "mask" } else { "full image" },
                    if c.clahe { "with CLAHE" } else { "raw" }
                );
                let e = &c.errors;
                let _ = writeln!(
                    s,
                    "{name:<24} {:>9.3} {:>9.3} {:>12.3} {:>12.3}",
                    e.mae, e.rmse, e.mae_channel_sum, e.rmse_channel_sum
                );
            }
        }
        if let Some(v) = self.au_rmse {
            let _ = writeln!(s, "AU RMSE (vs oracle on driving frame) {v:.4}");
        }
        if let Some(v) = self.au_rmse_conditioning {
            let _ = writeln!(s, "AU RMSE (vs conditioning vector)     {v:.4}");
        }
        s
    }
}

const CONDITIONS: [(bool, bool); 4] = [(false, false), (false, true), (true, false), (true, true)];

fn oracle_au(oracle: &AuEstimator<f32>, x: &ImageTensor) -> Result<Vec<f32>> {
    Ok(oracle.predict(&x.to_batch())?.data().to_vec())
}

fn check_pair(records: &[EvalRecord], p: &EvalPair) -> Result<()> {
    for &i in std::iter::once(&p.source).chain(&p.targets) {
        if i >= records.len() {
            return Err(GathError::Range {
                index: i,
                value: records.len() as f64,
            });
        }
    }
    Ok(())
}

/// Drive each intra pair's source with every target frame's AUs and compare
/// the synthesis with that frame under all four pixel conditions, plus AU
/// RMSE through `oracle`. CLAHE is applied to the synthesis only.
pub fn evaluate_intra(
    gen: &dyn Synthesizer,
    records: &[EvalRecord],
    pairs: &[EvalPair],
    oracle: &AuEstimator<f32>,
    post: &PostprocessConfig,
) -> Result<MetricsReport> {
    let mut sums = [ErrorSums::default(); 4];
    let (mut pred, mut gt, mut given) = (Vec::new(), Vec::new(), Vec::new());
    let mut frames = 0;
    for p in pairs {
        check_pair(records, p)?;
        let src = &records[p.source];
        if !p.intra || p.targets.iter().any(|&t| records[t].identity != src.identity) {
            return Err(GathError::Precondition(format!(
                "pair with source {} is not a same-subject pair",
                p.source
            )));
        }
        for &t in &p.targets {
            let tgt = &records[t];
            let synth = gen.synthesize(&src.image, &tgt.au)?;
            let raw = denormalize(&synth);
            let eq = clahe(&raw, post);
            let truth = denormalize(&tgt.image);
            let mask = face_mask(tgt);
            for (k, (masked, with_clahe)) in CONDITIONS.iter().enumerate() {
                let img = if *with_clahe { &eq } else { &raw };
                sums[k].add(&error_sums(img, &truth, masked.then_some(&mask))?);
            }
            pred.push(oracle_au(oracle, &synth)?);
            gt.push(oracle_au(oracle, &tgt.image)?);
            given.push(tgt.au.clone());
            frames += 1;
        }
    }
    let conditions = if frames == 0 {
        Vec::new()
    } else {
        CONDITIONS
            .iter()
            .zip(&sums)
            .map(|(&(masked, clahe), s)| ConditionMetrics {
                masked,
                clahe,
                errors: s.errors(),
            })
            .collect()
    };
    Ok(MetricsReport {
        pairs: pairs.len(),
        frames,
        conditions,
        au_rmse: (frames > 0).then(|| au_rmse(&pred, &gt)).transpose()?,
        au_rmse_conditioning: (frames > 0).then(|| au_rmse(&pred, &given)).transpose()?,
    })
}

/// Cross-subject pairs: AU RMSE only, since no pixel ground truth exists.
pub fn evaluate_inter(
    gen: &dyn Synthesizer,
    records: &[EvalRecord],
    pairs: &[EvalPair],
    oracle: &AuEstimator<f32>,
) -> Result<MetricsReport> {
    let (mut pred, mut gt, mut given) = (Vec::new(), Vec::new(), Vec::new());
    for p in pairs {
        check_pair(records, p)?;
        let src = &records[p.source];
        for &t in &p.targets {
            let tgt = &records[t];
            let synth = gen.synthesize(&src.image, &tgt.au)?;
            pred.push(oracle_au(oracle, &synth)?);
            gt.push(oracle_au(oracle, &tgt.image)?);
            given.push(tgt.au.clone());
        }
    }
    let frames = pred.len();
    Ok(MetricsReport {
        pairs: pairs.len(),
        frames,
        conditions: Vec::new(),
        au_rmse: (frames > 0).then(|| au_rmse(&pred, &gt)).transpose()?,
        au_rmse_conditioning: (frames > 0).then(|| au_rmse(&pred, &given)).transpose()?,
    })
}

/// Same-subject and cross-subject reports for a checkpoint's generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub intra: MetricsReport,
    pub inter: MetricsReport,
}

impl EvaluationReport {
    pub fn to_table(&self) -> String {
        format!(
            "intra-class synthesis\n{}\ninter-class synthesis\n{}",
            self.intra.to_table(),
            self.inter.to_table()
        )
    }
}

pub fn evaluate_checkpoint(
    ck: &Checkpoint,
    records: &[EvalRecord],
    oracle: &AuEstimator<f32>,
    post: &PostprocessConfig,
) -> Result<EvaluationReport> {
    let gen = ck.build_generator()?;
    let (intra, inter) = build_pairs(records);
    Ok(EvaluationReport {
        intra: evaluate_intra(&gen, records, &intra, oracle, post)?,
        inter: evaluate_inter(&gen, records, &inter, oracle)?,
    })
}

/// Write `report.json` and `report.txt` into `dir`.
pub fn write_report(report: &EvaluationReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| GathError::io(dir, e))?;
    let json = dir.join("report.json");
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(&json, text).map_err(|e| GathError::io(&json, e))?;
    let txt = dir.join("report.txt");
    std::fs::write(&txt, report.to_table()).map_err(|e| GathError::io(&txt, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ellipse_spans_sixty_percent() {
        let m = ellipse_mask(100, 50);
        let row: Vec<bool> = (0..100).map(|x| m.data[25 * 100 + x]).collect();
        assert_eq!(row.iter().filter(|&&b| b).count(), 60);
        let col: Vec<bool> = (0..50).map(|y| m.data[y * 100 + 50]).collect();
        assert_eq!(col.iter().filter(|&&b| b).count(), 30);
    }

    #[test]
    fn channel_summed_variants_add_channels() {
        let a = RasterImage::filled(2, 1, [10, 20, 30]);
        let b = RasterImage::filled(2, 1, [12, 20, 26]);
        let e = pixel_errors(&a, &b, None).unwrap();
        assert!((e.mae_channel_sum - 3.0 * e.mae).abs() < 1e-12);
        // Per-channel RMSEs are 2, 0 and 4.
        assert!((e.rmse_channel_sum - 6.0).abs() < 1e-12);
        assert!(e.mae_channel_sum <= e.rmse_channel_sum);
    }
}
