//! Terms of the composite objective and the two alternating update objectives.
//!
//! Every term is normalized by element count and averaged over the batch so the
//! loss weights keep their meaning across resolutions and batch sizes. The raw
//! sums are available where tests need them (`tv_loss_sum`, `au_loss_sum`).

use serde::{Deserialize, Serialize};

use crate::error::{GathError, Result};
use crate::tensor::{Real, Tensor};

/// Form of the generator's adversarial term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdvGForm {
    /// `-mean(D(G(x))²)`, verbatim from the generator update objective.
    #[default]
    Paper,
    /// `mean((1 - D(G(x)))²)`, the usual least-squares generator target.
    Lsgan,
}

impl std::str::FromStr for AdvGForm {
    type Err = GathError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(AdvGForm::Paper),
            "lsgan" => Ok(AdvGForm::Lsgan),
            other => Err(GathError::Config(format!(
                "adv_g_form must be `paper` or `lsgan`, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for AdvGForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AdvGForm::Paper => "paper",
            AdvGForm::Lsgan => "lsgan",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_rec: f64,
    pub lambda_adv: f64,
    pub lambda_cls: f64,
    pub lambda_tv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_rec: 1.0,
            lambda_adv: 0.05,
            lambda_cls: 0.05,
            lambda_tv: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_rec, self.lambda_adv, self.lambda_cls, self.lambda_tv];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(GathError::Config(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }
}

/// Every term of one training iteration. `adv_g` carries its sign.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub au: f64,
    pub rec: f64,
    pub adv_d: f64,
    pub adv_g: f64,
    pub cls_real: f64,
    pub cls_fake: f64,
    pub tv: f64,
    pub total_dc: f64,
    pub total_g: f64,
}

impl LossReport {
    /// Fill `total_dc` and `total_g` from the parts.
    pub fn with_totals(mut self, w: &LossWeights) -> Self {
        self.total_dc = dc_objective(&self, w);
        self.total_g = g_objective(&self, w);
        self
    }

    /// Name of the first non-finite term, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("au", self.au),
            ("rec", self.rec),
            ("adv_d", self.adv_d),
            ("adv_g", self.adv_g),
            ("cls_real", self.cls_real),
            ("cls_fake", self.cls_fake),
            ("tv", self.tv),
            ("total_dc", self.total_dc),
            ("total_g", self.total_g),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(k, _)| k)
    }
}

/// Discriminator–classifier objective: adversarial term on real and fake plus
/// classification of real samples only.
pub fn dc_objective(parts: &LossReport, w: &LossWeights) -> f64 {
    w.lambda_adv * parts.adv_d + w.lambda_cls * parts.cls_real
}

/// Generator objective.
pub fn g_objective(parts: &LossReport, w: &LossWeights) -> f64 {
    parts.au
        + w.lambda_rec * parts.rec
        + w.lambda_tv * parts.tv
        + w.lambda_adv * parts.adv_g
        + w.lambda_cls * parts.cls_fake
}

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(GathError::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Squared L2 error of AU predictions `[N, A]`, summed over AUs, averaged over the batch.
pub fn aue_training_loss<T: Real>(pred: &Tensor<T>, e_gt: &Tensor<T>) -> Result<T> {
    if pred.shape() != e_gt.shape() {
        let found = pred.shape().last().copied().unwrap_or(0);
        let expected = e_gt.shape().last().copied().unwrap_or(0);
        return Err(GathError::Arity { expected, found });
    }
    Ok(kernels::sq_err_sample_sum(pred, e_gt))
}

/// Expressiveness distance between two AU feature maps (element-normalized).
pub fn au_loss<T: Real>(f_y: &Tensor<T>, f_x: &Tensor<T>) -> Result<T> {
    same_shape(f_y, f_x, "au_loss")?;
    Ok(kernels::sq_err_elem_mean(f_y, f_x))
}

/// Unnormalized form of [`au_loss`]: per-sample squared L2, batch-averaged.
pub fn au_loss_sum<T: Real>(f_y: &Tensor<T>, f_x: &Tensor<T>) -> Result<T> {
    same_shape(f_y, f_x, "au_loss")?;
    Ok(kernels::sq_err_sample_sum(f_y, f_x))
}

/// Mean absolute pixel difference.
pub fn rec_loss<T: Real>(x_src: &Tensor<T>, x_tgt: &Tensor<T>) -> Result<T> {
    same_shape(x_src, x_tgt, "rec_loss")?;
    Ok(kernels::abs_err_mean(x_src, x_tgt))
}

/// `(loss_d, loss_g)` from discriminator scores on real and fake batches.
pub fn adv_losses<T: Real>(d_real: &[T], d_fake: &[T], form: AdvGForm) -> (T, T) {
    let mean = |v: &[T], f: &dyn Fn(T) -> T| -> T {
        if v.is_empty() {
            T::zero()
        } else {
            v.iter().map(|&x| f(x)).sum::<T>() / T::lit(v.len() as f64)
        }
    };
    let loss_d = mean(d_real, &|x| (T::one() - x) * (T::one() - x)) + mean(d_fake, &|x| x * x);
    let loss_g = match form {
        AdvGForm::Paper => -mean(d_fake, &|x| x * x),
        AdvGForm::Lsgan => mean(d_fake, &|x| (T::one() - x) * (T::one() - x)),
    };
    (loss_d, loss_g)
}

/// `(loss_c, loss_g)`: cross-entropy of real logits against their labels and
/// of fake logits against the labels of the source subjects.
pub fn cls_losses<T: Real>(
    logits_real: &Tensor<T>,
    labels_real: &[usize],
    logits_fake: &Tensor<T>,
    labels_fake: &[usize],
) -> Result<(T, T)> {
    check_labels(logits_real, labels_real)?;
    check_labels(logits_fake, labels_fake)?;
    Ok((
        kernels::cross_entropy(logits_real, labels_real),
        kernels::cross_entropy(logits_fake, labels_fake),
    ))
}

pub(crate) fn check_labels<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<()> {
    let (n, c) = logits.dims2();
    if n != labels.len() {
        return Err(GathError::Shape(format!("{} labels for {} logit rows", labels.len(), n)));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(GathError::Label { label: bad, classes: c });
    }
    if !logits.all_finite() {
        return Err(GathError::Precondition("non-finite logits".into()));
    }
    Ok(())
}

/// Total variation normalized by `C·H·W` and averaged over the batch.
/// Images narrower than 2 pixels in both directions yield 0 with a warning.
pub fn tv_loss<T: Real>(x: &Tensor<T>) -> T {
    let (_, _, h, w) = x.dims4();
    if h < 2 && w < 2 {
        log::warn!("tv_loss on degenerate {h}x{w} image");
    }
    kernels::tv_mean(x)
}

/// Raw total-variation sum over the whole batch.
pub fn tv_loss_sum<T: Real>(x: &Tensor<T>) -> T {
    kernels::tv_sum(x)
}

/// Scalar kernels and their adjoints, shared by the value API and the tape.
pub(crate) mod kernels {
    use crate::tensor::{Real, Tensor};

    fn batch(a: &Tensor<impl Real>) -> usize {
        a.shape().first().copied().unwrap_or(1).max(1)
    }

    pub fn sq_err_sample_sum<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> T {
        let s: T = a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y) * (x - y)).sum();
        s / T::lit(batch(a) as f64)
    }

    pub fn sq_err_sample_sum_grad<T: Real>(a: &Tensor<T>, b: &Tensor<T>, g: T) -> Tensor<T> {
        let k = T::lit(2.0) * g / T::lit(batch(a) as f64);
        Tensor::from_fn(a.shape(), |i| k * (a.data()[i] - b.data()[i]))
    }

    pub fn sq_err_elem_mean<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> T {
        let s: T = a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y) * (x - y)).sum();
        s / T::lit(a.len().max(1) as f64)
    }

    pub fn sq_err_elem_mean_grad<T: Real>(a: &Tensor<T>, b: &Tensor<T>, g: T) -> Tensor<T> {
        let k = T::lit(2.0) * g / T::lit(a.len().max(1) as f64);
        Tensor::from_fn(a.shape(), |i| k * (a.data()[i] - b.data()[i]))
    }

    pub fn abs_err_mean<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> T {
        let s: T = a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y).abs()).sum();
        s / T::lit(a.len().max(1) as f64)
    }

    pub fn abs_err_mean_grad<T: Real>(a: &Tensor<T>, b: &Tensor<T>, g: T) -> Tensor<T> {
        let k = g / T::lit(a.len().max(1) as f64);
        Tensor::from_fn(a.shape(), |i| {
            let d = a.data()[i] - b.data()[i];
            if d > T::zero() {
                k
            } else if d < T::zero() {
                -k
            } else {
                T::zero()
            }
        })
    }

    pub fn tv_sum<T: Real>(x: &Tensor<T>) -> T {
        let (n, c, h, w) = x.dims4();
        let d = x.data();
        let mut s = T::zero();
        for plane in 0..n * c {
            let p = &d[plane * h * w..(plane + 1) * h * w];
            for i in 0..h {
                for j in 0..w {
                    let v = p[i * w + j];
                    if j + 1 < w {
                        let dx = p[i * w + j + 1] - v;
                        s += dx * dx;
                    }
                    if i + 1 < h {
                        let dy = p[(i + 1) * w + j] - v;
                        s += dy * dy;
                    }
                }
            }
        }
        s
    }

    pub fn tv_mean<T: Real>(x: &Tensor<T>) -> T {
        tv_sum(x) / T::lit(x.len().max(1) as f64)
    }

    pub fn tv_mean_grad<T: Real>(x: &Tensor<T>, g: T) -> Tensor<T> {
        let (n, c, h, w) = x.dims4();
        let k = T::lit(2.0) * g / T::lit(x.len().max(1) as f64);
        let d = x.data();
        let mut out = Tensor::zeros(x.shape());
        let o = out.data_mut();
        for plane in 0..n * c {
            let base = plane * h * w;
            for i in 0..h {
                for j in 0..w {
                    let idx = base + i * w + j;
                    if j + 1 < w {
                        let dx = d[idx + 1] - d[idx];
                        o[idx + 1] += k * dx;
                        o[idx] -= k * dx;
                    }
                    if i + 1 < h {
                        let dy = d[idx + w] - d[idx];
                        o[idx + w] += k * dy;
                        o[idx] -= k * dy;
                    }
                }
            }
        }
        out
    }

    pub fn target_sq_mean<T: Real>(x: &Tensor<T>, t: T) -> T {
        let s: T = x.data().iter().map(|&v| (v - t) * (v - t)).sum();
        s / T::lit(x.len().max(1) as f64)
    }

    pub fn target_sq_mean_grad<T: Real>(x: &Tensor<T>, t: T, g: T) -> Tensor<T> {
        let k = T::lit(2.0) * g / T::lit(x.len().max(1) as f64);
        x.map(|v| k * (v - t))
    }

    fn log_softmax_row<T: Real>(row: &[T]) -> Vec<T> {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
        row.iter().map(|&v| v - lse).collect()
    }

    pub fn cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> T {
        let (n, c) = logits.dims2();
        let mut s = T::zero();
        for (row, &l) in logits.data().chunks(c).zip(labels) {
            s -= log_softmax_row(row)[l];
        }
        s / T::lit(n.max(1) as f64)
    }

    pub fn cross_entropy_grad<T: Real>(logits: &Tensor<T>, labels: &[usize], g: T) -> Tensor<T> {
        let (n, c) = logits.dims2();
        let k = g / T::lit(n.max(1) as f64);
        let mut out = Tensor::zeros(logits.shape());
        for ((row, orow), &l) in logits.data().chunks(c).zip(out.data_mut().chunks_mut(c)).zip(labels) {
            for (j, (o, lp)) in orow.iter_mut().zip(log_softmax_row(row)).enumerate() {
                let onehot = if j == l { T::one() } else { T::zero() };
                *o = k * (lp.exp() - onehot);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(shape: &[usize], v: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, v).unwrap()
    }

    #[test]
    fn aue_loss_cases() {
        let gt = Tensor::from_fn(&[1, 46], |i| (i as f64) / 46.0);
        assert_eq!(aue_training_loss(&gt, &gt).unwrap(), 0.0);
        let pred = gt.map(|v| v + 0.1);
        assert!((aue_training_loss(&pred, &gt).unwrap() - 0.46).abs() < 1e-9);
        let one = t(&[1, 1], vec![1.0]);
        let zero = t(&[1, 1], vec![0.0]);
        assert_eq!(aue_training_loss(&zero, &one).unwrap(), 1.0);
        let short = Tensor::<f64>::zeros(&[1, 45]);
        assert!(matches!(
            aue_training_loss(&short, &gt),
            Err(GathError::Arity { expected: 46, found: 45 })
        ));
    }

    #[test]
    fn au_loss_normalized_and_raw() {
        let fy = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        let fx = fy.map(|v| v + 1.0);
        assert_eq!(au_loss(&fy, &fy).unwrap(), 0.0);
        assert!((au_loss(&fy, &fx).unwrap() - 1.0).abs() < 1e-12);
        assert!((au_loss_sum(&fy, &fx).unwrap() - 4.0).abs() < 1e-12);
        assert!(au_loss(&fy, &Tensor::zeros(&[1, 2, 2, 2])).is_err());
    }

    #[test]
    fn rec_loss_cases() {
        let a = t(&[1, 1, 2, 2], vec![0.0, 0.0, 0.0, 0.0]);
        let b = t(&[1, 1, 2, 2], vec![1.0, -1.0, 0.0, 0.0]);
        assert_eq!(rec_loss(&a, &a).unwrap(), 0.0);
        assert!((rec_loss(&a, &b).unwrap() - 0.5).abs() < 1e-12);
        assert!((rec_loss(&a, &a.map(|v| v + 0.5)).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn adversarial_cases() {
        assert_eq!(adv_losses(&[1.0], &[0.0], AdvGForm::Paper).0, 0.0);
        assert_eq!(adv_losses(&[0.0], &[1.0], AdvGForm::Paper).0, 2.0);
        assert!((adv_losses(&[1.0f64], &[0.5], AdvGForm::Paper).1 + 0.25).abs() < 1e-12);
        assert!((adv_losses(&[1.0f64], &[0.5], AdvGForm::Lsgan).1 - 0.25).abs() < 1e-12);
    }

    #[test]
    fn classification_cases() {
        let uniform4 = Tensor::<f64>::zeros(&[1, 4]);
        let (c, g) = cls_losses(&uniform4, &[1], &uniform4, &[3]).unwrap();
        assert!((c - 4f64.ln()).abs() < 1e-12 && (g - 4f64.ln()).abs() < 1e-12);
        let uniform2 = Tensor::<f64>::zeros(&[1, 2]);
        let (c, _) = cls_losses(&uniform2, &[0], &uniform2, &[0]).unwrap();
        assert!((c - 2f64.ln()).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 20.0, 60.0] {
            let l = t(&[1, 3], vec![margin, 0.0, 0.0]);
            let (c, _) = cls_losses(&l, &[0], &l, &[0]).unwrap();
            assert!(c < prev);
            prev = c;
        }
        assert!(prev < 1e-20);
        assert!(matches!(
            cls_losses(&uniform2, &[2], &uniform2, &[0]),
            Err(GathError::Label { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn total_variation_cases() {
        let c = Tensor::<f64>::full(&[1, 3, 4, 4], 0.3);
        assert_eq!(tv_loss(&c), 0.0);
        let x = t(&[1, 1, 2, 2], vec![0.0, 1.0, 1.0, 0.0]);
        assert!((tv_loss_sum(&x) - 4.0).abs() < 1e-12);
        assert!((tv_loss(&x) - 1.0).abs() < 1e-12);
        let (h, w) = (5usize, 7usize);
        let ramp = Tensor::from_fn(&[1, 1, h, w], |i| (i % w) as f64 / w as f64);
        let expected = h as f64 * (w as f64 - 1.0) / (w * w) as f64;
        assert!((tv_loss_sum(&ramp) - expected).abs() < 1e-12);
        assert_eq!(tv_loss(&Tensor::<f64>::full(&[1, 3, 1, 1], 0.7)), 0.0);
    }

    #[test]
    fn objective_arithmetic() {
        let w = LossWeights::default();
        let zero = LossWeights {
            lambda_adv: 0.0,
            lambda_cls: 0.0,
            ..w
        };
        let parts = LossReport {
            adv_d: 2.0,
            cls_real: 2f64.ln(),
            ..Default::default()
        };
        assert_eq!(dc_objective(&parts, &zero), 0.0);
        assert!((dc_objective(&parts, &w) - (0.1 + 0.05 * 2f64.ln())).abs() < 1e-12);
        assert!((dc_objective(&parts, &w) - 0.1347).abs() < 1e-4);
        assert_eq!(g_objective(&LossReport::default(), &w), 0.0);
        let parts = LossReport {
            au: 1.0,
            rec: 0.5,
            tv: 0.1,
            adv_g: adv_losses(&[1.0], &[0.5], AdvGForm::Paper).1,
            cls_fake: 2f64.ln(),
            ..Default::default()
        };
        let expected = 1.0 + 0.5 + 0.1 - 0.05 * 0.25 + 0.05 * 2f64.ln();
        assert!((g_objective(&parts, &w) - expected).abs() < 1e-12);
        assert!((g_objective(&parts, &w) - 1.6222).abs() < 1e-4);
        let r = parts.with_totals(&w);
        assert_eq!(r.total_g, g_objective(&parts, &w));
    }

    proptest! {
        #[test]
        fn tv_scales_quadratically(vals in prop::collection::vec(-1.0f64..1.0, 18), alpha in -3.0f64..3.0) {
            let x = t(&[1, 2, 3, 3], vals);
            let scaled = x.map(|v| alpha * v);
            let lhs = tv_loss(&scaled);
            let rhs = alpha * alpha * tv_loss(&x);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
        }

        #[test]
        fn au_loss_is_symmetric(a in prop::collection::vec(-2.0f64..2.0, 12), b in prop::collection::vec(-2.0f64..2.0, 12)) {
            let fa = t(&[1, 3, 2, 2], a);
            let fb = t(&[1, 3, 2, 2], b);
            prop_assert_eq!(au_loss(&fa, &fb).unwrap(), au_loss(&fb, &fa).unwrap());
        }

        #[test]
        fn signs_of_terms(dr in prop::collection::vec(-3.0f64..3.0, 4), df in prop::collection::vec(-3.0f64..3.0, 4)) {
            let (d, g) = adv_losses(&dr, &df, AdvGForm::Paper);
            prop_assert!(d >= 0.0);
            prop_assert!(g <= 0.0);
        }
    }
}
