//! The three parameterized functions of the framework: the AU-conditioned
//! generator, the weight-sharing discriminator–classifier and the action-unit
//! estimator whose `conv3_2` activations define the expressiveness space.

mod aue;
mod dc;
mod generator;

use serde::{Deserialize, Serialize};

pub use aue::{AueConfig, AueOutput, AuEstimator};
pub use dc::{DcConfig, DcOutput, DiscriminatorClassifier};
pub use generator::{Generator, GeneratorConfig};

use crate::autograd::Graph;
use crate::error::{GathError, Result};
use crate::tensor::{Real, Tensor};

pub const LEAKY_SLOPE: f64 = 0.1;
pub const BN_MOMENTUM: f64 = 0.99;

/// Architecture of all three networks for one input resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub side: usize,
    pub generator: GeneratorConfig,
    pub dc: DcConfig,
    pub aue: AueConfig,
}

/// Named architecture presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchPreset {
    /// 100×100 inputs with the full channel plan.
    Reference,
    /// 32×32 synthetic-corpus inputs with narrow channels.
    Synth,
    /// 8×8 inputs with two channels per block, for gradient checks.
    Mini,
}

impl std::str::FromStr for ArchPreset {
    type Err = GathError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reference" => Ok(ArchPreset::Reference),
            "synth" => Ok(ArchPreset::Synth),
            "mini" => Ok(ArchPreset::Mini),
            other => Err(GathError::Config(format!("unknown arch preset `{other}`"))),
        }
    }
}

impl std::fmt::Display for ArchPreset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ArchPreset::Reference => "reference",
            ArchPreset::Synth => "synth",
            ArchPreset::Mini => "mini",
        })
    }
}

impl NetworkConfig {
    pub fn preset(preset: ArchPreset, num_classes: usize, au_dim: usize) -> Self {
        match preset {
            ArchPreset::Reference => NetworkConfig {
                side: 100,
                generator: GeneratorConfig {
                    enc_widths: [64, 128, 256, 256],
                    dec_width: 256,
                    up_widths: [128, 64],
                    res_blocks: 6,
                    au_dim,
                },
                dc: DcConfig {
                    widths: [64, 128, 256, 256],
                    num_classes,
                },
                aue: AueConfig {
                    widths: [64, 128, 256],
                    hidden: 1024,
                    au_dim,
                    side: 100,
                },
            },
            ArchPreset::Synth => NetworkConfig {
                side: 32,
                generator: GeneratorConfig {
                    enc_widths: [16, 32, 48, 48],
                    dec_width: 48,
                    up_widths: [32, 16],
                    res_blocks: 6,
                    au_dim,
                },
                dc: DcConfig {
                    widths: [16, 32, 64, 64],
                    num_classes,
                },
                aue: AueConfig {
                    widths: [16, 32, 32],
                    hidden: 128,
                    au_dim,
                    side: 32,
                },
            },
            ArchPreset::Mini => NetworkConfig {
                side: 8,
                generator: GeneratorConfig {
                    enc_widths: [2, 2, 2, 2],
                    dec_width: 2,
                    up_widths: [2, 2],
                    res_blocks: 6,
                    au_dim,
                },
                dc: DcConfig {
                    widths: [2, 2, 2, 2],
                    num_classes,
                },
                aue: AueConfig {
                    widths: [2, 2, 2],
                    hidden: 4,
                    au_dim,
                    side: 8,
                },
            },
        }
    }
}

/// Validate an NCHW image batch: three channels, square, finite, and (when
/// `multiple > 1`) a side divisible by `multiple`.
pub fn check_image_batch<T: Real>(x: &Tensor<T>, multiple: usize) -> Result<()> {
    if x.shape().len() != 4 {
        return Err(GathError::Shape(format!("expected NCHW batch, got {:?}", x.shape())));
    }
    let (n, c, h, w) = x.dims4();
    if n == 0 {
        return Err(GathError::Shape("empty batch".into()));
    }
    if c != 3 {
        return Err(GathError::Shape(format!("expected 3 channels, got {c}")));
    }
    if h != w {
        return Err(GathError::Shape(format!("non-square input {h}x{w}")));
    }
    if multiple > 1 && h % multiple != 0 {
        return Err(GathError::Shape(format!(
            "input side {h} not divisible by {multiple}"
        )));
    }
    if !x.all_finite() {
        return Err(GathError::Precondition("input contains non-finite values".into()));
    }
    Ok(())
}

/// Encoder output: the identity code.
pub fn encoder_forward<T: Real>(gen: &Generator<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    gen.encode(x)
}

/// Append AU coefficients `[N, A]` as spatially constant channels.
pub fn broadcast_concat<T: Real>(f: &Tensor<T>, e: &Tensor<T>) -> Result<Tensor<T>> {
    if f.shape().len() != 4 || e.shape().len() != 2 || f.shape()[0] != e.shape()[0] {
        return Err(GathError::Shape(format!(
            "broadcast_concat: feature {:?} with AU {:?}",
            f.shape(),
            e.shape()
        )));
    }
    let mut g = Graph::new();
    let fv = g.constant(f.clone());
    let ev = g.constant(e.clone());
    let y = g.broadcast_concat(fv, ev);
    Ok(g.value(y).clone())
}

pub fn decoder_forward<T: Real>(gen: &Generator<T>, f_aug: &Tensor<T>, f_id: &Tensor<T>) -> Result<Tensor<T>> {
    gen.decode(f_aug, f_id)
}

pub fn generator_forward<T: Real>(gen: &Generator<T>, x: &Tensor<T>, e: &Tensor<T>) -> Result<Tensor<T>> {
    gen.generate(x, e)
}

/// `(scores [N], logits [N, C])`.
pub fn dc_forward<T: Real>(dc: &DiscriminatorClassifier<T>, x: &Tensor<T>) -> Result<(Vec<T>, Tensor<T>)> {
    dc.forward(x)
}

pub fn aue_forward<T: Real>(aue: &AuEstimator<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    aue.predict(x)
}

pub fn aue_features<T: Real>(aue: &AuEstimator<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    aue.features(x)
}
