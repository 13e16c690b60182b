use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_image_batch, LEAKY_SLOPE};
use crate::autograd::{Graph, Var};
use crate::error::{GathError, Result};
use crate::kernels::ConvGeom;
use crate::nn::{BatchNorm2d, Binder, Conv2d, ConvTranspose2d, Init, Mode, ParamSet};
use crate::tensor::{Real, Tensor};

/// Stride of each encoder block; two stride-2 blocks give a ×4 downsampling
/// that the two ×2 transposed convolutions undo.
pub const ENCODER_STRIDES: [usize; 4] = [1, 2, 1, 2];

const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub enc_widths: [usize; 4],
    pub dec_width: usize,
    pub up_widths: [usize; 2],
    pub res_blocks: usize,
    pub au_dim: usize,
}

#[derive(Clone, Debug)]
struct ConvBnAct {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl ConvBnAct {
    fn forward<T: Real>(&self, g: &mut Graph<T>, p: &mut Binder<T>, x: Var) -> Var {
        let y = self.conv.forward(g, p, x);
        let y = self.bn.forward(g, p, y);
        g.leaky_relu(y, T::lit(LEAKY_SLOPE))
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
}

impl ResBlock {
    fn forward<T: Real>(&self, g: &mut Graph<T>, p: &mut Binder<T>, x: Var) -> Var {
        let y = self.conv1.forward(g, p, x);
        let y = self.bn1.forward(g, p, y);
        let y = g.leaky_relu(y, T::lit(LEAKY_SLOPE));
        let y = self.conv2.forward(g, p, y);
        let y = self.bn2.forward(g, p, y);
        g.add(x, y)
    }
}

#[derive(Clone, Debug)]
struct UpBlock {
    tconv: ConvTranspose2d,
    bn: BatchNorm2d,
}

/// Encoder (four conv/BN/leaky blocks) and decoder (conv block, residual
/// stack, identity skip, two transposed-conv blocks, tanh output).
#[derive(Clone, Debug)]
pub struct Generator<T> {
    pub cfg: GeneratorConfig,
    pub params: ParamSet<T>,
    encoder: Vec<ConvBnAct>,
    dec_in: ConvBnAct,
    res: Vec<ResBlock>,
    id_proj: Option<Conv2d>,
    up: Vec<UpBlock>,
    out: Conv2d,
}

impl<T: Real> Generator<T> {
    pub fn new(cfg: GeneratorConfig, rng: &mut impl Rng) -> Self {
        let mut ps = ParamSet::new();
        let init = Init::Normal(INIT_STD);
        let k3 = |s| ConvGeom::new(3, s, 1);
        let mut encoder = Vec::new();
        let mut ch = 3;
        for (i, (&w, &s)) in cfg.enc_widths.iter().zip(&ENCODER_STRIDES).enumerate() {
            let name = format!("enc.{i}");
            encoder.push(ConvBnAct {
                conv: Conv2d::new(&mut ps, &name, ch, w, k3(s), false, init, rng),
                bn: BatchNorm2d::new(&mut ps, &format!("{name}.bn"), w),
            });
            ch = w;
        }
        let enc_out = ch;
        let dw = cfg.dec_width;
        let dec_in = ConvBnAct {
            conv: Conv2d::new(&mut ps, "dec.in", enc_out + cfg.au_dim, dw, k3(1), false, init, rng),
            bn: BatchNorm2d::new(&mut ps, "dec.in.bn", dw),
        };
        let res = (0..cfg.res_blocks)
            .map(|i| {
                let name = format!("dec.res.{i}");
                ResBlock {
                    conv1: Conv2d::new(&mut ps, &format!("{name}.conv1"), dw, dw, k3(1), false, init, rng),
                    bn1: BatchNorm2d::new(&mut ps, &format!("{name}.bn1"), dw),
                    conv2: Conv2d::new(&mut ps, &format!("{name}.conv2"), dw, dw, k3(1), false, init, rng),
                    bn2: BatchNorm2d::new(&mut ps, &format!("{name}.bn2"), dw),
                }
            })
            .collect();
        let id_proj = (enc_out != dw).then(|| {
            Conv2d::new(&mut ps, "dec.id_proj", enc_out, dw, ConvGeom::new(1, 1, 0), false, init, rng)
        });
        let mut up = Vec::new();
        let mut ch = dw;
        for (i, &w) in cfg.up_widths.iter().enumerate() {
            let name = format!("dec.up.{i}");
            up.push(UpBlock {
                tconv: ConvTranspose2d::new(&mut ps, &name, ch, w, ConvGeom::new(4, 2, 1), false, init, rng),
                bn: BatchNorm2d::new(&mut ps, &format!("{name}.bn"), w),
            });
            ch = w;
        }
        let out = Conv2d::new(&mut ps, "dec.out", ch, 3, k3(1), true, init, rng);
        Generator {
            cfg,
            params: ps,
            encoder,
            dec_in,
            res,
            id_proj,
            up,
            out,
        }
    }

    /// Total downsampling factor of the encoder.
    pub fn downsampling(&self) -> usize {
        ENCODER_STRIDES.iter().product()
    }

    pub fn encode_graph(&self, g: &mut Graph<T>, p: &mut Binder<T>, x: Var) -> Var {
        self.encoder.iter().fold(x, |h, b| b.forward(g, p, h))
    }

    pub fn decode_graph(&self, g: &mut Graph<T>, p: &mut Binder<T>, f_aug: Var, f_id: Var) -> Var {
        let mut h = self.dec_in.forward(g, p, f_aug);
        for r in &self.res {
            h = r.forward(g, p, h);
        }
        let skip = match &self.id_proj {
            Some(proj) => proj.forward(g, p, f_id),
            None => f_id,
        };
        h = g.add(h, skip);
        for u in &self.up {
            let y = u.tconv.forward(g, p, h);
            let y = u.bn.forward(g, p, y);
            h = g.leaky_relu(y, T::lit(LEAKY_SLOPE));
        }
        let y = self.out.forward(g, p, h);
        g.tanh(y)
    }

    /// `G(x, e) = decode(broadcast(encode(x), e), encode(x))`.
    pub fn forward_graph(&self, g: &mut Graph<T>, p: &mut Binder<T>, x: Var, e: Var) -> Var {
        let f_id = self.encode_graph(g, p, x);
        let f_aug = g.broadcast_concat(f_id, e);
        self.decode_graph(g, p, f_aug, f_id)
    }

    fn check_au(&self, x: &Tensor<T>, e: &Tensor<T>) -> Result<()> {
        if e.shape().len() != 2 || e.shape()[0] != x.shape()[0] {
            return Err(GathError::Shape(format!(
                "AU batch {:?} does not match image batch {:?}",
                e.shape(),
                x.shape()
            )));
        }
        if e.shape()[1] != self.cfg.au_dim {
            return Err(GathError::Arity {
                expected: self.cfg.au_dim,
                found: e.shape()[1],
            });
        }
        if !e.all_finite() {
            return Err(GathError::Precondition("AU vector contains non-finite values".into()));
        }
        Ok(())
    }

    /// Identity code of a batch (inference mode).
    pub fn encode(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        check_image_batch(x, self.downsampling())?;
        let mut g = Graph::new();
        let mut p = Binder::new(&self.params, Mode::Eval, false);
        let xv = g.constant(x.clone());
        let f = self.encode_graph(&mut g, &mut p, xv);
        Ok(g.value(f).clone())
    }

    pub fn decode(&self, f_aug: &Tensor<T>, f_id: &Tensor<T>) -> Result<Tensor<T>> {
        let enc_w = self.cfg.enc_widths[3];
        if f_aug.shape().len() != 4 || f_id.shape().len() != 4 {
            return Err(GathError::Shape("decoder expects NCHW features".into()));
        }
        let (n, ka, h, w) = f_aug.dims4();
        let (ni, ki, hi, wi) = f_id.dims4();
        if ka != enc_w + self.cfg.au_dim || ki != enc_w {
            return Err(GathError::Shape(format!(
                "decoder channels: augmented {ka} (want {}), identity {ki} (want {enc_w})",
                enc_w + self.cfg.au_dim
            )));
        }
        if (n, h, w) != (ni, hi, wi) {
            return Err(GathError::Shape(format!(
                "identity code {:?} does not match bottleneck {:?}",
                f_id.shape(),
                f_aug.shape()
            )));
        }
        let mut g = Graph::new();
        let mut p = Binder::new(&self.params, Mode::Eval, false);
        let a = g.constant(f_aug.clone());
        let i = g.constant(f_id.clone());
        let y = self.decode_graph(&mut g, &mut p, a, i);
        Ok(g.value(y).clone())
    }

    /// Synthesize `G(x, e)` in inference mode.
    pub fn generate(&self, x: &Tensor<T>, e: &Tensor<T>) -> Result<Tensor<T>> {
        check_image_batch(x, self.downsampling())?;
        self.check_au(x, e)?;
        let mut g = Graph::new();
        let mut p = Binder::new(&self.params, Mode::Eval, false);
        let xv = g.constant(x.clone());
        let ev = g.constant(e.clone());
        let y = self.forward_graph(&mut g, &mut p, xv, ev);
        Ok(g.value(y).clone())
    }
}
