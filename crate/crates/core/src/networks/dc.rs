use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_image_batch, LEAKY_SLOPE};
use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::kernels::ConvGeom;
use crate::nn::{BatchNorm2d, Binder, Conv2d, Init, Linear, Mode, ParamSet};
use crate::tensor::{Real, Tensor};

const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DcConfig {
    pub widths: [usize; 4],
    pub num_classes: usize,
}

#[derive(Clone, Debug)]
struct TrunkBlock {
    conv: Conv2d,
    bn: Option<BatchNorm2d>,
}

/// Graph handles of one discriminator–classifier pass.
#[derive(Clone, Copy, Debug)]
pub struct DcOutput {
    /// Shared trunk features `[N, F]` feeding both heads.
    pub features: Var,
    /// Realness scores `[N, 1]`, unbounded.
    pub score: Var,
    /// Identity logits `[N, C]`.
    pub logits: Var,
}

/// Shared convolutional trunk with separate scalar (D) and C-way (𝒞) heads.
#[derive(Clone, Debug)]
pub struct DiscriminatorClassifier<T> {
    pub cfg: DcConfig,
    pub params: ParamSet<T>,
    trunk: Vec<TrunkBlock>,
    d_head: Linear,
    c_head: Linear,
}

impl<T: Real> DiscriminatorClassifier<T> {
    pub fn new(cfg: DcConfig, rng: &mut impl Rng) -> Self {
        let mut ps = ParamSet::new();
        let init = Init::Normal(INIT_STD);
        let mut trunk = Vec::new();
        let mut ch = 3;
        for (i, &w) in cfg.widths.iter().enumerate() {
            let name = format!("trunk.{i}");
            let first = i == 0;
            trunk.push(TrunkBlock {
                conv: Conv2d::new(&mut ps, &name, ch, w, ConvGeom::new(3, 2, 1), first, init, rng),
                bn: (!first).then(|| BatchNorm2d::new(&mut ps, &format!("{name}.bn"), w)),
            });
            ch = w;
        }
        let d_head = Linear::new(&mut ps, "d_head", ch, 1, init, rng);
        let c_head = Linear::new(&mut ps, "c_head", ch, cfg.num_classes, init, rng);
        DiscriminatorClassifier {
            cfg,
            params: ps,
            trunk,
            d_head,
            c_head,
        }
    }

    pub fn trunk_graph(&self, g: &mut Graph<T>, p: &mut Binder<T>, x: Var) -> Var {
        let mut h = x;
        for b in &self.trunk {
            h = b.conv.forward(g, p, h);
            if let Some(bn) = &b.bn {
                h = bn.forward(g, p, h);
            }
            h = g.leaky_relu(h, T::lit(LEAKY_SLOPE));
        }
        g.global_avg_pool(h)
    }

    /// One trunk evaluation feeding both heads.
    pub fn forward_graph(&self, g: &mut Graph<T>, p: &mut Binder<T>, x: Var) -> DcOutput {
        let features = self.trunk_graph(g, p, x);
        let score = self.d_head.forward(g, p, features);
        let logits = self.c_head.forward(g, p, features);
        DcOutput {
            features,
            score,
            logits,
        }
    }

    /// Parameter ids of the realness head.
    pub fn d_head_ids(&self) -> [crate::nn::ParamId; 2] {
        [self.d_head.w, self.d_head.b]
    }

    /// Parameter ids of the identity head.
    pub fn c_head_ids(&self) -> [crate::nn::ParamId; 2] {
        [self.c_head.w, self.c_head.b]
    }

    /// `(scores, logits)` in inference mode.
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Vec<T>, Tensor<T>)> {
        check_image_batch(x, 1)?;
        let mut g = Graph::new();
        let mut p = Binder::new(&self.params, Mode::Eval, false);
        let xv = g.constant(x.clone());
        let out = self.forward_graph(&mut g, &mut p, xv);
        Ok((g.value(out.score).data().to_vec(), g.value(out.logits).clone()))
    }
}
