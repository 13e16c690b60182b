use rand::Rng;
use serde::{Deserialize, Serialize};

use super::check_image_batch;
use crate::autograd::{Graph, Var};
use crate::error::{GathError, Result};
use crate::kernels::ConvGeom;
use crate::nn::{Binder, Conv2d, Init, Linear, Mode, ParamSet};
use crate::tensor::{Real, Tensor};

/// VGG-style estimator: three blocks of two 3×3 convolutions with 2×2 max
/// pooling after each block, then two fully-connected layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AueConfig {
    pub widths: [usize; 3],
    pub hidden: usize,
    pub au_dim: usize,
    pub side: usize,
}

impl AueConfig {
    /// Spatial side of the `conv3_2` feature map.
    pub fn feature_side(&self) -> usize {
        self.side / 4
    }

    fn flat_dim(&self) -> usize {
        let s = self.side / 8;
        self.widths[2] * s * s
    }
}

/// Graph handles of one estimator pass.
#[derive(Clone, Copy, Debug)]
pub struct AueOutput {
    /// Post-rectifier activations of `conv3_2`.
    pub features: Var,
    /// Unclamped AU regression `[N, A]`.
    pub pred: Var,
}

#[derive(Clone, Debug)]
pub struct AuEstimator<T> {
    pub cfg: AueConfig,
    pub params: ParamSet<T>,
    convs: Vec<Conv2d>,
    fc1: Linear,
    fc2: Linear,
}

impl<T: Real> AuEstimator<T> {
    pub fn new(cfg: AueConfig, rng: &mut impl Rng) -> Self {
        let mut ps = ParamSet::new();
        let mut convs = Vec::new();
        let mut ch = 3;
        for (b, &w) in cfg.widths.iter().enumerate() {
            for l in 0..2 {
                let name = format!("conv{}_{}", b + 1, l + 1);
                convs.push(Conv2d::new(&mut ps, &name, ch, w, ConvGeom::new(3, 1, 1), true, Init::He, rng));
                ch = w;
            }
        }
        let fc1 = Linear::new(&mut ps, "fc1", cfg.flat_dim(), cfg.hidden, Init::He, rng);
        let fc2 = Linear::new(&mut ps, "fc2", cfg.hidden, cfg.au_dim, Init::He, rng);
        AuEstimator {
            cfg,
            params: ps,
            convs,
            fc1,
            fc2,
        }
    }

    /// Activations through `conv3_2`.
    pub fn features_graph(&self, g: &mut Graph<T>, p: &mut Binder<T>, x: Var) -> Var {
        let mut h = x;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(g, p, h);
            h = g.relu(h);
            if i == 1 || i == 3 {
                h = g.max_pool2(h);
            }
        }
        h
    }

    pub fn forward_graph(&self, g: &mut Graph<T>, p: &mut Binder<T>, x: Var) -> AueOutput {
        let features = self.features_graph(g, p, x);
        let h = g.max_pool2(features);
        let h = g.flatten(h);
        let h = self.fc1.forward(g, p, h);
        let h = g.relu(h);
        let pred = self.fc2.forward(g, p, h);
        AueOutput { features, pred }
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        check_image_batch(x, 1)?;
        if x.shape()[2] != self.cfg.side {
            return Err(GathError::Shape(format!(
                "estimator built for side {}, got {}",
                self.cfg.side,
                x.shape()[2]
            )));
        }
        Ok(())
    }

    /// AU regression `[N, A]`.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        let mut g = Graph::new();
        let mut p = Binder::new(&self.params, Mode::Eval, false);
        let xv = g.constant(x.clone());
        let out = self.forward_graph(&mut g, &mut p, xv);
        Ok(g.value(out.pred).clone())
    }

    /// `conv3_2` feature map `[N, K, h, w]`.
    pub fn features(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        let mut g = Graph::new();
        let mut p = Binder::new(&self.params, Mode::Eval, false);
        let xv = g.constant(x.clone());
        let f = self.features_graph(&mut g, &mut p, xv);
        Ok(g.value(f).clone())
    }
}
