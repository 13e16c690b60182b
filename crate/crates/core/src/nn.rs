//! Named parameter storage and the layer building blocks bound onto a [`Graph`].

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{GathError, Result};
use crate::kernels::ConvGeom;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Weights are optimized; buffers (running statistics) are not.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Weight,
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<T>,
}

/// All learnable state of one network, addressable by [`ParamId`] or name.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<T> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor<T>) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            kind,
            value,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Overwrite every value from `other`, which must list the same names,
    /// kinds and shapes in the same order.
    pub fn assign(&mut self, other: &ParamSet<T>) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(GathError::Incompatible(format!(
                "expected {} parameter tensors, found {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (mine, theirs) in self.entries.iter().zip(&other.entries) {
            if mine.name != theirs.name || mine.kind != theirs.kind || mine.value.shape() != theirs.value.shape() {
                return Err(GathError::Incompatible(format!(
                    "parameter `{}` {:?} does not match stored `{}` {:?}",
                    mine.name,
                    mine.value.shape(),
                    theirs.name,
                    theirs.value.shape()
                )));
            }
        }
        for (mine, theirs) in self.entries.iter_mut().zip(&other.entries) {
            mine.value = theirs.value.clone();
        }
        Ok(())
    }

    /// Number of scalar weights (buffers excluded).
    pub fn weight_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Weight)
            .map(|e| e.value.len())
            .sum()
    }

    /// FNV-1a over names and exact bit patterns of every entry.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |b: u64| {
            h ^= b;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for e in &self.entries {
            for b in e.name.bytes() {
                eat(b as u64);
            }
            for &v in e.value.data() {
                eat(v.to_bits_u64());
            }
        }
        h
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    kind: e.kind,
                    value: e.value.cast(),
                })
                .collect(),
        }
    }

    /// Fold batch statistics collected during a training-mode pass into the
    /// running buffers: `running = momentum·running + (1-momentum)·batch`.
    pub fn apply_bn_stats(&mut self, bound: &Bound<T>, momentum: T) {
        for s in &bound.stats {
            let unbias = if s.count > 1 {
                T::lit(s.count as f64 / (s.count as f64 - 1.0))
            } else {
                T::one()
            };
            let rm = self.entries[s.mean_id.0].value.data_mut();
            for (r, &m) in rm.iter_mut().zip(&s.mean) {
                *r = momentum * *r + (T::one() - momentum) * m;
            }
            let rv = self.entries[s.var_id.0].value.data_mut();
            for (r, &v) in rv.iter_mut().zip(&s.var) {
                *r = momentum * *r + (T::one() - momentum) * v * unbias;
            }
        }
    }
}

/// Normalization behaviour of a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics.
    Train,
    /// Running statistics.
    Eval,
}

#[derive(Clone, Debug)]
pub struct BnStat<T> {
    mean_id: ParamId,
    var_id: ParamId,
    mean: Vec<T>,
    var: Vec<T>,
    count: usize,
}

/// Binds one [`ParamSet`] onto a graph for a single pass. Parameters enter as
/// variables when `trainable`, otherwise as constants that never receive
/// gradient.
pub struct Binder<'p, T> {
    params: &'p ParamSet<T>,
    mode: Mode,
    trainable: bool,
    vars: Vec<Option<Var>>,
    stats: Vec<BnStat<T>>,
}

impl<'p, T: Real> Binder<'p, T> {
    pub fn new(params: &'p ParamSet<T>, mode: Mode, trainable: bool) -> Self {
        Binder {
            params,
            mode,
            trainable,
            vars: vec![None; params.len()],
            stats: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn params(&self) -> &'p ParamSet<T> {
        self.params
    }

    pub fn bind(&mut self, g: &mut Graph<T>, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let value = self.params.get(id).clone();
        let v = if self.trainable {
            g.variable(value)
        } else {
            g.constant(value)
        };
        self.vars[id.0] = Some(v);
        v
    }

    pub fn finish(self) -> Bound<T> {
        Bound {
            vars: self.vars,
            stats: self.stats,
        }
    }
}

/// What a finished [`Binder`] leaves behind: graph handles and batch statistics.
pub struct Bound<T> {
    vars: Vec<Option<Var>>,
    stats: Vec<BnStat<T>>,
}

impl<T: Real> Bound<T> {
    pub fn var(&self, id: ParamId) -> Option<Var> {
        self.vars[id.0]
    }

    /// Per-parameter gradients after `Graph::backward`; `None` where no
    /// gradient reached the parameter.
    pub fn grads(&self, g: &Graph<T>) -> Vec<Option<Tensor<T>>> {
        self.vars
            .iter()
            .map(|v| v.and_then(|v| g.grad(v).cloned()))
            .collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Zero-mean normal with the given standard deviation.
    Normal(f64),
    /// Zero-mean normal with variance `2 / fan_in`.
    He,
}

fn init_tensor<T: Real>(shape: &[usize], fan_in: usize, init: Init, rng: &mut impl Rng) -> Tensor<T> {
    let std = match init {
        Init::Normal(s) => s,
        Init::He => (2.0 / fan_in.max(1) as f64).sqrt(),
    };
    let dist = Normal::new(0.0, std).expect("valid std");
    Tensor::from_fn(shape, |_| T::lit(dist.sample(rng)))
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub geom: ConvGeom,
    pub in_ch: usize,
    pub out_ch: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        ps: &mut ParamSet<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        geom: ConvGeom,
        bias: bool,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let k = geom.kernel;
        let w = ps.add(
            format!("{name}.w"),
            ParamKind::Weight,
            init_tensor(&[out_ch, in_ch, k, k], in_ch * k * k, init, rng),
        );
        let b = bias.then(|| ps.add(format!("{name}.b"), ParamKind::Weight, Tensor::zeros(&[out_ch])));
        Conv2d {
            w,
            b,
            geom,
            in_ch,
            out_ch,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &mut Binder<T>, x: Var) -> Var {
        let w = p.bind(g, self.w);
        let b = self.b.map(|b| p.bind(g, b));
        g.conv2d(x, w, b, self.geom)
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub geom: ConvGeom,
    pub in_ch: usize,
    pub out_ch: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        ps: &mut ParamSet<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        geom: ConvGeom,
        bias: bool,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let k = geom.kernel;
        let w = ps.add(
            format!("{name}.w"),
            ParamKind::Weight,
            init_tensor(&[in_ch, out_ch, k, k], in_ch * k * k, init, rng),
        );
        let b = bias.then(|| ps.add(format!("{name}.b"), ParamKind::Weight, Tensor::zeros(&[out_ch])));
        ConvTranspose2d {
            w,
            b,
            geom,
            in_ch,
            out_ch,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &mut Binder<T>, x: Var) -> Var {
        let w = p.bind(g, self.w);
        let b = self.b.map(|b| p.bind(g, b));
        g.conv_transpose2d(x, w, b, self.geom)
    }
}

pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm2d {
    pub fn new<T: Real>(ps: &mut ParamSet<T>, name: &str, ch: usize) -> Self {
        BatchNorm2d {
            gamma: ps.add(format!("{name}.gamma"), ParamKind::Weight, Tensor::full(&[ch], T::one())),
            beta: ps.add(format!("{name}.beta"), ParamKind::Weight, Tensor::zeros(&[ch])),
            running_mean: ps.add(format!("{name}.running_mean"), ParamKind::Buffer, Tensor::zeros(&[ch])),
            running_var: ps.add(format!("{name}.running_var"), ParamKind::Buffer, Tensor::full(&[ch], T::one())),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &mut Binder<T>, x: Var) -> Var {
        let gamma = p.bind(g, self.gamma);
        let beta = p.bind(g, self.beta);
        let eps = T::lit(BN_EPS);
        match p.mode {
            Mode::Train => {
                let (n, _, h, w) = g.value(x).dims4();
                let (y, mean, var) = g.batch_norm_train(x, gamma, beta, eps);
                p.stats.push(BnStat {
                    mean_id: self.running_mean,
                    var_id: self.running_var,
                    mean,
                    var,
                    count: n * h * w,
                });
                y
            }
            Mode::Eval => {
                let mean = p.params.get(self.running_mean).data().to_vec();
                let var = p.params.get(self.running_var).data().to_vec();
                g.batch_norm_eval(x, gamma, beta, &mean, &var, eps)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Real>(
        ps: &mut ParamSet<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        Linear {
            w: ps.add(
                format!("{name}.w"),
                ParamKind::Weight,
                init_tensor(&[out_dim, in_dim], in_dim, init, rng),
            ),
            b: ps.add(format!("{name}.b"), ParamKind::Weight, Tensor::zeros(&[out_dim])),
            in_dim,
            out_dim,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &mut Binder<T>, x: Var) -> Var {
        let w = p.bind(g, self.w);
        let b = p.bind(g, self.b);
        g.linear(x, w, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn frozen_binding_yields_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = ParamSet::<f64>::new();
        let lin = Linear::new(&mut ps, "fc", 3, 2, Init::Normal(0.5), &mut rng);
        for trainable in [true, false] {
            let mut g = Graph::new();
            let mut b = Binder::new(&ps, Mode::Train, trainable);
            let x = g.constant(Tensor::full(&[2, 3], 0.5));
            let y = lin.forward(&mut g, &mut b, x);
            let loss = g.target_sq_mean(y, 1.0);
            let bound = b.finish();
            g.backward(loss);
            let grads = bound.grads(&g);
            assert_eq!(grads.iter().all(|g| g.is_some()), trainable);
            assert_eq!(grads.iter().all(|g| g.is_none()), !trainable);
        }
    }

    #[test]
    fn running_statistics_follow_momentum() {
        let mut ps = ParamSet::<f64>::new();
        let bn = BatchNorm2d::new(&mut ps, "bn", 1);
        let mut g = Graph::new();
        let mut b = Binder::new(&ps, Mode::Train, true);
        let x = g.constant(Tensor::from_vec(&[2, 1, 1, 1], vec![1.0, 3.0]).unwrap());
        bn.forward(&mut g, &mut b, x);
        let bound = b.finish();
        ps.apply_bn_stats(&bound, 0.99);
        assert!((ps.get(bn.running_mean).item() - 0.02).abs() < 1e-12);
        // unbiased batch variance is 2
        assert!((ps.get(bn.running_var).item() - (0.99 + 0.01 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn checksum_sees_single_bit_changes() {
        let mut ps = ParamSet::<f32>::new();
        let id = ps.add("a", ParamKind::Weight, Tensor::full(&[4], 1.0));
        let before = ps.checksum();
        ps.get_mut(id).data_mut()[2] = f32::from_bits(1.0f32.to_bits() + 1);
        assert_ne!(before, ps.checksum());
    }
}
