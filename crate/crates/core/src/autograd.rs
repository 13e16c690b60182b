//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Nodes are appended in evaluation order, so a reverse sweep over the tape
//! visits every node after all of its consumers.

use crate::kernels::{self, ConvGeom};
use crate::losses::kernels as lk;
use crate::tensor::{gemm, Real, Tensor, Trans};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    BatchNormTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
    },
    BatchNormEval {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    Tanh {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    BroadcastConcat {
        f: Var,
        e: Var,
    },
    MaxPool2 {
        x: Var,
        arg: Vec<u32>,
    },
    GlobalAvgPool {
        x: Var,
    },
    Flatten {
        x: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    SqErrSampleSum {
        a: Var,
        b: Var,
    },
    SqErrElemMean {
        a: Var,
        b: Var,
    },
    AbsErrMean {
        a: Var,
        b: Var,
    },
    TotalVariation {
        x: Var,
    },
    TargetSqMean {
        x: Var,
        target: T,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
    },
    WeightedSum {
        terms: Vec<(Var, T)>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// A single-use computation tape.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that receives gradient.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A constant copy of `v`'s value; gradient does not flow through it.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Var {
        let y = kernels::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), geom);
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(y, Op::Conv2d { x, w, b, geom }, rg)
    }

    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Var {
        let y = kernels::conv_transpose2d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            geom,
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(y, Op::ConvTranspose2d { x, w, b, geom }, rg)
    }

    /// Batch normalization with batch statistics. Returns the output and the
    /// batch `(mean, biased variance)` for running-statistic bookkeeping.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> (Var, Vec<T>, Vec<T>) {
        let (mean, var) = kernels::channel_moments(self.value(x));
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (y, xhat) = kernels::channel_normalize(
            self.value(x),
            &mean,
            &inv_std,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let out = self.push(
            y,
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        );
        (out, mean, var)
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: T,
    ) -> Var {
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (y, xhat) = kernels::channel_normalize(
            self.value(x),
            mean,
            &inv_std,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            y,
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let y = self.value(x).map(|v| if v > T::zero() { v } else { v * slope });
        let rg = self.rg(x);
        self.push(y, Op::LeakyRelu { x, slope }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, T::zero())
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.tanh());
        let rg = self.rg(x);
        self.push(y, Op::Tanh { x }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(y, Op::Add { a, b }, rg)
    }

    /// Append the per-sample vector `e: [N, A]` to `f: [N, K, H, W]` as `A`
    /// spatially constant channels.
    pub fn broadcast_concat(&mut self, f: Var, e: Var) -> Var {
        let (n, k, h, w) = self.value(f).dims4();
        let (en, a) = self.value(e).dims2();
        assert_eq!(en, n, "broadcast_concat: batch mismatch");
        let p = h * w;
        let mut y = Tensor::zeros(&[n, k + a, h, w]);
        {
            let fv = self.value(f).data();
            let ev = self.value(e).data();
            let yd = y.data_mut();
            for ni in 0..n {
                let base = ni * (k + a) * p;
                yd[base..base + k * p].copy_from_slice(&fv[ni * k * p..(ni + 1) * k * p]);
                for j in 0..a {
                    let s = base + (k + j) * p;
                    yd[s..s + p].fill(ev[ni * a + j]);
                }
            }
        }
        let rg = self.rg(f) || self.rg(e);
        self.push(y, Op::BroadcastConcat { f, e }, rg)
    }

    pub fn max_pool2(&mut self, x: Var) -> Var {
        let (y, arg) = kernels::max_pool2_forward(self.value(x));
        let rg = self.rg(x);
        self.push(y, Op::MaxPool2 { x, arg }, rg)
    }

    /// `[N, C, H, W]` → `[N, C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let p = h * w;
        let inv = T::one() / T::lit(p as f64);
        let xv = self.value(x).data();
        let y: Vec<T> = (0..n * c)
            .map(|i| xv[i * p..(i + 1) * p].iter().copied().sum::<T>() * inv)
            .collect();
        let y = Tensor::from_vec(&[n, c], y).expect("pool shape");
        let rg = self.rg(x);
        self.push(y, Op::GlobalAvgPool { x }, rg)
    }

    /// `[N, ...]` → `[N, prod(...)]`.
    pub fn flatten(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let n = v.shape()[0];
        let y = v.clone().reshape(&[n, v.len() / n.max(1)]).expect("flatten");
        let rg = self.rg(x);
        self.push(y, Op::Flatten { x }, rg)
    }

    /// `y = x·wᵀ + b` with `w: [out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (n, i) = self.value(x).dims2();
        let (o, wi) = self.value(w).dims2();
        assert_eq!(i, wi, "linear: input width");
        let mut y = Tensor::zeros(&[n, o]);
        gemm(
            n,
            i,
            o,
            T::one(),
            self.value(x).data(),
            Trans::No,
            self.value(w).data(),
            Trans::Yes,
            T::zero(),
            y.data_mut(),
        );
        let bv = self.value(b).data().to_vec();
        for row in y.data_mut().chunks_mut(o) {
            for (v, &bb) in row.iter_mut().zip(&bv) {
                *v += bb;
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push(y, Op::Linear { x, w, b }, rg)
    }

    /// Batch mean of per-sample squared L2 distance.
    pub fn sq_err_sample_sum(&mut self, a: Var, b: Var) -> Var {
        let v = lk::sq_err_sample_sum(self.value(a), self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::scalar(v), Op::SqErrSampleSum { a, b }, rg)
    }

    /// Mean squared difference over every element.
    pub fn sq_err_elem_mean(&mut self, a: Var, b: Var) -> Var {
        let v = lk::sq_err_elem_mean(self.value(a), self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::scalar(v), Op::SqErrElemMean { a, b }, rg)
    }

    /// Mean absolute difference over every element.
    pub fn abs_err_mean(&mut self, a: Var, b: Var) -> Var {
        let v = lk::abs_err_mean(self.value(a), self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::scalar(v), Op::AbsErrMean { a, b }, rg)
    }

    /// Element-normalized, batch-averaged total variation.
    pub fn total_variation(&mut self, x: Var) -> Var {
        let v = lk::tv_mean(self.value(x));
        let rg = self.rg(x);
        self.push(Tensor::scalar(v), Op::TotalVariation { x }, rg)
    }

    /// `mean((x - target)²)`.
    pub fn target_sq_mean(&mut self, x: Var, target: T) -> Var {
        let v = lk::target_sq_mean(self.value(x), target);
        let rg = self.rg(x);
        self.push(Tensor::scalar(v), Op::TargetSqMean { x, target }, rg)
    }

    /// Batch-mean softmax cross-entropy of `[N, C]` logits.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let v = lk::cross_entropy(self.value(logits), labels);
        let rg = self.rg(logits);
        self.push(
            Tensor::scalar(v),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            rg,
        )
    }

    /// `Σ wᵢ·sᵢ` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Var {
        let v = terms
            .iter()
            .fold(T::zero(), |acc, &(s, k)| acc + k * self.value(s).item());
        let rg = terms.iter().any(|&(s, k)| self.rg(s) && k != T::zero());
        self.push(
            Tensor::scalar(v),
            Op::WeightedSum {
                terms: terms.to_vec(),
            },
            rg,
        )
    }

    /// Reverse sweep from the scalar `root`. Gradients accumulate into every
    /// node that requires them; constants and detached values receive none.
    pub fn backward(&mut self, root: Var) {
        assert_eq!(self.value(root).len(), 1, "backward from non-scalar");
        for n in &mut self.nodes {
            n.grad = None;
        }
        if !self.rg(root) {
            return;
        }
        self.nodes[root.0].grad = Some(Tensor::full(self.value(root).shape(), T::one()));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gy) = self.nodes[i].grad.take() else {
                continue;
            };
            let contribs = self.local_grads(i, &gy);
            self.nodes[i].grad = Some(gy);
            for (v, g) in contribs {
                if !self.rg(v) {
                    continue;
                }
                match &mut self.nodes[v.0].grad {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
    }

    fn local_grads(&self, i: usize, gy: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let (dx, dw, db) =
                    kernels::conv2d_backward(self.value(*x), self.value(*w), gy, *geom, self.rg(*x));
                if let Some(dx) = dx {
                    out.push((*x, dx));
                }
                out.push((*w, dw));
                if let Some(b) = b {
                    out.push((*b, db));
                }
            }
            Op::ConvTranspose2d { x, w, b, geom } => {
                let (dx, dw, db) = kernels::conv_transpose2d_backward(
                    self.value(*x),
                    self.value(*w),
                    gy,
                    *geom,
                    self.rg(*x),
                );
                if let Some(dx) = dx {
                    out.push((*x, dx));
                }
                out.push((*w, dw));
                if let Some(b) = b {
                    out.push((*b, db));
                }
            }
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gamma_v = self.value(*gamma).data();
                let (dx, dg, db) = kernels::batch_norm_backward(gy, xhat, inv_std, gamma_v);
                out.push((*x, dx));
                out.push((*gamma, Tensor::from_vec(&[dg.len()], dg).expect("shape")));
                out.push((*beta, Tensor::from_vec(&[db.len()], db).expect("shape")));
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (n, c, h, w) = gy.dims4();
                let p = h * w;
                let gamma_v = self.value(*gamma).data();
                let mut dx = Tensor::zeros(gy.shape());
                let mut dg = vec![T::zero(); c];
                let mut db = vec![T::zero(); c];
                for ni in 0..n {
                    for ci in 0..c {
                        let r = (ni * c + ci) * p..(ni * c + ci + 1) * p;
                        let k = gamma_v[ci] * inv_std[ci];
                        for ((d, &g), &xh) in dx.data_mut()[r.clone()]
                            .iter_mut()
                            .zip(&gy.data()[r.clone()])
                            .zip(&xhat.data()[r])
                        {
                            *d = g * k;
                            dg[ci] += g * xh;
                            db[ci] += g;
                        }
                    }
                }
                out.push((*x, dx));
                out.push((*gamma, Tensor::from_vec(&[c], dg).expect("shape")));
                out.push((*beta, Tensor::from_vec(&[c], db).expect("shape")));
            }
            Op::LeakyRelu { x, slope } => {
                let xv = self.value(*x).data();
                let mut dx = gy.clone();
                for (d, &v) in dx.data_mut().iter_mut().zip(xv) {
                    if v <= T::zero() {
                        *d *= *slope;
                    }
                }
                out.push((*x, dx));
            }
            Op::Tanh { x } => {
                let mut dx = gy.clone();
                for (d, &y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                    *d *= T::one() - y * y;
                }
                out.push((*x, dx));
            }
            Op::Add { a, b } => {
                out.push((*a, gy.clone()));
                out.push((*b, gy.clone()));
            }
            Op::BroadcastConcat { f, e } => {
                let (n, k, h, w) = self.value(*f).dims4();
                let (_, a) = self.value(*e).dims2();
                let p = h * w;
                let g = gy.data();
                if self.rg(*f) {
                    let mut df = Tensor::zeros(self.value(*f).shape());
                    for ni in 0..n {
                        let base = ni * (k + a) * p;
                        df.data_mut()[ni * k * p..(ni + 1) * k * p].copy_from_slice(&g[base..base + k * p]);
                    }
                    out.push((*f, df));
                }
                if self.rg(*e) {
                    let mut de = Tensor::zeros(&[n, a]);
                    for ni in 0..n {
                        let base = ni * (k + a) * p;
                        for j in 0..a {
                            let s = base + (k + j) * p;
                            de.data_mut()[ni * a + j] = g[s..s + p].iter().copied().sum();
                        }
                    }
                    out.push((*e, de));
                }
            }
            Op::MaxPool2 { x, arg } => {
                out.push((*x, kernels::max_pool2_backward(gy, arg, self.value(*x).shape())));
            }
            Op::GlobalAvgPool { x } => {
                let shape = self.value(*x).shape().to_vec();
                let p = shape[2] * shape[3];
                let inv = T::one() / T::lit(p as f64);
                let mut dx = Tensor::zeros(&shape);
                for (plane, &g) in gy.data().iter().enumerate() {
                    dx.data_mut()[plane * p..(plane + 1) * p].fill(g * inv);
                }
                out.push((*x, dx));
            }
            Op::Flatten { x } => {
                let shape = self.value(*x).shape().to_vec();
                out.push((*x, gy.clone().reshape(&shape).expect("flatten grad")));
            }
            Op::Linear { x, w, b } => {
                let (n, i) = self.value(*x).dims2();
                let (o, _) = self.value(*w).dims2();
                if self.rg(*x) {
                    let mut dx = Tensor::zeros(&[n, i]);
                    gemm(n, o, i, T::one(), gy.data(), Trans::No, self.value(*w).data(), Trans::No, T::zero(), dx.data_mut());
                    out.push((*x, dx));
                }
                let mut dw = Tensor::zeros(&[o, i]);
                gemm(o, n, i, T::one(), gy.data(), Trans::Yes, self.value(*x).data(), Trans::No, T::zero(), dw.data_mut());
                out.push((*w, dw));
                let mut db = Tensor::zeros(&[o]);
                for row in gy.data().chunks(o) {
                    for (d, &g) in db.data_mut().iter_mut().zip(row) {
                        *d += g;
                    }
                }
                out.push((*b, db));
            }
            Op::SqErrSampleSum { a, b } => {
                let ga = lk::sq_err_sample_sum_grad(self.value(*a), self.value(*b), gy.item());
                out.push((*b, ga.map(|v| -v)));
                out.push((*a, ga));
            }
            Op::SqErrElemMean { a, b } => {
                let ga = lk::sq_err_elem_mean_grad(self.value(*a), self.value(*b), gy.item());
                out.push((*b, ga.map(|v| -v)));
                out.push((*a, ga));
            }
            Op::AbsErrMean { a, b } => {
                let ga = lk::abs_err_mean_grad(self.value(*a), self.value(*b), gy.item());
                out.push((*b, ga.map(|v| -v)));
                out.push((*a, ga));
            }
            Op::TotalVariation { x } => {
                out.push((*x, lk::tv_mean_grad(self.value(*x), gy.item())));
            }
            Op::TargetSqMean { x, target } => {
                out.push((*x, lk::target_sq_mean_grad(self.value(*x), *target, gy.item())));
            }
            Op::CrossEntropy { logits, labels } => {
                out.push((*logits, lk::cross_entropy_grad(self.value(*logits), labels, gy.item())));
            }
            Op::WeightedSum { terms } => {
                let g = gy.item();
                for &(s, k) in terms {
                    out.push((s, Tensor::full(self.value(s).shape(), g * k)));
                }
            }
        }
        out
    }
}
