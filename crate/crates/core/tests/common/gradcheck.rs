//! Finite-difference checks of every loss term through the miniature
//! networks, in f64.

use gath_core::autograd::{Graph, Var};
use gath_core::networks::{ArchPreset, AuEstimator, DiscriminatorClassifier, Generator, NetworkConfig};
use gath_core::nn::{Binder, Mode, ParamKind, ParamSet};
use gath_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
/// Coarser step used to detect entries sitting next to a kink
/// (rectifier, absolute value, max-pool tie).
const COARSE_STEP: f64 = 1e-4;
const SMOOTHNESS_TOL: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely.
const FLOOR: f64 = 1e-6;
const ENTRIES_PER_TENSOR: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Net {
    G,
    Dc,
    Aue,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Term {
    AueTraining,
    Au,
    Rec,
    AdvD,
    AdvG,
    ClsReal,
    ClsFake,
    Tv,
    DcObjective,
    GObjective,
}

impl Term {
    pub const ALL: [Term; 10] = [
        Term::AueTraining,
        Term::Au,
        Term::Rec,
        Term::AdvD,
        Term::AdvG,
        Term::ClsReal,
        Term::ClsFake,
        Term::Tv,
        Term::DcObjective,
        Term::GObjective,
    ];

    /// Parameter set the term is minimized over.
    pub fn updates(self) -> Net {
        match self {
            Term::AueTraining => Net::Aue,
            Term::AdvD | Term::ClsReal | Term::DcObjective => Net::Dc,
            _ => Net::G,
        }
    }
}

pub struct Fixture {
    pub g: Generator<f64>,
    pub dc: DiscriminatorClassifier<f64>,
    pub aue: AuEstimator<f64>,
    pub x_src: Tensor<f64>,
    pub x_re: Tensor<f64>,
    pub y_tgt: Tensor<f64>,
    pub e_tgt: Tensor<f64>,
    pub c: Vec<usize>,
    pub c_src: Vec<usize>,
}

fn randomize(ps: &mut ParamSet<f64>, rng: &mut ChaCha8Rng) {
    for e in ps.entries_mut() {
        if e.kind == ParamKind::Weight {
            for v in e.value.data_mut() {
                *v = rng.random_range(-0.8..0.8);
            }
        }
    }
}

impl Fixture {
    /// Mini preset (8×8 inputs, two channels per block), batch of two,
    /// with weights drawn large enough that gradients sit well above
    /// finite-difference noise.
    pub fn new(seed: u64) -> Self {
        let net = NetworkConfig::preset(ArchPreset::Mini, 3, 46);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Generator::new(net.generator, &mut rng);
        let mut dc = DiscriminatorClassifier::new(net.dc, &mut rng);
        let mut aue = AuEstimator::new(net.aue, &mut rng);
        randomize(&mut g.params, &mut rng);
        randomize(&mut dc.params, &mut rng);
        randomize(&mut aue.params, &mut rng);
        let img = |rng: &mut ChaCha8Rng| Tensor::from_fn(&[2, 3, 8, 8], |_| rng.random_range(-1.0..1.0));
        let x_src = img(&mut rng);
        let x_re = img(&mut rng);
        let y_tgt = img(&mut rng);
        let e_tgt = Tensor::from_fn(&[2, 46], |_| rng.random_range(0.0..1.0));
        Fixture {
            g,
            dc,
            aue,
            x_src,
            x_re,
            y_tgt,
            e_tgt,
            c: vec![0, 2],
            c_src: vec![1, 0],
        }
    }

    fn params(&self, net: Net) -> &ParamSet<f64> {
        match net {
            Net::G => &self.g.params,
            Net::Dc => &self.dc.params,
            Net::Aue => &self.aue.params,
        }
    }

    fn params_mut(&mut self, net: Net) -> &mut ParamSet<f64> {
        match net {
            Net::G => &mut self.g.params,
            Net::Dc => &mut self.dc.params,
            Net::Aue => &mut self.aue.params,
        }
    }

    /// Build `term` the way the trainer does: D/C sees a detached copy of
    /// G's output; in G's terms D/C and the estimator are constants. G's
    /// binder is trainable in every term so leaks into it would show.
    /// Returns the loss and per-parameter gradients of `probe`.
    pub fn evaluate(&self, term: Term, probe: Net) -> (f64, Vec<Option<Tensor<f64>>>) {
        let mut gr = Graph::new();
        let mut pg = Binder::new(&self.g.params, Mode::Train, true);
        let mut pd = Binder::new(&self.dc.params, Mode::Train, term.updates() == Net::Dc);
        let mut pa = Binder::new(&self.aue.params, Mode::Eval, term.updates() == Net::Aue);
        let x_src = gr.constant(self.x_src.clone());
        let x_re = gr.constant(self.x_re.clone());
        let y_tgt = gr.constant(self.y_tgt.clone());
        let e_tgt = gr.constant(self.e_tgt.clone());
        let fake = self.g.forward_graph(&mut gr, &mut pg, x_src, e_tgt);
        let gr = &mut gr;
        let fake_const = gr.detach(fake);
        let adv_d = |gr: &mut Graph<f64>, pd: &mut Binder<f64>| -> (Var, Var) {
            let real = self.dc.forward_graph(gr, pd, x_re).score;
            let fk = self.dc.forward_graph(gr, pd, fake_const).score;
            (gr.target_sq_mean(real, 1.0), gr.target_sq_mean(fk, 0.0))
        };
        let loss = match term {
            Term::AueTraining => {
                let out = self.aue.forward_graph(gr, &mut pa, y_tgt);
                gr.sq_err_sample_sum(out.pred, e_tgt)
            }
            Term::Au => {
                let f_x = self.aue.features_graph(gr, &mut pa, fake);
                let f_y = self.aue.features_graph(gr, &mut pa, y_tgt);
                gr.sq_err_elem_mean(f_x, f_y)
            }
            Term::Rec => gr.abs_err_mean(fake, x_src),
            Term::Tv => gr.total_variation(fake),
            Term::AdvD => {
                let (r, f) = adv_d(gr, &mut pd);
                gr.weighted_sum(&[(r, 1.0), (f, 1.0)])
            }
            Term::AdvG => {
                let s = self.dc.forward_graph(gr, &mut pd, fake).score;
                gr.target_sq_mean(s, 0.0)
            }
            Term::ClsReal => {
                let l = self.dc.forward_graph(gr, &mut pd, x_re).logits;
                gr.cross_entropy(l, &self.c)
            }
            Term::ClsFake => {
                let l = self.dc.forward_graph(gr, &mut pd, fake).logits;
                gr.cross_entropy(l, &self.c_src)
            }
            Term::DcObjective => {
                let (r, f) = adv_d(gr, &mut pd);
                let l = self.dc.forward_graph(gr, &mut pd, x_re).logits;
                let cls = gr.cross_entropy(l, &self.c);
                gr.weighted_sum(&[(r, 0.05), (f, 0.05), (cls, 0.05)])
            }
            Term::GObjective => {
                let out = self.dc.forward_graph(gr, &mut pd, fake);
                let f_x = self.aue.features_graph(gr, &mut pa, fake);
                let f_y = self.aue.features_graph(gr, &mut pa, y_tgt);
                let au = gr.sq_err_elem_mean(f_x, f_y);
                let rec = gr.abs_err_mean(fake, x_src);
                let tv = gr.total_variation(fake);
                let adv = gr.target_sq_mean(out.score, 0.0);
                let cls = gr.cross_entropy(out.logits, &self.c_src);
                gr.weighted_sum(&[(au, 1.0), (rec, 1.0), (tv, 1.0), (adv, -0.05), (cls, 0.05)])
            }
        };
        let value = gr.value(loss).item();
        gr.backward(loss);
        let grads = match probe {
            Net::G => pg.finish().grads(gr),
            Net::Dc => pd.finish().grads(gr),
            Net::Aue => pa.finish().grads(gr),
        };
        (value, grads)
    }
}

#[derive(Clone, Debug)]
pub struct TermReport {
    pub term: Term,
    pub checked: usize,
    pub max_rel_err: f64,
    /// Analytic and numeric values at the worst entry.
    pub worst: (f64, f64),
    /// Entries skipped because the two step sizes disagree.
    pub non_smooth: usize,
    /// Largest |gradient| reaching each parameter set the term excludes.
    pub leaked: f64,
}

/// Relative error `|a − n| / max(|a|, |n|, FLOOR)`.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

pub fn check_term(fx: &mut Fixture, term: Term) -> TermReport {
    let net = term.updates();
    let (_, analytic) = fx.evaluate(term, net);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let mut worst_pair = (0.0, 0.0);
    let mut non_smooth = 0;
    let kinds: Vec<(ParamKind, usize)> = fx
        .params(net)
        .entries()
        .iter()
        .map(|e| (e.kind, e.value.len()))
        .collect();
    for (k, (kind, len)) in kinds.into_iter().enumerate() {
        if kind != ParamKind::Weight {
            continue;
        }
        for j in 0..ENTRIES_PER_TENSOR.min(len) {
            let i = (j * 7919 + k * 31) % len;
            let a = analytic[k].as_ref().map_or(0.0, |t| t.data()[i]);
            let original = fx.params(net).entries()[k].value.data()[i];
            let mut eval = |d: f64| {
                fx.params_mut(net).entries_mut()[k].value.data_mut()[i] = original + d;
                let v = fx.evaluate(term, net).0;
                fx.params_mut(net).entries_mut()[k].value.data_mut()[i] = original;
                v
            };
            // Five-point stencil: truncation error O(h⁴), so the step can
            // stay large enough to keep rounding noise small.
            let mut stencil = |h: f64| (8.0 * (eval(h) - eval(-h)) - (eval(2.0 * h) - eval(-2.0 * h))) / (12.0 * h);
            let n = stencil(STEP);
            let coarse = stencil(COARSE_STEP);
            if rel_err(coarse, n) > SMOOTHNESS_TOL {
                non_smooth += 1;
                continue;
            }
            checked += 1;
            if rel_err(a, n) > worst {
                worst = rel_err(a, n);
                worst_pair = (a, n);
            }
        }
    }
    let mut leaked: f64 = 0.0;
    for other in [Net::G, Net::Dc, Net::Aue] {
        if other == net {
            continue;
        }
        for t in fx.evaluate(term, other).1.into_iter().flatten() {
            leaked = leaked.max(t.max_abs());
        }
    }
    TermReport {
        term,
        checked,
        max_rel_err: worst,
        worst: worst_pair,
        non_smooth,
        leaked,
    }
}

pub fn run_suite(seed: u64) -> Vec<TermReport> {
    let mut fx = Fixture::new(seed);
    Term::ALL.iter().map(|&t| check_term(&mut fx, t)).collect()
}
