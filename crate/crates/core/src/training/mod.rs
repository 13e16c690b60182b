//! Estimator pretraining and the alternating D/C ↔ G optimization, with
//! checkpointing and deterministic resume.

pub mod checkpoint;
mod config;

use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_bundle, save_bundle, Bundle};
pub use config::{TrainConfig, CONFIG_KEYS};

use crate::autograd::Graph;
use crate::data::{sample_minibatch, LoadedSet, TrainBatch};
use crate::error::{GathError, Result};
use crate::losses::{check_labels, AdvGForm, LossReport};
use crate::networks::{AueConfig, AuEstimator, DiscriminatorClassifier, Generator, NetworkConfig, BN_MOMENTUM};
use crate::nn::{Binder, Mode, ParamSet};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Tensor;

/// ChaCha stream used to initialize G and D/C.
pub const INIT_STREAM: u64 = 0;
/// ChaCha stream used to draw adversarial minibatches.
pub const SAMPLE_STREAM: u64 = 1;
const AUE_INIT_STREAM: u64 = 2;
const AUE_SAMPLE_STREAM: u64 = 3;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Serializable position of a ChaCha generator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Decimal `u128` word position.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| GathError::Integrity(format!("bad rng position `{}`", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

fn adam_config(cfg: &TrainConfig, lr: f64) -> AdamConfig {
    AdamConfig {
        lr,
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        ..Default::default()
    }
}

/// Shift a `[3, H, W]` image by `(dy, dx)` pixels, replicating the border.
fn shift_image(src: &[f32], h: usize, w: usize, dy: isize, dx: isize, out: &mut Vec<f32>) {
    for c in 0..3 {
        for y in 0..h {
            let sy = (y as isize - dy).clamp(0, h as isize - 1) as usize;
            for x in 0..w {
                let sx = (x as isize - dx).clamp(0, w as isize - 1) as usize;
                out.push(src[(c * h + sy) * w + sx]);
            }
        }
    }
}

/// Fit the AU estimator on `target` by minimizing the per-sample squared AU
/// error. `on_iter(iteration, loss)` sees the training curve.
pub fn train_aue(cfg: &TrainConfig, target: &LoadedSet, mut on_iter: impl FnMut(u64, f64)) -> Result<AuEstimator<f32>> {
    cfg.validate()?;
    if let Some(i) = target.records.iter().position(|r| r.au.is_none()) {
        return Err(GathError::Schema(format!("target record {i} has no AU vector")));
    }
    if target.side != cfg.image_side {
        return Err(GathError::Config(format!(
            "target set loaded at side {}, config expects {}",
            target.side, cfg.image_side
        )));
    }
    let net = cfg.network(1);
    let mut init = stream_rng(cfg.seed, AUE_INIT_STREAM);
    let mut aue = AuEstimator::<f32>::new(net.aue.clone(), &mut init);
    if cfg.aue_iterations == 0 {
        return Ok(aue);
    }
    if target.is_empty() {
        return Err(GathError::Sampling("empty target set".into()));
    }
    let mut rng = stream_rng(cfg.seed, AUE_SAMPLE_STREAM);
    let mut opt = Adam::new(adam_config(cfg, cfg.aue_learning_rate), &aue.params);
    let (side, n, a) = (cfg.image_side, cfg.aue_batch_size, cfg.au_dim);
    let j = cfg.aue_jitter as i64;
    for it in 0..cfg.aue_iterations {
        let mut xs = Vec::with_capacity(n * 3 * side * side);
        let mut es = Vec::with_capacity(n * a);
        for _ in 0..n {
            let r = &target.records[rng.random_range(0..target.len())];
            let (dy, dx) = if j > 0 {
                (rng.random_range(-j..=j) as isize, rng.random_range(-j..=j) as isize)
            } else {
                (0, 0)
            };
            shift_image(r.image.tensor().data(), side, side, dy, dx, &mut xs);
            es.extend_from_slice(r.au.as_ref().expect("checked above").values());
        }
        let x = Tensor::from_vec(&[n, 3, side, side], xs)?;
        let e = Tensor::from_vec(&[n, a], es)?;
        let mut g = Graph::new();
        let mut p = Binder::new(&aue.params, Mode::Eval, true);
        let xv = g.constant(x);
        let ev = g.constant(e);
        let out = aue.forward_graph(&mut g, &mut p, xv);
        let loss = g.sq_err_sample_sum(out.pred, ev);
        let value = g.value(loss).item() as f64;
        if !value.is_finite() {
            return Err(GathError::NonFinite {
                term: "aue",
                iteration: it,
            });
        }
        g.backward(loss);
        let grads = p.finish().grads(&g);
        opt.update(&mut aue.params, &grads);
        on_iter(it + 1, value);
    }
    Ok(aue)
}

/// Everything needed to continue or evaluate a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub network: NetworkConfig,
    pub iteration: u64,
    pub rng: RngState,
    pub generator: ParamSet<f32>,
    pub dc: ParamSet<f32>,
    pub aue: ParamSet<f32>,
    pub opt_g: Adam<f32>,
    pub opt_dc: Adam<f32>,
}

#[derive(Serialize, Deserialize)]
struct OptMeta {
    cfg: AdamConfig,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    config: TrainConfig,
    network: NetworkConfig,
    iteration: u64,
    rng: RngState,
    opt_g: OptMeta,
    opt_dc: OptMeta,
}

fn moments(template: &ParamSet<f32>, tensors: &[Tensor<f32>]) -> ParamSet<f32> {
    let mut out = ParamSet::new();
    for (e, t) in template.entries().iter().zip(tensors) {
        out.add(e.name.clone(), e.kind, t.clone());
    }
    out
}

fn restore_adam(meta: OptMeta, m: &ParamSet<f32>, v: &ParamSet<f32>) -> Adam<f32> {
    let take = |s: &ParamSet<f32>| s.entries().iter().map(|e| e.value.clone()).collect();
    Adam {
        cfg: meta.cfg,
        step: meta.step,
        m: take(m),
        v: take(v),
    }
}

fn seeded_shell() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

impl Checkpoint {
    pub const KIND: &'static str = "model";

    pub fn classes(&self) -> usize {
        self.network.dc.num_classes
    }

    /// Guard against evaluating with a different class count.
    pub fn expect_classes(&self, classes: usize) -> Result<()> {
        if self.classes() != classes {
            return Err(GathError::Incompatible(format!(
                "checkpoint has {} classes, expected {classes}",
                self.classes()
            )));
        }
        Ok(())
    }

    pub fn build_generator(&self) -> Result<Generator<f32>> {
        let mut g = Generator::new(self.network.generator.clone(), &mut seeded_shell());
        g.params.assign(&self.generator)?;
        Ok(g)
    }

    pub fn build_dc(&self) -> Result<DiscriminatorClassifier<f32>> {
        let mut d = DiscriminatorClassifier::new(self.network.dc.clone(), &mut seeded_shell());
        d.params.assign(&self.dc)?;
        Ok(d)
    }

    pub fn build_aue(&self) -> Result<AuEstimator<f32>> {
        let mut a = AuEstimator::new(self.network.aue.clone(), &mut seeded_shell());
        a.params.assign(&self.aue)?;
        Ok(a)
    }

    pub fn to_bundle(&self) -> Bundle {
        let meta = ModelMeta {
            config: self.config.clone(),
            network: self.network.clone(),
            iteration: self.iteration,
            rng: self.rng.clone(),
            opt_g: OptMeta {
                cfg: self.opt_g.cfg,
                step: self.opt_g.step,
            },
            opt_dc: OptMeta {
                cfg: self.opt_dc.cfg,
                step: self.opt_dc.step,
            },
        };
        let groups = [
            ("generator", self.generator.clone()),
            ("dc", self.dc.clone()),
            ("aue", self.aue.clone()),
            ("opt_g.m", moments(&self.generator, &self.opt_g.m)),
            ("opt_g.v", moments(&self.generator, &self.opt_g.v)),
            ("opt_dc.m", moments(&self.dc, &self.opt_dc.m)),
            ("opt_dc.v", moments(&self.dc, &self.opt_dc.v)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Bundle {
            kind: Self::KIND.into(),
            meta: serde_json::to_value(meta).expect("metadata serializes"),
            groups,
        }
    }

    pub fn from_bundle(b: &Bundle) -> Result<Self> {
        if b.kind != Self::KIND {
            return Err(GathError::Incompatible(format!("expected a model checkpoint, found `{}`", b.kind)));
        }
        let meta: ModelMeta =
            serde_json::from_value(b.meta.clone()).map_err(|e| GathError::Incompatible(format!("metadata: {e}")))?;
        let ck = Checkpoint {
            config: meta.config,
            network: meta.network,
            iteration: meta.iteration,
            rng: meta.rng,
            generator: b.group("generator")?.clone(),
            dc: b.group("dc")?.clone(),
            aue: b.group("aue")?.clone(),
            opt_g: restore_adam(meta.opt_g, b.group("opt_g.m")?, b.group("opt_g.v")?),
            opt_dc: restore_adam(meta.opt_dc, b.group("opt_dc.m")?, b.group("opt_dc.v")?),
        };
        // Fails early on architecture drift.
        ck.build_generator()?;
        ck.build_dc()?;
        ck.build_aue()?;
        Ok(ck)
    }
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    save_bundle(path, &ck.to_bundle())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bundle(&load_bundle(path)?)
}

const AUE_KIND: &str = "aue";

pub fn save_aue(aue: &AuEstimator<f32>, path: &Path) -> Result<()> {
    let bundle = Bundle {
        kind: AUE_KIND.into(),
        meta: serde_json::json!({ "aue": aue.cfg }),
        groups: [("aue".to_string(), aue.params.clone())].into_iter().collect(),
    };
    save_bundle(path, &bundle)
}

/// Read an estimator saved by [`save_aue`] or the estimator inside a model
/// checkpoint.
pub fn load_aue(path: &Path) -> Result<AuEstimator<f32>> {
    let b = load_bundle(path)?;
    if b.kind == Checkpoint::KIND {
        return Checkpoint::from_bundle(&b)?.build_aue();
    }
    if b.kind != AUE_KIND {
        return Err(GathError::Incompatible(format!("expected an estimator file, found `{}`", b.kind)));
    }
    let cfg: AueConfig = serde_json::from_value(b.meta["aue"].clone())
        .map_err(|e| GathError::Incompatible(format!("estimator metadata: {e}")))?;
    let mut aue = AuEstimator::new(cfg, &mut seeded_shell());
    aue.params.assign(b.group("aue")?)?;
    Ok(aue)
}

/// One line of the JSON-lines training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iteration: u64,
    pub lr: f64,
    #[serde(flatten)]
    pub losses: LossReport,
}

/// Optional side channels of [`Trainer::run`].
#[derive(Default)]
pub struct RunHooks<'a> {
    /// Receives one JSON object per iteration.
    pub log: Option<&'a mut dyn Write>,
    /// Rewritten atomically every `checkpoint_every` iterations and at the end.
    pub checkpoint_path: Option<PathBuf>,
    pub on_step: Option<&'a mut dyn FnMut(u64, &LossReport)>,
}

/// Live training state.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub network: NetworkConfig,
    pub gen: Generator<f32>,
    pub dc: DiscriminatorClassifier<f32>,
    pub aue: AuEstimator<f32>,
    pub opt_g: Adam<f32>,
    pub opt_dc: Adam<f32>,
    pub iteration: u64,
    rng: ChaCha8Rng,
    check_alternation: bool,
    aue_checksum: u64,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, classes: usize, aue: AuEstimator<f32>) -> Result<Self> {
        cfg.validate()?;
        if classes == 0 {
            return Err(GathError::Config("class count must be at least 1".into()));
        }
        let network = cfg.network(classes);
        if aue.cfg != network.aue {
            return Err(GathError::Incompatible(format!(
                "estimator architecture {:?} does not match {:?}",
                aue.cfg, network.aue
            )));
        }
        let mut init = stream_rng(cfg.seed, INIT_STREAM);
        let gen = Generator::new(network.generator.clone(), &mut init);
        let dc = DiscriminatorClassifier::new(network.dc.clone(), &mut init);
        let opt_g = Adam::new(adam_config(&cfg, cfg.learning_rate), &gen.params);
        let opt_dc = Adam::new(adam_config(&cfg, cfg.learning_rate), &dc.params);
        let aue_checksum = aue.params.checksum();
        Ok(Trainer {
            rng: stream_rng(cfg.seed, SAMPLE_STREAM),
            cfg,
            network,
            gen,
            dc,
            aue,
            opt_g,
            opt_dc,
            iteration: 0,
            check_alternation: cfg!(debug_assertions),
            aue_checksum,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let aue = ck.build_aue()?;
        Ok(Trainer {
            cfg: ck.config.clone(),
            network: ck.network.clone(),
            gen: ck.build_generator()?,
            dc: ck.build_dc()?,
            aue_checksum: aue.params.checksum(),
            aue,
            opt_g: ck.opt_g.clone(),
            opt_dc: ck.opt_dc.clone(),
            iteration: ck.iteration,
            rng: ck.rng.restore()?,
            check_alternation: cfg!(debug_assertions),
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            network: self.network.clone(),
            iteration: self.iteration,
            rng: RngState::capture(&self.rng),
            generator: self.gen.params.clone(),
            dc: self.dc.params.clone(),
            aue: self.aue.params.clone(),
            opt_g: self.opt_g.clone(),
            opt_dc: self.opt_dc.clone(),
        }
    }

    /// Verify parameter freezing on every step (on by default in debug builds).
    pub fn set_alternation_checks(&mut self, on: bool) {
        self.check_alternation = on;
    }

    pub fn classes(&self) -> usize {
        self.network.dc.num_classes
    }

    /// Learning rate in effect for the next step.
    pub fn current_lr(&self) -> f64 {
        if self.cfg.lr_decay && self.cfg.iterations > 0 {
            let frac = (self.iteration as f64 / self.cfg.iterations as f64).min(1.0);
            self.cfg.learning_rate * (1.0 - frac)
        } else {
            self.cfg.learning_rate
        }
    }

    pub fn sample_batch(&mut self, source: &LoadedSet, target: &LoadedSet) -> Result<TrainBatch> {
        sample_minibatch(source, target, &mut self.rng, self.cfg.batch_size)
    }

    fn alternation_guard(&self, what: &str, before: u64, after: u64) -> Result<()> {
        if before != after {
            return Err(GathError::Precondition(format!(
                "alternation violated at iteration {}: {what} changed",
                self.iteration
            )));
        }
        Ok(())
    }

    fn non_finite(&self, term: &'static str) -> GathError {
        GathError::NonFinite {
            term,
            iteration: self.iteration,
        }
    }

    /// One D/C update then one G update. G's forward pass is evaluated once:
    /// the D/C step sees a detached copy of its output, and since the D/C
    /// update leaves θ_G untouched the same graph serves the G step.
    pub fn step(&mut self, batch: &TrainBatch) -> Result<LossReport> {
        let classes = self.classes();
        for &l in batch.c.iter().chain(&batch.c_src) {
            if l >= classes {
                return Err(GathError::Label { label: l, classes });
            }
        }
        let lr = self.current_lr();
        self.opt_g.cfg.lr = lr;
        self.opt_dc.cfg.lr = lr;
        let w = self.cfg.weights;
        let g_before = self.check_alternation.then(|| self.gen.params.checksum());

        let mut gg = Graph::new();
        let mut pg = Binder::new(&self.gen.params, Mode::Train, true);
        let x_src = gg.constant(batch.x_src.clone());
        let e_tgt = gg.constant(batch.e_tgt.clone());
        let fake = self.gen.forward_graph(&mut gg, &mut pg, x_src, e_tgt);
        let bound_g = pg.finish();
        let fake_value = gg.value(fake).clone();

        let mut report = LossReport::default();
        for _ in 0..self.cfg.dc_steps {
            let (adv_d, cls_real) = self.dc_step(&fake_value, batch)?;
            report.adv_d = adv_d;
            report.cls_real = cls_real;
        }
        if let Some(before) = g_before {
            self.alternation_guard("generator during D/C step", before, self.gen.params.checksum())?;
        }
        let dc_before = self.check_alternation.then(|| self.dc.params.checksum());

        let mut pd = Binder::new(&self.dc.params, Mode::Train, false);
        let out = self.dc.forward_graph(&mut gg, &mut pd, fake);
        let mut pa = Binder::new(&self.aue.params, Mode::Eval, false);
        let f_x = self.aue.features_graph(&mut gg, &mut pa, fake);
        let y_tgt = gg.constant(batch.y_tgt.clone());
        let f_y = self.aue.features_graph(&mut gg, &mut pa, y_tgt);
        let au = gg.sq_err_elem_mean(f_x, f_y);
        let rec = gg.abs_err_mean(fake, x_src);
        let tv = gg.total_variation(fake);
        let (adv_g, adv_sign) = match self.cfg.adv_g_form {
            AdvGForm::Paper => (gg.target_sq_mean(out.score, 0.0), -1.0),
            AdvGForm::Lsgan => (gg.target_sq_mean(out.score, 1.0), 1.0),
        };
        check_labels(gg.value(out.logits), &batch.c_src)?;
        let cls_fake = gg.cross_entropy(out.logits, &batch.c_src);
        let total = gg.weighted_sum(&[
            (au, 1.0),
            (rec, w.lambda_rec as f32),
            (tv, w.lambda_tv as f32),
            (adv_g, (adv_sign * w.lambda_adv) as f32),
            (cls_fake, w.lambda_cls as f32),
        ]);
        let v = |var| gg.value(var).item() as f64;
        report.au = v(au);
        report.rec = v(rec);
        report.tv = v(tv);
        report.adv_g = adv_sign * v(adv_g);
        report.cls_fake = v(cls_fake);
        let report = report.with_totals(&w);
        if let Some(term) = report.first_non_finite() {
            return Err(self.non_finite(term));
        }
        gg.backward(total);
        let grads = bound_g.grads(&gg);
        self.opt_g.update(&mut self.gen.params, &grads);
        self.gen.params.apply_bn_stats(&bound_g, BN_MOMENTUM as f32);

        if let Some(before) = dc_before {
            self.alternation_guard("D/C during generator step", before, self.dc.params.checksum())?;
        }
        if self.check_alternation {
            self.alternation_guard("estimator", self.aue_checksum, self.aue.params.checksum())?;
        }
        self.iteration += 1;
        Ok(report)
    }

    /// Minimize `λ_adv·adv_d + λ_cls·cls_real` with G's output as a constant.
    fn dc_step(&mut self, fake: &Tensor<f32>, batch: &TrainBatch) -> Result<(f64, f64)> {
        let w = self.cfg.weights;
        let mut g = Graph::new();
        let mut p = Binder::new(&self.dc.params, Mode::Train, true);
        let x_re = g.constant(batch.x_re.clone());
        let x_fake = g.constant(fake.clone());
        let real = self.dc.forward_graph(&mut g, &mut p, x_re);
        let fake_out = self.dc.forward_graph(&mut g, &mut p, x_fake);
        let d_real = g.target_sq_mean(real.score, 1.0);
        let d_fake = g.target_sq_mean(fake_out.score, 0.0);
        check_labels(g.value(real.logits), &batch.c)?;
        let cls_real = g.cross_entropy(real.logits, &batch.c);
        let total = g.weighted_sum(&[
            (d_real, w.lambda_adv as f32),
            (d_fake, w.lambda_adv as f32),
            (cls_real, w.lambda_cls as f32),
        ]);
        let adv_d = g.value(d_real).item() as f64 + g.value(d_fake).item() as f64;
        let cls = g.value(cls_real).item() as f64;
        if !adv_d.is_finite() {
            return Err(self.non_finite("adv_d"));
        }
        if !cls.is_finite() {
            return Err(self.non_finite("cls_real"));
        }
        g.backward(total);
        let bound = p.finish();
        let grads = bound.grads(&g);
        self.opt_dc.update(&mut self.dc.params, &grads);
        self.dc.params.apply_bn_stats(&bound, BN_MOMENTUM as f32);
        Ok((adv_d, cls))
    }

    /// Step until `cfg.iterations`, sampling a fresh batch per step.
    pub fn run(&mut self, source: &LoadedSet, target: &LoadedSet, hooks: &mut RunHooks) -> Result<()> {
        let every = self.cfg.checkpoint_every;
        while self.iteration < self.cfg.iterations {
            let lr = self.current_lr();
            let batch = self.sample_batch(source, target)?;
            let report = self.step(&batch)?;
            if let Some(log) = hooks.log.as_deref_mut() {
                let entry = LogEntry {
                    iteration: self.iteration,
                    lr,
                    losses: report,
                };
                let line = serde_json::to_string(&entry).expect("log entry serializes");
                writeln!(log, "{line}").map_err(|e| GathError::io("<training log>", e))?;
            }
            if let Some(f) = hooks.on_step.as_deref_mut() {
                f(self.iteration, &report);
            }
            if self.iteration % 100 == 0 {
                info!(
                    "iter {} au {:.4} rec {:.4} adv_d {:.4} cls_real {:.4}",
                    self.iteration, report.au, report.rec, report.adv_d, report.cls_real
                );
            }
            if every > 0 && self.iteration % every == 0 {
                self.write_checkpoint(hooks)?;
            }
        }
        self.write_checkpoint(hooks)
    }

    fn write_checkpoint(&self, hooks: &mut RunHooks) -> Result<()> {
        let Some(path) = hooks.checkpoint_path.clone() else {
            return Ok(());
        };
        let result = save_checkpoint(&self.checkpoint(), &path);
        if result.is_err() {
            if let Some(log) = hooks.log.as_deref_mut() {
                let _ = log.flush();
            }
        }
        result
    }
}

/// Class count for a run: the configured value, or one past the largest
/// source label when the configuration leaves it at 0.
pub fn resolve_classes(cfg: &TrainConfig, source: &LoadedSet) -> Result<usize> {
    let needed = source
        .records
        .iter()
        .filter_map(|r| r.identity)
        .map(|l| l.0 + 1)
        .max()
        .unwrap_or(0);
    match cfg.classes {
        0 if needed == 0 => Err(GathError::Sampling("source set has no labelled records".into())),
        0 => Ok(needed),
        c if c < needed => Err(GathError::Label {
            label: needed - 1,
            classes: c,
        }),
        c => Ok(c),
    }
}

/// Full adversarial run from initialization; returns the final checkpoint.
pub fn train(
    cfg: &TrainConfig,
    source: &LoadedSet,
    target: &LoadedSet,
    aue: AuEstimator<f32>,
    hooks: &mut RunHooks,
) -> Result<Checkpoint> {
    let classes = resolve_classes(cfg, source)?;
    let mut t = Trainer::new(cfg.clone(), classes, aue)?;
    t.run(source, target, hooks)?;
    Ok(t.checkpoint())
}

/// Continue a run from `ck` up to `iterations` total steps.
pub fn resume(
    ck: &Checkpoint,
    iterations: u64,
    source: &LoadedSet,
    target: &LoadedSet,
    hooks: &mut RunHooks,
) -> Result<Checkpoint> {
    let mut t = Trainer::from_checkpoint(ck)?;
    t.cfg.iterations = iterations;
    t.run(source, target, hooks)?;
    Ok(t.checkpoint())
}
