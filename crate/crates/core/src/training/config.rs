use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::AU_DIM;
use crate::error::{GathError, Result};
use crate::losses::{AdvGForm, LossWeights};
use crate::networks::{ArchPreset, NetworkConfig};

/// Every knob of an adversarial run. Addressable as `key = value` lines in a
/// config file and as `--kebab-case` flags on the command line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub weights: LossWeights,
    pub seed: u64,
    pub image_side: usize,
    /// Number of source identities; 0 derives it from the source manifest.
    pub classes: usize,
    pub adv_g_form: AdvGForm,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
    /// D/C updates per generator update.
    pub dc_steps: usize,
    /// Linear decay of the learning rate to zero over `iterations`.
    pub lr_decay: bool,
    pub arch: ArchPreset,
    pub au_dim: usize,
    pub aue_iterations: u64,
    pub aue_batch_size: usize,
    pub aue_learning_rate: f64,
    /// Maximum random shift, in pixels, applied to AUE training images.
    pub aue_jitter: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 10_000,
            batch_size: 64,
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            weights: LossWeights::default(),
            seed: 0,
            image_side: 100,
            classes: 0,
            adv_g_form: AdvGForm::Paper,
            checkpoint_every: 1000,
            dc_steps: 1,
            lr_decay: false,
            arch: ArchPreset::Reference,
            au_dim: AU_DIM,
            aue_iterations: 2000,
            aue_batch_size: 32,
            aue_learning_rate: 1e-4,
            aue_jitter: 2,
        }
    }
}

/// Keys accepted by [`TrainConfig::set`], in file order.
pub const CONFIG_KEYS: &[&str] = &[
    "iterations",
    "batch_size",
    "learning_rate",
    "adam_beta1",
    "adam_beta2",
    "lambda_rec",
    "lambda_adv",
    "lambda_cls",
    "lambda_tv",
    "seed",
    "image_side",
    "classes",
    "adv_g_form",
    "checkpoint_every",
    "dc_steps",
    "lr_decay",
    "arch",
    "au_dim",
    "aue_iterations",
    "aue_batch_size",
    "aue_learning_rate",
    "aue_jitter",
];

fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .trim()
        .parse()
        .map_err(|_| GathError::Config(format!("invalid value `{value}` for `{key}`")))
}

impl TrainConfig {
    /// Small synthetic-corpus defaults: 32 px inputs, narrow networks, batch 16.
    pub fn synth() -> Self {
        TrainConfig {
            image_side: 32,
            arch: ArchPreset::Synth,
            batch_size: 16,
            ..Default::default()
        }
    }

    /// Assign one field by its file key (dashes are accepted for underscores).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let k = key.as_str();
        match k {
            "iterations" => self.iterations = parse(k, value)?,
            "batch_size" => self.batch_size = parse(k, value)?,
            "learning_rate" => self.learning_rate = parse(k, value)?,
            "adam_beta1" => self.adam_beta1 = parse(k, value)?,
            "adam_beta2" => self.adam_beta2 = parse(k, value)?,
            "lambda_rec" => self.weights.lambda_rec = parse(k, value)?,
            "lambda_adv" => self.weights.lambda_adv = parse(k, value)?,
            "lambda_cls" => self.weights.lambda_cls = parse(k, value)?,
            "lambda_tv" => self.weights.lambda_tv = parse(k, value)?,
            "seed" => self.seed = parse(k, value)?,
            "image_side" => self.image_side = parse(k, value)?,
            "classes" => self.classes = parse(k, value)?,
            "adv_g_form" => self.adv_g_form = value.trim().parse()?,
            "checkpoint_every" => self.checkpoint_every = parse(k, value)?,
            "dc_steps" => self.dc_steps = parse(k, value)?,
            "lr_decay" => self.lr_decay = parse(k, value)?,
            "arch" => self.arch = value.trim().parse()?,
            "au_dim" => self.au_dim = parse(k, value)?,
            "aue_iterations" => self.aue_iterations = parse(k, value)?,
            "aue_batch_size" => self.aue_batch_size = parse(k, value)?,
            "aue_learning_rate" => self.aue_learning_rate = parse(k, value)?,
            "aue_jitter" => self.aue_jitter = parse(k, value)?,
            _ => return Err(GathError::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Apply `key = value` lines; blank lines and `#` comments are skipped.
    /// Lines after a `[section]` header other than `[train]` are ignored so
    /// one file can also carry settings for other commands.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut in_train = true;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                in_train = &line[1..line.len() - 1] == "train";
                continue;
            }
            if !in_train {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| GathError::Config(format!("line {}: expected `key = value`", i + 1)))?;
            self.set(k, v)
                .map_err(|e| GathError::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GathError::io(path, e))?;
        let mut cfg = TrainConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let w = &self.weights;
        let values: Vec<String> = vec![
            self.iterations.to_string(),
            self.batch_size.to_string(),
            self.learning_rate.to_string(),
            self.adam_beta1.to_string(),
            self.adam_beta2.to_string(),
            w.lambda_rec.to_string(),
            w.lambda_adv.to_string(),
            w.lambda_cls.to_string(),
            w.lambda_tv.to_string(),
            self.seed.to_string(),
            self.image_side.to_string(),
            self.classes.to_string(),
            self.adv_g_form.to_string(),
            self.checkpoint_every.to_string(),
            self.dc_steps.to_string(),
            self.lr_decay.to_string(),
            self.arch.to_string(),
            self.au_dim.to_string(),
            self.aue_iterations.to_string(),
            self.aue_batch_size.to_string(),
            self.aue_learning_rate.to_string(),
            self.aue_jitter.to_string(),
        ];
        CONFIG_KEYS
            .iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GathError::Config(m.to_string()));
        if self.batch_size == 0 || self.aue_batch_size == 0 {
            return bad("batch sizes must be at least 1");
        }
        if !(self.learning_rate > 0.0) || !(self.aue_learning_rate > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam coefficients must lie in [0, 1)");
        }
        if self.dc_steps == 0 {
            return bad("dc_steps must be at least 1");
        }
        if self.au_dim == 0 {
            return bad("au_dim must be at least 1");
        }
        let net = NetworkConfig::preset(self.arch, self.classes.max(1), self.au_dim);
        if net.side != self.image_side {
            return Err(GathError::Config(format!(
                "arch `{}` expects image_side {}, got {}",
                self.arch, net.side, self.image_side
            )));
        }
        self.weights.validate()
    }

    pub fn network(&self, classes: usize) -> NetworkConfig {
        NetworkConfig::preset(self.arch, classes, self.au_dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_recipe() {
        let c = TrainConfig::default();
        assert_eq!(c.batch_size, 64);
        assert_eq!(c.learning_rate, 1e-4);
        assert_eq!((c.adam_beta1, c.adam_beta2), (0.9, 0.999));
        assert_eq!(c.weights, LossWeights::default());
        c.validate().unwrap();
        TrainConfig::synth().validate().unwrap();
    }

    #[test]
    fn text_round_trip_covers_every_key() {
        let mut c = TrainConfig::synth();
        c.seed = 99;
        c.weights.lambda_adv = 0.125;
        c.adv_g_form = AdvGForm::Lsgan;
        c.lr_decay = true;
        let text = c.to_text();
        assert_eq!(text.lines().count(), CONFIG_KEYS.len());
        let mut d = TrainConfig::default();
        d.apply_text(&text).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn overrides_and_errors() {
        let mut c = TrainConfig::default();
        c.apply_text("# comment\nbatch_size = 8\n\n[postprocess]\nclahe_clip = 3\n[train]\nseed=4 # trailing\n")
            .unwrap();
        assert_eq!((c.batch_size, c.seed), (8, 4));
        c.set("learning-rate", "0.5").unwrap();
        assert_eq!(c.learning_rate, 0.5);
        assert!(c.apply_text("bogus = 1").is_err());
        assert!(c.apply_text("seed 4").is_err());
        assert!(c.set("batch_size", "-3").is_err());
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let missing = Path::new("/nonexistent/train.cfg");
        let err = TrainConfig::from_file(missing).unwrap_err().to_string();
        assert!(err.contains("/nonexistent/train.cfg"));
    }
}
