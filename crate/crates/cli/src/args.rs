use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use gath_core::networks::NetworkConfig;
use gath_core::training::TrainConfig;
use gath_core::Result;

#[derive(Debug, Parser)]
#[command(name = "gath", version, about = "Action-unit driven portrait animation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic face-sprite corpus with manifests, AU files and masks.
    GenCorpus(GenCorpusArgs),
    /// Fit the AU estimator on a target manifest.
    TrainAue(TrainAueArgs),
    /// Run adversarial training.
    Train(TrainArgs),
    /// Compute pixel and AU metrics for a checkpoint.
    Evaluate(EvaluateArgs),
    /// Animate one portrait with one AU vector.
    Synthesize(SynthesizeArgs),
    /// Neutralize a portrait (all-zero AU vector).
    Suppress(SuppressArgs),
    /// Render one frame per row of a TSV AU sequence.
    Animate(AnimateArgs),
    /// Serve the HTTP inference API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub identities: usize,
    #[arg(long, default_value_t = 16)]
    pub expressions: usize,
    #[arg(long, default_value_t = 32)]
    pub side: usize,
    #[arg(long, default_value_t = 3)]
    pub seed: u64,
    /// Fraction of target records replaced by source identities.
    #[arg(long, default_value_t = 0.0)]
    pub mix: f64,
    #[arg(long, default_value_t = 46)]
    pub au_dim: usize,
}

/// One optional flag per training config key; values parse like config
/// file values.
#[derive(Debug, Default, Args)]
pub struct TrainFlags {
    /// `key = value` file; `[train]` section or top level.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub learning_rate: Option<String>,
    #[arg(long)]
    pub adam_beta1: Option<String>,
    #[arg(long)]
    pub adam_beta2: Option<String>,
    #[arg(long)]
    pub lambda_rec: Option<String>,
    #[arg(long)]
    pub lambda_adv: Option<String>,
    #[arg(long)]
    pub lambda_cls: Option<String>,
    #[arg(long)]
    pub lambda_tv: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub image_side: Option<String>,
    #[arg(long)]
    pub classes: Option<String>,
    #[arg(long)]
    pub adv_g_form: Option<String>,
    #[arg(long)]
    pub checkpoint_every: Option<String>,
    #[arg(long)]
    pub dc_steps: Option<String>,
    #[arg(long)]
    pub lr_decay: Option<String>,
    /// `reference` (100 px), `synth` (32 px) or `mini` (8 px); also sets
    /// the image side unless `--image-side` is given.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub au_dim: Option<String>,
    #[arg(long)]
    pub aue_iterations: Option<String>,
    #[arg(long)]
    pub aue_batch_size: Option<String>,
    #[arg(long)]
    pub aue_learning_rate: Option<String>,
    #[arg(long)]
    pub aue_jitter: Option<String>,
}

impl TrainFlags {
    fn pairs(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("iterations", &self.iterations),
            ("batch_size", &self.batch_size),
            ("learning_rate", &self.learning_rate),
            ("adam_beta1", &self.adam_beta1),
            ("adam_beta2", &self.adam_beta2),
            ("lambda_rec", &self.lambda_rec),
            ("lambda_adv", &self.lambda_adv),
            ("lambda_cls", &self.lambda_cls),
            ("lambda_tv", &self.lambda_tv),
            ("seed", &self.seed),
            ("image_side", &self.image_side),
            ("classes", &self.classes),
            ("adv_g_form", &self.adv_g_form),
            ("checkpoint_every", &self.checkpoint_every),
            ("dc_steps", &self.dc_steps),
            ("lr_decay", &self.lr_decay),
            ("arch", &self.arch),
            ("au_dim", &self.au_dim),
            ("aue_iterations", &self.aue_iterations),
            ("aue_batch_size", &self.aue_batch_size),
            ("aue_learning_rate", &self.aue_learning_rate),
            ("aue_jitter", &self.aue_jitter),
        ]
    }

    /// Apply the flags given on the command line on top of `cfg`.
    pub fn apply(&self, cfg: &mut TrainConfig) -> Result<()> {
        for (key, value) in self.pairs() {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        if self.arch.is_some() && self.image_side.is_none() {
            cfg.image_side = NetworkConfig::preset(cfg.arch, 1, cfg.au_dim).side;
        }
        Ok(())
    }

    /// Defaults, then the config file, then command-line flags.
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::from_file(p)?,
            None => TrainConfig::default(),
        };
        self.apply(&mut cfg)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainAueArgs {
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    /// Estimator from `train-aue`; required unless resuming.
    #[arg(long)]
    pub aue: Option<PathBuf>,
    /// Final checkpoint; also rewritten every `checkpoint-every` steps.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from this checkpoint up to `--iterations` total steps.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// JSON-lines loss log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct PostArgs {
    /// Comma-separated subset of `clahe,denoise,sharpen`.
    #[arg(long, default_value = "none")]
    pub postprocess: String,
    /// Config file whose `[postprocess]` section sets stage parameters.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Records with identity and AU file (masks optional).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Held-out AU estimator used as the metric oracle.
    #[arg(long)]
    pub oracle: PathBuf,
    /// Directory for `report.json` and `report.txt`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    /// AU file: whitespace- or comma-separated coefficients.
    #[arg(long)]
    pub au: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub post: PostArgs,
}

#[derive(Debug, Args)]
pub struct SuppressArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub post: PostArgs,
}

#[derive(Debug, Args)]
pub struct AnimateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    /// TSV, one row of AU coefficients per frame.
    #[arg(long)]
    pub au_seq: PathBuf,
    /// Receives `frame_0000.png`, `frame_0001.png`, ...
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub post: PostArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Checkpoint to serve; without one every synthesis request gets 503.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
}
