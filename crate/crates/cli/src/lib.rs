//! The `gath` command: corpus generation, training, evaluation, inference
//! and the HTTP server.

pub mod args;
pub mod server;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use gath_core::data::{load_au_sequence, load_au_vector, load_manifest, AuVector, LoadedSet, RasterImage, Role};
use gath_core::evaluation::{evaluate_checkpoint, load_eval_records, write_report};
use gath_core::postprocess::{PostprocessConfig, Stages};
use gath_core::service::Model;
use gath_core::synthbench::{generate_corpus, CorpusSpec};
use gath_core::training::{load_aue, load_checkpoint, resume, save_aue, save_checkpoint, train, train_aue, RunHooks};
use gath_core::{GathError, Result};

pub use args::Cli;
use args::{AnimateArgs, Command, EvaluateArgs, PostArgs, ServeArgs, SuppressArgs, SynthesizeArgs, TrainAueArgs, TrainArgs};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GathError + '_ {
    move |e| GathError::io(path, e)
}

fn post_config(path: Option<&Path>, stages: Stages) -> Result<PostprocessConfig> {
    let mut cfg = PostprocessConfig::with_stages(stages);
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).map_err(io_err(p))?;
        cfg.apply_text(&text)?;
    }
    Ok(cfg)
}

fn load_model(ckpt: &Path, post: &PostArgs) -> Result<(Model, Stages)> {
    let stages: Stages = post.postprocess.parse()?;
    let cfg = post_config(post.config.as_deref(), stages)?;
    Ok((Model::load(ckpt, cfg)?, stages))
}

fn load_set(path: &Path, role: Role, side: usize, au_dim: usize) -> Result<LoadedSet> {
    LoadedSet::load(&load_manifest(path, role)?, side, au_dim)
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => std::fs::create_dir_all(p).map_err(io_err(p)),
        _ => Ok(()),
    }
}

fn gen_corpus(a: &args::GenCorpusArgs) -> Result<()> {
    let spec = CorpusSpec {
        mix_fraction: a.mix,
        au_dim: a.au_dim,
        ..CorpusSpec::new(a.identities, a.expressions, a.side, a.seed)
    };
    let corpus = generate_corpus(spec)?;
    let paths = corpus.write(&a.out)?;
    println!("source manifest: {}", paths.source_manifest.display());
    println!("target manifest: {}", paths.target_manifest.display());
    println!("neutral table:   {}", paths.neutral_table.display());
    Ok(())
}

fn cmd_train_aue(a: &TrainAueArgs) -> Result<()> {
    let cfg = a.train.resolve()?;
    let target = load_set(&a.target, Role::Target, cfg.image_side, cfg.au_dim)?;
    let every = (cfg.aue_iterations / 20).max(1);
    let aue = train_aue(&cfg, &target, |it, loss| {
        if it % every == 0 {
            log::info!("aue iteration {it}: loss {loss:.5}");
        }
    })?;
    ensure_parent(&a.out)?;
    save_aue(&aue, &a.out)?;
    println!("estimator written to {}", a.out.display());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut log_file = match &a.log {
        Some(p) => {
            ensure_parent(p)?;
            Some(BufWriter::new(File::create(p).map_err(io_err(p))?))
        }
        None => None,
    };
    ensure_parent(&a.out)?;
    let mut progress = |it: u64, r: &gath_core::losses::LossReport| {
        if it % 100 == 0 {
            log::info!("iteration {it}: {r:?}");
        }
    };
    let mut hooks = RunHooks {
        log: log_file.as_mut().map(|w| w as &mut dyn Write),
        checkpoint_path: Some(a.out.clone()),
        on_step: Some(&mut progress),
    };
    let ck = match &a.resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            let mut cfg = ck.config.clone();
            a.train.apply(&mut cfg)?;
            let source = load_set(&a.source, Role::Source, ck.network.side, ck.config.au_dim)?;
            let target = load_set(&a.target, Role::Target, ck.network.side, ck.config.au_dim)?;
            resume(&ck, cfg.iterations, &source, &target, &mut hooks)?
        }
        None => {
            let cfg = a.train.resolve()?;
            let aue_path = a
                .aue
                .as_ref()
                .ok_or_else(|| GathError::Config("--aue is required unless --resume is given".into()))?;
            let aue = load_aue(aue_path)?;
            let source = load_set(&a.source, Role::Source, cfg.image_side, cfg.au_dim)?;
            let target = load_set(&a.target, Role::Target, cfg.image_side, cfg.au_dim)?;
            train(&cfg, &source, &target, aue, &mut hooks)?
        }
    };
    drop(hooks);
    if let Some(mut w) = log_file {
        w.flush().map_err(|e| GathError::io(a.log.as_deref().unwrap_or(Path::new("log")), e))?;
    }
    save_checkpoint(&ck, &a.out)?;
    println!("checkpoint at iteration {} written to {}", ck.iteration, a.out.display());
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let ck = load_checkpoint(&a.ckpt)?;
    let oracle = load_aue(&a.oracle)?;
    let post = post_config(a.config.as_deref(), Stages::NONE)?;
    let manifest = load_manifest(&a.manifest, Role::Target)?;
    let records = load_eval_records(&manifest, ck.network.side, ck.config.au_dim)?;
    let report = evaluate_checkpoint(&ck, &records, &oracle, &post)?;
    write_report(&report, &a.out)?;
    print!("{}", report.to_table());
    Ok(())
}

fn write_frame(model: &Model, input: &RasterImage, au: &AuVector, stages: Stages, out: &Path) -> Result<()> {
    ensure_parent(out)?;
    model.synthesize_raster(input, au, stages)?.save_png(out)
}

fn cmd_synthesize(a: &SynthesizeArgs) -> Result<()> {
    let (model, stages) = load_model(&a.ckpt, &a.post)?;
    let au = load_au_vector(&a.au, model.info.au_dim)?;
    write_frame(&model, &RasterImage::read(&a.input)?, &au, stages, &a.out)
}

fn cmd_suppress(a: &SuppressArgs) -> Result<()> {
    let (model, stages) = load_model(&a.ckpt, &a.post)?;
    let au = AuVector::zeros(model.info.au_dim);
    write_frame(&model, &RasterImage::read(&a.input)?, &au, stages, &a.out)
}

fn cmd_animate(a: &AnimateArgs) -> Result<()> {
    let (model, stages) = load_model(&a.ckpt, &a.post)?;
    let seq = load_au_sequence(&a.au_seq, model.info.au_dim)?;
    let input = RasterImage::read(&a.input)?;
    std::fs::create_dir_all(&a.out_dir).map_err(io_err(&a.out_dir))?;
    for (k, au) in seq.iter().enumerate() {
        write_frame(&model, &input, au, stages, &a.out_dir.join(format!("frame_{k:04}.png")))?;
    }
    println!("{} frames written to {}", seq.len(), a.out_dir.display());
    Ok(())
}

fn cmd_serve(a: &ServeArgs) -> Result<()> {
    let post = post_config(a.config.as_deref(), Stages::NONE)?;
    let model = match &a.ckpt {
        Some(p) => Some(Model::load(p, post)?),
        None => None,
    };
    let state = server::AppState::new(model);
    let rt = tokio::runtime::Runtime::new().map_err(|e| GathError::io("tokio runtime", e))?;
    rt.block_on(server::serve(state, &a.addr))
        .map_err(|e| GathError::io(a.addr.as_str(), e))
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::GenCorpus(a) => gen_corpus(a),
        Command::TrainAue(a) => cmd_train_aue(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Synthesize(a) => cmd_synthesize(a),
        Command::Suppress(a) => cmd_suppress(a),
        Command::Animate(a) => cmd_animate(a),
        Command::Serve(a) => cmd_serve(a),
    }
}
