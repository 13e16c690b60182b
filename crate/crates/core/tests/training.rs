use gath_core::data::{sample_minibatch, LoadedSet};
use gath_core::losses::{g_objective, dc_objective};
use gath_core::networks::ArchPreset;
use gath_core::synthbench::{generate_corpus, CorpusSpec};
use gath_core::training::checkpoint::{decode_bundle, encode_bundle};
use gath_core::training::{
    load_checkpoint, resume, save_checkpoint, train, train_aue, Checkpoint, LogEntry, RunHooks, TrainConfig, Trainer,
};
use gath_core::nn::ParamKind;
use gath_core::GathError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mini_config() -> TrainConfig {
    TrainConfig {
        arch: ArchPreset::Mini,
        image_side: 8,
        batch_size: 4,
        iterations: 30,
        checkpoint_every: 0,
        aue_iterations: 5,
        aue_batch_size: 4,
        aue_jitter: 1,
        seed: 5,
        ..TrainConfig::default()
    }
}

fn mini_sets() -> (LoadedSet, LoadedSet) {
    let corpus = generate_corpus(CorpusSpec::new(3, 4, 8, 1)).unwrap();
    (corpus.source_set().unwrap(), corpus.target_set().unwrap())
}

#[test]
fn alternation_holds_on_every_step_of_a_200_step_run() {
    let (src, tgt) = mini_sets();
    let cfg = TrainConfig {
        iterations: 200,
        ..mini_config()
    };
    let aue = train_aue(&cfg, &tgt, |_, _| {}).unwrap();
    let aue_sum = aue.params.checksum();
    let mut t = Trainer::new(cfg, 3, aue).unwrap();
    t.set_alternation_checks(true);
    let mut steps = 0;
    let mut on_step = |_: u64, r: &gath_core::losses::LossReport| {
        let w = gath_core::losses::LossWeights::default();
        let g = g_objective(r, &w);
        assert!((g - r.total_g).abs() <= 1e-6 * g.abs().max(1e-12));
        assert!((dc_objective(r, &w) - r.total_dc).abs() <= 1e-6 * r.total_dc.abs().max(1e-12));
        assert!(r.adv_g <= 0.0);
        steps += 1;
    };
    let mut hooks = RunHooks {
        on_step: Some(&mut on_step),
        ..Default::default()
    };
    t.run(&src, &tgt, &mut hooks).unwrap();
    drop(hooks);
    assert_eq!(steps, 200);
    assert_eq!(t.aue.params.checksum(), aue_sum);
}

#[test]
fn each_sub_step_touches_only_its_own_parameters() {
    let (src, tgt) = mini_sets();
    let cfg = mini_config();
    let aue = train_aue(&cfg, &tgt, |_, _| {}).unwrap();
    let mut t = Trainer::new(cfg.clone(), 3, aue).unwrap();
    let batch = t.sample_batch(&src, &tgt).unwrap();
    let (g0, d0) = (t.gen.params.clone(), t.dc.params.clone());
    t.step(&batch).unwrap();
    assert_ne!(t.gen.params, g0);
    assert_ne!(t.dc.params, d0);
    // With the adversarial and class weights at zero the D/C objective has
    // zero gradient, so Adam leaves D/C where it was while G still moves.
    let mut quiet = cfg;
    quiet.weights.lambda_adv = 0.0;
    quiet.weights.lambda_cls = 0.0;
    let aue = train_aue(&quiet, &tgt, |_, _| {}).unwrap();
    let mut t = Trainer::new(quiet, 3, aue).unwrap();
    let trunk_before: Vec<_> = t.dc.params.entries().iter().filter(|e| e.kind != ParamKind::Buffer).map(|e| e.value.clone()).collect();
    t.step(&batch).unwrap();
    let trunk_after: Vec<_> = t.dc.params.entries().iter().filter(|e| e.kind != ParamKind::Buffer).map(|e| e.value.clone()).collect();
    assert_eq!(trunk_before, trunk_after);
}

#[test]
fn identically_seeded_runs_produce_identical_checkpoints() {
    let (src, tgt) = mini_sets();
    let cfg = mini_config();
    let run = || {
        let aue = train_aue(&cfg, &tgt, |_, _| {}).unwrap();
        encode_bundle(&train(&cfg, &src, &tgt, aue, &mut RunHooks::default()).unwrap().to_bundle())
    };
    assert_eq!(run(), run());
}

#[test]
fn resume_reproduces_the_uninterrupted_trajectory() {
    let (src, tgt) = mini_sets();
    let cfg = TrainConfig {
        iterations: 40,
        ..mini_config()
    };
    let aue = train_aue(&cfg, &tgt, |_, _| {}).unwrap();

    let mut full_log = Vec::new();
    let full = train(
        &cfg,
        &src,
        &tgt,
        aue.clone(),
        &mut RunHooks {
            log: Some(&mut full_log),
            ..Default::default()
        },
    )
    .unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.ckpt");
    let half_cfg = TrainConfig { iterations: 20, ..cfg.clone() };
    let mut first_log = Vec::new();
    train(
        &half_cfg,
        &src,
        &tgt,
        aue,
        &mut RunHooks {
            log: Some(&mut first_log),
            checkpoint_path: Some(path.clone()),
            ..Default::default()
        },
    )
    .unwrap();
    let half = load_checkpoint(&path).unwrap();
    assert_eq!(half.iteration, 20);
    let mut second_log = Vec::new();
    let resumed = resume(
        &half,
        40,
        &src,
        &tgt,
        &mut RunHooks {
            log: Some(&mut second_log),
            ..Default::default()
        },
    )
    .unwrap();

    let parse = |b: &[u8]| -> Vec<LogEntry> {
        String::from_utf8(b.to_vec())
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    };
    let mut stitched = parse(&first_log);
    stitched.extend(parse(&second_log));
    assert_eq!(stitched, parse(&full_log));
    assert_eq!(stitched.len(), 40);
    assert_eq!(resumed.generator, full.generator);
    assert_eq!(resumed.dc, full.dc);
    assert_eq!(resumed.opt_g, full.opt_g);
    assert_eq!(resumed.rng, full.rng);
}

#[test]
fn checkpoint_round_trip_and_guards() {
    let (src, tgt) = mini_sets();
    let cfg = TrainConfig {
        iterations: 3,
        ..mini_config()
    };
    let aue = train_aue(&cfg, &tgt, |_, _| {}).unwrap();
    let ck = train(&cfg, &src, &tgt, aue, &mut RunHooks::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&ck, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.generator.checksum(), ck.generator.checksum());
    back.expect_classes(3).unwrap();
    assert!(matches!(back.expect_classes(8), Err(GathError::Incompatible(_))));

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(GathError::Integrity(_))));

    let mut b = ck.to_bundle();
    b.kind = "aue".into();
    let decoded = decode_bundle(&encode_bundle(&b)).unwrap();
    assert!(Checkpoint::from_bundle(&decoded).is_err());
}

#[test]
fn zero_iterations_returns_initialization() {
    let (src, tgt) = mini_sets();
    let cfg = TrainConfig {
        iterations: 0,
        aue_iterations: 0,
        ..mini_config()
    };
    let a = train_aue(&cfg, &tgt, |_, _| {}).unwrap();
    let b = train_aue(&cfg, &tgt, |_, _| {}).unwrap();
    assert_eq!(a.params, b.params);
    let trained = train_aue(&mini_config(), &tgt, |_, _| {}).unwrap();
    assert_ne!(trained.params, a.params);

    let ck = train(&cfg, &src, &tgt, a.clone(), &mut RunHooks::default()).unwrap();
    let fresh = Trainer::new(cfg, 3, a).unwrap().checkpoint();
    assert_eq!(ck, fresh);
    assert_eq!(ck.iteration, 0);
}

#[test]
fn aue_training_is_deterministic_and_logs_its_curve() {
    let (_, tgt) = mini_sets();
    let cfg = mini_config();
    let mut curve = Vec::new();
    let a = train_aue(&cfg, &tgt, |it, l| curve.push((it, l))).unwrap();
    let b = train_aue(&cfg, &tgt, |_, _| {}).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(curve.len(), 5);
    assert!(curve.iter().all(|&(_, l)| l.is_finite() && l >= 0.0));
}

#[test]
fn estimator_training_requires_au_files() {
    let (src, mut tgt) = mini_sets();
    tgt.records[2].au = None;
    let err = train_aue(&mini_config(), &tgt, |_, _| {}).unwrap_err();
    assert!(matches!(err, GathError::Schema(_)), "{err}");
    drop(src);
}

#[test]
fn rec_loss_falls_on_a_frozen_batch() {
    let (src, tgt) = mini_sets();
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        ..mini_config()
    };
    let aue = train_aue(&cfg, &tgt, |_, _| {}).unwrap();
    let mut t = Trainer::new(cfg, 3, aue).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let batch = sample_minibatch(&src, &tgt, &mut rng, 4).unwrap();
    let first = t.step(&batch).unwrap().rec;
    let mut last = first;
    for _ in 1..200 {
        last = t.step(&batch).unwrap().rec;
    }
    assert!(last < first, "rec {first} -> {last}");
}

#[test]
fn labels_beyond_the_class_count_are_rejected() {
    let (src, tgt) = mini_sets();
    let cfg = mini_config();
    let aue = train_aue(&cfg, &tgt, |_, _| {}).unwrap();
    let mut t = Trainer::new(cfg.clone(), 2, aue.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut batch = sample_minibatch(&src, &tgt, &mut rng, 4).unwrap();
    batch.c[0] = 2;
    assert!(matches!(t.step(&batch), Err(GathError::Label { label: 2, classes: 2 })));
    let too_few = TrainConfig { classes: 2, ..cfg };
    assert!(train(&too_few, &src, &tgt, aue, &mut RunHooks::default()).is_err());
}
