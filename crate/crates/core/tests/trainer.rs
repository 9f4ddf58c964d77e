use std::fs;

use equigan_core::datasets::{make_synthetic, DatasetSplit, SyntheticKind, SyntheticSpec};
use equigan_core::equalizer::{SamplerMode, ScoreTable};
use equigan_core::likelihood::{AisConfig, ScoreOptions};
use equigan_core::models::build_triple;
use equigan_core::nn::Module;
use equigan_core::trainer::{
    evaluate, read_epoch_rows, run_mleq_pipeline, train, Architecture, EvalConfig, RunManifest, RunStatus,
    TrainCheckpoint, TrainConfig, TrainOptions, Trainer, UpdateKind, Variant,
};
use tempfile::tempdir;

fn data() -> DatasetSplit {
    let mut spec = SyntheticSpec::new(SyntheticKind::GaussianMixtureImages, 48, (1, 6, 6), 11);
    spec.hard_fraction = 0.25;
    make_synthetic(&spec).unwrap()
}

fn config(variant: Variant) -> TrainConfig {
    let mut c = TrainConfig::for_variant(variant);
    c.architecture = Architecture::Toy;
    c.toy_width = 12;
    c.latent_dim = 4;
    c.batch_size = 8;
    c.epochs = 2;
    c.checkpoint_every = 1;
    c.controller.warmup_epochs = 0;
    c.controller.n_mc = 10_000;
    c.seed = 5;
    c
}

#[test]
fn two_epoch_run_records_artifacts() {
    let dir = tempdir().unwrap();
    let d = data();
    let m = train(&config(Variant::PMdgan), &d, dir.path(), &TrainOptions::default()).unwrap();
    assert_eq!(m.status, RunStatus::Completed);
    assert_eq!(m.epochs_completed, 2);
    assert!(!m.checkpoints.is_empty());
    let epochs = read_epoch_rows(&dir.path().join(&m.epochs_csv)).unwrap();
    assert_eq!(epochs.iter().map(|e| e.epoch).collect::<Vec<_>>(), vec![1, 2]);
    assert!(dir.path().join(&m.controller_csv).exists());
    let (loaded, _) = RunManifest::load(dir.path()).unwrap();
    assert_eq!(loaded, m);
    for c in &m.checkpoints {
        assert!(c.path.is_relative());
        assert!(dir.path().join(&c.path).exists());
    }
}

#[test]
fn update_pattern_is_five_d_per_joint_step() {
    let d = data();
    let mut c = config(Variant::Mdgan);
    c.epochs = 12;
    let mut t = Trainer::new(&c, &d.train, None).unwrap();
    t.update_log = Some(Vec::new());
    for _ in 0..12 {
        t.run_epoch(&d.train, &mut |_| {}).unwrap();
    }
    let log = t.update_log.unwrap();
    let d_only: Vec<_> = log.iter().filter(|u| **u == UpdateKind::D).collect();
    assert_eq!(d_only.len(), 72);
    let mut expected = Vec::new();
    for b in 1..=72u64 {
        expected.push(UpdateKind::D);
        if b % 5 == 0 {
            expected.push(UpdateKind::GE);
        }
    }
    assert_eq!(log, expected);
}

#[test]
fn replay_and_resume_are_bit_exact() {
    let d = data();
    let c = config(Variant::EpMdgan);
    let a = tempdir().unwrap();
    let b = tempdir().unwrap();
    train(&c, &d, a.path(), &TrainOptions::default()).unwrap();
    let stopped = train(
        &c,
        &d,
        b.path(),
        &TrainOptions {
            stop_after: Some(1),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(stopped.status, RunStatus::Running);
    train(&c, &d, b.path(), &TrainOptions::default()).unwrap();
    for f in ["losses.csv", "epochs.csv", "controller.csv", "checkpoints/epoch_00002.ckpt", "scores/epoch_00002.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn ep_with_zero_mixture_matches_uniform() {
    let d = data();
    let p = tempdir().unwrap();
    let e = tempdir().unwrap();
    let mut ep = config(Variant::EpMdgan);
    ep.sampler.lambda_perc = 0.0;
    train(&config(Variant::PMdgan), &d, p.path(), &TrainOptions::default()).unwrap();
    train(&ep, &d, e.path(), &TrainOptions::default()).unwrap();
    assert_eq!(
        fs::read(p.path().join("losses.csv")).unwrap(),
        fs::read(e.path().join("losses.csv")).unwrap()
    );
}

#[test]
fn static_mode_requires_table() {
    let d = data();
    let err = Trainer::new(&config(Variant::PMdganMleq), &d.train, None).unwrap_err();
    assert!(err.is_config());
    let short = ScoreTable::from_scores(vec![0.0; 3]).unwrap();
    assert!(Trainer::new(&config(Variant::PMdganMleq), &d.train, Some(short)).is_err());
}

#[test]
fn mdgan_keeps_lambda_norm_at_zero() {
    let d = data();
    let mut t = Trainer::new(&config(Variant::Mdgan), &d.train, None).unwrap();
    let mut seen = Vec::new();
    t.run_epoch(&d.train, &mut |r| seen.push(r.losses.lambda_norm)).unwrap();
    assert!(seen.iter().all(|&l| l == 0.0));
}

#[test]
fn checkpoint_continues_like_uninterrupted_training() {
    let d = data();
    let c = config(Variant::PMdgan);
    let mut a = Trainer::new(&c, &d.train, None).unwrap();
    a.run_epoch(&d.train, &mut |_| {}).unwrap();
    let bytes = a.checkpoint().to_bytes().unwrap();
    let mut b = Trainer::from_checkpoint(TrainCheckpoint::from_bytes(&bytes).unwrap()).unwrap();
    let (mut la, mut lb) = (Vec::new(), Vec::new());
    a.run_epoch(&d.train, &mut |r| la.push(*r)).unwrap();
    b.run_epoch(&d.train, &mut |r| lb.push(*r)).unwrap();
    assert_eq!(la, lb);
    assert_eq!(a.checkpoint(), b.checkpoint());
}

#[test]
fn pipeline_links_three_phases() {
    let d = data();
    let dir = tempdir().unwrap();
    let mut base = config(Variant::PMdganMleq);
    base.epochs = 1;
    let ais = AisConfig {
        n_temps: 5,
        n_chains: 2,
        sigma: 0.3,
        ..Default::default()
    };
    let m = run_mleq_pipeline(&base, &ais, &d, dir.path(), None, ScoreOptions::default()).unwrap();
    assert_eq!(m.status, RunStatus::Completed);
    assert_eq!(m.completed_phases, 3);
    let (m1, _) = RunManifest::load(&dir.path().join(&m.phase1)).unwrap();
    let (m3, _) = RunManifest::load(&dir.path().join(&m.phase3)).unwrap();
    assert_eq!(m1.config.sampler.mode, SamplerMode::Uniform);
    assert_eq!(m3.config.sampler.mode, SamplerMode::StaticLl);
    assert!(m1.likelihood.is_some());
    let table = ScoreTable::read_csv(&dir.path().join(m.phase2.as_ref().unwrap().scores_csv.clone())).unwrap();
    assert_eq!(table.len(), d.train.len());
    let used = ScoreTable::read_csv(&dir.path().join(&m.phase3).join(m3.static_scores.unwrap())).unwrap();
    assert_eq!(used, table);

    let final1 = TrainCheckpoint::load(&dir.path().join(&m.phase1).join(&m1.latest_checkpoint().unwrap().path)).unwrap();
    let fresh = build_triple(&base.network_specs(d.image_shape).unwrap(), base.init_seed).unwrap();
    let differs = final1
        .triple
        .generator
        .params()
        .iter()
        .zip(fresh.generator.params())
        .any(|(a, b)| a.value != b.value);
    assert!(differs);

    let again = run_mleq_pipeline(&base, &ais, &d, dir.path(), None, ScoreOptions::default()).unwrap();
    assert_eq!(again.completed_phases, 3);
}

#[test]
fn evaluation_is_deterministic() {
    let d = data();
    let dir = tempdir().unwrap();
    train(&config(Variant::PMdgan), &d, dir.path(), &TrainOptions::default()).unwrap();
    let cfg = EvalConfig {
        n_gen: 24,
        embedding: equigan_core::metrics::EmbeddingConfig::RawPca { d: 4, seed: 0 },
        ..Default::default()
    };
    let a = evaluate(dir.path(), &d, &cfg).unwrap();
    let b = evaluate(dir.path(), &d, &cfg).unwrap();
    assert_eq!(a, b);
    assert!(a.fid.is_some() && a.psnr.is_some());
    let (m, _) = RunManifest::load(dir.path()).unwrap();
    assert_eq!(m.evaluations.len(), 1);
    let zero = EvalConfig { n_gen: 0, ..cfg };
    assert!(evaluate(dir.path(), &d, &zero).unwrap_err().is_config());
}
