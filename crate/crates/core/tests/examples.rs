//! Worked examples for every module, checked against closed forms computed
//! here rather than taken from the implementation.

use std::f64::consts::{LN_10, PI};

use equigan_core::datasets::{denormalize, make_synthetic, LinearGaussianParams, SyntheticKind, SyntheticSpec};
use equigan_core::equalizer::{draw_batch, rank_scores, sampling_distribution, ScoreTable};
use equigan_core::likelihood::{ais_marginal, log_obs_density, AisConfig, TempSchedule};
use equigan_core::losses::{adversarial_loss, combine, cycle_loss, norm_loss, AdversarialForm};
use equigan_core::metrics::{fid, fid_matrices, precision_recall, psnr};
use equigan_core::models::build_triple;
use equigan_core::nn::{Mode, Tensor};
use equigan_core::norm_controller::{prior_norm_statistics, ControllerConfig, ControllerState};
use equigan_core::trainer::{sample_latents, Architecture, TrainConfig, Variant};
use nalgebra::{DMatrix, DVector};
use ndarray::{arr1, arr2, Array1, Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn adversarial_loss_at_zero_logits() {
    let z = Array1::zeros(5);
    let l = adversarial_loss(&z, &z, AdversarialForm::NonSaturating).unwrap();
    assert!(close(l.l_d, 2.0 * 2f64.ln(), 1e-12));
}

#[test]
fn cycle_loss_examples() {
    let x = Tensor::zeros((3, 2, 2, 2));
    let y = Tensor::from_elem((3, 2, 2, 2), 0.5);
    assert!(close(cycle_loss(&x, &y).unwrap().0, 0.25, 1e-15));

    // per-sample MSEs 0 and 0.5
    let x = Tensor::zeros((2, 1, 1, 2));
    let mut y = Tensor::zeros((2, 1, 1, 2));
    y[[1, 0, 0, 0]] = 1.0;
    assert!(close(cycle_loss(&x, &y).unwrap().0, 0.25, 1e-15));
}

#[test]
fn norm_loss_examples() {
    let (l, _) = norm_loss(&arr2(&[[3.0, 0.0, 0.0, 0.0]])).unwrap();
    assert!(close(l, 1.0, 1e-15));
    let mut z = Array2::zeros((2, 256));
    z[[0, 0]] = 16.0;
    z[[1, 5]] = 18.0;
    assert!(close(norm_loss(&z).unwrap().0, 2.0, 1e-12));
}

#[test]
fn combined_objective_examples() {
    assert!(close(combine(0.5, 1.0, 2.0, 3.0, 8.0, 0.0).unwrap().total_ge, 17.0, 1e-12));
    assert!(close(combine(0.5, 1.0, 2.0, 3.0, 3.0, 0.01).unwrap().total_ge, 7.03, 1e-12));
}

/// Mean and variance of the chi distribution with `d` degrees of freedom.
fn chi_moments(d: usize) -> (f64, f64) {
    let k = d as f64;
    let mean = 2f64.sqrt() * (ln_gamma((k + 1.0) / 2.0) - ln_gamma(k / 2.0)).exp();
    (mean, k - mean * mean)
}

#[test]
fn prior_norm_moments_match_chi_distribution() {
    let (m, v) = prior_norm_statistics(256, 100_000, 3).unwrap();
    let (cm, cv) = chi_moments(256);
    assert!(close(m, cm, 0.02), "{m} vs {cm}");
    assert!(close(cm, 15.98, 0.01));
    assert!(close(v, cv, 0.05), "{v} vs {cv}");
    let (m1, _) = prior_norm_statistics(1, 100_000, 4).unwrap();
    assert!(close(m1, (2.0 / PI).sqrt(), 0.01));
}

#[test]
fn controller_examples() {
    let cfg = ControllerConfig {
        initial_lambda: 0.01,
        warmup_epochs: 200,
        eta: 0.1,
        ..Default::default()
    };
    let mut s = ControllerState::with_prior(&cfg, 15.98, 0.5);
    s.update(100, 1.0).unwrap();
    assert_eq!(s.lambda_norm, 0.01);
    s.update(300, 1.0).unwrap();
    assert!(close(s.lambda_norm, 0.01 * 0.1f64.exp(), 1e-15));
    assert!(close(s.lambda_norm, 0.011052, 1e-6));
}

#[test]
fn sampler_examples() {
    let p = sampling_distribution(&[1, 2, 3, 4], 1.0, 1.0).unwrap();
    for (a, b) in p.iter().zip([0.1, 0.2, 0.3, 0.4]) {
        assert!(close(*a, b, 1e-15));
    }
    for p in [sampling_distribution(&[3, 1, 5, 2, 4], 0.0, 7.0).unwrap(), sampling_distribution(&[3, 1, 5, 2, 4], 0.7, 0.0).unwrap()] {
        assert!(p.iter().all(|v| close(*v, 0.2, 1e-15)));
    }
    assert_eq!(rank_scores(&[5.0, 1.0, 3.0]).unwrap(), vec![1, 3, 2]);
}

#[test]
fn uniform_draw_frequencies() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let idx = draw_batch(&[0.25; 4], 1_000_000, &mut rng).unwrap();
    for k in 0..4 {
        let f = idx.iter().filter(|&&i| i == k).count() as f64 / 1e6;
        assert!(close(f, 0.25, 0.002), "{k}: {f}");
    }
    let point = draw_batch(&[0.0, 1.0, 0.0], 50, &mut rng).unwrap();
    assert!(point.iter().all(|&i| i == 1));
}

#[test]
fn score_table_update_examples() {
    let mut t = ScoreTable::new(6);
    let v0 = t.version();
    t.update_scores_dynamic(&[3], &[25.0]).unwrap();
    assert_eq!(t.scores()[3], 25.0);
    assert!(t.version() > v0);
    t.update_scores_dynamic(&[1, 1], &[2.0, 9.0]).unwrap();
    assert_eq!(t.scores()[1], 9.0);
    assert!(t.update_scores_dynamic(&[0], &[f64::NAN]).is_err());
    assert!(t.update_scores_dynamic(&[6], &[1.0]).is_err());
}

#[test]
fn observation_density_examples() {
    let x = arr1(&[0.3]);
    assert!(close(log_obs_density(x.view(), x.view(), 1.0), -0.5 * (2.0 * PI).ln(), 1e-15));
    let d = 5;
    let sigma: f64 = 0.7;
    let x = Array1::zeros(d);
    // squared distance 2σ²d
    let g = Array1::from_elem(d, (2.0f64).sqrt() * sigma);
    let expect = -0.5 * d as f64 * (2.0 * PI * sigma * sigma).ln() - d as f64;
    assert!(close(log_obs_density(x.view(), g.view(), sigma), expect, 1e-12));
}

fn identity_decoder() -> LinearGaussianParams {
    LinearGaussianParams {
        a: arr2(&[[1.0]]),
        b: arr1(&[0.0]),
        sigma: 1.0,
    }
}

#[test]
fn ais_identity_case() {
    let cfg = AisConfig {
        sigma: 1.0,
        n_temps: 200,
        n_chains: 64,
        ..Default::default()
    };
    let r = ais_marginal(&arr1(&[0.0]), &identity_decoder(), &cfg, 0).unwrap();
    let exact = -0.5 * (4.0 * PI).ln() / LN_10;
    assert!(close(exact, -0.5496, 1e-4));
    assert!((r.log10_marginal - exact).abs() <= 3.0 * r.std_error.max(1e-3), "{r:?}");
}

#[test]
fn two_temperatures_reduce_to_prior_importance_sampling() {
    let cfg = AisConfig {
        sigma: 1.0,
        n_temps: 2,
        n_chains: 4000,
        temp_schedule: TempSchedule::Linear,
        ..Default::default()
    };
    let x = arr1(&[0.8]);
    let r = ais_marginal(&x, &identity_decoder(), &cfg, 0).unwrap();
    // independent importance-sampling estimate from the prior
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let w: Vec<f64> = (0..200_000)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (-0.5 * (2.0 * PI).ln() - 0.5 * (0.8 - z).powi(2)).exp()
        })
        .collect();
    let oracle = (w.iter().sum::<f64>() / w.len() as f64).log10();
    assert!((r.log10_marginal - oracle).abs() <= 3.0 * r.std_error + 1e-3, "{} vs {oracle} ± {}", r.log10_marginal, r.std_error);
}

#[test]
fn psnr_examples() {
    assert!(close(psnr(&[0.0; 3], &[255.0; 3], 255.0).unwrap(), 0.0, 1e-12));
    assert!(close(psnr(&[10.0; 12], &[11.0; 12], 255.0).unwrap(), 10.0 * (255f64 * 255.0).log10(), 1e-12));
    assert_eq!(psnr(&[3.0; 3], &[3.0; 3], 255.0).unwrap(), f64::INFINITY);
}

#[test]
fn fid_one_dimensional_examples() {
    let m = |v: f64| DMatrix::from_element(1, 1, v);
    assert!(close(fid_matrices(&DVector::from_element(1, 0.0), &m(1.0), &DVector::from_element(1, 1.0), &m(1.0)), 1.0, 1e-10));
    assert!(close(fid_matrices(&DVector::from_element(1, 0.0), &m(4.0), &DVector::from_element(1, 0.0), &m(1.0)), 1.0, 1e-10));
}

#[test]
fn fid_separates_shifted_samples() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gauss = |n: usize, shift: f64| Array2::from_shape_simple_fn((n, 4), || { let v: f64 = StandardNormal.sample(&mut rng); shift + v });
        let a = gauss(5_000, 0.0);
        let b = gauss(5_000, 0.0);
        let c = gauss(5_000, 1.0);
        assert!(fid(&a, &b).unwrap() < fid(&a, &c).unwrap());
    }
}

#[test]
fn precision_recall_half_coverage() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let real = Array2::from_shape_fn((20, 2), |(i, _)| if i < 10 { 0.0 } else { 50.0 } + rng.random_range(-1.0..1.0));
    let fake = real.slice(ndarray::s![..10, ..]).to_owned();
    let pr = precision_recall(&real, &fake, 3).unwrap();
    assert_eq!(pr.precision, 1.0);
    // every real point of the covered cluster is inside the fake manifold,
    // the distant cluster is not
    assert_eq!(pr.recall, 0.5);
}

#[test]
fn synthetic_data_is_deterministic_and_lossless() {
    let spec = SyntheticSpec::new(SyntheticKind::GaussianMixtureImages, 512, (3, 8, 8), 7);
    let a = make_synthetic(&spec).unwrap();
    let b = make_synthetic(&spec).unwrap();
    assert_eq!(a.train.raw(), b.train.raw());
    assert_eq!(a.train.len(), 512);
    for v in 0..=255u32 {
        let model = 2.0 * v as f64 / 255.0 - 1.0;
        assert_eq!(denormalize(model, Some(255)), v as f64);
    }
    let mut lg = SyntheticSpec::new(SyntheticKind::LinearGaussian, 100, (2, 1, 1), 1);
    lg.latent_dim = 1;
    assert!(make_synthetic(&lg).unwrap().linear_gaussian.is_some());
    let empty = SyntheticSpec::new(SyntheticKind::GaussianMixtureImages, 0, (3, 8, 8), 7);
    assert!(make_synthetic(&empty).unwrap_err().is_config());
}

#[test]
fn standard_network_shapes() {
    let mut cfg = TrainConfig::for_variant(Variant::Mdgan);
    cfg.architecture = Architecture::Standard;
    cfg.latent_dim = 256;
    let t = build_triple(&cfg.network_specs((3, 32, 32)).unwrap(), 0).unwrap();
    let x = Array4::zeros((2, 3, 32, 32));
    let z = t.encoder.infer(&x, Mode::Eval).unwrap();
    assert_eq!(z.dim(), (2, 256));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let g = t.generator.infer(&sample_latents(2, 256, &mut rng), Mode::Eval).unwrap();
    assert_eq!(g.dim(), (2, 3, 32, 32));
    let logits = t.discriminator.infer(&g, &z, Mode::Eval).unwrap();
    assert_eq!(logits.len(), 2);
}

#[test]
fn learning_rate_after_decay_start() {
    let cfg = TrainConfig::for_variant(Variant::EpMdgan);
    assert_eq!(cfg.lr_at(400), 2e-4);
    assert!(close(cfg.lr_at(401), 1.98e-4, 1e-18));
}

#[test]
fn dataset_presets_use_the_published_hyperparameters() {
    use equigan_core::config::preset;
    let table = [
        ("mdgan", (8.0, 9.0), None),
        ("p-mdgan", (7.0, 9.0), None),
        ("p-mdgan-mleq", (5.0, 5.0), Some(((0.5, 8.0), (0.8, 8.0)))),
        ("ep-mdgan", (3.0, 3.0), Some(((0.5, 12.0), (0.8, 4.0)))),
    ];
    for (v, (cyc_c, cyc_f), sampler) in table {
        let c = preset(&format!("cifar10-{v}")).unwrap().train;
        let f = preset(&format!("fmnist-{v}")).unwrap().train;
        assert_eq!((c.lambda_cyc, f.lambda_cyc), (cyc_c, cyc_f), "{v}");
        if let Some(((pc, dc), (pf, df))) = sampler {
            assert_eq!((c.sampler.lambda_perc, c.sampler.lambda_dist), (pc, dc), "{v}");
            assert_eq!((f.sampler.lambda_perc, f.sampler.lambda_dist), (pf, df), "{v}");
        }
        for t in [&c, &f] {
            assert_eq!((t.optimizer.lr, t.batch_size, t.latent_dim, t.epochs), (2e-4, 128, 256, 800));
            assert_eq!((t.controller.initial_lambda, t.controller.warmup_epochs), (0.01, 200));
        }
    }
}
