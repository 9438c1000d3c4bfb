use brett_core::regress::{
    beta_fit, beta_hessian, beta_log_likelihood, beta_score, bootstrap_anchor_block, bootstrap_model, fit_beta_response,
    normalize_prevalence, ols_fit, ols_on_sample, predict_beta, BetaOptions, BootstrapConfig, PrecisionLink,
    PrevalenceMode,
};
use brett_core::special::{beta_quantile, logit};
use brett_core::synth::{separable_instance, sparse_counts};
use brett_core::{fit, select_anchors, DesignMatrix};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use statrs::distribution::ContinuousCDF;

fn ids(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("d{j}")).collect()
}

fn labels(t: usize) -> Vec<String> {
    (0..t).map(|j| format!("t{j}")).collect()
}

fn covariate_design(rng: &mut impl Rng, d: usize) -> DesignMatrix {
    let values = DMatrix::from_fn(d, 2, |_, c| if c == 0 { 1.0 } else { rng.sample::<f64, _>(StandardNormal) });
    DesignMatrix::from_values(values, vec!["(Intercept)".into(), "z".into()], ids(d)).unwrap()
}

fn beta_data(rng: &mut impl Rng, n: usize, pm: usize, pp: usize) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
    let design = |rng: &mut dyn rand::RngCore, p: usize| {
        DMatrix::from_fn(n, p, |_, c| if c == 0 { 1.0 } else { rng.random_range(-1.0..1.0) })
    };
    let xm = design(rng, pm);
    let xp = design(rng, pp);
    let y = (0..n).map(|_| rng.random_range(0.02..0.98)).collect();
    (y, xm, xp)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn lambda_cancellation(seed in any::<u64>(), t in 2usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tdm = sparse_counts(&mut rng, 120, t, 60, 80).unwrap();
        let anchors = select_anchors(&tdm, t, &Default::default()).unwrap();
        let (model, _) = fit(&tdm, &anchors).unwrap();
        let z = covariate_design(&mut rng, 60);
        let from_theta = normalize_prevalence(&model.theta, PrevalenceMode::PerTopicRows, &labels(t), &z.doc_ids).unwrap();
        let from_block = normalize_prevalence(&model.anchor_counts, PrevalenceMode::PerTopicRows, &labels(t), &z.doc_ids).unwrap();
        let a = ols_fit(&from_theta, &z).unwrap();
        let b = ols_fit(&from_block, &z).unwrap();
        prop_assert!((&a - &b).amax() <= 1e-12);
        for _ in 0..5 {
            let s: Vec<usize> = (0..60).map(|_| rng.random_range(0..60)).collect();
            if let (Some(a), Some(b)) = (ols_on_sample(&model.theta, &z.values, &s), ols_on_sample(&model.anchor_counts, &z.values, &s)) {
                prop_assert!((&a - &b).amax() <= 1e-12);
            }
        }
    }

    #[test]
    fn ols_normal_equations(seed in any::<u64>(), t in 1usize..=5, d in 8usize..=80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(t, d, |_, _| rng.random_range(0.01..5.0));
        let z = covariate_design(&mut rng, d);
        let prev = normalize_prevalence(&m, PrevalenceMode::PerTopicRows, &labels(t), &z.doc_ids).unwrap();
        let b = ols_fit(&prev, &z).unwrap();
        let resid = prev.values.transpose() - &z.values * &b;
        prop_assert!((z.values.transpose() * resid).amax() <= 1e-8);
    }

    #[test]
    fn score_matches_finite_differences(seed in any::<u64>(), link_logit in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (y, xm, xp) = beta_data(&mut rng, 30, 3, 2);
        let link = if link_logit { PrecisionLink::Logit } else { PrecisionLink::Log };
        let params: Vec<f64> = (0..5).map(|i| if i < 3 { rng.random_range(-1.0..1.0) } else { rng.random_range(-0.8..0.8) + if link_logit { 0.0 } else { 2.0 } }).collect();
        let score = beta_score(&y, &xm, &xp, &params, link);
        let hess = beta_hessian(&y, &xm, &xp, &params, link);
        for k in 0..params.len() {
            let h = 1e-6 * (1.0 + params[k].abs());
            let (mut up, mut dn) = (params.clone(), params.clone());
            up[k] += h;
            dn[k] -= h;
            let fd = (beta_log_likelihood(&y, &xm, &xp, &up, link) - beta_log_likelihood(&y, &xm, &xp, &dn, link)) / (2.0 * h);
            prop_assert!((fd - score[k]).abs() <= 1e-6 * (1.0 + score[k].abs()), "param {k}: fd {fd} analytic {}", score[k]);
            let (su, sd) = (beta_score(&y, &xm, &xp, &up, link), beta_score(&y, &xm, &xp, &dn, link));
            for l in 0..params.len() {
                let fd = (su[l] - sd[l]) / (2.0 * h);
                prop_assert!((fd - hess[(l, k)]).abs() <= 1e-5 * (1.0 + hess[(l, k)].abs()));
            }
        }
    }

    #[test]
    fn likelihood_trace_never_decreases(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (y, xm, xp) = beta_data(&mut rng, 60, 2, 2);
        let est = fit_beta_response(&y, &xm, &xp, &BetaOptions::default()).unwrap();
        prop_assert!(est.converged);
        for w in est.trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9 * w[0].abs());
        }
        prop_assert!((est.trace.last().unwrap() - est.log_likelihood).abs() <= 1e-9 * (1.0 + est.log_likelihood.abs()));
    }

    #[test]
    fn beta_quantile_matches_oracle(a in 0.05f64..50.0, b in 0.05f64..50.0, p in 0.001f64..0.999) {
        let oracle = statrs::distribution::Beta::new(a, b).unwrap().inverse_cdf(p);
        prop_assert!((beta_quantile(a, b, p) - oracle).abs() <= 1e-8, "a {a} b {b} p {p}");
    }
}

#[test]
fn bootstrap_is_schedule_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let inst = separable_instance(&mut rng, 40, 3, 50, false).unwrap();
    let (model, _) = fit(&inst.tdm, &brett_core::AnchorSet::from_indices(inst.anchors.clone())).unwrap();
    let z = covariate_design(&mut rng, 50);
    let cfg = BootstrapConfig { draws: 200, alpha: 0.05, seed: 77 };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| bootstrap_model(&model, &z, &cfg).unwrap())
    };
    let serial = run(1);
    assert_eq!(serial, run(4));
    assert_eq!(serial, bootstrap_model(&model, &z, &cfg).unwrap());
    let via_block = bootstrap_anchor_block(&model.theta, &serial.topic_labels, &z, &cfg).unwrap();
    for (a, b) in serial.draws.iter().zip(&via_block.draws) {
        assert!((a - b).amax() <= 1e-12);
    }
}

fn single_topic_prevalence(y: &[f64]) -> brett_core::regress::NormalizedPrevalence {
    let m = DMatrix::from_fn(2, y.len(), |r, c| if r == 0 { y[c] } else { 1.0 - y[c] });
    normalize_prevalence(&m, PrevalenceMode::PerDocumentColumns, &labels(2), &ids(y.len())).unwrap()
}

#[test]
fn intercept_only_recovery_and_prediction() {
    let dist = Beta::new(5.0, 5.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let y: Vec<f64> = (0..5000).map(|_| dist.sample(&mut rng)).collect();
    let prev = single_topic_prevalence(&y);
    let z = DesignMatrix::intercept_only(ids(y.len()));
    let fit = beta_fit(&prev, &z, &z, 0, &BetaOptions::default()).unwrap();
    assert!(fit.converged);
    assert!((fit.mean_coefficients[0] - logit(0.5)).abs() <= 3.0 * fit.mean_std_errors[0]);
    assert!((fit.precision_coefficients[0].exp() - 10.0).abs() <= 3.0 * 10.0 * fit.precision_std_errors[0]);

    let pred = predict_beta(&fit, &[1.0], &[1.0], 0.9);
    let (a, b) = (pred.mean * pred.precision, (1.0 - pred.mean) * pred.precision);
    let oracle = statrs::distribution::Beta::new(a, b).unwrap();
    assert!((pred.lower - oracle.inverse_cdf(0.05)).abs() <= 1e-8);
    assert!((pred.upper - oracle.inverse_cdf(0.95)).abs() <= 1e-8);

    let wide = predict_beta(&fit, &[1.0], &[1.0], 1.0 - 1e-12);
    assert!(wide.lower < 0.01 && wide.upper > 0.99);
}

#[test]
fn symmetric_fit_gives_symmetric_interval() {
    let y: Vec<f64> = (1..=99).map(|i| i as f64 / 100.0).collect();
    let prev = single_topic_prevalence(&y);
    let z = DesignMatrix::intercept_only(ids(y.len()));
    let fit = beta_fit(&prev, &z, &z, 0, &BetaOptions::default()).unwrap();
    assert!(fit.mean_coefficients[0].abs() < 1e-10);
    let pred = predict_beta(&fit, &[1.0], &[1.0], 0.95);
    assert!((pred.lower + pred.upper - 1.0).abs() < 1e-10);
}
