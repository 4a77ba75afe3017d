use std::collections::BTreeMap;

use nalgebra::DMatrix;

use hybridcorr::completion::complete_panel;
use hybridcorr::estimator::{empirical_correlation, estimate_all, PairKind, TenorMap};
use hybridcorr::psd::{is_psd, repair, DEFAULT_CLAMP_BOUND, DEFAULT_PSD_TOL, DEFAULT_SHRINK_TOL};
use hybridcorr::simulator::{
    correlated_increments, simulate_system, RateObservable, SimulationConfig, VarianceObservable,
};
use hybridcorr::study::{
    run_study, table_presets, StudyConfig, DAILY_DT, INTRADAY_DT, STUDY_G2_TENORS,
};
use hybridcorr::types::{
    BlockCorrelationMatrix, ComponentSpec, G1Params, G2Params, HestonParams, HybridSystemSpec,
    ObservationPanel, SeriesKey,
};
use hybridcorr::Error;

const SEED: u64 = 7;

fn column(m: &DMatrix<f64>, c: usize) -> Vec<f64> {
    m.column(c).iter().copied().collect()
}

fn sample_corr(m: &DMatrix<f64>, a: usize, b: usize) -> f64 {
    let (x, y) = (column(m, a), column(m, b));
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (u, v) in x.iter().zip(&y) {
        sxy += (u - mx) * (v - my);
        sxx += (u - mx).powi(2);
        syy += (v - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

fn study_config(n: usize, dt: f64) -> SimulationConfig {
    let mut cfg = SimulationConfig::new(n, dt, SEED);
    cfg.rate_observable = RateObservable::MartingaleLoading;
    cfg.tenors = TenorMap::with_g2_default(STUDY_G2_TENORS);
    cfg
}

fn max_cross_error(est: &BlockCorrelationMatrix, truth: &BlockCorrelationMatrix) -> f64 {
    let mut worst: f64 = 0.0;
    for r in 0..truth.dim() {
        for c in 0..truth.dim() {
            if !truth.same_block(r, c) {
                worst = worst.max((est.get(r, c) - truth.get(r, c)).abs());
            }
        }
    }
    worst
}

#[test]
fn increments_recover_the_target_matrix() {
    let n = 100_000;
    let band = 3.0 / (n as f64).sqrt();
    let truth = table_presets("g2heston").unwrap().full_matrix.unwrap();
    let z = correlated_increments(&truth, n, DAILY_DT, SEED).unwrap();
    for a in 0..4 {
        for b in a + 1..4 {
            assert!(
                (sample_corr(&z, a, b) - truth.get(a, b)).abs() < band,
                "entry ({a},{b})"
            );
        }
    }

    let identity =
        BlockCorrelationMatrix::with_generic_labels(DMatrix::identity(4, 4), vec![1; 4]).unwrap();
    let z = correlated_increments(&identity, n, DAILY_DT, SEED).unwrap();
    for a in 0..4 {
        for b in a + 1..4 {
            assert!(sample_corr(&z, a, b).abs() < band);
        }
    }
}

#[test]
fn perfectly_correlated_drivers_are_identical() {
    let ones =
        BlockCorrelationMatrix::with_generic_labels(DMatrix::from_element(2, 2, 1.0), vec![2])
            .unwrap();
    let z = correlated_increments(&ones, 1000, DAILY_DT, SEED).unwrap();
    for k in 0..1000 {
        assert!((z[(k, 0)] - z[(k, 1)]).abs() <= 1e-12);
    }
}

#[test]
fn g2_pair_is_recovered_from_one_long_path() {
    let sys = table_presets("g2g2").unwrap();
    let paths = simulate_system(&sys, &study_config(100_000, DAILY_DT)).unwrap();
    let draft = estimate_all(
        &paths.panel,
        &sys,
        &TenorMap::with_g2_default(STUDY_G2_TENORS),
    )
    .unwrap();
    assert!(draft.is_complete());
    assert_eq!(draft.diagnostics.pairs[0].kind, PairKind::G2G2);
    assert!(max_cross_error(&draft.matrix, sys.full_matrix.as_ref().unwrap()) < 0.02);
}

#[test]
fn equity_pair_estimates_sit_within_sampling_error() {
    let n = 10_000;
    let sys = table_presets("hestonheston").unwrap();
    let paths = simulate_system(&sys, &study_config(n, INTRADAY_DT)).unwrap();
    let draft = estimate_all(&paths.panel, &sys, &TenorMap::default()).unwrap();
    let err = max_cross_error(&draft.matrix, sys.full_matrix.as_ref().unwrap());
    assert!(err < 3.0 / (n as f64).sqrt(), "max error {err}");
}

#[test]
fn mixed_three_component_system_is_recovered() {
    let g1 = ComponentSpec::G1(G1Params {
        a: 0.05,
        sigma: 0.008,
    });
    let g2 = ComponentSpec::G2(G2Params {
        a: 0.1,
        b: 0.2,
        sigma: 0.01,
        eta: 0.02,
        rho_xy: 0.5,
    });
    let eq = ComponentSpec::Heston(HestonParams {
        kappa: 1.0,
        theta: 0.2,
        xi: 0.3,
        v0: 0.1,
        rho_sv: -0.8,
        r_tilde: 0.02,
        q_tilde: 0.0,
    });
    let blocks = BTreeMap::from([
        ((0, 1), DMatrix::from_row_slice(1, 2, &[0.3, 0.2])),
        ((0, 2), DMatrix::from_row_slice(1, 2, &[0.1, -0.1])),
        (
            (1, 2),
            DMatrix::from_row_slice(2, 2, &[0.1, -0.2, 0.2, -0.15]),
        ),
    ]);
    let sys = HybridSystemSpec::new(vec![g1, g2, eq])
        .with_cross_blocks(&blocks)
        .unwrap();
    let paths = simulate_system(&sys, &study_config(100_000, DAILY_DT)).unwrap();
    let draft = estimate_all(
        &paths.panel,
        &sys,
        &TenorMap::with_g2_default(STUDY_G2_TENORS),
    )
    .unwrap();
    let kinds: Vec<PairKind> = draft.diagnostics.pairs.iter().map(|p| p.kind).collect();
    assert_eq!(
        kinds,
        vec![PairKind::G1G2, PairKind::G1Heston, PairKind::G2Heston]
    );
    let err = max_cross_error(&draft.matrix, sys.full_matrix.as_ref().unwrap());
    assert!(err < 0.03, "max error {err}");
}

#[test]
fn implied_vol_proxy_matches_true_variance() {
    let sys = table_presets("g2heston").unwrap();
    let tenors = TenorMap::with_g2_default(STUDY_G2_TENORS);
    let mut cfg = study_config(2000, DAILY_DT);
    let truth = estimate_all(&simulate_system(&sys, &cfg).unwrap().panel, &sys, &tenors).unwrap();
    cfg.variance_observable = VarianceObservable::ImpliedVolAtm;
    let paths = simulate_system(&sys, &cfg).unwrap();
    assert!(paths.panel.get(&SeriesKey::implied_vol(1)).is_some());
    let proxy = estimate_all(&paths.panel, &sys, &tenors).unwrap();
    assert!((proxy.matrix.entries() - truth.matrix.entries()).amax() < 1e-9);
}

#[test]
fn single_component_returns_its_diagonal_block() {
    let g2 = ComponentSpec::G2(G2Params {
        a: 0.1,
        b: 0.2,
        sigma: 0.01,
        eta: 0.02,
        rho_xy: 0.5,
    });
    let sys = HybridSystemSpec::new(vec![g2]);
    let panel = ObservationPanel::uniform(10, DAILY_DT).unwrap();
    let draft = estimate_all(&panel, &sys, &TenorMap::default()).unwrap();
    assert!(draft.diagnostics.pairs.is_empty());
    assert_eq!(draft.matrix.entries(), &g2.diagonal_block());
}

#[test]
fn equal_tenors_make_the_system_singular() {
    let sys = table_presets("g2g2").unwrap();
    let paths = simulate_system(&sys, &study_config(500, DAILY_DT)).unwrap();
    let mut tenors = TenorMap::with_g2_default(STUDY_G2_TENORS);
    tenors.set(0, vec![10.0, 10.0]);
    assert!(matches!(
        estimate_all(&paths.panel, &sys, &tenors),
        Err(Error::SingularSystem(_))
    ));
}

#[test]
fn irregular_grid_is_flagged() {
    let sys = table_presets("hestonheston").unwrap();
    let paths = simulate_system(&sys, &study_config(50, DAILY_DT)).unwrap();
    let mut times: Vec<f64> = paths.panel.times().to_vec();
    times[1] = times[0] + 1e-6;
    let mut panel = ObservationPanel::new(times).unwrap();
    for (k, v) in paths.panel.series() {
        panel.insert(*k, v.clone()).unwrap();
    }
    let draft = estimate_all(&panel, &sys, &TenorMap::default()).unwrap();
    assert!(draft
        .diagnostics
        .warnings
        .iter()
        .any(|w| w.contains("irregular")));
}

#[test]
fn unobserved_variance_flows_through_completion_and_repair() {
    let sys = table_presets("g2heston").unwrap();
    let tenors = TenorMap::with_g2_default(STUDY_G2_TENORS);
    let mut cfg = study_config(20_000, DAILY_DT);
    cfg.variance_observable = VarianceObservable::Unobserved;
    let paths = simulate_system(&sys, &cfg).unwrap();
    let draft = estimate_all(&paths.panel, &sys, &tenors).unwrap();
    assert!(!draft.is_complete());
    assert!(draft.diagnostics.pairs[0].incomplete);

    let completed = complete_panel(&draft.matrix, &draft.missing, &sys).unwrap();
    let rho_j = -0.8;
    for r in 0..2 {
        assert_eq!(completed.get(r, 3), rho_j * completed.get(r, 2));
    }
    let fixed = repair(&completed, DEFAULT_CLAMP_BOUND, DEFAULT_SHRINK_TOL).unwrap();
    assert!(is_psd(fixed.matrix.entries(), DEFAULT_PSD_TOL));
    assert!(fixed.matrix.is_symmetric(0.0));
}

#[test]
fn estimates_match_direct_sample_correlation_for_equities() {
    let sys = table_presets("hestonheston").unwrap();
    let paths = simulate_system(&sys, &study_config(3000, DAILY_DT)).unwrap();
    let draft = estimate_all(&paths.panel, &sys, &TenorMap::default()).unwrap();
    let p = &paths.panel;
    let direct = empirical_correlation(
        p.get(&SeriesKey::log_price(0)).unwrap(),
        p.get(&SeriesKey::variance(1)).unwrap(),
    )
    .unwrap();
    assert_eq!(draft.matrix.get(0, 3), direct);
}

#[test]
fn study_is_reproducible_across_thread_counts() {
    let cfg = StudyConfig::preset("g2heston", 500, DAILY_DT)
        .unwrap()
        .with_trials(64);
    let parallel = run_study(&cfg).unwrap();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let serial = pool.install(|| run_study(&cfg)).unwrap();
    assert!(parallel.same_statistics(&serial));
    let other = run_study(&cfg.clone().with_seed(cfg.seed + 1)).unwrap();
    assert!(!parallel.same_statistics(&other));
}

#[test]
fn known_parameter_study_is_consistent() {
    let trials = 200;
    let cfg = StudyConfig::preset("g2g2", 10_000, DAILY_DT)
        .unwrap()
        .with_trials(trials);
    let report = run_study(&cfg).unwrap();
    assert_eq!(report.failures, 0);
    for e in &report.entries {
        let band = 3.0 * e.stderr / (trials as f64).sqrt();
        assert!(
            e.bias.abs() <= band,
            "{}/{}: bias {} band {}",
            e.row,
            e.col,
            e.bias,
            band
        );
    }
}

#[test]
fn stderr_shrinks_like_inverse_root_of_path_length() {
    let short = run_study(
        &StudyConfig::preset("g2heston", 100, INTRADAY_DT)
            .unwrap()
            .with_trials(400),
    )
    .unwrap();
    let long = run_study(
        &StudyConfig::preset("g2heston", 10_000, INTRADAY_DT)
            .unwrap()
            .with_trials(400),
    )
    .unwrap();
    for (s, l) in short.entries.iter().zip(&long.entries) {
        let ratio = s.stderr / l.stderr;
        assert!(
            (7.0..=14.0).contains(&ratio),
            "{}/{}: ratio {ratio}",
            s.row,
            s.col
        );
    }
}
