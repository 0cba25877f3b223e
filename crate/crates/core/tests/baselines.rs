mod common;

use common::{encoded, spec, Lcg};
use masksurv_core::baselines::{bin_edges, fit_cox, fit_cox_cohort, fit_mlp_deephit, CoxConfig, MlpConfig};
use masksurv_core::dataset::{
    fit_apply_preprocessor, generate_synthetic, stratified_kfold, CategoricalSpec, Cell, EncodedCohort,
    FeatureGroup, GeneratorSpec,
};
use masksurv_core::imputation::{fit, ImputeStrategy};
use masksurv_core::metrics::{ct_index, kaplan_meier, RiskMatrix, Ties};
use masksurv_core::train::TrainConfig;
use masksurv_core::HazardModel;
use proptest::prelude::*;

fn two_group_cohort(effect: f64, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
    let spec = GeneratorSpec {
        coefficients: vec![],
        categorical: vec![CategoricalSpec {
            name: "group".into(),
            levels: vec!["a".into(), "b".into()],
            effects: vec![0.0, effect],
        }],
        baseline_scale: 0.02,
        weibull_shape: 1.0,
        missing_rate: 0.0,
        censoring_rate: 0.01,
    };
    let table = generate_synthetic(2000, &spec, seed).unwrap();
    let x = table
        .rows()
        .iter()
        .map(|r| match &r[0] {
            Cell::Level(l) if l == "b" => 1.0,
            _ => 0.0,
        })
        .collect();
    (x, table.survival_months().to_vec(), table.events().to_vec())
}

#[test]
fn cox_recovers_known_hazard_ratio() {
    let (x, t, e) = two_group_cohort(std::f64::consts::LN_2, 17);
    let m = fit_cox(&x, 1, &t, &e, CoxConfig::default()).unwrap();
    assert!(m.converged);
    assert!((m.beta[0] - std::f64::consts::LN_2).abs() <= 0.1, "{:?}", m.beta);
    assert!(m.loglik_trace.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn cox_finds_no_effect_without_signal() {
    let (x, t, e) = two_group_cohort(0.0, 18);
    let m = fit_cox(&x, 1, &t, &e, CoxConfig::default()).unwrap();
    assert!(m.beta[0].abs() <= 0.1, "{:?}", m.beta);
}

#[test]
fn breslow_baseline_agrees_with_kaplan_meier() {
    let (_, t, e) = two_group_cohort(0.0, 19);
    let zeros = vec![0.0; t.len()];
    let m = fit_cox(&zeros, 1, &t, &e, CoxConfig::default()).unwrap();
    let km = kaplan_meier(&t, &e).unwrap();
    for (k, &u) in km.times.iter().enumerate() {
        if km.at_risk[k] < 50 {
            break;
        }
        let na = (-m.cumulative_baseline_hazard(u)).exp();
        assert!((na - km.at(u)).abs() <= 0.02 * km.at(u), "t={u} {na} vs {}", km.at(u));
    }
}

#[test]
fn cox_cif_orders_like_the_linear_predictor() {
    let cohort = encoded(400, &spec(vec![1.0, -0.5, 0.25], 0.0), 3, 12.0);
    let m = fit_cox_cohort(&cohort, CoxConfig::default()).unwrap();
    let edges = bin_edges(cohort.n_bins, cohort.unit_months);
    let mut scored: Vec<(f64, Vec<f64>)> = (0..cohort.len())
        .map(|i| {
            let row = cohort.row(i);
            (m.linear_predictor(row.values), m.predict_row(row, &edges).unwrap())
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    for w in scored.windows(2) {
        for t in 0..cohort.n_bins {
            assert!(w[0].1[t] <= w[1].1[t]);
        }
        assert!(w[0].1.windows(2).all(|c| c[0] <= c[1]));
    }
}

fn mlp_test_ct(coefficients: Vec<f64>, stage_effect: f64, seed: u64) -> f64 {
    let mut spec = spec(coefficients, 0.0);
    spec.categorical[0].effects = vec![0.0, stage_effect, 2.0 * stage_effect];
    let table = generate_synthetic(1000, &spec, seed).unwrap();
    let folds = stratified_kfold(table.events(), 5, seed).unwrap();
    let f = &folds[0];
    let (train, test, pre) = fit_apply_preprocessor(&table.subset(&f.train), &table.subset(&f.test), 12.0, 72.0).unwrap();
    let val = pre.apply(&table.subset(&f.val)).unwrap();
    let cfg = TrainConfig { max_epochs: 30, early_stop_patience: 8, ..TrainConfig::toy() };
    let (model, out) =
        fit_mlp_deephit(&train, &val, MlpConfig::default_for(train.width, train.n_bins, seed), &cfg).unwrap();
    let best = out.curves[out.best_epoch - 1].val_loss;
    assert!(out.curves.iter().all(|r| r.val_loss >= best));
    let cifs = (0..test.len()).map(|i| model.predict_cif(test.row(i)).unwrap()).collect();
    let r = RiskMatrix::new(cifs, test.time_bin.clone(), test.event.clone()).unwrap();
    ct_index(&r, Ties::Strict).unwrap()
}

#[test]
fn mlp_learns_signal_and_not_noise() {
    let strong = mlp_test_ct(vec![1.5, -1.2, 1.0, -0.8], 0.4, 5);
    assert!(strong > 0.65, "{strong}");
    let null = mlp_test_ct(vec![0.0, 0.0, 0.0, 0.0], 0.0, 6);
    assert!((null - 0.5).abs() <= 0.05, "{null}");
}

fn cont_groups(w: usize) -> Vec<FeatureGroup> {
    (0..w)
        .map(|c| FeatureGroup { name: format!("f{c}"), categorical: false, start: c, width: 1 })
        .collect()
}

fn matrix_cohort(values: Vec<f64>, available: Vec<bool>, w: usize) -> EncodedCohort {
    let n = values.len() / w;
    EncodedCohort {
        values,
        available,
        width: w,
        groups: cont_groups(w),
        time_bin: vec![0; n],
        event: vec![false; n],
        survival_months: vec![1.0; n],
        n_bins: 2,
        unit_months: 1.0,
    }
}

#[test]
fn knn_matches_brute_force_neighbours() {
    let train = matrix_cohort(
        vec![
            0.0, 0.0, 1.0, //
            1.0, 0.5, 2.0, //
            2.0, 1.0, 3.0, //
            0.2, 0.1, 10.0, //
            5.0, 5.0, 4.0, //
            0.9, 0.4, 0.0, //
        ],
        vec![true; 18],
        3,
    );
    let state = fit(ImputeStrategy::Knn { k: 2 }, &train).unwrap();
    let probe = matrix_cohort(vec![1.0, 0.45, 0.0], vec![true, true, false], 3);
    let out = state.transform(&probe).unwrap();

    let mut d: Vec<(f64, usize)> = (0..6)
        .map(|t| {
            let dx = train.values[t * 3] - 1.0;
            let dy = train.values[t * 3 + 1] - 0.45;
            (((dx * dx + dy * dy) * 3.0 / 2.0).sqrt(), t)
        })
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let expected = (train.values[d[0].1 * 3 + 2] + train.values[d[1].1 * 3 + 2]) / 2.0;
    assert_eq!(out.values[2], expected);
    assert_eq!(&out.values[..2], &[1.0, 0.45]);
}

#[test]
fn knn_with_every_neighbour_is_the_observed_mean() {
    let train = matrix_cohort(
        vec![1.0, 2.0, 3.0, 0.0, 5.0, 6.0, 7.0, 8.0],
        vec![true, true, true, false, true, true, true, true],
        2,
    );
    let knn = fit(ImputeStrategy::Knn { k: 10 }, &train).unwrap();
    let mean = fit(ImputeStrategy::Mean, &train).unwrap();
    let probe = matrix_cohort(vec![4.0, 0.0], vec![true, false], 2);
    assert_eq!(knn.transform(&probe).unwrap().values[1], mean.fill_values()[1]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn imputation_preserves_and_is_idempotent(seed in 0u64..100_000, use_knn in any::<bool>()) {
        let mut rng = Lcg(seed);
        let w = 3;
        let n = 12;
        let values: Vec<f64> = (0..n * w).map(|_| rng.next() * 4.0 - 2.0).collect();
        let mut available: Vec<bool> = (0..n * w).map(|_| rng.next() < 0.7).collect();
        available[..w].fill(true);
        for r in 0..n {
            available[r * w + rng.below(w)] = true;
        }
        let masked: Vec<f64> = values.iter().zip(&available).map(|(v, &a)| if a { *v } else { 0.0 }).collect();
        let cohort = matrix_cohort(masked, available.clone(), w);
        let strategy = if use_knn { ImputeStrategy::knn() } else { ImputeStrategy::Mean };
        let state = fit(strategy, &cohort).unwrap();
        let once = state.transform(&cohort).unwrap();
        prop_assert!(!once.has_missing());
        for (i, &a) in available.iter().enumerate() {
            if a {
                prop_assert_eq!(once.values[i].to_bits(), cohort.values[i].to_bits());
            }
        }
        prop_assert_eq!(state.transform(&once).unwrap(), once);
    }
}
