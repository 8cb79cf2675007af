//! Acceptance suite: one test per release criterion, each printing a
//! `ACCEPTANCE <n> ...: PASS` line when it holds.
//!
//! Run with `cargo test -p krf --test acceptance -- --nocapture`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use krf::datagen::{generate_tunnel, Region, TunnelSpec};
use krf::eval::{average_precision, binary_auc, classification_metrics};
use krf::forest::{
    ensemble_mean_variance, fit_forest, DecisionTree, Dataset, Forest, Hyperparams,
};
use krf::fusion::{fuse, fusion_weights, run_krf, FusionConfig};
use krf::kriging::{extrapolate, KrigingMode, KrigingSystem};
use krf::preprocess::{
    bq_classify, filter_nonworking, tukey_bounds, BqInput, GroundVector, OperatingRecord,
    FEATURE_NAMES,
};
use krf::variogram::{
    empirical_semivariogram, fit_model, VariogramKind, VariogramModel, ALL_KINDS,
};
use krf::BqClass;

const TOL: f64 = 1e-9;

fn pass(n: u32, name: &str) {
    println!("ACCEPTANCE {n} {name}: PASS");
}

#[test]
fn criterion_01_equation_fidelity() {
    let start = Instant::now();

    // empirical semivariance on the four-point ramp
    let samples: Vec<(f64, f64)> = (0..4).map(|i| (i as f64, i as f64)).collect();
    let bins = empirical_semivariogram(&samples, 1.0, 1.6).unwrap();
    assert_eq!(bins[0].n_pairs, 3);
    assert!((bins[0].gamma_star - 0.5).abs() < TOL);

    // spherical model at the four regime points
    let model = VariogramModel::new(VariogramKind::Spherical, 1.0, 3.0, 10.0).unwrap();
    assert!((model.evaluate(0.0) - 1.0).abs() < TOL);
    assert!((model.evaluate(5.0) - 3.0625).abs() < TOL);
    assert!((model.evaluate(10.0) - 4.0).abs() < TOL);
    assert!((model.evaluate(25.0) - 4.0).abs() < TOL);

    // one-point unconstrained kriging: weights, estimate, variance
    let system =
        KrigingSystem::from_parts(vec![vec![2.0]], vec![1.0], KrigingMode::PaperLiteral).unwrap();
    let weights = system.solve().unwrap();
    assert!((weights.lambda[0] - 0.5).abs() < TOL);
    assert!((system.estimate(&weights, &[10.0]).unwrap() - 5.0).abs() < TOL);
    assert!((system.variance(&weights) - 0.5).abs() < TOL);

    // ensemble mean and population variance
    let outputs = [
        [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [2.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    ];
    let (mean, var) = ensemble_mean_variance(&outputs);
    assert!((mean[0] - 2.0).abs() < TOL);
    assert!((var[0] - 2.0 / 3.0).abs() < TOL);

    // inverse-uncertainty weights and the fused value
    let (w_kriging, w_rf) = fusion_weights(1.0, 3.0);
    assert!((w_kriging - 0.75).abs() < TOL);
    assert!((w_rf - 0.25).abs() < TOL);
    let (fused, _) = fuse(10.0, 1.0, 2.0, 3.0);
    assert!((fused - 8.0).abs() < TOL);

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "fidelity suite took {elapsed:?}");
    pass(1, "equation fidelity");
}

#[test]
fn criterion_02_ordinary_kriging_exactness() {
    let model = VariogramModel::new(VariogramKind::Spherical, 0.4, 1.6, 12.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..50 {
        let n = rng.gen_range(2..9);
        let mut locations: Vec<f64> = Vec::new();
        while locations.len() < n {
            let x = rng.gen_range(0.0..100.0);
            if locations.iter().all(|&l| (l - x).abs() > 1e-6) {
                locations.push(x);
            }
        }
        let prev: Vec<(f64, Vec<f64>)> = locations
            .iter()
            .map(|&x| (x, vec![rng.gen_range(-5.0..5.0)]))
            .collect();
        let pick = rng.gen_range(0..n);
        let estimate = extrapolate(&prev, prev[pick].0, &model, KrigingMode::Ordinary).unwrap();
        assert!(
            (estimate.values[0] - prev[pick].1[0]).abs() < TOL,
            "trial {trial}: estimate {} vs sample {}",
            estimate.values[0],
            prev[pick].1[0]
        );
        assert!(
            estimate.variances[0] < TOL,
            "trial {trial}: variance {}",
            estimate.variances[0]
        );
    }
    pass(2, "ordinary kriging exactness at sample locations");
}

#[test]
fn criterion_03_paper_literal_variance_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..200 {
        let n = rng.gen_range(1..9);
        let m: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                a[i][j] = (0..n).map(|k| m[i][k] * m[j][k]).sum::<f64>();
            }
        }
        let min = a
            .iter()
            .flatten()
            .fold(f64::INFINITY, |acc, &v| acc.min(v))
            .min(0.0);
        for row in a.iter_mut() {
            for v in row.iter_mut() {
                *v -= min;
            }
        }
        for (i, row) in a.iter_mut().enumerate() {
            row[i] += 0.7;
        }
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
        let system =
            KrigingSystem::from_parts(a, b.clone(), KrigingMode::PaperLiteral).unwrap();
        let weights = system.solve().unwrap();
        let direct = system.variance(&weights);
        let reduced: f64 = weights.lambda.iter().zip(&b).map(|(l, g)| l * g).sum();
        assert!(
            (direct - reduced).abs() < TOL,
            "trial {trial}: {direct} vs {reduced}"
        );
    }
    pass(3, "paper-literal variance identity on 200 fixtures");
}

#[test]
fn criterion_04_variogram_recovery_at_2000_rings() {
    let start = Instant::now();
    let spec = TunnelSpec {
        length_m: 3000.0, // 2000 rings
        nugget: 0.3,
        partial_sill: 1.7,
        range_m: 15.0,
        seed: 1,
        ..Default::default()
    };
    let tunnel = generate_tunnel(&spec).unwrap();
    let samples: Vec<(f64, f64)> = tunnel
        .ring_chainage
        .iter()
        .copied()
        .zip(tunnel.latent[0].iter().copied())
        .collect();
    let bins = empirical_semivariogram(&samples, spec.ring_width_m, 45.0).unwrap();
    let fit = fit_model(&bins, &ALL_KINDS).unwrap();
    assert_eq!(fit.model.kind, VariogramKind::Spherical, "kind selection");
    let range_error = (fit.model.range - 15.0).abs() / 15.0;
    assert!(range_error < 0.2, "range {} (error {range_error})", fit.model.range);
    let sill_error = (fit.model.sill() - 2.0).abs() / 2.0;
    assert!(sill_error < 0.1, "sill {} (error {sill_error})", fit.model.sill());
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "recovery took {elapsed:?}");
    pass(4, "variogram recovery on 2000 synthetic rings");
}

fn lift_spec(seed: u64) -> TunnelSpec {
    TunnelSpec {
        length_m: 4500.0, // 3000 rings
        records_per_ring: 2,
        nonworking_fraction: 0.0,
        sensor_noise: 0.25,
        operator_noise: 0.20,
        range_m: 30.0,
        smoothness: 0.25,
        seed,
        ..Default::default()
    }
}

struct LiftOutcome {
    rf_accuracy: f64,
    krf_accuracy: f64,
    forest: Forest,
    model: VariogramModel,
}

/// Train on the first 80 % of the tunnel (contiguous sections), score both
/// channels on the held-out tail.
fn train_and_score(seed: u64) -> LiftOutcome {
    let spec = lift_spec(seed);
    let tunnel = generate_tunnel(&spec).unwrap();
    let n = tunnel.records.len();
    let split = n * 8 / 10;

    let dataset = Dataset::new(
        FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        tunnel.records[..split]
            .iter()
            .map(|r| r.features().to_vec())
            .collect(),
        tunnel.record_labels[..split].to_vec(),
    )
    .unwrap();
    let hp = Hyperparams {
        n_trees: 30,
        max_depth: 10,
        min_samples_split: 2,
        min_samples_leaf: 5,
        m_try: 3,
        seed,
    };
    let forest = fit_forest(&dataset, &hp).unwrap();

    // variogram calibrated on the training section of the regional series
    let rings_in_train = split / spec.records_per_ring;
    let borehole: Vec<(f64, f64)> = tunnel.borehole[..rings_in_train].to_vec();
    let bins = empirical_semivariogram(&borehole, spec.ring_width_m, 45.0).unwrap();
    let fit = fit_model(&bins, &ALL_KINDS).unwrap();
    let model = fit.model.with_sill(forest.label_component_variance).unwrap();

    let test = &tunnel.records[split..];
    let truth: Vec<BqClass> = tunnel.record_labels[split..]
        .iter()
        .map(|g| g.main_class().unwrap())
        .collect();

    let rf_predictions: Vec<BqClass> = test
        .iter()
        .map(|r| forest.predict(&r.features()).unwrap().0.main_class().unwrap())
        .collect();
    let rf_accuracy = classification_metrics(&truth, &rf_predictions)
        .unwrap()
        .accuracy;

    let fusion = FusionConfig::new(12, KrigingMode::Ordinary, model).unwrap();
    let krf_predictions: Vec<BqClass> = run_krf(test, &forest, &fusion)
        .unwrap()
        .iter()
        .map(|p| p.main)
        .collect();
    let krf_accuracy = classification_metrics(&truth, &krf_predictions)
        .unwrap()
        .accuracy;

    LiftOutcome {
        rf_accuracy,
        krf_accuracy,
        forest,
        model,
    }
}

#[test]
fn criterion_05_end_to_end_lift_over_rf_only() {
    let start = Instant::now();
    let mut wins_at_one_point = 0;
    for seed in 0..10u64 {
        let outcome = train_and_score(seed);
        let lift = outcome.krf_accuracy - outcome.rf_accuracy;
        println!(
            "  seed {seed}: rf {:.4} krf {:.4} lift {:+.4}",
            outcome.rf_accuracy, outcome.krf_accuracy, lift
        );
        assert!(
            outcome.krf_accuracy >= outcome.rf_accuracy,
            "seed {seed}: fused prediction fell below the forest baseline"
        );
        if lift >= 0.01 {
            wins_at_one_point += 1;
        }
    }
    assert!(
        wins_at_one_point >= 8,
        "lift of >= 1 point on only {wins_at_one_point}/10 seeds"
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "lift suite took {elapsed:?}");
    pass(5, "fused prediction lifts accuracy over the forest baseline");
}

#[test]
fn criterion_06_synthetic_transfer_between_regions() {
    let mut retained = 0;
    for seed in 0..10u64 {
        let outcome = train_and_score(seed);
        let mut spec_b = lift_spec(seed + 1000);
        spec_b.region = Region::B;
        let tunnel_b = generate_tunnel(&spec_b).unwrap();
        let truth_b: Vec<BqClass> = tunnel_b
            .record_labels
            .iter()
            .map(|g| g.main_class().unwrap())
            .collect();
        let fusion = FusionConfig::new(12, KrigingMode::Ordinary, outcome.model).unwrap();
        let predictions_b: Vec<BqClass> = run_krf(&tunnel_b.records, &outcome.forest, &fusion)
            .unwrap()
            .iter()
            .map(|p| p.main)
            .collect();
        let accuracy_b = classification_metrics(&truth_b, &predictions_b)
            .unwrap()
            .accuracy;
        let retention = accuracy_b / outcome.krf_accuracy;
        println!(
            "  seed {seed}: region A {:.4}, region B {:.4}, retention {:.3}",
            outcome.krf_accuracy, accuracy_b, retention
        );
        if retention >= 0.8 {
            retained += 1;
        }
    }
    assert!(retained >= 8, "retention >= 0.8 on only {retained}/10 seeds");
    pass(6, "region transfer retains at least 80 percent accuracy");
}

/// Stump forest with positive ensemble variance on every component.
fn full_support_forest() -> Forest {
    let tree = |delta: f64| {
        let low = [
            0.30 + delta,
            0.25 - delta,
            0.15 + delta,
            0.10 - delta,
            0.12 + delta,
            0.08 - delta,
        ];
        let high = [
            0.10 + delta,
            0.15 - delta,
            0.20 + delta,
            0.25 - delta,
            0.10 + delta,
            0.20 - delta,
        ];
        DecisionTree::stump(0, 15.0, low, high)
    };
    Forest::from_trees(
        vec![tree(0.0), tree(0.01), tree(0.02)],
        FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        Hyperparams {
            n_trees: 3,
            ..Default::default()
        },
    )
}

fn degenerate_stream() -> Vec<OperatingRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    (0..60)
        .map(|i| {
            let thrust = if (i / 6) % 2 == 0 { 10.0 } else { 20.0 };
            OperatingRecord {
                chainage: i as f64 * 0.75,
                timestamp: i as f64 * 60.0,
                thrust: thrust + rng.gen_range(-1.0..1.0),
                advance_rate: 20.0,
                torque: 2.0,
                cutter_speed: 1.5,
                penetration: 12.0,
                chamber_pressure: 1.2,
                foam_volume: 0.5,
                water_volume: 15.0,
            }
        })
        .collect()
}

#[test]
fn criterion_07_degenerate_channel_checks() {
    let forest = full_support_forest();
    let stream = degenerate_stream();
    let model = VariogramModel::new(VariogramKind::Spherical, 0.02, 0.08, 12.0).unwrap();

    let mut forest_pin = FusionConfig::new(10, KrigingMode::Ordinary, model).unwrap();
    forest_pin.var_rf_override = Some(0.0);
    let pinned_forest = run_krf(&stream, &forest, &forest_pin).unwrap();
    for p in &pinned_forest {
        assert_eq!(p.fused, p.forest, "forest channel not exact at {}", p.chainage);
    }

    let mut kriging_pin = FusionConfig::new(10, KrigingMode::Ordinary, model).unwrap();
    kriging_pin.var_kriging_override = Some(0.0);
    let pinned_kriging = run_krf(&stream, &forest, &kriging_pin).unwrap();
    assert!(pinned_kriging.len() > 1);
    for p in pinned_kriging.iter().skip(1) {
        let channel = GroundVector::clamp_renormalize(p.kriging.expect("warm record"));
        assert_eq!(p.fused, channel, "kriging channel not exact at {}", p.chainage);
    }

    for run in [&pinned_forest, &pinned_kriging] {
        for p in run.iter() {
            for c in 0..6 {
                assert!(
                    (p.w_kriging[c] + p.w_rf[c] - 1.0).abs() < 1e-12,
                    "weights sum off at {} component {c}",
                    p.chainage
                );
            }
        }
    }
    pass(7, "degenerate channel pinning and weight normalization");
}

#[test]
fn criterion_08_metrics_oracles() {
    use BqClass::{II, III, IV};

    // confusion / precision / recall fixture
    let actual = [II, II, III, IV];
    let predicted = [II, III, III, IV];
    let report = classification_metrics(&actual, &predicted).unwrap();
    assert!((report.accuracy - 0.75).abs() < 1e-12);
    assert!((report.precision[III.index()] - 0.5).abs() < 1e-12);
    assert!((report.recall[III.index()] - 1.0).abs() < 1e-12);

    // pairwise AUC fixture
    let auc = binary_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
    assert!((auc - 0.75).abs() < 1e-12);

    // perfect separator
    let perfect = binary_auc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
    assert!((perfect - 1.0).abs() < 1e-12);

    // average precision fixture
    let ap = average_precision(&[0.9, 0.8, 0.7, 0.1], &[false, false, false, true]).unwrap();
    assert!((ap - 0.25).abs() < 1e-12);
    let ap_perfect =
        average_precision(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
    assert!((ap_perfect - 1.0).abs() < 1e-12);

    // random scores stay near chance at n = 10000
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let scores: Vec<f64> = (0..10000).map(|_| rng.gen_range(0.0..1.0)).collect();
    let labels: Vec<bool> = (0..10000).map(|_| rng.gen_bool(0.5)).collect();
    let random_auc = binary_auc(&scores, &labels).unwrap();
    assert!(
        (0.45..=0.55).contains(&random_auc),
        "random AUC {random_auc}"
    );
    pass(8, "metrics oracles");
}

#[test]
fn criterion_09_preprocessing_oracles() {
    // box-plot limits
    let values: Vec<f64> = (1..=9).map(f64::from).chain([100.0]).collect();
    let (lo, hi) = tukey_bounds(&values, 1.5).unwrap();
    assert!((lo - (-3.5)).abs() < 1e-12);
    assert!((hi - 14.5).abs() < 1e-12);

    // the stopped-machine filter drops exactly the zero-gate rows
    let spec = TunnelSpec {
        length_m: 200.0,
        nonworking_fraction: 0.1,
        seed: 9,
        ..Default::default()
    };
    let tunnel = generate_tunnel(&spec).unwrap();
    let kept = filter_nonworking(&tunnel.records);
    let expected: Vec<OperatingRecord> = tunnel
        .records
        .iter()
        .zip(&tunnel.nonworking)
        .filter(|(_, &stopped)| !stopped)
        .map(|(r, _)| *r)
        .collect();
    assert_eq!(kept, expected);
    assert!(tunnel.nonworking.iter().any(|&s| s));

    // quality-score classifier against an independent oracle
    fn oracle(rc: f64, kv: f64) -> (f64, BqClass) {
        let rc_used = if rc > 90.0 * kv + 30.0 { 90.0 * kv + 30.0 } else { rc };
        let kv_used = if kv > 0.04 * rc + 0.4 { 0.04 * rc + 0.4 } else { kv };
        let bq = 100.0 + 3.0 * rc_used + 250.0 * kv_used;
        let class = match bq {
            b if b > 550.0 => BqClass::I,
            b if b > 450.0 => BqClass::II,
            b if b > 350.0 => BqClass::III,
            b if b > 250.0 => BqClass::IV,
            _ => BqClass::V,
        };
        (bq, class)
    }
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut rc_cap_hits = 0;
    let mut kv_cap_hits = 0;
    for _ in 0..1000 {
        let rc = rng.gen_range(0.01..150.0);
        let kv = rng.gen_range(0.01..1.0);
        rc_cap_hits += (rc > 90.0 * kv + 30.0) as usize;
        kv_cap_hits += (kv > 0.04 * rc + 0.4) as usize;
        let (bq, class) = bq_classify(BqInput { rc, kv }).unwrap();
        let (bq_expected, class_expected) = oracle(rc, kv);
        assert!((bq - bq_expected).abs() < 1e-12);
        assert_eq!(class, class_expected);
    }
    assert!(rc_cap_hits > 0 && kv_cap_hits > 0, "caps not exercised");
    pass(9, "preprocessing oracles");
}

#[test]
fn criterion_10_determinism() {
    // identical forests across worker counts
    let spec = TunnelSpec {
        length_m: 240.0,
        seed: 10,
        ..Default::default()
    };
    let tunnel = generate_tunnel(&spec).unwrap();
    let dataset = Dataset::new(
        FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        tunnel.records.iter().map(|r| r.features().to_vec()).collect(),
        tunnel.record_labels.clone(),
    )
    .unwrap();
    let hp = Hyperparams {
        n_trees: 16,
        max_depth: 8,
        min_samples_split: 2,
        min_samples_leaf: 3,
        m_try: 3,
        seed: 10,
    };
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| fit_forest(&dataset, &hp))
        .unwrap();
    let eight = rayon::ThreadPoolBuilder::new()
        .num_threads(8)
        .build()
        .unwrap()
        .install(|| fit_forest(&dataset, &hp))
        .unwrap();
    assert_eq!(single, eight, "forest differs across worker counts");

    // byte-identical artifacts across two full pipeline runs
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let config_text = r#"
seed = 11

[simulate]
length_m = 120.0
records_per_ring = 2

[train]
n_trees = 10
max_depth = 6
min_samples_leaf = 2

[fusion]
window = 8
"#;
    for dir in [&dir_a, &dir_b] {
        let config = dir.path().join("config.toml");
        std::fs::write(&config, config_text).unwrap();
        let config_arg = config.display().to_string();
        for command in [
            "simulate",
            "preprocess",
            "fit-variogram",
            "train",
            "predict",
            "evaluate",
            "importance",
        ] {
            let code = krf::cli::run(&[
                command.to_string(),
                "--config".to_string(),
                config_arg.clone(),
            ]);
            assert_eq!(code, 0, "{command} failed in {}", dir.path().display());
        }
    }
    for artifact in [
        "telemetry.csv",
        "strata.csv",
        "truth.csv",
        "borehole.csv",
        "dataset.csv",
        "variogram.toml",
        "forest.json",
        "predictions.csv",
        "metrics.txt",
        "importance.csv",
    ] {
        let a = std::fs::read(dir_a.path().join(artifact)).unwrap();
        let b = std::fs::read(dir_b.path().join(artifact)).unwrap();
        assert_eq!(a, b, "{artifact} differs between identical runs");
    }
    pass(10, "determinism across reruns and worker counts");
}
