use std::sync::Arc;

use approx::assert_abs_diff_eq;
use delta_audit::explainer::{
    delta_attributions, delta_scores, make_baseline, occlusion_attributions, BaselineKind,
};
use delta_audit::learners::{KnnParams, LearnerSpec, LogregParams};
use delta_audit::model::{LinearScorer, ScoreModel};
use delta_audit::pipeline::{
    metrics_csv, preset, run_audit, run_batch, write_audit_outputs, AuditConfig, BridgeSpec,
    DeltaReport, ModelSource, Verdict, METRICS_COLUMNS,
};
use delta_audit::suite;
use ndarray::{array, Array2};

fn logreg(l2: f64) -> LearnerSpec {
    LearnerSpec::Logreg(LogregParams {
        l2_strength: l2,
        ..LogregParams::default()
    })
}

#[test]
fn rerun_is_byte_identical() {
    let cfg = preset("logreg-P1").unwrap().config;
    let first = run_audit(&cfg).unwrap().to_json().unwrap();
    let second = run_audit(&cfg).unwrap().to_json().unwrap();
    assert_eq!(first, second);
}

#[test]
fn report_round_trips_and_accuracy_recomputes() {
    let report = run_audit(&preset("gbstumps-P2").unwrap().config).unwrap();
    let back: DeltaReport = serde_json::from_str(&report.to_json().unwrap()).unwrap();
    assert_eq!(back, report);

    let acc = |pred: &[usize]| {
        let hits = pred
            .iter()
            .zip(&back.test_labels)
            .filter(|(p, y)| p == y)
            .count();
        hits as f64 / pred.len() as f64
    };
    assert_eq!(acc(&back.pred_a), back.accuracy_a);
    assert_eq!(acc(&back.pred_b), back.accuracy_b);
    assert_eq!(back.recompute_verdict(), back.verdict);
}

#[test]
fn outputs_land_on_disk() {
    let report = run_audit(&preset("knn-P2").unwrap().config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_audit_outputs(dir.path(), &report).unwrap();
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next().unwrap(), METRICS_COLUMNS.join(","));
    assert_eq!(metrics.lines().count(), 2);
    let per_sample = std::fs::read_to_string(dir.path().join("per_sample.csv")).unwrap();
    assert_eq!(per_sample.lines().count(), report.per_sample.len() + 1);
    let json = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert_eq!(json, report.to_json().unwrap());
}

#[test]
fn batch_isolates_failures_and_aggregates() {
    let pair = preset("logreg-P1").unwrap().config;
    let mut twin = pair.clone();
    twin.name = "twin".into();
    let mut broken = pair.clone();
    broken.name = "broken".into();
    broken.model_b = ModelSource::Bridge(BridgeSpec::new(vec!["/nonexistent/model-server".into()]));

    let batch = run_batch(&[pair.clone(), broken, twin]).unwrap();
    assert_eq!(batch.reports.len(), 2);
    assert_eq!(batch.failures.len(), 1);
    let f = &batch.failures[0];
    assert_eq!((f.index, f.name.as_str()), (1, "broken"));
    assert!(f.error.contains("model_b"), "{}", f.error);

    let single = run_audit(&pair).unwrap();
    let agg = &batch.aggregate[0];
    assert_eq!(agg.audits, 2);
    assert_eq!(agg.mag_l1_mean, single.metrics.mag_l1);
    assert_eq!(agg.mag_l1_std, 0.0);
    assert_eq!(agg.dce_std, 0.0);
    assert_eq!(metrics_csv(&batch.reports).unwrap().lines().count(), 3);
}

#[test]
fn batch_mean_matches_hand_average() {
    let cfgs: Vec<AuditConfig> = ["logreg-P1", "logreg-P2", "logreg-P3"]
        .iter()
        .map(|n| preset(n).unwrap().config)
        .collect();
    let batch = run_batch(&cfgs).unwrap();
    let mags: Vec<f64> = batch.reports.iter().map(|r| r.metrics.mag_l1).collect();
    let mean = mags.iter().sum::<f64>() / 3.0;
    let var = mags.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / 3.0;
    let agg = &batch.aggregate[0];
    assert_abs_diff_eq!(agg.mag_l1_mean, mean, epsilon = 1e-12);
    assert_abs_diff_eq!(agg.mag_l1_std, var.sqrt(), epsilon = 1e-12);
    for r in &batch.reports {
        assert_eq!(r.recompute_verdict(), r.verdict);
    }
}

#[test]
fn logreg_update_leaves_a_conservation_gap_below_magnitude() {
    let r = run_audit(&preset("logreg-P1").unwrap().config).unwrap();
    assert!(r.metrics.dce > 0.0);
    assert!(
        r.metrics.dce < r.metrics.mag_l1,
        "dce {} mag {}",
        r.metrics.dce,
        r.metrics.mag_l1
    );
}

#[test]
fn linear_dce_is_the_score_gap_at_the_baseline() {
    let x = array![
        [0.5, -1.0, 2.0],
        [1.5, 0.0, -0.3],
        [-0.7, 0.4, 1.1],
        [0.2, 2.2, -1.6]
    ];
    let wa = array![[1.0, -0.5, 0.2], [-0.3, 0.8, 0.0]];
    let wb = array![[0.4, 0.1, -0.6], [0.9, -0.2, 0.5]];
    let a = ScoreModel::new(Arc::new(
        LinearScorer::new(wa.clone(), array![0.1, -0.2]).unwrap(),
    ))
    .unwrap();
    let b = ScoreModel::new(Arc::new(
        LinearScorer::new(wb.clone(), array![0.7, 0.3]).unwrap(),
    ))
    .unwrap();
    let base = make_baseline(&x, BaselineKind::Mean).unwrap();
    let anchors = b.predict(&x).unwrap();
    let pa = occlusion_attributions(&a, &x, &anchors, &base).unwrap();
    let pb = occlusion_attributions(&b, &x, &anchors, &base).unwrap();
    let delta = delta_attributions(&pa, &pb).unwrap();
    let dce = suite::dce(&delta, &delta_scores(&pa, &pb).unwrap()).unwrap();

    // raw linear score of the anchor class at the baseline
    let margin = |w: &Array2<f64>, bias: [f64; 2], c: usize, v: &[f64]| {
        bias[c] + (0..3).map(|j| w[[c, j]] * v[j]).sum::<f64>()
    };
    let b_vals = base.values.to_vec();
    let want = anchors
        .iter()
        .map(|&c| {
            (margin(&wb, [0.7, 0.3], c, &b_vals) - margin(&wa, [0.1, -0.2], c, &b_vals)).abs()
        })
        .sum::<f64>()
        / anchors.len() as f64;
    assert_abs_diff_eq!(dce, want, epsilon = 1e-12);
}

#[test]
fn identical_learners_are_benign_at_every_seed() {
    for seed in [0, 7, 1234] {
        let spec = LearnerSpec::Knn(KnnParams::default());
        let mut cfg = AuditConfig::builtin("interact3", spec.clone(), spec);
        cfg.seed = seed;
        let r = run_audit(&cfg).unwrap();
        assert_eq!(r.verdict, Verdict::Benign, "seed {seed}");
        assert_eq!(r.fixes.len() + r.regressions.len(), 0);
    }
    let r = run_audit(&AuditConfig::builtin("wine_toy", logreg(1.0), logreg(1.0))).unwrap();
    assert_eq!(r.metrics.mag_l1, 0.0);
}
