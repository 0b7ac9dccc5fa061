//! End-to-end audits.
//!
//! [`run_audit`] executes one audit in a fixed stage order:
//! split, standardize, train or attach A and B, anchor, cap the audited
//! rows, build baselines, explain, score the suite, rank B's features by
//! permutation importance, form fix/regression cohorts and classify the
//! update. Accuracies use the full test split; suite metrics use the capped
//! subset. [`run_batch`] runs many audits, isolates failures and replaces
//! the single-pair magnitude boundaries with the batch's own quartiles.

mod config;
mod presets;
mod report;
mod sanity;
mod verdict;

pub use config::{
    AnchorChoice, AuditConfig, BridgeSpec, DatasetSource, MagBoundaries, ModelSource,
    VerdictThresholds,
};
pub use presets::{preset, presets, Preset};
pub use report::{
    aggregate_by_family, aggregate_csv, metrics_csv, per_sample_csv, write_audit_outputs,
    write_batch_outputs, FamilyAggregate, METRICS_COLUMNS,
};
pub use sanity::{run_sanity, sanity_configs, SanityRow, SANITY_TOL};
pub use verdict::{batch_boundaries, classify_verdict, BoundarySource, Verdict};

use std::sync::Arc;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset};
use crate::error::{Error, Result, Stage, StageExt};
use crate::explainer::{
    self, grouped_occlusion_ratio, make_baseline, occlusion_attributions, AttributionMatrix,
    BaselineKind, DeltaMatrix,
};
use crate::learners::{self, ScorePath};
use crate::model::{anchor_classes, Capabilities, ScoreModel};
use crate::numeric;
use crate::protocol::BridgeProvider;
use crate::suite::{self, DeltaMetrics, StabilityEntry};

/// Test-only interference with an audit.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuditHooks {
    /// Added to B's first attribution under every baseline.
    pub perturb_b: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationImportance {
    /// Mean accuracy drop per feature.
    pub importances: Vec<f64>,
    /// Top-`m` features, most important first, ties to the lower index.
    pub ranked: Vec<usize>,
}

/// Permutation importance of every feature for `model`. Each (feature,
/// repeat) pair shuffles with its own ChaCha stream, so results do not
/// depend on evaluation order.
pub fn permutation_importance(
    model: &ScoreModel,
    x: &Array2<f64>,
    y: &[usize],
    m: usize,
    repeats: usize,
    seed: u64,
) -> Result<PermutationImportance> {
    if m == 0 || repeats == 0 {
        return Err(Error::Config(
            "permutation importance needs m >= 1 and repeats >= 1".into(),
        ));
    }
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!(
            "{} rows but {} labels",
            x.nrows(),
            y.len()
        )));
    }
    let (n, d) = x.dim();
    let base = learners::accuracy(&model.predict(x)?, y);
    let importances: Vec<f64> = (0..d)
        .into_par_iter()
        .map(|j| {
            let drops = (0..repeats)
                .map(|r| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(((j as u64) << 32) | r as u64);
                    let mut perm: Vec<usize> = (0..n).collect();
                    perm.shuffle(&mut rng);
                    let mut xp = x.clone();
                    for (i, &src) in perm.iter().enumerate() {
                        xp[[i, j]] = x[[src, j]];
                    }
                    Ok(base - learners::accuracy(&model.predict(&xp)?, y))
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(numeric::mean(drops).unwrap_or(0.0))
        })
        .collect::<Result<_>>()?;
    let ranked = numeric::top_k_indices(&importances, m.min(d));
    Ok(PermutationImportance {
        importances,
        ranked,
    })
}

/// Positions `i` where B fixed A's mistake, and where B broke A's correct
/// prediction.
pub fn cohorts(
    pred_a: &[usize],
    pred_b: &[usize],
    y: &[usize],
) -> Result<(Vec<usize>, Vec<usize>)> {
    if pred_a.len() != y.len() || pred_b.len() != y.len() {
        return Err(Error::Shape("cohort inputs have different lengths".into()));
    }
    let mut fixes = Vec::new();
    let mut regressions = Vec::new();
    for i in 0..y.len() {
        let (a_ok, b_ok) = (pred_a[i] == y[i], pred_b[i] == y[i]);
        if b_ok && !a_ok {
            fixes.push(i);
        } else if a_ok && !b_ok {
            regressions.push(i);
        }
    }
    Ok((fixes, regressions))
}

/// Stratified subset of at most `cap` positions, returned in ascending
/// order. Quotas are proportional to class size with largest-remainder
/// rounding (ties to the lower class).
pub fn stratified_cap(labels: &[usize], cap: usize, seed: u64) -> Vec<usize> {
    let n = labels.len();
    if n <= cap {
        return (0..n).collect();
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &c) in labels.iter().enumerate() {
        members[c].push(i);
    }
    let exact: Vec<f64> = members
        .iter()
        .map(|m| cap as f64 * m.len() as f64 / n as f64)
        .collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..classes).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut left = cap - quota.iter().sum::<usize>();
    for c in order {
        if left == 0 {
            break;
        }
        if quota[c] < members[c].len() {
            quota[c] += 1;
            left -= 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(cap);
    for (c, mut m) in members.into_iter().enumerate() {
        m.shuffle(&mut rng);
        out.extend_from_slice(&m[..quota[c]]);
    }
    out.sort_unstable();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub n_samples: usize,
    pub n_features: usize,
    pub class_count: usize,
    pub feature_names: Vec<String>,
    pub n_train: usize,
    pub n_test: usize,
    pub n_audited: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub family: String,
    pub tag: String,
    pub capabilities: Capabilities,
    pub score_path: ScorePath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerSampleRow {
    /// Row index in the dataset.
    pub row: usize,
    pub label: usize,
    pub anchor: usize,
    pub pred_a: usize,
    pub pred_b: usize,
    pub delta_l1: f64,
    pub delta_f: f64,
    pub jsd: f64,
    pub rank_overlap: f64,
    pub group_ratio: f64,
    /// One entry per configured sigma.
    pub stability: Vec<f64>,
}

/// Everything one audit produced. Serializes to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub config: AuditConfig,
    pub family: String,
    pub dataset: DatasetSummary,
    pub model_a: ModelSummary,
    pub model_b: ModelSummary,
    /// Dataset rows of the test split, with labels and both versions'
    /// predictions.
    pub test_rows: Vec<usize>,
    pub test_labels: Vec<usize>,
    pub pred_a: Vec<usize>,
    pub pred_b: Vec<usize>,
    pub accuracy_a: f64,
    pub accuracy_b: f64,
    /// Dataset rows the suite saw (the capped subset).
    pub audited_rows: Vec<usize>,
    pub fixes: Vec<usize>,
    pub regressions: Vec<usize>,
    pub importance_b: PermutationImportance,
    pub metrics: DeltaMetrics,
    pub mag_boundaries: MagBoundaries,
    pub boundary_source: BoundarySource,
    pub verdict: Verdict,
    pub verdict_notes: Vec<String>,
    pub warnings: Vec<String>,
    pub per_sample: Vec<PerSampleRow>,
}

impl DeltaReport {
    /// Verdict implied by the stored metrics and boundaries.
    pub fn recompute_verdict(&self) -> Verdict {
        classify_verdict(&self.metrics, &self.config.thresholds, &self.mag_boundaries).0
    }

    pub fn reclassify(&mut self, bounds: MagBoundaries, source: BoundarySource) {
        let (v, notes) = classify_verdict(&self.metrics, &self.config.thresholds, &bounds);
        self.mag_boundaries = bounds;
        self.boundary_source = source;
        self.verdict = v;
        self.verdict_notes = notes;
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("report serialization: {e}")))
    }
}

fn load_dataset(source: &DatasetSource) -> Result<Dataset> {
    match source {
        DatasetSource::Embedded { name } => data::embedded(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown embedded dataset `{name}` (available: {})",
                data::EMBEDDED_NAMES.join(", ")
            ))
        }),
        DatasetSource::Csv { path, label_column } => data::load_csv(path, label_column),
    }
}

fn attach(
    source: &ModelSource,
    x: &Array2<f64>,
    y: &[usize],
    classes: usize,
) -> Result<(ScoreModel, Vec<String>)> {
    match source {
        ModelSource::Builtin(spec) => {
            let trained = learners::fit(spec, x, y, classes)?;
            let warnings = trained.warnings.clone();
            Ok((ScoreModel::from_trained(trained), warnings))
        }
        ModelSource::Bridge(b) => {
            let provider = BridgeProvider::spawn(&b.command, b.timeout())?;
            let got = provider.bridge_capabilities().class_count;
            if got != classes {
                return Err(Error::Protocol(format!(
                    "endpoint `{}` serves {got} classes, dataset has {classes}",
                    provider.bridge_capabilities().model_tag
                )));
            }
            Ok((ScoreModel::new(Arc::new(provider))?, Vec::new()))
        }
    }
}

fn summary(source: &ModelSource, model: &ScoreModel) -> ModelSummary {
    ModelSummary {
        family: source.family().to_string(),
        tag: model.tag(),
        capabilities: model.capabilities(),
        score_path: model.preferred_path(),
    }
}

struct Explained {
    attr_a: AttributionMatrix,
    attr_b: AttributionMatrix,
    delta: DeltaMatrix,
}

fn explain_pair(
    model_a: &ScoreModel,
    model_b: &ScoreModel,
    x: &Array2<f64>,
    anchors: &[usize],
    baseline: &explainer::Baseline,
    hooks: &AuditHooks,
) -> Result<Explained> {
    let (attr_a, attr_b) = rayon::join(
        || occlusion_attributions(model_a, x, anchors, baseline),
        || occlusion_attributions(model_b, x, anchors, baseline),
    );
    let attr_a = attr_a?;
    let mut attr_b = attr_b?;
    if let Some(offset) = hooks.perturb_b {
        if let Some(v) = attr_b.values.first_mut() {
            *v += offset;
        }
    }
    let delta = explainer::delta_attributions(&attr_a, &attr_b)?;
    Ok(Explained {
        attr_a,
        attr_b,
        delta,
    })
}

/// Trains one role's built-in learner exactly as [`run_audit`] would: same
/// split, same scaler, same training rows. Bridge servers use this to serve
/// a model that a built-in audit can be compared against.
pub fn train_role(config: &AuditConfig, role: AnchorChoice) -> Result<learners::TrainedModel> {
    config.validate().stage(Stage::Config)?;
    let source = match role {
        AnchorChoice::A => &config.model_a,
        AnchorChoice::B => &config.model_b,
    };
    let ModelSource::Builtin(spec) = source else {
        return Err(
            Error::Config(format!("model_{} is not a built-in learner", role.letter()))
                .at_stage(Stage::Config),
        );
    };
    let ds = load_dataset(&config.dataset).stage(Stage::Data)?;
    let split =
        data::stratified_split(&ds, config.test_fraction, config.seed).stage(Stage::Split)?;
    let scaler = data::fit_standardizer(&ds, &split).stage(Stage::Standardize)?;
    let (x_raw, y) = ds.select(&split.train);
    learners::fit(spec, &scaler.transform(&x_raw), &y, ds.class_count()).stage(Stage::Train)
}

pub fn run_audit(config: &AuditConfig) -> Result<DeltaReport> {
    run_audit_with(config, &AuditHooks::default())
}

pub fn run_audit_with(config: &AuditConfig, hooks: &AuditHooks) -> Result<DeltaReport> {
    config.validate().stage(Stage::Config)?;
    let ds = load_dataset(&config.dataset).stage(Stage::Data)?;
    let d = ds.n_features();
    if config.group_k > d {
        return Err(
            Error::Config(format!("group_k = {} exceeds {d} features", config.group_k))
                .at_stage(Stage::Config),
        );
    }
    let mut warnings = Vec::new();

    let split =
        data::stratified_split(&ds, config.test_fraction, config.seed).stage(Stage::Split)?;
    let scaler = data::fit_standardizer(&ds, &split).stage(Stage::Standardize)?;
    warnings.extend(scaler.warnings(&ds.feature_names));
    let (x_train_raw, y_train) = ds.select(&split.train);
    let (x_test_raw, y_test) = ds.select(&split.test);
    let x_train = scaler.transform(&x_train_raw);
    let x_test = scaler.transform(&x_test_raw);

    let classes = ds.class_count();
    let (a, b) = rayon::join(
        || attach(&config.model_a, &x_train, &y_train, classes),
        || attach(&config.model_b, &x_train, &y_train, classes),
    );
    let (model_a, warn_a) =
        a.map_err(|e| Error::Config(format!("model_a: {e}")).at_stage(Stage::Train))?;
    let (model_b, warn_b) =
        b.map_err(|e| Error::Config(format!("model_b: {e}")).at_stage(Stage::Train))?;
    warnings.extend(warn_a.into_iter().map(|w| format!("model_a: {w}")));
    warnings.extend(warn_b.into_iter().map(|w| format!("model_b: {w}")));

    let pred_a = model_a.predict(&x_test).stage(Stage::Anchor)?;
    let pred_b = model_b.predict(&x_test).stage(Stage::Anchor)?;
    let accuracy_a = learners::accuracy(&pred_a, &y_test);
    let accuracy_b = learners::accuracy(&pred_b, &y_test);

    let keep = stratified_cap(&y_test, config.sample_cap, config.seed);
    if keep.len() < y_test.len() {
        warnings.push(format!(
            "suite metrics use {} of {} test rows; accuracies use all test rows",
            keep.len(),
            y_test.len()
        ));
    }
    let x = x_test.select(Axis(0), &keep);
    let y: Vec<usize> = keep.iter().map(|&i| y_test[i]).collect();
    let cap_a: Vec<usize> = keep.iter().map(|&i| pred_a[i]).collect();
    let cap_b: Vec<usize> = keep.iter().map(|&i| pred_b[i]).collect();
    let anchor_model = match config.anchor {
        AnchorChoice::A => &model_a,
        AnchorChoice::B => &model_b,
    };
    let anchors = anchor_classes(anchor_model, &x).stage(Stage::Anchor)?;

    let baseline = make_baseline(&x_train, config.baseline).stage(Stage::Baseline)?;
    let base_mean = make_baseline(&x_train, BaselineKind::Mean).stage(Stage::Baseline)?;
    let base_median = make_baseline(&x_train, BaselineKind::Median).stage(Stage::Baseline)?;

    let main = explain_pair(&model_a, &model_b, &x, &anchors, &baseline, hooks)
        .stage(Stage::Attribution)?;
    let by_kind = |kind: BaselineKind, base: &explainer::Baseline| -> Result<DeltaMatrix> {
        if kind == config.baseline {
            Ok(main.delta.clone())
        } else {
            Ok(explain_pair(&model_a, &model_b, &x, &anchors, base, hooks)?.delta)
        }
    };
    let delta_mean = by_kind(BaselineKind::Mean, &base_mean).stage(Stage::Attribution)?;
    let delta_median = by_kind(BaselineKind::Median, &base_median).stage(Stage::Attribution)?;

    let delta = &main.delta;
    let (phi_a, phi_b) = (&main.attr_a.values, &main.attr_b.values);
    let dfs = explainer::delta_scores(&main.attr_a, &main.attr_b).stage(Stage::Suite)?;
    let overlap = suite::rank_overlap(phi_a, phi_b, config.top_k).stage(Stage::Suite)?;
    let jsd_rows = suite::jsd_per_sample(phi_a, phi_b).stage(Stage::Suite)?;
    let explain = |xp: &Array2<f64>| -> Result<DeltaMatrix> {
        let (ea, eb) = rayon::join(
            || occlusion_attributions(&model_a, xp, &anchors, &baseline),
            || occlusion_attributions(&model_b, xp, &anchors, &baseline),
        );
        explainer::delta_attributions(&ea?, &eb?)
    };
    let stability = suite::delta_stability(
        explain,
        &x,
        delta,
        &config.sigmas,
        config.draws_per_sample,
        config.seed,
    )
    .stage(Stage::Suite)?;
    let grouped = grouped_occlusion_ratio(
        &model_a,
        &model_b,
        &x,
        &main.attr_a,
        &main.attr_b,
        config.group_k,
        config.group_mode,
    )
    .stage(Stage::Suite)?;

    let importance_b = permutation_importance(
        &model_b,
        &x_test,
        &y_test,
        config.perm_m,
        config.perm_repeats,
        config.seed,
    )
    .stage(Stage::Importance)?;
    let (fixes, regressions) = cohorts(&cap_a, &cap_b, &y).stage(Stage::Suite)?;
    let (codf_fixes, codf_regressions) =
        suite::codf(delta, &importance_b.ranked, &fixes, &regressions);

    let metrics = DeltaMetrics {
        mag_l1: suite::delta_magnitude(delta),
        topk10: suite::topk_concentration(delta, config.top_k),
        entropy: suite::delta_entropy(delta),
        rank_overlap10: overlap.mean,
        rank_overlap10_median: overlap.median,
        jsd: numeric::mean(jsd_rows.iter().copied()).unwrap_or(0.0),
        dce: suite::dce(delta, &dfs).stage(Stage::Suite)?,
        bac: suite::bac(delta, &dfs).stage(Stage::Suite)?,
        codf_fixes,
        codf_regressions,
        stability: stability
            .iter()
            .map(|s| StabilityEntry {
                sigma: s.sigma,
                value: s.value,
            })
            .collect(),
        baseline_sensitivity: suite::baseline_sensitivity(&delta_mean, &delta_median)
            .stage(Stage::Suite)?,
        group_ratio: grouped.ratio,
    };

    let l1 = delta.row_l1();
    let per_sample = (0..keep.len())
        .map(|i| PerSampleRow {
            row: split.test[keep[i]],
            label: y[i],
            anchor: anchors[i],
            pred_a: cap_a[i],
            pred_b: cap_b[i],
            delta_l1: l1[i],
            delta_f: dfs[i],
            jsd: jsd_rows[i],
            rank_overlap: overlap.per_sample[i],
            group_ratio: grouped.per_sample[i],
            stability: stability.iter().map(|s| s.per_sample[i]).collect(),
        })
        .collect();

    let to_rows =
        |pos: &[usize]| -> Vec<usize> { pos.iter().map(|&i| split.test[keep[i]]).collect() };
    let mag_boundaries = config.thresholds.mag;
    let (verdict, verdict_notes) = classify_verdict(&metrics, &config.thresholds, &mag_boundaries);
    Ok(DeltaReport {
        family: config.family(),
        dataset: DatasetSummary {
            name: ds.name.clone(),
            n_samples: ds.n_samples(),
            n_features: d,
            class_count: classes,
            feature_names: ds.feature_names.clone(),
            n_train: split.train.len(),
            n_test: split.test.len(),
            n_audited: keep.len(),
        },
        model_a: summary(&config.model_a, &model_a),
        model_b: summary(&config.model_b, &model_b),
        test_rows: split.test.clone(),
        test_labels: y_test,
        pred_a,
        pred_b,
        accuracy_a,
        accuracy_b,
        audited_rows: to_rows(&(0..keep.len()).collect::<Vec<_>>()),
        fixes: to_rows(&fixes),
        regressions: to_rows(&regressions),
        importance_b,
        metrics,
        mag_boundaries,
        boundary_source: BoundarySource::Config,
        verdict,
        verdict_notes,
        warnings,
        per_sample,
        config: config.clone(),
    })
}

/// A batch audit that failed, with its position in the input list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchFailure {
    pub index: usize,
    pub name: String,
    pub stage: Option<String>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResult {
    pub reports: Vec<DeltaReport>,
    pub failures: Vec<BatchFailure>,
    /// Quartiles over the successful audits' magnitudes.
    pub boundaries: Option<MagBoundaries>,
    pub aggregate: Vec<FamilyAggregate>,
}

/// Runs every config. Failures are recorded and do not stop the batch;
/// successful reports are reclassified against the batch quartiles.
pub fn run_batch(configs: &[AuditConfig]) -> Result<BatchResult> {
    if configs.is_empty() {
        return Err(Error::Config("batch needs at least one config".into()));
    }
    let outcomes: Vec<Result<DeltaReport>> = configs.par_iter().map(run_audit).collect();
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (index, (cfg, outcome)) in configs.iter().zip(outcomes).enumerate() {
        match outcome {
            Ok(r) => reports.push(r),
            Err(e) => failures.push(BatchFailure {
                index,
                name: cfg.name.clone(),
                stage: e.stage().map(|s| s.to_string()),
                error: e.to_string(),
            }),
        }
    }
    let mags: Vec<f64> = reports.iter().map(|r| r.metrics.mag_l1).collect();
    let boundaries = batch_boundaries(&mags);
    if let Some(b) = boundaries {
        for r in &mut reports {
            r.reclassify(b, BoundarySource::Batch);
        }
    }
    let aggregate = aggregate_by_family(&reports);
    Ok(BatchResult {
        reports,
        failures,
        boundaries,
        aggregate,
    })
}
