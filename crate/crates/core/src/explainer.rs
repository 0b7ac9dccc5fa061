//! Occlusion attributions in standardized space.
//!
//! For feature `j`, `phi_j(x) = f(x) - f(x with x_j <- b_j)`, where `f` is the
//! anchored score and `b` a training-set baseline. Attributions for A and B
//! must share one baseline and one anchor vector; [`delta_attributions`]
//! refuses to difference matrices that do not.

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ScoreModel;
use crate::numeric;

/// Guard added to the grouped-occlusion denominator.
pub const GROUP_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Mean,
    Median,
    /// Elementwise average of the mean and median vectors.
    Averaged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub kind: BaselineKind,
    pub values: Array1<f64>,
}

/// Column means, lower medians, or their average over standardized training rows.
pub fn make_baseline(x_train_std: &Array2<f64>, kind: BaselineKind) -> Result<Baseline> {
    if x_train_std.nrows() == 0 {
        return Err(Error::InvalidData(
            "baseline needs at least one training row".into(),
        ));
    }
    let col = |f: &dyn Fn(&[f64]) -> f64| -> Array1<f64> {
        x_train_std
            .columns()
            .into_iter()
            .map(|c| f(&c.to_vec()))
            .collect()
    };
    let mean = || col(&|v| numeric::mean(v.iter().copied()).expect("non-empty"));
    let median = || col(&|v| numeric::lower_median(v).expect("non-empty"));
    let values = match kind {
        BaselineKind::Mean => mean(),
        BaselineKind::Median => median(),
        BaselineKind::Averaged => (mean() + median()) / 2.0,
    };
    Ok(Baseline { kind, values })
}

/// Per-sample, per-feature attributions of one model, with the unclamped
/// scores `f(x)` they were computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMatrix {
    pub values: Array2<f64>,
    pub scores: Vec<f64>,
    pub baseline: Baseline,
    pub anchors: Vec<usize>,
}

/// `phi_B - phi_A` with the shared provenance of its parents.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaMatrix {
    pub values: Array2<f64>,
    pub baseline: Baseline,
    pub anchors: Vec<usize>,
}

impl DeltaMatrix {
    /// Bare matrix without model provenance, for metric computations on
    /// externally produced deltas.
    pub fn from_values(values: Array2<f64>) -> Self {
        let (n, d) = values.dim();
        Self {
            values,
            baseline: Baseline {
                kind: BaselineKind::Mean,
                values: Array1::zeros(d),
            },
            anchors: vec![0; n],
        }
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    /// Per-sample `||delta phi||_1`.
    pub fn row_l1(&self) -> Vec<f64> {
        self.values
            .rows()
            .into_iter()
            .map(|r| numeric::sum(r.iter().map(|v| v.abs())))
            .collect()
    }

    /// Per-sample `sum_j delta phi_j`.
    pub fn row_sums(&self) -> Vec<f64> {
        self.values
            .rows()
            .into_iter()
            .map(|r| numeric::sum(r.iter().copied()))
            .collect()
    }
}

fn clamp_column(x: &Array2<f64>, j: usize, value: f64) -> Array2<f64> {
    let mut out = x.clone();
    out.column_mut(j).fill(value);
    out
}

/// Occlusion attributions: one unclamped batch plus one batch per clamped
/// feature column, i.e. `n * (d + 1)` scored rows.
pub fn occlusion_attributions(
    model: &ScoreModel,
    x: &Array2<f64>,
    anchors: &[usize],
    baseline: &Baseline,
) -> Result<AttributionMatrix> {
    let (n, d) = x.dim();
    if baseline.values.len() != d {
        return Err(Error::Shape(format!(
            "baseline has {} entries for {d} features",
            baseline.values.len()
        )));
    }
    let scores = model.score_rows(x, anchors).map_err(|e| Error::Scoring {
        context: "unclamped input".into(),
        source: Box::new(e),
    })?;
    let columns: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|j| {
            let clamped = clamp_column(x, j, baseline.values[j]);
            model
                .score_rows(&clamped, anchors)
                .map_err(|e| Error::Scoring {
                    context: format!("feature {j} clamped"),
                    source: Box::new(e),
                })
        })
        .collect::<Result<_>>()?;
    let values = Array2::from_shape_fn((n, d), |(i, j)| scores[i] - columns[j][i]);
    Ok(AttributionMatrix {
        values,
        scores,
        baseline: baseline.clone(),
        anchors: anchors.to_vec(),
    })
}

fn check_provenance(
    a_values: &Array2<f64>,
    a_baseline: &Baseline,
    a_anchors: &[usize],
    b_values: &Array2<f64>,
    b_baseline: &Baseline,
    b_anchors: &[usize],
) -> Result<()> {
    if a_values.dim() != b_values.dim() {
        return Err(Error::Shape(format!(
            "attribution shapes {:?} and {:?} differ",
            a_values.dim(),
            b_values.dim()
        )));
    }
    if a_baseline != b_baseline {
        return Err(Error::Provenance(format!(
            "attributions use different baselines ({:?} vs {:?})",
            a_baseline.kind, b_baseline.kind
        )));
    }
    if a_anchors != b_anchors {
        return Err(Error::Provenance(
            "attributions use different anchors".into(),
        ));
    }
    Ok(())
}

/// `phi_B - phi_A`, after checking both share baseline and anchors.
pub fn delta_attributions(
    attr_a: &AttributionMatrix,
    attr_b: &AttributionMatrix,
) -> Result<DeltaMatrix> {
    check_provenance(
        &attr_a.values,
        &attr_a.baseline,
        &attr_a.anchors,
        &attr_b.values,
        &attr_b.baseline,
        &attr_b.anchors,
    )?;
    Ok(DeltaMatrix {
        values: &attr_b.values - &attr_a.values,
        baseline: attr_b.baseline.clone(),
        anchors: attr_b.anchors.clone(),
    })
}

/// `f_B(x) - f_A(x)` from the unclamped scores stored with the attributions.
pub fn delta_scores(attr_a: &AttributionMatrix, attr_b: &AttributionMatrix) -> Result<Vec<f64>> {
    if attr_a.anchors != attr_b.anchors {
        return Err(Error::Provenance(
            "attributions use different anchors".into(),
        ));
    }
    Ok(attr_b
        .scores
        .iter()
        .zip(&attr_a.scores)
        .map(|(b, a)| b - a)
        .collect())
}

/// What the grouped-occlusion denominator measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupMode {
    /// `|g_B - g_A|` with `g = f(x) - f(x with the group clamped)`.
    #[default]
    Scalar,
    /// `||delta phi||_1` recomputed at the group-clamped input.
    Revector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedOcclusion {
    pub k: usize,
    pub mode: GroupMode,
    pub ratio: f64,
    pub per_sample: Vec<f64>,
    /// Clamped feature group per sample (top-k by `|phi_B|`).
    pub groups: Vec<Vec<usize>>,
}

/// Grouped-occlusion ratio: mean over samples of
/// `||delta phi(x)||_1 / (D(x) + GROUP_EPS)`, with `D` per [`GroupMode`].
pub fn grouped_occlusion_ratio(
    model_a: &ScoreModel,
    model_b: &ScoreModel,
    x: &Array2<f64>,
    attr_a: &AttributionMatrix,
    attr_b: &AttributionMatrix,
    k: usize,
    mode: GroupMode,
) -> Result<GroupedOcclusion> {
    let (n, d) = x.dim();
    if k == 0 || k > d {
        return Err(Error::Config(format!(
            "group size k = {k} must lie in [1, {d}]"
        )));
    }
    let delta = delta_attributions(attr_a, attr_b)?;
    let baseline = &attr_b.baseline;
    let anchors = &attr_b.anchors;

    let groups: Vec<Vec<usize>> = attr_b
        .values
        .rows()
        .into_iter()
        .map(|r| {
            let mag: Vec<f64> = r.iter().map(|v| v.abs()).collect();
            numeric::top_k_indices(&mag, k)
        })
        .collect();
    let mut clamped = x.clone();
    for (i, g) in groups.iter().enumerate() {
        for &j in g {
            clamped[[i, j]] = baseline.values[j];
        }
    }

    let denominators: Vec<f64> = match mode {
        GroupMode::Scalar => {
            let fa = model_a.score_rows(&clamped, anchors)?;
            let fb = model_b.score_rows(&clamped, anchors)?;
            (0..n)
                .map(|i| {
                    let g_a = attr_a.scores[i] - fa[i];
                    let g_b = attr_b.scores[i] - fb[i];
                    (g_b - g_a).abs()
                })
                .collect()
        }
        GroupMode::Revector => {
            let ga = occlusion_attributions(model_a, &clamped, anchors, baseline)?;
            let gb = occlusion_attributions(model_b, &clamped, anchors, baseline)?;
            delta_attributions(&ga, &gb)?.row_l1()
        }
    };

    let numerators = delta.row_l1();
    let per_sample: Vec<f64> = numerators
        .iter()
        .zip(&denominators)
        .map(|(num, den)| {
            if *num == 0.0 {
                0.0
            } else {
                num / (den + GROUP_EPS)
            }
        })
        .collect();
    let ratio = numeric::mean(per_sample.iter().copied()).unwrap_or(0.0);
    Ok(GroupedOcclusion {
        k,
        mode,
        ratio,
        per_sample,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Capabilities, LinearScorer, ScoreProvider};
    use ndarray::array;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::{Arc, Mutex};

    fn linear(w: &[f64]) -> ScoreModel {
        ScoreModel::new(Arc::new(LinearScorer::binary(w, 0.0))).unwrap()
    }

    fn zero_baseline(d: usize) -> Baseline {
        Baseline {
            kind: BaselineKind::Mean,
            values: Array1::zeros(d),
        }
    }

    #[test]
    fn baselines_mean_median_averaged() {
        let x = array![[0.0], [0.0], [10.0]];
        assert_eq!(
            make_baseline(&x, BaselineKind::Median).unwrap().values[0],
            0.0
        );
        let mean = make_baseline(&x, BaselineKind::Mean).unwrap().values[0];
        assert!((mean - 10.0 / 3.0).abs() < 1e-15);
        let avg = make_baseline(&x, BaselineKind::Averaged).unwrap().values[0];
        assert!((avg - 5.0 / 3.0).abs() < 1e-15);
        assert!(make_baseline(&Array2::zeros((0, 2)), BaselineKind::Mean).is_err());
    }

    #[test]
    fn linear_occlusion_matches_closed_form() {
        let m = linear(&[2.0, -1.0]);
        let x = array![[1.0, 1.0]];
        // anchor class 1 gives f = +dec(x)
        let a = occlusion_attributions(&m, &x, &[1], &zero_baseline(2)).unwrap();
        assert_eq!(a.values.row(0).to_vec(), vec![2.0, -1.0]);
    }

    #[test]
    fn clamping_to_baseline_is_identity() {
        let m = linear(&[0.7, -0.3, 1.1]);
        let b = Baseline {
            kind: BaselineKind::Mean,
            values: array![0.2, -0.4, 1.0],
        };
        let x = array![[0.2, -0.4, 1.0]];
        let a = occlusion_attributions(&m, &x, &[1], &b).unwrap();
        assert!(a.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ignored_feature_gets_zero() {
        let m = linear(&[1.5, 0.0, -2.0]);
        let x = array![[0.3, 5.0, -1.0], [1.0, -3.0, 2.0]];
        let a = occlusion_attributions(&m, &x, &[1, 0], &zero_baseline(3)).unwrap();
        assert!(a.values.column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn delta_nonzero_only_in_changed_column() {
        let x = array![[0.3, 5.0, -1.0], [1.0, -3.0, 2.0]];
        let b = zero_baseline(3);
        let anchors = [1, 1];
        let pa = occlusion_attributions(&linear(&[1.0, 2.0, 3.0]), &x, &anchors, &b).unwrap();
        let pb = occlusion_attributions(&linear(&[1.0, 2.5, 3.0]), &x, &anchors, &b).unwrap();
        let delta = delta_attributions(&pa, &pb).unwrap();
        for ((_, j), v) in delta.values.indexed_iter() {
            if j == 1 {
                assert!(v.abs() > 0.0);
            } else {
                assert_eq!(*v, 0.0);
            }
        }
        let same = delta_attributions(&pa, &pa).unwrap();
        assert!(same.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_provenance_is_an_error() {
        let x = array![[0.3, 5.0]];
        let m = linear(&[1.0, 2.0]);
        let a = occlusion_attributions(&m, &x, &[1], &zero_baseline(2)).unwrap();
        let median = Baseline {
            kind: BaselineKind::Median,
            values: Array1::zeros(2),
        };
        let b = occlusion_attributions(&m, &x, &[1], &median).unwrap();
        assert!(matches!(
            delta_attributions(&a, &b),
            Err(Error::Provenance(_))
        ));
        let c = occlusion_attributions(&m, &x, &[0], &zero_baseline(2)).unwrap();
        assert!(matches!(
            delta_attributions(&a, &c),
            Err(Error::Provenance(_))
        ));
    }

    /// Records every scored row so tests can check evaluation counts and
    /// which columns were modified.
    #[derive(Debug)]
    struct Recording {
        inner: LinearScorer,
        rows: AtomicUsize,
        seen: Mutex<Vec<Array2<f64>>>,
    }

    impl ScoreProvider for Recording {
        fn capabilities(&self) -> Capabilities {
            self.inner.capabilities()
        }
        fn class_count(&self) -> usize {
            2
        }
        fn tag(&self) -> String {
            "recording".into()
        }
        fn margins(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
            self.rows.fetch_add(x.nrows(), Ordering::SeqCst);
            self.seen.lock().unwrap().push(x.clone());
            self.inner.margins(x)
        }
        fn probabilities(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
            self.inner.probabilities(x)
        }
    }

    #[test]
    fn evaluation_count_and_locality() {
        let rec = Arc::new(Recording {
            inner: LinearScorer::binary(&[1.0, -2.0, 0.5, 0.0], 0.1),
            rows: AtomicUsize::new(0),
            seen: Mutex::new(Vec::new()),
        });
        let m = ScoreModel::new(rec.clone()).unwrap();
        let x = Array2::from_shape_fn((5, 4), |(i, j)| (i as f64) - (j as f64) * 0.5 + 0.25);
        let b = Baseline {
            kind: BaselineKind::Mean,
            values: array![9.0, 9.0, 9.0, 9.0],
        };
        occlusion_attributions(&m, &x, &[0, 1, 0, 1, 1], &b).unwrap();
        assert_eq!(rec.rows.load(Ordering::SeqCst), 5 * (4 + 1));
        let seen = rec.seen.lock().unwrap();
        assert_eq!(seen.len(), 5);
        for batch in seen.iter() {
            let changed: Vec<usize> = (0..4).filter(|&j| batch.column(j) != x.column(j)).collect();
            assert!(
                changed.len() <= 1,
                "more than one column modified: {changed:?}"
            );
            for &j in &changed {
                assert!(batch.column(j).iter().all(|&v| v == 9.0));
            }
        }
    }

    #[test]
    fn grouped_ratio_linear_closed_form() {
        let wa = [1.0, -2.0, 0.5, 3.0];
        let wb = [1.5, -1.0, 0.5, 2.0];
        let (ma, mb) = (linear(&wa), linear(&wb));
        let x = array![
            [0.3, -1.2, 2.0, 0.7],
            [1.1, 0.4, -0.6, -0.9],
            [-0.5, 0.8, 0.1, 1.4]
        ];
        let anchors = [1, 0, 1];
        let b = zero_baseline(4);
        let pa = occlusion_attributions(&ma, &x, &anchors, &b).unwrap();
        let pb = occlusion_attributions(&mb, &x, &anchors, &b).unwrap();
        let g = grouped_occlusion_ratio(&ma, &mb, &x, &pa, &pb, 2, GroupMode::Scalar).unwrap();
        let delta = delta_attributions(&pa, &pb).unwrap();
        let expect: Vec<f64> = (0..3)
            .map(|i| {
                let row = delta.values.row(i);
                let l1: f64 = row.iter().map(|v| v.abs()).sum();
                let grp: f64 = g.groups[i].iter().map(|&j| row[j]).sum();
                l1 / grp.abs()
            })
            .collect();
        for (got, want) in g.per_sample.iter().zip(&expect) {
            assert!((got - want).abs() < 1e-9 * want.max(1.0));
        }
        // group = top-2 of |phi_B|
        for (i, grp) in g.groups.iter().enumerate() {
            let mag: Vec<f64> = pb.values.row(i).iter().map(|v| v.abs()).collect();
            let mut sorted = mag.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            assert!(grp.iter().all(|&j| mag[j] >= sorted[1]));
        }
    }

    #[test]
    fn grouped_ratio_degenerate_and_single_feature() {
        let m = linear(&[1.0, -1.0, 0.0]);
        let x = array![[0.3, -1.2, 2.0], [1.1, 0.4, -0.6]];
        let b = zero_baseline(3);
        let p = occlusion_attributions(&m, &x, &[1, 1], &b).unwrap();
        let g = grouped_occlusion_ratio(&m, &m, &x, &p, &p, 2, GroupMode::Scalar).unwrap();
        assert_eq!(g.ratio, 0.0);

        let (ma, mb) = (linear(&[0.0, 2.0, 0.0]), linear(&[0.0, 3.0, 0.0]));
        let pa = occlusion_attributions(&ma, &x, &[1, 1], &b).unwrap();
        let pb = occlusion_attributions(&mb, &x, &[1, 1], &b).unwrap();
        let g = grouped_occlusion_ratio(&ma, &mb, &x, &pa, &pb, 1, GroupMode::Scalar).unwrap();
        assert!((g.ratio - 1.0).abs() < 1e-9);
        assert!(grouped_occlusion_ratio(&ma, &mb, &x, &pa, &pb, 4, GroupMode::Scalar).is_err());
        assert!(grouped_occlusion_ratio(&ma, &mb, &x, &pa, &pb, 0, GroupMode::Scalar).is_err());
    }

    #[test]
    fn revector_mode_runs_and_is_finite() {
        let (ma, mb) = (linear(&[1.0, 2.0, 0.5]), linear(&[0.5, 2.0, 1.5]));
        let x = array![[0.3, -1.2, 2.0], [1.1, 0.4, -0.6]];
        let b = zero_baseline(3);
        let pa = occlusion_attributions(&ma, &x, &[1, 1], &b).unwrap();
        let pb = occlusion_attributions(&mb, &x, &[1, 1], &b).unwrap();
        let g = grouped_occlusion_ratio(&ma, &mb, &x, &pa, &pb, 2, GroupMode::Revector).unwrap();
        assert!(g.ratio.is_finite() && g.ratio > 0.0);
    }
}
