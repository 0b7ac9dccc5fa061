//! Built-in desk-scale classifiers.
//!
//! Four families are enough to build the three update regimes an audit
//! distinguishes: inductive-bias changes (forest depth, boosting depth),
//! regularization changes (logistic L2 strength) and cosmetic changes that
//! cannot alter predictions (kNN scan order).

mod forest;
mod gbstumps;
mod knn;
mod logreg;

pub use forest::{FeatureRule, ForestModel, ForestParams, Tree};
pub use gbstumps::{GbModel, GbParams};
pub use knn::{KnnModel, KnnParams, ScanOrder, Weighting};
pub use logreg::{LogregModel, LogregParams};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which score a model exposes as its preferred output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorePath {
    Margin,
    Probability,
}

/// Family plus hyperparameters. Serialized with a `family` tag so a config
/// section reads `family = "forest"` followed by the knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LearnerSpec {
    Logreg(LogregParams),
    Knn(KnnParams),
    Forest(ForestParams),
    Gbstumps(GbParams),
}

impl LearnerSpec {
    pub fn family(&self) -> &'static str {
        match self {
            LearnerSpec::Logreg(_) => "logreg",
            LearnerSpec::Knn(_) => "knn",
            LearnerSpec::Forest(_) => "forest",
            LearnerSpec::Gbstumps(_) => "gbstumps",
        }
    }

    /// Checks positivity of numeric knobs; `train_size` bounds kNN's `k`.
    pub fn validate(&self, train_size: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("{}: {msg}", self.family())));
        match self {
            LearnerSpec::Logreg(p) => {
                if !(p.l2_strength > 0.0) || p.max_iterations == 0 || !(p.tolerance > 0.0) {
                    return bad(format!("non-positive hyperparameter in {p:?}"));
                }
            }
            LearnerSpec::Knn(p) => {
                if p.k == 0 {
                    return bad("k must be positive".into());
                }
                if p.k > train_size {
                    return bad(format!("k = {} exceeds train size {train_size}", p.k));
                }
            }
            LearnerSpec::Forest(p) => {
                if p.n_trees == 0 {
                    return bad("n_trees must be positive".into());
                }
            }
            LearnerSpec::Gbstumps(p) => {
                if !(p.learning_rate > 0.0) {
                    return bad("learning_rate must be positive".into());
                }
                if !(1..=2).contains(&p.max_depth) {
                    return bad(format!("max_depth must be 1 or 2, got {}", p.max_depth));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Fitted {
    Logreg(LogregModel),
    Knn(KnnModel),
    Forest(ForestModel),
    Gbstumps(GbModel),
}

/// A fitted model. Immutable after [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub spec: LearnerSpec,
    pub classes: usize,
    pub n_features: usize,
    /// Non-fatal fitting diagnostics (e.g. iteration cap reached).
    pub warnings: Vec<String>,
    fitted: Fitted,
}

/// Fits `spec` on standardized training rows.
pub fn fit(
    spec: &LearnerSpec,
    x_train: &Array2<f64>,
    y_train: &[usize],
    classes: usize,
) -> Result<TrainedModel> {
    if x_train.nrows() != y_train.len() {
        return Err(Error::Shape(format!(
            "{} training rows but {} labels",
            x_train.nrows(),
            y_train.len()
        )));
    }
    if x_train.nrows() == 0 {
        return Err(Error::InvalidData("empty training set".into()));
    }
    if let Some(&bad) = y_train.iter().find(|&&c| c >= classes) {
        return Err(Error::InvalidData(format!(
            "label {bad} outside [0, {classes})"
        )));
    }
    spec.validate(x_train.nrows())?;
    let mut warnings = Vec::new();
    let fitted = match spec {
        LearnerSpec::Logreg(p) => {
            let (m, converged) = LogregModel::fit(p, x_train, y_train, classes);
            if !converged {
                warnings.push(format!(
                    "logreg: gradient norm above {:e} after {} iterations",
                    p.tolerance, p.max_iterations
                ));
            }
            Fitted::Logreg(m)
        }
        LearnerSpec::Knn(p) => Fitted::Knn(KnnModel::fit(p, x_train, y_train, classes)),
        LearnerSpec::Forest(p) => Fitted::Forest(ForestModel::fit(p, x_train, y_train, classes)),
        LearnerSpec::Gbstumps(p) => Fitted::Gbstumps(GbModel::fit(p, x_train, y_train, classes)),
    };
    Ok(TrainedModel {
        spec: spec.clone(),
        classes,
        n_features: x_train.ncols(),
        warnings,
        fitted,
    })
}

impl TrainedModel {
    /// Wraps explicit logistic weights (`classes × d`) and biases.
    pub fn from_logreg(model: LogregModel) -> Self {
        Self {
            spec: LearnerSpec::Logreg(LogregParams::default()),
            classes: model.weights.nrows(),
            n_features: model.weights.ncols(),
            warnings: Vec::new(),
            fitted: Fitted::Logreg(model),
        }
    }

    pub fn has_margin(&self) -> bool {
        matches!(self.fitted, Fitted::Logreg(_) | Fitted::Gbstumps(_))
    }

    pub fn has_probability(&self) -> bool {
        true
    }

    pub fn preferred_path(&self) -> ScorePath {
        if self.has_margin() {
            ScorePath::Margin
        } else {
            ScorePath::Probability
        }
    }

    fn check_dim(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.n_features {
            return Err(Error::Shape(format!(
                "model expects {} features, input has {}",
                self.n_features,
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Per-class margins, for families that have them.
    pub fn margins(&self, x: &Array2<f64>) -> Result<Option<Array2<f64>>> {
        self.check_dim(x)?;
        Ok(match &self.fitted {
            Fitted::Logreg(m) => Some(m.logits(x)),
            Fitted::Gbstumps(m) => Some(m.raw_scores(x)),
            _ => None,
        })
    }

    /// Per-class probabilities (rows sum to one).
    pub fn probabilities(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_dim(x)?;
        Ok(match &self.fitted {
            Fitted::Logreg(m) => m.probabilities(x),
            Fitted::Knn(m) => m.vote_fractions(x),
            Fitted::Forest(m) => m.probabilities(x),
            Fitted::Gbstumps(m) => m.probabilities(x),
        })
    }

    /// Scores on the preferred path: logits/raw boosting scores for
    /// margin families, class probabilities otherwise.
    pub fn decision_scores(&self, x: &Array2<f64>) -> Result<(ScorePath, Array2<f64>)> {
        match self.margins(x)? {
            Some(m) => Ok((ScorePath::Margin, m)),
            None => Ok((ScorePath::Probability, self.probabilities(x)?)),
        }
    }

    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<usize>> {
        let (_, scores) = self.decision_scores(x)?;
        Ok(argmax_rows(&scores))
    }

    pub fn forest(&self) -> Option<&ForestModel> {
        match &self.fitted {
            Fitted::Forest(m) => Some(m),
            _ => None,
        }
    }

    pub fn logreg(&self) -> Option<&LogregModel> {
        match &self.fitted {
            Fitted::Logreg(m) => Some(m),
            _ => None,
        }
    }
}

/// Row-wise argmax, ties broken by the lowest class index.
pub fn argmax_rows(scores: &Array2<f64>) -> Vec<usize> {
    scores
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}
