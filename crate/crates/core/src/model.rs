//! The scoring contract shared by built-in and bridge-hosted models.
//!
//! A [`ScoreModel`] predicts classes and evaluates the anchored scalar score
//! `f(x)`: the margin of a fixed reference class when the model has margins,
//! otherwise that class's log-odds. Anchors are chosen once per audit (by
//! default from model B's predictions) and reused for every evaluation of
//! both models.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{argmax_rows, ScorePath, TrainedModel};

/// Clamp used by the log-odds branch.
pub const LOG_ODDS_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub has_margin: bool,
    pub has_probability: bool,
}

/// Anything that can produce per-class margins and/or probabilities for a
/// batch of standardized rows.
pub trait ScoreProvider: Send + Sync + fmt::Debug {
    fn capabilities(&self) -> Capabilities;

    fn class_count(&self) -> usize;

    /// Short human-readable identifier used in reports.
    fn tag(&self) -> String;

    /// `n × C` per-class margins, or `n × 1` for a binary single-score
    /// decision function (positive favours class 1).
    fn margins(&self, x: &Array2<f64>) -> Result<Array2<f64>>;

    /// `n × C` class probabilities.
    fn probabilities(&self, x: &Array2<f64>) -> Result<Array2<f64>>;
}

impl ScoreProvider for TrainedModel {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            has_margin: self.has_margin(),
            has_probability: self.has_probability(),
        }
    }

    fn class_count(&self) -> usize {
        self.classes
    }

    fn tag(&self) -> String {
        self.spec.family().to_string()
    }

    fn margins(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        TrainedModel::margins(self, x)?
            .ok_or_else(|| Error::Config(format!("{} has no margins", self.spec.family())))
    }

    fn probabilities(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        TrainedModel::probabilities(self, x)
    }
}

/// Affine scorer `W x + b`. A single weight row is a binary single-score
/// decision function.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearScorer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LinearScorer {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::Shape(format!(
                "{} weight rows but {} biases",
                weights.nrows(),
                bias.len()
            )));
        }
        Ok(Self { weights, bias })
    }

    /// Binary scorer `dec(x) = w . x + b`.
    pub fn binary(w: &[f64], b: f64) -> Self {
        Self {
            weights: Array2::from_shape_vec((1, w.len()), w.to_vec()).expect("row vector"),
            bias: Array1::from_elem(1, b),
        }
    }
}

impl ScoreProvider for LinearScorer {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            has_margin: true,
            has_probability: false,
        }
    }

    fn class_count(&self) -> usize {
        self.weights.nrows().max(2)
    }

    fn tag(&self) -> String {
        "linear".into()
    }

    fn margins(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.weights.ncols() {
            return Err(Error::Shape(format!(
                "scorer expects {} features, input has {}",
                self.weights.ncols(),
                x.ncols()
            )));
        }
        Ok(x.dot(&self.weights.t()) + &self.bias)
    }

    fn probabilities(&self, _x: &Array2<f64>) -> Result<Array2<f64>> {
        Err(Error::Config("linear scorer has no probabilities".into()))
    }
}

/// Per-sample anchor classes and anchored scores `f(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchoredScore {
    pub anchors: Vec<usize>,
    pub values: Vec<f64>,
}

/// Log-odds of `p`, clamped with [`LOG_ODDS_EPS`] whenever `p` or `1 - p`
/// is below the clamp.
pub fn log_odds(p: f64) -> f64 {
    let q = 1.0 - p;
    if p < LOG_ODDS_EPS || q < LOG_ODDS_EPS {
        ((p + LOG_ODDS_EPS) / (q + LOG_ODDS_EPS)).ln()
    } else {
        (p / q).ln()
    }
}

/// Shared handle over a [`ScoreProvider`] with the anchoring rules applied.
#[derive(Clone)]
pub struct ScoreModel {
    provider: Arc<dyn ScoreProvider>,
    caps: Capabilities,
    classes: usize,
}

impl fmt::Debug for ScoreModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScoreModel")
            .field("tag", &self.provider.tag())
            .field("caps", &self.caps)
            .field("classes", &self.classes)
            .finish()
    }
}

impl ScoreModel {
    pub fn new(provider: Arc<dyn ScoreProvider>) -> Result<Self> {
        let caps = provider.capabilities();
        if !caps.has_margin && !caps.has_probability {
            return Err(Error::Config(format!(
                "model `{}` exposes neither margins nor probabilities",
                provider.tag()
            )));
        }
        let classes = provider.class_count();
        if classes < 2 {
            return Err(Error::Config(format!("model reports {classes} classes")));
        }
        Ok(Self {
            provider,
            caps,
            classes,
        })
    }

    pub fn from_trained(model: TrainedModel) -> Self {
        Self::new(Arc::new(model)).expect("built-in models always have probabilities")
    }

    pub fn capabilities(&self) -> Capabilities {
        self.caps
    }

    pub fn class_count(&self) -> usize {
        self.classes
    }

    pub fn tag(&self) -> String {
        self.provider.tag()
    }

    pub fn preferred_path(&self) -> ScorePath {
        if self.caps.has_margin {
            ScorePath::Margin
        } else {
            ScorePath::Probability
        }
    }

    /// Scores on the preferred path with binary single-score margins
    /// expanded to `(-m, m)`.
    pub fn class_scores(&self, x: &Array2<f64>) -> Result<(ScorePath, Array2<f64>)> {
        let n = x.nrows();
        let path = self.preferred_path();
        let scores = match path {
            ScorePath::Margin => {
                let m = self.provider.margins(x)?;
                expand_margins(m, n, self.classes)?
            }
            ScorePath::Probability => {
                let p = self.provider.probabilities(x)?;
                if p.dim() != (n, self.classes) {
                    return Err(Error::Shape(format!(
                        "probabilities have shape {:?}, expected ({n}, {})",
                        p.dim(),
                        self.classes
                    )));
                }
                p
            }
        };
        Ok((path, scores))
    }

    /// Argmax of the preferred scores, ties to the lowest class.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.class_scores(x)?.1))
    }

    /// `f(x)` for each row at its anchor class.
    pub fn score_rows(&self, x: &Array2<f64>, anchors: &[usize]) -> Result<Vec<f64>> {
        if anchors.len() != x.nrows() {
            return Err(Error::Shape(format!(
                "{} rows but {} anchors",
                x.nrows(),
                anchors.len()
            )));
        }
        if let Some(&bad) = anchors.iter().find(|&&c| c >= self.classes) {
            return Err(Error::InvalidData(format!(
                "anchor class {bad} outside [0, {})",
                self.classes
            )));
        }
        let (path, s) = self.class_scores(x)?;
        let values: Vec<f64> = anchors
            .iter()
            .enumerate()
            .map(|(i, &c)| match path {
                ScorePath::Margin => s[[i, c]],
                ScorePath::Probability => log_odds(s[[i, c]]),
            })
            .collect();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite score at row {i}")));
        }
        Ok(values)
    }

    pub fn anchored_score(&self, x: &Array2<f64>, anchors: &[usize]) -> Result<AnchoredScore> {
        Ok(AnchoredScore {
            anchors: anchors.to_vec(),
            values: self.score_rows(x, anchors)?,
        })
    }
}

fn expand_margins(m: Array2<f64>, n: usize, classes: usize) -> Result<Array2<f64>> {
    match m.dim() {
        (rows, 1) if rows == n && classes == 2 => Ok(Array2::from_shape_fn((n, 2), |(i, c)| {
            if c == 1 {
                m[[i, 0]]
            } else {
                -m[[i, 0]]
            }
        })),
        (rows, cols) if rows == n && cols == classes => Ok(m),
        dim => Err(Error::Shape(format!(
            "margins have shape {dim:?}, expected ({n}, {classes})"
        ))),
    }
}

/// Reference classes `c(x)`: the anchor model's predictions.
pub fn anchor_classes(anchor_model: &ScoreModel, x: &Array2<f64>) -> Result<Vec<usize>> {
    anchor_model.predict(x)
}

/// `f_B(x) - f_A(x)`; both scores must share anchors.
pub fn delta_f(score_a: &AnchoredScore, score_b: &AnchoredScore) -> Result<Vec<f64>> {
    if score_a.anchors != score_b.anchors {
        return Err(Error::Provenance(
            "anchored scores use different anchors".into(),
        ));
    }
    Ok(score_b
        .values
        .iter()
        .zip(&score_a.values)
        .map(|(b, a)| b - a)
        .collect())
}
