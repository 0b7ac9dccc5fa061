use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    /// 1 (stumps) or 2.
    pub max_depth: usize,
}

impl Default for GbParams {
    fn default() -> Self {
        Self {
            n_rounds: 50,
            learning_rate: 0.1,
            max_depth: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum RegNode {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<RegNode>,
        right: Box<RegNode>,
    },
}

impl RegNode {
    fn eval(&self, x: ArrayView1<f64>) -> f64 {
        match self {
            RegNode::Leaf(v) => *v,
            RegNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] <= *threshold {
                    left.eval(x)
                } else {
                    right.eval(x)
                }
            }
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Least-squares split search on residuals; leaves take a Newton step
/// `sum(r) / sum(p(1-p))`.
fn fit_tree(x: &Array2<f64>, rows: &[usize], resid: &[f64], hess: &[f64], depth: usize) -> RegNode {
    let newton = |rows: &[usize]| {
        let num: f64 = rows.iter().map(|&i| resid[i]).sum();
        let den: f64 = rows.iter().map(|&i| hess[i]).sum();
        if den < 1e-12 {
            0.0
        } else {
            num / den
        }
    };
    if depth == 0 || rows.len() < 2 {
        return RegNode::Leaf(newton(rows));
    }
    let n = rows.len();
    let total: f64 = rows.iter().map(|&i| resid[i]).sum();
    let parent_score = total * total / n as f64;
    let mut best: Option<(f64, usize, f64)> = None;
    let mut sorted = rows.to_vec();
    for f in 0..x.ncols() {
        sorted.sort_by(|&a, &b| x[[a, f]].total_cmp(&x[[b, f]]).then(a.cmp(&b)));
        let mut left_sum = 0.0;
        for k in 0..n - 1 {
            left_sum += resid[sorted[k]];
            let (lo, hi) = (x[[sorted[k], f]], x[[sorted[k + 1], f]]);
            if lo == hi {
                continue;
            }
            let nl = (k + 1) as f64;
            let nr = (n - k - 1) as f64;
            let right_sum = total - left_sum;
            let gain = left_sum * left_sum / nl + right_sum * right_sum / nr - parent_score;
            if best.is_none_or(|(g, _, _)| gain > g) {
                best = Some((gain, f, lo + (hi - lo) / 2.0));
            }
        }
    }
    match best {
        None => RegNode::Leaf(newton(rows)),
        Some((_, feature, threshold)) => {
            let (l, r): (Vec<usize>, Vec<usize>) =
                rows.iter().partition(|&&i| x[[i, feature]] <= threshold);
            RegNode::Split {
                feature,
                threshold,
                left: Box::new(fit_tree(x, &l, resid, hess, depth - 1)),
                right: Box::new(fit_tree(x, &r, resid, hess, depth - 1)),
            }
        }
    }
}

/// One-vs-rest additive trees on per-class log-odds.
#[derive(Debug, Clone, PartialEq)]
pub struct GbModel {
    prior: Array1<f64>,
    learning_rate: f64,
    /// `rounds[r][c]` is the tree added for class `c` in round `r`.
    rounds: Vec<Vec<RegNode>>,
}

impl GbModel {
    pub(super) fn fit(params: &GbParams, x: &Array2<f64>, y: &[usize], classes: usize) -> Self {
        let n = x.nrows();
        let prior = Array1::from_shape_fn(classes, |c| {
            let p = y.iter().filter(|&&k| k == c).count() as f64 / n as f64;
            let p = p.clamp(1e-9, 1.0 - 1e-9);
            (p / (1.0 - p)).ln()
        });
        let mut raw = Array2::from_shape_fn((n, classes), |(_, c)| prior[c]);
        let rows: Vec<usize> = (0..n).collect();
        let mut rounds = Vec::with_capacity(params.n_rounds);
        for _ in 0..params.n_rounds {
            let mut trees = Vec::with_capacity(classes);
            for c in 0..classes {
                let p: Vec<f64> = (0..n).map(|i| sigmoid(raw[[i, c]])).collect();
                let resid: Vec<f64> = (0..n)
                    .map(|i| f64::from(u8::from(y[i] == c)) - p[i])
                    .collect();
                let hess: Vec<f64> = p.iter().map(|p| p * (1.0 - p)).collect();
                let tree = fit_tree(x, &rows, &resid, &hess, params.max_depth);
                for i in 0..n {
                    raw[[i, c]] += params.learning_rate * tree.eval(x.row(i));
                }
                trees.push(tree);
            }
            rounds.push(trees);
        }
        Self {
            prior,
            learning_rate: params.learning_rate,
            rounds,
        }
    }

    /// Per-class additive log-odds scores.
    pub fn raw_scores(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::from_shape_fn((x.nrows(), self.prior.len()), |(_, c)| self.prior[c]);
        for (i, row) in x.rows().into_iter().enumerate() {
            for trees in &self.rounds {
                for (c, t) in trees.iter().enumerate() {
                    out[[i, c]] += self.learning_rate * t.eval(row);
                }
            }
        }
        out
    }

    /// Normalized one-vs-rest sigmoids.
    pub fn probabilities(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut p = self.raw_scores(x).mapv(sigmoid);
        for mut row in p.rows_mut() {
            let s = row.sum();
            row /= s;
        }
        p
    }
}
