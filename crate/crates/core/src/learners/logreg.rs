use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogregParams {
    /// L2 penalty on the weights (biases are not penalized). The inverse of
    /// the usual `C` knob.
    pub l2_strength: f64,
    pub max_iterations: usize,
    /// Stop once the gradient norm falls below this value.
    pub tolerance: f64,
}

impl Default for LogregParams {
    fn default() -> Self {
        Self {
            l2_strength: 1.0,
            max_iterations: 1000,
            tolerance: 1e-6,
        }
    }
}

/// Multinomial logistic regression: one weight row and bias per class.
#[derive(Debug, Clone, PartialEq)]
pub struct LogregModel {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row /= s;
    }
    p
}

impl LogregModel {
    pub fn logits(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weights.t()) + &self.bias
    }

    pub fn probabilities(&self, x: &Array2<f64>) -> Array2<f64> {
        softmax_rows(&self.logits(x))
    }

    /// Penalized mean cross-entropy: `mean CE + l2 / (2n) * |W|^2`.
    fn objective(&self, x: &Array2<f64>, onehot: &Array2<f64>, l2: f64) -> f64 {
        let n = x.nrows() as f64;
        let logits = self.logits(x);
        let mut ce = 0.0;
        for (row, target) in logits.rows().into_iter().zip(onehot.rows()) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            ce += lse - row.dot(&target);
        }
        ce / n + 0.5 * l2 / n * self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    fn gradient(
        &self,
        x: &Array2<f64>,
        onehot: &Array2<f64>,
        l2: f64,
    ) -> (Array2<f64>, Array1<f64>) {
        let n = x.nrows() as f64;
        let resid = self.probabilities(x) - onehot;
        let gw = resid.t().dot(x) / n + &self.weights * (l2 / n);
        let gb = resid.sum_axis(Axis(0)) / n;
        (gw, gb)
    }

    /// Gradient descent with Armijo backtracking. Returns the model and
    /// whether the gradient-norm tolerance was met.
    pub(super) fn fit(
        params: &super::LogregParams,
        x: &Array2<f64>,
        y: &[usize],
        classes: usize,
    ) -> (Self, bool) {
        let (n, d) = x.dim();
        let mut onehot = Array2::zeros((n, classes));
        for (i, &c) in y.iter().enumerate() {
            onehot[[i, c]] = 1.0;
        }
        let mut model = LogregModel {
            weights: Array2::zeros((classes, d)),
            bias: Array1::zeros(classes),
        };
        let l2 = params.l2_strength;
        let mut step = 1.0;
        let mut loss = model.objective(x, &onehot, l2);
        for _ in 0..params.max_iterations {
            let (gw, gb) = model.gradient(x, &onehot, l2);
            let gnorm2 =
                gw.iter().map(|v| v * v).sum::<f64>() + gb.iter().map(|v| v * v).sum::<f64>();
            if gnorm2.sqrt() < params.tolerance {
                return (model, true);
            }
            step *= 2.0;
            loop {
                let cand = LogregModel {
                    weights: &model.weights - &(&gw * step),
                    bias: &model.bias - &(&gb * step),
                };
                let cand_loss = cand.objective(x, &onehot, l2);
                if cand_loss <= loss - 0.5 * step * gnorm2 || step < 1e-12 {
                    model = cand;
                    loss = cand_loss;
                    break;
                }
                step *= 0.5;
            }
        }
        let (gw, gb) = model.gradient(x, &onehot, l2);
        let gnorm =
            (gw.iter().map(|v| v * v).sum::<f64>() + gb.iter().map(|v| v * v).sum::<f64>()).sqrt();
        let converged = gnorm < params.tolerance;
        (model, converged)
    }
}
