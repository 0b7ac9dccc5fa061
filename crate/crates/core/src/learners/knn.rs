use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Uniform,
    Distance,
}

/// Order in which training rows are scanned during neighbour search.
/// Neighbour selection uses a total order on `(distance, train index)`,
/// so both orders return identical neighbours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanOrder {
    Forward,
    Reverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnParams {
    pub k: usize,
    pub weighting: Weighting,
    pub scan_order: ScanOrder,
}

impl Default for KnnParams {
    fn default() -> Self {
        Self {
            k: 5,
            weighting: Weighting::Uniform,
            scan_order: ScanOrder::Forward,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    params: KnnParams,
    x: Array2<f64>,
    y: Vec<usize>,
    classes: usize,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(u, v)| (u - v) * (u - v)).sum()
}

impl KnnModel {
    pub(super) fn fit(params: &KnnParams, x: &Array2<f64>, y: &[usize], classes: usize) -> Self {
        Self {
            params: params.clone(),
            x: x.clone(),
            y: y.to_vec(),
            classes,
        }
    }

    /// Indices of the k nearest training rows for `q`, nearest first.
    fn neighbours(&self, q: ArrayView1<f64>) -> Vec<(f64, usize)> {
        let n = self.x.nrows();
        let scan: Box<dyn Iterator<Item = usize>> = match self.params.scan_order {
            ScanOrder::Forward => Box::new(0..n),
            ScanOrder::Reverse => Box::new((0..n).rev()),
        };
        let mut cand: Vec<(f64, usize)> = scan.map(|i| (sq_dist(q, self.x.row(i)), i)).collect();
        let k = self.params.k.min(n);
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, cmp);
            cand.truncate(k);
        }
        cand.sort_by(cmp);
        cand
    }

    /// Weighted vote fractions per class. Under distance weighting, any
    /// neighbour at distance zero takes the whole vote.
    pub fn vote_fractions(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((x.nrows(), self.classes));
        for (i, q) in x.rows().into_iter().enumerate() {
            let nb = self.neighbours(q);
            let exact: Vec<usize> = nb
                .iter()
                .filter(|(d, _)| *d == 0.0)
                .map(|&(_, j)| j)
                .collect();
            let mut total = 0.0;
            match self.params.weighting {
                Weighting::Distance if !exact.is_empty() => {
                    for j in exact {
                        out[[i, self.y[j]]] += 1.0;
                        total += 1.0;
                    }
                }
                Weighting::Distance => {
                    for &(d2, j) in &nb {
                        let w = 1.0 / d2.sqrt();
                        out[[i, self.y[j]]] += w;
                        total += w;
                    }
                }
                Weighting::Uniform => {
                    for &(_, j) in &nb {
                        out[[i, self.y[j]]] += 1.0;
                        total += 1.0;
                    }
                }
            }
            out.row_mut(i).mapv_inplace(|v| v / total);
        }
        out
    }
}
