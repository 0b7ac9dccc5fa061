//! Delta-attribution quality metrics.
//!
//! All metrics take the delta matrix `dphi = phi_B - phi_A`, the two parent
//! attribution matrices, or the behavioural delta `df = f_B - f_A`. With
//! `u = |dphi|` and `s = u / ||u||_1`, rows with `||u||_1 = 0` are skipped by
//! the concentration metrics. Logs are natural. Metrics that can be
//! undefined return `Option`, serialized as `null`.

use std::f64::consts::LN_2;

use ndarray::{Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explainer::DeltaMatrix;
use crate::numeric;

/// Guard in the stability denominator.
pub const STABILITY_EPS: f64 = 1e-12;

/// Noise scales used when none are configured.
pub const DEFAULT_SIGMAS: [f64; 2] = [0.01, 0.05];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityEntry {
    pub sigma: f64,
    pub value: f64,
}

/// Every suite metric for one audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaMetrics {
    pub mag_l1: f64,
    pub topk10: Option<f64>,
    pub entropy: Option<f64>,
    pub rank_overlap10: f64,
    pub rank_overlap10_median: f64,
    pub jsd: f64,
    pub dce: f64,
    pub bac: Option<f64>,
    pub codf_fixes: Option<f64>,
    pub codf_regressions: Option<f64>,
    pub stability: Vec<StabilityEntry>,
    pub baseline_sensitivity: f64,
    pub group_ratio: f64,
}

fn l1(row: ArrayView1<f64>) -> f64 {
    numeric::sum(row.iter().map(|v| v.abs()))
}

/// Normalized absolute profile of a row, `None` for a zero row.
fn profile(row: ArrayView1<f64>) -> Option<Vec<f64>> {
    let norm = l1(row);
    (norm > 0.0).then(|| row.iter().map(|v| v.abs() / norm).collect())
}

/// `E ||dphi(x)||_1`.
pub fn delta_magnitude(delta: &DeltaMatrix) -> f64 {
    numeric::mean(delta.row_l1()).unwrap_or(0.0)
}

/// Mean share of `||dphi||_1` carried by the `k` largest coordinates.
/// `None` when every row is zero.
pub fn topk_concentration(delta: &DeltaMatrix, k: usize) -> Option<f64> {
    let d = delta.n_features();
    let per_row = delta.values.rows().into_iter().filter_map(|r| {
        let s = profile(r)?;
        if d <= k {
            return Some(1.0);
        }
        let top = numeric::top_k_indices(&s, k);
        Some(numeric::sum(top.iter().map(|&j| s[j])))
    });
    numeric::mean(per_row)
}

/// Mean Shannon entropy (nats) of `s`. `None` when every row is zero.
pub fn delta_entropy(delta: &DeltaMatrix) -> Option<f64> {
    let per_row = delta.values.rows().into_iter().filter_map(|r| {
        let s = profile(r)?;
        Some(-numeric::sum(
            s.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()),
        ))
    });
    numeric::mean(per_row)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankOverlap {
    pub mean: f64,
    pub median: f64,
    pub per_sample: Vec<f64>,
}

/// Jaccard overlap of the top-`k` feature sets of `|phi_A|` and `|phi_B|`
/// per sample (ties to the lower feature index, `k` capped at `d`).
pub fn rank_overlap(phi_a: &Array2<f64>, phi_b: &Array2<f64>, k: usize) -> Result<RankOverlap> {
    if phi_a.dim() != phi_b.dim() {
        return Err(Error::Shape(format!(
            "attribution shapes {:?} and {:?} differ",
            phi_a.dim(),
            phi_b.dim()
        )));
    }
    let k = k.min(phi_a.ncols());
    let per_sample: Vec<f64> = phi_a
        .rows()
        .into_iter()
        .zip(phi_b.rows())
        .map(|(a, b)| {
            let top = |r: ArrayView1<f64>| {
                let mag: Vec<f64> = r.iter().map(|v| v.abs()).collect();
                let mut t = numeric::top_k_indices(&mag, k);
                t.sort_unstable();
                t
            };
            let (ta, tb) = (top(a), top(b));
            let inter = ta.iter().filter(|j| tb.binary_search(j).is_ok()).count();
            let union = ta.len() + tb.len() - inter;
            if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            }
        })
        .collect();
    Ok(RankOverlap {
        mean: numeric::mean(per_sample.iter().copied()).unwrap_or(1.0),
        median: numeric::quantile(&per_sample, 0.5).unwrap_or(1.0),
        per_sample,
    })
}

fn kl_to_mixture(p: &[f64], m: &[f64]) -> f64 {
    numeric::sum(
        p.iter()
            .zip(m)
            .filter(|(&pj, _)| pj > 0.0)
            .map(|(&pj, &mj)| pj * (pj / mj).ln()),
    )
}

/// Jensen-Shannon divergence of two rows' normalized absolute profiles.
/// Both zero gives 0; exactly one zero gives `ln 2`.
pub fn jsd_row(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    match (profile(a), profile(b)) {
        (None, None) => 0.0,
        (None, Some(_)) | (Some(_), None) => LN_2,
        (Some(p), Some(q)) => {
            let m: Vec<f64> = p.iter().zip(&q).map(|(x, y)| 0.5 * (x + y)).collect();
            let v = 0.5 * kl_to_mixture(&p, &m) + 0.5 * kl_to_mixture(&q, &m);
            v.clamp(0.0, LN_2)
        }
    }
}

/// Per-sample JSD between `phi_A` and `phi_B` profiles.
pub fn jsd_per_sample(phi_a: &Array2<f64>, phi_b: &Array2<f64>) -> Result<Vec<f64>> {
    if phi_a.dim() != phi_b.dim() {
        return Err(Error::Shape(format!(
            "attribution shapes {:?} and {:?} differ",
            phi_a.dim(),
            phi_b.dim()
        )));
    }
    Ok(phi_a
        .rows()
        .into_iter()
        .zip(phi_b.rows())
        .map(|(a, b)| jsd_row(a, b))
        .collect())
}

/// Mean JSD over samples, in `[0, ln 2]`.
pub fn jsd(phi_a: &Array2<f64>, phi_b: &Array2<f64>) -> Result<f64> {
    Ok(numeric::mean(jsd_per_sample(phi_a, phi_b)?).unwrap_or(0.0))
}

fn check_len(delta: &DeltaMatrix, dfs: &[f64]) -> Result<()> {
    if delta.n_samples() != dfs.len() {
        return Err(Error::Shape(format!(
            "{} delta rows but {} behavioural deltas",
            delta.n_samples(),
            dfs.len()
        )));
    }
    Ok(())
}

/// Delta conservation error `E |sum_j dphi_j - df|`.
pub fn dce(delta: &DeltaMatrix, dfs: &[f64]) -> Result<f64> {
    check_len(delta, dfs)?;
    let gaps = delta
        .row_sums()
        .into_iter()
        .zip(dfs)
        .map(|(s, f)| (s - f).abs());
    Ok(numeric::mean(gaps).unwrap_or(0.0))
}

/// Behaviour-attribution coupling: Pearson correlation of `||dphi||_1`
/// with `|df|`. `None` if either series has zero variance.
pub fn bac(delta: &DeltaMatrix, dfs: &[f64]) -> Result<Option<f64>> {
    check_len(delta, dfs)?;
    let abs_df: Vec<f64> = dfs.iter().map(|v| v.abs()).collect();
    Ok(numeric::pearson(&delta.row_l1(), &abs_df))
}

/// Mean share of delta mass on `top_features` over a cohort of samples.
/// Zero rows are skipped; `None` for an empty (or all-zero) cohort.
pub fn cohort_focus(delta: &DeltaMatrix, top_features: &[usize], cohort: &[usize]) -> Option<f64> {
    let per_row = cohort.iter().filter_map(|&i| {
        let s = profile(delta.values.row(i))?;
        Some(numeric::sum(top_features.iter().map(|&j| s[j])))
    });
    numeric::mean(per_row)
}

/// Focus of delta mass on B's important features, for fixes and regressions.
pub fn codf(
    delta: &DeltaMatrix,
    top_features_b: &[usize],
    fixes: &[usize],
    regressions: &[usize],
) -> (Option<f64>, Option<f64>) {
    (
        cohort_focus(delta, top_features_b, fixes),
        cohort_focus(delta, top_features_b, regressions),
    )
}

/// Gaussian input noise for one (sigma, draw) pair. Each pair draws from
/// its own ChaCha stream, so the noise is reproducible from
/// `(seed, sigma_index, draw)` alone.
pub fn noise_matrix(
    seed: u64,
    sigma_index: usize,
    draw: usize,
    sigma: f64,
    n: usize,
    d: usize,
) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((sigma_index as u64) << 32) | draw as u64);
    let normal = Normal::new(0.0, sigma).expect("sigma validated positive");
    Array2::from_shape_simple_fn((n, d), || normal.sample(&mut rng))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityResult {
    pub sigma: f64,
    pub value: f64,
    /// Per-sample ratios averaged over draws.
    pub per_sample: Vec<f64>,
}

/// Delta stability: for each sigma, the mean over samples and draws of
/// `||dphi(x + e) - dphi(x)||_1 / (||e||_2 + eps)`. `explain` recomputes
/// the delta matrix at perturbed inputs with fixed baseline and anchors.
pub fn delta_stability<F>(
    explain: F,
    x: &Array2<f64>,
    base: &DeltaMatrix,
    sigmas: &[f64],
    draws_per_sample: usize,
    seed: u64,
) -> Result<Vec<StabilityResult>>
where
    F: Fn(&Array2<f64>) -> Result<DeltaMatrix>,
{
    if draws_per_sample == 0 {
        return Err(Error::Config("draws_per_sample must be at least 1".into()));
    }
    if base.values.dim() != x.dim() {
        return Err(Error::Shape("base delta does not match inputs".into()));
    }
    let (n, d) = x.dim();
    let mut out = Vec::with_capacity(sigmas.len());
    for (si, &sigma) in sigmas.iter().enumerate() {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Config(format!(
                "noise sigma must be positive, got {sigma}"
            )));
        }
        let mut acc = vec![numeric::CompensatedSum::default(); n];
        for draw in 0..draws_per_sample {
            let noise = noise_matrix(seed, si, draw, sigma, n, d);
            let perturbed = explain(&(x + &noise))?;
            if perturbed.anchors != base.anchors || perturbed.baseline != base.baseline {
                return Err(Error::Provenance(
                    "perturbed delta changed anchors or baseline".into(),
                ));
            }
            for i in 0..n {
                let diff = numeric::sum(
                    perturbed
                        .values
                        .row(i)
                        .iter()
                        .zip(base.values.row(i))
                        .map(|(p, b)| (p - b).abs()),
                );
                let norm = numeric::sum(noise.row(i).iter().map(|e| e * e)).sqrt();
                acc[i].add(diff / (norm + STABILITY_EPS));
            }
        }
        let per_sample: Vec<f64> = acc
            .iter()
            .map(|a| a.value() / draws_per_sample as f64)
            .collect();
        out.push(StabilityResult {
            sigma,
            value: numeric::mean(per_sample.iter().copied()).unwrap_or(0.0),
            per_sample,
        });
    }
    Ok(out)
}

/// `E ||dphi_mean(x) - dphi_median(x)||_1` between runs under the mean and
/// the median baseline.
pub fn baseline_sensitivity(delta_mean: &DeltaMatrix, delta_median: &DeltaMatrix) -> Result<f64> {
    if delta_mean.values.dim() != delta_median.values.dim() {
        return Err(Error::Shape("baseline runs have different shapes".into()));
    }
    if delta_mean.anchors != delta_median.anchors {
        return Err(Error::Provenance(
            "baseline runs use different anchors".into(),
        ));
    }
    let per_row = delta_mean
        .values
        .rows()
        .into_iter()
        .zip(delta_median.values.rows())
        .map(|(a, b)| numeric::sum(a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs())));
    Ok(numeric::mean(per_row).unwrap_or(0.0))
}
