use serde::{Deserialize, Serialize};

use super::config::{MagBoundaries, VerdictThresholds};
use crate::numeric;
use crate::suite::DeltaMetrics;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Benign,
    BehaviourAligned,
    Risky,
    Unclassified,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Benign => "benign",
            Verdict::BehaviourAligned => "behaviour_aligned",
            Verdict::Risky => "risky",
            Verdict::Unclassified => "unclassified",
        }
    }

    /// Process exit code for CI. With `gate` off a risky verdict exits 0.
    pub fn exit_code(self, gate: bool) -> i32 {
        match self {
            Verdict::Benign | Verdict::BehaviourAligned => 0,
            Verdict::Risky if gate => 3,
            Verdict::Risky => 0,
            Verdict::Unclassified => 4,
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where the magnitude boundaries of a verdict came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundarySource {
    Config,
    Batch,
}

/// Quartile boundaries over a batch of magnitudes.
pub fn batch_boundaries(mags: &[f64]) -> Option<MagBoundaries> {
    Some(MagBoundaries {
        q1: numeric::quantile(mags, 0.25)?,
        median: numeric::quantile(mags, 0.5)?,
    })
}

/// Classifies an update from its metrics.
///
/// A zero delta has no BAC (both series are constant); it is treated as
/// uncoupled rather than undefined, so identity audits come out benign.
/// Any other undefined BAC yields `unclassified` unless the JSD alone
/// marks the update risky. "Medium or large" magnitude additionally
/// requires a non-zero delta, so a batch of identical pairs (median 0) is
/// not flagged.
pub fn classify_verdict(
    metrics: &DeltaMetrics,
    thresholds: &VerdictThresholds,
    mag: &MagBoundaries,
) -> (Verdict, Vec<String>) {
    let mut warnings = Vec::new();
    let zero_delta = metrics.mag_l1 <= thresholds.dce_zero_tol;
    let bac = match metrics.bac {
        Some(b) => Some(b),
        None if zero_delta => Some(0.0),
        None => None,
    };
    let large = !zero_delta && metrics.mag_l1 >= mag.median;
    let bottom = metrics.mag_l1 <= mag.q1;

    let high_jsd = metrics.jsd > thresholds.jsd_risky;
    let risky = high_jsd || bac.is_some_and(|b| b < thresholds.bac_low && large);
    if risky {
        return (Verdict::Risky, warnings);
    }
    let Some(bac) = bac else {
        warnings.push("BAC undefined (constant |df| or ||dphi||_1); verdict unclassified".into());
        return (Verdict::Unclassified, warnings);
    };
    let benign = bac < thresholds.bac_low
        && bottom
        && metrics.rank_overlap10 > thresholds.rank_overlap_min
        && metrics.dce <= thresholds.dce_zero_tol;
    if benign {
        return (Verdict::Benign, warnings);
    }
    if bac > thresholds.bac_high && large {
        return (Verdict::BehaviourAligned, warnings);
    }
    (Verdict::Unclassified, warnings)
}
