use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::AuditConfig;
use super::{run_audit_with, AuditHooks};
use crate::data::EMBEDDED_NAMES;
use crate::learners::{ForestParams, GbParams, KnnParams, LearnerSpec, LogregParams};

/// Bound on every identity-audit metric that should vanish.
pub const SANITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanityRow {
    pub family: String,
    pub dataset: String,
    pub mag_l1: Option<f64>,
    pub dce: Option<f64>,
    pub rank_overlap10: Option<f64>,
    pub jsd: Option<f64>,
    /// Names of failed checks (or the audit error).
    pub failures: Vec<String>,
}

impl SanityRow {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// A = B for every built-in family on every embedded dataset.
pub fn sanity_configs() -> Vec<AuditConfig> {
    let specs = [
        LearnerSpec::Logreg(LogregParams::default()),
        LearnerSpec::Knn(KnnParams::default()),
        LearnerSpec::Forest(ForestParams::default()),
        LearnerSpec::Gbstumps(GbParams::default()),
    ];
    let mut out = Vec::new();
    for spec in &specs {
        for ds in EMBEDDED_NAMES {
            let mut cfg = AuditConfig::builtin(ds, spec.clone(), spec.clone());
            cfg.name = format!("identity-{}-{ds}", spec.family());
            out.push(cfg);
        }
    }
    out
}

/// Runs the identity audits and checks magnitude, DCE, rank overlap and
/// JSD. One row per (family, dataset).
pub fn run_sanity(hooks: &AuditHooks) -> Vec<SanityRow> {
    sanity_configs()
        .par_iter()
        .map(|cfg| {
            let family = cfg.family();
            let dataset = cfg.dataset.label();
            match run_audit_with(cfg, hooks) {
                Ok(r) => {
                    let m = &r.metrics;
                    let mut failures = Vec::new();
                    if !(m.mag_l1 <= SANITY_TOL) {
                        failures.push(format!("mag_l1 = {:e} > {SANITY_TOL:e}", m.mag_l1));
                    }
                    if !(m.dce <= SANITY_TOL) {
                        failures.push(format!("dce = {:e} > {SANITY_TOL:e}", m.dce));
                    }
                    if m.rank_overlap10 != 1.0 {
                        failures.push(format!("rank_overlap10 = {} != 1", m.rank_overlap10));
                    }
                    if !(m.jsd <= SANITY_TOL) {
                        failures.push(format!("jsd = {:e} > {SANITY_TOL:e}", m.jsd));
                    }
                    SanityRow {
                        family,
                        dataset,
                        mag_l1: Some(m.mag_l1),
                        dce: Some(m.dce),
                        rank_overlap10: Some(m.rank_overlap10),
                        jsd: Some(m.jsd),
                        failures,
                    }
                }
                Err(e) => SanityRow {
                    family,
                    dataset,
                    mag_l1: None,
                    dce: None,
                    rank_overlap10: None,
                    jsd: None,
                    failures: vec![format!("audit failed: {e}")],
                },
            }
        })
        .collect()
}
