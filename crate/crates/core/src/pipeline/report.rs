use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BatchResult, DeltaReport};
use crate::error::{Error, Result};
use crate::numeric;

/// Column order of `metrics.csv`. Undefined metrics are empty cells.
/// Stability columns hold the smallest and largest configured sigma.
pub const METRICS_COLUMNS: [&str; 27] = [
    "name",
    "dataset",
    "family",
    "model_a",
    "model_b",
    "n_test",
    "n_audited",
    "accuracy_a",
    "accuracy_b",
    "fixes",
    "regressions",
    "mag_l1",
    "topk10",
    "entropy",
    "rank_overlap10",
    "rank_overlap10_median",
    "jsd",
    "dce",
    "bac",
    "codf_fixes",
    "codf_regressions",
    "stability_sigma_lo",
    "stability_lo",
    "stability_sigma_hi",
    "stability_hi",
    "group_ratio",
    "verdict",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_string(header: &[String], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)
        .map_err(|e| Error::Csv(e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| Error::Csv(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn metrics_row(r: &DeltaReport) -> Vec<String> {
    let m = &r.metrics;
    let lo = m
        .stability
        .iter()
        .min_by(|a, b| a.sigma.total_cmp(&b.sigma));
    let hi = m
        .stability
        .iter()
        .max_by(|a, b| a.sigma.total_cmp(&b.sigma));
    vec![
        r.config.name.clone(),
        r.dataset.name.clone(),
        r.family.clone(),
        r.model_a.tag.clone(),
        r.model_b.tag.clone(),
        r.dataset.n_test.to_string(),
        r.dataset.n_audited.to_string(),
        r.accuracy_a.to_string(),
        r.accuracy_b.to_string(),
        r.fixes.len().to_string(),
        r.regressions.len().to_string(),
        m.mag_l1.to_string(),
        opt(m.topk10),
        opt(m.entropy),
        m.rank_overlap10.to_string(),
        m.rank_overlap10_median.to_string(),
        m.jsd.to_string(),
        m.dce.to_string(),
        opt(m.bac),
        opt(m.codf_fixes),
        opt(m.codf_regressions),
        opt(lo.map(|s| s.sigma)),
        opt(lo.map(|s| s.value)),
        opt(hi.map(|s| s.sigma)),
        opt(hi.map(|s| s.value)),
        m.group_ratio.to_string(),
        r.verdict.to_string(),
    ]
}

/// One row per report.
pub fn metrics_csv(reports: &[DeltaReport]) -> Result<String> {
    let header: Vec<String> = METRICS_COLUMNS.iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<String>> = reports.iter().map(metrics_row).collect();
    csv_string(&header, &rows)
}

/// Raw per-sample values; one stability column per sigma.
pub fn per_sample_csv(report: &DeltaReport) -> Result<String> {
    let mut header: Vec<String> = [
        "row",
        "label",
        "anchor",
        "pred_a",
        "pred_b",
        "delta_l1",
        "delta_f",
        "jsd",
        "rank_overlap",
        "group_ratio",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(
        report
            .config
            .sigmas
            .iter()
            .map(|s| format!("stability_{s}")),
    );
    let rows: Vec<Vec<String>> = report
        .per_sample
        .iter()
        .map(|p| {
            let mut row = vec![
                p.row.to_string(),
                p.label.to_string(),
                p.anchor.to_string(),
                p.pred_a.to_string(),
                p.pred_b.to_string(),
                p.delta_l1.to_string(),
                p.delta_f.to_string(),
                p.jsd.to_string(),
                p.rank_overlap.to_string(),
                p.group_ratio.to_string(),
            ];
            row.extend(p.stability.iter().map(|v| v.to_string()));
            row
        })
        .collect();
    csv_string(&header, &rows)
}

/// Mean and population std of headline metrics for one family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyAggregate {
    pub family: String,
    pub audits: usize,
    pub mag_l1_mean: f64,
    pub mag_l1_std: f64,
    pub dce_mean: f64,
    pub dce_std: f64,
    /// Over audits with a defined BAC only.
    pub bac_mean: Option<f64>,
    pub bac_std: Option<f64>,
    pub bac_defined: usize,
}

/// Groups reports by family in order of first appearance.
pub fn aggregate_by_family(reports: &[DeltaReport]) -> Vec<FamilyAggregate> {
    let mut families: Vec<&str> = Vec::new();
    for r in reports {
        if !families.contains(&r.family.as_str()) {
            families.push(&r.family);
        }
    }
    families
        .into_iter()
        .map(|fam| {
            let members: Vec<&DeltaReport> = reports.iter().filter(|r| r.family == fam).collect();
            let mags: Vec<f64> = members.iter().map(|r| r.metrics.mag_l1).collect();
            let dces: Vec<f64> = members.iter().map(|r| r.metrics.dce).collect();
            let bacs: Vec<f64> = members.iter().filter_map(|r| r.metrics.bac).collect();
            FamilyAggregate {
                family: fam.to_string(),
                audits: members.len(),
                mag_l1_mean: numeric::mean(mags.iter().copied()).unwrap_or(0.0),
                mag_l1_std: numeric::std_population(&mags).unwrap_or(0.0),
                dce_mean: numeric::mean(dces.iter().copied()).unwrap_or(0.0),
                dce_std: numeric::std_population(&dces).unwrap_or(0.0),
                bac_mean: numeric::mean(bacs.iter().copied()),
                bac_std: numeric::std_population(&bacs),
                bac_defined: bacs.len(),
            }
        })
        .collect()
}

pub fn aggregate_csv(rows: &[FamilyAggregate]) -> Result<String> {
    let header: Vec<String> = [
        "family",
        "audits",
        "mag_l1_mean",
        "mag_l1_std",
        "dce_mean",
        "dce_std",
        "bac_mean",
        "bac_std",
        "bac_defined",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|a| {
            vec![
                a.family.clone(),
                a.audits.to_string(),
                a.mag_l1_mean.to_string(),
                a.mag_l1_std.to_string(),
                a.dce_mean.to_string(),
                a.dce_std.to_string(),
                opt(a.bac_mean),
                opt(a.bac_std),
                a.bac_defined.to_string(),
            ]
        })
        .collect();
    csv_string(&header, &rows)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `report.json`, `metrics.csv` and `per_sample.csv` into `dir`.
pub fn write_audit_outputs(dir: &Path, report: &DeltaReport) -> Result<()> {
    ensure_dir(dir)?;
    write(dir, "report.json", &report.to_json()?)?;
    write(
        dir,
        "metrics.csv",
        &metrics_csv(std::slice::from_ref(report))?,
    )?;
    write(dir, "per_sample.csv", &per_sample_csv(report)?)
}

/// Writes the batch tables plus one subdirectory per successful audit,
/// named `<index>-<name>`.
pub fn write_batch_outputs(dir: &Path, batch: &BatchResult) -> Result<()> {
    ensure_dir(dir)?;
    write(dir, "metrics.csv", &metrics_csv(&batch.reports)?)?;
    write(
        dir,
        "aggregate_by_family.csv",
        &aggregate_csv(&batch.aggregate)?,
    )?;
    let failures: Vec<Vec<String>> = batch
        .failures
        .iter()
        .map(|f| {
            vec![
                f.index.to_string(),
                f.name.clone(),
                f.stage.clone().unwrap_or_default(),
                f.error.clone(),
            ]
        })
        .collect();
    let header: Vec<String> = ["index", "name", "stage", "error"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    write(dir, "failures.csv", &csv_string(&header, &failures)?)?;
    for (i, r) in batch.reports.iter().enumerate() {
        let safe: String = r
            .config
            .name
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        let sub = dir.join(format!("{i:03}-{safe}"));
        ensure_dir(&sub)?;
        write(&sub, "report.json", &r.to_json()?)?;
        write(&sub, "per_sample.csv", &per_sample_csv(r)?)?;
    }
    Ok(())
}
