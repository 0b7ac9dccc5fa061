use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::explainer::{BaselineKind, GroupMode};
use crate::learners::LearnerSpec;
use crate::protocol::DEFAULT_TIMEOUT;
use crate::suite::DEFAULT_SIGMAS;

/// Where the audited rows come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Embedded { name: String },
    Csv { path: PathBuf, label_column: String },
}

impl DatasetSource {
    pub fn label(&self) -> String {
        match self {
            DatasetSource::Embedded { name } => name.clone(),
            DatasetSource::Csv { path, .. } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum BridgeTag {
    Bridge,
}

/// An externally hosted model reached over the bridge protocol. The server
/// receives rows already standardized with the audit's shared scaler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BridgeSpec {
    family: BridgeTag,
    /// Program followed by its arguments.
    pub command: Vec<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
}

fn default_timeout_secs() -> f64 {
    DEFAULT_TIMEOUT.as_secs_f64()
}

impl BridgeSpec {
    pub fn new(command: Vec<String>) -> Self {
        Self {
            family: BridgeTag::Bridge,
            command,
            timeout_secs: default_timeout_secs(),
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

/// A model version: a built-in learner trained by the audit, or a bridge
/// endpoint. Both are written as a table with a `family` key.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ModelSource {
    Builtin(LearnerSpec),
    Bridge(BridgeSpec),
}

impl<'de> Deserialize<'de> for ModelSource {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let v = serde_json::Value::deserialize(de)?;
        let family = v
            .get("family")
            .and_then(|f| f.as_str())
            .ok_or_else(|| D::Error::custom("model table needs a `family` key"))?;
        if family == "bridge" {
            serde_json::from_value(v)
                .map(ModelSource::Bridge)
                .map_err(D::Error::custom)
        } else {
            serde_json::from_value(v)
                .map(ModelSource::Builtin)
                .map_err(D::Error::custom)
        }
    }
}

impl ModelSource {
    pub fn family(&self) -> &'static str {
        match self {
            ModelSource::Builtin(spec) => spec.family(),
            ModelSource::Bridge(_) => "bridge",
        }
    }
}

/// Which version supplies the anchor class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AnchorChoice {
    A,
    #[default]
    B,
}

impl AnchorChoice {
    pub fn letter(self) -> char {
        match self {
            AnchorChoice::A => 'a',
            AnchorChoice::B => 'b',
        }
    }
}

/// Magnitude cut points for the verdict: `q1` bounds the bottom quartile,
/// `median` the "medium or large" region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MagBoundaries {
    pub q1: f64,
    pub median: f64,
}

impl Default for MagBoundaries {
    fn default() -> Self {
        Self {
            q1: 0.05,
            median: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerdictThresholds {
    pub bac_low: f64,
    pub bac_high: f64,
    pub rank_overlap_min: f64,
    pub jsd_risky: f64,
    pub dce_zero_tol: f64,
    /// Used for single-pair audits; batches substitute their own quartiles.
    pub mag: MagBoundaries,
}

impl Default for VerdictThresholds {
    fn default() -> Self {
        Self {
            bac_low: 0.2,
            bac_high: 0.6,
            rank_overlap_min: 0.9,
            jsd_risky: 0.15,
            dce_zero_tol: 1e-6,
            mag: MagBoundaries::default(),
        }
    }
}

impl VerdictThresholds {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.bac_low,
            self.bac_high,
            self.rank_overlap_min,
            self.jsd_risky,
            self.dce_zero_tol,
            self.mag.q1,
            self.mag.median,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("thresholds must be finite".into()));
        }
        if self.bac_low >= self.bac_high {
            return Err(Error::Config(format!(
                "bac_low ({}) must be below bac_high ({})",
                self.bac_low, self.bac_high
            )));
        }
        if self.rank_overlap_min <= 0.0 || self.jsd_risky <= 0.0 || self.dce_zero_tol <= 0.0 {
            return Err(Error::Config(
                "overlap, JSD and DCE tolerances must be positive".into(),
            ));
        }
        if self.mag.q1 < 0.0 || self.mag.q1 > self.mag.median {
            return Err(Error::Config(format!(
                "magnitude boundaries need 0 <= q1 <= median, got {:?}",
                self.mag
            )));
        }
        Ok(())
    }
}

/// One audit: dataset, the two model versions and every suite knob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_sample_cap")]
    pub sample_cap: usize,
    #[serde(default = "default_baseline")]
    pub baseline: BaselineKind,
    #[serde(default = "default_sigmas")]
    pub sigmas: Vec<f64>,
    #[serde(default = "one")]
    pub draws_per_sample: usize,
    #[serde(default = "default_group_k")]
    pub group_k: usize,
    #[serde(default)]
    pub group_mode: GroupMode,
    #[serde(default = "ten")]
    pub top_k: usize,
    #[serde(default = "ten")]
    pub perm_m: usize,
    #[serde(default = "default_repeats")]
    pub perm_repeats: usize,
    #[serde(default)]
    pub anchor: AnchorChoice,
    #[serde(default)]
    pub thresholds: VerdictThresholds,
    pub dataset: DatasetSource,
    pub model_a: ModelSource,
    pub model_b: ModelSource,
}

fn default_name() -> String {
    "audit".into()
}
fn default_seed() -> u64 {
    42
}
fn default_test_fraction() -> f64 {
    0.2
}
fn default_sample_cap() -> usize {
    256
}
fn default_baseline() -> BaselineKind {
    BaselineKind::Averaged
}
fn default_sigmas() -> Vec<f64> {
    DEFAULT_SIGMAS.to_vec()
}
fn one() -> usize {
    1
}
fn default_group_k() -> usize {
    2
}
fn ten() -> usize {
    10
}
fn default_repeats() -> usize {
    5
}

impl AuditConfig {
    /// A config with every default and the given dataset and models.
    pub fn new(dataset: DatasetSource, model_a: ModelSource, model_b: ModelSource) -> Self {
        Self {
            name: default_name(),
            seed: default_seed(),
            test_fraction: default_test_fraction(),
            sample_cap: default_sample_cap(),
            baseline: default_baseline(),
            sigmas: default_sigmas(),
            draws_per_sample: 1,
            group_k: default_group_k(),
            group_mode: GroupMode::default(),
            top_k: 10,
            perm_m: 10,
            perm_repeats: default_repeats(),
            anchor: AnchorChoice::default(),
            thresholds: VerdictThresholds::default(),
            dataset,
            model_a,
            model_b,
        }
    }

    /// Shorthand for two built-in learners on an embedded dataset.
    pub fn builtin(dataset: &str, a: LearnerSpec, b: LearnerSpec) -> Self {
        Self::new(
            DatasetSource::Embedded {
                name: dataset.into(),
            },
            ModelSource::Builtin(a),
            ModelSource::Builtin(b),
        )
    }

    /// Family label used to group audits: the shared family, or `a/b`.
    pub fn family(&self) -> String {
        let (a, b) = (self.model_a.family(), self.model_b.family());
        if a == b {
            a.to_string()
        } else {
            format!("{a}/{b}")
        }
    }

    /// Checks every knob that can be checked without data.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            ));
        }
        if self.sample_cap == 0 {
            return bad("sample_cap must be at least 1".into());
        }
        if self.sigmas.is_empty() || self.sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad(format!(
                "sigmas must be positive and finite, got {:?}",
                self.sigmas
            ));
        }
        for (name, v) in [
            ("draws_per_sample", self.draws_per_sample),
            ("group_k", self.group_k),
            ("top_k", self.top_k),
            ("perm_m", self.perm_m),
            ("perm_repeats", self.perm_repeats),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        for (role, m) in [("model_a", &self.model_a), ("model_b", &self.model_b)] {
            if let ModelSource::Bridge(b) = m {
                if b.command.is_empty() {
                    return bad(format!("{role}: bridge command is empty"));
                }
                if !(b.timeout_secs.is_finite() && b.timeout_secs > 0.0) {
                    return bad(format!("{role}: timeout_secs must be positive"));
                }
            }
        }
        self.thresholds.validate()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file. Relative CSV paths resolve against the file's
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let DatasetSource::Csv { path: csv, .. } = &mut cfg.dataset {
            if csv.is_relative() {
                if let Some(dir) = path.parent() {
                    *csv = dir.join(&*csv);
                }
            }
        }
        Ok(cfg)
    }

    /// Applies a `dotted.key=value` override. The value is parsed as a TOML
    /// value, falling back to a bare string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let key = key.trim();
        let raw = raw.trim();
        let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));

        let mut root = toml::Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let parts: Vec<&str> = key.split('.').collect();
        let (last, parents) = parts.split_last().expect("split yields at least one part");
        let mut node = &mut root;
        for p in parents {
            node = node
                .as_table_mut()
                .and_then(|t| t.get_mut(*p))
                .ok_or_else(|| Error::Config(format!("override `{key}`: no section `{p}`")))?;
        }
        node.as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: parent is not a section")))?
            .insert(last.to_string(), value);
        let updated: Self = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("override `{key}`: {e}")))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }
}
