use serde::Serialize;

use super::config::{AuditConfig, BridgeSpec, DatasetSource, ModelSource};
use crate::learners::{
    FeatureRule, ForestParams, GbParams, KnnParams, LearnerSpec, LogregParams, ScanOrder, Weighting,
};

/// A named A/B pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Preset {
    pub name: String,
    pub description: String,
    /// Bridge templates need an external model server to run.
    pub bridge_template: bool,
    pub config: AuditConfig,
}

fn builtin(name: &str, description: &str, dataset: &str, a: LearnerSpec, b: LearnerSpec) -> Preset {
    let mut config = AuditConfig::builtin(dataset, a, b);
    config.name = name.into();
    Preset {
        name: name.into(),
        description: description.into(),
        bridge_template: false,
        config,
    }
}

fn svc(name: &str, description: &str, a: &str, b: &str) -> Preset {
    let server = |params: &str, role: &str| {
        ModelSource::Bridge(BridgeSpec::new(
            [
                "python3",
                "-m",
                "sklearn_bridge",
                "serve",
                "--family",
                "svc",
                "--params",
                params,
                "--dataset",
                "breast_cancer",
                "--role",
                role,
                "--scaler-sidecar",
                "scaler.json",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        ))
    };
    let mut config = AuditConfig::new(
        DatasetSource::Csv {
            path: "breast_cancer.csv".into(),
            label_column: "target".into(),
        },
        server(a, "A"),
        server(b, "B"),
    );
    config.name = name.into();
    Preset {
        name: name.into(),
        description: description.into(),
        bridge_template: true,
        config,
    }
}

/// Shipped A/B pairs: three per built-in family, plus three kernel-SVM
/// bridge templates.
pub fn presets() -> Vec<Preset> {
    let logreg = |l2: f64, tol: f64| {
        LearnerSpec::Logreg(LogregParams {
            l2_strength: l2,
            tolerance: tol,
            ..LogregParams::default()
        })
    };
    let knn = |k: usize, weighting: Weighting, scan_order: ScanOrder| {
        LearnerSpec::Knn(KnnParams {
            k,
            weighting,
            scan_order,
        })
    };
    let forest = |n_trees: usize, max_depth: Option<usize>, feature_rule: FeatureRule| {
        LearnerSpec::Forest(ForestParams {
            n_trees,
            max_depth,
            feature_rule,
            ..ForestParams::default()
        })
    };
    let gb = |n_rounds: usize, learning_rate: f64, max_depth: usize| {
        LearnerSpec::Gbstumps(GbParams {
            n_rounds,
            learning_rate,
            max_depth,
        })
    };
    use FeatureRule::{All, Sqrt};
    use ScanOrder::{Forward, Reverse};
    use Weighting::{Distance, Uniform};
    vec![
        builtin(
            "logreg-P1",
            "l2_strength 1 -> 10 (stronger penalty)",
            "wine_toy",
            logreg(1.0, 1e-6),
            logreg(10.0, 1e-6),
        ),
        builtin(
            "logreg-P2",
            "l2_strength 1 -> 0.1 (weaker penalty)",
            "wine_toy",
            logreg(1.0, 1e-6),
            logreg(0.1, 1e-6),
        ),
        builtin(
            "logreg-P3",
            "tolerance 1e-6 -> 1e-2 (looser solver stop)",
            "wine_toy",
            logreg(1.0, 1e-6),
            logreg(1.0, 1e-2),
        ),
        builtin(
            "knn-P1",
            "k 5 -> 10 (uniform)",
            "interact3",
            knn(5, Uniform, Forward),
            knn(10, Uniform, Forward),
        ),
        builtin(
            "knn-P2",
            "weighting uniform -> distance (k 5)",
            "interact3",
            knn(5, Uniform, Forward),
            knn(5, Distance, Forward),
        ),
        builtin(
            "knn-P3",
            "scan order forward -> reverse (k 5; cosmetic)",
            "interact3",
            knn(5, Uniform, Forward),
            knn(5, Uniform, Reverse),
        ),
        builtin(
            "forest-P1",
            "n_trees 50 -> 150 (depth unlimited)",
            "interact3",
            forest(50, None, Sqrt),
            forest(150, None, Sqrt),
        ),
        builtin(
            "forest-P2",
            "max_depth unlimited -> 1 (100 trees)",
            "interact3",
            forest(100, None, Sqrt),
            forest(100, Some(1), Sqrt),
        ),
        builtin(
            "forest-P3",
            "feature_rule sqrt -> all",
            "interact3",
            forest(50, None, Sqrt),
            forest(50, None, All),
        ),
        builtin(
            "gbstumps-P1",
            "learning_rate 0.1 -> 0.05 (50 rounds)",
            "interact3",
            gb(50, 0.1, 1),
            gb(50, 0.05, 1),
        ),
        builtin(
            "gbstumps-P2",
            "n_rounds 50 -> 100",
            "interact3",
            gb(50, 0.1, 1),
            gb(100, 0.1, 1),
        ),
        builtin(
            "gbstumps-P3",
            "max_depth 1 -> 2 (50 rounds)",
            "interact3",
            gb(50, 0.1, 1),
            gb(50, 0.1, 2),
        ),
        svc(
            "svc-P1",
            "bridge template: rbf (C 1, gamma scale) -> linear (C 1)",
            r#"{"kernel":"rbf","C":1.0,"gamma":"scale"}"#,
            r#"{"kernel":"linear","C":1.0}"#,
        ),
        svc(
            "svc-P2",
            "bridge template: rbf gamma scale -> auto (cosmetic)",
            r#"{"kernel":"rbf","C":1.0,"gamma":"scale"}"#,
            r#"{"kernel":"rbf","C":1.0,"gamma":"auto"}"#,
        ),
        svc(
            "svc-P3",
            "bridge template: poly (degree 3, C 1) -> rbf (C 1, gamma scale)",
            r#"{"kernel":"poly","degree":3,"C":1.0}"#,
            r#"{"kernel":"rbf","C":1.0,"gamma":"scale"}"#,
        ),
    ]
}

pub fn preset(name: &str) -> Option<Preset> {
    presets().into_iter().find(|p| p.name == name)
}
