use ndarray::{Array2, ArrayView1};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// How many features each node may consider when searching for a split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureRule {
    Sqrt,
    Log2,
    All,
}

impl FeatureRule {
    pub fn candidates(self, d: usize) -> usize {
        let m = match self {
            FeatureRule::Sqrt => (d as f64).sqrt().ceil() as usize,
            FeatureRule::Log2 => (d as f64).log2().ceil() as usize,
            FeatureRule::All => d,
        };
        m.clamp(1, d.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows trees until leaves are pure.
    pub max_depth: Option<usize>,
    pub feature_rule: FeatureRule,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 50,
            max_depth: None,
            feature_rule: FeatureRule::Sqrt,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf {
        dist: Vec<f64>,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// A CART classification tree on Gini impurity.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
    /// Number of candidate features examined at every split search.
    candidate_counts: Vec<usize>,
}

impl Tree {
    pub fn candidate_counts(&self) -> &[usize] {
        &self.candidate_counts
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    fn leaf_dist(&self, x: ArrayView1<f64>) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { dist } => return dist,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }
}

struct TreeBuilder<'a> {
    x: &'a Array2<f64>,
    y: &'a [usize],
    classes: usize,
    max_depth: Option<usize>,
    n_candidates: usize,
    rng: ChaCha8Rng,
    tree: Tree,
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

impl TreeBuilder<'_> {
    fn counts(&self, rows: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for &r in rows {
            c[self.y[r]] += 1;
        }
        c
    }

    fn leaf(&mut self, rows: &[usize]) -> usize {
        let counts = self.counts(rows);
        let total = rows.len().max(1) as f64;
        self.tree.nodes.push(Node::Leaf {
            dist: counts.iter().map(|&c| c as f64 / total).collect(),
        });
        self.tree.nodes.len() - 1
    }

    /// Best (feature, threshold) among the sampled candidates; ties keep the
    /// lowest feature index, then the lowest threshold.
    fn best_split(&mut self, rows: &[usize]) -> Option<(usize, f64)> {
        let d = self.x.ncols();
        let mut features = index::sample(&mut self.rng, d, self.n_candidates).into_vec();
        features.sort_unstable();
        self.tree.candidate_counts.push(features.len());

        let parent = self.counts(rows);
        let n = rows.len();
        let parent_impurity = gini(&parent, n);
        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted = rows.to_vec();
        for &f in &features {
            sorted.sort_by(|&a, &b| self.x[[a, f]].total_cmp(&self.x[[b, f]]).then(a.cmp(&b)));
            let mut left = vec![0usize; self.classes];
            for i in 0..n - 1 {
                left[self.y[sorted[i]]] += 1;
                let (lo, hi) = (self.x[[sorted[i], f]], self.x[[sorted[i + 1], f]]);
                if lo == hi {
                    continue;
                }
                let right: Vec<usize> = parent.iter().zip(&left).map(|(p, l)| p - l).collect();
                let nl = i + 1;
                let nr = n - nl;
                let child = (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / n as f64;
                let gain = parent_impurity - child;
                if best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, lo + (hi - lo) / 2.0));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn grow(&mut self, rows: &[usize], depth: usize) -> usize {
        let counts = self.counts(rows);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || rows.len() < 2 || self.max_depth.is_some_and(|m| depth >= m) {
            return self.leaf(rows);
        }
        let Some((feature, threshold)) = self.best_split(rows) else {
            return self.leaf(rows);
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| self.x[[i, feature]] <= threshold);
        let id = self.tree.nodes.len();
        self.tree.nodes.push(Node::Leaf { dist: Vec::new() });
        let left = self.grow(&l, depth + 1);
        let right = self.grow(&r, depth + 1);
        self.tree.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

/// Bagged Gini trees with per-node feature subsampling.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    trees: Vec<Tree>,
    classes: usize,
}

impl ForestModel {
    pub(super) fn fit(params: &ForestParams, x: &Array2<f64>, y: &[usize], classes: usize) -> Self {
        let n = x.nrows();
        let n_candidates = params.feature_rule.candidates(x.ncols());
        // one independent stream per tree keeps results independent of
        // the number of worker threads
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
                rng.set_stream(t as u64);
                let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                let mut b = TreeBuilder {
                    x,
                    y,
                    classes,
                    max_depth: params.max_depth,
                    n_candidates,
                    rng,
                    tree: Tree {
                        nodes: Vec::new(),
                        candidate_counts: Vec::new(),
                    },
                };
                b.grow(&rows, 0);
                b.tree
            })
            .collect();
        Self { trees, classes }
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn probabilities(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((x.nrows(), self.classes));
        let scale = 1.0 / self.trees.len() as f64;
        for (i, row) in x.rows().into_iter().enumerate() {
            for tree in &self.trees {
                for (c, p) in tree.leaf_dist(row).iter().enumerate() {
                    out[[i, c]] += p;
                }
            }
            out.row_mut(i).mapv_inplace(|v| v * scale);
        }
        out
    }
}
