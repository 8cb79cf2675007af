//! Multi-output random-forest regression from operating parameters to ground
//! fraction vectors, with ensemble-spread uncertainty.
//!
//! Each tree is a CART regressor over the full fraction vector; splits
//! minimize the summed per-component squared error of the children. The
//! forest mean is the per-component average of the tree outputs and the
//! forest variance is the per-component population variance across trees.
//!
//! Training draws one bootstrap sample per tree from a dedicated random
//! stream derived from `(seed, tree index)`, so the result is independent of
//! how many worker threads participate.

use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KrfError, Result};
use crate::preprocess::GroundVector;
use crate::table::write_atomic;

pub const N_COMPONENTS: usize = 6;

/// Forest hyperparameters. The defaults are the tuned values used by the
/// full-scale pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// Candidate features drawn at each split.
    pub m_try: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            n_trees: 171,
            max_depth: 25,
            min_samples_split: 2,
            min_samples_leaf: 10,
            m_try: 3,
            seed: 42,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.n_trees < 1 {
            return Err(KrfError::InvalidInput("n_trees must be >= 1".into()));
        }
        if self.max_depth < 1 {
            return Err(KrfError::InvalidInput("max_depth must be >= 1".into()));
        }
        if self.min_samples_split < 2 {
            return Err(KrfError::InvalidInput(
                "min_samples_split must be >= 2".into(),
            ));
        }
        if self.min_samples_leaf < 1 {
            return Err(KrfError::InvalidInput(
                "min_samples_leaf must be >= 1".into(),
            ));
        }
        if self.m_try < 1 || self.m_try > n_features {
            return Err(KrfError::InvalidInput(format!(
                "m_try must lie in 1..={n_features}, got {}",
                self.m_try
            )));
        }
        Ok(())
    }
}

/// Feature rows plus fraction-vector labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<GroundVector>,
}

impl Dataset {
    pub fn new(
        feature_names: Vec<String>,
        rows: Vec<Vec<f64>>,
        labels: Vec<GroundVector>,
    ) -> Result<Dataset> {
        if rows.is_empty() {
            return Err(KrfError::InsufficientData("dataset has no rows".into()));
        }
        if rows.len() != labels.len() {
            return Err(KrfError::LengthMismatch(format!(
                "{} rows vs {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let width = feature_names.len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(KrfError::LengthMismatch(format!(
                    "row {i} has {} features, expected {width}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(KrfError::InvalidInput(format!(
                    "row {i} has a non-finite feature"
                )));
            }
        }
        for (i, label) in labels.iter().enumerate() {
            if label.is_unknown() {
                return Err(KrfError::InvalidInput(format!(
                    "label {i} is the unknown sentinel"
                )));
            }
        }
        Ok(Dataset {
            feature_names,
            rows,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Mean over components of the population variance of the labels.
    pub fn label_component_variance(&self) -> f64 {
        let n = self.labels.len() as f64;
        let mut mean = [0.0; N_COMPONENTS];
        for label in &self.labels {
            for (m, f) in mean.iter_mut().zip(label.fractions()) {
                *m += f;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = [0.0; N_COMPONENTS];
        for label in &self.labels {
            for c in 0..N_COMPONENTS {
                let d = label.fractions()[c] - mean[c];
                var[c] += d * d;
            }
        }
        var.iter().map(|v| v / n).sum::<f64>() / N_COMPONENTS as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Node {
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { value: [f64; N_COMPONENTS] },
}

/// One CART regressor. Nodes live in an arena with the root at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

impl DecisionTree {
    /// A tree consisting of a single leaf, mostly useful for fixtures.
    pub fn leaf(value: [f64; N_COMPONENTS]) -> DecisionTree {
        DecisionTree {
            nodes: vec![Node::Leaf { value }],
        }
    }

    /// A depth-one tree splitting once on `feature` at `threshold`.
    pub fn stump(
        feature: usize,
        threshold: f64,
        left: [f64; N_COMPONENTS],
        right: [f64; N_COMPONENTS],
    ) -> DecisionTree {
        DecisionTree {
            nodes: vec![
                Node::Internal {
                    feature,
                    threshold,
                    left: 1,
                    right: 2,
                },
                Node::Leaf { value: left },
                Node::Leaf { value: right },
            ],
        }
    }

    pub fn predict(&self, x: &[f64]) -> [f64; N_COMPONENTS] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[*feature] <= *threshold { *left } else { *right };
                }
                Node::Leaf { value } => return *value,
            }
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Internal { left, right, .. } => {
                    1 + walk(nodes, *left).max(walk(nodes, *right))
                }
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Draw `n_rows` row indices uniformly with replacement.
pub fn bootstrap_sample(n_rows: usize, rng: &mut impl RngCore) -> Vec<usize> {
    (0..n_rows).map(|_| rng.gen_range(0..n_rows)).collect()
}

/// The random stream owned by one tree.
pub fn per_tree_rng(seed: u64, tree_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree_index as u64);
    rng
}

struct TreeBuilder<'a> {
    rows: &'a [Vec<f64>],
    labels: &'a [GroundVector],
    hp: &'a Hyperparams,
    n_features: usize,
    nodes: Vec<Node>,
    scratch_features: Vec<usize>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    children_sse: f64,
}

impl<'a> TreeBuilder<'a> {
    fn label_stats(&self, indices: &[usize]) -> ([f64; N_COMPONENTS], f64) {
        let n = indices.len() as f64;
        let mut sum = [0.0; N_COMPONENTS];
        let mut sq = [0.0; N_COMPONENTS];
        for &i in indices {
            let f = self.labels[i].fractions();
            for c in 0..N_COMPONENTS {
                sum[c] += f[c];
                sq[c] += f[c] * f[c];
            }
        }
        let mut mean = [0.0; N_COMPONENTS];
        let mut sse = 0.0;
        for c in 0..N_COMPONENTS {
            mean[c] = sum[c] / n;
            sse += (sq[c] - sum[c] * sum[c] / n).max(0.0);
        }
        (mean, sse)
    }

    /// `m_try` distinct candidate features from the tree's stream.
    fn draw_features(&mut self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        for (i, f) in self.scratch_features.iter_mut().enumerate() {
            *f = i;
        }
        let n = self.n_features;
        let m = self.hp.m_try.min(n);
        for i in 0..m {
            let j = rng.gen_range(i..n);
            self.scratch_features.swap(i, j);
        }
        self.scratch_features[..m].to_vec()
    }

    fn best_split(&self, indices: &[usize], candidates: &[usize]) -> Option<BestSplit> {
        let n = indices.len();
        let min_leaf = self.hp.min_samples_leaf;
        if n < 2 * min_leaf {
            return None;
        }
        let mut best: Option<BestSplit> = None;
        let mut order: Vec<usize> = Vec::with_capacity(n);
        for &feature in candidates {
            order.clear();
            order.extend_from_slice(indices);
            order.sort_unstable_by(|&a, &b| {
                self.rows[a][feature]
                    .partial_cmp(&self.rows[b][feature])
                    .expect("finite features")
            });

            // running left-side sums; the right side follows from the totals
            let mut total_sum = [0.0; N_COMPONENTS];
            let mut total_sq = [0.0; N_COMPONENTS];
            for &i in order.iter() {
                let f = self.labels[i].fractions();
                for c in 0..N_COMPONENTS {
                    total_sum[c] += f[c];
                    total_sq[c] += f[c] * f[c];
                }
            }
            let mut left_sum = [0.0; N_COMPONENTS];
            let mut left_sq = [0.0; N_COMPONENTS];
            for p in 1..n {
                let prev = order[p - 1];
                let f = self.labels[prev].fractions();
                for c in 0..N_COMPONENTS {
                    left_sum[c] += f[c];
                    left_sq[c] += f[c] * f[c];
                }
                if p < min_leaf || n - p < min_leaf {
                    continue;
                }
                let v_prev = self.rows[prev][feature];
                let v_here = self.rows[order[p]][feature];
                if v_prev >= v_here {
                    continue; // split only between distinct values
                }
                let nl = p as f64;
                let nr = (n - p) as f64;
                let mut sse = 0.0;
                for c in 0..N_COMPONENTS {
                    let ls = left_sq[c] - left_sum[c] * left_sum[c] / nl;
                    let rs_sum = total_sum[c] - left_sum[c];
                    let rs = (total_sq[c] - left_sq[c]) - rs_sum * rs_sum / nr;
                    sse += ls.max(0.0) + rs.max(0.0);
                }
                if best.as_ref().is_none_or(|b| sse < b.children_sse) {
                    best = Some(BestSplit {
                        feature,
                        threshold: 0.5 * (v_prev + v_here),
                        children_sse: sse,
                    });
                }
            }
        }
        best
    }

    fn build(&mut self, indices: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let (mean, sse) = self.label_stats(&indices);
        let n = indices.len();
        let splittable = depth < self.hp.max_depth
            && n >= self.hp.min_samples_split
            && n >= 2 * self.hp.min_samples_leaf
            && sse > 1e-12;
        if !splittable {
            self.nodes.push(Node::Leaf { value: mean });
            return self.nodes.len() - 1;
        }
        let candidates = self.draw_features(rng);
        let Some(split) = self.best_split(&indices, &candidates) else {
            self.nodes.push(Node::Leaf { value: mean });
            return self.nodes.len() - 1;
        };
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
            .into_iter()
            .partition(|&i| self.rows[i][split.feature] <= split.threshold);
        let id = self.nodes.len();
        self.nodes.push(Node::Internal {
            feature: split.feature,
            threshold: split.threshold,
            left: 0,
            right: 0,
        });
        let left = self.build(left_idx, depth + 1, rng);
        let right = self.build(right_idx, depth + 1, rng);
        if let Node::Internal {
            left: l, right: r, ..
        } = &mut self.nodes[id]
        {
            *l = left;
            *r = right;
        }
        id
    }
}

/// Grow one tree on the given row multiset, drawing split candidates from
/// `rng`.
pub fn fit_tree(
    dataset: &Dataset,
    indices: Vec<usize>,
    hp: &Hyperparams,
    rng: &mut ChaCha8Rng,
) -> DecisionTree {
    debug_assert!(!indices.is_empty());
    let mut builder = TreeBuilder {
        rows: &dataset.rows,
        labels: &dataset.labels,
        hp,
        n_features: dataset.n_features(),
        nodes: Vec::new(),
        scratch_features: vec![0; dataset.n_features()],
    };
    let root = builder.build(indices, 0, rng);
    debug_assert_eq!(root, 0);
    DecisionTree {
        nodes: builder.nodes,
    }
}

/// A trained ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    format: String,
    version: u32,
    pub hyperparams: Hyperparams,
    pub feature_names: Vec<String>,
    /// Mean per-component variance of the training labels; the prediction
    /// pipeline uses it to put the variogram sill on the fraction scale.
    pub label_component_variance: f64,
    pub trees: Vec<DecisionTree>,
}

const FOREST_FORMAT: &str = "krf-forest";
const FOREST_VERSION: u32 = 1;

/// Train `n_trees` trees, each on its own bootstrap sample. Tree `i` consumes
/// only the stream derived from `(seed, i)`, so training parallelism does not
/// affect the result.
pub fn fit_forest(dataset: &Dataset, hp: &Hyperparams) -> Result<Forest> {
    hp.validate(dataset.n_features())?;
    let trees: Vec<DecisionTree> = (0..hp.n_trees)
        .into_par_iter()
        .map(|i| {
            let mut rng = per_tree_rng(hp.seed, i);
            let indices = bootstrap_sample(dataset.len(), &mut rng);
            fit_tree(dataset, indices, hp, &mut rng)
        })
        .collect();
    Ok(Forest {
        format: FOREST_FORMAT.to_string(),
        version: FOREST_VERSION,
        hyperparams: *hp,
        feature_names: dataset.feature_names.clone(),
        label_component_variance: dataset.label_component_variance(),
        trees,
    })
}

/// Per-component mean and population variance (divisor `n`) of raw tree
/// outputs.
pub fn ensemble_mean_variance(
    outputs: &[[f64; N_COMPONENTS]],
) -> ([f64; N_COMPONENTS], [f64; N_COMPONENTS]) {
    let n = outputs.len() as f64;
    let mut mean = [0.0; N_COMPONENTS];
    for out in outputs {
        for c in 0..N_COMPONENTS {
            mean[c] += out[c];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; N_COMPONENTS];
    for out in outputs {
        for c in 0..N_COMPONENTS {
            let d = out[c] - mean[c];
            var[c] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

impl Forest {
    /// Predict the fraction vector and per-component ensemble variance for
    /// one feature row.
    ///
    /// The variance is computed on the raw tree outputs; the returned mean is
    /// clamped and renormalized into a valid fraction vector.
    pub fn predict(&self, x: &[f64]) -> Result<(GroundVector, [f64; N_COMPONENTS])> {
        if x.len() != self.feature_names.len() {
            return Err(KrfError::LengthMismatch(format!(
                "{} features, model expects {}",
                x.len(),
                self.feature_names.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(KrfError::InvalidInput("non-finite feature value".into()));
        }
        let outputs: Vec<[f64; N_COMPONENTS]> =
            self.trees.iter().map(|t| t.predict(x)).collect();
        let (mean, var) = ensemble_mean_variance(&outputs);
        Ok((GroundVector::clamp_renormalize(mean), var))
    }

    /// Out-of-bag mean squared error over components, averaged over all rows
    /// that at least one tree did not see in its bootstrap sample.
    pub fn oob_mse(&self, dataset: &Dataset) -> Result<f64> {
        let n = dataset.len();
        let mut sums = vec![[0.0; N_COMPONENTS]; n];
        let mut votes = vec![0usize; n];
        let mut in_bag = vec![false; n];
        for (i, tree) in self.trees.iter().enumerate() {
            let mut rng = per_tree_rng(self.hyperparams.seed, i);
            let indices = bootstrap_sample(n, &mut rng);
            in_bag.iter_mut().for_each(|b| *b = false);
            for &idx in &indices {
                in_bag[idx] = true;
            }
            for (row, bagged) in in_bag.iter().enumerate() {
                if !bagged {
                    let out = tree.predict(&dataset.rows[row]);
                    for c in 0..N_COMPONENTS {
                        sums[row][c] += out[c];
                    }
                    votes[row] += 1;
                }
            }
        }
        let mut total = 0.0;
        let mut counted = 0usize;
        for row in 0..n {
            if votes[row] == 0 {
                continue;
            }
            let label = dataset.labels[row].fractions();
            let mut mse = 0.0;
            for c in 0..N_COMPONENTS {
                let pred = sums[row][c] / votes[row] as f64;
                mse += (pred - label[c]).powi(2);
            }
            total += mse / N_COMPONENTS as f64;
            counted += 1;
        }
        if counted == 0 {
            return Err(KrfError::InsufficientData(
                "no out-of-bag rows; add trees or rows".into(),
            ));
        }
        Ok(total / counted as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)
            .map_err(|e| KrfError::InvalidInput(format!("serialize forest: {e}")))?;
        write_atomic(path, &json)
    }

    pub fn load(path: &Path) -> Result<Forest> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| KrfError::io(path.display().to_string(), e))?;
        let forest: Forest = serde_json::from_str(&text).map_err(|e| KrfError::Parse {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if forest.format != FOREST_FORMAT || forest.version != FOREST_VERSION {
            return Err(KrfError::InvalidInput(format!(
                "unsupported model file {}@{}",
                forest.format, forest.version
            )));
        }
        Ok(forest)
    }

    /// Build a forest directly from trees; fixtures and tests use this.
    pub fn from_trees(
        trees: Vec<DecisionTree>,
        feature_names: Vec<String>,
        hp: Hyperparams,
    ) -> Forest {
        Forest {
            format: FOREST_FORMAT.to_string(),
            version: FOREST_VERSION,
            hyperparams: hp,
            feature_names,
            label_component_variance: 0.0,
            trees,
        }
    }
}
