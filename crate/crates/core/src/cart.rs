//! CART decision trees (Gini for classification, variance reduction for
//! multi-output regression) and bagged forests.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Sufficient statistics of a node's targets.
pub trait SplitTask: Sync {
    type Stats: Clone;
    type Leaf: Clone;

    fn empty(&self) -> Self::Stats;
    fn add(&self, stats: &mut Self::Stats, sample: usize);
    fn remove(&self, stats: &mut Self::Stats, sample: usize);
    /// Node size times its impurity.
    fn weighted_impurity(&self, stats: &Self::Stats, n: usize) -> f64;
    fn leaf(&self, stats: &Self::Stats, n: usize) -> Self::Leaf;
}

/// Gini impurity over class ids `0..n_classes`.
pub struct Gini<'a> {
    pub labels: &'a [usize],
    pub n_classes: usize,
}

impl SplitTask for Gini<'_> {
    type Stats = Vec<usize>;
    /// Class counts.
    type Leaf = Vec<usize>;

    fn empty(&self) -> Vec<usize> {
        vec![0; self.n_classes]
    }

    fn add(&self, s: &mut Vec<usize>, i: usize) {
        s[self.labels[i]] += 1;
    }

    fn remove(&self, s: &mut Vec<usize>, i: usize) {
        s[self.labels[i]] -= 1;
    }

    fn weighted_impurity(&self, s: &Vec<usize>, n: usize) -> f64 {
        if n == 0 {
            return 0.0;
        }
        let sq: f64 = s.iter().map(|&c| (c * c) as f64).sum();
        n as f64 - sq / n as f64
    }

    fn leaf(&self, s: &Vec<usize>, _n: usize) -> Vec<usize> {
        s.clone()
    }
}

/// Summed per-output variance of row-major targets (`n x width`).
pub struct Variance<'a> {
    pub targets: &'a [f64],
    pub width: usize,
}

impl SplitTask for Variance<'_> {
    /// Per-output sums followed by per-output sums of squares.
    type Stats = Vec<f64>;
    /// Per-output means.
    type Leaf = Vec<f64>;

    fn empty(&self) -> Vec<f64> {
        vec![0.0; 2 * self.width]
    }

    fn add(&self, s: &mut Vec<f64>, i: usize) {
        let w = self.width;
        for k in 0..w {
            let y = self.targets[i * w + k];
            s[k] += y;
            s[w + k] += y * y;
        }
    }

    fn remove(&self, s: &mut Vec<f64>, i: usize) {
        let w = self.width;
        for k in 0..w {
            let y = self.targets[i * w + k];
            s[k] -= y;
            s[w + k] -= y * y;
        }
    }

    fn weighted_impurity(&self, s: &Vec<f64>, n: usize) -> f64 {
        if n == 0 {
            return 0.0;
        }
        (0..self.width).map(|k| (s[self.width + k] - s[k] * s[k] / n as f64).max(0.0)).sum()
    }

    fn leaf(&self, s: &Vec<f64>, n: usize) -> Vec<f64> {
        s[..self.width].iter().map(|v| v / n as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Features tried per split; `None` tries all.
    pub max_features: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self { max_depth: None, min_samples_leaf: 1, max_features: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node<L> {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf(L),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree<L> {
    pub nodes: Vec<Node<L>>,
}

impl<L> Tree<L> {
    /// Leaf reached by `x` (`x[feature] <= threshold` goes left).
    pub fn leaf(&self, x: &[f64]) -> &L {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split { feature, threshold, left, right } => i = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf(l) => return l,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go<L>(t: &Tree<L>, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
                Node::Leaf(_) => 0,
            }
        }
        go(self, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }
}

struct Builder<'a, T: SplitTask> {
    task: &'a T,
    x: &'a [f64],
    d: usize,
    params: TreeParams,
    rng: ChaCha8Rng,
    nodes: Vec<Node<T::Leaf>>,
}

impl<T: SplitTask> Builder<'_, T> {
    fn value(&self, i: usize, f: usize) -> f64 {
        self.x[i * self.d + f]
    }

    /// Best split of `idx` over the candidate features: (feature, threshold,
    /// left count after sorting by that feature).
    fn best_split(&mut self, idx: &mut [usize], parent: &T::Stats) -> Option<(usize, f64)> {
        let n = idx.len();
        let parent_imp = self.task.weighted_impurity(parent, n);
        let mut order: Vec<usize> = (0..self.d).collect();
        let k = self.params.max_features.unwrap_or(self.d).clamp(1, self.d);
        if k < self.d {
            order.shuffle(&mut self.rng);
        }
        let mut best: Option<(f64, usize, f64)> = None;
        let min_leaf = self.params.min_samples_leaf.max(1);
        for (tried, &f) in order.iter().enumerate() {
            if tried >= k && best.is_some() {
                break;
            }
            idx.sort_by(|&a, &b| self.value(a, f).total_cmp(&self.value(b, f)).then(a.cmp(&b)));
            let mut left = self.task.empty();
            let mut right = parent.clone();
            for split in 1..n {
                let moved = idx[split - 1];
                self.task.add(&mut left, moved);
                self.task.remove(&mut right, moved);
                let (lo, hi) = (self.value(moved, f), self.value(idx[split], f));
                if lo == hi || split < min_leaf || n - split < min_leaf {
                    continue;
                }
                let imp = self.task.weighted_impurity(&left, split) + self.task.weighted_impurity(&right, n - split);
                if imp < parent_imp - 1e-12 * (1.0 + parent_imp) && best.is_none_or(|b| imp < b.0) {
                    let mut threshold = lo + 0.5 * (hi - lo);
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some((imp, f, threshold));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let mut stats = self.task.empty();
        for &i in idx.iter() {
            self.task.add(&mut stats, i);
        }
        let n = idx.len();
        let slot = self.nodes.len();
        let leaf = self.task.leaf(&stats, n);
        self.nodes.push(Node::Leaf(leaf));
        let depth_ok = self.params.max_depth.is_none_or(|m| depth < m);
        if !depth_ok || n < 2 * self.params.min_samples_leaf.max(1) || self.task.weighted_impurity(&stats, n) <= 0.0 {
            return slot;
        }
        let Some((feature, threshold)) = self.best_split(idx, &stats) else {
            return slot;
        };
        idx.sort_by(|&a, &b| self.value(a, feature).total_cmp(&self.value(b, feature)).then(a.cmp(&b)));
        let cut = idx.partition_point(|&i| self.value(i, feature) <= threshold);
        let (l, r) = idx.split_at_mut(cut);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[slot] = Node::Split { feature, threshold, left, right };
        slot
    }
}

/// Grows a tree on the rows `sample_ids` of the row-major matrix `x`
/// (`d` columns). Duplicated ids (bootstrap draws) count with multiplicity.
pub fn grow_tree<T: SplitTask>(task: &T, x: &[f64], d: usize, sample_ids: &[usize], params: TreeParams, rng: ChaCha8Rng) -> Tree<T::Leaf> {
    assert!(!sample_ids.is_empty(), "cannot grow a tree on no samples");
    let mut b = Builder { task, x, d, params, rng, nodes: Vec::new() };
    let mut idx = sample_ids.to_vec();
    b.grow(&mut idx, 0);
    Tree { nodes: b.nodes }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    pub bootstrap: bool,
    /// Features per split; `None` uses `floor(sqrt(d))`.
    pub max_features: Option<usize>,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 100, bootstrap: true, max_features: None, max_depth: None, min_samples_leaf: 1 }
    }
}

impl ForestParams {
    fn tree_params(&self, d: usize) -> TreeParams {
        let k = self.max_features.unwrap_or(((d as f64).sqrt().floor() as usize).max(1));
        TreeParams { max_depth: self.max_depth, min_samples_leaf: self.min_samples_leaf, max_features: Some(k) }
    }
}

/// Trees grown in parallel, each from its own seeded stream (bootstrap draw
/// and feature subsets), so results do not depend on scheduling.
pub fn grow_forest<T: SplitTask>(task: &T, x: &[f64], d: usize, n: usize, params: &ForestParams, seed: u64) -> Vec<Tree<T::Leaf>>
where
    T::Leaf: Send,
{
    let tp = params.tree_params(d);
    (0..params.n_trees.max(1))
        .into_par_iter()
        .map(|t| {
            let mut rng = crate::rng::stream(seed, &[t as u64]);
            let ids: Vec<usize> = if params.bootstrap { (0..n).map(|_| rng.random_range(0..n)).collect() } else { (0..n).collect() };
            grow_tree(task, x, d, &ids, tp, rng)
        })
        .collect()
}

/// Most frequent class of a count vector; ties go to the smallest id.
pub fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (c, &k) in counts.iter().enumerate() {
        if k > counts[best] {
            best = c;
        }
    }
    best
}

/// Classification tree over class ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTree {
    pub tree: Tree<Vec<usize>>,
}

impl ClassTree {
    pub fn fit(x: &[f64], d: usize, labels: &[usize], n_classes: usize, params: TreeParams, seed: u64) -> Self {
        let ids: Vec<usize> = (0..labels.len()).collect();
        Self { tree: grow_tree(&Gini { labels, n_classes }, x, d, &ids, params, crate::rng::stream(seed, &[])) }
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        majority(self.tree.leaf(x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassForest {
    pub trees: Vec<Tree<Vec<usize>>>,
    pub n_classes: usize,
}

impl ClassForest {
    pub fn fit(x: &[f64], d: usize, labels: &[usize], n_classes: usize, params: &ForestParams, seed: u64) -> Self {
        Self { trees: grow_forest(&Gini { labels, n_classes }, x, d, labels.len(), params, seed), n_classes }
    }

    /// Majority vote of the trees' predicted classes.
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut votes = vec![0; self.n_classes];
        for t in &self.trees {
            votes[majority(t.leaf(x))] += 1;
        }
        majority(&votes)
    }
}

/// Multi-output regression tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegTree {
    pub tree: Tree<Vec<f64>>,
}

impl RegTree {
    pub fn fit(x: &[f64], d: usize, targets: &[f64], width: usize, params: TreeParams, seed: u64) -> Self {
        let ids: Vec<usize> = (0..targets.len() / width).collect();
        Self { tree: grow_tree(&Variance { targets, width }, x, d, &ids, params, crate::rng::stream(seed, &[])) }
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.tree.leaf(x).clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegForest {
    pub trees: Vec<Tree<Vec<f64>>>,
}

impl RegForest {
    pub fn fit(x: &[f64], d: usize, targets: &[f64], width: usize, params: &ForestParams, seed: u64) -> Self {
        Self { trees: grow_forest(&Variance { targets, width }, x, d, targets.len() / width, params, seed) }
    }

    /// Mean of the trees' predictions.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.trees[0].leaf(x).len()];
        for t in &self.trees {
            for (o, v) in out.iter_mut().zip(t.leaf(x)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= self.trees.len() as f64);
        out
    }
}

/// Random subset of `k` distinct indices below `n`, sorted.
pub fn sample_indices(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut v = index::sample(rng, n, k.min(n)).into_vec();
    v.sort_unstable();
    v
}
