use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::ResolvedConfig;
use super::dataset::Dataset;
use super::split::{count_gain, quantile_rank};
use super::weights::WeightVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: u32,
        right: u32,
    },
    /// Estimation-half rows that fall into this leaf.
    Leaf { members: Vec<u32> },
}

/// A grown honest tree. Node 0 is the root; children always follow their
/// parent in `nodes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeStructure {
    nodes: Vec<Node>,
}

impl TreeStructure {
    /// Builds a tree from raw nodes, checking it against `rows` training rows
    /// and `cols` covariates.
    pub fn from_nodes(nodes: Vec<Node>, rows: usize, cols: usize) -> Result<Self> {
        let tree = TreeStructure { nodes };
        tree.validate(rows, cols)?;
        Ok(tree)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    #[inline]
    fn leaf_index(&self, x: &[f64]) -> usize {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[*feature] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
                Node::Leaf { .. } => return at,
            }
        }
    }

    /// Estimation members of the leaf containing `x`.
    #[inline]
    pub fn leaf_members(&self, x: &[f64]) -> &[u32] {
        match &self.nodes[self.leaf_index(x)] {
            Node::Leaf { members } => members,
            Node::Split { .. } => unreachable!("leaf_index stops at leaves"),
        }
    }

    /// Axis-aligned cell of the leaf containing `x`, intersected with `domain`.
    pub fn leaf_cell(&self, x: &[f64], domain: (f64, f64)) -> Vec<(f64, f64)> {
        let mut cell = vec![domain; x.len()];
        let mut at = 0usize;
        while let Node::Split {
            feature,
            threshold,
            left,
            right,
        } = &self.nodes[at]
        {
            let bounds = &mut cell[*feature];
            if x[*feature] <= *threshold {
                bounds.1 = bounds.1.min(*threshold);
                at = *left as usize;
            } else {
                bounds.0 = bounds.0.max(*threshold);
                at = *right as usize;
            }
        }
        cell
    }

    /// Number of `rows` routed through every node.
    pub fn route_counts(&self, data: &Dataset, rows: &[usize]) -> Vec<usize> {
        let mut counts = vec![0usize; self.nodes.len()];
        for &i in rows {
            let x = data.row(i);
            let mut at = 0usize;
            loop {
                counts[at] += 1;
                match &self.nodes[at] {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        at = if x[*feature] <= *threshold {
                            *left as usize
                        } else {
                            *right as usize
                        };
                    }
                    Node::Leaf { .. } => break,
                }
            }
        }
        counts
    }

    /// Checks the structural invariants against a training set of `rows`
    /// rows and `cols` covariates.
    pub fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::CorruptModel("tree without nodes".into()));
        }
        let mut referenced = vec![false; self.nodes.len()];
        referenced[0] = true;
        for (at, node) in self.nodes.iter().enumerate() {
            match node {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if *feature >= cols || !threshold.is_finite() {
                        return Err(Error::CorruptModel(format!("invalid split at node {at}")));
                    }
                    for &child in [left, right] {
                        let child = child as usize;
                        if child <= at || child >= self.nodes.len() || referenced[child] {
                            return Err(Error::CorruptModel(format!(
                                "invalid child {child} of node {at}"
                            )));
                        }
                        referenced[child] = true;
                    }
                }
                Node::Leaf { members } => {
                    if members.is_empty() {
                        return Err(Error::CorruptModel(format!(
                            "leaf {at} has no estimation members"
                        )));
                    }
                    if members.iter().any(|&m| m as usize >= rows) {
                        return Err(Error::CorruptModel(format!(
                            "leaf {at} references a row outside the training data"
                        )));
                    }
                }
            }
        }
        if referenced.iter().any(|r| !r) {
            return Err(Error::CorruptModel("unreachable nodes".into()));
        }
        Ok(())
    }
}

/// Base kernel of one tree: uniform weight over the estimation members of
/// the leaf containing `x`.
pub fn tree_kernel(tree: &TreeStructure, x: &[f64]) -> Result<WeightVector> {
    let members = tree.leaf_members(x);
    if members.is_empty() {
        return Err(Error::CorruptModel(
            "leaf without estimation members".into(),
        ));
    }
    let mut indices: Vec<usize> = members.iter().map(|&m| m as usize).collect();
    indices.sort_unstable();
    WeightVector::uniform(indices)
}

struct Grower<'a> {
    data: &'a Dataset,
    features: &'a [usize],
    config: &'a ResolvedConfig,
    nodes: Vec<Node>,
    // scratch buffers reused across nodes
    sorted_train: Vec<(f64, bool)>,
    sorted_est: Vec<f64>,
    responses: Vec<f64>,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Grower<'_> {
    fn grow<R: Rng + ?Sized>(&mut self, train: Vec<usize>, est: Vec<usize>, rng: &mut R) -> u32 {
        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf {
            members: Vec::new(),
        });
        match self.best_split(&train, &est, rng) {
            Some(Candidate {
                feature, threshold, ..
            }) => {
                let goes_left = |i: &usize| self.data.value(*i, feature) <= threshold;
                let (train_l, train_r): (Vec<usize>, Vec<usize>) =
                    train.iter().copied().partition(|i| goes_left(i));
                let (est_l, est_r): (Vec<usize>, Vec<usize>) =
                    est.iter().copied().partition(|i| goes_left(i));
                let left = self.grow(train_l, est_l, rng);
                let right = self.grow(train_r, est_r, rng);
                self.nodes[slot] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
            }
            None => {
                let mut members: Vec<u32> = est.iter().map(|&i| i as u32).collect();
                members.sort_unstable();
                self.nodes[slot] = Node::Leaf { members };
            }
        }
        slot as u32
    }

    fn best_split<R: Rng + ?Sized>(
        &mut self,
        train: &[usize],
        est: &[usize],
        rng: &mut R,
    ) -> Option<Candidate> {
        let n_parent = train.len();
        let min_leaf = self.config.min_leaf_est;
        if n_parent < 2 || est.len() < 2 * min_leaf {
            return None;
        }
        let y = self.data.y();

        // Pseudo-outcomes are tau - 1{y <= q_P}; only the indicator matters.
        self.responses.clear();
        self.responses.extend(train.iter().map(|&i| y[i]));
        self.responses.sort_by(f64::total_cmp);
        let q_parent = self.responses[quantile_rank(n_parent, self.config.tau.value()) - 1];
        let below_total = train.iter().filter(|&&i| y[i] <= q_parent).count();

        let min_child = ((self.config.alpha * n_parent as f64 - 1e-9).ceil() as usize).max(1);
        let mut candidates: Vec<usize> = index::sample(rng, self.features.len(), self.config.mtry)
            .into_iter()
            .map(|k| self.features[k])
            .collect();
        candidates.sort_unstable();

        let mut best: Option<Candidate> = None;
        for feature in candidates {
            self.sorted_train.clear();
            self.sorted_train.extend(
                train
                    .iter()
                    .map(|&i| (self.data.value(i, feature), y[i] <= q_parent)),
            );
            self.sorted_train.sort_by(|a, b| a.0.total_cmp(&b.0));
            self.sorted_est.clear();
            self.sorted_est
                .extend(est.iter().map(|&i| self.data.value(i, feature)));
            self.sorted_est.sort_by(f64::total_cmp);

            let mut below_left = 0usize;
            let mut est_left = 0usize;
            for k in 1..n_parent {
                let (x_prev, prev_below) = self.sorted_train[k - 1];
                below_left += usize::from(prev_below);
                let x_next = self.sorted_train[k].0;
                if x_prev >= x_next {
                    continue;
                }
                let n_left = k;
                let n_right = n_parent - k;
                if n_left < min_child || n_right < min_child {
                    continue;
                }
                let mut threshold = 0.5 * (x_prev + x_next);
                if threshold >= x_next {
                    threshold = x_prev;
                }
                while est_left < self.sorted_est.len() && self.sorted_est[est_left] <= threshold {
                    est_left += 1;
                }
                if est_left < min_leaf || est.len() - est_left < min_leaf {
                    continue;
                }
                let gain = count_gain(n_left, below_left, n_right, below_total - below_left);
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(Candidate {
                        feature,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best.filter(|b| b.gain > 0.0)
    }
}

/// Grows one honest tree. The structure reads responses of `train` only;
/// `est` rows are routed to leaves and recorded as members.
pub fn grow_tree<R: Rng + ?Sized>(
    data: &Dataset,
    train: &[usize],
    est: &[usize],
    features: &[usize],
    config: &ResolvedConfig,
    rng: &mut R,
) -> Result<TreeStructure> {
    if est.len() < config.min_leaf_est || train.is_empty() {
        return Err(Error::InvalidInput(format!(
            "honest halves of sizes {}/{} are too small for leaves of {} estimation rows",
            train.len(),
            est.len(),
            config.min_leaf_est
        )));
    }
    if features.is_empty() || config.mtry > features.len() {
        return Err(Error::Config(format!(
            "mtry = {} with {} candidate features",
            config.mtry,
            features.len()
        )));
    }
    let mut grower = Grower {
        data,
        features,
        config,
        nodes: Vec::new(),
        sorted_train: Vec::with_capacity(train.len()),
        sorted_est: Vec::with_capacity(est.len()),
        responses: Vec::with_capacity(train.len()),
    };
    grower.grow(train.to_vec(), est.to_vec(), rng);
    Ok(TreeStructure {
        nodes: grower.nodes,
    })
}
