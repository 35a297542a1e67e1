//! Regression trees over the covariates `x` whose leaves hold functions of
//! the target covariate.

mod moves;

pub use moves::{
    assign_leaves, available_vars, cutpoints, grow_log_ratio, leaf_stats, propose_grow,
    propose_move, propose_prune, prune_log_ratio, refresh_leaves, sample_prior_tree,
    MoveContext, MoveKind, MoveOutcome,
};

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TargetMesh};
use crate::error::{PsbartError, Result};
use crate::gp::LeafFunction;

pub type NodeId = usize;

/// BART tree-structure prior: a node at depth `d` splits with probability
/// `alpha * (1 + d)^(-beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreePrior {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for TreePrior {
    fn default() -> Self {
        Self {
            alpha: 0.95,
            beta: 2.0,
        }
    }
}

impl TreePrior {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(PsbartError::InvalidInput(format!(
                "alpha must lie in (0, 1), got {alpha}"
            )));
        }
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(PsbartError::InvalidInput(format!(
                "beta must be nonnegative, got {beta}"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub fn split_prob(&self, depth: usize) -> f64 {
        self.alpha * (1.0 + depth as f64).powf(-self.beta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Leaf(LeafFunction),
    /// Observations with `x[var] <= threshold` go left.
    Split {
        var: usize,
        threshold: f64,
        left: NodeId,
        right: NodeId,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub parent: Option<NodeId>,
    pub depth: usize,
    pub kind: NodeKind,
}

/// A binary tree stored in an arena; the root is always node 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Option<Node>>,
    free: Vec<NodeId>,
}

impl Tree {
    pub fn root_only(leaf: LeafFunction) -> Self {
        Self {
            nodes: vec![Some(Node {
                parent: None,
                depth: 0,
                kind: NodeKind::Leaf(leaf),
            })],
            free: Vec::new(),
        }
    }

    pub const ROOT: NodeId = 0;

    pub fn node(&self, id: NodeId) -> &Node {
        self.nodes[id].as_ref().expect("dangling node id")
    }

    fn node_mut(&mut self, id: NodeId) -> &mut Node {
        self.nodes[id].as_mut().expect("dangling node id")
    }

    /// Upper bound on node ids currently in use.
    pub fn capacity(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        matches!(self.node(id).kind, NodeKind::Leaf(_))
    }

    pub fn is_root_only(&self) -> bool {
        self.is_leaf(Self::ROOT)
    }

    /// Leaf ids in ascending order.
    pub fn leaves(&self) -> Vec<NodeId> {
        self.ids().filter(|&id| self.is_leaf(id)).collect()
    }

    pub fn n_leaves(&self) -> usize {
        self.ids().filter(|&id| self.is_leaf(id)).count()
    }

    /// Internal nodes whose two children are both leaves.
    pub fn prunable(&self) -> Vec<NodeId> {
        self.ids()
            .filter(|&id| match self.node(id).kind {
                NodeKind::Split { left, right, .. } => self.is_leaf(left) && self.is_leaf(right),
                NodeKind::Leaf(_) => false,
            })
            .collect()
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(id, n)| n.as_ref().map(|_| id))
    }

    pub fn n_nodes(&self) -> usize {
        self.ids().count()
    }

    pub fn max_depth(&self) -> usize {
        self.ids().map(|id| self.node(id).depth).max().unwrap_or(0)
    }

    /// Leaf reached by following `x[var] <= threshold` to the left.
    pub fn route(&self, x: &[f64]) -> NodeId {
        self.route_by(|v| x[v])
    }

    pub fn route_by<F: Fn(usize) -> f64>(&self, value: F) -> NodeId {
        let mut id = Self::ROOT;
        loop {
            match &self.node(id).kind {
                NodeKind::Leaf(_) => return id,
                NodeKind::Split {
                    var,
                    threshold,
                    left,
                    right,
                } => {
                    id = if value(*var) <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn leaf_function(&self, id: NodeId) -> &LeafFunction {
        match &self.node(id).kind {
            NodeKind::Leaf(f) => f,
            NodeKind::Split { .. } => panic!("node {id} is not a leaf"),
        }
    }

    pub fn set_leaf_function(&mut self, id: NodeId, f: LeafFunction) {
        match &mut self.node_mut(id).kind {
            NodeKind::Leaf(slot) => *slot = f,
            NodeKind::Split { .. } => panic!("node {id} is not a leaf"),
        }
    }

    fn alloc(&mut self, node: Node) -> NodeId {
        match self.free.pop() {
            Some(id) => {
                self.nodes[id] = Some(node);
                id
            }
            None => {
                self.nodes.push(Some(node));
                self.nodes.len() - 1
            }
        }
    }

    /// Turns leaf `id` into a split with two new leaf children.
    pub fn split_leaf(
        &mut self,
        id: NodeId,
        var: usize,
        threshold: f64,
        left_leaf: LeafFunction,
        right_leaf: LeafFunction,
    ) -> (NodeId, NodeId) {
        assert!(self.is_leaf(id), "can only split a leaf");
        let depth = self.node(id).depth + 1;
        let left = self.alloc(Node {
            parent: Some(id),
            depth,
            kind: NodeKind::Leaf(left_leaf),
        });
        let right = self.alloc(Node {
            parent: Some(id),
            depth,
            kind: NodeKind::Leaf(right_leaf),
        });
        self.node_mut(id).kind = NodeKind::Split {
            var,
            threshold,
            left,
            right,
        };
        (left, right)
    }

    /// Removes the two leaf children of `id`, making it a leaf.
    pub fn collapse(&mut self, id: NodeId, leaf: LeafFunction) {
        let (left, right) = match self.node(id).kind {
            NodeKind::Split { left, right, .. } => (left, right),
            NodeKind::Leaf(_) => panic!("node {id} is already a leaf"),
        };
        assert!(self.is_leaf(left) && self.is_leaf(right), "children must be leaves");
        self.nodes[left] = None;
        self.nodes[right] = None;
        self.free.push(right);
        self.free.push(left);
        self.node_mut(id).kind = NodeKind::Leaf(leaf);
    }

    /// Leaf functions' value for the observation at `(t_index, x)`.
    pub fn value(&self, t_index: usize, x: &[f64]) -> f64 {
        self.leaf_function(self.route(x)).at(t_index)
    }
}

/// Sum-of-trees regression function.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub trees: Vec<Tree>,
}

impl Ensemble {
    /// `m` root-only trees with zero leaf functions.
    pub fn zeros(m: usize, t_len: usize) -> Self {
        Self {
            trees: (0..m)
                .map(|_| Tree::root_only(LeafFunction::zeros(t_len)))
                .collect(),
        }
    }

    pub fn m(&self) -> usize {
        self.trees.len()
    }

    /// `f(t, x)` at mesh position `t_index`.
    pub fn evaluate_index(&self, t_index: usize, x: &[f64]) -> f64 {
        self.trees.iter().map(|tree| tree.value(t_index, x)).sum()
    }

    /// `f(t, x)` for a mesh value `t`.
    pub fn evaluate(&self, mesh: &TargetMesh, t: f64, x: &[f64]) -> Result<f64> {
        Ok(self.evaluate_index(mesh.require_index(t)?, x))
    }

    /// `f` over the whole mesh for one covariate vector.
    pub fn curve(&self, t_len: usize, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; t_len];
        for tree in &self.trees {
            let leaf = tree.leaf_function(tree.route(x));
            for (o, v) in out.iter_mut().zip(leaf.values()) {
                *o += v;
            }
        }
        out
    }
}

/// Column-major covariates plus mesh positions, the view trees split on.
#[derive(Debug, Clone)]
pub struct Design {
    cols: Vec<Vec<f64>>,
    t_index: Vec<usize>,
    t_len: usize,
}

impl Design {
    pub fn from_dataset(data: &Dataset) -> Self {
        let p = data.schema().len();
        let mut cols = vec![Vec::with_capacity(data.len()); p];
        for obs in data.observations() {
            for (col, &v) in cols.iter_mut().zip(&obs.x) {
                col.push(v);
            }
        }
        Self {
            cols,
            t_index: data.observations().iter().map(|o| o.t_index).collect(),
            t_len: data.mesh().len(),
        }
    }

    pub fn n(&self) -> usize {
        self.t_index.len()
    }

    pub fn p(&self) -> usize {
        self.cols.len()
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    pub fn t_index(&self, i: usize) -> usize {
        self.t_index[i]
    }

    pub fn value(&self, i: usize, var: usize) -> f64 {
        self.cols[var][i]
    }

    pub fn column(&self, var: usize) -> &[f64] {
        &self.cols[var]
    }

    pub fn route(&self, tree: &Tree, i: usize) -> NodeId {
        tree.route_by(|v| self.cols[v][i])
    }

    /// Per-observation contribution of `tree`.
    pub fn tree_fit(&self, tree: &Tree) -> Vec<f64> {
        (0..self.n())
            .map(|i| tree.leaf_function(self.route(tree, i)).at(self.t_index[i]))
            .collect()
    }
}
