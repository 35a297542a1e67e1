//! Metropolis-Hastings grow/prune moves, leaf refreshes and prior draws.
//!
//! Split rule: a variable is chosen uniformly among those with at least one
//! cutpoint at the node, then a cutpoint uniformly among the node's distinct
//! values of that variable excluding the largest, so both children are
//! nonempty. A node with no cutpoint is a leaf with prior probability one;
//! the acceptance ratios below use that exact structure prior.

use rand::Rng;

use super::{Design, NodeId, NodeKind, Tree, TreePrior};
use crate::error::{PsbartError, Result};
use crate::gp::{GpKernel, LeafStats};

/// Everything a structure move needs besides the tree and the rng.
#[derive(Clone, Copy)]
pub struct MoveContext<'a> {
    pub design: &'a Design,
    /// Partial residuals the tree is fit to.
    pub residuals: &'a [f64],
    pub prior: &'a TreePrior,
    pub kernel: &'a GpKernel,
    pub sigma2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MoveKind {
    Grow,
    Prune,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoveOutcome {
    pub kind: MoveKind,
    pub accepted: bool,
    /// No admissible proposal existed; counts as a rejection.
    pub aborted: bool,
    pub log_ratio: f64,
}

impl MoveOutcome {
    fn aborted(kind: MoveKind) -> Self {
        Self {
            kind,
            accepted: false,
            aborted: true,
            log_ratio: f64::NEG_INFINITY,
        }
    }
}

/// Observation indices per node id; internal nodes get empty lists.
pub fn assign_leaves(tree: &Tree, design: &Design) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); tree.capacity()];
    for i in 0..design.n() {
        out[design.route(tree, i)].push(i);
    }
    out
}

pub fn leaf_stats(design: &Design, residuals: &[f64], idx: &[usize]) -> LeafStats {
    let mut stats = LeafStats::empty(design.t_len());
    for &i in idx {
        stats.push(design.t_index(i), residuals[i]);
    }
    stats
}

fn has_cutpoint(design: &Design, idx: &[usize], var: usize) -> bool {
    let col = design.column(var);
    match idx.first() {
        Some(&first) => idx.iter().any(|&i| col[i] != col[first]),
        None => false,
    }
}

/// Variables with at least one cutpoint among the observations `idx`.
pub fn available_vars(design: &Design, idx: &[usize]) -> Vec<usize> {
    (0..design.p())
        .filter(|&v| has_cutpoint(design, idx, v))
        .collect()
}

fn splittable(design: &Design, idx: &[usize]) -> bool {
    (0..design.p()).any(|v| has_cutpoint(design, idx, v))
}

/// Sorted distinct values of `var` among `idx`, without the largest.
pub fn cutpoints(design: &Design, idx: &[usize], var: usize) -> Vec<f64> {
    let col = design.column(var);
    let mut values: Vec<f64> = idx.iter().map(|&i| col[i]).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    values.pop();
    values
}

fn partition(design: &Design, idx: &[usize], var: usize, threshold: f64) -> (Vec<usize>, Vec<usize>) {
    let col = design.column(var);
    idx.iter().partition(|&&i| col[i] <= threshold)
}

/// `log q` for a would-be leaf at `depth` holding `idx`.
fn log_leaf_prior(prior: &TreePrior, depth: usize, design: &Design, idx: &[usize]) -> f64 {
    if splittable(design, idx) {
        (1.0 - prior.split_prob(depth)).ln()
    } else {
        0.0
    }
}

/// Likelihood and prior part of the grow ratio for splitting a leaf at
/// `depth` into `left_idx` / `right_idx`. The split-rule probabilities
/// cancel against the proposal and are omitted.
fn grow_core(
    ctx: &MoveContext<'_>,
    depth: usize,
    left_idx: &[usize],
    right_idx: &[usize],
) -> Result<f64> {
    let left = leaf_stats(ctx.design, ctx.residuals, left_idx);
    let right = leaf_stats(ctx.design, ctx.residuals, right_idx);
    let merged = left.merged(&right);
    let ll = ctx.kernel.marginal_loglik(&left, ctx.sigma2)?
        + ctx.kernel.marginal_loglik(&right, ctx.sigma2)?
        - ctx.kernel.marginal_loglik(&merged, ctx.sigma2)?;
    let p = ctx.prior.split_prob(depth);
    let structure = p.ln() - (1.0 - p).ln()
        + log_leaf_prior(ctx.prior, depth + 1, ctx.design, left_idx)
        + log_leaf_prior(ctx.prior, depth + 1, ctx.design, right_idx);
    Ok(ll + structure)
}

/// Grow-move proposal part: `P(prune | T*) w2*^-1 / (P(grow | T) b^-1)`.
fn grow_proposal(root_only_before: bool, leaves_before: usize, prunable_after: usize) -> f64 {
    let p_grow: f64 = if root_only_before { 1.0 } else { 0.5 };
    let p_prune: f64 = 0.5;
    p_prune.ln() - p_grow.ln() + (leaves_before as f64).ln() - (prunable_after as f64).ln()
}

fn sibling_is_leaf(tree: &Tree, id: NodeId) -> bool {
    let Some(parent) = tree.node(id).parent else {
        return false;
    };
    match tree.node(parent).kind {
        NodeKind::Split { left, right, .. } => {
            let sibling = if left == id { right } else { left };
            tree.is_leaf(sibling)
        }
        NodeKind::Leaf(_) => unreachable!("parent must be a split"),
    }
}

/// Log MH ratio for splitting `leaf` on `x[var] <= threshold`.
pub fn grow_log_ratio(
    tree: &Tree,
    ctx: &MoveContext<'_>,
    assignment: &[Vec<usize>],
    leaf: NodeId,
    var: usize,
    threshold: f64,
) -> Result<f64> {
    if !tree.is_leaf(leaf) {
        return Err(PsbartError::InvalidInput(format!("node {leaf} is not a leaf")));
    }
    let (left_idx, right_idx) = partition(ctx.design, &assignment[leaf], var, threshold);
    grow_ratio_for(tree, ctx, leaf, &left_idx, &right_idx)
}

fn grow_ratio_for(
    tree: &Tree,
    ctx: &MoveContext<'_>,
    leaf: NodeId,
    left_idx: &[usize],
    right_idx: &[usize],
) -> Result<f64> {
    if left_idx.is_empty() || right_idx.is_empty() {
        return Err(PsbartError::InvalidInput(
            "split leaves a child without observations".into(),
        ));
    }
    let depth = tree.node(leaf).depth;
    let prunable_after = tree.prunable().len() + 1 - usize::from(sibling_is_leaf(tree, leaf));
    Ok(grow_core(ctx, depth, left_idx, right_idx)?
        + grow_proposal(tree.is_root_only(), tree.n_leaves(), prunable_after))
}

/// Log MH ratio for collapsing the two leaf children of `node`.
pub fn prune_log_ratio(
    tree: &Tree,
    ctx: &MoveContext<'_>,
    assignment: &[Vec<usize>],
    node: NodeId,
) -> Result<f64> {
    let (left, right) = match tree.node(node).kind {
        NodeKind::Split { left, right, .. } if tree.is_leaf(left) && tree.is_leaf(right) => {
            (left, right)
        }
        _ => {
            return Err(PsbartError::InvalidInput(format!(
                "node {node} does not have two leaf children"
            )))
        }
    };
    let depth = tree.node(node).depth;
    let core = grow_core(ctx, depth, &assignment[left], &assignment[right])?;
    let proposal = grow_proposal(node == Tree::ROOT, tree.n_leaves() - 1, tree.prunable().len());
    Ok(-(core + proposal))
}

fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    u.ln() < log_ratio
}

/// Grow half of [`propose_move`].
pub fn propose_grow<R: Rng + ?Sized>(
    tree: &mut Tree,
    ctx: &MoveContext<'_>,
    rng: &mut R,
) -> Result<MoveOutcome> {
    let assignment = assign_leaves(tree, ctx.design);
    let leaves = tree.leaves();
    let leaf = leaves[rng.random_range(0..leaves.len())];
    let idx = &assignment[leaf];
    let vars = available_vars(ctx.design, idx);
    if vars.is_empty() {
        return Ok(MoveOutcome::aborted(MoveKind::Grow));
    }
    let var = vars[rng.random_range(0..vars.len())];
    let cuts = cutpoints(ctx.design, idx, var);
    let threshold = cuts[rng.random_range(0..cuts.len())];
    let (left_idx, right_idx) = partition(ctx.design, idx, var, threshold);
    let log_ratio = grow_ratio_for(tree, ctx, leaf, &left_idx, &right_idx)?;
    let accepted = accept(log_ratio, rng);
    if accepted {
        let left_fn = ctx.kernel.sample_posterior(
            &leaf_stats(ctx.design, ctx.residuals, &left_idx),
            ctx.sigma2,
            rng,
        )?;
        let right_fn = ctx.kernel.sample_posterior(
            &leaf_stats(ctx.design, ctx.residuals, &right_idx),
            ctx.sigma2,
            rng,
        )?;
        tree.split_leaf(leaf, var, threshold, left_fn, right_fn);
    }
    Ok(MoveOutcome {
        kind: MoveKind::Grow,
        accepted,
        aborted: false,
        log_ratio,
    })
}

/// Prune half of [`propose_move`].
pub fn propose_prune<R: Rng + ?Sized>(
    tree: &mut Tree,
    ctx: &MoveContext<'_>,
    rng: &mut R,
) -> Result<MoveOutcome> {
    let candidates = tree.prunable();
    if candidates.is_empty() {
        return Ok(MoveOutcome::aborted(MoveKind::Prune));
    }
    let node = candidates[rng.random_range(0..candidates.len())];
    let assignment = assign_leaves(tree, ctx.design);
    let log_ratio = prune_log_ratio(tree, ctx, &assignment, node)?;
    let accepted = accept(log_ratio, rng);
    if accepted {
        let NodeKind::Split { left, right, .. } = tree.node(node).kind else {
            unreachable!()
        };
        let mut merged = assignment[left].clone();
        merged.extend_from_slice(&assignment[right]);
        let f = ctx.kernel.sample_posterior(
            &leaf_stats(ctx.design, ctx.residuals, &merged),
            ctx.sigma2,
            rng,
        )?;
        tree.collapse(node, f);
    }
    Ok(MoveOutcome {
        kind: MoveKind::Prune,
        accepted,
        aborted: false,
        log_ratio,
    })
}

/// One structure update: grow with probability 1/2 (always from a
/// root-only tree), otherwise prune.
pub fn propose_move<R: Rng + ?Sized>(
    tree: &mut Tree,
    ctx: &MoveContext<'_>,
    rng: &mut R,
) -> Result<MoveOutcome> {
    if tree.is_root_only() || rng.random_bool(0.5) {
        propose_grow(tree, ctx, rng)
    } else {
        propose_prune(tree, ctx, rng)
    }
}

/// Redraws every leaf function from its conditional posterior given the
/// residuals routed to it. Leaves are visited in ascending id order.
pub fn refresh_leaves<R: Rng + ?Sized>(
    tree: &mut Tree,
    ctx: &MoveContext<'_>,
    rng: &mut R,
) -> Result<()> {
    let assignment = assign_leaves(tree, ctx.design);
    for leaf in tree.leaves() {
        let stats = leaf_stats(ctx.design, ctx.residuals, &assignment[leaf]);
        let f = ctx.kernel.sample_posterior(&stats, ctx.sigma2, rng)?;
        tree.set_leaf_function(leaf, f);
    }
    Ok(())
}

/// Draws a tree from the structure prior over the design, with leaf
/// functions from the GP prior.
pub fn sample_prior_tree<R: Rng + ?Sized>(
    prior: &TreePrior,
    design: &Design,
    kernel: &GpKernel,
    rng: &mut R,
) -> Tree {
    let mut tree = Tree::root_only(crate::gp::LeafFunction::zeros(kernel.len()));
    let mut stack: Vec<(NodeId, Vec<usize>)> = vec![(Tree::ROOT, (0..design.n()).collect())];
    while let Some((id, idx)) = stack.pop() {
        let vars = available_vars(design, &idx);
        if vars.is_empty() || !rng.random_bool(prior.split_prob(tree.node(id).depth)) {
            continue;
        }
        let var = vars[rng.random_range(0..vars.len())];
        let cuts = cutpoints(design, &idx, var);
        let threshold = cuts[rng.random_range(0..cuts.len())];
        let (left_idx, right_idx) = partition(design, &idx, var, threshold);
        let zeros = crate::gp::LeafFunction::zeros(kernel.len());
        let (left, right) = tree.split_leaf(id, var, threshold, zeros.clone(), zeros);
        stack.push((right, right_idx));
        stack.push((left, left_idx));
    }
    for leaf in tree.leaves() {
        let f = kernel.sample_prior(rng);
        tree.set_leaf_function(leaf, f);
    }
    tree
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CovariateSpec, Dataset, TargetMesh};
    use crate::gp::{GpConfig, LeafFunction};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn design(n: usize, p: usize, t_len: usize, seed: u64) -> Design {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mesh = TargetMesh::integer_range(1, t_len as i64).unwrap();
        let rows = (0..n)
            .map(|i| {
                let t = (i % t_len + 1) as f64;
                let x: Vec<f64> = (0..p).map(|_| rng.random_range(0.0..1.0)).collect();
                (t, x, 0.0)
            })
            .collect();
        let schema = (0..p).map(|j| CovariateSpec::continuous(format!("x{j}"))).collect();
        Design::from_dataset(&Dataset::from_rows(rows, mesh, None, schema).unwrap())
    }

    fn kernel(t_len: usize, tau2: f64) -> GpKernel {
        let mesh = TargetMesh::integer_range(1, t_len as i64).unwrap();
        GpKernel::new(GpConfig::new(2.0, tau2, mesh).unwrap()).unwrap()
    }

    #[test]
    fn cutpoints_exclude_maximum() {
        let d = design(6, 1, 2, 1);
        let idx: Vec<usize> = (0..6).collect();
        let cuts = cutpoints(&d, &idx, 0);
        assert_eq!(cuts.len(), 5);
        let max = d.column(0).iter().cloned().fold(f64::MIN, f64::max);
        assert!(cuts.iter().all(|&c| c < max));
    }

    #[test]
    fn grow_aborts_without_cutpoints() {
        let mesh = TargetMesh::integer_range(1, 2).unwrap();
        let rows = vec![(1.0, vec![0.5, 1.0], 0.1), (2.0, vec![0.5, 1.0], 0.3)];
        let schema = vec![CovariateSpec::continuous("a"), CovariateSpec::continuous("b")];
        let d = Design::from_dataset(&Dataset::from_rows(rows, mesh, None, schema).unwrap());
        let k = kernel(2, 0.1);
        let prior = TreePrior::default();
        let residuals = vec![0.1, 0.3];
        let ctx = MoveContext {
            design: &d,
            residuals: &residuals,
            prior: &prior,
            kernel: &k,
            sigma2: 1.0,
        };
        let mut tree = Tree::root_only(LeafFunction::zeros(2));
        let out = propose_grow(&mut tree, &ctx, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(out.aborted && !out.accepted);
        assert!(tree.is_root_only());
    }

    #[test]
    fn grow_and_prune_ratios_are_reciprocal() {
        let d = design(60, 3, 4, 2);
        let k = kernel(4, 0.2);
        let prior = TreePrior::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let residuals: Vec<f64> = (0..60).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ctx = MoveContext {
            design: &d,
            residuals: &residuals,
            prior: &prior,
            kernel: &k,
            sigma2: 0.5,
        };
        let mut tree = Tree::root_only(LeafFunction::zeros(4));
        for step in 0..6 {
            let assignment = assign_leaves(&tree, &d);
            let leaves = tree.leaves();
            let leaf = *leaves
                .iter()
                .find(|&&l| !available_vars(&d, &assignment[l]).is_empty())
                .unwrap();
            let var = available_vars(&d, &assignment[leaf])[step % 2];
            let cuts = cutpoints(&d, &assignment[leaf], var);
            let thr = cuts[cuts.len() / 2];
            let grow = grow_log_ratio(&tree, &ctx, &assignment, leaf, var, thr).unwrap();
            tree.split_leaf(leaf, var, thr, LeafFunction::zeros(4), LeafFunction::zeros(4));
            let assignment = assign_leaves(&tree, &d);
            let prune = prune_log_ratio(&tree, &ctx, &assignment, leaf).unwrap();
            assert!((grow + prune).abs() < 1e-10, "step {step}: {grow} vs {prune}");
        }
    }

    #[test]
    fn deep_grow_rarely_accepted_under_huge_beta() {
        let d = design(200, 2, 5, 4);
        let k = kernel(5, 0.01);
        let prior = TreePrior::new(0.95, 50.0).unwrap();
        let residuals = vec![0.0; 200];
        let ctx = MoveContext {
            design: &d,
            residuals: &residuals,
            prior: &prior,
            kernel: &k,
            sigma2: 1.0,
        };
        let mut base = Tree::root_only(LeafFunction::zeros(5));
        base.split_leaf(Tree::ROOT, 0, 0.5, LeafFunction::zeros(5), LeafFunction::zeros(5));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut accepted = 0;
        for _ in 0..10_000 {
            let mut tree = base.clone();
            if propose_grow(&mut tree, &ctx, &mut rng).unwrap().accepted {
                accepted += 1;
            }
        }
        assert!((accepted as f64) / 10_000.0 < 0.01);
    }

    #[test]
    fn moves_preserve_partition() {
        let d = design(120, 3, 4, 6);
        let k = kernel(4, 0.3);
        let prior = TreePrior::new(0.95, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let residuals: Vec<f64> = (0..120)
            .map(|i| if d.value(i, 0) < 0.4 { 1.0 } else { -1.0 } + rng.random_range(-0.1..0.1))
            .collect();
        let ctx = MoveContext {
            design: &d,
            residuals: &residuals,
            prior: &prior,
            kernel: &k,
            sigma2: 0.05,
        };
        let mut tree = Tree::root_only(LeafFunction::zeros(4));
        let mut accepted = 0;
        for _ in 0..500 {
            let out = propose_move(&mut tree, &ctx, &mut rng).unwrap();
            accepted += usize::from(out.accepted);
            let assignment = assign_leaves(&tree, &d);
            let total: usize = tree.leaves().iter().map(|&l| assignment[l].len()).sum();
            assert_eq!(total, d.n());
            assert!(tree.leaves().iter().all(|&l| !assignment[l].is_empty()));
            for id in tree.ids() {
                if let NodeKind::Split { left, right, .. } = tree.node(id).kind {
                    assert_eq!(tree.node(left).parent, Some(id));
                    assert_eq!(tree.node(right).parent, Some(id));
                }
            }
        }
        assert!(accepted > 0);
    }

    #[test]
    fn prior_split_frequency_by_depth() {
        let d = design(200, 2, 2, 8);
        let k = kernel(2, 0.1);
        let prior = TreePrior::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut nodes = [0usize; 4];
        let mut splits = [0usize; 4];
        for _ in 0..100_000 {
            let tree = sample_prior_tree(&prior, &d, &k, &mut rng);
            let assignment = assign_leaves(&tree, &d);
            for id in tree.ids() {
                let depth = tree.node(id).depth;
                if depth >= nodes.len() {
                    continue;
                }
                if tree.is_leaf(id) {
                    if splittable(&d, &assignment[id]) {
                        nodes[depth] += 1;
                    }
                } else {
                    nodes[depth] += 1;
                    splits[depth] += 1;
                }
            }
        }
        for depth in 0..3 {
            let p = prior.split_prob(depth);
            let n = nodes[depth] as f64;
            let freq = splits[depth] as f64 / n;
            let se = (p * (1.0 - p) / n).sqrt();
            assert!((freq - p).abs() < 3.0 * se, "depth {depth}: {freq} vs {p}");
        }
    }

    #[test]
    fn refresh_concentrates_with_data() {
        let k = kernel(3, 1.0);
        let prior = TreePrior::default();
        let mut sds = Vec::new();
        for &n in &[100usize, 10_000] {
            let mesh = TargetMesh::integer_range(1, 3).unwrap();
            let rows = (0..n).map(|i| (2.0, vec![i as f64], 0.0)).collect();
            let data =
                Dataset::from_rows(rows, mesh, None, vec![CovariateSpec::continuous("x")]).unwrap();
            let d = Design::from_dataset(&data);
            let residuals: Vec<f64> = (0..n).map(|i| 0.3 + if i % 2 == 0 { 0.5 } else { -0.5 }).collect();
            let ctx = MoveContext {
                design: &d,
                residuals: &residuals,
                prior: &prior,
                kernel: &k,
                sigma2: 1.0,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
            let mut tree = Tree::root_only(LeafFunction::zeros(3));
            let draws: Vec<f64> = (0..4000)
                .map(|_| {
                    refresh_leaves(&mut tree, &ctx, &mut rng).unwrap();
                    tree.leaf_function(Tree::ROOT).at(1)
                })
                .collect();
            let mean = draws.iter().sum::<f64>() / draws.len() as f64;
            let sd = (draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / draws.len() as f64).sqrt();
            let prec = 1.0 / k.matrix()[(1, 1)] + n as f64;
            let expected_mean = n as f64 * 0.3 / prec;
            assert!((mean - expected_mean).abs() < 4.0 * sd / 4000f64.sqrt());
            sds.push(sd);
        }
        let ratio = sds[0] / sds[1];
        assert!((ratio - 10.0).abs() < 1.0, "sd ratio {ratio}");
    }

    #[test]
    fn refresh_empty_leaf_is_prior_and_seeded() {
        let d = design(10, 1, 3, 10);
        let k = kernel(3, 0.5);
        let prior = TreePrior::default();
        let residuals = vec![0.2; 10];
        let ctx = MoveContext {
            design: &d,
            residuals: &residuals,
            prior: &prior,
            kernel: &k,
            sigma2: 1.0,
        };
        // Threshold above every value: the right leaf is empty.
        let mut tree = Tree::root_only(LeafFunction::zeros(3));
        let (_, right) =
            tree.split_leaf(Tree::ROOT, 0, 10.0, LeafFunction::zeros(3), LeafFunction::zeros(3));
        let mut a = tree.clone();
        let mut b = tree.clone();
        refresh_leaves(&mut a, &ctx, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        refresh_leaves(&mut b, &ctx, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 20_000;
        let mut sq = 0.0;
        for _ in 0..n {
            refresh_leaves(&mut tree, &ctx, &mut rng).unwrap();
            sq += tree.leaf_function(right).at(0).powi(2);
        }
        let var = sq / n as f64;
        let expected = k.matrix()[(0, 0)];
        assert!((var - expected).abs() < 4.0 * expected * (2.0 / n as f64).sqrt());
    }
}
