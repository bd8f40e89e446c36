//! Edge invariants: split scores from singular-value tails, generator
//! catalogues and minor evaluation, genericity checks and model fit.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::repr::{expected_rank_vector, multiplicities, EquivariantModel, ModelKind, MultiplicityVector, MAX_BASIS_POWER};
use crate::tensor::{rank_from_singular_values, thin_flatten, PatternTensor, DEFAULT_RANK_TOL};
use crate::trees::{all_bipartitions, edge_splits, Bipartition, TreeTopology};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreOptions {
    /// Project onto the invariant subspace before scoring.
    pub group_average: bool,
    /// Relative threshold for the reported achieved ranks.
    pub rank_tol: f64,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions { group_average: true, rank_tol: DEFAULT_RANK_TOL }
    }
}

/// How far the thin flattening of a tensor along one split is from having
/// block ranks at most `m`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SplitScore {
    pub split: Bipartition,
    /// `sqrt(Σ_{i > m_t} σ_i²)` per block.
    pub per_block_residuals: Vec<f64>,
    /// `sqrt(Σ_t d_t residual_t²) / ‖ψ‖`.
    pub score: f64,
    /// The edge-split target `m = m(1)`.
    pub expected: MultiplicityVector,
    /// Numerical block ranks at `rank_tol`; `None` when the split was
    /// trivial and not flattened.
    pub achieved: Option<Vec<usize>>,
}

pub fn split_score(psi: &PatternTensor, split: &Bipartition, model: &EquivariantModel) -> Result<SplitScore> {
    split_score_with(psi, split, model, &ScoreOptions::default())
}

pub fn split_score_with(
    psi: &PatternTensor,
    split: &Bipartition,
    model: &EquivariantModel,
    opts: &ScoreOptions,
) -> Result<SplitScore> {
    if opts.group_average {
        let avg = psi.group_average(model)?;
        return score_prepared(&avg, split, model, opts.rank_tol);
    }
    score_prepared(psi, split, model, opts.rank_tol)
}

/// Scores without any averaging; `psi` is used as given.
fn score_prepared(psi: &PatternTensor, split: &Bipartition, model: &EquivariantModel, rank_tol: f64) -> Result<SplitScore> {
    let target = multiplicities(model, 1)?;
    let (l1, l2) = split.sizes();
    if split.is_trivial() && l1.max(l2) > MAX_BASIS_POWER {
        // no tail can exist when one side is a single leaf
        return Ok(SplitScore {
            split: *split,
            per_block_residuals: vec![0.0; target.entries.len()],
            score: 0.0,
            expected: target,
            achieved: None,
        });
    }
    let tf = thin_flatten(psi, split, model)?;
    let svals = tf.singular_values();
    let residuals: Vec<f64> = svals
        .iter()
        .zip(&target.entries)
        .map(|(s, &m)| s.iter().skip(m).map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let norm = psi.norm();
    let score = if norm == 0.0 {
        0.0
    } else {
        residuals.iter().zip(&tf.dims).map(|(r, &d)| d as f64 * r * r).sum::<f64>().sqrt() / norm
    };
    let achieved = rank_from_singular_values(&svals, rank_tol).entries;
    Ok(SplitScore { split: *split, per_block_residuals: residuals, score, expected: target, achieved: Some(achieved) })
}

/// Scores many splits in parallel; results follow the input order.
pub fn score_splits(
    psi: &PatternTensor,
    splits: &[Bipartition],
    model: &EquivariantModel,
    opts: &ScoreOptions,
) -> Result<Vec<SplitScore>> {
    let prepared;
    let psi = if opts.group_average {
        prepared = psi.group_average(model)?;
        &prepared
    } else {
        psi
    };
    splits.par_iter().map(|s| score_prepared(psi, s, model, opts.rank_tol)).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct EdgeTestReport {
    pub tree: String,
    pub pass: bool,
    pub tol: f64,
    pub per_edge: Vec<SplitScore>,
}

impl EdgeTestReport {
    pub fn total_score(&self) -> f64 {
        self.per_edge.iter().map(|s| s.score).sum()
    }

    pub fn max_score(&self) -> f64 {
        self.per_edge.iter().map(|s| s.score).fold(0.0, f64::max)
    }
}

/// Passes iff every interior edge split of `tree` scores at most `tol`.
pub fn edge_invariant_test(
    psi: &PatternTensor,
    tree: &TreeTopology,
    model: &EquivariantModel,
    tol: f64,
) -> Result<EdgeTestReport> {
    edge_invariant_test_with(psi, tree, model, tol, &ScoreOptions::default())
}

pub fn edge_invariant_test_with(
    psi: &PatternTensor,
    tree: &TreeTopology,
    model: &EquivariantModel,
    tol: f64,
    opts: &ScoreOptions,
) -> Result<EdgeTestReport> {
    if tree.n_leaves() != psi.n() {
        return Err(Error::Usage(format!("tree has {} leaves, tensor {}", tree.n_leaves(), psi.n())));
    }
    let per_edge = score_splits(psi, &tree.interior_splits(), model, opts)?;
    let pass = per_edge.iter().all(|s| s.score <= tol);
    Ok(EdgeTestReport { tree: tree.to_newick(), pass, tol, per_edge })
}

#[derive(Clone, Debug, Serialize)]
pub struct GenericityEntry {
    pub split: Bipartition,
    pub is_edge: bool,
    pub achieved: Vec<usize>,
    pub expected: MultiplicityVector,
    /// Some block rank is strictly below its target.
    pub deficient: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GenericityReport {
    pub tree: String,
    pub rank_tol: f64,
    pub entries: Vec<GenericityEntry>,
}

impl GenericityReport {
    /// Every bipartition reaches its expected rank vector exactly.
    pub fn generic(&self) -> bool {
        self.entries.iter().all(|e| e.achieved == e.expected.entries)
    }

    pub fn deficient(&self) -> Vec<&GenericityEntry> {
        self.entries.iter().filter(|e| e.deficient).collect()
    }
}

/// Compares achieved block ranks with `m_{β,T}` over every bipartition, for
/// the given tree or (when `None`) the reconstructed one.
pub fn genericity_check(
    psi: &PatternTensor,
    model: &EquivariantModel,
    tree: Option<&TreeTopology>,
    opts: &ScoreOptions,
) -> Result<GenericityReport> {
    let n = psi.n();
    if !(2..=10).contains(&n) {
        return Err(Error::Capacity(format!("genericity check supports 2..=10 leaves, got {n}")));
    }
    let owned;
    let tree = match tree {
        Some(t) => t,
        None => {
            let result = crate::inference::reconstruct(psi, model, &Default::default())?;
            owned = result
                .tree
                .ok_or_else(|| Error::Undefined("no tree could be reconstructed".into()))?;
            &owned
        }
    };
    let prepared;
    let psi = if opts.group_average {
        prepared = psi.group_average(model)?;
        &prepared
    } else {
        psi
    };
    let edges: BTreeSet<Bipartition> = edge_splits(tree).into_iter().collect();
    let entries = all_bipartitions(n)
        .par_iter()
        .map(|split| {
            let tf = thin_flatten(psi, split, model)?;
            let achieved = rank_from_singular_values(&tf.singular_values(), opts.rank_tol).entries;
            let expected = expected_rank_vector(model, tree, split)?;
            let deficient = achieved.iter().zip(&expected.entries).any(|(a, e)| a < e);
            Ok(GenericityEntry { split: *split, is_edge: edges.contains(split), achieved, expected, deficient })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GenericityReport { tree: tree.to_newick(), rank_tol: opts.rank_tol, entries })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CatalogBlock {
    pub irrep: String,
    pub rows: usize,
    pub cols: usize,
    /// Order of the minors; 1 means the entries themselves must vanish.
    pub minor_order: usize,
    pub count: u128,
}

/// Generators of the edge ideal for a split with sides of size `l1`, `l2`:
/// the `(m_t + 1)`-minors of every thin-flattening block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct GeneratorCatalog {
    pub model: ModelKind,
    pub l1: usize,
    pub l2: usize,
    pub blocks: Vec<CatalogBlock>,
    pub total: u128,
    /// Degrees of the blocks that contribute at least one generator.
    pub degrees: BTreeSet<usize>,
}

impl GeneratorCatalog {
    pub fn count_of_degree(&self, degree: usize) -> u128 {
        self.blocks.iter().filter(|b| b.minor_order == degree).map(|b| b.count).sum()
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

pub fn generator_catalog(model: &EquivariantModel, l1: usize, l2: usize) -> Result<GeneratorCatalog> {
    let m = multiplicities(model, 1)?;
    let rows = multiplicities(model, l1)?;
    let cols = multiplicities(model, l2)?;
    let mut blocks = Vec::new();
    let mut degrees = BTreeSet::new();
    for (t, irrep) in model.irreps.iter().enumerate() {
        let (a, b) = (rows.entries[t], cols.entries[t]);
        let order = m.entries[t] + 1;
        let count = binomial(a, order) * binomial(b, order);
        if count > 0 {
            degrees.insert(order);
        }
        blocks.push(CatalogBlock { irrep: irrep.name.clone(), rows: a, cols: b, minor_order: order, count });
    }
    let total = blocks.iter().map(|b| b.count).sum();
    Ok(GeneratorCatalog { model: model.kind, l1, l2, blocks, total, degrees })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MinorEvaluation {
    pub max_abs: f64,
    pub evaluated: u128,
    /// Every generator was evaluated within the budget.
    pub exhausted: bool,
}

/// Advances `idx` to the next `r`-subset of `0..n` in lexicographic order.
fn next_subset(idx: &mut [usize], n: usize) -> bool {
    let r = idx.len();
    for i in (0..r).rev() {
        if idx[i] < n - r + i {
            idx[i] += 1;
            for j in i + 1..r {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Evaluates up to `budget` generators of the edge ideal on the thin
/// flattening of `psi`, in a fixed order: blocks by irrep, then row subsets
/// lexicographically, then column subsets.
pub fn evaluate_generators(
    psi: &PatternTensor,
    split: &Bipartition,
    model: &EquivariantModel,
    budget: u128,
) -> Result<MinorEvaluation> {
    if budget == 0 {
        return Err(Error::Usage("budget must be at least 1".into()));
    }
    let tf = thin_flatten(psi, split, model)?;
    let m = multiplicities(model, 1)?;
    let total = generator_catalog(model, tf.l1, tf.l2)?.total;
    let mut max_abs: f64 = 0.0;
    let mut evaluated: u128 = 0;
    'blocks: for (block, &mt) in tf.blocks.iter().zip(&m.entries) {
        let r = mt + 1;
        let (a, b) = block.shape();
        if a < r || b < r {
            continue;
        }
        let mut rows: Vec<usize> = (0..r).collect();
        loop {
            let mut cols: Vec<usize> = (0..r).collect();
            loop {
                if evaluated == budget {
                    break 'blocks;
                }
                let sub = DMatrix::from_fn(r, r, |i, j| block[(rows[i], cols[j])]);
                let value = if r == 1 { sub[(0, 0)] } else { sub.determinant() };
                max_abs = max_abs.max(value.abs());
                evaluated += 1;
                if !next_subset(&mut cols, b) {
                    break;
                }
            }
            if !next_subset(&mut rows, a) {
                break;
            }
        }
    }
    Ok(MinorEvaluation { max_abs, evaluated, exhausted: evaluated == total })
}

/// `‖ψ - avg_G ψ‖ / ‖ψ‖`: the relative violation of the linear invariants
/// that cut out `G`-invariant tensors.
pub fn model_fit_score(psi: &PatternTensor, model: &EquivariantModel) -> Result<f64> {
    let norm = psi.norm();
    if norm == 0.0 {
        return Err(Error::Undefined("model fit of the zero tensor".into()));
    }
    let avg = psi.group_average(model)?;
    let diff: f64 = psi.values().iter().zip(avg.values()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(diff.sqrt() / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{joint_distribution, no_mutation_presentation, random_presentation};
    use crate::trees::enumerate_trivalent_topologies;

    fn s(x: &str) -> Bipartition {
        x.parse().unwrap()
    }

    fn quartet_tensor(kind: ModelKind, seed: u64) -> PatternTensor {
        let tree = crate::trees::tree_from_splits(&[s("1,2|3,4")], 4).unwrap();
        joint_distribution(&random_presentation(kind.model(), &tree, seed, 10.0).unwrap()).unwrap()
    }

    #[test]
    fn published_catalogue_counts() {
        let cat = |k: ModelKind| generator_catalog(k.model(), 2, 2).unwrap();
        let k81 = cat(ModelKind::K81);
        assert_eq!((k81.total, k81.count_of_degree(2)), (144, 144));
        let k80 = cat(ModelKind::K80);
        assert_eq!((k80.total, k80.count_of_degree(2), k80.count_of_degree(1)), (56, 54, 2));
        let jc = cat(ModelKind::Jc69);
        assert_eq!((jc.total, jc.count_of_degree(2), jc.count_of_degree(1)), (12, 10, 2));
        assert_eq!(cat(ModelKind::Ssm).total, 6272);
        assert_eq!(cat(ModelKind::Gmm).total, binomial(16, 5).pow(2));
        let degrees: Vec<Vec<usize>> =
            ModelKind::ALL.iter().map(|&k| cat(k).degrees.into_iter().collect()).collect();
        assert_eq!(degrees, vec![vec![5], vec![3], vec![2], vec![1, 2], vec![1, 2]]);
    }

    #[test]
    fn binomial_matches_pascal() {
        let mut row = vec![1u128];
        for n in 1..=30usize {
            let mut next = vec![1u128; n + 1];
            for k in 1..n {
                next[k] = row[k - 1] + row[k];
            }
            row = next;
            for (k, &v) in row.iter().enumerate() {
                assert_eq!(binomial(n, k), v);
            }
        }
    }

    #[test]
    fn true_split_scores_zero() {
        for kind in ModelKind::ALL {
            let psi = quartet_tensor(kind, 4);
            let on = split_score(&psi, &s("1,2|3,4"), kind.model()).unwrap();
            assert!(on.score <= 1e-9, "{kind}: {}", on.score);
            assert_eq!(on.achieved.as_deref(), Some(&on.expected.entries[..]));
            let off = split_score(&psi, &s("1,3|2,4"), kind.model()).unwrap();
            assert!(off.score > 0.01, "{kind}: {}", off.score);
        }
    }

    #[test]
    fn no_mutation_passes_everywhere() {
        for kind in ModelKind::ALL {
            let model = kind.model();
            for tree in enumerate_trivalent_topologies(4).unwrap() {
                let psi = joint_distribution(&no_mutation_presentation(model, &tree).unwrap()).unwrap();
                for other in enumerate_trivalent_topologies(4).unwrap() {
                    let rep = edge_invariant_test(&psi, &other, model, 1e-12).unwrap();
                    assert!(rep.pass);
                }
            }
        }
    }

    #[test]
    fn zero_tensor_scores_zero_and_is_flagged() {
        let psi = PatternTensor::zeros(4, 4).unwrap();
        let model = ModelKind::K81.model();
        assert_eq!(split_score(&psi, &s("1,3|2,4"), model).unwrap().score, 0.0);
        let tree = crate::trees::tree_from_splits(&[s("1,2|3,4")], 4).unwrap();
        let rep = genericity_check(&psi, model, Some(&tree), &ScoreOptions::default()).unwrap();
        assert!(rep.entries.iter().all(|e| e.deficient));
        assert!(matches!(model_fit_score(&psi, model), Err(Error::Undefined(_))));
        let ev = evaluate_generators(&psi, &s("1,2|3,4"), model, 1000).unwrap();
        assert_eq!((ev.max_abs, ev.evaluated, ev.exhausted), (0.0, 144, true));
    }

    #[test]
    fn genericity_of_simulated_and_degenerate_tensors() {
        let tree = crate::trees::tree_from_splits(&[s("1,2|3,4")], 4).unwrap();
        for kind in ModelKind::ALL {
            let model = kind.model();
            let psi = quartet_tensor(kind, 8);
            let rep = genericity_check(&psi, model, Some(&tree), &ScoreOptions::default()).unwrap();
            assert!(rep.generic(), "{kind}");
            let flat = joint_distribution(&no_mutation_presentation(model, &tree).unwrap()).unwrap();
            let rep = genericity_check(&flat, model, Some(&tree), &ScoreOptions::default()).unwrap();
            let flagged: Vec<String> = rep.deficient().iter().map(|e| e.split.to_string()).collect();
            assert!(flagged.contains(&"1,3|2,4".to_string()), "{kind}");
            assert!(flagged.contains(&"1,4|2,3".to_string()), "{kind}");
        }
        let psi = quartet_tensor(ModelKind::K81, 8);
        let rep = genericity_check(&psi, ModelKind::K81.model(), None, &ScoreOptions::default()).unwrap();
        assert_eq!(rep.tree, tree.to_newick());
    }

    #[test]
    fn minors_agree_with_scores() {
        for kind in [ModelKind::K81, ModelKind::Jc69] {
            let model = kind.model();
            for seed in 0..10 {
                let psi = quartet_tensor(kind, seed);
                for split in ["1,2|3,4", "1,3|2,4", "1,4|2,3"] {
                    let score = split_score(&psi, &s(split), model).unwrap().score;
                    let minors = evaluate_generators(&psi, &s(split), model, u128::MAX).unwrap();
                    assert!(minors.exhausted);
                    assert_eq!(score <= 1e-8, minors.max_abs <= 1e-7, "{kind} {split}");
                }
            }
        }
        let psi = quartet_tensor(ModelKind::K81, 1);
        let on = evaluate_generators(&psi, &s("1,2|3,4"), ModelKind::K81.model(), 144).unwrap();
        assert!(on.max_abs <= 1e-10);
        let off = evaluate_generators(&psi, &s("1,3|2,4"), ModelKind::K81.model(), 144).unwrap();
        assert!(off.max_abs > 1e-4, "{}", off.max_abs);
        let partial = evaluate_generators(&psi, &s("1,3|2,4"), ModelKind::K81.model(), 10).unwrap();
        assert_eq!((partial.evaluated, partial.exhausted), (10, false));
    }

    #[test]
    fn subset_enumeration_is_lexicographic() {
        let mut idx = vec![0, 1];
        let mut seen = vec![idx.clone()];
        while next_subset(&mut idx, 4) {
            seen.push(idx.clone());
        }
        assert_eq!(seen, vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]);
    }

    #[test]
    fn fit_scores() {
        let psi = quartet_tensor(ModelKind::Jc69, 3);
        assert!(model_fit_score(&psi, ModelKind::Jc69.model()).unwrap() <= 1e-12);
        assert_eq!(model_fit_score(&psi, ModelKind::Gmm.model()).unwrap(), 0.0);
        let gmm = quartet_tensor(ModelKind::Gmm, 3);
        assert!(model_fit_score(&gmm, ModelKind::Jc69.model()).unwrap() > 0.01);
    }
}
