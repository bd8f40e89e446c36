//! Topology reconstruction from edge-invariant scores.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::invariants::{edge_invariant_test_with, score_splits, ScoreOptions, SplitScore};
use crate::models::Alignment;
use crate::repr::{expected_rank_vector, EquivariantModel};
use crate::tensor::PatternTensor;
use crate::trees::{
    enumerate_trivalent_topologies, nontrivial_bipartitions, splits_compatible, tree_from_splits, Bipartition,
    TreeTopology, MAX_ENUMERATED_LEAVES,
};

/// Largest leaf count for exhaustive topology search.
pub const MAX_EXHAUSTIVE_LEAVES: usize = 8;
/// Largest leaf count for split selection.
pub const MAX_SPLIT_LEAVES: usize = 12;
/// Pass threshold for exact tensors.
pub const EXACT_TOL: f64 = 1e-8;
/// Data-driven threshold: this fraction of the median nontrivial split score.
pub const DATA_DRIVEN_FRACTION: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum Tolerance {
    /// `1e-8`, for exact (simulated) tensors.
    #[default]
    Exact,
    /// A fixed fraction of the median nontrivial split score.
    DataDriven,
    Fixed(f64),
}

impl Tolerance {
    fn resolve(self, scores: &[SplitScore]) -> f64 {
        match self {
            Tolerance::Exact => EXACT_TOL,
            Tolerance::Fixed(t) => t,
            Tolerance::DataDriven => {
                let mut v: Vec<f64> = scores.iter().map(|s| s.score).collect();
                if v.is_empty() {
                    return EXACT_TOL;
                }
                v.sort_by(f64::total_cmp);
                let mid = v.len() / 2;
                let median = if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) };
                median * DATA_DRIVEN_FRACTION
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exhaustive,
    Splits,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructOptions {
    /// `None` picks exhaustive search up to 8 leaves, split selection beyond.
    pub method: Option<Method>,
    pub tol: Tolerance,
    pub score: ScoreOptions,
    /// Split selection only: when too few splits pass, fill the tree with the
    /// best remaining compatible splits (reported as a warning).
    pub complete: bool,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        ReconstructOptions { method: None, tol: Tolerance::Exact, score: ScoreOptions::default(), complete: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Warning {
    /// Zero or several topologies passed; the lowest total score was taken.
    NoUniquePass { passing: usize },
    /// Several topologies share the lowest total score.
    Tie { trees: Vec<String> },
    /// Achieved block ranks fall below `m_{β,T}`: the tensor sits on a
    /// degenerate locus where the decision procedure is not guaranteed.
    Genericity { split: Bipartition, achieved: Vec<usize>, expected: Vec<usize> },
    /// Passing splits that are incompatible with an already accepted one.
    Conflict { accepted: Bipartition, rejected: Bipartition },
    TooFewSplits { accepted: usize, needed: usize },
    /// Splits above the tolerance were used to complete the tree.
    Completed { splits: Vec<Bipartition> },
    /// The assembled tree failed the edge-invariant test.
    VerificationFailed { max_score: f64 },
}

#[derive(Clone, Debug, Serialize)]
pub struct CandidateTopology {
    pub tree: String,
    pub pass: bool,
    pub total_score: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReconstructionResult {
    #[serde(serialize_with = "serialize_tree")]
    pub tree: Option<TreeTopology>,
    pub method: Method,
    pub tol: f64,
    pub chosen_splits: Vec<SplitScore>,
    pub rejected_splits: Vec<SplitScore>,
    /// Exhaustive search only: every topology with its verdict.
    pub candidates: Vec<CandidateTopology>,
    /// Scores of every nontrivial bipartition, sorted by bipartition.
    pub scores: Vec<SplitScore>,
    pub warnings: Vec<Warning>,
}

fn serialize_tree<S: serde::Serializer>(tree: &Option<TreeTopology>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match tree {
        Some(t) => s.serialize_some(&t.to_newick()),
        None => s.serialize_none(),
    }
}

impl ReconstructionResult {
    /// A tree was found and nothing needed flagging.
    pub fn is_confident(&self) -> bool {
        self.tree.is_some() && self.warnings.is_empty()
    }

    pub fn genericity_warnings(&self) -> Vec<&Warning> {
        self.warnings.iter().filter(|w| matches!(w, Warning::Genericity { .. })).collect()
    }
}

/// Group-averages once (if requested) and scores every nontrivial bipartition.
fn prepare(psi: &PatternTensor, model: &EquivariantModel, opts: &ReconstructOptions) -> Result<(PatternTensor, Vec<SplitScore>)> {
    let prepared = if opts.score.group_average { psi.group_average(model)? } else { psi.clone() };
    let raw = ScoreOptions { group_average: false, ..opts.score };
    let scores = score_splits(&prepared, &nontrivial_bipartitions(psi.n()), model, &raw)?;
    Ok((prepared, scores))
}

fn genericity_warnings(
    model: &EquivariantModel,
    tree: &TreeTopology,
    scores: &[SplitScore],
) -> Result<Vec<Warning>> {
    let mut out = Vec::new();
    for s in scores {
        let Some(achieved) = &s.achieved else { continue };
        let expected = expected_rank_vector(model, tree, &s.split)?;
        if achieved.iter().zip(&expected.entries).any(|(a, e)| a < e) {
            out.push(Warning::Genericity { split: s.split, achieved: achieved.clone(), expected: expected.entries });
        }
    }
    Ok(out)
}

/// Dispatches on `opts.method`.
pub fn reconstruct(psi: &PatternTensor, model: &EquivariantModel, opts: &ReconstructOptions) -> Result<ReconstructionResult> {
    let method = opts.method.unwrap_or(if psi.n() <= MAX_EXHAUSTIVE_LEAVES { Method::Exhaustive } else { Method::Splits });
    match method {
        Method::Exhaustive => reconstruct_exhaustive(psi, model, opts),
        Method::Splits => reconstruct_by_splits(psi, model, opts),
    }
}

/// Runs the edge-invariant test against every trivalent topology and returns
/// the unique passer, or the lowest total score with a warning.
pub fn reconstruct_exhaustive(
    psi: &PatternTensor,
    model: &EquivariantModel,
    opts: &ReconstructOptions,
) -> Result<ReconstructionResult> {
    let n = psi.n();
    if !(3..=MAX_EXHAUSTIVE_LEAVES.min(MAX_ENUMERATED_LEAVES)).contains(&n) {
        return Err(Error::Capacity(format!("exhaustive search supports 3..={MAX_EXHAUSTIVE_LEAVES} leaves, got {n}")));
    }
    let (_, scores) = prepare(psi, model, opts)?;
    let tol = opts.tol.resolve(&scores);
    let by_split: BTreeMap<Bipartition, &SplitScore> = scores.iter().map(|s| (s.split, s)).collect();

    let topologies = enumerate_trivalent_topologies(n)?;
    let mut candidates = Vec::with_capacity(topologies.len());
    for tree in &topologies {
        let edges = tree.interior_splits();
        let pass = edges.iter().all(|e| by_split[e].score <= tol);
        let total_score = edges.iter().map(|e| by_split[e].score).sum();
        candidates.push(CandidateTopology { tree: tree.to_newick(), pass, total_score });
    }
    let passing: Vec<usize> = (0..candidates.len()).filter(|&i| candidates[i].pass).collect();
    let mut warnings = Vec::new();
    let best = if passing.len() == 1 {
        passing[0]
    } else {
        warnings.push(Warning::NoUniquePass { passing: passing.len() });
        let pool: Vec<usize> = if passing.is_empty() { (0..candidates.len()).collect() } else { passing.clone() };
        let min = pool.iter().map(|&i| candidates[i].total_score).fold(f64::INFINITY, f64::min);
        let slack = 1e-12 + 1e-9 * min.abs();
        let tied: Vec<usize> = pool.iter().copied().filter(|&i| candidates[i].total_score <= min + slack).collect();
        if tied.len() > 1 {
            warnings.push(Warning::Tie { trees: tied.iter().map(|&i| candidates[i].tree.clone()).collect() });
        }
        tied[0]
    };
    let tree = topologies[best].clone();
    let chosen_splits = tree.interior_splits().iter().map(|e| by_split[e].clone()).collect();
    warnings.extend(genericity_warnings(model, &tree, &scores)?);
    Ok(ReconstructionResult {
        tree: Some(tree),
        method: Method::Exhaustive,
        tol,
        chosen_splits,
        rejected_splits: Vec::new(),
        candidates,
        scores,
        warnings,
    })
}

/// Scores every nontrivial bipartition, accepts passing splits greedily in
/// ascending score order while they stay pairwise compatible, and assembles
/// the tree from them.
pub fn reconstruct_by_splits(
    psi: &PatternTensor,
    model: &EquivariantModel,
    opts: &ReconstructOptions,
) -> Result<ReconstructionResult> {
    let n = psi.n();
    if !(3..=MAX_SPLIT_LEAVES).contains(&n) {
        return Err(Error::Capacity(format!("split selection supports 3..={MAX_SPLIT_LEAVES} leaves, got {n}")));
    }
    let (prepared, scores) = prepare(psi, model, opts)?;
    let tol = opts.tol.resolve(&scores);
    let needed = n - 3;

    let mut order: Vec<&SplitScore> = scores.iter().collect();
    order.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.split.cmp(&b.split)));
    let mut accepted: Vec<&SplitScore> = Vec::new();
    let mut rejected: Vec<SplitScore> = Vec::new();
    let mut warnings = Vec::new();
    for s in order.iter().filter(|s| s.score <= tol) {
        match first_conflict(&accepted, &s.split)? {
            None => accepted.push(s),
            Some(c) => {
                warnings.push(Warning::Conflict { accepted: c, rejected: s.split });
                rejected.push((*s).clone());
            }
        }
    }
    if accepted.len() < needed && opts.complete {
        let mut filled = Vec::new();
        for s in order.iter().filter(|s| s.score > tol) {
            if accepted.len() == needed {
                break;
            }
            if first_conflict(&accepted, &s.split)?.is_none() {
                accepted.push(s);
                filled.push(s.split);
            }
        }
        warnings.push(Warning::Completed { splits: filled });
    }

    let mut result = ReconstructionResult {
        tree: None,
        method: Method::Splits,
        tol,
        chosen_splits: accepted.iter().map(|s| (*s).clone()).collect(),
        rejected_splits: rejected,
        candidates: Vec::new(),
        scores: Vec::new(),
        warnings,
    };
    if accepted.len() < needed {
        result.warnings.push(Warning::TooFewSplits { accepted: accepted.len(), needed });
        result.scores = scores;
        return Ok(result);
    }
    let splits: Vec<Bipartition> = accepted.iter().map(|s| s.split).collect();
    let tree = tree_from_splits(&splits, n)?;
    let raw = ScoreOptions { group_average: false, ..opts.score };
    let check = edge_invariant_test_with(&prepared, &tree, model, tol, &raw)?;
    if !check.pass {
        result.warnings.push(Warning::VerificationFailed { max_score: check.max_score() });
    }
    result.chosen_splits.sort_by_key(|s| s.split);
    result.warnings.extend(genericity_warnings(model, &tree, &scores)?);
    result.tree = Some(tree);
    result.scores = scores;
    Ok(result)
}

fn first_conflict(accepted: &[&SplitScore], split: &Bipartition) -> Result<Option<Bipartition>> {
    for a in accepted {
        if !splits_compatible(&a.split, split)? {
            return Ok(Some(a.split));
        }
    }
    Ok(None)
}

/// Relative pattern frequencies of an alignment, flagged stochastic.
pub fn empirical_tensor(alignment: &Alignment) -> Result<PatternTensor> {
    let n = alignment.n_taxa();
    let total = alignment.total_sites();
    if total == 0 {
        return Err(Error::Usage("alignment has no sites".into()));
    }
    let mut t = vec![0.0; 4usize.pow(n as u32)];
    for (pattern, &count) in &alignment.patterns {
        if pattern.chars().count() != n {
            return Err(Error::Parse(format!("pattern {pattern} does not have {n} states")));
        }
        let mut idx = 0;
        for c in pattern.chars() {
            let s = crate::DNA
                .iter()
                .position(|&d| d == c)
                .ok_or_else(|| Error::Parse(format!("state '{c}' is not one of ACGT")))?;
            idx = idx * 4 + s;
        }
        t[idx] += count as f64 / total as f64;
    }
    PatternTensor::new(n, 4, t)?.into_stochastic()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{joint_distribution, no_mutation_presentation, random_presentation};
    use crate::repr::ModelKind;

    fn s(x: &str) -> Bipartition {
        x.parse().unwrap()
    }

    fn simulate(kind: ModelKind, tree: &TreeTopology, seed: u64) -> PatternTensor {
        joint_distribution(&random_presentation(kind.model(), tree, seed, 10.0).unwrap()).unwrap()
    }

    #[test]
    fn exact_quartet_has_unique_passer() {
        let tree = tree_from_splits(&[s("1,2|3,4")], 4).unwrap();
        for kind in ModelKind::ALL {
            let psi = simulate(kind, &tree, 12);
            let res = reconstruct_exhaustive(&psi, kind.model(), &Default::default()).unwrap();
            assert_eq!(res.tree.as_ref(), Some(&tree), "{kind}");
            assert!(res.is_confident(), "{kind}: {:?}", res.warnings);
            assert_eq!(res.candidates.iter().filter(|c| c.pass).count(), 1);
        }
    }

    #[test]
    fn no_mutation_quartet_passes_all() {
        let tree = tree_from_splits(&[s("1,2|3,4")], 4).unwrap();
        let model = ModelKind::K81.model();
        let psi = joint_distribution(&no_mutation_presentation(model, &tree).unwrap()).unwrap();
        let res = reconstruct_exhaustive(&psi, model, &Default::default()).unwrap();
        assert!(res.candidates.iter().all(|c| c.pass));
        assert!(res.warnings.contains(&Warning::NoUniquePass { passing: 3 }));
        assert!(!res.genericity_warnings().is_empty());
        let res = reconstruct_by_splits(&psi, model, &Default::default()).unwrap();
        assert!(res.warnings.iter().any(|w| matches!(w, Warning::Conflict { .. })));
    }

    #[test]
    fn caterpillar_by_splits() {
        let tree = tree_from_splits(&[s("1,2|3,4,5,6"), s("1,2,3|4,5,6"), s("1,2,3,4|5,6")], 6).unwrap();
        let psi = simulate(ModelKind::Gmm, &tree, 3);
        let res = reconstruct_by_splits(&psi, ModelKind::Gmm.model(), &Default::default()).unwrap();
        assert_eq!(res.tree.as_ref(), Some(&tree));
        assert_eq!(res.chosen_splits.len(), 3);
        assert!(res.chosen_splits.iter().all(|c| c.score <= 1e-8));
        assert!(res.is_confident(), "{:?}", res.warnings);
    }

    #[test]
    fn mixture_is_not_silently_resolved() {
        let t1 = tree_from_splits(&[s("1,2|3,4")], 4).unwrap();
        let t2 = tree_from_splits(&[s("1,3|2,4")], 4).unwrap();
        let model = ModelKind::K81.model();
        let a = simulate(ModelKind::K81, &t1, 1);
        let b = simulate(ModelKind::K81, &t2, 2);
        let mix: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| 0.5 * (x + y)).collect();
        let mix = PatternTensor::new(4, 4, mix).unwrap();
        let res = reconstruct_by_splits(&mix, model, &Default::default()).unwrap();
        assert!(!res.is_confident());
        let res = reconstruct_exhaustive(&mix, model, &Default::default()).unwrap();
        assert!(!res.is_confident());
    }

    #[test]
    fn too_few_splits_and_completion() {
        let tree = tree_from_splits(&[s("1,2|3,4,5"), s("1,2,3|4,5")], 5).unwrap();
        let model = ModelKind::K81.model();
        let psi = simulate(ModelKind::K81, &tree, 5);
        let strict = ReconstructOptions { tol: Tolerance::Fixed(0.0), ..Default::default() };
        let res = reconstruct_by_splits(&psi, model, &strict).unwrap();
        // exact zeros are not guaranteed, so either nothing or a subset passes
        if res.tree.is_none() {
            assert!(res.warnings.iter().any(|w| matches!(w, Warning::TooFewSplits { .. })));
        }
        let completed = ReconstructOptions { tol: Tolerance::Fixed(-1.0), complete: true, ..Default::default() };
        let res = reconstruct_by_splits(&psi, model, &completed).unwrap();
        assert_eq!(res.tree.as_ref(), Some(&tree));
        assert!(res.warnings.iter().any(|w| matches!(w, Warning::Completed { .. })));
    }

    #[test]
    fn empirical_tensor_examples() {
        let taxa: Vec<String> = (1..=4).map(|i| i.to_string()).collect();
        let mut aln = Alignment::new(taxa.clone());
        aln.patterns.insert("AAAA".into(), 1);
        let t = empirical_tensor(&aln).unwrap();
        assert_eq!(t.get(&[0, 0, 0, 0]), 1.0);
        assert!(t.is_stochastic());

        let mut aln = Alignment::new(taxa.clone());
        aln.patterns.insert("ACGT".into(), 1);
        aln.patterns.insert("TGCA".into(), 1);
        let t = empirical_tensor(&aln).unwrap();
        assert_eq!(t.get(&[0, 1, 2, 3]), 0.5);
        assert_eq!(t.get(&[3, 2, 1, 0]), 0.5);
        assert!(empirical_tensor(&Alignment::new(taxa)).is_err());
    }

    #[test]
    fn data_driven_tolerance_is_median_fraction() {
        let mk = |v: f64| SplitScore {
            split: s("1,2|3,4"),
            per_block_residuals: vec![],
            score: v,
            expected: crate::repr::multiplicities(ModelKind::Gmm.model(), 1).unwrap(),
            achieved: None,
        };
        let scores = vec![mk(3.0), mk(1.0), mk(2.0)];
        assert_eq!(Tolerance::DataDriven.resolve(&scores), 0.02);
        assert_eq!(Tolerance::Exact.resolve(&scores), EXACT_TOL);
    }
}
