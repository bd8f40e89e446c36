//! File formats and machine-readable reports.

pub mod fasta;
pub mod newick;
pub mod tensor_file;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::inference::{CandidateTopology, Method, ReconstructionResult, Warning};
use crate::invariants::SplitScore;
use crate::models::EvolutionaryPresentation;
use crate::repr::{expected_rank_vector, ModelKind};
use crate::trees::{Bipartition, TreeTopology};

#[derive(Serialize)]
struct EdgeMatrixJson {
    /// Leaf labels below the edge.
    below: Vec<String>,
    matrix: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct PresentationJson<'a> {
    model: ModelKind,
    newick: String,
    taxa: &'a [String],
    root_distribution: &'a [f64],
    edge_matrices: Vec<EdgeMatrixJson>,
}

/// JSON form of a presentation: the tree in Newick written from the
/// presentation's root (which must be interior), the root distribution and
/// one row-major matrix per edge in Newick post-order.
pub fn presentation_to_json(pres: &EvolutionaryPresentation, taxa: &[String]) -> Result<String> {
    let tree = pres.tree();
    if taxa.len() != tree.n_leaves() {
        return Err(Error::Usage("one taxon name per leaf is required".into()));
    }
    if tree.is_leaf(pres.root()) && tree.n_vertices() > 1 {
        return Err(Error::Usage("presentation JSON needs an interior root".into()));
    }
    let mut edge_matrices = Vec::new();
    for v in newick::postorder(tree, pres.root()) {
        let a = pres.edge_matrix(v).expect("non-root vertex has an edge matrix");
        let below = leaves_below(tree, v, pres.parent(v).unwrap()).into_iter().map(|l| taxa[l].clone()).collect();
        let matrix = (0..a.nrows()).map(|i| a.row(i).iter().copied().collect()).collect();
        edge_matrices.push(EdgeMatrixJson { below, matrix });
    }
    let doc = PresentationJson {
        model: pres.model(),
        newick: newick::write_rooted(tree, pres.root(), Some(taxa)),
        taxa,
        root_distribution: pres.root_distribution(),
        edge_matrices,
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

fn leaves_below(tree: &TreeTopology, v: usize, parent: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut stack = vec![(v, parent)];
    while let Some((x, p)) = stack.pop() {
        if tree.is_leaf(x) {
            out.push(x);
        }
        stack.extend(tree.neighbors(x).iter().filter(|&&y| y != p).map(|&y| (y, x)));
    }
    out.sort_unstable();
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct BipartitionReport {
    pub split: Bipartition,
    pub per_block_residuals: Vec<f64>,
    pub score: f64,
    pub expected_rank: Vec<usize>,
    pub achieved_rank: Option<Vec<usize>>,
}

/// Scores of individual bipartitions.
#[derive(Clone, Debug, Serialize)]
pub struct ScoreReport {
    pub model: ModelKind,
    pub n: usize,
    pub bipartitions: Vec<BipartitionReport>,
    pub warnings: Vec<Warning>,
}

impl ScoreReport {
    /// Expected ranks are the edge-split target `m`.
    pub fn new(model: ModelKind, n: usize, scores: &[SplitScore]) -> Self {
        let bipartitions = scores
            .iter()
            .map(|s| BipartitionReport {
                split: s.split,
                per_block_residuals: s.per_block_residuals.clone(),
                score: s.score,
                expected_rank: s.expected.entries.clone(),
                achieved_rank: s.achieved.clone(),
            })
            .collect();
        ScoreReport { model, n, bipartitions, warnings: Vec::new() }
    }
}

/// A reconstruction in the report schema, plus the chosen tree.
#[derive(Clone, Debug, Serialize)]
pub struct ReconstructReport {
    pub model: ModelKind,
    pub n: usize,
    pub method: Method,
    pub tol: f64,
    pub tree: Option<String>,
    pub taxa: Vec<String>,
    pub chosen_splits: Vec<Bipartition>,
    pub candidates: Vec<CandidateTopology>,
    /// Expected ranks are `m_{β,T}` for the chosen tree when there is one.
    pub bipartitions: Vec<BipartitionReport>,
    pub warnings: Vec<Warning>,
}

impl ReconstructReport {
    pub fn new(model: ModelKind, result: &ReconstructionResult, taxa: &[String]) -> Result<Self> {
        let n = taxa.len();
        let mut bipartitions = ScoreReport::new(model, n, &result.scores).bipartitions;
        if let Some(tree) = &result.tree {
            for b in &mut bipartitions {
                b.expected_rank = expected_rank_vector(model.model(), tree, &b.split)?.entries;
            }
        }
        Ok(ReconstructReport {
            model,
            n,
            method: result.method,
            tol: result.tol,
            tree: result.tree.as_ref().map(|t| newick::write(t, Some(taxa))),
            taxa: taxa.to_vec(),
            chosen_splits: result.chosen_splits.iter().map(|s| s.split).collect(),
            candidates: result.candidates.clone(),
            bipartitions,
            warnings: result.warnings.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::random_presentation;

    #[test]
    fn presentation_json_lists_every_edge() {
        let parsed = newick::parse("((a,b),c,(d,e));").unwrap();
        let pres = random_presentation(ModelKind::K80.model(), &parsed.tree, 1, 10.0).unwrap();
        let text = presentation_to_json(&pres, &parsed.taxa).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["model"], "K80");
        assert_eq!(v["edge_matrices"].as_array().unwrap().len(), parsed.tree.n_vertices() - 1);
        assert_eq!(v["edge_matrices"][0]["below"], serde_json::json!(["a"]));
        let reparsed = newick::parse(v["newick"].as_str().unwrap()).unwrap();
        assert_eq!(reparsed.tree, parsed.tree);
    }
}
