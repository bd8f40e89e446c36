//! Phylogenetic tree reconstruction from edge invariants of equivariant
//! (group-based and general Markov) models of DNA evolution.
//!
//! The crate is organised bottom-up:
//!
//! * [`trees`] – leaf-labelled topologies, bipartitions, split compatibility
//!   and tree popping, and the bough counts that drive expected ranks.
//! * [`repr`] – the five built-in permutation groups with explicit real
//!   irreducible representations, tensor-power multiplicities and
//!   symmetry-adapted bases.
//! * [`tensor`] – dense pattern tensors, flattenings, thin flattenings and the
//!   `*` contraction.
//! * [`models`] – equivariant transition matrices on rooted trees, the leaf
//!   joint distribution and multinomial site sampling.
//! * [`invariants`] – split scores, generator catalogues and minors, model-fit
//!   scores.
//! * [`inference`] – exhaustive and split-based reconstruction.
//! * [`io`] – Newick, FASTA, tensor containers and JSON reports.

pub mod error;
pub mod inference;
pub mod invariants;
pub mod io;
pub mod models;
pub mod repr;
pub mod tensor;
pub mod trees;

pub use error::{Error, Result};
pub use inference::{
    empirical_tensor, reconstruct_by_splits, reconstruct_exhaustive, Method, ReconstructOptions,
    ReconstructionResult, Tolerance, Warning,
};
pub use invariants::{
    edge_invariant_test, evaluate_generators, generator_catalog, genericity_check,
    model_fit_score, split_score, ScoreOptions, SplitScore,
};
pub use models::{
    joint_distribution, no_mutation_presentation, random_presentation, sample_alignment,
    Alignment, EvolutionaryPresentation,
};
pub use repr::{
    builtin_model, expected_rank_vector, invariant_projector, multiplicities,
    symmetry_adapted_basis, EquivariantModel, ModelKind, MultiplicityVector,
};
pub use tensor::{flatten, star_contract, thin_flatten, thin_rank, PatternTensor, ThinFlattening};
pub use trees::{
    bough_counts, edge_splits, enumerate_trivalent_topologies, splits_compatible,
    tree_from_splits, Bipartition, TreeTopology,
};

/// Nucleotide alphabet in canonical order.
pub const DNA: [char; 4] = ['A', 'C', 'G', 'T'];
