//! Evolutionary presentations (equivariant Markov parameters on a rooted
//! tree), the leaf joint distribution they induce, and alignment sampling.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repr::{EquivariantModel, ModelKind};
use crate::tensor::PatternTensor;
use crate::trees::TreeTopology;

/// Default diagonal weight used by [`random_presentation`].
pub const DEFAULT_CONCENTRATION: f64 = 10.0;

const EQUIVARIANCE_TOL: f64 = 1e-12;

/// `G`-equivariant transition matrices on the edges of a rooted tree plus a
/// root distribution. `A[x][y]` is the weight of child state `x` given parent
/// state `y`, so stochastic matrices have columns summing to 1.
#[derive(Clone, Debug)]
pub struct EvolutionaryPresentation {
    model: ModelKind,
    tree: TreeTopology,
    root: usize,
    parent: Vec<Option<usize>>,
    preorder: Vec<usize>,
    /// Matrix on the edge into each non-root vertex.
    matrices: Vec<Option<DMatrix<f64>>>,
    root_distribution: DVector<f64>,
    stochastic: bool,
}

impl EvolutionaryPresentation {
    /// Builds a presentation rooted at `root`. `matrices` maps each non-root
    /// vertex to the matrix on the edge from its parent.
    pub fn new(
        model: &EquivariantModel,
        tree: TreeTopology,
        root: usize,
        root_distribution: Vec<f64>,
        mut matrices: BTreeMap<usize, DMatrix<f64>>,
    ) -> Result<Self> {
        if root >= tree.n_vertices() {
            return Err(Error::Usage(format!("root {root} is not a vertex")));
        }
        if root_distribution.len() != model.k {
            return Err(Error::Usage("root distribution has the wrong length".into()));
        }
        let (parent, preorder) = tree.rooted_order(root);
        let mut slots = vec![None; tree.n_vertices()];
        for v in 0..tree.n_vertices() {
            if v == root {
                continue;
            }
            let a = matrices
                .remove(&v)
                .ok_or_else(|| Error::Usage(format!("missing matrix on the edge into vertex {v}")))?;
            if a.shape() != (model.k, model.k) {
                return Err(Error::Usage(format!("matrix into vertex {v} is not {0}x{0}", model.k)));
            }
            if a.iter().any(|x| !x.is_finite()) {
                return Err(Error::Usage(format!("matrix into vertex {v} has non-finite entries")));
            }
            if equivariance_defect(model, &a) >= EQUIVARIANCE_TOL {
                return Err(Error::Usage(format!(
                    "matrix into vertex {v} is not {}-equivariant",
                    model.kind
                )));
            }
            slots[v] = Some(a);
        }
        if let Some(v) = matrices.keys().next() {
            return Err(Error::Usage(format!("matrix given for vertex {v}, which has no parent edge")));
        }
        let pi = DVector::from_vec(root_distribution);
        let stochastic = pi.iter().all(|&x| x >= 0.0)
            && (pi.sum() - 1.0).abs() <= 1e-12
            && slots.iter().flatten().all(is_stochastic_matrix);
        Ok(EvolutionaryPresentation {
            model: model.kind,
            tree,
            root,
            parent,
            preorder,
            matrices: slots,
            root_distribution: pi,
            stochastic,
        })
    }

    pub fn model(&self) -> ModelKind {
        self.model
    }

    pub fn tree(&self) -> &TreeTopology {
        &self.tree
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }

    /// Vertices with every parent before its children.
    pub fn preorder(&self) -> &[usize] {
        &self.preorder
    }

    /// Matrix on the edge from `parent(v)` to `v`; `None` for the root.
    pub fn edge_matrix(&self, v: usize) -> Option<&DMatrix<f64>> {
        self.matrices[v].as_ref()
    }

    pub fn root_distribution(&self) -> &[f64] {
        self.root_distribution.as_slice()
    }

    /// Nonnegative entries, unit column sums and a probability root vector.
    pub fn is_stochastic(&self) -> bool {
        self.stochastic
    }

    /// The same process rooted at `new_root`. Stochastic edges that flip
    /// direction are reversed with Bayes' rule, so the joint distribution is
    /// unchanged; other edges are transposed.
    pub fn reroot(&self, new_root: usize) -> Result<Self> {
        if new_root >= self.tree.n_vertices() {
            return Err(Error::Usage(format!("root {new_root} is not a vertex")));
        }
        // path from the old root down to the new one
        let mut path = vec![new_root];
        while let Some(p) = self.parent[*path.last().unwrap()] {
            path.push(p);
        }
        path.reverse();
        let mut matrices: BTreeMap<usize, DMatrix<f64>> = BTreeMap::new();
        for v in 0..self.tree.n_vertices() {
            if let Some(a) = &self.matrices[v] {
                if !path.contains(&v) {
                    matrices.insert(v, a.clone());
                }
            }
        }
        let mut pi = self.root_distribution.clone();
        for w in path.windows(2) {
            let (up, down) = (w[0], w[1]);
            let a = self.matrices[down].as_ref().unwrap();
            let reversed = if self.stochastic {
                let next = a * &pi;
                let mut b = DMatrix::zeros(a.nrows(), a.ncols());
                for x in 0..a.nrows() {
                    for y in 0..a.ncols() {
                        b[(y, x)] = if next[x] > 0.0 {
                            a[(x, y)] * pi[y] / next[x]
                        } else {
                            // unreachable state: any distribution will do
                            if x == y { 1.0 } else { 0.0 }
                        };
                    }
                }
                pi = next;
                b
            } else {
                a.transpose()
            };
            matrices.insert(up, reversed);
        }
        let model = self.model.model();
        let mut out = EvolutionaryPresentation::new(model, self.tree.clone(), new_root, pi.as_slice().to_vec(), matrices)?;
        out.stochastic = out.stochastic || self.stochastic;
        Ok(out)
    }
}

/// `max_g max |A ρ(g) - ρ(g) A|`.
pub fn equivariance_defect(model: &EquivariantModel, a: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for g in &model.elements {
        for x in 0..model.k {
            for y in 0..model.k {
                worst = worst.max((a[(g.apply(x), g.apply(y))] - a[(x, y)]).abs());
            }
        }
    }
    worst
}

fn is_stochastic_matrix(a: &DMatrix<f64>) -> bool {
    a.iter().all(|&x| x >= 0.0) && a.column_iter().all(|c| (c.sum() - 1.0).abs() <= 1e-12)
}

/// `G`-orbits of matrix positions `(row, col)`; each orbit is one free
/// parameter of an equivariant matrix. Sorted by their first position.
pub fn matrix_orbits(model: &EquivariantModel) -> Vec<Vec<(usize, usize)>> {
    let k = model.k;
    let mut seen = vec![false; k * k];
    let mut orbits = Vec::new();
    for x in 0..k {
        for y in 0..k {
            if seen[x * k + y] {
                continue;
            }
            let mut orbit: Vec<(usize, usize)> =
                model.elements.iter().map(|g| (g.apply(x), g.apply(y))).collect();
            orbit.sort_unstable();
            orbit.dedup();
            for &(a, b) in &orbit {
                seen[a * k + b] = true;
            }
            orbits.push(orbit);
        }
    }
    orbits
}

fn default_root(tree: &TreeTopology) -> usize {
    if tree.n_vertices() > tree.n_leaves() {
        tree.n_leaves()
    } else {
        0
    }
}

fn uniform(k: usize) -> Vec<f64> {
    vec![1.0 / k as f64; k]
}

/// Random stochastic equivariant parameters, deterministic in `seed`. Each
/// diagonal orbit gets weight `concentration · (0.5 + U)` and each
/// off-diagonal orbit an `Exp(1)` weight, then columns are normalised. The
/// root distribution is uniform and the root is the first interior vertex.
pub fn random_presentation(
    model: &EquivariantModel,
    tree: &TreeTopology,
    seed: u64,
    concentration: f64,
) -> Result<EvolutionaryPresentation> {
    if !(concentration.is_finite() && concentration > 0.0) {
        return Err(Error::Usage(format!("concentration must be positive, got {concentration}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let orbits = matrix_orbits(model);
    let root = default_root(tree);
    let (_, preorder) = tree.rooted_order(root);
    let mut matrices = BTreeMap::new();
    for &v in preorder.iter().filter(|&&v| v != root) {
        let mut a = DMatrix::zeros(model.k, model.k);
        for orbit in &orbits {
            let diagonal = orbit[0].0 == orbit[0].1;
            let w: f64 = if diagonal {
                concentration * (0.5 + rng.random::<f64>())
            } else {
                rng.sample(Exp1)
            };
            for &(x, y) in orbit {
                a[(x, y)] = w;
            }
        }
        for mut col in a.column_iter_mut() {
            let s = col.sum();
            col /= s;
        }
        matrices.insert(v, a);
    }
    EvolutionaryPresentation::new(model, tree.clone(), root, uniform(model.k), matrices)
}

/// Identity on every edge, uniform root.
pub fn no_mutation_presentation(model: &EquivariantModel, tree: &TreeTopology) -> Result<EvolutionaryPresentation> {
    let root = default_root(tree);
    let matrices = (0..tree.n_vertices())
        .filter(|&v| v != root)
        .map(|v| (v, DMatrix::identity(model.k, model.k)))
        .collect();
    EvolutionaryPresentation::new(model, tree.clone(), root, uniform(model.k), matrices)
}

/// Leaf joint distribution of a presentation, by post-order message passing.
/// The result is flagged stochastic when the presentation is.
pub fn joint_distribution(pres: &EvolutionaryPresentation) -> Result<PatternTensor> {
    let k = pres.root_distribution.len();
    let tree = &pres.tree;
    let n = tree.n_leaves();
    if n > crate::tensor::MAX_TENSOR_LEAVES {
        return Err(Error::Capacity(format!("{n} leaves exceeds the dense limit")));
    }
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); tree.n_vertices()];
    for &v in &pres.preorder {
        if let Some(p) = pres.parent[v] {
            children[p].push(v);
        }
    }

    // message from v to its parent: rows = parent state, columns = joint
    // state of the leaves below v (in `leaves[v]` order)
    let mut messages: Vec<Option<(Vec<f64>, usize)>> = vec![None; tree.n_vertices()];
    let mut leaves: Vec<Vec<usize>> = vec![Vec::new(); tree.n_vertices()];
    for &v in pres.preorder.iter().rev() {
        let mut order: Vec<usize> = Vec::new();
        if tree.is_leaf(v) {
            order.push(v);
        }
        for &c in &children[v] {
            order.extend_from_slice(&leaves[c]);
        }
        leaves[v] = order;
        let width = k.pow(leaves[v].len() as u32);
        if v == pres.root {
            break;
        }
        let table = vertex_table(tree.is_leaf(v), &children[v], &mut messages, k, width, None);
        // message[y][cfg] = Σ_x A[x][y] table[x][cfg]
        let a = pres.matrices[v].as_ref().unwrap();
        let mut msg = vec![0.0; k * width];
        for y in 0..k {
            let row = &mut msg[y * width..(y + 1) * width];
            for x in 0..k {
                let w = a[(x, y)];
                if w != 0.0 {
                    for (r, t) in row.iter_mut().zip(&table[x * width..(x + 1) * width]) {
                        *r += w * t;
                    }
                }
            }
        }
        messages[v] = Some((msg, width));
    }
    let root = pres.root;
    let width = k.pow(leaves[root].len() as u32);
    let pi = pres.root_distribution.as_slice();
    let flat = vertex_table(tree.is_leaf(root), &children[root], &mut messages, k, width, Some(pi));

    // reorder from DFS leaf order to label order
    let order = &leaves[root];
    let mut out = vec![0.0; flat.len()];
    let mut weights = vec![0usize; n];
    for (i, &leaf) in order.iter().enumerate() {
        weights[i] = k.pow((n - 1 - leaf) as u32);
    }
    let mut digits = vec![0usize; n];
    let mut target = 0usize;
    for &v in &flat {
        out[target] = v;
        for p in (0..n).rev() {
            digits[p] += 1;
            target += weights[p];
            if digits[p] < k {
                break;
            }
            digits[p] = 0;
            target -= k * weights[p];
        }
    }
    let psi = PatternTensor::new(n, k, out)?;
    if pres.stochastic {
        psi.into_stochastic()
    } else {
        Ok(psi)
    }
}

/// Table over (state of `v`, joint state of the leaves below `v`). With
/// `root_weights` the state is summed out against them instead and a single
/// row is returned.
fn vertex_table(
    is_leaf: bool,
    children: &[usize],
    messages: &mut [Option<(Vec<f64>, usize)>],
    k: usize,
    width: usize,
    root_weights: Option<&[f64]>,
) -> Vec<f64> {
    let parts: Vec<(Vec<f64>, usize)> = children.iter().map(|&c| messages[c].take().unwrap()).collect();
    let rows = if root_weights.is_some() { 1 } else { k };
    let mut table = vec![0.0; rows * width];
    for s in 0..k {
        let weight = root_weights.map_or(1.0, |w| w[s]);
        if weight == 0.0 {
            continue;
        }
        // outer product of: the leaf's own indicator, then each child's row s
        let mut acc = vec![weight];
        if is_leaf {
            let mut next = vec![0.0; k];
            next[s] = weight;
            acc = next;
        }
        for (msg, w) in &parts {
            let row = &msg[s * w..(s + 1) * w];
            let mut next = Vec::with_capacity(acc.len() * w);
            for &a in &acc {
                next.extend(row.iter().map(|&r| a * r));
            }
            acc = next;
        }
        let dest = if root_weights.is_some() { 0 } else { s };
        for (t, a) in table[dest * width..(dest + 1) * width].iter_mut().zip(&acc) {
            *t += a;
        }
    }
    table
}

/// A multiset of site patterns over named taxa.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alignment {
    pub taxa: Vec<String>,
    /// Pattern over `ACGT` (one character per taxon) to positive count.
    pub patterns: BTreeMap<String, u64>,
}

impl Alignment {
    pub fn new(taxa: Vec<String>) -> Self {
        Alignment { taxa, patterns: BTreeMap::new() }
    }

    /// Builds an alignment from equal-length sequences over `ACGT`.
    pub fn from_sequences(taxa: Vec<String>, sequences: &[String]) -> Result<Self> {
        if taxa.len() != sequences.len() {
            return Err(Error::Usage("one sequence per taxon is required".into()));
        }
        let len = sequences.first().map_or(0, |s| s.len());
        if sequences.iter().any(|s| s.len() != len) {
            return Err(Error::Parse("sequences have different lengths".into()));
        }
        let bytes: Vec<&[u8]> = sequences.iter().map(|s| s.as_bytes()).collect();
        let mut aln = Alignment::new(taxa);
        for site in 0..len {
            let column: String = bytes.iter().map(|s| s[site].to_ascii_uppercase() as char).collect();
            if let Some(c) = column.chars().find(|c| !crate::DNA.contains(c)) {
                return Err(Error::Parse(format!("state '{c}' at site {} is not one of ACGT", site + 1)));
            }
            *aln.patterns.entry(column).or_insert(0) += 1;
        }
        Ok(aln)
    }

    pub fn n_taxa(&self) -> usize {
        self.taxa.len()
    }

    pub fn total_sites(&self) -> u64 {
        self.patterns.values().sum()
    }

    /// One sequence per taxon, sites grouped by pattern in sorted order.
    pub fn to_sequences(&self) -> Vec<String> {
        let mut seqs = vec![String::new(); self.taxa.len()];
        for (pattern, &count) in &self.patterns {
            for (seq, c) in seqs.iter_mut().zip(pattern.chars()) {
                seq.extend(std::iter::repeat_n(c, count as usize));
            }
        }
        seqs
    }
}

/// Draws `sites` i.i.d. patterns from a stochastic tensor, deterministic in
/// `seed`. Taxa are named `1..n`.
pub fn sample_alignment(psi: &PatternTensor, sites: u64, seed: u64) -> Result<Alignment> {
    if !psi.is_stochastic() {
        return Err(Error::Usage("sampling requires a stochastic tensor".into()));
    }
    if psi.k() != crate::DNA.len() {
        return Err(Error::Usage("sampling is only defined for the four nucleotide states".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let taxa = (1..=psi.n()).map(|i| i.to_string()).collect();
    let mut aln = Alignment::new(taxa);
    let mut remaining = sites;
    let mut mass: f64 = psi.values().iter().map(|&v| v.max(0.0)).sum();
    for (x, &v) in psi.values().iter().enumerate() {
        if remaining == 0 {
            break;
        }
        let p = v.max(0.0);
        if p == 0.0 {
            continue;
        }
        let q = if mass <= p { 1.0 } else { (p / mass).clamp(0.0, 1.0) };
        let count = Binomial::new(remaining, q)
            .map_err(|e| Error::Consistency(format!("binomial draw failed: {e}")))?
            .sample(&mut rng);
        mass -= p;
        remaining -= count;
        if count > 0 {
            let pattern: String = psi.pattern_of(x).iter().map(|&s| crate::DNA[s]).collect();
            aln.patterns.insert(pattern, count);
        }
    }
    Ok(aln)
}
