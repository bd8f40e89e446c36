//! Dense pattern tensors, flattenings, thin flattenings, the `*` contraction
//! and block ranks.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::repr::{symmetry_adapted_basis, EquivariantModel, ModelKind, MultiplicityVector};
use crate::trees::Bipartition;

/// Largest number of leaves a dense tensor may have (`4^12` entries).
pub const MAX_TENSOR_LEAVES: usize = 12;

/// Default relative singular-value threshold for exact tensors.
pub const DEFAULT_RANK_TOL: f64 = 1e-7;

/// Joint pattern values over `n` leaves with `k` states each. The entry for
/// pattern `(x_1, ..., x_n)` lives at `Σ x_i k^(n-i)` (leaf 1 most
/// significant).
#[derive(Clone, Debug, PartialEq)]
pub struct PatternTensor {
    n: usize,
    k: usize,
    values: Vec<f64>,
    stochastic: bool,
}

impl PatternTensor {
    pub fn new(n: usize, k: usize, values: Vec<f64>) -> Result<Self> {
        if k < 2 {
            return Err(Error::Usage(format!("state count must be at least 2, got {k}")));
        }
        if n > MAX_TENSOR_LEAVES {
            return Err(Error::Capacity(format!("{n} leaves exceeds the dense limit of {MAX_TENSOR_LEAVES}")));
        }
        let len = k.pow(n as u32);
        if values.len() != len {
            return Err(Error::Usage(format!("expected {len} entries, got {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Usage("tensor entries must be finite".into()));
        }
        Ok(PatternTensor { n, k, values, stochastic: false })
    }

    pub fn zeros(n: usize, k: usize) -> Result<Self> {
        Self::new(n, k, vec![0.0; k.pow(n as u32)])
    }

    /// `Σ_b b ⊗ ... ⊗ b`, unnormalised.
    pub fn diagonal(n: usize, k: usize) -> Result<Self> {
        let mut t = Self::zeros(n, k)?;
        for s in 0..k {
            let idx = t.index_of(&vec![s; n]);
            t.values[idx] = 1.0;
        }
        Ok(t)
    }

    /// Flags the tensor as a probability distribution after checking it is one.
    pub fn into_stochastic(mut self) -> Result<Self> {
        if self.values.iter().any(|&v| v < -1e-12) {
            return Err(Error::Usage("stochastic tensor has negative entries".into()));
        }
        let sum: f64 = self.values.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Usage(format!("stochastic tensor sums to {sum}")));
        }
        self.stochastic = true;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_stochastic(&self) -> bool {
        self.stochastic
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index_of(&self, pattern: &[usize]) -> usize {
        pattern.iter().fold(0, |acc, &s| acc * self.k + s)
    }

    pub fn pattern_of(&self, mut index: usize) -> Vec<usize> {
        let mut p = vec![0; self.n];
        for slot in p.iter_mut().rev() {
            *slot = index % self.k;
            index /= self.k;
        }
        p
    }

    pub fn get(&self, pattern: &[usize]) -> f64 {
        self.values[self.index_of(pattern)]
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn l1_distance(&self, other: &PatternTensor) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum()
    }

    pub fn max_abs_diff(&self, other: &PatternTensor) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Moves leaf `i` to label `perm[i-1]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<PatternTensor> {
        crate::trees::check_perm(perm, self.n)?;
        let mut out = vec![0.0; self.values.len()];
        let mut target = vec![0; self.n];
        for (x, &v) in self.values.iter().enumerate() {
            let p = self.pattern_of(x);
            for (i, &s) in p.iter().enumerate() {
                target[perm[i] - 1] = s;
            }
            out[self.index_of(&target)] = v;
        }
        Ok(PatternTensor { n: self.n, k: self.k, values: out, stochastic: self.stochastic })
    }

    /// `(1/|G|) Σ_g ρ(g)^{⊗n} ψ`.
    pub fn group_average(&self, model: &EquivariantModel) -> Result<PatternTensor> {
        self.check_model(model)?;
        let action = PatternAction::new(model, self.n);
        let mut out = vec![0.0; self.values.len()];
        for g in 0..model.order() {
            for (x, slot) in out.iter_mut().enumerate() {
                *slot += self.values[action.apply(g, x)];
            }
        }
        let w = 1.0 / model.order() as f64;
        out.iter_mut().for_each(|v| *v *= w);
        Ok(PatternTensor { n: self.n, k: self.k, values: out, stochastic: self.stochastic })
    }

    pub(crate) fn check_model(&self, model: &EquivariantModel) -> Result<()> {
        if model.k != self.k {
            return Err(Error::Usage(format!(
                "tensor has {} states but model {} has {}",
                self.k, model.kind, model.k
            )));
        }
        Ok(())
    }
}

/// Fast action of every group element on pattern indices, via lookup tables
/// over chunks of positions (least significant chunk first).
pub(crate) struct PatternAction {
    /// `(chunk_size, tables[g])` per chunk.
    chunks: Vec<(usize, usize)>,
    tables: Vec<Vec<Vec<usize>>>,
}

impl PatternAction {
    pub(crate) fn new(model: &EquivariantModel, n: usize) -> Self {
        const CHUNK: usize = 5;
        let mut lens = vec![CHUNK; n / CHUNK];
        if !n.is_multiple_of(CHUNK) {
            lens.push(n % CHUNK);
        }
        let mut kinds: Vec<usize> = lens.clone();
        kinds.sort_unstable();
        kinds.dedup();
        let tables: Vec<Vec<Vec<usize>>> = kinds
            .iter()
            .map(|&len| {
                (0..model.order())
                    .map(|g| (0..model.k.pow(len as u32)).map(|x| model.act_on_pattern(g, x, len)).collect())
                    .collect()
            })
            .collect();
        let chunks = lens
            .iter()
            .map(|len| (model.k.pow(*len as u32), kinds.binary_search(len).unwrap()))
            .collect();
        PatternAction { chunks, tables }
    }

    pub(crate) fn apply(&self, g: usize, mut x: usize) -> usize {
        let mut out = 0;
        let mut stride = 1;
        for &(size, table) in &self.chunks {
            out += self.tables[table][g][x % size] * stride;
            x /= size;
            stride *= size;
        }
        out
    }
}

/// Reshapes `t` into a matrix with the listed tensor positions (0-based) as
/// row and column indices, each in the given order (first = most significant).
fn reshape(t: &PatternTensor, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    let k = t.k;
    let n = t.n;
    let mut row_w = vec![0; n];
    let mut col_w = vec![0; n];
    let mut w = 1;
    for &p in rows.iter().rev() {
        row_w[p] = w;
        w *= k;
    }
    let nrows = w;
    w = 1;
    for &p in cols.iter().rev() {
        col_w[p] = w;
        w *= k;
    }
    let ncols = w;
    let mut m = DMatrix::zeros(nrows, ncols);
    let mut digits = vec![0usize; n];
    let (mut r, mut c) = (0usize, 0usize);
    for &v in &t.values {
        m[(r, c)] = v;
        // increment the mixed-radix counter, last position fastest
        for p in (0..n).rev() {
            digits[p] += 1;
            r += row_w[p];
            c += col_w[p];
            if digits[p] < k {
                break;
            }
            digits[p] = 0;
            r -= k * row_w[p];
            c -= k * col_w[p];
        }
    }
    m
}

/// Flattening along `β`: rows indexed by the joint state of the side holding
/// leaf 1, columns by the other side, leaves in ascending order on each.
pub fn flatten(psi: &PatternTensor, split: &Bipartition) -> Result<DMatrix<f64>> {
    if split.n() != psi.n {
        return Err(Error::Usage(format!("split over {} leaves, tensor over {}", split.n(), psi.n)));
    }
    let positions = |mask: u64| -> Vec<usize> { (0..psi.n).filter(|i| mask >> i & 1 == 1).collect() };
    Ok(reshape(psi, &positions(split.first_mask()), &positions(split.mask())))
}

/// Per-irrep copy-1 blocks of a flattening expressed in symmetry-adapted bases.
#[derive(Clone, Debug, Serialize)]
pub struct ThinFlattening {
    pub split: Bipartition,
    pub model: ModelKind,
    pub l1: usize,
    pub l2: usize,
    /// Block `t` has size `m(l1)_t x m(l2)_t`.
    #[serde(skip)]
    pub blocks: Vec<DMatrix<f64>>,
    /// Irrep dimensions `d_t`.
    pub dims: Vec<usize>,
    pub rows: MultiplicityVector,
    pub cols: MultiplicityVector,
    /// Largest entry outside the `(t, r)` diagonal blocks.
    pub leakage: f64,
    /// Largest entrywise gap between a copy block and the copy-1 block.
    pub copy_disagreement: f64,
}

/// Applies `Bᵀ` to the rows of `m` (`m` is `k^l x c`), using the basis'
/// orbit-sparse columns.
fn transform_rows(m: &DMatrix<f64>, model: &EquivariantModel, l: usize) -> Result<DMatrix<f64>> {
    let basis = symmetry_adapted_basis(model, l)?;
    // work on the transpose so each basis vector combines contiguous columns
    let mt = m.transpose();
    let mut out = DMatrix::zeros(mt.nrows(), basis.size());
    for (i, v) in basis.vectors().iter().enumerate() {
        let mut col = out.column_mut(i);
        for (&p, &c) in basis.support(v).iter().zip(&v.coeffs) {
            col.axpy(c, &mt.column(p as usize), 1.0);
        }
    }
    Ok(out.transpose())
}

/// Thin flattening of `ψ` along `β` for the given model. Exactly invariant
/// tensors give vanishing `leakage` and `copy_disagreement`; empirical ones
/// report how far they are from that.
pub fn thin_flatten(psi: &PatternTensor, split: &Bipartition, model: &EquivariantModel) -> Result<ThinFlattening> {
    psi.check_model(model)?;
    let (l1, l2) = split.sizes();
    let m = flatten(psi, split)?;
    // B1ᵀ M, then (B1ᵀ M) B2 = (B2ᵀ (B1ᵀ M)ᵀ)ᵀ
    let left = transform_rows(&m, model, l1)?;
    let full = transform_rows(&left.transpose(), model, l2)?.transpose();

    let b1 = symmetry_adapted_basis(model, l1)?;
    let b2 = symmetry_adapted_basis(model, l2)?;
    let dims = model.dims();
    let label = |b: &crate::repr::SymmetryAdaptedBasis| -> Vec<(usize, usize)> {
        b.vectors().iter().map(|v| (v.irrep, v.copy)).collect()
    };
    let (rl, cl) = (label(&b1), label(&b2));
    let mut leakage: f64 = 0.0;
    for (j, cj) in cl.iter().enumerate() {
        for (i, ri) in rl.iter().enumerate() {
            if ri != cj {
                leakage = leakage.max(full[(i, j)].abs());
            }
        }
    }
    let (m1, m2) = (b1.multiplicities().clone(), b2.multiplicities().clone());
    let mut blocks = Vec::with_capacity(dims.len());
    let mut copy_disagreement: f64 = 0.0;
    for t in 0..dims.len() {
        let (a, b) = (m1.entries[t], m2.entries[t]);
        let block_at = |r: usize| -> DMatrix<f64> {
            if a == 0 || b == 0 {
                return DMatrix::zeros(a, b);
            }
            full.view((b1.column_index(t, r, 0), b2.column_index(t, r, 0)), (a, b)).into_owned()
        };
        let first = block_at(0);
        for r in 1..dims[t] {
            let other = block_at(r);
            if a > 0 && b > 0 {
                copy_disagreement = copy_disagreement.max((&other - &first).amax());
            }
        }
        blocks.push(first);
    }
    Ok(ThinFlattening { split: *split, model: model.kind, l1, l2, blocks, dims, rows: m1, cols: m2, leakage, copy_disagreement })
}

impl ThinFlattening {
    /// Rebuilds the flattening from the blocks, replicating each across its
    /// `d_t` copies. Matches `flatten` for exactly invariant tensors.
    pub fn reassemble(&self) -> Result<DMatrix<f64>> {
        let model = self.model.model();
        let b1 = symmetry_adapted_basis(model, self.l1)?;
        let b2 = symmetry_adapted_basis(model, self.l2)?;
        let mut mid = DMatrix::zeros(b1.size(), b2.size());
        for (t, block) in self.blocks.iter().enumerate() {
            if block.is_empty() {
                continue;
            }
            for r in 0..self.dims[t] {
                mid.view_mut((b1.column_index(t, r, 0), b2.column_index(t, r, 0)), block.shape())
                    .copy_from(block);
            }
        }
        // B1 mid B2ᵀ, with the sparse bases applied through their transposes
        let mut rows = DMatrix::zeros(b1.size(), b2.size());
        for (i, v) in b1.vectors().iter().enumerate() {
            for (&p, &c) in b1.support(v).iter().zip(&v.coeffs) {
                let src = mid.row(i) * c;
                let mut dst = rows.row_mut(p as usize);
                dst += src;
            }
        }
        let mut out = DMatrix::zeros(b1.size(), b2.size());
        for (j, v) in b2.vectors().iter().enumerate() {
            for (&p, &c) in b2.support(v).iter().zip(&v.coeffs) {
                out.column_mut(p as usize).axpy(c, &rows.column(j), 1.0);
            }
        }
        Ok(out)
    }

    /// Singular values of every block, in decreasing order.
    pub fn singular_values(&self) -> Vec<Vec<f64>> {
        self.blocks.iter().map(singular_values).collect()
    }
}

pub(crate) fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Numerical block ranks of a thin flattening.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankVector {
    pub entries: Vec<usize>,
    pub tol: f64,
}

impl RankVector {
    pub fn total(&self) -> usize {
        self.entries.iter().sum()
    }

    /// `Σ_t d_t rk_t`, the rank of the full flattening.
    pub fn weighted(&self, dims: &[usize]) -> usize {
        self.entries.iter().zip(dims).map(|(r, d)| r * d).sum()
    }
}

/// Counts singular values above `tol · σ_max`, with `σ_max` taken over all
/// blocks together.
pub fn thin_rank(tf: &ThinFlattening, tol: f64) -> RankVector {
    rank_from_singular_values(&tf.singular_values(), tol)
}

pub(crate) fn rank_from_singular_values(svals: &[Vec<f64>], tol: f64) -> RankVector {
    let smax = svals.iter().flat_map(|s| s.first()).fold(0.0f64, |a, &b| a.max(b));
    let entries = svals
        .iter()
        .map(|s| if smax == 0.0 { 0 } else { s.iter().filter(|&&x| x > tol * smax).count() })
        .collect();
    RankVector { entries, tol }
}

/// Numerical rank of a dense matrix relative to its largest singular value.
pub fn matrix_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    rank_from_singular_values(&[singular_values(m)], tol).entries[0]
}

/// The generalised `*` operation: contracts `φ1` (indices labelled `x`) with
/// `φ2` (labelled `y`) over the shared labels `z`. The result is indexed by
/// the remaining labels in ascending order, which are returned alongside.
pub fn star_contract(
    phi1: &PatternTensor,
    x: &[usize],
    phi2: &PatternTensor,
    y: &[usize],
    z: &[usize],
) -> Result<(PatternTensor, Vec<usize>)> {
    if z.is_empty() {
        return Err(Error::Usage("contraction needs at least one shared index".into()));
    }
    if phi1.k != phi2.k {
        return Err(Error::Usage("tensors have different state counts".into()));
    }
    if x.len() != phi1.n || y.len() != phi2.n {
        return Err(Error::Usage("label lists must match tensor orders".into()));
    }
    let position = |labels: &[usize], l: usize| labels.iter().position(|&a| a == l);
    let mut zx = Vec::with_capacity(z.len());
    let mut zy = Vec::with_capacity(z.len());
    for &l in z {
        match (position(x, l), position(y, l)) {
            (Some(a), Some(b)) => {
                zx.push(a);
                zy.push(b);
            }
            _ => return Err(Error::Usage(format!("shared index {l} missing from an operand"))),
        }
    }
    let free_x: Vec<usize> = (0..x.len()).filter(|i| !z.contains(&x[*i])).collect();
    let free_y: Vec<usize> = (0..y.len()).filter(|i| !z.contains(&y[*i])).collect();
    let mut labels: Vec<usize> = free_x.iter().map(|&i| x[i]).chain(free_y.iter().map(|&i| y[i])).collect();
    let mut sorted = labels.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != labels.len() {
        return Err(Error::Usage("free indices of the operands overlap".into()));
    }
    let product = reshape(phi1, &free_x, &zx) * reshape(phi2, &zy, &free_y);
    // product rows: free_x order, cols: free_y order; scatter into sorted labels
    let k = phi1.k;
    let n_out = labels.len();
    let mut out = PatternTensor::zeros(n_out, k)?;
    let order: Vec<usize> = labels.iter().map(|l| sorted.binary_search(l).unwrap()).collect();
    let mut pattern = vec![0; n_out];
    let (nx, ny) = (free_x.len(), free_y.len());
    for r in 0..product.nrows() {
        for c in 0..product.ncols() {
            let mut rr = r;
            for i in (0..nx).rev() {
                pattern[order[i]] = rr % k;
                rr /= k;
            }
            let mut cc = c;
            for i in (0..ny).rev() {
                pattern[order[nx + i]] = cc % k;
                cc /= k;
            }
            let idx = out.index_of(&pattern);
            out.values[idx] = product[(r, c)];
        }
    }
    labels.sort_unstable();
    Ok((out, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn split(s: &str) -> Bipartition {
        s.parse().unwrap()
    }

    fn random_tensor(n: usize, seed: u64) -> PatternTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = 4usize.pow(n as u32);
        PatternTensor::new(n, 4, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_flattening() {
        let psi = PatternTensor::diagonal(2, 4).unwrap();
        let m = flatten(&psi, &Bipartition::from_mask(2, 0b10).unwrap()).unwrap();
        assert_eq!(m, DMatrix::identity(4, 4));
    }

    #[test]
    fn single_entry_flattening() {
        let mut psi = PatternTensor::zeros(4, 4).unwrap();
        let idx = psi.index_of(&[0, 1, 2, 3]);
        psi.values[idx] = 1.0;
        let m = flatten(&psi, &split("1,3|2,4")).unwrap();
        // row (A, G) = 0*4 + 2, column (C, T) = 1*4 + 3
        assert_eq!(m[(2, 7)], 1.0);
        assert_eq!(m.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn flatten_is_an_isometry() {
        let psi = random_tensor(5, 3);
        for s in ["1,2|3,4,5", "1,4|2,3,5", "1|2,3,4,5", "1,2,3,5|4"] {
            let m = flatten(&psi, &split(s)).unwrap();
            assert!((m.norm() - psi.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn flatten_matches_direct_indexing() {
        let psi = random_tensor(4, 9);
        let m = flatten(&psi, &split("1,3|2,4")).unwrap();
        for x in 0..psi.len() {
            let p = psi.pattern_of(x);
            assert_eq!(m[(p[0] * 4 + p[2], p[1] * 4 + p[3])], psi.values[x]);
        }
    }

    #[test]
    fn no_mutation_quartet_blocks() {
        let psi = PatternTensor::diagonal(4, 4).unwrap();
        let gmm = thin_flatten(&psi, &split("1,2|3,4"), ModelKind::Gmm.model()).unwrap();
        assert_eq!(gmm.blocks.len(), 1);
        assert_eq!(gmm.blocks[0].shape(), (16, 16));
        assert_eq!(thin_rank(&gmm, 1e-9).entries, vec![4]);

        let k81 = thin_flatten(&psi, &split("1,2|3,4"), ModelKind::K81.model()).unwrap();
        assert!(k81.blocks.iter().all(|b| b.shape() == (4, 4)));
        assert_eq!(thin_rank(&k81, 1e-9).entries, vec![1, 1, 1, 1]);
        assert!(k81.leakage < 1e-12);
    }

    #[test]
    fn zero_tensor_has_zero_rank() {
        let psi = PatternTensor::zeros(4, 4).unwrap();
        for kind in ModelKind::ALL {
            let tf = thin_flatten(&psi, &split("1,2|3,4"), kind.model()).unwrap();
            assert_eq!(thin_rank(&tf, 1e-7).total(), 0);
        }
    }

    #[test]
    fn invariant_tensors_do_not_leak_and_reassemble() {
        for kind in ModelKind::ALL {
            let model = kind.model();
            let psi = random_tensor(4, 11).group_average(model).unwrap();
            for s in ["1,2|3,4", "1,3|2,4", "1|2,3,4"] {
                let tf = thin_flatten(&psi, &split(s), model).unwrap();
                assert!(tf.leakage < 1e-10, "{kind} {s} leakage {}", tf.leakage);
                assert!(tf.copy_disagreement < 1e-10, "{kind} {s}");
                let back = tf.reassemble().unwrap();
                let m = flatten(&psi, &split(s)).unwrap();
                assert!((back - m).amax() < 1e-10);
            }
        }
    }

    #[test]
    fn flattening_rank_is_weighted_block_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for kind in ModelKind::ALL {
            let model = kind.model();
            // low-rank invariant tensor: averaged sum of two product tensors over 12|34
            let mut psi = PatternTensor::zeros(4, 4).unwrap();
            for _ in 0..2 {
                let u: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
                let v: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
                for i in 0..16 {
                    for j in 0..16 {
                        psi.values[i * 16 + j] += u[i] * v[j];
                    }
                }
            }
            let psi = psi.group_average(model).unwrap();
            let s = split("1,2|3,4");
            let tf = thin_flatten(&psi, &s, model).unwrap();
            let rv = thin_rank(&tf, 1e-9);
            assert_eq!(matrix_rank(&flatten(&psi, &s).unwrap(), 1e-9), rv.weighted(&tf.dims), "{kind}");
        }
    }

    #[test]
    fn group_average_matches_projector() {
        let psi = random_tensor(3, 2);
        for kind in ModelKind::ALL {
            let model = kind.model();
            let p = crate::repr::invariant_projector(model, 3).unwrap();
            let direct = &p * nalgebra::DVector::from_column_slice(psi.values());
            let avg = psi.group_average(model).unwrap();
            for (a, b) in avg.values().iter().zip(direct.iter()) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn star_with_identity_relabels() {
        let id = PatternTensor::diagonal(2, 4).unwrap();
        let (glued, labels) = star_contract(&id, &[1, 2], &id, &[2, 3], &[2]).unwrap();
        assert_eq!(labels, vec![1, 3]);
        assert_eq!(glued, id);

        let phi = random_tensor(3, 4);
        let (out, labels) = star_contract(&phi, &[1, 2, 3], &id, &[3, 7], &[3]).unwrap();
        assert_eq!(labels, vec![1, 2, 7]);
        assert_eq!(out.values(), phi.values());
        assert!(matches!(star_contract(&phi, &[1, 2, 3], &id, &[3, 7], &[]), Err(Error::Usage(_))));
    }

    #[test]
    fn star_flattens_to_matrix_product() {
        // φ1 over {1,2,c}, φ2 over {c,3,4}: flatten(φ1 *_c φ2, 12|34) = flatten(φ1,12|c) flatten(φ2,c|34)
        for seed in 0..5 {
            let phi1 = random_tensor(3, 100 + seed);
            let phi2 = random_tensor(3, 200 + seed);
            let (glued, labels) = star_contract(&phi1, &[1, 2, 9], &phi2, &[9, 3, 4], &[9]).unwrap();
            assert_eq!(labels, vec![1, 2, 3, 4]);
            let lhs = flatten(&glued, &split("1,2|3,4")).unwrap();
            let a = flatten(&phi1, &split("1,2|3")).unwrap();
            let b = flatten(&phi2, &split("1|2,3")).unwrap();
            assert!((lhs - a * b).amax() < 1e-10);
        }
    }

    #[test]
    fn star_respects_thin_blocks() {
        // blockwise product identity for invariant operands
        for kind in ModelKind::ALL {
            let model = kind.model();
            let phi1 = random_tensor(3, 7).group_average(model).unwrap();
            let phi2 = random_tensor(3, 8).group_average(model).unwrap();
            let (glued, _) = star_contract(&phi1, &[1, 2, 9], &phi2, &[9, 3, 4], &[9]).unwrap();
            let whole = thin_flatten(&glued, &split("1,2|3,4"), model).unwrap();
            let a = thin_flatten(&phi1, &split("1,2|3"), model).unwrap();
            let b = thin_flatten(&phi2, &split("1|2,3"), model).unwrap();
            for t in 0..whole.blocks.len() {
                if whole.blocks[t].is_empty() {
                    continue;
                }
                let prod = &a.blocks[t] * &b.blocks[t];
                assert!((&whole.blocks[t] - prod).amax() < 1e-10, "{kind} block {t}");
            }
        }
    }

    #[test]
    fn stochastic_flag_checks_entries() {
        let psi = PatternTensor::diagonal(2, 4).unwrap();
        assert!(psi.clone().into_stochastic().is_err());
        let vals: Vec<f64> = psi.values().iter().map(|v| v / 4.0).collect();
        assert!(PatternTensor::new(2, 4, vals).unwrap().into_stochastic().unwrap().is_stochastic());
        assert!(matches!(PatternTensor::zeros(13, 4), Err(Error::Capacity(_))));
    }
}
