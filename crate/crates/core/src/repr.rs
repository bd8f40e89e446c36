//! Permutation groups acting on the nucleotide alphabet, their explicit real
//! irreducible representations, tensor-power multiplicities and
//! symmetry-adapted bases.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock, RwLock};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trees::{bough_counts, Bipartition, TreeTopology};

/// Largest tensor power accepted by [`multiplicities`].
pub const MAX_MULTIPLICITY_POWER: usize = 12;
/// Largest tensor power for which a [`SymmetryAdaptedBasis`] is built.
pub const MAX_BASIS_POWER: usize = 10;
/// Largest tensor power for which dense `k^l x k^l` matrices are formed.
pub const MAX_DENSE_POWER: usize = 6;

const HOM_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "GMM")]
    Gmm,
    #[serde(rename = "SSM")]
    Ssm,
    K81,
    K80,
    #[serde(rename = "JC69")]
    Jc69,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] =
        [ModelKind::Gmm, ModelKind::Ssm, ModelKind::K81, ModelKind::K80, ModelKind::Jc69];

    /// The nesting chain JC69 ⊂ K80 ⊂ K81 ⊂ GMM, smallest model first.
    pub const CHAIN: [ModelKind; 4] = [ModelKind::Jc69, ModelKind::K80, ModelKind::K81, ModelKind::Gmm];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Gmm => "GMM",
            ModelKind::Ssm => "SSM",
            ModelKind::K81 => "K81",
            ModelKind::K80 => "K80",
            ModelKind::Jc69 => "JC69",
        }
    }

    /// Process-wide instance of the built-in model.
    pub fn model(self) -> &'static EquivariantModel {
        static CACHE: OnceLock<Vec<EquivariantModel>> = OnceLock::new();
        let all = CACHE.get_or_init(|| {
            ModelKind::ALL
                .iter()
                .map(|&k| EquivariantModel::build(k).expect("built-in model is consistent"))
                .collect()
        });
        &all[self as usize]
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "GMM" => Ok(ModelKind::Gmm),
            "SSM" | "CS05" => Ok(ModelKind::Ssm),
            "K81" | "K3P" => Ok(ModelKind::K81),
            "K80" | "K2P" => Ok(ModelKind::K80),
            "JC69" | "JC" => Ok(ModelKind::Jc69),
            _ => Err(Error::UnknownModel(s.to_string())),
        }
    }
}

/// A permutation of the states `0..k`; `images[i]` is the image of state `i`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn identity(k: usize) -> Self {
        Permutation((0..k).collect())
    }

    /// Builds a permutation from disjoint cycles over `0..k`.
    pub fn from_cycles(k: usize, cycles: &[&[usize]]) -> Self {
        let mut images: Vec<usize> = (0..k).collect();
        for cycle in cycles {
            for (i, &s) in cycle.iter().enumerate() {
                images[s] = cycle[(i + 1) % cycle.len()];
            }
        }
        Permutation(images)
    }

    pub fn images(&self) -> &[usize] {
        &self.0
    }

    pub fn apply(&self, state: usize) -> usize {
        self.0[state]
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Permutation) -> Permutation {
        Permutation(other.0.iter().map(|&x| self.0[x]).collect())
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.0.len()];
        for (i, &j) in self.0.iter().enumerate() {
            inv[j] = i;
        }
        Permutation(inv)
    }

    pub fn fixed_points(&self) -> usize {
        self.0.iter().enumerate().filter(|(i, &j)| *i == j).count()
    }

    pub fn is_identity(&self) -> bool {
        self.fixed_points() == self.0.len()
    }

    pub fn sign(&self) -> i64 {
        let mut seen = vec![false; self.0.len()];
        let mut sign = 1;
        for start in 0..self.0.len() {
            if seen[start] {
                continue;
            }
            let mut len = 0;
            let mut x = start;
            while !seen[x] {
                seen[x] = true;
                x = self.0[x];
                len += 1;
            }
            if len % 2 == 0 {
                sign = -sign;
            }
        }
        sign
    }

    pub fn order(&self) -> usize {
        let mut p = self.clone();
        let mut m = 1;
        while !p.is_identity() {
            p = self.compose(&p);
            m += 1;
        }
        m
    }

    /// Permutation matrix with `ρ(g) e_i = e_{g(i)}`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let k = self.0.len();
        let mut m = DMatrix::zeros(k, k);
        for (i, &j) in self.0.iter().enumerate() {
            m[(j, i)] = 1.0;
        }
        m
    }

    /// Cycle notation using the given state labels, e.g. `(AC)(GT)`.
    pub fn cycle_notation(&self, states: &[char]) -> String {
        let mut seen = vec![false; self.0.len()];
        let mut out = String::new();
        for start in 0..self.0.len() {
            if seen[start] || self.0[start] == start {
                continue;
            }
            out.push('(');
            let mut x = start;
            while !seen[x] {
                seen[x] = true;
                out.push(states[x]);
                x = self.0[x];
            }
            out.push(')');
        }
        if out.is_empty() {
            "id".into()
        } else {
            out
        }
    }
}

impl fmt::Debug for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.cycle_notation(&crate::DNA))
    }
}

/// A real orthogonal irreducible representation, one matrix per group element.
#[derive(Clone, Debug)]
pub struct Irrep {
    pub name: String,
    pub dim: usize,
    pub matrices: Vec<DMatrix<f64>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConjugacyClass {
    /// Index of the representative in the element list.
    pub representative: usize,
    pub members: Vec<usize>,
}

/// A permutation group `G ⊂ S_k` on the state set together with its
/// irreducible representations and character table.
#[derive(Clone, Debug)]
pub struct EquivariantModel {
    pub kind: ModelKind,
    pub k: usize,
    pub states: Vec<char>,
    pub elements: Vec<Permutation>,
    /// `product[a][b]` is the index of `elements[a] ∘ elements[b]`.
    pub product: Vec<Vec<usize>>,
    pub inverse: Vec<usize>,
    pub irreps: Vec<Irrep>,
    pub classes: Vec<ConjugacyClass>,
    /// `character_table[t][c]`: character of irrep `t` on class `c`.
    pub character_table: Vec<Vec<i64>>,
    /// Permutation character (number of fixed states) per class.
    pub permutation_character: Vec<i64>,
}

enum IrrepSpec {
    /// Images of the generators, extended along generator words.
    Generators(Vec<DMatrix<f64>>),
    /// Explicit formula evaluated on each element.
    Formula(Box<dyn Fn(&Permutation) -> DMatrix<f64>>),
}

fn scalar(x: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, x)
}

/// Orthonormal (Helmert) basis of the sum-zero subspace of `R^k`, as a
/// `k x (k-1)` matrix.
fn helmert(k: usize) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(k, k - 1);
    for j in 1..k {
        let norm = ((j * (j + 1)) as f64).sqrt();
        for i in 0..j {
            q[(i, j - 1)] = 1.0 / norm;
        }
        q[(j, j - 1)] = -(j as f64) / norm;
    }
    q
}

fn standard_rep(g: &Permutation) -> DMatrix<f64> {
    let q = helmert(g.images().len());
    q.transpose() * g.matrix() * q
}

/// S4 acts on the three ways of pairing up four states; restricting that
/// permutation action to the sum-zero plane gives the 2-dimensional irrep.
fn pairing_rep(g: &Permutation) -> DMatrix<f64> {
    // pairing j pairs state 0 with state j + 1
    let partner_of_zero = |a: usize, b: usize| -> usize {
        if a == 0 {
            b
        } else if b == 0 {
            a
        } else {
            (1..4).find(|&x| x != a && x != b).unwrap()
        }
    };
    let mut p = DMatrix::zeros(3, 3);
    for j in 0..3 {
        let image = partner_of_zero(g.apply(0), g.apply(j + 1));
        p[(image - 1, j)] = 1.0;
    }
    let q = helmert(3);
    q.transpose() * p * q
}

impl EquivariantModel {
    fn build(kind: ModelKind) -> Result<Self> {
        const A: usize = 0;
        const C: usize = 1;
        const G: usize = 2;
        const T: usize = 3;
        let k = 4;
        let cyc = |cycles: &[&[usize]]| Permutation::from_cycles(k, cycles);
        let (generators, specs): (Vec<Permutation>, Vec<(&str, IrrepSpec)>) = match kind {
            ModelKind::Gmm => (vec![], vec![("ω", IrrepSpec::Generators(vec![]))]),
            ModelKind::Ssm => (
                vec![cyc(&[&[A, T], &[C, G]])],
                vec![
                    ("ω1", IrrepSpec::Generators(vec![scalar(1.0)])),
                    ("ω2", IrrepSpec::Generators(vec![scalar(-1.0)])),
                ],
            ),
            ModelKind::K81 => (
                vec![cyc(&[&[A, C], &[G, T]]), cyc(&[&[A, G], &[C, T]])],
                vec![
                    ("ωA", IrrepSpec::Generators(vec![scalar(1.0), scalar(1.0)])),
                    ("ωC", IrrepSpec::Generators(vec![scalar(-1.0), scalar(1.0)])),
                    ("ωG", IrrepSpec::Generators(vec![scalar(1.0), scalar(-1.0)])),
                    ("ωT", IrrepSpec::Generators(vec![scalar(-1.0), scalar(-1.0)])),
                ],
            ),
            ModelKind::K80 => {
                let rotation = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
                let reflection = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
                (
                    vec![cyc(&[&[A, C, G, T]]), cyc(&[&[A, G]])],
                    vec![
                        ("ω1", IrrepSpec::Generators(vec![scalar(1.0), scalar(1.0)])),
                        ("ω2", IrrepSpec::Generators(vec![scalar(1.0), scalar(-1.0)])),
                        ("ω3", IrrepSpec::Generators(vec![scalar(-1.0), scalar(1.0)])),
                        ("ω4", IrrepSpec::Generators(vec![scalar(-1.0), scalar(-1.0)])),
                        ("ω", IrrepSpec::Generators(vec![rotation, reflection])),
                    ],
                )
            }
            ModelKind::Jc69 => (
                vec![cyc(&[&[A, C]]), cyc(&[&[A, C, G, T]])],
                vec![
                    ("ω0", IrrepSpec::Formula(Box::new(|_| scalar(1.0)))),
                    ("ω1", IrrepSpec::Formula(Box::new(|g| scalar(g.sign() as f64)))),
                    ("ω2", IrrepSpec::Formula(Box::new(pairing_rep))),
                    ("ω3", IrrepSpec::Formula(Box::new(standard_rep))),
                    ("ω4", IrrepSpec::Formula(Box::new(|g| standard_rep(g) * g.sign() as f64))),
                ],
            ),
        };

        // closure under composition, breadth first from the identity
        let mut elements = vec![Permutation::identity(k)];
        let mut word: Vec<Option<(usize, usize)>> = vec![None];
        let mut index: HashMap<Permutation, usize> = HashMap::from([(elements[0].clone(), 0)]);
        let mut head = 0;
        while head < elements.len() {
            for (s, gen) in generators.iter().enumerate() {
                let next = gen.compose(&elements[head]);
                if !index.contains_key(&next) {
                    index.insert(next.clone(), elements.len());
                    elements.push(next);
                    word.push(Some((s, head)));
                }
            }
            head += 1;
        }
        let order = elements.len();
        let product: Vec<Vec<usize>> = (0..order)
            .map(|a| (0..order).map(|b| index[&elements[a].compose(&elements[b])]).collect())
            .collect();
        let inverse: Vec<usize> = elements.iter().map(|g| index[&g.inverse()]).collect();

        let mut irreps = Vec::with_capacity(specs.len());
        for (name, spec) in specs {
            let matrices: Vec<DMatrix<f64>> = match spec {
                IrrepSpec::Generators(images) => {
                    let dim = images.first().map_or(1, |m| m.nrows());
                    let mut mats: Vec<DMatrix<f64>> = Vec::with_capacity(order);
                    for w in &word {
                        mats.push(match w {
                            None => DMatrix::identity(dim, dim),
                            Some((s, parent)) => &images[*s] * &mats[*parent],
                        });
                    }
                    mats
                }
                IrrepSpec::Formula(f) => elements.iter().map(f).collect(),
            };
            let dim = matrices[0].nrows();
            irreps.push(Irrep { name: name.to_string(), dim, matrices });
        }

        // conjugacy classes, ordered by (fixed points desc, element order desc, representative)
        let mut class_of = vec![usize::MAX; order];
        let mut classes: Vec<ConjugacyClass> = Vec::new();
        for a in 0..order {
            if class_of[a] != usize::MAX {
                continue;
            }
            let mut members: Vec<usize> =
                (0..order).map(|h| product[product[h][a]][inverse[h]]).collect();
            members.sort_unstable();
            members.dedup();
            let representative = *members
                .iter()
                .min_by_key(|&&x| elements[x].cycle_notation(&crate::DNA))
                .unwrap();
            for &m in &members {
                class_of[m] = classes.len();
            }
            classes.push(ConjugacyClass { representative, members });
        }
        classes.sort_by(|x, y| {
            let (gx, gy) = (&elements[x.representative], &elements[y.representative]);
            gy.fixed_points()
                .cmp(&gx.fixed_points())
                .then(gy.order().cmp(&gx.order()))
                .then(gx.cycle_notation(&crate::DNA).cmp(&gy.cycle_notation(&crate::DNA)))
        });

        let mut character_table = Vec::with_capacity(irreps.len());
        for irrep in &irreps {
            let mut row = Vec::with_capacity(classes.len());
            for class in &classes {
                let trace = irrep.matrices[class.representative].trace();
                let rounded = trace.round();
                if (trace - rounded).abs() > 1e-9 {
                    return Err(Error::Consistency(format!(
                        "{kind}: character of {} is not integral",
                        irrep.name
                    )));
                }
                row.push(rounded as i64);
            }
            character_table.push(row);
        }
        let permutation_character =
            classes.iter().map(|c| elements[c.representative].fixed_points() as i64).collect();

        let model = EquivariantModel {
            kind,
            k,
            states: crate::DNA.to_vec(),
            elements,
            product,
            inverse,
            irreps,
            classes,
            character_table,
            permutation_character,
        };
        model.validate()?;
        Ok(model)
    }

    /// Checks homomorphism, orthogonality and character-table relations.
    fn validate(&self) -> Result<()> {
        let order = self.order();
        let fail = |msg: String| Err(Error::Consistency(format!("{}: {msg}", self.kind)));
        for irrep in &self.irreps {
            for a in 0..order {
                let da = &irrep.matrices[a];
                if (da.transpose() * da - DMatrix::identity(irrep.dim, irrep.dim)).amax() > HOM_TOL {
                    return fail(format!("{} is not orthogonal", irrep.name));
                }
                for b in 0..order {
                    let lhs = &irrep.matrices[self.product[a][b]];
                    if (lhs - da * &irrep.matrices[b]).amax() > HOM_TOL {
                        return fail(format!("{} is not a homomorphism", irrep.name));
                    }
                }
            }
        }
        let sizes: Vec<i64> = self.classes.iter().map(|c| c.members.len() as i64).collect();
        for (t, row_t) in self.character_table.iter().enumerate() {
            for (u, row_u) in self.character_table.iter().enumerate() {
                let inner: i64 = (0..sizes.len()).map(|c| sizes[c] * row_t[c] * row_u[c]).sum();
                let expected = if t == u { order as i64 } else { 0 };
                if inner != expected {
                    return fail(format!("characters {t} and {u} fail orthogonality"));
                }
            }
        }
        let dim_sum: usize = self.irreps.iter().map(|i| i.dim * i.dim).sum();
        if dim_sum != order {
            return fail(format!("sum of squared dimensions {dim_sum} != |G| = {order}"));
        }
        if self.character_table.first().is_none_or(|row| row.iter().any(|&x| x != 1)) {
            return fail("first irrep must be the trivial one".into());
        }
        for (c, class) in self.classes.iter().enumerate() {
            let trace = self.elements[class.representative].matrix().trace().round() as i64;
            if trace != self.permutation_character[c] {
                return fail("permutation character mismatch".into());
            }
        }
        Ok(())
    }

    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn n_irreps(&self) -> usize {
        self.irreps.len()
    }

    /// Dimensions `d_t` of the irreducible representations.
    pub fn dims(&self) -> Vec<usize> {
        self.irreps.iter().map(|i| i.dim).collect()
    }

    /// Character value of irrep `t` on element `g`.
    pub fn character(&self, t: usize, g: usize) -> f64 {
        self.irreps[t].matrices[g].trace()
    }

    pub fn class_label(&self, c: usize) -> String {
        self.elements[self.classes[c].representative].cycle_notation(&self.states)
    }

    /// Image of pattern index `x` (length `l`, first position most
    /// significant) under element `g`.
    pub fn act_on_pattern(&self, g: usize, x: usize, l: usize) -> usize {
        let perm = &self.elements[g];
        let mut out = 0;
        let mut stride = 1;
        let mut rest = x;
        for _ in 0..l {
            let digit = rest % self.k;
            rest /= self.k;
            out += perm.apply(digit) * stride;
            stride *= self.k;
        }
        out
    }
}

/// Returns the built-in model with the given name (GMM, SSM, K81, K80, JC69).
pub fn builtin_model(name: &str) -> Result<&'static EquivariantModel> {
    Ok(name.parse::<ModelKind>()?.model())
}

/// Multiplicities of the irreducibles in the `l`-th tensor power of the
/// state space.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiplicityVector {
    pub l: usize,
    pub entries: Vec<usize>,
}

impl MultiplicityVector {
    /// Componentwise `self <= other`.
    pub fn le(&self, other: &[usize]) -> bool {
        self.entries.len() == other.len() && self.entries.iter().zip(other).all(|(a, b)| a <= b)
    }

    /// `Σ_t d_t m_t`.
    pub fn weighted_sum(&self, dims: &[usize]) -> usize {
        self.entries.iter().zip(dims).map(|(m, d)| m * d).sum()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.entries
    }
}

impl fmt::Display for MultiplicityVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.entries.iter().map(|m| m.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// `m(l)_t = (1/|G|) Σ_classes |C| χ(C)^l ω_t(C)`, in exact integer arithmetic.
pub fn multiplicities(model: &EquivariantModel, l: usize) -> Result<MultiplicityVector> {
    if l == 0 {
        return Err(Error::Usage("tensor power must be at least 1".into()));
    }
    if l > MAX_MULTIPLICITY_POWER {
        return Err(Error::Capacity(format!(
            "tensor power {l} exceeds {MAX_MULTIPLICITY_POWER}"
        )));
    }
    let order = model.order() as i128;
    let mut entries = Vec::with_capacity(model.n_irreps());
    for row in &model.character_table {
        let mut total: i128 = 0;
        for (c, class) in model.classes.iter().enumerate() {
            let chi = model.permutation_character[c] as i128;
            total += class.members.len() as i128 * chi.pow(l as u32) * row[c] as i128;
        }
        if total % order != 0 || total < 0 {
            return Err(Error::Consistency(format!(
                "{}: multiplicity {total}/{order} is not a non-negative integer",
                model.kind
            )));
        }
        entries.push((total / order) as usize);
    }
    Ok(MultiplicityVector { l, entries })
}

/// `m_{β,T} = m(min(n1, n2))` from the bough counts of `split` in `tree`.
pub fn expected_rank_vector(
    model: &EquivariantModel,
    tree: &TreeTopology,
    split: &Bipartition,
) -> Result<MultiplicityVector> {
    multiplicities(model, bough_counts(tree, split)?.min())
}

/// Orthogonal projector onto the `G`-invariant subspace of the `l`-th tensor
/// power, `(1/|G|) Σ_g ρ(g)^{⊗l}`.
pub fn invariant_projector(model: &EquivariantModel, l: usize) -> Result<DMatrix<f64>> {
    if l == 0 || l > MAX_DENSE_POWER {
        return Err(Error::Capacity(format!("dense projector supports 1..={MAX_DENSE_POWER}, got {l}")));
    }
    let size = model.k.pow(l as u32);
    let mut p = DMatrix::zeros(size, size);
    let w = 1.0 / model.order() as f64;
    for g in 0..model.order() {
        for x in 0..size {
            p[(model.act_on_pattern(g, x, l), x)] += w;
        }
    }
    Ok(p)
}

/// One vector of a symmetry-adapted basis, supported on a single `G`-orbit of
/// patterns.
#[derive(Clone, Debug)]
pub struct BasisVector {
    pub irrep: usize,
    /// Copy index `r` in `0..d_t`.
    pub copy: usize,
    /// Multiplicity index `j` in `0..m(l)_t`.
    pub mult: usize,
    pub orbit: usize,
    /// Coefficients on the orbit's patterns (same order as the orbit support).
    pub coeffs: Vec<f64>,
}

/// Orthonormal basis of the `l`-th tensor power adapted to the isotypic
/// decomposition. Vectors are ordered by `(irrep, copy, mult)`; for a fixed
/// `(irrep, mult)` the copies span a `G`-stable subspace on which `G` acts by
/// the irrep's matrices.
#[derive(Clone, Debug)]
pub struct SymmetryAdaptedBasis {
    pub kind: ModelKind,
    pub l: usize,
    pub k: usize,
    orbits: Vec<Vec<u32>>,
    vectors: Vec<BasisVector>,
    offsets: Vec<usize>,
    multiplicities: MultiplicityVector,
    dims: Vec<usize>,
}

impl SymmetryAdaptedBasis {
    fn build(model: &EquivariantModel, l: usize) -> Result<Self> {
        if l == 0 || l > MAX_BASIS_POWER {
            return Err(Error::Capacity(format!(
                "symmetry-adapted basis supports powers 1..={MAX_BASIS_POWER}, got {l}"
            )));
        }
        let mult = multiplicities(model, l)?;
        let dims = model.dims();
        let order = model.order();
        let size = model.k.pow(l as u32);

        // per irrep: (seed pattern, orbit, copy vectors)
        let mut found: Vec<Vec<(usize, usize, Vec<Vec<f64>>)>> = vec![Vec::new(); model.n_irreps()];
        let mut orbits: Vec<Vec<u32>> = Vec::new();
        let mut visited = vec![false; size];
        for x in 0..size {
            if visited[x] {
                continue;
            }
            let images: Vec<usize> = (0..order).map(|g| model.act_on_pattern(g, x, l)).collect();
            let mut support: Vec<usize> = images.clone();
            support.sort_unstable();
            support.dedup();
            for &y in &support {
                visited[y] = true;
            }
            let local = |y: usize| support.binary_search(&y).unwrap();
            // action[g][i]: local index of g · support[i]
            let action: Vec<Vec<usize>> = (0..order)
                .map(|g| support.iter().map(|&y| local(model.act_on_pattern(g, y, l))).collect())
                .collect();
            let orbit_id = orbits.len();

            for (t, irrep) in model.irreps.iter().enumerate() {
                let d = irrep.dim;
                let scale = d as f64 / order as f64;
                let mut accepted: Vec<Vec<f64>> = Vec::new();
                for (i, &seed) in support.iter().enumerate() {
                    let mut w = vec![0.0; support.len()];
                    for g in 0..order {
                        w[action[g][i]] += scale * irrep.matrices[g][(0, 0)];
                    }
                    for _ in 0..2 {
                        for v in &accepted {
                            let dot: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
                            for (wi, vi) in w.iter_mut().zip(v) {
                                *wi -= dot * vi;
                            }
                        }
                    }
                    let norm = w.iter().map(|a| a * a).sum::<f64>().sqrt();
                    if norm > 1e-7 {
                        w.iter_mut().for_each(|a| *a /= norm);
                        let mut copies = Vec::with_capacity(d);
                        for r in 1..d {
                            let mut u = vec![0.0; support.len()];
                            for g in 0..order {
                                let coef = scale * irrep.matrices[g][(r, 0)];
                                if coef != 0.0 {
                                    for (j, &wj) in w.iter().enumerate() {
                                        u[action[g][j]] += coef * wj;
                                    }
                                }
                            }
                            let un = u.iter().map(|a| a * a).sum::<f64>().sqrt();
                            if (un - 1.0).abs() > 1e-8 {
                                return Err(Error::Consistency(format!(
                                    "{}: copy {r} of irrep {} has norm {un}",
                                    model.kind, irrep.name
                                )));
                            }
                            u.iter_mut().for_each(|a| *a /= un);
                            copies.push(u);
                        }
                        copies.insert(0, w.clone());
                        accepted.push(w);
                        found[t].push((seed, orbit_id, copies));
                    }
                }
            }
            orbits.push(support.iter().map(|&y| y as u32).collect());
        }

        let mut vectors = Vec::with_capacity(size);
        let mut offsets = Vec::with_capacity(model.n_irreps());
        for (t, mut list) in found.into_iter().enumerate() {
            if list.len() != mult.entries[t] {
                return Err(Error::Consistency(format!(
                    "{}: projector image for irrep {} has rank {} but m({l}) = {}",
                    model.kind,
                    model.irreps[t].name,
                    list.len(),
                    mult.entries[t]
                )));
            }
            list.sort_by_key(|(seed, _, _)| *seed);
            offsets.push(vectors.len());
            for r in 0..dims[t] {
                for (j, (_, orbit, copies)) in list.iter().enumerate() {
                    vectors.push(BasisVector {
                        irrep: t,
                        copy: r,
                        mult: j,
                        orbit: *orbit,
                        coeffs: copies[r].clone(),
                    });
                }
            }
        }
        if vectors.len() != size {
            return Err(Error::Consistency(format!(
                "{}: basis has {} vectors, expected {size}",
                model.kind,
                vectors.len()
            )));
        }
        Ok(SymmetryAdaptedBasis { kind: model.kind, l, k: model.k, orbits, vectors, offsets, multiplicities: mult, dims })
    }

    /// Dimension `k^l` of the tensor power.
    pub fn size(&self) -> usize {
        self.vectors.len()
    }

    pub fn vectors(&self) -> &[BasisVector] {
        &self.vectors
    }

    pub fn support(&self, v: &BasisVector) -> &[u32] {
        &self.orbits[v.orbit]
    }

    pub fn multiplicities(&self) -> &MultiplicityVector {
        &self.multiplicities
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Position of vector `(t, r, j)` in the basis order.
    pub fn column_index(&self, t: usize, r: usize, j: usize) -> usize {
        self.offsets[t] + r * self.multiplicities.entries[t] + j
    }

    /// Column `index` as a dense vector of length `k^l`.
    pub fn dense_vector(&self, index: usize) -> Vec<f64> {
        let v = &self.vectors[index];
        let mut out = vec![0.0; self.size()];
        for (&p, &c) in self.support(v).iter().zip(&v.coeffs) {
            out[p as usize] = c;
        }
        out
    }

    /// The full `k^l x k^l` orthogonal change-of-basis matrix (columns are
    /// the adapted vectors).
    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        if self.l > MAX_DENSE_POWER {
            return Err(Error::Capacity(format!("dense basis supports powers up to {MAX_DENSE_POWER}")));
        }
        let n = self.size();
        let mut m = DMatrix::zeros(n, n);
        for (col, v) in self.vectors.iter().enumerate() {
            for (&p, &c) in self.support(v).iter().zip(&v.coeffs) {
                m[(p as usize, col)] = c;
            }
        }
        Ok(m)
    }
}

type BasisCache = RwLock<HashMap<(ModelKind, usize), Arc<SymmetryAdaptedBasis>>>;

/// Symmetry-adapted basis of the `l`-th tensor power, memoised process-wide.
pub fn symmetry_adapted_basis(model: &EquivariantModel, l: usize) -> Result<Arc<SymmetryAdaptedBasis>> {
    static CACHE: OnceLock<BasisCache> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let key = (model.kind, l);
    if let Some(b) = cache.read().expect("basis cache poisoned").get(&key) {
        return Ok(Arc::clone(b));
    }
    let basis = Arc::new(SymmetryAdaptedBasis::build(model, l)?);
    let mut guard = cache.write().expect("basis cache poisoned");
    Ok(Arc::clone(guard.entry(key).or_insert(basis)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(kind: ModelKind, l: usize) -> Vec<usize> {
        multiplicities(kind.model(), l).unwrap().entries
    }

    #[test]
    fn group_orders() {
        let orders: Vec<usize> = ModelKind::ALL.iter().map(|k| k.model().order()).collect();
        assert_eq!(orders, vec![1, 2, 4, 8, 24]);
    }

    #[test]
    fn jc69_character_table() {
        let jc = ModelKind::Jc69.model();
        assert_eq!(jc.dims(), vec![1, 1, 2, 3, 3]);
        assert_eq!(jc.permutation_character, vec![4, 2, 1, 0, 0]);
        let labels: Vec<String> = (0..5).map(|c| jc.class_label(c)).collect();
        assert_eq!(labels, vec!["id", "(AC)", "(ACG)", "(ACGT)", "(AC)(GT)"]);
        assert_eq!(
            jc.character_table,
            vec![
                vec![1, 1, 1, 1, 1],
                vec![1, -1, 1, -1, 1],
                vec![2, 0, -1, 0, 2],
                vec![3, 1, 0, -1, -1],
                vec![3, -1, 0, 1, -1],
            ]
        );
    }

    #[test]
    fn k81_and_gmm_tables() {
        let k81 = ModelKind::K81.model();
        assert_eq!(k81.permutation_character, vec![4, 0, 0, 0]);
        assert_eq!(
            k81.character_table,
            vec![vec![1, 1, 1, 1], vec![1, -1, 1, -1], vec![1, 1, -1, -1], vec![1, -1, -1, 1]]
        );
        let gmm = ModelKind::Gmm.model();
        assert_eq!(gmm.permutation_character, vec![4]);
        assert_eq!(gmm.n_irreps(), 1);
    }

    #[test]
    fn k80_permutation_character_per_class() {
        let k80 = ModelKind::K80.model();
        for (c, class) in k80.classes.iter().enumerate() {
            let label = k80.class_label(c);
            let expected = match label.as_str() {
                "id" => 4,
                "(AG)" | "(CT)" => 2,
                _ => 0,
            };
            assert_eq!(k80.permutation_character[c], expected, "{label}");
            let _ = class;
        }
        let mut chi = k80.permutation_character.clone();
        chi.sort_unstable();
        assert_eq!(chi, vec![0, 0, 0, 2, 4]);
    }

    #[test]
    fn published_multiplicities() {
        assert_eq!(m(ModelKind::Jc69, 2), vec![2, 0, 1, 3, 1]);
        assert_eq!(m(ModelKind::K80, 2), vec![3, 1, 3, 1, 4]);
        assert_eq!(m(ModelKind::Ssm, 1), vec![2, 2]);
        assert_eq!(m(ModelKind::Gmm, 2), vec![16]);
        assert_eq!(m(ModelKind::K81, 2), vec![4, 4, 4, 4]);
        assert!(matches!(multiplicities(ModelKind::K81.model(), 13), Err(Error::Capacity(_))));
    }

    #[test]
    fn multiplicity_accounting() {
        for kind in ModelKind::ALL {
            let model = kind.model();
            for l in 1..=6 {
                let mv = multiplicities(model, l).unwrap();
                assert_eq!(mv.weighted_sum(&model.dims()), 4usize.pow(l as u32));
                assert!(mv.entries[0] >= 1);
                let next = multiplicities(model, l + 1).unwrap();
                assert!(mv.le(&next.entries));
            }
        }
    }

    #[test]
    fn ssm_basis_at_power_one() {
        let b = symmetry_adapted_basis(ModelKind::Ssm.model(), 1).unwrap();
        let s = 1.0 / 2f64.sqrt();
        let expect = [[s, 0.0, 0.0, s], [0.0, s, s, 0.0], [s, 0.0, 0.0, -s], [0.0, s, -s, 0.0]];
        for (i, e) in expect.iter().enumerate() {
            let v = b.dense_vector(i);
            for (a, b) in v.iter().zip(e) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn k81_basis_is_hadamard() {
        let b = symmetry_adapted_basis(ModelKind::K81.model(), 1).unwrap();
        let hadamard = [
            [1.0, 1.0, 1.0, 1.0],
            [1.0, 1.0, -1.0, -1.0],
            [1.0, -1.0, 1.0, -1.0],
            [1.0, -1.0, -1.0, 1.0],
        ];
        let mut hit = [false; 4];
        for i in 0..4 {
            let v = b.dense_vector(i);
            let row = hadamard
                .iter()
                .position(|h| {
                    let dot: f64 = h.iter().zip(&v).map(|(a, b)| a * b / 2.0).sum();
                    (dot.abs() - 1.0).abs() < 1e-12
                })
                .expect("vector is a signed Hadamard row");
            assert!(!hit[row]);
            hit[row] = true;
        }
    }

    #[test]
    fn gmm_basis_is_identity() {
        let b = symmetry_adapted_basis(ModelKind::Gmm.model(), 2).unwrap();
        let dense = b.to_dense().unwrap();
        assert_eq!(dense, DMatrix::identity(16, 16));
    }

    #[test]
    fn projector_examples() {
        let p = invariant_projector(ModelKind::Jc69.model(), 1).unwrap();
        assert!((p.clone() - DMatrix::from_element(4, 4, 0.25)).amax() < 1e-15);
        assert_eq!(invariant_projector(ModelKind::Gmm.model(), 2).unwrap(), DMatrix::identity(16, 16));
        let p = invariant_projector(ModelKind::K81.model(), 2).unwrap();
        assert!((p.trace() - 4.0).abs() < 1e-12);
        assert!((&p * &p - &p).amax() < 1e-12);
        assert!((p.transpose() - &p).amax() < 1e-12);
    }

    #[test]
    fn unknown_model_name() {
        assert!(matches!(builtin_model("HKY"), Err(Error::UnknownModel(_))));
        assert_eq!(builtin_model("jc69").unwrap().kind, ModelKind::Jc69);
    }
}
