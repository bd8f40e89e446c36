//! Leaf-labelled unrooted trees, leaf bipartitions and split systems.
//!
//! Leaves carry the labels `1..=n` and occupy vertex ids `0..n`; interior
//! vertices are numbered from `n` upwards. A [`Bipartition`] is stored as the
//! bit mask of the side that does *not* contain leaf 1, so two bipartitions
//! compare equal exactly when they describe the same unordered pair of sides.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Largest leaf count a [`Bipartition`] can represent.
pub const MAX_LEAVES: usize = 64;

/// Largest leaf count accepted by [`enumerate_trivalent_topologies`].
pub const MAX_ENUMERATED_LEAVES: usize = 10;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Bipartition {
    n: u8,
    mask: u64,
}

fn full_mask(n: usize) -> u64 {
    if n == 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

impl Bipartition {
    /// Builds the bipartition `side | complement` of the labels `1..=n`.
    pub fn new<I: IntoIterator<Item = usize>>(n: usize, side: I) -> Result<Self> {
        if n > MAX_LEAVES {
            return Err(Error::Capacity(format!("{n} leaves exceeds {MAX_LEAVES}")));
        }
        let mut mask = 0u64;
        for label in side {
            if label == 0 || label > n {
                return Err(Error::Usage(format!("leaf label {label} outside 1..={n}")));
            }
            mask |= 1 << (label - 1);
        }
        Self::from_mask(n, mask)
    }

    /// Builds a bipartition from a bit mask over leaves (bit `i` is label
    /// `i + 1`); either side may be given.
    pub fn from_mask(n: usize, mask: u64) -> Result<Self> {
        if n > MAX_LEAVES {
            return Err(Error::Capacity(format!("{n} leaves exceeds {MAX_LEAVES}")));
        }
        let full = full_mask(n);
        if mask & !full != 0 {
            return Err(Error::Usage(format!("mask {mask:#x} has labels outside 1..={n}")));
        }
        let mask = if mask & 1 == 1 { full & !mask } else { mask };
        if mask == 0 {
            return Err(Error::Usage("a bipartition needs two nonempty sides".into()));
        }
        Ok(Self { n: n as u8, mask })
    }

    pub fn n(&self) -> usize {
        self.n as usize
    }

    /// Mask of the side without leaf 1.
    pub fn mask(&self) -> u64 {
        self.mask
    }

    /// Mask of the side containing leaf 1.
    pub fn first_mask(&self) -> u64 {
        full_mask(self.n()) & !self.mask
    }

    /// Labels on the side containing leaf 1, ascending.
    pub fn side_with_first(&self) -> Vec<usize> {
        labels_of(self.first_mask())
    }

    /// Labels on the side without leaf 1, ascending.
    pub fn side_without_first(&self) -> Vec<usize> {
        labels_of(self.mask)
    }

    /// Sizes `(|side with leaf 1|, |other side|)`.
    pub fn sizes(&self) -> (usize, usize) {
        let l2 = self.mask.count_ones() as usize;
        (self.n() - l2, l2)
    }

    pub fn min_side(&self) -> usize {
        let (a, b) = self.sizes();
        a.min(b)
    }

    /// A split is trivial when one side is a single leaf.
    pub fn is_trivial(&self) -> bool {
        self.min_side() == 1
    }

    /// Mask of the smaller side; ties go to the side without leaf 1.
    pub fn smaller_mask(&self) -> u64 {
        let (a, b) = self.sizes();
        if a < b {
            self.first_mask()
        } else {
            self.mask
        }
    }

    /// Applies a leaf relabelling; `perm[old - 1]` is the new label.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        check_perm(perm, self.n())?;
        Bipartition::new(self.n(), self.side_without_first().into_iter().map(|l| perm[l - 1]))
    }
}

fn labels_of(mask: u64) -> Vec<usize> {
    (0..64).filter(|i| mask >> i & 1 == 1).map(|i| i + 1).collect()
}

pub(crate) fn check_perm(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(Error::Usage(format!("relabelling has length {}, expected {n}", perm.len())));
    }
    for &p in perm {
        if p == 0 || p > n || seen[p - 1] {
            return Err(Error::Usage("relabelling is not a permutation of 1..=n".into()));
        }
        seen[p - 1] = true;
    }
    Ok(())
}

impl fmt::Display for Bipartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: Vec<usize>| v.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",");
        write!(f, "{}|{}", join(self.side_with_first()), join(self.side_without_first()))
    }
}

impl fmt::Debug for Bipartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Bipartition({self})")
    }
}

impl FromStr for Bipartition {
    type Err = Error;

    /// Parses `"1,2|3,4"`; the leaf universe is the union of both sides and
    /// must be exactly `1..=n`.
    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .trim()
            .split_once('|')
            .ok_or_else(|| Error::Parse(format!("split `{s}` has no `|`")))?;
        let parse_side = |side: &str| -> Result<Vec<usize>> {
            side.split(',')
                .map(|t| t.trim())
                .filter(|t| !t.is_empty())
                .map(|t| t.parse::<usize>().map_err(|_| Error::Parse(format!("bad leaf label `{t}`"))))
                .collect()
        };
        let (a, b) = (parse_side(a)?, parse_side(b)?);
        let n = a.len() + b.len();
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        if all != (1..=n).collect::<Vec<_>>() {
            return Err(Error::Parse(format!("split `{s}` does not partition 1..={n}")));
        }
        Bipartition::new(n, b)
    }
}

impl Serialize for Bipartition {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Bipartition {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Every bipartition of `1..=n`, trivial ones included, in canonical order.
pub fn all_bipartitions(n: usize) -> Vec<Bipartition> {
    if n < 2 {
        return Vec::new();
    }
    (1u64..(1u64 << (n - 1)))
        .map(|m| Bipartition { n: n as u8, mask: m << 1 })
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// The `2^(n-1) - n - 1` bipartitions with both sides of size at least two.
pub fn nontrivial_bipartitions(n: usize) -> Vec<Bipartition> {
    all_bipartitions(n).into_iter().filter(|b| !b.is_trivial()).collect()
}

/// True iff one of the four side intersections is empty.
pub fn splits_compatible(a: &Bipartition, b: &Bipartition) -> Result<bool> {
    if a.n != b.n {
        return Err(Error::Usage(format!(
            "splits {a} and {b} live on different leaf sets ({} vs {})",
            a.n, b.n
        )));
    }
    let (a1, a2) = (a.first_mask(), a.mask);
    let (b1, b2) = (b.first_mask(), b.mask);
    Ok(a1 & b1 == 0 || a1 & b2 == 0 || a2 & b1 == 0 || a2 & b2 == 0)
}

/// Unrooted leaf-labelled tree.
#[derive(Clone)]
pub struct TreeTopology {
    n_leaves: usize,
    adjacency: Vec<Vec<usize>>,
}

impl TreeTopology {
    /// Validates and builds a tree whose vertices `0..n` are the leaves.
    pub fn from_edges(n_leaves: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n_leaves == 0 {
            return Err(Error::Usage("a tree needs at least one leaf".into()));
        }
        if n_leaves > MAX_LEAVES {
            return Err(Error::Capacity(format!("{n_leaves} leaves exceeds {MAX_LEAVES}")));
        }
        let n_vertices = edges
            .iter()
            .map(|&(u, v)| u.max(v) + 1)
            .max()
            .unwrap_or(1)
            .max(n_leaves);
        if edges.len() + 1 != n_vertices {
            return Err(Error::Usage(format!(
                "{} edges cannot form a tree on {n_vertices} vertices",
                edges.len()
            )));
        }
        let mut adjacency = vec![Vec::new(); n_vertices];
        for &(u, v) in edges {
            if u == v {
                return Err(Error::Usage(format!("self loop at vertex {u}")));
            }
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for nbrs in adjacency.iter_mut() {
            nbrs.sort_unstable();
            if nbrs.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Usage("repeated edge".into()));
            }
        }
        let tree = TreeTopology { n_leaves, adjacency };
        // connected + |E| = |V| - 1 implies acyclic
        let mut seen = vec![false; n_vertices];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(v) = queue.pop_front() {
            for &u in &tree.adjacency[v] {
                if !seen[u] {
                    seen[u] = true;
                    queue.push_back(u);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Usage("graph is not connected".into()));
        }
        if n_vertices > 1 {
            for v in 0..n_leaves {
                if tree.adjacency[v].len() != 1 {
                    return Err(Error::Usage(format!("leaf {} has degree {}", v + 1, tree.adjacency[v].len())));
                }
            }
            for v in n_leaves..n_vertices {
                if tree.adjacency[v].len() < 2 {
                    return Err(Error::Usage(format!("interior vertex {v} has degree < 2")));
                }
            }
        }
        Ok(tree)
    }

    /// The single-vertex tree on leaf 1.
    pub fn single_vertex() -> Self {
        TreeTopology { n_leaves: 1, adjacency: vec![Vec::new()] }
    }

    /// Star tree: one interior vertex joined to every leaf (`n >= 3`), or the
    /// single edge for `n == 2`.
    pub fn star(n: usize) -> Result<Self> {
        match n {
            0 => Err(Error::Usage("a tree needs at least one leaf".into())),
            1 => Ok(Self::single_vertex()),
            2 => Self::from_edges(2, &[(0, 1)]),
            _ => Self::from_edges(n, &(0..n).map(|l| (n, l)).collect::<Vec<_>>()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    pub fn n_vertices(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn is_leaf(&self, v: usize) -> bool {
        v < self.n_leaves
    }

    /// Every interior vertex has degree exactly three.
    pub fn is_trivalent(&self) -> bool {
        (self.n_leaves..self.n_vertices()).all(|v| self.adjacency[v].len() == 3)
    }

    /// Edges as `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.n_vertices().saturating_sub(1));
        for (u, nbrs) in self.adjacency.iter().enumerate() {
            for &v in nbrs {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// Parent array and a preorder from `root`.
    pub(crate) fn rooted_order(&self, root: usize) -> (Vec<Option<usize>>, Vec<usize>) {
        let mut parent = vec![None; self.n_vertices()];
        let mut order = Vec::with_capacity(self.n_vertices());
        let mut stack = vec![root];
        let mut seen = vec![false; self.n_vertices()];
        seen[root] = true;
        while let Some(v) = stack.pop() {
            order.push(v);
            for &u in self.adjacency[v].iter().rev() {
                if !seen[u] {
                    seen[u] = true;
                    parent[u] = Some(v);
                    stack.push(u);
                }
            }
        }
        (parent, order)
    }

    /// For the tree rooted at leaf 1, the leaf mask below every vertex.
    fn masks_below(&self) -> (Vec<Option<usize>>, Vec<u64>) {
        let (parent, order) = self.rooted_order(0);
        let mut mask = vec![0u64; self.n_vertices()];
        for &v in order.iter().rev() {
            if self.is_leaf(v) {
                mask[v] |= 1 << v;
            }
            if let Some(p) = parent[v] {
                mask[p] |= mask[v];
            }
        }
        (parent, mask)
    }

    /// Interior (nontrivial) edge splits, sorted.
    pub fn interior_splits(&self) -> Vec<Bipartition> {
        edge_splits(self).into_iter().filter(|s| !s.is_trivial()).collect()
    }

    /// Applies a leaf relabelling; `perm[old - 1]` is the new label.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        check_perm(perm, self.n_leaves)?;
        let map = |v: usize| if v < self.n_leaves { perm[v] - 1 } else { v };
        let edges: Vec<_> = self.edges().into_iter().map(|(u, v)| (map(u), map(v))).collect();
        if edges.is_empty() {
            return Ok(self.clone());
        }
        TreeTopology::from_edges(self.n_leaves, &edges)
    }

    /// Newick string with numeric leaf labels.
    pub fn to_newick(&self) -> String {
        crate::io::newick::write(self, None)
    }
}

impl PartialEq for TreeTopology {
    fn eq(&self, other: &Self) -> bool {
        self.n_leaves == other.n_leaves && edge_splits(self) == edge_splits(other)
    }
}

impl Eq for TreeTopology {}

impl fmt::Display for TreeTopology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_newick())
    }
}

impl fmt::Debug for TreeTopology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TreeTopology({})", self.to_newick())
    }
}

/// One split per edge (deduplicated), trivial splits included, sorted.
pub fn edge_splits(tree: &TreeTopology) -> Vec<Bipartition> {
    let n = tree.n_leaves;
    if n < 2 {
        return Vec::new();
    }
    let (parent, mask) = tree.masks_below();
    let set: BTreeSet<_> = (0..tree.n_vertices())
        .filter(|&v| parent[v].is_some())
        .map(|v| Bipartition { n: n as u8, mask: mask[v] })
        .collect();
    set.into_iter().collect()
}

/// All `(2n-5)!!` trivalent topologies on leaves `1..=n`, ordered by their
/// sorted interior split lists.
pub fn enumerate_trivalent_topologies(n: usize) -> Result<Vec<TreeTopology>> {
    if !(3..=MAX_ENUMERATED_LEAVES).contains(&n) {
        return Err(Error::Capacity(format!(
            "topology enumeration supports 3..={MAX_ENUMERATED_LEAVES} leaves, got {n}"
        )));
    }
    let mut edge_lists: Vec<Vec<(usize, usize)>> = vec![vec![(0, n), (1, n), (2, n)]];
    for leaf in 3..n {
        let mut next = Vec::with_capacity(edge_lists.len() * (2 * leaf - 3));
        for edges in &edge_lists {
            let new_vertex = n + leaf - 2;
            for (i, &(u, v)) in edges.iter().enumerate() {
                let mut e = edges.clone();
                e[i] = (u, new_vertex);
                e.push((new_vertex, v));
                e.push((new_vertex, leaf));
                next.push(e);
            }
        }
        edge_lists = next;
    }
    let mut trees = edge_lists
        .iter()
        .map(|e| {
            let t = TreeTopology::from_edges(n, e)?;
            Ok((t.interior_splits(), t))
        })
        .collect::<Result<Vec<_>>>()?;
    trees.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(trees.into_iter().map(|(_, t)| t).collect())
}

/// Reassembles the unique trivalent tree whose interior splits are `splits`
/// by tree popping (smallest side first).
pub fn tree_from_splits(splits: &[Bipartition], n: usize) -> Result<TreeTopology> {
    if n < 3 {
        return Err(Error::Usage(format!("reconstruction needs at least 3 leaves, got {n}")));
    }
    let mut set = BTreeSet::new();
    for s in splits {
        if s.n() != n {
            return Err(Error::Usage(format!("split {s} is not on {n} leaves")));
        }
        if s.is_trivial() {
            return Err(Error::Usage(format!("split {s} is trivial")));
        }
        set.insert(*s);
    }
    let splits: Vec<Bipartition> = set.into_iter().collect();
    for (i, a) in splits.iter().enumerate() {
        for b in &splits[i + 1..] {
            if !splits_compatible(a, b)? {
                return Err(Error::IncompatibleSplits(*a, *b));
            }
        }
    }
    if splits.len() != n - 3 {
        return Err(Error::SplitCount { expected: n - 3, found: splits.len() });
    }

    let mut order = splits.clone();
    order.sort_by_key(|s| (s.min_side(), *s));

    let mut adjacency: Vec<Vec<usize>> = (0..n).map(|_| vec![n]).collect();
    adjacency.push((0..n).collect());

    for split in order {
        let target = split.smaller_mask();
        let mut done = false;
        for v in n..adjacency.len() {
            let comps: Vec<(usize, u64)> =
                adjacency[v].iter().map(|&u| (u, component_mask(&adjacency, n, v, u))).collect();
            let inside: Vec<usize> =
                comps.iter().filter(|(_, m)| m & !target == 0).map(|&(u, _)| u).collect();
            let union = comps.iter().filter(|(_, m)| m & !target == 0).fold(0, |acc, (_, m)| acc | m);
            if union == target && inside.len() >= 2 && comps.len() - inside.len() >= 2 {
                let w = adjacency.len();
                adjacency.push(Vec::new());
                adjacency[v].retain(|u| !inside.contains(u));
                adjacency[v].push(w);
                adjacency[w].push(v);
                for u in inside {
                    for x in adjacency[u].iter_mut() {
                        if *x == v {
                            *x = w;
                        }
                    }
                    adjacency[w].push(u);
                }
                done = true;
                break;
            }
        }
        if !done {
            return Err(Error::Consistency(format!("no vertex resolves split {split}")));
        }
    }
    let mut edges = Vec::new();
    for (u, nbrs) in adjacency.iter().enumerate() {
        for &v in nbrs {
            if u < v {
                edges.push((u, v));
            }
        }
    }
    let tree = TreeTopology::from_edges(n, &edges)?;
    debug_assert!(tree.is_trivalent());
    Ok(tree)
}

/// Leaf mask of the component reached from `v` through neighbour `u`.
fn component_mask(adjacency: &[Vec<usize>], n: usize, v: usize, u: usize) -> u64 {
    let mut mask = 0u64;
    let mut stack = vec![(u, v)];
    while let Some((x, from)) = stack.pop() {
        if x < n {
            mask |= 1 << x;
        }
        for &y in &adjacency[x] {
            if y != from {
                stack.push((y, x));
            }
        }
    }
    mask
}

/// Number of bough classes on each side of a bipartition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoughProfile {
    /// Classes among the leaves on the side containing leaf 1.
    pub n1: usize,
    /// Classes among the leaves on the other side.
    pub n2: usize,
}

impl BoughProfile {
    pub fn min(&self) -> usize {
        self.n1.min(self.n2)
    }
}

/// Vertices of the minimal subtree spanning the leaves in `leaves`.
fn spanning_vertices(tree: &TreeTopology, leaves: u64) -> Vec<bool> {
    let mut span = vec![false; tree.n_vertices()];
    let Some(first) = (0..tree.n_leaves).find(|&l| leaves >> l & 1 == 1) else {
        return span;
    };
    let (parent, order) = tree.rooted_order(first);
    let mut hit = vec![false; tree.n_vertices()];
    for &v in order.iter().rev() {
        if tree.is_leaf(v) && leaves >> v & 1 == 1 {
            hit[v] = true;
        }
        if hit[v] {
            if let Some(p) = parent[v] {
                hit[p] = true;
            }
        }
    }
    for v in 0..tree.n_vertices() {
        span[v] = hit[v];
    }
    span
}

/// Components of `tree` minus `removed` that contain at least one leaf of
/// `leaves`.
fn count_classes(tree: &TreeTopology, removed: &[bool], leaves: u64) -> usize {
    let mut seen = removed.to_vec();
    let mut count = 0;
    for start in 0..tree.n_leaves {
        if leaves >> start & 1 == 0 || seen[start] {
            continue;
        }
        count += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(v) = stack.pop() {
            for &u in tree.neighbors(v) {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
    }
    count
}

/// Bough class counts `(n1, n2)` of `split` in `tree`.
pub fn bough_counts(tree: &TreeTopology, split: &Bipartition) -> Result<BoughProfile> {
    if split.n() != tree.n_leaves {
        return Err(Error::Usage(format!(
            "split {split} is not on the {} leaves of the tree",
            tree.n_leaves
        )));
    }
    let (l1, l2) = (split.first_mask(), split.mask());
    let span1 = spanning_vertices(tree, l1);
    let span2 = spanning_vertices(tree, l2);
    Ok(BoughProfile { n1: count_classes(tree, &span2, l1), n2: count_classes(tree, &span1, l2) })
}
