//! Newick reading and writing for unrooted topologies.

use crate::error::{Error, Result};
use crate::trees::TreeTopology;

/// A parsed tree together with the taxon name of every leaf (leaf `i` is
/// vertex `i - 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct ParsedTree {
    pub tree: TreeTopology,
    pub taxa: Vec<String>,
}

/// Writes `tree` rooted at its first interior vertex, children ordered by
/// their smallest leaf. Leaves are named by `names` or numbered from 1.
pub fn write(tree: &TreeTopology, names: Option<&[String]>) -> String {
    let root = if tree.n_vertices() > tree.n_leaves() { tree.n_leaves() } else { 0 };
    write_rooted(tree, root, names)
}

/// Writes `tree` as seen from `root`.
pub fn write_rooted(tree: &TreeTopology, root: usize, names: Option<&[String]>) -> String {
    let mut out = String::new();
    if tree.n_vertices() == 1 {
        out.push_str(&leaf_name(0, names));
    } else if tree.is_leaf(root) {
        // a leaf root becomes the first child of an unlabeled top node
        out.push('(');
        out.push_str(&leaf_name(root, names));
        for c in ordered_children(tree, root, None) {
            out.push(',');
            write_vertex(tree, c, Some(root), names, &mut out);
        }
        out.push(')');
    } else {
        write_vertex(tree, root, None, names, &mut out);
    }
    out.push(';');
    out
}

fn leaf_name(v: usize, names: Option<&[String]>) -> String {
    match names {
        Some(n) => quote(&n[v]),
        None => (v + 1).to_string(),
    }
}

fn quote(name: &str) -> String {
    if name.chars().any(|c| "()[]':;, \t".contains(c)) {
        format!("'{}'", name.replace('\'', "''"))
    } else {
        name.to_string()
    }
}

/// Children of `v` (neighbours other than `parent`) sorted by smallest leaf.
pub fn ordered_children(tree: &TreeTopology, v: usize, parent: Option<usize>) -> Vec<usize> {
    let mut kids: Vec<(usize, usize)> = tree
        .neighbors(v)
        .iter()
        .filter(|&&u| Some(u) != parent)
        .map(|&u| (min_leaf(tree, u, v), u))
        .collect();
    kids.sort_unstable();
    kids.into_iter().map(|(_, u)| u).collect()
}

fn min_leaf(tree: &TreeTopology, v: usize, parent: usize) -> usize {
    let mut best = usize::MAX;
    let mut stack = vec![(v, parent)];
    while let Some((x, p)) = stack.pop() {
        if tree.is_leaf(x) {
            best = best.min(x);
        }
        for &y in tree.neighbors(x) {
            if y != p {
                stack.push((y, x));
            }
        }
    }
    best
}

fn write_vertex(tree: &TreeTopology, v: usize, parent: Option<usize>, names: Option<&[String]>, out: &mut String) {
    if tree.is_leaf(v) && parent.is_some() {
        out.push_str(&leaf_name(v, names));
        return;
    }
    write_children(tree, v, parent, names, out);
}

fn write_children(tree: &TreeTopology, v: usize, parent: Option<usize>, names: Option<&[String]>, out: &mut String) {
    out.push('(');
    for (i, c) in ordered_children(tree, v, parent).into_iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write_vertex(tree, c, Some(v), names, out);
    }
    out.push(')');
}

/// Non-root vertices of `tree` seen from `root`, children before parents, in
/// the order they close in [`write_rooted`].
pub fn postorder(tree: &TreeTopology, root: usize) -> Vec<usize> {
    fn visit(tree: &TreeTopology, v: usize, parent: Option<usize>, out: &mut Vec<usize>) {
        for c in ordered_children(tree, v, parent) {
            visit(tree, c, Some(v), out);
            out.push(c);
        }
    }
    let mut out = Vec::with_capacity(tree.n_vertices());
    visit(tree, root, None, &mut out);
    out
}

#[derive(Debug)]
struct Node {
    label: Option<String>,
    children: Vec<usize>,
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
    nodes: Vec<Node>,
}

impl Parser<'_> {
    fn err<T>(&self, msg: &str) -> Result<T> {
        Err(Error::Parse(format!("newick: {msg} at byte {}", self.pos)))
    }

    fn skip_ws(&mut self) {
        while self.pos < self.s.len() {
            let c = self.s[self.pos];
            if c.is_ascii_whitespace() {
                self.pos += 1;
            } else if c == b'[' {
                // comment
                while self.pos < self.s.len() && self.s[self.pos] != b']' {
                    self.pos += 1;
                }
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.pos).copied()
    }

    fn label(&mut self) -> Result<Option<String>> {
        self.skip_ws();
        if self.peek() == Some(b'\'') {
            self.pos += 1;
            let mut out = Vec::new();
            loop {
                match self.s.get(self.pos) {
                    None => return self.err("unterminated quoted label"),
                    Some(b'\'') if self.s.get(self.pos + 1) == Some(&b'\'') => {
                        out.push(b'\'');
                        self.pos += 2;
                    }
                    Some(b'\'') => {
                        self.pos += 1;
                        break;
                    }
                    Some(&c) => {
                        out.push(c);
                        self.pos += 1;
                    }
                }
            }
            return Ok(Some(String::from_utf8_lossy(&out).into_owned()));
        }
        let start = self.pos;
        while self.pos < self.s.len() && !b"(),:;[".contains(&self.s[self.pos]) && !self.s[self.pos].is_ascii_whitespace()
        {
            self.pos += 1;
        }
        if self.pos == start {
            Ok(None)
        } else {
            Ok(Some(String::from_utf8_lossy(&self.s[start..self.pos]).into_owned()))
        }
    }

    fn branch_length(&mut self) -> Result<()> {
        if self.peek() == Some(b':') {
            self.pos += 1;
            self.skip_ws();
            let start = self.pos;
            while self.pos < self.s.len() && (self.s[self.pos].is_ascii_alphanumeric() || b"+-.".contains(&self.s[self.pos])) {
                self.pos += 1;
            }
            let text = std::str::from_utf8(&self.s[start..self.pos]).unwrap_or("");
            if text.parse::<f64>().is_err() {
                return self.err("malformed branch length");
            }
        }
        Ok(())
    }

    fn subtree(&mut self, depth: usize) -> Result<usize> {
        if depth > 10_000 {
            return self.err("nesting too deep");
        }
        let mut children = Vec::new();
        if self.peek() == Some(b'(') {
            self.pos += 1;
            loop {
                children.push(self.subtree(depth + 1)?);
                match self.peek() {
                    Some(b',') => self.pos += 1,
                    Some(b')') => {
                        self.pos += 1;
                        break;
                    }
                    _ => return self.err("expected ',' or ')'"),
                }
            }
        }
        let label = self.label()?;
        self.branch_length()?;
        self.nodes.push(Node { label, children });
        Ok(self.nodes.len() - 1)
    }
}

/// Parses a Newick string. Branch lengths, comments and internal labels are
/// ignored and vertices of degree two are suppressed. Leaves named exactly
/// `1..n` keep those numbers; otherwise leaves are numbered in order of
/// appearance.
pub fn parse(text: &str) -> Result<ParsedTree> {
    let mut p = Parser { s: text.trim().as_bytes(), pos: 0, nodes: Vec::new() };
    let root = p.subtree(0)?;
    if p.peek() != Some(b';') {
        return p.err("expected ';'");
    }
    p.pos += 1;
    if p.peek().is_some() {
        return p.err("trailing input after ';'");
    }
    let nodes = p.nodes;

    let leaves: Vec<usize> = (0..nodes.len()).filter(|&i| nodes[i].children.is_empty()).collect();
    let mut names = Vec::with_capacity(leaves.len());
    for &l in &leaves {
        match &nodes[l].label {
            Some(s) if !s.is_empty() => names.push(s.clone()),
            _ => return Err(Error::Parse("newick: unnamed leaf".into())),
        }
    }
    let n = leaves.len();
    let numeric: Option<Vec<usize>> = names.iter().map(|s| s.trim().parse::<usize>().ok()).collect();
    let mut leaf_id = vec![usize::MAX; nodes.len()];
    let taxa: Vec<String>;
    match numeric {
        Some(nums) if { let mut s = nums.clone(); s.sort_unstable(); s == (1..=n).collect::<Vec<_>>() } => {
            for (&l, &num) in leaves.iter().zip(&nums) {
                leaf_id[l] = num - 1;
            }
            taxa = (1..=n).map(|i| i.to_string()).collect();
        }
        _ => {
            let mut sorted = names.clone();
            sorted.sort();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Parse("newick: duplicate leaf name".into()));
            }
            for (i, &l) in leaves.iter().enumerate() {
                leaf_id[l] = i;
            }
            taxa = names;
        }
    }
    if n == 1 && nodes.len() == 1 {
        return Ok(ParsedTree { tree: TreeTopology::single_vertex(), taxa });
    }

    // undirected adjacency over parsed nodes, then splice out degree <= 2
    // interior nodes
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (i, node) in nodes.iter().enumerate() {
        for &c in &node.children {
            adj[i].push(c);
            adj[c].push(i);
        }
    }
    let mut alive = vec![true; nodes.len()];
    loop {
        let Some(v) = (0..nodes.len()).find(|&v| alive[v] && !nodes[v].children.is_empty() && adj[v].len() <= 2)
        else {
            break;
        };
        alive[v] = false;
        let nb = std::mem::take(&mut adj[v]);
        for &u in &nb {
            adj[u].retain(|&x| x != v);
        }
        if let [a, b] = nb[..] {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    let _ = root;
    let mut next = n;
    for v in 0..nodes.len() {
        if alive[v] && !nodes[v].children.is_empty() {
            leaf_id[v] = next;
            next += 1;
        }
    }
    let mut edges = Vec::new();
    for v in 0..nodes.len() {
        if !alive[v] {
            continue;
        }
        for &u in &adj[v] {
            if v < u {
                edges.push((leaf_id[v], leaf_id[u]));
            }
        }
    }
    let tree = TreeTopology::from_edges(n, &edges)?;
    Ok(ParsedTree { tree, taxa })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trees::{edge_splits, enumerate_trivalent_topologies};

    #[test]
    fn writes_canonical_form() {
        let q = TreeTopology::from_edges(4, &[(0, 4), (2, 4), (4, 5), (1, 5), (3, 5)]).unwrap();
        assert_eq!(write(&q, None), "(1,(2,4),3);");
        assert_eq!(write(&TreeTopology::single_vertex(), None), "1;");
        assert_eq!(write(&TreeTopology::star(2).unwrap(), None), "(1,2);");
    }

    #[test]
    fn parse_round_trip() {
        for n in 3..=7 {
            for t in enumerate_trivalent_topologies(n).unwrap() {
                let parsed = parse(&write(&t, None)).unwrap();
                assert_eq!(parsed.tree, t);
                assert_eq!(edge_splits(&parsed.tree), edge_splits(&t));
            }
        }
    }

    #[test]
    fn parse_features() {
        let p = parse("((1:0.1,2:0.2)x:0.5,(3,4)[comment]);").unwrap();
        assert_eq!(p.tree.interior_splits().len(), 1);
        assert_eq!(p.tree.interior_splits()[0].to_string(), "1,2|3,4");

        let p = parse("((human,chimp),(mouse,'rat one'));").unwrap();
        assert_eq!(p.taxa, vec!["human", "chimp", "mouse", "rat one"]);
        assert_eq!(write(&p.tree, Some(&p.taxa)), "(human,chimp,(mouse,'rat one'));");

        let p = parse("((4,2),(3,1));").unwrap();
        assert_eq!(p.tree.interior_splits()[0].to_string(), "1,3|2,4");

        assert_eq!(parse("(1,(2));").unwrap().tree, TreeTopology::star(2).unwrap());
        for bad in ["((1,2),(3,4))", "((1,2),(3,4);", "((1,2),(3,));", "((a,a),(b,c));", "(1,2);x"] {
            assert!(matches!(parse(bad), Err(Error::Parse(_))), "{bad}");
        }
    }

    #[test]
    fn postorder_closes_children_first() {
        let t = parse("((1,2),3,(4,5));").unwrap().tree;
        let order = postorder(&t, 7);
        assert_eq!(order.len(), t.n_vertices() - 1);
        assert_eq!(&order[..3], &[0, 1, 5]);
    }
}
