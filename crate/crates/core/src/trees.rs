//! Binary composition layouts over a sentence's leaves.
//!
//! A [`TreeLayout`] lists internal nodes children-first. Builders cover the
//! balanced, left-branching, right-branching and ρ-random layouts; parsed
//! layouts come from fully bracketed text such as `(( the cat ) sat )`.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeRef {
    Leaf(usize),
    Internal(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct InternalNode {
    pub left: NodeRef,
    pub right: NodeRef,
    /// Inclusive leaf-index interval covered by this node.
    pub span: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TreeLayout {
    n_leaves: usize,
    nodes: Vec<InternalNode>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthStats {
    /// Edges from the root to the deepest leaf.
    pub max_depth: usize,
    pub mean_leaf_depth: f64,
}

/// Incremental builder that appends nodes in evaluation order.
struct Builder {
    nodes: Vec<InternalNode>,
}

impl Builder {
    fn span_of(&self, r: NodeRef) -> (usize, usize) {
        match r {
            NodeRef::Leaf(i) => (i, i),
            NodeRef::Internal(i) => self.nodes[i].span,
        }
    }

    fn join(&mut self, left: NodeRef, right: NodeRef) -> NodeRef {
        let span = (self.span_of(left).0, self.span_of(right).1);
        self.nodes.push(InternalNode { left, right, span });
        NodeRef::Internal(self.nodes.len() - 1)
    }

    /// Recursively splits `[lo, lo + len)`; `split` returns the left size.
    fn split(&mut self, lo: usize, len: usize, split: &mut impl FnMut(usize) -> usize) -> NodeRef {
        if len == 1 {
            return NodeRef::Leaf(lo);
        }
        let left_len = split(len);
        let left = self.split(lo, left_len, split);
        let right = self.split(lo + left_len, len - left_len, split);
        self.join(left, right)
    }
}

fn require_leaves(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::invalid("a tree needs at least one leaf"))
    } else {
        Ok(())
    }
}

impl TreeLayout {
    /// Builds a layout from internal nodes, checking every structural invariant.
    pub fn from_nodes(n_leaves: usize, nodes: Vec<InternalNode>) -> Result<Self> {
        let layout = TreeLayout { n_leaves, nodes };
        layout.validate()?;
        Ok(layout)
    }

    /// Splits every `k`-leaf span into `⌈k/2⌉` and `⌊k/2⌋` leaves.
    pub fn balanced(n: usize) -> Result<Self> {
        require_leaves(n)?;
        let mut b = Builder { nodes: Vec::with_capacity(n - 1) };
        b.split(0, n, &mut |k| k.div_ceil(2));
        Ok(TreeLayout { n_leaves: n, nodes: b.nodes })
    }

    /// Merges left to right: node `i` joins node `i-1` with leaf `i+1`.
    pub fn left_branching(n: usize) -> Result<Self> {
        require_leaves(n)?;
        let mut b = Builder { nodes: Vec::with_capacity(n - 1) };
        let mut acc = NodeRef::Leaf(0);
        for i in 1..n {
            acc = b.join(acc, NodeRef::Leaf(i));
        }
        Ok(TreeLayout { n_leaves: n, nodes: b.nodes })
    }

    /// Mirror image of [`TreeLayout::left_branching`].
    pub fn right_branching(n: usize) -> Result<Self> {
        require_leaves(n)?;
        let mut b = Builder { nodes: Vec::with_capacity(n - 1) };
        let mut acc = NodeRef::Leaf(n - 1);
        for i in (0..n - 1).rev() {
            acc = b.join(NodeRef::Leaf(i), acc);
        }
        Ok(TreeLayout { n_leaves: n, nodes: b.nodes })
    }

    /// At every span of `k ≥ 2` leaves, splits `(⌈k/2⌉, ⌊k/2⌋)` with
    /// probability `rho`, otherwise `(k-1, 1)`. A fresh coin is drawn per split.
    pub fn random<R: Rng + ?Sized>(n: usize, rho: f64, rng: &mut R) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::invalid(format!("rho must lie in [0, 1], got {rho}")));
        }
        require_leaves(n)?;
        let mut b = Builder { nodes: Vec::with_capacity(n - 1) };
        b.split(0, n, &mut |k| {
            if rng.random::<f64>() < rho {
                k.div_ceil(2)
            } else {
                k - 1
            }
        });
        Ok(TreeLayout { n_leaves: n, nodes: b.nodes })
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    /// Internal nodes in evaluation (children-first) order.
    pub fn nodes(&self) -> &[InternalNode] {
        &self.nodes
    }

    pub fn root(&self) -> NodeRef {
        if self.nodes.is_empty() {
            NodeRef::Leaf(0)
        } else {
            NodeRef::Internal(self.nodes.len() - 1)
        }
    }

    pub fn span(&self, r: NodeRef) -> (usize, usize) {
        match r {
            NodeRef::Leaf(i) => (i, i),
            NodeRef::Internal(i) => self.nodes[i].span,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_leaves;
        let bad = |msg: String| Err(Error::invalid(format!("invalid tree layout: {msg}")));
        if n == 0 {
            return bad("zero leaves".into());
        }
        if self.nodes.len() != n - 1 {
            return bad(format!("{} internal nodes for {n} leaves", self.nodes.len()));
        }
        let mut leaf_used = vec![false; n];
        let mut node_used = vec![false; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            for child in [node.left, node.right] {
                match child {
                    NodeRef::Leaf(j) => {
                        if j >= n || std::mem::replace(&mut leaf_used[j], true) {
                            return bad(format!("leaf {j} missing or referenced twice"));
                        }
                    }
                    NodeRef::Internal(j) => {
                        if j >= i || std::mem::replace(&mut node_used[j], true) {
                            return bad(format!("node {i} references node {j} out of order or twice"));
                        }
                    }
                }
            }
            let (l, r) = (self.span(node.left), self.span(node.right));
            if l.1 + 1 != r.0 || node.span != (l.0, r.1) {
                return bad(format!("node {i} span {:?} is not {l:?} ∪ {r:?}", node.span));
            }
        }
        if n == 1 {
            return Ok(());
        }
        if node_used.iter().rev().skip(1).any(|u| !u) || node_used.last() == Some(&true) {
            return bad("every internal node except the root must have a parent".into());
        }
        if leaf_used.iter().any(|u| !u) {
            return bad("unreferenced leaf".into());
        }
        if self.nodes.last().unwrap().span != (0, n - 1) {
            return bad("root does not cover every leaf".into());
        }
        Ok(())
    }

    /// Edge count from the root to each leaf.
    pub fn leaf_depths(&self) -> Vec<usize> {
        let mut depths = vec![0; self.n_leaves];
        let mut node_depth = vec![0; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate().rev() {
            let d = node_depth[i] + 1;
            for child in [node.left, node.right] {
                match child {
                    NodeRef::Leaf(j) => depths[j] = d,
                    NodeRef::Internal(j) => node_depth[j] = d,
                }
            }
        }
        depths
    }

    pub fn depth_stats(&self) -> DepthStats {
        let depths = self.leaf_depths();
        DepthStats {
            max_depth: depths.iter().copied().max().unwrap_or(0),
            mean_leaf_depth: depths.iter().sum::<usize>() as f64 / depths.len() as f64,
        }
    }

    /// Longest chain of internal nodes below each node (leaves are level 0).
    pub fn node_levels(&self) -> Vec<usize> {
        let mut levels = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let level_of = |r: NodeRef| match r {
                NodeRef::Leaf(_) => 0,
                NodeRef::Internal(j) => levels[j],
            };
            let l = 1 + level_of(node.left).max(level_of(node.right));
            levels.push(l);
        }
        levels
    }

    /// Canonical bracketing, e.g. `(( t0 t1 ) t2 )`.
    pub fn render(&self, tokens: &[impl AsRef<str>]) -> Result<String> {
        if tokens.len() != self.n_leaves {
            return Err(Error::invalid(format!(
                "{} tokens for a layout with {} leaves",
                tokens.len(),
                self.n_leaves
            )));
        }
        let mut out = String::new();
        self.render_node(self.root(), tokens, &mut out);
        Ok(out)
    }

    /// Canonical bracketing with placeholder tokens `t0 .. t{n-1}`.
    pub fn render_placeholder(&self) -> String {
        let tokens: Vec<String> = (0..self.n_leaves).map(|i| format!("t{i}")).collect();
        self.render(&tokens).expect("placeholder count matches")
    }

    fn render_node(&self, r: NodeRef, tokens: &[impl AsRef<str>], out: &mut String) {
        match r {
            NodeRef::Leaf(i) => out.push_str(tokens[i].as_ref()),
            NodeRef::Internal(i) => {
                let node = self.nodes[i];
                out.push('(');
                if matches!(node.left, NodeRef::Leaf(_)) {
                    out.push(' ');
                }
                self.render_node(node.left, tokens, out);
                out.push(' ');
                self.render_node(node.right, tokens, out);
                if matches!(node.right, NodeRef::Leaf(_)) {
                    out.push(' ');
                }
                out.push(')');
            }
        }
    }
}

impl fmt::Display for TreeLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render_placeholder())
    }
}

#[derive(Debug)]
enum Parsed {
    Token(String),
    Group(Vec<Parsed>, usize),
}

struct Reader<'a> {
    text: &'a str,
    pos: usize,
}

impl Reader<'_> {
    fn err<T>(&self, offset: usize, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            offset,
            message: message.into(),
        })
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.text[self.pos..].chars().next() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn item(&mut self) -> Result<Parsed> {
        self.skip_ws();
        let start = self.pos;
        match self.text[self.pos..].chars().next() {
            None => self.err(start, "unexpected end of input"),
            Some(')') => self.err(start, "unbalanced `)`"),
            Some('(') => {
                self.pos += 1;
                let mut children = Vec::new();
                loop {
                    self.skip_ws();
                    match self.text[self.pos..].chars().next() {
                        None => return self.err(start, "unclosed `(`"),
                        Some(')') => {
                            self.pos += 1;
                            return Ok(Parsed::Group(children, start));
                        }
                        Some(_) => children.push(self.item()?),
                    }
                }
            }
            Some(_) => {
                let end = self.text[self.pos..]
                    .find(|c: char| c.is_whitespace() || c == '(' || c == ')')
                    .map_or(self.text.len(), |i| self.pos + i);
                self.pos = end;
                Ok(Parsed::Token(self.text[start..end].to_owned()))
            }
        }
    }
}

/// Reads a fully bracketed binary tree. Tokens are whitespace separated and
/// parentheses carry no labels. With `strict` off, unary groups collapse and
/// wider groups are left-binarized instead of being rejected.
pub fn parse_bracketed_with(text: &str, strict: bool) -> Result<(Vec<String>, TreeLayout)> {
    let mut reader = Reader { text, pos: 0 };
    reader.skip_ws();
    if reader.pos == text.len() {
        return reader.err(0, "empty input");
    }
    let tree = reader.item()?;
    reader.skip_ws();
    if reader.pos != text.len() {
        return reader.err(reader.pos, "trailing input after the root");
    }
    let mut tokens = Vec::new();
    let mut b = Builder { nodes: Vec::new() };
    build_parsed(&tree, strict, &mut tokens, &mut b)?;
    let layout = TreeLayout {
        n_leaves: tokens.len(),
        nodes: b.nodes,
    };
    debug_assert!(layout.validate().is_ok());
    Ok((tokens, layout))
}

pub fn parse_bracketed(text: &str) -> Result<(Vec<String>, TreeLayout)> {
    parse_bracketed_with(text, true)
}

fn build_parsed(
    p: &Parsed,
    strict: bool,
    tokens: &mut Vec<String>,
    b: &mut Builder,
) -> Result<NodeRef> {
    match p {
        Parsed::Token(t) => {
            tokens.push(t.clone());
            Ok(NodeRef::Leaf(tokens.len() - 1))
        }
        Parsed::Group(children, offset) => {
            if strict && children.len() != 2 {
                return Err(Error::Parse {
                    offset: *offset,
                    message: format!("node has {} children, expected 2", children.len()),
                });
            }
            let mut iter = children.iter();
            let first = iter.next().ok_or_else(|| Error::Parse {
                offset: *offset,
                message: "empty `()` group".into(),
            })?;
            let mut acc = build_parsed(first, strict, tokens, b)?;
            for child in iter {
                let right = build_parsed(child, strict, tokens, b)?;
                acc = b.join(acc, right);
            }
            Ok(acc)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spans(t: &TreeLayout) -> Vec<(usize, usize)> {
        t.nodes().iter().map(|n| n.span).collect()
    }

    fn split_of(t: &TreeLayout, r: NodeRef) -> (usize, usize) {
        let NodeRef::Internal(i) = r else { panic!("leaf") };
        let n = t.nodes()[i];
        let size = |r| {
            let (a, b) = t.span(r);
            b - a + 1
        };
        (size(n.left), size(n.right))
    }

    #[test]
    fn single_leaf_has_no_internal_nodes() {
        for t in [
            TreeLayout::balanced(1),
            TreeLayout::left_branching(1),
            TreeLayout::right_branching(1),
        ] {
            let t = t.unwrap();
            assert!(t.nodes().is_empty());
            assert_eq!(t.root(), NodeRef::Leaf(0));
        }
    }

    #[test]
    fn zero_leaves_rejected() {
        assert!(TreeLayout::balanced(0).is_err());
        assert!(TreeLayout::left_branching(0).is_err());
        assert!(TreeLayout::right_branching(0).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(TreeLayout::random(0, 0.5, &mut rng).is_err());
    }

    #[test]
    fn balanced_five_splits_three_two() {
        let t = TreeLayout::balanced(5).unwrap();
        assert_eq!(split_of(&t, t.root()), (3, 2));
        let root = t.nodes()[t.nodes().len() - 1];
        assert_eq!(split_of(&t, root.left), (2, 1));
    }

    #[test]
    fn balanced_depths() {
        assert_eq!(TreeLayout::balanced(5).unwrap().depth_stats().max_depth, 3);
        assert_eq!(TreeLayout::balanced(4).unwrap().depth_stats().max_depth, 2);
        let s8 = TreeLayout::balanced(8).unwrap().depth_stats();
        assert_eq!((s8.max_depth, s8.mean_leaf_depth), (3, 3.0));
        assert!((TreeLayout::balanced(5).unwrap().depth_stats().mean_leaf_depth - 2.4).abs() < 1e-12);
    }

    #[test]
    fn two_leaves_identical_for_all_builders() {
        let l = TreeLayout::left_branching(2).unwrap();
        assert_eq!(l, TreeLayout::right_branching(2).unwrap());
        assert_eq!(l, TreeLayout::balanced(2).unwrap());
        assert_eq!(spans(&l), vec![(0, 1)]);
    }

    #[test]
    fn chain_spans() {
        assert_eq!(spans(&TreeLayout::left_branching(4).unwrap()), vec![(0, 1), (0, 2), (0, 3)]);
        assert_eq!(spans(&TreeLayout::right_branching(4).unwrap()), vec![(2, 3), (1, 3), (0, 3)]);
        assert_eq!(TreeLayout::left_branching(8).unwrap().depth_stats().max_depth, 7);
        // last leaf sits directly under the root of a left-branching tree
        assert_eq!(TreeLayout::left_branching(6).unwrap().leaf_depths()[5], 1);
    }

    #[test]
    fn random_rejects_bad_rho() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(TreeLayout::random(4, 1.5, &mut rng).is_err());
        assert!(TreeLayout::random(4, -0.1, &mut rng).is_err());
        assert!(TreeLayout::random(4, f64::NAN, &mut rng).is_err());
    }

    #[test]
    fn random_endpoints_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in 1..40 {
            assert_eq!(TreeLayout::random(n, 0.0, &mut rng).unwrap(), TreeLayout::left_branching(n).unwrap());
            assert_eq!(TreeLayout::random(n, 1.0, &mut rng).unwrap(), TreeLayout::balanced(n).unwrap());
        }
    }

    #[test]
    fn parse_examples() {
        let (tokens, t) = parse_bracketed("( a b )").unwrap();
        assert_eq!(tokens, ["a", "b"]);
        assert_eq!(t.nodes().len(), 1);

        let (tokens, t) = parse_bracketed("(( a b ) c )").unwrap();
        assert_eq!(tokens, ["a", "b", "c"]);
        let root = t.nodes()[1];
        assert_eq!(root.left, NodeRef::Internal(0));
        assert_eq!(t.span(root.left), (0, 1));
        assert_eq!(root.right, NodeRef::Leaf(2));

        let (tokens, _) = parse_bracketed("(( the ( cat sat )) .)").unwrap();
        assert_eq!(tokens, ["the", "cat", "sat", "."]);

        let (tokens, t) = parse_bracketed("word").unwrap();
        assert_eq!((tokens.len(), t.nodes().len()), (1, 0));
    }

    #[test]
    fn parse_errors_carry_offsets() {
        match parse_bracketed("( a b c )") {
            Err(Error::Parse { offset, message }) => {
                assert_eq!(offset, 0);
                assert!(message.contains("3 children"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_bracketed("(( a b ) c"), Err(Error::Parse { offset: 0, .. })));
        assert!(matches!(parse_bracketed("( a b ))"), Err(Error::Parse { offset: 7, .. })));
        assert!(matches!(parse_bracketed("   "), Err(Error::Parse { .. })));
        assert!(matches!(parse_bracketed(""), Err(Error::Parse { .. })));
        assert!(matches!(parse_bracketed("( a ( b ) )"), Err(Error::Parse { offset: 4, .. })));
    }

    #[test]
    fn lenient_mode_left_binarizes() {
        let (tokens, t) = parse_bracketed_with("( a b c ( d ) )", false).unwrap();
        assert_eq!(tokens, ["a", "b", "c", "d"]);
        assert_eq!(t, TreeLayout::left_branching(4).unwrap());
    }

    #[test]
    fn render_examples() {
        assert_eq!(TreeLayout::balanced(4).unwrap().to_string(), "(( t0 t1 ) ( t2 t3 ))");
        assert_eq!(TreeLayout::left_branching(3).unwrap().to_string(), "(( t0 t1 ) t2 )");
        assert_eq!(TreeLayout::balanced(1).unwrap().to_string(), "t0");
    }

    #[test]
    fn validate_catches_broken_layouts() {
        let bad = TreeLayout::from_nodes(
            3,
            vec![
                InternalNode { left: NodeRef::Leaf(0), right: NodeRef::Leaf(2), span: (0, 2) },
                InternalNode { left: NodeRef::Internal(0), right: NodeRef::Leaf(1), span: (0, 2) },
            ],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn node_levels_follow_children() {
        let t = TreeLayout::balanced(4).unwrap();
        assert_eq!(t.node_levels(), vec![1, 1, 2]);
        let l = TreeLayout::left_branching(4).unwrap();
        assert_eq!(l.node_levels(), vec![1, 2, 3]);
    }
}
