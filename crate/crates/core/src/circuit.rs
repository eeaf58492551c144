//! Circuit structure: an index-ordered DAG of input, product and sum nodes.
//!
//! Nodes are stored in topological order, so every child index is smaller
//! than its parent's and the root is the last node. Sum edges are numbered
//! densely in node order; edge `e` of sum node `n` carries the log-parameter
//! `phi[e]` of a [`Params`](crate::Params) vector.

use std::fmt;
use std::ops::Range;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Dense index of a sum edge.
pub type EdgeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarKind {
    /// Categorical variable with the given number of categories.
    Categorical(u32),
    Continuous,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InputDist {
    /// Point mass on one category of a categorical variable.
    Indicator { category: u32 },
    /// Gaussian density with fixed (non-learnable) parameters.
    FixedGaussian { mean: f64, std: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Input { var: usize, dist: InputDist },
    Product { children: Vec<NodeId> },
    Sum { children: Vec<NodeId> },
}

impl Node {
    pub fn children(&self) -> &[NodeId] {
        match self {
            Node::Input { .. } => &[],
            Node::Product { children } | Node::Sum { children } => children,
        }
    }

    pub fn is_sum(&self) -> bool {
        matches!(self, Node::Sum { .. })
    }

    pub fn is_product(&self) -> bool {
        matches!(self, Node::Product { .. })
    }

    pub fn is_input(&self) -> bool {
        matches!(self, Node::Input { .. })
    }
}

/// Immutable circuit structure. Parameters live separately in `Params`.
#[derive(Clone, Debug, PartialEq)]
pub struct Circuit {
    vars: Vec<VarKind>,
    nodes: Vec<Node>,
    // First edge id of every node; only meaningful for sum nodes.
    edge_start: Vec<usize>,
    edge_parent: Vec<NodeId>,
    edge_child: Vec<NodeId>,
}

impl Circuit {
    /// Builds a circuit after checking index ordering and per-node invariants.
    ///
    /// Smoothness, decomposability and alternation are not checked here;
    /// see [`Circuit::validate`].
    pub fn new(vars: Vec<VarKind>, nodes: Vec<Node>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Structure { node: 0, reason: "circuit has no nodes".into() });
        }
        for (k, kind) in vars.iter().enumerate() {
            if let VarKind::Categorical(0) = kind {
                return Err(Error::Structure {
                    node: 0,
                    reason: format!("variable {k} has zero categories"),
                });
            }
        }
        let mut edge_start = Vec::with_capacity(nodes.len());
        let mut edge_parent = Vec::new();
        let mut edge_child = Vec::new();
        for (i, node) in nodes.iter().enumerate() {
            let bad = |reason: String| Error::Structure { node: i, reason };
            edge_start.push(edge_parent.len());
            match node {
                Node::Input { var, dist } => {
                    let kind = vars
                        .get(*var)
                        .ok_or_else(|| bad(format!("variable {var} out of range")))?;
                    match (dist, kind) {
                        (InputDist::Indicator { category }, VarKind::Categorical(card)) => {
                            if category >= card {
                                return Err(bad(format!(
                                    "category {category} out of range for variable {var} with {card} categories"
                                )));
                            }
                        }
                        (InputDist::FixedGaussian { mean, std }, VarKind::Continuous) => {
                            if !(std.is_finite() && *std > 0.0) || !mean.is_finite() {
                                return Err(bad(format!("invalid gaussian ({mean}, {std})")));
                            }
                        }
                        (InputDist::Indicator { .. }, VarKind::Continuous) => {
                            return Err(bad(format!("indicator over continuous variable {var}")));
                        }
                        (InputDist::FixedGaussian { .. }, VarKind::Categorical(_)) => {
                            return Err(bad(format!("gaussian over categorical variable {var}")));
                        }
                    }
                }
                Node::Product { children } | Node::Sum { children } => {
                    if children.is_empty() {
                        return Err(bad("inner node without children".into()));
                    }
                    for c in children {
                        if c.0 >= nodes.len() {
                            return Err(bad(format!("child {c} out of range")));
                        }
                        if c.0 >= i {
                            return Err(bad(format!("child {c} does not precede its parent")));
                        }
                    }
                    if node.is_sum() {
                        for c in children {
                            edge_parent.push(NodeId(i));
                            edge_child.push(*c);
                        }
                    }
                }
            }
        }
        Ok(Circuit { vars, nodes, edge_start, edge_parent, edge_child })
    }

    pub fn vars(&self) -> &[VarKind] {
        &self.vars
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edge_parent.len()
    }

    pub fn root(&self) -> NodeId {
        NodeId(self.nodes.len() - 1)
    }

    /// Edge ids of a sum node, in child order. Empty for other nodes.
    pub fn edges(&self, id: NodeId) -> Range<EdgeId> {
        match &self.nodes[id.0] {
            Node::Sum { children } => {
                let s = self.edge_start[id.0];
                s..s + children.len()
            }
            _ => 0..0,
        }
    }

    pub fn edge_parent(&self, e: EdgeId) -> NodeId {
        self.edge_parent[e]
    }

    pub fn edge_child(&self, e: EdgeId) -> NodeId {
        self.edge_child[e]
    }

    pub fn sum_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().enumerate().filter(|(_, n)| n.is_sum()).map(|(i, _)| NodeId(i))
    }

    /// Per-node variable scopes, one bottom-up pass.
    pub fn scopes(&self) -> Vec<Scope> {
        let mut out: Vec<Scope> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let mut s = Scope::empty(self.vars.len());
            match node {
                Node::Input { var, .. } => s.insert(*var),
                Node::Product { children } | Node::Sum { children } => {
                    for c in children {
                        s.union_with(&out[c.0]);
                    }
                }
            }
            out.push(s);
        }
        out
    }

    /// Number of parents of every node.
    pub fn parent_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.nodes.len()];
        for node in &self.nodes {
            for c in node.children() {
                counts[c.0] += 1;
            }
        }
        counts
    }

    /// Checks smoothness, decomposability, sum/product alternation and the single-root rule.
    pub fn validate(&self) -> ValidationReport {
        let scopes = self.scopes();
        let parents = self.parent_counts();
        let root = self.root();
        let mut violations = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let id = NodeId(i);
            if id != root && parents[i] == 0 {
                let rule = if node.is_input() { Rule::Dangling } else { Rule::SingleRoot };
                violations.push(Violation {
                    node: id,
                    rule,
                    detail: "node has no parent and is not the root".into(),
                });
            }
            match node {
                Node::Input { .. } => {}
                Node::Sum { children } => {
                    let first = &scopes[children[0].0];
                    for c in &children[1..] {
                        if scopes[c.0] != *first {
                            violations.push(Violation {
                                node: id,
                                rule: Rule::Smoothness,
                                detail: format!(
                                    "child {} has scope {} but child {} has scope {}",
                                    children[0], first, c, scopes[c.0]
                                ),
                            });
                            break;
                        }
                    }
                    for c in children {
                        if self.nodes[c.0].is_sum() {
                            violations.push(Violation {
                                node: id,
                                rule: Rule::Alternation,
                                detail: format!("sum node has sum child {c}"),
                            });
                        }
                    }
                }
                Node::Product { children } => {
                    let mut seen = Scope::empty(self.vars.len());
                    for c in children {
                        if seen.intersects(&scopes[c.0]) {
                            violations.push(Violation {
                                node: id,
                                rule: Rule::Decomposability,
                                detail: format!("child {c} overlaps the scope of an earlier sibling"),
                            });
                            break;
                        }
                        seen.union_with(&scopes[c.0]);
                    }
                    for c in children {
                        if self.nodes[c.0].is_product() {
                            violations.push(Violation {
                                node: id,
                                rule: Rule::Alternation,
                                detail: format!("product node has product child {c}"),
                            });
                        }
                    }
                }
            }
        }
        ValidationReport { violations }
    }
}

/// Set of variable indices, stored as a bitset.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Scope {
    words: Vec<u64>,
}

impl Scope {
    pub fn empty(num_vars: usize) -> Self {
        Scope { words: vec![0; num_vars.div_ceil(64)] }
    }

    pub fn insert(&mut self, var: usize) {
        self.words[var / 64] |= 1 << (var % 64);
    }

    pub fn contains(&self, var: usize) -> bool {
        self.words.get(var / 64).is_some_and(|w| w & (1 << (var % 64)) != 0)
    }

    pub fn union_with(&mut self, other: &Scope) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }

    pub fn intersects(&self, other: &Scope) -> bool {
        self.words.iter().zip(&other.words).any(|(a, b)| a & b != 0)
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(k, &w)| {
            (0..64).filter(move |b| w & (1 << b) != 0).map(move |b| k * 64 + b)
        })
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, v) in self.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "X{v}")?;
        }
        write!(f, "}}")
    }
}

impl fmt::Debug for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rule {
    Smoothness,
    Decomposability,
    Alternation,
    SingleRoot,
    Dangling,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rule::Smoothness => "smoothness",
            Rule::Decomposability => "decomposability",
            Rule::Alternation => "alternation",
            Rule::SingleRoot => "single-root",
            Rule::Dangling => "dangling",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub node: NodeId,
    pub rule: Rule,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok() {
            return writeln!(f, "ok");
        }
        for v in &self.violations {
            writeln!(f, "node {}: {}: {}", v.node, v.rule, v.detail)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::fixtures;

    fn ind(var: usize, category: u32) -> Node {
        Node::Input { var, dist: InputDist::Indicator { category } }
    }

    #[test]
    fn c1_is_valid() {
        let (c, _) = fixtures::c1::<f64>();
        assert!(c.validate().ok());
        assert_eq!(c.num_edges(), 2);
        assert_eq!(c.edges(c.root()), 0..2);
    }

    #[test]
    fn scopes_of_fixtures() {
        let (c1, _) = fixtures::c1::<f64>();
        let s = c1.scopes();
        assert_eq!(s[c1.root().0].iter().collect::<Vec<_>>(), vec![0]);

        let (c2, _) = fixtures::c2::<f64>();
        let s = c2.scopes();
        assert_eq!(s[c2.root().0].iter().collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(s[fixtures::C2_A1.0].iter().collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn smoothness_violation_reported() {
        let vars = vec![VarKind::Categorical(2); 2];
        let nodes = vec![ind(0, 0), ind(1, 0), Node::Sum { children: vec![NodeId(0), NodeId(1)] }];
        let c = Circuit::new(vars, nodes).unwrap();
        let r = c.validate();
        assert!(!r.ok());
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].rule, Rule::Smoothness);
        assert_eq!(r.violations[0].node, NodeId(2));
    }

    #[test]
    fn decomposability_violation_reported() {
        let vars = vec![VarKind::Categorical(2)];
        let nodes = vec![ind(0, 0), ind(0, 1), Node::Product { children: vec![NodeId(0), NodeId(1)] }];
        let c = Circuit::new(vars, nodes).unwrap();
        let r = c.validate();
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].rule, Rule::Decomposability);
    }

    #[test]
    fn alternation_and_roots() {
        let vars = vec![VarKind::Categorical(2)];
        let nodes = vec![
            ind(0, 0),
            ind(0, 1),
            Node::Sum { children: vec![NodeId(0), NodeId(1)] },
            Node::Sum { children: vec![NodeId(0), NodeId(1)] },
            Node::Sum { children: vec![NodeId(2)] },
        ];
        let c = Circuit::new(vars, nodes).unwrap();
        let rules: Vec<Rule> = c.validate().violations.iter().map(|v| v.rule).collect();
        assert!(rules.contains(&Rule::SingleRoot));
        assert!(rules.contains(&Rule::Alternation));

        let vars = vec![VarKind::Categorical(3)];
        let nodes = vec![ind(0, 0), ind(0, 1), ind(0, 2), Node::Sum { children: vec![NodeId(0), NodeId(1)] }];
        let c = Circuit::new(vars, nodes).unwrap();
        let r = c.validate();
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].rule, Rule::Dangling);
    }

    #[test]
    fn malformed_child_index_is_structural_error() {
        let vars = vec![VarKind::Categorical(2)];
        let nodes = vec![ind(0, 0), Node::Sum { children: vec![NodeId(7)] }];
        assert!(matches!(Circuit::new(vars.clone(), nodes), Err(Error::Structure { node: 1, .. })));
        let nodes = vec![ind(0, 0), Node::Sum { children: vec![NodeId(1)] }];
        assert!(matches!(Circuit::new(vars.clone(), nodes), Err(Error::Structure { node: 1, .. })));
        let nodes = vec![ind(0, 2)];
        assert!(Circuit::new(vars.clone(), nodes).is_err());
        let nodes = vec![ind(0, 0), Node::Product { children: vec![] }];
        assert!(Circuit::new(vars, nodes).is_err());
    }

    #[test]
    fn gaussian_std_must_be_positive() {
        let vars = vec![VarKind::Continuous];
        let nodes = vec![Node::Input { var: 0, dist: InputDist::FixedGaussian { mean: 0.0, std: 0.0 } }];
        assert!(Circuit::new(vars, nodes).is_err());
    }

    #[test]
    fn scopes_ignore_sibling_order() {
        let (c2, _) = fixtures::c2::<f64>();
        let mut nodes = c2.nodes().to_vec();
        for n in nodes.iter_mut() {
            if let Node::Product { children } | Node::Sum { children } = n {
                children.reverse();
            }
        }
        let permuted = Circuit::new(c2.vars().to_vec(), nodes).unwrap();
        assert_eq!(permuted.scopes(), c2.scopes());
        assert_eq!(c2.scopes(), c2.scopes());
    }
}
