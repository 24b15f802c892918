//! Graph data model: dependency trees, semantic DAGs, and the arborescence
//! form that links them.
//!
//! A semantic graph is a DAG of nodes anchored to sentence tokens (the
//! instance link), with scalar attributes on nodes and edges. For sequence
//! prediction the DAG is converted to a single-rooted tree (re-entrant nodes
//! are copied and coindexed), linearized by pre-order traversal, and later
//! recovered by merging coindexed copies. All operations here are pure.

mod arborescence;
mod iso;
mod linearize;
mod recover;
pub mod synthetic;

pub use arborescence::uds_to_arborescence;
pub use iso::isomorphic;
pub use linearize::{delinearize, linearize, LinearizedGraph};
pub use recover::recover_dag;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label of the virtual root node.
pub const ROOT_LABEL: &str = "<root>";
/// Edge label from the virtual root to each graph root.
pub const ROOT_EDGE_LABEL: &str = "root";
/// Edge label for semantic-to-semantic edges.
pub const SEMANTIC_EDGE_LABEL: &str = "arg";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    /// 1-based sentence position.
    pub index: usize,
    pub form: String,
    pub upos: String,
}

/// The non-core CoNLL-U columns, carried through so written output
/// reproduces its source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConlluExtra {
    pub lemma: String,
    pub xpos: String,
    pub feats: String,
    pub deps: String,
    pub misc: String,
}

impl Default for ConlluExtra {
    fn default() -> Self {
        ConlluExtra {
            lemma: "_".to_string(),
            xpos: "_".to_string(),
            feats: "_".to_string(),
            deps: "_".to_string(),
            misc: "_".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UDTree {
    pub tokens: Vec<Token>,
    /// heads[i] is the 1-based head of token i+1; 0 marks the root.
    pub heads: Vec<usize>,
    pub deprels: Vec<String>,
    #[serde(default)]
    pub comments: Vec<String>,
    #[serde(default)]
    pub extras: Vec<ConlluExtra>,
}

impl UDTree {
    pub fn new(forms_upos: &[(&str, &str)], heads: Vec<usize>, deprels: Vec<&str>) -> UDTree {
        let tokens = forms_upos
            .iter()
            .enumerate()
            .map(|(i, (form, upos))| Token {
                index: i + 1,
                form: form.to_string(),
                upos: upos.to_string(),
            })
            .collect::<Vec<_>>();
        let extras = vec![ConlluExtra::default(); tokens.len()];
        UDTree {
            tokens,
            heads,
            deprels: deprels.iter().map(|s| s.to_string()).collect(),
            comments: Vec::new(),
            extras,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.tokens.len();
        if self.heads.len() != t || self.deprels.len() != t {
            return Err(Error::Validation(format!(
                "tree has {t} tokens but {} heads and {} relations",
                self.heads.len(),
                self.deprels.len()
            )));
        }
        if t == 0 {
            return Err(Error::Validation("empty sentence".into()));
        }
        for (i, tok) in self.tokens.iter().enumerate() {
            if tok.index != i + 1 {
                return Err(Error::Validation(format!(
                    "token at position {} carries index {}",
                    i + 1,
                    tok.index
                )));
            }
            if tok.form.is_empty() {
                return Err(Error::Validation(format!("token {} has empty form", i + 1)));
            }
        }
        let roots = self.heads.iter().filter(|&&h| h == 0).count();
        if roots != 1 {
            return Err(Error::Validation(format!(
                "tree must have exactly one root, found {roots}"
            )));
        }
        if let Some(&bad) = self.heads.iter().find(|&&h| h > t) {
            return Err(Error::Validation(format!(
                "head {bad} out of range for {t} tokens"
            )));
        }
        // Walk each head chain; a chain longer than T implies a cycle.
        for start in 1..=t {
            let mut cur = start;
            for _ in 0..t {
                cur = self.heads[cur - 1];
                if cur == 0 {
                    break;
                }
            }
            if cur != 0 {
                return Err(Error::Validation(format!(
                    "head cycle through token {start}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributeValue {
    /// Scalar in [-3, 3].
    pub value: f64,
    /// When false, the value is ignored by losses and metrics.
    #[serde(default = "default_true")]
    pub applies: bool,
}

fn default_true() -> bool {
    true
}

impl AttributeValue {
    pub fn new(value: f64) -> AttributeValue {
        AttributeValue {
            value,
            applies: true,
        }
    }

    /// Clamp into [-3, 3]; the bool reports whether clamping changed it.
    pub fn clamped(value: f64, applies: bool) -> (AttributeValue, bool) {
        let c = value.clamp(-3.0, 3.0);
        (
            AttributeValue {
                value: c,
                applies,
            },
            c != value,
        )
    }
}

pub type AttrMap = BTreeMap<String, AttributeValue>;

/// Drop entries whose mask is off; absent and non-applying are equivalent.
pub fn canonical_attrs(attrs: &AttrMap) -> AttrMap {
    attrs
        .iter()
        .filter(|(_, v)| v.applies)
        .map(|(k, v)| (k.clone(), *v))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticNode {
    pub id: String,
    /// 1-based index of the token this node instantiates.
    pub head_token: usize,
    #[serde(default)]
    pub attributes: AttrMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticEdge {
    pub src: String,
    pub dst: String,
    #[serde(default)]
    pub attributes: AttrMap,
}

/// Directed acyclic semantic graph over one sentence. Declared roots have
/// indegree 0 and every node is reachable from some root.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UDSGraph {
    pub nodes: Vec<SemanticNode>,
    pub edges: Vec<SemanticEdge>,
    pub roots: Vec<String>,
}

impl UDSGraph {
    pub fn is_trivial(&self) -> bool {
        self.nodes.is_empty() && self.edges.is_empty() && self.roots.is_empty()
    }

    pub fn node(&self, id: &str) -> Option<&SemanticNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Structural validation. `n_tokens` additionally bounds instance links.
    /// The fully empty graph is accepted (a sentence can lack semantics).
    pub fn validate(&self, n_tokens: Option<usize>) -> Result<()> {
        if self.is_trivial() {
            return Ok(());
        }
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if !ids.insert(n.id.as_str()) {
                return Err(Error::Validation(format!("duplicate node id {}", n.id)));
            }
            if n.head_token == 0 {
                return Err(Error::DanglingInstance {
                    node: n.id.clone(),
                    token: 0,
                    len: n_tokens.unwrap_or(0),
                });
            }
            if let Some(t) = n_tokens {
                if n.head_token > t {
                    return Err(Error::DanglingInstance {
                        node: n.id.clone(),
                        token: n.head_token,
                        len: t,
                    });
                }
            }
        }
        let mut seen_edges = BTreeSet::new();
        let mut indegree: BTreeMap<&str, usize> = BTreeMap::new();
        for e in &self.edges {
            if e.src == e.dst {
                return Err(Error::Cycle {
                    src: e.src.clone(),
                    dst: e.dst.clone(),
                });
            }
            if !ids.contains(e.src.as_str()) || !ids.contains(e.dst.as_str()) {
                return Err(Error::Validation(format!(
                    "edge {} -> {} references a missing node",
                    e.src, e.dst
                )));
            }
            if !seen_edges.insert((e.src.as_str(), e.dst.as_str())) {
                return Err(Error::Validation(format!(
                    "duplicate edge {} -> {}",
                    e.src, e.dst
                )));
            }
            *indegree.entry(e.dst.as_str()).or_default() += 1;
        }
        if self.roots.is_empty() {
            return Err(Error::Validation("graph with nodes but no roots".into()));
        }
        let mut root_set = BTreeSet::new();
        for r in &self.roots {
            if !ids.contains(r.as_str()) {
                return Err(Error::Validation(format!("root {r} is not a node")));
            }
            if !root_set.insert(r.as_str()) {
                return Err(Error::Validation(format!("root {r} listed twice")));
            }
            if indegree.get(r.as_str()).copied().unwrap_or(0) != 0 {
                return Err(Error::Validation(format!(
                    "root {r} has incoming edges"
                )));
            }
        }
        self.check_acyclic()?;
        // Reachability from the declared roots.
        let succ: BTreeMap<&str, Vec<&str>> = {
            let mut m: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
            for e in &self.edges {
                m.entry(e.src.as_str()).or_default().push(e.dst.as_str());
            }
            m
        };
        let mut reached: BTreeSet<&str> = BTreeSet::new();
        let mut queue: Vec<&str> = self.roots.iter().map(|s| s.as_str()).collect();
        while let Some(u) = queue.pop() {
            if reached.insert(u) {
                if let Some(vs) = succ.get(u) {
                    queue.extend(vs);
                }
            }
        }
        if let Some(n) = self.nodes.iter().find(|n| !reached.contains(n.id.as_str())) {
            return Err(Error::Validation(format!(
                "node {} unreachable from the roots",
                n.id
            )));
        }
        Ok(())
    }

    /// Depth-first cycle check; reports a back edge on failure.
    fn check_acyclic(&self) -> Result<()> {
        let mut succ: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for e in &self.edges {
            succ.entry(e.src.as_str()).or_default().push(e.dst.as_str());
        }
        // 0 = white, 1 = on stack, 2 = done
        let mut color: BTreeMap<&str, u8> = BTreeMap::new();
        for n in &self.nodes {
            if color.get(n.id.as_str()).copied().unwrap_or(0) != 0 {
                continue;
            }
            let mut stack: Vec<(&str, usize)> = vec![(n.id.as_str(), 0)];
            color.insert(n.id.as_str(), 1);
            while let Some((u, i)) = stack.pop() {
                let next = succ.get(u).and_then(|vs| vs.get(i)).copied();
                match next {
                    Some(v) => {
                        stack.push((u, i + 1));
                        match color.get(v).copied().unwrap_or(0) {
                            0 => {
                                color.insert(v, 1);
                                stack.push((v, 0));
                            }
                            1 => {
                                return Err(Error::Cycle {
                                    src: u.to_string(),
                                    dst: v.to_string(),
                                })
                            }
                            _ => {}
                        }
                    }
                    None => {
                        color.insert(u, 2);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn indegree(&self, id: &str) -> usize {
        self.edges.iter().filter(|e| e.dst == id).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Root,
    Semantic,
    Syntactic,
}

/// One node of the tree form. Copies of a re-entrant semantic node share its
/// coindex and label; only the first (pre-order) occurrence carries the
/// instance link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArbNode {
    pub label: String,
    pub source_index: Option<usize>,
    pub coindex: usize,
    pub kind: NodeKind,
}

/// Single-rooted tree over [`ArbNode`]s. `nodes[0]` is the virtual root and
/// the node sequence is the canonical pre-order, so `parent[i] < i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Arborescence {
    pub nodes: Vec<ArbNode>,
    pub parent: Vec<usize>,
    pub edge_labels: Vec<String>,
    pub node_attrs: Vec<AttrMap>,
    pub edge_attrs: Vec<AttrMap>,
}

impl Arborescence {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        if n == 0
            || self.parent.len() != n
            || self.edge_labels.len() != n
            || self.node_attrs.len() != n
            || self.edge_attrs.len() != n
        {
            return Err(Error::Validation("misaligned arborescence arrays".into()));
        }
        if self.nodes[0].kind != NodeKind::Root || self.parent[0] != 0 {
            return Err(Error::Validation("node 0 must be the virtual root".into()));
        }
        for i in 1..n {
            if self.nodes[i].kind == NodeKind::Root {
                return Err(Error::Validation(format!("second root at index {i}")));
            }
            if self.parent[i] >= i {
                return Err(Error::Validation(format!(
                    "node {i} has parent {} at or after it; sequence is not pre-order",
                    self.parent[i]
                )));
            }
            if self.nodes[i].kind == NodeKind::Syntactic
                && self.nodes[self.parent[i]].kind != NodeKind::Semantic
            {
                return Err(Error::Validation(format!(
                    "syntactic node {i} must hang under a semantic node"
                )));
            }
        }
        Ok(())
    }

    /// Count of nodes with a given kind.
    pub fn count_kind(&self, kind: NodeKind) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }
}
