//! Pre-order linearization of arborescences and its exact inverse.

use std::collections::BTreeSet;

use super::{ArbNode, Arborescence, AttrMap, AttributeValue, NodeKind};
use crate::error::{Error, Result};

/// Aligned sequence form of an arborescence. Position i (0-based) holds node
/// i+1 of the pre-order; the virtual root is implicit at position 0 of the
/// head numbering. Attribute matrices are dense over the per-graph
/// inventories `node_attr_names`/`edge_attr_names` (sorted, each column used
/// at least once); a false mask entry zeroes its value slot.
///
/// Canonical coindexing is part of the invariant: coindices[i] either
/// repeats an earlier value (a re-entrant copy, SEMANTIC on both ends) or
/// extends the dense sequence 1, 2, 3, ...
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedGraph {
    pub node_tokens: Vec<String>,
    pub coindices: Vec<usize>,
    /// 1-based position of the head; 0 is the virtual root.
    pub head_positions: Vec<usize>,
    pub edge_labels: Vec<String>,
    pub source_indices: Vec<Option<usize>>,
    pub kinds: Vec<NodeKind>,
    pub node_attr_names: Vec<String>,
    pub node_attr_values: Vec<f64>,
    pub node_attr_mask: Vec<bool>,
    pub edge_attr_names: Vec<String>,
    pub edge_attr_values: Vec<f64>,
    pub edge_attr_mask: Vec<bool>,
}

impl LinearizedGraph {
    pub fn len(&self) -> usize {
        self.node_tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_tokens.is_empty()
    }

    pub fn node_attr(&self, i: usize, name: &str) -> Option<f64> {
        let k = self.node_attr_names.iter().position(|n| n == name)?;
        let w = self.node_attr_names.len();
        self.node_attr_mask[i * w + k].then(|| self.node_attr_values[i * w + k])
    }

    pub fn edge_attr(&self, i: usize, name: &str) -> Option<f64> {
        let k = self.edge_attr_names.iter().position(|n| n == name)?;
        let w = self.edge_attr_names.len();
        self.edge_attr_mask[i * w + k].then(|| self.edge_attr_values[i * w + k])
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.coindices.len() != n
            || self.head_positions.len() != n
            || self.edge_labels.len() != n
            || self.source_indices.len() != n
            || self.kinds.len() != n
        {
            return Err(Error::Validation("misaligned linearization arrays".into()));
        }
        let kn = self.node_attr_names.len();
        let ke = self.edge_attr_names.len();
        if self.node_attr_values.len() != n * kn
            || self.node_attr_mask.len() != n * kn
            || self.edge_attr_values.len() != n * ke
            || self.edge_attr_mask.len() != n * ke
        {
            return Err(Error::Validation("attribute matrix shape mismatch".into()));
        }
        for names in [&self.node_attr_names, &self.edge_attr_names] {
            if !names.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::Validation(
                    "attribute inventory must be sorted and unique".into(),
                ));
            }
        }
        let mut next_coindex = 1;
        for i in 0..n {
            if self.head_positions[i] > i {
                return Err(Error::MalformedSequence {
                    position: i,
                    msg: format!(
                        "head position {} does not precede node {}",
                        self.head_positions[i],
                        i + 1
                    ),
                });
            }
            if self.kinds[i] == NodeKind::Root {
                return Err(Error::MalformedSequence {
                    position: i,
                    msg: "virtual root inside the sequence".into(),
                });
            }
            let ci = self.coindices[i];
            if ci == next_coindex {
                next_coindex += 1;
            } else if ci == 0 || ci >= next_coindex {
                return Err(Error::MalformedSequence {
                    position: i,
                    msg: format!("coindex {ci} breaks dense first-appearance numbering"),
                });
            } else if self.kinds[i] != NodeKind::Semantic {
                return Err(Error::MalformedSequence {
                    position: i,
                    msg: "re-entrant copy must be semantic".into(),
                });
            }
        }
        for (vals, mask, w) in [
            (&self.node_attr_values, &self.node_attr_mask, kn),
            (&self.edge_attr_values, &self.edge_attr_mask, ke),
        ] {
            for k in 0..w {
                if !(0..n).any(|i| mask[i * w + k]) {
                    return Err(Error::Validation(format!(
                        "attribute column {k} is never used"
                    )));
                }
            }
            for (j, (&v, &m)) in vals.iter().zip(mask.iter()).enumerate() {
                if m && !(-3.0..=3.0).contains(&v) {
                    return Err(Error::Validation(format!(
                        "attribute value {v} at slot {j} outside [-3, 3]"
                    )));
                }
                if !m && v != 0.0 {
                    return Err(Error::Validation(format!(
                        "masked-off attribute slot {j} carries value {v}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn collect_names(maps: &[AttrMap]) -> Vec<String> {
    let mut names = BTreeSet::new();
    for m in maps.iter().skip(1) {
        for (k, v) in m {
            if v.applies {
                names.insert(k.clone());
            }
        }
    }
    names.into_iter().collect()
}

fn fill_matrix(maps: &[AttrMap], names: &[String]) -> (Vec<f64>, Vec<bool>) {
    let n = maps.len() - 1;
    let w = names.len();
    let mut values = vec![0.0; n * w];
    let mut mask = vec![false; n * w];
    for (i, m) in maps.iter().skip(1).enumerate() {
        for (k, name) in names.iter().enumerate() {
            if let Some(av) = m.get(name) {
                if av.applies {
                    values[i * w + k] = av.value;
                    mask[i * w + k] = true;
                }
            }
        }
    }
    (values, mask)
}

/// Emit the stored pre-order as aligned sequences. Coindices are renumbered
/// to first-appearance order (1-based), which leaves already-canonical input
/// untouched; attribute entries with a false mask are dropped.
pub fn linearize(arb: &Arborescence) -> LinearizedGraph {
    debug_assert!(arb.validate().is_ok());
    let n = arb.len() - 1;
    let mut renumber: Vec<Option<usize>> = Vec::new();
    let mut coindices = Vec::with_capacity(n);
    for node in arb.nodes.iter().skip(1) {
        while renumber.len() <= node.coindex {
            renumber.push(None);
        }
        let ci = match renumber[node.coindex] {
            Some(c) => c,
            None => {
                let c = coindices.iter().copied().max().unwrap_or(0) + 1;
                renumber[node.coindex] = Some(c);
                c
            }
        };
        coindices.push(ci);
    }
    let node_attr_names = collect_names(&arb.node_attrs);
    let edge_attr_names = collect_names(&arb.edge_attrs);
    let (node_attr_values, node_attr_mask) = fill_matrix(&arb.node_attrs, &node_attr_names);
    let (edge_attr_values, edge_attr_mask) = fill_matrix(&arb.edge_attrs, &edge_attr_names);
    let lin = LinearizedGraph {
        node_tokens: arb.nodes.iter().skip(1).map(|x| x.label.clone()).collect(),
        coindices,
        head_positions: arb.parent.iter().skip(1).copied().collect(),
        edge_labels: arb.edge_labels.iter().skip(1).cloned().collect(),
        source_indices: arb.nodes.iter().skip(1).map(|x| x.source_index).collect(),
        kinds: arb.nodes.iter().skip(1).map(|x| x.kind).collect(),
        node_attr_names,
        node_attr_values,
        node_attr_mask,
        edge_attr_names,
        edge_attr_values,
        edge_attr_mask,
    };
    debug_assert!(lin.validate().is_ok());
    lin
}

/// Rebuild the arborescence a linearization came from.
/// linearize(delinearize(lin)) returns `lin` exactly.
pub fn delinearize(lin: &LinearizedGraph) -> Result<Arborescence> {
    lin.validate()?;
    let n = lin.len();
    let mut arb = Arborescence {
        nodes: Vec::with_capacity(n + 1),
        parent: Vec::with_capacity(n + 1),
        edge_labels: Vec::with_capacity(n + 1),
        node_attrs: Vec::with_capacity(n + 1),
        edge_attrs: Vec::with_capacity(n + 1),
    };
    arb.nodes.push(ArbNode {
        label: super::ROOT_LABEL.to_string(),
        source_index: None,
        coindex: 0,
        kind: NodeKind::Root,
    });
    arb.parent.push(0);
    arb.edge_labels.push(String::new());
    arb.node_attrs.push(AttrMap::new());
    arb.edge_attrs.push(AttrMap::new());
    let unpack = |values: &[f64], mask: &[bool], names: &[String], i: usize| -> AttrMap {
        let w = names.len();
        names
            .iter()
            .enumerate()
            .filter(|(k, _)| mask[i * w + k])
            .map(|(k, name)| (name.clone(), AttributeValue::new(values[i * w + k])))
            .collect()
    };
    for i in 0..n {
        arb.nodes.push(ArbNode {
            label: lin.node_tokens[i].clone(),
            source_index: lin.source_indices[i],
            coindex: lin.coindices[i],
            kind: lin.kinds[i],
        });
        arb.parent.push(lin.head_positions[i]);
        arb.edge_labels.push(lin.edge_labels[i].clone());
        arb.node_attrs.push(unpack(
            &lin.node_attr_values,
            &lin.node_attr_mask,
            &lin.node_attr_names,
            i,
        ));
        arb.edge_attrs.push(unpack(
            &lin.edge_attr_values,
            &lin.edge_attr_mask,
            &lin.edge_attr_names,
            i,
        ));
    }
    arb.validate()?;
    Ok(arb)
}

#[cfg(test)]
mod tests {
    use super::super::test_util::diamond;
    use super::super::uds_to_arborescence;
    use super::*;
    use crate::graph::{AttributeValue, SemanticEdge, SemanticNode, UDSGraph, UDTree};

    #[test]
    fn single_node_sequence() {
        let tree = UDTree::new(&[("go", "VERB")], vec![0], vec!["root"]);
        let graph = UDSGraph {
            nodes: vec![SemanticNode {
                id: "p".to_string(),
                head_token: 1,
                attributes: Default::default(),
            }],
            edges: vec![],
            roots: vec!["p".to_string()],
        };
        let lin = linearize(&uds_to_arborescence(&graph, &tree, true).unwrap());
        assert_eq!(lin.len(), 1);
        assert_eq!(lin.head_positions, vec![0]);
        assert_eq!(lin.coindices, vec![1]);
    }

    #[test]
    fn chain_preorder_is_the_chain() {
        let tree = UDTree::new(
            &[("a", "X"), ("b", "X"), ("c", "X"), ("d", "X")],
            vec![0, 1, 2, 3],
            vec!["root", "dep", "dep", "dep"],
        );
        let node = |id: &str, t: usize| SemanticNode {
            id: id.to_string(),
            head_token: t,
            attributes: Default::default(),
        };
        let edge = |s: &str, d: &str| SemanticEdge {
            src: s.to_string(),
            dst: d.to_string(),
            attributes: Default::default(),
        };
        let graph = UDSGraph {
            nodes: vec![node("1", 1), node("2", 2), node("3", 3), node("4", 4)],
            edges: vec![edge("1", "2"), edge("2", "3"), edge("3", "4")],
            roots: vec!["1".to_string()],
        };
        let lin = linearize(&uds_to_arborescence(&graph, &tree, true).unwrap());
        assert_eq!(lin.head_positions, vec![0, 1, 2, 3]);
        assert_eq!(lin.node_tokens, vec!["a", "b", "c", "d"]);
    }

    #[test]
    fn balanced_tree_matches_recursive_oracle() {
        // Complete binary tree of 7 semantic nodes over 7 tokens.
        let forms: Vec<String> = (1..=7).map(|i| format!("w{i}")).collect();
        let tok: Vec<(&str, &str)> = forms.iter().map(|f| (f.as_str(), "X")).collect();
        let tree = UDTree::new(
            &tok,
            vec![0, 1, 1, 2, 2, 3, 3],
            vec!["root", "dep", "dep", "dep", "dep", "dep", "dep"],
        );
        let node = |i: usize| SemanticNode {
            id: format!("n{i}"),
            head_token: i,
            attributes: Default::default(),
        };
        let edge = |s: usize, d: usize| SemanticEdge {
            src: format!("n{s}"),
            dst: format!("n{d}"),
            attributes: Default::default(),
        };
        let graph = UDSGraph {
            nodes: (1..=7).map(node).collect(),
            edges: vec![edge(1, 2), edge(1, 3), edge(2, 4), edge(2, 5), edge(3, 6), edge(3, 7)],
            roots: vec!["n1".to_string()],
        };
        let lin = linearize(&uds_to_arborescence(&graph, &tree, true).unwrap());

        // Independent recursive pre-order over the source DAG with the same
        // child ordering rule (ascending head token).
        fn walk(g: &UDSGraph, id: &str, out: &mut Vec<String>) {
            let n = g.node(id).unwrap();
            out.push(format!("w{}", n.head_token));
            let mut kids: Vec<&str> = g
                .edges
                .iter()
                .filter(|e| e.src == id)
                .map(|e| e.dst.as_str())
                .collect();
            kids.sort_by_key(|d| g.node(d).unwrap().head_token);
            for k in kids {
                walk(g, k, out);
            }
        }
        let mut expect = Vec::new();
        walk(&graph, "n1", &mut expect);
        assert_eq!(lin.node_tokens, expect);
    }

    #[test]
    fn delinearize_rejects_forward_heads() {
        let tree = UDTree::new(&[("a", "X"), ("b", "X"), ("c", "X")], vec![0, 1, 1], vec!["root", "dep", "dep"]);
        let node = |id: &str, t: usize| SemanticNode {
            id: id.to_string(),
            head_token: t,
            attributes: Default::default(),
        };
        let graph = UDSGraph {
            nodes: vec![node("x", 1), node("y", 2), node("z", 3)],
            edges: vec![
                SemanticEdge {
                    src: "x".to_string(),
                    dst: "y".to_string(),
                    attributes: Default::default(),
                },
                SemanticEdge {
                    src: "x".to_string(),
                    dst: "z".to_string(),
                    attributes: Default::default(),
                },
            ],
            roots: vec!["x".to_string()],
        };
        let mut lin = linearize(&uds_to_arborescence(&graph, &tree, true).unwrap());
        lin.head_positions = vec![0, 2, 1];
        match delinearize(&lin) {
            Err(Error::MalformedSequence { position, .. }) => assert_eq!(position, 1),
            other => panic!("expected malformed-sequence error, got {other:?}"),
        }
    }

    #[test]
    fn diamond_round_trips_exactly() {
        let (tree, mut graph) = diamond();
        graph.nodes[0]
            .attributes
            .insert("factuality".to_string(), AttributeValue::new(1.25));
        graph.edges[1]
            .attributes
            .insert("patient".to_string(), AttributeValue::new(-0.5));
        for so in [true, false] {
            let arb = uds_to_arborescence(&graph, &tree, so).unwrap();
            let lin = linearize(&arb);
            let back = delinearize(&lin).unwrap();
            assert_eq!(linearize(&back), lin);
        }
    }

    #[test]
    fn noncanonical_coindices_rejected() {
        let (tree, graph) = diamond();
        let mut lin = linearize(&uds_to_arborescence(&graph, &tree, true).unwrap());
        lin.coindices[0] = 7;
        assert!(matches!(
            delinearize(&lin),
            Err(Error::MalformedSequence { position: 0, .. })
        ));
    }

    #[test]
    fn masked_attr_slots_must_be_zeroed() {
        let (tree, mut graph) = diamond();
        graph.nodes[0]
            .attributes
            .insert("factuality".to_string(), AttributeValue::new(1.0));
        let mut lin = linearize(&uds_to_arborescence(&graph, &tree, true).unwrap());
        let slot = lin.node_attr_mask.iter().position(|m| !m).unwrap();
        lin.node_attr_values[slot] = 0.5;
        assert!(lin.validate().is_err());
    }
}
