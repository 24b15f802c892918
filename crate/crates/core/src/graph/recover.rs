//! Merge coindexed copies back into a semantic DAG.

use std::collections::BTreeMap;

use super::{Arborescence, AttrMap, NodeKind, SemanticEdge, SemanticNode, UDSGraph};
use crate::error::{Error, Result};

/// Invert the arborescence conversion: coindexed semantic copies collapse to
/// one node carrying the union of their incoming edges, syntactic nodes are
/// dropped (the dependency tree already holds them), and the virtual root's
/// children become the root set. The result is validated, so label conflicts
/// within a coindex group and cycles created by merging are errors.
pub fn recover_dag(arb: &Arborescence) -> Result<UDSGraph> {
    arb.validate()?;
    // coindex -> (node id, representative arb index)
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, n) in arb.nodes.iter().enumerate() {
        if n.kind == NodeKind::Semantic {
            groups.entry(n.coindex).or_default().push(i);
        }
    }
    let mut ids: BTreeMap<usize, String> = BTreeMap::new();
    let mut nodes = Vec::new();
    for (&ci, members) in &groups {
        let first = &arb.nodes[members[0]];
        for &m in &members[1..] {
            if arb.nodes[m].label != first.label {
                return Err(Error::LabelConflict {
                    coindex: ci,
                    a: first.label.clone(),
                    b: arb.nodes[m].label.clone(),
                });
            }
        }
        let head_token = members
            .iter()
            .find_map(|&m| arb.nodes[m].source_index)
            .ok_or_else(|| {
                Error::Validation(format!("coindex {ci} group has no instance link"))
            })?;
        let mut attributes = AttrMap::new();
        for &m in members {
            for (k, v) in &arb.node_attrs[m] {
                attributes.entry(k.clone()).or_insert(*v);
            }
        }
        let id = format!("n{ci}");
        ids.insert(ci, id.clone());
        nodes.push(SemanticNode {
            id,
            head_token,
            attributes,
        });
    }

    let mut edges: Vec<SemanticEdge> = Vec::new();
    let mut roots: Vec<String> = Vec::new();
    for (i, n) in arb.nodes.iter().enumerate().skip(1) {
        if n.kind != NodeKind::Semantic {
            continue;
        }
        let p = arb.parent[i];
        match arb.nodes[p].kind {
            NodeKind::Root => {
                let id = &ids[&n.coindex];
                if !roots.contains(id) {
                    roots.push(id.clone());
                }
            }
            NodeKind::Semantic => {
                let src = ids[&arb.nodes[p].coindex].clone();
                let dst = ids[&n.coindex].clone();
                if edges.iter().any(|e| e.src == src && e.dst == dst) {
                    log::warn!("dropping duplicate recovered edge {src} -> {dst}");
                    continue;
                }
                edges.push(SemanticEdge {
                    src,
                    dst,
                    attributes: arb.edge_attrs[i].clone(),
                });
            }
            NodeKind::Syntactic => {
                return Err(Error::Validation(format!(
                    "semantic node {i} hangs under a syntactic node"
                )));
            }
        }
    }
    let graph = UDSGraph {
        nodes,
        edges,
        roots,
    };
    graph.validate(None)?;
    Ok(graph)
}
