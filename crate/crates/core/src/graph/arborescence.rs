//! DAG to arborescence conversion.

use std::collections::BTreeMap;

use super::{
    ArbNode, Arborescence, AttrMap, NodeKind, UDSGraph, UDTree, ROOT_EDGE_LABEL, ROOT_LABEL,
    SEMANTIC_EDGE_LABEL,
};
use crate::error::Result;

struct Temp {
    label: String,
    source: Option<usize>,
    /// Token used for sibling ordering; stubs inherit the original's.
    sort_token: usize,
    kind: NodeKind,
    coindex: usize,
    node_attrs: AttrMap,
    edge_label: String,
    edge_attrs: AttrMap,
    children: Vec<usize>,
}

/// Convert a semantic DAG over a dependency tree into a single arborescence.
///
/// Re-entrant nodes are kept once at their first canonical position and
/// appear as coindexed copies (label shared, no instance link, no children)
/// under every later parent. With `semantics_only` off, each token that
/// labels no semantic node becomes a SYNTACTIC leaf under the semantic node
/// owning its syntactic subtree: the first semantic-labeling token on its
/// dependency head chain, falling back to the first graph root. Siblings are
/// ordered by (source token, edge label, coindex), unseen nodes after seen
/// ones ordered by id, which fixes the traversal and hence the coindexing.
pub fn uds_to_arborescence(
    graph: &UDSGraph,
    tree: &UDTree,
    semantics_only: bool,
) -> Result<Arborescence> {
    tree.validate()?;
    graph.validate(Some(tree.len()))?;

    let form = |t: usize| tree.tokens[t - 1].form.clone();
    let mut temps: Vec<Temp> = vec![Temp {
        label: ROOT_LABEL.to_string(),
        source: None,
        sort_token: 0,
        kind: NodeKind::Root,
        coindex: 0,
        node_attrs: AttrMap::new(),
        edge_label: String::new(),
        edge_attrs: AttrMap::new(),
        children: Vec::new(),
    }];

    if !graph.is_trivial() {
        let by_id: BTreeMap<&str, &super::SemanticNode> =
            graph.nodes.iter().map(|n| (n.id.as_str(), n)).collect();
        let mut succ: BTreeMap<&str, Vec<&super::SemanticEdge>> = BTreeMap::new();
        for e in &graph.edges {
            succ.entry(e.src.as_str()).or_default().push(e);
        }

        // Pre-order over the DAG; first visit keeps the original.
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        let mut next_coindex = 1usize;
        let mut stack: Vec<(&str, usize, String, AttrMap)> = Vec::new();

        fn sort_key<'e>(
            e: &'e super::SemanticEdge,
            by_id: &BTreeMap<&str, &super::SemanticNode>,
            seen: &BTreeMap<&str, usize>,
        ) -> (usize, u8, usize, &'e str) {
            let n = by_id[e.dst.as_str()];
            match seen.get(e.dst.as_str()) {
                Some(&ci) => (n.head_token, 0u8, ci, ""),
                None => (n.head_token, 1u8, 0, e.dst.as_str()),
            }
        }
        let order_children = |edges: &mut Vec<&super::SemanticEdge>, seen: &BTreeMap<&str, usize>| {
            edges.sort_by(|a, b| sort_key(a, &by_id, seen).cmp(&sort_key(b, &by_id, seen)));
        };

        let mut roots: Vec<&str> = graph.roots.iter().map(|s| s.as_str()).collect();
        roots.sort_by_key(|id| (by_id[id].head_token, *id));
        for r in roots.into_iter().rev() {
            stack.push((r, 0, ROOT_EDGE_LABEL.to_string(), AttrMap::new()));
        }
        while let Some((id, parent_idx, edge_label, edge_attrs)) = stack.pop() {
            let node = by_id[id];
            let idx = temps.len();
            temps[parent_idx].children.push(idx);
            if let Some(&ci) = seen.get(id) {
                temps.push(Temp {
                    label: form(node.head_token),
                    source: None,
                    sort_token: node.head_token,
                    kind: NodeKind::Semantic,
                    coindex: ci,
                    node_attrs: AttrMap::new(),
                    edge_label,
                    edge_attrs,
                    children: Vec::new(),
                });
                continue;
            }
            let ci = next_coindex;
            next_coindex += 1;
            seen.insert(id, ci);
            temps.push(Temp {
                label: form(node.head_token),
                source: Some(node.head_token),
                sort_token: node.head_token,
                kind: NodeKind::Semantic,
                coindex: ci,
                node_attrs: node.attributes.clone(),
                edge_label,
                edge_attrs,
                children: Vec::new(),
            });
            let mut edges = succ.get(id).cloned().unwrap_or_default();
            order_children(&mut edges, &seen);
            for e in edges.into_iter().rev() {
                stack.push((
                    e.dst.as_str(),
                    idx,
                    SEMANTIC_EDGE_LABEL.to_string(),
                    e.attributes.clone(),
                ));
            }
        }
    }

    if !semantics_only && temps.len() > 1 {
        // First pre-order original per token; pass-1 append order is already
        // pre-order, so a scan suffices.
        let mut owner: BTreeMap<usize, usize> = BTreeMap::new();
        for (i, t) in temps.iter().enumerate() {
            if t.kind == NodeKind::Semantic {
                if let Some(src) = t.source {
                    owner.entry(src).or_insert(i);
                }
            }
        }
        let first_root = temps[0].children[0];
        for t in 1..=tree.len() {
            if owner.contains_key(&t) {
                continue;
            }
            let mut u = tree.heads[t - 1];
            while u != 0 && !owner.contains_key(&u) {
                u = tree.heads[u - 1];
            }
            let target = if u == 0 { first_root } else { owner[&u] };
            let idx = temps.len();
            temps.push(Temp {
                label: form(t),
                source: Some(t),
                sort_token: t,
                kind: NodeKind::Syntactic,
                coindex: usize::MAX,
                node_attrs: AttrMap::new(),
                edge_label: tree.deprels[t - 1].clone(),
                edge_attrs: AttrMap::new(),
                children: Vec::new(),
            });
            temps[target].children.push(idx);
        }
        // Stable sort keeps pass-1 semantic order on key ties.
        let keys: Vec<(usize, String, usize)> = temps
            .iter()
            .map(|t| (t.sort_token, t.edge_label.clone(), t.coindex))
            .collect();
        for t in temps.iter_mut() {
            t.children.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
        }
    }

    // Final pre-order emit; syntactic coindices continue after semantic.
    let mut next_coindex = temps
        .iter()
        .filter(|t| t.kind == NodeKind::Semantic)
        .map(|t| t.coindex + 1)
        .max()
        .unwrap_or(1);
    let mut arb = Arborescence {
        nodes: Vec::new(),
        parent: Vec::new(),
        edge_labels: Vec::new(),
        node_attrs: Vec::new(),
        edge_attrs: Vec::new(),
    };
    let mut stack: Vec<(usize, usize)> = vec![(0, 0)];
    while let Some((ti, parent_out)) = stack.pop() {
        let t = &temps[ti];
        let out = arb.nodes.len();
        let coindex = match t.kind {
            NodeKind::Root => 0,
            NodeKind::Semantic => t.coindex,
            NodeKind::Syntactic => {
                let c = next_coindex;
                next_coindex += 1;
                c
            }
        };
        arb.nodes.push(ArbNode {
            label: t.label.clone(),
            source_index: t.source,
            coindex,
            kind: t.kind,
        });
        arb.parent.push(parent_out);
        arb.edge_labels.push(t.edge_label.clone());
        arb.node_attrs.push(t.node_attrs.clone());
        arb.edge_attrs.push(t.edge_attrs.clone());
        for &c in t.children.iter().rev() {
            stack.push((c, out));
        }
    }
    debug_assert!(arb.validate().is_ok());
    Ok(arb)
}
