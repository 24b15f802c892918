//! Semantic graph isomorphism (node identity up to relabeling).

use std::collections::BTreeMap;

use super::{canonical_attrs, AttrMap, UDSGraph};

fn attrs_equal(a: &AttrMap, b: &AttrMap) -> bool {
    canonical_attrs(a) == canonical_attrs(b)
}

type EdgeMap<'g> = BTreeMap<(&'g str, &'g str), &'g AttrMap>;

struct Matcher<'g> {
    a: &'g UDSGraph,
    candidates: Vec<Vec<&'g str>>,
    edges_a: EdgeMap<'g>,
    edges_b: EdgeMap<'g>,
}

impl<'g> Matcher<'g> {
    fn assign(&self, i: usize, mapping: &mut Vec<&'g str>) -> bool {
        if i == self.a.nodes.len() {
            return true;
        }
        let an = self.a.nodes[i].id.as_str();
        'cand: for &bn in &self.candidates[i] {
            if mapping.contains(&bn) {
                continue;
            }
            // Edges between already-mapped nodes and this one must agree in
            // both directions, attributes included.
            for (j, prev) in self.a.nodes[..i].iter().enumerate() {
                let pa = prev.id.as_str();
                let pb = mapping[j];
                for ((x, y), (xb, yb)) in [((pa, an), (pb, bn)), ((an, pa), (bn, pb))] {
                    match (self.edges_a.get(&(x, y)), self.edges_b.get(&(xb, yb))) {
                        (None, None) => {}
                        (Some(ea), Some(eb)) if attrs_equal(ea, eb) => {}
                        _ => continue 'cand,
                    }
                }
            }
            mapping.push(bn);
            if self.assign(i + 1, mapping) {
                return true;
            }
            mapping.pop();
        }
        false
    }
}

/// True when a bijection between node ids preserves instance links, node and
/// edge attributes (non-applying entries count as absent), the edge set, and
/// the root set. Exponential in the worst case but run on desk-scale graphs
/// where the instance-link signature prunes almost everything.
pub fn isomorphic(a: &UDSGraph, b: &UDSGraph) -> bool {
    if a.nodes.len() != b.nodes.len()
        || a.edges.len() != b.edges.len()
        || a.roots.len() != b.roots.len()
    {
        return false;
    }
    if a.nodes.is_empty() {
        return true;
    }
    let sig = |g: &UDSGraph, id: &str| {
        let n = g.node(id).unwrap();
        (
            n.head_token,
            g.edges.iter().filter(|e| e.dst == id).count(),
            g.edges.iter().filter(|e| e.src == id).count(),
            g.roots.contains(&n.id),
        )
    };
    let candidates: Vec<Vec<&str>> = a
        .nodes
        .iter()
        .map(|an| {
            let sa = sig(a, &an.id);
            b.nodes
                .iter()
                .filter(|bn| sig(b, &bn.id) == sa && attrs_equal(&an.attributes, &bn.attributes))
                .map(|bn| bn.id.as_str())
                .collect()
        })
        .collect();
    if candidates.iter().any(|c: &Vec<&str>| c.is_empty()) {
        return false;
    }
    fn edge_map(g: &UDSGraph) -> EdgeMap<'_> {
        g.edges
            .iter()
            .map(|e| ((e.src.as_str(), e.dst.as_str()), &e.attributes))
            .collect()
    }
    let matcher = Matcher {
        a,
        candidates,
        edges_a: edge_map(a),
        edges_b: edge_map(b),
    };
    matcher.assign(0, &mut Vec::new())
}
