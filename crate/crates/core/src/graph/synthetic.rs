//! Random sentence/graph generation for tests and self-contained demos.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use super::{AttrMap, AttributeValue, SemanticEdge, SemanticNode, UDSGraph, UDTree};

const FORMS: &[&str] = &[
    "the", "a", "dog", "cat", "bird", "man", "woman", "child", "ball", "park", "tree", "house",
    "story", "plan", "ran", "saw", "caught", "told", "gave", "made", "found", "kept", "big",
    "red", "old", "quick", "quietly", "today", "with", "over", "from", "under",
];

const UPOS: &[&str] = &[
    "NOUN", "VERB", "ADJ", "ADV", "PRON", "DET", "ADP", "AUX", "PROPN",
];

const DEPRELS: &[&str] = &[
    "nsubj", "obj", "iobj", "obl", "nmod", "amod", "advmod", "det", "case", "mark", "conj", "cc",
    "aux", "cop", "xcomp", "ccomp", "advcl", "acl",
];

/// Names follow the node-attribute inventory style of scalar semantic
/// protocols.
pub const NODE_ATTRS: &[&str] = &[
    "awareness",
    "change-of-state",
    "existed-after",
    "existed-before",
    "factuality",
    "genericity",
    "volition",
];

pub const EDGE_ATTRS: &[&str] = &[
    "agent",
    "benefactive",
    "instigation",
    "patient",
    "was-used",
];

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Upper bound on semantic nodes; also capped by the token count, since
    /// each node instantiates a distinct token.
    pub max_nodes: usize,
    /// Probability of each forward edge in the node order.
    pub edge_prob: f64,
    /// Probability that a given attribute name applies to a node/edge.
    pub attr_prob: f64,
    /// Probability of an extra masked-off attribute entry.
    pub masked_attr_prob: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            min_tokens: 3,
            max_tokens: 10,
            max_nodes: 5,
            edge_prob: 0.4,
            attr_prob: 0.5,
            masked_attr_prob: 0.05,
        }
    }
}

fn random_attrs(rng: &mut ChaCha20Rng, pool: &[&str], cfg: &SyntheticConfig) -> AttrMap {
    let mut attrs = AttrMap::new();
    for name in pool {
        if rng.random::<f64>() < cfg.attr_prob {
            attrs.insert(
                name.to_string(),
                AttributeValue::new(rng.random_range(-3.0..=3.0)),
            );
        } else if rng.random::<f64>() < cfg.masked_attr_prob {
            attrs.insert(
                name.to_string(),
                AttributeValue {
                    value: rng.random_range(-3.0..=3.0),
                    applies: false,
                },
            );
        }
    }
    attrs
}

/// One random sentence: a uniformly attached dependency tree plus a semantic
/// DAG whose nodes instantiate distinct tokens. Acyclicity comes from only
/// drawing edges forward along a hidden node order; roots are the nodes left
/// with indegree 0.
pub fn sentence(rng: &mut ChaCha20Rng, cfg: &SyntheticConfig) -> (UDTree, UDSGraph) {
    let t = rng.random_range(cfg.min_tokens..=cfg.max_tokens);
    let forms_upos: Vec<(&str, &str)> = (0..t)
        .map(|_| {
            (
                FORMS[rng.random_range(0..FORMS.len())],
                UPOS[rng.random_range(0..UPOS.len())],
            )
        })
        .collect();
    let mut order: Vec<usize> = (1..=t).collect();
    order.shuffle(rng);
    let mut heads = vec![0usize; t];
    let mut deprels = vec![""; t];
    deprels[order[0] - 1] = "root";
    for i in 1..t {
        heads[order[i] - 1] = order[rng.random_range(0..i)];
        deprels[order[i] - 1] = DEPRELS[rng.random_range(0..DEPRELS.len())];
    }
    let tree = UDTree::new(&forms_upos, heads, deprels);

    let k = rng.random_range(1..=cfg.max_nodes.min(t));
    let tokens: Vec<usize> = rand::seq::index::sample(rng, t, k)
        .into_iter()
        .map(|i| i + 1)
        .collect();
    let mut nodes: Vec<SemanticNode> = tokens
        .iter()
        .enumerate()
        .map(|(j, &tok)| SemanticNode {
            id: format!("m{j}.t{tok}"),
            head_token: tok,
            attributes: random_attrs(rng, NODE_ATTRS, cfg),
        })
        .collect();
    let mut edges = Vec::new();
    for i in 0..k {
        for j in (i + 1)..k {
            if rng.random::<f64>() < cfg.edge_prob {
                edges.push(SemanticEdge {
                    src: nodes[i].id.clone(),
                    dst: nodes[j].id.clone(),
                    attributes: random_attrs(rng, EDGE_ATTRS, cfg),
                });
            }
        }
    }
    let roots: Vec<String> = nodes
        .iter()
        .filter(|n| !edges.iter().any(|e| e.dst == n.id))
        .map(|n| n.id.clone())
        .collect();
    // Shuffle listing order; consumers must not depend on it.
    nodes.shuffle(rng);
    edges.shuffle(rng);
    let graph = UDSGraph {
        nodes,
        edges,
        roots,
    };
    (tree, graph)
}

/// Deterministic corpus of `n` sentences with ids "syn-<seed>-<i>".
pub fn corpus_entries(
    rng: &mut ChaCha20Rng,
    seed_tag: u64,
    n: usize,
    cfg: &SyntheticConfig,
) -> Vec<(String, UDTree, UDSGraph)> {
    (0..n)
        .map(|i| {
            let (tree, graph) = sentence(rng, cfg);
            (format!("syn-{seed_tag}-{i}"), tree, graph)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::{
        delinearize, isomorphic, linearize, recover_dag, uds_to_arborescence, NodeKind,
    };
    use super::*;
    use crate::rng::RngPool;

    #[test]
    fn generated_sentences_validate() {
        let mut rng = RngPool::new(1).stream("synthetic");
        let cfg = SyntheticConfig::default();
        for _ in 0..50 {
            let (tree, graph) = sentence(&mut rng, &cfg);
            tree.validate().unwrap();
            graph.validate(Some(tree.len())).unwrap();
        }
    }

    #[test]
    fn round_trip_500_random_dags() {
        let mut rng = RngPool::new(7).stream("roundtrip");
        let cfg = SyntheticConfig {
            min_tokens: 3,
            max_tokens: 14,
            max_nodes: 12,
            edge_prob: 0.45,
            ..Default::default()
        };
        for case in 0..500 {
            let (tree, graph) = sentence(&mut rng, &cfg);
            let semantics_only = case % 2 == 0;
            let arb = uds_to_arborescence(&graph, &tree, semantics_only).unwrap();
            let lin = linearize(&arb);
            let back = recover_dag(&delinearize(&lin).unwrap()).unwrap();
            assert!(
                isomorphic(&back, &graph),
                "round trip broke at case {case}: {graph:?} vs {back:?}"
            );
        }
    }

    #[test]
    fn node_count_law_holds_over_samples() {
        let mut rng = RngPool::new(3).stream("law");
        let cfg = SyntheticConfig {
            max_tokens: 12,
            max_nodes: 8,
            edge_prob: 0.5,
            ..Default::default()
        };
        for _ in 0..200 {
            let (tree, graph) = sentence(&mut rng, &cfg);
            let arb = uds_to_arborescence(&graph, &tree, true).unwrap();
            let extra: usize = graph
                .nodes
                .iter()
                .map(|n| graph.indegree(&n.id).saturating_sub(1))
                .sum();
            assert_eq!(
                arb.count_kind(NodeKind::Semantic),
                graph.nodes.len() + extra
            );
        }
    }

    #[test]
    fn token_coverage_with_syntax() {
        let mut rng = RngPool::new(9).stream("coverage");
        let cfg = SyntheticConfig::default();
        for _ in 0..200 {
            let (tree, graph) = sentence(&mut rng, &cfg);
            let arb = uds_to_arborescence(&graph, &tree, false).unwrap();
            let mut covered: Vec<usize> =
                arb.nodes.iter().filter_map(|n| n.source_index).collect();
            covered.sort_unstable();
            let expect: Vec<usize> = (1..=tree.len()).collect();
            assert_eq!(covered, expect);
        }
    }

    #[test]
    fn preorder_precedence_everywhere() {
        let mut rng = RngPool::new(11).stream("preorder");
        let cfg = SyntheticConfig::default();
        for _ in 0..100 {
            let (tree, graph) = sentence(&mut rng, &cfg);
            for so in [true, false] {
                let lin = linearize(&uds_to_arborescence(&graph, &tree, so).unwrap());
                for (i, &hp) in lin.head_positions.iter().enumerate() {
                    assert!(hp <= i);
                }
            }
        }
    }
}
