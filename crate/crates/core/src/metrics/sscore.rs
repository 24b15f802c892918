//! Triple-based graph matching score.
//!
//! Graphs are rendered to instance, root, and labeled-edge triples; an
//! injective node mapping found by restarted hill climbing maximizes the
//! matched-triple count. Precision divides by predicted triples, recall by
//! gold triples.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{Arborescence, NodeKind, UDSGraph, SEMANTIC_EDGE_LABEL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl SScore {
    fn from_counts(matched: usize, pred_total: usize, gold_total: usize) -> SScore {
        let p = if pred_total == 0 {
            if gold_total == 0 { 1.0 } else { 0.0 }
        } else {
            matched as f64 / pred_total as f64
        };
        let r = if gold_total == 0 {
            if pred_total == 0 { 1.0 } else { 0.0 }
        } else {
            matched as f64 / gold_total as f64
        };
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        SScore { precision: p, recall: r, f1 }
    }
}

/// A graph reduced to its matching triples over integer node handles.
#[derive(Debug, Clone)]
pub struct TripleGraph {
    names: Vec<String>,
    instances: Vec<(usize, usize)>,
    roots: Vec<usize>,
    edges: Vec<(usize, String, usize)>,
}

impl TripleGraph {
    pub fn from_graph(g: &UDSGraph) -> TripleGraph {
        let names: Vec<String> = g.nodes.iter().map(|n| n.id.clone()).collect();
        let idx = |id: &str| names.iter().position(|n| n == id).unwrap();
        TripleGraph {
            instances: g
                .nodes
                .iter()
                .enumerate()
                .map(|(i, n)| (i, n.head_token))
                .collect(),
            roots: g.roots.iter().map(|r| idx(r)).collect(),
            edges: g
                .edges
                .iter()
                .map(|e| (idx(&e.src), SEMANTIC_EDGE_LABEL.to_string(), idx(&e.dst)))
                .collect(),
            names,
        }
    }

    /// Coindexed copies collapse to one handle. Syntactic nodes and their
    /// relation-labeled edges are kept only when `include_syntax` is set.
    pub fn from_arborescence(arb: &Arborescence, include_syntax: bool) -> TripleGraph {
        let mut names = Vec::new();
        let mut handle = vec![usize::MAX; arb.len()];
        // Originals come first so copies resolve to the carrying node.
        let mut coindex_handle = std::collections::BTreeMap::new();
        for (i, node) in arb.nodes.iter().enumerate() {
            match node.kind {
                NodeKind::Root => {}
                NodeKind::Semantic => {
                    let h = *coindex_handle.entry(node.coindex).or_insert_with(|| {
                        names.push(format!("{}#{}", node.label, node.coindex));
                        names.len() - 1
                    });
                    handle[i] = h;
                }
                NodeKind::Syntactic if include_syntax => {
                    names.push(format!("{}@{}", node.label, i));
                    handle[i] = names.len() - 1;
                }
                NodeKind::Syntactic => {}
            }
        }
        let mut instances = Vec::new();
        let mut roots = Vec::new();
        let mut edge_set = BTreeSet::new();
        for (i, node) in arb.nodes.iter().enumerate() {
            if handle[i] == usize::MAX {
                continue;
            }
            if let Some(tok) = node.source_index {
                instances.push((handle[i], tok));
            }
            let p = arb.parent[i];
            if arb.nodes[p].kind == NodeKind::Root {
                roots.push(handle[i]);
            } else if handle[p] != usize::MAX {
                edge_set.insert((handle[p], arb.edge_labels[i].clone(), handle[i]));
            }
        }
        roots.sort_unstable();
        roots.dedup();
        TripleGraph {
            names,
            instances,
            roots,
            edges: edge_set.into_iter().collect(),
        }
    }

    pub fn triple_count(&self) -> usize {
        self.instances.len() + self.roots.len() + self.edges.len()
    }

    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    /// Name-free structural form; used to orient the matcher so exchanging
    /// the two graphs exchanges precision and recall exactly.
    fn orientation_key(&self) -> String {
        let mut inst: Vec<_> = self.instances.iter().map(|&(_, t)| t).collect();
        inst.sort_unstable();
        let mut edges: Vec<&str> = self.edges.iter().map(|(_, l, _)| l.as_str()).collect();
        edges.sort_unstable();
        format!(
            "{}|{}|{}|{:?}|{:?}",
            self.node_count(),
            self.triple_count(),
            self.roots.len(),
            inst,
            edges
        )
    }
}

/// Gold triples in set form, built once per matching run.
struct GoldIndex<'a> {
    instances: BTreeSet<(usize, usize)>,
    roots: BTreeSet<usize>,
    edges: BTreeSet<(usize, &'a str, usize)>,
}

impl<'a> GoldIndex<'a> {
    fn build(gold: &'a TripleGraph) -> GoldIndex<'a> {
        GoldIndex {
            instances: gold.instances.iter().copied().collect(),
            roots: gold.roots.iter().copied().collect(),
            edges: gold
                .edges
                .iter()
                .map(|(s, l, d)| (*s, l.as_str(), *d))
                .collect(),
        }
    }
}

/// Count of pred triples landing on gold triples under `map`.
fn matched(pred: &TripleGraph, gold: &GoldIndex, map: &[Option<usize>]) -> usize {
    let mut m = 0;
    for &(n, tok) in &pred.instances {
        if map[n].is_some_and(|g| gold.instances.contains(&(g, tok))) {
            m += 1;
        }
    }
    for &n in &pred.roots {
        if map[n].is_some_and(|g| gold.roots.contains(&g)) {
            m += 1;
        }
    }
    for (s, l, d) in &pred.edges {
        if let (Some(gs), Some(gd)) = (map[*s], map[*d]) {
            if gold.edges.contains(&(gs, l.as_str(), gd)) {
                m += 1;
            }
        }
    }
    m
}

fn heuristic_start(pred: &TripleGraph, gold: &TripleGraph) -> Vec<Option<usize>> {
    let mut map = vec![None; pred.node_count()];
    let mut used = vec![false; gold.node_count()];
    // Pass 1: identical names.
    for (i, name) in pred.names.iter().enumerate() {
        if let Some(j) = gold.names.iter().position(|g| g == name) {
            if !used[j] {
                map[i] = Some(j);
                used[j] = true;
            }
        }
    }
    // Pass 2: shared instance token.
    for &(i, tok) in &pred.instances {
        if map[i].is_some() {
            continue;
        }
        if let Some(&(j, _)) = gold
            .instances
            .iter()
            .find(|&&(j, gtok)| gtok == tok && !used[j])
        {
            map[i] = Some(j);
            used[j] = true;
        }
    }
    map
}

fn random_start(pred_n: usize, gold_n: usize, rng: &mut ChaCha20Rng) -> Vec<Option<usize>> {
    let mut golds: Vec<usize> = (0..gold_n).collect();
    golds.shuffle(rng);
    let mut preds: Vec<usize> = (0..pred_n).collect();
    preds.shuffle(rng);
    let mut map = vec![None; pred_n];
    for (slot, &p) in preds.iter().enumerate().take(golds.len().min(pred_n)) {
        map[p] = Some(golds[slot]);
    }
    map
}

/// Point node i at `target`; if another node holds the target, the two
/// trade assignments. Returns what undo needs.
fn apply_move(
    map: &mut [Option<usize>],
    i: usize,
    target: Option<usize>,
) -> (Option<usize>, Option<usize>) {
    let holder =
        target.and_then(|t| (0..map.len()).find(|&k| k != i && map[k] == Some(t)));
    let old_i = map[i];
    map[i] = target;
    if let Some(h) = holder {
        map[h] = old_i;
    }
    (holder, old_i)
}

fn undo_move(
    map: &mut [Option<usize>],
    i: usize,
    target: Option<usize>,
    holder: Option<usize>,
    old_i: Option<usize>,
) {
    if let Some(h) = holder {
        map[h] = target;
    }
    map[i] = old_i;
}

fn hill_climb(pred: &TripleGraph, gold: &TripleGraph, map: &mut Vec<Option<usize>>) -> usize {
    let index = GoldIndex::build(gold);
    let mut current = matched(pred, &index, map);
    loop {
        let mut best_gain = 0usize;
        let mut best_move: Option<(usize, Option<usize>)> = None;
        for i in 0..map.len() {
            for target in (0..gold.node_count()).map(Some).chain([None]) {
                if map[i] == target {
                    continue;
                }
                let (holder, old_i) = apply_move(map, i, target);
                let score = matched(pred, &index, map);
                undo_move(map, i, target, holder, old_i);
                if score > current + best_gain {
                    best_gain = score - current;
                    best_move = Some((i, target));
                }
            }
        }
        match best_move {
            None => return current,
            Some((i, target)) => {
                apply_move(map, i, target);
                current += best_gain;
            }
        }
    }
}

/// Graph match score with `restarts` hill-climbing restarts (the first uses
/// a name/token heuristic, the rest are random).
pub fn s_score(
    pred: &TripleGraph,
    gold: &TripleGraph,
    restarts: usize,
    rng: &mut ChaCha20Rng,
) -> SScore {
    let flip = gold.orientation_key() < pred.orientation_key();
    let (src, dst) = if flip { (gold, pred) } else { (pred, gold) };
    let cap = src.triple_count().min(dst.triple_count());
    let mut best = 0usize;
    for r in 0..restarts.max(1) {
        let mut map = if r == 0 {
            heuristic_start(src, dst)
        } else {
            random_start(src.node_count(), dst.node_count(), rng)
        };
        best = best.max(hill_climb(src, dst, &mut map));
        if best == cap {
            break;
        }
    }
    SScore::from_counts(best, pred.triple_count(), gold.triple_count())
}

/// Matched-triple count and both totals, for micro-averaging over a corpus.
pub fn s_score_counts(
    pred: &TripleGraph,
    gold: &TripleGraph,
    restarts: usize,
    rng: &mut ChaCha20Rng,
) -> (usize, usize, usize) {
    let s = s_score(pred, gold, restarts, rng);
    let pt = pred.triple_count();
    let gt = gold.triple_count();
    let matched = (s.precision * pt as f64).round() as usize;
    (matched, pt, gt)
}

/// Corpus-level score: counts summed over sentence pairs, Smatch style.
pub fn s_score_corpus<'a>(
    pairs: impl Iterator<Item = (&'a TripleGraph, &'a TripleGraph)>,
    restarts: usize,
    rng: &mut ChaCha20Rng,
) -> SScore {
    let (mut m, mut p, mut g) = (0, 0, 0);
    for (pred, gold) in pairs {
        let (mi, pi, gi) = s_score_counts(pred, gold, restarts, rng);
        m += mi;
        p += pi;
        g += gi;
    }
    SScore::from_counts(m, p, g)
}

pub fn s_score_graphs(
    pred: &UDSGraph,
    gold: &UDSGraph,
    restarts: usize,
    rng: &mut ChaCha20Rng,
) -> SScore {
    s_score(
        &TripleGraph::from_graph(pred),
        &TripleGraph::from_graph(gold),
        restarts,
        rng,
    )
}

/// Exhaustive best matched-triple count over every injective mapping.
/// Usable only for small graphs; the optimum is attained by some total
/// mapping on the smaller side since extending a mapping never unmatches.
pub fn exhaustive_matched(pred: &TripleGraph, gold: &TripleGraph) -> usize {
    let index = GoldIndex::build(gold);
    let pn = pred.node_count();
    let gn = gold.node_count();
    let mut map = vec![None; pn];
    let mut used = vec![false; gn];
    let mut best = 0;
    fn rec(
        i: usize,
        pred: &TripleGraph,
        index: &GoldIndex,
        gn: usize,
        map: &mut Vec<Option<usize>>,
        used: &mut Vec<bool>,
        best: &mut usize,
    ) {
        if i == map.len() {
            *best = (*best).max(matched(pred, index, map));
            return;
        }
        for g in 0..gn {
            if used[g] {
                continue;
            }
            used[g] = true;
            map[i] = Some(g);
            rec(i + 1, pred, index, gn, map, used, best);
            used[g] = false;
        }
        // Leaving i unmapped only matters when gold has fewer nodes.
        map[i] = None;
        if gn < map.len() {
            rec(i + 1, pred, index, gn, map, used, best);
        }
    }
    rec(0, pred, &index, gn, &mut map, &mut used, &mut best);
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::synthetic::{sentence, SyntheticConfig};
    use crate::graph::test_util::diamond;
    use crate::graph::uds_to_arborescence;
    use crate::rng::RngPool;

    #[test]
    fn identical_graphs_score_perfectly() {
        let (_, g) = diamond();
        let mut rng = RngPool::new(1).stream("sscore");
        let s = s_score_graphs(&g, &g, 10, &mut rng);
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
    }

    fn triples(g: &UDSGraph) -> usize {
        TripleGraph::from_graph(g).triple_count()
    }

    #[test]
    fn missing_edge_costs_recall_only() {
        let (_, gold) = diamond();
        let mut pred = gold.clone();
        pred.edges.pop();
        let mut rng = RngPool::new(2).stream("sscore");
        let s = s_score_graphs(&pred, &gold, 10, &mut rng);
        assert_eq!(s.precision, 1.0);
        assert!(s.recall < 1.0);
        let expect_r = triples(&pred) as f64 / triples(&gold) as f64;
        assert!((s.recall - expect_r).abs() < 1e-12);
    }

    #[test]
    fn relabeled_isomorphic_graphs_reach_f1_one() {
        let (_, gold) = diamond();
        let mut pred = gold.clone();
        for n in &mut pred.nodes {
            n.id = format!("other-{}", n.id);
        }
        for e in &mut pred.edges {
            e.src = format!("other-{}", e.src);
            e.dst = format!("other-{}", e.dst);
        }
        pred.roots = pred.roots.iter().map(|r| format!("other-{r}")).collect();
        let mut rng = RngPool::new(3).stream("sscore");
        let s = s_score_graphs(&pred, &gold, 10, &mut rng);
        assert_eq!(s.f1, 1.0);
    }

    #[test]
    fn swapping_arguments_swaps_precision_and_recall() {
        let mut rng = RngPool::new(5).stream("sscore-sym");
        let cfg = SyntheticConfig {
            max_nodes: 5,
            ..Default::default()
        };
        for _ in 0..20 {
            let (_, a) = sentence(&mut rng, &cfg);
            let (_, b) = sentence(&mut rng, &cfg);
            let mut r1 = RngPool::new(7).stream("s");
            let mut r2 = RngPool::new(7).stream("s");
            let ab = s_score_graphs(&a, &b, 10, &mut r1);
            let ba = s_score_graphs(&b, &a, 10, &mut r2);
            assert_eq!(ab.precision, ba.recall);
            assert_eq!(ab.recall, ba.precision);
            assert_eq!(ab.f1, ba.f1);
        }
    }

    #[test]
    fn hill_climbing_attains_exhaustive_optimum_on_small_pairs() {
        let mut gen = RngPool::new(11).stream("sscore-pairs");
        let cfg = SyntheticConfig {
            min_tokens: 3,
            max_tokens: 8,
            max_nodes: 6,
            ..Default::default()
        };
        let mut hits = 0;
        for case in 0..100 {
            let (_, gold) = sentence(&mut gen, &cfg);
            let pred = if case % 2 == 0 {
                // Perturbed copy: drop an edge or retarget a root.
                let mut p = gold.clone();
                if !p.edges.is_empty() {
                    p.edges.remove(case % p.edges.len());
                    p.roots = p
                        .nodes
                        .iter()
                        .filter(|n| !p.edges.iter().any(|e| e.dst == n.id))
                        .map(|n| n.id.clone())
                        .collect();
                }
                p
            } else {
                sentence(&mut gen, &cfg).1
            };
            let tp = TripleGraph::from_graph(&pred);
            let tg = TripleGraph::from_graph(&gold);
            let optimum = exhaustive_matched(&tp, &tg);
            let mut rng = RngPool::new(13).stream_indexed("sscore-climb", case as u64);
            let s = s_score(&tp, &tg, 10, &mut rng);
            let climbed = (s.precision * tp.triple_count() as f64).round() as usize;
            assert!(climbed <= optimum, "case {case}: climbed past the optimum");
            if climbed == optimum {
                hits += 1;
            }
        }
        assert!(hits >= 95, "only {hits}/100 reached the exhaustive optimum");
    }

    #[test]
    fn syntax_nodes_enter_triples_only_when_asked() {
        let (_, graph) = diamond();
        let tree6 = crate::graph::UDTree::new(
            &[
                ("we", "PRON"),
                ("ship", "VERB"),
                ("new", "ADJ"),
                ("crates", "NOUN"),
                ("old", "ADJ"),
                ("docks", "NOUN"),
            ],
            vec![2, 0, 4, 2, 6, 2],
            vec!["nsubj", "root", "amod", "obj", "amod", "obl"],
        );
        let arb = uds_to_arborescence(&graph, &tree6, false).unwrap();
        let sem = TripleGraph::from_arborescence(&arb, false);
        let syn = TripleGraph::from_arborescence(&arb, true);
        assert!(syn.node_count() > sem.node_count());
        assert!(syn.triple_count() > sem.triple_count());
        // The semantic rendering matches the source graph's own triples.
        assert_eq!(
            sem.triple_count(),
            TripleGraph::from_graph(&graph).triple_count()
        );
    }

    #[test]
    fn arborescence_rendering_merges_copies() {
        let (tree, graph) = diamond();
        let arb = uds_to_arborescence(&graph, &tree, true).unwrap();
        let tg = TripleGraph::from_arborescence(&arb, true);
        assert_eq!(tg.node_count(), graph.nodes.len());
        let mut rng = RngPool::new(17).stream("sscore-arb");
        let s = s_score(&tg, &TripleGraph::from_graph(&graph), 10, &mut rng);
        assert_eq!(s.f1, 1.0);
    }
}
