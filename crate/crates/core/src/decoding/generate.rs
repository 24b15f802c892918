//! Autoregressive graph generation and teacher-forced attribute evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::graph::{
    delinearize, linearize, recover_dag, uds_to_arborescence, AttributeValue, LinearizedGraph,
    NodeKind, UDSGraph, UDTree,
};
use crate::io::{CorpusEntry, Vocabulary, EOS, ROOT, SEP};
use crate::model::{
    Mode, Model, NodeFeatures, StepMixture, SyntacticParse, TargetSequence, SEP_TOKEN,
};
use crate::tensor::{Axis, Tensor};

use super::chu_liu_edmonds;

/// Everything one inference pass produces: the semantic graph, a dependency
/// tree where the mode provides one, and the degradations hit on the way.
#[derive(Debug, Clone)]
pub struct GeneratedOutput {
    pub graph: UDSGraph,
    pub tree: Option<UDTree>,
    pub warnings: Vec<String>,
}

/// One emitted position of the raw output sequence, before segment
/// splitting. Heads are full-sequence positions with 0 for the virtual
/// root; they always precede the node.
#[derive(Debug, Clone)]
struct RawNode {
    token: String,
    coindex: usize,
    head_position: usize,
    edge_label: String,
    source_index: Option<usize>,
    is_sep: bool,
}

/// Dense attribute head outputs over every emitted node, vocab-inventory
/// columns, probabilities for the applicability slots.
struct AttrPredictions {
    node_values: Vec<f64>,
    node_applies: Vec<f64>,
    edge_values: Vec<f64>,
    edge_applies: Vec<f64>,
}

/// Parse one sentence with a trained model. The semantic graph comes from
/// the autoregressive decoder (BI has none); the dependency tree comes from
/// the biaffine parser where one runs and from the syntactic segment in the
/// concatenation modes.
pub fn generate_graph(model: &Model, sentence: &UDTree) -> Result<GeneratedOutput> {
    let mode = model.config.mode;
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    let (_, parse, memory) = model.analyze(sentence, &mut rng, false)?;
    let mut warnings = Vec::new();

    let mut tree = match &parse {
        Some(p) => Some(tree_from_parse(model, sentence, p)?),
        None => None,
    };

    if mode == Mode::Bi {
        return Ok(GeneratedOutput {
            graph: UDSGraph::default(),
            tree,
            warnings,
        });
    }

    let (raw, z_rows, truncated) = decode_sequence(model, sentence, &memory)?;
    if truncated {
        warnings.push(format!(
            "decode hit the length cap of {} without EOS; output truncated",
            model.config.max_decode_len(sentence.len())
        ));
    }
    let preds = predict_attrs(model, &raw, &z_rows)?;
    let (graph, segment_tree) = assemble(
        mode,
        &model.vocab,
        sentence,
        &raw,
        &preds,
        &mut warnings,
    )?;
    if matches!(mode, Mode::Cb | Mode::Ca) {
        tree = segment_tree;
    }
    Ok(GeneratedOutput {
        graph,
        tree,
        warnings,
    })
}

/// The biaffine tree alone, skipping the semantic decoder entirely. None
/// in modes where no parser runs.
pub fn parse_only(model: &Model, sentence: &UDTree) -> Result<Option<UDTree>> {
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    let (_, parse, _) = model.analyze(sentence, &mut rng, false)?;
    match &parse {
        Some(p) => Ok(Some(tree_from_parse(model, sentence, p)?)),
        None => Ok(None),
    }
}

/// Maximum spanning tree over the biaffine head scores plus label argmax at
/// the chosen heads.
fn tree_from_parse(model: &Model, sentence: &UDTree, parse: &SyntacticParse) -> Result<UDTree> {
    let heads = chu_liu_edmonds(&parse.score_rows());
    let logits = model.biaffine.scorer.label_logits_at(&parse.scores, &heads)?;
    let deprels = (0..sentence.len())
        .map(|i| model.vocab.relations.name(argmax_row(&logits, i)).to_string())
        .collect();
    Ok(UDTree {
        tokens: sentence.tokens.clone(),
        heads,
        deprels,
        comments: sentence.comments.clone(),
        extras: sentence.extras.clone(),
    })
}

enum Route {
    Gen(usize),
    Src(usize),
    Tgt(usize),
}

/// Highest-probability route across the three mixture blocks; exact ties go
/// to the earliest block and the smallest index.
fn best_route(mix: &StepMixture) -> Route {
    let mut best = Route::Gen(0);
    let mut best_p = f64::NEG_INFINITY;
    for (i, &p) in mix.gen.iter().enumerate() {
        if p > best_p {
            best_p = p;
            best = Route::Gen(i);
        }
    }
    for (i, &p) in mix.src.iter().enumerate() {
        if p > best_p {
            best_p = p;
            best = Route::Src(i);
        }
    }
    for (i, &p) in mix.tgt.iter().enumerate() {
        if p > best_p {
            best_p = p;
            best = Route::Tgt(i);
        }
    }
    best
}

fn argmax_row(t: &Tensor, row: usize) -> usize {
    let mut best = 0;
    for c in 1..t.cols() {
        if t.get(row, c) > t.get(row, best) {
            best = c;
        }
    }
    best
}

fn argmax_slice(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Run the decoder autoregressively: each step embeds the previous node's
/// categorical features, the pointer mixture fixes the node's identity, and
/// the relation scorer greedily attaches it to the root or an earlier node.
/// Returns the emitted nodes, the z row behind each one, and whether the
/// length cap cut generation off before EOS.
fn decode_sequence(
    model: &Model,
    sentence: &UDTree,
    memory: &Tensor,
) -> Result<(Vec<RawNode>, Vec<Tensor>, bool)> {
    let vocab = &model.vocab;
    let cap = model.config.max_decode_len(sentence.len());
    let mut raw: Vec<RawNode> = Vec::new();
    let mut z_rows: Vec<Tensor> = Vec::new();
    let mut state = model.decoder.begin(memory)?;
    let mut feat = NodeFeatures::bos();
    let mut next_coindex = 1usize;
    let mut saw_eos = false;

    while raw.len() < cap {
        let z = model.decoder.step(&model.embeddings, &mut state, feat)?;
        let prior = if z_rows.is_empty() {
            None
        } else {
            Some(Tensor::concat(&z_rows, Axis::Rows)?)
        };
        let mix = model.pointer.step(&z, memory, prior.as_ref())?;

        let (token, coindex, source_index, is_sep) = match best_route(&mix) {
            Route::Gen(v) if v == EOS => {
                saw_eos = true;
                break;
            }
            Route::Gen(v) => {
                let ci = next_coindex;
                next_coindex += 1;
                (vocab.tokens.name(v).to_string(), ci, None, v == SEP)
            }
            Route::Src(t) => {
                let ci = next_coindex;
                next_coindex += 1;
                (sentence.tokens[t].form.clone(), ci, Some(t + 1), false)
            }
            Route::Tgt(j) => (raw[j].token.clone(), raw[j].coindex, None, false),
        };

        // The separator is a structural token: it hangs off the root by
        // convention rather than by prediction, exactly as it is trained.
        let (head_position, edge_label) = if is_sep {
            (0, SEP_TOKEN.to_string())
        } else {
            let scores = model.relation.step(&z, prior.as_ref())?;
            let h = argmax_slice(&scores.head_scores.to_vec());
            let labels = model.relation.step_label_logits(&scores, h)?;
            (
                h,
                vocab.edge_labels.name(argmax_row(&labels, 0)).to_string(),
            )
        };

        raw.push(RawNode {
            token,
            coindex,
            head_position,
            edge_label,
            source_index,
            is_sep,
        });
        z_rows.push(z);
        let i = raw.len();
        let node = &raw[i - 1];
        feat = NodeFeatures {
            token_id: vocab.tokens.id(&node.token),
            index: i,
            head_token_id: if node.head_position == 0 {
                ROOT
            } else {
                vocab.tokens.id(&raw[node.head_position - 1].token)
            },
            head_index: node.head_position,
            label_id: vocab.edge_labels.id(&node.edge_label),
        };
    }
    Ok((raw, z_rows, !saw_eos))
}

/// Batched attribute head evaluation over every emitted node, laid out the
/// way training sees it (rows aligned with nodes, full-sequence heads).
fn predict_attrs(model: &Model, raw: &[RawNode], z_rows: &[Tensor]) -> Result<AttrPredictions> {
    let n = raw.len();
    let nw = model.vocab.node_attrs.len();
    let ew = model.vocab.edge_attrs.len();
    let mut out = AttrPredictions {
        node_values: vec![0.0; n * nw],
        node_applies: vec![0.0; n * nw],
        edge_values: vec![0.0; n * ew],
        edge_applies: vec![0.0; n * ew],
    };
    if n == 0 {
        return Ok(out);
    }
    let nodes = Tensor::concat(z_rows, Axis::Rows)?;
    if nw > 0 {
        let (v, m) = model.node_attr.forward(&nodes)?;
        out.node_values = v.to_vec();
        out.node_applies = m.sigmoid().to_vec();
    }
    if ew > 0 {
        let heads: Vec<usize> = raw.iter().map(|r| r.head_position).collect();
        let (v, m) = model.edge_attr.forward(&nodes, &heads)?;
        out.edge_values = v.to_vec();
        out.edge_applies = m.sigmoid().to_vec();
    }
    Ok(out)
}

/// Split the raw sequence at the first separator, rebuild the semantic
/// graph from the semantic segment, and read a dependency tree off the
/// syntactic one in the concatenation modes.
fn assemble(
    mode: Mode,
    vocab: &Vocabulary,
    sentence: &UDTree,
    raw: &[RawNode],
    preds: &AttrPredictions,
    warnings: &mut Vec<String>,
) -> Result<(UDSGraph, Option<UDTree>)> {
    let sep = raw.iter().position(|r| r.is_sep);
    let n = raw.len();
    let (sem, syn): (Range<usize>, Option<Range<usize>>) = match mode {
        Mode::Cb => match sep {
            Some(i) => (i + 1..n, Some(0..i)),
            None => {
                warnings
                    .push("no separator emitted; treating the whole sequence as syntactic".into());
                (n..n, Some(0..n))
            }
        },
        Mode::Ca => match sep {
            Some(i) => (0..i, Some(i + 1..n)),
            None => {
                warnings
                    .push("no separator emitted; treating the whole sequence as semantic".into());
                (0..n, Some(n..n))
            }
        },
        _ => match sep {
            Some(i) => {
                warnings.push(format!(
                    "unexpected separator at position {}; {} trailing node(s) dropped",
                    i + 1,
                    n - i - 1
                ));
                (0..i, None)
            }
            None => (0..n, None),
        },
    };

    let lin = semantic_linearization(vocab, sentence, raw, sem, preds, warnings)?;
    let graph = recover_dag(&delinearize(&lin)?)?;
    let tree = syn.map(|range| tree_from_segment(sentence, raw, range, warnings));
    Ok((graph, tree))
}

/// Rebuild a valid linearization from one segment: positions renumbered,
/// coindices densified in order of first appearance, heads that left the
/// segment reattached to the root, predicted attributes thresholded at 0.5
/// and clamped into range, unused attribute columns pruned.
fn semantic_linearization(
    vocab: &Vocabulary,
    sentence: &UDTree,
    raw: &[RawNode],
    range: Range<usize>,
    preds: &AttrPredictions,
    warnings: &mut Vec<String>,
) -> Result<LinearizedGraph> {
    let members: Vec<usize> = range.collect();
    let k = members.len();
    let local: BTreeMap<usize, usize> = members
        .iter()
        .enumerate()
        .map(|(li, &fi)| (fi + 1, li + 1))
        .collect();

    let mut coindex_map: BTreeMap<usize, usize> = BTreeMap::new();
    let mut node_tokens = Vec::with_capacity(k);
    let mut coindices = Vec::with_capacity(k);
    let mut head_positions = Vec::with_capacity(k);
    let mut edge_labels = Vec::with_capacity(k);
    let mut source_indices: Vec<Option<usize>> = Vec::with_capacity(k);
    let mut first_occurrence = Vec::with_capacity(k);
    let mut reattached = 0usize;

    for &fi in &members {
        let node = &raw[fi];
        node_tokens.push(node.token.clone());
        let is_new = !coindex_map.contains_key(&node.coindex);
        let next = coindex_map.len() + 1;
        coindices.push(*coindex_map.entry(node.coindex).or_insert(next));
        first_occurrence.push(is_new);
        let hp = node.head_position;
        let mapped = if hp == 0 {
            0
        } else if let Some(&lp) = local.get(&hp) {
            lp
        } else {
            reattached += 1;
            0
        };
        head_positions.push(mapped);
        edge_labels.push(node.edge_label.clone());
        source_indices.push(node.source_index);
    }
    if reattached > 0 {
        warnings.push(format!(
            "{reattached} semantic node(s) headed outside their segment; reattached to the root"
        ));
    }

    // Merging back into a DAG needs an instance link in every coindex
    // group; anchor sourceless groups at the first matching token.
    let with_source: BTreeSet<usize> = (0..k)
        .filter(|&li| source_indices[li].is_some())
        .map(|li| coindices[li])
        .collect();
    let mut fallbacks = 0usize;
    for li in 0..k {
        if first_occurrence[li] && !with_source.contains(&coindices[li]) {
            let anchor = sentence
                .tokens
                .iter()
                .find(|t| t.form == node_tokens[li])
                .map(|t| t.index)
                .unwrap_or(1);
            source_indices[li] = Some(anchor);
            fallbacks += 1;
        }
    }
    if fallbacks > 0 {
        warnings.push(format!(
            "{fallbacks} generated node(s) lacked a source anchor; anchored at the first matching token or token 1"
        ));
    }

    let nw = vocab.node_attrs.len();
    let ew = vocab.edge_attrs.len();
    let mut node_vals = vec![0.0; k * nw];
    let mut node_mask = vec![false; k * nw];
    let mut edge_vals = vec![0.0; k * ew];
    let mut edge_mask = vec![false; k * ew];
    let mut clamped = 0usize;
    for (li, &fi) in members.iter().enumerate() {
        if first_occurrence[li] {
            for a in 0..nw {
                if preds.node_applies[fi * nw + a] > 0.5 {
                    let (av, changed) =
                        AttributeValue::clamped(preds.node_values[fi * nw + a], true);
                    node_vals[li * nw + a] = av.value;
                    node_mask[li * nw + a] = true;
                    clamped += changed as usize;
                }
            }
        }
        // Root attachments are not semantic edges and carry nothing.
        if head_positions[li] > 0 {
            for a in 0..ew {
                if preds.edge_applies[fi * ew + a] > 0.5 {
                    let (av, changed) =
                        AttributeValue::clamped(preds.edge_values[fi * ew + a], true);
                    edge_vals[li * ew + a] = av.value;
                    edge_mask[li * ew + a] = true;
                    clamped += changed as usize;
                }
            }
        }
    }
    if clamped > 0 {
        warnings.push(format!(
            "{clamped} attribute value(s) clamped into [-3, 3]"
        ));
    }

    let (node_attr_names, node_attr_values, node_attr_mask) =
        prune_columns(&vocab.node_attrs, node_vals, node_mask, k);
    let (edge_attr_names, edge_attr_values, edge_attr_mask) =
        prune_columns(&vocab.edge_attrs, edge_vals, edge_mask, k);

    Ok(LinearizedGraph {
        node_tokens,
        coindices,
        head_positions,
        edge_labels,
        source_indices,
        kinds: vec![NodeKind::Semantic; k],
        node_attr_names,
        node_attr_values,
        node_attr_mask: node_attr_mask.iter().map(|&b| b).collect(),
        edge_attr_names,
        edge_attr_values,
        edge_attr_mask: edge_attr_mask.iter().map(|&b| b).collect(),
    })
}

/// Drop attribute columns no node uses; a linearization owes every column
/// at least one appearance.
fn prune_columns(
    names: &[String],
    vals: Vec<f64>,
    mask: Vec<bool>,
    n: usize,
) -> (Vec<String>, Vec<f64>, Vec<bool>) {
    let w = names.len();
    let keep: Vec<usize> = (0..w)
        .filter(|&c| (0..n).any(|r| mask[r * w + c]))
        .collect();
    let kw = keep.len();
    let mut out_names = Vec::with_capacity(kw);
    for &c in &keep {
        out_names.push(names[c].clone());
    }
    let mut ov = vec![0.0; n * kw];
    let mut om = vec![false; n * kw];
    for r in 0..n {
        for (nc, &c) in keep.iter().enumerate() {
            ov[r * kw + nc] = vals[r * w + c];
            om[r * kw + nc] = mask[r * w + c];
        }
    }
    (out_names, ov, om)
}

/// Read a dependency tree off the syntactic segment: each token takes the
/// head and label of the first node that copies it, heads resolved through
/// the head node's source token. Uncovered tokens and unresolvable heads
/// attach to the root.
fn tree_from_segment(
    sentence: &UDTree,
    raw: &[RawNode],
    range: Range<usize>,
    warnings: &mut Vec<String>,
) -> UDTree {
    let t = sentence.len();
    let members: Vec<usize> = range.collect();
    let in_seg: BTreeSet<usize> = members.iter().copied().collect();
    let mut heads = vec![0usize; t];
    let mut deprels = vec!["dep".to_string(); t];
    let mut covered = vec![false; t];
    let mut degraded = 0usize;
    for &fi in &members {
        let node = &raw[fi];
        let tok = match node.source_index {
            Some(s) if s >= 1 && s <= t => s,
            _ => {
                degraded += 1;
                continue;
            }
        };
        if covered[tok - 1] {
            continue;
        }
        covered[tok - 1] = true;
        deprels[tok - 1] = node.edge_label.clone();
        let hp = node.head_position;
        heads[tok - 1] = if hp == 0 {
            0
        } else if in_seg.contains(&(hp - 1)) {
            match raw[hp - 1].source_index {
                Some(hs) if hs >= 1 && hs <= t => hs,
                _ => {
                    degraded += 1;
                    0
                }
            }
        } else {
            degraded += 1;
            0
        };
    }
    let uncovered = covered.iter().filter(|&&c| !c).count();
    if uncovered > 0 {
        warnings.push(format!(
            "{uncovered} token(s) not covered by the syntactic segment; attached to the root as dep"
        ));
    }
    if degraded > 0 {
        warnings.push(format!(
            "{degraded} syntactic node(s) with unusable sources or heads; attached to the root"
        ));
    }
    UDTree {
        tokens: sentence.tokens.clone(),
        heads,
        deprels,
        comments: sentence.comments.clone(),
        extras: sentence.extras.clone(),
    }
}

/// Attribute head outputs along the gold structure: the decoder is forced
/// through the gold sequence and every gold node and edge slot gets a
/// predicted value and an applicability probability, aligned with the gold
/// linearization row by row.
#[derive(Debug, Clone)]
pub struct OracleOutput {
    pub gold: LinearizedGraph,
    /// 1-based anchor token per gold position, None on re-entrant copies.
    pub anchors: Vec<Option<usize>>,
    pub node_attr_names: Vec<String>,
    /// (len x names) row-major raw predicted values.
    pub node_values: Vec<f64>,
    /// Applicability probabilities, same layout.
    pub node_applies: Vec<f64>,
    pub edge_attr_names: Vec<String>,
    pub edge_values: Vec<f64>,
    pub edge_applies: Vec<f64>,
}

/// Teacher-forced attribute evaluation. None when the mode has no semantic
/// decoder or the entry has no gold graph.
pub fn oracle_decode(model: &Model, entry: &CorpusEntry) -> Result<Option<OracleOutput>> {
    if model.config.mode == Mode::Bi {
        return Ok(None);
    }
    let graph = match &entry.graph {
        Some(g) => g,
        None => return Ok(None),
    };
    let vocab = &model.vocab;
    let gold = linearize(&uds_to_arborescence(graph, &entry.tree, true)?);
    let nw = vocab.node_attrs.len();
    let ew = vocab.edge_attrs.len();
    let g = gold.len();
    let mut out = OracleOutput {
        anchors: gold.source_indices.clone(),
        node_attr_names: vocab.node_attrs.clone(),
        node_values: vec![0.0; g * nw],
        node_applies: vec![0.0; g * nw],
        edge_attr_names: vocab.edge_attrs.clone(),
        edge_values: vec![0.0; g * ew],
        edge_applies: vec![0.0; g * ew],
        gold,
    };
    if g == 0 {
        return Ok(Some(out));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    let (_, _, memory) = model.analyze(&entry.tree, &mut rng, false)?;
    let seq = TargetSequence::build(&entry.tree, Some(graph), model.config.mode, vocab)?;
    let feats = seq.features(vocab);
    let z = model
        .decoder
        .forward(&model.embeddings, &feats, &memory, &mut rng, false)?;
    let n = seq.len();
    let nodes = z.slice(0, n, 0, z.cols())?;
    let sem_rows: Vec<usize> = (0..n).filter(|&i| seq.semantic_segment[i]).collect();
    if sem_rows.len() != g {
        return Err(Error::Validation(format!(
            "semantic rows ({}) disagree with the gold linearization ({g})",
            sem_rows.len()
        )));
    }
    if nw > 0 {
        let (v, m) = model.node_attr.forward(&nodes)?;
        let p = m.sigmoid();
        for (gi, &row) in sem_rows.iter().enumerate() {
            for a in 0..nw {
                out.node_values[gi * nw + a] = v.get(row, a);
                out.node_applies[gi * nw + a] = p.get(row, a);
            }
        }
    }
    if ew > 0 {
        let (v, m) = model.edge_attr.forward(&nodes, &seq.head_positions)?;
        let p = m.sigmoid();
        for (gi, &row) in sem_rows.iter().enumerate() {
            for a in 0..ew {
                out.edge_values[gi * ew + a] = v.get(row, a);
                out.edge_applies[gi * ew + a] = p.get(row, a);
            }
        }
    }
    Ok(Some(out))
}
