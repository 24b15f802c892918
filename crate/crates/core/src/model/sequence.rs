//! Gold decoder sequences: the linearized target for one sentence, plus the
//! supervision (routes, heads, labels, attributes) read off it.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{linearize, uds_to_arborescence, NodeKind, UDSGraph, UDTree};
use crate::io::{Vocabulary, EOS, ROOT, SEP, UNK};

use super::config::Mode;
use super::decoder::NodeFeatures;
use super::pointer::GoldRoutes;

pub const SEP_TOKEN: &str = "<sep>";

/// One training target. Positions are 1-based over the whole sequence;
/// head position 0 is the virtual root in every segment.
#[derive(Debug, Clone)]
pub struct TargetSequence {
    pub tokens: Vec<String>,
    pub coindices: Vec<usize>,
    pub head_positions: Vec<usize>,
    pub edge_labels: Vec<String>,
    pub source_indices: Vec<Option<usize>>,
    pub kinds: Vec<NodeKind>,
    /// True on rows belonging to the semantic segment.
    pub semantic_segment: Vec<bool>,
    /// 1-based position of the separator node, in concat modes only.
    pub sep_position: Option<usize>,
    /// (n, |node attr inventory|) gold values and applicability, row-major.
    pub node_attr_values: Vec<f64>,
    pub node_attr_applies: Vec<f64>,
    pub edge_attr_values: Vec<f64>,
    pub edge_attr_applies: Vec<f64>,
}

/// Pre-order walk of the dependency tree: (token, parent token) pairs with
/// children visited in sentence order.
fn ud_preorder(tree: &UDTree) -> Vec<(usize, usize)> {
    let t = tree.len();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); t + 1];
    for (i, &h) in tree.heads.iter().enumerate() {
        children[h].push(i + 1);
    }
    let mut out = Vec::with_capacity(t);
    let mut stack: Vec<usize> = children[0].iter().rev().copied().collect();
    while let Some(tok) = stack.pop() {
        out.push((tok, tree.heads[tok - 1]));
        for &c in children[tok].iter().rev() {
            stack.push(c);
        }
    }
    out
}

impl TargetSequence {
    pub fn build(
        tree: &UDTree,
        graph: Option<&UDSGraph>,
        mode: Mode,
        vocab: &Vocabulary,
    ) -> Result<TargetSequence> {
        let graph = match graph {
            Some(g) => g,
            None => {
                return Err(Error::Config(format!(
                    "mode {mode} trains on semantic graphs but the entry has none"
                )))
            }
        };
        let mut seq = TargetSequence {
            tokens: Vec::new(),
            coindices: Vec::new(),
            head_positions: Vec::new(),
            edge_labels: Vec::new(),
            source_indices: Vec::new(),
            kinds: Vec::new(),
            semantic_segment: Vec::new(),
            sep_position: None,
            node_attr_values: Vec::new(),
            node_attr_applies: Vec::new(),
            edge_attr_values: Vec::new(),
            edge_attr_applies: Vec::new(),
        };
        match mode {
            Mode::Cb => {
                seq.push_syntax(tree, vocab);
                seq.push_sep(vocab);
                seq.push_semantics(graph, tree, vocab)?;
            }
            Mode::Ca => {
                seq.push_semantics(graph, tree, vocab)?;
                seq.push_sep(vocab);
                seq.push_syntax(tree, vocab);
            }
            _ => seq.push_semantics(graph, tree, vocab)?,
        }
        Ok(seq)
    }

    fn next_coindex(&self) -> usize {
        self.coindices.iter().copied().max().unwrap_or(0) + 1
    }

    fn pad_attrs(&mut self, vocab: &Vocabulary) {
        let n = self.tokens.len();
        self.node_attr_values.resize(n * vocab.node_attrs.len(), 0.0);
        self.node_attr_applies.resize(n * vocab.node_attrs.len(), 0.0);
        self.edge_attr_values.resize(n * vocab.edge_attrs.len(), 0.0);
        self.edge_attr_applies.resize(n * vocab.edge_attrs.len(), 0.0);
    }

    fn push_syntax(&mut self, tree: &UDTree, vocab: &Vocabulary) {
        let offset = self.tokens.len();
        let mut ci = self.next_coindex();
        let mut pos_of_token = vec![0usize; tree.len() + 1];
        for (k, (tok, parent)) in ud_preorder(tree).into_iter().enumerate() {
            pos_of_token[tok] = offset + k + 1;
            self.tokens.push(tree.tokens[tok - 1].form.clone());
            self.coindices.push(ci);
            ci += 1;
            self.head_positions.push(if parent == 0 {
                0
            } else {
                pos_of_token[parent]
            });
            self.edge_labels.push(tree.deprels[tok - 1].clone());
            self.source_indices.push(Some(tok));
            self.kinds.push(NodeKind::Syntactic);
            self.semantic_segment.push(false);
        }
        self.pad_attrs(vocab);
    }

    fn push_sep(&mut self, vocab: &Vocabulary) {
        self.sep_position = Some(self.tokens.len() + 1);
        self.tokens.push(SEP_TOKEN.to_string());
        self.coindices.push(self.next_coindex());
        self.head_positions.push(0);
        self.edge_labels.push(SEP_TOKEN.to_string());
        self.source_indices.push(None);
        self.kinds.push(NodeKind::Syntactic);
        self.semantic_segment.push(false);
        self.pad_attrs(vocab);
    }

    fn push_semantics(
        &mut self,
        graph: &UDSGraph,
        tree: &UDTree,
        vocab: &Vocabulary,
    ) -> Result<()> {
        let lin = linearize(&uds_to_arborescence(graph, tree, true)?);
        let offset = self.tokens.len();
        let ci_offset = self.next_coindex() - 1;
        for i in 0..lin.len() {
            self.tokens.push(lin.node_tokens[i].clone());
            self.coindices.push(lin.coindices[i] + ci_offset);
            let hp = lin.head_positions[i];
            self.head_positions.push(if hp == 0 { 0 } else { hp + offset });
            self.edge_labels.push(lin.edge_labels[i].clone());
            self.source_indices.push(lin.source_indices[i]);
            self.kinds.push(lin.kinds[i]);
            self.semantic_segment.push(true);
            for name in &vocab.node_attrs {
                let v = lin.node_attr(i, name);
                self.node_attr_values.push(v.unwrap_or(0.0));
                self.node_attr_applies.push(v.is_some() as u8 as f64);
            }
            for name in &vocab.edge_attrs {
                let v = lin.edge_attr(i, name);
                self.edge_attr_values.push(v.unwrap_or(0.0));
                self.edge_attr_applies.push(v.is_some() as u8 as f64);
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Decoder inputs: BOS plus every node, so the decoder's last row
    /// predicts EOS.
    pub fn features(&self, vocab: &Vocabulary) -> Vec<NodeFeatures> {
        let mut out = vec![NodeFeatures::bos()];
        for j in 0..self.len() {
            let hp = self.head_positions[j];
            out.push(NodeFeatures {
                token_id: vocab.tokens.id(&self.tokens[j]),
                index: j + 1,
                head_token_id: if hp == 0 {
                    ROOT
                } else {
                    vocab.tokens.id(&self.tokens[hp - 1])
                },
                head_index: hp,
                label_id: vocab.edge_labels.id(&self.edge_labels[j]),
            });
        }
        out
    }

    /// Gold pointer routes. Re-entrant copies must target-copy (that is
    /// what coindexing means at decode time); separator and EOS steps must
    /// generate their symbols; any other node may be generated when in
    /// vocabulary and source-copied from every equal-form token. Syntactic
    /// segment nodes copy exactly their own token.
    pub fn routes(&self, tree: &UDTree, vocab: &Vocabulary) -> GoldRoutes {
        let n = self.len();
        let m = n + 1;
        let t = tree.len();
        let mut r = GoldRoutes {
            gen_cols: vec![0; m],
            gen_valid: vec![0.0; m],
            src: vec![0.0; m * t],
            tgt: vec![0.0; m * m],
        };
        let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
        for s in 0..n {
            let ci = self.coindices[s];
            if seen.contains_key(&ci) {
                for p in 0..s {
                    if self.coindices[p] == ci {
                        r.tgt[s * m + p] = 1.0;
                    }
                }
                continue;
            }
            seen.insert(ci, s);
            if self.tokens[s] == SEP_TOKEN {
                r.gen_cols[s] = SEP;
                r.gen_valid[s] = 1.0;
            } else if !self.semantic_segment[s] {
                let tok = self.source_indices[s].expect("syntactic node has a source");
                r.src[s * t + tok - 1] = 1.0;
            } else {
                let id = vocab.tokens.id(&self.tokens[s]);
                if id != UNK || self.tokens[s] == "<unk>" {
                    r.gen_cols[s] = id;
                    r.gen_valid[s] = 1.0;
                }
                let mut any = r.gen_valid[s] == 1.0;
                for (k, token) in tree.tokens.iter().enumerate() {
                    if token.form == self.tokens[s] {
                        r.src[s * t + k] = 1.0;
                        any = true;
                    }
                }
                if !any {
                    r.gen_cols[s] = UNK;
                    r.gen_valid[s] = 1.0;
                }
            }
        }
        r.gen_cols[n] = EOS;
        r.gen_valid[n] = 1.0;
        r
    }

    pub fn label_targets(&self, vocab: &Vocabulary) -> Vec<usize> {
        self.edge_labels
            .iter()
            .map(|l| vocab.edge_labels.id(l))
            .collect()
    }

    /// Rows whose node carries semantic attributes (copies included; their
    /// gold applicability is all zero).
    pub fn semantic_rows(&self) -> Vec<bool> {
        self.kinds.iter().map(|k| *k == NodeKind::Semantic).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{AttributeValue, SemanticEdge, SemanticNode};
    use crate::io::{build_vocab, Corpus, CorpusEntry};

    fn attr(name: &str, v: f64) -> (String, AttributeValue) {
        (name.to_string(), AttributeValue::new(v))
    }

    /// "dogs chase dogs": two semantic nodes over token 2's predicate and a
    /// re-entrant argument instantiating token 1.
    fn fixture() -> (UDTree, UDSGraph, Vocabulary) {
        let tree = UDTree::new(
            &[("dogs", "NOUN"), ("chase", "VERB"), ("dogs", "NOUN")],
            vec![2, 0, 2],
            vec!["nsubj", "root", "obj"],
        );
        let graph = UDSGraph {
            nodes: vec![
                SemanticNode {
                    id: "p".into(),
                    head_token: 2,
                    attributes: [attr("factual", 1.5)].into_iter().collect(),
                },
                SemanticNode {
                    id: "a".into(),
                    head_token: 1,
                    attributes: [attr("animate", 2.0)].into_iter().collect(),
                },
            ],
            edges: vec![SemanticEdge {
                src: "p".into(),
                dst: "a".into(),
                attributes: [attr("protoagent", 1.0)].into_iter().collect(),
            }],
            roots: vec!["p".into()],
        };
        let corpus = Corpus {
            entries: vec![CorpusEntry {
                id: "s1".into(),
                tree: tree.clone(),
                graph: Some(graph.clone()),
            }],
        };
        let vocab = build_vocab(&corpus, 1);
        (tree, graph, vocab)
    }

    #[test]
    fn semantic_only_sequence_mirrors_the_linearization() {
        let (tree, graph, vocab) = fixture();
        let seq = TargetSequence::build(&tree, Some(&graph), Mode::En, &vocab).unwrap();
        assert_eq!(seq.tokens, vec!["chase", "dogs"]);
        assert_eq!(seq.head_positions, vec![0, 1]);
        assert_eq!(seq.edge_labels, vec!["root", "arg"]);
        assert!(seq.semantic_segment.iter().all(|&b| b));
        assert_eq!(seq.sep_position, None);
        let a = vocab.node_attrs.len();
        assert_eq!(seq.node_attr_values.len(), 2 * a);
        // Row 0 is the predicate: factual applies, animate does not.
        let fi = vocab.node_attrs.iter().position(|n| n == "factual").unwrap();
        let ai = vocab.node_attrs.iter().position(|n| n == "animate").unwrap();
        assert_eq!(seq.node_attr_applies[fi], 1.0);
        assert_eq!(seq.node_attr_values[fi], 1.5);
        assert_eq!(seq.node_attr_applies[ai], 0.0);
        assert_eq!(seq.node_attr_applies[a + ai], 1.0);
        assert_eq!(seq.node_attr_values[a + ai], 2.0);
    }

    #[test]
    fn concat_before_puts_syntax_then_separator_then_semantics() {
        let (tree, graph, vocab) = fixture();
        let seq = TargetSequence::build(&tree, Some(&graph), Mode::Cb, &vocab).unwrap();
        assert_eq!(
            seq.tokens,
            vec!["chase", "dogs", "dogs", "<sep>", "chase", "dogs"]
        );
        assert_eq!(seq.head_positions, vec![0, 1, 1, 0, 0, 5]);
        assert_eq!(seq.sep_position, Some(4));
        assert_eq!(seq.semantic_segment, vec![false, false, false, false, true, true]);
        assert_eq!(seq.coindices, vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(
            seq.edge_labels,
            vec!["root", "nsubj", "obj", "<sep>", "root", "arg"]
        );
        assert_eq!(
            seq.source_indices,
            vec![Some(2), Some(1), Some(3), None, Some(2), Some(1)]
        );
    }

    #[test]
    fn concat_after_puts_semantics_first() {
        let (tree, graph, vocab) = fixture();
        let seq = TargetSequence::build(&tree, Some(&graph), Mode::Ca, &vocab).unwrap();
        assert_eq!(
            seq.tokens,
            vec!["chase", "dogs", "<sep>", "chase", "dogs", "dogs"]
        );
        assert_eq!(seq.head_positions, vec![0, 1, 0, 0, 4, 4]);
        assert_eq!(seq.sep_position, Some(3));
        assert_eq!(seq.coindices, vec![1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn routes_cover_generation_copying_and_the_terminals() {
        let (tree, graph, vocab) = fixture();
        let seq = TargetSequence::build(&tree, Some(&graph), Mode::Cb, &vocab).unwrap();
        let r = seq.routes(&tree, &vocab);
        let (n, t) = (seq.len(), tree.len());
        let m = n + 1;
        // Syntactic rows copy exactly their own token.
        assert_eq!(r.src[0 * t + 1], 1.0);
        assert_eq!(r.src[0 * t..t].iter().sum::<f64>(), 1.0);
        assert_eq!(r.gen_valid[0], 0.0);
        // Separator row generates <sep>.
        assert_eq!(r.gen_cols[3], SEP);
        assert_eq!(r.gen_valid[3], 1.0);
        assert_eq!(r.src[3 * t..4 * t].iter().sum::<f64>(), 0.0);
        // Semantic "dogs" marginalizes over both matching tokens and the
        // vocabulary entry.
        assert_eq!(r.gen_valid[5], 1.0);
        assert_eq!(r.gen_cols[5], vocab.tokens.id("dogs"));
        assert_eq!(r.src[5 * t], 1.0);
        assert_eq!(r.src[5 * t + 2], 1.0);
        assert_eq!(r.src[5 * t + 1], 0.0);
        // Final row generates EOS.
        assert_eq!(r.gen_cols[n], EOS);
        assert_eq!(r.gen_valid[n], 1.0);
        assert!(r.tgt.iter().all(|&v| v == 0.0));
        assert_eq!(r.tgt.len(), m * m);
    }

    /// A graph with re-entrancy: both predicates share the argument.
    #[test]
    fn reentrant_copies_route_to_target_copy_only() {
        let tree = UDTree::new(
            &[("a", "X"), ("b", "X"), ("c", "X")],
            vec![0, 1, 1],
            vec!["root", "dep", "dep"],
        );
        let graph = UDSGraph {
            nodes: vec![
                SemanticNode { id: "x".into(), head_token: 1, attributes: Default::default() },
                SemanticNode { id: "y".into(), head_token: 2, attributes: Default::default() },
                SemanticNode { id: "z".into(), head_token: 3, attributes: Default::default() },
            ],
            edges: vec![
                SemanticEdge { src: "x".into(), dst: "y".into(), attributes: Default::default() },
                SemanticEdge { src: "x".into(), dst: "z".into(), attributes: Default::default() },
                SemanticEdge { src: "z".into(), dst: "y".into(), attributes: Default::default() },
            ],
            roots: vec!["x".into()],
        };
        let corpus = Corpus {
            entries: vec![CorpusEntry {
                id: "s".into(),
                tree: tree.clone(),
                graph: Some(graph.clone()),
            }],
        };
        let vocab = build_vocab(&corpus, 1);
        let seq = TargetSequence::build(&tree, Some(&graph), Mode::En, &vocab).unwrap();
        // Pre-order: a, b (first), c, b-copy (coindexed with position 2).
        assert_eq!(seq.tokens, vec!["a", "b", "c", "b"]);
        assert_eq!(seq.coindices, vec![1, 2, 3, 2]);
        let r = seq.routes(&tree, &vocab);
        let m = seq.len() + 1;
        assert_eq!(r.tgt[3 * m + 1], 1.0);
        assert_eq!(r.tgt.iter().sum::<f64>(), 1.0);
        assert_eq!(r.gen_valid[3], 0.0);
        assert_eq!(r.src[3 * tree.len()..4 * tree.len()].iter().sum::<f64>(), 0.0);
        // The copy's features still describe its node.
        let feats = seq.features(&vocab);
        assert_eq!(feats.len(), m);
        assert_eq!(feats[4].index, 4);
        assert_eq!(feats[4].head_index, 3);
        assert_eq!(feats[4].token_id, vocab.tokens.id("b"));
    }

    #[test]
    fn missing_graph_is_a_config_error() {
        let (tree, _, vocab) = fixture();
        assert!(TargetSequence::build(&tree, None, Mode::Base, &vocab).is_err());
    }
}
