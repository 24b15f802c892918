//! Symbol tables for tokens, relations, edge labels, and POS tags.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::graph::{ROOT_EDGE_LABEL, SEMANTIC_EDGE_LABEL};

use super::Corpus;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const SEP: usize = 4;
pub const ROOT: usize = 5;

pub const SPECIALS: [&str; 6] = ["<pad>", "<unk>", "<bos>", "<eos>", "<sep>", "<root>"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolTable {
    by_name: BTreeMap<String, usize>,
    by_id: Vec<String>,
}

impl SymbolTable {
    /// Ids 0..6 are the specials; data symbols follow ordered by frequency
    /// descending, name ascending. Symbols below `min_count` fall to UNK.
    fn from_counts(counts: &BTreeMap<String, usize>, min_count: usize) -> SymbolTable {
        let mut by_id: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut ranked: Vec<(&String, &usize)> = counts
            .iter()
            .filter(|(name, &c)| c >= min_count && !SPECIALS.contains(&name.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
        by_id.extend(ranked.into_iter().map(|(name, _)| name.clone()));
        let by_name = by_id
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        SymbolTable { by_name, by_id }
    }

    pub fn id(&self, name: &str) -> usize {
        self.by_name.get(name).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.by_name.contains_key(name)
    }

    pub fn name(&self, id: usize) -> &str {
        &self.by_id[id]
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    /// Data symbols in id order (specials excluded).
    pub fn data_symbols(&self) -> impl Iterator<Item = &str> {
        self.by_id.iter().skip(SPECIALS.len()).map(|s| s.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    /// Token forms; doubles as the decoder generation vocabulary.
    pub tokens: SymbolTable,
    /// Syntactic relation labels.
    pub relations: SymbolTable,
    /// Labels on arborescence edges: "root", "arg", and relation labels.
    pub edge_labels: SymbolTable,
    pub upos: SymbolTable,
    /// Sorted node/edge attribute inventories seen in the corpus.
    pub node_attrs: Vec<String>,
    pub edge_attrs: Vec<String>,
}

pub fn build_vocab(corpus: &Corpus, min_count: usize) -> Vocabulary {
    let mut tok = BTreeMap::new();
    let mut rel = BTreeMap::new();
    let mut edge = BTreeMap::new();
    let mut upos = BTreeMap::new();
    let mut node_attrs = BTreeMap::new();
    let mut edge_attrs = BTreeMap::new();
    let bump = |m: &mut BTreeMap<String, usize>, k: &str| {
        *m.entry(k.to_string()).or_insert(0) += 1;
    };
    for entry in &corpus.entries {
        for t in &entry.tree.tokens {
            bump(&mut tok, &t.form);
            bump(&mut upos, &t.upos);
        }
        for d in &entry.tree.deprels {
            bump(&mut rel, d);
            bump(&mut edge, d);
        }
        if let Some(g) = &entry.graph {
            bump(&mut edge, ROOT_EDGE_LABEL);
            for e in &g.edges {
                bump(&mut edge, SEMANTIC_EDGE_LABEL);
                for name in e.attributes.keys() {
                    bump(&mut edge_attrs, name);
                }
            }
            for n in &g.nodes {
                for name in n.attributes.keys() {
                    bump(&mut node_attrs, name);
                }
            }
        }
    }
    Vocabulary {
        tokens: SymbolTable::from_counts(&tok, min_count),
        relations: SymbolTable::from_counts(&rel, 1),
        edge_labels: SymbolTable::from_counts(&edge, 1),
        upos: SymbolTable::from_counts(&upos, 1),
        node_attrs: node_attrs.into_keys().collect(),
        edge_attrs: edge_attrs.into_keys().collect(),
    }
}

impl Vocabulary {
    /// Content hash binding checkpoints to the vocabulary they were
    /// trained with.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (tag, table) in [
            ("tokens", &self.tokens),
            ("relations", &self.relations),
            ("edge_labels", &self.edge_labels),
            ("upos", &self.upos),
        ] {
            for (i, name) in table.by_id.iter().enumerate() {
                h.update(format!("{tag}\t{i}\t{name}\n"));
            }
        }
        for name in self.node_attrs.iter().chain(&self.edge_attrs) {
            h.update(format!("attr\t{name}\n"));
        }
        let out = h.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}
