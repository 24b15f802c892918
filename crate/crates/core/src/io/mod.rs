//! Corpus, treebank, and vocabulary serialization.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{UDSGraph, UDTree};

pub mod conllu;
pub mod pp;
pub mod uds_jsonl;
pub mod vocab;

pub use conllu::{format_conllu, parse_conllu, read_conllu, write_conllu};
pub use pp::{parse_pp_pairs, read_pp_pairs, PPDirection, PPPair};
pub use uds_jsonl::{format_uds_jsonl, parse_uds_jsonl, read_uds_jsonl, write_uds_jsonl};
pub use vocab::{build_vocab, SymbolTable, Vocabulary, BOS, EOS, PAD, ROOT, SEP, UNK};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    pub tree: UDTree,
    /// Absent for sentences carrying only syntactic annotation.
    pub graph: Option<UDSGraph>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub entries: Vec<CorpusEntry>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries carrying a semantic graph.
    pub fn semantic_entries(&self) -> impl Iterator<Item = &CorpusEntry> {
        self.entries.iter().filter(|e| e.graph.is_some())
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Validation(format!("duplicate sentence id {:?}", e.id)));
            }
            e.tree.validate()?;
            if let Some(g) = &e.graph {
                g.validate(Some(e.tree.len()))?;
            }
        }
        Ok(())
    }
}

/// Write through a sibling temp file and rename, so readers never observe a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".to_string(),
    });
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Hex SHA-256 of a file's bytes, for input manifests.
pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(sha256_hex(&bytes))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
