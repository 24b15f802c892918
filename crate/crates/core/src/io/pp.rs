//! Prepositional-phrase attachment pairs: a sentence whose PP attaches one
//! way, plus a minimally reworded variant flipping the attachment.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::UDTree;

use super::conllu::parse_conllu;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PPDirection {
    #[serde(rename = "NOUN_TO_VERB")]
    NounToVerb,
    #[serde(rename = "VERB_TO_NOUN")]
    VerbToNoun,
}

#[derive(Debug, Clone)]
pub struct PPPair {
    pub original: UDTree,
    pub altered: UDTree,
    pub direction: PPDirection,
    /// Index of the preposition whose attachment flips, valid in both trees.
    pub pp_token: usize,
}

#[derive(Deserialize)]
struct PairJson {
    direction: PPDirection,
    pp_token: usize,
    /// Embedded CoNLL-U block, one sentence.
    original: String,
    altered: String,
}

pub fn read_pp_pairs(path: impl AsRef<Path>) -> Result<Vec<PPPair>> {
    parse_pp_pairs(&fs::read_to_string(path)?)
}

pub fn parse_pp_pairs(text: &str) -> Result<Vec<PPPair>> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let de = &mut serde_json::Deserializer::from_str(raw);
        let pj: PairJson = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
            line: lineno,
            path: e.path().to_string(),
            msg: e.inner().to_string(),
        })?;
        let one_tree = |field: &str, block: &str| -> Result<UDTree> {
            let mut trees = parse_conllu(block).map_err(|e| Error::Schema {
                line: lineno,
                path: field.to_string(),
                msg: e.to_string(),
            })?;
            if trees.len() != 1 {
                return Err(Error::Schema {
                    line: lineno,
                    path: field.to_string(),
                    msg: format!("expected 1 sentence, found {}", trees.len()),
                });
            }
            Ok(trees.pop().unwrap())
        };
        let original = one_tree("original", &pj.original)?;
        let altered = one_tree("altered", &pj.altered)?;
        if pj.pp_token == 0 || pj.pp_token > original.len() || pj.pp_token > altered.len() {
            return Err(Error::Schema {
                line: lineno,
                path: "pp_token".to_string(),
                msg: format!("token {} out of range", pj.pp_token),
            });
        }
        pairs.push(PPPair {
            original,
            altered,
            direction: pj.direction,
            pp_token: pj.pp_token,
        });
    }
    Ok(pairs)
}
