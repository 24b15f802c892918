//! Checkpoint save/load and cross-model parameter transfer.

use std::path::Path;

use serde_json::json;

use crate::error::{Error, Result};
use crate::io::Vocabulary;
use crate::tensor::{read_container, ContainerEntry};

use super::Model;

const FORMAT: &str = "model-checkpoint";

pub fn save(model: &Model, path: &Path) -> Result<()> {
    let meta = json!({
        "format": FORMAT,
        "version": 1,
        "config": model.config,
        "vocab": model.vocab,
        "fingerprint": model.vocab.fingerprint(),
    });
    crate::tensor::write_container(path, &meta, &model.params())
}

pub fn load(path: &Path) -> Result<Model> {
    let (meta, entries) = read_container(path)?;
    if meta.get("format").and_then(|v| v.as_str()) != Some(FORMAT) {
        return Err(Error::Checkpoint(format!(
            "{}: not a model checkpoint",
            path.display()
        )));
    }
    let config = serde_json::from_value(
        meta.get("config")
            .cloned()
            .ok_or_else(|| Error::Checkpoint("checkpoint lacks a config".into()))?,
    )?;
    let vocab: Vocabulary = serde_json::from_value(
        meta.get("vocab")
            .cloned()
            .ok_or_else(|| Error::Checkpoint("checkpoint lacks a vocabulary".into()))?,
    )?;
    let model = Model::new(config, vocab, 0)?;
    let params = model.params();
    for (name, t) in &params {
        let entry = entries.get(name).ok_or_else(|| {
            Error::Checkpoint(format!("checkpoint is missing parameter {name}"))
        })?;
        if entry.shape != t.shape() {
            return Err(Error::ParamShape {
                name: name.clone(),
                expected: t.shape(),
                found: entry.shape,
            });
        }
        t.set_value(&entry.data);
    }
    if let Some(extra) = entries.keys().find(|k| !params.contains_key(*k)) {
        return Err(Error::Checkpoint(format!(
            "checkpoint carries unknown parameter {extra}"
        )));
    }
    Ok(model)
}

/// Parameter name prefixes making up one transferable component. A prefix
/// ending in '.' matches a subtree; anything else must match exactly.
pub fn component_prefixes(component: &str) -> Result<&'static [&'static str]> {
    match component {
        "encoder" => Ok(&["encoder.", "embeddings.token", "embeddings.upos"]),
        "syntactic_biaffine" => Ok(&["syntactic_biaffine."]),
        "embeddings" => Ok(&["embeddings."]),
        other => Err(Error::Config(format!(
            "unknown transfer component {other:?} (expected encoder, syntactic_biaffine, or embeddings)"
        ))),
    }
}

fn matches(name: &str, prefixes: &[&str]) -> bool {
    prefixes
        .iter()
        .any(|p| if p.ends_with('.') { name.starts_with(p) } else { name == *p })
}

/// Initialize the named components of `model` from a donor checkpoint. With
/// matching vocabularies every covered tensor copies verbatim; otherwise
/// symbol-keyed tables remap row by row through the donor vocabulary and
/// anything shape-incompatible keeps its fresh initialization (warned).
pub fn transfer(model: &Model, donor: &Path, components: &[String]) -> Result<Vec<String>> {
    let (meta, entries) = read_container(donor)?;
    if meta.get("format").and_then(|v| v.as_str()) != Some(FORMAT) {
        return Err(Error::Checkpoint(format!(
            "{}: not a model checkpoint",
            donor.display()
        )));
    }
    let donor_vocab: Vocabulary = serde_json::from_value(
        meta.get("vocab")
            .cloned()
            .ok_or_else(|| Error::Checkpoint("donor checkpoint lacks a vocabulary".into()))?,
    )?;
    let same_vocab = donor_vocab.fingerprint() == model.vocab.fingerprint();

    let mut prefixes: Vec<&'static str> = Vec::new();
    for c in components {
        prefixes.extend(component_prefixes(c)?);
    }

    let mut warnings = Vec::new();
    if !same_vocab {
        warnings.push(
            "donor and recipient vocabularies differ; remapping symbol tables by name".to_string(),
        );
    }
    for (name, t) in model.params() {
        if !matches(&name, &prefixes) {
            continue;
        }
        let entry = match entries.get(&name) {
            Some(e) => e,
            None => {
                warnings.push(format!("donor lacks {name}; kept fresh initialization"));
                continue;
            }
        };
        if same_vocab {
            if entry.shape != t.shape() {
                return Err(Error::ParamShape {
                    name,
                    expected: t.shape(),
                    found: entry.shape,
                });
            }
            t.set_value(&entry.data);
            continue;
        }
        let remapped = match name.as_str() {
            "embeddings.token" => {
                remap_rows(entry, &t.shape(), &model.vocab.tokens, &donor_vocab.tokens)
            }
            "embeddings.upos" => {
                remap_rows(entry, &t.shape(), &model.vocab.upos, &donor_vocab.upos)
            }
            "embeddings.edge_label" => remap_rows(
                entry,
                &t.shape(),
                &model.vocab.edge_labels,
                &donor_vocab.edge_labels,
            ),
            _ => None,
        };
        match remapped {
            Some(mut rows) => {
                let fresh = t.to_vec();
                let cols = t.cols();
                for (r, donor_row) in rows.iter_mut().enumerate() {
                    if donor_row.is_none() {
                        *donor_row = Some(fresh[r * cols..(r + 1) * cols].to_vec());
                    }
                }
                let flat: Vec<f64> = rows.into_iter().flatten().flatten().collect();
                t.set_value(&flat);
            }
            None => {
                if entry.shape == t.shape() {
                    t.set_value(&entry.data);
                } else {
                    warnings.push(format!(
                        "{name}: donor shape {:?} does not fit {:?}; kept fresh initialization",
                        entry.shape,
                        t.shape()
                    ));
                }
            }
        }
    }
    Ok(warnings)
}

/// Donor rows keyed by symbol name; None where the donor has no row.
fn remap_rows(
    entry: &ContainerEntry,
    shape: &(usize, usize),
    ours: &crate::io::SymbolTable,
    theirs: &crate::io::SymbolTable,
) -> Option<Vec<Option<Vec<f64>>>> {
    let (rows, cols) = *shape;
    if entry.shape.1 != cols || entry.shape.0 != theirs.len() || rows != ours.len() {
        return None;
    }
    let mut out = Vec::with_capacity(rows);
    for r in 0..rows {
        let sym = ours.name(r);
        if theirs.contains(sym) {
            let dr = theirs.id(sym);
            out.push(Some(entry.data[dr * cols..(dr + 1) * cols].to_vec()));
        } else {
            out.push(None);
        }
    }
    Some(out)
}
