//! JSON-lines corpus of sentences with optional semantic graphs.
//!
//! One object per line:
//! {"id", "tokens":[{"form","upos"}...], "ud":{"heads","deprels"},
//!  "nodes":[{"id","head_token","attributes":{name:{"value","applies"}}}],
//!  "edges":[{"src","dst","attributes":{...}}], "roots":[...]}
//! The nodes/edges/roots fields are absent for UD-only sentences.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AttrMap, AttributeValue, SemanticEdge, SemanticNode, Token, UDSGraph, UDTree};

use super::{Corpus, CorpusEntry};

#[derive(Debug, Serialize, Deserialize)]
struct LineJson {
    id: String,
    tokens: Vec<TokenJson>,
    ud: UdJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nodes: Option<Vec<NodeJson>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edges: Option<Vec<EdgeJson>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    roots: Option<Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TokenJson {
    form: String,
    upos: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct UdJson {
    heads: Vec<usize>,
    deprels: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeJson {
    id: String,
    head_token: usize,
    #[serde(default)]
    attributes: AttrMap,
}

#[derive(Debug, Serialize, Deserialize)]
struct EdgeJson {
    src: String,
    dst: String,
    #[serde(default)]
    attributes: AttrMap,
}

/// Clamp every attribute to the annotation scale, warning once per entry.
fn clamp_attrs(attrs: &mut AttrMap, what: &str, id: &str) {
    for (name, av) in attrs.iter_mut() {
        let (clamped, changed) = AttributeValue::clamped(av.value, av.applies);
        if changed {
            log::warn!(
                "{what} {id}: attribute {name} value {} clamped to {}",
                av.value,
                clamped.value
            );
        }
        *av = clamped;
    }
}

pub fn read_uds_jsonl(path: impl AsRef<Path>) -> Result<Corpus> {
    parse_uds_jsonl(&fs::read_to_string(path)?)
}

pub fn parse_uds_jsonl(text: &str) -> Result<Corpus> {
    let mut entries = Vec::new();
    let mut seen_ids = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let de = &mut serde_json::Deserializer::from_str(raw);
        let line: LineJson = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
            line: lineno,
            path: e.path().to_string(),
            msg: e.inner().to_string(),
        })?;
        let entry = line_to_entry(line).map_err(|e| match e {
            Error::Schema { path, msg, .. } => Error::Schema {
                line: lineno,
                path,
                msg,
            },
            other => Error::Schema {
                line: lineno,
                path: ".".to_string(),
                msg: other.to_string(),
            },
        })?;
        if !seen_ids.insert(entry.id.clone()) {
            return Err(Error::Schema {
                line: lineno,
                path: "id".to_string(),
                msg: format!("duplicate sentence id {:?}", entry.id),
            });
        }
        entries.push(entry);
    }
    Ok(Corpus { entries })
}

fn line_to_entry(line: LineJson) -> Result<CorpusEntry> {
    let tokens: Vec<Token> = line
        .tokens
        .into_iter()
        .enumerate()
        .map(|(i, t)| Token {
            index: i + 1,
            form: t.form,
            upos: t.upos,
        })
        .collect();
    let n = tokens.len();
    let tree = UDTree {
        tokens,
        heads: line.ud.heads,
        deprels: line.ud.deprels,
        comments: Vec::new(),
        extras: Vec::new(),
    };
    tree.validate()?;
    let graph = match line.nodes {
        None => None,
        Some(nodes) => {
            let id = line.id.clone();
            let nodes = nodes
                .into_iter()
                .map(|mut nj| {
                    clamp_attrs(&mut nj.attributes, "node", &id);
                    SemanticNode {
                        id: nj.id,
                        head_token: nj.head_token,
                        attributes: nj.attributes,
                    }
                })
                .collect();
            let edges = line
                .edges
                .unwrap_or_default()
                .into_iter()
                .map(|mut ej| {
                    clamp_attrs(&mut ej.attributes, "edge", &id);
                    SemanticEdge {
                        src: ej.src,
                        dst: ej.dst,
                        attributes: ej.attributes,
                    }
                })
                .collect();
            let graph = UDSGraph {
                nodes,
                edges,
                roots: line.roots.unwrap_or_default(),
            };
            graph.validate(Some(n))?;
            Some(graph)
        }
    };
    Ok(CorpusEntry {
        id: line.id,
        tree,
        graph,
    })
}

fn entry_to_line(entry: &CorpusEntry) -> LineJson {
    LineJson {
        id: entry.id.clone(),
        tokens: entry
            .tree
            .tokens
            .iter()
            .map(|t| TokenJson {
                form: t.form.clone(),
                upos: t.upos.clone(),
            })
            .collect(),
        ud: UdJson {
            heads: entry.tree.heads.clone(),
            deprels: entry.tree.deprels.clone(),
        },
        nodes: entry.graph.as_ref().map(|g| {
            g.nodes
                .iter()
                .map(|n| NodeJson {
                    id: n.id.clone(),
                    head_token: n.head_token,
                    attributes: n.attributes.clone(),
                })
                .collect()
        }),
        edges: entry.graph.as_ref().map(|g| {
            g.edges
                .iter()
                .map(|e| EdgeJson {
                    src: e.src.clone(),
                    dst: e.dst.clone(),
                    attributes: e.attributes.clone(),
                })
                .collect()
        }),
        roots: entry.graph.as_ref().map(|g| g.roots.clone()),
    }
}

pub fn format_uds_jsonl(entries: &[CorpusEntry]) -> Result<String> {
    let mut out = String::new();
    for entry in entries {
        out.push_str(&serde_json::to_string(&entry_to_line(entry))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_uds_jsonl(path: impl AsRef<Path>, entries: &[CorpusEntry]) -> Result<()> {
    super::write_atomic(path.as_ref(), format_uds_jsonl(entries)?.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE: &str = r#"{"id":"s1","tokens":[{"form":"rains","upos":"VERB"}],"ud":{"heads":[0],"deprels":["root"]},"nodes":[{"id":"n1","head_token":1,"attributes":{"factuality":{"value":2.2}}}],"edges":[],"roots":["n1"]}"#;

    #[test]
    fn one_node_line_parses_with_default_mask() {
        let corpus = parse_uds_jsonl(ONE).unwrap();
        assert_eq!(corpus.entries.len(), 1);
        let g = corpus.entries[0].graph.as_ref().unwrap();
        let av = &g.nodes[0].attributes["factuality"];
        assert_eq!(av.value, 2.2);
        assert!(av.applies);
    }

    #[test]
    fn out_of_scale_value_is_clamped() {
        let line = ONE.replace("2.2", "4.0");
        let corpus = parse_uds_jsonl(&line).unwrap();
        let g = corpus.entries[0].graph.as_ref().unwrap();
        assert_eq!(g.nodes[0].attributes["factuality"].value, 3.0);
    }

    #[test]
    fn schema_violation_reports_line_and_path() {
        let bad = r#"{"id":"s1","tokens":[{"form":"x","upos":"X"}],"ud":{"heads":"oops","deprels":[]}}"#;
        match parse_uds_jsonl(&format!("\n{bad}")) {
            Err(Error::Schema { line: 2, path, .. }) => assert!(path.contains("heads")),
            other => panic!("expected schema error with position, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let two = format!("{ONE}\n{ONE}");
        assert!(matches!(
            parse_uds_jsonl(&two),
            Err(Error::Schema { line: 2, .. })
        ));
    }

    #[test]
    fn ud_only_line_has_no_graph() {
        let line = r#"{"id":"s2","tokens":[{"form":"hi","upos":"INTJ"}],"ud":{"heads":[0],"deprels":["root"]}}"#;
        let corpus = parse_uds_jsonl(line).unwrap();
        assert!(corpus.entries[0].graph.is_none());
    }

    #[test]
    fn round_trip_is_byte_stable() {
        let ud_only = r#"{"id":"s2","tokens":[{"form":"hi","upos":"INTJ"}],"ud":{"heads":[0],"deprels":["root"]}}"#;
        let corpus = parse_uds_jsonl(&format!("{ONE}\n{ud_only}")).unwrap();
        let text = format_uds_jsonl(&corpus.entries).unwrap();
        let again = parse_uds_jsonl(&text).unwrap();
        assert_eq!(text, format_uds_jsonl(&again.entries).unwrap());
        assert_eq!(corpus.entries.len(), again.entries.len());
    }

    #[test]
    fn dangling_instance_link_positioned() {
        let bad = ONE.replace("\"head_token\":1", "\"head_token\":9");
        match parse_uds_jsonl(bad.as_str()) {
            Err(Error::Schema { line: 1, .. }) => {}
            other => panic!("expected schema error, got {other:?}"),
        }
    }
}
