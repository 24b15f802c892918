//! CoNLL-U treebank reading and writing.
//!
//! Ten tab-separated columns per token line, blank line between sentences.
//! Multiword-token ranges ("1-2") and empty nodes ("1.1") are skipped on
//! read; comment lines ride along on the tree so writes reproduce them.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{ConlluExtra, Token, UDTree};

pub fn read_conllu(path: impl AsRef<Path>) -> Result<Vec<UDTree>> {
    parse_conllu(&fs::read_to_string(path)?)
}

pub fn parse_conllu(text: &str) -> Result<Vec<UDTree>> {
    let mut trees = Vec::new();
    let mut block = BlockBuilder::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            block.finish(&mut trees)?;
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            block.comments.push(comment.trim().to_string());
            continue;
        }
        block.push_token_line(line, lineno)?;
    }
    block.finish(&mut trees)?;
    Ok(trees)
}

struct BlockBuilder {
    comments: Vec<String>,
    tokens: Vec<Token>,
    heads: Vec<usize>,
    deprels: Vec<String>,
    extras: Vec<ConlluExtra>,
    start_line: usize,
}

impl BlockBuilder {
    fn new() -> BlockBuilder {
        BlockBuilder {
            comments: Vec::new(),
            tokens: Vec::new(),
            heads: Vec::new(),
            deprels: Vec::new(),
            extras: Vec::new(),
            start_line: 0,
        }
    }

    fn push_token_line(&mut self, line: &str, lineno: usize) -> Result<()> {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 10 columns, found {}", cols.len()),
            });
        }
        // Ranges cover multiword tokens, dots cover empty nodes; the tree
        // itself is defined over the plain integer ids.
        if cols[0].contains('-') || cols[0].contains('.') {
            return Ok(());
        }
        let index: usize = cols[0].parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("bad token id {:?}", cols[0]),
        })?;
        let head: usize = cols[6].parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("bad head {:?}", cols[6]),
        })?;
        if self.tokens.is_empty() {
            self.start_line = lineno;
        }
        self.tokens.push(Token {
            index,
            form: cols[1].to_string(),
            upos: cols[3].to_string(),
        });
        self.heads.push(head);
        self.deprels.push(cols[7].to_string());
        self.extras.push(ConlluExtra {
            lemma: cols[2].to_string(),
            xpos: cols[4].to_string(),
            feats: cols[5].to_string(),
            deps: cols[8].to_string(),
            misc: cols[9].to_string(),
        });
        Ok(())
    }

    fn finish(&mut self, trees: &mut Vec<UDTree>) -> Result<()> {
        if self.tokens.is_empty() {
            self.comments.clear();
            return Ok(());
        }
        let built = BlockBuilder::new();
        let done = std::mem::replace(self, built);
        let tree = UDTree {
            tokens: done.tokens,
            heads: done.heads,
            deprels: done.deprels,
            comments: done.comments,
            extras: done.extras,
        };
        tree.validate().map_err(|e| Error::Parse {
            line: done.start_line,
            msg: format!("invalid sentence: {e}"),
        })?;
        trees.push(tree);
        Ok(())
    }
}

pub fn format_conllu(trees: &[UDTree]) -> String {
    let mut out = String::new();
    for tree in trees {
        for c in &tree.comments {
            let _ = writeln!(out, "# {c}");
        }
        for (i, tok) in tree.tokens.iter().enumerate() {
            let extra = tree.extras.get(i).cloned().unwrap_or_default();
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                tok.index,
                tok.form,
                extra.lemma,
                tok.upos,
                extra.xpos,
                extra.feats,
                tree.heads[i],
                tree.deprels[i],
                extra.deps,
                extra.misc
            );
        }
        out.push('\n');
    }
    out
}

pub fn write_conllu(path: impl AsRef<Path>, trees: &[UDTree]) -> Result<()> {
    super::write_atomic(path.as_ref(), format_conllu(trees).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "# sent_id = s1\n# text = Hi !\n1\tHi\thi\tINTJ\tUH\t_\t0\troot\t_\t_\n2\t!\t!\tPUNCT\t.\t_\t1\tpunct\t_\t_\n\n";

    #[test]
    fn parses_two_token_block() {
        let trees = parse_conllu(SAMPLE).unwrap();
        assert_eq!(trees.len(), 1);
        assert_eq!(trees[0].heads, vec![0, 1]);
        assert_eq!(trees[0].tokens[0].form, "Hi");
        assert_eq!(trees[0].comments.len(), 2);
    }

    #[test]
    fn skips_multiword_and_empty_nodes() {
        let text = "1-2\tdel\t_\t_\t_\t_\t_\t_\t_\t_\n1\tde\tde\tADP\t_\t_\t2\tcase\t_\t_\n2\tel\tel\tDET\t_\t_\t0\troot\t_\t_\n2.1\tghost\t_\t_\t_\t_\t_\t_\t_\t_\n\n";
        let trees = parse_conllu(text).unwrap();
        assert_eq!(trees.len(), 1);
        assert_eq!(trees[0].len(), 2);
    }

    #[test]
    fn bad_head_reports_line() {
        let text = "1\tHi\t_\tINTJ\t_\t_\tx\troot\t_\t_\n\n";
        match parse_conllu(text) {
            Err(Error::Parse { line: 1, msg }) => assert!(msg.contains("head")),
            other => panic!("expected parse error at line 1, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_head_is_rejected() {
        let text = "1\ta\t_\tX\t_\t_\t0\troot\t_\t_\n2\tb\t_\tY\t_\t_\t3\tdep\t_\t_\n\n";
        assert!(parse_conllu(text).is_err());
    }

    #[test]
    fn round_trip_preserves_all_columns() {
        let text = "# doc 7\n1\tShe\tshe\tPRON\tPRP\tCase=Nom\t2\tnsubj\t2:nsubj\tSpaceAfter=No\n2\tran\trun\tVERB\tVBD\tTense=Past\t0\troot\t0:root\t_\n\n";
        let trees = parse_conllu(text).unwrap();
        assert_eq!(format_conllu(&trees), text);
    }

    #[test]
    fn empty_corpus_writes_empty_file() {
        assert_eq!(format_conllu(&[]), "");
    }

    #[test]
    fn single_token_writes_one_line_block() {
        let tree = UDTree::new(&[("Go", "VERB")], vec![0], vec!["root"]);
        let text = format_conllu(&[tree]);
        assert_eq!(text, "1\tGo\t_\tVERB\t_\t_\t0\troot\t_\t_\n\n");
        let back = parse_conllu(&text).unwrap();
        assert_eq!(back.len(), 1);
    }

    #[test]
    fn novel_relation_written_verbatim() {
        let tree = UDTree::new(&[("x", "X")], vec![0], vec!["root:custom"]);
        assert!(format_conllu(&[tree]).contains("\troot:custom\t"));
    }
}
