//! Attachment scores and the tree-level analysis tables.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::UDTree;
use crate::io::{PPDirection, PPPair};

/// Fraction of tokens with the gold head, and with the gold head and label.
pub fn uas_las(pred: &UDTree, gold: &UDTree) -> Result<(f64, f64)> {
    let (u, l, t) = attachment_counts(pred, gold)?;
    Ok((u as f64 / t as f64, l as f64 / t as f64))
}

/// Micro-averaged over all tokens of aligned corpora.
pub fn corpus_uas_las(pred: &[UDTree], gold: &[UDTree]) -> Result<(f64, f64)> {
    if pred.len() != gold.len() {
        return Err(Error::Validation(format!(
            "{} predicted trees vs {} gold",
            pred.len(),
            gold.len()
        )));
    }
    let mut u = 0usize;
    let mut l = 0usize;
    let mut t = 0usize;
    for (p, g) in pred.iter().zip(gold) {
        let (cu, cl, ct) = attachment_counts(p, g)?;
        u += cu;
        l += cl;
        t += ct;
    }
    if t == 0 {
        return Err(Error::Validation("no tokens to score".into()));
    }
    Ok((u as f64 / t as f64, l as f64 / t as f64))
}

fn attachment_counts(pred: &UDTree, gold: &UDTree) -> Result<(usize, usize, usize)> {
    let t = gold.len();
    if pred.len() != t {
        return Err(Error::Validation(format!(
            "predicted tree has {} tokens, gold has {t}",
            pred.len()
        )));
    }
    let mut u = 0;
    let mut l = 0;
    for i in 0..t {
        if pred.heads[i] == gold.heads[i] {
            u += 1;
            if pred.deprels[i] == gold.deprels[i] {
                l += 1;
            }
        }
    }
    Ok((u, l, t))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelationDelta {
    pub relation: String,
    pub gold_count: usize,
    pub uas_a: f64,
    pub uas_b: f64,
    pub delta: f64,
}

/// UAS difference between two systems restricted to tokens bearing each of
/// the 10 most frequent gold relations.
pub fn per_relation_uas_delta(
    a: &[UDTree],
    b: &[UDTree],
    gold: &[UDTree],
) -> Result<Vec<RelationDelta>> {
    if a.len() != gold.len() || b.len() != gold.len() {
        return Err(Error::Validation(format!(
            "corpora misaligned: {} / {} vs {} gold",
            a.len(),
            b.len(),
            gold.len()
        )));
    }
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for g in gold {
        for d in &g.deprels {
            *freq.entry(d).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
    ranked.sort_by(|x, y| y.1.cmp(&x.1).then_with(|| x.0.cmp(y.0)));
    ranked.truncate(10);

    let mut out = Vec::new();
    for (rel, gold_count) in ranked {
        let mut correct_a = 0usize;
        let mut correct_b = 0usize;
        for i in 0..gold.len() {
            let g = &gold[i];
            if a[i].len() != g.len() || b[i].len() != g.len() {
                return Err(Error::Validation(format!(
                    "sentence {i}: token counts differ from gold"
                )));
            }
            for tok in 0..g.len() {
                if g.deprels[tok] != rel {
                    continue;
                }
                if a[i].heads[tok] == g.heads[tok] {
                    correct_a += 1;
                }
                if b[i].heads[tok] == g.heads[tok] {
                    correct_b += 1;
                }
            }
        }
        let uas_a = correct_a as f64 / gold_count as f64;
        let uas_b = correct_b as f64 / gold_count as f64;
        out.push(RelationDelta {
            relation: rel.to_string(),
            gold_count,
            uas_a,
            uas_b,
            delta: uas_a - uas_b,
        });
    }
    Ok(out)
}

pub fn relation_delta_tsv(rows: &[RelationDelta]) -> String {
    let mut out = String::from("relation\tgold_count\tuas_a\tuas_b\tdelta\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\n",
            r.relation, r.gold_count, r.uas_a, r.uas_b, r.delta
        ));
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PPOutcome {
    pub n_pairs: usize,
    pub original_uas: f64,
    pub original_las: f64,
    pub altered_uas: f64,
    pub altered_las: f64,
    pub drop_uas: f64,
    pub drop_las: f64,
}

/// Attachment scores on original vs altered sentences, split by flip
/// direction. Directions with no pairs are absent.
pub fn pp_attachment_eval(
    pred_original: &[UDTree],
    pred_altered: &[UDTree],
    pairs: &[PPPair],
) -> Result<BTreeMap<PPDirection, PPOutcome>> {
    if pred_original.len() != pairs.len() || pred_altered.len() != pairs.len() {
        return Err(Error::Validation(format!(
            "{} original and {} altered predictions for {} pairs",
            pred_original.len(),
            pred_altered.len(),
            pairs.len()
        )));
    }
    let mut out = BTreeMap::new();
    for dir in [PPDirection::NounToVerb, PPDirection::VerbToNoun] {
        let idx: Vec<usize> = (0..pairs.len())
            .filter(|&i| pairs[i].direction == dir)
            .collect();
        if idx.is_empty() {
            continue;
        }
        let po: Vec<UDTree> = idx.iter().map(|&i| pred_original[i].clone()).collect();
        let go: Vec<UDTree> = idx.iter().map(|&i| pairs[i].original.clone()).collect();
        let pa: Vec<UDTree> = idx.iter().map(|&i| pred_altered[i].clone()).collect();
        let ga: Vec<UDTree> = idx.iter().map(|&i| pairs[i].altered.clone()).collect();
        let (ou, ol) = corpus_uas_las(&po, &go)?;
        let (au, al) = corpus_uas_las(&pa, &ga)?;
        out.insert(
            dir,
            PPOutcome {
                n_pairs: idx.len(),
                original_uas: ou,
                original_las: ol,
                altered_uas: au,
                altered_las: al,
                drop_uas: ou - au,
                drop_las: ol - al,
            },
        );
    }
    Ok(out)
}

pub fn pp_outcome_tsv(outcomes: &BTreeMap<PPDirection, PPOutcome>) -> String {
    let mut out = String::from(
        "direction\tn_pairs\toriginal_uas\toriginal_las\taltered_uas\taltered_las\tdrop_uas\tdrop_las\n",
    );
    for (dir, o) in outcomes {
        out.push_str(&format!(
            "{:?}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
            dir, o.n_pairs, o.original_uas, o.original_las, o.altered_uas, o.altered_las,
            o.drop_uas, o.drop_las
        ));
    }
    out
}
