//! Evaluation: attachment scores, semantic triple overlap, attribute
//! correlation and classification, and the analysis tables built on them.

mod analysis;
mod correlation;
mod sscore;

pub use analysis::{
    corpus_uas_las, per_relation_uas_delta, pp_attachment_eval, pp_outcome_tsv,
    relation_delta_tsv, uas_las, PPOutcome, RelationDelta,
};
pub use correlation::{
    heatmap_tsv, pearson_rho, percentile_rho, percentile_table_tsv, relation_attribute_rho,
    tune_threshold_f1, Heatmap, HeatmapCell, PercentileBin, PercentileTable, PositionedNode,
    RelationAttrSample, ThresholdOutcome,
};
pub use sscore::{
    exhaustive_matched, s_score, s_score_corpus, s_score_counts, s_score_graphs, SScore,
    TripleGraph,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Per-attribute evaluation: correlation over nodes where the attribute
/// applies in gold, and binary F1 of applicability at a tuned threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributeEval {
    pub n: usize,
    pub rho: Option<f64>,
    pub p: Option<f64>,
    pub theta: f64,
    pub dev_f1: f64,
    pub test_f1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_sentences: usize,
    pub uas: f64,
    pub las: f64,
    pub s_syntactic: Option<SScore>,
    pub s_semantic: Option<SScore>,
    #[serde(default)]
    pub node_attributes: BTreeMap<String, AttributeEval>,
    #[serde(default)]
    pub edge_attributes: BTreeMap<String, AttributeEval>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> crate::error::Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("metric\tvalue\n");
        out.push_str(&format!("n_sentences\t{}\n", self.n_sentences));
        out.push_str(&format!("uas\t{:.6}\n", self.uas));
        out.push_str(&format!("las\t{:.6}\n", self.las));
        if let Some(s) = &self.s_syntactic {
            out.push_str(&format!("s_syntactic_precision\t{:.6}\n", s.precision));
            out.push_str(&format!("s_syntactic_recall\t{:.6}\n", s.recall));
            out.push_str(&format!("s_syntactic_f1\t{:.6}\n", s.f1));
        }
        if let Some(s) = &self.s_semantic {
            out.push_str(&format!("s_semantic_precision\t{:.6}\n", s.precision));
            out.push_str(&format!("s_semantic_recall\t{:.6}\n", s.recall));
            out.push_str(&format!("s_semantic_f1\t{:.6}\n", s.f1));
        }
        for (kind, table) in [
            ("node", &self.node_attributes),
            ("edge", &self.edge_attributes),
        ] {
            for (name, e) in table {
                let rho = e
                    .rho
                    .map(|r| format!("{r:.6}"))
                    .unwrap_or_else(|| "-".into());
                let p = e.p.map(|p| format!("{p:.6}")).unwrap_or_else(|| "-".into());
                out.push_str(&format!(
                    "{kind}_attr\t{name}\tn={}\trho={rho}\tp={p}\ttheta={:.6}\tdev_f1={:.6}\ttest_f1={:.6}\n",
                    e.n, e.theta, e.dev_f1, e.test_f1
                ));
            }
        }
        out
    }
}
