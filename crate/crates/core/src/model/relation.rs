//! Relation scoring between generated nodes: each node attaches to one
//! earlier node (or the virtual root) with a labeled edge.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::rng::RngPool;
use crate::tensor::{Tensor, MASK_NEG};

use super::biaffine::{BiaffineScorer, BiaffineScores};
use super::config::ModelConfig;

/// Scores for all nodes of one sequence. Node i+1 is dependent row i; head
/// candidate column 0 is the root, column j is node j.
#[derive(Debug, Clone)]
pub struct RelationScores {
    pub scores: BiaffineScores,
    /// (n, n+1) with future candidates masked out.
    pub head_scores: Tensor,
}

#[derive(Debug, Clone)]
pub struct SemanticRelation {
    pub scorer: BiaffineScorer,
}

impl SemanticRelation {
    pub fn new(cfg: &ModelConfig, n_labels: usize, pool: &RngPool) -> SemanticRelation {
        SemanticRelation {
            scorer: BiaffineScorer::new(
                cfg.d_s,
                cfg.d_h,
                cfg.d_t,
                n_labels,
                pool,
                "semantic_relation",
            ),
        }
    }

    /// Mask letting node i+1 (row i) attach to root or any node <= i.
    fn candidate_mask(n: usize) -> Tensor {
        let w = n + 1;
        let mut data = vec![0.0; n * w];
        for i in 0..n {
            for j in i + 1..w {
                data[i * w + j] = MASK_NEG;
            }
        }
        Tensor::constant(n, w, data)
    }

    /// `z` is the decoder output over m = n+1 steps; the last row predicts
    /// only EOS and takes part neither as dependent nor as candidate.
    pub fn forward(&self, z: &Tensor) -> Result<RelationScores> {
        let n = z.rows() - 1;
        let d = z.cols();
        let nodes = z.slice(0, n, 0, d)?;
        let scores = self.scorer.score(&nodes, &nodes)?;
        let head_scores = scores.head_scores.add(&Self::candidate_mask(n))?;
        Ok(RelationScores { scores, head_scores })
    }

    /// Label logits for each node paired with its (gold or predicted) head
    /// candidate index.
    pub fn label_logits_at(&self, s: &RelationScores, heads: &[usize]) -> Result<Tensor> {
        self.scorer.label_logits_at(&s.scores, heads)
    }

    /// Scores one freshly decoded row against the root and every earlier
    /// row. `prior` is None on the first step; the score row then has the
    /// root as its only column. Matches the corresponding `forward` row bit
    /// for bit, so incremental decoding and the batched pass agree.
    pub fn step(&self, z_row: &Tensor, prior: Option<&Tensor>) -> Result<BiaffineScores> {
        self.scorer.score_against(z_row, prior)
    }

    /// Label logits for a single decoded row at its chosen head.
    pub fn step_label_logits(&self, s: &BiaffineScores, head: usize) -> Result<Tensor> {
        self.scorer.label_logits_at(s, &[head])
    }

    pub fn params(&self, out: &mut BTreeMap<String, Tensor>) {
        self.scorer.params("semantic_relation", out);
    }
}
