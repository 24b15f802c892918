//! Learned embedding tables shared across the network.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::io::Vocabulary;
use crate::rng::RngPool;
use crate::tensor::{xavier_uniform, Tensor};

use super::layers::{collect, MAX_POSITIONS};

/// One token table serves both the source side and decoder node labels, so
/// copied nodes share representations with the tokens they copy.
#[derive(Debug, Clone)]
pub struct Embeddings {
    pub token: Tensor,
    pub upos: Tensor,
    pub index: Tensor,
    pub edge_label: Tensor,
}

impl Embeddings {
    pub fn new(vocab: &Vocabulary, d: usize, pool: &RngPool) -> Embeddings {
        let table = |name: &str, rows: usize| {
            xavier_uniform(rows, d, &mut pool.stream(&format!("init.embeddings.{name}")))
        };
        Embeddings {
            token: table("token", vocab.tokens.len()),
            upos: table("upos", vocab.upos.len()),
            index: table("index", MAX_POSITIONS),
            edge_label: table("edge_label", vocab.edge_labels.len()),
        }
    }

    pub fn tokens(&self, ids: &[usize]) -> Result<Tensor> {
        self.token.embed(ids)
    }

    pub fn positions(&self, ids: &[usize]) -> Result<Tensor> {
        let clamped: Vec<usize> = ids.iter().map(|&i| i.min(MAX_POSITIONS - 1)).collect();
        self.index.embed(&clamped)
    }

    pub fn params(&self, out: &mut BTreeMap<String, Tensor>) {
        collect(out, "embeddings.token", &self.token);
        collect(out, "embeddings.upos", &self.upos);
        collect(out, "embeddings.index", &self.index);
        collect(out, "embeddings.edge_label", &self.edge_label);
    }
}
