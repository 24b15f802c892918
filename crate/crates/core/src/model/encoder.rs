//! Transformer encoder over token + POS embeddings.

use std::collections::BTreeMap;

use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::graph::UDTree;
use crate::io::Vocabulary;
use crate::rng::RngPool;
use crate::tensor::Tensor;

use super::config::ModelConfig;
use super::embed::Embeddings;
use super::layers::{collect, drop, norm_gain, sinusoid, FeedForward, MultiHeadAttention};

#[derive(Debug, Clone)]
struct EncoderLayer {
    attn: MultiHeadAttention,
    norm_g: Tensor,
    ffn: FeedForward,
}

impl EncoderLayer {
    fn forward(&self, x: &Tensor, p: f64, rng: &mut ChaCha20Rng, train: bool) -> Result<Tensor> {
        let (k, v) = self.attn.project_kv(x)?;
        let a = drop(self.attn.attend(x, &k, &v, None)?, p, rng, train)?;
        let x = x.add(&a)?;
        let f = drop(self.ffn.forward(&x.scalenorm(&self.norm_g)?)?, p, rng, train)?;
        x.add(&f)
    }

    fn params(&self, prefix: &str, out: &mut BTreeMap<String, Tensor>) {
        self.attn.params(&format!("{prefix}.attn"), out);
        collect(out, &format!("{prefix}.norm.g"), &self.norm_g);
        self.ffn.params(&format!("{prefix}.ffn"), out);
    }
}

/// The final layer's output is the token representation; no norm follows it.
#[derive(Debug, Clone)]
pub struct Encoder {
    layers: Vec<EncoderLayer>,
    dropout: f64,
}

impl Encoder {
    pub fn new(cfg: &ModelConfig, pool: &RngPool) -> Result<Encoder> {
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let name = format!("encoder.layer{l}");
            layers.push(EncoderLayer {
                attn: MultiHeadAttention::new(cfg.d_s, cfg.heads, cfg.k, pool, &format!("{name}.attn"))?,
                norm_g: norm_gain(cfg.d_s),
                ffn: FeedForward::new(cfg.d_s, pool, &format!("{name}.ffn")),
            });
        }
        Ok(Encoder {
            layers,
            dropout: cfg.dropout,
        })
    }

    pub fn forward(
        &self,
        emb: &Embeddings,
        vocab: &Vocabulary,
        tree: &UDTree,
        rng: &mut ChaCha20Rng,
        train: bool,
    ) -> Result<Tensor> {
        if tree.is_empty() {
            return Err(Error::Validation("cannot encode an empty sentence".into()));
        }
        let t = tree.len();
        let tok_ids: Vec<usize> = tree.tokens.iter().map(|x| vocab.tokens.id(&x.form)).collect();
        let pos_ids: Vec<usize> = tree.tokens.iter().map(|x| vocab.upos.id(&x.upos)).collect();
        let d = emb.token.cols();
        let mut x = emb
            .tokens(&tok_ids)?
            .add(&emb.upos.embed(&pos_ids)?)?
            .add(&sinusoid(t, d, 0))?;
        x = drop(x, self.dropout, rng, train)?;
        for layer in &self.layers {
            x = layer.forward(&x, self.dropout, rng, train)?;
        }
        Ok(x)
    }

    /// Freeze the bottom n layers (idempotent; thaws the rest).
    pub fn set_frozen_layers(&self, n: usize) {
        for (l, layer) in self.layers.iter().enumerate() {
            let mut tensors = BTreeMap::new();
            layer.params("x", &mut tensors);
            for t in tensors.values() {
                t.set_requires_grad(l >= n);
            }
        }
    }

    pub fn params(&self, out: &mut BTreeMap<String, Tensor>) {
        for (l, layer) in self.layers.iter().enumerate() {
            layer.params(&format!("encoder.layer{l}"), out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{build_vocab, Corpus, CorpusEntry};

    fn fixture() -> (Vocabulary, UDTree, Encoder, Embeddings, ModelConfig) {
        let tree = UDTree::new(
            &[("we", "PRON"), ("ship", "VERB"), ("crates", "NOUN")],
            vec![2, 0, 2],
            vec!["nsubj", "root", "obj"],
        );
        let corpus = Corpus {
            entries: vec![CorpusEntry {
                id: "s1".into(),
                tree: tree.clone(),
                graph: None,
            }],
        };
        let vocab = build_vocab(&corpus, 1);
        let cfg = ModelConfig {
            layers: 2,
            heads: 2,
            d_s: 16,
            ..Default::default()
        };
        let pool = RngPool::new(11);
        let enc = Encoder::new(&cfg, &pool).unwrap();
        let emb = Embeddings::new(&vocab, cfg.d_s, &pool);
        (vocab, tree, enc, emb, cfg)
    }

    #[test]
    fn output_is_one_row_per_token() {
        let (vocab, tree, enc, emb, cfg) = fixture();
        let pool = RngPool::new(0);
        let out = enc
            .forward(&emb, &vocab, &tree, &mut pool.stream("d"), false)
            .unwrap();
        assert_eq!(out.shape(), (3, cfg.d_s));
        assert!(out.to_vec().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn permuting_tokens_moves_both_rows() {
        let (vocab, tree, enc, emb, _) = fixture();
        let mut swapped = tree.clone();
        swapped.tokens[0].form = tree.tokens[2].form.clone();
        swapped.tokens[2].form = tree.tokens[0].form.clone();
        swapped.tokens[0].upos = tree.tokens[2].upos.clone();
        swapped.tokens[2].upos = tree.tokens[0].upos.clone();
        let pool = RngPool::new(0);
        let a = enc
            .forward(&emb, &vocab, &tree, &mut pool.stream("d"), false)
            .unwrap();
        let b = enc
            .forward(&emb, &vocab, &swapped, &mut pool.stream("d"), false)
            .unwrap();
        let (av, bv) = (a.to_vec(), b.to_vec());
        let d = a.cols();
        assert!(av[..d] != bv[..d]);
        assert!(av[2 * d..] != bv[2 * d..]);
    }

    #[test]
    fn freezing_all_layers_zeroes_their_grads_only() {
        let (vocab, tree, enc, emb, _) = fixture();
        enc.set_frozen_layers(2);
        let pool = RngPool::new(0);
        let out = enc
            .forward(&emb, &vocab, &tree, &mut pool.stream("d"), false)
            .unwrap();
        out.mean().backward().unwrap();
        let mut layer_params = BTreeMap::new();
        enc.params(&mut layer_params);
        assert!(layer_params.values().all(|t| t.grad().is_none()));
        assert!(emb.token.grad().is_some());
        // Thaw and confirm gradients flow again.
        enc.set_frozen_layers(0);
        let out = enc
            .forward(&emb, &vocab, &tree, &mut pool.stream("d"), false)
            .unwrap();
        out.mean().backward().unwrap();
        assert!(layer_params.values().all(|t| t.grad().is_some()));
    }

    #[test]
    fn empty_sentence_is_an_error() {
        let (vocab, _, enc, emb, _) = fixture();
        let empty = UDTree {
            tokens: vec![],
            heads: vec![],
            deprels: vec![],
            comments: vec![],
            extras: vec![],
        };
        let pool = RngPool::new(0);
        assert!(enc
            .forward(&emb, &vocab, &empty, &mut pool.stream("d"), false)
            .is_err());
    }

    #[test]
    fn partial_freeze_keeps_top_layer_training() {
        let (vocab, tree, enc, emb, _) = fixture();
        enc.set_frozen_layers(1);
        let pool = RngPool::new(0);
        let out = enc
            .forward(&emb, &vocab, &tree, &mut pool.stream("d"), false)
            .unwrap();
        out.mean().backward().unwrap();
        let mut params = BTreeMap::new();
        enc.params(&mut params);
        for (name, t) in &params {
            let frozen = name.starts_with("encoder.layer0");
            assert_eq!(t.grad().is_none(), frozen, "{name}");
        }
    }
}
