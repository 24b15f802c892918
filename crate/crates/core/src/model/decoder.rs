//! Transformer decoder over linearized graph nodes, with an incremental
//! path that reproduces the batched causal pass bit for bit.

use std::collections::BTreeMap;

use rand_chacha::ChaCha20Rng;

use crate::error::Result;
use crate::io::BOS;
use crate::rng::RngPool;
use crate::tensor::{Axis, Tensor};

use super::config::ModelConfig;
use super::embed::Embeddings;
use super::layers::{
    causal_mask, collect, drop, norm_gain, sinusoid, FeedForward, Linear, MultiHeadAttention,
};

/// Categorical description of one generated node, fed back as decoder input
/// at the next step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeFeatures {
    pub token_id: usize,
    pub index: usize,
    pub head_token_id: usize,
    pub head_index: usize,
    pub label_id: usize,
}

impl NodeFeatures {
    /// The pseudo-node occupying step 0.
    pub fn bos() -> NodeFeatures {
        NodeFeatures {
            token_id: BOS,
            index: 0,
            head_token_id: BOS,
            head_index: 0,
            label_id: BOS,
        }
    }
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    self_attn: MultiHeadAttention,
    cross_attn: MultiHeadAttention,
    norm_g: Tensor,
    ffn: FeedForward,
}

impl DecoderLayer {
    fn params(&self, prefix: &str, out: &mut BTreeMap<String, Tensor>) {
        self.self_attn.params(&format!("{prefix}.self_attn"), out);
        self.cross_attn.params(&format!("{prefix}.cross_attn"), out);
        collect(out, &format!("{prefix}.norm.g"), &self.norm_g);
        self.ffn.params(&format!("{prefix}.ffn"), out);
    }
}

#[derive(Debug, Clone)]
pub struct Decoder {
    /// Projects the five concatenated feature embeddings down to d_s.
    pub feat: Linear,
    layers: Vec<DecoderLayer>,
    pub out_norm_g: Tensor,
    dropout: f64,
}

impl Decoder {
    pub fn new(cfg: &ModelConfig, pool: &RngPool) -> Result<Decoder> {
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let name = format!("decoder.layer{l}");
            layers.push(DecoderLayer {
                self_attn: MultiHeadAttention::new(
                    cfg.d_s,
                    cfg.heads,
                    cfg.k,
                    pool,
                    &format!("{name}.self_attn"),
                )?,
                cross_attn: MultiHeadAttention::new(
                    cfg.d_s,
                    cfg.heads,
                    cfg.k,
                    pool,
                    &format!("{name}.cross_attn"),
                )?,
                norm_g: norm_gain(cfg.d_s),
                ffn: FeedForward::new(cfg.d_s, pool, &format!("{name}.ffn")),
            });
        }
        Ok(Decoder {
            feat: Linear::new(5 * cfg.d_s, cfg.d_s, pool, "decoder.feat"),
            layers,
            out_norm_g: norm_gain(cfg.d_s),
            dropout: cfg.dropout,
        })
    }

    /// Feature rows embedded and positioned starting at `offset`.
    fn embed_features(
        &self,
        emb: &Embeddings,
        feats: &[NodeFeatures],
        offset: usize,
    ) -> Result<Tensor> {
        let ids = |f: fn(&NodeFeatures) -> usize| feats.iter().map(f).collect::<Vec<_>>();
        let cat = Tensor::concat(
            &[
                emb.tokens(&ids(|f| f.token_id))?,
                emb.positions(&ids(|f| f.index))?,
                emb.tokens(&ids(|f| f.head_token_id))?,
                emb.positions(&ids(|f| f.head_index))?,
                emb.edge_label.embed(&ids(|f| f.label_id))?,
            ],
            Axis::Cols,
        )?;
        self.feat
            .forward(&cat)?
            .add(&sinusoid(feats.len(), emb.token.cols(), offset))
    }

    /// Full causal pass. Row s of the output summarizes steps 0..=s and is
    /// the query for predicting step s+1.
    pub fn forward(
        &self,
        emb: &Embeddings,
        feats: &[NodeFeatures],
        memory: &Tensor,
        rng: &mut ChaCha20Rng,
        train: bool,
    ) -> Result<Tensor> {
        let m = feats.len();
        let mask = causal_mask(m);
        let mut x = drop(
            self.embed_features(emb, feats, 0)?,
            self.dropout,
            rng,
            train,
        )?;
        for layer in &self.layers {
            let (k, v) = layer.self_attn.project_kv(&x)?;
            let a = drop(
                layer.self_attn.attend(&x, &k, &v, Some(&mask))?,
                self.dropout,
                rng,
                train,
            )?;
            let x1 = x.add(&a)?;
            let (mk, mv) = layer.cross_attn.project_kv(memory)?;
            let c = drop(
                layer.cross_attn.attend(&x1, &mk, &mv, None)?,
                self.dropout,
                rng,
                train,
            )?;
            let x2 = x1.add(&c)?;
            let f = drop(
                layer.ffn.forward(&x2.scalenorm(&layer.norm_g)?)?,
                self.dropout,
                rng,
                train,
            )?;
            x = x2.add(&f)?;
        }
        x.scalenorm(&self.out_norm_g)
    }

    /// Open an incremental pass over fixed `memory`.
    pub fn begin(&self, memory: &Tensor) -> Result<DecoderState> {
        let mut mem = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            mem.push(layer.cross_attn.project_kv(memory)?);
        }
        Ok(DecoderState {
            cache: vec![None; self.layers.len()],
            mem,
            len: 0,
        })
    }

    /// Feed one node and return its output row. Equals row `state.len` of
    /// the batched pass over the same prefix; never applies dropout.
    pub fn step(
        &self,
        emb: &Embeddings,
        state: &mut DecoderState,
        feat: NodeFeatures,
    ) -> Result<Tensor> {
        let mut x = self.embed_features(emb, &[feat], state.len)?;
        for (l, layer) in self.layers.iter().enumerate() {
            let (k1, v1) = layer.self_attn.project_kv(&x)?;
            let (k, v) = match state.cache[l].take() {
                Some((k0, v0)) => (
                    Tensor::concat(&[k0, k1], Axis::Rows)?,
                    Tensor::concat(&[v0, v1], Axis::Rows)?,
                ),
                None => (k1, v1),
            };
            let a = layer.self_attn.attend(&x, &k, &v, None)?;
            state.cache[l] = Some((k, v));
            let x1 = x.add(&a)?;
            let (mk, mv) = &state.mem[l];
            let x2 = x1.add(&layer.cross_attn.attend(&x1, mk, mv, None)?)?;
            let f = layer.ffn.forward(&x2.scalenorm(&layer.norm_g)?)?;
            x = x2.add(&f)?;
        }
        state.len += 1;
        x.scalenorm(&self.out_norm_g)
    }

    pub fn params(&self, out: &mut BTreeMap<String, Tensor>) {
        self.feat.params("decoder.feat", out);
        for (l, layer) in self.layers.iter().enumerate() {
            layer.params(&format!("decoder.layer{l}"), out);
        }
        collect(out, "decoder.out_norm.g", &self.out_norm_g);
    }
}

/// Grown key/value caches for one in-flight decode.
pub struct DecoderState {
    cache: Vec<Option<(Tensor, Tensor)>>,
    mem: Vec<(Tensor, Tensor)>,
    pub len: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::xavier_uniform;

    fn fixture() -> (Decoder, Embeddings, Tensor) {
        let cfg = ModelConfig {
            layers: 2,
            heads: 2,
            d_s: 16,
            ..Default::default()
        };
        let pool = RngPool::new(9);
        let corpus = crate::io::Corpus {
            entries: vec![crate::io::CorpusEntry {
                id: "s".into(),
                tree: crate::graph::UDTree::new(
                    &[("a", "X"), ("b", "Y"), ("c", "X")],
                    vec![0, 1, 1],
                    vec!["root", "dep", "dep"],
                ),
                graph: None,
            }],
        };
        let vocab = crate::io::build_vocab(&corpus, 1);
        let emb = Embeddings::new(&vocab, cfg.d_s, &pool);
        let dec = Decoder::new(&cfg, &pool).unwrap();
        let memory = xavier_uniform(4, cfg.d_s, &mut pool.stream("mem"));
        (dec, emb, memory)
    }

    fn feats(n: usize) -> Vec<NodeFeatures> {
        let mut out = vec![NodeFeatures::bos()];
        for s in 1..n {
            out.push(NodeFeatures {
                token_id: 6 + s % 3,
                index: s,
                head_token_id: 6 + (s + 1) % 3,
                head_index: s / 2,
                label_id: 6,
            });
        }
        out
    }

    #[test]
    fn incremental_path_reproduces_batched_pass() {
        let (dec, emb, memory) = fixture();
        let fs = feats(6);
        let pool = RngPool::new(0);
        let full = dec
            .forward(&emb, &fs, &memory, &mut pool.stream("d"), false)
            .unwrap();
        let mut state = dec.begin(&memory).unwrap();
        for (s, f) in fs.iter().enumerate() {
            let row = dec.step(&emb, &mut state, *f).unwrap();
            assert_eq!(row.shape(), (1, 16));
            for c in 0..16 {
                let diff = (row.get(0, c) - full.get(s, c)).abs();
                assert!(diff < 1e-12, "step {s} col {c}: diff {diff}");
            }
        }
        assert_eq!(state.len, 6);
    }

    #[test]
    fn later_inputs_cannot_change_earlier_rows() {
        let (dec, emb, memory) = fixture();
        let a = feats(5);
        let mut b = a.clone();
        b[4].token_id = 8;
        b[4].label_id = 7;
        let pool = RngPool::new(0);
        let za = dec
            .forward(&emb, &a, &memory, &mut pool.stream("d"), false)
            .unwrap();
        let zb = dec
            .forward(&emb, &b, &memory, &mut pool.stream("d"), false)
            .unwrap();
        let (va, vb) = (za.to_vec(), zb.to_vec());
        assert_eq!(va[..4 * 16], vb[..4 * 16]);
        assert_ne!(va[4 * 16..], vb[4 * 16..]);
    }

    #[test]
    fn memory_feeds_every_step() {
        let (dec, emb, memory) = fixture();
        let other = {
            let pool = RngPool::new(40);
            xavier_uniform(4, 16, &mut pool.stream("mem2"))
        };
        let fs = feats(3);
        let pool = RngPool::new(0);
        let za = dec
            .forward(&emb, &fs, &memory, &mut pool.stream("d"), false)
            .unwrap();
        let zb = dec
            .forward(&emb, &fs, &other, &mut pool.stream("d"), false)
            .unwrap();
        for s in 0..3 {
            let row_changed = (0..16).any(|c| za.get(s, c) != zb.get(s, c));
            assert!(row_changed, "row {s} ignored the memory");
        }
    }

    #[test]
    fn output_rows_have_unit_rms_times_gain() {
        let (dec, emb, memory) = fixture();
        let fs = feats(4);
        let pool = RngPool::new(0);
        let z = dec
            .forward(&emb, &fs, &memory, &mut pool.stream("d"), false)
            .unwrap();
        let g = dec.out_norm_g.item();
        for s in 0..4 {
            let rms = (0..16).map(|c| z.get(s, c).powi(2)).sum::<f64>().sqrt();
            assert!((rms - g).abs() < 1e-9, "row {s} rms {rms} gain {g}");
        }
    }

    #[test]
    fn gradients_reach_feature_tables() {
        let (dec, emb, memory) = fixture();
        let fs = feats(3);
        let pool = RngPool::new(0);
        let z = dec
            .forward(&emb, &fs, &memory, &mut pool.stream("d"), true)
            .unwrap();
        z.mean().backward().unwrap();
        assert!(emb.token.grad().is_some());
        assert!(emb.index.grad().is_some());
        assert!(emb.edge_label.grad().is_some());
        let mut params = BTreeMap::new();
        dec.params(&mut params);
        assert!(params["decoder.feat.w"].grad().is_some());
        assert!(params["decoder.layer1.cross_attn.wq"].grad().is_some());
    }
}
