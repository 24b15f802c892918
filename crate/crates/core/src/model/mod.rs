//! The joint parser: a transformer encoder over the sentence, a biaffine
//! dependency scorer, and a pointer-generator decoder that emits linearized
//! semantic graphs node by node.
//!
//! Every component is constructed in every mode so checkpoints always carry
//! the same parameter set; the mode decides which components the loss (and
//! therefore the gradient) touches.

mod attrs;
mod biaffine;
mod checkpoint;
mod config;
mod decoder;
mod embed;
mod encoder;
mod layers;
mod pointer;
mod relation;
mod sequence;

pub use attrs::{EdgeAttrHead, NodeAttrHead};
pub use biaffine::{BiaffineScorer, BiaffineScores, Fusion, SyntacticBiaffine, SyntacticParse};
pub use checkpoint::{component_prefixes, load, save, transfer};
pub use config::{LossWeights, Mode, ModelConfig};
pub use decoder::{Decoder, DecoderState, NodeFeatures};
pub use embed::Embeddings;
pub use encoder::Encoder;
pub use layers::MAX_POSITIONS;
pub use pointer::{GoldRoutes, PointerGenerator, PointerOutputs, StepMixture};
pub use relation::{RelationScores, SemanticRelation};
pub use sequence::{TargetSequence, SEP_TOKEN};

use std::collections::BTreeMap;

use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::graph::UDTree;
use crate::io::{CorpusEntry, Vocabulary};
use crate::rng::RngPool;
use crate::tensor::Tensor;

#[derive(Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub embeddings: Embeddings,
    pub encoder: Encoder,
    pub biaffine: SyntacticBiaffine,
    pub fusion: Fusion,
    pub decoder: Decoder,
    pub relation: SemanticRelation,
    pub pointer: PointerGenerator,
    pub node_attr: NodeAttrHead,
    pub edge_attr: EdgeAttrHead,
}

/// The scalar loss with its unweighted per-component values. Components a
/// mode never computes are absent.
pub struct LossBreakdown {
    pub total: Tensor,
    pub components: BTreeMap<String, f64>,
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Model> {
        config.validate()?;
        let pool = RngPool::new(seed);
        let model = Model {
            embeddings: Embeddings::new(&vocab, config.d_s, &pool),
            encoder: Encoder::new(&config, &pool)?,
            biaffine: SyntacticBiaffine::new(&config, vocab.relations.len(), &pool),
            fusion: Fusion::new(&config, &pool),
            decoder: Decoder::new(&config, &pool)?,
            relation: SemanticRelation::new(&config, vocab.edge_labels.len(), &pool),
            pointer: PointerGenerator::new(&config, vocab.tokens.len(), &pool),
            node_attr: NodeAttrHead::new(&config, vocab.node_attrs.len(), &pool),
            edge_attr: EdgeAttrHead::new(&config, vocab.edge_attrs.len(), &pool),
            config,
            vocab,
        };
        model
            .encoder
            .set_frozen_layers(model.config.frozen_encoder_layers);
        Ok(model)
    }

    /// Every trainable tensor by its canonical name.
    pub fn params(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        self.embeddings.params(&mut out);
        self.encoder.params(&mut out);
        self.biaffine.params(&mut out);
        self.fusion.params(&mut out);
        self.decoder.params(&mut out);
        self.relation.params(&mut out);
        self.pointer.params(&mut out);
        self.node_attr.params(&mut out);
        self.edge_attr.params(&mut out);
        out
    }

    pub fn encode(&self, tree: &UDTree, rng: &mut ChaCha20Rng, train: bool) -> Result<Tensor> {
        self.encoder
            .forward(&self.embeddings, &self.vocab, tree, rng, train)
    }

    /// Encoder pass plus whatever the mode layers on top: the syntactic
    /// parse where the biaffine runs, and the decoder memory (fused with
    /// the parse in integrated mode, the raw encoding otherwise).
    pub fn analyze(
        &self,
        tree: &UDTree,
        rng: &mut ChaCha20Rng,
        train: bool,
    ) -> Result<(Tensor, Option<SyntacticParse>, Tensor)> {
        let enc = self.encode(tree, rng, train)?;
        let parse = if self.config.mode.has_biaffine() {
            Some(self.biaffine.forward(&enc)?)
        } else {
            None
        };
        let memory = if self.config.mode == Mode::In {
            self.fusion.forward(&enc, parse.as_ref().expect("integrated mode parses"))?
        } else {
            enc.clone()
        };
        Ok((enc, parse, memory))
    }

    /// Loss over one sentence. Entries without a semantic graph contribute
    /// syntax only; modes whose whole target is the graph reject them.
    pub fn compute_loss(
        &self,
        entry: &CorpusEntry,
        rng: &mut ChaCha20Rng,
        train: bool,
    ) -> Result<LossBreakdown> {
        let mode = self.config.mode;
        let w = self.config.weights;
        let (_, parse, memory) = self.analyze(&entry.tree, rng, train)?;

        let mut components = BTreeMap::new();
        let mut weighted: Vec<Tensor> = Vec::new();
        let mut push = |name: &str, weight: f64, t: Tensor, components: &mut BTreeMap<String, f64>| {
            components.insert(name.to_string(), t.item());
            weighted.push(t.scale(weight));
        };

        if let Some(parse) = &parse {
            let heads = &entry.tree.heads;
            let head_ce = parse.head_scores.cross_entropy(heads, None, None)?;
            let labels: Vec<usize> = entry
                .tree
                .deprels
                .iter()
                .map(|d| self.vocab.relations.id(d))
                .collect();
            let label_logits = self.biaffine.scorer.label_logits_at(&parse.scores, heads)?;
            let label_ce = label_logits.cross_entropy(&labels, None, None)?;
            push("syntax", w.syntax, head_ce.add(&label_ce)?, &mut components);
        }

        if mode.has_semantics() {
            match (&entry.graph, mode) {
                (None, Mode::En | Mode::In) => {}
                _ => {
                    let seq = TargetSequence::build(
                        &entry.tree,
                        entry.graph.as_ref(),
                        mode,
                        &self.vocab,
                    )?;
                    let feats = seq.features(&self.vocab);
                    let z = self
                        .decoder
                        .forward(&self.embeddings, &feats, &memory, rng, train)?;
                    let outs = self.pointer.forward(&z, &memory)?;
                    let routes = seq.routes(&entry.tree, &self.vocab);
                    push(
                        "node",
                        w.node,
                        self.pointer.loss(&outs, &routes)?,
                        &mut components,
                    );
                    let n = seq.len();
                    if n > 0 {
                        let rs = self.relation.forward(&z)?;
                        let head_ce =
                            rs.head_scores
                                .cross_entropy(&seq.head_positions, None, None)?;
                        push("edge_head", w.edge, head_ce, &mut components);
                        let label_logits =
                            self.relation.label_logits_at(&rs, &seq.head_positions)?;
                        let label_ce = label_logits
                            .cross_entropy(&seq.label_targets(&self.vocab), None, None)?;
                        push("edge_label", w.label, label_ce, &mut components);
                        self.attr_losses(&z, &seq, w, &mut push, &mut components)?;
                    }
                }
            }
        }

        if components.is_empty() {
            return Err(Error::Config(format!(
                "entry {:?} produced no loss components in mode {mode}",
                entry.id
            )));
        }
        let mut total = weighted[0].clone();
        for t in &weighted[1..] {
            total = total.add(t)?;
        }
        Ok(LossBreakdown { total, components })
    }

    fn attr_losses(
        &self,
        z: &Tensor,
        seq: &TargetSequence,
        w: LossWeights,
        push: &mut impl FnMut(&str, f64, Tensor, &mut BTreeMap<String, f64>),
        components: &mut BTreeMap<String, f64>,
    ) -> Result<()> {
        let n = seq.len();
        let sem = seq.semantic_rows();
        if !sem.iter().any(|&b| b) {
            return Ok(());
        }
        let nodes = z.slice(0, n, 0, z.cols())?;
        let mut value_losses = Vec::new();
        let mut mask_losses = Vec::new();
        if !self.vocab.node_attrs.is_empty() {
            let a = self.vocab.node_attrs.len();
            let sem_mask: Vec<f64> = sem
                .iter()
                .flat_map(|&b| std::iter::repeat(b as u8 as f64).take(a))
                .collect();
            let (values, mask_logits) = self.node_attr.forward(&nodes)?;
            value_losses.push(values.mse(&seq.node_attr_values, Some(&seq.node_attr_applies))?);
            mask_losses.push(mask_logits.bce_with_logits(&seq.node_attr_applies, Some(&sem_mask))?);
        }
        if !self.vocab.edge_attrs.is_empty() {
            let a = self.vocab.edge_attrs.len();
            let sem_mask: Vec<f64> = sem
                .iter()
                .flat_map(|&b| std::iter::repeat(b as u8 as f64).take(a))
                .collect();
            let (values, mask_logits) = self.edge_attr.forward(&nodes, &seq.head_positions)?;
            value_losses.push(values.mse(&seq.edge_attr_values, Some(&seq.edge_attr_applies))?);
            mask_losses.push(mask_logits.bce_with_logits(&seq.edge_attr_applies, Some(&sem_mask))?);
        }
        if let Some(first) = value_losses.first() {
            let mut v = first.clone();
            for t in &value_losses[1..] {
                v = v.add(t)?;
            }
            push("attr_value", w.attr_value, v, components);
        }
        if let Some(first) = mask_losses.first() {
            let mut m = first.clone();
            for t in &mask_losses[1..] {
                m = m.add(t)?;
            }
            push("attr_mask", w.attr_mask, m, components);
        }
        Ok(())
    }
}

/// L2 norm of the accumulated gradients per top-level parameter group (the
/// name up to the first dot). Groups with no gradient report 0.
pub fn grad_group_norms(params: &BTreeMap<String, Tensor>) -> BTreeMap<String, f64> {
    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    for (name, t) in params {
        let group = name.split('.').next().unwrap_or(name).to_string();
        let entry = sums.entry(group).or_insert(0.0);
        if let Some(g) = t.grad() {
            *entry += g.iter().map(|v| v * v).sum::<f64>();
        }
    }
    sums.into_iter().map(|(k, v)| (k, v.sqrt())).collect()
}
