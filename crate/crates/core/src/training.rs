//! The training loop, the evaluation driver shared with the CLI, run
//! manifests, and random hyperparameter search.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decoding::{generate_graph, oracle_decode, parse_only};
use crate::error::{Error, Result};
use crate::graph::{uds_to_arborescence, UDSGraph, UDTree};
use crate::io::{build_vocab, Corpus};
use crate::metrics::{
    corpus_uas_las, pearson_rho, s_score_corpus, tune_threshold_f1, AttributeEval, MetricsReport,
    TripleGraph,
};
use crate::model::{grad_group_norms, Mode, Model, ModelConfig};
use crate::rng::RngPool;
use crate::tensor::{adam_step, OptimizerState, Tensor};

/// Train-set milestones that end a run early once every one of them is
/// attained, for overfitting studies where dev equals train. Zero targets
/// are vacuously met; the correlation target is skipped at zero because a
/// corpus can lack enough applicable attributes to define it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StopTargets {
    pub uas: f64,
    pub las: f64,
    pub sem_f1: f64,
    pub mean_rho: f64,
}

impl Default for StopTargets {
    fn default() -> Self {
        StopTargets {
            uas: 1.0,
            las: 1.0,
            sem_f1: 0.99,
            mean_rho: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub base_lr: f64,
    pub max_epochs: usize,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    /// Hill-climbing restarts for every S-score computed along the way.
    pub restarts: usize,
    pub vocab_min_count: usize,
    pub stop_targets: Option<StopTargets>,
    /// Targets are checked every this many epochs.
    pub target_check_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            base_lr: 1.0,
            max_epochs: 200,
            patience: 20,
            restarts: 10,
            vocab_min_count: 1,
            stop_targets: None,
            target_check_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.base_lr < 0.0 {
            return Err(Error::Config(format!(
                "base_lr {} is negative",
                self.base_lr
            )));
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config(
                "max_epochs and patience must be positive".into(),
            ));
        }
        if self.restarts == 0 || self.target_check_every == 0 || self.vocab_min_count == 0 {
            return Err(Error::Config(
                "restarts, target_check_every, and vocab_min_count must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate after the epoch's last step.
    pub lr: f64,
    /// Mean total loss per sentence.
    pub train_loss: f64,
    /// Mean unweighted loss components over the sentences that had them.
    pub components: BTreeMap<String, f64>,
    /// Per parameter group, the largest gradient norm seen at any step.
    /// Zero here certifies the group got no gradient the whole epoch.
    pub grad_norm_max: BTreeMap<String, f64>,
    pub dev_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: TrainConfig,
    pub seed: u64,
    pub vocab_fingerprint: String,
    pub inputs: BTreeMap<String, InputRecord>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_metric: f64,
    pub stop_reason: String,
    /// Informational only; every other field reproduces bit-exactly under a
    /// fixed seed and equal inputs.
    pub wall_clock_secs: f64,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Serialization with the timing zeroed, for reproducibility checks.
    pub fn deterministic_json(&self) -> String {
        let mut m = self.clone();
        m.wall_clock_secs = 0.0;
        m.to_json()
    }
}

pub struct TrainOutcome {
    pub model: Model,
    pub manifest: RunManifest,
}

impl std::fmt::Debug for TrainOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrainOutcome")
            .field("manifest", &self.manifest)
            .finish_non_exhaustive()
    }
}

/// Modes whose target sequence is built from the graph need one on every
/// entry; the auxiliary-syntax modes need at least one to learn or stop on.
fn check_mode_data(mode: Mode, corpus: &Corpus, name: &str) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::Config(format!("{name} corpus is empty")));
    }
    match mode {
        Mode::Bi => Ok(()),
        Mode::Base | Mode::Cb | Mode::Ca => {
            match corpus.entries.iter().find(|e| e.graph.is_none()) {
                Some(e) => Err(Error::Config(format!(
                    "mode {mode} trains on semantic graphs but {name} entry {:?} has none",
                    e.id
                ))),
                None => Ok(()),
            }
        }
        Mode::En | Mode::In => {
            if corpus.semantic_entries().next().is_none() {
                Err(Error::Config(format!(
                    "mode {mode} needs at least one semantic graph in the {name} corpus"
                )))
            } else {
                Ok(())
            }
        }
    }
}

fn snapshot(params: &BTreeMap<String, Tensor>) -> BTreeMap<String, Vec<f64>> {
    params.iter().map(|(k, t)| (k.clone(), t.to_vec())).collect()
}

fn restore(params: &BTreeMap<String, Tensor>, snap: &BTreeMap<String, Vec<f64>>) {
    for (k, v) in snap {
        params[k].set_value(v);
    }
}

/// The early-stopping quantity: dev LAS when only the parser trains, dev
/// semantic S-score F1 otherwise. Sentences whose decode fails structurally
/// score as empty graphs.
fn stopping_metric(model: &Model, dev: &Corpus, restarts: usize, pool: &RngPool) -> Result<f64> {
    if model.config.mode == Mode::Bi {
        let mut preds = Vec::with_capacity(dev.len());
        let mut golds = Vec::with_capacity(dev.len());
        for e in &dev.entries {
            preds.push(parse_only(model, &e.tree)?.expect("parser mode produces trees"));
            golds.push(e.tree.clone());
        }
        return Ok(corpus_uas_las(&preds, &golds)?.1);
    }
    let mut pairs: Vec<(TripleGraph, TripleGraph)> = Vec::new();
    for e in dev.semantic_entries() {
        let pred = match generate_graph(model, &e.tree) {
            Ok(out) => out.graph,
            Err(err) => {
                log::warn!("decode of {:?} failed ({err}); scoring an empty graph", e.id);
                UDSGraph::default()
            }
        };
        pairs.push((
            TripleGraph::from_graph(&pred),
            TripleGraph::from_graph(e.graph.as_ref().expect("semantic entry")),
        ));
    }
    let mut rng = pool.stream("dev-sscore");
    Ok(s_score_corpus(pairs.iter().map(|(p, g)| (p, g)), restarts, &mut rng).f1)
}

fn targets_met(
    model: &Model,
    corpus: &Corpus,
    t: &StopTargets,
    restarts: usize,
    pool: &RngPool,
) -> Result<bool> {
    let preds = predict_corpus(model, corpus)?;
    let mut ptrees = Vec::new();
    let mut gtrees = Vec::new();
    for (p, e) in preds.iter().zip(&corpus.entries) {
        if let Some(tree) = &p.tree {
            ptrees.push(tree.clone());
            gtrees.push(e.tree.clone());
        }
    }
    let (uas, las) = if ptrees.is_empty() {
        (0.0, 0.0)
    } else {
        corpus_uas_las(&ptrees, &gtrees)?
    };
    if uas < t.uas || las < t.las {
        return Ok(false);
    }
    if !model.config.mode.has_semantics() {
        return Ok(true);
    }
    let pairs: Vec<(TripleGraph, TripleGraph)> = preds
        .iter()
        .zip(&corpus.entries)
        .filter_map(|(p, e)| {
            e.graph.as_ref().map(|g| {
                (
                    TripleGraph::from_graph(&p.graph),
                    TripleGraph::from_graph(g),
                )
            })
        })
        .collect();
    let mut rng = pool.stream("target-sscore");
    let s = s_score_corpus(pairs.iter().map(|(p, g)| (p, g)), restarts, &mut rng);
    if s.f1 < t.sem_f1 {
        return Ok(false);
    }
    if t.mean_rho > 0.0 {
        return Ok(matches!(mean_oracle_rho(model, corpus)?, Some(r) if r >= t.mean_rho));
    }
    Ok(true)
}

/// Batch-size-1 training with a Noam-scheduled Adam optimizer. Sentences
/// are reshuffled per epoch; dropout draws from a per-step stream so the
/// trajectory is a pure function of (seed, data). Returns the model at its
/// best dev epoch (or at the stop epoch when targets end the run) and the
/// manifest recording how it got there.
pub fn train(
    cfg: &TrainConfig,
    train_set: &Corpus,
    dev_set: &Corpus,
    seed: u64,
    inputs: BTreeMap<String, InputRecord>,
) -> Result<TrainOutcome> {
    let started = Instant::now();
    cfg.validate()?;
    train_set.validate()?;
    dev_set.validate()?;
    check_mode_data(cfg.model.mode, train_set, "train")?;
    check_mode_data(cfg.model.mode, dev_set, "dev")?;

    let vocab = build_vocab(train_set, cfg.vocab_min_count);
    let vocab_fingerprint = vocab.fingerprint();
    let model = Model::new(cfg.model.clone(), vocab, seed)?;
    let params = model.params();
    let pool = RngPool::new(seed);
    let mut opt = OptimizerState::new(cfg.base_lr, cfg.model.warmup, cfg.model.d_s);

    let mut history: Vec<EpochRecord> = Vec::new();
    let mut best_metric = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = snapshot(&params);
    let mut stop_reason = format!("reached the epoch limit ({})", cfg.max_epochs);
    let mut keep_current = false;
    let mut step: u64 = 0;

    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut pool.stream_indexed("shuffle", epoch as u64));

        let mut loss_sum = 0.0;
        let mut comp_sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        let mut grad_norm_max: BTreeMap<String, f64> = BTreeMap::new();
        for &idx in &order {
            let entry = &train_set.entries[idx];
            let mut rng = pool.stream_indexed("dropout", step);
            let lb = model.compute_loss(entry, &mut rng, true)?;
            lb.total.backward()?;
            for (group, norm) in grad_group_norms(&params) {
                let slot = grad_norm_max.entry(group).or_insert(0.0);
                *slot = slot.max(norm);
            }
            adam_step(&mut opt, &params);
            step += 1;
            loss_sum += lb.total.item();
            for (name, v) in lb.components {
                let slot = comp_sums.entry(name).or_insert((0.0, 0));
                slot.0 += v;
                slot.1 += 1;
            }
        }

        let dev_metric = stopping_metric(&model, dev_set, cfg.restarts, &pool)?;
        history.push(EpochRecord {
            epoch,
            lr: opt.current_lr(),
            train_loss: loss_sum / train_set.len() as f64,
            components: comp_sums
                .into_iter()
                .map(|(k, (sum, n))| (k, sum / n as f64))
                .collect(),
            grad_norm_max,
            dev_metric,
        });

        if dev_metric > best_metric {
            best_metric = dev_metric;
            best_epoch = epoch;
            best_params = snapshot(&params);
        }

        if let Some(targets) = &cfg.stop_targets {
            if epoch % cfg.target_check_every == 0
                && targets_met(&model, train_set, targets, cfg.restarts, &pool)?
            {
                stop_reason = format!("targets met at epoch {epoch}");
                best_metric = dev_metric;
                best_epoch = epoch;
                keep_current = true;
                break;
            }
        }
        if epoch - best_epoch >= cfg.patience {
            stop_reason = format!(
                "no dev improvement in {} epochs (best epoch {best_epoch})",
                cfg.patience
            );
            break;
        }
    }

    if !keep_current {
        restore(&params, &best_params);
    }
    let manifest = RunManifest {
        config: cfg.clone(),
        seed,
        vocab_fingerprint,
        inputs,
        history,
        best_epoch,
        best_dev_metric: best_metric,
        stop_reason,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome { model, manifest })
}

/// One sentence's predicted structures.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub graph: UDSGraph,
    pub tree: Option<UDTree>,
    pub warnings: Vec<String>,
}

/// Decode every sentence; a structurally invalid rollout degrades to an
/// empty graph (plus the biaffine tree where one runs) instead of aborting
/// the corpus.
pub fn predict_corpus(model: &Model, corpus: &Corpus) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(corpus.len());
    for e in &corpus.entries {
        match generate_graph(model, &e.tree) {
            Ok(g) => out.push(Prediction {
                graph: g.graph,
                tree: g.tree,
                warnings: g.warnings,
            }),
            Err(err) => {
                log::warn!("decode of {:?} failed ({err}); scoring an empty graph", e.id);
                out.push(Prediction {
                    graph: UDSGraph::default(),
                    tree: parse_only(model, &e.tree)?,
                    warnings: vec![format!("decode failed: {err}")],
                });
            }
        }
    }
    Ok(out)
}

/// Attachment and S-scores of aligned predictions against gold. Attachment
/// is micro-averaged over the sentences with predicted trees; S-scores are
/// triple-count micro-averages over the sentences with gold graphs, in the
/// semantics-only and the syntax-included renderings. Works from stored
/// prediction files just as well as from a live model.
pub fn structural_report(
    preds: &[Prediction],
    gold: &Corpus,
    restarts: usize,
    seed: u64,
) -> Result<MetricsReport> {
    if preds.len() != gold.len() {
        return Err(Error::Validation(format!(
            "{} predictions vs {} gold sentences",
            preds.len(),
            gold.len()
        )));
    }
    let pool = RngPool::new(seed);

    let mut ptrees = Vec::new();
    let mut gtrees = Vec::new();
    for (p, e) in preds.iter().zip(&gold.entries) {
        if let Some(tree) = &p.tree {
            ptrees.push(tree.clone());
            gtrees.push(e.tree.clone());
        }
    }
    let (uas, las) = if ptrees.is_empty() {
        (0.0, 0.0)
    } else {
        corpus_uas_las(&ptrees, &gtrees)?
    };

    let mut sem_pairs: Vec<(TripleGraph, TripleGraph)> = Vec::new();
    let mut syn_pairs: Vec<(TripleGraph, TripleGraph)> = Vec::new();
    for (p, e) in preds.iter().zip(&gold.entries) {
        let Some(ggraph) = &e.graph else { continue };
        sem_pairs.push((
            TripleGraph::from_graph(&p.graph),
            TripleGraph::from_graph(ggraph),
        ));
        let Some(ptree) = &p.tree else { continue };
        let gold_tri =
            TripleGraph::from_arborescence(&uds_to_arborescence(ggraph, &e.tree, false)?, true);
        // A degraded predicted tree (extra roots, stray cycles) has no
        // arborescence; it contributes nothing matchable.
        let pred_tri = match uds_to_arborescence(&p.graph, ptree, false) {
            Ok(arb) => TripleGraph::from_arborescence(&arb, true),
            Err(err) => {
                log::warn!("syntax-included rendering of {:?} failed: {err}", e.id);
                TripleGraph::from_graph(&UDSGraph::default())
            }
        };
        syn_pairs.push((pred_tri, gold_tri));
    }
    let s_semantic = if sem_pairs.is_empty() {
        None
    } else {
        let mut rng = pool.stream("sscore-sem");
        Some(s_score_corpus(
            sem_pairs.iter().map(|(p, g)| (p, g)),
            restarts,
            &mut rng,
        ))
    };
    let s_syntactic = if syn_pairs.is_empty() {
        None
    } else {
        let mut rng = pool.stream("sscore-syn");
        Some(s_score_corpus(
            syn_pairs.iter().map(|(p, g)| (p, g)),
            restarts,
            &mut rng,
        ))
    };

    Ok(MetricsReport {
        n_sentences: gold.len(),
        uas,
        las,
        s_syntactic,
        s_semantic,
        node_attributes: BTreeMap::new(),
        edge_attributes: BTreeMap::new(),
    })
}

type PairTable = BTreeMap<String, Vec<(f64, f64)>>;

/// (predicted value, gold value) per attribute over the slots where gold
/// says the attribute applies, under teacher forcing.
fn attribute_pairs(model: &Model, corpus: &Corpus) -> Result<(PairTable, PairTable)> {
    let mut node: PairTable = BTreeMap::new();
    let mut edge: PairTable = BTreeMap::new();
    for e in corpus.semantic_entries() {
        let Some(out) = oracle_decode(model, e)? else {
            return Ok((node, edge));
        };
        let nw = out.node_attr_names.len();
        let ew = out.edge_attr_names.len();
        for i in 0..out.gold.len() {
            for (a, name) in out.node_attr_names.iter().enumerate() {
                if let Some(gv) = out.gold.node_attr(i, name) {
                    node.entry(name.clone())
                        .or_default()
                        .push((out.node_values[i * nw + a], gv));
                }
            }
            for (a, name) in out.edge_attr_names.iter().enumerate() {
                if let Some(gv) = out.gold.edge_attr(i, name) {
                    edge.entry(name.clone())
                        .or_default()
                        .push((out.edge_values[i * ew + a], gv));
                }
            }
        }
    }
    Ok((node, edge))
}

fn attr_table(test: &PairTable, dev: &PairTable) -> Result<BTreeMap<String, AttributeEval>> {
    let mut out = BTreeMap::new();
    for (name, tp) in test {
        if tp.is_empty() {
            continue;
        }
        let dp = match dev.get(name) {
            Some(v) if !v.is_empty() => v,
            _ => tp,
        };
        let th = tune_threshold_f1(dp, tp)?;
        if th.degenerate_dev {
            log::warn!("attribute {name}: single-class dev gold, threshold F1 is degenerate");
        }
        let (xs, ys): (Vec<f64>, Vec<f64>) = tp.iter().copied().unzip();
        let rho = pearson_rho(&xs, &ys)?;
        out.insert(
            name.clone(),
            AttributeEval {
                n: tp.len(),
                rho: rho.map(|(r, _)| r),
                p: rho.map(|(_, p)| p),
                theta: th.theta,
                dev_f1: th.dev_f1,
                test_f1: th.test_f1,
            },
        );
    }
    Ok(out)
}

/// Mean Pearson correlation over attribute types under teacher forcing;
/// None when no attribute has enough applicable gold slots to define one.
pub fn mean_oracle_rho(model: &Model, corpus: &Corpus) -> Result<Option<f64>> {
    let (node, edge) = attribute_pairs(model, corpus)?;
    let mut rhos = Vec::new();
    for pairs in node.values().chain(edge.values()) {
        let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        if let Some((r, _)) = pearson_rho(&xs, &ys)? {
            rhos.push(r);
        }
    }
    Ok(if rhos.is_empty() {
        None
    } else {
        Some(rhos.iter().sum::<f64>() / rhos.len() as f64)
    })
}

/// Full evaluation on `test`. Attribute thresholds are tuned on `dev` when
/// given (falling back per attribute when dev lacks it), on `test` itself
/// otherwise; correlations and test F1 always come from `test`.
pub fn evaluate_model(
    model: &Model,
    test: &Corpus,
    dev: Option<&Corpus>,
    restarts: usize,
    seed: u64,
) -> Result<MetricsReport> {
    test.validate()?;
    let preds = predict_corpus(model, test)?;
    let mut report = structural_report(&preds, test, restarts, seed)?;
    if model.config.mode.has_semantics() {
        let (tnode, tedge) = attribute_pairs(model, test)?;
        let (dnode, dedge) = match dev {
            Some(d) => {
                d.validate()?;
                attribute_pairs(model, d)?
            }
            None => (tnode.clone(), tedge.clone()),
        };
        report.node_attributes = attr_table(&tnode, &dnode)?;
        report.edge_attributes = attr_table(&tedge, &dedge)?;
    }
    Ok(report)
}

/// The random-search grid, one axis per searched hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub layers: Vec<usize>,
    pub k: Vec<f64>,
    pub heads: Vec<usize>,
    pub dropout: Vec<f64>,
    pub warmup: Vec<u64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            layers: vec![6, 8, 12],
            k: vec![4.0, 32.0, 128.0, 512.0],
            heads: vec![4, 8],
            dropout: vec![0.20, 0.33],
            warmup: vec![1000, 4000, 8000],
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, len) in [
            ("layers", self.layers.len()),
            ("k", self.k.len()),
            ("heads", self.heads.len()),
            ("dropout", self.dropout.len()),
            ("warmup", self.warmup.len()),
        ] {
            if len == 0 {
                return Err(Error::Config(format!("grid axis {name} is empty")));
            }
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.layers.len() * self.k.len() * self.heads.len() * self.dropout.len() * self.warmup.len()
    }

    /// Mixed-radix decoding of a flat index into one grid point.
    fn point(&self, mut i: usize) -> (usize, f64, usize, f64, u64) {
        let layers = self.layers[i % self.layers.len()];
        i /= self.layers.len();
        let k = self.k[i % self.k.len()];
        i /= self.k.len();
        let heads = self.heads[i % self.heads.len()];
        i /= self.heads.len();
        let dropout = self.dropout[i % self.dropout.len()];
        i /= self.dropout.len();
        let warmup = self.warmup[i % self.warmup.len()];
        (layers, k, heads, dropout, warmup)
    }

    pub fn apply(&self, index: usize, base: &TrainConfig) -> TrainConfig {
        let (layers, k, heads, dropout, warmup) = self.point(index);
        let mut cfg = base.clone();
        cfg.model.layers = layers;
        cfg.model.k = k;
        cfg.model.heads = heads;
        cfg.model.dropout = dropout;
        cfg.model.warmup = warmup;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRecord {
    pub replicant: usize,
    pub layers: usize,
    pub k: f64,
    pub heads: usize,
    pub dropout: f64,
    pub warmup: u64,
    pub seed: u64,
    pub dev_metric: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    /// Sorted by dev metric descending; ties keep replicant order.
    pub leaderboard: Vec<SearchRecord>,
    pub warning: Option<String>,
}

impl SearchOutcome {
    pub fn best(&self) -> Option<&SearchRecord> {
        self.leaderboard.first()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("leaderboard serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_tsv(&self) -> String {
        let mut out =
            String::from("rank\treplicant\tlayers\tk\theads\tdropout\twarmup\tseed\tdev_metric\tbest_epoch\n");
        for (rank, r) in self.leaderboard.iter().enumerate() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{}\n",
                rank + 1,
                r.replicant,
                r.layers,
                r.k,
                r.heads,
                r.dropout,
                r.warmup,
                r.seed,
                r.dev_metric,
                r.best_epoch
            ));
        }
        out
    }
}

/// Random search over the grid: distinct points drawn uniformly without
/// replacement while the grid is large enough, with replacement (and a
/// warning) otherwise. Every replicant trains to completion under its own
/// derived seed.
pub fn search(
    base: &TrainConfig,
    grid: &GridSpec,
    replicants: usize,
    train_set: &Corpus,
    dev_set: &Corpus,
    seed: u64,
) -> Result<SearchOutcome> {
    grid.validate()?;
    if replicants == 0 {
        return Err(Error::Config("search needs at least one replicant".into()));
    }
    let size = grid.size();
    let pool = RngPool::new(seed);
    let mut rng = pool.stream("search");
    let (indices, warning) = if replicants <= size {
        let mut all: Vec<usize> = (0..size).collect();
        all.shuffle(&mut rng);
        all.truncate(replicants);
        (all, None)
    } else {
        let w = format!(
            "{replicants} replicants over {size} distinct grid points; sampling with replacement"
        );
        log::warn!("{w}");
        let picks = (0..replicants).map(|_| rng.random_range(0..size)).collect();
        (picks, Some(w))
    };

    let mut leaderboard = Vec::with_capacity(replicants);
    for (r, &gi) in indices.iter().enumerate() {
        let cfg = grid.apply(gi, base);
        let run_seed: u64 = pool.stream_indexed("search-run", r as u64).random();
        let outcome = train(&cfg, train_set, dev_set, run_seed, BTreeMap::new())?;
        let (layers, k, heads, dropout, warmup) = grid.point(gi);
        leaderboard.push(SearchRecord {
            replicant: r,
            layers,
            k,
            heads,
            dropout,
            warmup,
            seed: run_seed,
            dev_metric: outcome.manifest.best_dev_metric,
            best_epoch: outcome.manifest.best_epoch,
        });
    }
    leaderboard.sort_by(|a, b| b.dev_metric.total_cmp(&a.dev_metric));
    Ok(SearchOutcome {
        leaderboard,
        warning,
    })
}
