//! Biaffine dependency scoring over encoder states, and the fusion layer
//! that folds the predicted parse back into token representations.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::rng::RngPool;
use crate::tensor::{xavier_uniform, Axis, Tensor, MASK_NEG};

use super::config::ModelConfig;
use super::layers::{collect, Linear};

/// score(dep i, head j) = d_i U h_j + w h_j, evaluated for every pair plus
/// a learned ROOT head at column 0.
#[derive(Debug, Clone)]
pub struct BiaffineScorer {
    pub dep_mlp: Linear,
    pub head_mlp: Linear,
    pub root_head: Tensor,
    pub arc_u: Tensor,
    pub arc_bias: Tensor,
    pub type_dep_mlp: Linear,
    pub type_head_mlp: Linear,
    pub root_type: Tensor,
    pub label_u: Tensor,
    pub label_wh: Tensor,
    pub label_wd: Tensor,
    pub label_b: Tensor,
    d_t: usize,
}

impl BiaffineScorer {
    pub fn new(
        d_in: usize,
        d_h: usize,
        d_t: usize,
        n_labels: usize,
        pool: &RngPool,
        name: &str,
    ) -> BiaffineScorer {
        let t = |part: &str, r: usize, c: usize| {
            xavier_uniform(r, c, &mut pool.stream(&format!("init.{name}.{part}")))
        };
        BiaffineScorer {
            dep_mlp: Linear::new(d_in, d_h, pool, &format!("{name}.dep_mlp")),
            head_mlp: Linear::new(d_in, d_h, pool, &format!("{name}.head_mlp")),
            root_head: t("root_head", 1, d_h),
            arc_u: t("arc_u", d_h, d_h),
            arc_bias: t("arc_bias", d_h, 1),
            type_dep_mlp: Linear::new(d_in, d_t, pool, &format!("{name}.type_dep_mlp")),
            type_head_mlp: Linear::new(d_in, d_t, pool, &format!("{name}.type_head_mlp")),
            root_type: t("root_type", 1, d_t),
            label_u: t("label_u", d_t, n_labels * d_t),
            label_wh: t("label_wh", d_t, n_labels),
            label_wd: t("label_wd", d_t, n_labels),
            label_b: Tensor::param(1, n_labels, vec![0.0; n_labels]),
            d_t,
        }
    }

    /// Dependent representations (rows of `deps`) scored against head
    /// candidates `[root; heads rows]`; returns the pieces downstream
    /// consumers need.
    pub fn score(&self, deps: &Tensor, heads: &Tensor) -> Result<BiaffineScores> {
        self.score_against(deps, Some(heads))
    }

    /// Like [`score`](Self::score), but `heads` None leaves the learned
    /// root as the only candidate (the first step of incremental decoding
    /// has nothing else to attach to).
    pub fn score_against(&self, deps: &Tensor, heads: Option<&Tensor>) -> Result<BiaffineScores> {
        let dep_h = self.dep_mlp.forward(deps)?.relu();
        let head_all = match heads {
            Some(h) => Tensor::concat(
                &[self.root_head.clone(), self.head_mlp.forward(h)?.relu()],
                Axis::Rows,
            )?,
            None => self.root_head.clone(),
        };
        let scores = dep_h.matmul(&self.arc_u)?.matmul(&head_all.transpose())?;
        let bias = head_all.matmul(&self.arc_bias)?.transpose();
        let head_scores = scores.add(&bias)?;
        let dep_t = self.type_dep_mlp.forward(deps)?.relu();
        let type_all = match heads {
            Some(h) => Tensor::concat(
                &[self.root_type.clone(), self.type_head_mlp.forward(h)?.relu()],
                Axis::Rows,
            )?,
            None => self.root_type.clone(),
        };
        Ok(BiaffineScores {
            head_scores,
            head_all,
            type_all,
            dep_t,
        })
    }

    /// Label logits for each dependent paired with its chosen head
    /// (candidate index, 0 = root). One (n, labels) matrix.
    pub fn label_logits_at(&self, s: &BiaffineScores, head_ids: &[usize]) -> Result<Tensor> {
        let g = s.type_all.embed(head_ids)?;
        let z = s.dep_t.matmul(&self.label_u)?;
        let n_labels = self.label_b.cols();
        let mut cols = Vec::with_capacity(n_labels);
        for l in 0..n_labels {
            let zl = z.slice(0, z.rows(), l * self.d_t, (l + 1) * self.d_t)?;
            cols.push(zl.mul(&g)?.row_sum());
        }
        Tensor::concat(&cols, Axis::Cols)?
            .add(&g.matmul(&self.label_wh)?)?
            .add(&s.dep_t.matmul(&self.label_wd)?)?
            .add(&self.label_b)
    }

    pub fn params(&self, prefix: &str, out: &mut BTreeMap<String, Tensor>) {
        self.dep_mlp.params(&format!("{prefix}.dep_mlp"), out);
        self.head_mlp.params(&format!("{prefix}.head_mlp"), out);
        collect(out, &format!("{prefix}.root_head"), &self.root_head);
        collect(out, &format!("{prefix}.arc_u"), &self.arc_u);
        collect(out, &format!("{prefix}.arc_bias"), &self.arc_bias);
        self.type_dep_mlp.params(&format!("{prefix}.type_dep_mlp"), out);
        self.type_head_mlp.params(&format!("{prefix}.type_head_mlp"), out);
        collect(out, &format!("{prefix}.root_type"), &self.root_type);
        collect(out, &format!("{prefix}.label_u"), &self.label_u);
        collect(out, &format!("{prefix}.label_wh"), &self.label_wh);
        collect(out, &format!("{prefix}.label_wd"), &self.label_wd);
        collect(out, &format!("{prefix}.label_b"), &self.label_b);
    }
}

#[derive(Debug, Clone)]
pub struct BiaffineScores {
    /// (n, n_candidates+1); column 0 is ROOT. Masking is the caller's.
    pub head_scores: Tensor,
    pub head_all: Tensor,
    pub type_all: Tensor,
    pub dep_t: Tensor,
}

/// The syntactic parse of one sentence: every token scored against every
/// head candidate, self-attachment masked out.
#[derive(Debug, Clone)]
pub struct SyntacticParse {
    pub scores: BiaffineScores,
    /// head_scores with the self-attachment mask applied, (T, T+1).
    pub head_scores: Tensor,
}

impl SyntacticParse {
    pub fn score_rows(&self) -> Vec<Vec<f64>> {
        let (t, w) = self.head_scores.shape();
        let v = self.head_scores.to_vec();
        (0..t).map(|i| v[i * w..(i + 1) * w].to_vec()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SyntacticBiaffine {
    pub scorer: BiaffineScorer,
}

impl SyntacticBiaffine {
    pub fn new(cfg: &ModelConfig, n_relations: usize, pool: &RngPool) -> SyntacticBiaffine {
        SyntacticBiaffine {
            scorer: BiaffineScorer::new(
                cfg.d_s,
                cfg.d_h,
                cfg.d_t,
                n_relations,
                pool,
                "syntactic_biaffine",
            ),
        }
    }

    pub fn forward(&self, enc: &Tensor) -> Result<SyntacticParse> {
        let t = enc.rows();
        let scores = self.scorer.score(enc, enc)?;
        let mut mask = vec![0.0; t * (t + 1)];
        for i in 0..t {
            mask[i * (t + 1) + i + 1] = MASK_NEG;
        }
        let head_scores = scores.head_scores.add(&Tensor::constant(t, t + 1, mask))?;
        Ok(SyntacticParse { scores, head_scores })
    }

    pub fn params(&self, out: &mut BTreeMap<String, Tensor>) {
        self.scorer.params("syntactic_biaffine", out);
    }
}

/// s'_i = [s_i; H'_i; T'_i] W, where H' and T' average head-MLP and type-MLP
/// rows under each token's head distribution (ROOT row included).
#[derive(Debug, Clone)]
pub struct Fusion {
    pub w: Tensor,
}

impl Fusion {
    pub fn new(cfg: &ModelConfig, pool: &RngPool) -> Fusion {
        Fusion {
            w: xavier_uniform(
                cfg.d_s + cfg.d_h + cfg.d_t,
                cfg.d_s,
                &mut pool.stream("init.fusion.w"),
            ),
        }
    }

    pub fn forward(&self, enc: &Tensor, parse: &SyntacticParse) -> Result<Tensor> {
        let p = parse.head_scores.masked_softmax(None)?;
        let h = p.matmul(&parse.scores.head_all)?;
        let t = p.matmul(&parse.scores.type_all)?;
        Tensor::concat(&[enc.clone(), h, t], Axis::Cols)?.matmul(&self.w)
    }

    pub fn params(&self, out: &mut BTreeMap<String, Tensor>) {
        collect(out, "fusion.w", &self.w);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoding::greedy_heads;

    fn scorer_fixture(t: usize, d: usize) -> (SyntacticBiaffine, Tensor) {
        let cfg = ModelConfig {
            d_s: d,
            d_h: 8,
            d_t: 6,
            ..Default::default()
        };
        let pool = RngPool::new(21);
        let biaffine = SyntacticBiaffine::new(&cfg, 5, &pool);
        let enc = xavier_uniform(t, d, &mut pool.stream("enc"));
        (biaffine, enc)
    }

    #[test]
    fn single_token_always_attaches_to_root() {
        let (biaffine, enc) = scorer_fixture(1, 12);
        let parse = biaffine.forward(&enc).unwrap();
        assert_eq!(parse.head_scores.shape(), (1, 2));
        let heads = greedy_heads(&parse.score_rows());
        assert_eq!(heads, vec![0]);
    }

    #[test]
    fn greedy_decode_matches_bruteforce_argmax() {
        let (biaffine, enc) = scorer_fixture(6, 12);
        let parse = biaffine.forward(&enc).unwrap();
        let rows = parse.score_rows();
        let heads = greedy_heads(&rows);
        for (i, row) in rows.iter().enumerate() {
            let best = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(heads[i], best);
            assert!(row[i + 1] <= MASK_NEG / 2.0);
        }
    }

    #[test]
    fn self_attachment_is_never_chosen() {
        for seed in 0..10 {
            let cfg = ModelConfig {
                d_s: 8,
                d_h: 4,
                d_t: 4,
                ..Default::default()
            };
            let pool = RngPool::new(seed);
            let biaffine = SyntacticBiaffine::new(&cfg, 3, &pool);
            let enc = xavier_uniform(5, 8, &mut pool.stream("enc"));
            let parse = biaffine.forward(&enc).unwrap();
            let heads = greedy_heads(&parse.score_rows());
            for (i, &h) in heads.iter().enumerate() {
                assert_ne!(h, i + 1);
            }
        }
    }

    #[test]
    fn label_logits_shape_tracks_heads() {
        let (biaffine, enc) = scorer_fixture(4, 12);
        let parse = biaffine.forward(&enc).unwrap();
        let logits = biaffine
            .scorer
            .label_logits_at(&parse.scores, &[0, 1, 2, 1])
            .unwrap();
        assert_eq!(logits.shape(), (4, 5));
        // Different head, different logits.
        let other = biaffine
            .scorer
            .label_logits_at(&parse.scores, &[2, 1, 2, 1])
            .unwrap();
        assert_ne!(logits.to_vec()[..5], other.to_vec()[..5]);
        assert_eq!(logits.to_vec()[5..], other.to_vec()[5..]);
    }

    fn one_hot_parse(parse: &SyntacticParse, t: usize, heads: &[usize]) -> SyntacticParse {
        let w = t + 1;
        let mut data = vec![MASK_NEG; t * w];
        for (i, &h) in heads.iter().enumerate() {
            data[i * w + h] = 0.0;
        }
        SyntacticParse {
            scores: parse.scores.clone(),
            head_scores: Tensor::constant(t, w, data),
        }
    }

    #[test]
    fn one_hot_fusion_selects_exact_head_rows() {
        let cfg = ModelConfig {
            d_s: 12,
            d_h: 8,
            d_t: 6,
            ..Default::default()
        };
        let pool = RngPool::new(5);
        let biaffine = SyntacticBiaffine::new(&cfg, 4, &pool);
        let fusion = Fusion::new(&cfg, &pool);
        let enc = xavier_uniform(3, 12, &mut pool.stream("enc"));
        let parse = biaffine.forward(&enc).unwrap();
        let heads = [2usize, 0, 2];
        let forced = one_hot_parse(&parse, 3, &heads);
        let fused = fusion.forward(&enc, &forced).unwrap();
        assert_eq!(fused.shape(), (3, 12));
        // Recompute by picking head rows directly.
        let head_all = parse.scores.head_all.to_vec();
        let type_all = parse.scores.type_all.to_vec();
        let (dh, dt) = (8, 6);
        let mut manual = Vec::new();
        for (i, &h) in heads.iter().enumerate() {
            let mut row = enc.to_vec()[i * 12..(i + 1) * 12].to_vec();
            row.extend_from_slice(&head_all[h * dh..(h + 1) * dh]);
            row.extend_from_slice(&type_all[h * dt..(h + 1) * dt]);
            manual.extend_from_slice(&row);
        }
        let expect = Tensor::constant(3, 26, manual).matmul(&fusion.w).unwrap();
        for (a, b) in fused.to_vec().iter().zip(expect.to_vec()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn uniform_rows_average_head_columns() {
        let cfg = ModelConfig {
            d_s: 10,
            d_h: 4,
            d_t: 4,
            ..Default::default()
        };
        let pool = RngPool::new(6);
        let biaffine = SyntacticBiaffine::new(&cfg, 4, &pool);
        let fusion = Fusion::new(&cfg, &pool);
        let enc = xavier_uniform(2, 10, &mut pool.stream("enc"));
        let parse = biaffine.forward(&enc).unwrap();
        let uniform = SyntacticParse {
            scores: parse.scores.clone(),
            head_scores: Tensor::constant(2, 3, vec![0.0; 6]),
        };
        let p = uniform.head_scores.masked_softmax(None).unwrap();
        for v in p.to_vec() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let fused = fusion.forward(&enc, &uniform).unwrap();
        // H' rows equal the column mean of head_all.
        let head_all = parse.scores.head_all.to_vec();
        let mean: Vec<f64> = (0..4)
            .map(|c| (0..3).map(|r| head_all[r * 4 + c]).sum::<f64>() / 3.0)
            .collect();
        let concat_row0: Vec<f64> = {
            let mut row = enc.to_vec()[..10].to_vec();
            row.extend_from_slice(&mean);
            let type_all = parse.scores.type_all.to_vec();
            let tmean: Vec<f64> = (0..4)
                .map(|c| (0..3).map(|r| type_all[r * 4 + c]).sum::<f64>() / 3.0)
                .collect();
            row.extend_from_slice(&tmean);
            row
        };
        let expect = Tensor::constant(1, 18, concat_row0).matmul(&fusion.w).unwrap();
        for (a, b) in fused.to_vec()[..10].iter().zip(expect.to_vec()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn fusion_matches_loop_oracle() {
        let cfg = ModelConfig {
            d_s: 12,
            d_h: 8,
            d_t: 6,
            ..Default::default()
        };
        let pool = RngPool::new(77);
        let biaffine = SyntacticBiaffine::new(&cfg, 4, &pool);
        let fusion = Fusion::new(&cfg, &pool);
        let enc = xavier_uniform(5, 12, &mut pool.stream("enc"));
        let parse = biaffine.forward(&enc).unwrap();
        let fused = fusion.forward(&enc, &parse).unwrap();

        // Naive recomputation with explicit loops.
        let p = parse.head_scores.masked_softmax(None).unwrap().to_vec();
        let head_all = parse.scores.head_all.to_vec();
        let type_all = parse.scores.type_all.to_vec();
        let w = fusion.w.to_vec();
        let (t, dh, dt, ds) = (5usize, 8usize, 6usize, 12usize);
        let din = ds + dh + dt;
        for i in 0..t {
            let mut cat = enc.to_vec()[i * ds..(i + 1) * ds].to_vec();
            for c in 0..dh {
                cat.push((0..=t).map(|j| p[i * (t + 1) + j] * head_all[j * dh + c]).sum());
            }
            for c in 0..dt {
                cat.push((0..=t).map(|j| p[i * (t + 1) + j] * type_all[j * dt + c]).sum());
            }
            for c in 0..ds {
                let manual: f64 = (0..din).map(|r| cat[r] * w[r * ds + c]).sum();
                assert!((manual - fused.get(i, c)).abs() < 1e-12);
            }
        }
    }
}
