//! Three-way pointer-generator head: every step either generates a vocab
//! symbol, copies a source token, or copies an earlier generated node.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::rng::RngPool;
use crate::tensor::{xavier_uniform, Tensor, MASK_NEG};

use super::config::ModelConfig;
use super::layers::{collect, strict_causal_mask, Linear};

#[derive(Debug, Clone)]
pub struct PointerGenerator {
    pub w_gen: Linear,
    pub w_src: Tensor,
    pub w_tgt: Tensor,
    pub w_switch: Linear,
}

/// Per-row probability blocks from a full teacher-forced pass.
#[derive(Debug, Clone)]
pub struct PointerOutputs {
    /// (m, 3): columns generate, source-copy, target-copy.
    pub switch: Tensor,
    /// (m, V) vocab distribution.
    pub gen: Tensor,
    /// (m, T) source token distribution.
    pub src: Tensor,
    /// (m, m): column j points at the node produced at step j+1. Row 0
    /// has no candidates and is inert (its switch mass is exactly zero).
    pub tgt: Tensor,
}

/// Gold supervision for one sequence. Wherever several candidates express
/// the same surface choice, the routes marginalize over all of them.
#[derive(Debug, Clone, Default)]
pub struct GoldRoutes {
    /// Vocab column per step; meaningful only where `gen_valid` is 1.
    pub gen_cols: Vec<usize>,
    pub gen_valid: Vec<f64>,
    /// (m, T) 0/1 indicator, row-major.
    pub src: Vec<f64>,
    /// (m, m) 0/1 indicator, row-major.
    pub tgt: Vec<f64>,
}

/// The three concatenated blocks of one step's predictive distribution,
/// already weighted by the switch.
#[derive(Debug, Clone)]
pub struct StepMixture {
    pub gen: Vec<f64>,
    pub src: Vec<f64>,
    pub tgt: Vec<f64>,
}

impl PointerGenerator {
    pub fn new(cfg: &ModelConfig, vocab_size: usize, pool: &RngPool) -> PointerGenerator {
        let d = cfg.d_s;
        let t = |part: &str| xavier_uniform(d, d, &mut pool.stream(&format!("init.pointer.{part}")));
        PointerGenerator {
            w_gen: Linear::new(d, vocab_size, pool, "pointer.w_gen"),
            w_src: t("w_src"),
            w_tgt: t("w_tgt"),
            w_switch: Linear::new(d, 3, pool, "pointer.w_switch"),
        }
    }

    /// Switch mask: target-copy is impossible while no node exists yet.
    fn switch_mask(m: usize) -> Tensor {
        let mut data = vec![0.0; m * 3];
        data[2] = MASK_NEG;
        Tensor::constant(m, 3, data)
    }

    /// All steps at once against the full z matrix; target-copy scores use
    /// a strict causal mask so step s sees only nodes from steps < s.
    pub fn forward(&self, z: &Tensor, src_mem: &Tensor) -> Result<PointerOutputs> {
        let m = z.rows();
        let switch = self
            .w_switch
            .forward(z)?
            .masked_softmax(Some(&Self::switch_mask(m)))?;
        let gen = self.w_gen.forward(z)?.masked_softmax(None)?;
        let src = z
            .matmul(&self.w_src)?
            .matmul(&src_mem.transpose())?
            .masked_softmax(None)?;
        let tgt = z
            .matmul(&self.w_tgt)?
            .matmul(&z.transpose())?
            .masked_softmax(Some(&strict_causal_mask(m, m)))?;
        Ok(PointerOutputs { switch, gen, src, tgt })
    }

    /// One step for incremental decoding. `prior_z` holds the z rows of the
    /// steps already taken (None at step 0).
    pub fn step(
        &self,
        z_row: &Tensor,
        src_mem: &Tensor,
        prior_z: Option<&Tensor>,
    ) -> Result<StepMixture> {
        let mask = if prior_z.is_none() {
            Some(Self::switch_mask(1))
        } else {
            None
        };
        let switch = self
            .w_switch
            .forward(z_row)?
            .masked_softmax(mask.as_ref())?;
        let (p_gen, p_src, p_tgt) = (switch.get(0, 0), switch.get(0, 1), switch.get(0, 2));
        let gen = self.w_gen.forward(z_row)?.masked_softmax(None)?;
        let src = z_row
            .matmul(&self.w_src)?
            .matmul(&src_mem.transpose())?
            .masked_softmax(None)?;
        let tgt = match prior_z {
            Some(prev) => z_row
                .matmul(&self.w_tgt)?
                .matmul(&prev.transpose())?
                .masked_softmax(None)?
                .to_vec()
                .iter()
                .map(|p| p * p_tgt)
                .collect(),
            None => Vec::new(),
        };
        Ok(StepMixture {
            gen: gen.to_vec().iter().map(|p| p * p_gen).collect(),
            src: src.to_vec().iter().map(|p| p * p_src).collect(),
            tgt,
        })
    }

    /// Negative mean log-likelihood of the gold routes, marginalized over
    /// every candidate the routes mark.
    pub fn loss(&self, outs: &PointerOutputs, routes: &GoldRoutes) -> Result<Tensor> {
        let (m, t) = outs.src.shape();
        let p_gen = outs.switch.slice(0, m, 0, 1)?;
        let p_src = outs.switch.slice(0, m, 1, 2)?;
        let p_tgt = outs.switch.slice(0, m, 2, 3)?;
        let gen_valid = Tensor::constant(m, 1, routes.gen_valid.clone());
        let gen_mass = outs
            .gen
            .pick(&routes.gen_cols)?
            .mul(&gen_valid)?
            .mul(&p_gen)?;
        let src_ind = Tensor::constant(m, t, routes.src.clone());
        let src_mass = outs.src.mul(&src_ind)?.row_sum().mul(&p_src)?;
        let tgt_ind = Tensor::constant(m, m, routes.tgt.clone());
        let tgt_mass = outs.tgt.mul(&tgt_ind)?.row_sum().mul(&p_tgt)?;
        let total = gen_mass.add(&src_mass)?.add(&tgt_mass)?;
        Ok(total.log().scale(-1.0).mean())
    }

    pub fn params(&self, out: &mut BTreeMap<String, Tensor>) {
        self.w_gen.params("pointer.w_gen", out);
        collect(out, "pointer.w_src", &self.w_src);
        collect(out, "pointer.w_tgt", &self.w_tgt);
        self.w_switch.params("pointer.w_switch", out);
    }
}
