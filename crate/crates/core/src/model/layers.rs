//! Building blocks shared by the encoder and decoder.

use std::collections::BTreeMap;

use rand_chacha::ChaCha20Rng;

use crate::error::Result;
use crate::rng::RngPool;
use crate::tensor::{init_scaled, xavier_uniform, Axis, Tensor, MASK_NEG};

/// Feature index tables cover positions up to here; longer sequences clamp.
pub const MAX_POSITIONS: usize = 512;

pub fn collect(out: &mut BTreeMap<String, Tensor>, name: &str, t: &Tensor) {
    out.insert(name.to_string(), t.clone());
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn new(d_in: usize, d_out: usize, pool: &RngPool, name: &str) -> Linear {
        Linear {
            w: xavier_uniform(d_in, d_out, &mut pool.stream(&format!("init.{name}.w"))),
            b: Tensor::param(1, d_out, vec![0.0; d_out]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.w)?.add(&self.b)
    }

    pub fn params(&self, prefix: &str, out: &mut BTreeMap<String, Tensor>) {
        collect(out, &format!("{prefix}.w"), &self.w);
        collect(out, &format!("{prefix}.b"), &self.b);
    }
}

/// Multi-head scaled dot-product attention over 2-D tensors; heads live in
/// column blocks of width d/H.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(d: usize, heads: usize, k: f64, pool: &RngPool, name: &str) -> Result<Self> {
        let mk = |part: &str| -> Result<Tensor> {
            init_scaled(d, d, k, &mut pool.stream(&format!("init.{name}.{part}")))
        };
        Ok(MultiHeadAttention {
            wq: mk("wq")?,
            wk: mk("wk")?,
            wv: mk("wv")?,
            wo: mk("wo")?,
            heads,
        })
    }

    pub fn project_kv(&self, m: &Tensor) -> Result<(Tensor, Tensor)> {
        Ok((m.matmul(&self.wk)?, m.matmul(&self.wv)?))
    }

    /// Attend from `q_rows` over already-projected keys/values. `mask` is
    /// additive, shape (q_rows, k_rows).
    pub fn attend(
        &self,
        q_rows: &Tensor,
        k: &Tensor,
        v: &Tensor,
        mask: Option<&Tensor>,
    ) -> Result<Tensor> {
        let q = q_rows.matmul(&self.wq)?;
        let dh = q.cols() / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut parts = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = q.slice(0, q.rows(), h * dh, (h + 1) * dh)?;
            let kh = k.slice(0, k.rows(), h * dh, (h + 1) * dh)?;
            let vh = v.slice(0, v.rows(), h * dh, (h + 1) * dh)?;
            let scores = qh.matmul(&kh.transpose())?.scale(scale);
            let attn = scores.masked_softmax(mask)?;
            parts.push(attn.matmul(&vh)?);
        }
        Tensor::concat(&parts, Axis::Cols)?.matmul(&self.wo)
    }

    pub fn params(&self, prefix: &str, out: &mut BTreeMap<String, Tensor>) {
        collect(out, &format!("{prefix}.wq"), &self.wq);
        collect(out, &format!("{prefix}.wk"), &self.wk);
        collect(out, &format!("{prefix}.wv"), &self.wv);
        collect(out, &format!("{prefix}.wo"), &self.wo);
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub w1: Linear,
    pub w2: Linear,
}

impl FeedForward {
    pub fn new(d: usize, pool: &RngPool, name: &str) -> FeedForward {
        FeedForward {
            w1: Linear::new(d, 2 * d, pool, &format!("{name}.w1")),
            w2: Linear::new(2 * d, d, pool, &format!("{name}.w2")),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.w2.forward(&self.w1.forward(x)?.relu())
    }

    pub fn params(&self, prefix: &str, out: &mut BTreeMap<String, Tensor>) {
        self.w1.params(&format!("{prefix}.w1"), out);
        self.w2.params(&format!("{prefix}.w2"), out);
    }
}

/// ScaleNorm gain, initialized to sqrt(d).
pub fn norm_gain(d: usize) -> Tensor {
    Tensor::param(1, 1, vec![(d as f64).sqrt()])
}

/// Row i of the standard sinusoidal position signal. Computed per row so
/// batched and incremental passes see bit-identical values.
pub fn sinusoid_row(pos: usize, d: usize) -> Vec<f64> {
    let mut row = vec![0.0; d];
    for i in 0..d / 2 {
        let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / d as f64);
        row[2 * i] = (pos as f64 * freq).sin();
        row[2 * i + 1] = (pos as f64 * freq).cos();
    }
    if d % 2 == 1 {
        let i = d / 2;
        let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / d as f64);
        row[d - 1] = (pos as f64 * freq).sin();
    }
    row
}

/// Positions `offset .. offset + n` stacked into an (n, d) constant.
pub fn sinusoid(n: usize, d: usize, offset: usize) -> Tensor {
    let mut data = Vec::with_capacity(n * d);
    for p in 0..n {
        data.extend_from_slice(&sinusoid_row(offset + p, d));
    }
    Tensor::constant(n, d, data)
}

/// Additive mask letting row i see columns j <= i.
pub fn causal_mask(n: usize) -> Tensor {
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            data[i * n + j] = MASK_NEG;
        }
    }
    Tensor::constant(n, n, data)
}

/// Additive mask letting row i see columns j < i (row 0 sees nothing).
pub fn strict_causal_mask(rows: usize, cols: usize) -> Tensor {
    let mut data = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in i..cols {
            data[i * cols + j] = MASK_NEG;
        }
    }
    Tensor::constant(rows, cols, data)
}

/// Dropout that is a no-op out of training; thin wrapper to keep call sites
/// short.
pub fn drop(x: Tensor, p: f64, rng: &mut ChaCha20Rng, train: bool) -> Result<Tensor> {
    x.dropout(p, rng, train)
}
