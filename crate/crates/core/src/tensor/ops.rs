//! Forward implementations of the op set and the backward dispatch.

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use super::{Op, Tensor};
use crate::error::{Error, Result};

/// Additive mask value standing in for -inf. Finite so that sums and maxima
/// stay NaN-free; exp(MASK_NEG - max) underflows to exactly 0.
pub const MASK_NEG: f64 = -1e30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape(),
        rhs: b.shape(),
    }
}

impl Tensor {
    pub fn from_rows(rows: &[Vec<f64>]) -> Tensor {
        let r = rows.len();
        let c = rows.first().map_or(0, |v| v.len());
        debug_assert!(rows.iter().all(|v| v.len() == c));
        Tensor::constant(r, c, rows.concat())
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols() != other.rows() {
            return Err(shape_err("matmul", self, other));
        }
        let (m, k) = self.shape();
        let n = other.cols();
        let a = self.value();
        let b = other.value();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = a[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += aip * brow[j];
                }
            }
        }
        drop(a);
        drop(b);
        let rg = self.requires_grad() || other.requires_grad();
        Ok(Tensor::make(m, n, out, rg, Op::Matmul(self.clone(), other.clone())))
    }

    /// Elementwise sum. `other` may be (1, c): one row added to every row.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let (m, c) = self.shape();
        let out = if other.shape() == (m, c) {
            let a = self.value();
            let b = other.value();
            a.iter().zip(b.iter()).map(|(x, y)| x + y).collect()
        } else if other.shape() == (1, c) {
            let a = self.value();
            let b = other.value();
            let mut out = Vec::with_capacity(m * c);
            for i in 0..m {
                for j in 0..c {
                    out.push(a[i * c + j] + b[j]);
                }
            }
            out
        } else {
            return Err(shape_err("add", self, other));
        };
        let rg = self.requires_grad() || other.requires_grad();
        Ok(Tensor::make(m, c, out, rg, Op::Add(self.clone(), other.clone())))
    }

    /// Elementwise product. One side may be (m, 1) (broadcast over columns)
    /// or (1, 1) (scalar) while the other is full.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        // Canonical order: full operand first. Elementwise product commutes.
        let (a, b) = if self.shape() == other.shape() || self.len() >= other.len() {
            (self, other)
        } else {
            (other, self)
        };
        let (m, c) = a.shape();
        let av = a.value();
        let bv = b.value();
        let out: Vec<f64> = if b.shape() == (m, c) {
            av.iter().zip(bv.iter()).map(|(x, y)| x * y).collect()
        } else if b.shape() == (m, 1) {
            let mut out = Vec::with_capacity(m * c);
            for i in 0..m {
                for j in 0..c {
                    out.push(av[i * c + j] * bv[i]);
                }
            }
            out
        } else if b.shape() == (1, 1) {
            av.iter().map(|x| x * bv[0]).collect()
        } else {
            return Err(shape_err("multiply", a, b));
        };
        drop(av);
        drop(bv);
        let rg = a.requires_grad() || b.requires_grad();
        Ok(Tensor::make(m, c, out, rg, Op::Mul(a.clone(), b.clone())))
    }

    pub fn concat(parts: &[Tensor], axis: Axis) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::Validation("concat of zero tensors".into()));
        }
        let rg = parts.iter().any(|t| t.requires_grad());
        match axis {
            Axis::Rows => {
                let c = parts[0].cols();
                if let Some(bad) = parts.iter().find(|t| t.cols() != c) {
                    return Err(shape_err("concat", &parts[0], bad));
                }
                let rows = parts.iter().map(|t| t.rows()).sum();
                let mut out = Vec::with_capacity(rows * c);
                for t in parts {
                    out.extend_from_slice(&t.value());
                }
                Ok(Tensor::make(rows, c, out, rg, Op::ConcatRows(parts.to_vec())))
            }
            Axis::Cols => {
                let m = parts[0].rows();
                if let Some(bad) = parts.iter().find(|t| t.rows() != m) {
                    return Err(shape_err("concat", &parts[0], bad));
                }
                let cols: usize = parts.iter().map(|t| t.cols()).sum();
                let mut out = Vec::with_capacity(m * cols);
                for i in 0..m {
                    for t in parts {
                        let c = t.cols();
                        out.extend_from_slice(&t.value()[i * c..(i + 1) * c]);
                    }
                }
                Ok(Tensor::make(m, cols, out, rg, Op::ConcatCols(parts.to_vec())))
            }
        }
    }

    /// Copy of the half-open block [r0, r1) x [c0, c1).
    pub fn slice(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> Result<Tensor> {
        if r0 >= r1 || c0 >= c1 || r1 > self.rows() || c1 > self.cols() {
            return Err(Error::Validation(format!(
                "slice [{r0}, {r1}) x [{c0}, {c1}) out of bounds for shape {:?}",
                self.shape()
            )));
        }
        let (m, n) = (r1 - r0, c1 - c0);
        let v = self.value();
        let cols = self.cols();
        let mut out = Vec::with_capacity(m * n);
        for i in r0..r1 {
            out.extend_from_slice(&v[i * cols + c0..i * cols + c1]);
        }
        drop(v);
        Ok(Tensor::make(
            m,
            n,
            out,
            self.requires_grad(),
            Op::Slice {
                x: self.clone(),
                r0,
                c0,
            },
        ))
    }

    pub fn row(&self, r: usize) -> Result<Tensor> {
        self.slice(r, r + 1, 0, self.cols())
    }

    /// Rows of an embedding table: out[i] = self[ids[i], :].
    pub fn embed(&self, ids: &[usize]) -> Result<Tensor> {
        let (v_rows, d) = self.shape();
        if let Some(&bad) = ids.iter().find(|&&i| i >= v_rows) {
            return Err(Error::Validation(format!(
                "embedding id {bad} out of range for table with {v_rows} rows"
            )));
        }
        let table = self.value();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&table[i * d..(i + 1) * d]);
        }
        drop(table);
        Ok(Tensor::make(
            ids.len(),
            d,
            out,
            self.requires_grad(),
            Op::Embed {
                table: self.clone(),
                ids: ids.to_vec(),
            },
        ))
    }

    /// Row-wise softmax after adding `mask` (same shape, typically 0 or
    /// [`MASK_NEG`]). Masked positions come out exactly 0.
    pub fn masked_softmax(&self, mask: Option<&Tensor>) -> Result<Tensor> {
        let (m, n) = self.shape();
        if let Some(mk) = mask {
            if mk.shape() != (m, n) {
                return Err(shape_err("softmax", self, mk));
            }
        }
        let x = self.value();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let masked: Vec<f64> = match mask {
                Some(mk) => {
                    let mv = mk.value();
                    row.iter()
                        .zip(&mv[i * n..(i + 1) * n])
                        .map(|(a, b)| a + b)
                        .collect()
                }
                None => row.to_vec(),
            };
            let mx = masked.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &v) in orow.iter_mut().zip(&masked) {
                *o = (v - mx).exp();
                sum += *o;
            }
            for o in orow.iter_mut() {
                *o /= sum;
            }
        }
        drop(x);
        Ok(Tensor::make(
            m,
            n,
            out,
            self.requires_grad(),
            Op::Softmax(self.clone()),
        ))
    }

    /// Natural log, elementwise. Inputs must be positive.
    pub fn log(&self) -> Tensor {
        let out = self.value().iter().map(|v| v.ln()).collect();
        Tensor::make(
            self.rows(),
            self.cols(),
            out,
            self.requires_grad(),
            Op::Log(self.clone()),
        )
    }

    /// Mean over all entries, as a scalar.
    pub fn mean(&self) -> Tensor {
        let v = self.value();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        drop(v);
        Tensor::make(1, 1, vec![m], self.requires_grad(), Op::Mean(self.clone()))
    }

    /// ScaleNorm: out[i, :] = g * x[i, :] / ||x[i, :]||_2 with learned scalar
    /// g as a (1, 1) tensor. All-zero rows map to zero.
    pub fn scalenorm(&self, g: &Tensor) -> Result<Tensor> {
        if g.shape() != (1, 1) {
            return Err(shape_err("scalenorm", self, g));
        }
        let (m, n) = self.shape();
        let x = self.value();
        let gv = g.item();
        let mut norms = Vec::with_capacity(m);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-30);
            norms.push(norm);
            for (o, &v) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                *o = gv * v / norm;
            }
        }
        drop(x);
        let rg = self.requires_grad() || g.requires_grad();
        Ok(Tensor::make(
            m,
            n,
            out,
            rg,
            Op::ScaleNorm {
                x: self.clone(),
                g: g.clone(),
                norms,
            },
        ))
    }

    /// Inverted dropout: at train time each entry is zeroed with probability
    /// p and survivors are scaled by 1/(1-p); at eval time identity.
    pub fn dropout(&self, p: f64, rng: &mut ChaCha20Rng, train: bool) -> Result<Tensor> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout rate {p} outside [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(self.clone());
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let out = self
            .value()
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        Ok(Tensor::make(
            self.rows(),
            self.cols(),
            out,
            self.requires_grad(),
            Op::Dropout {
                x: self.clone(),
                mask,
            },
        ))
    }

    pub fn relu(&self) -> Tensor {
        let out = self.value().iter().map(|v| v.max(0.0)).collect();
        Tensor::make(
            self.rows(),
            self.cols(),
            out,
            self.requires_grad(),
            Op::Relu(self.clone()),
        )
    }

    pub fn sigmoid(&self) -> Tensor {
        let out = self
            .value()
            .iter()
            .map(|&v| {
                if v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            })
            .collect();
        Tensor::make(
            self.rows(),
            self.cols(),
            out,
            self.requires_grad(),
            Op::Sigmoid(self.clone()),
        )
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// the logits. `mask` is added to the logits first (same shape).
    /// `row_weights` reweights rows; the normalizer is then
    /// max(1, sum of weights) instead of the row count.
    pub fn cross_entropy(
        &self,
        targets: &[usize],
        mask: Option<&Tensor>,
        row_weights: Option<&[f64]>,
    ) -> Result<Tensor> {
        let (m, n) = self.shape();
        if targets.len() != m {
            return Err(Error::Validation(format!(
                "cross-entropy got {} targets for {m} rows",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= n) {
            return Err(Error::Validation(format!(
                "cross-entropy target {bad} out of range for {n} classes"
            )));
        }
        if let Some(mk) = mask {
            if mk.shape() != (m, n) {
                return Err(shape_err("cross-entropy", self, mk));
            }
        }
        if let Some(w) = row_weights {
            if w.len() != m {
                return Err(Error::Validation(format!(
                    "cross-entropy got {} row weights for {m} rows",
                    w.len()
                )));
            }
        }
        let x = self.value();
        let mut probs = vec![0.0; m * n];
        let mut loss = 0.0;
        let denom = match row_weights {
            Some(w) => w.iter().sum::<f64>().max(1.0),
            None => m as f64,
        };
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let masked: Vec<f64> = match mask {
                Some(mk) => {
                    let mv = mk.value();
                    row.iter()
                        .zip(&mv[i * n..(i + 1) * n])
                        .map(|(a, b)| a + b)
                        .collect()
                }
                None => row.to_vec(),
            };
            let mx = masked.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (p, &v) in probs[i * n..(i + 1) * n].iter_mut().zip(&masked) {
                *p = (v - mx).exp();
                sum += *p;
            }
            for p in probs[i * n..(i + 1) * n].iter_mut() {
                *p /= sum;
            }
            let lse = mx + sum.ln();
            let w = row_weights.map_or(1.0, |w| w[i]);
            loss += w * (lse - masked[targets[i]]);
        }
        drop(x);
        loss /= denom;
        Ok(Tensor::make(
            1,
            1,
            vec![loss],
            self.requires_grad(),
            Op::CrossEntropy {
                logits: self.clone(),
                targets: targets.to_vec(),
                probs,
                row_weights: row_weights.map(|w| w.to_vec()),
                denom,
            },
        ))
    }

    /// Mean squared error against a constant gold array. With a 0/1 `mask`
    /// the sum of masked squared errors is divided by max(1, sum of mask).
    pub fn mse(&self, gold: &[f64], mask: Option<&[f64]>) -> Result<Tensor> {
        if gold.len() != self.len() {
            return Err(Error::Validation(format!(
                "mse got {} gold values for {} predictions",
                gold.len(),
                self.len()
            )));
        }
        if let Some(mk) = mask {
            if mk.len() != self.len() {
                return Err(Error::Validation(format!(
                    "mse got {} mask values for {} predictions",
                    mk.len(),
                    self.len()
                )));
            }
        }
        let denom = match mask {
            Some(mk) => mk.iter().sum::<f64>().max(1.0),
            None => self.len() as f64,
        };
        let v = self.value();
        let mut loss = 0.0;
        for (i, (&p, &g)) in v.iter().zip(gold).enumerate() {
            let m = mask.map_or(1.0, |mk| mk[i]);
            loss += m * (p - g) * (p - g);
        }
        drop(v);
        loss /= denom;
        Ok(Tensor::make(
            1,
            1,
            vec![loss],
            self.requires_grad(),
            Op::Mse {
                pred: self.clone(),
                gold: gold.to_vec(),
                mask: mask.map(|m| m.to_vec()),
                denom,
            },
        ))
    }

    /// Binary cross-entropy on logits against constant gold labels in
    /// [0, 1], computed in the numerically stable form. Masking as in mse.
    pub fn bce_with_logits(&self, gold: &[f64], mask: Option<&[f64]>) -> Result<Tensor> {
        if gold.len() != self.len() {
            return Err(Error::Validation(format!(
                "bce got {} gold values for {} logits",
                gold.len(),
                self.len()
            )));
        }
        if let Some(mk) = mask {
            if mk.len() != self.len() {
                return Err(Error::Validation(format!(
                    "bce got {} mask values for {} logits",
                    mk.len(),
                    self.len()
                )));
            }
        }
        let denom = match mask {
            Some(mk) => mk.iter().sum::<f64>().max(1.0),
            None => self.len() as f64,
        };
        let v = self.value();
        let mut loss = 0.0;
        for (i, (&x, &g)) in v.iter().zip(gold).enumerate() {
            let m = mask.map_or(1.0, |mk| mk[i]);
            loss += m * (x.max(0.0) - x * g + (-x.abs()).exp().ln_1p());
        }
        drop(v);
        loss /= denom;
        Ok(Tensor::make(
            1,
            1,
            vec![loss],
            self.requires_grad(),
            Op::BceLogits {
                logits: self.clone(),
                gold: gold.to_vec(),
                mask: mask.map(|m| m.to_vec()),
                denom,
            },
        ))
    }

    pub fn transpose(&self) -> Tensor {
        let (m, n) = self.shape();
        let v = self.value();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = v[i * n + j];
            }
        }
        drop(v);
        Tensor::make(n, m, out, self.requires_grad(), Op::Transpose(self.clone()))
    }

    /// Multiply by a plain constant.
    pub fn scale(&self, c: f64) -> Tensor {
        let out = self.value().iter().map(|v| v * c).collect();
        Tensor::make(
            self.rows(),
            self.cols(),
            out,
            self.requires_grad(),
            Op::Scale { x: self.clone(), c },
        )
    }

    /// One entry per row: out[i, 0] = self[i, cols[i]].
    pub fn pick(&self, cols: &[usize]) -> Result<Tensor> {
        let (m, n) = self.shape();
        if cols.len() != m {
            return Err(Error::Validation(format!(
                "pick got {} column indices for {m} rows",
                cols.len()
            )));
        }
        if let Some(&bad) = cols.iter().find(|&&c| c >= n) {
            return Err(Error::Validation(format!(
                "pick column {bad} out of range for {n} columns"
            )));
        }
        let v = self.value();
        let out = cols.iter().enumerate().map(|(i, &c)| v[i * n + c]).collect();
        drop(v);
        Ok(Tensor::make(
            m,
            1,
            out,
            self.requires_grad(),
            Op::Pick {
                x: self.clone(),
                cols: cols.to_vec(),
            },
        ))
    }

    /// Sum over columns: (m, n) -> (m, 1).
    pub fn row_sum(&self) -> Tensor {
        let (m, n) = self.shape();
        let v = self.value();
        let out = (0..m).map(|i| v[i * n..(i + 1) * n].iter().sum()).collect();
        drop(v);
        Tensor::make(m, 1, out, self.requires_grad(), Op::RowSum(self.clone()))
    }
}

/// Push `grad` (d loss / d node) through `node`'s op into its parents.
pub(crate) fn backward_into(node: &Tensor, grad: &[f64]) {
    match &node.inner.op {
        Op::Leaf => {}
        Op::Matmul(a, b) => {
            let (m, k) = a.shape();
            let n = b.cols();
            if a.requires_grad() {
                // dA = G . B^T
                let bv = b.value();
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for j in 0..n {
                        let g = grad[i * n + j];
                        if g == 0.0 {
                            continue;
                        }
                        for p in 0..k {
                            da[i * k + p] += g * bv[p * n + j];
                        }
                    }
                }
                a.accumulate_grad(&da);
            }
            if b.requires_grad() {
                // dB = A^T . G
                let av = a.value();
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let v = av[i * k + p];
                        if v == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db[p * n + j] += v * grad[i * n + j];
                        }
                    }
                }
                b.accumulate_grad(&db);
            }
        }
        Op::Add(a, b) => {
            if a.requires_grad() {
                a.accumulate_grad(grad);
            }
            if b.requires_grad() {
                if b.shape() == a.shape() {
                    b.accumulate_grad(grad);
                } else {
                    let (m, c) = a.shape();
                    let mut db = vec![0.0; c];
                    for i in 0..m {
                        for j in 0..c {
                            db[j] += grad[i * c + j];
                        }
                    }
                    b.accumulate_grad(&db);
                }
            }
        }
        Op::Mul(a, b) => {
            let (m, c) = a.shape();
            if a.requires_grad() {
                let bv = b.value();
                let da: Vec<f64> = if b.shape() == (m, c) {
                    grad.iter().zip(bv.iter()).map(|(g, y)| g * y).collect()
                } else if b.shape() == (m, 1) {
                    (0..m * c).map(|i| grad[i] * bv[i / c]).collect()
                } else {
                    grad.iter().map(|g| g * bv[0]).collect()
                };
                a.accumulate_grad(&da);
            }
            if b.requires_grad() {
                let av = a.value();
                if b.shape() == (m, c) {
                    let db: Vec<f64> = grad.iter().zip(av.iter()).map(|(g, x)| g * x).collect();
                    b.accumulate_grad(&db);
                } else if b.shape() == (m, 1) {
                    let mut db = vec![0.0; m];
                    for i in 0..m {
                        for j in 0..c {
                            db[i] += grad[i * c + j] * av[i * c + j];
                        }
                    }
                    b.accumulate_grad(&db);
                } else {
                    let db: f64 = grad.iter().zip(av.iter()).map(|(g, x)| g * x).sum();
                    b.accumulate_grad(&[db]);
                }
            }
        }
        Op::ConcatRows(parts) => {
            let c = parts[0].cols();
            let mut r = 0;
            for t in parts {
                let span = t.rows() * c;
                if t.requires_grad() {
                    t.accumulate_grad(&grad[r..r + span]);
                }
                r += span;
            }
        }
        Op::ConcatCols(parts) => {
            let m = parts[0].rows();
            let total: usize = parts.iter().map(|t| t.cols()).sum();
            let mut base = 0;
            for t in parts {
                let c = t.cols();
                if t.requires_grad() {
                    let mut dt = vec![0.0; m * c];
                    for i in 0..m {
                        dt[i * c..(i + 1) * c]
                            .copy_from_slice(&grad[i * total + base..i * total + base + c]);
                    }
                    t.accumulate_grad(&dt);
                }
                base += c;
            }
        }
        Op::Slice { x, r0, c0 } => {
            if x.requires_grad() {
                let (m, n) = node.shape();
                let cols = x.cols();
                let mut dx = vec![0.0; x.len()];
                for i in 0..m {
                    dx[(r0 + i) * cols + c0..(r0 + i) * cols + c0 + n]
                        .copy_from_slice(&grad[i * n..(i + 1) * n]);
                }
                x.accumulate_grad(&dx);
            }
        }
        Op::Embed { table, ids } => {
            if table.requires_grad() {
                let d = table.cols();
                let mut dt = vec![0.0; table.len()];
                for (i, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] += grad[i * d + j];
                    }
                }
                table.accumulate_grad(&dt);
            }
        }
        Op::Softmax(x) => {
            if x.requires_grad() {
                let (m, n) = node.shape();
                let y = node.value();
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    let yr = &y[i * n..(i + 1) * n];
                    let gr = &grad[i * n..(i + 1) * n];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dx[i * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                drop(y);
                x.accumulate_grad(&dx);
            }
        }
        Op::Log(x) => {
            if x.requires_grad() {
                let xv = x.value();
                let dx: Vec<f64> = grad.iter().zip(xv.iter()).map(|(g, v)| g / v).collect();
                drop(xv);
                x.accumulate_grad(&dx);
            }
        }
        Op::Mean(x) => {
            if x.requires_grad() {
                let g = grad[0] / x.len() as f64;
                x.accumulate_grad(&vec![g; x.len()]);
            }
        }
        Op::ScaleNorm { x, g, norms } => {
            let (m, n) = x.shape();
            let xv = x.value();
            let gv = g.item();
            if x.requires_grad() {
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    let norm = norms[i];
                    let row = &xv[i * n..(i + 1) * n];
                    let gr = &grad[i * n..(i + 1) * n];
                    let dot: f64 = row.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dx[i * n + j] = gv * (gr[j] / norm - row[j] * dot / (norm * norm * norm));
                    }
                }
                x.accumulate_grad(&dx);
            }
            if g.requires_grad() {
                let mut dg = 0.0;
                for i in 0..m {
                    let row = &xv[i * n..(i + 1) * n];
                    let gr = &grad[i * n..(i + 1) * n];
                    let dot: f64 = row.iter().zip(gr).map(|(a, b)| a * b).sum();
                    dg += dot / norms[i];
                }
                g.accumulate_grad(&[dg]);
            }
        }
        Op::Dropout { x, mask } => {
            if x.requires_grad() {
                let dx: Vec<f64> = grad.iter().zip(mask).map(|(g, m)| g * m).collect();
                x.accumulate_grad(&dx);
            }
        }
        Op::Relu(x) => {
            if x.requires_grad() {
                let xv = x.value();
                let dx: Vec<f64> = grad
                    .iter()
                    .zip(xv.iter())
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect();
                drop(xv);
                x.accumulate_grad(&dx);
            }
        }
        Op::Sigmoid(x) => {
            if x.requires_grad() {
                let y = node.value();
                let dx: Vec<f64> = grad
                    .iter()
                    .zip(y.iter())
                    .map(|(g, &v)| g * v * (1.0 - v))
                    .collect();
                drop(y);
                x.accumulate_grad(&dx);
            }
        }
        Op::CrossEntropy {
            logits,
            targets,
            probs,
            row_weights,
            denom,
        } => {
            if logits.requires_grad() {
                let (m, n) = logits.shape();
                let g0 = grad[0] / denom;
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    let w = row_weights.as_ref().map_or(1.0, |w| w[i]);
                    if w == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        let indicator = if j == targets[i] { 1.0 } else { 0.0 };
                        dx[i * n + j] = g0 * w * (probs[i * n + j] - indicator);
                    }
                }
                logits.accumulate_grad(&dx);
            }
        }
        Op::Mse {
            pred,
            gold,
            mask,
            denom,
        } => {
            if pred.requires_grad() {
                let pv = pred.value();
                let g0 = grad[0] / denom;
                let dx: Vec<f64> = pv
                    .iter()
                    .zip(gold)
                    .enumerate()
                    .map(|(i, (&p, &g))| {
                        let m = mask.as_ref().map_or(1.0, |mk| mk[i]);
                        g0 * 2.0 * m * (p - g)
                    })
                    .collect();
                drop(pv);
                pred.accumulate_grad(&dx);
            }
        }
        Op::BceLogits {
            logits,
            gold,
            mask,
            denom,
        } => {
            if logits.requires_grad() {
                let xv = logits.value();
                let g0 = grad[0] / denom;
                let dx: Vec<f64> = xv
                    .iter()
                    .zip(gold)
                    .enumerate()
                    .map(|(i, (&x, &g))| {
                        let m = mask.as_ref().map_or(1.0, |mk| mk[i]);
                        let s = if x >= 0.0 {
                            1.0 / (1.0 + (-x).exp())
                        } else {
                            let e = x.exp();
                            e / (1.0 + e)
                        };
                        g0 * m * (s - g)
                    })
                    .collect();
                drop(xv);
                logits.accumulate_grad(&dx);
            }
        }
        Op::Transpose(x) => {
            if x.requires_grad() {
                let (m, n) = node.shape();
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        dx[j * m + i] = grad[i * n + j];
                    }
                }
                x.accumulate_grad(&dx);
            }
        }
        Op::Scale { x, c } => {
            if x.requires_grad() {
                let dx: Vec<f64> = grad.iter().map(|g| g * c).collect();
                x.accumulate_grad(&dx);
            }
        }
        Op::Pick { x, cols } => {
            if x.requires_grad() {
                let n = x.cols();
                let mut dx = vec![0.0; x.len()];
                for (i, &c) in cols.iter().enumerate() {
                    dx[i * n + c] += grad[i];
                }
                x.accumulate_grad(&dx);
            }
        }
        Op::RowSum(x) => {
            if x.requires_grad() {
                let (m, n) = x.shape();
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        dx[i * n + j] = grad[i];
                    }
                }
                x.accumulate_grad(&dx);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngPool;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn matmul_matches_naive_triple_loop() {
        let mut rng = RngPool::new(11).stream("matmul");
        let a: Vec<f64> = (0..6).map(|_| rng.random::<f64>() - 0.5).collect();
        let b: Vec<f64> = (0..12).map(|_| rng.random::<f64>() - 0.5).collect();
        let ta = Tensor::constant(2, 3, a.clone());
        let tb = Tensor::constant(3, 4, b.clone());
        let tc = ta.matmul(&tb).unwrap();
        assert_eq!(tc.shape(), (2, 4));
        for i in 0..2 {
            for j in 0..4 {
                let mut acc = 0.0;
                for p in 0..3 {
                    acc += a[i * 3 + p] * b[p * 4 + j];
                }
                assert_abs_diff_eq!(tc.get(i, j), acc, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn matmul_shape_mismatch_is_structured() {
        let a = Tensor::zeros(2, 3);
        let b = Tensor::zeros(2, 3);
        match a.matmul(&b) {
            Err(crate::error::Error::Shape { op, lhs, rhs }) => {
                assert_eq!(op, "matmul");
                assert_eq!(lhs, (2, 3));
                assert_eq!(rhs, (2, 3));
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn scalenorm_unit_example() {
        let x = Tensor::constant(1, 2, vec![3.0, 4.0]);
        let g = Tensor::param(1, 1, vec![1.0]);
        let y = x.scalenorm(&g).unwrap();
        assert_abs_diff_eq!(y.get(0, 0), 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(y.get(0, 1), 0.8, epsilon = 1e-12);
    }

    #[test]
    fn masked_softmax_zeroes_masked_position() {
        let x = Tensor::constant(1, 3, vec![0.3, 0.5, 9.0]);
        let mask = Tensor::constant(1, 3, vec![0.0, 0.0, MASK_NEG]);
        let y = x.masked_softmax(Some(&mask)).unwrap();
        assert_eq!(y.get(0, 2), 0.0);
        assert_abs_diff_eq!(y.get(0, 0) + y.get(0, 1), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = RngPool::new(3).stream("softmax");
        let x = Tensor::constant(5, 7, (0..35).map(|_| rng.random::<f64>() * 8.0 - 4.0).collect());
        let y = x.masked_softmax(None).unwrap();
        for i in 0..5 {
            let s: f64 = (0..7).map(|j| y.get(i, j)).sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn dropout_eval_is_identity_and_train_scales() {
        let pool = RngPool::new(5);
        let x = Tensor::constant(4, 8, (0..32).map(|i| i as f64 + 1.0).collect());
        let eval = x.dropout(0.5, &mut pool.stream("d"), false).unwrap();
        assert_eq!(eval.to_vec(), x.to_vec());
        let train = x.dropout(0.5, &mut pool.stream("d"), true).unwrap();
        for (o, i) in train.to_vec().iter().zip(x.to_vec()) {
            assert!(*o == 0.0 || (*o - i * 2.0).abs() < 1e-12);
        }
        let again = x.dropout(0.5, &mut pool.stream("d"), true).unwrap();
        assert_eq!(train.to_vec(), again.to_vec());
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let x = Tensor::param(2, 4, vec![0.0; 8]);
        let loss = x.cross_entropy(&[1, 3], None, None).unwrap();
        assert_abs_diff_eq!(loss.item(), (4.0f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn cross_entropy_row_weights_skip_rows() {
        let x = Tensor::param(2, 3, vec![5.0, 0.0, 0.0, 0.0, 5.0, 0.0]);
        let all = x.cross_entropy(&[0, 0], None, None).unwrap();
        let only_first = x
            .cross_entropy(&[0, 0], None, Some(&[1.0, 0.0]))
            .unwrap();
        assert!(only_first.item() < all.item());
        only_first.backward().unwrap();
        let g = x.grad().unwrap();
        assert!(g[..3].iter().any(|v| *v != 0.0));
        assert!(g[3..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mse_masked_denominator() {
        let p = Tensor::param(1, 4, vec![1.0, 2.0, 3.0, 4.0]);
        let loss = p
            .mse(&[0.0, 0.0, 0.0, 0.0], Some(&[1.0, 1.0, 0.0, 0.0]))
            .unwrap();
        assert_abs_diff_eq!(loss.item(), (1.0 + 4.0) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn mse_all_masked_uses_denominator_one() {
        let p = Tensor::param(1, 2, vec![5.0, 5.0]);
        let loss = p.mse(&[0.0, 0.0], Some(&[0.0, 0.0])).unwrap();
        assert_eq!(loss.item(), 0.0);
    }

    #[test]
    fn bce_matches_direct_formula() {
        let x = Tensor::param(1, 2, vec![0.7, -1.2]);
        let loss = x.bce_with_logits(&[1.0, 0.0], None).unwrap();
        let s = |v: f64| 1.0 / (1.0 + (-v).exp());
        let direct = (-(s(0.7)).ln() - (1.0 - s(-1.2)).ln()) / 2.0;
        assert_abs_diff_eq!(loss.item(), direct, epsilon = 1e-12);
    }

    #[test]
    fn embed_and_out_of_range() {
        let table = Tensor::param(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let out = table.embed(&[2, 0, 2]).unwrap();
        assert_eq!(out.to_vec(), vec![5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        assert!(table.embed(&[3]).is_err());
        let loss = out.mean();
        loss.backward().unwrap();
        let g = table.grad().unwrap();
        assert_abs_diff_eq!(g[4], 2.0 / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g[0], 1.0 / 6.0, epsilon = 1e-12);
        assert_eq!(g[2], 0.0);
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let a = Tensor::constant(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let b = Tensor::constant(2, 1, vec![5.0, 6.0]);
        let cat = Tensor::concat(&[a.clone(), b], Axis::Cols).unwrap();
        assert_eq!(cat.to_vec(), vec![1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let back = cat.slice(0, 2, 0, 2).unwrap();
        assert_eq!(back.to_vec(), a.to_vec());
        let rows = Tensor::concat(
            &[
                Tensor::constant(1, 2, vec![1.0, 2.0]),
                Tensor::constant(1, 2, vec![3.0, 4.0]),
            ],
            Axis::Rows,
        )
        .unwrap();
        assert_eq!(rows.to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn pick_and_row_sum() {
        let x = Tensor::constant(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let p = x.pick(&[2, 0]).unwrap();
        assert_eq!(p.to_vec(), vec![3.0, 4.0]);
        let s = x.row_sum();
        assert_eq!(s.to_vec(), vec![6.0, 15.0]);
    }

    #[test]
    fn add_row_broadcast() {
        let x = Tensor::constant(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let b = Tensor::param(1, 2, vec![10.0, 20.0]);
        let y = x.add(&b).unwrap();
        assert_eq!(y.to_vec(), vec![11.0, 22.0, 13.0, 24.0]);
        let loss = y.mean();
        loss.backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn mul_broadcast_forms() {
        let x = Tensor::constant(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let col = Tensor::constant(2, 1, vec![2.0, 10.0]);
        assert_eq!(x.mul(&col).unwrap().to_vec(), vec![2.0, 4.0, 30.0, 40.0]);
        let s = Tensor::scalar(3.0);
        assert_eq!(x.mul(&s).unwrap().to_vec(), vec![3.0, 6.0, 9.0, 12.0]);
        assert_eq!(s.mul(&x).unwrap().to_vec(), vec![3.0, 6.0, 9.0, 12.0]);
    }
}
