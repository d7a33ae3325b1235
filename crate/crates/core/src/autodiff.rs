//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every primitive appends one node to the [`Tape`]; inputs always precede
//! their consumers, so a single reverse sweep visits nodes in a valid order.
//! A leaf referenced from several places receives the sum of all incoming
//! gradients, which is what lets one bank slot drive many virtual layers.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
    },
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    CausalMask {
        x: Var,
        seq: usize,
    },
    Softmax(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
        count: usize,
    },
    Sum(Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Ordered record of primitive applications.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Layer normalisation epsilon.
pub const LAYERNORM_EPS: f64 = 1e-5;

fn shape_err(op: &'static str, lhs: &Tensor, rhs: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: lhs.shape().to_vec(),
        rhs: rhs.shape().to_vec(),
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

fn normal_pdf(x: f64) -> f64 {
    libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * PI)
}

/// Exact GeLU, `x·Φ(x)`.
pub fn gelu_scalar(x: f64) -> f64 {
    x * normal_cdf(x)
}

fn gelu_grad(x: f64) -> f64 {
    normal_cdf(x) + x * normal_pdf(x)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf (parameter or constant input).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.batched(a, b, 1, false)
    }

    /// `a · bᵀ` with `a: m×k`, `b: n×k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.batched(a, b, 1, true)
    }

    /// Block-wise product: `a` is `batch` stacked `m×k` blocks, `b` is
    /// `batch` stacked `k×n` blocks.
    pub fn batched_matmul(&mut self, a: Var, b: Var, batch: usize) -> Result<Var> {
        self.batched(a, b, batch, false)
    }

    /// Block-wise `a_i · b_iᵀ` with `b` stacked `n×k` blocks.
    pub fn batched_matmul_nt(&mut self, a: Var, b: Var, batch: usize) -> Result<Var> {
        self.batched(a, b, batch, true)
    }

    fn batched(&mut self, a: Var, b: Var, batch: usize, trans_b: bool) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let op = if batch == 1 { "matmul" } else { "batched_matmul" };
        if ta.shape().len() != 2 || tb.shape().len() != 2 || batch == 0 {
            return Err(shape_err(op, ta, tb));
        }
        let (ra, k) = (ta.shape()[0], ta.shape()[1]);
        let (rb, cb) = (tb.shape()[0], tb.shape()[1]);
        if ra % batch != 0 || rb % batch != 0 {
            return Err(shape_err(op, ta, tb));
        }
        let m = ra / batch;
        let (inner, n) = if trans_b {
            (cb, rb / batch)
        } else {
            (rb / batch, cb)
        };
        if inner != k {
            return Err(shape_err(op, ta, tb));
        }
        let mut out = vec![0.0; batch * m * n];
        for bi in 0..batch {
            let a_blk = &ta.data()[bi * m * k..(bi + 1) * m * k];
            let b_blk = &tb.data()[bi * k * n..(bi + 1) * k * n];
            let o_blk = &mut out[bi * m * n..(bi + 1) * m * n];
            if trans_b {
                gemm_nt(a_blk, b_blk, o_blk, m, k, n);
            } else {
                gemm_nn(a_blk, b_blk, o_blk, m, k, n);
            }
        }
        let value = Tensor::new(vec![batch * m, n], out)?;
        Ok(self.push(
            value,
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                trans_b,
            },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// Adds a length-`d` vector to every row of `x[…×d]`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let (_, cols) = tx.as_matrix();
        if tb.shape() != [cols] {
            return Err(shape_err("add_row", tx, tb));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(cols) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(value, Op::AddRow(x, bias)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("mul", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| v * s).collect();
        let value = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Scale(x, s))
    }

    /// Sets entry `(r, j)` to `-inf` whenever `j > r mod seq`; `x` holds
    /// stacked `seq×seq` score blocks.
    pub fn causal_mask(&mut self, x: Var, seq: usize) -> Result<Var> {
        let tx = self.value(x);
        let (rows, cols) = tx.as_matrix();
        if cols != seq || seq == 0 || rows % seq != 0 {
            return Err(Error::Shape {
                op: "causal_mask",
                lhs: tx.shape().to_vec(),
                rhs: vec![seq],
            });
        }
        let mut data = tx.data().to_vec();
        for (r, row) in data.chunks_mut(cols).enumerate() {
            let pos = r % seq;
            for v in &mut row[pos + 1..] {
                *v = f64::NEG_INFINITY;
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(value, Op::CausalMask { x, seq }))
    }

    /// Max-subtracted softmax over the last axis.
    pub fn softmax_row(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (_, cols) = tx.as_matrix();
        if cols == 0 {
            return Err(Error::Empty("softmax row"));
        }
        let mut data = tx.data().to_vec();
        for (r, row) in data.chunks_mut(cols).enumerate() {
            if row.iter().any(|v| v.is_nan()) {
                row.fill(f64::NAN);
                continue;
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::FullyMaskedRow { row: r });
            }
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = libm::exp(*v - max);
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Softmax(x)))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| gelu_scalar(v)).collect();
        let value = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Gelu(x))
    }

    /// Per-row normalisation followed by an affine `gain`/`bias`.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let (rows, cols) = tx.as_matrix();
        if tg.shape() != [cols] {
            return Err(shape_err("layernorm", tx, tg));
        }
        if tb.shape() != [cols] {
            return Err(shape_err("layernorm", tx, tb));
        }
        let mut xhat = vec![0.0; rows * cols];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &tx.data()[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let s = 1.0 / libm::sqrt(var + eps);
            rstd[r] = s;
            for c in 0..cols {
                let h = (row[c] - mean) * s;
                xhat[r * cols + c] = h;
                out[r * cols + c] = h * tg.data()[c] + tb.data()[c];
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        ))
    }

    /// Row lookup: output row `i` is `table[ids[i]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        if tt.shape().len() != 2 {
            return Err(Error::Shape {
                op: "gather",
                lhs: tt.shape().to_vec(),
                rhs: vec![ids.len()],
            });
        }
        let (rows, cols) = (tt.shape()[0], tt.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * cols);
        for (position, &id) in ids.iter().enumerate() {
            if id >= rows {
                return Err(Error::TokenOutOfRange { position, id, rows });
            }
            data.extend_from_slice(tt.row(id));
        }
        let value = Tensor::new(vec![ids.len(), cols], data)?;
        Ok(self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Mean negative log-likelihood of `targets` under row-softmax of
    /// `logits`; `None` targets are left out of the mean.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let tl = self.value(logits);
        let (rows, vocab) = tl.as_matrix();
        if rows != targets.len() {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: tl.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let mut probs = vec![0.0; rows * vocab];
        let mut total = 0.0;
        let mut count = 0;
        for (r, target) in targets.iter().enumerate() {
            let Some(t) = *target else { continue };
            if t >= vocab {
                return Err(Error::TargetOutOfRange {
                    position: r,
                    id: t,
                    vocab,
                });
            }
            let row = tl.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            let p = &mut probs[r * vocab..(r + 1) * vocab];
            for (pi, &v) in p.iter_mut().zip(row) {
                *pi = libm::exp(v - max);
                z += *pi;
            }
            for pi in p.iter_mut() {
                *pi /= z;
            }
            total += max + libm::log(z) - row[t];
            count += 1;
        }
        if count == 0 {
            return Err(Error::NoTargets);
        }
        let value = Tensor::scalar(total / count as f64);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: lt.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| {
                g.map(|data| Tensor::new(node.value.shape().to_vec(), data).expect("grad shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> &'a mut Vec<f64> {
        let numel = self.nodes[v.0].value.numel();
        grads[v.0].get_or_insert_with(|| vec![0.0; numel])
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                trans_b,
            } => {
                let av = self.value(a).data();
                let bv = self.value(b).data();
                {
                    let da = self.accumulate(grads, a);
                    for bi in 0..batch {
                        let g_blk = &g[bi * m * n..(bi + 1) * m * n];
                        let b_blk = &bv[bi * k * n..(bi + 1) * k * n];
                        let da_blk = &mut da[bi * m * k..(bi + 1) * m * k];
                        if trans_b {
                            gemm_nn(g_blk, b_blk, da_blk, m, n, k);
                        } else {
                            gemm_nt(g_blk, b_blk, da_blk, m, n, k);
                        }
                    }
                }
                let db = self.accumulate(grads, b);
                for bi in 0..batch {
                    let g_blk = &g[bi * m * n..(bi + 1) * m * n];
                    let a_blk = &av[bi * m * k..(bi + 1) * m * k];
                    let db_blk = &mut db[bi * k * n..(bi + 1) * k * n];
                    if trans_b {
                        gemm_tn(g_blk, a_blk, db_blk, m, n, k);
                    } else {
                        gemm_tn(a_blk, g_blk, db_blk, m, k, n);
                    }
                }
            }
            &Op::Add(a, b) => {
                for v in [a, b] {
                    let d = self.accumulate(grads, v);
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
            }
            &Op::AddRow(x, bias) => {
                let dx = self.accumulate(grads, x);
                dx.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                let cols = self.value(bias).numel();
                let db = self.accumulate(grads, bias);
                for row in g.chunks(cols) {
                    db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                }
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                let da = self.accumulate(grads, a);
                for ((d, g), y) in da.iter_mut().zip(g).zip(bv) {
                    *d += g * y;
                }
                let db = self.accumulate(grads, b);
                for ((d, g), x) in db.iter_mut().zip(g).zip(av) {
                    *d += g * x;
                }
            }
            &Op::Scale(x, s) => {
                let dx = self.accumulate(grads, x);
                dx.iter_mut().zip(g).for_each(|(d, g)| *d += s * g);
            }
            &Op::CausalMask { x, seq } => {
                let dx = self.accumulate(grads, x);
                for (r, (drow, grow)) in dx.chunks_mut(seq).zip(g.chunks(seq)).enumerate() {
                    let pos = r % seq;
                    for (d, g) in drow[..=pos].iter_mut().zip(&grow[..=pos]) {
                        *d += g;
                    }
                }
            }
            &Op::Softmax(x) => {
                let y = node.value.data();
                let (_, cols) = node.value.as_matrix();
                let dx = self.accumulate(grads, x);
                for ((drow, grow), yrow) in dx.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                    for ((d, g), y) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d += y * (g - dot);
                    }
                }
            }
            &Op::Gelu(x) => {
                let xv = self.value(x).data();
                let dx = self.accumulate(grads, x);
                for ((d, g), &v) in dx.iter_mut().zip(g).zip(xv) {
                    *d += g * gelu_grad(v);
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let gv = self.value(*gain).data();
                let cols = gv.len();
                {
                    let dgain = self.accumulate(grads, *gain);
                    for (grow, hrow) in g.chunks(cols).zip(xhat.chunks(cols)) {
                        for ((d, g), h) in dgain.iter_mut().zip(grow).zip(hrow) {
                            *d += g * h;
                        }
                    }
                }
                {
                    let dbias = self.accumulate(grads, *bias);
                    for grow in g.chunks(cols) {
                        dbias.iter_mut().zip(grow).for_each(|(d, g)| *d += g);
                    }
                }
                let dx = self.accumulate(grads, *x);
                let inv_n = 1.0 / cols as f64;
                let mut dxhat = vec![0.0; cols];
                for (r, ((drow, grow), hrow)) in dx
                    .chunks_mut(cols)
                    .zip(g.chunks(cols))
                    .zip(xhat.chunks(cols))
                    .enumerate()
                {
                    let mut sum = 0.0;
                    let mut sum_h = 0.0;
                    for c in 0..cols {
                        dxhat[c] = grow[c] * gv[c];
                        sum += dxhat[c];
                        sum_h += dxhat[c] * hrow[c];
                    }
                    let (mean, mean_h) = (sum * inv_n, sum_h * inv_n);
                    for c in 0..cols {
                        drow[c] += rstd[r] * (dxhat[c] - mean - hrow[c] * mean_h);
                    }
                }
            }
            Op::Gather { table, ids } => {
                let cols = self.value(*table).shape()[1];
                let dt = self.accumulate(grads, *table);
                for (grow, &id) in g.chunks(cols).zip(ids) {
                    let drow = &mut dt[id * cols..(id + 1) * cols];
                    drow.iter_mut().zip(grow).for_each(|(d, g)| *d += g);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                let (_, vocab) = self.value(*logits).as_matrix();
                let scale = g[0] / *count as f64;
                let dl = self.accumulate(grads, *logits);
                for (r, target) in targets.iter().enumerate() {
                    let Some(t) = *target else { continue };
                    let drow = &mut dl[r * vocab..(r + 1) * vocab];
                    let prow = &probs[r * vocab..(r + 1) * vocab];
                    for (d, p) in drow.iter_mut().zip(prow) {
                        *d += scale * p;
                    }
                    drow[t] -= scale;
                }
            }
            &Op::Sum(x) => {
                let dx = self.accumulate(grads, x);
                dx.iter_mut().for_each(|d| *d += g[0]);
            }
            &Op::Reshape(x) => {
                let dx = self.accumulate(grads, x);
                dx.iter_mut().zip(g).for_each(|(d, g)| *d += g);
            }
        }
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient reaching `v`, if the loss depends on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, with zeros for nodes the loss never touched.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
    }
}
