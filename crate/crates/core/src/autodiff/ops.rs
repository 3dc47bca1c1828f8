//! Forward implementations and backward rules for every tape operation.

use super::{Node, Tape, Tensor, TensorError};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Boolean mask broadcast over the leading dimensions of the tensor it is
/// applied to: the mask shape must be a suffix of the tensor shape.
#[derive(Debug, Clone)]
pub struct BoolMask {
    pub shape: Vec<usize>,
    pub values: Vec<bool>,
}

impl BoolMask {
    pub fn new(shape: &[usize], values: Vec<bool>) -> Result<Self, TensorError> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(TensorError::BadLength {
                op: "mask",
                shape: shape.to_vec(),
                len: values.len(),
            });
        }
        Ok(BoolMask {
            shape: shape.to_vec(),
            values,
        })
    }

    fn check_suffix_of(&self, shape: &[usize], op: &'static str) -> Result<(), TensorError> {
        if self.shape.len() > shape.len() || !shape.ends_with(&self.shape) {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: shape.to_vec(),
                rhs: self.shape.clone(),
            });
        }
        Ok(())
    }
}

pub(crate) enum Op {
    Add,
    Sub,
    Mul,
    Neg,
    Scale(f64),
    Abs,
    Matmul,
    TransposeLast2,
    Reshape,
    SliceLast { start: usize },
    ConcatLast,
    IndexRows { indices: Vec<usize> },
    Softmax,
    LayerNorm { xhat: Vec<f64>, inv_std: Vec<f64> },
    Gelu,
    Relu,
    Dropout { mult: Vec<f64> },
    MaskedFill { keep: Vec<bool> },
    SumAll,
}

/// Suffix broadcast: `b` may have the same shape as `a` or a shape that is a
/// trailing suffix of it (the common case is adding a per-joint table to a
/// batched activation).
fn check_broadcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<(), TensorError> {
    if a.ends_with(b) {
        Ok(())
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        })
    }
}

/// Fold a gradient of `a`'s shape down onto `b` (summing the leading dims).
fn fold_to(grad: &[f64], b_len: usize) -> Vec<f64> {
    let mut out = vec![0.0; b_len];
    for (i, g) in grad.iter().enumerate() {
        out[i % b_len] += g;
    }
    out
}

/// Row-major GEMM: `c = alpha * a(op) . b(op) + beta * c`, where `ta`/`tb`
/// read the slice as the transpose of a row-major matrix.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

struct MatmulDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    a_shared: bool,
    b_shared: bool,
    out_shape: Vec<usize>,
}

fn matmul_dims(a: &[usize], b: &[usize]) -> Result<MatmulDims, TensorError> {
    let err = || TensorError::ShapeMismatch {
        op: "matmul",
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if a.len() < 2 || b.len() < 2 {
        return Err(err());
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(err());
    }
    let a_lead = &a[..a.len() - 2];
    let b_lead = &b[..b.len() - 2];
    let (lead, a_shared, b_shared) = if a_lead == b_lead {
        (a_lead, false, false)
    } else if a_lead.is_empty() {
        (b_lead, true, false)
    } else if b_lead.is_empty() {
        (a_lead, false, true)
    } else {
        return Err(err());
    };
    let mut out_shape = lead.to_vec();
    out_shape.extend([m, n]);
    Ok(MatmulDims {
        batch: lead.iter().product(),
        m,
        k,
        n,
        a_shared,
        b_shared,
        out_shape,
    })
}

impl Tape {
    /// Elementwise `a + b` with suffix broadcast of `b`.
    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        let (sa, sb) = (a.shape(), b.shape());
        check_broadcast("add", &sa, &sb)?;
        let bv = b.inner.borrow();
        let out = {
            let av = a.inner.borrow();
            av.values
                .iter()
                .enumerate()
                .map(|(i, x)| x + bv.values[i % bv.values.len()])
                .collect()
        };
        drop(bv);
        Ok(self.record(Op::Add, vec![a.clone(), b.clone()], sa, out))
    }

    /// Elementwise `a - b` with suffix broadcast of `b`.
    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        let (sa, sb) = (a.shape(), b.shape());
        check_broadcast("sub", &sa, &sb)?;
        let bv = b.inner.borrow();
        let out = {
            let av = a.inner.borrow();
            av.values
                .iter()
                .enumerate()
                .map(|(i, x)| x - bv.values[i % bv.values.len()])
                .collect()
        };
        drop(bv);
        Ok(self.record(Op::Sub, vec![a.clone(), b.clone()], sa, out))
    }

    /// Elementwise `a * b` with suffix broadcast of `b`.
    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        let (sa, sb) = (a.shape(), b.shape());
        check_broadcast("mul", &sa, &sb)?;
        let bv = b.inner.borrow();
        let out = {
            let av = a.inner.borrow();
            av.values
                .iter()
                .enumerate()
                .map(|(i, x)| x * bv.values[i % bv.values.len()])
                .collect()
        };
        drop(bv);
        Ok(self.record(Op::Mul, vec![a.clone(), b.clone()], sa, out))
    }

    pub fn neg(&self, x: &Tensor) -> Tensor {
        let out = x.inner.borrow().values.iter().map(|v| -v).collect();
        self.record(Op::Neg, vec![x.clone()], x.shape(), out)
    }

    pub fn scale(&self, x: &Tensor, c: f64) -> Tensor {
        let out = x.inner.borrow().values.iter().map(|v| v * c).collect();
        self.record(Op::Scale(c), vec![x.clone()], x.shape(), out)
    }

    pub fn abs(&self, x: &Tensor) -> Tensor {
        let out = x.inner.borrow().values.iter().map(|v| v.abs()).collect();
        self.record(Op::Abs, vec![x.clone()], x.shape(), out)
    }

    /// Batched matrix product. Leading dims must match exactly, or either
    /// side may omit them entirely to be shared across the batch.
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        let d = matmul_dims(&a.shape(), &b.shape())?;
        let av = a.inner.borrow();
        let bv = b.inner.borrow();
        let mut out = vec![0.0; d.batch * d.m * d.n];
        for i in 0..d.batch {
            let ao = if d.a_shared { 0 } else { i * d.m * d.k };
            let bo = if d.b_shared { 0 } else { i * d.k * d.n };
            gemm(
                d.m,
                d.k,
                d.n,
                1.0,
                &av.values[ao..ao + d.m * d.k],
                false,
                &bv.values[bo..bo + d.k * d.n],
                false,
                0.0,
                &mut out[i * d.m * d.n..(i + 1) * d.m * d.n],
            );
        }
        drop(av);
        drop(bv);
        Ok(self.record(Op::Matmul, vec![a.clone(), b.clone()], d.out_shape, out))
    }

    /// Swaps the trailing two dimensions.
    pub fn transpose_last2(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let s = x.shape();
        if s.len() < 2 {
            return Err(TensorError::ShapeMismatch {
                op: "transpose_last2",
                lhs: s,
                rhs: vec![],
            });
        }
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        let mut out_shape = s.clone();
        let last = out_shape.len() - 1;
        out_shape.swap(last - 1, last);
        let xv = x.inner.borrow();
        let out = transpose_batch(&xv.values, r, c);
        drop(xv);
        Ok(self.record(Op::TransposeLast2, vec![x.clone()], out_shape, out))
    }

    pub fn reshape(&self, x: &Tensor, shape: &[usize]) -> Result<Tensor, TensorError> {
        if shape.iter().product::<usize>() != x.numel() {
            return Err(TensorError::BadLength {
                op: "reshape",
                shape: shape.to_vec(),
                len: x.numel(),
            });
        }
        let out = x.inner.borrow().values.clone();
        Ok(self.record(Op::Reshape, vec![x.clone()], shape.to_vec(), out))
    }

    /// Columns `[start, start + len)` of the last dimension.
    pub fn slice_last(&self, x: &Tensor, start: usize, len: usize) -> Result<Tensor, TensorError> {
        let s = x.shape();
        let d = *s.last().unwrap_or(&0);
        if start + len > d || len == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "slice_last",
                lhs: s,
                rhs: vec![start, len],
            });
        }
        let rows = x.numel() / d;
        let xv = x.inner.borrow();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&xv.values[r * d + start..r * d + start + len]);
        }
        drop(xv);
        let mut out_shape = s;
        *out_shape.last_mut().unwrap() = len;
        Ok(self.record(Op::SliceLast { start }, vec![x.clone()], out_shape, out))
    }

    /// Concatenates along the last dimension.
    pub fn concat_last(&self, parts: &[&Tensor]) -> Result<Tensor, TensorError> {
        assert!(!parts.is_empty(), "concat_last: no inputs");
        let first = parts[0].shape();
        let lead = &first[..first.len() - 1];
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = p.shape();
            if s[..s.len() - 1] != *lead {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_last",
                    lhs: first.clone(),
                    rhs: s,
                });
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = vec![0.0; rows * total];
        let mut col = 0;
        for (p, w) in parts.iter().zip(&widths) {
            let pv = p.inner.borrow();
            for r in 0..rows {
                out[r * total + col..r * total + col + w]
                    .copy_from_slice(&pv.values[r * w..(r + 1) * w]);
            }
            col += w;
        }
        let mut out_shape = lead.to_vec();
        out_shape.push(total);
        Ok(self.record(
            Op::ConcatLast,
            parts.iter().map(|p| (*p).clone()).collect(),
            out_shape,
            out,
        ))
    }

    /// Gathers rows of a 2-D table; the same row may repeat. Gradients
    /// scatter-add back, so tied rows (shared positional vectors) train once.
    pub fn index_rows(&self, table: &Tensor, indices: &[usize]) -> Result<Tensor, TensorError> {
        let s = table.shape();
        if s.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "index_rows",
                lhs: s,
                rhs: vec![indices.len()],
            });
        }
        let (n, d) = (s[0], s[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(TensorError::ShapeMismatch {
                op: "index_rows",
                lhs: s,
                rhs: vec![bad],
            });
        }
        let tv = table.inner.borrow();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(&tv.values[i * d..(i + 1) * d]);
        }
        drop(tv);
        Ok(self.record(
            Op::IndexRows {
                indices: indices.to_vec(),
            },
            vec![table.clone()],
            vec![indices.len(), d],
            out,
        ))
    }

    /// Numerically stabilized softmax over the last dimension. Masked
    /// entries get probability exactly zero (and zero gradient); a fully
    /// masked row is an error.
    pub fn softmax_lastdim(
        &self,
        x: &Tensor,
        mask: Option<&BoolMask>,
    ) -> Result<Tensor, TensorError> {
        let s = x.shape();
        let d = *s.last().ok_or(TensorError::ShapeMismatch {
            op: "softmax",
            lhs: s.clone(),
            rhs: vec![],
        })?;
        if let Some(m) = mask {
            m.check_suffix_of(&s, "softmax")?;
        }
        let rows = x.numel() / d;
        let xv = x.inner.borrow();
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            let row = &xv.values[r * d..(r + 1) * d];
            let keep = |j: usize| {
                mask.map(|m| m.values[(r * d + j) % m.values.len()])
                    .unwrap_or(true)
            };
            let mut max = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if keep(j) && v > max {
                    max = v;
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(TensorError::FullyMaskedRow { row: r });
            }
            let mut sum = 0.0;
            for j in 0..d {
                if keep(j) {
                    let e = (row[j] - max).exp();
                    out[r * d + j] = e;
                    sum += e;
                }
            }
            for j in 0..d {
                out[r * d + j] /= sum;
            }
        }
        drop(xv);
        Ok(self.record(Op::Softmax, vec![x.clone()], s, out))
    }

    /// Per-row (last dim) standardization with epsilon 1e-5 inside the
    /// square root, then elementwise affine `gain * xhat + bias`.
    pub fn layer_norm(
        &self,
        x: &Tensor,
        gain: &Tensor,
        bias: &Tensor,
    ) -> Result<Tensor, TensorError> {
        const EPS: f64 = 1e-5;
        let s = x.shape();
        let d = *s.last().unwrap_or(&0);
        if gain.shape() != [d] || bias.shape() != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: s,
                rhs: gain.shape(),
            });
        }
        let rows = x.numel() / d;
        let xv = x.inner.borrow();
        let gv = gain.inner.borrow();
        let bv = bias.inner.borrow();
        let mut out = vec![0.0; rows * d];
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &xv.values[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + EPS).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = gv.values[j] * h + bv.values[j];
            }
        }
        drop(xv);
        drop(gv);
        drop(bv);
        Ok(self.record(
            Op::LayerNorm { xhat, inv_std },
            vec![x.clone(), gain.clone(), bias.clone()],
            s,
            out,
        ))
    }

    /// GELU in the tanh approximation.
    pub fn gelu(&self, x: &Tensor) -> Tensor {
        let out = x.inner.borrow().values.iter().map(|&v| gelu_fwd(v)).collect();
        self.record(Op::Gelu, vec![x.clone()], x.shape(), out)
    }

    pub fn relu(&self, x: &Tensor) -> Tensor {
        let out = x.inner.borrow().values.iter().map(|&v| v.max(0.0)).collect();
        self.record(Op::Relu, vec![x.clone()], x.shape(), out)
    }

    /// Inverted dropout: survivors scale by `1/(1-p)`; identity when not
    /// training. Draws one uniform per element from `rng`.
    pub fn dropout(
        &self,
        x: &Tensor,
        p: f64,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor, TensorError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::BadDropoutRate(p));
        }
        if !training || p == 0.0 {
            return Ok(x.clone());
        }
        let keep_scale = 1.0 / (1.0 - p);
        let mult: Vec<f64> = (0..x.numel())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep_scale })
            .collect();
        let out = {
            let xv = x.inner.borrow();
            xv.values.iter().zip(&mult).map(|(v, m)| v * m).collect()
        };
        Ok(self.record(Op::Dropout { mult }, vec![x.clone()], x.shape(), out))
    }

    /// Replaces masked entries with `value`; they receive zero gradient.
    pub fn masked_fill(
        &self,
        x: &Tensor,
        mask: &BoolMask,
        value: f64,
    ) -> Result<Tensor, TensorError> {
        let s = x.shape();
        mask.check_suffix_of(&s, "masked_fill")?;
        let n = x.numel();
        let keep: Vec<bool> = (0..n).map(|i| !mask.values[i % mask.values.len()]).collect();
        let out = {
            let xv = x.inner.borrow();
            xv.values
                .iter()
                .zip(&keep)
                .map(|(&v, &k)| if k { v } else { value })
                .collect()
        };
        Ok(self.record(Op::MaskedFill { keep }, vec![x.clone()], s, out))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum_all(&self, x: &Tensor) -> Tensor {
        let s: f64 = x.inner.borrow().values.iter().sum();
        self.record(Op::SumAll, vec![x.clone()], vec![], vec![s])
    }

    /// Mean absolute difference scaled by `1/denom`; convenience for losses.
    pub fn l1_to(&self, a: &Tensor, b: &Tensor, denom: f64) -> Result<Tensor, TensorError> {
        let diff = self.sub(a, b)?;
        let total = self.sum_all(&self.abs(&diff));
        Ok(self.scale(&total, 1.0 / denom))
    }
}

fn transpose_batch(values: &[f64], r: usize, c: usize) -> Vec<f64> {
    let batch = values.len() / (r * c);
    let mut out = vec![0.0; values.len()];
    for b in 0..batch {
        let src = &values[b * r * c..(b + 1) * r * c];
        let dst = &mut out[b * r * c..(b + 1) * r * c];
        for i in 0..r {
            for j in 0..c {
                dst[j * r + i] = src[i * c + j];
            }
        }
    }
    out
}

const GELU_K: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_C: f64 = 0.044715;

fn gelu_fwd(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_K * (x + GELU_C * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

/// Applies one node's backward rule, accumulating into the input grads.
pub(crate) fn backward_node(node: &Node, g: &[f64]) {
    match &node.op {
        Op::Add => {
            let (a, b) = (&node.inputs[0], &node.inputs[1]);
            if a.needs_grad() {
                a.accumulate_grad(g);
            }
            if b.needs_grad() {
                b.accumulate_grad(&fold_to(g, b.numel()));
            }
        }
        Op::Sub => {
            let (a, b) = (&node.inputs[0], &node.inputs[1]);
            if a.needs_grad() {
                a.accumulate_grad(g);
            }
            if b.needs_grad() {
                let folded = fold_to(g, b.numel());
                b.accumulate_grad(&folded.iter().map(|v| -v).collect::<Vec<_>>());
            }
        }
        Op::Mul => {
            let (a, b) = (&node.inputs[0], &node.inputs[1]);
            if a.needs_grad() {
                let bv = b.inner.borrow();
                let da: Vec<f64> = g
                    .iter()
                    .enumerate()
                    .map(|(i, gi)| gi * bv.values[i % bv.values.len()])
                    .collect();
                drop(bv);
                a.accumulate_grad(&da);
            }
            if b.needs_grad() {
                let av = a.inner.borrow();
                let prod: Vec<f64> = g.iter().zip(&av.values).map(|(gi, ai)| gi * ai).collect();
                drop(av);
                b.accumulate_grad(&fold_to(&prod, b.numel()));
            }
        }
        Op::Neg => {
            let x = &node.inputs[0];
            if x.needs_grad() {
                x.accumulate_grad(&g.iter().map(|v| -v).collect::<Vec<_>>());
            }
        }
        Op::Scale(c) => {
            let x = &node.inputs[0];
            if x.needs_grad() {
                x.accumulate_grad(&g.iter().map(|v| v * c).collect::<Vec<_>>());
            }
        }
        Op::Abs => {
            let x = &node.inputs[0];
            if x.needs_grad() {
                let xv = x.inner.borrow();
                let dx: Vec<f64> = g
                    .iter()
                    .zip(&xv.values)
                    .map(|(gi, &xi)| if xi == 0.0 { 0.0 } else { gi * xi.signum() })
                    .collect();
                drop(xv);
                x.accumulate_grad(&dx);
            }
        }
        Op::Matmul => {
            let (a, b) = (&node.inputs[0], &node.inputs[1]);
            let d = matmul_dims(&a.shape(), &b.shape()).expect("checked at record time");
            if a.needs_grad() {
                // dA = g . B^T, summed over the batch when A is shared.
                let bv = b.inner.borrow();
                let mut da = vec![0.0; a.numel()];
                for i in 0..d.batch {
                    let go = i * d.m * d.n;
                    let bo = if d.b_shared { 0 } else { i * d.k * d.n };
                    let ao = if d.a_shared { 0 } else { i * d.m * d.k };
                    gemm(
                        d.m,
                        d.n,
                        d.k,
                        1.0,
                        &g[go..go + d.m * d.n],
                        false,
                        &bv.values[bo..bo + d.k * d.n],
                        true,
                        1.0,
                        &mut da[ao..ao + d.m * d.k],
                    );
                }
                drop(bv);
                a.accumulate_grad(&da);
            }
            if b.needs_grad() {
                // dB = A^T . g, summed over the batch when B is shared.
                let av = a.inner.borrow();
                let mut db = vec![0.0; b.numel()];
                for i in 0..d.batch {
                    let go = i * d.m * d.n;
                    let ao = if d.a_shared { 0 } else { i * d.m * d.k };
                    let bo = if d.b_shared { 0 } else { i * d.k * d.n };
                    gemm(
                        d.k,
                        d.m,
                        d.n,
                        1.0,
                        &av.values[ao..ao + d.m * d.k],
                        true,
                        &g[go..go + d.m * d.n],
                        false,
                        1.0,
                        &mut db[bo..bo + d.k * d.n],
                    );
                }
                drop(av);
                b.accumulate_grad(&db);
            }
        }
        Op::TransposeLast2 => {
            let x = &node.inputs[0];
            if x.needs_grad() {
                let s = node.output.shape();
                let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                x.accumulate_grad(&transpose_batch(g, r, c));
            }
        }
        Op::Reshape => {
            let x = &node.inputs[0];
            if x.needs_grad() {
                x.accumulate_grad(g);
            }
        }
        Op::SliceLast { start } => {
            let x = &node.inputs[0];
            if x.needs_grad() {
                let d = *x.shape().last().unwrap();
                let len = *node.output.shape().last().unwrap();
                let rows = x.numel() / d;
                let mut dx = vec![0.0; x.numel()];
                for r in 0..rows {
                    dx[r * d + start..r * d + start + len]
                        .copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                x.accumulate_grad(&dx);
            }
        }
        Op::ConcatLast => {
            let total = *node.output.shape().last().unwrap();
            let rows = node.output.numel() / total;
            let mut col = 0;
            for p in &node.inputs {
                let w = *p.shape().last().unwrap();
                if p.needs_grad() {
                    let mut dp = vec![0.0; p.numel()];
                    for r in 0..rows {
                        dp[r * w..(r + 1) * w]
                            .copy_from_slice(&g[r * total + col..r * total + col + w]);
                    }
                    p.accumulate_grad(&dp);
                }
                col += w;
            }
        }
        Op::IndexRows { indices } => {
            let table = &node.inputs[0];
            if table.needs_grad() {
                let d = table.shape()[1];
                let mut dt = vec![0.0; table.numel()];
                for (r, &i) in indices.iter().enumerate() {
                    for j in 0..d {
                        dt[i * d + j] += g[r * d + j];
                    }
                }
                table.accumulate_grad(&dt);
            }
        }
        Op::Softmax => {
            let x = &node.inputs[0];
            if x.needs_grad() {
                let y = node.output.inner.borrow();
                let d = *node.output.shape().last().unwrap();
                let rows = y.values.len() / d;
                let mut dx = vec![0.0; y.values.len()];
                for r in 0..rows {
                    let yr = &y.values[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let dot: f64 = yr.iter().zip(gr).map(|(yi, gi)| yi * gi).sum();
                    for j in 0..d {
                        dx[r * d + j] = yr[j] * (gr[j] - dot);
                    }
                }
                drop(y);
                x.accumulate_grad(&dx);
            }
        }
        Op::LayerNorm { xhat, inv_std } => {
            let (x, gain, bias) = (&node.inputs[0], &node.inputs[1], &node.inputs[2]);
            let d = gain.numel();
            let rows = x.numel() / d;
            if gain.needs_grad() {
                let mut dg = vec![0.0; d];
                for r in 0..rows {
                    for j in 0..d {
                        dg[j] += g[r * d + j] * xhat[r * d + j];
                    }
                }
                gain.accumulate_grad(&dg);
            }
            if bias.needs_grad() {
                let mut db = vec![0.0; d];
                for r in 0..rows {
                    for j in 0..d {
                        db[j] += g[r * d + j];
                    }
                }
                bias.accumulate_grad(&db);
            }
            if x.needs_grad() {
                let gv = gain.inner.borrow();
                let mut dx = vec![0.0; x.numel()];
                for r in 0..rows {
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for j in 0..d {
                        let gg = g[r * d + j] * gv.values[j];
                        m1 += gg;
                        m2 += gg * xhat[r * d + j];
                    }
                    m1 /= d as f64;
                    m2 /= d as f64;
                    for j in 0..d {
                        let gg = g[r * d + j] * gv.values[j];
                        dx[r * d + j] = inv_std[r] * (gg - m1 - xhat[r * d + j] * m2);
                    }
                }
                drop(gv);
                x.accumulate_grad(&dx);
            }
        }
        Op::Gelu => {
            let x = &node.inputs[0];
            if x.needs_grad() {
                let xv = x.inner.borrow();
                let dx: Vec<f64> = g
                    .iter()
                    .zip(&xv.values)
                    .map(|(gi, &xi)| gi * gelu_grad(xi))
                    .collect();
                drop(xv);
                x.accumulate_grad(&dx);
            }
        }
        Op::Relu => {
            let x = &node.inputs[0];
            if x.needs_grad() {
                let xv = x.inner.borrow();
                let dx: Vec<f64> = g
                    .iter()
                    .zip(&xv.values)
                    .map(|(gi, &xi)| if xi > 0.0 { *gi } else { 0.0 })
                    .collect();
                drop(xv);
                x.accumulate_grad(&dx);
            }
        }
        Op::Dropout { mult } => {
            let x = &node.inputs[0];
            if x.needs_grad() {
                let dx: Vec<f64> = g.iter().zip(mult).map(|(gi, m)| gi * m).collect();
                x.accumulate_grad(&dx);
            }
        }
        Op::MaskedFill { keep } => {
            let x = &node.inputs[0];
            if x.needs_grad() {
                let dx: Vec<f64> = g
                    .iter()
                    .zip(keep)
                    .map(|(gi, &k)| if k { *gi } else { 0.0 })
                    .collect();
                x.accumulate_grad(&dx);
            }
        }
        Op::SumAll => {
            let x = &node.inputs[0];
            if x.needs_grad() {
                x.accumulate_grad(&vec![g[0]; x.numel()]);
            }
        }
    }
}
