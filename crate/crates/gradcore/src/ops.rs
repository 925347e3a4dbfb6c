//! Forward kernels, the recorded node type, and the reverse-mode rules.
//!
//! Every op validates shapes, computes its output eagerly, rejects non-finite
//! results, and appends one node. Backward rules accumulate (`+=`) into input
//! gradients so shared subexpressions sum their contributions.

use crate::gemm::gemm;
use crate::tape::{Slot, Var};
use crate::{GradError, Result};

const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

/// Exact Gaussian-CDF GELU: `0.5 * x * (1 + erf(x / sqrt(2)))`.
#[inline]
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

/// d/dx of [`gelu_scalar`]: `Phi(x) + x * phi(x)`.
#[inline]
pub fn gelu_grad_scalar(x: f64) -> f64 {
    let phi_cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    let phi_pdf = (-0.5 * x * x).exp() / SQRT_2PI;
    phi_cdf + x * phi_pdf
}

pub(crate) enum Node {
    MatMul { a: usize, b: usize, out: usize },
    Transpose { a: usize, out: usize },
    Add { a: usize, b: usize, out: usize },
    AddBias { a: usize, bias: usize, out: usize },
    Scale { a: usize, factor: f64, out: usize },
    MulScalar { a: usize, s: usize, out: usize },
    SoftmaxRows { a: usize, out: usize },
    LayerNorm {
        a: usize,
        gamma: usize,
        beta: usize,
        out: usize,
        /// Per-row `[mean, 1/std]` captured by the forward pass.
        cache: Vec<f64>,
    },
    Gelu { a: usize, out: usize },
    Tanh { a: usize, out: usize },
    Lookup { table: usize, indices: Vec<usize>, out: usize },
    SliceRows { a: usize, start: usize, out: usize },
    SliceCols { a: usize, start: usize, out: usize },
    StrideRows { a: usize, offset: usize, stride: usize, out: usize },
    ConcatRows { inputs: Vec<usize>, out: usize },
    ConcatCols { inputs: Vec<usize>, out: usize },
    InterleaveRows { inputs: Vec<usize>, out: usize },
    Sum { a: usize, out: usize },
    RowMse {
        pred: usize,
        target: usize,
        mask: Vec<bool>,
        divisor: f64,
        out: usize,
    },
}

fn finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(GradError::NonFinite { op, what: "output" })
    }
}

impl Var {
    fn record(
        &self,
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        needs: bool,
        make: impl FnOnce(usize) -> Node,
    ) -> Result<Var> {
        finite(op, &data)?;
        let mut inner = self.tape.0.borrow_mut();
        if inner.frozen {
            return Err(GradError::contract(op, "tape is frozen after backward"));
        }
        let out = inner.push(shape, data, needs);
        inner.nodes.push(make(out));
        drop(inner);
        Ok(Var {
            tape: self.tape.clone(),
            idx: out,
        })
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, rhs: &Var) -> Result<Var> {
        self.same_tape(rhs, "matmul")?;
        let (shape, data, needs) = {
            let inner = self.tape.0.borrow();
            let (sa, sb) = (&inner.slots[self.idx], &inner.slots[rhs.idx]);
            let (m, ka) = sa.dims2()?;
            let (kb, n) = sb.dims2()?;
            if ka != kb {
                return Err(GradError::ShapeMismatch {
                    op: "matmul",
                    lhs: sa.shape.clone(),
                    rhs: sb.shape.clone(),
                });
            }
            let mut out = vec![0.0; m * n];
            gemm(false, false, m, ka, n, 1.0, &sa.data, &sb.data, 0.0, &mut out);
            (vec![m, n], out, sa.needs || sb.needs)
        };
        self.record("matmul", shape, data, needs, |out| Node::MatMul {
            a: self.idx,
            b: rhs.idx,
            out,
        })
    }

    pub fn transpose(&self) -> Result<Var> {
        let (shape, data, needs) = {
            let inner = self.tape.0.borrow();
            let sa = &inner.slots[self.idx];
            let (r, c) = sa.dims2()?;
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = sa.data[i * c + j];
                }
            }
            (vec![c, r], out, sa.needs)
        };
        self.record("transpose", shape, data, needs, |out| Node::Transpose {
            a: self.idx,
            out,
        })
    }

    /// Elementwise addition of two same-shape tensors.
    pub fn add(&self, rhs: &Var) -> Result<Var> {
        self.same_tape(rhs, "add")?;
        let (shape, data, needs) = {
            let inner = self.tape.0.borrow();
            let (sa, sb) = (&inner.slots[self.idx], &inner.slots[rhs.idx]);
            if sa.dims2()? != sb.dims2()? {
                return Err(GradError::ShapeMismatch {
                    op: "add",
                    lhs: sa.shape.clone(),
                    rhs: sb.shape.clone(),
                });
            }
            let data: Vec<f64> = sa.data.iter().zip(&sb.data).map(|(x, y)| x + y).collect();
            (sa.shape.clone(), data, sa.needs || sb.needs)
        };
        self.record("add", shape, data, needs, |out| Node::Add {
            a: self.idx,
            b: rhs.idx,
            out,
        })
    }

    /// `[m, n] + [n]`, the bias vector added to every row.
    pub fn add_bias(&self, bias: &Var) -> Result<Var> {
        self.same_tape(bias, "add_bias")?;
        let (shape, data, needs) = {
            let inner = self.tape.0.borrow();
            let (sa, sb) = (&inner.slots[self.idx], &inner.slots[bias.idx]);
            let (m, n) = sa.dims2()?;
            let (br, bn) = sb.dims2()?;
            if br != 1 || bn != n {
                return Err(GradError::ShapeMismatch {
                    op: "add_bias",
                    lhs: sa.shape.clone(),
                    rhs: sb.shape.clone(),
                });
            }
            let mut data = sa.data.clone();
            for i in 0..m {
                for j in 0..n {
                    data[i * n + j] += sb.data[j];
                }
            }
            (sa.shape.clone(), data, sa.needs || sb.needs)
        };
        self.record("add_bias", shape, data, needs, |out| Node::AddBias {
            a: self.idx,
            bias: bias.idx,
            out,
        })
    }

    /// Multiplication by a compile-time-known scalar.
    pub fn scale(&self, factor: f64) -> Result<Var> {
        if !factor.is_finite() {
            return Err(GradError::NonFinite {
                op: "scale",
                what: "factor",
            });
        }
        let (shape, data, needs) = {
            let inner = self.tape.0.borrow();
            let sa = &inner.slots[self.idx];
            let data: Vec<f64> = sa.data.iter().map(|x| x * factor).collect();
            (sa.shape.clone(), data, sa.needs)
        };
        self.record("scale", shape, data, needs, |out| Node::Scale {
            a: self.idx,
            factor,
            out,
        })
    }

    /// Multiplication by a scalar that is itself on the tape (shape `[1]`).
    pub fn mul_scalar(&self, s: &Var) -> Result<Var> {
        self.same_tape(s, "mul_scalar")?;
        let (shape, data, needs) = {
            let inner = self.tape.0.borrow();
            let (sa, ss) = (&inner.slots[self.idx], &inner.slots[s.idx]);
            if ss.data.len() != 1 {
                return Err(GradError::ShapeMismatch {
                    op: "mul_scalar",
                    lhs: sa.shape.clone(),
                    rhs: ss.shape.clone(),
                });
            }
            let sv = ss.data[0];
            let data: Vec<f64> = sa.data.iter().map(|x| x * sv).collect();
            (sa.shape.clone(), data, sa.needs || ss.needs)
        };
        self.record("mul_scalar", shape, data, needs, |out| Node::MulScalar {
            a: self.idx,
            s: s.idx,
            out,
        })
    }

    /// Numerically stable softmax over each row.
    pub fn softmax_rows(&self) -> Result<Var> {
        let (shape, data, needs) = {
            let inner = self.tape.0.borrow();
            let sa = &inner.slots[self.idx];
            let (m, n) = sa.dims2()?;
            if n == 0 {
                return Err(GradError::contract("softmax_rows", "empty rows"));
            }
            let mut data = vec![0.0; m * n];
            for i in 0..m {
                let row = &sa.data[i * n..(i + 1) * n];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let out_row = &mut data[i * n..(i + 1) * n];
                let mut sum = 0.0;
                for j in 0..n {
                    let e = (row[j] - max).exp();
                    out_row[j] = e;
                    sum += e;
                }
                for v in out_row.iter_mut() {
                    *v /= sum;
                }
            }
            (sa.shape.clone(), data, sa.needs)
        };
        self.record("softmax_rows", shape, data, needs, |out| Node::SoftmaxRows {
            a: self.idx,
            out,
        })
    }

    /// Per-row layer normalization with learnable affine (`gamma`, `beta`).
    pub fn layer_norm(&self, gamma: &Var, beta: &Var, eps: f64) -> Result<Var> {
        self.same_tape(gamma, "layer_norm")?;
        self.same_tape(beta, "layer_norm")?;
        let (shape, data, needs, cache) = {
            let inner = self.tape.0.borrow();
            let sa = &inner.slots[self.idx];
            let (sg, sb) = (&inner.slots[gamma.idx], &inner.slots[beta.idx]);
            let (m, n) = sa.dims2()?;
            if sg.data.len() != n || sb.data.len() != n {
                return Err(GradError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: sa.shape.clone(),
                    rhs: sg.shape.clone(),
                });
            }
            if n == 0 {
                return Err(GradError::contract("layer_norm", "empty rows"));
            }
            let mut data = vec![0.0; m * n];
            let mut cache = vec![0.0; 2 * m];
            for i in 0..m {
                let row = &sa.data[i * n..(i + 1) * n];
                let mean = row.iter().sum::<f64>() / n as f64;
                let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
                let rstd = 1.0 / (var + eps).sqrt();
                cache[2 * i] = mean;
                cache[2 * i + 1] = rstd;
                let out_row = &mut data[i * n..(i + 1) * n];
                for j in 0..n {
                    out_row[j] = sg.data[j] * (row[j] - mean) * rstd + sb.data[j];
                }
            }
            (
                sa.shape.clone(),
                data,
                sa.needs || sg.needs || sb.needs,
                cache,
            )
        };
        self.record("layer_norm", shape, data, needs, |out| Node::LayerNorm {
            a: self.idx,
            gamma: gamma.idx,
            beta: beta.idx,
            out,
            cache,
        })
    }

    pub fn gelu(&self) -> Result<Var> {
        let (shape, data, needs) = {
            let inner = self.tape.0.borrow();
            let sa = &inner.slots[self.idx];
            let data: Vec<f64> = sa.data.iter().map(|&x| gelu_scalar(x)).collect();
            (sa.shape.clone(), data, sa.needs)
        };
        self.record("gelu", shape, data, needs, |out| Node::Gelu {
            a: self.idx,
            out,
        })
    }

    pub fn tanh(&self) -> Result<Var> {
        let (shape, data, needs) = {
            let inner = self.tape.0.borrow();
            let sa = &inner.slots[self.idx];
            let data: Vec<f64> = sa.data.iter().map(|x| x.tanh()).collect();
            (sa.shape.clone(), data, sa.needs)
        };
        self.record("tanh", shape, data, needs, |out| Node::Tanh {
            a: self.idx,
            out,
        })
    }

    /// Row gather: `self` is a `[rows, d]` table, output row i is table row
    /// `indices[i]`. Duplicate indices accumulate their gradients.
    pub fn lookup(&self, indices: &[usize]) -> Result<Var> {
        let (shape, data, needs) = {
            let inner = self.tape.0.borrow();
            let sa = &inner.slots[self.idx];
            let (rows, d) = sa.dims2()?;
            let mut data = vec![0.0; indices.len() * d];
            for (i, &t) in indices.iter().enumerate() {
                if t >= rows {
                    return Err(GradError::IndexRange {
                        op: "lookup",
                        index: t,
                        bound: rows,
                    });
                }
                data[i * d..(i + 1) * d].copy_from_slice(&sa.data[t * d..(t + 1) * d]);
            }
            (vec![indices.len(), d], data, sa.needs)
        };
        self.record("lookup", shape, data, needs, |out| Node::Lookup {
            table: self.idx,
            indices: indices.to_vec(),
            out,
        })
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Var> {
        let (shape, data, needs) = {
            let inner = self.tape.0.borrow();
            let sa = &inner.slots[self.idx];
            let (r, c) = sa.dims2()?;
            if start + len > r {
                return Err(GradError::IndexRange {
                    op: "slice_rows",
                    index: start + len,
                    bound: r,
                });
            }
            let data = sa.data[start * c..(start + len) * c].to_vec();
            (vec![len, c], data, sa.needs)
        };
        self.record("slice_rows", shape, data, needs, |out| Node::SliceRows {
            a: self.idx,
            start,
            out,
        })
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Var> {
        let (shape, data, needs) = {
            let inner = self.tape.0.borrow();
            let sa = &inner.slots[self.idx];
            let (r, c) = sa.dims2()?;
            if start + len > c {
                return Err(GradError::IndexRange {
                    op: "slice_cols",
                    index: start + len,
                    bound: c,
                });
            }
            let mut data = vec![0.0; r * len];
            for i in 0..r {
                data[i * len..(i + 1) * len]
                    .copy_from_slice(&sa.data[i * c + start..i * c + start + len]);
            }
            (vec![r, len], data, sa.needs)
        };
        self.record("slice_cols", shape, data, needs, |out| Node::SliceCols {
            a: self.idx,
            start,
            out,
        })
    }

    /// Strided row gather: rows `offset, offset+stride, ...` (`count` of them).
    pub fn stride_rows(&self, offset: usize, stride: usize, count: usize) -> Result<Var> {
        if stride == 0 {
            return Err(GradError::contract("stride_rows", "stride must be nonzero"));
        }
        let (shape, data, needs) = {
            let inner = self.tape.0.borrow();
            let sa = &inner.slots[self.idx];
            let (r, c) = sa.dims2()?;
            if count > 0 {
                let last = offset + (count - 1) * stride;
                if last >= r {
                    return Err(GradError::IndexRange {
                        op: "stride_rows",
                        index: last,
                        bound: r,
                    });
                }
            }
            let mut data = vec![0.0; count * c];
            for i in 0..count {
                let src = offset + i * stride;
                data[i * c..(i + 1) * c].copy_from_slice(&sa.data[src * c..(src + 1) * c]);
            }
            (vec![count, c], data, sa.needs)
        };
        self.record("stride_rows", shape, data, needs, |out| Node::StrideRows {
            a: self.idx,
            offset,
            stride,
            out,
        })
    }

    /// Sum of all elements, as a `[1]` scalar.
    pub fn sum(&self) -> Result<Var> {
        let (data, needs) = {
            let inner = self.tape.0.borrow();
            let sa = &inner.slots[self.idx];
            (vec![sa.data.iter().sum::<f64>()], sa.needs)
        };
        self.record("sum", vec![1], data, needs, |out| Node::Sum {
            a: self.idx,
            out,
        })
    }

    /// Masked mean over rows of the squared Euclidean distance to `target`.
    ///
    /// Only rows with `mask[i]` contribute; the total is divided by
    /// `divisor` (the caller's valid-row count, which may span a larger
    /// batch than this tensor). Errors when no row is valid.
    pub fn row_mse(&self, target: &Var, mask: &[bool], divisor: f64) -> Result<Var> {
        self.same_tape(target, "row_mse")?;
        let (data, needs) = {
            let inner = self.tape.0.borrow();
            let (sp, st) = (&inner.slots[self.idx], &inner.slots[target.idx]);
            let (m, n) = sp.dims2()?;
            if sp.dims2()? != st.dims2()? {
                return Err(GradError::ShapeMismatch {
                    op: "row_mse",
                    lhs: sp.shape.clone(),
                    rhs: st.shape.clone(),
                });
            }
            if mask.len() != m {
                return Err(GradError::contract(
                    "row_mse",
                    format!("mask has {} entries for {} rows", mask.len(), m),
                ));
            }
            if !mask.iter().any(|&v| v) {
                return Err(GradError::contract("row_mse", "no valid rows in mask"));
            }
            if !(divisor > 0.0) {
                return Err(GradError::contract("row_mse", "divisor must be positive"));
            }
            let mut total = 0.0;
            for i in 0..m {
                if !mask[i] {
                    continue;
                }
                for j in 0..n {
                    let d = sp.data[i * n + j] - st.data[i * n + j];
                    total += d * d;
                }
            }
            (vec![total / divisor], sp.needs || st.needs)
        };
        let mask = mask.to_vec();
        self.record("row_mse", vec![1], data, needs, |out| Node::RowMse {
            pred: self.idx,
            target: target.idx,
            mask,
            divisor,
            out,
        })
    }
}

fn multi_input_prep<'a>(op: &'static str, vars: &[&'a Var]) -> Result<&'a Var> {
    let first = vars
        .first()
        .ok_or_else(|| GradError::contract(op, "needs at least one input"))?;
    for v in &vars[1..] {
        first.same_tape(v, op)?;
    }
    Ok(first)
}

/// Stack inputs vertically: `[r1, c], [r2, c], ... -> [r1+r2+..., c]`.
pub fn concat_rows(vars: &[&Var]) -> Result<Var> {
    let first = multi_input_prep("concat_rows", vars)?;
    let (shape, data, needs) = {
        let inner = first.tape.0.borrow();
        let (_, c) = inner.slots[first.idx].dims2()?;
        let mut rows = 0;
        let mut needs = false;
        for v in vars {
            let s = &inner.slots[v.idx];
            let (r, vc) = s.dims2()?;
            if vc != c {
                return Err(GradError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: inner.slots[first.idx].shape.clone(),
                    rhs: s.shape.clone(),
                });
            }
            rows += r;
            needs |= s.needs;
        }
        let mut data = Vec::with_capacity(rows * c);
        for v in vars {
            data.extend_from_slice(&inner.slots[v.idx].data);
        }
        (vec![rows, c], data, needs)
    };
    let inputs: Vec<usize> = vars.iter().map(|v| v.idx).collect();
    first.record("concat_rows", shape, data, needs, |out| Node::ConcatRows {
        inputs,
        out,
    })
}

/// Stack inputs horizontally: `[r, c1], [r, c2], ... -> [r, c1+c2+...]`.
pub fn concat_cols(vars: &[&Var]) -> Result<Var> {
    let first = multi_input_prep("concat_cols", vars)?;
    let (shape, data, needs) = {
        let inner = first.tape.0.borrow();
        let (r, _) = inner.slots[first.idx].dims2()?;
        let mut cols = 0;
        let mut needs = false;
        for v in vars {
            let s = &inner.slots[v.idx];
            let (vr, c) = s.dims2()?;
            if vr != r {
                return Err(GradError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: inner.slots[first.idx].shape.clone(),
                    rhs: s.shape.clone(),
                });
            }
            cols += c;
            needs |= s.needs;
        }
        let mut data = vec![0.0; r * cols];
        let mut off = 0;
        for v in vars {
            let s = &inner.slots[v.idx];
            let (_, c) = s.dims2()?;
            for i in 0..r {
                data[i * cols + off..i * cols + off + c]
                    .copy_from_slice(&s.data[i * c..(i + 1) * c]);
            }
            off += c;
        }
        (vec![r, cols], data, needs)
    };
    let inputs: Vec<usize> = vars.iter().map(|v| v.idx).collect();
    first.record("concat_cols", shape, data, needs, |out| Node::ConcatCols {
        inputs,
        out,
    })
}

/// Row-interleave k same-shape `[r, c]` inputs into `[k*r, c]`: output row
/// `j*k + i` is input i's row j. With three inputs this lays a token triple
/// per step, matching the (return, state, action) sequence order.
pub fn interleave_rows(vars: &[&Var]) -> Result<Var> {
    let first = multi_input_prep("interleave_rows", vars)?;
    let k = vars.len();
    let (shape, data, needs) = {
        let inner = first.tape.0.borrow();
        let (r, c) = inner.slots[first.idx].dims2()?;
        let mut needs = false;
        for v in vars {
            let s = &inner.slots[v.idx];
            if s.dims2()? != (r, c) {
                return Err(GradError::ShapeMismatch {
                    op: "interleave_rows",
                    lhs: inner.slots[first.idx].shape.clone(),
                    rhs: s.shape.clone(),
                });
            }
            needs |= s.needs;
        }
        let mut data = vec![0.0; k * r * c];
        for (i, v) in vars.iter().enumerate() {
            let s = &inner.slots[v.idx];
            for j in 0..r {
                let dst = (j * k + i) * c;
                data[dst..dst + c].copy_from_slice(&s.data[j * c..(j + 1) * c]);
            }
        }
        (vec![k * r, c], data, needs)
    };
    let inputs: Vec<usize> = vars.iter().map(|v| v.idx).collect();
    first.record("interleave_rows", shape, data, needs, |out| {
        Node::InterleaveRows { inputs, out }
    })
}

// ---------------------------------------------------------------------------
// Reverse rules
// ---------------------------------------------------------------------------

fn acc_into<'a>(
    grads: &'a mut [Option<Vec<f64>>],
    idx: usize,
    len: usize,
) -> &'a mut [f64] {
    grads[idx].get_or_insert_with(|| vec![0.0; len]).as_mut_slice()
}

pub(crate) fn backprop(
    node: &Node,
    slots: &[Slot],
    grads: &mut Vec<Option<Vec<f64>>>,
) -> Result<()> {
    match node {
        Node::MatMul { a, b, out } => {
            let Some(dout) = grads[*out].take() else { return Ok(()) };
            let (m, k) = slots[*a].dims2()?;
            let (_, n) = slots[*b].dims2()?;
            if slots[*a].needs {
                let bd = &slots[*b].data;
                let da = acc_into(grads, *a, m * k);
                gemm(false, true, m, n, k, 1.0, &dout, bd, 1.0, da);
            }
            if slots[*b].needs {
                let ad = &slots[*a].data;
                let db = acc_into(grads, *b, k * n);
                gemm(true, false, k, m, n, 1.0, ad, &dout, 1.0, db);
            }
        }
        Node::Transpose { a, out } => {
            let Some(dout) = grads[*out].take() else { return Ok(()) };
            if slots[*a].needs {
                let (r, c) = slots[*a].dims2()?;
                let da = acc_into(grads, *a, r * c);
                for i in 0..c {
                    for j in 0..r {
                        da[j * c + i] += dout[i * r + j];
                    }
                }
            }
        }
        Node::Add { a, b, out } => {
            let Some(dout) = grads[*out].take() else { return Ok(()) };
            for idx in [*a, *b] {
                if slots[idx].needs {
                    let d = acc_into(grads, idx, dout.len());
                    for (g, v) in d.iter_mut().zip(&dout) {
                        *g += v;
                    }
                }
            }
        }
        Node::AddBias { a, bias, out } => {
            let Some(dout) = grads[*out].take() else { return Ok(()) };
            let (m, n) = slots[*a].dims2()?;
            if slots[*a].needs {
                let da = acc_into(grads, *a, m * n);
                for (g, v) in da.iter_mut().zip(&dout) {
                    *g += v;
                }
            }
            if slots[*bias].needs {
                let db = acc_into(grads, *bias, n);
                for i in 0..m {
                    for j in 0..n {
                        db[j] += dout[i * n + j];
                    }
                }
            }
        }
        Node::Scale { a, factor, out } => {
            let Some(dout) = grads[*out].take() else { return Ok(()) };
            if slots[*a].needs {
                let da = acc_into(grads, *a, dout.len());
                for (g, v) in da.iter_mut().zip(&dout) {
                    *g += factor * v;
                }
            }
        }
        Node::MulScalar { a, s, out } => {
            let Some(dout) = grads[*out].take() else { return Ok(()) };
            let sv = slots[*s].data[0];
            if slots[*a].needs {
                let da = acc_into(grads, *a, dout.len());
                for (g, v) in da.iter_mut().zip(&dout) {
                    *g += sv * v;
                }
            }
            if slots[*s].needs {
                let dot: f64 = slots[*a].data.iter().zip(&dout).map(|(x, v)| x * v).sum();
                acc_into(grads, *s, 1)[0] += dot;
            }
        }
        Node::SoftmaxRows { a, out } => {
            let Some(dout) = grads[*out].take() else { return Ok(()) };
            if slots[*a].needs {
                let (m, n) = slots[*a].dims2()?;
                let y = &slots[*out].data;
                let da = acc_into(grads, *a, m * n);
                for i in 0..m {
                    let yr = &y[i * n..(i + 1) * n];
                    let dr = &dout[i * n..(i + 1) * n];
                    let dot: f64 = yr.iter().zip(dr).map(|(y, d)| y * d).sum();
                    let ga = &mut da[i * n..(i + 1) * n];
                    for j in 0..n {
                        ga[j] += yr[j] * (dr[j] - dot);
                    }
                }
            }
        }
        Node::LayerNorm {
            a,
            gamma,
            beta,
            out,
            cache,
        } => {
            let Some(dout) = grads[*out].take() else { return Ok(()) };
            let (m, n) = slots[*a].dims2()?;
            let x = &slots[*a].data;
            let g = &slots[*gamma].data;
            if slots[*beta].needs {
                let db = acc_into(grads, *beta, n);
                for i in 0..m {
                    for j in 0..n {
                        db[j] += dout[i * n + j];
                    }
                }
            }
            if slots[*gamma].needs {
                let dg = acc_into(grads, *gamma, n);
                for i in 0..m {
                    let (mean, rstd) = (cache[2 * i], cache[2 * i + 1]);
                    for j in 0..n {
                        let xhat = (x[i * n + j] - mean) * rstd;
                        dg[j] += dout[i * n + j] * xhat;
                    }
                }
            }
            if slots[*a].needs {
                let da = acc_into(grads, *a, m * n);
                let nf = n as f64;
                for i in 0..m {
                    let (mean, rstd) = (cache[2 * i], cache[2 * i + 1]);
                    let xr = &x[i * n..(i + 1) * n];
                    let dr = &dout[i * n..(i + 1) * n];
                    let mut sum_gd = 0.0;
                    let mut sum_gdx = 0.0;
                    for j in 0..n {
                        let gd = g[j] * dr[j];
                        let xhat = (xr[j] - mean) * rstd;
                        sum_gd += gd;
                        sum_gdx += gd * xhat;
                    }
                    let (mg, mgx) = (sum_gd / nf, sum_gdx / nf);
                    let ga = &mut da[i * n..(i + 1) * n];
                    for j in 0..n {
                        let gd = g[j] * dr[j];
                        let xhat = (xr[j] - mean) * rstd;
                        ga[j] += rstd * (gd - mg - xhat * mgx);
                    }
                }
            }
        }
        Node::Gelu { a, out } => {
            let Some(dout) = grads[*out].take() else { return Ok(()) };
            if slots[*a].needs {
                let x = &slots[*a].data;
                let da = acc_into(grads, *a, x.len());
                for j in 0..x.len() {
                    da[j] += dout[j] * gelu_grad_scalar(x[j]);
                }
            }
        }
        Node::Tanh { a, out } => {
            let Some(dout) = grads[*out].take() else { return Ok(()) };
            if slots[*a].needs {
                let y = &slots[*out].data;
                let da = acc_into(grads, *a, y.len());
                for j in 0..y.len() {
                    da[j] += dout[j] * (1.0 - y[j] * y[j]);
                }
            }
        }
        Node::Lookup { table, indices, out } => {
            let Some(dout) = grads[*out].take() else { return Ok(()) };
            if slots[*table].needs {
                let (rows, d) = slots[*table].dims2()?;
                let dt = acc_into(grads, *table, rows * d);
                for (i, &t) in indices.iter().enumerate() {
                    for j in 0..d {
                        dt[t * d + j] += dout[i * d + j];
                    }
                }
            }
        }
        Node::SliceRows { a, start, out } => {
            let Some(dout) = grads[*out].take() else { return Ok(()) };
            if slots[*a].needs {
                let (r, c) = slots[*a].dims2()?;
                let da = acc_into(grads, *a, r * c);
                let base = start * c;
                for (g, v) in da[base..base + dout.len()].iter_mut().zip(&dout) {
                    *g += v;
                }
            }
        }
        Node::SliceCols { a, start, out } => {
            let Some(dout) = grads[*out].take() else { return Ok(()) };
            if slots[*a].needs {
                let (r, c) = slots[*a].dims2()?;
                let w = dout.len() / r;
                let da = acc_into(grads, *a, r * c);
                for i in 0..r {
                    for j in 0..w {
                        da[i * c + start + j] += dout[i * w + j];
                    }
                }
            }
        }
        Node::StrideRows {
            a,
            offset,
            stride,
            out,
        } => {
            let Some(dout) = grads[*out].take() else { return Ok(()) };
            if slots[*a].needs {
                let (r, c) = slots[*a].dims2()?;
                let count = dout.len() / c;
                let da = acc_into(grads, *a, r * c);
                for i in 0..count {
                    let dst = (offset + i * stride) * c;
                    for j in 0..c {
                        da[dst + j] += dout[i * c + j];
                    }
                }
            }
        }
        Node::ConcatRows { inputs, out } => {
            let Some(dout) = grads[*out].take() else { return Ok(()) };
            let mut off = 0;
            for &idx in inputs {
                let (r, c) = slots[idx].dims2()?;
                if slots[idx].needs {
                    let d = acc_into(grads, idx, r * c);
                    for (g, v) in d.iter_mut().zip(&dout[off..off + r * c]) {
                        *g += v;
                    }
                }
                off += r * c;
            }
        }
        Node::ConcatCols { inputs, out } => {
            let Some(dout) = grads[*out].take() else { return Ok(()) };
            let (rows, total_cols) = slots[*out].dims2()?;
            let mut off = 0;
            for &idx in inputs {
                let (_, c) = slots[idx].dims2()?;
                if slots[idx].needs {
                    let d = acc_into(grads, idx, rows * c);
                    for i in 0..rows {
                        for j in 0..c {
                            d[i * c + j] += dout[i * total_cols + off + j];
                        }
                    }
                }
                off += c;
            }
        }
        Node::InterleaveRows { inputs, out } => {
            let Some(dout) = grads[*out].take() else { return Ok(()) };
            let k = inputs.len();
            for (i, &idx) in inputs.iter().enumerate() {
                if !slots[idx].needs {
                    continue;
                }
                let (r, c) = slots[idx].dims2()?;
                let d = acc_into(grads, idx, r * c);
                for j in 0..r {
                    let src = (j * k + i) * c;
                    for t in 0..c {
                        d[j * c + t] += dout[src + t];
                    }
                }
            }
        }
        Node::Sum { a, out } => {
            let Some(dout) = grads[*out].take() else { return Ok(()) };
            if slots[*a].needs {
                let da = acc_into(grads, *a, slots[*a].data.len());
                for g in da.iter_mut() {
                    *g += dout[0];
                }
            }
        }
        Node::RowMse {
            pred,
            target,
            mask,
            divisor,
            out,
        } => {
            let Some(dout) = grads[*out].take() else { return Ok(()) };
            let (m, n) = slots[*pred].dims2()?;
            let scale = 2.0 * dout[0] / divisor;
            for (slot_idx, sign) in [(*pred, 1.0), (*target, -1.0)] {
                if !slots[slot_idx].needs {
                    continue;
                }
                let p = &slots[*pred].data;
                let t = &slots[*target].data;
                let d = acc_into(grads, slot_idx, m * n);
                for i in 0..m {
                    if !mask[i] {
                        continue;
                    }
                    for j in 0..n {
                        d[i * n + j] += sign * scale * (p[i * n + j] - t[i * n + j]);
                    }
                }
            }
        }
    }
    Ok(())
}
