//! Define-by-run tape.
//!
//! Every operation appends a node holding its output values; the tape is
//! rebuilt per forward pass and replayed in reverse by
//! [`Tape::backward`]. Nodes are in topological order by construction.
//!
//! Shape rules are strict: elementwise ops take equal dims or a scalar on
//! one side; anything else is a shape error naming both dims.

use crate::error::{Error, Result};
use crate::num::tensor::Tensor;

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorRef(pub(crate) usize);

pub(crate) const NEG_MASK: f32 = -1.0e9;
const GELU_C: f32 = 0.797_884_56; // sqrt(2/pi)
const GELU_A: f32 = 0.044_715;

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    /// a: [..., k] x b: [k, n] -> [..., n]
    Matmul { a: usize, b: usize },
    /// a: [l.., m, k] x b: [l.., k, n] -> [l.., m, n]
    Bmm { a: usize, b: usize },
    Transpose { x: usize, d0: usize, d1: usize },
    Reshape { x: usize },
    Add { a: usize, b: usize },
    Mul { a: usize, b: usize },
    AddScalar { x: usize },
    MulScalar { x: usize, c: f32 },
    Relu { x: usize },
    Gelu { x: usize },
    Tanh { x: usize },
    SoftmaxLastDim { x: usize },
    LayerNormLastDim { x: usize, gamma: usize, beta: usize, eps: f32 },
    EmbedLookup { table: usize, indices: Vec<usize> },
    Slice { x: usize, dim: usize, start: usize, len: usize },
    Concat { xs: Vec<usize>, dim: usize },
    Sum { x: usize },
    Mean { x: usize },
    CausalMask { x: usize },
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) dims: Vec<usize>,
    pub(crate) values: Vec<f32>,
    pub(crate) requires_grad: bool,
    pub(crate) grad: Option<Vec<f32>>,
}

/// Recorded forward pass; one per model evaluation.
#[derive(Debug, Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
}

fn prod(dims: &[usize]) -> usize {
    dims.iter().product()
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, dims: Vec<usize>, values: Vec<f32>, requires_grad: bool) -> TensorRef {
        debug_assert_eq!(prod(&dims), values.len());
        self.nodes.push(Node {
            op,
            dims,
            values,
            requires_grad,
            grad: None,
        });
        TensorRef(self.nodes.len() - 1)
    }

    fn node(&self, r: TensorRef) -> &Node {
        &self.nodes[r.0]
    }

    pub fn dims(&self, r: TensorRef) -> &[usize] {
        &self.node(r).dims
    }

    pub fn values(&self, r: TensorRef) -> &[f32] {
        &self.node(r).values
    }

    pub fn grad(&self, r: TensorRef) -> Option<&[f32]> {
        self.node(r).grad.as_deref()
    }

    pub(crate) fn grad_by_id(&self, id: usize) -> Option<&[f32]> {
        self.nodes.get(id).and_then(|n| n.grad.as_deref())
    }

    /// Record a tensor as a leaf and point its `node_id` at the new node.
    pub fn insert(&mut self, t: &mut Tensor) -> TensorRef {
        let r = self.push(
            Op::Leaf,
            t.dims().to_vec(),
            t.values().to_vec(),
            t.is_grad_required(),
        );
        t.node_id = Some(r.0);
        r
    }

    /// Leaf that never takes gradient (masks, targets, schedules).
    pub fn constant(&mut self, dims: &[usize], values: Vec<f32>) -> Result<TensorRef> {
        if prod(dims) != values.len() {
            return Err(Error::Shape {
                op: "constant",
                lhs: dims.to_vec(),
                rhs: vec![values.len()],
            });
        }
        Ok(self.push(Op::Leaf, dims.to_vec(), values, false))
    }

    /// Detached copy of a node's value, still carrying the node id.
    pub fn to_tensor(&self, r: TensorRef) -> Tensor {
        let n = self.node(r);
        let mut t = Tensor::from_values(&n.dims, n.values.clone()).expect("node shape");
        t.node_id = Some(r.0);
        t
    }

    // ---- ops -----------------------------------------------------------

    pub fn matmul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let (ad, bd) = (self.dims(a).to_vec(), self.dims(b).to_vec());
        if ad.is_empty() || bd.len() != 2 || ad[ad.len() - 1] != bd[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: ad,
                rhs: bd,
            });
        }
        let k = bd[0];
        let n = bd[1];
        let m = prod(&ad) / k;
        let mut out = vec![0.0f32; m * n];
        {
            let av = self.values(a);
            let bv = self.values(b);
            matmul_mk_kn(av, bv, m, k, n, &mut out);
        }
        let mut od = ad[..ad.len() - 1].to_vec();
        od.push(n);
        let rg = self.either_requires(a, b);
        Ok(self.push(Op::Matmul { a: a.0, b: b.0 }, od, out, rg))
    }

    pub fn bmm(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let (ad, bd) = (self.dims(a).to_vec(), self.dims(b).to_vec());
        let ok = ad.len() >= 2
            && bd.len() == ad.len()
            && ad[..ad.len() - 2] == bd[..bd.len() - 2]
            && ad[ad.len() - 1] == bd[bd.len() - 2];
        if !ok {
            return Err(Error::Shape {
                op: "bmm",
                lhs: ad,
                rhs: bd,
            });
        }
        let m = ad[ad.len() - 2];
        let k = ad[ad.len() - 1];
        let n = bd[bd.len() - 1];
        let batch = prod(&ad[..ad.len() - 2]);
        let mut out = vec![0.0f32; batch * m * n];
        {
            let av = self.values(a);
            let bv = self.values(b);
            for bi in 0..batch {
                matmul_mk_kn(
                    &av[bi * m * k..(bi + 1) * m * k],
                    &bv[bi * k * n..(bi + 1) * k * n],
                    m,
                    k,
                    n,
                    &mut out[bi * m * n..(bi + 1) * m * n],
                );
            }
        }
        let mut od = ad[..ad.len() - 2].to_vec();
        od.push(m);
        od.push(n);
        let rg = self.either_requires(a, b);
        Ok(self.push(Op::Bmm { a: a.0, b: b.0 }, od, out, rg))
    }

    pub fn transpose(&mut self, x: TensorRef, d0: usize, d1: usize) -> Result<TensorRef> {
        let xd = self.dims(x).to_vec();
        if d0 >= xd.len() || d1 >= xd.len() || d0 == d1 {
            return Err(Error::Bounds {
                op: "transpose",
                index: d0.max(d1),
                bound: xd.len(),
            });
        }
        let (lo, hi) = (d0.min(d1), d0.max(d1));
        let (od, out) = transpose_copy(self.values(x), &xd, lo, hi);
        let rg = self.node(x).requires_grad;
        Ok(self.push(Op::Transpose { x: x.0, d0: lo, d1: hi }, od, out, rg))
    }

    pub fn reshape(&mut self, x: TensorRef, dims: &[usize]) -> Result<TensorRef> {
        let xd = self.dims(x).to_vec();
        if prod(dims) != prod(&xd) {
            return Err(Error::Shape {
                op: "reshape",
                lhs: xd,
                rhs: dims.to_vec(),
            });
        }
        let out = self.values(x).to_vec();
        let rg = self.node(x).requires_grad;
        Ok(self.push(Op::Reshape { x: x.0 }, dims.to_vec(), out, rg))
    }

    pub fn add(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.binary_elementwise(a, b, "add", |x, y| x + y, |t| Op::Add { a: t.0, b: t.1 })
    }

    pub fn mul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.binary_elementwise(a, b, "mul", |x, y| x * y, |t| Op::Mul { a: t.0, b: t.1 })
    }

    fn binary_elementwise(
        &mut self,
        a: TensorRef,
        b: TensorRef,
        name: &'static str,
        f: impl Fn(f32, f32) -> f32,
        mk: impl Fn((usize, usize)) -> Op,
    ) -> Result<TensorRef> {
        let (ad, bd) = (self.dims(a).to_vec(), self.dims(b).to_vec());
        let (an, bn) = (prod(&ad), prod(&bd));
        // Only scalar-with-tensor mixing is allowed.
        let out_dims = if ad == bd {
            ad.clone()
        } else if an == 1 {
            bd.clone()
        } else if bn == 1 {
            ad.clone()
        } else {
            return Err(Error::Shape {
                op: name,
                lhs: ad,
                rhs: bd,
            });
        };
        let out = {
            let av = self.values(a);
            let bv = self.values(b);
            if an == bn {
                av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect()
            } else if an == 1 {
                let s = av[0];
                bv.iter().map(|&y| f(s, y)).collect()
            } else {
                let s = bv[0];
                av.iter().map(|&x| f(x, s)).collect()
            }
        };
        let rg = self.either_requires(a, b);
        Ok(self.push(mk((a.0, b.0)), out_dims, out, rg))
    }

    pub fn add_scalar(&mut self, x: TensorRef, c: f32) -> TensorRef {
        let out: Vec<f32> = self.values(x).iter().map(|&v| v + c).collect();
        let dims = self.dims(x).to_vec();
        let rg = self.node(x).requires_grad;
        self.push(Op::AddScalar { x: x.0 }, dims, out, rg)
    }

    pub fn mul_scalar(&mut self, x: TensorRef, c: f32) -> TensorRef {
        let out: Vec<f32> = self.values(x).iter().map(|&v| v * c).collect();
        let dims = self.dims(x).to_vec();
        let rg = self.node(x).requires_grad;
        self.push(Op::MulScalar { x: x.0, c }, dims, out, rg)
    }

    pub fn relu(&mut self, x: TensorRef) -> TensorRef {
        let out: Vec<f32> = self.values(x).iter().map(|&v| v.max(0.0)).collect();
        let dims = self.dims(x).to_vec();
        let rg = self.node(x).requires_grad;
        self.push(Op::Relu { x: x.0 }, dims, out, rg)
    }

    pub fn gelu(&mut self, x: TensorRef) -> TensorRef {
        let out: Vec<f32> = self.values(x).iter().map(|&v| gelu(v)).collect();
        let dims = self.dims(x).to_vec();
        let rg = self.node(x).requires_grad;
        self.push(Op::Gelu { x: x.0 }, dims, out, rg)
    }

    pub fn tanh(&mut self, x: TensorRef) -> TensorRef {
        let out: Vec<f32> = self.values(x).iter().map(|&v| v.tanh()).collect();
        let dims = self.dims(x).to_vec();
        let rg = self.node(x).requires_grad;
        self.push(Op::Tanh { x: x.0 }, dims, out, rg)
    }

    /// Softmax along the last dim; each output row sums to 1.
    pub fn softmax_lastdim(&mut self, x: TensorRef) -> Result<TensorRef> {
        let dims = self.dims(x).to_vec();
        let d = *dims.last().ok_or(Error::Shape {
            op: "softmax_lastdim",
            lhs: dims.clone(),
            rhs: vec![],
        })?;
        let xv = self.values(x);
        let mut out = vec![0.0f32; xv.len()];
        for (row_in, row_out) in xv.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            let m = row_in.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let mut denom = 0.0f64;
            for (o, &v) in row_out.iter_mut().zip(row_in) {
                let e = (v - m).exp();
                *o = e;
                denom += f64::from(e);
            }
            let inv = (1.0 / denom) as f32;
            for o in row_out.iter_mut() {
                *o *= inv;
            }
        }
        let rg = self.node(x).requires_grad;
        Ok(self.push(Op::SoftmaxLastDim { x: x.0 }, dims, out, rg))
    }

    /// Layer norm along the last dim with per-feature gain and bias.
    pub fn layernorm_lastdim(
        &mut self,
        x: TensorRef,
        gamma: TensorRef,
        beta: TensorRef,
        eps: f32,
    ) -> Result<TensorRef> {
        let dims = self.dims(x).to_vec();
        let d = *dims.last().unwrap_or(&0);
        if d == 0 || self.dims(gamma) != [d] || self.dims(beta) != [d] {
            return Err(Error::Shape {
                op: "layernorm_lastdim",
                lhs: dims,
                rhs: self.dims(gamma).to_vec(),
            });
        }
        let xv = self.values(x);
        let gv = self.values(gamma).to_vec();
        let bv = self.values(beta).to_vec();
        let mut out = vec![0.0f32; xv.len()];
        for (row_in, row_out) in xv.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            let (mean, rstd) = row_stats(row_in, eps);
            for ((o, &v), (&g, &b)) in row_out
                .iter_mut()
                .zip(row_in)
                .zip(gv.iter().zip(bv.iter()))
            {
                *o = (v - mean) * rstd * g + b;
            }
        }
        let rg = self.either_requires(x, gamma) || self.node(beta).requires_grad;
        Ok(self.push(
            Op::LayerNormLastDim {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                eps,
            },
            self.nodes[x.0].dims.clone(),
            out,
            rg,
        ))
    }

    /// Gather rows of `table` ([rows, d]) at `indices`; output dims are
    /// `index_dims ++ [d]`.
    pub fn embed_lookup(
        &mut self,
        table: TensorRef,
        indices: &[usize],
        index_dims: &[usize],
    ) -> Result<TensorRef> {
        let td = self.dims(table).to_vec();
        if td.len() != 2 {
            return Err(Error::Shape {
                op: "embed_lookup",
                lhs: td,
                rhs: index_dims.to_vec(),
            });
        }
        if prod(index_dims) != indices.len() {
            return Err(Error::Shape {
                op: "embed_lookup",
                lhs: index_dims.to_vec(),
                rhs: vec![indices.len()],
            });
        }
        let (rows, d) = (td[0], td[1]);
        let tv = self.values(table);
        let mut out = vec![0.0f32; indices.len() * d];
        for (j, &idx) in indices.iter().enumerate() {
            if idx >= rows {
                return Err(Error::Bounds {
                    op: "embed_lookup",
                    index: idx,
                    bound: rows,
                });
            }
            out[j * d..(j + 1) * d].copy_from_slice(&tv[idx * d..(idx + 1) * d]);
        }
        let mut od = index_dims.to_vec();
        od.push(d);
        let rg = self.node(table).requires_grad;
        Ok(self.push(
            Op::EmbedLookup {
                table: table.0,
                indices: indices.to_vec(),
            },
            od,
            out,
            rg,
        ))
    }

    /// Contiguous range `[start, start+len)` along `dim`.
    pub fn slice(&mut self, x: TensorRef, dim: usize, start: usize, len: usize) -> Result<TensorRef> {
        let xd = self.dims(x).to_vec();
        if dim >= xd.len() {
            return Err(Error::Bounds {
                op: "slice",
                index: dim,
                bound: xd.len(),
            });
        }
        if len == 0 || start + len > xd[dim] {
            return Err(Error::Bounds {
                op: "slice",
                index: start + len,
                bound: xd[dim],
            });
        }
        let inner: usize = xd[dim + 1..].iter().product();
        let outer: usize = xd[..dim].iter().product();
        let stride = xd[dim] * inner;
        let xv = self.values(x);
        let mut out = vec![0.0f32; outer * len * inner];
        for o in 0..outer {
            let src = o * stride + start * inner;
            let dst = o * len * inner;
            out[dst..dst + len * inner].copy_from_slice(&xv[src..src + len * inner]);
        }
        let mut od = xd.clone();
        od[dim] = len;
        let rg = self.node(x).requires_grad;
        Ok(self.push(
            Op::Slice {
                x: x.0,
                dim,
                start,
                len,
            },
            od,
            out,
            rg,
        ))
    }

    /// Concatenate along `dim`; all other extents must match.
    pub fn concat(&mut self, xs: &[TensorRef], dim: usize) -> Result<TensorRef> {
        let first = *xs.first().ok_or_else(|| {
            Error::Contract("concat requires at least one input".into())
        })?;
        let fd = self.dims(first).to_vec();
        if dim >= fd.len() {
            return Err(Error::Bounds {
                op: "concat",
                index: dim,
                bound: fd.len(),
            });
        }
        let mut total = 0usize;
        for &x in xs {
            let xd = self.dims(x);
            let compatible = xd.len() == fd.len()
                && xd
                    .iter()
                    .zip(&fd)
                    .enumerate()
                    .all(|(i, (a, b))| i == dim || a == b);
            if !compatible {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: fd,
                    rhs: xd.to_vec(),
                });
            }
            total += xd[dim];
        }
        let inner: usize = fd[dim + 1..].iter().product();
        let outer: usize = fd[..dim].iter().product();
        let mut out = vec![0.0f32; outer * total * inner];
        let mut offset = 0usize;
        for &x in xs {
            let ext = self.dims(x)[dim];
            let xv = self.values(x);
            for o in 0..outer {
                let src = o * ext * inner;
                let dst = o * total * inner + offset * inner;
                out[dst..dst + ext * inner].copy_from_slice(&xv[src..src + ext * inner]);
            }
            offset += ext;
        }
        let mut od = fd.clone();
        od[dim] = total;
        let rg = xs.iter().any(|&x| self.node(x).requires_grad);
        Ok(self.push(
            Op::Concat {
                xs: xs.iter().map(|r| r.0).collect(),
                dim,
            },
            od,
            out,
            rg,
        ))
    }

    /// Full reduction to a scalar, accumulated in f64.
    pub fn sum(&mut self, x: TensorRef) -> TensorRef {
        let s: f64 = self.values(x).iter().map(|&v| f64::from(v)).sum();
        let rg = self.node(x).requires_grad;
        self.push(Op::Sum { x: x.0 }, vec![1], vec![s as f32], rg)
    }

    pub fn mean(&mut self, x: TensorRef) -> TensorRef {
        let n = self.values(x).len();
        let s: f64 = self.values(x).iter().map(|&v| f64::from(v)).sum();
        let rg = self.node(x).requires_grad;
        self.push(Op::Mean { x: x.0 }, vec![1], vec![(s / n as f64) as f32], rg)
    }

    /// Additive causal mask over the last two (square) dims: positions with
    /// column > row get a large negative offset, which underflows to an
    /// exact zero attention weight after softmax.
    pub fn causal_mask(&mut self, x: TensorRef) -> Result<TensorRef> {
        let xd = self.dims(x).to_vec();
        let n = xd.len();
        if n < 2 || xd[n - 1] != xd[n - 2] {
            return Err(Error::Shape {
                op: "causal_mask",
                lhs: xd.clone(),
                rhs: xd,
            });
        }
        let t = xd[n - 1];
        let xv = self.values(x);
        let mut out = xv.to_vec();
        for block in out.chunks_exact_mut(t * t) {
            for i in 0..t {
                for v in &mut block[i * t + i + 1..(i + 1) * t] {
                    *v += NEG_MASK;
                }
            }
        }
        let rg = self.node(x).requires_grad;
        Ok(self.push(Op::CausalMask { x: x.0 }, xd, out, rg))
    }

    fn either_requires(&self, a: TensorRef, b: TensorRef) -> bool {
        self.node(a).requires_grad || self.node(b).requires_grad
    }
}

pub(crate) fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_derivative(x: f32) -> f32 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Per-row mean and reciprocal std with f64 accumulation.
pub(crate) fn row_stats(row: &[f32], eps: f32) -> (f32, f32) {
    let n = row.len() as f64;
    let mean: f64 = row.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let var: f64 = row
        .iter()
        .map(|&v| {
            let d = f64::from(v) - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let rstd = 1.0 / (var + f64::from(eps)).sqrt();
    (mean as f32, rstd as f32)
}

/// c[m,n] += a[m,k] @ b[k,n], row-major, ikj loop order.
pub(crate) fn matmul_mk_kn(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, c: &mut [f32]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
}

/// Swap dims `d0 < d1` of a row-major array.
pub(crate) fn transpose_copy(
    values: &[f32],
    dims: &[usize],
    d0: usize,
    d1: usize,
) -> (Vec<usize>, Vec<f32>) {
    let outer: usize = dims[..d0].iter().product();
    let ea = dims[d0];
    let mid: usize = dims[d0 + 1..d1].iter().product();
    let eb = dims[d1];
    let inner: usize = dims[d1 + 1..].iter().product();

    let mut od = dims.to_vec();
    od.swap(d0, d1);
    let mut out = vec![0.0f32; values.len()];
    for o in 0..outer {
        for a in 0..ea {
            for m in 0..mid {
                for b in 0..eb {
                    let src = (((o * ea + a) * mid + m) * eb + b) * inner;
                    let dst = (((o * eb + b) * mid + m) * ea + a) * inner;
                    out[dst..dst + inner].copy_from_slice(&values[src..src + inner]);
                }
            }
        }
    }
    (od, out)
}
