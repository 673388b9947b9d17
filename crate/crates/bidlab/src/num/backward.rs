//! Reverse-mode sweep over a recorded tape.
//!
//! Gradients accumulate additively into per-node buffers; leaves read them
//! back through [`crate::num::Tensor::pull_grad`]. The root must be a
//! scalar so the seed gradient is well defined.

use crate::error::{Error, Result};
use crate::num::tape::{gelu_derivative, matmul_mk_kn, row_stats, transpose_copy, Op, Tape, TensorRef};

impl Tape {
    /// Propagate d(root)/d(node) to every node that requires gradient.
    pub fn backward(&mut self, root: TensorRef) -> Result<()> {
        if root.0 >= self.nodes.len() {
            return Err(Error::MissingNode);
        }
        let root_numel: usize = self.dims(root).iter().product();
        if root_numel != 1 {
            return Err(Error::Contract(format!(
                "backward root must be a scalar, got shape {:?}",
                self.dims(root)
            )));
        }
        if !self.nodes[root.0].requires_grad {
            return Err(Error::Contract(
                "backward root does not depend on any gradient-tracked leaf".into(),
            ));
        }
        self.seed_grad(root.0, vec![1.0]);

        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(dy) = self.nodes[i].grad.clone() else {
                continue;
            };
            let op = self.nodes[i].op.clone();
            self.propagate(i, &op, &dy);
        }
        Ok(())
    }

    fn seed_grad(&mut self, id: usize, g: Vec<f32>) {
        self.nodes[id].grad = Some(g);
    }

    fn accumulate(&mut self, id: usize, delta: &[f32]) {
        if !self.nodes[id].requires_grad {
            return;
        }
        let numel = self.nodes[id].values.len();
        let g = self.nodes[id].grad.get_or_insert_with(|| vec![0.0; numel]);
        for (gi, &d) in g.iter_mut().zip(delta) {
            *gi += d;
        }
    }

    fn accumulate_scalar(&mut self, id: usize, delta: f64) {
        if !self.nodes[id].requires_grad {
            return;
        }
        let g = self.nodes[id].grad.get_or_insert_with(|| vec![0.0; 1]);
        g[0] += delta as f32;
    }

    fn propagate(&mut self, out: usize, op: &Op, dy: &[f32]) {
        match *op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let bd = self.nodes[b].dims.clone();
                let k = bd[0];
                let n = bd[1];
                let m = self.nodes[a].values.len() / k;
                if self.nodes[a].requires_grad {
                    // da = dy @ b^T
                    let bv = &self.nodes[b].values;
                    let mut bt = vec![0.0f32; k * n];
                    for p in 0..k {
                        for j in 0..n {
                            bt[j * k + p] = bv[p * n + j];
                        }
                    }
                    let mut da = vec![0.0f32; m * k];
                    matmul_mk_kn(dy, &bt, m, n, k, &mut da);
                    self.accumulate(a, &da);
                }
                if self.nodes[b].requires_grad {
                    // db = a^T @ dy
                    let av = self.nodes[a].values.clone();
                    let mut at = vec![0.0f32; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            at[p * m + i] = av[i * k + p];
                        }
                    }
                    let mut db = vec![0.0f32; k * n];
                    matmul_mk_kn(&at, dy, k, m, n, &mut db);
                    self.accumulate(b, &db);
                }
            }
            Op::Bmm { a, b } => {
                let ad = self.nodes[a].dims.clone();
                let bd = self.nodes[b].dims.clone();
                let m = ad[ad.len() - 2];
                let k = ad[ad.len() - 1];
                let n = bd[bd.len() - 1];
                let batch: usize = ad[..ad.len() - 2].iter().product();
                if self.nodes[a].requires_grad {
                    let bv = self.nodes[b].values.clone();
                    let mut da = vec![0.0f32; batch * m * k];
                    for bi in 0..batch {
                        let bb = &bv[bi * k * n..(bi + 1) * k * n];
                        let mut bt = vec![0.0f32; k * n];
                        for p in 0..k {
                            for j in 0..n {
                                bt[j * k + p] = bb[p * n + j];
                            }
                        }
                        matmul_mk_kn(
                            &dy[bi * m * n..(bi + 1) * m * n],
                            &bt,
                            m,
                            n,
                            k,
                            &mut da[bi * m * k..(bi + 1) * m * k],
                        );
                    }
                    self.accumulate(a, &da);
                }
                if self.nodes[b].requires_grad {
                    let av = self.nodes[a].values.clone();
                    let mut db = vec![0.0f32; batch * k * n];
                    for bi in 0..batch {
                        let ab = &av[bi * m * k..(bi + 1) * m * k];
                        let mut at = vec![0.0f32; m * k];
                        for i in 0..m {
                            for p in 0..k {
                                at[p * m + i] = ab[i * k + p];
                            }
                        }
                        matmul_mk_kn(
                            &at,
                            &dy[bi * m * n..(bi + 1) * m * n],
                            k,
                            m,
                            n,
                            &mut db[bi * k * n..(bi + 1) * k * n],
                        );
                    }
                    self.accumulate(b, &db);
                }
            }
            Op::Transpose { x, d0, d1 } => {
                let od = self.nodes[out].dims.clone();
                let (_, dx) = transpose_copy(dy, &od, d0, d1);
                self.accumulate(x, &dx);
            }
            Op::Reshape { x } => self.accumulate(x, dy),
            Op::Add { a, b } => {
                self.accumulate_elementwise(a, dy, |_| 1.0);
                self.accumulate_elementwise(b, dy, |_| 1.0);
            }
            Op::Mul { a, b } => {
                // d/da = b, d/db = a, with the scalar side reduced.
                let bv = self.nodes[b].values.clone();
                self.accumulate_elementwise(a, dy, move |i| pick(&bv, i));
                let av = self.nodes[a].values.clone();
                self.accumulate_elementwise(b, dy, move |i| pick(&av, i));
            }
            Op::AddScalar { x } => self.accumulate(x, dy),
            Op::MulScalar { x, c } => {
                let dx: Vec<f32> = dy.iter().map(|&g| g * c).collect();
                self.accumulate(x, &dx);
            }
            Op::Relu { x } => {
                let xv = &self.nodes[x].values;
                let dx: Vec<f32> = dy
                    .iter()
                    .zip(xv)
                    .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                self.accumulate(x, &dx);
            }
            Op::Gelu { x } => {
                let xv = &self.nodes[x].values;
                let dx: Vec<f32> = dy
                    .iter()
                    .zip(xv)
                    .map(|(&g, &v)| g * gelu_derivative(v))
                    .collect();
                self.accumulate(x, &dx);
            }
            Op::Tanh { x } => {
                let yv = &self.nodes[out].values;
                let dx: Vec<f32> = dy.iter().zip(yv).map(|(&g, &y)| g * (1.0 - y * y)).collect();
                self.accumulate(x, &dx);
            }
            Op::SoftmaxLastDim { x } => {
                let d = *self.nodes[out].dims.last().unwrap();
                let yv = self.nodes[out].values.clone();
                let mut dx = vec![0.0f32; yv.len()];
                for ((p_row, dy_row), dx_row) in yv
                    .chunks_exact(d)
                    .zip(dy.chunks_exact(d))
                    .zip(dx.chunks_exact_mut(d))
                {
                    let dot: f64 = p_row
                        .iter()
                        .zip(dy_row)
                        .map(|(&p, &g)| f64::from(p) * f64::from(g))
                        .sum();
                    for ((o, &p), &g) in dx_row.iter_mut().zip(p_row).zip(dy_row) {
                        *o = p * (g - dot as f32);
                    }
                }
                self.accumulate(x, &dx);
            }
            Op::LayerNormLastDim { x, gamma, beta, eps } => {
                let d = *self.nodes[out].dims.last().unwrap();
                let xv = self.nodes[x].values.clone();
                let gv = self.nodes[gamma].values.clone();
                let rows = xv.len() / d;
                let mut dx = vec![0.0f32; xv.len()];
                let mut dgamma = vec![0.0f64; d];
                let mut dbeta = vec![0.0f64; d];
                for r in 0..rows {
                    let row = &xv[r * d..(r + 1) * d];
                    let dy_row = &dy[r * d..(r + 1) * d];
                    let (mean, rstd) = row_stats(row, eps);
                    let mut sum_gdy = 0.0f64;
                    let mut sum_gdy_xhat = 0.0f64;
                    let mut xhat = vec![0.0f32; d];
                    for j in 0..d {
                        xhat[j] = (row[j] - mean) * rstd;
                        let gdy = f64::from(gv[j]) * f64::from(dy_row[j]);
                        sum_gdy += gdy;
                        sum_gdy_xhat += gdy * f64::from(xhat[j]);
                        dgamma[j] += f64::from(dy_row[j]) * f64::from(xhat[j]);
                        dbeta[j] += f64::from(dy_row[j]);
                    }
                    let m1 = (sum_gdy / d as f64) as f32;
                    let m2 = (sum_gdy_xhat / d as f64) as f32;
                    for j in 0..d {
                        dx[r * d + j] = rstd * (gv[j] * dy_row[j] - m1 - xhat[j] * m2);
                    }
                }
                self.accumulate(x, &dx);
                let dgamma32: Vec<f32> = dgamma.iter().map(|&v| v as f32).collect();
                let dbeta32: Vec<f32> = dbeta.iter().map(|&v| v as f32).collect();
                self.accumulate(gamma, &dgamma32);
                self.accumulate(beta, &dbeta32);
            }
            Op::EmbedLookup { table, ref indices } => {
                if !self.nodes[table].requires_grad {
                    return;
                }
                let d = *self.nodes[table].dims.last().unwrap();
                let numel = self.nodes[table].values.len();
                let mut dt = vec![0.0f32; numel];
                for (j, &idx) in indices.iter().enumerate() {
                    let dst = &mut dt[idx * d..(idx + 1) * d];
                    for (o, &g) in dst.iter_mut().zip(&dy[j * d..(j + 1) * d]) {
                        *o += g;
                    }
                }
                self.accumulate(table, &dt);
            }
            Op::Slice { x, dim, start, len } => {
                if !self.nodes[x].requires_grad {
                    return;
                }
                let xd = self.nodes[x].dims.clone();
                let inner: usize = xd[dim + 1..].iter().product();
                let outer: usize = xd[..dim].iter().product();
                let stride = xd[dim] * inner;
                let mut dx = vec![0.0f32; self.nodes[x].values.len()];
                for o in 0..outer {
                    let dst = o * stride + start * inner;
                    let src = o * len * inner;
                    dx[dst..dst + len * inner].copy_from_slice(&dy[src..src + len * inner]);
                }
                self.accumulate(x, &dx);
            }
            Op::Concat { ref xs, dim } => {
                let od = self.nodes[out].dims.clone();
                let inner: usize = od[dim + 1..].iter().product();
                let outer: usize = od[..dim].iter().product();
                let total = od[dim];
                let mut offset = 0usize;
                for &x in xs {
                    let ext = self.nodes[x].dims[dim];
                    if self.nodes[x].requires_grad {
                        let mut dx = vec![0.0f32; self.nodes[x].values.len()];
                        for o in 0..outer {
                            let src = o * total * inner + offset * inner;
                            let dst = o * ext * inner;
                            dx[dst..dst + ext * inner]
                                .copy_from_slice(&dy[src..src + ext * inner]);
                        }
                        self.accumulate(x, &dx);
                    }
                    offset += ext;
                }
            }
            Op::Sum { x } => {
                let g = dy[0];
                let dx = vec![g; self.nodes[x].values.len()];
                self.accumulate(x, &dx);
            }
            Op::Mean { x } => {
                let n = self.nodes[x].values.len();
                let g = dy[0] / n as f32;
                let dx = vec![g; n];
                self.accumulate(x, &dx);
            }
            Op::CausalMask { x } => self.accumulate(x, dy),
        }
    }

    /// Route an elementwise gradient to `target`, reducing over the output
    /// when `target` is the scalar side of a scalar-tensor pairing.
    fn accumulate_elementwise(&mut self, target: usize, dy: &[f32], local: impl Fn(usize) -> f32) {
        if !self.nodes[target].requires_grad {
            return;
        }
        let tn = self.nodes[target].values.len();
        if tn == dy.len() {
            let dx: Vec<f32> = dy.iter().enumerate().map(|(i, &g)| g * local(i)).collect();
            self.accumulate(target, &dx);
        } else {
            debug_assert_eq!(tn, 1);
            let total: f64 = dy
                .iter()
                .enumerate()
                .map(|(i, &g)| f64::from(g * local(i)))
                .sum();
            self.accumulate_scalar(target, total);
        }
    }
}

fn pick(values: &[f32], i: usize) -> f32 {
    if values.len() == 1 {
        values[0]
    } else {
        values[i]
    }
}
