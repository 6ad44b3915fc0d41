//! Differentiable operations and their vector-Jacobian products.

use crate::error::{Result, TensorError};
use crate::gemm::gemm;
use crate::tensor::Tensor;

pub(crate) enum Op {
    Matmul { m: usize, k: usize, n: usize },
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddScalar,
    AddRowBroadcast,
    AddColBroadcast,
    Relu,
    Sigmoid,
    Ln,
    ClampMin(f64),
    Abs,
    Softmax { outer: usize, axis_len: usize, inner: usize },
    LogSoftmax { cols: usize },
    LayerNorm { cols: usize, xhat: Vec<f64>, rstd: Vec<f64> },
    Transpose { rows: usize, cols: usize },
    Reshape,
    SliceCols { start: usize, end: usize, cols: usize },
    ConcatCols { widths: Vec<usize> },
    SelectRows { indices: Vec<usize>, cols: usize },
    Pick { flat: Vec<usize> },
    Sum,
    Mean,
    Conv2d(ConvSaved),
}

pub(crate) struct ConvSaved {
    geom: ConvGeometry,
    out_channels: usize,
    cols: Vec<f64>,
    has_bias: bool,
}

#[derive(Clone, Copy, Debug)]
struct ConvGeometry {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeometry {
    fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Unfold `[C,H,W]` into `[C*k*k, Ho*Wo]`.
    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let g = *self;
        let mut cols = vec![0.0; g.patch_len() * g.out_len()];
        for c in 0..g.channels {
            for ki in 0..g.kernel {
                for kj in 0..g.kernel {
                    let row = (c * g.kernel + ki) * g.kernel + kj;
                    let dst = &mut cols[row * g.out_len()..(row + 1) * g.out_len()];
                    for oi in 0..g.out_h {
                        let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                        if ii < 0 || ii >= g.height as isize {
                            continue;
                        }
                        let src_row = &x[(c * g.height + ii as usize) * g.width..][..g.width];
                        for oj in 0..g.out_w {
                            let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                            if jj >= 0 && (jj as usize) < g.width {
                                dst[oi * g.out_w + oj] = src_row[jj as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Adjoint of [`Self::im2col`].
    fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let g = *self;
        let mut x = vec![0.0; g.channels * g.height * g.width];
        for c in 0..g.channels {
            for ki in 0..g.kernel {
                for kj in 0..g.kernel {
                    let row = (c * g.kernel + ki) * g.kernel + kj;
                    let src = &cols[row * g.out_len()..(row + 1) * g.out_len()];
                    for oi in 0..g.out_h {
                        let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                        if ii < 0 || ii >= g.height as isize {
                            continue;
                        }
                        let dst_row = &mut x[(c * g.height + ii as usize) * g.width..][..g.width];
                        for oj in 0..g.out_w {
                            let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                            if jj >= 0 && (jj as usize) < g.width {
                                dst_row[jj as usize] += src[oi * g.out_w + oj];
                            }
                        }
                    }
                }
            }
        }
        x
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn require_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(TensorError::InvalidShape {
            op,
            shape: t.shape().to_vec(),
            reason: format!("expected rank {rank}"),
        });
    }
    Ok(())
}

fn unary(x: &Tensor, op: Op, f: impl Fn(f64) -> f64) -> Tensor {
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor::from_op(x.shape().to_vec(), data, op, vec![x.clone()])
}

fn last_dim(t: &Tensor) -> usize {
    *t.shape().last().expect("tensors have rank >= 1")
}

impl Tensor {
    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || rhs.rank() != 2 || self.dim(1) != rhs.dim(0) {
            return Err(mismatch("matmul", self, rhs));
        }
        let (m, k, n) = (self.dim(0), self.dim(1), rhs.dim(1));
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(), false, rhs.data(), false, 0.0, &mut out);
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            Op::Matmul { m, k, n },
            vec![self.clone(), rhs.clone()],
        ))
    }

    fn zip_same(&self, rhs: &Tensor, name: &'static str, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape() != rhs.shape() {
            return Err(mismatch(name, self, rhs));
        }
        let data = self.data().iter().zip(rhs.data()).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor::from_op(self.shape().to_vec(), data, op, vec![self.clone(), rhs.clone()]))
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_same(rhs, "add", Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_same(rhs, "sub", Op::Sub, |a, b| a - b)
    }

    /// Element-wise product.
    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_same(rhs, "mul", Op::Mul, |a, b| a * b)
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        unary(self, Op::Scale(factor), |v| v * factor)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        unary(self, Op::AddScalar, |v| v + c)
    }

    /// Adds `bias` (length = last dim) to every row.
    pub fn add_row_broadcast(&self, bias: &Tensor) -> Result<Tensor> {
        let n = last_dim(self);
        if bias.numel() != n {
            return Err(mismatch("add_row_broadcast", self, bias));
        }
        let b = bias.data();
        let data = self
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y))
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::AddRowBroadcast,
            vec![self.clone(), bias.clone()],
        ))
    }

    /// Adds `col[i]` to every entry of row `i` of a `[m,n]` tensor.
    pub fn add_col_broadcast(&self, col: &Tensor) -> Result<Tensor> {
        require_rank("add_col_broadcast", self, 2)?;
        let (m, n) = (self.dim(0), self.dim(1));
        if col.numel() != m {
            return Err(mismatch("add_col_broadcast", self, col));
        }
        let c = col.data();
        let data = self
            .data()
            .chunks(n)
            .zip(c)
            .flat_map(|(row, &ci)| row.iter().map(move |x| x + ci))
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::AddColBroadcast,
            vec![self.clone(), col.clone()],
        ))
    }

    pub fn relu(&self) -> Tensor {
        unary(self, Op::Relu, |v| v.max(0.0))
    }

    pub fn sigmoid(&self) -> Tensor {
        unary(self, Op::Sigmoid, |v| 1.0 / (1.0 + (-v).exp()))
    }

    pub fn ln(&self) -> Tensor {
        unary(self, Op::Ln, f64::ln)
    }

    /// `max(x, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&self, floor: f64) -> Tensor {
        unary(self, Op::ClampMin(floor), |v| v.max(floor))
    }

    pub fn abs(&self) -> Tensor {
        unary(self, Op::Abs, f64::abs)
    }

    /// Normalized exponential along `axis`, stabilized by max subtraction.
    /// Entries equal to `-inf` map to exactly zero.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(TensorError::Config {
                op: "softmax",
                reason: format!("axis {axis} out of range for rank {}", self.rank()),
            });
        }
        let shape = self.shape();
        let outer: usize = shape[..axis].iter().product();
        let axis_len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let x = self.data();
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * axis_len + a) * inner + i;
                let max = (0..axis_len).map(|a| x[idx(a)]).fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    return Err(TensorError::DegenerateRow { row: o * inner + i });
                }
                let mut total = 0.0;
                for a in 0..axis_len {
                    let e = (x[idx(a)] - max).exp();
                    out[idx(a)] = e;
                    total += e;
                }
                for a in 0..axis_len {
                    out[idx(a)] /= total;
                }
            }
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            out,
            Op::Softmax { outer, axis_len, inner },
            vec![self.clone()],
        ))
    }

    /// Log of the softmax along the last axis.
    pub fn log_softmax(&self) -> Result<Tensor> {
        let cols = last_dim(self);
        let mut out = Vec::with_capacity(self.numel());
        for (r, row) in self.data().chunks(cols).enumerate() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(TensorError::DegenerateRow { row: r });
            }
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|v| v - lse));
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::LogSoftmax { cols },
            vec![self.clone()],
        ))
    }

    /// Normalizes over the last axis, then applies `gain * x_hat + bias`.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        let cols = last_dim(self);
        if gain.numel() != cols {
            return Err(mismatch("layer_norm", self, gain));
        }
        if bias.numel() != cols {
            return Err(mismatch("layer_norm", self, bias));
        }
        if eps <= 0.0 {
            return Err(TensorError::Config {
                op: "layer_norm",
                reason: format!("eps must be positive, got {eps}"),
            });
        }
        let rows = self.numel() / cols;
        let mut xhat = Vec::with_capacity(self.numel());
        let mut rstd = Vec::with_capacity(rows);
        for row in self.data().chunks(cols) {
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd.push(r);
            xhat.extend(row.iter().map(|v| (v - mean) * r));
        }
        let (g, b) = (gain.data(), bias.data());
        let out = xhat
            .chunks(cols)
            .flat_map(|row| row.iter().enumerate().map(|(j, v)| v * g[j] + b[j]))
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::LayerNorm { cols, xhat, rstd },
            vec![self.clone(), gain.clone(), bias.clone()],
        ))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        require_rank("transpose", self, 2)?;
        let (rows, cols) = (self.dim(0), self.dim(1));
        let out = transpose_buf(rows, cols, self.data());
        Ok(Tensor::from_op(
            vec![cols, rows],
            out,
            Op::Transpose { rows, cols },
            vec![self.clone()],
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.numel() || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::InvalidShape {
                op: "reshape",
                shape: shape.to_vec(),
                reason: format!("cannot view {:?} with this shape", self.shape()),
            });
        }
        Ok(Tensor::from_op(shape.to_vec(), self.to_vec(), Op::Reshape, vec![self.clone()]))
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Tensor> {
        require_rank("slice_cols", self, 2)?;
        let cols = self.dim(1);
        if start >= end || end > cols {
            return Err(TensorError::Config {
                op: "slice_cols",
                reason: format!("range {start}..{end} invalid for {cols} columns"),
            });
        }
        let out = self.data().chunks(cols).flat_map(|r| r[start..end].iter().copied()).collect();
        Ok(Tensor::from_op(
            vec![self.dim(0), end - start],
            out,
            Op::SliceCols { start, end, cols },
            vec![self.clone()],
        ))
    }

    /// Side-by-side concatenation of 2-D tensors with equal row counts.
    pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or(TensorError::Config {
            op: "concat_cols",
            reason: "no inputs".into(),
        })?;
        let rows = first.dim(0);
        for p in parts {
            require_rank("concat_cols", p, 2)?;
            if p.dim(0) != rows {
                return Err(mismatch("concat_cols", first, p));
            }
        }
        let widths: Vec<usize> = parts.iter().map(|p| p.dim(1)).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                out.extend_from_slice(p.row(r));
            }
        }
        Ok(Tensor::from_op(vec![rows, total], out, Op::ConcatCols { widths }, parts.to_vec()))
    }

    /// Gathers rows of a 2-D tensor (embedding lookup when `self` is a table).
    pub fn select_rows(&self, indices: &[usize]) -> Result<Tensor> {
        require_rank("select_rows", self, 2)?;
        let (rows, cols) = (self.dim(0), self.dim(1));
        if indices.is_empty() {
            return Err(TensorError::Config {
                op: "select_rows",
                reason: "empty index list".into(),
            });
        }
        let mut out = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "select_rows",
                    index: i,
                    len: rows,
                });
            }
            out.extend_from_slice(self.row(i));
        }
        Ok(Tensor::from_op(
            vec![indices.len(), cols],
            out,
            Op::SelectRows {
                indices: indices.to_vec(),
                cols,
            },
            vec![self.clone()],
        ))
    }

    /// Picks `self[rows[i], cols[i]]` from a 2-D tensor into a vector.
    pub fn pick(&self, rows: &[usize], cols: &[usize]) -> Result<Tensor> {
        require_rank("pick", self, 2)?;
        if rows.len() != cols.len() || rows.is_empty() {
            return Err(TensorError::Config {
                op: "pick",
                reason: format!("{} rows vs {} cols", rows.len(), cols.len()),
            });
        }
        let (nr, nc) = (self.dim(0), self.dim(1));
        let mut flat = Vec::with_capacity(rows.len());
        for (&r, &c) in rows.iter().zip(cols) {
            if r >= nr {
                return Err(TensorError::IndexOutOfRange { op: "pick", index: r, len: nr });
            }
            if c >= nc {
                return Err(TensorError::IndexOutOfRange { op: "pick", index: c, len: nc });
            }
            flat.push(r * nc + c);
        }
        let out = flat.iter().map(|&i| self.data()[i]).collect();
        Ok(Tensor::from_op(vec![flat.len()], out, Op::Pick { flat }, vec![self.clone()]))
    }

    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        Tensor::from_op(vec![1], vec![s], Op::Sum, vec![self.clone()])
    }

    pub fn mean(&self) -> Tensor {
        let s = self.data().iter().sum::<f64>() / self.numel() as f64;
        Tensor::from_op(vec![1], vec![s], Op::Mean, vec![self.clone()])
    }

    /// Cross-correlation of a `[C,H,W]` input with `[O,C,k,k]` kernels.
    pub fn conv2d(&self, kernels: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Result<Tensor> {
        require_rank("conv2d", self, 3)?;
        require_rank("conv2d", kernels, 4)?;
        let (channels, height, width) = (self.dim(0), self.dim(1), self.dim(2));
        let (out_channels, kc, kh, kw) = (kernels.dim(0), kernels.dim(1), kernels.dim(2), kernels.dim(3));
        if kc != channels || kh != kw {
            return Err(mismatch("conv2d", self, kernels));
        }
        if stride == 0 {
            return Err(TensorError::Config {
                op: "conv2d",
                reason: "stride must be positive".into(),
            });
        }
        if kh > height + 2 * pad || kw > width + 2 * pad {
            return Err(TensorError::Config {
                op: "conv2d",
                reason: format!("kernel {kh}x{kw} larger than padded input {}x{}", height + 2 * pad, width + 2 * pad),
            });
        }
        if let Some(b) = bias {
            if b.numel() != out_channels {
                return Err(mismatch("conv2d", kernels, b));
            }
        }
        let geom = ConvGeometry {
            channels,
            height,
            width,
            kernel: kh,
            stride,
            pad,
            out_h: (height + 2 * pad - kh) / stride + 1,
            out_w: (width + 2 * pad - kw) / stride + 1,
        };
        let cols = geom.im2col(self.data());
        let mut out = vec![0.0; out_channels * geom.out_len()];
        gemm(
            out_channels,
            geom.patch_len(),
            geom.out_len(),
            kernels.data(),
            false,
            &cols,
            false,
            0.0,
            &mut out,
        );
        if let Some(b) = bias {
            for (chunk, &bv) in out.chunks_mut(geom.out_len()).zip(b.data()) {
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
        let mut parents = vec![self.clone(), kernels.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Ok(Tensor::from_op(
            vec![out_channels, geom.out_h, geom.out_w],
            out,
            Op::Conv2d(ConvSaved {
                geom,
                out_channels,
                cols,
                has_bias: bias.is_some(),
            }),
            parents,
        ))
    }
}

fn transpose_buf(rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

impl Op {
    /// Gradients for each parent given the gradient `g` of `out`.
    /// Entries are `None` for parents that do not require a gradient.
    pub(crate) fn vjp(&self, parents: &[Tensor], out: &Tensor, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let need = |i: usize| parents[i].requires_grad();
        let y = out.data();
        match self {
            Op::Matmul { m, k, n } => {
                let (a, b) = (&parents[0], &parents[1]);
                let da = need(0).then(|| {
                    let mut da = vec![0.0; m * k];
                    gemm(*m, *n, *k, g, false, b.data(), true, 0.0, &mut da);
                    da
                });
                let db = need(1).then(|| {
                    let mut db = vec![0.0; k * n];
                    gemm(*k, *m, *n, a.data(), true, g, false, 0.0, &mut db);
                    db
                });
                vec![da, db]
            }
            Op::Add => vec![need(0).then(|| g.to_vec()), need(1).then(|| g.to_vec())],
            Op::Sub => vec![
                need(0).then(|| g.to_vec()),
                need(1).then(|| g.iter().map(|v| -v).collect()),
            ],
            Op::Mul => {
                let (a, b) = (parents[0].data(), parents[1].data());
                vec![
                    need(0).then(|| g.iter().zip(b).map(|(g, b)| g * b).collect()),
                    need(1).then(|| g.iter().zip(a).map(|(g, a)| g * a).collect()),
                ]
            }
            Op::Scale(f) => vec![Some(g.iter().map(|v| v * f).collect())],
            Op::AddScalar | Op::Reshape => vec![Some(g.to_vec())],
            Op::AddRowBroadcast => {
                let n = parents[1].numel();
                let db = need(1).then(|| {
                    let mut db = vec![0.0; n];
                    for row in g.chunks(n) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    db
                });
                vec![need(0).then(|| g.to_vec()), db]
            }
            Op::AddColBroadcast => {
                let n = out.dim(1);
                let dc = need(1).then(|| g.chunks(n).map(|r| r.iter().sum()).collect());
                vec![need(0).then(|| g.to_vec()), dc]
            }
            Op::Relu => {
                let x = parents[0].data();
                vec![Some(g.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect())]
            }
            Op::Sigmoid => vec![Some(g.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect())],
            Op::Ln => {
                let x = parents[0].data();
                vec![Some(g.iter().zip(x).map(|(g, x)| g / x).collect())]
            }
            Op::ClampMin(floor) => {
                let x = parents[0].data();
                vec![Some(g.iter().zip(x).map(|(g, &x)| if x > *floor { *g } else { 0.0 }).collect())]
            }
            Op::Abs => {
                let x = parents[0].data();
                vec![Some(
                    g.iter()
                        .zip(x)
                        .map(|(g, &x)| if x > 0.0 { *g } else if x < 0.0 { -g } else { 0.0 })
                        .collect(),
                )]
            }
            Op::Softmax { outer, axis_len, inner } => {
                let mut dx = vec![0.0; g.len()];
                for o in 0..*outer {
                    for i in 0..*inner {
                        let idx = |a: usize| (o * axis_len + a) * inner + i;
                        let dot: f64 = (0..*axis_len).map(|a| g[idx(a)] * y[idx(a)]).sum();
                        for a in 0..*axis_len {
                            dx[idx(a)] = y[idx(a)] * (g[idx(a)] - dot);
                        }
                    }
                }
                vec![Some(dx)]
            }
            Op::LogSoftmax { cols } => {
                let mut dx = Vec::with_capacity(g.len());
                for (grow, yrow) in g.chunks(*cols).zip(y.chunks(*cols)) {
                    let gs: f64 = grow.iter().sum();
                    dx.extend(grow.iter().zip(yrow).map(|(g, l)| g - l.exp() * gs));
                }
                vec![Some(dx)]
            }
            Op::LayerNorm { cols, xhat, rstd } => {
                let gain = parents[1].data();
                let n = *cols as f64;
                let dx = need(0).then(|| {
                    let mut dx = Vec::with_capacity(g.len());
                    for ((grow, hrow), r) in g.chunks(*cols).zip(xhat.chunks(*cols)).zip(rstd) {
                        let dh: Vec<f64> = grow.iter().zip(gain).map(|(g, w)| g * w).collect();
                        let mean_dh = dh.iter().sum::<f64>() / n;
                        let mean_dh_h = dh.iter().zip(hrow).map(|(d, h)| d * h).sum::<f64>() / n;
                        dx.extend(dh.iter().zip(hrow).map(|(d, h)| r * (d - mean_dh - h * mean_dh_h)));
                    }
                    dx
                });
                let dgain = need(1).then(|| {
                    let mut dg = vec![0.0; *cols];
                    for (grow, hrow) in g.chunks(*cols).zip(xhat.chunks(*cols)) {
                        dg.iter_mut().zip(grow.iter().zip(hrow)).for_each(|(d, (g, h))| *d += g * h);
                    }
                    dg
                });
                let dbias = need(2).then(|| {
                    let mut db = vec![0.0; *cols];
                    for grow in g.chunks(*cols) {
                        db.iter_mut().zip(grow).for_each(|(d, g)| *d += g);
                    }
                    db
                });
                vec![dx, dgain, dbias]
            }
            Op::Transpose { rows, cols } => vec![Some(transpose_buf(*cols, *rows, g))],
            Op::SliceCols { start, end, cols } => {
                let w = end - start;
                let mut dx = vec![0.0; parents[0].numel()];
                for (drow, grow) in dx.chunks_mut(*cols).zip(g.chunks(w)) {
                    drow[*start..*end].copy_from_slice(grow);
                }
                vec![Some(dx)]
            }
            Op::ConcatCols { widths } => {
                let total: usize = widths.iter().sum();
                let mut offset = 0;
                widths
                    .iter()
                    .enumerate()
                    .map(|(i, &w)| {
                        let lo = offset;
                        offset += w;
                        need(i).then(|| g.chunks(total).flat_map(|r| r[lo..lo + w].iter().copied()).collect())
                    })
                    .collect()
            }
            Op::SelectRows { indices, cols } => {
                let mut dx = vec![0.0; parents[0].numel()];
                for (&i, grow) in indices.iter().zip(g.chunks(*cols)) {
                    dx[i * cols..(i + 1) * cols].iter_mut().zip(grow).for_each(|(d, g)| *d += g);
                }
                vec![Some(dx)]
            }
            Op::Pick { flat } => {
                let mut dx = vec![0.0; parents[0].numel()];
                for (&i, gv) in flat.iter().zip(g) {
                    dx[i] += gv;
                }
                vec![Some(dx)]
            }
            Op::Sum => vec![Some(vec![g[0]; parents[0].numel()])],
            Op::Mean => {
                let n = parents[0].numel();
                vec![Some(vec![g[0] / n as f64; n])]
            }
            Op::Conv2d(saved) => {
                let geom = saved.geom;
                let (o, p, l) = (saved.out_channels, geom.patch_len(), geom.out_len());
                let kernels = parents[1].data();
                let dx = need(0).then(|| {
                    let mut dcols = vec![0.0; p * l];
                    gemm(p, o, l, kernels, true, g, false, 0.0, &mut dcols);
                    geom.col2im(&dcols)
                });
                let dk = need(1).then(|| {
                    let mut dk = vec![0.0; o * p];
                    gemm(o, l, p, g, false, &saved.cols, true, 0.0, &mut dk);
                    dk
                });
                let mut grads = vec![dx, dk];
                if saved.has_bias {
                    grads.push(need(2).then(|| g.chunks(l).map(|c| c.iter().sum()).collect()));
                }
                grads
            }
        }
    }
}
