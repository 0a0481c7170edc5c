//! Forward operations and their reverse-mode rules.
//!
//! Elementwise transcendentals evaluate through f64 and round once to f32;
//! inner products and reductions accumulate in f64. Storage stays f32.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{accumulate_into, Op, Tensor};
use crate::error::{Error, Result};

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Row-major matrix product with f64 accumulation.
pub(crate) fn matmul_raw(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    // i-p-j order keeps the inner loop contiguous over b while accumulating
    // each output element over ascending p, exactly as the naive triple loop
    // would, so results are bitwise identical to it.
    let mut out = vec![0.0f32; m * n];
    let mut acc = vec![0.0f64; n];
    for i in 0..m {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for p in 0..k {
            let av = a[i * k + p] as f64;
            let brow = &b[p * n..(p + 1) * n];
            for (dst, &bv) in acc.iter_mut().zip(brow) {
                *dst += av * bv as f64;
            }
        }
        for (dst, &v) in out[i * n..(i + 1) * n].iter_mut().zip(&acc) {
            *dst = v as f32;
        }
    }
    out
}

fn transpose_raw(a: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// (outer, axis_len, inner) decomposition for reductions along `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn first_dim(shape: &[usize]) -> usize {
    shape[0]
}

/// Width of one "row": everything after the first dim.
fn row_width(shape: &[usize]) -> usize {
    shape[1..].iter().product::<usize>().max(1)
}

impl Tensor {
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (ls, rs) = (self.shape(), rhs.shape());
        if ls.len() != 2 || rs.len() != 2 {
            return Err(Error::shape(
                "matmul",
                format!("expected two rank-2 tensors, got {:?} x {:?}", ls, rs),
            ));
        }
        if ls[1] != rs[0] {
            return Err(Error::shape(
                "matmul",
                format!("inner dims disagree: {:?} x {:?}", ls, rs),
            ));
        }
        let (m, k, n) = (ls[0], ls[1], rs[1]);
        let data = matmul_raw(&self.data(), &rhs.data(), m, k, n);
        Ok(Tensor::from_op(
            vec![m, n],
            data,
            Op::Matmul {
                a: self.clone(),
                b: rhs.clone(),
            },
        ))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::shape("transpose", format!("rank-2 only, got {:?}", s)));
        }
        let data = transpose_raw(&self.data(), s[0], s[1]);
        Ok(Tensor::from_op(
            vec![s[1], s[0]],
            data,
            Op::Transpose { a: self.clone() },
        ))
    }

    fn zip_same_shape(
        &self,
        rhs: &Tensor,
        op_name: &'static str,
        f: impl Fn(f32, f32) -> f32,
        op: Op,
    ) -> Result<Tensor> {
        let (ls, rs) = (self.shape(), rhs.shape());
        if ls != rs {
            return Err(Error::shape(
                op_name,
                format!("operands differ: {:?} vs {:?}", ls, rs),
            ));
        }
        let data: Vec<f32> = self
            .data()
            .iter()
            .zip(rhs.data().iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(Tensor::from_op(ls, data, op))
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_same_shape(
            rhs,
            "add",
            |x, y| x + y,
            Op::Add {
                a: self.clone(),
                b: rhs.clone(),
            },
        )
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_same_shape(
            rhs,
            "sub",
            |x, y| x - y,
            Op::Sub {
                a: self.clone(),
                b: rhs.clone(),
            },
        )
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_same_shape(
            rhs,
            "mul",
            |x, y| x * y,
            Op::Mul {
                a: self.clone(),
                b: rhs.clone(),
            },
        )
    }

    /// Broadcast a rank-1 bias over every row of a rank-2 tensor.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let s = self.shape();
        let bs = bias.shape();
        let cols = *s.last().ok_or_else(|| Error::shape("add_bias", "empty shape"))?;
        if bs.len() != 1 || bs[0] != cols {
            return Err(Error::shape(
                "add_bias",
                format!("bias {:?} does not match row width of {:?}", bs, s),
            ));
        }
        let b = bias.data();
        let data: Vec<f32> = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + b[i % cols])
            .collect();
        Ok(Tensor::from_op(
            s,
            data,
            Op::AddBias {
                a: self.clone(),
                bias: bias.clone(),
            },
        ))
    }

    pub fn scale(&self, factor: f32) -> Tensor {
        let data: Vec<f32> = self.data().iter().map(|&x| x * factor).collect();
        Tensor::from_op(
            self.shape(),
            data,
            Op::Scale {
                a: self.clone(),
                factor,
            },
        )
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, v: f32) -> Tensor {
        let data: Vec<f32> = self.data().iter().map(|&x| x + v).collect();
        Tensor::from_op(self.shape(), data, Op::AddScalar { a: self.clone() })
    }

    pub fn relu(&self) -> Tensor {
        let data: Vec<f32> = self.data().iter().map(|&x| x.max(0.0)).collect();
        Tensor::from_op(self.shape(), data, Op::Relu { a: self.clone() })
    }

    /// Exact GELU: `0.5 * x * (1 + erf(x / sqrt(2)))`.
    pub fn gelu(&self) -> Tensor {
        let data: Vec<f32> = self
            .data()
            .iter()
            .map(|&x| {
                let xf = x as f64;
                (0.5 * xf * (1.0 + libm::erf(xf * INV_SQRT_2))) as f32
            })
            .collect();
        Tensor::from_op(self.shape(), data, Op::Gelu { a: self.clone() })
    }

    pub fn sigmoid(&self) -> Tensor {
        let data: Vec<f32> = self
            .data()
            .iter()
            .map(|&x| (1.0 / (1.0 + (-(x as f64)).exp())) as f32)
            .collect();
        Tensor::from_op(self.shape(), data, Op::Sigmoid { a: self.clone() })
    }

    pub fn tanh(&self) -> Tensor {
        let data: Vec<f32> = self.data().iter().map(|&x| (x as f64).tanh() as f32).collect();
        Tensor::from_op(self.shape(), data, Op::Tanh { a: self.clone() })
    }

    pub fn ln(&self) -> Tensor {
        let data: Vec<f32> = self.data().iter().map(|&x| (x as f64).ln() as f32).collect();
        Tensor::from_op(self.shape(), data, Op::Ln { a: self.clone() })
    }

    pub fn clamp(&self, lo: f32, hi: f32) -> Tensor {
        let data: Vec<f32> = self.data().iter().map(|&x| x.clamp(lo, hi)).collect();
        Tensor::from_op(self.shape(), data, Op::Clamp { a: self.clone(), lo, hi })
    }

    /// Softmax along `axis`, max-subtracted for stability. Slices sum to 1.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::shape(
                "softmax",
                format!("axis {} out of range for {:?}", axis, shape),
            ));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = self.data();
        let mut data = vec![0.0f32; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let mut max = f32::NEG_INFINITY;
                for j in 0..len {
                    max = max.max(src[at(j)]);
                }
                let mut denom = 0.0f64;
                for j in 0..len {
                    let e = ((src[at(j)] - max) as f64).exp();
                    data[at(j)] = e as f32;
                    denom += e;
                }
                for j in 0..len {
                    data[at(j)] = (data[at(j)] as f64 / denom) as f32;
                }
            }
        }
        drop(src);
        Ok(Tensor::from_op(
            shape,
            data,
            Op::Softmax {
                a: self.clone(),
                axis,
            },
        ))
    }

    /// Per-row layer normalization over the last dimension.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor> {
        let shape = self.shape();
        let cols = *shape.last().ok_or_else(|| Error::shape("layer_norm", "empty shape"))?;
        if gamma.shape() != vec![cols] || beta.shape() != vec![cols] {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "gamma {:?} / beta {:?} do not match row width {}",
                    gamma.shape(),
                    beta.shape(),
                    cols
                ),
            ));
        }
        let src = self.data();
        let g = gamma.data();
        let b = beta.data();
        let rows = src.len() / cols;
        let mut data = vec![0.0f32; src.len()];
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let mean = row.iter().map(|&x| x as f64).sum::<f64>() / cols as f64;
            let var = row
                .iter()
                .map(|&x| (x as f64 - mean).powi(2))
                .sum::<f64>()
                / cols as f64;
            let inv_std = 1.0 / (var + eps as f64).sqrt();
            for c in 0..cols {
                let xhat = (row[c] as f64 - mean) * inv_std;
                data[r * cols + c] = (xhat * g[c] as f64 + b[c] as f64) as f32;
            }
        }
        drop(src);
        drop(g);
        drop(b);
        Ok(Tensor::from_op(
            shape,
            data,
            Op::LayerNorm {
                a: self.clone(),
                gamma: gamma.clone(),
                beta: beta.clone(),
                eps,
            },
        ))
    }

    /// Inverted dropout: zero with probability `p`, survivors scaled by
    /// `1/(1-p)`. `p == 0` is the identity. Callers skip this entirely in
    /// eval mode.
    pub fn dropout(&self, p: f32, rng: &mut ChaCha8Rng) -> Tensor {
        assert!((0.0..1.0).contains(&p), "dropout p must be in [0, 1)");
        if p == 0.0 {
            return self.clone();
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f32> = (0..self.numel())
            .map(|_| if rng.gen::<f32>() < p { 0.0 } else { keep })
            .collect();
        let data: Vec<f32> = self
            .data()
            .iter()
            .zip(mask.iter())
            .map(|(&x, &m)| x * m)
            .collect();
        Tensor::from_op(self.shape(), data, Op::Dropout { a: self.clone(), mask })
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum(&self) -> Tensor {
        let s: f64 = self.data().iter().map(|&x| x as f64).sum();
        Tensor::from_op(vec![1], vec![s as f32], Op::Sum { a: self.clone() })
    }

    /// Mean of all elements, as a scalar tensor.
    pub fn mean(&self) -> Tensor {
        let n = self.numel().max(1);
        let s: f64 = self.data().iter().map(|&x| x as f64).sum();
        Tensor::from_op(
            vec![1],
            vec![(s / n as f64) as f32],
            Op::Mean { a: self.clone() },
        )
    }

    /// Maximum element as a scalar; gradient routes only to the first argmax.
    pub fn max(&self) -> Result<Tensor> {
        if self.numel() == 0 {
            return Err(Error::Contract("max over an empty tensor".into()));
        }
        let data = self.data();
        let mut argmax = 0;
        let mut best = data[0];
        for (i, &v) in data.iter().enumerate().skip(1) {
            if v > best {
                best = v;
                argmax = i;
            }
        }
        drop(data);
        Ok(Tensor::from_op(
            vec![1],
            vec![best],
            Op::Max {
                a: self.clone(),
                argmax,
            },
        ))
    }

    /// Stack along the first dimension. Rank-1 parts concatenate into a
    /// longer vector; rank-2 parts must share a column count.
    pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_rows of zero tensors".into()));
        }
        let rank = parts[0].shape().len();
        let width = row_width(&parts[0].shape());
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let s = p.shape();
            if s.len() != rank || row_width(&s) != width {
                return Err(Error::shape(
                    "concat_rows",
                    format!("incompatible part {:?} (want width {})", s, width),
                ));
            }
            rows += first_dim(&s);
            data.extend_from_slice(&p.data());
        }
        let shape = if rank == 1 { vec![rows] } else { vec![rows, width] };
        Ok(Tensor::from_op(
            shape,
            data,
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Concatenate rank-2 tensors side by side (same row count).
    pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_cols of zero tensors".into()));
        }
        let rows = parts[0].shape().first().copied().unwrap_or(0);
        let mut total_cols = 0;
        for p in parts {
            let s = p.shape();
            if s.len() != 2 || s[0] != rows {
                return Err(Error::shape(
                    "concat_cols",
                    format!("incompatible part {:?} (want {} rows)", s, rows),
                ));
            }
            total_cols += s[1];
        }
        let mut data = vec![0.0f32; rows * total_cols];
        let mut col_off = 0;
        for p in parts {
            let s = p.shape();
            let pc = s[1];
            let pd = p.data();
            for r in 0..rows {
                data[r * total_cols + col_off..r * total_cols + col_off + pc]
                    .copy_from_slice(&pd[r * pc..(r + 1) * pc]);
            }
            col_off += pc;
        }
        Ok(Tensor::from_op(
            vec![rows, total_cols],
            data,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Slice `[start, end)` along the first dimension.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Tensor> {
        let s = self.shape();
        let rows = first_dim(&s);
        if start > end || end > rows {
            return Err(Error::shape(
                "slice_rows",
                format!("range {}..{} out of {} rows", start, end, rows),
            ));
        }
        let width = row_width(&s);
        let data = self.data()[start * width..end * width].to_vec();
        let shape = if s.len() == 1 {
            vec![end - start]
        } else {
            vec![end - start, width]
        };
        Ok(Tensor::from_op(
            shape,
            data,
            Op::SliceRows {
                a: self.clone(),
                start,
            },
        ))
    }

    /// Slice `[start, end)` columns of a rank-2 tensor.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::shape("slice_cols", format!("rank-2 only, got {:?}", s)));
        }
        let (rows, cols) = (s[0], s[1]);
        if start > end || end > cols {
            return Err(Error::shape(
                "slice_cols",
                format!("range {}..{} out of {} cols", start, end, cols),
            ));
        }
        let src = self.data();
        let w = end - start;
        let mut data = vec![0.0f32; rows * w];
        for r in 0..rows {
            data[r * w..(r + 1) * w].copy_from_slice(&src[r * cols + start..r * cols + end]);
        }
        drop(src);
        Ok(Tensor::from_op(
            vec![rows, w],
            data,
            Op::SliceCols {
                a: self.clone(),
                start,
            },
        ))
    }

    /// Gather rows (rank-2) or elements (rank-1) by index; duplicates allowed,
    /// gradients accumulate back through repeated indices.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let s = self.shape();
        let rows = first_dim(&s);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::shape(
                "gather_rows",
                format!("index {} out of {} rows", bad, rows),
            ));
        }
        let width = row_width(&s);
        let src = self.data();
        let mut data = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            data.extend_from_slice(&src[i * width..(i + 1) * width]);
        }
        drop(src);
        let shape = if s.len() == 1 {
            vec![indices.len()]
        } else {
            vec![indices.len(), width]
        };
        Ok(Tensor::from_op(
            shape,
            data,
            Op::GatherRows {
                a: self.clone(),
                indices: indices.to_vec(),
            },
        ))
    }

    /// Per-row Euclidean norms of a rank-2 tensor (rank-1 treated as one row).
    pub fn row_l2_norms(&self) -> Tensor {
        let (rows, cols) = self.rows_cols();
        let src = self.data();
        let mut data = vec![0.0f32; rows];
        for r in 0..rows {
            let acc: f64 = src[r * cols..(r + 1) * cols]
                .iter()
                .map(|&x| (x as f64) * (x as f64))
                .sum();
            data[r] = acc.sqrt() as f32;
        }
        drop(src);
        Tensor::from_op(vec![rows], data, Op::RowL2Norms { a: self.clone() })
    }

    /// Scale every row to unit Euclidean norm; zero rows stay zero.
    pub fn l2_normalize_rows(&self) -> Tensor {
        let (rows, cols) = self.rows_cols();
        let src = self.data();
        let mut data = vec![0.0f32; src.len()];
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let norm: f64 = row.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
            if norm > 0.0 {
                for c in 0..cols {
                    data[r * cols + c] = (row[c] as f64 / norm) as f32;
                }
            }
        }
        drop(src);
        Tensor::from_op(self.shape(), data, Op::L2NormalizeRows { a: self.clone() })
    }
}

/// Apply one node's reverse rule, accumulating into its parents.
pub(crate) fn backprop_node(t: &Tensor) {
    let n = t.inner.borrow();
    if !n.requires_grad {
        return;
    }
    let grad = match n.grad.as_ref() {
        Some(g) => g.clone(),
        None => return,
    };
    match &n.op {
        Op::Leaf => {}

        Op::Matmul { a, b } => {
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let nn = b.shape()[1];
            if a.requires_grad() {
                let bd = b.to_vec();
                let bt = transpose_raw(&bd, k, nn);
                let da = matmul_raw(&grad, &bt, m, nn, k);
                accumulate_into(a, &da);
            }
            if b.requires_grad() {
                let ad = a.to_vec();
                let at = transpose_raw(&ad, m, k);
                let db = matmul_raw(&at, &grad, k, m, nn);
                accumulate_into(b, &db);
            }
        }

        Op::Transpose { a } => {
            let s = n.shape.clone();
            accumulate_into(a, &transpose_raw(&grad, s[0], s[1]));
        }

        Op::Add { a, b } => {
            accumulate_into(a, &grad);
            accumulate_into(b, &grad);
        }

        Op::Sub { a, b } => {
            accumulate_into(a, &grad);
            let neg: Vec<f32> = grad.iter().map(|g| -g).collect();
            accumulate_into(b, &neg);
        }

        Op::Mul { a, b } => {
            if a.requires_grad() {
                let bd = b.to_vec();
                let da: Vec<f32> = grad.iter().zip(&bd).map(|(g, y)| g * y).collect();
                accumulate_into(a, &da);
            }
            if b.requires_grad() {
                let ad = a.to_vec();
                let db: Vec<f32> = grad.iter().zip(&ad).map(|(g, x)| g * x).collect();
                accumulate_into(b, &db);
            }
        }

        Op::AddBias { a, bias } => {
            accumulate_into(a, &grad);
            if bias.requires_grad() {
                let cols = bias.numel();
                let mut db = vec![0.0f32; cols];
                for (i, g) in grad.iter().enumerate() {
                    db[i % cols] += g;
                }
                accumulate_into(bias, &db);
            }
        }

        Op::Scale { a, factor } => {
            let da: Vec<f32> = grad.iter().map(|g| g * factor).collect();
            accumulate_into(a, &da);
        }

        Op::AddScalar { a } => accumulate_into(a, &grad),

        Op::Relu { a } => {
            let ad = a.to_vec();
            let da: Vec<f32> = grad
                .iter()
                .zip(&ad)
                .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                .collect();
            accumulate_into(a, &da);
        }

        Op::Gelu { a } => {
            let ad = a.to_vec();
            let da: Vec<f32> = grad
                .iter()
                .zip(&ad)
                .map(|(g, &x)| {
                    let xf = x as f64;
                    let cdf = 0.5 * (1.0 + libm::erf(xf * INV_SQRT_2));
                    let pdf = INV_SQRT_2PI * (-0.5 * xf * xf).exp();
                    (*g as f64 * (cdf + xf * pdf)) as f32
                })
                .collect();
            accumulate_into(a, &da);
        }

        Op::Sigmoid { a } => {
            let da: Vec<f32> = grad
                .iter()
                .zip(&n.data)
                .map(|(g, &s)| g * s * (1.0 - s))
                .collect();
            accumulate_into(a, &da);
        }

        Op::Tanh { a } => {
            let da: Vec<f32> = grad
                .iter()
                .zip(&n.data)
                .map(|(g, &t)| g * (1.0 - t * t))
                .collect();
            accumulate_into(a, &da);
        }

        Op::Ln { a } => {
            let ad = a.to_vec();
            let da: Vec<f32> = grad.iter().zip(&ad).map(|(g, &x)| g / x).collect();
            accumulate_into(a, &da);
        }

        Op::Clamp { a, lo, hi } => {
            let ad = a.to_vec();
            let da: Vec<f32> = grad
                .iter()
                .zip(&ad)
                .map(|(g, &x)| if x > *lo && x < *hi { *g } else { 0.0 })
                .collect();
            accumulate_into(a, &da);
        }

        Op::Softmax { a, axis } => {
            let shape = n.shape.clone();
            let (outer, len, inner) = axis_split(&shape, *axis);
            let out = &n.data;
            let mut da = vec![0.0f32; out.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| o * len * inner + j * inner + i;
                    let mut dot = 0.0f64;
                    for j in 0..len {
                        dot += grad[at(j)] as f64 * out[at(j)] as f64;
                    }
                    for j in 0..len {
                        da[at(j)] =
                            (out[at(j)] as f64 * (grad[at(j)] as f64 - dot)) as f32;
                    }
                }
            }
            accumulate_into(a, &da);
        }

        Op::LayerNorm { a, gamma, beta, eps } => {
            let ad = a.to_vec();
            let gd = gamma.to_vec();
            let cols = gd.len();
            let rows = ad.len() / cols;
            let mut da = vec![0.0f32; ad.len()];
            let mut dgamma = vec![0.0f32; cols];
            let mut dbeta = vec![0.0f32; cols];
            for r in 0..rows {
                let row = &ad[r * cols..(r + 1) * cols];
                let g_row = &grad[r * cols..(r + 1) * cols];
                let mean = row.iter().map(|&x| x as f64).sum::<f64>() / cols as f64;
                let var = row
                    .iter()
                    .map(|&x| (x as f64 - mean).powi(2))
                    .sum::<f64>()
                    / cols as f64;
                let inv_std = 1.0 / (var + *eps as f64).sqrt();
                let xhat: Vec<f64> =
                    row.iter().map(|&x| (x as f64 - mean) * inv_std).collect();
                let dxhat: Vec<f64> = g_row
                    .iter()
                    .zip(&gd)
                    .map(|(&g, &gm)| g as f64 * gm as f64)
                    .collect();
                let sum_dxhat: f64 = dxhat.iter().sum();
                let sum_dxhat_xhat: f64 =
                    dxhat.iter().zip(&xhat).map(|(d, x)| d * x).sum();
                let cf = cols as f64;
                for c in 0..cols {
                    dgamma[c] += (g_row[c] as f64 * xhat[c]) as f32;
                    dbeta[c] += g_row[c];
                    da[r * cols + c] = (inv_std / cf
                        * (cf * dxhat[c] - sum_dxhat - xhat[c] * sum_dxhat_xhat))
                        as f32;
                }
            }
            accumulate_into(a, &da);
            accumulate_into(gamma, &dgamma);
            accumulate_into(beta, &dbeta);
        }

        Op::Dropout { a, mask } => {
            let da: Vec<f32> = grad.iter().zip(mask).map(|(g, m)| g * m).collect();
            accumulate_into(a, &da);
        }

        Op::Sum { a } => {
            let da = vec![grad[0]; a.numel()];
            accumulate_into(a, &da);
        }

        Op::Mean { a } => {
            let g = grad[0] / a.numel().max(1) as f32;
            let da = vec![g; a.numel()];
            accumulate_into(a, &da);
        }

        Op::Max { a, argmax } => {
            let mut da = vec![0.0f32; a.numel()];
            da[*argmax] = grad[0];
            accumulate_into(a, &da);
        }

        Op::ConcatRows { parts } => {
            let mut off = 0;
            for p in parts {
                let len = p.numel();
                accumulate_into(p, &grad[off..off + len]);
                off += len;
            }
        }

        Op::ConcatCols { parts } => {
            let rows = n.shape[0];
            let total_cols = n.shape[1];
            let mut col_off = 0;
            for p in parts {
                let pc = p.shape()[1];
                if p.requires_grad() {
                    let mut dp = vec![0.0f32; rows * pc];
                    for r in 0..rows {
                        dp[r * pc..(r + 1) * pc].copy_from_slice(
                            &grad[r * total_cols + col_off..r * total_cols + col_off + pc],
                        );
                    }
                    accumulate_into(p, &dp);
                }
                col_off += pc;
            }
        }

        Op::SliceRows { a, start } => {
            let width = row_width(&a.shape());
            let mut da = vec![0.0f32; a.numel()];
            da[start * width..start * width + grad.len()].copy_from_slice(&grad);
            accumulate_into(a, &da);
        }

        Op::SliceCols { a, start } => {
            let s = a.shape();
            let (rows, cols) = (s[0], s[1]);
            let w = n.shape[1];
            let mut da = vec![0.0f32; a.numel()];
            for r in 0..rows {
                da[r * cols + start..r * cols + start + w]
                    .copy_from_slice(&grad[r * w..(r + 1) * w]);
            }
            accumulate_into(a, &da);
        }

        Op::GatherRows { a, indices } => {
            let width = row_width(&a.shape());
            let mut da = vec![0.0f32; a.numel()];
            for (k, &i) in indices.iter().enumerate() {
                for c in 0..width {
                    da[i * width + c] += grad[k * width + c];
                }
            }
            accumulate_into(a, &da);
        }

        Op::RowL2Norms { a } => {
            let ad = a.to_vec();
            let (rows, cols) = a.rows_cols();
            let mut da = vec![0.0f32; ad.len()];
            for r in 0..rows {
                let norm = n.data[r];
                if norm > 0.0 {
                    for c in 0..cols {
                        da[r * cols + c] = grad[r] * ad[r * cols + c] / norm;
                    }
                }
            }
            accumulate_into(a, &da);
        }

        Op::L2NormalizeRows { a } => {
            let ad = a.to_vec();
            let (rows, cols) = a.rows_cols();
            let mut da = vec![0.0f32; ad.len()];
            for r in 0..rows {
                let row = &ad[r * cols..(r + 1) * cols];
                let norm: f64 =
                    row.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
                if norm > 0.0 {
                    let y = &n.data[r * cols..(r + 1) * cols];
                    let g = &grad[r * cols..(r + 1) * cols];
                    let dot: f64 = g.iter().zip(y).map(|(&gi, &yi)| gi as f64 * yi as f64).sum();
                    for c in 0..cols {
                        da[r * cols + c] = ((g[c] as f64 - y[c] as f64 * dot) / norm) as f32;
                    }
                }
            }
            accumulate_into(a, &da);
        }
    }
}
