//! Dense row-major f64 arrays and the arithmetic kernels shared by the
//! autodiff tape and the no-grad fast paths.
//!
//! Shapes are kept deliberately simple: an array is a flat buffer plus a
//! shape vector, and every binary kernel interprets it as 2-D `[rows, cols]`
//! with `cols` = last dimension. The only broadcast supported anywhere is
//! the leading-batch kind (`[n, c] op [c]` and `[n, c] op [n, 1]`).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Work threshold (in multiply-adds) below which kernels stay single-threaded.
/// Fixed constant so results never depend on the thread count.
const PAR_FLOP_THRESHOLD: usize = 1 << 21;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "Array::new: shape {:?} implies {} elements, got {}",
            shape,
            numel,
            data.len()
        );
        Array { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Array { shape: shape.to_vec(), data: vec![0.0; numel] }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel: usize = shape.iter().product();
        Array { shape: shape.to_vec(), data: vec![value; numel] }
    }

    pub fn scalar(value: f64) -> Self {
        Array { shape: vec![1], data: vec![value] }
    }

    /// 2-D constructor, the common case.
    pub fn mat(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Array::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Last dimension; 1 for scalars/empty shapes.
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1).max(1)
    }

    /// Product of all leading dimensions.
    pub fn rows(&self) -> usize {
        if self.shape.is_empty() {
            1
        } else {
            self.shape[..self.shape.len() - 1].iter().product::<usize>()
        }
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn scalar_value(&self) -> f64 {
        assert!(self.is_scalar(), "scalar_value on shape {:?}", self.shape);
        self.data[0]
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols() + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        let c = self.cols();
        self.data[row * c + col] = v;
    }

    pub fn all_finite(&self) -> bool {
        // x * 0.0 is 0.0 for finite x and NaN for inf/NaN, so the fold is
        // exactly zero iff every element is finite; branch-free and SIMD-able
        let acc = self.data.iter().fold(0.0f64, |a, &v| a + v * 0.0);
        acc == 0.0
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Array {
        Array { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Array {
        let numel: usize = shape.iter().product();
        assert_eq!(numel, self.data.len(), "reshape {:?} -> {:?}", self.shape, shape);
        self.shape = shape;
        self
    }

    pub fn sq_l2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

fn same_shape(op: &str, a: &Array, b: &Array) {
    assert_eq!(
        a.shape, b.shape,
        "{op}: shape mismatch {:?} vs {:?}",
        a.shape, b.shape
    );
}

pub fn add(a: &Array, b: &Array) -> Array {
    same_shape("add", a, b);
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Array { shape: a.shape.clone(), data }
}

pub fn sub(a: &Array, b: &Array) -> Array {
    same_shape("sub", a, b);
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect();
    Array { shape: a.shape.clone(), data }
}

pub fn mul(a: &Array, b: &Array) -> Array {
    same_shape("mul", a, b);
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
    Array { shape: a.shape.clone(), data }
}

/// `[n, c] + [c]` row-wise bias.
pub fn add_bias(a: &Array, bias: &Array) -> Array {
    let c = a.cols();
    assert_eq!(
        bias.numel(),
        c,
        "add_bias: bias len {} vs cols {} (shapes {:?}, {:?})",
        bias.numel(),
        c,
        a.shape,
        bias.shape
    );
    let mut out = a.clone();
    for row in out.data.chunks_exact_mut(c) {
        for (v, b) in row.iter_mut().zip(&bias.data) {
            *v += b;
        }
    }
    out
}

/// `[n, c] * [n, 1]` column broadcast.
pub fn mul_col(a: &Array, col: &Array) -> Array {
    let (n, c) = (a.rows(), a.cols());
    assert_eq!(
        col.numel(),
        n,
        "mul_col: column len {} vs rows {} (shapes {:?}, {:?})",
        col.numel(),
        n,
        a.shape,
        col.shape
    );
    let mut out = a.clone();
    for (row, &m) in out.data.chunks_exact_mut(c).zip(&col.data) {
        for v in row.iter_mut() {
            *v *= m;
        }
    }
    out
}

/// `[n, c] - [n, 1]` column broadcast.
pub fn sub_col(a: &Array, col: &Array) -> Array {
    let (n, c) = (a.rows(), a.cols());
    assert_eq!(col.numel(), n, "sub_col: column len {} vs rows {}", col.numel(), n);
    let mut out = a.clone();
    for (row, &m) in out.data.chunks_exact_mut(c).zip(&col.data) {
        for v in row.iter_mut() {
            *v -= m;
        }
    }
    out
}

/// Row-major matmul `[m, k] x [k, n] -> [m, n]`, 4-row blocked, rayon over
/// row chunks above a fixed flop threshold (disjoint writes keep it
/// bitwise deterministic for any thread count).
pub fn matmul(a: &Array, b: &Array) -> Array {
    matmul_bias(a, b, None)
}

/// `a x b + bias` with the bias folded into the accumulator init.
pub fn matmul_bias(a: &Array, b: &Array, bias: Option<&Array>) -> Array {
    let (m, k) = (a.rows(), a.cols());
    let (kb, n) = (b.rows(), b.cols());
    assert_eq!(
        k, kb,
        "matmul: inner dims {:?} x {:?}",
        a.shape, b.shape
    );
    if let Some(bias) = bias {
        assert_eq!(bias.numel(), n, "affine: bias len {} vs cols {n}", bias.numel());
    }
    let mut out = match bias {
        Some(bias) => {
            let mut v = Vec::with_capacity(m * n);
            for _ in 0..m {
                v.extend_from_slice(bias.data());
            }
            v
        }
        None => vec![0.0; m * n],
    };
    let work = m * k * n;
    if work >= PAR_FLOP_THRESHOLD && m >= 8 {
        let rows_per = m.div_ceil(rayon::current_num_threads().max(1)).max(4);
        out.par_chunks_mut(rows_per * n)
            .enumerate()
            .for_each(|(ci, chunk)| {
                let r0 = ci * rows_per;
                let rows = chunk.len() / n;
                matmul_block(&a.data[r0 * k..(r0 + rows) * k], &b.data, chunk, rows, k, n);
            });
    } else {
        matmul_block(&a.data, &b.data, &mut out, m, k, n);
    }
    Array { shape: vec![m, n], data: out }
}

fn matmul_block(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    let mut i = 0;
    while i + 4 <= m {
        let (c01, c23) = c[i * n..(i + 4) * n].split_at_mut(2 * n);
        let (c0, c1) = c01.split_at_mut(n);
        let (c2, c3) = c23.split_at_mut(n);
        for kk in 0..k {
            let v0 = a[i * k + kk];
            let v1 = a[(i + 1) * k + kk];
            let v2 = a[(i + 2) * k + kk];
            let v3 = a[(i + 3) * k + kk];
            let brow = &b[kk * n..kk * n + n];
            for j in 0..n {
                let bv = brow[j];
                c0[j] += v0 * bv;
                c1[j] += v1 * bv;
                c2[j] += v2 * bv;
                c3[j] += v3 * bv;
            }
        }
        i += 4;
    }
    while i < m {
        let crow = &mut c[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk];
            let brow = &b[kk * n..kk * n + n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
        i += 1;
    }
}

fn transpose_data(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

/// `a^T x b` where a is `[m, k]`, b is `[m, n]` -> `[k, n]`.
/// Used by matmul backward (dB = A^T dC): transpose a once, then reuse the
/// blocked kernel.
pub fn matmul_at_b(a: &Array, b: &Array) -> Array {
    let (m, k) = (a.rows(), a.cols());
    let (mb, n) = (b.rows(), b.cols());
    assert_eq!(m, mb, "matmul_at_b: leading dims {:?} x {:?}", a.shape, b.shape);
    let at = transpose_data(&a.data, m, k);
    let at = Array { shape: vec![k, m], data: at };
    let mut out = matmul(&at, b);
    out.shape = vec![k, n];
    out
}

/// `a x b^T` where a is `[m, n]`, b is `[k, n]` -> `[m, k]`.
/// Used by matmul backward (dA = dC B^T).
pub fn matmul_a_bt(a: &Array, b: &Array) -> Array {
    let (m, n) = (a.rows(), a.cols());
    let (k, nb) = (b.rows(), b.cols());
    assert_eq!(n, nb, "matmul_a_bt: trailing dims {:?} x {:?}", a.shape, b.shape);
    let bt = transpose_data(&b.data, k, n);
    let bt = Array { shape: vec![n, k], data: bt };
    let mut out = matmul(a, &bt);
    out.shape = vec![m, k];
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    // log(1 + e^x), stable on both tails
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

pub fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Concatenate along the last axis; all inputs must share leading shape.
pub fn concat_cols(parts: &[&Array]) -> Array {
    assert!(!parts.is_empty(), "concat_cols: empty input");
    let rows = parts[0].rows();
    for p in parts {
        assert_eq!(p.rows(), rows, "concat_cols: row mismatch");
    }
    let total: usize = parts.iter().map(|p| p.cols()).sum();
    let mut data = vec![0.0; rows * total];
    let mut off = 0;
    for p in parts {
        let c = p.cols();
        for r in 0..rows {
            data[r * total + off..r * total + off + c]
                .copy_from_slice(&p.data[r * c..(r + 1) * c]);
        }
        off += c;
    }
    Array { shape: vec![rows, total], data }
}

pub fn slice_cols(a: &Array, start: usize, end: usize) -> Array {
    let (rows, c) = (a.rows(), a.cols());
    assert!(start < end && end <= c, "slice_cols: [{start}, {end}) of {c}");
    let w = end - start;
    let mut data = vec![0.0; rows * w];
    for r in 0..rows {
        data[r * w..(r + 1) * w].copy_from_slice(&a.data[r * c + start..r * c + end]);
    }
    Array { shape: vec![rows, w], data }
}

pub fn sum_all(a: &Array) -> f64 {
    a.data.iter().sum()
}

/// Masked mean: sum(x * mask) / sum(mask), mask is `[n, 1]` broadcast over
/// columns. Panics on an all-zero mask (caller bug).
pub fn mask_mean(x: &Array, mask: &Array) -> f64 {
    let (n, c) = (x.rows(), x.cols());
    assert_eq!(mask.numel(), n, "mask_mean: mask len {} vs rows {}", mask.numel(), n);
    let denom: f64 = mask.data.iter().sum();
    assert!(denom > 0.0, "mask_mean: all-zero mask");
    let mut num = 0.0;
    for (row, &m) in x.data.chunks_exact(c).zip(&mask.data) {
        if m != 0.0 {
            num += m * row.iter().sum::<f64>();
        }
    }
    num / denom
}
