//! Dense row-major kernels shared by training, pruning and inference.
//!
//! Every kernel computes each output row independently with a fixed
//! accumulation order, so results are bitwise identical regardless of how
//! many rayon workers run the row loop.

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::instrument::{tally_matmul, MacCounter};

/// Scalar type the kernels are generic over (`f32` for deployment, `f64`
/// for oracle comparisons and gradient checks).
pub trait Real:
    Float + AddAssign + SubAssign + MulAssign + Send + Sync + Debug + Default + 'static
{
    fn from_f32(v: f32) -> Self;
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f32(v: f32) -> Self {
        v
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Below this many scalar operations a kernel runs on the calling thread.
const PAR_THRESHOLD: usize = 1 << 14;

#[derive(Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

pub type DenseMatrix = Matrix<f32>;

impl<T: Debug> Debug for Matrix<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Matrix")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("data", &self.data)
            .finish()
    }
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::contract(
                "Matrix::from_vec",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from row slices; panics on ragged input (test helper).
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Copies the listed rows, in list order.
    pub fn gather_rows(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Self {
            rows: rows.len(),
            cols: self.cols,
            data,
        }
    }

    /// Copies the listed columns, in list order.
    pub fn gather_cols(&self, cols: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.rows * cols.len());
        for r in 0..self.rows {
            let row = self.row(r);
            data.extend(cols.iter().map(|&c| row[c]));
        }
        Self {
            rows: self.rows,
            cols: cols.len(),
            data,
        }
    }

    /// First `n` rows.
    pub fn head_rows(&self, n: usize) -> Self {
        Self {
            rows: n,
            cols: self.cols,
            data: self.data[..n * self.cols].to_vec(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::contract(
                "add_assign",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64().abs()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn for_each_row<T: Real, F>(out: &mut [T], cols: usize, work: usize, f: F)
where
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if cols == 0 {
        return;
    }
    if work < PAR_THRESHOLD {
        out.chunks_mut(cols).enumerate().for_each(|(r, row)| f(r, row));
    } else {
        out.par_chunks_mut(cols)
            .enumerate()
            .for_each(|(r, row)| f(r, row));
    }
}

/// `a · b`. Each output entry accumulates over the shared dimension in
/// increasing index order.
pub fn matmul<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    matmul_counted(a, b, None)
}

pub fn matmul_counted<T: Real>(
    a: &Matrix<T>,
    b: &Matrix<T>,
    counter: Option<&MacCounter>,
) -> Result<Matrix<T>> {
    if a.cols != b.rows {
        return Err(Error::contract(
            "matmul",
            format!("{:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    let (n, inner, m) = (a.rows, a.cols, b.cols);
    let mut out = Matrix::zeros(n, m);
    for_each_row(&mut out.data, m, n * inner * m, |r, orow| {
        let arow = &a.data[r * inner..(r + 1) * inner];
        for (k, &av) in arow.iter().enumerate() {
            let brow = &b.data[k * m..(k + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    });
    tally_matmul(counter, (n * inner * m) as u64);
    Ok(out)
}

/// `a · b` for 32-bit inputs with 64-bit accumulation, rounded once at the end.
pub fn matmul_acc64(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    let wide = matmul(&a.cast::<f64>(), &b.cast::<f64>())?;
    Ok(wide.cast::<f32>())
}

/// `aᵀ · b`.
pub fn matmul_tn<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.rows != b.rows {
        return Err(Error::contract(
            "matmul_tn",
            format!("{:?}ᵀ x {:?}", a.shape(), b.shape()),
        ));
    }
    let (n, p, m) = (a.rows, a.cols, b.cols);
    let mut out = Matrix::zeros(p, m);
    for_each_row(&mut out.data, m, n * p * m, |i, orow| {
        for r in 0..n {
            let av = a.data[r * p + i];
            if av == T::zero() {
                continue;
            }
            let brow = &b.data[r * m..(r + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    });
    Ok(out)
}

/// `a · bᵀ`.
pub fn matmul_nt<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.cols {
        return Err(Error::contract(
            "matmul_nt",
            format!("{:?} x {:?}ᵀ", a.shape(), b.shape()),
        ));
    }
    let (n, inner, m) = (a.rows, a.cols, b.rows);
    let mut out = Matrix::zeros(n, m);
    for_each_row(&mut out.data, m, n * inner * m, |r, orow| {
        let arow = &a.data[r * inner..(r + 1) * inner];
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = &b.data[j * inner..(j + 1) * inner];
            let mut acc = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            *o = acc;
        }
    });
    Ok(out)
}

/// Horizontal concatenation, columns appended in part order.
pub fn hconcat<T: Real>(parts: &[Matrix<T>]) -> Result<Matrix<T>> {
    let Some(first) = parts.first() else {
        return Err(Error::contract("hconcat", "no parts"));
    };
    let rows = first.rows;
    if let Some(bad) = parts.iter().find(|p| p.rows != rows) {
        return Err(Error::contract(
            "hconcat",
            format!("row mismatch {} vs {}", bad.rows, rows),
        ));
    }
    let cols: usize = parts.iter().map(|p| p.cols).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for p in parts {
            data.extend_from_slice(p.row(r));
        }
    }
    Ok(Matrix { rows, cols, data })
}

/// Splits columns into consecutive blocks of the given widths.
pub fn hsplit<T: Real>(m: &Matrix<T>, widths: &[usize]) -> Result<Vec<Matrix<T>>> {
    if widths.iter().sum::<usize>() != m.cols {
        return Err(Error::contract(
            "hsplit",
            format!("widths {:?} vs {} cols", widths, m.cols),
        ));
    }
    let mut out = Vec::with_capacity(widths.len());
    let mut start = 0;
    for &w in widths {
        let idx: Vec<usize> = (start..start + w).collect();
        out.push(m.gather_cols(&idx));
        start += w;
    }
    Ok(out)
}

/// Scales column `j` by `beta[j]`.
pub fn channel_scale<T: Real>(h: &Matrix<T>, beta: &[T]) -> Result<Matrix<T>> {
    if beta.len() != h.cols {
        return Err(Error::contract(
            "channel_scale",
            format!("beta length {} vs {} cols", beta.len(), h.cols),
        ));
    }
    let mut out = h.clone();
    if h.cols > 0 {
        for row in out.data.chunks_mut(h.cols) {
            for (v, &b) in row.iter_mut().zip(beta) {
                *v *= b;
            }
        }
    }
    Ok(out)
}

pub fn relu<T: Real>(h: &Matrix<T>) -> Matrix<T> {
    let mut out = h.clone();
    relu_in_place(&mut out);
    out
}

pub fn relu_in_place<T: Real>(h: &mut Matrix<T>) {
    for v in &mut h.data {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Mean of squared entrywise differences.
pub fn frobenius_mse<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::contract(
            "frobenius_mse",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    if a.data.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    Ok(sum / a.data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f32]]) -> DenseMatrix {
        Matrix::from_rows(rows)
    }

    #[test]
    fn matmul_identity_and_zero() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matmul(&a, &Matrix::identity(2)).unwrap(), a);
        let z = matmul(&a, &Matrix::zeros(2, 3)).unwrap();
        assert_eq!(z, Matrix::zeros(2, 3));
    }

    #[test]
    fn matmul_hand_example() {
        let a = m(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        let b = m(&[&[2.0], &[3.0]]);
        assert_eq!(matmul(&a, &b).unwrap(), m(&[&[2.0], &[3.0], &[5.0]]));
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Matrix::<f32>::zeros(2, 3);
        assert!(matches!(
            matmul(&a, &a),
            Err(Error::Contract { op: "matmul", .. })
        ));
    }

    #[test]
    fn transposed_products_match_explicit_transpose() {
        let a = m(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let b = m(&[&[1.0, -1.0], &[0.5, 2.0]]);
        let tn = matmul_tn(&a, &b).unwrap();
        assert_eq!(tn, matmul(&a.transpose(), &b).unwrap());
        let c = m(&[&[1.0, 0.0, 2.0], &[0.0, 1.0, 1.0]]);
        let nt = matmul_nt(&a, &c).unwrap();
        assert_eq!(nt, matmul(&a, &c.transpose()).unwrap());
    }

    #[test]
    fn acc64_matches_f32_on_exact_values() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = m(&[&[0.5, 1.0], &[1.5, 2.0]]);
        assert_eq!(matmul_acc64(&a, &b).unwrap(), matmul(&a, &b).unwrap());
    }

    #[test]
    fn hconcat_orders_parts() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = m(&[&[5.0, 6.0, 7.0], &[8.0, 9.0, 10.0]]);
        let c = hconcat(&[a.clone(), b]).unwrap();
        assert_eq!(c.shape(), (2, 5));
        assert_eq!(c.row(0), &[1.0, 2.0, 5.0, 6.0, 7.0]);
        assert_eq!(hconcat(std::slice::from_ref(&a)).unwrap(), a);
        assert!(hconcat(&[a, Matrix::zeros(3, 1)]).is_err());
    }

    #[test]
    fn hsplit_inverts_hconcat() {
        let a = m(&[&[1.0], &[2.0]]);
        let b = m(&[&[3.0, 4.0], &[5.0, 6.0]]);
        let parts = hsplit(&hconcat(&[a.clone(), b.clone()]).unwrap(), &[1, 2]).unwrap();
        assert_eq!(parts, vec![a, b]);
    }

    #[test]
    fn channel_scale_examples() {
        let h = m(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0], &[2.0, 0.0]]);
        assert_eq!(channel_scale(&h, &[1.0, 1.0]).unwrap(), h);
        let z = channel_scale(&h, &[1.0, 0.0]).unwrap();
        assert!((0..4).all(|r| z.get(r, 1) == 0.0 && z.get(r, 0) == h.get(r, 0)));
        let s = channel_scale(&m(&[&[2.0, 1.0]]), &[0.5, 2.0]).unwrap();
        assert_eq!(s, m(&[&[1.0, 2.0]]));
        assert!(channel_scale(&h, &[1.0]).is_err());
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&m(&[&[-1.0, 2.0]])), m(&[&[0.0, 2.0]]));
        let pos = m(&[&[0.0, 3.0], &[1.0, 2.0]]);
        assert_eq!(relu(&pos), pos);
        assert_eq!(relu(&m(&[&[-1.0, -2.0]])), Matrix::zeros(1, 2));
    }

    #[test]
    fn mse_examples() {
        let a = m(&[&[1.0, 1.0]]);
        assert_eq!(frobenius_mse(&a, &a).unwrap(), 0.0);
        assert_eq!(frobenius_mse(&a, &Matrix::zeros(1, 2)).unwrap(), 1.0);
        let b = m(&[&[0.5, -2.0]]);
        let base = frobenius_mse(&a, &b).unwrap();
        let mut a3 = a.clone();
        let mut b3 = b.clone();
        a3.scale(3.0);
        b3.scale(3.0);
        assert!((frobenius_mse(&a3, &b3).unwrap() - 9.0 * base).abs() < 1e-9);
        assert!(frobenius_mse(&a, &Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn parallel_path_is_bitwise_stable() {
        let n = 300;
        let a = Matrix::from_vec(n, 64, (0..n * 64).map(|i| ((i * 37 % 101) as f32) * 0.013 - 0.6).collect()).unwrap();
        let b = Matrix::from_vec(64, 48, (0..64 * 48).map(|i| ((i * 17 % 89) as f32) * 0.021 - 0.9).collect()).unwrap();
        let reference = matmul(&a, &b).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let single = pool.install(|| matmul(&a, &b).unwrap());
        assert_eq!(reference.as_slice(), single.as_slice());
    }
}
