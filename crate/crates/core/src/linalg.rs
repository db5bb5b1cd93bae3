//! Dense vectors and matrices plus reproducible Gaussian sampling.
//!
//! Every random draw comes from a [`RngState`], a `(seed, stream)` pair that
//! selects one ChaCha8 keystream. Standard normals are produced by the
//! Ziggurat sampler of `rand_distr` on top of that keystream, so a given
//! `(seed, stream)` reproduces the same sequence on every platform.
//!
//! Gaussian matrices draw row `i` from the sub-stream `rng.derive(i)`. A
//! consequence is that the top-left `r × c` block of a larger matrix drawn
//! from the same state is identical (up to the variance scale) to the
//! `r × c` matrix itself, which lets experiments couple networks of
//! different widths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Identifies one reproducible random sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
}

impl RngState {
    pub const fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub const fn from_seed(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    /// Sub-stream keyed by an integer (trial index, row index, ...).
    pub fn derive(self, key: u64) -> Self {
        Self {
            seed: self.seed,
            stream: splitmix64(self.stream ^ splitmix64(key)),
        }
    }

    /// Sub-stream keyed by a name.
    pub fn derive_tag(self, tag: &str) -> Self {
        self.derive(fnv1a(tag))
    }

    pub fn draws(self) -> Draws {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        Draws { rng }
    }
}

/// A live generator positioned somewhere in the sequence of a [`RngState`].
pub struct Draws {
    rng: ChaCha8Rng,
}

impl Draws {
    #[inline]
    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn fill_normal(&mut self, out: &mut [f64], std_dev: f64) {
        for x in out {
            *x = std_dev * self.normal();
        }
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// Uniform integer in `lo..=hi`.
    pub fn between(&mut self, lo: usize, hi: usize) -> usize {
        self.rng.random_range(lo..=hi)
    }
}

/// Euclidean norm of a slice.
pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn check_finite(data: &[f64], what: &str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} contains non-finite entries")))
    }
}

/// Dense column vector of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::invalid("vector dimension must be positive"));
        }
        check_finite(&data, "vector")?;
        Ok(Self(data))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub(crate) fn from_vec(data: Vec<f64>) -> Self {
        Self(data)
    }

    /// `dim` i.i.d. draws from N(0, variance).
    pub fn gaussian(dim: usize, variance: f64, rng: RngState) -> Result<Self> {
        if dim == 0 || variance.is_nan() || variance <= 0.0 {
            return Err(Error::invalid("gaussian vector needs dim > 0 and variance > 0"));
        }
        let mut data = vec![0.0; dim];
        rng.draws().fill_normal(&mut data, variance.sqrt());
        Ok(Self(data))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn scaled(&self, c: f64) -> Vector {
        Vector(self.0.iter().map(|v| c * v).collect())
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("matrix dimensions must be positive"));
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "matrix data",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        check_finite(&data, "matrix")?;
        Ok(Self { rows, cols, data })
    }

    /// Shape-only constructor; dimensions may be zero (used for empty batches).
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(k: usize) -> Self {
        let mut m = Self::zeros(k, k);
        for i in 0..k {
            m.data[i * k + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// Top-left `rows × cols` block.
    pub fn block(&self, rows: usize, cols: usize) -> Result<Matrix> {
        if rows > self.rows || cols > self.cols {
            return Err(Error::invalid(format!(
                "block {rows}x{cols} exceeds {}x{}",
                self.rows, self.cols
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            data.extend_from_slice(&self.row(i)[..cols]);
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn scale_in_place(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    /// `self · x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch {
                context: "matvec",
                expected: self.cols,
                actual: x.len(),
            });
        }
        Ok(self.row_iter().map(|r| dot(r, x)).collect())
    }

    /// `selfᵀ · y`.
    pub fn tr_matvec(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            return Err(Error::DimensionMismatch {
                context: "transposed matvec",
                expected: self.rows,
                actual: y.len(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (r, &yi) in self.row_iter().zip(y) {
            for (o, &w) in out.iter_mut().zip(r) {
                *o += w * yi;
            }
        }
        Ok(out)
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                context: "matmul",
                expected: self.cols,
                actual: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(
            self.rows,
            self.cols,
            other.cols,
            (&self.data, self.cols as isize, 1),
            (&other.data, other.cols as isize, 1),
            &mut out.data,
        );
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                context: "matmul_t",
                expected: self.cols,
                actual: other.cols,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        gemm(
            self.rows,
            self.cols,
            other.rows,
            (&self.data, self.cols as isize, 1),
            (&other.data, 1, other.cols as isize),
            &mut out.data,
        );
        Ok(out)
    }

    /// `selfᵀ · self`.
    pub fn gram(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.cols);
        gemm(
            self.cols,
            self.rows,
            self.cols,
            (&self.data, 1, self.cols as isize),
            (&self.data, self.cols as isize, 1),
            &mut out.data,
        );
        out
    }
}

/// `C = A · B` for strided views; `C` is row-major `m × n`.
fn gemm(m: usize, k: usize, n: usize, a: (&[f64], isize, isize), b: (&[f64], isize, isize), c: &mut [f64]) {
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.fill(0.0);
        return;
    }
    // SAFETY: the strides describe views that lie within the slices, which
    // the shape checks of the callers guarantee; `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `rows × cols` matrix of i.i.d. N(0, variance) entries.
pub fn gaussian_matrix(rows: usize, cols: usize, variance: f64, rng: RngState) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("gaussian matrix dimensions must be positive"));
    }
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(Error::invalid(format!("variance must be positive, got {variance}")));
    }
    let std_dev = variance.sqrt();
    let mut m = Matrix::zeros(rows, cols);
    for i in 0..rows {
        rng.derive(i as u64).draws().fill_normal(m.row_mut(i), std_dev);
    }
    Ok(m)
}

/// Orthonormal `ambient_dim × subspace_dim` basis of a random subspace,
/// obtained from the Householder QR factorization of a Gaussian matrix.
///
/// Columns are sign-normalized so that the triangular factor has a positive
/// diagonal, which makes the spanned subspace uniformly distributed.
pub fn orthonormal_basis(ambient_dim: usize, subspace_dim: usize, rng: RngState) -> Result<Matrix> {
    if subspace_dim == 0 || subspace_dim > ambient_dim {
        return Err(Error::invalid(format!(
            "need 1 <= subspace_dim <= ambient_dim, got {subspace_dim} and {ambient_dim}"
        )));
    }
    let a = gaussian_matrix(ambient_dim, subspace_dim, 1.0, rng)?;
    householder_q(&a)
}

/// Thin `Q` factor of `a` (rows ≥ cols).
fn householder_q(a: &Matrix) -> Result<Matrix> {
    let (m, k) = a.shape();
    // Column-major working copy.
    let mut work: Vec<Vec<f64>> = (0..k).map(|j| (0..m).map(|i| a.get(i, j)).collect()).collect();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut diag_sign = vec![1.0; k];

    for j in 0..k {
        let x = &work[j][j..];
        let x_norm = norm(x);
        if x_norm == 0.0 {
            return Err(Error::DegenerateInput("rank-deficient matrix in QR".into()));
        }
        let alpha = if x[0] > 0.0 { -x_norm } else { x_norm };
        let mut v = x.to_vec();
        v[0] -= alpha;
        let v_norm = norm(&v);
        v.iter_mut().for_each(|e| *e /= v_norm);
        for col in work.iter_mut().skip(j) {
            let tail = &mut col[j..];
            let s = 2.0 * dot(&v, tail);
            tail.iter_mut().zip(&v).for_each(|(t, vi)| *t -= s * vi);
        }
        diag_sign[j] = alpha.signum();
        reflectors.push(v);
    }

    // Q = H_0 … H_{k-1} [I_k; 0]
    let mut q: Vec<Vec<f64>> = (0..k)
        .map(|j| {
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            e
        })
        .collect();
    for (j, v) in reflectors.iter().enumerate().rev() {
        for col in q.iter_mut() {
            let tail = &mut col[j..];
            let s = 2.0 * dot(v, tail);
            tail.iter_mut().zip(v).for_each(|(t, vi)| *t -= s * vi);
        }
    }

    let mut out = Matrix::zeros(m, k);
    for (j, col) in q.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            out.set(i, j, diag_sign[j] * v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(xs: &[f64]) -> (f64, f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        (mean, var, m4 / (var * var))
    }

    #[test]
    fn same_state_same_matrix() {
        let rng = RngState::new(42, 7);
        let a = gaussian_matrix(2, 2, 0.3, rng).unwrap();
        let b = gaussian_matrix(2, 2, 0.3, rng).unwrap();
        assert_eq!(a, b);
        let c = gaussian_matrix(2, 2, 0.3, RngState::new(42, 8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn unit_variance_moments() {
        let m = gaussian_matrix(1000, 1000, 1.0, RngState::from_seed(0)).unwrap();
        let (mean, var, kurt) = moments(m.as_slice());
        assert!(mean.abs() < 0.004, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
        assert!((kurt - 3.0).abs() < 0.05, "kurtosis {kurt}");
    }

    #[test]
    fn scaled_variance() {
        let m = gaussian_matrix(500, 500, 2.0 / 500.0, RngState::from_seed(1)).unwrap();
        let (_, var, _) = moments(m.as_slice());
        assert!((var / 0.004 - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn blocks_are_nested() {
        let rng = RngState::new(3, 1);
        let big = gaussian_matrix(30, 40, 1.0, rng).unwrap();
        let small = gaussian_matrix(10, 25, 4.0, rng).unwrap();
        let mut expect = big.block(10, 25).unwrap();
        expect.scale_in_place(2.0);
        assert_eq!(small, expect);
    }

    #[test]
    fn rejects_bad_arguments() {
        let rng = RngState::from_seed(0);
        assert!(gaussian_matrix(0, 3, 1.0, rng).is_err());
        assert!(gaussian_matrix(3, 3, 0.0, rng).is_err());
        assert!(gaussian_matrix(3, 3, -1.0, rng).is_err());
        assert!(orthonormal_basis(3, 4, rng).is_err());
        assert!(orthonormal_basis(3, 0, rng).is_err());
    }

    fn max_offset_from_identity(b: &Matrix) -> f64 {
        let g = b.gram();
        let k = g.rows();
        (0..k)
            .flat_map(|i| (0..k).map(move |j| (i, j)))
            .map(|(i, j)| (g.get(i, j) - if i == j { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn square_basis_is_orthogonal() {
        let b = orthonormal_basis(60, 60, RngState::from_seed(5)).unwrap();
        assert!(max_offset_from_identity(&b) <= 1e-12);
    }

    #[test]
    fn thin_basis_inner_products() {
        let b = orthonormal_basis(500, 10, RngState::from_seed(6)).unwrap();
        let cols: Vec<Vec<f64>> = (0..10).map(|j| (0..500).map(|i| b.get(i, j)).collect()).collect();
        let mut pairs = 0;
        for i in 0..10 {
            for j in i..10 {
                let ip = dot(&cols[i], &cols[j]);
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((ip - target).abs() <= 1e-12, "<b{i}, b{j}> = {ip}");
                pairs += 1;
            }
        }
        assert_eq!(pairs, 55);
    }

    #[test]
    fn basis_is_an_isometry() {
        let b = orthonormal_basis(500, 10, RngState::from_seed(6)).unwrap();
        let z = Vector::gaussian(10, 1.0, RngState::from_seed(9)).unwrap();
        let bz = b.matvec(z.as_slice()).unwrap();
        assert!((norm(&bz) / z.norm() - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn basic_norms() {
        assert_eq!(Vector::zeros(4).norm(), 0.0);
        assert_eq!(Vector::new(vec![3.0, 4.0]).unwrap().norm(), 5.0);
        assert!((Matrix::identity(7).frobenius_norm() - 7f64.sqrt()).abs() < 1e-15);
        assert_eq!(Matrix::zeros(2, 3).frobenius_norm(), 0.0);
    }

    #[test]
    fn products_agree_with_naive_loops() {
        let a = gaussian_matrix(7, 5, 1.0, RngState::from_seed(1)).unwrap();
        let b = gaussian_matrix(5, 3, 1.0, RngState::from_seed(2)).unwrap();
        let c = a.matmul(&b).unwrap();
        for i in 0..7 {
            for j in 0..3 {
                let naive: f64 = (0..5).map(|k| a.get(i, k) * b.get(k, j)).sum();
                assert!((c.get(i, j) - naive).abs() < 1e-12);
            }
        }
        let ct = a.matmul_t(&b.transpose()).unwrap();
        assert!(c
            .as_slice()
            .iter()
            .zip(ct.as_slice())
            .all(|(x, y)| (x - y).abs() < 1e-12));
        let x = [1.0, -2.0, 0.5];
        let y = c.matvec(&x).unwrap();
        let yt = c.transpose().tr_matvec(&x).unwrap();
        assert!(y.iter().zip(&yt).all(|(p, q)| (p - q).abs() < 1e-12));
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn vector_validation() {
        assert!(Vector::new(vec![]).is_err());
        assert!(Vector::new(vec![f64::NAN]).is_err());
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
    }
}
