//! Dense row-major matrices and the small set of kernels the networks need.
//!
//! Design constraints, in order:
//!
//! 1. **Bit-reproducibility.** Every kernel fixes its floating-point
//!    accumulation order in source (explicit accumulator lanes, explicit
//!    `mul_add`), so results are identical across builds, optimization
//!    levels, and target CPUs. Cache blocking only reorders *independent*
//!    element computations, never the summation order within one output
//!    element.
//! 2. **Cache friendliness.** The three GEMM variants used by training
//!    (`A·B`, `A·Bᵀ`, `Aᵀ·B`-accumulate) are blocked so the streamed operand
//!    is reused from L1/L2 instead of being re-read from memory for every
//!    output row.
//! 3. **No unsafe.** Inner loops use slices and `chunks_exact` so bounds
//!    checks vanish without `unsafe`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{real, Real};
use crate::rng::SeededRng;

/// Row-major block size for the GEMM kernels. Eight rows of a 6k-wide f64
/// matrix is ~400 KiB, which stays resident in L2 on any modern core.
const BLOCK: usize = 8;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

/// Dot product with a source-fixed accumulation order.
///
/// Eight independent accumulator lanes over `chunks_exact(8)`, combined with
/// a fixed reduction tree, then an in-order tail. The lane structure lets the
/// compiler vectorize with FMA without ever reassociating the sum.
#[inline]
fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let ta = ca.remainder();
    let tb = cb.remainder();
    for (x, y) in ca.zip(cb) {
        acc[0] = x[0].mul_add(y[0], acc[0]);
        acc[1] = x[1].mul_add(y[1], acc[1]);
        acc[2] = x[2].mul_add(y[2], acc[2]);
        acc[3] = x[3].mul_add(y[3], acc[3]);
        acc[4] = x[4].mul_add(y[4], acc[4]);
        acc[5] = x[5].mul_add(y[5], acc[5]);
        acc[6] = x[6].mul_add(y[6], acc[6]);
        acc[7] = x[7].mul_add(y[7], acc[7]);
    }
    let mut tail = F::zero();
    for (x, y) in ta.iter().zip(tb) {
        tail = x.mul_add(*y, tail);
    }
    let head = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    head + tail
}

/// `out[i] += s * b[i]` over a whole row.
#[inline]
fn axpy<F: Real>(out: &mut [F], s: F, b: &[F]) {
    debug_assert_eq!(out.len(), b.len());
    for (o, &x) in out.iter_mut().zip(b) {
        *o = s.mul_add(x, *o);
    }
}

impl<F: Real> Matrix<F> {
    /// Zero-filled `rows x cols` matrix. Either dimension may be zero.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    /// Matrix filled with a constant.
    pub fn filled(rows: usize, cols: usize, value: F) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Build from a row-major data vector; errors if the length is wrong.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidParameter {
                what: "Matrix::from_vec",
                details: format!(
                    "data length {} does not match {rows}x{cols}",
                    data.len()
                ),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Build from explicit rows of `f64` literals (test/fixture convenience).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::InvalidParameter {
                    what: "Matrix::from_rows",
                    details: format!("ragged rows: expected {c} columns, found {}", row.len()),
                });
            }
            data.extend(row.iter().map(|&x| real::<F>(x)));
        }
        Ok(Matrix { rows: r, cols: c, data })
    }

    /// `n x n` identity.
    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = F::one();
        }
        m
    }

    /// Uniform random fill over `[lo, hi)`, drawn row-major in index order.
    pub fn uniform(rows: usize, cols: usize, lo: F, hi: F, rng: &mut SeededRng) -> Self {
        let mut m = Self::zeros(rows, cols);
        for v in &mut m.data {
            *v = rng.uniform(lo, hi);
        }
        m
    }

    /// Kaiming-uniform initialization for a `rows x cols` weight acting as
    /// `y = x · Wᵀ` (fan-in = `cols`): entries are uniform on `[-b, b]` with
    /// `b = gain · sqrt(3) / sqrt(fan_in)`, drawn row-major in index order.
    pub fn kaiming_uniform(
        rows: usize,
        cols: usize,
        gain: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if cols == 0 {
            return Err(Error::InvalidParameter {
                what: "kaiming_uniform",
                details: "fan-in (cols) must be positive".into(),
            });
        }
        if !(gain.is_finite() && gain > 0.0) {
            return Err(Error::InvalidParameter {
                what: "kaiming_uniform",
                details: format!("gain must be finite and positive, got {gain}"),
            });
        }
        let bound = gain * 3.0_f64.sqrt() / (cols as f64).sqrt();
        Ok(Self::uniform(rows, cols, real(-bound), real(bound), rng))
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[F] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: F) {
        self.data[r * self.cols + c] = v;
    }

    /// Reset every entry to zero without reallocating.
    pub fn zero_fill(&mut self) {
        self.data.fill(F::zero());
    }

    /// Fill every entry with a constant.
    pub fn fill(&mut self, v: F) {
        self.data.fill(v);
    }

    fn check_shapes(
        op: &'static str,
        ok: bool,
        left: &Self,
        right: &Self,
    ) -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                op,
                left_rows: left.rows,
                left_cols: left.cols,
                right_rows: right.rows,
                right_cols: right.cols,
            })
        }
    }

    /// `self · rhs`.
    ///
    /// Blocked over the inner dimension; each output element accumulates its
    /// products strictly in inner-index order.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        Self::check_shapes("matmul", self.cols == rhs.rows, self, rhs)?;
        let mut out = Self::zeros(self.rows, rhs.cols);
        out.add_matmul_nn(self, rhs)?;
        Ok(out)
    }

    /// `self += a · b` (accumulating GEMM).
    pub fn add_matmul_nn(&mut self, a: &Self, b: &Self) -> Result<()> {
        Self::check_shapes("add_matmul_nn", a.cols == b.rows, a, b)?;
        Self::check_shapes(
            "add_matmul_nn (output)",
            self.rows == a.rows && self.cols == b.cols,
            self,
            b,
        )?;
        let k = a.cols;
        // kb blocks ascend and the in-block loop ascends, so each output
        // element sees inner indices in 0..k order: reproducible.
        for kb in (0..k).step_by(BLOCK) {
            let kend = (kb + BLOCK).min(k);
            for r in 0..a.rows {
                let arow = a.row(r);
                let orow = self.row_mut(r);
                for kk in kb..kend {
                    axpy(orow, arow[kk], b.row(kk));
                }
            }
        }
        Ok(())
    }

    /// `self · rhsᵀ` — the workhorse of every forward pass
    /// (`y = x · Wᵀ` with row-major weights keeps both dots contiguous).
    pub fn matmul_nt(&self, rhs: &Self) -> Result<Self> {
        Self::check_shapes("matmul_nt", self.cols == rhs.cols, self, rhs)?;
        let mut out = Self::zeros(self.rows, rhs.rows);
        // 8x8 output tiles: one tile re-reads 8 rows of each operand, giving
        // ~8x reuse of whichever operand does not fit in cache.
        for rb in (0..self.rows).step_by(BLOCK) {
            let rend = (rb + BLOCK).min(self.rows);
            for cb in (0..rhs.rows).step_by(BLOCK) {
                let cend = (cb + BLOCK).min(rhs.rows);
                for r in rb..rend {
                    let arow = self.row(r);
                    let orow = out.row_mut(r);
                    for c in cb..cend {
                        orow[c] = dot(arow, rhs.row(c));
                    }
                }
            }
        }
        Ok(out)
    }

    /// `self += aᵀ · b` — the weight-gradient kernel
    /// (`dW += dyᵀ · x` with `dy: batch x out`, `x: batch x in`).
    pub fn add_matmul_tn(&mut self, a: &Self, b: &Self) -> Result<()> {
        Self::check_shapes("add_matmul_tn", a.rows == b.rows, a, b)?;
        Self::check_shapes(
            "add_matmul_tn (output)",
            self.rows == a.cols && self.cols == b.cols,
            self,
            b,
        )?;
        // Batch rows are the summation index; blocks ascend and rows within a
        // block ascend, so every output element accumulates in batch order.
        for bb in (0..a.rows).step_by(BLOCK) {
            let bend = (bb + BLOCK).min(a.rows);
            for i in 0..a.cols {
                let orow = self.row_mut(i);
                for r in bb..bend {
                    axpy(orow, a.get(r, i), b.row(r));
                }
            }
        }
        Ok(())
    }

    /// Elementwise sum.
    pub fn add(&self, rhs: &Self) -> Result<Self> {
        Self::check_shapes("add", self.shape() == rhs.shape(), self, rhs)?;
        let mut out = self.clone();
        for (o, &x) in out.data.iter_mut().zip(&rhs.data) {
            *o += x;
        }
        Ok(out)
    }

    /// Elementwise difference.
    pub fn sub(&self, rhs: &Self) -> Result<Self> {
        Self::check_shapes("sub", self.shape() == rhs.shape(), self, rhs)?;
        let mut out = self.clone();
        for (o, &x) in out.data.iter_mut().zip(&rhs.data) {
            *o -= x;
        }
        Ok(out)
    }

    /// Elementwise product (Hadamard).
    pub fn hadamard(&self, rhs: &Self) -> Result<Self> {
        Self::check_shapes("hadamard", self.shape() == rhs.shape(), self, rhs)?;
        let mut out = self.clone();
        for (o, &x) in out.data.iter_mut().zip(&rhs.data) {
            *o *= x;
        }
        Ok(out)
    }

    /// `self += rhs` in place.
    pub fn add_assign(&mut self, rhs: &Self) -> Result<()> {
        Self::check_shapes("add_assign", self.shape() == rhs.shape(), self, rhs)?;
        for (o, &x) in self.data.iter_mut().zip(&rhs.data) {
            *o += x;
        }
        Ok(())
    }

    /// `self[i] += a[i] * b[i]` in place (fused).
    pub fn add_assign_hadamard(&mut self, a: &Self, b: &Self) -> Result<()> {
        Self::check_shapes("add_assign_hadamard", a.shape() == b.shape(), a, b)?;
        Self::check_shapes(
            "add_assign_hadamard (output)",
            self.shape() == a.shape(),
            self,
            a,
        )?;
        for ((o, &x), &y) in self.data.iter_mut().zip(&a.data).zip(&b.data) {
            *o = x.mul_add(y, *o);
        }
        Ok(())
    }

    /// Scale every entry in place.
    pub fn scale(&mut self, s: F) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// New matrix with `f` applied to every entry.
    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Apply `f` to every entry in place.
    pub fn map_inplace(&mut self, f: impl Fn(F) -> F) {
        for v in &mut self.data {
            *v = f(*v);
        }
    }

    /// Transposed copy.
    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Sum of all entries, in row-major order.
    pub fn sum(&self) -> F {
        let mut s = F::zero();
        for &v in &self.data {
            s += v;
        }
        s
    }

    /// Largest absolute entry (zero for an empty matrix).
    pub fn max_abs(&self) -> F {
        let mut m = F::zero();
        for &v in &self.data {
            let a = v.abs();
            if a > m {
                m = a;
            }
        }
        m
    }

    /// True if every entry is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `out[j] += sum over rows of self[r][j]` (column sums).
    pub fn add_column_sums_to(&self, out: &mut [F]) -> Result<()> {
        if out.len() != self.cols {
            return Err(Error::InvalidParameter {
                what: "add_column_sums_to",
                details: format!("output length {} != cols {}", out.len(), self.cols),
            });
        }
        for r in 0..self.rows {
            for (o, &v) in out.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        Ok(())
    }

    /// `out[j] += sum over rows of self[r][j] * rhs[r][j]`.
    pub fn add_column_sums_product_to(&self, rhs: &Self, out: &mut [F]) -> Result<()> {
        Self::check_shapes(
            "add_column_sums_product_to",
            self.shape() == rhs.shape(),
            self,
            rhs,
        )?;
        if out.len() != self.cols {
            return Err(Error::InvalidParameter {
                what: "add_column_sums_product_to",
                details: format!("output length {} != cols {}", out.len(), self.cols),
            });
        }
        for r in 0..self.rows {
            for ((o, &a), &b) in out.iter_mut().zip(self.row(r)).zip(rhs.row(r)) {
                *o = a.mul_add(b, *o);
            }
        }
        Ok(())
    }

    /// Index of the largest entry in each row; ties resolve to the lowest
    /// index so predictions are deterministic.
    pub fn row_argmax(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|r| {
                let row = self.row(r);
                let mut best = 0usize;
                for (j, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: textbook triple loop, plain multiply-add.
    fn matmul_naive(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
        assert_eq!(a.cols(), b.rows());
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
        let mut rng = SeededRng::new(seed);
        Matrix::uniform(rows, cols, -1.0, 1.0, &mut rng)
    }

    fn assert_close(a: &Matrix<f64>, b: &Matrix<f64>, tol: f64) {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= tol, "{x} vs {y} beyond {tol}");
        }
    }

    #[test]
    fn matmul_matches_naive_oracle() {
        // Sizes straddle the blocking factor and the dot-lane width.
        for &(m, k, n, seed) in &[
            (1, 1, 1, 1u64),
            (2, 3, 4, 2),
            (7, 13, 5, 3),
            (8, 8, 8, 4),
            (9, 17, 11, 5),
            (16, 64, 10, 6),
            (5, 100, 3, 7),
        ] {
            let a = random(m, k, seed);
            let b = random(k, n, seed + 100);
            assert_close(&a.matmul(&b).unwrap(), &matmul_naive(&a, &b), 1e-12);
        }
    }

    #[test]
    fn matmul_nt_matches_naive_oracle() {
        for &(m, k, n, seed) in &[(3, 5, 4, 11u64), (8, 33, 9, 12), (17, 70, 13, 13)] {
            let a = random(m, k, seed);
            let b = random(n, k, seed + 1);
            let expect = matmul_naive(&a, &b.transpose());
            assert_close(&a.matmul_nt(&b).unwrap(), &expect, 1e-12);
        }
    }

    #[test]
    fn add_matmul_tn_matches_naive_oracle() {
        for &(b_rows, m, n, seed) in &[(4, 6, 5, 21u64), (19, 12, 7, 22), (64, 33, 10, 23)] {
            let a = random(b_rows, m, seed);
            let b = random(b_rows, n, seed + 1);
            let mut out = random(m, n, seed + 2);
            let expect = out.add(&matmul_naive(&a.transpose(), &b)).unwrap();
            out.add_matmul_tn(&a, &b).unwrap();
            assert_close(&out, &expect, 1e-12);
        }
    }

    #[test]
    fn identity_is_exact() {
        let a = random(6, 6, 31);
        let i = Matrix::identity(6);
        // Multiplying by I involves only exact products and sums, so the
        // result must be bitwise equal.
        assert_eq!(a.matmul(&i).unwrap(), a);
        assert_eq!(i.matmul(&a).unwrap(), a);
    }

    #[test]
    fn zero_matrix_yields_zeros() {
        let a = random(4, 5, 32);
        let z = Matrix::zeros(5, 3);
        let out = a.matmul(&z).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_matmul_does_not_panic() {
        let a = Matrix::<f64>::zeros(0, 4);
        let b = Matrix::<f64>::zeros(4, 3);
        let out = a.matmul(&b).unwrap();
        assert_eq!(out.shape(), (0, 3));
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let a = Matrix::<f64>::zeros(2, 3);
        let b = Matrix::<f64>::zeros(4, 5);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul"), "{msg}");
        assert!(msg.contains("2x3"), "{msg}");
        assert!(msg.contains("4x5"), "{msg}");
    }

    #[test]
    fn matmul_is_deterministic_bitwise() {
        let a = random(13, 37, 41);
        let b = random(37, 11, 42);
        let c1 = a.matmul(&b).unwrap();
        let c2 = a.matmul(&b).unwrap();
        assert_eq!(c1, c2);
    }

    #[test]
    fn transpose_is_involutive() {
        let a = random(5, 9, 51);
        assert_eq!(a.transpose().transpose(), a);
    }

    #[test]
    fn kaiming_bound_is_respected_over_a_million_draws() {
        let mut rng = SeededRng::new(99);
        let gain = 1.0 / 3.0_f64.sqrt();
        let m = Matrix::<f64>::kaiming_uniform(1000, 1000, gain, &mut rng).unwrap();
        let bound = gain * 3.0_f64.sqrt() / 1000.0_f64.sqrt();
        assert!(m.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn kaiming_sample_mean_is_near_zero() {
        let mut rng = SeededRng::new(7);
        let gain = 1.0 / 3.0_f64.sqrt();
        let (rows, cols) = (64, 784);
        let m = Matrix::<f64>::kaiming_uniform(rows, cols, gain, &mut rng).unwrap();
        let n = (rows * cols) as f64;
        let mean = m.sum() / n;
        // Uniform on [-b, b] has std b/sqrt(3); the sample mean of n draws
        // has std b/sqrt(3 n). Three sigma with a fixed seed is not flaky.
        let bound = gain * 3.0_f64.sqrt() / (cols as f64).sqrt();
        let three_sigma = 3.0 * bound / (3.0 * n).sqrt();
        assert!(
            mean.abs() <= three_sigma,
            "sample mean {mean} beyond 3-sigma bound {three_sigma}"
        );
    }

    #[test]
    fn kaiming_rejects_zero_fan_in() {
        let mut rng = SeededRng::new(0);
        assert!(Matrix::<f64>::kaiming_uniform(4, 0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn serde_round_trip_is_bit_exact() {
        let a = random(3, 4, 61);
        let json = serde_json::to_string(&a).unwrap();
        let back: Matrix<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(a, back);
    }

    #[test]
    fn row_argmax_breaks_ties_low() {
        let m = Matrix::<f64>::from_rows(&[
            vec![1.0, 3.0, 3.0, 2.0],
            vec![5.0, 5.0, 5.0, 5.0],
            vec![-1.0, -2.0, -0.5, -0.5],
        ])
        .unwrap();
        assert_eq!(m.row_argmax(), vec![1, 0, 2]);
    }

    #[test]
    fn column_sum_helpers_match_manual_loops() {
        let a = random(6, 4, 71);
        let b = random(6, 4, 72);
        let mut sums = vec![0.0f64; 4];
        a.add_column_sums_to(&mut sums).unwrap();
        let mut prods = vec![0.0f64; 4];
        a.add_column_sums_product_to(&b, &mut prods).unwrap();
        for j in 0..4 {
            let mut s = 0.0;
            let mut p = 0.0;
            for r in 0..6 {
                s += a.get(r, j);
                p += a.get(r, j) * b.get(r, j);
            }
            assert!((sums[j] - s).abs() < 1e-12);
            assert!((prods[j] - p).abs() < 1e-12);
        }
    }

    #[test]
    fn elementwise_ops_and_hadamard() {
        let a = random(3, 3, 81);
        let b = random(3, 3, 82);
        let sum = a.add(&b).unwrap();
        let diff = sum.sub(&b).unwrap();
        assert_close(&diff, &a, 1e-15);
        let had = a.hadamard(&b).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(had.get(i, j), a.get(i, j) * b.get(i, j));
            }
        }
    }
}
