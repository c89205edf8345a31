//! Minimal dense complex linear algebra and FFT support.
//!
//! Everything here targets the tiny problem sizes of the operational
//! calculus (matrices up to 16x16, transforms up to a few thousand
//! points) and favours determinism over speed: pivoting, shifts and
//! reductions are all deterministic, so repeated runs are bit-stable.

use num_complex::Complex64;

use crate::error::{Error, Result};

const NEAR_SINGULAR_REL: f64 = 1e-13;

/// Dense row-major complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(rows, cols, data.len(), 1));
        }
        if data.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFiniteEntry);
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_real(a: &nalgebra::DMatrix<f64>) -> Self {
        let mut m = Self::zeros(a.nrows(), a.ncols());
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                m[(i, j)] = Complex64::new(a[(i, j)], 0.0);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(
                self.rows, self.cols, other.rows, other.cols,
            ));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let aik = self[(i, k)];
                if aik == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += aik * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        if self.cols != x.len() {
            return Err(Error::DimensionMismatch(self.rows, self.cols, x.len(), 1));
        }
        let mut out = vec![Complex64::new(0.0, 0.0); self.rows];
        for i in 0..self.rows {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..self.cols {
                acc += self[(i, j)] * x[j];
            }
            out[i] = acc;
        }
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Maximum absolute column sum.
    pub fn norm_one(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }
}

impl std::ops::Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.cols + j]
    }
}

struct Lu {
    lu: ComplexMatrix,
    perm: Vec<usize>,
}

fn lu_factor(a: &ComplexMatrix) -> Result<Lu> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch(a.rows, a.cols, a.cols, a.rows));
    }
    let n = a.rows;
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    for k in 0..n {
        let mut p = k;
        let mut best = lu[(k, k)].norm();
        for i in k + 1..n {
            let v = lu[(i, k)].norm();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best <= NEAR_SINGULAR_REL * scale {
            return Err(Error::Singular { pivot: best });
        }
        if p != k {
            perm.swap(k, p);
            for j in 0..n {
                let tmp = lu[(k, j)];
                lu[(k, j)] = lu[(p, j)];
                lu[(p, j)] = tmp;
            }
        }
        let piv = lu[(k, k)];
        for i in k + 1..n {
            let f = lu[(i, k)] / piv;
            lu[(i, k)] = f;
            for j in k + 1..n {
                let delta = f * lu[(k, j)];
                lu[(i, j)] -= delta;
            }
        }
    }
    Ok(Lu { lu, perm })
}

impl Lu {
    fn solve_vec(&self, rhs: &[Complex64]) -> Vec<Complex64> {
        let n = self.lu.rows;
        let mut y: Vec<Complex64> = self.perm.iter().map(|&p| rhs[p]).collect();
        for i in 1..n {
            for j in 0..i {
                let delta = self.lu[(i, j)] * y[j];
                y[i] -= delta;
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                let delta = self.lu[(i, j)] * y[j];
                y[i] -= delta;
            }
            y[i] /= self.lu[(i, i)];
        }
        y
    }
}

/// Solve `a * x = rhs` for a square complex matrix via LU with partial pivoting.
pub fn solve(a: &ComplexMatrix, rhs: &ComplexMatrix) -> Result<ComplexMatrix> {
    if a.rows != rhs.rows {
        return Err(Error::DimensionMismatch(a.rows, a.cols, rhs.rows, rhs.cols));
    }
    let lu = lu_factor(a)?;
    let mut out = ComplexMatrix::zeros(rhs.rows, rhs.cols);
    let mut col = vec![Complex64::new(0.0, 0.0); rhs.rows];
    for j in 0..rhs.cols {
        for i in 0..rhs.rows {
            col[i] = rhs[(i, j)];
        }
        let x = lu.solve_vec(&col);
        for i in 0..rhs.rows {
            out[(i, j)] = x[i];
        }
    }
    Ok(out)
}

/// Solve for a single right-hand side vector.
pub fn solve_vec(a: &ComplexMatrix, rhs: &[Complex64]) -> Result<Vec<Complex64>> {
    if a.rows != rhs.len() {
        return Err(Error::DimensionMismatch(a.rows, a.cols, rhs.len(), 1));
    }
    let lu = lu_factor(a)?;
    Ok(lu.solve_vec(rhs))
}

/// Right eigenpairs of a small dense complex matrix.
///
/// Eigenvalues are sorted by real part, then imaginary part, and each
/// eigenvector is normalized with its largest entry rotated to the
/// positive real axis, so the decomposition is reproducible.
#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    pub values: Vec<Complex64>,
    pub vectors: ComplexMatrix,
    pub cond_estimate: f64,
}

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

fn givens(f: Complex64, g: Complex64) -> (f64, Complex64, Complex64) {
    if g == ZERO {
        return (1.0, ZERO, f);
    }
    if f == ZERO {
        return (0.0, Complex64::new(1.0, 0.0), g);
    }
    let norm = (f.norm_sqr() + g.norm_sqr()).sqrt();
    let fa = f.norm();
    let c = fa / norm;
    let phase = f / fa;
    let s = phase * g.conj() / norm;
    (c, s, phase * norm)
}

/// Rotate rows `i`, `i+1` of `m` from the left over columns `j0..j1`.
fn left_rotate(m: &mut ComplexMatrix, i: usize, c: f64, s: Complex64, j0: usize, j1: usize) {
    for j in j0..j1 {
        let a = m[(i, j)];
        let b = m[(i + 1, j)];
        m[(i, j)] = c * a + s * b;
        m[(i + 1, j)] = -s.conj() * a + c * b;
    }
}

/// Multiply columns `i`, `i+1` of `m` by the adjoint rotation over rows `r0..r1`.
fn right_rotate(m: &mut ComplexMatrix, i: usize, c: f64, s: Complex64, r0: usize, r1: usize) {
    for r in r0..r1 {
        let a = m[(r, i)];
        let b = m[(r, i + 1)];
        m[(r, i)] = c * a + s.conj() * b;
        m[(r, i + 1)] = -s * a + c * b;
    }
}

fn hessenberg(h: &mut ComplexMatrix, u: &mut ComplexMatrix) {
    let n = h.rows;
    for j in 0..n.saturating_sub(2) {
        let mut norm_sq = 0.0;
        for i in j + 1..n {
            norm_sq += h[(i, j)].norm_sqr();
        }
        let norm = norm_sq.sqrt();
        if norm == 0.0 {
            continue;
        }
        let x0 = h[(j + 1, j)];
        let phase = if x0 == ZERO {
            Complex64::new(1.0, 0.0)
        } else {
            x0 / x0.norm()
        };
        let alpha = -phase * norm;
        // Householder vector v = x - alpha e1, normalized.
        let mut v = vec![ZERO; n - j - 1];
        for (idx, i) in (j + 1..n).enumerate() {
            v[idx] = h[(i, j)];
        }
        v[0] -= alpha;
        let vnorm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if vnorm == 0.0 {
            continue;
        }
        for z in v.iter_mut() {
            *z /= vnorm;
        }
        // H <- P H, rows j+1..n
        for col in j..n {
            let mut dot = ZERO;
            for (idx, i) in (j + 1..n).enumerate() {
                dot += v[idx].conj() * h[(i, col)];
            }
            for (idx, i) in (j + 1..n).enumerate() {
                let delta = 2.0 * v[idx] * dot;
                h[(i, col)] -= delta;
            }
        }
        // H <- H P, cols j+1..n
        for row in 0..n {
            let mut dot = ZERO;
            for (idx, i) in (j + 1..n).enumerate() {
                dot += h[(row, i)] * v[idx];
            }
            for (idx, i) in (j + 1..n).enumerate() {
                let delta = 2.0 * dot * v[idx].conj();
                h[(row, i)] -= delta;
            }
        }
        // U <- U P
        for row in 0..n {
            let mut dot = ZERO;
            for (idx, i) in (j + 1..n).enumerate() {
                dot += u[(row, i)] * v[idx];
            }
            for (idx, i) in (j + 1..n).enumerate() {
                let delta = 2.0 * dot * v[idx].conj();
                u[(row, i)] -= delta;
            }
        }
    }
}

fn wilkinson_shift(h: &ComplexMatrix, hi: usize) -> Complex64 {
    let a = h[(hi - 1, hi - 1)];
    let b = h[(hi - 1, hi)];
    let c = h[(hi, hi - 1)];
    let d = h[(hi, hi)];
    let tr = a + d;
    let disc = ((a - d) * (a - d) + 4.0 * b * c).sqrt();
    let l1 = (tr + disc) / 2.0;
    let l2 = (tr - disc) / 2.0;
    if (l1 - d).norm() <= (l2 - d).norm() {
        l1
    } else {
        l2
    }
}

/// Schur form via explicit single-shift QR on the Hessenberg form.
/// Returns (T upper triangular, U unitary) with `a = U T U*`.
fn schur(a: &ComplexMatrix) -> Result<(ComplexMatrix, ComplexMatrix)> {
    let n = a.rows;
    let mut h = a.clone();
    let mut u = ComplexMatrix::identity(n);
    hessenberg(&mut h, &mut u);

    let scale = h.frobenius().max(f64::MIN_POSITIVE);
    let negligible = |h: &ComplexMatrix, i: usize| -> bool {
        let local = h[(i, i)].norm() + h[(i + 1, i + 1)].norm();
        h[(i + 1, i)].norm() <= f64::EPSILON * local.max(1e-3 * scale)
    };

    let cap = 100 * n * n;
    let mut total = 0usize;
    let mut hi = n.saturating_sub(1);
    let mut stalled = 0usize;
    while hi > 0 {
        // Deflate converged trailing entries.
        if negligible(&h, hi - 1) {
            h[(hi, hi - 1)] = ZERO;
            hi -= 1;
            stalled = 0;
            continue;
        }
        // Active window [lo..=hi].
        let mut lo = hi - 1;
        while lo > 0 && !negligible(&h, lo - 1) {
            lo -= 1;
        }
        if lo > 0 {
            h[(lo, lo - 1)] = ZERO;
        }
        total += 1;
        stalled += 1;
        if total > cap {
            return Err(Error::EigNonConvergence(cap));
        }
        let mu = if stalled % 12 == 0 {
            h[(hi, hi)] + Complex64::new(0.75 * h[(hi, hi - 1)].norm(), 0.0)
        } else {
            wilkinson_shift(&h, hi)
        };
        for i in lo..=hi {
            h[(i, i)] -= mu;
        }
        let mut rots = Vec::with_capacity(hi - lo);
        for i in lo..hi {
            let (c, s, r) = givens(h[(i, i)], h[(i + 1, i)]);
            h[(i, i)] = r;
            h[(i + 1, i)] = ZERO;
            left_rotate(&mut h, i, c, s, i + 1, n);
            rots.push((c, s));
        }
        for (idx, &(c, s)) in rots.iter().enumerate() {
            let i = lo + idx;
            right_rotate(&mut h, i, c, s, 0, (i + 2).min(hi + 1));
            right_rotate(&mut u, i, c, s, 0, n);
        }
        for i in lo..=hi {
            h[(i, i)] += mu;
        }
    }
    Ok((h, u))
}

/// Eigenvectors of an upper triangular matrix by back substitution.
fn triangular_vectors(t: &ComplexMatrix) -> ComplexMatrix {
    let n = t.rows;
    let tnorm = t.max_abs().max(f64::MIN_POSITIVE);
    let mut y = ComplexMatrix::zeros(n, n);
    for k in 0..n {
        let lam = t[(k, k)];
        y[(k, k)] = Complex64::new(1.0, 0.0);
        for j in (0..k).rev() {
            let mut acc = ZERO;
            for l in j + 1..=k {
                acc += t[(j, l)] * y[(l, k)];
            }
            let mut den = t[(j, j)] - lam;
            if den.norm() < f64::EPSILON * tnorm {
                den = Complex64::new(f64::EPSILON * tnorm, 0.0);
            }
            y[(j, k)] = -acc / den;
        }
    }
    y
}

/// Eigendecomposition of a small dense complex matrix (n <= 16).
pub fn eig(a: &ComplexMatrix) -> Result<EigenDecomposition> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch(a.rows, a.cols, a.cols, a.rows));
    }
    let n = a.rows;
    if n == 0 {
        return Err(Error::DimensionMismatch(0, 0, 1, 1));
    }
    let (t, u) = schur(a)?;
    let y = triangular_vectors(&t);
    let v_raw = u.mul(&y)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (t[(i, i)], t[(j, j)]);
        a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im))
    });

    let mut values = Vec::with_capacity(n);
    let mut vectors = ComplexMatrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        values.push(t[(k, k)]);
        let mut norm_sq = 0.0;
        let mut big = ZERO;
        for i in 0..n {
            let z = v_raw[(i, k)];
            norm_sq += z.norm_sqr();
            if z.norm() > big.norm() {
                big = z;
            }
        }
        let norm = norm_sq.sqrt().max(f64::MIN_POSITIVE);
        let phase = if big == ZERO {
            Complex64::new(1.0, 0.0)
        } else {
            big.conj() / big.norm()
        };
        for i in 0..n {
            vectors[(i, col)] = v_raw[(i, k)] * phase / norm;
        }
    }

    let cond_estimate = match lu_factor(&vectors) {
        Ok(lu) => {
            let mut inv_norm: f64 = 0.0;
            let mut e = vec![ZERO; n];
            for j in 0..n {
                e[j] = Complex64::new(1.0, 0.0);
                let col = lu.solve_vec(&e);
                e[j] = ZERO;
                inv_norm = inv_norm.max(col.iter().map(|z| z.norm()).sum());
            }
            (vectors.norm_one() * inv_norm).max(1.0)
        }
        Err(_) => {
            return Err(Error::Defective {
                cond: f64::INFINITY,
            })
        }
    };

    Ok(EigenDecomposition {
        values,
        vectors,
        cond_estimate,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FftDirection {
    Forward,
    Inverse,
}

/// Radix-2 FFT. Forward uses the kernel `exp(-2 pi i jk / n)`; the inverse
/// includes the `1/n` scaling.
pub fn fft(x: &[Complex64], direction: FftDirection) -> Result<Vec<Complex64>> {
    let n = x.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::FftLength(n));
    }
    let mut data = x.to_vec();
    // Bit-reversal permutation.
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = (i.reverse_bits() >> (usize::BITS - bits)) & (n - 1);
        if j > i {
            data.swap(i, j);
        }
    }
    let sign = match direction {
        FftDirection::Forward => -1.0,
        FftDirection::Inverse => 1.0,
    };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = sign * 2.0 * std::f64::consts::PI / len as f64;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let w = Complex64::from_polar(1.0, step * k as f64);
                let a = data[start + k];
                let b = data[start + k + half] * w;
                data[start + k] = a + b;
                data[start + k + half] = a - b;
            }
        }
        len *= 2;
    }
    if direction == FftDirection::Inverse {
        let scale = 1.0 / n as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_matrix(n: usize, rng: &mut ChaCha8Rng) -> ComplexMatrix {
        let data = (0..n * n)
            .map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        ComplexMatrix::new(n, n, data).unwrap()
    }

    #[test]
    fn solve_identity_returns_rhs() {
        let a = ComplexMatrix::identity(3);
        let rhs = ComplexMatrix::new(3, 1, vec![c(1.0, 2.0), c(-0.5, 0.0), c(0.0, 3.0)]).unwrap();
        let x = solve(&a, &rhs).unwrap();
        assert_eq!(x, rhs);
    }

    #[test]
    fn solve_permutation() {
        let a = ComplexMatrix::new(2, 2, vec![c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)])
            .unwrap();
        let x = solve_vec(&a, &[c(1.0, 0.0), c(2.0, 0.0)]).unwrap();
        assert!((x[0] - c(2.0, 0.0)).norm() < 1e-15);
        assert!((x[1] - c(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn solve_known_solution_small_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let mut a = random_matrix(5, &mut rng);
            for i in 0..5 {
                a[(i, i)] += c(3.0, 0.0); // keep it well conditioned
            }
            let x_true: Vec<Complex64> = (0..5)
                .map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect();
            let rhs = a.mul_vec(&x_true).unwrap();
            let x = solve_vec(&a, &rhs).unwrap();
            let err: f64 = x
                .iter()
                .zip(&x_true)
                .map(|(u, v)| (u - v).norm())
                .fold(0.0, f64::max);
            assert!(err < 1e-12, "solve error {err}");
        }
    }

    #[test]
    fn solve_singular_errors() {
        let a = ComplexMatrix::new(2, 2, vec![c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0), c(4.0, 0.0)])
            .unwrap();
        match solve_vec(&a, &[c(1.0, 0.0), c(1.0, 0.0)]) {
            Err(Error::Singular { .. }) => {}
            other => panic!("expected singularity error, got {other:?}"),
        }
    }

    #[test]
    fn eig_diagonal() {
        let mut a = ComplexMatrix::zeros(2, 2);
        a[(0, 0)] = c(1.0, 0.0);
        a[(1, 1)] = c(0.0, 2.0);
        let e = eig(&a).unwrap();
        assert!((e.values[0] - c(0.0, 2.0)).norm() < 1e-14);
        assert!((e.values[1] - c(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn eig_rotation_generator() {
        let a = ComplexMatrix::new(
            2,
            2,
            vec![c(0.0, 0.0), c(1.0, 0.0), c(-1.0, 0.0), c(0.0, 0.0)],
        )
        .unwrap();
        let e = eig(&a).unwrap();
        assert!((e.values[0] - c(0.0, -1.0)).norm() < 1e-14);
        assert!((e.values[1] - c(0.0, 1.0)).norm() < 1e-14);
    }

    #[test]
    fn eig_residuals_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let a = random_matrix(5, &mut rng);
            let e = eig(&a).unwrap();
            let norm = a.max_abs();
            for k in 0..5 {
                let mut v = vec![ZERO; 5];
                for i in 0..5 {
                    v[i] = e.vectors[(i, k)];
                }
                let av = a.mul_vec(&v).unwrap();
                let res: f64 = av
                    .iter()
                    .zip(&v)
                    .map(|(x, y)| (x - e.values[k] * y).norm())
                    .fold(0.0, f64::max);
                assert!(res < 1e-10 * norm.max(1.0), "residual {res}");
            }
        }
    }

    #[test]
    fn eig_reconstruction_separated_spectra() {
        // V diag(lambda) V^-1 must reproduce the matrix.
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for _ in 0..10 {
            let a = random_matrix(5, &mut rng);
            let e = eig(&a).unwrap();
            let mut sep = f64::INFINITY;
            for i in 0..5 {
                for j in 0..i {
                    sep = sep.min((e.values[i] - e.values[j]).norm());
                }
            }
            if sep < 1e-3 {
                continue;
            }
            let mut d = ComplexMatrix::zeros(5, 5);
            for i in 0..5 {
                d[(i, i)] = e.values[i];
            }
            let vd = e.vectors.mul(&d).unwrap();
            // a V = V D  <=>  a = V D V^-1; compare a*V with V*D instead (no inverse).
            let av = a.mul(&e.vectors).unwrap();
            let mut err: f64 = 0.0;
            for i in 0..5 {
                for j in 0..5 {
                    err = err.max((av[(i, j)] - vd[(i, j)]).norm());
                }
            }
            assert!(err < 1e-9 * a.max_abs(), "reconstruction error {err}");
        }
    }

    #[test]
    fn eig_jordan_block_is_defective() {
        let a = ComplexMatrix::new(2, 2, vec![ZERO, c(1.0, 0.0), ZERO, ZERO]).unwrap();
        match eig(&a) {
            Err(Error::Defective { .. }) => {}
            Ok(e) => assert!(
                e.cond_estimate > 1e12,
                "Jordan block should be flagged, cond = {}",
                e.cond_estimate
            ),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fft_delta_and_constant() {
        let x = vec![c(1.0, 0.0), ZERO, ZERO, ZERO];
        let y = fft(&x, FftDirection::Forward).unwrap();
        for v in &y {
            assert!((v - c(1.0, 0.0)).norm() < 1e-15);
        }
        let x = vec![c(1.0, 0.0); 4];
        let y = fft(&x, FftDirection::Forward).unwrap();
        assert!((y[0] - c(4.0, 0.0)).norm() < 1e-15);
        for v in &y[1..] {
            assert!(v.norm() < 1e-14);
        }
    }

    #[test]
    fn fft_matches_direct_dft_small_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &n in &[2usize, 4, 8, 16] {
            let x: Vec<Complex64> = (0..n)
                .map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect();
            let y = fft(&x, FftDirection::Forward).unwrap();
            for k in 0..n {
                let mut acc = ZERO;
                for (j, xj) in x.iter().enumerate() {
                    let ang = -2.0 * std::f64::consts::PI * (j * k) as f64 / n as f64;
                    acc += xj * Complex64::from_polar(1.0, ang);
                }
                assert!((y[k] - acc).norm() < 1e-13, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn fft_rejects_non_power_of_two() {
        let x = vec![ZERO; 6];
        assert!(matches!(
            fft(&x, FftDirection::Forward),
            Err(Error::FftLength(6))
        ));
    }

    proptest! {
        #[test]
        fn fft_round_trip(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<Complex64> = (0..256)
                .map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect();
            let y = fft(&x, FftDirection::Forward).unwrap();
            let z = fft(&y, FftDirection::Inverse).unwrap();
            let scale = x.iter().map(|v| v.norm()).fold(0.0, f64::max);
            let err = x
                .iter()
                .zip(&z)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            prop_assert!(err < 1e-13 * scale.max(1.0));
        }

        #[test]
        fn solve_matmul_round_trip(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 4 + (seed as usize % 3);
            let mut a = random_matrix(n, &mut rng);
            for i in 0..n {
                a[(i, i)] += c(2.5, 0.0);
            }
            let x: Vec<Complex64> = (0..n)
                .map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect();
            let rhs = a.mul_vec(&x).unwrap();
            let sol = solve_vec(&a, &rhs).unwrap();
            let scale = x.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1.0);
            let err = sol
                .iter()
                .zip(&x)
                .map(|(u, v)| (u - v).norm())
                .fold(0.0, f64::max);
            prop_assert!(err < 1e-11 * scale);
        }
    }
}
