//! Dense linear-algebra primitives with fixed ordering and sign conventions.
//!
//! The singular value decomposition is a one-sided (Hestenes) Jacobi sweep,
//! preceded by a Householder QR when the input is far from square, so that
//! the result is deterministic for a given input and accurate to working
//! precision. Singular values come back strictly descending for a simple
//! spectrum, and each left singular vector is signed so that its entry of
//! largest magnitude is positive.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default relative cutoff for [`pinv`].
pub const PINV_RTOL: f64 = 1e-12;

const MAX_SWEEPS: usize = 80;

/// `A = U diag(S) Vᵀ` with `r = min(m, n)` columns in `U` and `V`.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    /// m×r, orthonormal columns.
    pub left: Matrix,
    /// Length r, non-increasing, nonnegative.
    pub values: Vector,
    /// n×r, orthonormal columns.
    pub right: Matrix,
}

impl SpectralDecomposition {
    pub fn rank_bound(&self) -> usize {
        self.values.len()
    }

    pub fn reconstruct(&self) -> Matrix {
        let mut scaled = self.left.clone();
        for (j, s) in self.values.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*s);
        }
        scaled * self.right.transpose()
    }

    /// Numerical rank: singular values above `rtol · σ_max`.
    pub fn rank(&self, rtol: f64) -> usize {
        let top = self.values.iter().cloned().fold(0.0, f64::max);
        if top == 0.0 {
            return 0;
        }
        self.values.iter().filter(|s| **s > rtol * top).count()
    }

    /// Columns `0..k` of the decomposition.
    pub fn truncated(&self, k: usize) -> SpectralDecomposition {
        let k = k.min(self.values.len());
        SpectralDecomposition {
            left: self.left.columns(0, k).into_owned(),
            values: self.values.rows(0, k).into_owned(),
            right: self.right.columns(0, k).into_owned(),
        }
    }
}

pub fn ensure_finite(a: &Matrix) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

pub fn svd(a: &Matrix) -> Result<SpectralDecomposition> {
    ensure_finite(a)?;
    let (m, n) = a.shape();
    if m < n {
        let t = svd(&a.transpose())?;
        // Aᵀ = U' S V'ᵀ, so A = V' S U'ᵀ; re-canonicalize for the sign rule
        // on the new left factor.
        return Ok(canonicalize(t.right, t.values.iter().cloned().collect(), t.left));
    }
    if n == 0 {
        return Ok(SpectralDecomposition {
            left: Matrix::zeros(m, 0),
            values: Vector::zeros(0),
            right: Matrix::zeros(0, 0),
        });
    }

    // Tall input: reduce to the n×n triangular factor first.
    let (q, core) = if m > n {
        let qr = a.clone().qr();
        (Some(qr.q()), qr.r())
    } else {
        (None, a.clone())
    };
    let (u_core, values, v) = one_sided_jacobi(&core);
    let u = match q {
        Some(q) => q * u_core,
        None => u_core,
    };
    Ok(canonicalize(u, values, v))
}

/// Hestenes one-sided Jacobi on a square matrix. Returns (U, σ, V) unsorted.
fn one_sided_jacobi(a: &Matrix) -> (Matrix, Vec<f64>, Matrix) {
    let (rows, cols) = a.shape();
    let mut b: Vec<f64> = a.as_slice().to_vec();
    let mut v: Vec<f64> = Matrix::identity(cols, cols).as_slice().to_vec();
    let tol = f64::EPSILON * (rows.max(1) as f64);

    let mut norms: Vec<f64> = (0..cols).map(|j| sq_norm(&b[j * rows..(j + 1) * rows])).collect();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..cols {
            for j in (i + 1)..cols {
                let (alpha, beta) = (norms[i], norms[j]);
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let gamma = {
                    let (ci, cj) = column_pair(&mut b, rows, i, j);
                    dot(ci, cj)
                };
                if gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                {
                    let (ci, cj) = column_pair(&mut b, rows, i, j);
                    rotate(ci, cj, c, s);
                }
                {
                    let (vi, vj) = column_pair(&mut v, cols, i, j);
                    rotate(vi, vj, c, s);
                }
                norms[i] = alpha - t * gamma;
                norms[j] = beta + t * gamma;
            }
        }
        // Incremental norm updates drift; refresh once per sweep.
        for (j, nrm) in norms.iter_mut().enumerate() {
            *nrm = sq_norm(&b[j * rows..(j + 1) * rows]);
        }
        if !rotated {
            break;
        }
    }

    let values: Vec<f64> = norms.iter().map(|x| x.sqrt()).collect();
    let mut u = Matrix::from_column_slice(rows, cols, &b);
    for (j, s) in values.iter().enumerate() {
        if *s > 0.0 {
            u.column_mut(j).unscale_mut(*s);
        }
    }
    (u, values, Matrix::from_column_slice(cols, cols, &v))
}

fn column_pair(data: &mut [f64], rows: usize, i: usize, j: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(i < j);
    let (head, tail) = data.split_at_mut(j * rows);
    (&mut head[i * rows..(i + 1) * rows], &mut tail[..rows])
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn sq_norm(x: &[f64]) -> f64 {
    dot(x, x)
}

fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let (p, q) = (*a, *b);
        *a = c * p - s * q;
        *b = s * p + c * q;
    }
}

/// Sort descending, complete left columns belonging to exact zeros, and
/// apply the sign rule.
fn canonicalize(u: Matrix, values: Vec<f64>, v: Matrix) -> SpectralDecomposition {
    let r = values.len();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));

    let mut left = Matrix::zeros(u.nrows(), r);
    let mut right = Matrix::zeros(v.nrows(), r);
    let mut sorted = Vector::zeros(r);
    for (dst, &src) in order.iter().enumerate() {
        left.set_column(dst, &u.column(src));
        right.set_column(dst, &v.column(src));
        sorted[dst] = values[src];
    }

    let zero_from = sorted.iter().position(|s| *s == 0.0).unwrap_or(r);
    if zero_from < r {
        complete_orthonormal(&mut left, zero_from);
    }

    for j in 0..r {
        let col = left.column(j);
        let mut pivot = 0;
        for i in 1..col.len() {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        if !col.is_empty() && col[pivot] < 0.0 {
            left.column_mut(j).neg_mut();
            right.column_mut(j).neg_mut();
        }
    }
    SpectralDecomposition { left, values: sorted, right }
}

/// Overwrite columns `from..` with an orthonormal completion of columns `..from`.
pub(crate) fn complete_orthonormal(q: &mut Matrix, from: usize) {
    let (m, cols) = q.shape();
    let mut next_basis = 0;
    for j in from..cols {
        loop {
            assert!(next_basis < m, "cannot complete beyond dimension");
            let mut cand = Vector::zeros(m);
            cand[next_basis] = 1.0;
            next_basis += 1;
            for _pass in 0..2 {
                for p in 0..j {
                    let proj = q.column(p).dot(&cand);
                    cand.axpy(-proj, &q.column(p), 1.0);
                }
            }
            let nrm = cand.norm();
            if nrm > 1e-8 {
                q.set_column(j, &(cand / nrm));
                break;
            }
        }
    }
}

/// Moore–Penrose pseudoinverse; singular values at or below `rtol · σ_max`
/// are treated as zero.
pub fn pinv(a: &Matrix, rtol: f64) -> Result<Matrix> {
    if !(rtol > 0.0) {
        return Err(invalid("pinv tolerance must be positive"));
    }
    let d = svd(a)?;
    let top = d.values.iter().cloned().fold(0.0, f64::max);
    let mut out = Matrix::zeros(a.ncols(), a.nrows());
    if top == 0.0 {
        return Ok(out);
    }
    for (j, s) in d.values.iter().enumerate() {
        if *s > rtol * top {
            out += d.right.column(j) * d.left.column(j).transpose() / *s;
        }
    }
    Ok(out)
}

fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn haar_with<R: rand::Rng + ?Sized>(m: usize, rng: &mut R) -> Matrix {
    let g = Matrix::from_fn(m, m, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..m {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// A Haar-distributed orthogonal matrix: QR of a standard-normal matrix with
/// the QR sign ambiguity removed via the diagonal of R.
pub fn haar_orthogonal(m: usize, seed: u64) -> Result<Matrix> {
    if m == 0 {
        return Err(invalid("haar_orthogonal needs dimension >= 1"));
    }
    Ok(haar_with(m, &mut seeded_rng(seed)))
}

pub fn is_symmetric(a: &Matrix, rtol: f64) -> bool {
    if !a.is_square() {
        return false;
    }
    let scale = a.amax().max(1.0);
    (a - a.transpose()).amax() <= rtol * scale
}

/// Eigenpairs of a symmetric matrix, eigenvalues descending.
pub fn symmetric_eigen(a: &Matrix) -> (Vector, Matrix) {
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]).then(x.cmp(&y)));
    let values = Vector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

fn spectral_function(values: &Vector, vectors: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    let mut scaled = vectors.clone();
    for (j, v) in values.iter().enumerate() {
        scaled.column_mut(j).scale_mut(f(*v));
    }
    let out = scaled * vectors.transpose();
    (&out + out.transpose()) * 0.5
}

fn positive_definite_eigen(a: &Matrix) -> Result<(Vector, Matrix)> {
    ensure_finite(a)?;
    if !is_symmetric(a, 1e-10) {
        return Err(invalid("matrix is not symmetric"));
    }
    let (values, vectors) = symmetric_eigen(a);
    let top = values.iter().cloned().fold(0.0, f64::max);
    let bottom = values.iter().cloned().fold(f64::INFINITY, f64::min);
    if values.is_empty() || !(bottom > 1e-12 * top) {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: if values.is_empty() { 0.0 } else { bottom },
        });
    }
    Ok((values, vectors))
}

/// `A^{-1/2}` for symmetric positive-definite `A`.
pub fn sym_inv_sqrt(a: &Matrix) -> Result<Matrix> {
    let (values, vectors) = positive_definite_eigen(a)?;
    Ok(spectral_function(&values, &vectors, |x| 1.0 / x.sqrt()))
}

/// `A^{1/2}` for symmetric positive-definite `A`.
pub fn sym_sqrt(a: &Matrix) -> Result<Matrix> {
    let (values, vectors) = positive_definite_eigen(a)?;
    Ok(spectral_function(&values, &vectors, f64::sqrt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_matrix(m: usize, n: usize, seed: u64) -> Matrix {
        let mut rng = seeded_rng(seed);
        Matrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))
    }

    fn orthonormal_columns(q: &Matrix) -> f64 {
        (q.transpose() * q - Matrix::identity(q.ncols(), q.ncols())).amax()
    }

    fn check_invariants(a: &Matrix, d: &SpectralDecomposition) {
        let scale = a.norm().max(f64::MIN_POSITIVE);
        assert!((a - d.reconstruct()).norm() <= 1e-10 * scale);
        assert!(orthonormal_columns(&d.left) < 1e-10);
        assert!(orthonormal_columns(&d.right) < 1e-10);
        for w in d.values.as_slice().windows(2) {
            assert!(w[0] >= w[1]);
        }
        for j in 0..d.left.ncols() {
            let col = d.left.column(j);
            let mut pivot = 0;
            for i in 1..col.len() {
                if col[i].abs() > col[pivot].abs() {
                    pivot = i;
                }
            }
            assert!(col[pivot] > 0.0);
        }
    }

    #[test]
    fn identity_decomposes_to_itself() {
        let a = Matrix::identity(2, 2);
        let d = svd(&a).unwrap();
        assert_eq!(d.values.as_slice(), &[1.0, 1.0]);
        assert!((d.left.clone() - Matrix::identity(2, 2)).amax() < 1e-15);
        assert!((d.right.clone() - Matrix::identity(2, 2)).amax() < 1e-15);
    }

    #[test]
    fn diagonal_is_permuted_descending() {
        let a = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 3.0]));
        let d = svd(&a).unwrap();
        assert!((d.values[0] - 3.0).abs() < 1e-15 && (d.values[1] - 1.0).abs() < 1e-15);
        let expected = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!((d.left.clone() - &expected).amax() < 1e-15);
        assert!((d.right.clone() - &expected).amax() < 1e-15);
    }

    #[test]
    fn random_rectangular_reconstructs() {
        for (m, n, seed) in [(5, 4, 1), (4, 5, 2), (9, 3, 3), (3, 9, 4), (6, 6, 5)] {
            let a = random_matrix(m, n, seed);
            let d = svd(&a).unwrap();
            assert_eq!(d.values.len(), m.min(n));
            check_invariants(&a, &d);
        }
    }

    #[test]
    fn rank_deficient_gets_completed_basis() {
        let mut a = random_matrix(5, 2, 9) * random_matrix(2, 4, 10);
        a.column_mut(3).fill(0.0);
        let d = svd(&a).unwrap();
        check_invariants(&a, &d);
        assert_eq!(d.rank(1e-12), 2);
        let z = Matrix::zeros(3, 4);
        let dz = svd(&z).unwrap();
        check_invariants(&z, &dz);
        assert!(dz.values.iter().all(|s| *s == 0.0));
    }

    #[test]
    fn non_finite_is_rejected() {
        let mut a = Matrix::identity(2, 2);
        a[(0, 1)] = f64::NAN;
        assert!(matches!(svd(&a), Err(Error::NonFinite)));
    }

    #[test]
    fn pinv_cases() {
        let g = Matrix::from_element(1, 1, 4.0);
        assert!((pinv(&g, PINV_RTOL).unwrap()[(0, 0)] - 0.25).abs() < 1e-15);

        let o = haar_orthogonal(4, 7).unwrap().columns(0, 2).into_owned();
        assert!((pinv(&o, PINV_RTOL).unwrap() - o.transpose()).amax() < 1e-12);

        let a = random_matrix(3, 2, 11);
        let p = pinv(&a, PINV_RTOL).unwrap();
        let scale = a.norm();
        assert!((&a * &p * &a - &a).norm() < 1e-8 * scale);
        assert!((&p * &a * &p - &p).norm() < 1e-8 * p.norm());
        let ap = &a * &p;
        let pa = &p * &a;
        assert!((&ap - ap.transpose()).norm() < 1e-8);
        assert!((&pa - pa.transpose()).norm() < 1e-8);

        assert_eq!(pinv(&Matrix::zeros(2, 3), PINV_RTOL).unwrap(), Matrix::zeros(3, 2));
    }

    #[test]
    fn haar_cases() {
        let one = haar_orthogonal(1, 3).unwrap();
        assert_eq!(one[(0, 0)].abs(), 1.0);
        let q = haar_orthogonal(4, 42).unwrap();
        assert!(orthonormal_columns(&q) < 1e-12);
        assert_ne!(q, haar_orthogonal(4, 43).unwrap());
        assert_eq!(q, haar_orthogonal(4, 42).unwrap());
        assert!(haar_orthogonal(0, 1).is_err());
    }

    #[test]
    fn haar_first_column_is_centered() {
        // Under Haar measure every entry has mean 0 and variance 1/m.
        let m = 3;
        let trials = 10_000;
        let mut sums = vec![0.0; m];
        for seed in 0..trials {
            let q = haar_orthogonal(m, seed as u64).unwrap();
            for i in 0..m {
                sums[i] += q[(i, 0)];
            }
        }
        let stderr = (1.0 / m as f64 / trials as f64).sqrt();
        for s in sums {
            assert!((s / trials as f64).abs() < 5.0 * stderr);
        }
    }

    #[test]
    fn inverse_square_root_cases() {
        let i3 = Matrix::identity(3, 3);
        assert!((sym_inv_sqrt(&i3).unwrap() - &i3).amax() < 1e-15);

        let d = Matrix::from_diagonal(&Vector::from_vec(vec![4.0, 9.0]));
        let r = sym_inv_sqrt(&d).unwrap();
        assert!((r[(0, 0)] - 0.5).abs() < 1e-15 && (r[(1, 1)] - 1.0 / 3.0).abs() < 1e-15);
        assert!(r[(0, 1)].abs() < 1e-15);

        let m = random_matrix(4, 4, 5);
        let a = &m * m.transpose() + Matrix::identity(4, 4);
        let r = sym_inv_sqrt(&a).unwrap();
        assert!((&r * &a * &r - Matrix::identity(4, 4)).amax() < 1e-8);
        assert!(is_symmetric(&r, 1e-14));
        let s = sym_sqrt(&a).unwrap();
        assert!((&s * &s - &a).amax() < 1e-10 * a.amax());

        let singular = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 0.0]));
        assert!(matches!(sym_inv_sqrt(&singular), Err(Error::NotPositiveDefinite { .. })));
        let indefinite = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, -2.0]));
        assert!(sym_inv_sqrt(&indefinite).is_err());
    }

    #[test]
    fn large_wide_matrix_goes_through_qr() {
        let a = random_matrix(30, 200, 77);
        let d = svd(&a).unwrap();
        check_invariants(&a, &d);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn resynthesis_returns_the_spectrum(seed in 0u64..1000, m in 2usize..7, extra in 0usize..4) {
            let n = m + extra;
            let mut rng = seeded_rng(seed);
            let u = haar_with(m, &mut rng);
            let v = haar_with(n, &mut rng);
            let mut s: Vec<f64> = (0..m).map(|i| (m - i) as f64 + rng.random_range(0.0..0.5)).collect();
            s.sort_by(|a, b| b.total_cmp(a));
            let mut sig = Matrix::zeros(m, n);
            for i in 0..m { sig[(i, i)] = s[i]; }
            let a = &u * sig * v.transpose();
            let d = svd(&a).unwrap();
            check_invariants(&a, &d);
            for i in 0..m {
                prop_assert!((d.values[i] - s[i]).abs() <= 1e-10 * s[0]);
            }
        }

        #[test]
        fn pinv_is_an_involution_on_full_rank(seed in 0u64..1000, m in 1usize..6, n in 1usize..6) {
            let a = random_matrix(m, n, seed);
            let back = pinv(&pinv(&a, PINV_RTOL).unwrap(), PINV_RTOL).unwrap();
            prop_assert!((back - &a).amax() < 1e-8 * a.amax().max(1.0));
        }
    }
}
