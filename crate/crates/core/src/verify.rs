//! Numerical oracles: finite-difference gradients, Hessian sign counts,
//! alignment of the trained product with the data's principal directions,
//! eigenvalue shrinkage, and the unit-circle check on the learned latent map.

use serde::Serialize;

use crate::data::DataMatrix;
use crate::error::{invalid, shape, Error, Result};
use crate::model::{grad, loss, LaeParams, LossKind, LossSpec};
use crate::spectra::{self, Matrix};

pub fn default_fd_step(p: &LaeParams) -> f64 {
    1e-5 * p.w1.amax().max(p.w2.amax()).max(1.0)
}

/// Central-difference gradient of the loss.
pub fn fd_grad(spec: &LossSpec, p: &LaeParams, data: &DataMatrix, h: f64) -> Result<(Matrix, Matrix)> {
    if !(h > 0.0) {
        return Err(invalid("finite-difference step must be positive"));
    }
    let mut probe = p.to_vec();
    let (m, k) = (p.m(), p.k());
    let mut flat = vec![0.0; probe.len()];
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = loss(spec, &LaeParams::from_slice(m, k, &probe), data)?;
        probe[i] = orig - h;
        let down = loss(spec, &LaeParams::from_slice(m, k, &probe), data)?;
        probe[i] = orig;
        flat[i] = (up - down) / (2.0 * h);
    }
    let out = LaeParams::from_slice(m, k, &flat);
    Ok((out.w1, out.w2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheck {
    pub max_abs_diff: f64,
    pub analytic_max: f64,
    pub tolerance: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_abs_diff <= self.tolerance
    }
}

/// Compare [`grad`] with [`fd_grad`]: passes when the largest entrywise gap is
/// within `max(1e-5 · ‖analytic‖_∞, 1e-7)`.
pub fn grad_check(spec: &LossSpec, p: &LaeParams, data: &DataMatrix) -> Result<GradCheck> {
    let (a1, a2) = grad(spec, p, data)?;
    let (f1, f2) = fd_grad(spec, p, data, default_fd_step(p))?;
    let max_abs_diff = (&a1 - f1).amax().max((&a2 - f2).amax());
    let analytic_max = a1.amax().max(a2.amax());
    Ok(GradCheck { max_abs_diff, analytic_max, tolerance: (1e-5 * analytic_max).max(1e-7) })
}

/// Eigenvalue counts `(negative, zero, positive)`, with `|μ| < zero_band · ‖H‖₂`
/// counted as zero.
pub fn hessian_signature(h: &Matrix, zero_band: f64) -> Result<(usize, usize, usize)> {
    if !h.is_square() {
        return Err(shape("Hessian must be square"));
    }
    if !spectra::is_symmetric(h, 1e-8) {
        return Err(invalid("Hessian is not symmetric"));
    }
    let (eig, _) = spectra::symmetric_eigen(h);
    let norm = eig.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let band = zero_band * norm;
    let neg = eig.iter().filter(|x| **x <= -band && **x < 0.0).count();
    let pos = eig.iter().filter(|x| **x >= band && **x > 0.0).count();
    Ok((neg, eig.len() - neg - pos, pos))
}

/// Cosine threshold for calling two unit vectors aligned up to sign.
pub const ALIGNMENT_THRESHOLD: f64 = 0.98;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quadrant {
    /// Largest `|entry|` off the leading diagonal of the retained block.
    pub offdiag_max_abs: f64,
    /// Smallest `|entry|` on the leading diagonal of the retained block.
    pub diag_min_abs: f64,
    /// Every retained column's largest `|entry|` exceeds the threshold and sits on the diagonal.
    pub aligned: bool,
}

/// The matrix `[U V*]ᵀ[U U*]` (size `(m+k)×(m+k)`) for `W* = U*Σ*V*ᵀ`
/// truncated to `k` columns, with per-quadrant diagnostics over the
/// numerically nonzero part of `Σ*`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentReport {
    pub block: Matrix,
    pub rank: usize,
    /// `UᵀU*`.
    pub u_ustar: Quadrant,
    /// `V*ᵀU`, read column-wise against `V*`.
    pub vstar_u: Quadrant,
    /// `V*ᵀU*`.
    pub vstar_ustar: Quadrant,
}

fn quadrant(q: &Matrix, rank: usize) -> Quadrant {
    // q is m×r (or r×r), columns indexed by retained components
    let mut offdiag: f64 = 0.0;
    let mut diag = f64::INFINITY;
    let mut aligned = rank > 0;
    for j in 0..rank {
        let col = q.column(j);
        let (argmax, best) = col.iter().enumerate().fold((0, -1.0), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
        aligned &= argmax == j && best > ALIGNMENT_THRESHOLD;
        for (i, v) in col.iter().enumerate() {
            if i == j {
                diag = diag.min(v.abs());
            } else {
                offdiag = offdiag.max(v.abs());
            }
        }
    }
    Quadrant { offdiag_max_abs: offdiag, diag_min_abs: if rank == 0 { 0.0 } else { diag }, aligned }
}

pub fn alignment_report(data: &DataMatrix, w_star: &Matrix, k: usize) -> Result<AlignmentReport> {
    let m = data.m();
    if w_star.shape() != (m, m) {
        return Err(shape("W* must be m×m"));
    }
    if k > m {
        return Err(invalid("k exceeds m"));
    }
    let u = padded_left(data);
    let ws = spectra::svd(w_star)?.truncated(k);
    let rank = ws.rank(1e-10);
    let mut rows = Matrix::zeros(m, m + k);
    rows.columns_mut(0, m).copy_from(&u);
    rows.columns_mut(m, k).copy_from(&ws.right);
    let mut cols = Matrix::zeros(m, m + k);
    cols.columns_mut(0, m).copy_from(&u);
    cols.columns_mut(m, k).copy_from(&ws.left);
    let block = rows.transpose() * cols;

    let u_ustar = block.view((0, m), (m, rank)).into_owned();
    let vstar_u = block.view((m, 0), (rank, m)).transpose();
    let vstar_ustar = block.view((m, m), (rank, rank)).into_owned();
    Ok(AlignmentReport {
        rank,
        u_ustar: quadrant(&u_ustar, rank),
        vstar_u: quadrant(&vstar_u, rank),
        vstar_ustar: quadrant(&vstar_ustar, rank),
        block,
    })
}

/// Full m×m left singular basis of the data (zero directions completed).
fn padded_left(data: &DataMatrix) -> Matrix {
    let left = &data.svd().left;
    if left.ncols() == data.m() {
        left.clone()
    } else {
        let mut full = Matrix::zeros(data.m(), data.m());
        full.columns_mut(0, left.ncols()).copy_from(left);
        spectra::complete_orthonormal(&mut full, left.ncols());
        full
    }
}

/// Predicted eigenvalue of `W*` along principal direction `index` (0-based)
/// at the global minimum with latent size `k`.
pub fn theory_tau2(kind: LossKind, sigma2: f64, lambda: f64, index: usize, k: usize) -> f64 {
    if index >= k || sigma2 <= 0.0 {
        return 0.0;
    }
    match kind {
        LossKind::Unregularized => 1.0,
        LossKind::Product => 1.0 / (1.0 + lambda / sigma2),
        LossKind::Sum => (1.0 - lambda / sigma2).max(0.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShrinkagePoint {
    pub index: usize,
    pub sigma2: f64,
    pub tau2: f64,
    pub theory: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShrinkageReport {
    pub points: Vec<ShrinkagePoint>,
    /// `‖W* − W*ᵀ‖_F / ‖W*‖_F` (0 for `W* = 0`).
    pub asymmetry: f64,
}

/// Eigenvalues of `(W* + W*ᵀ)/2` against the data spectrum and the predicted shrinkage.
pub fn shrinkage_points(data: &DataMatrix, w_star: &Matrix, k: usize, kind: LossKind, lambda: f64) -> Result<ShrinkageReport> {
    if w_star.shape() != (data.m(), data.m()) {
        return Err(shape("W* must be m×m"));
    }
    let norm = w_star.norm();
    let asymmetry = if norm == 0.0 { 0.0 } else { (w_star - w_star.transpose()).norm() / norm };
    let (tau2, _) = spectra::symmetric_eigen(w_star);
    let points = data
        .sigma_squared()
        .into_iter()
        .enumerate()
        .map(|(i, s2)| ShrinkagePoint { index: i, sigma2: s2, tau2: tau2[i], theory: theory_tau2(kind, s2, lambda, i, k) })
        .collect();
    Ok(ShrinkageReport { points, asymmetry })
}

/// `A = Σ*^{-1/2} U*ᵀ W2`, `B = W1 U* Σ*^{-1/2}` for the top-k SVD of `W* = W2W1`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitCircleReport {
    pub a: Matrix,
    pub b: Matrix,
    /// `‖AB − I‖_F`.
    pub ab_residual: f64,
    /// `‖AᵀA − I‖_F`.
    pub a_orthogonality: f64,
    /// `‖BBᵀ − I‖_F`.
    pub b_orthogonality: f64,
}

pub fn unit_circle_check(p: &LaeParams) -> Result<UnitCircleReport> {
    let k = p.k();
    let ws = spectra::svd(&p.product())?.truncated(k);
    let rank = ws.rank(1e-10);
    if rank < k {
        return Err(Error::RankDeficient { rank, k });
    }
    let inv_sqrt = Matrix::from_diagonal(&ws.values.map(|s| 1.0 / s.sqrt()));
    let a = &inv_sqrt * ws.left.transpose() * &p.w2;
    let b = &p.w1 * &ws.left * &inv_sqrt;
    let id = Matrix::identity(k, k);
    Ok(UnitCircleReport {
        ab_residual: (&a * &b - &id).norm(),
        a_orthogonality: (a.transpose() * &a - &id).norm(),
        b_orthogonality: (&b * b.transpose() - &id).norm(),
        a,
        b,
    })
}

/// Images of `points` samples of the unit circle under `A`, `B` and `AB` (k = 2 only).
pub fn circle_images(report: &UnitCircleReport, points: usize) -> Result<[Vec<(f64, f64)>; 3]> {
    if report.a.shape() != (2, 2) {
        return Err(invalid("circle images need k = 2"));
    }
    let ab = &report.a * &report.b;
    let map = |m: &Matrix| -> Vec<(f64, f64)> {
        (0..points)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / points as f64;
                let (c, s) = (t.cos(), t.sin());
                (m[(0, 0)] * c + m[(0, 1)] * s, m[(1, 0)] * c + m[(1, 1)] * s)
            })
            .collect()
    };
    Ok([map(&report.a), map(&report.b), map(&ab)])
}

/// Principal angles in degrees between the column spaces of `a` and `b`, ascending.
pub fn principal_angles(a: &Matrix, b: &Matrix) -> Result<Vec<f64>> {
    if a.nrows() != b.nrows() {
        return Err(shape("subspaces must live in the same ambient space"));
    }
    let qa = a.clone().qr().q();
    let qb = b.clone().qr().q();
    let s = spectra::svd(&(qa.transpose() * qb))?;
    Ok(s.values.iter().map(|c| c.clamp(-1.0, 1.0).acos().to_degrees()).collect())
}
