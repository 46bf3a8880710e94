//! Closed-form critical manifolds of the three losses, their curvature
//! signatures, and the map from sum-loss critical decoders to pPCA weights.
//!
//! A critical point is named by an index set `I` of principal directions and
//! a frame: a full-column-rank `G ∈ ℝ^{k×ℓ}` for the unregularized and
//! product losses, an orthonormal-column `O ∈ ℝ^{k×ℓ}` for the sum loss.
//! With `U_I`, `Σ_I` the selected singular vectors and values of `X`:
//!
//! | loss          | `W2`                              | `W1`                              |
//! |---------------|-----------------------------------|-----------------------------------|
//! | unregularized | `U_I G⁺`                          | `G U_Iᵀ`                          |
//! | product       | `U_I (I + λΣ_I⁻²)^{-1/2} G⁺`      | `G (I + λΣ_I⁻²)^{-1/2} U_Iᵀ`      |
//! | sum           | `U_I (I − λΣ_I⁻²)^{1/2} Oᵀ`       | `O (I − λΣ_I⁻²)^{1/2} U_Iᵀ`       |

use std::fmt;
use std::str::FromStr;

use crate::data::DataMatrix;
use crate::error::{invalid, shape, Error, Result};
use crate::grassmann::descending_pairs;
use crate::model::{grad, LaeParams, LossKind, LossSpec};
use crate::spectra::{self, haar_orthogonal, Matrix, PINV_RTOL};

/// Strictly increasing, 0-based principal-direction indices. Displayed and
/// parsed 1-based, e.g. `{1,3}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if indices.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid(format!("index set {indices:?} is not strictly increasing")));
        }
        Ok(IndexSet(indices))
    }

    pub(crate) fn from_sorted_unchecked(indices: Vec<usize>) -> Self {
        IndexSet(indices)
    }

    pub fn from_one_based(indices: &[usize]) -> Result<Self> {
        if indices.contains(&0) {
            return Err(invalid("one-based indices start at 1"));
        }
        Self::new(indices.iter().map(|i| i - 1).collect())
    }

    pub fn empty() -> Self {
        IndexSet(Vec::new())
    }

    /// `{0, …, len−1}`.
    pub fn leading(len: usize) -> Self {
        IndexSet((0..len).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.binary_search(&index).is_ok()
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.0.iter().map(|i| i + 1).collect()
    }

    pub fn largest(&self) -> Option<usize> {
        self.0.last().copied()
    }
}

impl fmt::Display for IndexSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.one_based().iter().map(|i| i.to_string()).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

impl FromStr for IndexSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let inner = s.trim().trim_start_matches('{').trim_end_matches('}');
        let parsed: std::result::Result<Vec<usize>, _> = inner
            .split([',', ' ', ';'])
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<usize>())
            .collect();
        let parsed = parsed.map_err(|e| invalid(format!("bad index set `{s}`: {e}")))?;
        IndexSet::from_one_based(&parsed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticalSpec {
    pub kind: LossKind,
    pub index_set: IndexSet,
    /// k×ℓ: full column rank `G`, or orthonormal columns `O` for the sum loss.
    pub frame: Matrix,
}

impl CriticalSpec {
    pub fn new(kind: LossKind, index_set: IndexSet, frame: Matrix, m: usize) -> Result<Self> {
        let (k, l) = frame.shape();
        if l != index_set.len() {
            return Err(shape(format!("frame has {l} columns but the index set has {}", index_set.len())));
        }
        if l > k {
            return Err(invalid(format!("index set size {l} exceeds k = {k}")));
        }
        if k > m {
            return Err(invalid(format!("k = {k} exceeds m = {m}")));
        }
        if let Some(top) = index_set.largest() {
            if top >= m {
                return Err(invalid(format!("index {} out of range 1..={m}", top + 1)));
            }
        }
        if l > 0 {
            match kind {
                LossKind::Sum => {
                    if (frame.transpose() * &frame - Matrix::identity(l, l)).amax() > 1e-10 {
                        return Err(invalid("sum-loss frame must have orthonormal columns"));
                    }
                }
                _ => {
                    let sv = spectra::svd(&frame)?.values;
                    if !(sv[l - 1] > 1e-10 * sv[0]) {
                        return Err(invalid("frame must have full column rank"));
                    }
                }
            }
        }
        Ok(CriticalSpec { kind, index_set, frame })
    }

    pub fn k(&self) -> usize {
        self.frame.nrows()
    }

    pub fn len(&self) -> usize {
        self.index_set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index_set.is_empty()
    }
}

/// The `k×ℓ` frame `[I_ℓ; 0]`.
pub fn identity_frame(k: usize, l: usize) -> Matrix {
    Matrix::identity(k, l)
}

/// First ℓ columns of a Haar orthogonal `k×k` matrix.
pub fn haar_frame(k: usize, l: usize, seed: u64) -> Result<Matrix> {
    if k == 0 {
        return Ok(Matrix::zeros(0, l));
    }
    Ok(haar_orthogonal(k, seed)?.columns(0, l).into_owned())
}

/// Largest `i` (1-based count) with `σ_i² > λ`; 0 if none.
pub fn m0(spectrum: &[f64], lambda: f64) -> usize {
    spectrum.iter().rposition(|s| s * s > lambda).map_or(0, |i| i + 1)
}

fn check_sum_lambda(s2: &[f64], index_set: &IndexSet, lambda: f64) -> Result<()> {
    for (i, v) in s2.iter().enumerate() {
        if *v > 0.0 && (v - lambda).abs() < 1e-9 * v {
            return Err(Error::DegenerateLambda { index: i + 1, sigma2: *v, lambda });
        }
    }
    for &i in index_set.as_slice() {
        if s2[i] <= lambda {
            return Err(Error::Collapsed { index: i + 1, sigma2: s2[i], lambda });
        }
    }
    Ok(())
}

/// Per-direction scale applied to `U_I` in the closed form.
fn shrink_factor(kind: LossKind, sigma2: f64, lambda: f64) -> f64 {
    match kind {
        LossKind::Unregularized => 1.0,
        LossKind::Product => (1.0 + lambda / sigma2).powf(-0.5),
        LossKind::Sum => (1.0 - lambda / sigma2).sqrt(),
    }
}

pub fn critical_point(spec: &CriticalSpec, data: &DataMatrix, lambda: f64) -> Result<LaeParams> {
    if spec.frame.nrows() > data.m() {
        return Err(invalid("k exceeds the data dimension"));
    }
    if !(lambda >= 0.0) {
        return Err(invalid("lambda must be nonnegative"));
    }
    let svd = data.svd();
    let s2 = data.sigma_squared();
    for &i in spec.index_set.as_slice() {
        if i >= svd.values.len() || svd.values[i] <= 0.0 {
            return Err(invalid(format!("principal direction {} has zero singular value", i + 1)));
        }
    }
    if spec.kind == LossKind::Sum {
        check_sum_lambda(&s2, &spec.index_set, lambda)?;
    }

    let (k, m) = (spec.k(), data.m());
    if spec.is_empty() {
        return Ok(LaeParams::zeros(m, k));
    }
    let mut scaled_u = svd.left.select_columns(spec.index_set.as_slice());
    for (col, &i) in spec.index_set.as_slice().iter().enumerate() {
        scaled_u.column_mut(col).scale_mut(shrink_factor(spec.kind, s2[i], lambda));
    }
    match spec.kind {
        LossKind::Sum => {
            let w2 = &scaled_u * spec.frame.transpose();
            Ok(LaeParams { w1: w2.transpose(), w2 })
        }
        _ => {
            let g_pinv = spectra::pinv(&spec.frame, PINV_RTOL)?;
            Ok(LaeParams { w1: &spec.frame * scaled_u.transpose(), w2: scaled_u * g_pinv })
        }
    }
}

/// Global minimum of `kind`: the top `min(k, m0)` directions, where `m0 = m`
/// except for the sum loss. The frame is `[I; 0]` without a seed and Haar
/// orthonormal with one.
pub fn global_minimum(
    kind: LossKind,
    data: &DataMatrix,
    k: usize,
    lambda: f64,
    frame_seed: Option<u64>,
) -> Result<CriticalSpec> {
    let m = data.m();
    if k > m {
        return Err(invalid(format!("k = {k} exceeds m = {m}")));
    }
    let values: Vec<f64> = data.svd().values.iter().cloned().collect();
    let available = match kind {
        LossKind::Sum => m0(&values, lambda),
        _ => values.iter().filter(|s| **s > 0.0).count(),
    };
    let l = k.min(available);
    let frame = match frame_seed {
        None => identity_frame(k, l),
        Some(seed) => haar_frame(k, l, seed)?,
    };
    CriticalSpec::new(kind, IndexSet::leading(l), frame, m)
}

/// Pass a critical decoder through `(XXᵀ)^{1/2}`.
pub fn ppca_from_decoder(w2: &Matrix, data: &DataMatrix) -> Result<Matrix> {
    if w2.nrows() != data.m() {
        return Err(shape("decoder rows must equal m"));
    }
    Ok(spectra::sym_sqrt(data.gram())? * w2)
}

/// pPCA stationary weights `U_I Σ_I (I − σ²Σ_I⁻²)^{1/2} Oᵀ` for noise variance `noise_var`.
pub fn ppca_weights(data: &DataMatrix, index_set: &IndexSet, frame: &Matrix, noise_var: f64) -> Result<Matrix> {
    if frame.ncols() != index_set.len() {
        return Err(shape("frame columns must match the index set"));
    }
    let svd = data.svd();
    let mut cols = svd.left.select_columns(index_set.as_slice());
    for (col, &i) in index_set.as_slice().iter().enumerate() {
        let s = svd.values[i];
        let s2 = s * s;
        if s2 <= noise_var {
            return Err(Error::Collapsed { index: i + 1, sigma2: s2, lambda: noise_var });
        }
        cols.column_mut(col).scale_mut(s * (1.0 - noise_var / s2).sqrt());
    }
    Ok(cols * frame.transpose())
}

/// Hessian eigenvalue sign counts at a point of a critical manifold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CurvatureSignature {
    pub descending: usize,
    pub flat: usize,
    pub ascending: usize,
}

impl CurvatureSignature {
    pub fn total(&self) -> usize {
        self.descending + self.flat + self.ascending
    }
}

/// Signature on the manifold indexed by `I`, assuming every principal
/// direction survives the regularization (`σ_m² > λ` for the sum loss).
pub fn curvature_signature(kind: LossKind, index_set: &IndexSet, m: usize, k: usize) -> Result<CurvatureSignature> {
    curvature_signature_with_cutoff(kind, index_set, m, k, m)
}

/// As [`curvature_signature`], but for the sum loss only the `m0` directions
/// with `σ² > λ` offer a descending scaling direction; the rest curve upward.
pub fn curvature_signature_with_cutoff(
    kind: LossKind,
    index_set: &IndexSet,
    m: usize,
    k: usize,
    m0: usize,
) -> Result<CurvatureSignature> {
    let l = index_set.len();
    if l > k || k > m || m0 > m {
        return Err(invalid(format!("need l <= k <= m and m0 <= m, got l={l}, k={k}, m={m}, m0={m0}")));
    }
    if index_set.largest().is_some_and(|i| i >= m) {
        return Err(invalid("index out of range"));
    }
    let reachable = match kind {
        LossKind::Sum => {
            if index_set.largest().is_some_and(|i| i >= m0) {
                return Err(invalid("sum-loss critical points only use directions with sigma^2 > lambda"));
            }
            m0
        }
        _ => m,
    };
    let descending = descending_pairs(index_set) + (k - l) * (reachable - l);
    let flat = match kind {
        LossKind::Sum => k * l - l * (l + 1) / 2,
        _ => k * l,
    };
    let total = 2 * k * m;
    Ok(CurvatureSignature { descending, flat, ascending: total - descending - flat })
}

pub fn default_hessian_step(p: &LaeParams) -> f64 {
    let scale = p.w1.amax().max(p.w2.amax()).max(1.0);
    1e-4 * scale
}

/// Central differences of the exact gradient in the flattened coordinates of
/// [`LaeParams::to_vec`], symmetrized.
pub fn numerical_hessian(spec: &LossSpec, p: &LaeParams, data: &DataMatrix, step: f64) -> Result<Matrix> {
    if !(step > 0.0) {
        return Err(invalid("finite-difference step must be positive"));
    }
    let (m, k) = (p.m(), p.k());
    let base = p.to_vec();
    let dim = base.len();
    let flat_grad = |x: &[f64]| -> Result<Vec<f64>> {
        let (g1, g2) = grad(spec, &LaeParams::from_slice(m, k, x), data)?;
        Ok(g1.iter().chain(g2.iter()).cloned().collect())
    };
    let mut h = Matrix::zeros(dim, dim);
    let mut probe = base.clone();
    for j in 0..dim {
        probe[j] = base[j] + step;
        let plus = flat_grad(&probe)?;
        probe[j] = base[j] - step;
        let minus = flat_grad(&probe)?;
        probe[j] = base[j];
        for i in 0..dim {
            h[(i, j)] = (plus[i] - minus[i]) / (2.0 * step);
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// `Q1 = G diag(d_I/s_I) I_Iᵀ`, `Q2 = I_I diag(d_I/s_I) G⁺`: a critical point of
/// `tr(Q2Q1 S² Q1ᵀQ2ᵀ − 2 Q2Q1 D²)` for diagonal `D`, invertible diagonal `S`.
pub fn prop1_critical(d: &[f64], s: &[f64], index_set: &IndexSet, g: &Matrix) -> Result<(Matrix, Matrix)> {
    let m = d.len();
    if s.len() != m {
        return Err(shape("D and S must have the same size"));
    }
    if s.iter().any(|x| *x == 0.0 || !x.is_finite()) {
        return Err(invalid("S must be invertible"));
    }
    let key: Vec<f64> = d.iter().zip(s).map(|(d, s)| d.powi(4) / (s * s)).collect();
    for (i, a) in key.iter().enumerate() {
        if *a == 0.0 || !a.is_finite() {
            return Err(invalid("diagonal of D²S⁻²D² must be nonzero"));
        }
        if key[..i].iter().any(|b| (a - b).abs() <= 1e-12 * a.abs().max(b.abs())) {
            return Err(invalid("diagonal of D²S⁻²D² must have distinct entries"));
        }
    }
    let (k, l) = g.shape();
    if l != index_set.len() || l > k {
        return Err(shape("frame must be k×ℓ with ℓ = |I| <= k"));
    }
    if index_set.largest().is_some_and(|i| i >= m) {
        return Err(invalid("index out of range"));
    }
    let mut q1 = Matrix::zeros(k, m);
    let mut q2 = Matrix::zeros(m, k);
    if l == 0 {
        return Ok((q1, q2));
    }
    let g_pinv = spectra::pinv(g, PINV_RTOL)?;
    for (col, &i) in index_set.as_slice().iter().enumerate() {
        let f = d[i] / s[i];
        q1.set_column(i, &(g.column(col) * f));
        q2.set_row(i, &(g_pinv.row(col) * f));
    }
    Ok((q1, q2))
}

/// `tr(Q2Q1 S² Q1ᵀQ2ᵀ − 2 Q2Q1 D²)`.
pub fn prop1_loss(d: &[f64], s: &[f64], q1: &Matrix, q2: &Matrix) -> f64 {
    let p = q2 * q1;
    let s2 = Matrix::from_diagonal(&nalgebra::DVector::from_iterator(s.len(), s.iter().map(|x| x * x)));
    let d2 = Matrix::from_diagonal(&nalgebra::DVector::from_iterator(d.len(), d.iter().map(|x| x * x)));
    (&p * s2 * p.transpose()).trace() - 2.0 * (p * d2).trace()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{descending_spectrum, synthetic};
    use crate::model::{grad_norm, loss};
    use crate::verify::hessian_signature;

    fn scalar(x: f64) -> DataMatrix {
        DataMatrix::new(Matrix::from_element(1, 1, x)).unwrap()
    }

    fn set(one_based: &[usize]) -> IndexSet {
        IndexSet::from_one_based(one_based).unwrap()
    }

    #[test]
    fn index_set_parsing() {
        assert_eq!("{1,3}".parse::<IndexSet>().unwrap(), set(&[1, 3]));
        assert_eq!("".parse::<IndexSet>().unwrap(), IndexSet::empty());
        assert_eq!(set(&[2, 4]).to_string(), "{2,4}");
        assert!("{3,1}".parse::<IndexSet>().is_err());
        assert!("{0}".parse::<IndexSet>().is_err());
    }

    #[test]
    fn scalar_sum_critical_point() {
        let d = scalar(2.0);
        let spec = CriticalSpec::new(LossKind::Sum, set(&[1]), Matrix::identity(1, 1), 1).unwrap();
        let p = critical_point(&spec, &d, 2.0).unwrap();
        let h = 0.5f64.sqrt();
        assert!((p.w1[(0, 0)].abs() - h).abs() < 1e-15);
        assert_eq!(p.w1[(0, 0)], p.w2[(0, 0)]);
    }

    #[test]
    fn empty_index_set_is_the_origin() {
        let d = synthetic(4, 5, &[4.0, 3.0, 2.0, 1.0], 0).unwrap();
        for kind in LossKind::ALL {
            let spec = CriticalSpec::new(kind, IndexSet::empty(), Matrix::zeros(2, 0), 4).unwrap();
            let p = critical_point(&spec, &d, 0.5).unwrap();
            assert_eq!(p, LaeParams::zeros(4, 2));
        }
    }

    #[test]
    fn unregularized_rank_one() {
        let d = synthetic(3, 3, &[3.0, 2.0, 1.0], 6).unwrap();
        let spec = CriticalSpec::new(LossKind::Unregularized, set(&[1]), Matrix::from_element(1, 1, 2.0), 3).unwrap();
        let p = critical_point(&spec, &d, 0.0).unwrap();
        let u1 = d.svd().left.column(0).into_owned();
        assert!((&p.w2 - &u1 * 0.5).amax() < 1e-15);
        assert!((&p.w1 - u1.transpose() * 2.0).amax() < 1e-15);
        assert!((p.product() - &u1 * u1.transpose()).amax() < 1e-14);
        let g = grad_norm(&LossSpec::unregularized(), &p, &d).unwrap();
        assert!(g <= 1e-8 * d.gram().norm());
    }

    #[test]
    fn sum_guards() {
        let d = synthetic(3, 3, &[3.0, 2.0, 1.0], 6).unwrap();
        let o = identity_frame(2, 2);
        let spec = CriticalSpec::new(LossKind::Sum, set(&[1, 3]), o.clone(), 3).unwrap();
        assert!(matches!(critical_point(&spec, &d, 2.0), Err(Error::Collapsed { index: 3, .. })));
        assert!(matches!(critical_point(&spec, &d, 4.0), Err(Error::DegenerateLambda { index: 2, .. })));
        assert!(CriticalSpec::new(LossKind::Sum, set(&[1, 2]), o * 2.0, 3).is_err());
        assert!(CriticalSpec::new(LossKind::Product, set(&[1, 2]), Matrix::from_element(2, 2, 1.0), 3).is_err());
        assert!(CriticalSpec::new(LossKind::Sum, set(&[1, 4]), identity_frame(2, 2), 3).is_err());
    }

    #[test]
    fn m0_examples() {
        let s = descending_spectrum(20);
        assert_eq!(m0(&s, 10.0), 17);
        assert_eq!(m0(&s, 0.0), 20);
        assert_eq!(m0(&s, 400.0), 0);
        assert_eq!(m0(&s, 500.0), 0);
    }

    #[test]
    fn global_minimum_examples() {
        let d = scalar(2.0);
        assert_eq!(global_minimum(LossKind::Sum, &d, 1, 2.0, None).unwrap().index_set, set(&[1]));
        assert!(global_minimum(LossKind::Sum, &d, 1, 5.0, None).unwrap().index_set.is_empty());

        let d = synthetic(20, 20, &descending_spectrum(20), 0).unwrap();
        for kind in LossKind::ALL {
            let spec = global_minimum(kind, &d, 10, 10.0, Some(3)).unwrap();
            assert_eq!(spec.index_set, IndexSet::leading(10));
            assert_eq!(curvature_signature(kind, &spec.index_set, 20, 10).unwrap().descending, 0);
        }
        let spec = global_minimum(LossKind::Sum, &d, 20, 10.0, None).unwrap();
        assert_eq!(spec.index_set, IndexSet::leading(17));
    }

    #[test]
    fn ppca_map_examples() {
        let d = scalar(2.0);
        let w0 = ppca_from_decoder(&Matrix::from_element(1, 1, 0.5f64.sqrt()), &d).unwrap();
        assert!((w0[(0, 0)] - 2.0f64.sqrt()).abs() < 1e-15);
        let direct = ppca_weights(&d, &set(&[1]), &Matrix::identity(1, 1), 2.0).unwrap();
        assert!((direct[(0, 0)].abs() - 2.0f64.sqrt()).abs() < 1e-15);

        let d = synthetic(5, 6, &[5.0, 4.0, 3.0, 2.0, 1.0], 2).unwrap();
        let zero = ppca_from_decoder(&Matrix::zeros(5, 2), &d).unwrap();
        assert_eq!(zero, Matrix::zeros(5, 2));
        let o = haar_frame(2, 2, 8).unwrap();
        let spec = CriticalSpec::new(LossKind::Sum, set(&[2, 4]), o.clone(), 5).unwrap();
        let p = critical_point(&spec, &d, 2.5).unwrap();
        let mapped = ppca_from_decoder(&p.w2, &d).unwrap();
        let expected = ppca_weights(&d, &spec.index_set, &o, 2.5).unwrap();
        assert!((&mapped - &expected).norm() <= 1e-9 * expected.norm());

        let singular = DataMatrix::new(Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).unwrap();
        assert!(ppca_from_decoder(&Matrix::zeros(2, 1), &singular).is_err());
    }

    #[test]
    fn curvature_examples() {
        let sig = curvature_signature(LossKind::Sum, &set(&[1, 2]), 4, 2).unwrap();
        assert_eq!(sig, CurvatureSignature { descending: 0, flat: 1, ascending: 15 });
        let sig = curvature_signature(LossKind::Sum, &set(&[2, 4]), 4, 2).unwrap();
        assert_eq!(sig, CurvatureSignature { descending: 3, flat: 1, ascending: 12 });
        for kind in [LossKind::Unregularized, LossKind::Product] {
            let sig = curvature_signature(kind, &IndexSet::empty(), 4, 2).unwrap();
            assert_eq!((sig.descending, sig.flat), (8, 0));
        }
        // sum loss with lambda above every sigma^2: the origin is a minimum
        let sig = curvature_signature_with_cutoff(LossKind::Sum, &IndexSet::empty(), 1, 1, 0).unwrap();
        assert_eq!(sig, CurvatureSignature { descending: 0, flat: 0, ascending: 2 });
    }

    #[test]
    fn scalar_hessians() {
        let d = scalar(2.0);
        let spec = LossSpec::new(LossKind::Sum, 2.0).unwrap();
        let origin = LaeParams::zeros(1, 1);
        let h = numerical_hessian(&spec, &origin, &d, 1e-4).unwrap();
        assert_eq!(hessian_signature(&h, 1e-4).unwrap(), (1, 0, 1));

        let w = 0.5f64.sqrt();
        let min = LaeParams::new(Matrix::from_element(1, 1, w), Matrix::from_element(1, 1, w)).unwrap();
        let h = numerical_hessian(&spec, &min, &d, 1e-4).unwrap();
        assert_eq!(hessian_signature(&h, 1e-4).unwrap(), (0, 0, 2));
    }

    #[test]
    fn gr24_sum_minimum_hessian() {
        let d = synthetic(4, 4, &[4.0, 3.0, 2.0, 1.5], 1).unwrap();
        let spec = global_minimum(LossKind::Sum, &d, 2, 1.0, Some(5)).unwrap();
        let p = critical_point(&spec, &d, 1.0).unwrap();
        let loss_spec = LossSpec::new(LossKind::Sum, 1.0).unwrap();
        let h = numerical_hessian(&loss_spec, &p, &d, default_hessian_step(&p)).unwrap();
        assert_eq!(hessian_signature(&h, 1e-4).unwrap(), (0, 1, 15));
    }

    #[test]
    fn partial_frames_have_extra_flat_directions() {
        // unregularized, ℓ = 1 < k = 2: W2 = U_I h, W1 = g U_Iᵀ with hg = 1 is
        // critical for any such pair, not only g = h⁺, so the flat count is
        // 2kℓ − ℓ² = 3 rather than kℓ = 2
        let d = synthetic(4, 4, &[4.0, 3.0, 2.0, 1.0], 2).unwrap();
        let u1 = d.svd().left.columns(0, 1).into_owned();
        let h = Matrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let g = Matrix::from_row_slice(2, 1, &[1.0, 0.4]);
        let p = LaeParams::new(&g * u1.transpose(), &u1 * &h).unwrap();
        let spec = LossSpec::unregularized();
        assert!(grad_norm(&spec, &p, &d).unwrap() < 1e-10);
        let hess = numerical_hessian(&spec, &p, &d, default_hessian_step(&p)).unwrap();
        let (_, flat, _) = hessian_signature(&hess, 1e-4).unwrap();
        assert_eq!(flat, 3);
        assert_eq!(curvature_signature(LossKind::Unregularized, &set(&[1]), 4, 2).unwrap().flat, 2);
    }

    #[test]
    fn frame_rotation_stays_on_the_manifold() {
        let d = synthetic(5, 5, &[5.0, 4.0, 3.0, 2.0, 1.0], 3).unwrap();
        let lambda = 1.5;
        let spec = LossSpec::new(LossKind::Sum, lambda).unwrap();
        let o = haar_frame(3, 2, 1).unwrap();
        let r = haar_orthogonal(2, 2).unwrap();
        let a = critical_point(&CriticalSpec::new(LossKind::Sum, set(&[1, 3]), o.clone(), 5).unwrap(), &d, lambda).unwrap();
        let b = critical_point(&CriticalSpec::new(LossKind::Sum, set(&[1, 3]), &o * r, 5).unwrap(), &d, lambda).unwrap();
        let (la, lb) = (loss(&spec, &a, &d).unwrap(), loss(&spec, &b, &d).unwrap());
        assert!((la - lb).abs() < 1e-10 * la);
        assert!(grad_norm(&spec, &b, &d).unwrap() <= 1e-8 * (d.gram().norm() + lambda));
    }

    #[test]
    fn sum_global_minimum_beats_other_index_sets() {
        let d = synthetic(5, 5, &[5.0, 4.0, 3.0, 2.0, 1.5], 4).unwrap();
        let lambda = 1.0;
        let spec = LossSpec::new(LossKind::Sum, lambda).unwrap();
        let best = critical_point(&global_minimum(LossKind::Sum, &d, 2, lambda, None).unwrap(), &d, lambda).unwrap();
        let best = loss(&spec, &best, &d).unwrap();
        for s in crate::grassmann::index_sets(5, 2).skip(1) {
            let p = critical_point(&CriticalSpec::new(LossKind::Sum, s, identity_frame(2, 2), 5).unwrap(), &d, lambda).unwrap();
            assert!(loss(&spec, &p, &d).unwrap() > best);
        }
    }

    #[test]
    fn prop1_examples() {
        let (q1, q2) = prop1_critical(&[3.0], &[3.0], &set(&[1]), &Matrix::from_element(1, 1, 2.0)).unwrap();
        assert!((q1[(0, 0)] - 2.0).abs() < 1e-15 && (q2[(0, 0)] - 0.5).abs() < 1e-15);

        let (q1, q2) = prop1_critical(&[2.0, 1.0], &[2.0, 1.0], &IndexSet::empty(), &Matrix::zeros(1, 0)).unwrap();
        assert_eq!((q1.amax(), q2.amax()), (0.0, 0.0));

        let (q1, q2) = prop1_critical(&[2.0, 1.0], &[2.0, 1.0], &set(&[1]), &Matrix::from_element(1, 1, 3.0)).unwrap();
        assert_eq!(q1.as_slice(), &[3.0, 0.0]);
        assert!((q2[(0, 0)] - 1.0 / 3.0).abs() < 1e-15 && q2[(1, 0)] == 0.0);
        let p = &q2 * &q1;
        assert!((p - Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).amax() < 1e-15);

        assert!(prop1_critical(&[1.0, 1.0], &[1.0, 1.0], &set(&[1]), &Matrix::identity(1, 1)).is_err());
        assert!(prop1_critical(&[1.0, 0.0], &[1.0, 1.0], &set(&[1]), &Matrix::identity(1, 1)).is_err());
    }

    #[test]
    fn prop1_points_are_stationary_by_finite_differences() {
        let d = [2.0, 1.3, 0.7];
        let s = [1.5, 1.1, 0.9];
        let g = Matrix::from_row_slice(2, 2, &[1.0, 0.4, -0.3, 2.0]);
        let (q1, q2) = prop1_critical(&d, &s, &set(&[1, 3]), &g).unwrap();
        let h = 1e-6;
        let base = prop1_loss(&d, &s, &q1, &q2);
        let mut worst: f64 = 0.0;
        for which in 0..2 {
            let target = if which == 0 { &q1 } else { &q2 };
            for idx in 0..target.len() {
                let (mut a1, mut a2, mut b1, mut b2) = (q1.clone(), q2.clone(), q1.clone(), q2.clone());
                if which == 0 {
                    a1[idx] += h;
                    b1[idx] -= h;
                } else {
                    a2[idx] += h;
                    b2[idx] -= h;
                }
                let fd = (prop1_loss(&d, &s, &a1, &a2) - prop1_loss(&d, &s, &b1, &b2)) / (2.0 * h);
                worst = worst.max(fd.abs());
            }
        }
        assert!(worst < 1e-8 * base.abs().max(1.0), "worst {worst}");
    }
}
