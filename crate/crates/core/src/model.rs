//! The three LAE losses, their exact gradients, and the denoising /
//! contractive special forms.
//!
//! All losses go through the cached gram matrix `G = XXᵀ`:
//! `‖X − WX‖²_F = tr((I − W) G (I − W)ᵀ)` with `W = W2W1`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::error::{invalid, shape, Error, Result};
use crate::spectra::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Unregularized,
    Product,
    Sum,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Unregularized, LossKind::Product, LossKind::Sum];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Unregularized => "unregularized",
            LossKind::Product => "product",
            LossKind::Sum => "sum",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "unregularized" | "unreg" | "none" => Ok(LossKind::Unregularized),
            "product" | "prod" => Ok(LossKind::Product),
            "sum" => Ok(LossKind::Sum),
            other => Err(invalid(format!("unknown loss kind `{other}`"))),
        }
    }
}

/// Loss kind plus its weight. `dae_noise_var` and `cae_gamma` record where the
/// weight came from when the loss stands in for a denoising or contractive AE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub lambda: f64,
    pub dae_noise_var: Option<f64>,
    pub cae_gamma: Option<f64>,
}

impl LossSpec {
    pub fn new(kind: LossKind, lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(invalid("lambda must be finite and nonnegative"));
        }
        if kind != LossKind::Unregularized && lambda <= 0.0 {
            return Err(invalid(format!("{kind} loss needs lambda > 0")));
        }
        Ok(LossSpec { kind, lambda, dae_noise_var: None, cae_gamma: None })
    }

    pub fn unregularized() -> Self {
        LossSpec { kind: LossKind::Unregularized, lambda: 0.0, dae_noise_var: None, cae_gamma: None }
    }

    /// Product loss standing in for a linear DAE with noise variance `s2` on `n` samples.
    pub fn from_dae(s2: f64, n: usize) -> Result<Self> {
        let mut spec = LossSpec::new(LossKind::Product, s2 * n as f64)?;
        spec.dae_noise_var = Some(s2);
        Ok(spec)
    }

    /// Sum loss standing in for a tied linear CAE with penalty `gamma`.
    pub fn from_cae(gamma: f64) -> Result<Self> {
        let mut spec = LossSpec::new(LossKind::Sum, gamma / 2.0)?;
        spec.cae_gamma = Some(gamma);
        Ok(spec)
    }

    /// The weight that actually enters the loss (zero for the unregularized kind).
    pub fn effective_lambda(&self) -> f64 {
        match self.kind {
            LossKind::Unregularized => 0.0,
            _ => self.lambda,
        }
    }
}

/// Encoder `W1` (k×m) and decoder `W2` (m×k).
#[derive(Debug, Clone, PartialEq)]
pub struct LaeParams {
    pub w1: Matrix,
    pub w2: Matrix,
}

impl LaeParams {
    pub fn new(w1: Matrix, w2: Matrix) -> Result<Self> {
        let (k, m) = w1.shape();
        if w2.shape() != (m, k) {
            return Err(shape(format!(
                "encoder is {k}x{m} so decoder must be {m}x{k}, got {}x{}",
                w2.nrows(),
                w2.ncols()
            )));
        }
        if k > m {
            return Err(shape(format!("latent dimension k = {k} exceeds m = {m}")));
        }
        Ok(LaeParams { w1, w2 })
    }

    pub fn zeros(m: usize, k: usize) -> Self {
        LaeParams { w1: Matrix::zeros(k, m), w2: Matrix::zeros(m, k) }
    }

    /// `(wᵀ, w)` for a decoder-shaped `w`.
    pub fn tied(w: Matrix) -> Self {
        LaeParams { w1: w.transpose(), w2: w }
    }

    pub fn m(&self) -> usize {
        self.w1.ncols()
    }

    pub fn k(&self) -> usize {
        self.w1.nrows()
    }

    /// `W2W1`.
    pub fn product(&self) -> Matrix {
        &self.w2 * &self.w1
    }

    /// `‖W1 − W2ᵀ‖²_F`.
    pub fn transpose_gap(&self) -> f64 {
        (&self.w1 - self.w2.transpose()).norm_squared()
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().chain(self.w2.iter()).all(|x| x.is_finite())
    }

    /// Flatten as `[vec(W1); vec(W2)]`, column-major.
    pub fn to_vec(&self) -> Vec<f64> {
        self.w1.iter().chain(self.w2.iter()).cloned().collect()
    }

    pub fn from_slice(m: usize, k: usize, flat: &[f64]) -> Self {
        assert_eq!(flat.len(), 2 * m * k);
        LaeParams {
            w1: Matrix::from_column_slice(k, m, &flat[..m * k]),
            w2: Matrix::from_column_slice(m, k, &flat[m * k..]),
        }
    }
}

fn check_fit(p: &LaeParams, data: &DataMatrix) -> Result<()> {
    if p.m() != data.m() {
        return Err(shape(format!("parameters expect m = {}, data has m = {}", p.m(), data.m())));
    }
    Ok(())
}

/// Above this size the reconstruction error is expanded in traces, costing
/// O(km²) instead of O(m³).
const DIRECT_LOSS_MAX_M: usize = 64;

/// `‖X − W2W1X‖²_F` via the gram matrix.
pub fn reconstruction_error(p: &LaeParams, data: &DataMatrix) -> Result<f64> {
    check_fit(p, data)?;
    let g = data.gram();
    if p.m() <= DIRECT_LOSS_MAX_M {
        let residual = Matrix::identity(p.m(), p.m()) - p.product();
        let rg = &residual * g;
        return Ok(rg.dot(&residual).max(0.0));
    }
    // tr(G) − 2 tr(W2W1G) + tr(W2W1GW1ᵀW2ᵀ) without the m×m product
    let a = &p.w1 * g;
    let cross = a.dot(&p.w2.transpose());
    let quad = (p.w2.transpose() * &p.w2).dot(&(&a * p.w1.transpose()));
    Ok((g.trace() - 2.0 * cross + quad).max(0.0))
}

pub fn loss(spec: &LossSpec, p: &LaeParams, data: &DataMatrix) -> Result<f64> {
    let base = reconstruction_error(p, data)?;
    let penalty = match spec.kind {
        LossKind::Unregularized => 0.0,
        // ‖W2W1‖² = ⟨W2ᵀW2, W1W1ᵀ⟩
        LossKind::Product => spec.lambda * (p.w2.transpose() * &p.w2).dot(&(&p.w1 * p.w1.transpose())),
        LossKind::Sum => spec.lambda * (p.w1.norm_squared() + p.w2.norm_squared()),
    };
    Ok(base + penalty)
}

/// Exact gradient `(∂/∂W1, ∂/∂W2)`.
pub fn grad(spec: &LossSpec, p: &LaeParams, data: &DataMatrix) -> Result<(Matrix, Matrix)> {
    check_fit(p, data)?;
    // With E = (W2W1 − I)G: W2ᵀE = (W2ᵀW2)(W1G) − (GW2)ᵀ and EW1ᵀ = W2(W1G)W1ᵀ − (W1G)ᵀ,
    // which never forms an m×m product.
    let g = data.gram();
    let a = &p.w1 * g;
    let w2tw2 = p.w2.transpose() * &p.w2;
    let mut g1 = (&w2tw2 * &a - (g * &p.w2).transpose()) * 2.0;
    let mut g2 = (&p.w2 * (&a * p.w1.transpose()) - a.transpose()) * 2.0;
    match spec.kind {
        LossKind::Unregularized => {}
        LossKind::Product => {
            g1 += &w2tw2 * &p.w1 * (2.0 * spec.lambda);
            g2 += &p.w2 * (&p.w1 * p.w1.transpose()) * (2.0 * spec.lambda);
        }
        LossKind::Sum => {
            g1 += &p.w1 * (2.0 * spec.lambda);
            g2 += &p.w2 * (2.0 * spec.lambda);
        }
    }
    Ok((g1, g2))
}

pub fn grad_norm(spec: &LossSpec, p: &LaeParams, data: &DataMatrix) -> Result<f64> {
    let (g1, g2) = grad(spec, p, data)?;
    Ok((g1.norm_squared() + g2.norm_squared()).sqrt())
}

/// Closed form of `E‖X − W2W1(X + ε)‖²_F` for i.i.d. zero-mean noise with
/// variance `s2`: the product loss with `λ = n·s2`.
pub fn dae_expected_loss(p: &LaeParams, data: &DataMatrix, s2: f64) -> Result<f64> {
    if !(s2 >= 0.0) {
        return Err(invalid("noise variance must be nonnegative"));
    }
    Ok(reconstruction_error(p, data)? + data.n() as f64 * s2 * p.product().norm_squared())
}

/// One draw of the corrupted reconstruction loss `‖X − W2W1(X + noise)‖²_F`.
pub fn dae_corrupted_loss(p: &LaeParams, data: &DataMatrix, noise: &Matrix) -> Result<f64> {
    check_fit(p, data)?;
    if noise.shape() != data.x().shape() {
        return Err(shape("noise must match the data shape"));
    }
    let corrupted = data.x() + noise;
    Ok((data.x() - &p.w2 * (&p.w1 * corrupted)).norm_squared())
}

/// Tied contractive loss: the sum loss at `(W1, W1ᵀ)` with `λ = γ/2`.
pub fn cae_tied_loss(w1: &Matrix, data: &DataMatrix, gamma: f64) -> Result<f64> {
    if !(gamma >= 0.0) {
        return Err(invalid("gamma must be nonnegative"));
    }
    let p = LaeParams::new(w1.clone(), w1.transpose())?;
    let base = reconstruction_error(&p, data)?;
    // (γ/2)(‖W1‖² + ‖W1ᵀ‖²)
    Ok(base + gamma * w1.norm_squared())
}

/// Global minima of the scalar (`m = n = k = 1`) losses.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarMinima {
    /// The hyperbola `w2·w1 = product`.
    Hyperbola { product: f64 },
    /// Isolated points `(w1, w2)`.
    Points(Vec<(f64, f64)>),
}

pub fn scalar_minima(kind: LossKind, x2: f64, lambda: f64) -> Result<ScalarMinima> {
    if !(x2 > 0.0) {
        return Err(invalid("scalar data power x^2 must be positive"));
    }
    if !(lambda >= 0.0) {
        return Err(invalid("lambda must be nonnegative"));
    }
    Ok(match kind {
        LossKind::Unregularized => ScalarMinima::Hyperbola { product: 1.0 },
        LossKind::Product => ScalarMinima::Hyperbola { product: 1.0 / (1.0 + lambda / x2) },
        LossKind::Sum if lambda < x2 => {
            let w = (1.0 - lambda / x2).sqrt();
            ScalarMinima::Points(vec![(w, w), (-w, -w)])
        }
        LossKind::Sum => ScalarMinima::Points(vec![(0.0, 0.0)]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::haar_orthogonal;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_data(x: f64) -> DataMatrix {
        DataMatrix::new(Matrix::from_element(1, 1, x)).unwrap()
    }

    fn scalar_params(w1: f64, w2: f64) -> LaeParams {
        LaeParams::new(Matrix::from_element(1, 1, w1), Matrix::from_element(1, 1, w2)).unwrap()
    }

    fn random(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn scalar_hand_evaluations() {
        let d = scalar_data(2.0);
        let h = 0.5f64.sqrt();
        let sum = LossSpec::new(LossKind::Sum, 2.0).unwrap();
        assert!((loss(&sum, &scalar_params(h, h), &d).unwrap() - 3.0).abs() < 1e-12);
        let prod = LossSpec::new(LossKind::Product, 2.0).unwrap();
        assert!((loss(&prod, &scalar_params(1.0, 1.0), &d).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn origin_loss_is_data_energy_and_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = DataMatrix::new(random(3, 5, &mut rng)).unwrap();
        let p = LaeParams::zeros(3, 2);
        for kind in LossKind::ALL {
            let spec = LossSpec::new(kind, if kind == LossKind::Unregularized { 0.0 } else { 0.7 }).unwrap();
            assert!((loss(&spec, &p, &d).unwrap() - d.x().norm_squared()).abs() < 1e-12);
            let (g1, g2) = grad(&spec, &p, &d).unwrap();
            assert_eq!(g1.amax(), 0.0);
            assert_eq!(g2.amax(), 0.0);
        }
    }

    #[test]
    fn scalar_sum_minimum_is_stationary() {
        let d = scalar_data(2.0);
        let h = 0.5f64.sqrt();
        let sum = LossSpec::new(LossKind::Sum, 2.0).unwrap();
        let (g1, g2) = grad(&sum, &scalar_params(h, h), &d).unwrap();
        assert!(g1[(0, 0)].abs() < 1e-14 && g2[(0, 0)].abs() < 1e-14);
    }

    #[test]
    fn spec_validation() {
        assert!(LossSpec::new(LossKind::Sum, 0.0).is_err());
        assert!(LossSpec::new(LossKind::Product, -1.0).is_err());
        assert!(LossSpec::new(LossKind::Unregularized, 0.0).is_ok());
        assert!(LaeParams::new(Matrix::zeros(2, 3), Matrix::zeros(2, 3)).is_err());
        assert!(LaeParams::new(Matrix::zeros(3, 2), Matrix::zeros(2, 3)).is_err());
        let d = scalar_data(1.0);
        assert!(loss(&LossSpec::unregularized(), &LaeParams::zeros(2, 1), &d).is_err());
        assert_eq!("sum".parse::<LossKind>().unwrap(), LossKind::Sum);
        assert!("ridge".parse::<LossKind>().is_err());
    }

    #[test]
    fn dae_closed_form_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = DataMatrix::new(random(3, 4, &mut rng)).unwrap();
        let p = LaeParams::new(random(2, 3, &mut rng), random(3, 2, &mut rng)).unwrap();
        let plain = loss(&LossSpec::unregularized(), &p, &d).unwrap();
        assert!((dae_expected_loss(&p, &d, 0.0).unwrap() - plain).abs() < 1e-12);
        let zero = LaeParams::zeros(3, 2);
        assert!((dae_expected_loss(&zero, &d, 0.3).unwrap() - d.x().norm_squared()).abs() < 1e-12);
        let spec = LossSpec::from_dae(0.3, d.n()).unwrap();
        assert!((dae_expected_loss(&p, &d, 0.3).unwrap() - loss(&spec, &p, &d).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn cae_matches_tied_sum_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = DataMatrix::new(random(4, 6, &mut rng)).unwrap();
        assert!((cae_tied_loss(&Matrix::zeros(2, 4), &d, 4.0).unwrap() - d.x().norm_squared()).abs() < 1e-12);
        let w1 = random(2, 4, &mut rng);
        let spec = LossSpec::from_cae(4.0).unwrap();
        assert_eq!(spec.lambda, 2.0);
        let tied = LaeParams::new(w1.clone(), w1.transpose()).unwrap();
        let a = cae_tied_loss(&w1, &d, 4.0).unwrap();
        let b = loss(&spec, &tied, &d).unwrap();
        assert!((a - b).abs() <= 1e-12 * b.max(1.0));
    }

    #[test]
    fn scalar_minima_table() {
        let h = 0.5f64.sqrt();
        match scalar_minima(LossKind::Sum, 4.0, 2.0).unwrap() {
            ScalarMinima::Points(p) => {
                assert_eq!(p.len(), 2);
                assert!((p[0].0 - h).abs() < 1e-15 && (p[1].1 + h).abs() < 1e-15);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(scalar_minima(LossKind::Sum, 4.0, 4.0).unwrap(), ScalarMinima::Points(vec![(0.0, 0.0)]));
        match scalar_minima(LossKind::Product, 4.0, 2.0).unwrap() {
            ScalarMinima::Hyperbola { product } => assert!((product - 2.0 / 3.0).abs() < 1e-15),
            other => panic!("{other:?}"),
        }
        assert_eq!(scalar_minima(LossKind::Unregularized, 4.0, 2.0).unwrap(), ScalarMinima::Hyperbola { product: 1.0 });
        assert!(scalar_minima(LossKind::Sum, 0.0, 1.0).is_err());
    }

    #[test]
    fn trace_expansion_matches_direct_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = DIRECT_LOSS_MAX_M + 6;
        let d = DataMatrix::new(random(m, m + 3, &mut rng)).unwrap();
        let p = LaeParams::new(random(3, m, &mut rng), random(m, 3, &mut rng)).unwrap();
        let direct = (d.x() - p.product() * d.x()).norm_squared();
        let expanded = reconstruction_error(&p, &d).unwrap();
        assert!((direct - expanded).abs() <= 1e-10 * direct);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn frobenius_split(seed in 0u64..10_000, m in 1usize..6, k in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random(m, k, &mut rng);
            let b = random(k, m, &mut rng);
            let lhs = a.norm_squared() + b.norm_squared();
            let rhs = (&a - b.transpose()).norm_squared() + 2.0 * (&a * &b).trace();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.max(1.0));
        }

        #[test]
        fn unregularized_loss_is_gl_invariant(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = DataMatrix::new(random(4, 6, &mut rng)).unwrap();
            let p = LaeParams::new(random(2, 4, &mut rng), random(4, 2, &mut rng)).unwrap();
            let g = random(2, 2, &mut rng) + Matrix::identity(2, 2) * 2.0;
            let g_inv = g.clone().try_inverse().unwrap();
            let moved = LaeParams::new(&g * &p.w1, &p.w2 * g_inv).unwrap();
            let spec = LossSpec::unregularized();
            let a = loss(&spec, &p, &d).unwrap();
            let b = loss(&spec, &moved, &d).unwrap();
            prop_assert!((a - b).abs() <= 1e-10 * a.max(1.0));
        }

        #[test]
        fn sum_loss_is_only_orthogonally_invariant(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = DataMatrix::new(random(4, 6, &mut rng)).unwrap();
            let p = LaeParams::new(random(2, 4, &mut rng), random(4, 2, &mut rng)).unwrap();
            let spec = LossSpec::new(LossKind::Sum, 0.5).unwrap();
            let base = loss(&spec, &p, &d).unwrap();

            let o = haar_orthogonal(2, seed).unwrap();
            let rotated = LaeParams::new(&o * &p.w1, &p.w2 * o.transpose()).unwrap();
            prop_assert!((loss(&spec, &rotated, &d).unwrap() - base).abs() <= 1e-10 * base);

            let g = Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0 / 3.0])) * &o;
            let stretched = LaeParams::new(&g * &p.w1, &p.w2 * g.try_inverse().unwrap()).unwrap();
            let reconstruction = reconstruction_error(&stretched, &d).unwrap();
            prop_assert!((reconstruction - reconstruction_error(&p, &d).unwrap()).abs() <= 1e-9 * base);
            prop_assert!(loss(&spec, &stretched, &d).unwrap() != base);
        }
    }
}
