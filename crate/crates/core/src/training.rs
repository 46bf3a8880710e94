//! Optimizers for the three losses and PCA recovery from a trained decoder.
//!
//! `gd_step` is the LAE–PCA update written without the factor 2 of the exact
//! gradient, so a step of size `α` is gradient descent at rate `α/2`. The
//! `Gd` optimizer uses this convention for every loss kind; `Adam` works on
//! the exact gradient.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::error::{invalid, shape, Error, Result};
use crate::model::{grad, loss, LaeParams, LossKind, LossSpec};
use crate::spectra::{self, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Gd,
    Adam,
    TiedGd,
    Als,
}

impl Optimizer {
    pub fn as_str(self) -> &'static str {
        match self {
            Optimizer::Gd => "gd",
            Optimizer::Adam => "adam",
            Optimizer::TiedGd => "tied_gd",
            Optimizer::Als => "als",
        }
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "gd" | "sgd" => Ok(Optimizer::Gd),
            "adam" => Ok(Optimizer::Adam),
            "tied_gd" | "tied" | "oja" => Ok(Optimizer::TiedGd),
            "als" => Ok(Optimizer::Als),
            other => Err(invalid(format!("unknown optimizer `{other}` (gd, adam, tied_gd, als)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub kind: LossKind,
    pub lambda: f64,
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Standard deviation of the entrywise normal initialization.
    pub init_scale: f64,
    pub seed: u64,
    pub record_every: usize,
    /// Adam minibatch size; `None` trains on the full batch.
    pub batch_size: Option<usize>,
    /// Start from `W1 = W2ᵀ` instead of independent draws.
    pub tied_init: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            kind: LossKind::Sum,
            lambda: 10.0,
            optimizer: Optimizer::Adam,
            learning_rate: 0.05,
            epochs: 4000,
            init_scale: 0.1,
            seed: 0,
            record_every: 10,
            batch_size: None,
            tied_init: false,
        }
    }
}

impl TrainConfig {
    pub fn loss_spec(&self) -> Result<LossSpec> {
        match self.kind {
            LossKind::Unregularized => Ok(LossSpec::unregularized()),
            kind => LossSpec::new(kind, self.lambda),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss_spec()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate must be positive"));
        }
        if self.epochs == 0 {
            return Err(invalid("epochs must be at least 1"));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(invalid("init_scale must be positive"));
        }
        if self.record_every == 0 {
            return Err(invalid("record_every must be at least 1"));
        }
        match (self.optimizer, self.batch_size) {
            (_, Some(0)) => return Err(invalid("batch_size must be at least 1")),
            (Optimizer::Adam, _) | (_, None) => {}
            (other, Some(_)) => return Err(invalid(format!("batch_size is only supported with adam, not {other}"))),
        }
        if self.optimizer == Optimizer::TiedGd && self.kind == LossKind::Product {
            return Err(invalid("tied_gd descends the sum (or unregularized) loss"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRecord {
    pub epoch: usize,
    pub loss: f64,
    pub transpose_gap: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
    pub epochs_run: usize,
    pub final_grad_norm: f64,
    /// Set when the gradient norm fell below the convergence threshold.
    pub converged: bool,
}

impl TrainTrace {
    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }
}

fn sum_or_unregularized(lambda: f64) -> Result<LossSpec> {
    if lambda == 0.0 {
        Ok(LossSpec::unregularized())
    } else {
        LossSpec::new(LossKind::Sum, lambda)
    }
}

/// One simultaneous step of
/// `W1 −= α(W2ᵀ(W2W1 − I)XXᵀ + λW1)`, `W2 −= α((W2W1 − I)XXᵀW1ᵀ + λW2)`.
pub fn gd_step(p: &LaeParams, data: &DataMatrix, lambda: f64, alpha: f64) -> Result<LaeParams> {
    if !(alpha > 0.0) {
        return Err(invalid("step size must be positive"));
    }
    half_gradient_step(&sum_or_unregularized(lambda)?, p, data, alpha)
}

fn half_gradient_step(spec: &LossSpec, p: &LaeParams, data: &DataMatrix, alpha: f64) -> Result<LaeParams> {
    let (g1, g2) = grad(spec, p, data)?;
    Ok(LaeParams { w1: &p.w1 - g1 * (alpha / 2.0), w2: &p.w2 - g2 * (alpha / 2.0) })
}

/// Decoder update with the encoder tied to `wᵀ`: `w − α((wwᵀ − I)XXᵀw + λw)`.
/// For `λ = 0` and one column this is Oja's rule summed over the data.
pub fn tied_step(w: &Matrix, data: &DataMatrix, lambda: f64, alpha: f64) -> Result<Matrix> {
    if !(alpha > 0.0) {
        return Err(invalid("step size must be positive"));
    }
    if w.nrows() != data.m() {
        return Err(shape("tied parameter must have m rows"));
    }
    let gw = data.gram() * w;
    let direction = w * (w.transpose() * &gw) - gw + w * lambda;
    Ok(w - direction * alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Encoder,
    Decoder,
}

/// Exact minimization of the loss over one factor with the other held fixed.
///
/// Each stationarity equation has the form `P W1 Q + μW1 = R` (encoder) or
/// `W2 (W1 Q W1ᵀ + μI) = G W1ᵀ` (decoder), with `Q = G + λI, μ = 0` for the
/// product loss and `Q = G, μ = λ` otherwise. The encoder equation is
/// diagonalized by the eigenbases of `P = W2ᵀW2` and `Q`.
pub fn als_solve(p: &LaeParams, data: &DataMatrix, spec: &LossSpec, which: Which) -> Result<LaeParams> {
    if p.m() != data.m() {
        return Err(shape("parameters and data disagree on m"));
    }
    let (q_shift, mu) = match spec.kind {
        LossKind::Unregularized => (0.0, 0.0),
        LossKind::Product => (spec.lambda, 0.0),
        LossKind::Sum => (0.0, spec.lambda),
    };
    let g = data.gram();
    match which {
        Which::Encoder => {
            let (theta, u) = data.gram_eigen();
            let (phi, v) = spectra::symmetric_eigen(&(p.w2.transpose() * &p.w2));
            let rhs = v.transpose() * p.w2.transpose() * g * u;
            let scale = theta[0].abs().max(1.0) * phi[0].abs().max(1.0) + mu;
            let y = Matrix::from_fn(rhs.nrows(), rhs.ncols(), |i, j| {
                let denom = phi[i] * (theta[j] + q_shift) + mu;
                if denom.abs() <= 1e-14 * scale {
                    f64::NAN
                } else {
                    rhs[(i, j)] / denom
                }
            });
            if y.iter().any(|x| x.is_nan()) {
                return Err(Error::Singular("encoder normal equations".into()));
            }
            Ok(LaeParams { w1: v * y * u.transpose(), w2: p.w2.clone() })
        }
        Which::Decoder => {
            let k = p.k();
            let gw1t = g * p.w1.transpose();
            let system = &p.w1 * &gw1t + &p.w1 * p.w1.transpose() * q_shift + Matrix::identity(k, k) * mu;
            let chol = nalgebra::Cholesky::new((&system + system.transpose()) * 0.5)
                .ok_or_else(|| Error::Singular("decoder normal equations".into()))?;
            let w2t = chol.solve(&gw1t.transpose());
            if !w2t.iter().all(|x| x.is_finite()) {
                return Err(Error::Singular("decoder normal equations".into()));
            }
            Ok(LaeParams { w1: p.w1.clone(), w2: w2t.transpose() })
        }
    }
}

/// Gradient-norm threshold below which a run stops early.
pub fn convergence_threshold(data: &DataMatrix, lambda: f64) -> f64 {
    1e-9 * (data.gram().norm() + lambda)
}

struct Adam {
    m: (Matrix, Matrix),
    v: (Matrix, Matrix),
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(p: &LaeParams) -> Self {
        let z1 = Matrix::zeros(p.w1.nrows(), p.w1.ncols());
        let z2 = Matrix::zeros(p.w2.nrows(), p.w2.ncols());
        Adam { m: (z1.clone(), z2.clone()), v: (z1, z2), t: 0 }
    }

    fn step(&mut self, p: &mut LaeParams, g: (&Matrix, &Matrix), lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (w, g, m, v) in [(&mut p.w1, g.0, &mut self.m.0, &mut self.v.0), (&mut p.w2, g.1, &mut self.m.1, &mut self.v.1)] {
            for i in 0..w.len() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                w[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

/// Gradient of the loss on the columns `cols`, with the reconstruction term
/// scaled by `n / |cols|` so its expectation is the full-batch gradient.
fn minibatch_grad(spec: &LossSpec, p: &LaeParams, data: &DataMatrix, cols: &[usize]) -> (Matrix, Matrix) {
    let xb = data.x().select_columns(cols);
    let scale = 2.0 * data.n() as f64 / cols.len() as f64;
    let code = &p.w1 * &xb;
    let residual = &p.w2 * &code - &xb;
    let mut g1 = p.w2.transpose() * &residual * xb.transpose() * scale;
    let mut g2 = &residual * code.transpose() * scale;
    match spec.kind {
        LossKind::Unregularized => {}
        LossKind::Product => {
            let w2tw2 = p.w2.transpose() * &p.w2;
            g1 += &w2tw2 * &p.w1 * (2.0 * spec.lambda);
            g2 += &p.w2 * (&p.w1 * p.w1.transpose()) * (2.0 * spec.lambda);
        }
        LossKind::Sum => {
            g1 += &p.w1 * (2.0 * spec.lambda);
            g2 += &p.w2 * (2.0 * spec.lambda);
        }
    }
    (g1, g2)
}

fn normal_matrix(r: usize, c: usize, dist: &Normal<f64>, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(r, c, |_, _| dist.sample(rng))
}

/// Entrywise `N(0, init_scale²)` parameters, encoder drawn first.
pub fn initial_params(config: &TrainConfig, m: usize, k: usize) -> Result<LaeParams> {
    let dist = Normal::new(0.0, config.init_scale).map_err(|e| invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    if config.tied_init || config.optimizer == Optimizer::TiedGd {
        return Ok(LaeParams::tied(normal_matrix(m, k, &dist, &mut rng)));
    }
    let w1 = normal_matrix(k, m, &dist, &mut rng);
    let w2 = normal_matrix(m, k, &dist, &mut rng);
    LaeParams::new(w1, w2)
}

pub fn train(config: &TrainConfig, data: &DataMatrix, k: usize) -> Result<(LaeParams, TrainTrace)> {
    let init = initial_params(config, data.m(), k)?;
    train_from(config, data, init)
}

/// As [`train`], starting from `init`.
pub fn train_from(config: &TrainConfig, data: &DataMatrix, init: LaeParams) -> Result<(LaeParams, TrainTrace)> {
    config.validate()?;
    if init.m() != data.m() {
        return Err(shape("initial parameters do not match the data"));
    }
    let spec = config.loss_spec()?;
    let lambda = spec.effective_lambda();
    let threshold = convergence_threshold(data, lambda);
    let mut p = init;
    let mut adam = Adam::new(&p);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..data.n()).collect();
    let mut records = Vec::new();

    let record = |epoch: usize, p: &LaeParams, gn: f64| -> Result<TraceRecord> {
        Ok(TraceRecord { epoch, loss: loss(&spec, p, data)?, transpose_gap: p.transpose_gap(), grad_norm: gn })
    };

    let (mut g1, mut g2) = grad(&spec, &p, data)?;
    let mut gn = (g1.norm_squared() + g2.norm_squared()).sqrt();
    records.push(record(0, &p, gn)?);
    let mut converged = gn < threshold;
    let mut epoch = 0;
    while epoch < config.epochs && !converged {
        epoch += 1;
        match config.optimizer {
            Optimizer::Gd => {
                p.w1 -= &g1 * (config.learning_rate / 2.0);
                p.w2 -= &g2 * (config.learning_rate / 2.0);
            }
            Optimizer::Adam => match config.batch_size {
                Some(b) if b < data.n() => {
                    order.shuffle(&mut shuffle_rng);
                    for cols in order.chunks(b) {
                        let (b1, b2) = minibatch_grad(&spec, &p, data, cols);
                        adam.step(&mut p, (&b1, &b2), config.learning_rate);
                    }
                }
                _ => adam.step(&mut p, (&g1, &g2), config.learning_rate),
            },
            Optimizer::TiedGd => {
                let w = tied_step(&p.w2, data, lambda, config.learning_rate)?;
                p = LaeParams::tied(w);
            }
            Optimizer::Als => {
                p = als_solve(&p, data, &spec, Which::Encoder)?;
                p = als_solve(&p, data, &spec, Which::Decoder)?;
            }
        }
        if !p.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        (g1, g2) = grad(&spec, &p, data)?;
        gn = (g1.norm_squared() + g2.norm_squared()).sqrt();
        if !gn.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        converged = gn < threshold;
        if epoch % config.record_every == 0 || epoch == config.epochs || converged {
            let r = record(epoch, &p, gn)?;
            if !r.loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            records.push(r);
        }
    }
    let trace = TrainTrace { records, epochs_run: epoch, final_grad_norm: gn, converged };
    Ok((p, trace))
}

/// Principal directions and eigenvalues read off a sum-loss decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaRecovery {
    /// m×k, columns ordered by descending decoder singular value.
    pub directions: Matrix,
    pub singular_values: Vec<f64>,
    /// `λ / (1 − s²)` per component; `None` where the component collapsed.
    pub eigenvalues: Vec<Option<f64>>,
}

impl PcaRecovery {
    pub fn retained(&self) -> usize {
        self.eigenvalues.iter().filter(|e| e.is_some()).count()
    }
}

/// Singular values at or below this count as collapsed.
pub const COLLAPSE_THRESHOLD: f64 = 1e-6;

pub fn recover_pca(w2: &Matrix, lambda: f64) -> Result<PcaRecovery> {
    if !(lambda > 0.0) {
        return Err(invalid("eigenvalue recovery needs lambda > 0"));
    }
    let svd = spectra::svd(w2)?;
    let k = w2.ncols().min(w2.nrows());
    let singular_values: Vec<f64> = svd.values.iter().take(k).cloned().collect();
    if let Some(i) = singular_values.iter().position(|s| *s >= 1.0) {
        return Err(Error::NotSumDecoder { index: i + 1, value: singular_values[i] });
    }
    let eigenvalues = singular_values
        .iter()
        .map(|s| (*s > COLLAPSE_THRESHOLD).then(|| lambda / (1.0 - s * s)))
        .collect();
    Ok(PcaRecovery { directions: svd.left.columns(0, k).into_owned(), singular_values, eigenvalues })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaConfig {
    pub lambda: f64,
    /// `None` picks `0.5 / σ_1²`, inside the stable range of the update.
    pub alpha: Option<f64>,
    pub epochs: usize,
    pub init_scale: f64,
    pub seed: u64,
    /// Train the tied decoder alone (`tied_step`) instead of both factors.
    pub tied: bool,
}

impl Default for PcaConfig {
    fn default() -> Self {
        PcaConfig { lambda: 10.0, alpha: None, epochs: 4000, init_scale: 0.1, seed: 0, tied: false }
    }
}

/// Runs the LAE–PCA update on `data` (expected mean-centered) from a tied
/// start and recovers the principal directions and eigenvalues.
pub fn lae_pca(data: &DataMatrix, k: usize, config: &PcaConfig) -> Result<(PcaRecovery, TrainTrace)> {
    let top = data.sigma_squared()[0];
    let alpha = config.alpha.unwrap_or(0.5 / top.max(f64::MIN_POSITIVE));
    let train_config = TrainConfig {
        kind: LossKind::Sum,
        lambda: config.lambda,
        optimizer: if config.tied { Optimizer::TiedGd } else { Optimizer::Gd },
        learning_rate: alpha,
        epochs: config.epochs,
        init_scale: config.init_scale,
        seed: config.seed,
        record_every: (config.epochs / 100).max(1),
        batch_size: None,
        tied_init: true,
    };
    let (p, trace) = train(&train_config, data, k)?;
    Ok((recover_pca(&p.w2, config.lambda)?, trace))
}
