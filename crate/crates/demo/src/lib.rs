//! WebAssembly bindings for the static page in `www/`. Each export returns a
//! JSON string; the `*_json` functions are the same operations for native use.

use lae::data::{descending_spectrum, synthetic};
use lae::grassmann::{boundary_parity, enumerate_cells};
use lae::model::{loss, scalar_minima, ScalarMinima};
use lae::training::{train, TrainConfig};
use lae::verify::shrinkage_points;
use lae::{DataMatrix, LaeParams, LossKind, LossSpec, Matrix};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Larger problems take too long to train on a page.
pub const MAX_TRAIN_DIM: usize = 40;
/// Enumeration grows like C(m, k) · k(m−k).
pub const MAX_MORSE_DIM: usize = 8;

type Result<T> = std::result::Result<T, String>;

fn kind(name: &str) -> Result<LossKind> {
    name.parse().map_err(|e: lae::Error| e.to_string())
}

fn spec(kind: LossKind, lambda: f64) -> Result<LossSpec> {
    match kind {
        LossKind::Unregularized => Ok(LossSpec::unregularized()),
        k => LossSpec::new(k, lambda).map_err(|e| e.to_string()),
    }
}

fn to_json(v: &impl Serialize) -> String {
    serde_json::to_string(v).expect("plain data")
}

#[derive(Serialize)]
struct ScalarLandscape {
    /// Row-major `steps × steps`; row `i` is `w2`, column `j` is `w1`, both over `[-extent, extent]`.
    loss: Vec<f64>,
    steps: usize,
    extent: f64,
    min: f64,
    max: f64,
    /// Isolated minima `(w1, w2)`; empty when the minima form a hyperbola.
    points: Vec<(f64, f64)>,
    /// `w2·w1` along the hyperbola of minima.
    hyperbola: Option<f64>,
}

pub fn scalar_landscape_json(kind_name: &str, x2: f64, lambda: f64, extent: f64, steps: usize) -> Result<String> {
    let kind = kind(kind_name)?;
    if !(extent > 0.0 && extent.is_finite()) || !(2..=400).contains(&steps) {
        return Err("need extent > 0 and 2 <= steps <= 400".into());
    }
    let spec = spec(kind, lambda)?;
    let minima = scalar_minima(kind, x2, lambda).map_err(|e| e.to_string())?;
    let data = DataMatrix::new(Matrix::from_element(1, 1, x2.sqrt())).map_err(|e| e.to_string())?;
    let at = |i: usize| -extent + 2.0 * extent * i as f64 / (steps - 1) as f64;
    let mut grid = Vec::with_capacity(steps * steps);
    for i in 0..steps {
        for j in 0..steps {
            let p = LaeParams::new(Matrix::from_element(1, 1, at(j)), Matrix::from_element(1, 1, at(i))).map_err(|e| e.to_string())?;
            grid.push(loss(&spec, &p, &data).map_err(|e| e.to_string())?);
        }
    }
    let (min, max) = grid.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    let (points, hyperbola) = match minima {
        ScalarMinima::Points(p) => (p, None),
        ScalarMinima::Hyperbola { product } => (Vec::new(), Some(product)),
    };
    Ok(to_json(&ScalarLandscape { loss: grid, steps, extent, min, max, points, hyperbola }))
}

#[derive(Serialize)]
struct ShrinkageCurve {
    kind: LossKind,
    sigma2: Vec<f64>,
    tau2: Vec<f64>,
    theory: Vec<f64>,
    transpose_gap: f64,
}

/// Trains all three losses on `m × m` data with singular values `m, …, 1` and
/// reports the eigenvalues of `W2W1` against their predicted shrinkage.
pub fn shrinkage_json(m: usize, k: usize, lambda: f64, epochs: usize, seed: u64) -> Result<String> {
    if m == 0 || m > MAX_TRAIN_DIM || k == 0 || k > m {
        return Err(format!("need 1 <= k <= m <= {MAX_TRAIN_DIM}"));
    }
    let data = synthetic(m, m, &descending_spectrum(m), seed).map_err(|e| e.to_string())?;
    let mut curves = Vec::new();
    for kind in LossKind::ALL {
        let config = TrainConfig { kind, lambda, epochs, seed, record_every: epochs.max(1), ..TrainConfig::default() };
        config.validate().map_err(|e| e.to_string())?;
        let (p, _) = train(&config, &data, k).map_err(|e| e.to_string())?;
        let report = shrinkage_points(&data, &p.product(), k, kind, lambda).map_err(|e| e.to_string())?;
        curves.push(ShrinkageCurve {
            kind,
            sigma2: report.points.iter().map(|q| q.sigma2).collect(),
            tau2: report.points.iter().map(|q| q.tau2).collect(),
            theory: report.points.iter().map(|q| q.theory).collect(),
            transpose_gap: p.transpose_gap(),
        });
    }
    Ok(to_json(&curves))
}

#[derive(Serialize)]
struct Cell {
    /// 1-based.
    set: Vec<usize>,
    index: usize,
    value: f64,
}

#[derive(Serialize)]
struct MorseView {
    cells: Vec<Cell>,
    cells_per_index: Vec<usize>,
    q_binomial: Vec<usize>,
    /// `(upper, lower, count)` for every connected pair of adjacent-index cells.
    trajectories: Vec<(Vec<usize>, Vec<usize>, usize)>,
    all_even: bool,
}

/// Critical `k`-planes of the reconstruction loss for data with singular values `m, …, 1`.
pub fn morse_json(m: usize, k: usize) -> Result<String> {
    if m == 0 || m > MAX_MORSE_DIM || k == 0 || k > m {
        return Err(format!("need 1 <= k <= m <= {MAX_MORSE_DIM}"));
    }
    let data = synthetic(m, m, &descending_spectrum(m), 0).map_err(|e| e.to_string())?;
    let cells = enumerate_cells(&data, k).map_err(|e| e.to_string())?;
    let parity = boundary_parity(m, k).map_err(|e| e.to_string())?;
    Ok(to_json(&MorseView {
        cells: cells
            .into_iter()
            .map(|c| Cell { set: c.index_set.one_based(), index: c.morse_index, value: c.critical_value })
            .collect(),
        cells_per_index: parity.cells_per_index,
        q_binomial: parity.q_binomial,
        trajectories: parity.connections.into_iter().map(|t| (t.upper.one_based(), t.lower.one_based(), t.count)).collect(),
        all_even: parity.all_even,
    }))
}

#[wasm_bindgen]
pub fn scalar_landscape(kind: &str, x2: f64, lambda: f64, extent: f64, steps: usize) -> std::result::Result<String, JsError> {
    scalar_landscape_json(kind, x2, lambda, extent, steps).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn shrinkage(m: usize, k: usize, lambda: f64, epochs: usize, seed: u64) -> std::result::Result<String, JsError> {
    shrinkage_json(m, k, lambda, epochs, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn morse(m: usize, k: usize) -> std::result::Result<String, JsError> {
    morse_json(m, k).map_err(|e| JsError::new(&e))
}
