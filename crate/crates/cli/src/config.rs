use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lae::data::{self, descending_spectrum, mean_center, synthetic};
use lae::training::{Optimizer, TrainConfig};
use lae::{DataMatrix, IndexSet, LossKind, Matrix};
use serde::{Deserialize, Serialize};

use crate::error::{config_error, CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Landscape,
    Sweep,
    Morse,
    Pca,
    Verify,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Landscape => "landscape",
            Command::Sweep => "sweep",
            Command::Morse => "morse",
            Command::Pca => "pca",
            Command::Verify => "verify",
        }
    }
}

/// Synthetic singular values.
#[derive(Debug, Clone, PartialEq)]
pub enum Spectrum {
    /// `N, N−1, …, 1`; `None` means `N = min(m, n)`.
    Descending(Option<usize>),
    Values(Vec<f64>),
    /// `X = I` (m×n), so `XXᵀ = I` when `n ≥ m`.
    Identity,
}

impl Spectrum {
    pub fn values(&self, m: usize, n: usize) -> Option<Vec<f64>> {
        match self {
            Spectrum::Descending(count) => Some(descending_spectrum(count.unwrap_or(m.min(n)))),
            Spectrum::Values(v) => Some(v.clone()),
            Spectrum::Identity => None,
        }
    }
}

impl fmt::Display for Spectrum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Spectrum::Descending(None) => f.write_str("descending"),
            Spectrum::Descending(Some(c)) => write!(f, "descending:{c}"),
            Spectrum::Identity => f.write_str("identity"),
            Spectrum::Values(v) => {
                let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

impl FromStr for Spectrum {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        match s {
            "descending" => return Ok(Spectrum::Descending(None)),
            "identity" => return Ok(Spectrum::Identity),
            _ => {}
        }
        if let Some(count) = s.strip_prefix("descending:") {
            return count
                .trim()
                .parse()
                .map(|c| Spectrum::Descending(Some(c)))
                .map_err(|_| format!("bad spectrum count `{count}`"));
        }
        s.split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| format!("bad spectrum value `{v}`")))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Spectrum::Values)
    }
}

impl Serialize for Spectrum {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Spectrum {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Everything a run needs. Serialized next to its artifacts; feeding that
/// file back through `--config` repeats the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub lambda: Vec<f64>,
    pub kind: LossKind,
    pub optimizer: Optimizer,
    /// `None` lets `pca` pick `0.5 / σ_1²`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    pub epochs: usize,
    pub init_scale: f64,
    pub record_every: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub spectrum: Spectrum,
    /// IDX images or CSV (one sample per row); mean-centered on load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// Keep only the first `samples` columns of the input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    pub out: PathBuf,
    /// Landscape: restrict to these sets (1-based, e.g. "{1,3}"); empty means all.
    #[serde(default)]
    pub index_sets: Vec<String>,
    /// Landscape: frames per index set, seeded `seed, seed+1, …`.
    pub frames: usize,
}

impl ExperimentConfig {
    pub fn defaults(command: Command) -> Self {
        let base = ExperimentConfig {
            m: 20,
            n: 20,
            k: 10,
            lambda: vec![10.0],
            kind: LossKind::Sum,
            optimizer: Optimizer::Adam,
            lr: Some(0.05),
            epochs: 4000,
            init_scale: 0.1,
            record_every: 10,
            batch_size: None,
            seed: 0,
            spectrum: Spectrum::Descending(None),
            input: None,
            samples: None,
            out: PathBuf::from("runs").join(command.as_str()),
            index_sets: Vec::new(),
            frames: 1,
        };
        match command {
            Command::Train => base,
            Command::Sweep => ExperimentConfig { lambda: vec![1.0, 10.0, 100.0], ..base },
            Command::Landscape | Command::Verify => {
                ExperimentConfig { m: 4, n: 4, k: 2, lambda: vec![0.5], ..base }
            }
            Command::Morse => ExperimentConfig { m: 4, n: 4, k: 2, ..base },
            Command::Pca => ExperimentConfig { optimizer: Optimizer::Gd, lr: None, ..base },
        }
    }

    /// Command defaults, overlaid by the TOML file at `path` (if any).
    pub fn load(command: Command, path: Option<&Path>) -> Result<Self> {
        let defaults = Self::defaults(command);
        let Some(path) = path else { return Ok(defaults) };
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_owned(), source })?;
        let file: toml::Table = text.parse().map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        let mut merged = toml::Table::try_from(&defaults).map_err(|e| config_error(e.to_string()))?;
        merged.extend(file);
        merged.try_into().map_err(|e: toml::de::Error| config_error(format!("{}: {}", path.display(), e.message())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is plain data")
    }

    pub fn single_lambda(&self) -> Result<f64> {
        match self.lambda.as_slice() {
            [l] => Ok(*l),
            [] => Err(config_error("lambda is empty")),
            _ => Err(config_error("only `sweep` takes a list of lambdas")),
        }
    }

    pub fn validate(&self, command: Command) -> Result<()> {
        if self.k == 0 {
            return Err(config_error("k must be at least 1"));
        }
        if self.input.is_none() {
            if self.m == 0 || self.n == 0 {
                return Err(config_error("m and n must be at least 1"));
            }
            if self.k > self.m {
                return Err(config_error(format!("k = {} exceeds m = {}", self.k, self.m)));
            }
        }
        if self.samples == Some(0) {
            return Err(config_error("samples must be at least 1"));
        }
        if self.lambda.is_empty() {
            return Err(config_error("lambda list is empty"));
        }
        if let Some(l) = self.lambda.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(config_error(format!("lambda must be finite and nonnegative, got {l}")));
        }
        if command != Command::Sweep {
            self.single_lambda()?;
        }
        if matches!(command, Command::Train | Command::Sweep | Command::Pca) {
            if self.epochs == 0 {
                return Err(config_error("epochs must be at least 1"));
            }
            if let Some(lr) = self.lr {
                if !(lr > 0.0 && lr.is_finite()) {
                    return Err(config_error("lr must be positive"));
                }
            }
        }
        match command {
            Command::Train => {
                self.train_config(self.lambda[0])?;
            }
            Command::Sweep => {
                for l in &self.lambda {
                    self.train_config(*l)?;
                }
            }
            Command::Pca => {
                if !matches!(self.optimizer, Optimizer::Gd | Optimizer::TiedGd) {
                    return Err(config_error(format!("pca runs gd or tied_gd, not {}", self.optimizer)));
                }
                if self.lambda[0] <= 0.0 {
                    return Err(config_error("pca needs lambda > 0"));
                }
            }
            Command::Morse if self.m > lae::grassmann::MAX_DIM => {
                return Err(config_error(format!(
                    "m = {} exceeds the Morse enumeration limit {}",
                    self.m,
                    lae::grassmann::MAX_DIM
                )));
            }
            Command::Landscape if self.frames == 0 => return Err(config_error("frames must be at least 1")),
            _ => {}
        }
        self.parsed_index_sets()?;
        Ok(())
    }

    /// Training settings for one λ. λ = 0 trains the unregularized loss.
    pub fn train_config(&self, lambda: f64) -> Result<TrainConfig> {
        let config = TrainConfig {
            kind: if lambda == 0.0 { LossKind::Unregularized } else { self.kind },
            lambda,
            optimizer: self.optimizer,
            learning_rate: self.lr.unwrap_or(0.05),
            epochs: self.epochs,
            init_scale: self.init_scale,
            seed: self.seed,
            record_every: self.record_every,
            batch_size: self.batch_size,
            tied_init: false,
        };
        config.validate().map_err(|e| config_error(e.to_string()))?;
        Ok(config)
    }

    pub fn parsed_index_sets(&self) -> Result<Vec<IndexSet>> {
        self.index_sets
            .iter()
            .map(|s| s.parse::<IndexSet>().map_err(|e| config_error(format!("index set `{s}`: {e}"))))
            .collect()
    }

    /// Loads or synthesizes `X` and records its actual shape in the config.
    pub fn load_data(&mut self) -> Result<DataMatrix> {
        let Some(path) = &self.input else {
            let d = match self.spectrum.values(self.m, self.n) {
                Some(values) => synthetic(self.m, self.n, &values, self.seed)?,
                None => DataMatrix::new(Matrix::identity(self.m, self.n))?,
            };
            return Ok(d);
        };
        let mut x = read_matrix(path)?;
        if let Some(s) = self.samples {
            if s < x.ncols() {
                x = x.columns(0, s).into_owned();
            }
        }
        if self.k > x.nrows() {
            return Err(config_error(format!("k = {} exceeds the input dimension {}", self.k, x.nrows())));
        }
        self.m = x.nrows();
        self.n = x.ncols();
        Ok(mean_center(&x)?)
    }
}

/// IDX images (detected by magic number) or CSV with one sample per row.
pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let bytes = std::fs::read(path).map_err(|source| CliError::Io { path: path.to_owned(), source })?;
    if data::read_idx_header(&bytes).is_ok() {
        return Ok(data::parse_idx(&bytes).map_err(lae::Error::from)?.matrix);
    }
    read_csv(path, &bytes)
}

fn read_csv(path: &Path, bytes: &[u8]) -> Result<Matrix> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).comment(Some(b'#')).trim(csv::Trim::All).from_reader(bytes);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|source| CliError::Csv { path: path.to_owned(), source })?;
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            // a non-numeric first row is a header
            Err(_) if line == 0 => continue,
            Err(e) => return Err(config_error(format!("{}: record {}: {e}", path.display(), line + 1))),
        }
    }
    let width = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || width == 0 {
        return Err(config_error(format!("{}: no numeric rows", path.display())));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != width) {
        return Err(config_error(format!("{}: row {} has {} fields, expected {width}", path.display(), i + 1, rows[i].len())));
    }
    // samples become columns
    Ok(Matrix::from_fn(width, rows.len(), |i, j| rows[j][i]))
}
