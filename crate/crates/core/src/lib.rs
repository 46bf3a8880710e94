//! L2-regularized linear autoencoders.
//!
//! Losses and gradients ([`model`]), closed-form critical manifolds and
//! curvature counts ([`landscape`]), Morse data of the subspace
//! reconstruction loss on the Grassmannian ([`grassmann`]), optimizers and
//! PCA recovery from a trained decoder ([`training`]), and the numerical
//! oracles that check all of the above against each other ([`verify`]).

// `!(x > 0.0)` guards are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod grassmann;
pub mod landscape;
pub mod model;
pub mod spectra;
pub mod training;
pub mod verify;

pub use data::DataMatrix;
pub use error::{Error, Result};
pub use landscape::{CriticalSpec, CurvatureSignature, IndexSet};
pub use model::{LaeParams, LossKind, LossSpec};
pub use spectra::{Matrix, SpectralDecomposition, Vector};
