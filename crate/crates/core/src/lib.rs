//! Multi-fidelity Bayesian optimization with a learned fidelity embedding.
//!
//! A Gaussian process over `(design, fidelity)` pairs uses the product kernel
//! `k_x(x, x') * k_z(φ(z), φ(z'))`, where `φ` is a small sigmoid network
//! trained jointly with the kernel hyperparameters by maximizing the marginal
//! likelihood. Evaluations are chosen by entropy search per unit cost and
//! the acquisition is maximized with DIRECT.

pub mod acquisition;
pub mod error;
pub mod global_opt;
pub mod gp;
pub mod harness;
pub mod hyperlearn;
pub mod kernels;
pub mod mfbo;
pub mod objectives;
pub mod space;
pub mod warp;

pub use error::{Error, ObjectiveError, Result};
pub use space::{Bounds, Fidelity};
