//! Matrix-preconditioned optimizers (Shampoo, SOAP, Muon, AdaMuon and the
//! usual wrappers) together with a width/depth hyperparameter-transfer engine
//! and a small verification harness built on analytic-gradient MLPs.
//!
//! Learning rates never enter the optimizer steps: [`optim`] produces raw
//! update directions, [`scaling`] turns layer shapes into per-layer
//! hyperparameters, and [`harness::trainer`] combines the two.

pub mod harness;
pub mod linalg;
pub mod models;
pub mod optim;
pub mod rng;
pub mod scaling;

pub use linalg::{LinalgError, Matrix};
