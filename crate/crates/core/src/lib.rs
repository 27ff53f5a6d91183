//! Exact design and inference for two-arm response-adaptive trials with binary outcomes.
//!
//! The pipeline: pick a [`policy::Policy`], compute its terminal path
//! coefficients with [`path_engine::path_weights`], build a test with
//! [`exact_tests::TestRule::build`], and evaluate operating characteristics
//! with [`oc`]. [`cmdp`] optimizes allocation tables under type I error and
//! patient-benefit constraints; [`montecarlo`] simulates trials and runs the
//! re-randomization test.

pub mod cmdp;
pub mod error;
pub mod exact_tests;
pub mod montecarlo;
pub mod numerics;
pub mod oc;
pub mod path_engine;
pub mod policy;
pub mod state_space;
pub mod wald;

pub use error::{Error, Result};
pub use exact_tests::{TestKind, TestRule};
pub use path_engine::{path_weights, PathWeightTable};
pub use policy::{Policy, PolicyKind, PolicyTable};
pub use state_space::{Arm, LayerIndex, TrialState};
pub use wald::ExtendedStat;

/// Crate version recorded in emitted artifacts.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
