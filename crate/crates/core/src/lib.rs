//! Desk-scale federated class-unlearning simulator.
//!
//! Trains small CNN classifiers under federated orchestration, removes
//! target categories by TF-IDF-guided channel pruning followed by
//! fine-tuning, and evaluates the result against full-retrain and Fisher
//! baselines (U/R-set accuracy, speedup, membership-inference gap, KL
//! divergence of class-accuracy distributions).

pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod fed;
pub mod model;
pub mod nn;
pub mod repr;
pub mod scrub;
pub mod seeding;
pub mod unlearn;

pub use error::{Error, Result};
