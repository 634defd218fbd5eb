//! Fairness-constrained training with an augmented Lagrangian.
//!
//! The crate is organised around the pieces of the method:
//!
//! - [`data`]: tabular ingestion, a synthetic biased-data generator and
//!   stratified splits.
//! - [`fairmetrics`]: exact confusion-matrix fairness functionals (DP, EO,
//!   equality of odds, predictive parity) and the NVP model-selection rule.
//! - [`lineargame`]: the finite-pool two-player game with a proximal dual
//!   player, plus numerical verifiers for its regret and saddle-point bounds.
//! - [`diffcore`]: differentiable predictors, logistic surrogates of the
//!   error and group moments, analytic gradients and SGD steps.
//! - [`trainers`]: the minibatch augmented-Lagrangian trainer and the five
//!   baseline trainers.
//! - [`harness`]: sweeps, NVP aggregation, training-profile series and the
//!   standard-dataset table.
//!
//! A narrative guide with runnable snippets lives in `book/` at the workspace
//! root; its code blocks are compiled and run as doctests of this crate.
//!
//! ```
//! use fairalm::lineargame::{run_game, saddle_gap, GameConfig, PoolStats};
//! use fairalm::Constraint;
//!
//! // two classifiers: an accurate but unfair one, and a fair one
//! let stats = PoolStats::from_residuals(vec![0.1, 0.3], vec![0.2, 0.0]).unwrap();
//! let config = GameConfig::new(5.0, 1_000, Constraint::EqualOpportunity(true)).unwrap();
//! let outcome = run_game(&config, &stats).unwrap();
//! assert!(outcome.q_bar.weights()[1] > 0.99);
//! let report = saddle_gap(&outcome, &config, &stats);
//! assert!(report.nu_hat >= 0.0);
//! ```

pub mod config;
pub mod data;
pub mod diffcore;
pub mod fairmetrics;
pub mod harness;
pub mod lineargame;
pub mod trainers;

mod constraint;
mod error;

pub use constraint::Constraint;
pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/linear-game.md")]
    mod linear_game {}
    #[doc = include_str!("../../../book/src/bounds.md")]
    mod bounds {}
    #[doc = include_str!("../../../book/src/surrogates.md")]
    mod surrogates {}
    #[doc = include_str!("../../../book/src/trainers.md")]
    mod trainers {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
