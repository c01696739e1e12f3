//! Simulation and verification toolkit for positive Markov processes in
//! Laplace duality.
//!
//! Two processes `X` (started at `x`) and `Y` (started at `y`) on `[0, ∞]`
//! are dual when `E_x[exp(-X_t y)] = E^y[exp(-x Y_t)]` for all `x`, `y`, `t`,
//! with the boundary products `0·∞` resolved by an explicit convention pair.
//! The crate builds the Lévy–Khintchine mechanisms behind such processes,
//! bundles them into bivariate duality symbols, simulates the processes with
//! jump SDE steppers and ODE flows, and checks the duality identity, complete
//! monotonicity, and the generator/symbol relation numerically.
//!
//! Module map:
//! - [`mechanisms`]: the four Lévy–Khintchine mechanism classes and their
//!   closed-form evaluation.
//! - [`symbols`]: boundary-exponential conventions, the seven-term duality
//!   symbol bundle, symbol transposition and pregenerator checks.
//! - [`flows`]: the deterministic branching flow `du/dt = -Ψ(u)` and Laplace
//!   transforms built from it.
//! - [`paths`]: Euler jump-SDE steppers and the parallel Monte-Carlo driver.
//! - [`duality`]: Monte-Carlo Laplace estimates, two-sided duality reports,
//!   complete-monotonicity and generator finite-difference checks.
//! - [`config`]: serde mirrors of the mechanism, process, and symbol types
//!   for declarative experiment files.

pub mod config;
pub mod duality;
pub mod flows;
pub mod mechanisms;
pub mod paths;
pub mod rng;
pub mod symbols;

mod special;

/// Error taxonomy shared by every module.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// A type invariant is violated (bad atom location, negative mass, ...).
    #[error("validation: {0}")]
    Validation(String),

    /// Arguments are outside an operation's contract (unrecognized dual
    /// pairing, missing closed form, empty grid, ...).
    #[error("contract: {0}")]
    Contract(String),

    /// A numeric route failed to reach its required accuracy.
    #[error("numeric accuracy: {0}")]
    NumericAccuracy(String),

    /// The adaptive ODE stepper underflowed its step size.
    #[error("stiffness: {0}")]
    Stiffness(String),
}

pub type Result<T> = std::result::Result<T, Error>;
