//! Stability analysis for randomly switched systems with disturbances.
//!
//! The crate covers switching-signal generation, RK4 integration aligned to
//! switching instants, multiple ISS-Lyapunov checks, certificate
//! computation, Monte Carlo verification of ISS in the mean, and
//! universal-formula controller synthesis.

pub mod certify;
pub mod cli;
pub mod error;
pub(crate) mod linalg;
pub mod lyapunov;
pub mod model;
pub mod montecarlo;
pub mod sim;
pub mod stats;
pub mod switching;
pub mod synthesis;

pub use error::{Error, Result};
pub use lyapunov::LyapunovFamily;
pub use model::{DisturbanceSignal, PowerGain, SwitchedSystem, Vector};
pub use switching::SwitchingPath;
pub use synthesis::Controller;
