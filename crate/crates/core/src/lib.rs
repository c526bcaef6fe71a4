//! Learning separable Hamiltonians from trajectories with symplectic
//! recurrent networks, reconstructing hidden coordinates and parameters from
//! partial observations with an LSTM encoder, and checking learned dynamics
//! through energy conservation and Lyapunov spectra on the Henon-Heiles
//! system.

pub mod analysis;
pub mod data;
pub mod dynamics;
pub mod error;
pub mod lstm;
pub mod models;
pub mod nn;
pub mod training;

pub use dynamics::{PhaseState, PotentialParams, Trajectory};
pub use error::{Error, Result};
