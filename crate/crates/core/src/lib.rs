//! Stochastic conditional-wavefunction simulator for driven atoms coupled to
//! a discretized photonic band.
//!
//! The crate is organized bottom-up:
//!
//! * [`hilbert`]: collective-spin and truncated multimode Fock bases, with
//!   the operator applications everything else is built from.
//! * [`bath`]: band discretization, drive waveforms, and the vacuum noise
//!   sampler that seeds each trajectory.
//! * [`integrator`]: the adaptive exponential Rosenbrock stepper (exprb32)
//!   and phi-function actions.
//! * [`dynamics`]: the batched trajectory engine combining the above.
//! * [`observables`]: photonic and atomic estimators with jackknife errors.
//! * [`oracle`]: a small-scale exact solver used to validate the stochastic
//!   method, deliberately built on different numerics.

pub mod bath;
pub mod dynamics;
pub mod error;
pub mod hilbert;
pub mod integrator;
pub mod observables;
pub mod oracle;
pub mod scalar;

pub use error::{Result, SimError};
pub use scalar::Real;
