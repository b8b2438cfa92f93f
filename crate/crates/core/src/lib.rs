//! Detection-time distributions for repeatedly measured quantum systems.
//!
//! A system evolves under a Hamiltonian `H` and is interrogated every `dt`
//! by a projective detector `pi`. Two engines compute the distribution of
//! the first detection time:
//!
//! - the hazard-rate engine ([`conditional`] + [`distribution`]): conditional
//!   no-click evolution under the projected Hamiltonian, hazard
//!   `w(t) = p(t)/dt`, cumulative hazard `u`, density `w e^{-u}`;
//! - the stroboscopic chain ([`chain`]): exact repeated collapse, step by
//!   step, which serves as the oracle the first engine is checked against.
//!
//! [`scenarios`] supplies builders for the shipped physical setups and
//! [`run`]/[`config`] the file-driven front end.

pub mod chain;
pub mod conditional;
pub mod config;
pub mod distribution;
pub mod error;
pub mod linalg;
pub mod run;
pub mod scenarios;

pub use chain::{branch_ledger, run_chain, zeno_sweep, BranchLedger, ChainResult, ZenoSweep};
pub use conditional::{conditional_hamiltonian, ConditionalEvolution, HazardSeries};
pub use distribution::{build_distribution, povm_set, DetectionDistribution, PovmSet};
pub use error::{Error, Result};
pub use linalg::{
    make_projector, HermitianOperator, Projector, QuantumState, UnitaryPropagator, C64,
};
pub use scenarios::{
    golden_rule_rate, ClassicalPacketOracle, Scenario, ScenarioSpec, TunnelingPlan,
};
