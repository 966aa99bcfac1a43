//! Two-agent reinforcement learning through a discrete (VQ) communication
//! bottleneck, governed by a dynamic representational circuit breaker (DRCB):
//! statistical probes over the symbol channel, an EMA collusion score, four
//! escalating intervention layers, and an offline audit suite.
//!
//! The crate is organized around the simulation loop:
//!
//! * [`env`] — contextual iterated prisoner's dilemma with parity-modulated
//!   payoffs and a pluggable digit-label source (synthetic or IDX1 files).
//! * [`numeric`] — minimal dense-network substrate with a resettable Adam
//!   optimizer.
//! * [`aim`] — the VQ codebook bottleneck: quantization, commitment loss,
//!   utilization tracking, targeted re-init, and the full shuffle.
//! * [`agents`] — the two A2C agents (speaker and listener).
//! * [`observers`] — the randomized observer pool (moving-target defense).
//! * [`probes`] — symbol-histogram JSD drift, codebook L2 drift, and the EMA
//!   collusion score.
//! * [`governor`] — the intervention state machine.
//! * [`analysis`] — offline statistics (Welch, Levene, TOST), safety metrics,
//!   phase classification, and policy-symbol covariance tables.
//! * [`harness`] — seeded multi-run orchestration for the three experimental
//!   groups, plus the threshold sweep.

pub mod agents;
pub mod aim;
pub mod analysis;
pub mod config;
pub mod env;
pub mod governor;
pub mod harness;
pub mod idx;
pub mod log;
pub mod numeric;
pub mod observers;
pub mod probes;
pub mod special;

pub use config::{ExperimentConfig, Group};
pub use harness::{run_one, RunOutcome};
