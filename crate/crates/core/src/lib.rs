//! A drift-capable planar vehicle simulator and a from-scratch soft
//! actor-critic controller that learns to follow drift reference
//! trajectories at high speed.
//!
//! The crate is organized around the control loop:
//!
//! * [`vehicle`] — dynamic bicycle model with saturating tires
//! * [`track`] — procedural tracks, reference trajectories, path queries
//! * [`guidance`] — vector field guidance, error state, observation, terminals
//! * [`reward`] — partial rewards and the speed-scaled total
//! * [`control`] — action range mapping and the smoothing filter
//! * [`neural`] — dense networks, reverse-mode gradients, Adam
//! * [`sac`] — replay buffer, squashed Gaussian policy, SAC updates, training
//! * [`env`] — the episodic rollout environment tying the above together
//! * [`eval`] — rollout metrics (C.T.E., H.A.E., SMOS, SLIP, ...) and tables
//! * [`config`] — run configuration file format
//! * [`pipeline`] — the operations behind the command-line verbs

pub mod checkpoint;
pub mod config;
pub mod control;
pub mod env;
pub mod eval;
pub mod guidance;
pub mod math;
pub mod neural;
pub mod pipeline;
pub mod reward;
pub mod rng;
pub mod sac;
pub mod track;
pub mod vehicle;

pub use vehicle::{VehicleParams, VehicleState};
