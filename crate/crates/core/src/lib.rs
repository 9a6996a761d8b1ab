//! Core simulation for interactive swarm leader identification.
//!
//! A prober agent moves through an energy-based flock whose hidden leader
//! steers toward a goal. This crate holds the ground-truth dynamics, the
//! episode engine with graph-snapshot observations, the shaped reward, and
//! the recursive Bayesian leader estimator.

pub mod dynamics;
pub mod env;
pub mod error;
pub mod estimator;
pub mod geom;
pub mod observation;
pub mod reward;
pub mod rng;
pub mod trace;

pub use dynamics::{FlockParams, SwarmState};
pub use env::{decode_action, ActionId, Env, EnvConfig, StepInfo, StepResult, VecEnv};
pub use error::{CoreError, Result};
pub use estimator::{Posterior, RatioDataset, RoleDensities};
pub use geom::Vec2;
pub use observation::{GraphSnapshot, InteractionLedger};
pub use reward::RewardBreakdown;
