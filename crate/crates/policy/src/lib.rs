//! Timed graph relation encoder with an S5 sequence core, actor-critic heads
//! and a recurrent PPO trainer.

pub mod adam;
pub mod autodiff;
pub mod batch;
pub mod checkpoint;
pub mod dist;
pub mod error;
pub mod eval;
pub mod network;
pub mod params;
pub mod ppo;
pub mod tensor;

pub use autodiff::{Tape, Var};
pub use batch::GraphBatch;
pub use error::{PolicyError, Result};
pub use network::{Policy, PolicyConfig, PolicyState};
pub use params::ParamSet;
pub use tensor::Tensor;
