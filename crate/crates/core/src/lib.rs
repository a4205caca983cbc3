//! Flexible job-shop scheduling: instances, a heterogeneous-graph scheduling
//! environment, dispatching rules, an exact solver, graph-attention policies
//! trained with PPO, and diverse policy-set selection.

pub mod autodiff;
pub mod bench;
pub mod config;
pub mod dispatch;
pub mod dssp;
pub mod exact;
pub mod graph_state;
pub mod inference;
pub mod instance;
pub mod model_io;
pub mod policy;
pub mod ppo;
pub mod schedule;
