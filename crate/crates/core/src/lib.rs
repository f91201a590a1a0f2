//! Feature-partitioned learning over a peer-to-peer network.
//!
//! Each agent owns a column block `A_i` of the design matrix and the shared
//! response `b`, and the network jointly solves
//! `min_x f(Ax − b) + Σ_i r_i(x_i)` without ever exchanging `A_i` or `x_i`.
//! Agents run a consensus ADMM on the loss dual and exchange only `μ_i ∈ R^M`.

// `!(x > 0)` is deliberate: NaN must fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod cli;
pub mod data;
pub mod error;
pub mod functions;
pub mod inner;
pub mod linalg;
pub mod oracle;
pub mod scalar;
pub mod simulator;
pub mod topology;

pub use agent::{AgentState, MuMessage, Orientation};
pub use data::FeaturePartition;
pub use error::{Error, Result};
pub use functions::FunctionSpec;
pub use inner::{BcdConfig, BcdOutcome, BcdState, LocalBlock, StepRule};
pub use oracle::{OracleMethod, OracleSolution};
pub use simulator::{run, RunConfig, RunHistory, Schedule, StopReason};
pub use scalar::Real;
pub use topology::Topology;

pub type FeaturePartitionF64 = FeaturePartition<f64>;
pub type FeaturePartitionF32 = FeaturePartition<f32>;
pub type FunctionSpecF64 = FunctionSpec<f64>;
pub type FunctionSpecF32 = FunctionSpec<f32>;
pub type AgentStateF64 = AgentState<f64>;
pub type AgentStateF32 = AgentState<f32>;
pub type RunConfigF64 = simulator::RunConfig<f64>;
pub type RunHistoryF64 = simulator::RunHistory<f64>;
pub type OracleSolutionF64 = oracle::OracleSolution<f64>;
