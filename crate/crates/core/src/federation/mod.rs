//! The federated-learning engine.
//!
//! One synchronous round: the aggregator broadcasts the global model, samples
//! nodes under the [`AggregationScheme`], each sampled node trains a copy on
//! its current drift view and reports the parameter delta, and the aggregator
//! consolidates the deltas into the next global model.

mod node;
mod round;
mod scheme;
mod sim;

pub use node::{NodeState, NodeStatus};
pub use round::{
    consolidate, consolidation_weights, init_global, local_round, run_round, GlobalModelRegistry,
    LocalOutcome, ModelUpdate, RoundReport,
};
pub use scheme::{sample_nodes, AggregationScheme, Consolidation, Sampling};
pub use sim::{AutoRecovery, Simulation};
