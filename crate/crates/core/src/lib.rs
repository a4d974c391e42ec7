//! Deterministic federated-learning fleet simulator.
//!
//! A fleet of simulated edge nodes (roadside units) trains a shared classifier
//! with an aggregator agent: the aggregator creates a global model, nodes train
//! it on private non-i.i.d. shards and report parameter deltas, and the
//! aggregator consolidates those deltas under a configurable aggregation scheme.
//! On top of the round loop sit fault injection, checkpointing and three
//! recovery strategies for a node that loses its local model.
//!
//! Everything is seeded: the same configuration and master seed reproduce the
//! same metrics byte for byte, independent of the rayon thread count.
//!
//! Modules:
//! - [`model`]: dense MLP classifier, hand-derived gradients, SGD, delta arithmetic.
//! - [`dataset`]: IDX parsing, synthetic blobs, partitioning, class-drift views.
//! - [`federation`]: node state, aggregation scheme, round loop.
//! - [`faults`]: fault events, checkpoint store, recovery strategies.
//! - [`experiment`]: scenario config, case-study orchestration, CSV/SVG output.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod faults;
pub mod federation;
pub mod model;
pub mod rng;

pub use dataset::{DriftSchedule, LabeledDataset, PartitionSpec, PartitionStrategy};
pub use error::{Error, Result};
pub use experiment::{MetricsRow, ScenarioConfig};
pub use faults::{
    CheckpointStore, FaultEvent, FaultKind, RecoveryKind, RecoveryReport, RecoveryStrategy,
};
pub use federation::{
    AggregationScheme, Consolidation, GlobalModelRegistry, ModelUpdate, NodeState, NodeStatus,
    Sampling,
};
pub use model::{Gradients, Matrix, MlpModel, ModelDims, ParamVector, TrainConfig};
