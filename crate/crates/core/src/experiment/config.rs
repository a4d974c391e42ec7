//! Scenario configuration: a strict JSON document whose every key has a
//! default mirroring the roadside-unit case study.
//!
//! ```json
//! {
//!   "dataset":   {"source": "idx", "dir": "data/mnist", "train_limit": 8000, "test_limit": 2000},
//!   "num_nodes": 10,
//!   "partition": {"strategy": "uniform"},
//!   "drift":     {"base_classes": [0,2,4,6,8], "drift_classes": [1,3,5,7,9],
//!                 "start_round": 10, "ramp_rounds": 10, "target_fraction": 0.5},
//!   "scheme":    {"consolidation": "data_weighted", "local_epochs": 1, "sampling": {"kind": "all"}},
//!   "train":     {"learning_rate": 0.05, "batch_size": 32, "hidden_dim": 64},
//!   "faults":    [{"round": 15, "node_id": 0, "kind": "offline_model_loss"}],
//!   "recovery":  {"strategies": ["retrain_scratch", "reinstate_historical", "federated_push"]},
//!   "rounds":    20,
//!   "seed":      42
//! }
//! ```

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dataset::{DriftSchedule, PartitionSpec, PartitionStrategy};
use crate::error::{Error, Result};
use crate::faults::{FaultEvent, FaultKind, RecoveryKind, RecoveryStrategy};
use crate::federation::{AggregationScheme, Consolidation, Sampling};
use crate::model::TrainConfig;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// MNIST-format IDX files. `dir` falls back to `--data-dir`, then
    /// `FEDFLEET_DATA_DIR`.
    Idx {
        #[serde(default)]
        dir: Option<PathBuf>,
        #[serde(default = "default_train_limit")]
        train_limit: usize,
        #[serde(default = "default_test_limit")]
        test_limit: usize,
    },
    /// Gaussian blobs; needs no files.
    Synthetic {
        #[serde(default = "default_samples_per_class")]
        samples_per_class: usize,
        #[serde(default = "default_test_samples_per_class")]
        test_samples_per_class: usize,
        #[serde(default = "default_synth_dims")]
        dims: usize,
        #[serde(default = "default_synth_classes")]
        num_classes: usize,
        #[serde(default = "default_spread")]
        spread: f64,
    },
}

fn default_train_limit() -> usize {
    8000
}
fn default_test_limit() -> usize {
    2000
}
fn default_samples_per_class() -> usize {
    800
}
fn default_test_samples_per_class() -> usize {
    200
}
fn default_synth_dims() -> usize {
    784
}
fn default_synth_classes() -> usize {
    10
}
fn default_spread() -> f64 {
    0.3
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Idx {
            dir: None,
            train_limit: default_train_limit(),
            test_limit: default_test_limit(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "strategy", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionConfig {
    #[default]
    Uniform,
    QuantitySkew {
        weights: Vec<f64>,
    },
    LabelFilter {
        labels: Vec<BTreeSet<usize>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeConfig {
    pub consolidation: Consolidation,
    pub local_epochs: usize,
    #[serde(deserialize_with = "strict_sampling")]
    pub sampling: Sampling,
    /// Per-node weights for `criticality_weighted`; all 1 when absent.
    pub criticality: Option<Vec<f64>>,
    /// Per-node link latency; all 0 when absent.
    pub baseline_latency_ms: Option<Vec<f64>>,
    pub per_sample_cost_ms: f64,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        SchemeConfig {
            consolidation: Consolidation::DataWeighted,
            local_epochs: 1,
            sampling: Sampling::All,
            criticality: None,
            baseline_latency_ms: None,
            per_sample_cost_ms: 0.01,
        }
    }
}

// `all` carries no fields, so reject anything besides the tag.
fn strict_sampling<'de, D: serde::Deserializer<'de>>(
    d: D,
) -> std::result::Result<Sampling, D::Error> {
    use serde::de::Error as _;
    let v = serde_json::Value::deserialize(d)?;
    if let Some(obj) = v.as_object() {
        if obj.get("kind").and_then(|k| k.as_str()) == Some("all") {
            if let Some(extra) = obj.keys().find(|k| *k != "kind") {
                return Err(D::Error::custom(format!(
                    "unknown field `{extra}` for sampling kind `all`"
                )));
            }
        }
    }
    Sampling::deserialize(v).map_err(D::Error::custom)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub hidden_dim: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            learning_rate: 0.05,
            batch_size: 32,
            hidden_dim: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultName {
    OfflineModelLoss,
    ConnectivityLoss,
    HighLatency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultConfig {
    pub round: usize,
    pub node_id: usize,
    pub kind: FaultName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_rounds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<f64>,
}

impl FaultConfig {
    pub fn to_event(&self) -> Result<FaultEvent> {
        let duration = || {
            self.duration_rounds.ok_or_else(|| {
                Error::config("faults.duration_rounds", "required for this fault kind")
            })
        };
        let kind = match self.kind {
            FaultName::OfflineModelLoss => FaultKind::OfflineModelLoss,
            FaultName::ConnectivityLoss => FaultKind::ConnectivityLoss {
                duration_rounds: duration()?,
            },
            FaultName::HighLatency => FaultKind::HighLatency {
                latency_ms: self.latency_ms.ok_or_else(|| {
                    Error::config("faults.latency_ms", "required for high_latency")
                })?,
                duration_rounds: duration()?,
            },
        };
        Ok(FaultEvent {
            round: self.round,
            node_id: self.node_id,
            kind,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyName {
    RetrainScratch,
    ReinstateHistorical,
    FederatedPush,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoveryConfig {
    pub strategies: Vec<StrategyName>,
    /// Fraction of the node's pre-fault accuracy that counts as recovered.
    pub threshold: f64,
    pub epoch_cap: usize,
    pub post_recovery_epochs: usize,
    pub checkpoint_interval: usize,
    pub max_checkpoint_age_rounds: usize,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        RecoveryConfig {
            strategies: vec![
                StrategyName::RetrainScratch,
                StrategyName::ReinstateHistorical,
                StrategyName::FederatedPush,
            ],
            threshold: 0.9,
            epoch_cap: 50,
            post_recovery_epochs: 10,
            checkpoint_interval: 5,
            max_checkpoint_age_rounds: 10,
        }
    }
}

impl RecoveryConfig {
    pub fn strategy(&self, name: StrategyName) -> RecoveryStrategy {
        let kind = match name {
            StrategyName::RetrainScratch => RecoveryKind::RetrainScratch,
            StrategyName::ReinstateHistorical => RecoveryKind::ReinstateHistorical {
                max_checkpoint_age_rounds: self.max_checkpoint_age_rounds,
            },
            StrategyName::FederatedPush => RecoveryKind::FederatedPush,
        };
        RecoveryStrategy {
            kind,
            post_recovery_epochs: self.post_recovery_epochs,
        }
    }

    pub fn strategies(&self) -> Vec<RecoveryStrategy> {
        self.strategies.iter().map(|&s| self.strategy(s)).collect()
    }
}

/// Everything a run needs. Keys missing from the JSON take the defaults
/// below; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub dataset: DatasetConfig,
    pub num_nodes: usize,
    pub partition: PartitionConfig,
    pub drift: DriftSchedule,
    pub scheme: SchemeConfig,
    pub train: TrainSection,
    pub faults: Vec<FaultConfig>,
    pub recovery: RecoveryConfig,
    pub rounds: usize,
    pub seed: u64,
    #[serde(skip)]
    pub output_dir: PathBuf,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            dataset: DatasetConfig::default(),
            num_nodes: 10,
            partition: PartitionConfig::default(),
            drift: DriftSchedule::default(),
            scheme: SchemeConfig::default(),
            train: TrainSection::default(),
            faults: vec![FaultConfig {
                round: 15,
                node_id: 0,
                kind: FaultName::OfflineModelLoss,
                duration_rounds: None,
                latency_ms: None,
            }],
            recovery: RecoveryConfig::default(),
            rounds: 20,
            seed: 42,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Parses and validates a JSON scenario.
pub fn parse_config(bytes: &[u8]) -> Result<ScenarioConfig> {
    let cfg: ScenarioConfig = serde_json::from_slice(bytes).map_err(|e| Error::ConfigParse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_nodes == 0 {
            return Err(Error::config("num_nodes", "must be at least 1"));
        }
        if self.rounds == 0 {
            return Err(Error::config("rounds", "must be at least 1"));
        }
        match &self.dataset {
            DatasetConfig::Idx {
                train_limit,
                test_limit,
                ..
            } => {
                if *train_limit == 0 || *test_limit == 0 {
                    return Err(Error::config(
                        "dataset",
                        "train_limit and test_limit must be positive",
                    ));
                }
            }
            DatasetConfig::Synthetic {
                samples_per_class,
                test_samples_per_class,
                dims,
                num_classes,
                spread,
            } => {
                if *samples_per_class == 0 || *test_samples_per_class == 0 || *dims == 0 {
                    return Err(Error::config(
                        "dataset",
                        "synthetic counts must be positive",
                    ));
                }
                if *num_classes < 2 {
                    return Err(Error::config(
                        "dataset.num_classes",
                        "need at least 2 classes",
                    ));
                }
                if !(*spread > 0.0) {
                    return Err(Error::config("dataset.spread", "must be positive"));
                }
            }
        }
        self.partition_spec().validate(self.num_nodes)?;
        self.drift.validate()?;
        self.aggregation_scheme().validate()?;
        self.train_config().validate()?;
        if self.train.hidden_dim == 0 {
            return Err(Error::config("train.hidden_dim", "must be at least 1"));
        }
        for (field, v) in [
            ("scheme.criticality", &self.scheme.criticality),
            (
                "scheme.baseline_latency_ms",
                &self.scheme.baseline_latency_ms,
            ),
        ] {
            if let Some(v) = v {
                if v.len() != self.num_nodes {
                    return Err(Error::config(
                        field,
                        format!("{} entries for {} nodes", v.len(), self.num_nodes),
                    ));
                }
            }
        }
        if self
            .scheme
            .criticality
            .iter()
            .flatten()
            .any(|&c| !(c > 0.0))
        {
            return Err(Error::config(
                "scheme.criticality",
                "weights must be positive",
            ));
        }
        if self
            .scheme
            .baseline_latency_ms
            .iter()
            .flatten()
            .any(|&l| !(l >= 0.0))
        {
            return Err(Error::config(
                "scheme.baseline_latency_ms",
                "must be non-negative",
            ));
        }
        for f in &self.faults {
            f.to_event()?.validate(self.num_nodes)?;
        }
        let r = &self.recovery;
        if !(r.threshold > 0.0 && r.threshold <= 1.0) {
            return Err(Error::config("recovery.threshold", "must lie in (0, 1]"));
        }
        if r.checkpoint_interval == 0 {
            return Err(Error::config(
                "recovery.checkpoint_interval",
                "must be at least 1",
            ));
        }
        for s in r.strategies() {
            s.validate()?;
        }
        Ok(())
    }

    pub fn partition_spec(&self) -> PartitionSpec {
        let strategy = match &self.partition {
            PartitionConfig::Uniform => PartitionStrategy::UniformShards,
            PartitionConfig::QuantitySkew { weights } => {
                PartitionStrategy::QuantitySkew(weights.clone())
            }
            PartitionConfig::LabelFilter { labels } => {
                PartitionStrategy::LabelFilter(labels.clone())
            }
        };
        PartitionSpec {
            strategy,
            seed: rng::derive_seed(&[self.seed, rng::tag::PARTITION]),
        }
    }

    pub fn test_partition_spec(&self) -> PartitionSpec {
        PartitionSpec {
            seed: rng::derive_seed(&[self.seed, rng::tag::TEST_PARTITION]),
            ..self.partition_spec()
        }
    }

    pub fn aggregation_scheme(&self) -> AggregationScheme {
        AggregationScheme {
            consolidation: self.scheme.consolidation,
            local_epochs: self.scheme.local_epochs,
            sampling: self.scheme.sampling,
            seed: rng::derive_seed(&[self.seed, rng::tag::SAMPLING]),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            batch_size: self.train.batch_size,
            epochs: self.scheme.local_epochs,
            seed: rng::derive_seed(&[self.seed, rng::tag::LOCAL_TRAIN]),
            per_sample_cost_ms: self.scheme.per_sample_cost_ms,
        }
    }

    pub fn fault_events(&self) -> Result<Vec<FaultEvent>> {
        self.faults.iter().map(FaultConfig::to_event).collect()
    }

    /// JSON echo of the resolved configuration.
    pub fn manifest_json(&self) -> Vec<u8> {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v["output_dir"] = serde_json::Value::String(self.output_dir.display().to_string());
        let mut out = serde_json::to_vec_pretty(&v).expect("json value serializes");
        out.push(b'\n');
        out
    }
}
