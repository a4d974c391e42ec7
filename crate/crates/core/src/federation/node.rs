use crate::dataset::{drift_view, drift_view_indices, DriftSchedule, LabeledDataset};
use crate::error::{Error, Result};
use crate::model::MlpModel;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeStatus {
    Online,
    Offline,
    Degraded { latency_ms: f64 },
}

/// A simulated roadside unit: private train/test pools seen through its drift
/// schedule, an optional local model, and link state.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub node_id: usize,
    /// `None` after a model-loss fault.
    pub local_model: Option<MlpModel>,
    pub train_pool: LabeledDataset,
    pub test_pool: LabeledDataset,
    pub drift: DriftSchedule,
    /// Seeds the node's drift selections; fixed for the node's lifetime.
    pub data_seed: u64,
    pub status: NodeStatus,
    pub criticality: f64,
    pub baseline_latency_ms: f64,
    /// Round at which a timed fault lifts.
    pub restore_at: Option<usize>,
}

impl NodeState {
    pub fn new(
        node_id: usize,
        train_pool: LabeledDataset,
        test_pool: LabeledDataset,
        drift: DriftSchedule,
        data_seed: u64,
    ) -> Self {
        NodeState {
            node_id,
            local_model: None,
            train_pool,
            test_pool,
            drift,
            data_seed,
            status: NodeStatus::Online,
            criticality: 1.0,
            baseline_latency_ms: 0.0,
            restore_at: None,
        }
    }

    pub fn with_criticality(mut self, criticality: f64) -> Result<Self> {
        if !(criticality > 0.0 && criticality.is_finite()) {
            return Err(Error::config(
                "scheme.criticality",
                format!("node {} criticality must be positive", self.node_id),
            ));
        }
        self.criticality = criticality;
        Ok(self)
    }

    pub fn with_baseline_latency(mut self, latency_ms: f64) -> Result<Self> {
        if !(latency_ms >= 0.0 && latency_ms.is_finite()) {
            return Err(Error::config(
                "scheme.baseline_latency_ms",
                format!("node {} latency must be non-negative", self.node_id),
            ));
        }
        self.baseline_latency_ms = latency_ms;
        Ok(self)
    }

    pub fn is_offline(&self) -> bool {
        self.status == NodeStatus::Offline
    }

    /// Link latency: the baseline, or the degraded value. `None` when offline.
    pub fn latency_ms(&self) -> Option<f64> {
        match self.status {
            NodeStatus::Online => Some(self.baseline_latency_ms),
            NodeStatus::Degraded { latency_ms } => Some(latency_ms),
            NodeStatus::Offline => None,
        }
    }

    fn view_seed(&self, tag: u64) -> u64 {
        rng::derive_seed(&[self.data_seed, self.node_id as u64, tag])
    }

    pub fn train_view_len(&self, round: usize) -> usize {
        drift_view_indices(
            &self.train_pool,
            &self.drift,
            round,
            self.view_seed(rng::tag::DRIFT_TRAIN),
        )
        .len()
    }

    pub fn train_view(&self, round: usize) -> LabeledDataset {
        drift_view(
            &self.train_pool,
            &self.drift,
            round,
            self.view_seed(rng::tag::DRIFT_TRAIN),
        )
    }

    pub fn test_view(&self, round: usize) -> LabeledDataset {
        drift_view(
            &self.test_pool,
            &self.drift,
            round,
            self.view_seed(rng::tag::DRIFT_TEST),
        )
    }
}

pub(crate) fn find_node(fleet: &[NodeState], node_id: usize) -> Result<&NodeState> {
    fleet
        .iter()
        .find(|n| n.node_id == node_id)
        .ok_or(Error::UnknownNode(node_id))
}

pub(crate) fn find_node_mut(fleet: &mut [NodeState], node_id: usize) -> Result<&mut NodeState> {
    fleet
        .iter_mut()
        .find(|n| n.node_id == node_id)
        .ok_or(Error::UnknownNode(node_id))
}
