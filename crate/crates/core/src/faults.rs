//! Node faults, model checkpoints, and the three recovery strategies for a
//! node that lost its local model: retrain from scratch, reinstate a stored
//! snapshot, or take the aggregator's current global model.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::federation::{GlobalModelRegistry, NodeState, NodeStatus};
use crate::model::{evaluate, train_local, MlpModel, ParamVector, TrainConfig};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaultKind {
    /// Node goes down and loses its local model.
    OfflineModelLoss,
    /// Node is unreachable for a while but keeps its model.
    ConnectivityLoss { duration_rounds: usize },
    /// Link latency rises to `latency_ms` for a while.
    HighLatency {
        latency_ms: f64,
        duration_rounds: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultEvent {
    pub round: usize,
    pub node_id: usize,
    pub kind: FaultKind,
}

impl FaultEvent {
    pub fn validate(&self, num_nodes: usize) -> Result<()> {
        if self.node_id >= num_nodes {
            return Err(Error::config(
                "faults.node_id",
                format!(
                    "node {} does not exist in a fleet of {num_nodes}",
                    self.node_id
                ),
            ));
        }
        match self.kind {
            FaultKind::ConnectivityLoss { duration_rounds: 0 }
            | FaultKind::HighLatency {
                duration_rounds: 0, ..
            } => Err(Error::config(
                "faults.duration_rounds",
                "must be at least 1",
            )),
            FaultKind::HighLatency { latency_ms, .. } if !(latency_ms > 0.0) => {
                Err(Error::config("faults.latency_ms", "must be positive"))
            }
            _ => Ok(()),
        }
    }
}

/// Applies `event` at its round. Timed faults lift at `round + duration`.
pub fn inject(fleet: &mut [NodeState], event: &FaultEvent) -> Result<()> {
    let node = fleet
        .iter_mut()
        .find(|n| n.node_id == event.node_id)
        .ok_or(Error::UnknownNode(event.node_id))?;
    match event.kind {
        FaultKind::OfflineModelLoss => {
            node.status = NodeStatus::Offline;
            node.local_model = None;
            node.restore_at = None;
        }
        FaultKind::ConnectivityLoss { duration_rounds } => {
            node.status = NodeStatus::Offline;
            node.restore_at = Some(event.round + duration_rounds);
        }
        FaultKind::HighLatency {
            latency_ms,
            duration_rounds,
        } => {
            node.status = NodeStatus::Degraded { latency_ms };
            node.restore_at = Some(event.round + duration_rounds);
        }
    }
    Ok(())
}

/// Brings nodes whose timed fault has run out back online.
pub fn restore_expired(fleet: &mut [NodeState], round: usize) {
    for node in fleet.iter_mut() {
        if node.restore_at.is_some_and(|r| r <= round) {
            node.status = NodeStatus::Online;
            node.restore_at = None;
        }
    }
}

/// Per-node model snapshots, stored in the [`ParamVector`] wire format.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointStore {
    interval: usize,
    snapshots: BTreeMap<usize, Vec<(usize, Vec<u8>)>>,
}

impl CheckpointStore {
    pub fn new(interval_rounds: usize) -> Result<Self> {
        if interval_rounds == 0 {
            return Err(Error::config(
                "recovery.checkpoint_interval",
                "must be at least 1",
            ));
        }
        Ok(CheckpointStore {
            interval: interval_rounds,
            snapshots: BTreeMap::new(),
        })
    }

    pub fn interval(&self) -> usize {
        self.interval
    }

    /// Snapshots every online node that has a model, when `round` is a
    /// multiple of the interval.
    pub fn checkpoint_tick(&mut self, fleet: &[NodeState], round: usize) {
        if !round.is_multiple_of(self.interval) {
            return;
        }
        for node in fleet {
            if node.status != NodeStatus::Online {
                continue;
            }
            if let Some(model) = &node.local_model {
                self.insert(node.node_id, round, model.params());
            }
        }
    }

    pub fn insert(&mut self, node_id: usize, round: usize, params: &ParamVector) {
        let list = self.snapshots.entry(node_id).or_default();
        // rounds strictly increase; a repeat tick replaces the last entry
        if list.last().is_some_and(|(r, _)| *r >= round) {
            list.retain(|(r, _)| *r < round);
        }
        list.push((round, params.to_bytes()));
    }

    pub fn rounds(&self, node_id: usize) -> Vec<usize> {
        self.snapshots
            .get(&node_id)
            .map(|l| l.iter().map(|(r, _)| *r).collect())
            .unwrap_or_default()
    }

    /// Newest snapshot taken at or before `round`.
    pub fn newest_before(
        &self,
        node_id: usize,
        round: usize,
    ) -> Result<Option<(usize, ParamVector)>> {
        let Some(list) = self.snapshots.get(&node_id) else {
            return Ok(None);
        };
        match list.iter().rev().find(|(r, _)| *r <= round) {
            Some((r, bytes)) => Ok(Some((*r, ParamVector::from_bytes(bytes)?))),
            None => Ok(None),
        }
    }

    pub fn file_name(node_id: usize, round: usize) -> String {
        format!("ckpt-node{node_id}-r{round}.bin")
    }

    /// Writes one file per snapshot into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        for (node, list) in &self.snapshots {
            for (round, bytes) in list {
                let path = dir.join(Self::file_name(*node, *round));
                fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
                written.push(path);
            }
        }
        Ok(written)
    }

    pub fn read_file(path: &Path) -> Result<ParamVector> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        ParamVector::from_bytes(&bytes)
    }

    pub(crate) fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::new();
        for (node, list) in &self.snapshots {
            for (round, data) in list {
                bytes.extend_from_slice(&(*node as u64).to_le_bytes());
                bytes.extend_from_slice(&(*round as u64).to_le_bytes());
                bytes.extend_from_slice(data);
            }
        }
        rng::fnv1a(&bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecoveryKind {
    RetrainScratch,
    ReinstateHistorical { max_checkpoint_age_rounds: usize },
    FederatedPush,
}

impl RecoveryKind {
    pub fn name(&self) -> &'static str {
        match self {
            RecoveryKind::RetrainScratch => "retrain_scratch",
            RecoveryKind::ReinstateHistorical { .. } => "reinstate_historical",
            RecoveryKind::FederatedPush => "federated_push",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecoveryStrategy {
    pub kind: RecoveryKind,
    /// Minimum number of post-recovery epochs to run and record, even once
    /// the threshold is met.
    pub post_recovery_epochs: usize,
}

impl RecoveryStrategy {
    pub fn validate(&self) -> Result<()> {
        if let RecoveryKind::ReinstateHistorical {
            max_checkpoint_age_rounds: 0,
        } = self.kind
        {
            return Err(Error::config(
                "recovery.max_checkpoint_age_rounds",
                "must be at least 1",
            ));
        }
        Ok(())
    }
}

/// Where and how a recovery is judged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryContext {
    /// Round whose drift views are used for training and testing.
    pub round: usize,
    /// Fraction of pre-fault accuracy that counts as recovered.
    pub threshold: f64,
    pub epoch_cap: usize,
    pub pre_fault_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryReport {
    pub strategy: RecoveryKind,
    /// Test accuracy of the restored model before any training.
    pub accuracy_at_recovery: f64,
    /// Epochs until `threshold_accuracy` was reached; `None` if the cap hit first.
    pub epochs_to_threshold: Option<usize>,
    /// `threshold * pre_fault_accuracy`
    pub threshold_accuracy: f64,
    pub pre_fault_accuracy: f64,
    /// Test accuracy after 0, 1, 2, ... post-recovery epochs.
    pub curve: Vec<f64>,
}

/// Restores a node that lost its model, then trains it epoch by epoch on its
/// current drift view until its test accuracy reaches `threshold *
/// pre-fault accuracy` (or the epoch cap), and for at least
/// `post_recovery_epochs` epochs.
///
/// Does not touch the registry. Training seeds depend only on the node, round
/// and epoch, so strategies differ only in the starting model.
pub fn recover(
    node: &mut NodeState,
    strategy: &RecoveryStrategy,
    registry: &GlobalModelRegistry,
    checkpoints: &CheckpointStore,
    local_cfg: &TrainConfig,
    ctx: &RecoveryContext,
) -> Result<RecoveryReport> {
    strategy.validate()?;
    if !(ctx.threshold > 0.0 && ctx.threshold <= 1.0) {
        return Err(Error::config("recovery.threshold", "must lie in (0, 1]"));
    }
    if node.local_model.is_some() {
        return Err(Error::Domain(format!(
            "node {} still holds a model; only a model-loss fault needs recovery",
            node.node_id
        )));
    }
    let dims = registry.current.dims();
    let (id, round) = (node.node_id as u64, ctx.round as u64);
    let start = match strategy.kind {
        RecoveryKind::RetrainScratch => MlpModel::init(
            dims,
            rng::derive_seed(&[local_cfg.seed, id, round, rng::tag::SCRATCH_INIT]),
        )?,
        RecoveryKind::ReinstateHistorical {
            max_checkpoint_age_rounds,
        } => {
            let missing = Error::MissingCheckpoint {
                node: node.node_id,
                round: ctx.round,
                max_age: max_checkpoint_age_rounds,
            };
            match checkpoints.newest_before(node.node_id, ctx.round)? {
                Some((at, params)) if ctx.round - at <= max_checkpoint_age_rounds => {
                    MlpModel::from_params(dims, params)?
                }
                _ => return Err(missing),
            }
        }
        RecoveryKind::FederatedPush => registry.current.clone(),
    };

    let train_view = node.train_view(ctx.round);
    let test_view = node.test_view(ctx.round);
    if test_view.is_empty() {
        return Err(Error::EmptyData(format!(
            "node {} has no test rows at round {}",
            node.node_id, ctx.round
        )));
    }
    let accuracy_at_recovery = evaluate(&start, &test_view)?.accuracy;
    let pre_fault_accuracy = ctx.pre_fault_accuracy.unwrap_or(accuracy_at_recovery);
    let threshold_accuracy = ctx.threshold * pre_fault_accuracy;

    let mut model = start;
    let mut curve = vec![accuracy_at_recovery];
    let mut reached = (accuracy_at_recovery >= threshold_accuracy).then_some(0);
    let mut epoch = 0;
    while (reached.is_none() && epoch < ctx.epoch_cap) || epoch < strategy.post_recovery_epochs {
        let cfg = TrainConfig {
            epochs: 1,
            seed: rng::derive_seed(&[local_cfg.seed, id, round, rng::tag::RECOVERY, epoch as u64]),
            ..*local_cfg
        };
        model = train_local(&model, &train_view, &cfg)?.0;
        epoch += 1;
        let acc = evaluate(&model, &test_view)?.accuracy;
        curve.push(acc);
        if reached.is_none() && acc >= threshold_accuracy {
            reached = Some(epoch);
        }
    }

    node.local_model = Some(model);
    node.status = NodeStatus::Online;
    node.restore_at = None;
    Ok(RecoveryReport {
        strategy: strategy.kind,
        accuracy_at_recovery,
        epochs_to_threshold: reached,
        threshold_accuracy,
        pre_fault_accuracy,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::dataset::LabeledDataset;
    use crate::federation::testutil::{blob_fleet, dims, scheme, train_cfg};
    use crate::federation::{init_global, run_round, sample_nodes, Sampling};

    fn trained(n: usize, rounds: usize) -> (Vec<NodeState>, GlobalModelRegistry, LabeledDataset) {
        let (mut fleet, test) = blob_fleet(n, 40, 6);
        let mut reg = init_global(1, dims()).unwrap();
        for r in 0..rounds {
            run_round(
                &mut reg,
                &mut fleet,
                &scheme(Sampling::All),
                &train_cfg(),
                r,
                &test,
            )
            .unwrap();
        }
        (fleet, reg, test)
    }

    fn ctx(round: usize) -> RecoveryContext {
        RecoveryContext {
            round,
            threshold: 0.9,
            epoch_cap: 20,
            pre_fault_accuracy: None,
        }
    }

    fn strategy(kind: RecoveryKind) -> RecoveryStrategy {
        RecoveryStrategy {
            kind,
            post_recovery_epochs: 0,
        }
    }

    fn loss(node_id: usize, round: usize) -> FaultEvent {
        FaultEvent {
            round,
            node_id,
            kind: FaultKind::OfflineModelLoss,
        }
    }

    #[test]
    fn model_loss_clears_model() {
        let (mut fleet, _, _) = trained(3, 1);
        inject(&mut fleet, &loss(1, 1)).unwrap();
        assert!(fleet[1].local_model.is_none());
        assert!(fleet[1].is_offline());
    }

    #[test]
    fn unknown_node_rejected() {
        let (mut fleet, _, _) = trained(2, 0);
        assert!(matches!(
            inject(&mut fleet, &loss(5, 0)),
            Err(Error::UnknownNode(5))
        ));
        assert!(loss(5, 0).validate(2).is_err());
    }

    #[test]
    fn connectivity_loss_restores_with_model() {
        let (mut fleet, _, _) = trained(3, 2);
        let before = fleet[0].local_model.clone();
        let event = FaultEvent {
            round: 4,
            node_id: 0,
            kind: FaultKind::ConnectivityLoss { duration_rounds: 2 },
        };
        inject(&mut fleet, &event).unwrap();
        restore_expired(&mut fleet, 5);
        assert!(fleet[0].is_offline());
        restore_expired(&mut fleet, 6);
        assert_eq!(fleet[0].status, NodeStatus::Online);
        assert_eq!(fleet[0].local_model, before);
    }

    #[test]
    fn high_latency_excluded_by_latency_aware() {
        let (mut fleet, _, _) = trained(3, 0);
        let event = FaultEvent {
            round: 0,
            node_id: 2,
            kind: FaultKind::HighLatency {
                latency_ms: 500.0,
                duration_rounds: 1,
            },
        };
        inject(&mut fleet, &event).unwrap();
        let s = scheme(Sampling::LatencyAware { cutoff_ms: 100.0 });
        assert_eq!(sample_nodes(&fleet, &s, 0), vec![0, 1]);
        restore_expired(&mut fleet, 1);
        assert_eq!(sample_nodes(&fleet, &s, 1), vec![0, 1, 2]);
    }

    #[test]
    fn interval_five_over_ten_rounds() {
        let (fleet, _, _) = trained(2, 1);
        let mut store = CheckpointStore::new(5).unwrap();
        for r in 0..10 {
            store.checkpoint_tick(&fleet, r);
        }
        assert_eq!(store.rounds(0), vec![0, 5]);
        assert_eq!(store.newest_before(0, 4).unwrap().unwrap().0, 0);
        assert_eq!(store.newest_before(0, 9).unwrap().unwrap().0, 5);
        assert_eq!(
            store.newest_before(0, 5).unwrap().unwrap().1,
            *fleet[0].local_model.as_ref().unwrap().params()
        );
        assert!(CheckpointStore::new(0).is_err());
    }

    #[test]
    fn offline_node_not_snapshotted() {
        let (mut fleet, _, _) = trained(2, 1);
        fleet[1].status = NodeStatus::Offline;
        let mut store = CheckpointStore::new(1).unwrap();
        store.checkpoint_tick(&fleet, 0);
        assert_eq!(store.rounds(0), vec![0]);
        assert!(store.rounds(1).is_empty());
    }

    #[test]
    fn checkpoint_files_round_trip() {
        let (fleet, _, _) = trained(2, 1);
        let mut store = CheckpointStore::new(5).unwrap();
        store.checkpoint_tick(&fleet, 5);
        let dir = tempfile::tempdir().unwrap();
        let files = store.write_dir(dir.path()).unwrap();
        assert_eq!(files.len(), 2);
        let back = CheckpointStore::read_file(&dir.path().join("ckpt-node1-r5.bin")).unwrap();
        assert_eq!(back, *fleet[1].local_model.as_ref().unwrap().params());
    }

    #[test]
    fn federated_push_copies_global_and_leaves_registry() {
        let (mut fleet, reg, _) = trained(3, 6);
        let before = reg.clone();
        inject(&mut fleet, &loss(0, 6)).unwrap();
        let store = CheckpointStore::new(5).unwrap();
        let report = recover(
            &mut fleet[0],
            &strategy(RecoveryKind::FederatedPush),
            &reg,
            &store,
            &train_cfg(),
            &ctx(6),
        )
        .unwrap();
        assert_eq!(fleet[0].local_model.as_ref(), Some(&reg.current));
        assert_eq!(reg, before);
        assert_eq!(report.epochs_to_threshold, Some(0));
        assert_eq!(report.curve, vec![report.accuracy_at_recovery]);
        assert_eq!(fleet[0].status, NodeStatus::Online);
    }

    #[test]
    fn reinstate_without_snapshot_is_an_error() {
        let (mut fleet, reg, _) = trained(2, 2);
        inject(&mut fleet, &loss(1, 2)).unwrap();
        let mut store = CheckpointStore::new(5).unwrap();
        let kind = RecoveryKind::ReinstateHistorical {
            max_checkpoint_age_rounds: 3,
        };
        let err = recover(
            &mut fleet[1],
            &strategy(kind),
            &reg,
            &store,
            &train_cfg(),
            &ctx(8),
        )
        .unwrap_err();
        assert!(matches!(
            err,
            Error::MissingCheckpoint {
                node: 1,
                round: 8,
                max_age: 3
            }
        ));
        // too old
        store.insert(1, 2, reg.current.params());
        assert!(recover(
            &mut fleet[1],
            &strategy(kind),
            &reg,
            &store,
            &train_cfg(),
            &ctx(8)
        )
        .is_err());
        store.insert(1, 5, reg.current.params());
        let report = recover(
            &mut fleet[1],
            &strategy(kind),
            &reg,
            &store,
            &train_cfg(),
            &ctx(8),
        )
        .unwrap();
        assert_eq!(report.strategy, kind);
    }

    #[test]
    fn scratch_trains_until_threshold() {
        let (mut fleet, reg, _) = trained(2, 4);
        inject(&mut fleet, &loss(0, 4)).unwrap();
        let store = CheckpointStore::new(5).unwrap();
        let c = RecoveryContext {
            pre_fault_accuracy: Some(1.0),
            ..ctx(4)
        };
        let s = RecoveryStrategy {
            kind: RecoveryKind::RetrainScratch,
            post_recovery_epochs: 3,
        };
        let report = recover(&mut fleet[0], &s, &reg, &store, &train_cfg(), &c).unwrap();
        assert_eq!(report.threshold_accuracy, 0.9);
        assert!(report.curve.len() >= 4);
        match report.epochs_to_threshold {
            Some(e) => {
                assert!(report.curve[e] >= 0.9);
                assert!(report.curve[..e].iter().all(|&a| a < 0.9));
            }
            None => assert_eq!(report.curve.len(), 21),
        }
    }

    #[test]
    fn recover_refuses_a_node_with_a_model() {
        let (mut fleet, reg, _) = trained(2, 1);
        let store = CheckpointStore::new(5).unwrap();
        let s = strategy(RecoveryKind::FederatedPush);
        assert!(recover(&mut fleet[0], &s, &reg, &store, &train_cfg(), &ctx(1)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn only_model_loss_clears_models(
            kinds in proptest::collection::vec(0u8..3, 1..8),
            durations in proptest::collection::vec(1usize..4, 8),
        ) {
            let (mut fleet, _, _) = trained(3, 1);
            for (i, k) in kinds.iter().enumerate() {
                let id = i % 3;
                let had = fleet[id].local_model.is_some();
                let kind = match k {
                    0 => FaultKind::OfflineModelLoss,
                    1 => FaultKind::ConnectivityLoss { duration_rounds: durations[i] },
                    _ => FaultKind::HighLatency { latency_ms: 200.0, duration_rounds: durations[i] },
                };
                inject(&mut fleet, &FaultEvent { round: i, node_id: id, kind }).unwrap();
                if kind == FaultKind::OfflineModelLoss {
                    prop_assert!(fleet[id].local_model.is_none());
                } else {
                    prop_assert_eq!(fleet[id].local_model.is_some(), had);
                }
            }
        }
    }
}
