use std::collections::BTreeMap;

use super::node::{find_node, find_node_mut, NodeState};
use super::round::{run_round, GlobalModelRegistry, RoundReport};
use super::scheme::AggregationScheme;
use crate::dataset::{drift_view, DriftSchedule, LabeledDataset};
use crate::error::Result;
use crate::experiment::MetricsRow;
use crate::faults::{
    self, CheckpointStore, FaultEvent, FaultKind, RecoveryContext, RecoveryReport, RecoveryStrategy,
};
use crate::model::{evaluate, TrainConfig};

/// Recovery applied automatically to a node that lost its model, at the
/// round after the fault (once it is reachable again).
#[derive(Debug, Clone, PartialEq)]
pub struct AutoRecovery {
    pub strategy: RecoveryStrategy,
    pub threshold: f64,
    pub epoch_cap: usize,
}

/// World state of one federated run, advanced round by round.
///
/// Cloning a `Simulation` forks the world: the clone owns copies of the
/// registry, fleet and checkpoints, and all randomness is derived from
/// coordinates rather than carried generator state.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub registry: GlobalModelRegistry,
    pub fleet: Vec<NodeState>,
    pub scheme: AggregationScheme,
    pub train: TrainConfig,
    /// Global evaluation pool; the drift schedule filters it each round.
    pub eval_pool: LabeledDataset,
    pub eval_drift: DriftSchedule,
    pub eval_seed: u64,
    pub checkpoints: CheckpointStore,
    /// Node whose local accuracy is reported in each metrics row.
    pub tracked_node: Option<usize>,
    pub auto_recovery: Option<AutoRecovery>,
    /// Accuracy of a node's model just before it lost it.
    pub pre_fault_accuracy: BTreeMap<usize, f64>,
    pub recoveries: Vec<(usize, RecoveryReport)>,
    pub next_round: usize,
    cumulative_bytes: u64,
    cumulative_raw_bytes: u64,
    pending_recovery: Vec<usize>,
}

impl Simulation {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        registry: GlobalModelRegistry,
        fleet: Vec<NodeState>,
        scheme: AggregationScheme,
        train: TrainConfig,
        eval_pool: LabeledDataset,
        eval_drift: DriftSchedule,
        eval_seed: u64,
        checkpoints: CheckpointStore,
    ) -> Self {
        Simulation {
            registry,
            fleet,
            scheme,
            train,
            eval_pool,
            eval_drift,
            eval_seed,
            checkpoints,
            tracked_node: None,
            auto_recovery: None,
            pre_fault_accuracy: BTreeMap::new(),
            recoveries: Vec::new(),
            next_round: 0,
            cumulative_bytes: 0,
            cumulative_raw_bytes: 0,
            pending_recovery: Vec::new(),
        }
    }

    pub fn eval_view(&self, round: usize) -> LabeledDataset {
        drift_view(&self.eval_pool, &self.eval_drift, round, self.eval_seed)
    }

    /// Accuracy of a node's own model on its test view at `round`.
    pub fn node_accuracy(&self, node_id: usize, round: usize) -> Result<Option<f64>> {
        let node = find_node(&self.fleet, node_id)?;
        let Some(model) = &node.local_model else {
            return Ok(None);
        };
        let view = node.test_view(round);
        if view.is_empty() {
            return Ok(None);
        }
        Ok(Some(evaluate(model, &view)?.accuracy))
    }

    /// Applies `event` now, recording the victim's accuracy first when the
    /// fault destroys its model.
    pub fn inject(&mut self, event: &FaultEvent) -> Result<()> {
        if event.kind == FaultKind::OfflineModelLoss {
            let before = self.next_round.saturating_sub(1);
            if let Some(acc) = self.node_accuracy(event.node_id, before)? {
                self.pre_fault_accuracy.insert(event.node_id, acc);
            }
            self.pending_recovery.push(event.node_id);
        }
        faults::inject(&mut self.fleet, event)
    }

    pub fn recover_node(
        &mut self,
        node_id: usize,
        strategy: &RecoveryStrategy,
        threshold: f64,
        epoch_cap: usize,
        round: usize,
    ) -> Result<RecoveryReport> {
        let pre_fault = self.pre_fault_accuracy.get(&node_id).copied();
        let ctx = RecoveryContext {
            round,
            threshold,
            epoch_cap,
            pre_fault_accuracy: pre_fault,
        };
        let node = find_node_mut(&mut self.fleet, node_id)?;
        let report = faults::recover(
            node,
            strategy,
            &self.registry,
            &self.checkpoints,
            &self.train,
            &ctx,
        )?;
        self.pending_recovery.retain(|&id| id != node_id);
        self.recoveries.push((node_id, report.clone()));
        Ok(report)
    }

    /// One full round: lift expired faults, run pending auto-recoveries,
    /// inject `events`, train and aggregate, checkpoint.
    pub fn step(&mut self, events: &[FaultEvent]) -> Result<(RoundReport, MetricsRow)> {
        let round = self.next_round;
        faults::restore_expired(&mut self.fleet, round);
        if let Some(auto) = self.auto_recovery.clone() {
            for id in std::mem::take(&mut self.pending_recovery) {
                self.recover_node(id, &auto.strategy, auto.threshold, auto.epoch_cap, round)?;
            }
        }
        for e in events.iter().filter(|e| e.round == round) {
            self.inject(e)?;
        }

        let eval = self.eval_view(round);
        let report = run_round(
            &mut self.registry,
            &mut self.fleet,
            &self.scheme,
            &self.train,
            round,
            &eval,
        )?;
        self.checkpoints.checkpoint_tick(&self.fleet, round);
        self.cumulative_bytes += report.update_bytes;
        self.cumulative_raw_bytes += report.raw_data_bytes;
        let faulted_node_accuracy = match self.tracked_node {
            Some(id) => self.node_accuracy(id, round)?,
            None => None,
        };
        let row = MetricsRow {
            round,
            global_test_accuracy: report.accuracy,
            global_test_loss: report.loss,
            sampled_node_count: report.sampled.len(),
            skipped: report.skipped,
            round_update_bytes: report.update_bytes,
            cumulative_update_bytes: self.cumulative_bytes,
            faulted_node_accuracy,
            round_raw_data_bytes: report.raw_data_bytes,
            cumulative_raw_data_bytes: self.cumulative_raw_bytes,
        };
        self.next_round += 1;
        Ok((report, row))
    }

    /// Runs `num_rounds` rounds, applying `fault_plan` events at their rounds.
    pub fn run_rounds(
        &mut self,
        num_rounds: usize,
        fault_plan: &[FaultEvent],
    ) -> Result<Vec<MetricsRow>> {
        let mut rows = Vec::with_capacity(num_rounds);
        for _ in 0..num_rounds {
            rows.push(self.step(fault_plan)?.1);
        }
        Ok(rows)
    }

    /// Stable hash of the world state: global model, registry version, every
    /// node's status and model, and the checkpoint store.
    pub fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&self.registry.version.to_le_bytes());
        bytes.extend_from_slice(&(self.next_round as u64).to_le_bytes());
        bytes.extend(self.registry.current.params().to_bytes());
        for n in &self.fleet {
            bytes.extend_from_slice(&(n.node_id as u64).to_le_bytes());
            bytes.extend_from_slice(format!("{:?}{:?}", n.status, n.restore_at).as_bytes());
            match &n.local_model {
                Some(m) => bytes.extend(m.params().to_bytes()),
                None => bytes.push(0),
            }
        }
        bytes.extend_from_slice(&self.checkpoints.fingerprint().to_le_bytes());
        crate::rng::fnv1a(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::emit_metrics_csv;
    use crate::faults::RecoveryKind;
    use crate::federation::testutil::{blob_fleet, dims, scheme, train_cfg, CLASSES};
    use crate::federation::{init_global, Sampling};

    fn sim(n: usize) -> Simulation {
        sim_with(n, 40)
    }

    fn sim_with(n: usize, rows_per_class: usize) -> Simulation {
        let (fleet, test) = blob_fleet(n, rows_per_class, 8);
        Simulation::new(
            init_global(1, dims()).unwrap(),
            fleet,
            scheme(Sampling::All),
            train_cfg(),
            test,
            DriftSchedule::stationary(CLASSES),
            2,
            CheckpointStore::new(5).unwrap(),
        )
    }

    #[test]
    fn one_row_per_round_and_deterministic() {
        let mut a = sim(4);
        let mut b = sim(4);
        let ra = a.run_rounds(6, &[]).unwrap();
        assert_eq!(ra.len(), 6);
        assert_eq!(
            emit_metrics_csv(&ra),
            emit_metrics_csv(&b.run_rounds(6, &[]).unwrap())
        );
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert!(ra
            .windows(2)
            .all(|w| w[0].cumulative_update_bytes <= w[1].cumulative_update_bytes));
    }

    #[test]
    fn separable_data_ten_nodes_twenty_rounds() {
        let mut s = sim_with(10, 100);
        let rows = s.run_rounds(20, &[]).unwrap();
        assert!(
            rows[19].global_test_accuracy > 0.9,
            "{}",
            rows[19].global_test_accuracy
        );
    }

    #[test]
    fn model_loss_tracks_pre_fault_and_skips_node() {
        let mut s = sim(4);
        s.tracked_node = Some(2);
        let plan = [FaultEvent {
            round: 3,
            node_id: 2,
            kind: FaultKind::OfflineModelLoss,
        }];
        let rows = s.run_rounds(5, &plan).unwrap();
        assert!(rows[2].faulted_node_accuracy.is_some());
        assert_eq!(rows[3].faulted_node_accuracy, None);
        assert_eq!(rows[3].sampled_node_count, 3);
        assert_eq!(
            s.pre_fault_accuracy[&2],
            rows[2].faulted_node_accuracy.unwrap()
        );
    }

    #[test]
    fn auto_recovery_runs_the_next_round() {
        let mut s = sim(4);
        s.auto_recovery = Some(AutoRecovery {
            strategy: RecoveryStrategy {
                kind: RecoveryKind::FederatedPush,
                post_recovery_epochs: 0,
            },
            threshold: 0.9,
            epoch_cap: 5,
        });
        let plan = [FaultEvent {
            round: 2,
            node_id: 1,
            kind: FaultKind::OfflineModelLoss,
        }];
        let rows = s.run_rounds(4, &plan).unwrap();
        assert_eq!(s.recoveries.len(), 1);
        assert_eq!(rows[3].sampled_node_count, 4);
    }

    #[test]
    fn clones_share_a_fingerprint() {
        let mut s = sim(3);
        s.run_rounds(2, &[]).unwrap();
        let mut fork = s.clone();
        assert_eq!(fork.fingerprint(), s.fingerprint());
        fork.step(&[]).unwrap();
        assert_ne!(fork.fingerprint(), s.fingerprint());
    }
}
