use rayon::prelude::*;

use super::node::{find_node, find_node_mut, NodeState};
use super::scheme::{sample_nodes, AggregationScheme, Consolidation};
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::{
    apply_delta, evaluate, model_delta, train_local, MlpModel, ModelDims, ParamVector, TrainConfig,
};
use crate::rng;

/// The aggregator's copy of the global model.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModelRegistry {
    pub current: MlpModel,
    /// Number of aggregations applied so far.
    pub version: u64,
    /// `(version, global accuracy)` after each applied aggregation.
    pub history: Vec<(u64, f64)>,
}

pub fn init_global(seed: u64, dims: ModelDims) -> Result<GlobalModelRegistry> {
    Ok(GlobalModelRegistry {
        current: MlpModel::init(dims, seed)?,
        version: 0,
        history: Vec::new(),
    })
}

/// What a node sends back: the delta, never the model or its data.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelUpdate {
    pub node_id: usize,
    pub round: usize,
    /// `trained - received global`
    pub delta: ParamVector,
    /// Rows of the node's drift view this round.
    pub num_samples: usize,
    pub sim_train_ms: f64,
    /// Serialized size of `delta`: `8 * params + header`.
    pub update_bytes: u64,
}

/// Result of one node's local round.
#[derive(Debug, Clone, PartialEq)]
pub enum LocalOutcome {
    /// The update and the model the node keeps (`global + delta`).
    Trained {
        update: ModelUpdate,
        local: MlpModel,
    },
    /// Empty drift view; the node sits the round out.
    EmptyView,
}

/// Trains a copy of `global` on the node's drift view at `round`.
///
/// Pure in the node: the caller stores `local` back. The kept model is
/// `apply_delta(global, delta)`, which is what the aggregator can rebuild
/// from the update.
pub fn local_round(
    node: &NodeState,
    global: &MlpModel,
    round: usize,
    cfg: &TrainConfig,
) -> Result<LocalOutcome> {
    let view = node.train_view(round);
    if view.is_empty() {
        return Ok(LocalOutcome::EmptyView);
    }
    let cfg = TrainConfig {
        seed: rng::derive_seed(&[cfg.seed, node.node_id as u64, round as u64]),
        ..*cfg
    };
    let (trained, stats) = train_local(global, &view, &cfg)?;
    let delta = model_delta(trained.params(), global.params())?;
    let local = MlpModel::from_params(global.dims(), apply_delta(global.params(), &delta)?)?;
    let latency = node.latency_ms().unwrap_or(0.0);
    let update_bytes = delta.encoded_len() as u64;
    Ok(LocalOutcome::Trained {
        update: ModelUpdate {
            node_id: node.node_id,
            round,
            delta,
            num_samples: view.len(),
            sim_train_ms: stats.sim_train_ms + latency,
            update_bytes,
        },
        local,
    })
}

/// Normalized weights, one per update, in ascending `node_id` order.
pub fn consolidation_weights(
    updates: &[ModelUpdate],
    scheme: &AggregationScheme,
    fleet: &[NodeState],
) -> Result<Vec<(usize, f64)>> {
    let (raw, total) = raw_weights(updates, scheme, fleet)?;
    Ok(raw.into_iter().map(|(id, w)| (id, w / total)).collect())
}

fn raw_weights(
    updates: &[ModelUpdate],
    scheme: &AggregationScheme,
    fleet: &[NodeState],
) -> Result<(Vec<(usize, f64)>, f64)> {
    if updates.is_empty() {
        return Err(Error::EmptyAggregation);
    }
    let mut raw = Vec::with_capacity(updates.len());
    for u in updates {
        let w = match scheme.consolidation {
            Consolidation::PlainAverage => 1.0,
            Consolidation::DataWeighted => u.num_samples as f64,
            Consolidation::CriticalityWeighted => find_node(fleet, u.node_id)?.criticality,
        };
        raw.push((u.node_id, w));
    }
    raw.sort_by_key(|&(id, _)| id);
    let total: f64 = raw.iter().map(|&(_, w)| w).sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateWeights(format!(
            "{:?} weights sum to {total}",
            scheme.consolidation
        )));
    }
    Ok((raw, total))
}

/// Weighted mean of the deltas, summed in ascending `node_id` order.
pub fn consolidate(
    updates: &[ModelUpdate],
    scheme: &AggregationScheme,
    fleet: &[NodeState],
) -> Result<ParamVector> {
    let (raw, total) = raw_weights(updates, scheme, fleet)?;
    let mut sorted: Vec<&ModelUpdate> = updates.iter().collect();
    sorted.sort_by_key(|u| u.node_id);
    let layout = sorted[0].delta.layout().clone();
    let mut acc = vec![0.0; layout.param_count()];
    for (u, &(_, w)) in sorted.iter().zip(&raw) {
        u.delta.check_layout(&sorted[0].delta, "consolidate")?;
        for (a, &d) in acc.iter_mut().zip(u.delta.values()) {
            *a += w * d;
        }
    }
    for a in &mut acc {
        *a /= total;
    }
    ParamVector::new(layout, acc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: usize,
    /// Registry version after the round.
    pub version: u64,
    /// Nodes that trained and reported, ascending.
    pub sampled: Vec<usize>,
    /// Sampled nodes whose drift view was empty.
    pub empty_view: Vec<usize>,
    /// `(node_id, sim_train_ms)` per reporting node.
    pub node_ms: Vec<(usize, f64)>,
    /// Slowest reporting node; the synchronous round waits for it.
    pub round_ms: f64,
    pub update_bytes: u64,
    /// Bytes the reporting nodes would have sent shipping their views as
    /// 8-byte values (features plus label) instead of deltas.
    pub raw_data_bytes: u64,
    pub skipped: bool,
    pub accuracy: f64,
    pub loss: f64,
}

/// Broadcast, sample, train locally, consolidate, apply.
///
/// Sampled nodes train in parallel; the result does not depend on the thread
/// count because per-node seeds are order-free and consolidation sums in
/// node-id order. An empty sample leaves the registry untouched.
pub fn run_round(
    registry: &mut GlobalModelRegistry,
    fleet: &mut [NodeState],
    scheme: &AggregationScheme,
    train: &TrainConfig,
    round: usize,
    eval: &LabeledDataset,
) -> Result<RoundReport> {
    scheme.validate()?;
    let cfg = TrainConfig {
        epochs: scheme.local_epochs,
        ..*train
    };
    let chosen = sample_nodes(fleet, scheme, round);
    let global = &registry.current;
    let outcomes: Vec<(usize, LocalOutcome)> = {
        let nodes = chosen
            .iter()
            .map(|&id| find_node(fleet, id))
            .collect::<Result<Vec<_>>>()?;
        nodes
            .par_iter()
            .map(|n| local_round(n, global, round, &cfg).map(|o| (n.node_id, o)))
            .collect::<Result<Vec<_>>>()?
    };

    let mut updates = Vec::new();
    let mut empty_view = Vec::new();
    let mut raw_data_bytes = 0u64;
    for (id, outcome) in outcomes {
        match outcome {
            LocalOutcome::Trained { update, local } => {
                let node = find_node_mut(fleet, id)?;
                raw_data_bytes +=
                    (update.num_samples * 8 * (node.train_pool.num_features() + 1)) as u64;
                node.local_model = Some(local);
                updates.push(update);
            }
            LocalOutcome::EmptyView => {
                log::warn!("round {round}: node {id} skipped, empty drift view");
                empty_view.push(id);
            }
        }
    }

    let skipped = updates.is_empty();
    if !skipped {
        let delta = consolidate(&updates, scheme, fleet)?;
        let next = apply_delta(registry.current.params(), &delta)?;
        registry.current = MlpModel::from_params(registry.current.dims(), next)?;
        registry.version += 1;
    }
    let eval_result = evaluate(&registry.current, eval)?;
    if !skipped {
        registry
            .history
            .push((registry.version, eval_result.accuracy));
    }
    let node_ms: Vec<(usize, f64)> = updates
        .iter()
        .map(|u| (u.node_id, u.sim_train_ms))
        .collect();
    Ok(RoundReport {
        round,
        version: registry.version,
        sampled: updates.iter().map(|u| u.node_id).collect(),
        empty_view,
        round_ms: node_ms.iter().map(|&(_, ms)| ms).fold(0.0, f64::max),
        node_ms,
        update_bytes: updates.iter().map(|u| u.update_bytes).sum(),
        raw_data_bytes,
        skipped,
        accuracy: eval_result.accuracy,
        loss: eval_result.mean_loss,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::federation::testutil::{blob_fleet, dims, scheme, train_cfg};
    use crate::federation::{NodeStatus, Sampling};
    use crate::model::{LayerShape, Layout};

    fn scalar_update(node_id: usize, d: f64, num_samples: usize) -> ModelUpdate {
        let layout = Layout::new(vec![LayerShape { rows: 1, cols: 1 }]);
        ModelUpdate {
            node_id,
            round: 0,
            delta: ParamVector::new(layout, vec![d, d]).unwrap(),
            num_samples,
            sim_train_ms: 0.0,
            update_bytes: 0,
        }
    }

    fn with(consolidation: Consolidation) -> AggregationScheme {
        AggregationScheme {
            consolidation,
            ..scheme(Sampling::All)
        }
    }

    #[test]
    fn init_global_is_versioned_and_seeded() {
        let a = init_global(9, dims()).unwrap();
        assert_eq!(a.version, 0);
        assert_eq!(a, init_global(9, dims()).unwrap());
        assert_eq!(a.current.params().layout(), &dims().layout());
        assert_ne!(a.current, init_global(10, dims()).unwrap().current);
    }

    #[test]
    fn data_weighted_example() {
        let (fleet, _) = blob_fleet(2, 4, 1);
        let ups = [scalar_update(0, 0.2, 10), scalar_update(1, -0.1, 30)];
        let d = consolidate(&ups, &with(Consolidation::DataWeighted), &fleet).unwrap();
        assert!((d.values()[0] - -0.025).abs() < 1e-15);
    }

    #[test]
    fn plain_average_cancels() {
        let (fleet, _) = blob_fleet(2, 4, 1);
        let ups = [scalar_update(0, 0.2, 10), scalar_update(1, -0.2, 30)];
        let d = consolidate(&ups, &with(Consolidation::PlainAverage), &fleet).unwrap();
        assert_eq!(d.values(), &[0.0, 0.0]);
    }

    #[test]
    fn shared_delta_survives_any_scheme() {
        let (mut fleet, _) = blob_fleet(3, 4, 1);
        fleet[1].criticality = 5.0;
        let ups: Vec<_> = (0..3).map(|i| scalar_update(i, 0.375, i * 7 + 1)).collect();
        for c in [
            Consolidation::PlainAverage,
            Consolidation::DataWeighted,
            Consolidation::CriticalityWeighted,
        ] {
            assert_eq!(
                consolidate(&ups, &with(c), &fleet).unwrap().values(),
                &[0.375, 0.375]
            );
        }
    }

    #[test]
    fn criticality_weights() {
        let (mut fleet, _) = blob_fleet(2, 4, 1);
        fleet[0].criticality = 3.0;
        let ups = [scalar_update(0, 1.0, 1), scalar_update(1, 0.0, 1)];
        let w =
            consolidation_weights(&ups, &with(Consolidation::CriticalityWeighted), &fleet).unwrap();
        assert_eq!(w, vec![(0, 0.75), (1, 0.25)]);
    }

    #[test]
    fn consolidate_errors() {
        let (fleet, _) = blob_fleet(2, 4, 1);
        assert!(matches!(
            consolidate(&[], &with(Consolidation::PlainAverage), &fleet),
            Err(Error::EmptyAggregation)
        ));
        let ups = [scalar_update(0, 1.0, 0), scalar_update(1, 1.0, 0)];
        assert!(matches!(
            consolidate(&ups, &with(Consolidation::DataWeighted), &fleet),
            Err(Error::DegenerateWeights(_))
        ));
    }

    #[test]
    fn local_round_contract() {
        let (fleet, _) = blob_fleet(2, 20, 4);
        let global = init_global(1, dims()).unwrap().current;
        let cfg = train_cfg();
        let LocalOutcome::Trained { update, local } =
            local_round(&fleet[0], &global, 3, &cfg).unwrap()
        else {
            panic!("view is not empty");
        };
        assert_eq!(update.num_samples, fleet[0].train_view(3).len());
        assert_eq!(
            apply_delta(global.params(), &update.delta).unwrap(),
            *local.params()
        );
        assert_eq!(update.update_bytes, update.delta.to_bytes().len() as u64);
        assert!(
            (update.sim_train_ms - update.num_samples as f64 * cfg.per_sample_cost_ms).abs() < 1e-9
        );

        let frozen = TrainConfig { epochs: 0, ..cfg };
        let LocalOutcome::Trained { update, .. } =
            local_round(&fleet[0], &global, 3, &frozen).unwrap()
        else {
            panic!("view is not empty");
        };
        assert!(update.delta.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn latency_adds_to_sim_time() {
        let (mut fleet, _) = blob_fleet(1, 20, 4);
        fleet[0].status = NodeStatus::Degraded { latency_ms: 250.0 };
        let global = init_global(1, dims()).unwrap().current;
        let LocalOutcome::Trained { update, .. } =
            local_round(&fleet[0], &global, 0, &train_cfg()).unwrap()
        else {
            panic!("view is not empty");
        };
        assert!((update.sim_train_ms - (250.0 + update.num_samples as f64 * 0.01)).abs() < 1e-9);
    }

    #[test]
    fn all_offline_round_is_a_no_op() {
        let (mut fleet, test) = blob_fleet(3, 10, 2);
        for n in &mut fleet {
            n.status = NodeStatus::Offline;
        }
        let mut reg = init_global(1, dims()).unwrap();
        let before = reg.clone();
        let r = run_round(
            &mut reg,
            &mut fleet,
            &scheme(Sampling::All),
            &train_cfg(),
            0,
            &test,
        )
        .unwrap();
        assert!(r.skipped);
        assert_eq!(r.update_bytes, 0);
        assert_eq!(reg, before);
    }

    #[test]
    fn round_bumps_version_and_counts_bytes() {
        let (mut fleet, test) = blob_fleet(3, 10, 2);
        fleet[1].status = NodeStatus::Offline;
        let mut reg = init_global(1, dims()).unwrap();
        let r = run_round(
            &mut reg,
            &mut fleet,
            &scheme(Sampling::All),
            &train_cfg(),
            0,
            &test,
        )
        .unwrap();
        assert_eq!(reg.version, 1);
        assert_eq!(r.sampled, vec![0, 2]);
        let per_node = 8 * dims().layout().param_count() + dims().layout().header_len();
        assert_eq!(r.update_bytes, 2 * per_node as u64);
        assert!(fleet[1].local_model.is_none());
        assert!(fleet[0].local_model.is_some());
        assert_eq!(reg.history, vec![(1, r.accuracy)]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn weights_normalized_and_order_free(
            samples in proptest::collection::vec((1usize..500, 0.1f64..10.0, -1.0f64..1.0), 1..10),
            rot in 0usize..10,
        ) {
            let (mut fleet, _) = blob_fleet(samples.len(), 2, 1);
            let mut ups = Vec::new();
            for (i, &(n, c, d)) in samples.iter().enumerate() {
                fleet[i].criticality = c;
                ups.push(scalar_update(i, d, n));
            }
            for c in [Consolidation::PlainAverage, Consolidation::DataWeighted, Consolidation::CriticalityWeighted] {
                let s = with(c);
                let w = consolidation_weights(&ups, &s, &fleet).unwrap();
                let total: f64 = w.iter().map(|&(_, w)| w).sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
                let a = consolidate(&ups, &s, &fleet).unwrap();
                let mut shuffled = ups.clone();
                let k = rot % shuffled.len();
                shuffled.rotate_left(k);
                shuffled.reverse();
                prop_assert_eq!(a, consolidate(&shuffled, &s, &fleet).unwrap());
            }
        }
    }
}
