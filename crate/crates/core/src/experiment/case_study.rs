//! Building a fleet from a scenario, running it, and the branched
//! fault/recovery case study.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{DatasetConfig, ScenarioConfig};
use super::metrics::{
    emit_communication_csv, emit_curves_csv, emit_metrics_csv, emit_recovery_csv, MetricsRow,
};
use super::svg::emit_recovery_svg;
use crate::dataset::{load_mnist_dir, partition, synth_blobs, LabeledDataset};
use crate::error::{Error, Result};
use crate::faults::{CheckpointStore, FaultEvent, FaultKind, RecoveryReport, RecoveryStrategy};
use crate::federation::{init_global, AutoRecovery, NodeState, Simulation};
use crate::model::ModelDims;
use crate::rng::{self, tag};

/// Loads the train and test splits named by the dataset section.
pub fn load_data(cfg: &ScenarioConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    match &cfg.dataset {
        DatasetConfig::Idx {
            dir,
            train_limit,
            test_limit,
        } => {
            let dir = dir.as_ref().ok_or_else(|| {
                Error::config(
                    "dataset.dir",
                    "no data directory; set it in the config, pass --data-dir or set FEDFLEET_DATA_DIR",
                )
            })?;
            let split = load_mnist_dir(dir)?;
            Ok((split.train.head(*train_limit), split.test.head(*test_limit)))
        }
        DatasetConfig::Synthetic {
            samples_per_class,
            test_samples_per_class,
            dims,
            num_classes,
            spread,
        } => {
            let all = synth_blobs(
                rng::derive_seed(&[cfg.seed, tag::SYNTH]),
                samples_per_class + test_samples_per_class,
                *dims,
                *num_classes,
                *spread,
            )?;
            let cut = samples_per_class * num_classes;
            let train: Vec<usize> = (0..cut).collect();
            let test: Vec<usize> = (cut..all.len()).collect();
            Ok((all.subset(&train), all.subset(&test)))
        }
    }
}

/// Partitions the data over `num_nodes` nodes and sets up the global model,
/// checkpoint store and evaluation pool. No fault or recovery policy is
/// attached.
pub fn build_simulation(
    cfg: &ScenarioConfig,
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<Simulation> {
    cfg.validate()?;
    let classes = train.num_classes();
    if let Some(&c) = cfg
        .drift
        .base_classes
        .iter()
        .chain(&cfg.drift.drift_classes)
        .find(|&&c| c >= classes)
    {
        return Err(Error::config(
            "drift",
            format!("class {c} outside 0..{classes}"),
        ));
    }
    let dims = ModelDims::new(train.num_features(), cfg.train.hidden_dim, classes)?;
    let train_shards = partition(train, &cfg.partition_spec(), cfg.num_nodes)?;
    let test_shards = partition(test, &cfg.test_partition_spec(), cfg.num_nodes)?;
    let data_seed = rng::derive_seed(&[cfg.seed, tag::DRIFT_TRAIN]);
    let mut fleet = Vec::with_capacity(cfg.num_nodes);
    for (id, (tr, te)) in train_shards.into_iter().zip(test_shards).enumerate() {
        let mut node = NodeState::new(id, tr, te, cfg.drift.clone(), data_seed);
        if let Some(c) = &cfg.scheme.criticality {
            node = node.with_criticality(c[id])?;
        }
        if let Some(l) = &cfg.scheme.baseline_latency_ms {
            node = node.with_baseline_latency(l[id])?;
        }
        fleet.push(node);
    }
    let registry = init_global(rng::derive_seed(&[cfg.seed, tag::INIT]), dims)?;
    Ok(Simulation::new(
        registry,
        fleet,
        cfg.aggregation_scheme(),
        cfg.train_config(),
        test.clone(),
        cfg.drift.clone(),
        rng::derive_seed(&[cfg.seed, tag::DRIFT_TEST]),
        CheckpointStore::new(cfg.recovery.checkpoint_interval)?,
    ))
}

/// Output of a plain multi-round run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: Vec<MetricsRow>,
    pub recoveries: Vec<(usize, RecoveryReport)>,
    pub checkpoints: CheckpointStore,
    pub fingerprint: u64,
}

impl RunOutput {
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let reports: Vec<RecoveryReport> = self.recoveries.iter().map(|(_, r)| r.clone()).collect();
        let mut written = vec![
            write(dir, "metrics.csv", &emit_metrics_csv(&self.metrics))?,
            write(
                dir,
                "communication.csv",
                &emit_communication_csv(&self.metrics),
            )?,
            write(dir, "recovery.csv", &emit_recovery_csv(&reports))?,
        ];
        written.extend(self.checkpoints.write_dir(&dir.join("checkpoints"))?);
        Ok(written)
    }
}

/// Runs `cfg.rounds` rounds with every configured fault. Nodes that lose
/// their model are restored by the first configured recovery strategy.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput> {
    let (train, test) = load_data(cfg)?;
    run_scenario_on(cfg, &train, &test)
}

pub fn run_scenario_on(
    cfg: &ScenarioConfig,
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<RunOutput> {
    let mut sim = build_simulation(cfg, train, test)?;
    let events = cfg.fault_events()?;
    sim.tracked_node = events.first().map(|e| e.node_id);
    sim.auto_recovery = cfg.recovery.strategies().first().map(|s| AutoRecovery {
        strategy: *s,
        threshold: cfg.recovery.threshold,
        epoch_cap: cfg.recovery.epoch_cap,
    });
    let metrics = sim.run_rounds(cfg.rounds, &events)?;
    Ok(RunOutput {
        metrics,
        recoveries: sim.recoveries.clone(),
        fingerprint: sim.fingerprint(),
        checkpoints: sim.checkpoints,
    })
}

/// One recovery strategy applied to a fork of the faulted world.
#[derive(Debug, Clone)]
pub struct Branch {
    pub strategy: RecoveryStrategy,
    /// World fingerprint when the branch forked off the trunk.
    pub start_fingerprint: u64,
    pub report: RecoveryReport,
    /// Rounds after the fault round.
    pub metrics: Vec<MetricsRow>,
    pub end_fingerprint: u64,
}

#[derive(Debug, Clone)]
pub struct CaseStudy {
    pub fault: FaultEvent,
    /// Rounds up to and including the fault round.
    pub trunk: Vec<MetricsRow>,
    pub trunk_fingerprint: u64,
    pub branches: Vec<Branch>,
    pub checkpoints: CheckpointStore,
}

/// Runs the shared trunk through the first model-loss fault, then forks one
/// branch per recovery strategy. Each branch restores the node at the end of
/// the fault round and continues to `cfg.rounds`.
pub fn run_case_study(cfg: &ScenarioConfig) -> Result<CaseStudy> {
    let (train, test) = load_data(cfg)?;
    run_case_study_on(cfg, &train, &test)
}

pub fn run_case_study_on(
    cfg: &ScenarioConfig,
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<CaseStudy> {
    let events = cfg.fault_events()?;
    let fault = events
        .iter()
        .find(|e| e.kind == FaultKind::OfflineModelLoss)
        .cloned()
        .ok_or_else(|| {
            Error::config("faults", "the case study needs an offline_model_loss fault")
        })?;
    if fault.round >= cfg.rounds {
        return Err(Error::config(
            "faults.round",
            format!(
                "fault round {} is not before rounds = {}",
                fault.round, cfg.rounds
            ),
        ));
    }
    if cfg.recovery.strategies.is_empty() {
        return Err(Error::config(
            "recovery.strategies",
            "at least one strategy is needed",
        ));
    }

    let mut trunk = build_simulation(cfg, train, test)?;
    trunk.tracked_node = Some(fault.node_id);
    let trunk_rows = trunk.run_rounds(fault.round + 1, &events)?;
    let trunk_fingerprint = trunk.fingerprint();

    let strategies = cfg.recovery.strategies();
    let branches = strategies
        .par_iter()
        .map(|strategy| {
            let mut sim = trunk.clone();
            let start_fingerprint = sim.fingerprint();
            let report = sim.recover_node(
                fault.node_id,
                strategy,
                cfg.recovery.threshold,
                cfg.recovery.epoch_cap,
                fault.round,
            )?;
            sim.auto_recovery = Some(AutoRecovery {
                strategy: *strategy,
                threshold: cfg.recovery.threshold,
                epoch_cap: cfg.recovery.epoch_cap,
            });
            let metrics = sim.run_rounds(cfg.rounds - fault.round - 1, &events)?;
            Ok(Branch {
                strategy: *strategy,
                start_fingerprint,
                report,
                metrics,
                end_fingerprint: sim.fingerprint(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(b) = branches
        .iter()
        .find(|b| b.start_fingerprint != trunk_fingerprint)
    {
        return Err(Error::Domain(format!(
            "branch {} forked from a different world state",
            b.strategy.kind.name()
        )));
    }

    Ok(CaseStudy {
        fault,
        trunk: trunk_rows,
        trunk_fingerprint,
        branches,
        checkpoints: trunk.checkpoints,
    })
}

impl CaseStudy {
    pub fn reports(&self) -> Vec<RecoveryReport> {
        self.branches.iter().map(|b| b.report.clone()).collect()
    }

    pub fn report(&self, name: &str) -> Option<&RecoveryReport> {
        self.branches
            .iter()
            .map(|b| &b.report)
            .find(|r| r.strategy.name() == name)
    }

    pub fn recovery_svg(&self) -> Vec<u8> {
        let curves: Vec<(String, Vec<f64>)> = self
            .branches
            .iter()
            .map(|b| (b.report.strategy.name().to_string(), b.report.curve.clone()))
            .collect();
        emit_recovery_svg(&curves)
    }

    /// Writes every artifact except the run manifest into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let reports = self.reports();
        let mut written = vec![
            write(dir, "metrics.csv", &emit_metrics_csv(&self.trunk))?,
            write(dir, "recovery.csv", &emit_recovery_csv(&reports))?,
            write(dir, "recovery-curves.csv", &emit_curves_csv(&reports))?,
            write(dir, "recovery.svg", &self.recovery_svg())?,
            write(
                dir,
                "communication.csv",
                &emit_communication_csv(&self.trunk),
            )?,
        ];
        for b in &self.branches {
            if !b.metrics.is_empty() {
                let name = format!("metrics-{}.csv", b.report.strategy.name());
                written.push(write(dir, &name, &emit_metrics_csv(&b.metrics))?);
            }
        }
        written.extend(self.checkpoints.write_dir(&dir.join("checkpoints"))?);
        Ok(written)
    }
}

/// Creates `dir` and writes the resolved configuration as `run-manifest.json`.
pub fn write_manifest(cfg: &ScenarioConfig, dir: &Path) -> Result<PathBuf> {
    write(dir, "run-manifest.json", &cfg.manifest_json())
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::parse_config;

    fn small() -> ScenarioConfig {
        parse_config(
            br#"{
                "dataset": {"source": "synthetic", "samples_per_class": 30, "test_samples_per_class": 10,
                            "dims": 16, "num_classes": 4, "spread": 0.05},
                "num_nodes": 3,
                "drift": {"base_classes": [0, 1], "drift_classes": [2, 3],
                          "start_round": 2, "ramp_rounds": 2, "target_fraction": 0.5},
                "train": {"hidden_dim": 8, "batch_size": 8, "learning_rate": 0.2},
                "faults": [{"round": 4, "node_id": 1, "kind": "offline_model_loss"}],
                "recovery": {"checkpoint_interval": 2, "max_checkpoint_age_rounds": 4,
                             "post_recovery_epochs": 3, "epoch_cap": 10},
                "rounds": 6
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn case_study_shapes() {
        let cs = run_case_study(&small()).unwrap();
        assert_eq!(cs.trunk.len(), 5);
        assert_eq!(cs.branches.len(), 3);
        for b in &cs.branches {
            assert_eq!(b.start_fingerprint, cs.trunk_fingerprint);
            assert_eq!(b.metrics.len(), 1);
            assert_eq!(b.metrics[0].round, 5);
            assert!(b.report.curve.len() >= 4);
        }
        assert_eq!(cs.trunk[4].faulted_node_accuracy, None);
        assert_eq!(cs.checkpoints.rounds(1), vec![0, 2]);
    }

    #[test]
    fn case_study_is_deterministic() {
        let a = run_case_study(&small()).unwrap();
        let b = run_case_study(&small()).unwrap();
        assert_eq!(a.trunk, b.trunk);
        assert_eq!(a.reports(), b.reports());
        for (x, y) in a.branches.iter().zip(&b.branches) {
            assert_eq!(x.end_fingerprint, y.end_fingerprint);
        }
    }

    #[test]
    fn writes_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        write_manifest(&cfg, dir.path()).unwrap();
        run_case_study(&cfg).unwrap().write_to(dir.path()).unwrap();
        for name in [
            "run-manifest.json",
            "metrics.csv",
            "recovery.csv",
            "recovery-curves.csv",
            "recovery.svg",
            "communication.csv",
            "metrics-federated_push.csv",
            "checkpoints/ckpt-node1-r2.bin",
        ] {
            assert!(dir.path().join(name).is_file(), "{name}");
        }
    }

    #[test]
    fn scenario_run_auto_recovers() {
        let mut cfg = small();
        cfg.recovery.strategies.reverse();
        let out = run_scenario(&cfg).unwrap();
        assert_eq!(out.metrics.len(), 6);
        assert_eq!(out.recoveries.len(), 1);
        assert_eq!(out.recoveries[0].0, 1);
        assert!(out.metrics[5].faulted_node_accuracy.is_some());
    }

    #[test]
    fn missing_data_dir_is_config_error() {
        let cfg = ScenarioConfig::default();
        assert!(matches!(load_data(&cfg), Err(Error::Config { .. })));
    }
}
