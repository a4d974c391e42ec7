//! Scenario configuration, case-study orchestration and report emitters.

mod case_study;
mod config;
mod metrics;
pub mod svg;

pub use case_study::{
    build_simulation, load_data, run_case_study, run_case_study_on, run_scenario, run_scenario_on,
    write_manifest, Branch, CaseStudy, RunOutput,
};
pub use config::{
    parse_config, DatasetConfig, FaultConfig, FaultName, PartitionConfig, RecoveryConfig,
    ScenarioConfig, SchemeConfig, StrategyName, TrainSection,
};
pub use metrics::{
    emit_communication_csv, emit_curves_csv, emit_metrics_csv, emit_recovery_csv, MetricsRow,
    COMMUNICATION_HEADER, CURVES_HEADER, METRICS_HEADER, RECOVERY_HEADER,
};
pub use svg::emit_recovery_svg;
