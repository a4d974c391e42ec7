use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use fedfleet_core::dataset::partition;
use fedfleet_core::experiment::{
    load_data, parse_config, run_case_study_on, run_scenario_on, write_manifest, DatasetConfig,
    ScenarioConfig,
};
use fedfleet_core::model::gradcheck;
use fedfleet_core::Error;

const DATA_DIR_ENV: &str = "FEDFLEET_DATA_DIR";

#[derive(Parser, Debug)]
#[command(
    name = "fedfleet",
    version,
    about = "Federated learning fleet simulator with fault injection and recovery"
)]
struct Cli {
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the configured rounds and fault plan.
    Run(ScenarioArgs),
    /// Fork the world at the model-loss fault and compare recovery strategies.
    CaseStudy(ScenarioArgs),
    /// Print per-node shard sizes and label histograms.
    PartitionReport(ScenarioArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct ScenarioArgs {
    /// Scenario JSON; every key is optional.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Directory holding the four MNIST IDX files. Falls back to FEDFLEET_DATA_DIR.
    #[arg(long, value_name = "PATH")]
    data_dir: Option<PathBuf>,
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    #[arg(long, value_name = "N")]
    rounds: Option<usize>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = gradcheck::DEFAULT_STEP)]
    step: f64,
    #[arg(long, default_value_t = gradcheck::DEFAULT_TOLERANCE)]
    tolerance: f64,
}

/// Exit 1: the run itself failed. Exit 2: bad input.
enum Failure {
    Runtime(anyhow::Error),
    Usage(anyhow::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::ConfigParse { .. } => Failure::Usage(e.into()),
            other => Failure::Runtime(other.into()),
        }
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Warn,
        (false, 1) => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();

    let result = match &cli.command {
        Command::Run(args) => run(args, cli.quiet),
        Command::CaseStudy(args) => case_study(args, cli.quiet),
        Command::PartitionReport(args) => partition_report(args),
        Command::Gradcheck(args) => run_gradcheck(args, cli.quiet),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Config file, then command-line overrides, then validation.
fn resolve(args: &ScenarioArgs) -> Result<ScenarioConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => {
            let bytes = fs::read(path)
                .with_context(|| format!("cannot read config {}", path.display()))
                .map_err(usage)?;
            parse_config(&bytes)
                .with_context(|| format!("invalid config {}", path.display()))
                .map_err(usage)?
        }
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(rounds) = args.rounds {
        cfg.rounds = rounds;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let DatasetConfig::Idx { dir, .. } = &mut cfg.dataset {
        let env = std::env::var_os(DATA_DIR_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from);
        if let Some(d) = args.data_dir.clone().or_else(|| dir.take()).or(env) {
            *dir = Some(d);
        }
    } else if args.data_dir.is_some() {
        log::warn!("--data-dir ignored: the dataset source is synthetic");
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load(
    cfg: &ScenarioConfig,
) -> Result<(fedfleet_core::LabeledDataset, fedfleet_core::LabeledDataset), Failure> {
    load_data(cfg).map_err(|e| match e {
        Error::Io { .. } => usage(e),
        other => other.into(),
    })
}

fn manifest(cfg: &ScenarioConfig) -> Result<(), Failure> {
    write_manifest(cfg, &cfg.output_dir)?;
    Ok(())
}

fn report_written(files: &[PathBuf], dir: &Path, quiet: bool) {
    if !quiet {
        let top = files.iter().filter(|f| f.parent() == Some(dir)).count();
        println!(
            "wrote run-manifest.json and {top} files to {} ({} checkpoints)",
            dir.display(),
            files.len() - top
        );
    }
}

fn run(args: &ScenarioArgs, quiet: bool) -> Result<(), Failure> {
    let cfg = resolve(args)?;
    manifest(&cfg)?;
    let (train, test) = load(&cfg)?;
    let out = run_scenario_on(&cfg, &train, &test)?;
    let files = out.write_to(&cfg.output_dir)?;
    if !quiet {
        if let Some(last) = out.metrics.last() {
            println!(
                "{} rounds, final global accuracy {:.4}, {} update bytes",
                out.metrics.len(),
                last.global_test_accuracy,
                last.cumulative_update_bytes
            );
        }
        for (node, r) in &out.recoveries {
            println!(
                "node {node} recovered with {}: accuracy {:.4} at recovery",
                r.strategy.name(),
                r.accuracy_at_recovery
            );
        }
    }
    report_written(&files, &cfg.output_dir, quiet);
    Ok(())
}

fn case_study(args: &ScenarioArgs, quiet: bool) -> Result<(), Failure> {
    let cfg = resolve(args)?;
    manifest(&cfg)?;
    let (train, test) = load(&cfg)?;
    let cs = run_case_study_on(&cfg, &train, &test)?;
    let files = cs.write_to(&cfg.output_dir)?;
    if !quiet {
        println!(
            "fault: node {} lost its model at round {}",
            cs.fault.node_id, cs.fault.round
        );
        println!(
            "{:<22} {:>10} {:>10} {:>10} {:>8}",
            "strategy", "pre-fault", "threshold", "recovery", "epochs"
        );
        for b in &cs.branches {
            let r = &b.report;
            println!(
                "{:<22} {:>10.4} {:>10.4} {:>10.4} {:>8}",
                r.strategy.name(),
                r.pre_fault_accuracy,
                r.threshold_accuracy,
                r.accuracy_at_recovery,
                r.epochs_to_threshold
                    .map_or_else(|| "unreached".into(), |e| e.to_string())
            );
        }
    }
    report_written(&files, &cfg.output_dir, quiet);
    Ok(())
}

fn partition_report(args: &ScenarioArgs) -> Result<(), Failure> {
    let cfg = resolve(args)?;
    let (train, test) = load(&cfg)?;
    let train_shards = partition(&train, &cfg.partition_spec(), cfg.num_nodes)?;
    let test_shards = partition(&test, &cfg.test_partition_spec(), cfg.num_nodes)?;
    let classes = train.num_classes();
    let header: Vec<String> = (0..classes).map(|c| format!("{c:>5}")).collect();
    println!(
        "{:>4} {:>6} {:>6}  {}",
        "node",
        "train",
        "test",
        header.join("")
    );
    for (id, (tr, te)) in train_shards.iter().zip(&test_shards).enumerate() {
        let hist: Vec<String> = tr
            .label_histogram()
            .iter()
            .map(|n| format!("{n:>5}"))
            .collect();
        println!("{id:>4} {:>6} {:>6}  {}", tr.len(), te.len(), hist.join(""));
    }
    Ok(())
}

fn run_gradcheck(args: &GradcheckArgs, quiet: bool) -> Result<(), Failure> {
    if args.instances == 0 {
        return Err(usage(anyhow::anyhow!("--instances must be at least 1")));
    }
    let report = gradcheck::run_suite(args.instances, args.seed, args.step, args.tolerance)?;
    if !quiet {
        println!(
            "{} instances, worst relative error {:.3e} (seed {}), tolerance {:.1e}",
            report.instances, report.worst_error, report.worst_seed, report.tolerance
        );
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Runtime(anyhow::anyhow!(
            "{} of {} instances exceed the tolerance",
            report.failures,
            report.instances
        )))
    }
}
