//! Command-line runner for lapgrad scenarios.
//!
//! Exit codes: 0 success, 2 config/validation failure, 3 divergence.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use lapgrad::protocol::ProtocolError;
use lapgrad::scenario::{
    self, emit_plot_data, parse_scenario, RunArtifact, ScenarioInstance, ScenarioKind,
    ScenarioOutcome, ScenarioSpec,
};
use lapgrad::ScenarioError;

#[derive(Parser)]
#[command(
    name = "lapgrad",
    about = "Distributed sum-preserving resource allocation: scenario runner",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Scenario config file.
    config: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the CSV thinning stride.
    #[arg(long)]
    stride: Option<u64>,
    /// Output directory (default: out/<scenario-name>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario's protocol blocks sequentially and write artifacts.
    Run {
        #[command(flatten)]
        common: CommonOpts,
        /// Run only the protocol block with this label.
        #[arg(long)]
        protocol: Option<String>,
    },
    /// Run all protocol blocks in parallel and also write plot-data tables.
    Sweep {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Solve the centralized problem and print the oracle record.
    Oracle {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Parse and validate a config (including building the scenario).
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    if let Some(s) = err.downcast_ref::<ScenarioError>() {
        return match s {
            ScenarioError::Protocol(ProtocolError::Diverged { .. }) => 3,
            _ => 2,
        };
    }
    1
}

fn load_spec(path: &Path, seed: Option<u64>, stride: Option<u64>) -> anyhow::Result<ScenarioSpec> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let mut spec = parse_scenario(&text)?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    if let Some(stride) = stride {
        spec.output.stride = stride.max(1);
        for block in &mut spec.protocols {
            block.config.recording.stride = stride.max(1);
        }
    }
    Ok(spec)
}

fn out_dir(common: &CommonOpts, spec: &ScenarioSpec) -> PathBuf {
    common.out.clone().unwrap_or_else(|| {
        let sub = spec.output.dir.clone().unwrap_or_else(|| spec.name.clone());
        PathBuf::from("out").join(sub)
    })
}

fn kind_runner(
    instance: &ScenarioInstance,
) -> fn(&ScenarioInstance) -> Result<ScenarioOutcome, ScenarioError> {
    match instance.kind {
        ScenarioKind::Cpu => scenario::run_cpu_scenario,
        ScenarioKind::Dispatch => scenario::run_dispatch_scenario,
        ScenarioKind::Generic => scenario::run_scenario,
    }
}

fn write_artifacts(dir: &Path, outcome: &ScenarioOutcome, plots: bool) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    for artifact in &outcome.artifacts {
        fs::write(dir.join(format!("{}.csv", artifact.label)), &artifact.csv)?;
        fs::write(
            dir.join(format!("{}.summary.txt", artifact.label)),
            &artifact.summary_text,
        )?;
    }
    fs::write(dir.join("summary.csv"), &outcome.summary_table)?;
    if plots {
        let data = emit_plot_data(&outcome.artifacts);
        fs::write(dir.join("plot_residual.csv"), &data.residual)?;
        fs::write(dir.join("plot_cost.csv"), &data.cost)?;
        fs::write(dir.join("plot_states.csv"), &data.states)?;
    }
    Ok(())
}

fn report(outcome: &ScenarioOutcome, dir: &Path) {
    for artifact in &outcome.artifacts {
        let s = &artifact.record.summary;
        println!(
            "{}: steps={} final_residual={} max_drift={:e}",
            artifact.label,
            s.steps,
            s.final_residual
                .map_or("n/a".into(), |r| format!("{r:e}")),
            s.max_sum_drift
        );
    }
    for check in &outcome.checks {
        println!(
            "check {}: {} ({})",
            check.name,
            if check.passed { "pass" } else { "FAIL" },
            check.detail
        );
    }
    println!("artifacts written to {}", dir.display());
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run { common, protocol } => {
            let mut spec = load_spec(&common.config, common.seed, common.stride)?;
            if let Some(label) = &protocol {
                spec.protocols.retain(|p| &p.label == label);
                anyhow::ensure!(
                    !spec.protocols.is_empty(),
                    "no protocol block labelled `{label}`"
                );
            }
            let dir = out_dir(&common, &spec);
            let instance = spec.build()?;
            let outcome = kind_runner(&instance)(&instance)?;
            write_artifacts(&dir, &outcome, false)?;
            report(&outcome, &dir);
            Ok(())
        }
        Command::Sweep { common } => {
            let spec = load_spec(&common.config, common.seed, common.stride)?;
            let dir = out_dir(&common, &spec);
            let instance = spec.build()?;
            scenario::pre_flight(&instance)?;
            // blocks are independent; run them on worker threads and
            // reassemble in block order so outputs are deterministic
            let instance_ref = &instance;
            let artifacts: Vec<Result<RunArtifact, ScenarioError>> =
                std::thread::scope(|scope| {
                    let handles: Vec<_> = (0..instance_ref.protocols.len())
                        .map(|i| scope.spawn(move || scenario::run_block(instance_ref, i)))
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("worker panicked"))
                        .collect()
                });
            let artifacts = artifacts.into_iter().collect::<Result<Vec<_>, _>>()?;
            let outcome = scenario::assemble_outcome(&instance, artifacts);
            write_artifacts(&dir, &outcome, true)?;
            report(&outcome, &dir);
            Ok(())
        }
        Command::Oracle { config, seed } => {
            let spec = load_spec(&config, seed, None)?;
            let instance = spec.build()?;
            let oracle = &instance.oracle;
            println!("scenario: {}", instance.name);
            println!("config_sha256: {}", instance.config_sha256);
            println!("method: {:?}", oracle.method);
            println!("psi_star: {}", oracle.psi_star);
            println!("f_star: {}", oracle.f_star);
            println!("residual_kkt: {:e}", oracle.residual_kkt);
            match &instance.stacked {
                Some(stacked) => {
                    let (x, r) = stacked.split_solution(&oracle.x_star);
                    for (i, xi) in x.iter().enumerate() {
                        println!("x{i}: {xi}");
                    }
                    for (j, rj) in r.iter().enumerate() {
                        println!("r{j}: {rj}");
                    }
                }
                None => {
                    for (i, xi) in oracle.x_star.iter().enumerate() {
                        println!("x{i}: {xi}");
                    }
                }
            }
            Ok(())
        }
        Command::Validate { config } => {
            let text = fs::read_to_string(&config)
                .with_context(|| format!("cannot read config {}", config.display()))?;
            let spec = parse_scenario(&text)?;
            let instance = spec.build()?;
            scenario::pre_flight(&instance)?;
            instance.initialize()?;
            println!(
                "{}: ok (n={}, {} phase(s), {} protocol block(s))",
                spec.name,
                instance.n(),
                instance.schedule.phases().len(),
                instance.protocols.len()
            );
            Ok(())
        }
    }
}
