use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use driftqec::commands::{self, Common, EvalOverrides, EvalRequest, GridAxis};
use driftqec::config::{self, OUTPUT_ROOT_VAR};
use driftqec::output::MetricsRow;
use driftqec::runner::AgentKind;
use driftqec::CliError;

/// Survival control of a logical qubit under drifting noise.
#[derive(Parser)]
#[command(name = "driftqec", version)]
struct Cli {
    /// Print the documented reference config and exit.
    #[arg(long)]
    print_defaults: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML config; every key is optional.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Dotted override, e.g. `agent.eta_meta=0`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output root; the run name is appended.
    #[arg(long, env = OUTPUT_ROOT_VAR)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Use `harness.full_eval_runs` evaluation runs.
    #[arg(long)]
    full: bool,
}

impl From<CommonArgs> for Common {
    fn from(a: CommonArgs) -> Self {
        Common {
            config: a.config,
            overrides: a.overrides,
            out: a.out,
            threads: a.threads,
            full: a.full,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the documented reference config.
    PrintDefaults,
    /// Train learners and write checkpoints and training logs.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// chdqn, gated, no-meta, no-consistency or both-off. Repeatable.
        #[arg(long, value_parser = parse_kind)]
        agent: Vec<AgentKind>,
        /// Restrict to these distances. Repeatable.
        #[arg(long)]
        distance: Vec<u32>,
    },
    /// Evaluate checkpoints and the static policy.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoints to evaluate (default: everything under <out>/train).
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        /// Skip the static reference policy.
        #[arg(long)]
        no_static: bool,
        /// Restrict to these distances. Repeatable.
        #[arg(long)]
        distance: Vec<u32>,
        /// Evaluation runs per policy and distance.
        #[arg(long)]
        runs: Option<usize>,
        /// Seed of the first evaluation run; run i uses base + i.
        #[arg(long)]
        base_seed: Option<u64>,
        /// Write per-cycle JSONL traces.
        #[arg(long)]
        traces: bool,
    },
    /// Train and compare the learner with its extra terms switched off.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
        /// Distance to ablate at (default: `harness.ablation_distance`).
        #[arg(long)]
        distance: Option<u32>,
    },
    /// Train and evaluate on every cell of a parameter grid.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Axis as `key=[v1, v2, ...]`. Repeatable.
        #[arg(long, value_name = "KEY=[VALUES]")]
        grid: Vec<String>,
    },
}

fn parse_kind(s: &str) -> Result<AgentKind, String> {
    AgentKind::parse(s).ok_or_else(|| format!("unknown agent `{s}`"))
}

fn print_metrics(rows: &[MetricsRow]) {
    println!("{:<16} {:>3} {:>8} {:>18} {:>10} {:>9}", "policy", "d", "TTT", "95% CI", "HZ", "CTRL");
    for r in rows {
        println!(
            "{:<16} {:>3} {:>8.2} {:>18} {:>10.6} {:>9.2}",
            r.policy,
            r.d,
            r.ttt_mean,
            format!("[{:.1}, {:.1}]", r.ttt_ci_lo, r.ttt_ci_hi),
            r.hz_mean,
            r.ctrl_mean
        );
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.print_defaults {
        print!("{}", config::reference_config());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(CliError::Config("no command given; see --help".into()));
    };
    match command {
        Command::PrintDefaults => print!("{}", config::reference_config()),
        Command::Train { common, agent, distance } => {
            for p in commands::train(&common.into(), &agent, &distance)? {
                println!("{}", p.display());
            }
        }
        Command::Evaluate {
            common,
            checkpoint,
            no_static,
            distance,
            runs,
            base_seed,
            traces,
        } => {
            let req = EvalRequest {
                checkpoints: checkpoint,
                with_static: !no_static,
                distances: distance,
            };
            let tables = commands::evaluate(&common.into(), req, &EvalOverrides { runs, base_seed, traces })?;
            print_metrics(&tables.metrics);
        }
        Command::Ablate { common, distance } => {
            let report = commands::ablate(&common.into(), distance)?;
            println!("{:<16} {:>8} {:>22} {:>14}", "variant", "TTT", "vs static (paired)", "gap reduction");
            for r in &report.rows {
                let gap = report
                    .gap_reduction(r.variant)
                    .filter(|_| r.variant != driftqec_core::eval::AblationVariant::Full)
                    .map_or("-".to_string(), |g| format!("{:.1}%", 100.0 * g));
                println!(
                    "{:<16} {:>8.2} {:>22} {:>14}",
                    r.variant.name(),
                    r.metrics.ttt_mean,
                    format!("{:+.1} [{:.1}, {:.1}]", r.vs_static.mean, r.vs_static.ci95.0, r.vs_static.ci95.1),
                    gap
                );
            }
        }
        Command::Sweep { common, grid } => {
            let axes = grid.iter().map(|g| GridAxis::parse(g)).collect::<Result<Vec<_>, _>>()?;
            let rows = commands::sweep(&common.into(), &axes)?;
            for r in rows {
                println!("{:>3} {} {} TTT {:.2}", r.rank.unwrap_or(0), r.cell, r.settings, r.ttt_mean.unwrap_or(f64::NAN));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
