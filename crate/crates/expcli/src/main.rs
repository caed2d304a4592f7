use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dsca_expcli::output::{write_atomic, write_json};
use dsca_expcli::runner::{execute, Outcome, Overrides};
use dsca_expcli::sweep::{run_sweep, Axis};
use dsca_expcli::validate::{run_validation, Fault};
use dsca_expcli::{CliError, ExperimentConfig, OUT_DIR_ENV};

#[derive(Parser)]
#[command(name = "dsca", version, about = "Asynchronous decentralized SCA experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one config and write its trace CSV and summary JSON.
    Run(RunArgs),
    /// Run the invariant suite and print a JSON report.
    Validate(ValidateArgs),
    /// Run a Cartesian grid over gamma, mu, seed or d_tv.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct Common {
    /// Output directory; takes precedence over `output.dir` in the config.
    /// `validate` writes `validate.json` there only when it is given.
    #[arg(long, env = OUT_DIR_ENV)]
    out_dir: Option<PathBuf>,
    /// Only report errors.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    common: Common,
    /// Replace the schedule seed.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Replace the iteration horizon.
    #[arg(long)]
    max_iters: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// NAME=V1,V2,... with NAME one of gamma, mu, d_tv, seed (seed also takes A..B).
    #[arg(long = "axis", required = true)]
    axes: Vec<String>,
    #[command(flatten)]
    common: Common,
    /// Root schedule seed that seed-axis offsets are added to.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Replace the iteration horizon of every point.
    #[arg(long)]
    max_iters: Option<u64>,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long = "inject-fault", value_enum, hide = true)]
    faults: Vec<Fault>,
}

fn out_dir(common: &Common, cfg: Option<&ExperimentConfig>) -> PathBuf {
    common
        .out_dir
        .clone()
        .or_else(|| cfg.map(|c| c.output.dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn cmd_run(args: RunArgs) -> Result<u8, CliError> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let ov = Overrides {
        schedule_seed: args.seed_override,
        max_iters: args.max_iters,
        ..Default::default()
    };
    let dir = out_dir(&args.common, Some(&cfg));
    let art = execute(&cfg, &ov, None)?;
    let stem = dir.join(cfg.name());
    write_atomic(&stem.with_extension("trace.csv"), &art.trace_csv)?;
    write_json(&stem.with_extension("summary.json"), &art.summary)?;
    if !args.common.quiet {
        report_run(cfg.name(), &art.summary, &dir);
    }
    Ok(match art.outcome {
        Outcome::Completed => 0,
        Outcome::InvariantBreach(v) => {
            eprintln!("{}: invariant breach: {}", cfg.name(), v.join("; "));
            3
        }
        Outcome::Diverged(msg) => {
            eprintln!("{}: {msg}", cfg.name());
            3
        }
    })
}

fn report_run(name: &str, s: &serde_json::Value, dir: &Path) {
    let fin = &s["final"];
    eprintln!(
        "{name}: {} ({} iterations, stop {}), U_gap {}, merit {}, rate lambda {} -> {}",
        s["outcome"].as_str().unwrap_or("?"),
        s["stats"]["iterations"],
        s["stop_reason"].as_str().unwrap_or("-"),
        fin["u_gap"],
        fin["merit"],
        s["rate_fit"]["lambda"],
        dir.display()
    );
}

fn cmd_sweep(args: SweepArgs) -> Result<u8, CliError> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let axes = args.axes.iter().map(|a| a.parse()).collect::<Result<Vec<Axis>, _>>()?;
    let base = Overrides {
        schedule_seed: args.seed_override,
        max_iters: args.max_iters,
        ..Default::default()
    };
    let report = run_sweep(&cfg, &base, &axes, cfg.metrics.execution)?;
    let dir = out_dir(&args.common, Some(&cfg)).join(format!("{}_sweep", cfg.name()));
    for (i, point) in report.points.iter().enumerate() {
        let stem = dir.join(format!("{}_p{i:03}", cfg.name()));
        match &point.result {
            Ok(art) => {
                let mut summary = art.summary.clone();
                summary["sweep_point"] = report.point_json(i);
                write_atomic(&stem.with_extension("trace.csv"), &art.trace_csv)?;
                write_json(&stem.with_extension("summary.json"), &summary)?;
            }
            Err(e) => eprintln!("{}: point {i} failed: {e}", cfg.name()),
        }
    }
    write_atomic(&dir.join("aggregate.csv"), report.aggregate_csv(&cfg).as_bytes())?;
    if !args.common.quiet {
        eprintln!("{}: {} sweep points -> {}", cfg.name(), report.points.len(), dir.display());
    }
    Ok(report.exit_code())
}

fn cmd_validate(args: ValidateArgs) -> Result<u8, CliError> {
    let report = run_validation(&args.faults);
    let value = serde_json::to_value(&report).expect("plain data");
    if let Some(dir) = &args.common.out_dir {
        write_json(&dir.join("validate.json"), &value)?;
    }
    println!("{}", serde_json::to_string_pretty(&value).expect("plain data"));
    if report.pass {
        Ok(0)
    } else {
        if !args.common.quiet {
            eprintln!("failing invariants: {}", report.failing().join(", "));
        }
        Ok(3)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Validate(a) => cmd_validate(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

