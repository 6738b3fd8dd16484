//! `optdiag` command-line front end.
//!
//! On success prints one JSON summary line to stdout and exits 0. On failure
//! prints `{"error": {"kind": ..., "message": ...}}` to stderr and exits 1.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use optdiag::harness::{
    apply_env_overrides, parse_config, read_csv, read_jsonl, render_svg, run_experiment, run_ratio_protocol, run_rs_ab,
    run_sweep, ExperimentConfig, RunLog, RunPaths, Scale, Series,
};
use optdiag::metrics::MetricRecord;
use optdiag::{Error, Result};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "optdiag",
    version,
    about = "Instrumented optimizer runs and trajectory diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run { config: PathBuf },
    /// Two-phase convexity-ratio protocol.
    Ratio { config: PathBuf },
    /// Paired runs with and without random scaling.
    RsAb { config: PathBuf },
    /// Independent runs over a list of learning rates.
    Sweep {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        lr: Vec<f64>,
    },
    /// Plot record fields from CSV or JSONL logs as SVG.
    Plot {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        fields: Vec<String>,
        #[arg(long, value_enum, default_value_t = ScaleArg::Linear)]
        scale: ScaleArg,
        /// Trailing-mean window applied to every series (1 = raw values).
        #[arg(long, default_value_t = 1)]
        smooth: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Linear,
    Symlog,
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut cfg = parse_config(&text)?;
    apply_env_overrides(&mut cfg);
    Ok(cfg)
}

fn summary(log: &RunLog) -> serde_json::Value {
    let paths = RunPaths::of(&log.meta.config);
    json!({
        "name": log.meta.name,
        "records": log.records.len(),
        "final_loss": log.last().map(|r| r.loss),
        "csv": paths.csv,
        "jsonl": paths.jsonl,
        "checkpoint": log.abort.is_none().then_some(paths.checkpoint),
        "aborted_at": log.abort.as_ref().map(|a| a.step),
    })
}

fn complete(logs: &[&RunLog]) -> Result<()> {
    logs.iter().try_for_each(|l| l.ensure_complete())
}

fn execute(cli: Cli) -> Result<serde_json::Value> {
    match cli.command {
        Command::Run { config } => {
            let log = run_experiment(&load_config(&config)?)?;
            complete(&[&log])?;
            Ok(summary(&log))
        }
        Command::Ratio { config } => {
            let (p1, p2) = run_ratio_protocol(&load_config(&config)?)?;
            complete(&[&p2])?;
            Ok(json!({ "phase1": summary(&p1), "phase2": summary(&p2) }))
        }
        Command::RsAb { config } => {
            let (none, exp1) = run_rs_ab(&load_config(&config)?)?;
            complete(&[&none, &exp1])?;
            Ok(json!({ "none": summary(&none), "exp1": summary(&exp1) }))
        }
        Command::Sweep { config, lr } => {
            let logs = run_sweep(&load_config(&config)?, &lr)?;
            Ok(json!({ "runs": logs.iter().map(summary).collect::<Vec<_>>() }))
        }
        Command::Plot {
            logs,
            fields,
            scale,
            smooth,
            out,
        } => {
            let mut loaded: Vec<(String, Vec<MetricRecord>)> = Vec::new();
            for path in &logs {
                let entry = match path.extension().and_then(|e| e.to_str()) {
                    Some("jsonl") => {
                        let log = read_jsonl(path)?;
                        (log.meta.name, log.records)
                    }
                    Some("csv") => {
                        let stem = path
                            .file_stem()
                            .map(|s| s.to_string_lossy().into_owned())
                            .unwrap_or_default();
                        (stem, read_csv(path)?)
                    }
                    _ => {
                        return Err(Error::Contract(format!(
                            "{}: expected a .csv or .jsonl log",
                            path.display()
                        )))
                    }
                };
                loaded.push(entry);
            }
            let series: Vec<Series<'_>> = loaded
                .iter()
                .map(|(label, records)| Series {
                    label: label.clone(),
                    records,
                })
                .collect();
            let field_refs: Vec<&str> = fields.iter().map(String::as_str).collect();
            let scale = match scale {
                ScaleArg::Linear => Scale::Linear,
                ScaleArg::Symlog => Scale::Symlog,
            };
            std::fs::write(&out, render_svg(&series, &field_refs, scale, smooth)?)?;
            Ok(json!({ "svg": out }))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": { "kind": e.kind(), "message": e.to_string() } }));
            ExitCode::FAILURE
        }
    }
}
