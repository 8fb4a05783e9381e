//! `skillbench` command-line interface.
//!
//! Exit status is 0 on success, 2 when an input fails schema or consistency
//! checks, and 1 for any other failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use skillbench::dsl;
use skillbench::episode::{validate_dataset, write_manifest};
use skillbench::graph::MatchPolicy;
use skillbench::harness::{
    self, emit_report, load_instances, read_predictions, read_report, run_symbolic, score_noninteractive, HarnessError,
    ReportFormat, ScoringOptions, REPORT_JSON,
};
use skillbench::metrics::{Equivalence, MetricWeights, DEFAULT_TOLERANCE};
use skillbench::planner::PlannerConfig;
use skillbench::scenario::TaskInstance;

#[derive(Parser)]
#[command(name = "skillbench", version, about = "Collect demonstrations and score skill programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Randomize a scenario, generate its reference trajectory and store the episode.
    Collect {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score raw model outputs against stored instances.
    Score {
        #[arg(long)]
        instances: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        /// SR, PR, SPR and PM weights.
        #[arg(long, default_value = "0.25,0.25,0.25,0.25")]
        weights: MetricWeights,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "json,csv")]
        format: Vec<ReportFormat>,
        /// Numeric parameter tolerance.
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
        /// Only match a node whose reference predecessors are matched too.
        #[arg(long)]
        strict_predecessors: bool,
    },
    /// Replay a skill program symbolically on one instance and print its Progress Score.
    Simulate {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        sequence: PathBuf,
    },
    /// Re-emit a stored report in the requested formats.
    Report {
        #[arg(long, value_delimiter = ',', default_value = "json,csv")]
        format: Vec<ReportFormat>,
        #[arg(long, default_value = REPORT_JSON)]
        input: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Check every episode under a dataset root and optionally rewrite its manifest.
    Validate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        write_manifest: bool,
    },
}

fn print(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json value serializes"));
}

fn read_sequence(path: &Path) -> Result<dsl::SkillSequence, HarnessError> {
    let text = fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.into(), source })?;
    dsl::parse_program(&text).map_err(|e| HarnessError::Schema {
        path: path.into(),
        pointer: format!("{}:{}", e.line, e.col),
        reason: e.to_string(),
    })
}

fn run(cli: Cli) -> Result<ExitCode, HarnessError> {
    match cli.command {
        Command::Collect { scenario, seed, out } => {
            let c = harness::collect(&scenario, seed, &out, &PlannerConfig::default())?;
            print(&json!({
                "instance": c.instance_path,
                "episode": c.episode_path,
                "steps": c.steps,
                "success": c.success(),
                "failure": c.failure.as_ref().map(|f| json!({"index": f.index, "skill": f.skill, "error": f.error.to_string()})),
                "ps": c.replay.score,
            }));
        }
        Command::Score { instances, predictions, weights, out, format, tolerance, strict_predecessors } => {
            let instances = load_instances(&instances)?;
            let predictions = read_predictions(&predictions)?;
            let policy = if strict_predecessors { MatchPolicy::RequireMatchedPredecessors } else { MatchPolicy::MatchedPairsOnly };
            let opts = ScoringOptions { eq: Equivalence { abs_tol: tolerance }, policy };
            let report = score_noninteractive(&instances, &predictions, &weights, &opts)?;
            for w in &report.metadata.warnings {
                eprintln!("warning: {w}");
            }
            let mut formats = format;
            if !formats.contains(&ReportFormat::Json) {
                formats.insert(0, ReportFormat::Json);
            }
            let written = emit_report(&report, &formats, &out)?;
            print(&json!({ "written": written, "overall": report.overall }));
        }
        Command::Simulate { instance, sequence } => {
            let inst = TaskInstance::read(&instance)?;
            let seq = read_sequence(&sequence)?;
            let r = run_symbolic(&inst, &seq);
            print(&json!({
                "instance_id": inst.instance_id,
                "progress": r.progress,
                "ps": r.score,
                "outcomes": r.outcomes,
            }));
        }
        Command::Report { format, input, out } => {
            let report = read_report(&input)?;
            let written = emit_report(&report, &format, &out)?;
            print(&json!({ "written": written }));
        }
        Command::Validate { dataset, write_manifest: write } => {
            let v = if write { write_manifest(&dataset)? } else { validate_dataset(&dataset)? };
            print(&json!({ "manifest": v.manifest, "violations": v.violations }));
            if !v.is_valid() {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_schema_error() { 2 } else { 1 })
        }
    }
}
