//! Evaluation orchestration: symbolic execution for the Progress Score,
//! batch scoring of model output, report emission, and demonstration
//! collection.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dsl::{self, ParamValue, SkillSequence};
use crate::episode::{self, EpisodeError, EpisodeMetadata, EpisodeRecord};
use crate::graph::{build_graph, DependencyRule, MatchPolicy};
use crate::metrics::{progress_score, score_sequences, Equivalence, MetricError, MetricReport, MetricWeights, ProgressInput};
use crate::planner::{self, KinematicChain, PlanError, PlannerConfig};
use crate::scenario::{self, Dimension, Predicate, ScenarioError, TaskInstance};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("prediction for unknown instance `{0}`")]
    UnknownInstanceId(String),
    #[error("two instance files share the id `{0}`")]
    DuplicateInstance(String),
    #[error("schema error in {path} at `{pointer}`: {reason}")]
    Schema { path: PathBuf, pointer: String, reason: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl HarnessError {
    /// Malformed or inconsistent input data, as opposed to I/O or planning failures.
    pub fn is_schema_error(&self) -> bool {
        match self {
            HarnessError::Scenario(e) => matches!(e, ScenarioError::Schema { .. } | ScenarioError::MissingAsset(_) | ScenarioError::Cloud { .. }),
            HarnessError::Episode(e) => !matches!(e, EpisodeError::Io { .. }),
            HarnessError::Metric(MetricError::InvalidWeights(_)) => true,
            HarnessError::UnknownInstanceId(_) | HarnessError::DuplicateInstance(_) | HarnessError::Schema { .. } => true,
            _ => false,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

fn key(s: &str) -> String {
    s.trim().to_lowercase()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "at", rename_all = "snake_case")]
pub enum Location {
    World,
    Held,
    Inside(String),
}

/// World state tracked by the symbolic executor. Entity keys are lowercase.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolicState {
    pub locations: BTreeMap<String, Location>,
    /// Open flag of articulated entities.
    pub open: BTreeMap<String, bool>,
    pub pressed: BTreeSet<String>,
    /// Latched sub-step completion flags.
    pub completed: Vec<bool>,
}

impl SymbolicState {
    pub fn new(instance: &TaskInstance) -> Self {
        let mut s = SymbolicState {
            locations: BTreeMap::new(),
            open: BTreeMap::new(),
            pressed: BTreeSet::new(),
            completed: vec![false; instance.substeps.len()],
        };
        for e in &instance.entities {
            s.locations.insert(key(&e.entity_id), Location::World);
            if e.articulated {
                s.open.insert(key(&e.entity_id), e.initially_open);
            }
        }
        s
    }

    pub fn held(&self) -> Option<&str> {
        self.locations.iter().find(|(_, l)| **l == Location::Held).map(|(k, _)| k.as_str())
    }

    pub fn holds(&self, p: &Predicate) -> bool {
        match p {
            Predicate::Held { entity } => self.locations.get(&key(entity)) == Some(&Location::Held),
            Predicate::Inside { entity, container } => {
                self.locations.get(&key(entity)) == Some(&Location::Inside(key(container)))
            }
            Predicate::Open { entity } => self.open.get(&key(entity)) == Some(&true),
            Predicate::Closed { entity } => self.open.get(&key(entity)) == Some(&false),
            Predicate::Pressed { entity } => self.pressed.contains(&key(entity)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", content = "reason", rename_all = "snake_case")]
pub enum CallOutcome {
    Applied,
    /// Gate closed; the call has no effect but execution continues.
    NoOp(String),
    /// Execution stops here.
    Inapplicable(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymbolicRun {
    pub progress: ProgressInput,
    pub score: f64,
    pub outcomes: Vec<CallOutcome>,
    pub state: SymbolicState,
}

fn text_param<'a>(call: &'a dsl::SkillCall, names: &[&str]) -> Option<&'a str> {
    names.iter().find_map(|n| call.param(n).and_then(ParamValue::as_text))
}

fn apply(call: &dsl::SkillCall, instance: &TaskInstance, s: &mut SymbolicState) -> CallOutcome {
    use CallOutcome::*;
    let target = key(&call.target);
    let Some(entity) = instance.entity(&target) else {
        return Inapplicable(format!("unknown entity `{}`", call.target));
    };
    let held = s.held().map(str::to_string);
    let skill = call.skill.as_str();
    match skill {
        "Pick" => {
            if entity.receptacle {
                return Inapplicable(format!("`{target}` cannot be picked"));
            }
            match held {
                Some(h) if h == target => Applied,
                Some(h) => Inapplicable(format!("already holding `{h}`")),
                None => {
                    s.locations.insert(target, Location::Held);
                    Applied
                }
            }
        }
        "Place" | "Insert" | "Hang" => {
            // With a destination the target is the moved object; otherwise
            // the held object goes to the target.
            let (object, dest) = match text_param(call, &planner::DESTINATION_KEYS) {
                Some(d) => (target.clone(), key(d)),
                None => match &held {
                    Some(h) => (h.clone(), target.clone()),
                    None => return Inapplicable("nothing is held".into()),
                },
            };
            if let Some(h) = &held {
                if *h != object {
                    return Inapplicable(format!("holding `{h}`, not `{object}`"));
                }
            }
            let Some(container) = instance.entity(&dest) else {
                return Inapplicable(format!("unknown entity `{dest}`"));
            };
            if dest == object {
                return Inapplicable(format!("`{object}` cannot go into itself"));
            }
            if s.open.get(&dest) == Some(&false) {
                return NoOp(format!("`{dest}` is closed"));
            }
            let loc = if container.receptacle && skill != "Hang" { Location::Inside(dest) } else { Location::World };
            s.locations.insert(object, loc);
            Applied
        }
        "Pour" => match held {
            Some(_) if s.open.get(&target) == Some(&false) => NoOp(format!("`{target}` is closed")),
            Some(_) => Applied,
            None => Inapplicable("nothing is held".into()),
        },
        "Lift" => match held {
            Some(h) if h == target => Applied,
            _ => Inapplicable(format!("`{target}` is not held")),
        },
        "Open" | "Close" => {
            if !entity.articulated {
                return Inapplicable(format!("`{target}` does not open"));
            }
            if held.is_some() {
                return Inapplicable("hand is occupied".into());
            }
            s.open.insert(target, skill == "Open");
            Applied
        }
        "Press" => {
            s.pressed.insert(target);
            Applied
        }
        "Twist" => {
            if let Some(open) = s.open.get_mut(&target) {
                *open = !*open;
            }
            Applied
        }
        _ => Applied,
    }
}

/// Selection entities named by completed sub-steps, capped at `n_total`.
fn selection_count(instance: &TaskInstance, completed: &[bool]) -> usize {
    let selection: BTreeSet<String> = instance.targets.iter().chain(&instance.receptacles).map(|t| key(t)).collect();
    let hit: BTreeSet<String> = instance
        .substeps
        .iter()
        .zip(completed)
        .filter(|(_, done)| **done)
        .flat_map(|(p, _)| p.entities())
        .map(key)
        .filter(|e| selection.contains(e))
        .collect();
    hit.len().min(instance.n_total)
}

/// Runs `seq` through the transition rules. The first inapplicable call
/// ends accumulation; completed sub-steps stay completed.
pub fn run_symbolic(instance: &TaskInstance, seq: &SkillSequence) -> SymbolicRun {
    let mut state = SymbolicState::new(instance);
    let mut outcomes = Vec::with_capacity(seq.len());
    for call in &seq.calls {
        let outcome = apply(call, instance, &mut state);
        let stop = matches!(outcome, CallOutcome::Inapplicable(_));
        outcomes.push(outcome);
        if stop {
            break;
        }
        let now: Vec<bool> = instance.substeps.iter().map(|p| state.holds(p)).collect();
        for (flag, h) in state.completed.iter_mut().zip(now) {
            *flag |= h;
        }
    }
    let m_done = state.completed.iter().filter(|d| **d).count();
    let progress = ProgressInput::new(instance.n_total, selection_count(instance, &state.completed), instance.substeps.len(), m_done);
    let score = progress_score(&progress).expect("instance counts are validated");
    SymbolicRun { progress, score, outcomes, state }
}

pub fn execute_symbolic(instance: &TaskInstance, seq: &SkillSequence) -> ProgressInput {
    run_symbolic(instance, seq).progress
}

/// One raw model output for one instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    pub instance_id: String,
    pub output: String,
}

/// Reads a JSON array of predictions; an empty or blank file is an empty list.
pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| HarnessError::Schema {
        path: path.to_path_buf(),
        pointer: e.path().to_string(),
        reason: e.inner().to_string(),
    })
}

/// Every `*.json` instance file directly under `dir`, sorted by id.
pub fn load_instances(dir: &Path) -> Result<Vec<TaskInstance>, HarnessError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().and_then(|e| e.to_str()) == Some("json"))
        .collect();
    paths.sort();
    let mut out: Vec<TaskInstance> = Vec::with_capacity(paths.len());
    for p in paths {
        out.push(TaskInstance::read(&p)?);
    }
    out.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    if let Some(w) = out.windows(2).find(|w| w[0].instance_id == w[1].instance_id) {
        return Err(HarnessError::DuplicateInstance(w[0].instance_id.clone()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub instance_id: String,
    pub task_id: String,
    pub dimension: Dimension,
    pub predicted: bool,
    pub extracted_calls: usize,
    pub diagnostics: usize,
    pub metrics: MetricReport,
    pub progress: ProgressInput,
    pub ps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanScores {
    pub count: usize,
    pub sr: f64,
    pub pr: f64,
    pub spr: f64,
    pub pm: f64,
    pub total: f64,
    pub ps: f64,
}

impl MeanScores {
    pub const COLUMNS: [&'static str; 6] = ["sr", "pr", "spr", "pm", "total", "ps"];

    fn of<'a>(results: impl Iterator<Item = &'a InstanceResult>) -> Option<MeanScores> {
        let rs: Vec<&InstanceResult> = results.collect();
        if rs.is_empty() {
            return None;
        }
        let n = rs.len() as f64;
        let mean = |f: fn(&InstanceResult) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
        Some(MeanScores {
            count: rs.len(),
            sr: mean(|r| r.metrics.sr),
            pr: mean(|r| r.metrics.pr),
            spr: mean(|r| r.metrics.spr),
            pm: mean(|r| r.metrics.pm),
            total: mean(|r| r.metrics.total),
            ps: mean(|r| r.ps),
        })
    }

    pub fn value(&self, column: &str) -> Option<f64> {
        Some(match column {
            "sr" => self.sr,
            "pr" => self.pr,
            "spr" => self.spr,
            "pm" => self.pm,
            "total" => self.total,
            "ps" => self.ps,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionSummary {
    pub dimension: Dimension,
    /// `None` when no instance has this dimension.
    pub means: Option<MeanScores>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub weights: MetricWeights,
    pub rules: Vec<String>,
    pub match_policy: MatchPolicy,
    pub tolerance: f64,
    pub seeds: Vec<u64>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metadata: RunMetadata,
    pub instances: Vec<InstanceResult>,
    /// All six dimensions in fixed order.
    pub dimensions: Vec<DimensionSummary>,
    pub overall: Option<MeanScores>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ScoringOptions {
    pub eq: Equivalence,
    pub policy: MatchPolicy,
}

/// Scores raw model outputs against their instances' references. Missing
/// predictions score zero; for duplicates the last one wins.
pub fn score_noninteractive(
    instances: &[TaskInstance],
    predictions: &[Prediction],
    weights: &MetricWeights,
    opts: &ScoringOptions,
) -> Result<EvalReport, HarnessError> {
    let known: BTreeSet<&str> = instances.iter().map(|i| i.instance_id.as_str()).collect();
    let mut by_id: BTreeMap<&str, &str> = BTreeMap::new();
    let mut warnings = Vec::new();
    for p in predictions {
        if !known.contains(p.instance_id.as_str()) {
            return Err(HarnessError::UnknownInstanceId(p.instance_id.clone()));
        }
        if by_id.insert(&p.instance_id, &p.output).is_some() {
            warnings.push(format!("duplicate prediction for `{}`; keeping the last", p.instance_id));
        }
    }
    let rules = DependencyRule::standard_set();
    let mut results = Vec::with_capacity(instances.len());
    for inst in instances {
        let output = by_id.get(inst.instance_id.as_str()).copied();
        let extraction = dsl::extract_from_noisy(output.unwrap_or(""));
        let pred = extraction.sequence;
        let pred_graph = build_graph(&pred, &rules);
        let metrics = score_sequences(&inst.reference, inst.ground_truth_graph(), &pred, &pred_graph, weights, &opts.eq, opts.policy)?;
        let run = run_symbolic(inst, &pred);
        results.push(InstanceResult {
            instance_id: inst.instance_id.clone(),
            task_id: inst.task_id.clone(),
            dimension: inst.dimension,
            predicted: output.is_some(),
            extracted_calls: pred.len(),
            diagnostics: extraction.diagnostics.len(),
            metrics,
            progress: run.progress,
            ps: run.score,
        });
    }
    let dimensions = Dimension::ALL
        .into_iter()
        .map(|d| DimensionSummary { dimension: d, means: MeanScores::of(results.iter().filter(|r| r.dimension == d)) })
        .collect();
    let mut seeds: Vec<u64> = instances.iter().map(|i| i.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    Ok(EvalReport {
        metadata: RunMetadata {
            weights: *weights,
            rules: rules.iter().map(|r| r.kind.name().to_string()).collect(),
            match_policy: opts.policy,
            tolerance: opts.eq.abs_tol,
            seeds,
            warnings,
        },
        overall: MeanScores::of(results.iter()),
        instances: results,
        dimensions,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format `{other}`")),
        }
    }
}

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";

/// Metric rows by dimension columns, plus an `overall` column. Empty cells
/// mark dimensions without instances.
pub fn report_csv(report: &EvalReport) -> String {
    let mut out = String::from("metric");
    for d in Dimension::ALL {
        out.push(',');
        out.push_str(d.name());
    }
    out.push_str(",overall\n");
    let cell = |m: &Option<MeanScores>, col: &str| m.as_ref().and_then(|m| m.value(col)).map(|v| format!("{v:?}")).unwrap_or_default();
    for col in MeanScores::COLUMNS.iter().copied().chain(["count"]) {
        out.push_str(col);
        for d in &report.dimensions {
            out.push(',');
            out.push_str(&if col == "count" { d.means.as_ref().map_or(0, |m| m.count).to_string() } else { cell(&d.means, col) });
        }
        out.push(',');
        out.push_str(&if col == "count" { report.overall.as_ref().map_or(0, |m| m.count).to_string() } else { cell(&report.overall, col) });
        out.push('\n');
    }
    out
}

pub fn emit_report(report: &EvalReport, formats: &[ReportFormat], dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    for f in formats {
        let (name, text) = match f {
            ReportFormat::Json => (REPORT_JSON, serde_json::to_string_pretty(report).expect("report serializes") + "\n"),
            ReportFormat::Csv => (REPORT_CSV, report_csv(report)),
        };
        let path = dir.join(name);
        fs::write(&path, text).map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}

pub fn read_report(path: &Path) -> Result<EvalReport, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| HarnessError::Schema {
        path: path.to_path_buf(),
        pointer: e.path().to_string(),
        reason: e.inner().to_string(),
    })
}

/// What [`collect`] produced.
#[derive(Clone, Debug, PartialEq)]
pub struct Collected {
    pub instance_path: PathBuf,
    pub episode_path: PathBuf,
    pub steps: usize,
    /// The skill that stopped trajectory generation, if any.
    pub failure: Option<planner::SkillFailure>,
    pub replay: SymbolicRun,
}

impl Collected {
    pub fn success(&self) -> bool {
        self.failure.is_none() && self.replay.score == 1.0
    }
}

/// Randomizes the scenario, expands its reference program into a
/// trajectory on the Panda arm, and stores the instance under
/// `<out>/instances` and the episode under `<out>/episodes`, refreshing the
/// dataset manifest.
pub fn collect(scenario_path: &Path, seed: u64, out: &Path, cfg: &PlannerConfig) -> Result<Collected, HarnessError> {
    let scn = scenario::load_scenario(scenario_path)?;
    let instance = scenario::randomize(&scn, &scn.template.randomization, seed)?;
    let instance_path = instance.write(&out.join("instances"))?;

    let chain = KinematicChain::panda();
    let start = KinematicChain::panda_ready();
    let scene = instance.scene(planner::parallel_gripper_cloud(), planner::DEFAULT_CLEARANCE);
    let exec = planner::execute_sequence(&instance.reference.calls, &scene, &chain, start.clone(), seed, cfg)?;
    let replay = run_symbolic(&instance, &instance.reference);
    let success = exec.failure.is_none() && replay.score == 1.0;

    let meta = EpisodeMetadata {
        task_id: instance.task_id.clone(),
        instance_id: instance.instance_id.clone(),
        seed,
        dimension: instance.dimension,
    };
    let instructions = instance.instructions.iter().map(|i| i.text.clone()).collect();
    let record = EpisodeRecord::from_trajectory(&chain, &start, &exec.trajectory, instructions, meta, success)?;
    let episodes = out.join("episodes");
    let episode_path = episode::write_episode(&record, &episodes)?;
    episode::write_manifest(&episodes)?;
    Ok(Collected { instance_path, episode_path, steps: record.steps.len(), failure: exec.failure, replay })
}
