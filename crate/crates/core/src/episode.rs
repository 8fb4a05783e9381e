//! JSON-lines episode records and dataset validation.
//!
//! An episode file holds one header line followed by one line per control
//! step. Files live at `<root>/<task_id>/<instance_id>.jsonl`; a dataset root
//! may carry a `manifest.json` with per-file SHA-256 checksums.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::geometry::{Quaternion, Vec3};
use crate::planner::{forward_kinematics, KinematicChain, PlanError, Trajectory};
use crate::scenario::Dimension;

pub const SCHEMA_VERSION: &str = "vlab-episode/1";
pub const CONTROL_DT: f64 = 0.1;
pub const MANIFEST_FILE: &str = "manifest.json";
/// Allowed gap between stored and derived joint velocities.
pub const VELOCITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum EpisodeError {
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("schema version `{found}` is not {SCHEMA_VERSION}")]
    SchemaVersionMismatch { found: String },
    #[error("line {line}: {reason}")]
    CorruptLine { line: usize, reason: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EpisodeError + '_ {
    move |source| EpisodeError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Action {
    /// Commanded joint positions for the next control tick.
    pub joint_positions: Vec<f64>,
    /// 0 = open, 1 = closed.
    pub gripper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Observation {
    pub joint_positions: Vec<f64>,
    pub joint_velocities: Vec<f64>,
    pub ee_position: Vec3,
    pub ee_orientation: Quaternion,
    pub grasp_state: bool,
    /// Camera frame references; never filled here since nothing is rendered.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub views: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeStep {
    pub action: Action,
    pub observation: Observation,
    pub reward: f64,
    pub terminal: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeMetadata {
    pub task_id: String,
    pub instance_id: String,
    pub seed: u64,
    pub dimension: Dimension,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub instructions: Vec<String>,
    pub steps: Vec<EpisodeStep>,
    pub dt: f64,
    pub metadata: EpisodeMetadata,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    schema: String,
    metadata: EpisodeMetadata,
    instructions: Vec<String>,
    dt: f64,
    step_count: usize,
}

fn finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

impl EpisodeRecord {
    /// Builds a record from a planned trajectory. Observation `k` is the
    /// state before action `k`; velocities are backward differences. The
    /// reward on the terminal step is 1 when `success`.
    pub fn from_trajectory(
        chain: &KinematicChain,
        start: &[f64],
        trajectory: &Trajectory,
        instructions: Vec<String>,
        metadata: EpisodeMetadata,
        success: bool,
    ) -> Result<EpisodeRecord, PlanError> {
        let dt = trajectory.dt;
        let mut actions: Vec<Action> = trajectory
            .steps
            .iter()
            .map(|s| Action { joint_positions: s.config.clone(), gripper: s.gripper })
            .collect();
        if actions.is_empty() {
            actions.push(Action { joint_positions: start.to_vec(), gripper: 0.0 });
        }
        let mut steps = Vec::with_capacity(actions.len());
        let mut prev: Option<&[f64]> = None;
        let mut position = start;
        let mut gripper = 0.0;
        let last = actions.len() - 1;
        for (k, action) in actions.iter().enumerate() {
            let ee = forward_kinematics(chain, position)?;
            let joint_velocities = match prev {
                Some(p) => position.iter().zip(p).map(|(a, b)| (a - b) / dt).collect(),
                None => vec![0.0; position.len()],
            };
            steps.push(EpisodeStep {
                action: action.clone(),
                observation: Observation {
                    joint_positions: position.to_vec(),
                    joint_velocities,
                    ee_position: ee.position,
                    ee_orientation: ee.orientation,
                    grasp_state: gripper > 0.5,
                    views: Vec::new(),
                },
                reward: if k == last && success { 1.0 } else { 0.0 },
                terminal: k == last,
            });
            prev = Some(position);
            position = &action.joint_positions;
            gripper = action.gripper;
        }
        Ok(EpisodeRecord { instructions, steps, dt, metadata })
    }

    pub fn validate(&self) -> Result<(), EpisodeError> {
        let bad = |m: String| Err(EpisodeError::InvariantViolation(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt {} must be positive", self.dt));
        }
        if self.metadata.task_id.is_empty() || self.metadata.instance_id.is_empty() {
            return bad("task_id and instance_id must not be empty".into());
        }
        for id in [&self.metadata.task_id, &self.metadata.instance_id] {
            if id.contains(['/', '\\']) || id == "." || id == ".." {
                return bad(format!("`{id}` is not a valid file name"));
            }
        }
        let Some(last) = self.steps.len().checked_sub(1) else {
            return bad("episode has no steps".into());
        };
        let dof = self.steps[0].observation.joint_positions.len();
        for (k, s) in self.steps.iter().enumerate() {
            let o = &s.observation;
            if s.terminal != (k == last) {
                return bad(format!("step {k}: terminal flag must be set on the last step only"));
            }
            if s.reward != 0.0 && !(k == last && s.reward == 1.0) {
                return bad(format!("step {k}: reward {} is not sparse", s.reward));
            }
            if o.joint_positions.len() != dof || o.joint_velocities.len() != dof || s.action.joint_positions.len() != dof {
                return bad(format!("step {k}: joint vectors must all have length {dof}"));
            }
            let numbers = [s.action.gripper, o.ee_position.x, o.ee_position.y, o.ee_position.z];
            if !finite(&numbers)
                || !finite(&s.action.joint_positions)
                || !finite(&o.joint_positions)
                || !finite(&o.joint_velocities)
                || !o.ee_orientation.is_finite()
            {
                return bad(format!("step {k}: non-finite value"));
            }
            for j in 0..dof {
                let derived = match k {
                    0 => 0.0,
                    _ => (o.joint_positions[j] - self.steps[k - 1].observation.joint_positions[j]) / self.dt,
                };
                if (o.joint_velocities[j] - derived).abs() > VELOCITY_TOLERANCE {
                    return bad(format!("step {k}: joint {j} velocity {} differs from derived {derived}", o.joint_velocities[j]));
                }
            }
        }
        Ok(())
    }

    fn to_jsonl(&self) -> String {
        let header = Header {
            schema: SCHEMA_VERSION.to_string(),
            metadata: self.metadata.clone(),
            instructions: self.instructions.clone(),
            dt: self.dt,
            step_count: self.steps.len(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for s in &self.steps {
            out.push_str(&serde_json::to_string(s).expect("step serializes"));
            out.push('\n');
        }
        out
    }

    pub fn relative_path(&self) -> PathBuf {
        Path::new(&self.metadata.task_id).join(format!("{}.jsonl", self.metadata.instance_id))
    }
}

/// Writes `record` under `root` and returns the file path. Invalid records
/// are rejected before anything touches the disk; the file appears
/// atomically via rename.
pub fn write_episode(record: &EpisodeRecord, root: &Path) -> Result<PathBuf, EpisodeError> {
    record.validate()?;
    let text = record.to_jsonl();
    let path = root.join(record.relative_path());
    let dir = path.parent().expect("episode path has a parent");
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let tmp = path.with_extension("jsonl.tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(text.as_bytes()).and_then(|_| f.sync_all()).map_err(io_err(&tmp))?;
    fs::rename(&tmp, &path).map_err(io_err(&path))?;
    Ok(path)
}

pub fn read_episode(path: &Path) -> Result<EpisodeRecord, EpisodeError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_episode(&text)
}

pub fn parse_episode(text: &str) -> Result<EpisodeRecord, EpisodeError> {
    let corrupt = |line: usize, reason: String| EpisodeError::CorruptLine { line, reason };
    let mut lines = text.split_terminator('\n');
    let first = lines.next().ok_or_else(|| corrupt(1, "missing header".into()))?;
    let raw: serde_json::Value = serde_json::from_str(first).map_err(|e| corrupt(1, e.to_string()))?;
    match raw.get("schema").and_then(|v| v.as_str()) {
        Some(SCHEMA_VERSION) => {}
        Some(other) => return Err(EpisodeError::SchemaVersionMismatch { found: other.to_string() }),
        None => return Err(corrupt(1, "header has no schema field".into())),
    }
    let header: Header = serde_json::from_str(first).map_err(|e| corrupt(1, e.to_string()))?;
    let mut steps = Vec::with_capacity(header.step_count);
    for (i, line) in lines.enumerate() {
        let step: EpisodeStep = serde_json::from_str(line).map_err(|e| corrupt(i + 2, e.to_string()))?;
        steps.push(step);
    }
    if steps.len() != header.step_count {
        return Err(corrupt(steps.len() + 2, format!("expected {} steps, found {}", header.step_count, steps.len())));
    }
    if !text.ends_with('\n') {
        return Err(corrupt(steps.len() + 1, "missing final newline".into()));
    }
    let record = EpisodeRecord { instructions: header.instructions, steps, dt: header.dt, metadata: header.metadata };
    record.validate()?;
    Ok(record)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema: String,
    pub episode_count: usize,
    pub per_task: BTreeMap<String, usize>,
    /// SHA-256 hex digest by path relative to the dataset root.
    pub checksums: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetViolation {
    pub path: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetValidation {
    /// Covers the valid episodes only.
    pub manifest: DatasetManifest,
    pub violations: Vec<DatasetViolation>,
}

impl DatasetValidation {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn rel_string(p: &Path) -> String {
    p.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, EpisodeError> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io_err(dir))?;
    out.sort();
    Ok(out)
}

/// Checks every `<task>/<instance>.jsonl` under `root` and, when present,
/// the checksums recorded in `manifest.json`.
pub fn validate_dataset(root: &Path) -> Result<DatasetValidation, EpisodeError> {
    let mut manifest = DatasetManifest {
        schema: SCHEMA_VERSION.to_string(),
        episode_count: 0,
        per_task: BTreeMap::new(),
        checksums: BTreeMap::new(),
    };
    let mut violations = Vec::new();
    if !root.exists() {
        return Ok(DatasetValidation { manifest, violations });
    }
    for task_dir in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
        for file in sorted_entries(&task_dir)? {
            if file.extension().and_then(|e| e.to_str()) != Some("jsonl") {
                continue;
            }
            let rel = rel_string(file.strip_prefix(root).unwrap_or(&file));
            let bytes = fs::read(&file).map_err(io_err(&file))?;
            let parsed = std::str::from_utf8(&bytes)
                .map_err(|e| EpisodeError::CorruptLine { line: 1, reason: e.to_string() })
                .and_then(parse_episode);
            match parsed {
                Ok(rec) if rec.relative_path() != file.strip_prefix(root).unwrap_or(&file) => {
                    violations.push(DatasetViolation { path: rel, reason: format!("stored under the wrong name for {}", rel_string(&rec.relative_path())) });
                }
                Ok(rec) => {
                    manifest.episode_count += 1;
                    *manifest.per_task.entry(rec.metadata.task_id).or_default() += 1;
                    manifest.checksums.insert(rel, sha256_hex(&bytes));
                }
                Err(e) => violations.push(DatasetViolation { path: rel, reason: e.to_string() }),
            }
        }
    }
    let manifest_path = root.join(MANIFEST_FILE);
    if manifest_path.is_file() {
        let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
        match serde_json::from_str::<DatasetManifest>(&text) {
            Err(e) => violations.push(DatasetViolation { path: MANIFEST_FILE.into(), reason: e.to_string() }),
            Ok(stored) => {
                if stored.schema != SCHEMA_VERSION {
                    violations.push(DatasetViolation { path: MANIFEST_FILE.into(), reason: format!("schema `{}`", stored.schema) });
                }
                for (rel, sum) in &stored.checksums {
                    match manifest.checksums.get(rel) {
                        Some(actual) if actual == sum => {}
                        Some(_) => violations.push(DatasetViolation { path: rel.clone(), reason: "checksum mismatch".into() }),
                        None if root.join(rel).is_file() => {}
                        None => violations.push(DatasetViolation { path: rel.clone(), reason: "listed in manifest but missing".into() }),
                    }
                }
                for rel in manifest.checksums.keys().filter(|k| !stored.checksums.contains_key(*k)) {
                    violations.push(DatasetViolation { path: rel.clone(), reason: "not listed in manifest".into() });
                }
            }
        }
    }
    Ok(DatasetValidation { manifest, violations })
}

/// Scans `root` and writes `manifest.json` for the valid episodes found.
pub fn write_manifest(root: &Path) -> Result<DatasetValidation, EpisodeError> {
    let path = root.join(MANIFEST_FILE);
    if path.exists() {
        fs::remove_file(&path).map_err(io_err(&path))?;
    }
    let v = validate_dataset(root)?;
    fs::create_dir_all(root).map_err(io_err(root))?;
    let text = serde_json::to_string_pretty(&v.manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::TrajectoryStep;

    fn meta(instance: &str) -> EpisodeMetadata {
        EpisodeMetadata { task_id: "touch".into(), instance_id: instance.into(), seed: 1, dimension: Dimension::Spatial }
    }

    fn record(n: usize, instance: &str) -> EpisodeRecord {
        let chain = KinematicChain::planar(&[0.5, 0.4], 3.0).unwrap();
        let steps = (1..=n)
            .map(|k| TrajectoryStep { config: vec![0.01 * k as f64, -0.02 * k as f64], gripper: if k > n / 2 { 1.0 } else { 0.0 } })
            .collect();
        let traj = Trajectory { steps, dt: CONTROL_DT };
        EpisodeRecord::from_trajectory(&chain, &[0.0, 0.0], &traj, vec!["touch it".into()], meta(instance), true).unwrap()
    }

    #[test]
    fn hundred_steps_make_101_lines() {
        let dir = tempfile::tempdir().unwrap();
        let rec = record(100, "touch-0");
        let path = write_episode(&rec, dir.path()).unwrap();
        assert_eq!(path, dir.path().join("touch/touch-0.jsonl"));
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 101);
        assert_eq!(read_episode(&path).unwrap(), rec);
        let again = write_episode(&rec, dir.path()).unwrap();
        assert_eq!(fs::read_to_string(again).unwrap(), text);
    }

    #[test]
    fn derived_velocities() {
        let rec = record(3, "v");
        let v = &rec.steps[2].observation.joint_velocities;
        assert!((v[0] - 0.1).abs() < 1e-12 && (v[1] + 0.2).abs() < 1e-12);
        assert_eq!(rec.steps[0].observation.joint_velocities, vec![0.0, 0.0]);
        assert!(rec.steps[3 - 1].terminal && rec.steps[2].reward == 1.0);
    }

    #[test]
    fn invalid_records_leave_no_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = record(4, "bad");
        rec.steps[1].terminal = true;
        assert!(matches!(write_episode(&rec, dir.path()), Err(EpisodeError::InvariantViolation(_))));
        let mut rec = record(4, "bad");
        rec.steps[1].reward = 1.0;
        assert!(matches!(write_episode(&rec, dir.path()), Err(EpisodeError::InvariantViolation(_))));
        let mut rec = record(4, "bad");
        rec.steps[2].observation.joint_velocities[0] += 1e-6;
        assert!(matches!(write_episode(&rec, dir.path()), Err(EpisodeError::InvariantViolation(_))));
        assert!(fs::read_dir(dir.path()).unwrap().next().is_none());
    }

    #[test]
    fn truncated_and_wrong_version() {
        let text = record(5, "t").to_jsonl();
        let cut = &text[..text.len() - 20];
        assert!(matches!(parse_episode(cut), Err(EpisodeError::CorruptLine { line: 6, .. })));
        let lines: Vec<&str> = text.lines().collect();
        let short = lines[..4].join("\n") + "\n";
        assert!(matches!(parse_episode(&short), Err(EpisodeError::CorruptLine { .. })));
        let wrong = text.replacen(SCHEMA_VERSION, "vlab-episode/2", 1);
        assert!(matches!(parse_episode(&wrong), Err(EpisodeError::SchemaVersionMismatch { .. })));
    }

    #[test]
    fn dataset_with_one_corrupt_file() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(validate_dataset(dir.path()).unwrap().manifest.episode_count, 0);
        for i in 0..10 {
            write_episode(&record(3, &format!("touch-{i}")), dir.path()).unwrap();
        }
        let victim = dir.path().join("touch/touch-4.jsonl");
        let text = fs::read_to_string(&victim).unwrap();
        fs::write(&victim, &text[..text.len() / 2]).unwrap();
        let v = validate_dataset(dir.path()).unwrap();
        assert_eq!(v.violations.len(), 1);
        assert_eq!(v.violations[0].path, "touch/touch-4.jsonl");
        assert_eq!(v.manifest.episode_count, 9);
        assert_eq!(v.manifest.per_task["touch"], 9);
    }

    #[test]
    fn manifest_checksums_verified() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..3 {
            write_episode(&record(3, &format!("touch-{i}")), dir.path()).unwrap();
        }
        let written = write_manifest(dir.path()).unwrap();
        assert!(written.is_valid());
        assert!(validate_dataset(dir.path()).unwrap().is_valid());
        let mut rec = record(3, "touch-1");
        rec.instructions.push("again".into());
        write_episode(&rec, dir.path()).unwrap();
        let v = validate_dataset(dir.path()).unwrap();
        assert_eq!(v.violations, vec![DatasetViolation { path: "touch/touch-1.jsonl".into(), reason: "checksum mismatch".into() }]);
    }
}
