//! Scenario templates, domain randomization and concrete task instances.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsl::{self, SkillSequence};
use crate::geometry::{overlap_count, GeometryError, PointCloud, Pose, Quaternion, Vec3};
use crate::graph::{build_graph, DepGraph, DependencyRule};
use crate::planner::{EntityPriors, Scene};

/// Clearance enforced between entity clouds when placing them.
pub const PLACEMENT_MARGIN: f64 = 0.01;
pub const MAX_PLACEMENT_ATTEMPTS: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("schema error at `{pointer}`: {reason}")]
    Schema { pointer: String, reason: String },
    #[error("missing asset {0}")]
    MissingAsset(PathBuf),
    #[error("point cloud {path}: {source}")]
    Cloud { path: PathBuf, source: GeometryError },
    #[error("could not place entities without overlap after {0} attempts")]
    PlacementFailure(usize),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn schema(pointer: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Schema { pointer: pointer.into(), reason: reason.into() }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ScenarioError + '_ {
    move |source| ScenarioError::Io { path: path.to_path_buf(), source }
}

/// Capability dimension used to group results.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    MeshTexture,
    Spatial,
    CommonSense,
    Semantic,
    Physical,
    Reasoning,
}

impl Dimension {
    pub const ALL: [Dimension; 6] = [
        Dimension::MeshTexture,
        Dimension::Spatial,
        Dimension::CommonSense,
        Dimension::Semantic,
        Dimension::Physical,
        Dimension::Reasoning,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Dimension::MeshTexture => "mesh_texture",
            Dimension::Spatial => "spatial",
            Dimension::CommonSense => "common_sense",
            Dimension::Semantic => "semantic",
            Dimension::Physical => "physical",
            Dimension::Reasoning => "reasoning",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionStyle {
    Direct,
    Commonsense,
    Semantic,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instruction {
    pub text: String,
    pub style: InstructionStyle,
}

/// Sub-step completion condition over the symbolic world state.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "predicate", rename_all = "snake_case", deny_unknown_fields)]
pub enum Predicate {
    Held { entity: String },
    Inside { entity: String, container: String },
    Open { entity: String },
    Closed { entity: String },
    Pressed { entity: String },
}

impl Predicate {
    pub fn entities(&self) -> Vec<&str> {
        match self {
            Predicate::Inside { entity, container } => vec![entity, container],
            Predicate::Held { entity }
            | Predicate::Open { entity }
            | Predicate::Closed { entity }
            | Predicate::Pressed { entity } => vec![entity],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CloudSource {
    /// `.pclb` binary or `.json` debug form, relative to the template file.
    File(String),
    Inline { points: Vec<Vec3> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReferenceSource {
    Inline(String),
    /// `.skill` file relative to the template file.
    File { file: String },
}

fn one() -> f64 {
    1.0
}

/// One annotated asset in its local frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityTemplate {
    pub entity_id: String,
    pub category: String,
    /// World position of the local origin before randomization.
    #[serde(default)]
    pub position: Vec3,
    #[serde(default)]
    pub yaw: f64,
    #[serde(default)]
    pub grasp_points: Vec<Pose>,
    #[serde(default)]
    pub place_point: Option<Pose>,
    #[serde(default)]
    pub bounding_box: Option<[Vec3; 8]>,
    pub cloud: CloudSource,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub receptacle: bool,
    /// Defaults to `!receptacle`.
    #[serde(default)]
    pub graspable: Option<bool>,
    /// Has an open/closed state.
    #[serde(default)]
    pub articulated: bool,
    #[serde(default)]
    pub initially_open: bool,
    /// Takes part in grid sampling.
    #[serde(default)]
    pub grid: bool,
    /// Exempt from pose and scale randomization.
    #[serde(default)]
    pub fixed: bool,
}

impl EntityTemplate {
    pub fn is_graspable(&self) -> bool {
        self.graspable.unwrap_or(!self.receptacle)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    /// Distance between adjacent cell centers, meters.
    pub max_distance: f64,
    /// Grid center; only x and y are used.
    pub center: Vec3,
}

impl GridSpec {
    /// Row-major cell centers.
    pub fn cells(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                let x = self.center.x + (r as f64 - (self.rows as f64 - 1.0) / 2.0) * self.max_distance;
                let y = self.center.y + (c as f64 - (self.cols as f64 - 1.0) / 2.0) * self.max_distance;
                out.push((x, y));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomizationSpec {
    /// Offset along x and y, meters.
    pub pos_offset_range: [f64; 2],
    pub yaw_range: [f64; 2],
    pub scale_range: [f64; 2],
    /// Metadata only.
    pub light_range: [f64; 2],
    pub grid: Option<GridSpec>,
    pub distractors: [usize; 2],
}

impl Default for RandomizationSpec {
    fn default() -> Self {
        Self {
            pos_offset_range: [-0.05, 0.05],
            yaw_range: [-PI / 10.0, PI / 10.0],
            scale_range: [0.95, 1.05],
            light_range: [0.8, 1.2],
            grid: None,
            distractors: [1, 2],
        }
    }
}

/// Per-entity randomization draw.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub dx: f64,
    pub dy: f64,
    pub yaw: f64,
    pub scale: f64,
}

impl Perturbation {
    pub const NONE: Perturbation = Perturbation { dx: 0.0, dy: 0.0, yaw: 0.0, scale: 1.0 };
}

fn uniform(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

impl RandomizationSpec {
    /// No randomization at all.
    pub fn fixed() -> Self {
        Self {
            pos_offset_range: [0.0, 0.0],
            yaw_range: [0.0, 0.0],
            scale_range: [1.0, 1.0],
            light_range: [1.0, 1.0],
            grid: None,
            distractors: [0, 0],
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let ranges = [
            ("pos_offset_range", self.pos_offset_range),
            ("yaw_range", self.yaw_range),
            ("scale_range", self.scale_range),
            ("light_range", self.light_range),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(schema(format!("/randomization/{name}"), format!("range [{lo}, {hi}] is not ordered")));
            }
        }
        if self.scale_range[0] <= 0.0 {
            return Err(schema("/randomization/scale_range", "scale must be positive"));
        }
        if self.distractors[0] > self.distractors[1] {
            return Err(schema("/randomization/distractors", "range is not ordered"));
        }
        if let Some(g) = &self.grid {
            if g.rows == 0 || g.cols == 0 || !(g.max_distance > 0.0) {
                return Err(schema("/randomization/grid", "rows, cols and max_distance must be positive"));
            }
        }
        Ok(())
    }

    /// Draws position offset x, y, yaw and scale, in that order.
    pub fn sample_perturbation(&self, rng: &mut impl Rng) -> Perturbation {
        Perturbation {
            dx: uniform(rng, self.pos_offset_range),
            dy: uniform(rng, self.pos_offset_range),
            yaw: uniform(rng, self.yaw_range),
            scale: uniform(rng, self.scale_range),
        }
    }

    pub fn sample_lighting(&self, rng: &mut impl Rng) -> f64 {
        uniform(rng, self.light_range)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioTemplate {
    pub task_id: String,
    pub dimension: Dimension,
    pub entities: Vec<EntityTemplate>,
    #[serde(default)]
    pub distractor_pool: Vec<EntityTemplate>,
    /// Entities to be selected and manipulated.
    pub targets: Vec<String>,
    #[serde(default)]
    pub receptacles: Vec<String>,
    /// Selection count N; defaults to targets plus receptacles and is
    /// required when there are no receptacles.
    #[serde(default)]
    pub n_total: Option<usize>,
    pub substeps: Vec<Predicate>,
    pub reference: ReferenceSource,
    pub instructions: Vec<Instruction>,
    #[serde(default)]
    pub randomization: RandomizationSpec,
    #[serde(default)]
    pub static_obstacles: Option<CloudSource>,
}

/// A validated template with its assets resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub template: ScenarioTemplate,
    pub reference: SkillSequence,
    /// Local-frame clouds by entity id (template entities and distractor pool).
    pub clouds: BTreeMap<String, PointCloud>,
    pub static_obstacles: PointCloud,
    pub n_total: usize,
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(key),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    out
}

fn load_cloud(src: &CloudSource, base: &Path, frame: &str) -> Result<PointCloud, ScenarioError> {
    match src {
        CloudSource::Inline { points } => Ok(PointCloud::new(points.clone(), frame)),
        CloudSource::File(rel) => {
            let path = base.join(rel);
            if !path.is_file() {
                return Err(ScenarioError::MissingAsset(path));
            }
            let mut cloud = PointCloud::read(&path).map_err(|source| ScenarioError::Cloud { path: path.clone(), source })?;
            cloud.frame = frame.to_string();
            Ok(cloud)
        }
    }
}

fn key(id: &str) -> String {
    id.trim().to_lowercase()
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            ScenarioError::MissingAsset(path.to_path_buf())
        } else {
            ScenarioError::Io { path: path.to_path_buf(), source: e }
        }
    })?;
    Scenario::from_json(&text, path.parent().unwrap_or(Path::new(".")))
}

impl Scenario {
    /// Parses and validates a template; relative asset paths resolve against `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Scenario, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let template: ScenarioTemplate = serde_path_to_error::deserialize(de)
            .map_err(|e| schema(json_pointer(e.path()), e.inner().to_string()))?;
        Self::from_template(template, base)
    }

    pub fn from_template(t: ScenarioTemplate, base: &Path) -> Result<Scenario, ScenarioError> {
        if t.task_id.trim().is_empty() {
            return Err(schema("/task_id", "must not be empty"));
        }
        if t.entities.is_empty() {
            return Err(schema("/entities", "at least one entity is required"));
        }
        let mut seen = BTreeSet::new();
        let all = t.entities.iter().map(|e| ("entities", e)).chain(t.distractor_pool.iter().map(|e| ("distractor_pool", e)));
        for (i, (list, e)) in all.enumerate() {
            let idx = if list == "entities" { i } else { i - t.entities.len() };
            let at = |field: &str| format!("/{list}/{idx}{field}");
            if e.entity_id.trim().is_empty() {
                return Err(schema(at("/entity_id"), "must not be empty"));
            }
            if !seen.insert(key(&e.entity_id)) {
                return Err(schema(at("/entity_id"), format!("duplicate entity id `{}`", e.entity_id)));
            }
            if !(e.scale > 0.0) {
                return Err(schema(at("/scale"), "must be positive"));
            }
            if e.is_graspable() && e.grasp_points.is_empty() {
                return Err(schema(at("/grasp_points"), "graspable entities need at least one grasp point"));
            }
            if e.receptacle && e.place_point.is_none() {
                return Err(schema(at("/place_point"), "receptacles need a place point"));
            }
            if e.receptacle && e.bounding_box.is_none() {
                return Err(schema(at("/bounding_box"), "receptacles need a bounding box"));
            }
        }
        let entity_keys: BTreeSet<String> = t.entities.iter().map(|e| key(&e.entity_id)).collect();
        let find = |id: &str| t.entities.iter().find(|e| key(&e.entity_id) == key(id));
        if t.targets.is_empty() {
            return Err(schema("/targets", "at least one target is required"));
        }
        for (i, id) in t.targets.iter().enumerate() {
            if find(id).is_none() {
                return Err(schema(format!("/targets/{i}"), format!("unknown entity `{id}`")));
            }
        }
        for (i, id) in t.receptacles.iter().enumerate() {
            match find(id) {
                Some(e) if e.receptacle => {}
                Some(_) => return Err(schema(format!("/receptacles/{i}"), format!("`{id}` is not a receptacle"))),
                None => return Err(schema(format!("/receptacles/{i}"), format!("unknown entity `{id}`"))),
            }
        }
        let n_total = match (t.n_total, t.receptacles.is_empty()) {
            (Some(0), _) => return Err(schema("/n_total", "must be at least 1")),
            (Some(n), _) => n,
            (None, false) => t.targets.len() + t.receptacles.len(),
            (None, true) => return Err(schema("/n_total", "required when the task has no receptacle")),
        };
        if t.substeps.is_empty() {
            return Err(schema("/substeps", "at least one sub-step is required"));
        }
        for (i, s) in t.substeps.iter().enumerate() {
            for id in s.entities() {
                if !entity_keys.contains(&key(id)) {
                    return Err(schema(format!("/substeps/{i}"), format!("unknown entity `{id}`")));
                }
            }
        }
        if t.instructions.is_empty() {
            return Err(schema("/instructions", "at least one instruction is required"));
        }
        t.randomization.validate()?;
        if let Some(g) = &t.randomization.grid {
            let gridded = t.entities.iter().filter(|e| e.grid).count()
                + t.distractor_pool.iter().filter(|e| e.grid).count().min(t.randomization.distractors[1]);
            if gridded > g.rows * g.cols {
                return Err(schema("/randomization/grid", format!("{gridded} gridded entities exceed {} cells", g.rows * g.cols)));
            }
        }

        let text = match &t.reference {
            ReferenceSource::Inline(s) => s.clone(),
            ReferenceSource::File { file } => {
                let path = base.join(file);
                if !path.is_file() {
                    return Err(ScenarioError::MissingAsset(path));
                }
                fs::read_to_string(&path).map_err(io_err(&path))?
            }
        };
        let reference = dsl::parse_program(&text).map_err(|e| schema("/reference", e.to_string()))?;
        for (i, c) in reference.calls.iter().enumerate() {
            if !entity_keys.contains(&key(&c.target)) {
                return Err(schema("/reference", format!("call {} targets unknown entity `{}`", i + 1, c.target)));
            }
        }

        let mut clouds = BTreeMap::new();
        for e in t.entities.iter().chain(&t.distractor_pool) {
            clouds.insert(e.entity_id.clone(), load_cloud(&e.cloud, base, &e.entity_id)?);
        }
        let static_obstacles = match &t.static_obstacles {
            Some(src) => load_cloud(src, base, "world")?,
            None => PointCloud::new(vec![], "world"),
        };
        Ok(Scenario { template: t, reference, clouds, static_obstacles, n_total })
    }
}

/// An entity after randomization, in world coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacedEntity {
    pub entity_id: String,
    pub category: String,
    pub receptacle: bool,
    pub articulated: bool,
    pub initially_open: bool,
    pub distractor: bool,
    /// World pose of the local frame.
    pub pose: Pose,
    pub scale: f64,
    /// The randomization draw applied to this entity.
    pub perturbation: Perturbation,
    pub grasp_points: Vec<Pose>,
    pub place_point: Option<Pose>,
    pub bounding_box: Option<[Vec3; 8]>,
    #[serde(default)]
    pub cloud_file: Option<String>,
    #[serde(skip)]
    pub cloud: PointCloud,
}

impl PlacedEntity {
    fn to_world(&self, p: Vec3) -> Vec3 {
        self.pose.transform_point(p * self.scale)
    }

    fn pose_to_world(&self, p: &Pose) -> Pose {
        Pose::new(self.to_world(p.position), self.pose.orientation * p.orientation)
    }
}

mod reference_text {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seq: &SkillSequence, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&dsl::canonical_string(seq))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<SkillSequence, D::Error> {
        let text = String::deserialize(d)?;
        dsl::parse_program(&text).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaskInstance {
    pub instance_id: String,
    pub task_id: String,
    pub seed: u64,
    pub dimension: Dimension,
    pub entities: Vec<PlacedEntity>,
    pub targets: Vec<String>,
    pub receptacles: Vec<String>,
    pub n_total: usize,
    pub substeps: Vec<Predicate>,
    #[serde(with = "reference_text")]
    pub reference: SkillSequence,
    pub instructions: Vec<Instruction>,
    pub lighting: f64,
    pub randomization: RandomizationSpec,
    #[serde(default)]
    pub static_file: Option<String>,
    #[serde(skip)]
    pub static_obstacles: PointCloud,
    #[serde(skip)]
    graph: OnceLock<DepGraph>,
}

impl PartialEq for TaskInstance {
    fn eq(&self, o: &Self) -> bool {
        self.instance_id == o.instance_id
            && self.task_id == o.task_id
            && self.seed == o.seed
            && self.dimension == o.dimension
            && self.entities == o.entities
            && self.targets == o.targets
            && self.receptacles == o.receptacles
            && self.n_total == o.n_total
            && self.substeps == o.substeps
            && self.reference == o.reference
            && self.instructions == o.instructions
            && self.lighting == o.lighting
            && self.randomization == o.randomization
            && self.static_obstacles == o.static_obstacles
    }
}

pub fn instance_id(task_id: &str, seed: u64) -> String {
    format!("{task_id}-{seed}")
}

fn transform_bbox(e: &PlacedEntity, bbox: &[Vec3; 8]) -> [Vec3; 8] {
    bbox.map(|p| e.to_world(p))
}

fn place(t: &EntityTemplate, local: &PointCloud, p: Perturbation, cell: Option<(f64, f64)>, distractor: bool) -> PlacedEntity {
    let (x, y) = cell.unwrap_or((t.position.x, t.position.y));
    let position = Vec3::new(x + p.dx, y + p.dy, t.position.z);
    let mut e = PlacedEntity {
        entity_id: t.entity_id.clone(),
        category: t.category.clone(),
        receptacle: t.receptacle,
        articulated: t.articulated,
        initially_open: t.initially_open,
        distractor,
        pose: Pose::new(position, Quaternion::rot_z(t.yaw + p.yaw)),
        scale: t.scale * p.scale,
        perturbation: p,
        grasp_points: vec![],
        place_point: None,
        bounding_box: None,
        cloud_file: None,
        cloud: PointCloud::default(),
    };
    e.grasp_points = t.grasp_points.iter().map(|g| e.pose_to_world(g)).collect();
    e.place_point = t.place_point.map(|g| e.pose_to_world(&g));
    e.bounding_box = t.bounding_box.as_ref().map(|b| transform_bbox(&e, b));
    e.cloud = PointCloud::new(local.points.iter().map(|q| e.to_world(*q)).collect(), "world");
    e
}

/// Samples a concrete instance. Pure in `(scenario, spec, seed)`.
///
/// Each attempt draws, in order: the distractor count and selection, the
/// grid cell assignment, then one [`Perturbation`] per entity, then the
/// lighting factor. Attempts whose clouds come closer than
/// [`PLACEMENT_MARGIN`] are redrawn.
pub fn randomize(scenario: &Scenario, spec: &RandomizationSpec, seed: u64) -> Result<TaskInstance, ScenarioError> {
    spec.validate()?;
    let t = &scenario.template;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let pool = &t.distractor_pool;
        let count = rng.gen_range(spec.distractors[0]..=spec.distractors[1]).min(pool.len());
        let mut chosen = index::sample(&mut rng, pool.len(), count).into_vec();
        chosen.sort_unstable();
        let members: Vec<(&EntityTemplate, bool)> =
            t.entities.iter().map(|e| (e, false)).chain(chosen.iter().map(|&i| (&pool[i], true))).collect();

        let mut cells: Vec<Option<(f64, f64)>> = vec![None; members.len()];
        if let Some(grid) = &spec.grid {
            let mut free = grid.cells();
            free.shuffle(&mut rng);
            let mut next = free.into_iter();
            for (slot, (e, _)) in cells.iter_mut().zip(&members) {
                if e.grid {
                    *slot = Some(next.next().ok_or_else(|| schema("/randomization/grid", "not enough grid cells"))?);
                }
            }
        }

        let placed: Vec<PlacedEntity> = members
            .iter()
            .zip(&cells)
            .map(|((e, distractor), cell)| {
                let draw = spec.sample_perturbation(&mut rng);
                let p = if e.fixed { Perturbation::NONE } else { draw };
                place(e, &scenario.clouds[&e.entity_id], p, *cell, *distractor)
            })
            .collect();
        let lighting = spec.sample_lighting(&mut rng);

        let clash = (0..placed.len())
            .any(|i| (i + 1..placed.len()).any(|j| overlap_count(&placed[i].cloud, &placed[j].cloud, PLACEMENT_MARGIN) > 0));
        if clash {
            continue;
        }
        return Ok(TaskInstance {
            instance_id: instance_id(&t.task_id, seed),
            task_id: t.task_id.clone(),
            seed,
            dimension: t.dimension,
            entities: placed,
            targets: t.targets.clone(),
            receptacles: t.receptacles.clone(),
            n_total: scenario.n_total,
            substeps: t.substeps.clone(),
            reference: scenario.reference.clone(),
            instructions: t.instructions.clone(),
            lighting,
            randomization: spec.clone(),
            static_file: None,
            static_obstacles: scenario.static_obstacles.clone(),
            graph: OnceLock::new(),
        });
    }
    Err(ScenarioError::PlacementFailure(MAX_PLACEMENT_ATTEMPTS))
}

/// Ground-truth dependency graph under the standard rule set.
pub fn ground_truth_graph(instance: &TaskInstance) -> DepGraph {
    instance.ground_truth_graph().clone()
}

impl TaskInstance {
    pub fn ground_truth_graph(&self) -> &DepGraph {
        self.graph.get_or_init(|| build_graph(&self.reference, &DependencyRule::standard_set()))
    }

    pub fn entity(&self, id: &str) -> Option<&PlacedEntity> {
        self.entities.iter().find(|e| key(&e.entity_id) == key(id))
    }

    /// Planning scene with this instance's clouds and keypoints.
    pub fn scene(&self, gripper_cloud: PointCloud, clearance_radius: f64) -> Scene {
        let entities = self
            .entities
            .iter()
            .map(|e| {
                let priors = EntityPriors { grasp_points: e.grasp_points.clone(), place_point: e.place_point };
                (e.entity_id.clone(), (e.cloud.clone(), priors))
            })
            .collect();
        Scene { entities, static_obstacles: self.static_obstacles.clone(), gripper_cloud, clearance_radius }
    }

    /// Writes `<dir>/<instance_id>.json` and its clouds under `<dir>/<instance_id>/`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, ScenarioError> {
        let cloud_dir = dir.join(&self.instance_id);
        fs::create_dir_all(&cloud_dir).map_err(io_err(&cloud_dir))?;
        let mut copy = self.clone();
        for e in &mut copy.entities {
            let rel = format!("{}/{}.pclb", self.instance_id, e.entity_id);
            let path = dir.join(&rel);
            e.cloud.write(&path).map_err(|source| ScenarioError::Cloud { path, source })?;
            e.cloud_file = Some(rel);
        }
        if !self.static_obstacles.is_empty() {
            let rel = format!("{}/static.pclb", self.instance_id);
            let path = dir.join(&rel);
            self.static_obstacles.write(&path).map_err(|source| ScenarioError::Cloud { path, source })?;
            copy.static_file = Some(rel);
        }
        let path = dir.join(format!("{}.json", self.instance_id));
        let text = serde_json::to_string_pretty(&copy).expect("instance serializes");
        fs::write(&path, text + "\n").map_err(io_err(&path))?;
        Ok(path)
    }

    /// Inverse of [`TaskInstance::write`].
    pub fn read(path: &Path) -> Result<TaskInstance, ScenarioError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let mut inst: TaskInstance = serde_path_to_error::deserialize(de)
            .map_err(|e| schema(json_pointer(e.path()), e.inner().to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for e in &mut inst.entities {
            if let Some(rel) = &e.cloud_file {
                e.cloud = load_cloud(&CloudSource::File(rel.clone()), base, "world")?;
            }
        }
        inst.static_obstacles = match &inst.static_file {
            Some(rel) => load_cloud(&CloudSource::File(rel.clone()), base, "world")?,
            None => PointCloud::new(vec![], "world"),
        };
        for e in &mut inst.entities {
            e.cloud_file = None;
        }
        inst.static_file = None;
        Ok(inst)
    }
}
