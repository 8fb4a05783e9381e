//! Joint-space motion generation for a serial chain: forward and inverse
//! kinematics, RRT planning against point-cloud obstacles, grasp-direction
//! rejection sampling and skill expansion into time-parameterized
//! trajectories.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsl::{ParamValue, SkillCall};
use crate::geometry::{smooth_path, transform_cloud, GridIndex, PointCloud, Pose, Quaternion, Vec3};

pub type JointConfig = Vec<f64>;

pub const MAX_JOINTS: usize = 16;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("invalid chain: {0}")]
    InvalidChain(String),
    #[error("configuration has {got} angles, chain has {expected} joints")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("joint {joint} angle {value} outside limits [{lo}, {hi}]")]
    LimitViolation { joint: usize, value: f64, lo: f64, hi: f64 },
    #[error("inverse kinematics did not converge after {iterations} iterations (position error {position_error:.3e} m, orientation error {orientation_error:.3e} rad)")]
    NoConvergence { iterations: usize, position_error: f64, orientation_error: f64 },
    #[error("start configuration is in collision")]
    StartInCollision,
    #[error("goal configuration is in collision")]
    GoalInCollision,
    #[error("no path found within {0} iterations")]
    Timeout(usize),
    #[error("no collision-free grasp direction among {0} candidates")]
    NoValidGrasp(usize),
    #[error("entity `{entity}` has no {what} annotation")]
    MissingPrior { entity: String, what: &'static str },
    #[error("skill {0} has no motion template")]
    UnsupportedSkill(String),
    #[error("parameter `{key}`: {reason}")]
    BadParameter { key: String, reason: String },
}

fn default_velocity() -> f64 {
    2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    /// Rotation axis in the joint frame.
    pub axis: Vec3,
    /// Translation from the previous frame to this joint.
    pub origin_offset: Vec3,
    #[serde(default)]
    pub rotation_offset: Quaternion,
    pub limits: (f64, f64),
    /// rad/s
    #[serde(default = "default_velocity")]
    pub max_velocity: f64,
}

impl Joint {
    pub fn revolute(axis: Vec3, origin_offset: Vec3, rotation_offset: Quaternion, limits: (f64, f64), max_velocity: f64) -> Self {
        Self { axis: axis.normalized(), origin_offset, rotation_offset, limits, max_velocity }
    }
}

/// Serial chain of revolute joints with a fixed tool transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ChainFile")]
pub struct KinematicChain {
    joints: Vec<Joint>,
    tool_offset: Pose,
}

#[derive(Deserialize)]
struct ChainFile {
    joints: Vec<Joint>,
    #[serde(default)]
    tool_offset: Pose,
}

impl TryFrom<ChainFile> for KinematicChain {
    type Error = PlanError;
    fn try_from(f: ChainFile) -> Result<Self, PlanError> {
        KinematicChain::new(f.joints, f.tool_offset)
    }
}

impl KinematicChain {
    /// Validates limits, velocities and axes. A chain without joints is
    /// accepted so that a bare tool transform can be expressed.
    pub fn new(mut joints: Vec<Joint>, tool_offset: Pose) -> Result<Self, PlanError> {
        if joints.len() > MAX_JOINTS {
            return Err(PlanError::InvalidChain(format!("{} joints, at most {MAX_JOINTS} supported", joints.len())));
        }
        for (i, j) in joints.iter_mut().enumerate() {
            if !(j.limits.0 < j.limits.1) {
                return Err(PlanError::InvalidChain(format!("joint {i}: limits must satisfy lo < hi")));
            }
            if !(j.max_velocity > 0.0) {
                return Err(PlanError::InvalidChain(format!("joint {i}: max_velocity must be positive")));
            }
            if !(j.axis.norm() > 1e-9) || !j.origin_offset.is_finite() {
                return Err(PlanError::InvalidChain(format!("joint {i}: degenerate axis or offset")));
            }
            j.axis = j.axis.normalized();
        }
        if !tool_offset.is_finite() {
            return Err(PlanError::InvalidChain("non-finite tool offset".into()));
        }
        Ok(Self { joints, tool_offset })
    }

    pub fn from_json(text: &str) -> Result<Self, PlanError> {
        serde_json::from_str(text).map_err(|e| PlanError::InvalidChain(e.to_string()))
    }

    /// Seven-joint arm with the offsets of a common research manipulator and
    /// a parallel-jaw tool 0.2104 m past the flange.
    pub fn panda() -> Self {
        let rx = |a: f64| Quaternion::from_axis_angle(Vec3::X, a);
        let j = |off: [f64; 3], rot: Quaternion, lo: f64, hi: f64, v: f64| {
            Joint::revolute(Vec3::Z, Vec3::from(off), rot, (lo, hi), v)
        };
        let joints = vec![
            j([0.0, 0.0, 0.333], Quaternion::IDENTITY, -2.8973, 2.8973, 2.175),
            j([0.0, 0.0, 0.0], rx(-FRAC_PI_2), -1.7628, 1.7628, 2.175),
            j([0.0, -0.316, 0.0], rx(FRAC_PI_2), -2.8973, 2.8973, 2.175),
            j([0.0825, 0.0, 0.0], rx(FRAC_PI_2), -3.0718, 0.0, 2.175),
            j([-0.0825, 0.384, 0.0], rx(-FRAC_PI_2), -2.8973, 2.8973, 2.61),
            j([0.0, 0.0, 0.0], rx(FRAC_PI_2), -0.0175, 3.7525, 2.61),
            j([0.088, 0.0, 0.0], rx(FRAC_PI_2), -2.8973, 2.8973, 2.61),
        ];
        let tool = Pose::new(Vec3::new(0.0, 0.0, 0.2104), Quaternion::rot_z(-FRAC_PI_4));
        Self::new(joints, tool).expect("built-in chain is valid")
    }

    /// Typical working posture of [`KinematicChain::panda`], tool pointing down.
    pub fn panda_ready() -> JointConfig {
        vec![0.0, -0.785, 0.0, -2.356, 0.0, 1.571, 0.785]
    }

    /// Planar chain rotating about z with links along x.
    pub fn planar(link_lengths: &[f64], limit: f64) -> Result<Self, PlanError> {
        let mut offset = 0.0;
        let joints = link_lengths
            .iter()
            .map(|&l| {
                let j = Joint::revolute(Vec3::Z, Vec3::new(offset, 0.0, 0.0), Quaternion::IDENTITY, (-limit, limit), 2.0);
                offset = l;
                j
            })
            .collect();
        Self::new(joints, Pose::from_position(Vec3::new(offset, 0.0, 0.0)))
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn tool_offset(&self) -> &Pose {
        &self.tool_offset
    }

    pub fn check(&self, q: &[f64]) -> Result<(), PlanError> {
        if q.len() != self.dof() {
            return Err(PlanError::DimensionMismatch { expected: self.dof(), got: q.len() });
        }
        for (i, (j, &v)) in self.joints.iter().zip(q).enumerate() {
            let (lo, hi) = j.limits;
            if !(lo..=hi).contains(&v) {
                return Err(PlanError::LimitViolation { joint: i, value: v, lo, hi });
            }
        }
        Ok(())
    }

    pub fn clamp(&self, q: &mut [f64]) {
        for (v, j) in q.iter_mut().zip(&self.joints) {
            *v = v.clamp(j.limits.0, j.limits.1);
        }
    }

    pub fn random_config(&self, rng: &mut impl Rng) -> JointConfig {
        self.joints.iter().map(|j| rng.gen_range(j.limits.0..=j.limits.1)).collect()
    }

    fn fk_unchecked(&self, q: &[f64]) -> Pose {
        let mut t = Pose::IDENTITY;
        for (j, &a) in self.joints.iter().zip(q) {
            t = t.compose(&Pose::new(j.origin_offset, j.rotation_offset));
            t = t.compose(&Pose::new(Vec3::ZERO, Quaternion::from_axis_angle(j.axis, a)));
        }
        t.compose(&self.tool_offset)
    }

    /// Upper bound, per joint, on the distance from that joint's axis to any
    /// point within `radius` of the tool frame origin.
    fn reach_bounds(&self, radius: f64) -> Vec<f64> {
        let tool = self.tool_offset.position.norm() + radius;
        (0..self.dof())
            .map(|i| self.joints[i + 1..].iter().map(|j| j.origin_offset.norm()).sum::<f64>() + tool)
            .collect()
    }
}

pub fn forward_kinematics(chain: &KinematicChain, q: &[f64]) -> Result<Pose, PlanError> {
    chain.check(q)?;
    Ok(chain.fk_unchecked(q))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IkConfig {
    pub damping: f64,
    pub fd_step: f64,
    pub max_iterations: usize,
    /// Acceptance thresholds.
    pub position_tolerance: f64,
    pub orientation_tolerance: f64,
    /// The solver keeps iterating until these tighter thresholds are met or
    /// progress stalls.
    pub target_position_tolerance: f64,
    pub target_orientation_tolerance: f64,
    /// Largest joint-space step per iteration, radians.
    pub max_step: f64,
}

impl Default for IkConfig {
    fn default() -> Self {
        Self {
            damping: 0.05,
            fd_step: 1e-6,
            max_iterations: 500,
            position_tolerance: 1e-3,
            orientation_tolerance: 1e-2,
            target_position_tolerance: 1e-7,
            target_orientation_tolerance: 1e-6,
            max_step: 0.5,
        }
    }
}

/// World-frame pose error `(position, rotation vector)` taking `from` to `to`.
fn pose_error(from: &Pose, to: &Pose) -> (Vec3, Vec3) {
    (to.position - from.position, (to.orientation * from.orientation.conjugate()).to_rotation_vector())
}

pub fn inverse_kinematics(chain: &KinematicChain, target: &Pose, seed: &[f64]) -> Result<JointConfig, PlanError> {
    inverse_kinematics_with(chain, target, seed, &IkConfig::default())
}

/// Damped least squares with a central-difference Jacobian; joint limits
/// are enforced by clamping after every step.
pub fn inverse_kinematics_with(
    chain: &KinematicChain,
    target: &Pose,
    seed: &[f64],
    cfg: &IkConfig,
) -> Result<JointConfig, PlanError> {
    chain.check(seed)?;
    let n = chain.dof();
    let mut q = seed.to_vec();
    let errors = |q: &[f64]| {
        let (p, r) = pose_error(&chain.fk_unchecked(q), target);
        (p.norm(), r.norm())
    };
    let cost = |(p, r): (f64, f64)| p + r;
    let mut best = (q.clone(), errors(&q));
    let mut stalled = 0;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        let current = chain.fk_unchecked(&q);
        let (ep, er) = pose_error(&current, target);
        if ep.norm() <= cfg.target_position_tolerance && er.norm() <= cfg.target_orientation_tolerance {
            return Ok(q);
        }
        if n == 0 {
            break;
        }
        iterations += 1;
        let mut jac = DMatrix::<f64>::zeros(6, n);
        for c in 0..n {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[c] += cfg.fd_step;
            qm[c] -= cfg.fd_step;
            let (fp, fm) = (chain.fk_unchecked(&qp), chain.fk_unchecked(&qm));
            let dp = (fp.position - fm.position) * (0.5 / cfg.fd_step);
            let dr = (fp.orientation * fm.orientation.conjugate()).to_rotation_vector() * (0.5 / cfg.fd_step);
            for (r, v) in [dp.x, dp.y, dp.z, dr.x, dr.y, dr.z].into_iter().enumerate() {
                jac[(r, c)] = v;
            }
        }
        let e = DVector::from_vec(vec![ep.x, ep.y, ep.z, er.x, er.y, er.z]);
        let jjt = &jac * jac.transpose() + DMatrix::<f64>::identity(6, 6) * (cfg.damping * cfg.damping);
        let Some(y) = jjt.cholesky().map(|c| c.solve(&e)) else {
            break;
        };
        let mut dq = jac.transpose() * y;
        let norm = dq.norm();
        if norm > cfg.max_step {
            dq *= cfg.max_step / norm;
        }
        for (v, d) in q.iter_mut().zip(dq.iter()) {
            *v += d;
        }
        chain.clamp(&mut q);
        let err = errors(&q);
        if cost(err) < cost(best.1) * (1.0 - 1e-9) {
            best = (q.clone(), err);
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= 50 {
                break;
            }
        }
    }
    let (q, (pe, re)) = best;
    if pe <= cfg.position_tolerance && re <= cfg.orientation_tolerance {
        Ok(q)
    } else {
        Err(PlanError::NoConvergence { iterations, position_error: pe, orientation_error: re })
    }
}

/// Obstacles, the gripper's own cloud (tool frame) and the clearance radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanningWorld {
    pub obstacles: PointCloud,
    pub gripper_cloud: PointCloud,
    #[serde(default = "default_clearance")]
    pub clearance_radius: f64,
}

/// Clearance kept between the gripper cloud and obstacles, meters.
pub const DEFAULT_CLEARANCE: f64 = 0.01;

fn default_clearance() -> f64 {
    DEFAULT_CLEARANCE
}

impl PlanningWorld {
    pub fn new(obstacles: PointCloud, gripper_cloud: PointCloud) -> Self {
        Self { obstacles, gripper_cloud, clearance_radius: default_clearance() }
    }

    /// Number of gripper points overlapping obstacles with the gripper at `pose`.
    pub fn overlap_at(&self, pose: &Pose) -> usize {
        crate::geometry::overlap_count(&transform_cloud(&self.gripper_cloud, pose), &self.obstacles, self.clearance_radius)
    }
}

/// Two-finger parallel gripper in its tool frame: tool z points from the palm
/// towards the fingertips, which sit at the origin.
pub fn parallel_gripper_cloud() -> PointCloud {
    let mut pts = Vec::new();
    for x in [-0.04, 0.04] {
        for y in [-0.01, 0.0, 0.01] {
            for k in 0..=5 {
                pts.push(Vec3::new(x, y, -0.01 * k as f64));
            }
        }
    }
    for i in 0..=10 {
        for y in [-0.03, 0.0, 0.03] {
            for z in [-0.06, -0.08, -0.1] {
                pts.push(Vec3::new(-0.1 + 0.02 * i as f64, y, z));
            }
        }
    }
    PointCloud::new(pts, "tool")
}

/// Small tool-frame cloud for planar test chains: a cross around the tool point.
pub fn planar_gripper_cloud() -> PointCloud {
    let mut pts = vec![Vec3::ZERO];
    for d in [0.02, 0.04] {
        pts.extend([Vec3::new(d, 0.0, 0.0), Vec3::new(-d, 0.0, 0.0), Vec3::new(0.0, d, 0.0), Vec3::new(0.0, -d, 0.0)]);
    }
    PointCloud::new(pts, "tool")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Joint-space extension step, radians.
    pub step: f64,
    pub goal_bias: f64,
    pub max_iterations: usize,
    /// Largest Cartesian displacement of any gripper point between two
    /// consecutive collision checks along an edge.
    pub sweep_resolution: f64,
    pub ik: IkConfig,
    pub ik_restarts: usize,
    pub grasp_candidates: usize,
    /// Back-off from the grasp point to the preparation point, meters.
    pub prep_distance: f64,
    pub sweep_spacing: f64,
    pub lift_height: f64,
    pub pour_tilt: f64,
    pub twist_angle: f64,
    pub push_distance: f64,
    pub smoothing_samples: usize,
    pub gripper_steps: usize,
    pub dt: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            step: 0.1,
            goal_bias: 0.1,
            max_iterations: 20_000,
            sweep_resolution: 0.005,
            ik: IkConfig::default(),
            ik_restarts: 16,
            grasp_candidates: 16,
            prep_distance: 0.08,
            sweep_spacing: 0.01,
            lift_height: 0.1,
            pour_tilt: FRAC_PI_2,
            twist_angle: PI,
            push_distance: 0.1,
            smoothing_samples: 4,
            gripper_steps: 5,
            dt: 0.1,
        }
    }
}

/// Configuration-space collision checks for one (world, chain) pair.
///
/// Configurations are tested at `clearance + sweep_resolution / 2`, and edges
/// are sampled so that no gripper point moves more than `sweep_resolution`
/// between samples. Every configuration on an accepted edge therefore keeps
/// the plain clearance.
pub struct CollisionChecker<'a> {
    chain: &'a KinematicChain,
    world: &'a PlanningWorld,
    grid: GridIndex<'a>,
    radius: f64,
    reach: Vec<f64>,
    resolution: f64,
}

impl<'a> CollisionChecker<'a> {
    pub fn new(chain: &'a KinematicChain, world: &'a PlanningWorld, resolution: f64) -> Self {
        let radius = world.clearance_radius + resolution / 2.0;
        let grip = world.gripper_cloud.points.iter().map(|p| p.norm()).fold(0.0, f64::max);
        Self {
            chain,
            world,
            grid: GridIndex::new(&world.obstacles.points, 2.0 * radius),
            radius,
            reach: chain.reach_bounds(grip),
            resolution,
        }
    }

    pub fn config_free(&self, q: &[f64]) -> bool {
        if self.world.obstacles.is_empty() {
            return true;
        }
        let pose = self.chain.fk_unchecked(q);
        !self.world.gripper_cloud.points.iter().any(|p| self.grid.any_within(pose.transform_point(*p), self.radius))
    }

    /// Number of interior samples used to check the edge `a -> b`.
    pub fn edge_samples(&self, a: &[f64], b: &[f64]) -> usize {
        let sweep: f64 = a.iter().zip(b).zip(&self.reach).map(|((x, y), r)| (x - y).abs() * r).sum();
        (sweep / self.resolution).ceil() as usize
    }

    /// Checks interior samples of an edge; endpoints are assumed checked.
    pub fn edge_free(&self, a: &[f64], b: &[f64]) -> bool {
        if self.world.obstacles.is_empty() {
            return true;
        }
        let n = self.edge_samples(a, b);
        (1..n).all(|k| self.config_free(&lerp(a, b, k as f64 / n as f64)))
    }
}

pub fn lerp(a: &[f64], b: &[f64], t: f64) -> JointConfig {
    a.iter().zip(b).map(|(x, y)| x + (y - x) * t).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn rrt_plan(
    world: &PlanningWorld,
    chain: &KinematicChain,
    start: &[f64],
    goal: &[f64],
    seed: u64,
) -> Result<Vec<JointConfig>, PlanError> {
    rrt_plan_with(world, chain, start, goal, seed, &PlannerConfig::default())
}

/// Goal-biased RRT followed by a greedy shortcut pass. Deterministic for a
/// fixed seed.
pub fn rrt_plan_with(
    world: &PlanningWorld,
    chain: &KinematicChain,
    start: &[f64],
    goal: &[f64],
    seed: u64,
    cfg: &PlannerConfig,
) -> Result<Vec<JointConfig>, PlanError> {
    chain.check(start)?;
    chain.check(goal)?;
    let checker = CollisionChecker::new(chain, world, cfg.sweep_resolution);
    if !checker.config_free(start) {
        return Err(PlanError::StartInCollision);
    }
    if !checker.config_free(goal) {
        return Err(PlanError::GoalInCollision);
    }
    if start == goal {
        return Ok(vec![start.to_vec()]);
    }
    let raw = if checker.edge_free(start, goal) {
        vec![start.to_vec(), goal.to_vec()]
    } else {
        grow_tree(&checker, chain, start, goal, seed, cfg)?
    };
    Ok(shortcut(&checker, raw))
}

fn grow_tree(
    checker: &CollisionChecker<'_>,
    chain: &KinematicChain,
    start: &[f64],
    goal: &[f64],
    seed: u64,
    cfg: &PlannerConfig,
) -> Result<Vec<JointConfig>, PlanError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes: Vec<JointConfig> = vec![start.to_vec()];
    let mut parent: Vec<usize> = vec![0];
    for _ in 0..cfg.max_iterations {
        let sample = if rng.gen_bool(cfg.goal_bias) { goal.to_vec() } else { chain.random_config(&mut rng) };
        let (near, d) = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (i, dist(n, &sample)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if d == 0.0 {
            continue;
        }
        let new = if d <= cfg.step { sample } else { lerp(&nodes[near], &sample, cfg.step / d) };
        if !checker.config_free(&new) || !checker.edge_free(&nodes[near], &new) {
            continue;
        }
        nodes.push(new);
        parent.push(near);
        let last = nodes.len() - 1;
        if dist(&nodes[last], goal) <= cfg.step && checker.edge_free(&nodes[last], goal) {
            let mut path = vec![goal.to_vec()];
            let mut i = last;
            loop {
                path.push(nodes[i].clone());
                if i == 0 {
                    break;
                }
                i = parent[i];
            }
            path.reverse();
            if path[path.len() - 2] == path[path.len() - 1] {
                path.pop();
            }
            return Ok(path);
        }
    }
    Err(PlanError::Timeout(cfg.max_iterations))
}

/// From each kept node, jump to the farthest later node reachable by a free edge.
fn shortcut(checker: &CollisionChecker<'_>, path: Vec<JointConfig>) -> Vec<JointConfig> {
    let mut out = vec![path[0].clone()];
    let mut i = 0;
    while i + 1 < path.len() {
        let j = (i + 1..path.len()).rev().find(|&j| j == i + 1 || checker.edge_free(&path[i], &path[j])).unwrap();
        out.push(path[j].clone());
        i = j;
    }
    out
}

/// Shortest-arc rotation taking unit vector `a` onto unit vector `b`.
pub fn rotation_between(a: Vec3, b: Vec3) -> Quaternion {
    let (a, b) = (a.normalized(), b.normalized());
    let axis = a.cross(b);
    let s = axis.norm();
    let c = a.dot(b);
    if s < 1e-12 {
        if c > 0.0 {
            return Quaternion::IDENTITY;
        }
        let helper = if a.x.abs() < 0.9 { Vec3::X } else { Vec3::Y };
        return Quaternion::from_axis_angle(a.cross(helper), PI);
    }
    Quaternion::from_axis_angle(axis, s.atan2(c))
}

/// Approach candidates around an annotated grasp pose, nearest first.
///
/// Candidate 0 is the annotated orientation. The others tilt the back-off
/// direction (opposite the tool z axis) to random directions on the
/// hemisphere around it; ties keep sampling order.
pub fn grasp_candidates(grasp: &Pose, candidates: usize, seed: u64) -> Vec<Pose> {
    let back = -grasp.orientation.rotate(Vec3::Z);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![(0.0, *grasp)];
    while out.len() < candidates.max(1) {
        let v = Vec3::new(rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0));
        let n = v.norm();
        if !(1e-6..=1.0).contains(&n) {
            continue;
        }
        let mut d = v * (1.0 / n);
        if d.dot(back) < 0.0 {
            d = -d;
        }
        let tilt = rotation_between(back, d);
        out.push((back.dot(d).clamp(-1.0, 1.0).acos(), Pose::new(grasp.position, tilt * grasp.orientation)));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out.into_iter().map(|(_, p)| p).collect()
}

/// Preparation pose `distance` back along the approach axis of `grasp`.
pub fn preparation_pose(grasp: &Pose, distance: f64) -> Pose {
    Pose::new(grasp.position - grasp.orientation.rotate(Vec3::Z) * distance, grasp.orientation)
}

/// Total overlap of the gripper swept from the preparation pose to `grasp`.
pub fn sweep_overlap(world: &PlanningWorld, grasp: &Pose, prep_distance: f64, spacing: f64) -> usize {
    let prep = preparation_pose(grasp, prep_distance);
    let n = (prep_distance / spacing).ceil().max(1.0) as usize;
    (0..=n)
        .map(|k| {
            let t = k as f64 / n as f64;
            world.overlap_at(&Pose::new(prep.position.lerp(grasp.position, t), grasp.orientation))
        })
        .sum()
}

pub fn sample_grasp_direction(world: &PlanningWorld, grasp_point: &Pose, candidates: usize, seed: u64) -> Result<Pose, PlanError> {
    let cfg = PlannerConfig::default();
    sample_grasp_direction_with(world, grasp_point, candidates, seed, &cfg)
}

pub fn sample_grasp_direction_with(
    world: &PlanningWorld,
    grasp_point: &Pose,
    candidates: usize,
    seed: u64,
    cfg: &PlannerConfig,
) -> Result<Pose, PlanError> {
    if candidates == 0 {
        return Err(PlanError::NoValidGrasp(0));
    }
    grasp_candidates(grasp_point, candidates, seed)
        .into_iter()
        .find(|c| sweep_overlap(world, c, cfg.prep_distance, cfg.sweep_spacing) == 0)
        .ok_or(PlanError::NoValidGrasp(candidates))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub config: JointConfig,
    /// 0 = open, 1 = closed.
    pub gripper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub dt: f64,
}

impl Trajectory {
    pub fn empty(dt: f64) -> Self {
        Self { steps: Vec::new(), dt }
    }

    /// Checks joint limits on every step and the velocity bound on every
    /// consecutive pair, starting from `start` when given.
    pub fn check_limits(&self, chain: &KinematicChain, start: Option<&[f64]>) -> Result<(), String> {
        let mut prev: Option<&[f64]> = start;
        for (i, s) in self.steps.iter().enumerate() {
            chain.check(&s.config).map_err(|e| format!("step {i}: {e}"))?;
            if !(0.0..=1.0).contains(&s.gripper) {
                return Err(format!("step {i}: gripper {} outside [0, 1]", s.gripper));
            }
            if let Some(p) = prev {
                for (j, joint) in chain.joints().iter().enumerate() {
                    let d = (s.config[j] - p[j]).abs();
                    if d > joint.max_velocity * self.dt * (1.0 + 1e-9) {
                        return Err(format!("step {i}: joint {j} moves {d} rad in one step"));
                    }
                }
            }
            prev = Some(&s.config);
        }
        Ok(())
    }
}

/// Resamples a joint path so that no joint exceeds its velocity bound.
/// The first configuration is taken as already reached and not emitted.
pub fn retime(chain: &KinematicChain, path: &[JointConfig], gripper: f64, dt: f64) -> Vec<TrajectoryStep> {
    let mut steps = Vec::new();
    for w in path.windows(2) {
        let k = chain
            .joints()
            .iter()
            .enumerate()
            .map(|(j, joint)| ((w[1][j] - w[0][j]).abs() / (joint.max_velocity * dt) - 1e-12).ceil())
            .fold(1.0, f64::max) as usize;
        for s in 1..=k {
            let mut config = if s == k { w[1].clone() } else { lerp(&w[0], &w[1], s as f64 / k as f64) };
            chain.clamp(&mut config);
            steps.push(TrajectoryStep { config, gripper });
        }
    }
    steps
}

/// Annotated keypoints of one entity in world coordinates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EntityPriors {
    #[serde(default)]
    pub grasp_points: Vec<Pose>,
    #[serde(default)]
    pub place_point: Option<Pose>,
}

/// Everything the skill expander needs about the scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    /// World-frame clouds and priors per entity id.
    pub entities: BTreeMap<String, (PointCloud, EntityPriors)>,
    pub static_obstacles: PointCloud,
    pub gripper_cloud: PointCloud,
    pub clearance_radius: f64,
}

impl Scene {
    fn entity(&self, id: &str) -> Option<(&String, &(PointCloud, EntityPriors))> {
        self.entities.iter().find(|(k, _)| k.trim().eq_ignore_ascii_case(id.trim()))
    }

    /// Collision world excluding the listed entities.
    pub fn world_without(&self, excluded: &BTreeSet<String>) -> PlanningWorld {
        let mut obstacles = self.static_obstacles.clone();
        for (id, (cloud, _)) in &self.entities {
            if !excluded.contains(&id.to_ascii_lowercase()) {
                obstacles.extend(cloud);
            }
        }
        PlanningWorld { obstacles, gripper_cloud: self.gripper_cloud.clone(), clearance_radius: self.clearance_radius }
    }
}

/// Robot state carried between skills.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecState {
    pub config: JointConfig,
    pub gripper: f64,
    pub held: Option<String>,
    /// Entities put away inside receptacles; no longer obstacles.
    pub stowed: BTreeSet<String>,
}

impl ExecState {
    pub fn new(config: JointConfig) -> Self {
        Self { config, gripper: 0.0, held: None, stowed: BTreeSet::new() }
    }
}

struct Expander<'a> {
    chain: &'a KinematicChain,
    cfg: &'a PlannerConfig,
    world: PlanningWorld,
    rng: ChaCha8Rng,
    steps: Vec<TrajectoryStep>,
    state: ExecState,
    /// Place target of the last open-gripper motion.
    last_release: Option<usize>,
}

impl Expander<'_> {
    fn solve_ik(&mut self, target: &Pose) -> Result<JointConfig, PlanError> {
        let checker = CollisionChecker::new(self.chain, &self.world, self.cfg.sweep_resolution);
        let mut last_err = None;
        let mut seeds = vec![self.state.config.clone()];
        if self.chain.dof() == 7 {
            seeds.push(KinematicChain::panda_ready());
        }
        for attempt in 0..=self.cfg.ik_restarts {
            let seed = match seeds.get(attempt) {
                Some(s) => s.clone(),
                None => self.chain.random_config(&mut self.rng),
            };
            match inverse_kinematics_with(self.chain, target, &seed, &self.cfg.ik) {
                Ok(q) if checker.config_free(&q) => return Ok(q),
                Ok(_) => last_err = Some(PlanError::GoalInCollision),
                Err(e) => last_err = Some(e),
            }
        }
        Err(last_err.unwrap_or(PlanError::GoalInCollision))
    }

    /// Plans from the current configuration to `goal`, smooths, retimes and appends.
    fn move_to_config(&mut self, goal: JointConfig) -> Result<(), PlanError> {
        let seed = self.rng.gen();
        let path = rrt_plan_with(&self.world, self.chain, &self.state.config, &goal, seed, self.cfg)?;
        let path = self.smoothed(&path).unwrap_or(path);
        self.steps.extend(retime(self.chain, &path, self.state.gripper, self.cfg.dt));
        self.state.config = goal;
        Ok(())
    }

    fn move_to(&mut self, pose: &Pose) -> Result<(), PlanError> {
        let goal = self.solve_ik(pose)?;
        self.move_to_config(goal)
    }

    /// Bezier-smoothed version of `path`, or `None` if IK fails or the
    /// smoothed path is not collision-free.
    fn smoothed(&self, path: &[JointConfig]) -> Option<Vec<JointConfig>> {
        if path.len() < 3 || self.cfg.smoothing_samples < 2 {
            return None;
        }
        let poses: Vec<Pose> = path.iter().map(|q| self.chain.fk_unchecked(q)).collect();
        let dense = smooth_path(&poses, self.cfg.smoothing_samples).ok()?;
        let stride = self.cfg.smoothing_samples - 1;
        let checker = CollisionChecker::new(self.chain, &self.world, self.cfg.sweep_resolution);
        let mut out: Vec<JointConfig> = vec![path[0].clone()];
        for (i, pose) in dense.iter().enumerate().skip(1) {
            let q = if i % stride == 0 {
                path[i / stride].clone()
            } else {
                inverse_kinematics_with(self.chain, pose, out.last().unwrap(), &self.cfg.ik).ok()?
            };
            let prev = out.last().unwrap();
            if dist(prev, &q) > 2.0 * self.cfg.step || !checker.config_free(&q) || !checker.edge_free(prev, &q) {
                return None;
            }
            out.push(q);
        }
        Some(out)
    }

    /// Approaches `grasp` from its preparation pose and closes the gripper.
    fn grasp(&mut self, grasp: &Pose, seed: u64) -> Result<(), PlanError> {
        let grasp = sample_grasp_direction_with(&self.world, grasp, self.cfg.grasp_candidates, seed, self.cfg)?;
        self.actuate(0.0);
        self.move_to(&preparation_pose(&grasp, self.cfg.prep_distance))?;
        self.move_to(&grasp)?;
        self.actuate(1.0);
        Ok(())
    }

    fn actuate(&mut self, target: f64) {
        let from = self.state.gripper;
        let n = self.cfg.gripper_steps.max(1);
        for k in 1..=n {
            let g = from + (target - from) * k as f64 / n as f64;
            self.steps.push(TrajectoryStep { config: self.state.config.clone(), gripper: g });
        }
        self.state.gripper = target;
    }

    fn current_pose(&self) -> Pose {
        self.chain.fk_unchecked(&self.state.config)
    }

    fn offset(&mut self, delta: Vec3) -> Result<(), PlanError> {
        let p = self.current_pose();
        self.move_to(&Pose::new(p.position + delta, p.orientation))
    }

    fn rotate_tool(&mut self, axis: Vec3, angle: f64) -> Result<(), PlanError> {
        // two halves keep each IK problem local
        for _ in 0..2 {
            let p = self.current_pose();
            let q = p.orientation * Quaternion::from_axis_angle(axis, angle / 2.0);
            self.move_to(&Pose::new(p.position, q))?;
        }
        Ok(())
    }
}

/// Parameter keys naming the receiving entity of Place, Insert, Hang and Pour.
pub const DESTINATION_KEYS: [&str; 3] = ["destination", "receptacle", "to"];

fn text_param<'c>(call: &'c SkillCall, keys: &[&str]) -> Option<&'c str> {
    keys.iter().find_map(|k| call.param(k).and_then(ParamValue::as_text))
}

fn position_param(call: &SkillCall, key: &str) -> Result<Option<Vec3>, PlanError> {
    match call.param(key) {
        None => Ok(None),
        Some(ParamValue::Position(v)) => Ok(Some(Vec3::from(*v))),
        Some(_) => Err(PlanError::BadParameter { key: key.into(), reason: "expected a position triple".into() }),
    }
}

fn orientation_param(call: &SkillCall) -> Result<Option<Quaternion>, PlanError> {
    match call.param("orientation") {
        None => Ok(None),
        Some(ParamValue::Angles([r, p, y])) => Ok(Some(Quaternion::from_euler(*r, *p, *y))),
        Some(_) => Err(PlanError::BadParameter { key: "orientation".into(), reason: "expected roll, pitch, yaw".into() }),
    }
}

/// Result of expanding one skill call.
#[derive(Clone, Debug, PartialEq)]
pub struct SkillTrajectory {
    pub trajectory: Trajectory,
    /// Index into `trajectory.steps` of the final open-gripper step of a
    /// release motion (Place, Insert, Hang).
    pub release_step: Option<usize>,
}

/// Expands `call` into a trajectory segment starting from `state`, which is
/// updated on success. On error `state` is left unchanged.
///
/// Entities the skill interacts with (its target, any entity named in a
/// string parameter, and the held entity) are not obstacles during the skill.
pub fn execute_skill(
    call: &SkillCall,
    scene: &Scene,
    chain: &KinematicChain,
    state: &mut ExecState,
    seed: u64,
    cfg: &PlannerConfig,
) -> Result<SkillTrajectory, PlanError> {
    let mut excluded: BTreeSet<String> = state.stowed.clone();
    excluded.insert(call.target.trim().to_ascii_lowercase());
    for v in call.params.values() {
        if let ParamValue::Text(s) = v {
            excluded.insert(s.trim().to_ascii_lowercase());
        }
    }
    if let Some(h) = &state.held {
        excluded.insert(h.to_ascii_lowercase());
    }
    let mut ex = Expander {
        chain,
        cfg,
        world: scene.world_without(&excluded),
        rng: ChaCha8Rng::seed_from_u64(seed),
        steps: Vec::new(),
        state: state.clone(),
        last_release: None,
    };
    let priors = |id: &str| scene.entity(id).map(|(k, (_, p))| (k.clone(), p.clone()));
    let grasp_of = |id: &str| -> Result<Pose, PlanError> {
        let (_, p) = priors(id).ok_or_else(|| PlanError::MissingPrior { entity: id.into(), what: "entity" })?;
        p.grasp_points.first().copied().ok_or_else(|| PlanError::MissingPrior { entity: id.into(), what: "grasp point" })
    };
    let place_of = |id: &str| -> Result<Vec3, PlanError> {
        let (_, p) = priors(id).ok_or_else(|| PlanError::MissingPrior { entity: id.into(), what: "entity" })?;
        p.place_point.map(|p| p.position).ok_or_else(|| PlanError::MissingPrior { entity: id.into(), what: "place point" })
    };
    let down = |q: Option<Quaternion>, cur: &Pose| q.unwrap_or(cur.orientation);
    let skill = call.skill.as_str().to_string();
    let target = call.target.as_str();
    let lift = Vec3::new(0.0, 0.0, cfg.lift_height);

    match skill.as_str() {
        "Pick" => {
            let mut grasp = grasp_of(target)?;
            if let Some(q) = orientation_param(call)? {
                grasp.orientation = q;
            }
            ex.grasp(&grasp, seed)?;
            ex.state.held = priors(target).map(|(k, _)| k);
        }
        "Place" | "Insert" | "Hang" => {
            // a named destination makes the target the moved object
            if text_param(call, &DESTINATION_KEYS).is_some() && ex.state.held.is_none() {
                ex.grasp(&grasp_of(target)?, seed)?;
                ex.state.held = priors(target).map(|(k, _)| k);
            }
            let dest = match position_param(call, "pose")?.or(position_param(call, "position")?) {
                Some(p) => p,
                None => place_of(text_param(call, &DESTINATION_KEYS).unwrap_or(target))?,
            };
            let orient = down(orientation_param(call)?, &ex.current_pose());
            if ex.state.held.is_some() {
                ex.offset(lift)?;
            }
            ex.move_to(&Pose::new(dest + lift, orient))?;
            let depth = if skill == "Insert" { Vec3::new(0.0, 0.0, -cfg.push_distance / 2.0) } else { Vec3::ZERO };
            ex.move_to(&Pose::new(dest + depth, orient))?;
            ex.actuate(0.0);
            ex.last_release = Some(ex.steps.len() - 1);
            let moved = ex.state.held.take().or_else(|| priors(target).map(|(k, _)| k));
            if let Some(m) = moved {
                ex.state.stowed.insert(m.to_ascii_lowercase());
            }
            ex.offset(lift)?;
        }
        "Lift" => ex.offset(lift)?,
        "Open" | "Close" | "Push" => {
            let handle = grasp_of(target)?;
            let approach = handle.orientation.rotate(Vec3::Z);
            ex.actuate(if skill == "Push" { 1.0 } else { 0.0 });
            ex.move_to(&preparation_pose(&handle, cfg.prep_distance))?;
            ex.move_to(&handle)?;
            if skill != "Push" {
                ex.actuate(1.0);
            }
            let dir = if skill == "Open" { -approach } else { approach };
            ex.offset(dir * cfg.push_distance)?;
            ex.actuate(0.0);
            ex.offset(-approach * cfg.prep_distance)?;
        }
        "Press" => {
            let button = grasp_of(target)?;
            ex.actuate(1.0);
            ex.move_to(&preparation_pose(&button, cfg.prep_distance))?;
            ex.move_to(&button)?;
            ex.move_to(&preparation_pose(&button, cfg.prep_distance))?;
        }
        "Pour" => {
            let dest = match text_param(call, &DESTINATION_KEYS) {
                Some(d) => place_of(d)?,
                None => place_of(target)?,
            };
            let orient = ex.current_pose().orientation;
            ex.move_to(&Pose::new(dest + lift, orient))?;
            ex.rotate_tool(Vec3::X, cfg.pour_tilt)?;
            ex.rotate_tool(Vec3::X, -cfg.pour_tilt)?;
        }
        "Twist" => {
            let grip = grasp_of(target)?;
            ex.actuate(0.0);
            ex.move_to(&preparation_pose(&grip, cfg.prep_distance))?;
            ex.move_to(&grip)?;
            ex.actuate(1.0);
            let angle = call.param("angle").and_then(ParamValue::as_scalar).unwrap_or(cfg.twist_angle);
            ex.rotate_tool(Vec3::Z, angle)?;
            ex.actuate(0.0);
            ex.offset(-grip.orientation.rotate(Vec3::Z) * cfg.prep_distance)?;
        }
        "Explore" => {
            let look = match priors(target) {
                Some((_, p)) => p
                    .grasp_points
                    .first()
                    .map(|g| g.position)
                    .or(p.place_point.map(|p| p.position))
                    .ok_or_else(|| PlanError::MissingPrior { entity: target.into(), what: "keypoint" })?,
                None => return Err(PlanError::MissingPrior { entity: target.into(), what: "entity" }),
            };
            let orient = ex.current_pose().orientation;
            ex.move_to(&Pose::new(look + lift * 2.0, orient))?;
        }
        other => return Err(PlanError::UnsupportedSkill(other.to_string())),
    }
    *state = ex.state;
    Ok(SkillTrajectory { trajectory: Trajectory { steps: ex.steps, dt: cfg.dt }, release_step: ex.last_release })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkillFailure {
    pub index: usize,
    pub skill: String,
    pub error: PlanError,
}

/// Output of [`execute_sequence`]: the trajectory of every completed skill,
/// plus the failure that stopped execution, if any.
#[derive(Clone, Debug, PartialEq)]
pub struct Execution {
    pub trajectory: Trajectory,
    pub completed: usize,
    pub failure: Option<SkillFailure>,
    pub state: ExecState,
}

/// Runs skills in order and stops at the first failure.
pub fn execute_sequence(
    calls: &[SkillCall],
    scene: &Scene,
    chain: &KinematicChain,
    start: JointConfig,
    seed: u64,
    cfg: &PlannerConfig,
) -> Result<Execution, PlanError> {
    chain.check(&start)?;
    let mut state = ExecState::new(start);
    let mut trajectory = Trajectory::empty(cfg.dt);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (index, call) in calls.iter().enumerate() {
        match execute_skill(call, scene, chain, &mut state, rng.gen(), cfg) {
            Ok(seg) => trajectory.steps.extend(seg.trajectory.steps),
            Err(error) => {
                let failure = SkillFailure { index, skill: call.to_string(), error };
                return Ok(Execution { trajectory, completed: index, failure: Some(failure), state });
            }
        }
    }
    Ok(Execution { trajectory, completed: calls.len(), failure: None, state })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
        a.distance(b) <= tol
    }

    /// Home pose composed from rotation matrices independently of `Pose`.
    #[test]
    fn panda_home_pose() {
        type M = [[f64; 4]; 4];
        fn mul(a: &M, b: &M) -> M {
            let mut c = [[0.0; 4]; 4];
            for i in 0..4 {
                for j in 0..4 {
                    c[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
                }
            }
            c
        }
        fn t(x: f64, y: f64, z: f64, roll: f64) -> M {
            let (s, c) = roll.sin_cos();
            [[1.0, 0.0, 0.0, x], [0.0, c, -s, y], [0.0, s, c, z], [0.0, 0.0, 0.0, 1.0]]
        }
        let h = FRAC_PI_2;
        let chain = [
            t(0.0, 0.0, 0.333, 0.0),
            t(0.0, 0.0, 0.0, -h),
            t(0.0, -0.316, 0.0, h),
            t(0.0825, 0.0, 0.0, h),
            t(-0.0825, 0.384, 0.0, -h),
            t(0.0, 0.0, 0.0, h),
            t(0.088, 0.0, 0.0, h),
            t(0.0, 0.0, 0.2104, 0.0),
        ];
        let m = chain.iter().fold(t(0.0, 0.0, 0.0, 0.0), |acc, x| mul(&acc, x));
        let pose = forward_kinematics(&KinematicChain::panda(), &[0.0; 7]).unwrap();
        let expect = Vec3::new(m[0][3], m[1][3], m[2][3]);
        assert!(close(pose.position, expect, 1e-12));
        assert!(close(pose.position, Vec3::new(0.088, 0.0, 0.8226), 1e-12));
        // tool z points straight down, tool x is the flange x turned by -pi/4
        assert!(close(pose.orientation.rotate(Vec3::Z), Vec3::new(m[0][2], m[1][2], m[2][2]), 1e-12));
        assert!(close(pose.orientation.rotate(Vec3::Z), -Vec3::Z, 1e-12));
        let golden = Quaternion::from_axis_angle(Vec3::X, PI) * Quaternion::rot_z(-FRAC_PI_4);
        assert!(pose.orientation.angle_to(&golden) < 1e-12);
    }

    #[test]
    fn identity_chain_and_limits() {
        let chain = KinematicChain::new(vec![], Pose::IDENTITY).unwrap();
        assert_eq!(forward_kinematics(&chain, &[]).unwrap(), Pose::IDENTITY);
        let panda = KinematicChain::panda();
        assert!(matches!(forward_kinematics(&panda, &[0.0; 6]), Err(PlanError::DimensionMismatch { .. })));
        let mut q = vec![0.0; 7];
        q[3] = 0.5;
        assert!(matches!(forward_kinematics(&panda, &q), Err(PlanError::LimitViolation { joint: 3, .. })));
        let bad = Joint::revolute(Vec3::Z, Vec3::ZERO, Quaternion::IDENTITY, (1.0, -1.0), 1.0);
        assert!(KinematicChain::new(vec![bad], Pose::IDENTITY).is_err());
    }

    #[test]
    fn wrist_roll_keeps_tool_point() {
        // last axis passes through the tool point
        let chain = KinematicChain::panda();
        let mut q = KinematicChain::panda_ready();
        let a = forward_kinematics(&chain, &q).unwrap();
        q[6] += 1.0;
        let b = forward_kinematics(&chain, &q).unwrap();
        assert!(close(a.position, b.position, 1e-12));
        assert!((a.orientation.angle_to(&b.orientation) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn chain_json_round_trip() {
        let chain = KinematicChain::panda();
        let text = serde_json::to_string(&chain).unwrap();
        assert_eq!(KinematicChain::from_json(&text).unwrap(), chain);
        assert!(KinematicChain::from_json(r#"{"joints":[{"axis":[0,0,1],"origin_offset":[0,0,0],"limits":[1,0]}]}"#).is_err());
    }

    #[test]
    fn ik_identity_and_unreachable() {
        let chain = KinematicChain::panda();
        let seed = KinematicChain::panda_ready();
        let target = forward_kinematics(&chain, &seed).unwrap();
        assert_eq!(inverse_kinematics(&chain, &target, &seed).unwrap(), seed);
        let far = Pose::new(Vec3::new(10.0, 0.0, 0.0), target.orientation);
        assert!(matches!(inverse_kinematics(&chain, &far, &seed), Err(PlanError::NoConvergence { .. })));
    }

    #[test]
    fn ik_recovers_nearby_targets() {
        let chain = KinematicChain::panda();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let q = chain.random_config(&mut rng);
            let mut seed: Vec<f64> = q.iter().map(|v| v + rng.gen_range(-0.2..0.2)).collect();
            chain.clamp(&mut seed);
            let target = forward_kinematics(&chain, &q).unwrap();
            let sol = inverse_kinematics(&chain, &target, &seed).unwrap();
            let got = forward_kinematics(&chain, &sol).unwrap();
            assert!(got.position.distance(target.position) <= 1e-3);
            assert!(got.orientation.angle_to(&target.orientation) <= 1e-2);
        }
    }

    fn planar_world(obstacles: PointCloud) -> (KinematicChain, PlanningWorld) {
        let chain = KinematicChain::planar(&[0.5, 0.4, 0.3], PI).unwrap();
        (chain, PlanningWorld::new(obstacles, planar_gripper_cloud()))
    }

    #[test]
    fn rrt_trivial_cases() {
        let (chain, world) = planar_world(PointCloud::default());
        let start = vec![0.0, 0.0, 0.0];
        assert_eq!(rrt_plan(&world, &chain, &start, &start, 1).unwrap(), vec![start.clone()]);
        let path = rrt_plan(&world, &chain, &start, &[1.0, -0.5, 0.3], 1).unwrap();
        assert_eq!(path.len(), 2);
    }

    #[test]
    fn rrt_avoids_box_and_is_deterministic() {
        // box on the arc swept by the tool between the two configurations
        let obstacles = PointCloud::box_surface(Vec3::new(0.78, 0.78, -0.05), Vec3::new(0.92, 0.92, 0.05), 0.02, "world");
        let (chain, world) = planar_world(obstacles);
        let start = vec![0.0, 0.0, 0.0];
        let goal = vec![PI / 2.0, 0.0, 0.0];
        let checker = CollisionChecker::new(&chain, &world, 0.005);
        assert!(!checker.edge_free(&start, &goal));
        let a = rrt_plan(&world, &chain, &start, &goal, 7).unwrap();
        let b = rrt_plan(&world, &chain, &start, &goal, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.first().unwrap(), &start);
        assert_eq!(a.last().unwrap(), &goal);
        for w in a.windows(2) {
            for k in 0..=200 {
                let q = lerp(&w[0], &w[1], k as f64 / 200.0);
                let pose = chain.fk_unchecked(&q);
                assert_eq!(world.overlap_at(&pose), 0);
            }
        }
    }

    #[test]
    fn rrt_rejects_colliding_endpoints() {
        let obstacles = PointCloud::new(vec![Vec3::new(1.2, 0.0, 0.0)], "world");
        let (chain, world) = planar_world(obstacles);
        assert_eq!(rrt_plan(&world, &chain, &[0.0; 3], &[1.0, 0.0, 0.0], 0), Err(PlanError::StartInCollision));
        assert_eq!(rrt_plan(&world, &chain, &[1.0, 0.0, 0.0], &[0.0; 3], 0), Err(PlanError::GoalInCollision));
    }

    #[test]
    fn grasp_sampling_cases() {
        let grasp = Pose::new(Vec3::new(0.5, 0.0, 0.05), Quaternion::from_axis_angle(Vec3::X, PI));
        let empty = PlanningWorld::new(PointCloud::default(), parallel_gripper_cloud());
        assert_eq!(sample_grasp_direction(&empty, &grasp, 8, 1).unwrap(), grasp);

        // plate directly above the grasp point, between it and the preparation pose
        let plate = PointCloud::box_surface(Vec3::new(0.44, -0.06, 0.17), Vec3::new(0.56, 0.06, 0.171), 0.005, "world");
        let world = PlanningWorld::new(plate, parallel_gripper_cloud());
        assert!(sweep_overlap(&world, &grasp, 0.08, 0.01) > 0);
        let cands = grasp_candidates(&grasp, 32, 3);
        let expected = cands.iter().find(|c| sweep_overlap(&world, c, 0.08, 0.01) == 0).copied();
        let got = sample_grasp_direction(&world, &grasp, 32, 3).ok();
        assert_eq!(got, expected);
        assert!(got.unwrap().orientation.angle_to(&grasp.orientation) > 0.1);

        let cage = PointCloud::box_surface(Vec3::new(0.35, -0.15, -0.1), Vec3::new(0.65, 0.15, 0.2), 0.005, "world");
        let caged = PlanningWorld::new(cage, parallel_gripper_cloud());
        assert_eq!(sample_grasp_direction(&caged, &grasp, 8, 1), Err(PlanError::NoValidGrasp(8)));
    }

    #[test]
    fn retime_respects_velocity() {
        let chain = KinematicChain::panda();
        let a = KinematicChain::panda_ready();
        let mut b = a.clone();
        b[0] += 1.0;
        b[6] -= 0.5;
        let steps = retime(&chain, &[a.clone(), b.clone()], 0.0, 0.1);
        assert_eq!(steps.last().unwrap().config, b);
        let traj = Trajectory { steps, dt: 0.1 };
        traj.check_limits(&chain, Some(&a)).unwrap();
        assert_eq!(traj.steps.len(), 5);
    }

    fn pick_place_scene() -> Scene {
        let apple = Pose::new(Vec3::new(0.5, -0.1, 0.05), Quaternion::from_axis_angle(Vec3::X, PI));
        let cloud = PointCloud::box_surface(Vec3::new(0.47, -0.13, 0.02), Vec3::new(0.53, -0.07, 0.08), 0.01, "world");
        let mut entities = BTreeMap::new();
        entities.insert("apple".to_string(), (cloud, EntityPriors { grasp_points: vec![apple], place_point: None }));
        Scene {
            entities,
            static_obstacles: PointCloud::default(),
            gripper_cloud: parallel_gripper_cloud(),
            clearance_radius: 0.01,
        }
    }

    #[test]
    fn pick_then_place_reach_their_targets() {
        let chain = KinematicChain::panda();
        let scene = pick_place_scene();
        let cfg = PlannerConfig::default();
        let mut state = ExecState::new(KinematicChain::panda_ready());
        let start = state.config.clone();
        let pick = SkillCall::new("Pick", "apple");
        let seg = execute_skill(&pick, &scene, &chain, &mut state, 11, &cfg).unwrap();
        let last = seg.trajectory.steps.last().unwrap();
        assert_eq!(last.gripper, 1.0);
        let p = forward_kinematics(&chain, &last.config).unwrap();
        assert!(p.position.distance(Vec3::new(0.5, -0.1, 0.05)) <= 1e-3);
        seg.trajectory.check_limits(&chain, Some(&start)).unwrap();
        assert_eq!(state.held.as_deref(), Some("apple"));

        let before = state.config.clone();
        let place = SkillCall::new("Place", "basket").with("pose", ParamValue::Position([0.6, 0.4, 0.15]));
        let seg = execute_skill(&place, &scene, &chain, &mut state, 12, &cfg).unwrap();
        seg.trajectory.check_limits(&chain, Some(&before)).unwrap();
        let release = &seg.trajectory.steps[seg.release_step.unwrap()];
        assert_eq!(release.gripper, 0.0);
        let p = forward_kinematics(&chain, &release.config).unwrap();
        assert!(p.position.distance(Vec3::new(0.6, 0.4, 0.15)) <= 1e-3);
        assert!(state.held.is_none());
    }

    #[test]
    fn missing_prior() {
        let chain = KinematicChain::panda();
        let scene = pick_place_scene();
        let mut state = ExecState::new(KinematicChain::panda_ready());
        let err = execute_skill(&SkillCall::new("Pick", "pear"), &scene, &chain, &mut state, 0, &PlannerConfig::default());
        assert!(matches!(err, Err(PlanError::MissingPrior { .. })));
        assert_eq!(state, ExecState::new(KinematicChain::panda_ready()));
    }
}
