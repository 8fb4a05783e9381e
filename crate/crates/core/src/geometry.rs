//! Geometric primitives: vectors, unit quaternions, poses, Bezier smoothing
//! and point clouds with grid-accelerated proximity queries.

use rustc_hash::FxHashMap;
use std::fs;
use std::io;
use std::ops::{Add, Mul, Neg, Sub};
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("need at least 2 waypoints, got {0}")]
    TooFewWaypoints(usize),
    #[error("samples per segment must be at least 2, got {0}")]
    TooFewSamples(usize),
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("not a PCLB point cloud (bad magic)")]
    BadMagic,
    #[error("point cloud payload truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("point cloud contains a non-finite coordinate")]
    NonFinite,
    #[error("invalid point cloud json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl From<[f64; 3]> for Vec3 {
    fn from([x, y, z]: [f64; 3]) -> Self {
        Self { x, y, z }
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        [v.x, v.y, v.z]
    }
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };
    pub const X: Vec3 = Vec3 { x: 1.0, y: 0.0, z: 0.0 };
    pub const Y: Vec3 = Vec3 { x: 0.0, y: 1.0, z: 0.0 };
    pub const Z: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 1.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn to_array(self) -> [f64; 3] {
        self.into()
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(self.y * o.z - self.z * o.y, self.z * o.x - self.x * o.z, self.x * o.y - self.y * o.x)
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        if n > 0.0 {
            self * (1.0 / n)
        } else {
            self
        }
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn lerp(self, o: Vec3, t: f64) -> Vec3 {
        self + (o - self) * t
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Unit quaternion, stored in canonical sign (w >= 0, ties broken on x, y, z).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Quaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl From<[f64; 4]> for Quaternion {
    fn from([w, x, y, z]: [f64; 4]) -> Self {
        Quaternion::new(w, x, y, z)
    }
}

impl From<Quaternion> for [f64; 4] {
    fn from(q: Quaternion) -> Self {
        q.to_array()
    }
}

impl Default for Quaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    /// Normalizes and canonicalizes. A zero input yields the identity.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self::raw(w, x, y, z).unit().canonical()
    }

    fn raw(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    fn unit(self) -> Self {
        let n = (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
            // already unit: keep bits stable across serialization round trips
            self
        } else if n > 0.0 && n.is_finite() {
            Self::raw(self.w / n, self.x / n, self.y / n, self.z / n)
        } else {
            Self::IDENTITY
        }
    }

    fn canonical(self) -> Self {
        let flip = [self.w, self.x, self.y, self.z]
            .into_iter()
            .find(|c| *c != 0.0)
            .is_some_and(|c| c < 0.0);
        if flip {
            self.negated()
        } else {
            self
        }
    }

    fn negated(self) -> Self {
        Self::raw(-self.w, -self.x, -self.y, -self.z)
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let axis = axis.normalized();
        let (s, c) = (angle / 2.0).sin_cos();
        Self::new(c, axis.x * s, axis.y * s, axis.z * s)
    }

    /// Roll about x, then pitch about y, then yaw about z (fixed axes).
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self::from_axis_angle(Vec3::Z, yaw) * Self::from_axis_angle(Vec3::Y, pitch) * Self::from_axis_angle(Vec3::X, roll)
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_axis_angle(Vec3::Z, angle)
    }

    pub fn conjugate(&self) -> Self {
        Self::raw(self.w, -self.x, -self.y, -self.z).canonical()
    }

    pub fn dot(&self, o: &Quaternion) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    /// Rotation angle between the two orientations, in [0, pi].
    pub fn angle_to(&self, o: &Quaternion) -> f64 {
        let r = self.conjugate() * *o;
        let v = Vec3::new(r.x, r.y, r.z).norm();
        2.0 * v.atan2(r.w.abs())
    }

    pub fn rotate(&self, v: Vec3) -> Vec3 {
        let u = Vec3::new(self.x, self.y, self.z);
        let t = u.cross(v) * 2.0;
        v + t * self.w + u.cross(t)
    }

    /// Axis-angle vector (axis scaled by angle in [0, pi]).
    pub fn to_rotation_vector(&self) -> Vec3 {
        let u = Vec3::new(self.x, self.y, self.z);
        let s = u.norm();
        if s < 1e-12 {
            return u * 2.0;
        }
        let angle = 2.0 * s.atan2(self.w);
        u * (angle / s)
    }

    pub fn from_rotation_vector(v: Vec3) -> Self {
        let angle = v.norm();
        if angle < 1e-12 {
            return Self::new(1.0, v.x / 2.0, v.y / 2.0, v.z / 2.0);
        }
        Self::from_axis_angle(v, angle)
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|c| c.is_finite())
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;
    fn mul(self, o: Quaternion) -> Quaternion {
        Quaternion::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }
}

/// Spherical linear interpolation along the shorter arc.
///
/// Inputs closer than 1e-9 in cosine fall back to normalized linear
/// interpolation. Because `q` and `-q` are the same rotation, an antipodal
/// pair is flipped onto the same hemisphere and never needs a detour axis.
pub fn slerp(a: &Quaternion, b: &Quaternion, t: f64) -> Quaternion {
    let mut b = *b;
    let mut d = a.dot(&b);
    if d < 0.0 {
        b = b.negated();
        d = -d;
    }
    if d > 1.0 - 1e-9 {
        return Quaternion::new(
            a.w + (b.w - a.w) * t,
            a.x + (b.x - a.x) * t,
            a.y + (b.y - a.y) * t,
            a.z + (b.z - a.z) * t,
        );
    }
    let theta = d.acos();
    let sin = theta.sin();
    let wa = ((1.0 - t) * theta).sin() / sin;
    let wb = (t * theta).sin() / sin;
    Quaternion::new(
        wa * a.w + wb * b.w,
        wa * a.x + wb * b.x,
        wa * a.y + wb * b.y,
        wa * a.z + wb * b.z,
    )
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: Quaternion,
}

impl Pose {
    pub const IDENTITY: Pose = Pose { position: Vec3::ZERO, orientation: Quaternion::IDENTITY };

    pub fn new(position: Vec3, orientation: Quaternion) -> Self {
        Self { position, orientation }
    }

    pub fn from_position(position: Vec3) -> Self {
        Self { position, orientation: Quaternion::IDENTITY }
    }

    pub fn transform_point(&self, p: Vec3) -> Vec3 {
        self.position + self.orientation.rotate(p)
    }

    /// `self * other`: apply `other` in the frame of `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            position: self.transform_point(other.position),
            orientation: self.orientation * other.orientation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.orientation.conjugate();
        Pose { position: -inv.rotate(self.position), orientation: inv }
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite() && self.orientation.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BezierSegment {
    pub p0: Vec3,
    pub p1: Vec3,
    pub p2: Vec3,
    pub p3: Vec3,
}

impl BezierSegment {
    pub fn eval(&self, t: f64) -> Vec3 {
        if t == 0.0 {
            return self.p0;
        }
        if t == 1.0 {
            return self.p3;
        }
        let s = 1.0 - t;
        self.p0 * (s * s * s) + self.p1 * (3.0 * s * s * t) + self.p2 * (3.0 * s * t * t) + self.p3 * (t * t * t)
    }

    pub fn derivative(&self, t: f64) -> Vec3 {
        let s = 1.0 - t;
        (self.p1 - self.p0) * (3.0 * s * s) + (self.p2 - self.p1) * (6.0 * s * t) + (self.p3 - self.p2) * (3.0 * t * t)
    }
}

/// Cubic segments through `points` with Catmull-Rom tangents (tension 0.5)
/// and one-sided tangents at the ends.
pub fn catmull_rom_segments(points: &[Vec3]) -> Vec<BezierSegment> {
    let n = points.len();
    if n < 2 {
        return Vec::new();
    }
    let tangent = |i: usize| -> Vec3 {
        if i == 0 {
            points[1] - points[0]
        } else if i == n - 1 {
            points[n - 1] - points[n - 2]
        } else {
            (points[i + 1] - points[i - 1]) * 0.5
        }
    };
    (0..n - 1)
        .map(|i| BezierSegment {
            p0: points[i],
            p1: points[i] + tangent(i) * (1.0 / 3.0),
            p2: points[i + 1] - tangent(i + 1) * (1.0 / 3.0),
            p3: points[i + 1],
        })
        .collect()
}

/// Resamples a waypoint path with piecewise cubic Bezier positions and
/// per-segment SLERP orientations sharing the same parameter.
///
/// Output length is `(waypoints - 1) * (samples_per_segment - 1) + 1`; the
/// input waypoint `i` is reproduced exactly at index `i * (samples_per_segment - 1)`.
pub fn smooth_path(waypoints: &[Pose], samples_per_segment: usize) -> Result<Vec<Pose>, GeometryError> {
    if waypoints.len() < 2 {
        return Err(GeometryError::TooFewWaypoints(waypoints.len()));
    }
    if samples_per_segment < 2 {
        return Err(GeometryError::TooFewSamples(samples_per_segment));
    }
    let positions: Vec<Vec3> = waypoints.iter().map(|p| p.position).collect();
    let segments = catmull_rom_segments(&positions);
    let steps = samples_per_segment - 1;
    let mut out = Vec::with_capacity(segments.len() * steps + 1);
    for (i, seg) in segments.iter().enumerate() {
        let (qa, qb) = (&waypoints[i].orientation, &waypoints[i + 1].orientation);
        out.push(waypoints[i]);
        for k in 1..steps {
            let t = k as f64 / steps as f64;
            out.push(Pose::new(seg.eval(t), slerp(qa, qb, t)));
        }
    }
    out.push(*waypoints.last().unwrap());
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    #[serde(default)]
    pub frame: String,
}

const PCLB_MAGIC: &[u8; 4] = b"PCLB";

impl PointCloud {
    pub fn new(points: Vec<Vec3>, frame: impl Into<String>) -> Self {
        Self { points, frame: frame.into() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p.is_finite())
    }

    /// Little-endian: magic `PCLB`, u32 count, then `count * 3` f64 values.
    pub fn to_pclb(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.points.len() * 24);
        out.extend_from_slice(PCLB_MAGIC);
        out.extend_from_slice(&(self.points.len() as u32).to_le_bytes());
        for p in &self.points {
            for c in p.to_array() {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        out
    }

    pub fn from_pclb(bytes: &[u8], frame: impl Into<String>) -> Result<Self, GeometryError> {
        if bytes.len() < 8 || &bytes[..4] != PCLB_MAGIC {
            return Err(GeometryError::BadMagic);
        }
        let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let expected = 8 + count * 24;
        if bytes.len() != expected {
            return Err(GeometryError::Truncated { expected, found: bytes.len() });
        }
        let points: Vec<Vec3> = bytes[8..]
            .chunks_exact(24)
            .map(|chunk| {
                let c = |i: usize| f64::from_le_bytes(chunk[i * 8..i * 8 + 8].try_into().unwrap());
                Vec3::new(c(0), c(1), c(2))
            })
            .collect();
        let cloud = Self::new(points, frame);
        if !cloud.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        Ok(cloud)
    }

    /// Reads `.json` files as the debug form and anything else as PCLB.
    pub fn read(path: &Path) -> Result<Self, GeometryError> {
        let bytes = fs::read(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            let cloud: PointCloud = serde_json::from_slice(&bytes)?;
            if !cloud.is_finite() {
                return Err(GeometryError::NonFinite);
            }
            return Ok(cloud);
        }
        let frame = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Self::from_pclb(&bytes, frame)
    }

    pub fn write(&self, path: &Path) -> Result<(), GeometryError> {
        if path.extension().is_some_and(|e| e == "json") {
            fs::write(path, serde_json::to_vec(self)?)?;
        } else {
            fs::write(path, self.to_pclb())?;
        }
        Ok(())
    }

    pub fn extend(&mut self, other: &PointCloud) {
        self.points.extend_from_slice(&other.points);
    }

    /// Axis-aligned box surface sampled on a regular lattice with the given spacing.
    pub fn box_surface(min: Vec3, max: Vec3, spacing: f64, frame: &str) -> Self {
        let count = |lo: f64, hi: f64| (((hi - lo) / spacing).round() as usize).max(1);
        let (nx, ny, nz) = (count(min.x, max.x), count(min.y, max.y), count(min.z, max.z));
        let mut points = Vec::new();
        for i in 0..=nx {
            for j in 0..=ny {
                for k in 0..=nz {
                    let on_face = i == 0 || i == nx || j == 0 || j == ny || k == 0 || k == nz;
                    if on_face {
                        points.push(Vec3::new(
                            min.x + (max.x - min.x) * i as f64 / nx as f64,
                            min.y + (max.y - min.y) * j as f64 / ny as f64,
                            min.z + (max.z - min.z) * k as f64 / nz as f64,
                        ));
                    }
                }
            }
        }
        Self::new(points, frame)
    }
}

/// Rigid transform of every point.
pub fn transform_cloud(cloud: &PointCloud, pose: &Pose) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|p| pose.transform_point(*p)).collect(),
        frame: cloud.frame.clone(),
    }
}

type Cell = (i64, i64, i64);

/// Uniform grid hash over a borrowed point set.
pub struct GridIndex<'a> {
    points: &'a [Vec3],
    cell: f64,
    cells: FxHashMap<Cell, Vec<u32>>,
    lo: Cell,
    hi: Cell,
}

impl<'a> GridIndex<'a> {
    pub fn new(points: &'a [Vec3], cell: f64) -> Self {
        let cell = if cell.is_finite() && cell > 0.0 { cell.max(1e-9) } else { 1.0 };
        let mut cells: FxHashMap<Cell, Vec<u32>> = FxHashMap::default();
        let mut lo = (i64::MAX, i64::MAX, i64::MAX);
        let mut hi = (i64::MIN, i64::MIN, i64::MIN);
        for (i, p) in points.iter().enumerate() {
            let c = cell_of(*p, cell);
            lo = (lo.0.min(c.0), lo.1.min(c.1), lo.2.min(c.2));
            hi = (hi.0.max(c.0), hi.1.max(c.1), hi.2.max(c.2));
            cells.entry(c).or_default().push(i as u32);
        }
        Self { points, cell, cells, lo, hi }
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    /// True if some indexed point lies within `radius` of `p`.
    pub fn any_within(&self, p: Vec3, radius: f64) -> bool {
        let r2 = radius * radius;
        let lo = cell_of(p - Vec3::new(radius, radius, radius), self.cell);
        let hi = cell_of(p + Vec3::new(radius, radius, radius), self.cell);
        for x in lo.0.max(self.lo.0)..=hi.0.min(self.hi.0) {
            for y in lo.1.max(self.lo.1)..=hi.1.min(self.hi.1) {
                for z in lo.2.max(self.lo.2)..=hi.2.min(self.hi.2) {
                    if let Some(ids) = self.cells.get(&(x, y, z)) {
                        if ids.iter().any(|&i| (self.points[i as usize] - p).norm_sq() <= r2) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }

    /// Squared distance from `p` to the nearest indexed point.
    pub fn nearest_sq(&self, p: Vec3) -> f64 {
        let mut best = f64::INFINITY;
        if self.points.is_empty() {
            return best;
        }
        let c = cell_of(p, self.cell);
        let reach = [
            (c.0 - self.lo.0).abs().max((c.0 - self.hi.0).abs()),
            (c.1 - self.lo.1).abs().max((c.1 - self.hi.1).abs()),
            (c.2 - self.lo.2).abs().max((c.2 - self.hi.2).abs()),
        ]
        .into_iter()
        .max()
        .unwrap();
        let scan = |ids: &Vec<u32>, best: &mut f64| {
            for &i in ids {
                let d = (self.points[i as usize] - p).norm_sq();
                if d < *best {
                    *best = d;
                }
            }
        };
        let mut r: i64 = 0;
        while r <= reach {
            // points in ring r are at least (r - 1) cells away
            let gap = (r - 1).max(0) as f64 * self.cell;
            if best.is_finite() && gap * gap > best {
                break;
            }
            let side = 2 * r + 1;
            let ring_cells = if r == 0 { 1 } else { side.pow(3) - (side - 2).pow(3) };
            if ring_cells as usize > self.cells.len() {
                for ids in self.cells.values() {
                    scan(ids, &mut best);
                }
                break;
            }
            for dx in -r..=r {
                for dy in -r..=r {
                    let on_shell_xy = dx.abs() == r || dy.abs() == r;
                    let dzs: Vec<i64> = if on_shell_xy { (-r..=r).collect() } else { vec![-r, r] };
                    for dz in dzs {
                        if let Some(ids) = self.cells.get(&(c.0 + dx, c.1 + dy, c.2 + dz)) {
                            scan(ids, &mut best);
                        }
                    }
                }
            }
            r += 1;
        }
        best
    }
}

fn cell_of(p: Vec3, cell: f64) -> Cell {
    let f = |v: f64| (v / cell).floor() as i64;
    (f(p.x), f(p.y), f(p.z))
}

/// Median nearest-neighbour spacing over a fixed subsample of the cloud.
fn nn_spacing(points: &[Vec3]) -> f64 {
    let n = points.len();
    if n < 2 {
        return 1.0;
    }
    let stride = (n / 32).max(1);
    let mut spacings: Vec<f64> = (0..n)
        .step_by(stride)
        .map(|i| {
            points
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| (*q - points[i]).norm_sq())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .filter(|d| *d > 0.0)
        .collect();
    if spacings.is_empty() {
        return 1.0;
    }
    spacings.sort_by(f64::total_cmp);
    spacings[spacings.len() / 2]
}

/// Exact minimum cross-pair Euclidean distance.
pub fn min_distance(a: &PointCloud, b: &PointCloud) -> Result<f64, GeometryError> {
    if a.is_empty() || b.is_empty() {
        return Err(GeometryError::EmptyCloud);
    }
    let grid = GridIndex::new(&b.points, nn_spacing(&b.points));
    let best = a.points.iter().map(|p| grid.nearest_sq(*p)).fold(f64::INFINITY, f64::min);
    Ok(best.sqrt())
}

/// Number of points of `a` within `radius` (inclusive) of any point of `b`.
pub fn overlap_count(a: &PointCloud, b: &PointCloud, radius: f64) -> usize {
    if !(radius >= 0.0) || a.is_empty() || b.is_empty() {
        return 0;
    }
    let cell = if radius > 0.0 { radius } else { 1e-3 };
    let grid = GridIndex::new(&b.points, cell);
    a.points.iter().filter(|p| grid.any_within(**p, radius)).count()
}

/// Same as [`overlap_count`] but stops at the first overlapping point.
pub fn any_overlap(a: &PointCloud, grid: &GridIndex<'_>, radius: f64) -> bool {
    a.points.iter().any(|p| grid.any_within(*p, radius))
}
