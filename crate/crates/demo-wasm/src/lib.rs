//! WebAssembly bindings for the browser demo. Every export takes and returns
//! JSON strings; failures come back as `{"ok": false, "error": "..."}`.

use serde::Deserialize;
use serde_json::{json, Value};
use skillbench::dsl;
use skillbench::geometry::{smooth_path, PointCloud, Pose, Quaternion, Vec3};
use skillbench::graph::{build_graph, DependencyRule, MatchPolicy};
use skillbench::metrics::{score_sequences, Equivalence, MetricWeights};
use skillbench::planner::{forward_kinematics, planar_gripper_cloud, rrt_plan, KinematicChain, PlanningWorld};
use wasm_bindgen::prelude::wasm_bindgen;

/// Link lengths of the demo arm, meters.
pub const LINKS: [f64; 2] = [0.5, 0.4];
const JOINT_LIMIT: f64 = 3.0;
const OBSTACLE_SPACING: f64 = 0.01;

fn failure(e: impl std::fmt::Display) -> String {
    json!({ "ok": false, "error": e.to_string() }).to_string()
}

fn respond(r: Result<Value, String>) -> String {
    match r {
        Ok(mut v) => {
            v["ok"] = json!(true);
            v.to_string()
        }
        Err(e) => failure(e),
    }
}

#[derive(Deserialize)]
struct Rect {
    min: [f64; 2],
    max: [f64; 2],
}

#[derive(Deserialize)]
struct PlanRequest {
    obstacles: Vec<Rect>,
    start: [f64; 2],
    goal: [f64; 2],
    #[serde(default)]
    seed: u64,
}

fn rect_cloud(rects: &[Rect]) -> PointCloud {
    let mut points = Vec::new();
    for r in rects {
        let (x0, x1) = (r.min[0].min(r.max[0]), r.min[0].max(r.max[0]));
        let (y0, y1) = (r.min[1].min(r.max[1]), r.min[1].max(r.max[1]));
        let nx = ((x1 - x0) / OBSTACLE_SPACING).ceil().max(1.0) as usize;
        let ny = ((y1 - y0) / OBSTACLE_SPACING).ceil().max(1.0) as usize;
        for i in 0..=nx {
            for j in 0..=ny {
                points.push(Vec3::new(x0 + (x1 - x0) * i as f64 / nx as f64, y0 + (y1 - y0) * j as f64 / ny as f64, 0.0));
            }
        }
    }
    PointCloud::new(points, "world")
}

/// Both elbow solutions of the two-link arm reaching `(x, y)`, elbow-down first.
pub fn two_link_ik(x: f64, y: f64) -> Vec<[f64; 2]> {
    let [l1, l2] = LINKS;
    let c2 = (x * x + y * y - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
    if !(-1.0..=1.0).contains(&c2) {
        return vec![];
    }
    [1.0, -1.0]
        .iter()
        .map(|s| {
            let q2 = s * c2.acos();
            let q1 = y.atan2(x) - (l2 * q2.sin()).atan2(l1 + l2 * q2.cos());
            [q1, q2]
        })
        .collect()
}

fn demo_chain() -> KinematicChain {
    KinematicChain::planar(&LINKS, JOINT_LIMIT).expect("demo chain is valid")
}

fn arm_points(chain: &KinematicChain, q: &[f64]) -> Result<[[f64; 2]; 2], String> {
    let tool = forward_kinematics(chain, q).map_err(|e| e.to_string())?.position;
    let elbow = Vec3::new(LINKS[0] * q[0].cos(), LINKS[0] * q[0].sin(), 0.0);
    Ok([[elbow.x, elbow.y], [tool.x, tool.y]])
}

fn plan(req: PlanRequest) -> Result<Value, String> {
    let chain = demo_chain();
    let world = PlanningWorld::new(rect_cloud(&req.obstacles), planar_gripper_cloud());
    let starts = two_link_ik(req.start[0], req.start[1]);
    let goals = two_link_ik(req.goal[0], req.goal[1]);
    if starts.is_empty() || goals.is_empty() {
        return Err("start or goal is out of reach".into());
    }
    let mut last_err = String::new();
    for s in &starts {
        for g in &goals {
            match rrt_plan(&world, &chain, s, g, req.seed) {
                Ok(path) => {
                    let arm: Vec<[[f64; 2]; 2]> = path.iter().map(|q| arm_points(&chain, q)).collect::<Result<_, _>>()?;
                    return Ok(json!({ "joints": path, "arm": arm }));
                }
                Err(e) => last_err = e.to_string(),
            }
        }
    }
    Err(last_err)
}

/// Plans a collision-free motion of the demo arm between two tool positions.
///
/// Request: `{"obstacles": [{"min": [x, y], "max": [x, y]}], "start": [x, y], "goal": [x, y], "seed": n}`.
/// Response: `{"ok": true, "joints": [[q1, q2], ...], "arm": [[[ex, ey], [tx, ty]], ...]}`.
#[wasm_bindgen]
pub fn plan_planar(request: &str) -> String {
    match serde_json::from_str::<PlanRequest>(request) {
        Ok(req) => respond(plan(req)),
        Err(e) => failure(e),
    }
}

#[derive(Deserialize)]
struct SmoothRequest {
    points: Vec<[f64; 2]>,
    #[serde(default = "default_samples")]
    samples: usize,
}

fn default_samples() -> usize {
    12
}

/// Catmull-Rom Bezier smoothing of 2-D waypoints. Each waypoint's heading
/// points at the next one; headings between waypoints are SLERPed.
///
/// Request: `{"points": [[x, y], ...], "samples": n}`.
/// Response: `{"ok": true, "path": [[x, y, heading], ...]}`.
#[wasm_bindgen]
pub fn smooth_waypoints(request: &str) -> String {
    let req: SmoothRequest = match serde_json::from_str(request) {
        Ok(r) => r,
        Err(e) => return failure(e),
    };
    let n = req.points.len();
    let poses: Vec<Pose> = (0..n)
        .map(|i| {
            let (a, b) = if i + 1 < n { (i, i + 1) } else { (i.saturating_sub(1), i) };
            let heading = (req.points[b][1] - req.points[a][1]).atan2(req.points[b][0] - req.points[a][0]);
            Pose::new(Vec3::new(req.points[i][0], req.points[i][1], 0.0), Quaternion::rot_z(heading))
        })
        .collect();
    respond(smooth_path(&poses, req.samples).map_err(|e| e.to_string()).map(|path| {
        let rows: Vec<[f64; 3]> = path
            .iter()
            .map(|p| {
                let v = p.orientation.rotate(Vec3::X);
                [p.position.x, p.position.y, v.y.atan2(v.x)]
            })
            .collect();
        json!({ "path": rows })
    }))
}

/// Scores a predicted skill program against a reference.
///
/// `prediction` may contain surrounding prose; calls are recovered from it.
/// `weights` is `w1,w2,w3,w4` or empty for equal weights. The response
/// carries the metric report, both dependency-graph dumps, and extraction
/// diagnostics.
#[wasm_bindgen]
pub fn score_program(reference: &str, prediction: &str, weights: &str) -> String {
    respond(score(reference, prediction, weights))
}

fn score(reference: &str, prediction: &str, weights: &str) -> Result<Value, String> {
    let weights: MetricWeights = if weights.trim().is_empty() { MetricWeights::default() } else { weights.parse().map_err(|e| format!("{e}"))? };
    let reference = dsl::parse_program(reference).map_err(|e| format!("reference: {e}"))?;
    let extraction = dsl::extract_from_noisy(prediction);
    let rules = DependencyRule::standard_set();
    let (rg, pg) = (build_graph(&reference, &rules), build_graph(&extraction.sequence, &rules));
    let report = score_sequences(&reference, &rg, &extraction.sequence, &pg, &weights, &Equivalence::default(), MatchPolicy::default())
        .map_err(|e| e.to_string())?;
    Ok(json!({
        "report": report,
        "reference_graph": rg.dump(),
        "prediction_graph": pg.dump(),
        "extracted": dsl::canonical_string(&extraction.sequence),
        "diagnostics": extraction.diagnostics,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn ik_reaches_the_point() {
        let chain = demo_chain();
        for q in two_link_ik(0.3, 0.5) {
            let p = forward_kinematics(&chain, &q).unwrap().position;
            assert!((p.x - 0.3).abs() < 1e-12 && (p.y - 0.5).abs() < 1e-12);
        }
        assert!(two_link_ik(1.0, 0.0).is_empty());
    }

    #[test]
    fn plans_around_a_wall() {
        let req = r#"{"obstacles": [{"min": [0.35, -0.05], "max": [0.45, 0.3]}], "start": [0.6, 0.4], "goal": [0.6, -0.3], "seed": 3}"#;
        let v = parse(&plan_planar(req));
        assert_eq!(v["ok"], true, "{v}");
        let arm = v["arm"].as_array().unwrap();
        let last = &arm[arm.len() - 1][1];
        assert!((last[0].as_f64().unwrap() - 0.6).abs() < 1e-9);
        assert_eq!(plan_planar(req), plan_planar(req));
        assert_eq!(parse(&plan_planar("{}"))["ok"], false);
    }

    #[test]
    fn smoothing_keeps_waypoints() {
        let v = parse(&smooth_waypoints(r#"{"points": [[0, 0], [1, 0], [1, 1]], "samples": 5}"#));
        let path = v["path"].as_array().unwrap();
        assert_eq!(path.len(), 9);
        assert_eq!(path[4][0], 1.0);
        assert_eq!(parse(&smooth_waypoints(r#"{"points": [[0, 0]]}"#))["ok"], false);
    }

    #[test]
    fn scoring_identity_and_errors() {
        let r = r#"Open("juicer") Place("apple", {"destination": "juicer"})"#;
        let v = parse(&score_program(r, &format!("Here you go: {r}"), ""));
        assert_eq!(v["report"]["total"], 1.0);
        assert_eq!(parse(&score_program("Pick(", r, ""))["ok"], false);
        assert_eq!(parse(&score_program(r, r, "1,2"))["ok"], false);
    }
}
