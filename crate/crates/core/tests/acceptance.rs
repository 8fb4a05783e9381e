//! Acceptance suite. Each test checks one criterion against an independent
//! oracle and prints one `[PASS]` or `[FAIL]` line to stderr, uncaptured.
//!
//! ```text
//! cargo test -p skillbench --test acceptance
//! ```

use std::collections::{BTreeMap, VecDeque};
use std::f64::consts::PI;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use skillbench::dsl::{self, Origin, ParamValue, SkillCall, SkillSequence};
use skillbench::episode::{read_episode, validate_dataset};
use skillbench::geometry::{
    any_overlap, catmull_rom_segments, min_distance, overlap_count, slerp, GridIndex, PointCloud, Pose, Quaternion, Vec3,
};
use skillbench::graph::{build_graph, max_matching, DepGraph, DependencyRule, MatchPolicy};
use skillbench::harness::{self, load_instances, run_symbolic, score_noninteractive, Prediction, ScoringOptions};
use skillbench::metrics::{
    param_recall_counts, progress_score, skill_param_recall_counts, skill_recall_counts, Equivalence, MetricWeights,
    ProgressInput, DEFAULT_ALPHA,
};
use skillbench::planner::{
    forward_kinematics, inverse_kinematics, planar_gripper_cloud, rrt_plan_with, CollisionChecker, KinematicChain,
    PlannerConfig, PlanningWorld,
};
use skillbench::scenario::{
    randomize, CloudSource, Dimension, EntityTemplate, Instruction, InstructionStyle, Predicate, RandomizationSpec,
    ReferenceSource, Scenario, ScenarioTemplate, TaskInstance,
};

fn verdict(name: &str, ok: bool, detail: &str) {
    let line = format!("[{}] {name}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(ok, "{name}: {detail}");
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

// ---------------------------------------------------------------------------
// Metric formulas

const SKILLS: [&str; 3] = ["Pick", "Place", "Open"];

/// Call `c` of the 9-letter alphabet: skill `c / 3`, parameter set `c % 3`
/// (none, `k1`, `k2`).
fn alphabet_call(c: usize) -> SkillCall {
    let call = SkillCall::new(SKILLS[c / 3], "obj");
    match c % 3 {
        0 => call,
        1 => call.with("k1", ParamValue::Scalar(1.0)),
        _ => call.with("k2", ParamValue::Text("x".into())),
    }
}

struct Counted {
    seq: SkillSequence,
    skills: [u8; 3],
    params: [u8; 2],
    calls: [u8; 9],
}

fn all_sequences(max_len: usize) -> Vec<Counted> {
    let mut words: Vec<Vec<usize>> = vec![vec![]];
    let mut frontier = words.clone();
    for _ in 0..max_len {
        let next: Vec<Vec<usize>> =
            frontier.iter().flat_map(|w| (0..9).map(move |c| w.iter().copied().chain([c]).collect())).collect();
        words.extend(next.iter().cloned());
        frontier = next;
    }
    words
        .into_iter()
        .map(|w| {
            let (mut skills, mut params, mut calls) = ([0u8; 3], [0u8; 2], [0u8; 9]);
            for &c in &w {
                skills[c / 3] += 1;
                calls[c] += 1;
                if c % 3 > 0 {
                    params[c % 3 - 1] += 1;
                }
            }
            let seq = SkillSequence::new(w.iter().map(|&c| alphabet_call(c)).collect(), Origin::Reference);
            Counted { seq, skills, params, calls }
        })
        .collect()
}

fn min_sum(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).map(|(x, y)| *x.min(y) as usize).sum()
}

#[test]
fn metric_formulas_match_multiset_oracle() {
    let t0 = Instant::now();
    let seqs = all_sequences(4);
    let eq = Equivalence::default();
    let mut pairs = 0u64;
    let mut mismatches = 0u64;
    for r in &seqs {
        let (len, n_params) = (r.seq.len(), r.params.iter().map(|&p| p as usize).sum::<usize>());
        for p in &seqs {
            pairs += 1;
            let sr = skill_recall_counts(&r.seq, &p.seq);
            let pr = param_recall_counts(&r.seq, &p.seq, &eq);
            let spr = skill_param_recall_counts(&r.seq, &p.seq, &eq);
            let ok = sr.total == len
                && sr.matched == min_sum(&r.skills, &p.skills)
                && pr.total == n_params
                && pr.matched == min_sum(&r.params, &p.params)
                && spr.total == len
                && spr.matched == min_sum(&r.calls, &p.calls);
            if !ok {
                mismatches += 1;
            }
        }
    }
    let elapsed = t0.elapsed();
    verdict(
        "metric-formula oracle",
        mismatches == 0 && elapsed < Duration::from_secs(60),
        &format!("{} sequences, {pairs} pairs, {mismatches} mismatches, {:.1} s", seqs.len(), secs(elapsed)),
    );
}

// ---------------------------------------------------------------------------
// Precise matching

const DAG_SKILLS: [&str; 7] = ["Pick", "Place", "Open", "Close", "Press", "Pour", "Insert"];
const DAG_TARGETS: [&str; 3] = ["a", "b", "c"];

fn random_call(rng: &mut ChaCha8Rng) -> SkillCall {
    let skill = *DAG_SKILLS.choose(rng).unwrap();
    let call = SkillCall::new(skill, DAG_TARGETS.choose(rng).unwrap());
    if matches!(skill, "Place" | "Insert" | "Pour") && rng.gen_bool(0.5) {
        call.with("destination", ParamValue::Text(DAG_TARGETS.choose(rng).unwrap().to_string()))
    } else {
        call
    }
}

fn random_sequence(rng: &mut ChaCha8Rng, len: usize, origin: Origin) -> SkillSequence {
    SkillSequence::new((0..len).map(|_| random_call(rng)).collect(), origin)
}

/// Reachability over all node ids (source included).
fn closure(g: &DepGraph) -> Vec<Vec<bool>> {
    let n = g.node_count();
    let mut r = vec![vec![false; n]; n];
    for &(u, v) in g.edges() {
        r[u][v] = true;
    }
    for k in 0..n {
        for i in 0..n {
            if r[i][k] {
                for j in 0..n {
                    if r[k][j] {
                        r[i][j] = true;
                    }
                }
            }
        }
    }
    r
}

/// Largest label- and dependency-consistent partial injection, by plain enumeration.
fn brute_force_matching(r: &DepGraph, p: &DepGraph, policy: MatchPolicy) -> usize {
    let eq = Equivalence::default();
    let n = r.len();
    let reach = closure(p);
    let edges: Vec<(usize, usize)> = r.edges().iter().copied().filter(|&(u, _)| u >= 1).collect();
    let cands: Vec<Vec<usize>> = (1..=n)
        .map(|i| (1..=p.len()).filter(|&q| eq.calls_equal(r.call(i).unwrap(), p.call(q).unwrap())).collect())
        .collect();

    fn consistent(assign: &[Option<usize>], edges: &[(usize, usize)], reach: &[Vec<bool>], policy: MatchPolicy) -> bool {
        edges.iter().all(|&(u, v)| match (assign[u - 1], assign[v - 1]) {
            (Some(a), Some(b)) => reach[a][b],
            (None, Some(_)) => policy == MatchPolicy::MatchedPairsOnly,
            _ => true,
        })
    }

    fn go(
        i: usize,
        assign: &mut Vec<Option<usize>>,
        used: &mut Vec<bool>,
        cands: &[Vec<usize>],
        check: &dyn Fn(&[Option<usize>]) -> bool,
    ) -> usize {
        if i == cands.len() {
            return if check(assign) { assign.iter().flatten().count() } else { 0 };
        }
        let mut best = go(i + 1, assign, used, cands, check);
        for &q in &cands[i] {
            if !used[q] {
                used[q] = true;
                assign[i] = Some(q);
                best = best.max(go(i + 1, assign, used, cands, check));
                assign[i] = None;
                used[q] = false;
            }
        }
        best
    }

    let check = |a: &[Option<usize>]| consistent(a, &edges, &reach, policy);
    go(0, &mut vec![None; n], &mut vec![false; p.node_count()], &cands, &check)
}

/// Random topological order of the non-source nodes.
fn random_linearization(g: &DepGraph, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = g.node_count();
    let mut indeg = vec![0; n];
    for &(u, v) in g.edges() {
        if u >= 1 {
            indeg[v] += 1;
        }
    }
    let mut ready: Vec<usize> = (1..n).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::new();
    while !ready.is_empty() {
        let k = rng.gen_range(0..ready.len());
        let u = ready.swap_remove(k);
        order.push(u);
        for &(a, b) in g.edges() {
            if a == u {
                indeg[b] -= 1;
                if indeg[b] == 0 {
                    ready.push(b);
                }
            }
        }
    }
    order
}

fn library_matching(r: &DepGraph, p: &DepGraph, policy: MatchPolicy) -> usize {
    max_matching(r, p, &Equivalence::default(), policy).unwrap().matched_count
}

#[test]
fn precise_matching_semantics() {
    let t0 = Instant::now();
    let rules = DependencyRule::standard_set();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let policies = [MatchPolicy::MatchedPairsOnly, MatchPolicy::RequireMatchedPredecessors];
    let (mut relinearized, mut leaf_cases, mut brute_cases, mut failures) = (0, 0, 0, Vec::new());
    for case in 0..200 {
        let n = rng.gen_range(1..=8);
        let reference = random_sequence(&mut rng, n, Origin::Reference);
        let rg = build_graph(&reference, &rules);

        let order = random_linearization(&rg, &mut rng);
        assert_eq!(order.len(), n);
        let relin = SkillSequence::new(order.iter().map(|&i| rg.call(i).unwrap().clone()).collect(), Origin::Prediction);
        let pg = build_graph(&relin, &rules);
        let mut preds = vec![pg.clone()];
        for policy in policies {
            if library_matching(&rg, &pg, policy) != n {
                failures.push(format!("case {case}: re-linearization under {policy:?}"));
            }
        }
        relinearized += 1;

        let leaves = rg.leaves();
        let k = rng.gen_range(1..=leaves.len());
        let removed: Vec<usize> = leaves.choose_multiple(&mut rng, k).copied().collect();
        let lg = rg.without_nodes(&removed);
        if library_matching(&rg, &lg, MatchPolicy::MatchedPairsOnly) != n - k {
            failures.push(format!("case {case}: deleting {k} leaves"));
        }
        preds.push(lg);
        leaf_cases += 1;

        let mut noisy: Vec<SkillCall> = reference.calls.clone();
        noisy.shuffle(&mut rng);
        noisy.truncate(rng.gen_range(0..=n));
        for _ in 0..rng.gen_range(0..=3) {
            noisy.insert(rng.gen_range(0..=noisy.len()), random_call(&mut rng));
        }
        preds.push(build_graph(&SkillSequence::new(noisy, Origin::Prediction), &rules));

        for p in &preds {
            for policy in policies {
                brute_cases += 1;
                let (lib, brute) = (library_matching(&rg, p, policy), brute_force_matching(&rg, p, policy));
                if lib != brute {
                    failures.push(format!("case {case}: {policy:?} library {lib} brute force {brute}"));
                }
            }
        }
    }
    let elapsed = t0.elapsed();
    verdict(
        "PM semantics",
        failures.is_empty() && elapsed < Duration::from_secs(120),
        &format!(
            "{relinearized} re-linearizations, {leaf_cases} leaf deletions, {brute_cases} brute-force comparisons, {} failures {:?}, {:.1} s",
            failures.len(),
            failures.iter().take(3).collect::<Vec<_>>(),
            secs(elapsed)
        ),
    );
}

#[test]
fn make_juice_dependencies() {
    let rules = DependencyRule::standard_set();
    let parse = |s: &str| {
        let mut seq = dsl::parse_program(s).unwrap();
        seq.origin = Origin::Prediction;
        seq
    };
    let inst_scn = skillbench::scenario::load_scenario(&fixtures().join("make_juice/make_juice.json")).unwrap();
    let reference = inst_scn.reference.clone();
    let rg = build_graph(&reference, &rules);
    let open_first = rg.edges().contains(&(1, 2)) && rg.edges().contains(&(1, 3));
    let unordered_fruit = !rg.edges().contains(&(2, 3)) && !rg.edges().contains(&(3, 2));

    let swapped = build_graph(
        &parse(r#"Open("juicer") Place("orange", {"destination": "juicer"}) Place("apple", {"destination": "juicer"})"#),
        &rules,
    );
    let omitted = build_graph(
        &parse(r#"Place("apple", {"destination": "juicer"}) Place("orange", {"destination": "juicer"})"#),
        &rules,
    );
    let pm = |p: &DepGraph| library_matching(&rg, p, MatchPolicy::MatchedPairsOnly) as f64 / rg.len() as f64;
    let brute = |p: &DepGraph| brute_force_matching(&rg, p, MatchPolicy::MatchedPairsOnly) as f64 / rg.len() as f64;
    let (pm_swapped, pm_omitted) = (pm(&swapped), pm(&omitted));
    let ok = open_first
        && unordered_fruit
        && pm_swapped == 1.0
        && pm_omitted == 2.0 / 3.0
        && brute(&swapped) == pm_swapped
        && brute(&omitted) == pm_omitted;
    verdict(
        "Make-Juice dependencies",
        ok,
        &format!(
            "open precedes both fruit: {open_first}, fruit unordered: {unordered_fruit}, swapped PM {pm_swapped}, open-omitted PM {pm_omitted:.6}"
        ),
    );
}

// ---------------------------------------------------------------------------
// Progress score

#[test]
fn progress_score_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n_total = rng.gen_range(1..=50);
        let m_total = rng.gen_range(1..=50);
        let input = ProgressInput {
            n_total,
            n_correct: rng.gen_range(0..=n_total),
            m_total,
            m_done: rng.gen_range(0..=m_total),
            alpha: rng.gen_range(0.0..=1.0),
        };
        let direct = input.alpha * input.n_correct as f64 / n_total as f64
            + (1.0 - input.alpha) * input.m_done as f64 / m_total as f64;
        worst = worst.max((progress_score(&input).unwrap() - direct).abs());
    }
    let parsed: ProgressInput = serde_json::from_str(r#"{"n_total": 4, "n_correct": 1, "m_total": 5, "m_done": 2}"#).unwrap();
    let default_alpha = DEFAULT_ALPHA == 0.2 && ProgressInput::new(1, 0, 1, 0).alpha == 0.2 && parsed.alpha == 0.2;
    let default_value = (progress_score(&parsed).unwrap() - (0.2 * 0.25 + 0.8 * 0.4)).abs() <= 1e-12;

    let scn = skillbench::scenario::load_scenario(&fixtures().join("make_juice/make_juice.json")).unwrap();
    let inst = randomize(&scn, &scn.template.randomization, 3).unwrap();
    let complete = run_symbolic(&inst, &inst.reference).score;
    let empty = run_symbolic(&inst, &SkillSequence::default()).score;
    let ends = (0..100).all(|_| {
        let (n, m) = (rng.gen_range(1..=20), rng.gen_range(1..=20));
        let alpha = rng.gen_range(0.0..=1.0);
        let full = ProgressInput { n_total: n, n_correct: n, m_total: m, m_done: m, alpha };
        let none = ProgressInput { n_total: n, n_correct: 0, m_total: m, m_done: 0, alpha };
        (progress_score(&full).unwrap() - 1.0).abs() <= 1e-12 && progress_score(&none).unwrap() == 0.0
    });
    verdict(
        "Progress Score",
        worst <= 1e-12 && default_alpha && default_value && ends && complete == 1.0 && empty == 0.0,
        &format!(
            "max deviation {worst:e} over 1000 inputs, default alpha honored: {}, completion {complete}, empty {empty}",
            default_alpha && default_value
        ),
    );
}

// ---------------------------------------------------------------------------
// Geometry

fn random_unit_quaternion(rng: &mut ChaCha8Rng) -> Quaternion {
    let axis = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).normalized();
    Quaternion::from_axis_angle(axis, rng.gen_range(0.0..2.0 * PI))
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, offset: Vec3) -> PointCloud {
    let pts = (0..n).map(|_| offset + Vec3::new(rng.gen(), rng.gen(), rng.gen()) * 0.5).collect();
    PointCloud::new(pts, "world")
}

#[test]
fn geometry_primitives() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);

    let mut slerp_err = 0.0f64;
    for _ in 0..100 {
        let (a, b) = (random_unit_quaternion(&mut rng), random_unit_quaternion(&mut rng));
        let total = a.angle_to(&b);
        let samples: Vec<Quaternion> = (0..=20).map(|k| slerp(&a, &b, k as f64 / 20.0)).collect();
        for (k, q) in samples.iter().enumerate() {
            let t = k as f64 / 20.0;
            slerp_err = slerp_err.max((a.angle_to(q) - t * total).abs()).max((q.norm() - 1.0).abs());
        }
        for w in samples.windows(2) {
            slerp_err = slerp_err.max((w[0].angle_to(&w[1]) - total / 20.0).abs());
        }
    }

    let (mut end_err, mut c1_err) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = rng.gen_range(2..=10);
        let pts: Vec<Vec3> =
            (0..n).map(|_| Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0))).collect();
        let segs = catmull_rom_segments(&pts);
        for (i, s) in segs.iter().enumerate() {
            end_err = end_err.max(s.eval(0.0).distance(pts[i])).max(s.eval(1.0).distance(pts[i + 1]));
        }
        for w in segs.windows(2) {
            c1_err = c1_err.max(w[0].derivative(1.0).distance(w[1].derivative(0.0)));
        }
    }

    let mut prox_failures = 0;
    for case in 0..100 {
        let (na, nb, shift) = (rng.gen_range(20..300), rng.gen_range(20..300), rng.gen_range(0.0..0.6));
        let a = random_points(&mut rng, na, Vec3::ZERO);
        let b = random_points(&mut rng, nb, Vec3::new(shift, 0.0, 0.0));
        let radius = rng.gen_range(0.005..0.15);
        let brute_min = a
            .points
            .iter()
            .flat_map(|p| b.points.iter().map(move |q| p.distance(*q)))
            .fold(f64::INFINITY, f64::min);
        let brute_count = a.points.iter().filter(|p| b.points.iter().any(|q| p.distance(*q) <= radius)).count();
        let grid = GridIndex::new(&b.points, radius);
        let nearest_ok = a.points.iter().all(|p| {
            let brute = b.points.iter().map(|q| (*p - *q).norm_sq()).fold(f64::INFINITY, f64::min);
            (grid.nearest_sq(*p) - brute).abs() <= 1e-12
        });
        let ok = (min_distance(&a, &b).unwrap() - brute_min).abs() <= 1e-12
            && overlap_count(&a, &b, radius) == brute_count
            && any_overlap(&a, &grid, radius) == (brute_count > 0)
            && nearest_ok;
        if !ok {
            prox_failures += 1;
            eprintln!("proximity mismatch in case {case}");
        }
    }

    verdict(
        "geometry",
        slerp_err <= 1e-6 && end_err <= 1e-9 && c1_err <= 1e-6 && prox_failures == 0,
        &format!(
            "SLERP velocity error {slerp_err:e}, Bezier endpoint error {end_err:e}, C1 error {c1_err:e}, {prox_failures}/100 proximity mismatches"
        ),
    );
}

// ---------------------------------------------------------------------------
// Planner

const LINKS: [f64; 3] = [0.5, 0.4, 0.3];

/// Tool pose of the planar chain, computed independently of the library.
fn planar_tool(q: &[f64]) -> (Vec3, f64) {
    let (mut x, mut y, mut phi) = (0.0, 0.0, 0.0);
    for (l, a) in LINKS.iter().zip(q) {
        phi += a;
        x += l * phi.cos();
        y += l * phi.sin();
    }
    (Vec3::new(x, y, 0.0), phi)
}

struct Validator<'a> {
    grid: GridIndex<'a>,
    tool: Vec<Vec3>,
    clearance: f64,
}

impl Validator<'_> {
    fn free(&self, q: &[f64]) -> bool {
        let (p, phi) = planar_tool(q);
        let (c, s) = (phi.cos(), phi.sin());
        !self.tool.iter().any(|t| self.grid.any_within(p + Vec3::new(c * t.x - s * t.y, s * t.x + c * t.y, t.z), self.clearance))
    }

    /// Checks `samples` evenly spaced configurations per edge, endpoints included.
    fn path_free(&self, path: &[Vec<f64>], samples: impl Fn(&[f64], &[f64]) -> usize) -> bool {
        path.windows(2).all(|w| {
            let n = samples(&w[0], &w[1]).max(1);
            (0..=n).all(|k| {
                let t = k as f64 / n as f64;
                let q: Vec<f64> = w[0].iter().zip(&w[1]).map(|(a, b)| a + (b - a) * t).collect();
                self.free(&q)
            })
        })
    }
}

fn filled_rect(min: [f64; 2], max: [f64; 2]) -> Vec<Vec3> {
    let (nx, ny) = (((max[0] - min[0]) / 0.01).round() as usize, ((max[1] - min[1]) / 0.01).round() as usize);
    let mut pts = Vec::new();
    for i in 0..=nx {
        for j in 0..=ny {
            pts.push(Vec3::new(min[0] + 0.01 * i as f64, min[1] + 0.01 * j as f64, 0.0));
        }
    }
    pts
}

struct PlanWorld {
    name: &'static str,
    obstacles: Vec<Vec3>,
    start: Vec<f64>,
    goal: Vec<f64>,
    feasible: bool,
    max_iterations: usize,
}

fn planner_worlds() -> Vec<PlanWorld> {
    let cage_goal = vec![0.3, 0.4, -0.5];
    let (center, _) = planar_tool(&cage_goal);
    let cage = (0..400)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / 400.0;
            center + Vec3::new(0.12 * a.cos(), 0.12 * a.sin(), 0.0)
        })
        .collect();
    vec![
        PlanWorld {
            name: "pillar",
            obstacles: filled_rect([0.75, 0.75], [0.95, 0.95]),
            start: vec![0.0, 0.0, 0.0],
            goal: vec![PI / 2.0, 0.0, 0.0],
            feasible: true,
            max_iterations: 20_000,
        },
        PlanWorld {
            name: "wall",
            obstacles: filled_rect([0.6, -0.2], [0.62, 1.3]),
            start: vec![0.0, 0.0, 0.0],
            goal: vec![PI / 2.0 + 0.3, 0.0, 0.0],
            feasible: true,
            max_iterations: 20_000,
        },
        PlanWorld {
            name: "cage",
            obstacles: cage,
            start: vec![-1.0, 0.0, 0.0],
            goal: cage_goal,
            feasible: false,
            max_iterations: 2_000,
        },
    ]
}

/// Breadth-first search over a joint grid with densely checked edges; a
/// witness that the world has a collision-free corridor.
fn grid_witness(v: &Validator, start: &[f64], goal: &[f64], steps: usize) -> Option<Vec<Vec<f64>>> {
    let h = 2.0 * PI / steps as f64;
    let to_q = |c: [usize; 3]| -> Vec<f64> { c.iter().map(|&i| -PI + h * i as f64).collect() };
    let snap = |q: &[f64]| -> [usize; 3] { [0, 1, 2].map(|i| ((q[i] + PI) / h).round() as usize) };
    let edge_samples = |a: &[f64], b: &[f64]| {
        let sweep: f64 = a.iter().zip(b).enumerate().map(|(i, (x, y))| (x - y).abs() * (LINKS[i..].iter().sum::<f64>() + 0.04)).sum();
        (sweep / 0.001).ceil() as usize
    };
    let (s, g) = (snap(start), snap(goal));
    let mut prev: BTreeMap<[usize; 3], [usize; 3]> = BTreeMap::new();
    let mut queue = VecDeque::from([s]);
    prev.insert(s, s);
    while let Some(c) = queue.pop_front() {
        if c == g {
            let mut cells = vec![g];
            while *cells.last().unwrap() != s {
                cells.push(prev[cells.last().unwrap()]);
            }
            let mut path = vec![start.to_vec()];
            path.extend(cells.iter().rev().map(|&c| to_q(c)));
            path.push(goal.to_vec());
            return v.path_free(&path, edge_samples).then_some(path);
        }
        for axis in 0..3 {
            for up in [false, true] {
                let mut n = c;
                if up {
                    if n[axis] == steps {
                        continue;
                    }
                    n[axis] += 1;
                } else {
                    if n[axis] == 0 {
                        continue;
                    }
                    n[axis] -= 1;
                }
                if prev.contains_key(&n) {
                    continue;
                }
                let (a, b) = (to_q(c), to_q(n));
                if v.free(&b) && v.path_free(&[a, b], edge_samples) {
                    prev.insert(n, c);
                    queue.push_back(n);
                }
            }
        }
    }
    None
}

fn ik_with_restarts(chain: &KinematicChain, target: &Pose, rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
    let mut seed = KinematicChain::panda_ready();
    for _ in 0..16 {
        if let Ok(q) = inverse_kinematics(chain, target, &seed) {
            return Some(q);
        }
        seed = chain.random_config(rng);
    }
    None
}

#[test]
fn planner_collision_free_and_deterministic() {
    let t0 = Instant::now();
    let chain = KinematicChain::planar(&LINKS, PI).unwrap();
    let tool = planar_gripper_cloud();
    let mut lines = Vec::new();
    let mut ok = true;
    for w in planner_worlds() {
        let tw = Instant::now();
        let world = PlanningWorld::new(PointCloud::new(w.obstacles.clone(), "world"), tool.clone());
        let cfg = PlannerConfig { max_iterations: w.max_iterations, ..PlannerConfig::default() };
        let checker = CollisionChecker::new(&chain, &world, cfg.sweep_resolution);
        let validator = Validator { grid: GridIndex::new(&w.obstacles, world.clearance_radius), tool: tool.points.clone(), clearance: world.clearance_radius };
        let witness = if w.feasible { grid_witness(&validator, &w.start, &w.goal, 48).is_some() } else { false };
        let witness_time = tw.elapsed();
        let (mut plan_time, mut check_time) = (Duration::ZERO, Duration::ZERO);
        let (mut success, mut collisions, mut nondeterministic) = (0, 0, 0);
        for seed in 0..100 {
            let tp = Instant::now();
            let first = rrt_plan_with(&world, &chain, &w.start, &w.goal, seed, &cfg);
            let second = rrt_plan_with(&world, &chain, &w.start, &w.goal, seed, &cfg);
            plan_time += tp.elapsed();
            let tc = Instant::now();
            let same = match (&first, &second) {
                (Ok(a), Ok(b)) => {
                    a.len() == b.len()
                        && a.iter().flatten().zip(b.iter().flatten()).all(|(x, y)| x.to_bits() == y.to_bits())
                }
                (Err(a), Err(b)) => a.to_string() == b.to_string(),
                _ => false,
            };
            if !same {
                nondeterministic += 1;
            }
            if let Ok(path) = first {
                let ends = path.first() == Some(&w.start) && path.last() == Some(&w.goal);
                if ends && validator.path_free(&path, |a, b| 10 * checker.edge_samples(a, b)) {
                    success += 1;
                } else {
                    collisions += 1;
                }
            }
            check_time += tc.elapsed();
        }
        let world_ok = collisions == 0
            && nondeterministic == 0
            && if w.feasible { witness && success >= 95 } else { success == 0 };
        ok &= world_ok;
        lines.push(format!(
            "{} ({}): {success}/100 solved, {collisions} collisions, {nondeterministic} nondeterministic [{:.1}+{:.1}+{:.1} s]",
            w.name,
            if w.feasible { if witness { "corridor witnessed" } else { "no corridor witness" } } else { "enclosed goal" },
            secs(witness_time),
            secs(plan_time),
            secs(check_time)
        ));
    }

    let tik = Instant::now();
    let panda = KinematicChain::panda();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut ik_ok, mut worst_p, mut worst_r) = (0, 0.0f64, 0.0f64);
    for _ in 0..500 {
        let target = forward_kinematics(&panda, &panda.random_config(&mut rng)).unwrap();
        if let Some(q) = ik_with_restarts(&panda, &target, &mut rng) {
            let reached = forward_kinematics(&panda, &q).unwrap();
            let (pe, re) = (reached.position.distance(target.position), reached.orientation.angle_to(&target.orientation));
            worst_p = worst_p.max(pe);
            worst_r = worst_r.max(re);
            if pe <= 1e-3 && re <= 1e-2 {
                ik_ok += 1;
            }
        }
    }
    ok &= ik_ok == 500;
    let elapsed = t0.elapsed();
    ok &= elapsed < Duration::from_secs(300);
    lines.push(format!("IK {ik_ok}/500 within tolerance, worst residual {worst_p:.2e} m / {worst_r:.2e} rad [{:.1} s]", secs(tik.elapsed())));
    verdict("planner", ok, &format!("{}; {:.1} s", lines.join("; "), secs(elapsed)));
}

// ---------------------------------------------------------------------------
// Randomization law

fn single_entity_scenario() -> Scenario {
    let cube = PointCloud::box_surface(Vec3::new(-0.02, -0.02, 0.0), Vec3::new(0.02, 0.02, 0.04), 0.01, "local");
    let entity = EntityTemplate {
        entity_id: "cube".into(),
        category: "cube".into(),
        position: Vec3::new(0.5, 0.0, 0.02),
        yaw: 0.0,
        grasp_points: vec![Pose::new(Vec3::new(0.0, 0.0, 0.02), Quaternion::new(0.0, 1.0, 0.0, 0.0))],
        place_point: None,
        bounding_box: None,
        cloud: CloudSource::Inline { points: cube.points },
        scale: 1.0,
        receptacle: false,
        graspable: None,
        articulated: false,
        initially_open: false,
        grid: false,
        fixed: false,
    };
    let template = ScenarioTemplate {
        task_id: "lift_cube".into(),
        dimension: Dimension::Physical,
        entities: vec![entity],
        distractor_pool: vec![],
        targets: vec!["cube".into()],
        receptacles: vec![],
        n_total: Some(1),
        substeps: vec![Predicate::Held { entity: "cube".into() }],
        reference: ReferenceSource::Inline("Pick(\"cube\")".into()),
        instructions: vec![Instruction { text: "Pick up the cube.".into(), style: InstructionStyle::Direct }],
        randomization: RandomizationSpec { distractors: [0, 0], ..RandomizationSpec::default() },
        static_obstacles: None,
    };
    Scenario::from_template(template, Path::new(".")).unwrap()
}

#[test]
fn randomization_law() {
    let scn = single_entity_scenario();
    let spec = &scn.template.randomization;
    const N: usize = 10_000;
    let mut draws: [Vec<f64>; 4] = Default::default();
    for seed in 0..N as u64 {
        let inst = randomize(&scn, spec, seed).unwrap();
        let p = inst.entity("cube").unwrap().perturbation;
        for (d, v) in draws.iter_mut().zip([p.dx, p.dy, p.yaw, p.scale]) {
            d.push(v);
        }
    }
    let ranges = [("dx", [-0.05, 0.05]), ("dy", [-0.05, 0.05]), ("yaw", [-PI / 10.0, PI / 10.0]), ("scale", [0.95, 1.05])];
    let mut ok = true;
    let mut parts = Vec::new();
    for ((name, [lo, hi]), d) in ranges.iter().zip(&draws) {
        let inside = d.iter().all(|v| (*lo..=*hi).contains(v));
        let mean = d.iter().sum::<f64>() / N as f64;
        let se = (hi - lo) / 12f64.sqrt() / (N as f64).sqrt();
        let z = (mean - (lo + hi) / 2.0) / se;
        ok &= inside && z.abs() <= 3.0;
        parts.push(format!("{name} inside={inside} z={z:+.2}"));
    }
    verdict("randomization law", ok, &format!("{N} seeds: {}", parts.join(", ")));
}

// ---------------------------------------------------------------------------
// End to end

#[test]
fn end_to_end_select_fruit() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let scenario = fixtures().join("select_fruit/select_fruit.json");
    let collected = harness::collect(&scenario, 7, out, &PlannerConfig::default()).unwrap();
    let record = read_episode(&collected.episode_path).unwrap();
    let episode_valid = record.validate().is_ok() && validate_dataset(&out.join("episodes")).unwrap().is_valid();

    let instance = TaskInstance::read(&collected.instance_path).unwrap();
    let reference_text = std::fs::read_to_string(fixtures().join("select_fruit/select_fruit.skill")).unwrap();
    let reference = dsl::parse_program(&reference_text).unwrap();
    let ps = run_symbolic(&instance, &reference).score;

    let instances = load_instances(&out.join("instances")).unwrap();
    let predictions = vec![Prediction { instance_id: instance.instance_id.clone(), output: reference_text }];
    let report =
        score_noninteractive(&instances, &predictions, &MetricWeights::default(), &ScoringOptions::default()).unwrap();
    let overall = report.overall.as_ref().map_or(f64::NAN, |o| o.total);
    let elapsed = t0.elapsed();
    verdict(
        "end-to-end pipeline",
        collected.success() && episode_valid && ps == 1.0 && overall == 1.0 && elapsed < Duration::from_secs(60),
        &format!(
            "{} steps, episode valid: {episode_valid}, replay PS {ps}, overall {overall}, {:.1} s",
            record.steps.len(),
            secs(elapsed)
        ),
    );
}

// ---------------------------------------------------------------------------
// Parser robustness

const TOKENS: [&str; 28] = [
    "Pick", "Place", "Open", "Hang", "(", ")", "\"", "'", "{", "}", "[", "]", ":", ",", " ", "\n", "pi", "-", "1.5", "e309",
    "apple", "\\", "orientation", "```", "NaN", "0x", "\u{00e9}", "Pick(\"a\", {\"k\": [1, 2, 3]})",
];

fn fuzz_input(rng: &mut ChaCha8Rng) -> String {
    if rng.gen_bool(0.5) {
        let bytes: Vec<u8> = (0..rng.gen_range(0..64)).map(|_| rng.gen()).collect();
        String::from_utf8_lossy(&bytes).into_owned()
    } else {
        (0..rng.gen_range(0..24)).map(|_| *TOKENS.choose(rng).unwrap()).collect()
    }
}

#[test]
fn parser_fuzz() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xf022);
    let (mut crashes, mut nondeterministic, mut parsed) = (0, 0, 0);
    for _ in 0..1_000_000 {
        let input = fuzz_input(&mut rng);
        let run = || {
            let p = dsl::parse_program(&input);
            let e = dsl::extract_from_noisy(&input);
            (format!("{p:?}"), format!("{e:?}"), p.is_ok())
        };
        match (catch_unwind(AssertUnwindSafe(run)), catch_unwind(AssertUnwindSafe(run))) {
            (Ok(a), Ok(b)) => {
                if a != b {
                    nondeterministic += 1;
                }
                if a.2 {
                    parsed += 1;
                }
            }
            _ => crashes += 1,
        }
    }
    verdict(
        "parser robustness",
        crashes == 0 && nondeterministic == 0,
        &format!("10^6 inputs, {parsed} parsed, {crashes} crashes, {nondeterministic} nondeterministic, {:.1} s", secs(t0.elapsed())),
    );
}
