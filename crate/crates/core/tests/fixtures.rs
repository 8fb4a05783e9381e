//! Shipped scenario fixtures: loading, reference solvability and collection.

use std::path::{Path, PathBuf};

use skillbench::episode::{read_episode, validate_dataset};
use skillbench::harness::{collect, run_symbolic};
use skillbench::planner::PlannerConfig;
use skillbench::scenario::{load_scenario, randomize};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name).join(format!("{name}.json"))
}

#[test]
fn references_solve_their_instances() {
    for name in ["select_fruit", "make_juice"] {
        let s = load_scenario(&fixture(name)).unwrap();
        for seed in 0..20 {
            let inst = randomize(&s, &s.template.randomization, seed).unwrap();
            let run = run_symbolic(&inst, &inst.reference);
            assert_eq!(run.score, 1.0, "{name} seed {seed}: {:?}", run.outcomes);
        }
    }
}

#[test]
fn collection_succeeds_on_both_fixtures() {
    let out = tempfile::tempdir().unwrap();
    for name in ["select_fruit", "make_juice"] {
        for seed in 0..3 {
            let c = collect(&fixture(name), seed, out.path(), &PlannerConfig::default()).unwrap();
            assert!(c.success(), "{name} seed {seed}: {:?}", c.failure);
            let rec = read_episode(&c.episode_path).unwrap();
            assert_eq!(rec.steps.len(), c.steps);
            assert_eq!(rec.steps.last().unwrap().reward, 1.0);
        }
    }
    let v = validate_dataset(&out.path().join("episodes")).unwrap();
    assert!(v.is_valid(), "{:?}", v.violations);
    assert_eq!(v.manifest.episode_count, 6);
}
