//! Regenerates the shipped scenario fixtures.
//!
//! ```text
//! cargo run -p skillbench --example gen_fixtures -- fixtures
//! ```

use std::fs;
use std::path::Path;

use skillbench::geometry::{PointCloud, Pose, Quaternion, Vec3};
use skillbench::scenario::{
    CloudSource, Dimension, EntityTemplate, Instruction, InstructionStyle, Predicate, RandomizationSpec, ReferenceSource,
    ScenarioTemplate,
};

const SPACING: f64 = 0.01;

fn down() -> Quaternion {
    Quaternion::new(0.0, 1.0, 0.0, 0.0)
}

fn corners(min: Vec3, max: Vec3) -> [Vec3; 8] {
    let mut out = [Vec3::ZERO; 8];
    for (i, c) in out.iter_mut().enumerate() {
        *c = Vec3::new(
            if i & 1 == 0 { min.x } else { max.x },
            if i & 2 == 0 { min.y } else { max.y },
            if i & 4 == 0 { min.z } else { max.z },
        );
    }
    out
}

/// Closed box of half-width `r` and height `h`, base at the local origin.
fn solid(r: f64, h: f64) -> PointCloud {
    PointCloud::box_surface(Vec3::new(-r, -r, 0.0), Vec3::new(r, r, h), SPACING, "local")
}

/// Box without its top face.
fn open_box(r: f64, h: f64) -> PointCloud {
    let mut c = solid(r, h);
    c.points.retain(|p| p.z < h - 1e-9);
    c
}

fn table() -> PointCloud {
    let mut pts = Vec::new();
    for i in 0..=30 {
        for j in 0..=50 {
            pts.push(Vec3::new(0.25 + 0.02 * i as f64, -0.45 + 0.02 * j as f64, 0.0));
        }
    }
    PointCloud::new(pts, "world")
}

fn fruit(id: &str, x: f64, y: f64) -> EntityTemplate {
    EntityTemplate {
        entity_id: id.into(),
        category: id.into(),
        position: Vec3::new(x, y, 0.02),
        yaw: 0.0,
        grasp_points: vec![Pose::new(Vec3::new(0.0, 0.0, 0.03), down())],
        place_point: None,
        bounding_box: Some(corners(Vec3::new(-0.03, -0.03, 0.0), Vec3::new(0.03, 0.03, 0.06))),
        cloud: CloudSource::File(format!("clouds/{id}.pclb")),
        scale: 1.0,
        receptacle: false,
        graspable: None,
        articulated: false,
        initially_open: false,
        grid: false,
        fixed: false,
    }
}

fn write(dir: &Path, name: &str, t: &ScenarioTemplate, reference: &str, clouds: &[(&str, PointCloud)]) {
    fs::create_dir_all(dir.join("clouds")).unwrap();
    for (id, c) in clouds {
        c.write(&dir.join(format!("clouds/{id}.pclb"))).unwrap();
    }
    fs::write(dir.join(format!("{name}.skill")), reference).unwrap();
    fs::write(dir.join(format!("{name}.json")), serde_json::to_string_pretty(t).unwrap() + "\n").unwrap();
}

fn select_fruit(root: &Path) {
    let basket = EntityTemplate {
        entity_id: "basket".into(),
        category: "basket".into(),
        position: Vec3::new(0.6, 0.4, 0.0),
        grasp_points: vec![],
        place_point: Some(Pose::new(Vec3::new(0.0, 0.0, 0.15), down())),
        bounding_box: Some(corners(Vec3::new(-0.1, -0.1, 0.0), Vec3::new(0.1, 0.1, 0.12))),
        cloud: CloudSource::File("clouds/basket.pclb".into()),
        receptacle: true,
        fixed: true,
        ..fruit("basket", 0.0, 0.0)
    };
    let t = ScenarioTemplate {
        task_id: "select_fruit".into(),
        dimension: Dimension::Semantic,
        entities: vec![fruit("apple", 0.45, -0.1), fruit("banana", 0.45, 0.15), basket],
        distractor_pool: vec![fruit("orange", 0.3, -0.35), fruit("pear", 0.65, -0.3)],
        targets: vec!["apple".into()],
        receptacles: vec!["basket".into()],
        n_total: None,
        substeps: vec![
            Predicate::Held { entity: "apple".into() },
            Predicate::Inside { entity: "apple".into(), container: "basket".into() },
        ],
        reference: ReferenceSource::File { file: "select_fruit.skill".into() },
        instructions: vec![
            Instruction { text: "Put the apple in the basket.".into(), style: InstructionStyle::Direct },
            Instruction { text: "Pick the red fruit and place it in the basket.".into(), style: InstructionStyle::Semantic },
        ],
        randomization: RandomizationSpec::default(),
        static_obstacles: Some(CloudSource::File("../common/table.pclb".into())),
    };
    let reference = "Pick(\"apple\", {\"gripper_state\": \"close\", \"orientation\": [pi, 0, 0]})\n\
                     Place(\"basket\", {\"gripper_state\": \"open\", \"pose\": [0.6, 0.4, 0.15]})\n";
    let clouds = [
        ("apple", solid(0.03, 0.06)),
        ("banana", solid(0.03, 0.06)),
        ("orange", solid(0.03, 0.06)),
        ("pear", solid(0.03, 0.06)),
        ("basket", open_box(0.1, 0.12)),
    ];
    write(&root.join("select_fruit"), "select_fruit", &t, reference, &clouds);
}

fn make_juice(root: &Path) {
    let juicer = EntityTemplate {
        entity_id: "juicer".into(),
        category: "juicer".into(),
        position: Vec3::new(0.55, 0.3, 0.0),
        // lid handle on top, lifted straight up to open
        grasp_points: vec![Pose::new(Vec3::new(0.0, 0.0, 0.13), down())],
        place_point: Some(Pose::new(Vec3::new(0.0, 0.0, 0.17), down())),
        bounding_box: Some(corners(Vec3::new(-0.07, -0.07, 0.0), Vec3::new(0.07, 0.07, 0.12))),
        cloud: CloudSource::File("clouds/juicer.pclb".into()),
        receptacle: true,
        articulated: true,
        ..fruit("juicer", 0.0, 0.0)
    };
    let t = ScenarioTemplate {
        task_id: "make_juice".into(),
        dimension: Dimension::Reasoning,
        entities: vec![juicer, fruit("apple", 0.45, -0.1), fruit("orange", 0.45, -0.35)],
        distractor_pool: vec![],
        targets: vec!["apple".into(), "orange".into()],
        receptacles: vec!["juicer".into()],
        n_total: None,
        substeps: vec![
            Predicate::Open { entity: "juicer".into() },
            Predicate::Inside { entity: "apple".into(), container: "juicer".into() },
            Predicate::Inside { entity: "orange".into(), container: "juicer".into() },
        ],
        reference: ReferenceSource::File { file: "make_juice.skill".into() },
        instructions: vec![Instruction { text: "Make me some fruit juice.".into(), style: InstructionStyle::Commonsense }],
        randomization: RandomizationSpec { distractors: [0, 0], ..RandomizationSpec::default() },
        static_obstacles: Some(CloudSource::File("../common/table.pclb".into())),
    };
    let reference = "Open(\"juicer\")\n\
                     Place(\"apple\", {\"destination\": \"juicer\"})\n\
                     Place(\"orange\", {\"destination\": \"juicer\"})\n";
    let clouds = [("juicer", solid(0.07, 0.12)), ("apple", solid(0.03, 0.06)), ("orange", solid(0.03, 0.06))];
    write(&root.join("make_juice"), "make_juice", &t, reference, &clouds);
}

fn main() {
    let root = std::env::args().nth(1).unwrap_or_else(|| "fixtures".into());
    let root = Path::new(&root);
    fs::create_dir_all(root.join("common")).unwrap();
    table().write(&root.join("common/table.pclb")).unwrap();
    select_fruit(root);
    make_juice(root);
    println!("fixtures written to {}", root.display());
}
