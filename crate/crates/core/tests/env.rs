use ess_core::env::dataset::{self, Dataset};
use ess_core::env::render::{cast_columns, render_linear};
use ess_core::env::*;
use ess_core::spatial::{delta_pos, Pose};
use proptest::prelude::*;

fn default_plan(seed: u64) -> FloorPlan {
    generate_floorplan(seed, &PlanParams::default()).unwrap()
}

/// A 20x20 box of shell walls with no rooms or objects.
fn empty_box() -> FloorPlan {
    let mut plan = default_plan(1);
    let n = 20;
    plan.width = n;
    plan.height = n;
    plan.cells = (0..n * n)
        .map(|i| {
            let (x, y) = (i % n, i / n);
            if x == 0 || y == 0 || x == n - 1 || y == n - 1 {
                Cell::Wall(0)
            } else {
                Cell::Empty
            }
        })
        .collect();
    plan.rooms.clear();
    plan.objects.clear();
    plan.validate().unwrap();
    plan
}

#[test]
fn plan_is_deterministic() {
    let p = PlanParams { rooms: 4, grid_width: 32, grid_height: 32, ..Default::default() };
    assert_eq!(generate_floorplan(7, &p).unwrap(), generate_floorplan(7, &p).unwrap());
    assert_ne!(generate_floorplan(7, &p).unwrap(), generate_floorplan(8, &p).unwrap());
}

#[test]
fn rooms_cover_most_free_space() {
    for seed in 0..20 {
        let plan = default_plan(seed);
        let free = plan.free_cells();
        let labeled = free
            .iter()
            .filter(|&&(x, y)| {
                let (cx, cy) = plan.cell_center(x, y);
                room_label(&plan, &Pose::new(cx, cy, plan.eye_height, 0.0).unwrap()).is_some()
            })
            .count();
        let frac = labeled as f64 / free.len() as f64;
        assert!(frac >= 0.7, "seed {seed}: labeled fraction {frac}");
        assert!(labeled < free.len(), "seed {seed}: no corridor cells");
    }
}

#[test]
fn unsatisfiable_plans_rejected() {
    let p = PlanParams { rooms: 40, grid_width: 16, grid_height: 16, ..Default::default() };
    assert!(generate_floorplan(0, &p).is_err());
    let p = PlanParams { rooms: 1, ..Default::default() };
    assert!(generate_floorplan(0, &p).is_err());
    let p = PlanParams { grid_width: 15, ..Default::default() };
    assert!(generate_floorplan(0, &p).is_err());
}

#[test]
fn room_label_at_centre_and_corridor() {
    let plan = default_plan(3);
    for room in &plan.rooms {
        let c = room.bounds.center();
        let pose = Pose::new(c[0], c[1], plan.eye_height, 0.0).unwrap();
        assert_eq!(room_label(&plan, &pose), Some(room.label.as_str()));
    }
    let corridor = plan
        .free_cells()
        .into_iter()
        .map(|(x, y)| plan.cell_center(x, y))
        .find(|&(x, y)| plan.room_index_at([x, y, plan.eye_height]).is_none())
        .unwrap();
    let pose = Pose::new(corridor.0, corridor.1, plan.eye_height, 0.0).unwrap();
    assert_eq!(room_label(&plan, &pose), None);
}

#[test]
fn render_is_deterministic_and_rejects_walls() {
    let plan = default_plan(5);
    let traj = random_walk(&plan, 20, &MotionParams::default(), 1).unwrap();
    let light = &default_palette()[4];
    for p in traj.poses() {
        let a = render(&plan, p, light, 32, 32).unwrap();
        let b = render(&plan, p, light, 32, 32).unwrap();
        assert_eq!(a, b);
    }
    let (wx, wy) = plan.cell_center(0, 0);
    let inside = Pose::new(wx, wy, plan.eye_height, 0.0).unwrap();
    assert!(render(&plan, &inside, light, 32, 32).is_err());
}

#[test]
fn wall_slice_scales_with_inverse_distance() {
    let plan = empty_box();
    // the wall face opposite +x sits at x = 19 cells * 0.5 m = 9.5 m
    let near = Pose::new(8.5, 5.25, 1.0, 0.0).unwrap();
    let far = Pose::new(5.5, 5.25, 1.0, 0.0).unwrap();
    let (w, h) = (32, 256);
    let hn = cast_columns(&plan, &near, w, h).unwrap();
    let hf = cast_columns(&plan, &far, w, h).unwrap();
    for (a, b) in hn.iter().zip(&hf) {
        assert!((a.perp_distance - 1.0).abs() < 1e-9);
        assert!((b.perp_distance - 4.0).abs() < 1e-9);
        assert!((a.slice_height() / b.slice_height() - 4.0).abs() < 1e-9);
    }
    let rows = |hit: &render::ColumnHit| {
        (0..h).filter(|&r| {
            let y = r as f64 + 0.5;
            y >= hit.top && y < hit.bottom
        }).count() as f64
    };
    let mean = |hits: &[render::ColumnHit]| hits.iter().map(rows).sum::<f64>() / hits.len() as f64;
    let (mn, mf) = (mean(&hn), mean(&hf));
    assert!((mn / 4.0 - mf).abs() <= 1.0, "near {mn} px, far {mf} px");
}

#[test]
fn tint_scales_pre_clamp_values() {
    let plan = default_plan(2);
    let traj = random_walk(&plan, 5, &MotionParams::default(), 9).unwrap();
    let base = LightingCondition::neutral(0);
    let red = LightingCondition { tint: [2.0, 1.0, 1.0], ..base.clone() };
    for p in traj.poses() {
        let a = render_linear(&plan, p, &base, 32, 32).unwrap();
        let b = render_linear(&plan, p, &red, 32, 32).unwrap();
        let mean_red = |v: &[f64]| v.iter().step_by(3).sum::<f64>() / (v.len() / 3) as f64;
        assert_eq!(mean_red(&b), 2.0 * mean_red(&a));
        for (i, (x, y)) in a.iter().zip(&b).enumerate() {
            if i % 3 == 0 {
                assert_eq!(*y, 2.0 * x);
            } else {
                assert_eq!(y, x);
            }
        }
    }
}

#[test]
fn walk_contract() {
    let plan = default_plan(11);
    let t = random_walk(&plan, 100, &MotionParams::default(), 4).unwrap();
    assert_eq!(t.len(), 100);
    t.validate(&plan, Some(0.2)).unwrap();
    assert_eq!(t, random_walk(&plan, 100, &MotionParams::default(), 4).unwrap());
    assert!(random_walk(&plan, 0, &MotionParams::default(), 4).is_err());

    let slow = MotionParams { step_length: 0.1, ..Default::default() };
    let t = random_walk(&plan, 500, &slow, 5).unwrap();
    for w in t.points.windows(2) {
        assert!(delta_pos(&w[0].pose, &w[1].pose) <= 0.1 + 1e-9);
        assert!(plan.pose_is_free(&w[1].pose));
    }
}

#[test]
fn long_walks_explore() {
    for seed in 0..5 {
        let plan = default_plan(seed);
        let t = random_walk(&plan, 2000, &MotionParams::default(), seed).unwrap();
        let mut seen: Vec<&str> = t.poses().filter_map(|p| room_label(&plan, p)).collect();
        seen.sort();
        seen.dedup();
        assert!(2 * seen.len() >= plan.rooms.len(), "seed {seed}: visited {seen:?}");
    }
}

#[test]
fn replay_preserves_poses() {
    let plan = default_plan(6);
    let palette = default_palette();
    let t = random_walk(&plan, 50, &MotionParams::default(), 2).unwrap();
    let frames = replay(&plan, &t, &LightingPolicy::Fixed { id: 0 }, &palette, 32, 32).unwrap();
    assert_eq!(frames.len(), 50);
    for (f, p) in frames.iter().zip(&t.points) {
        assert_eq!(f.step, p.step);
        assert_eq!(f.pose, p.pose);
        assert_eq!(f.lighting_id, 0);
        assert_eq!((f.image.width(), f.image.height()), (32, 32));
    }
    let per = LightingPolicy::PerFrame { seed: 3, ids: vec![] };
    let a = replay(&plan, &t, &per, &palette, 32, 32).unwrap();
    let b = replay(&plan, &t, &per, &palette, 32, 32).unwrap();
    assert_eq!(a, b);
}

#[test]
fn replay_rejects_corrupt_trajectory() {
    let plan = default_plan(6);
    let (wx, wy) = plan.cell_center(0, 3);
    let t = Trajectory {
        provenance: "corrupt".into(),
        points: vec![TrajectoryPoint { step: 0, pose: Pose::new(wx, wy, 1.0, 0.0).unwrap() }],
    };
    let policy = LightingPolicy::Fixed { id: 0 };
    assert!(replay(&plan, &t, &policy, &default_palette(), 32, 32).is_err());
}

#[test]
fn per_frame_lighting_is_uniform() {
    let palette = default_palette();
    let ids: Vec<LightingId> = (1..=9).collect();
    let policy = LightingPolicy::PerFrame { seed: 42, ids: ids.clone() };
    let n = 10_000;
    let draws = policy.assign(&palette, n).unwrap();
    let p = 1.0 / 9.0;
    let expect = n as f64 * p;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    for id in ids {
        let c = draws.iter().filter(|&&d| d == id).count() as f64;
        assert!((c - expect).abs() <= 3.0 * sigma, "id {id}: {c}");
    }
    assert!(draws.iter().all(|&d| d != 0));
}

#[test]
fn labeled_fraction_matches_point_in_box() {
    let plan = default_plan(0);
    let t = random_walk(&plan, 2000, &MotionParams::default(), 17).unwrap();
    let by_label = t.poses().filter(|p| room_label(&plan, p).is_some()).count();
    let brute = t
        .poses()
        .filter(|p| {
            plan.rooms.iter().any(|r| {
                (0..3).all(|k| r.bounds.min[k] <= p.position()[k] && p.position()[k] < r.bounds.max[k])
            })
        })
        .count();
    assert_eq!(by_label, brute);
}

#[test]
fn trajectory_csv_round_trip() {
    let plan = default_plan(8);
    let t = random_walk(&plan, 300, &MotionParams::default(), 8).unwrap();
    let text = t.to_csv();
    assert!(text.starts_with("step,x,y,z,yaw\n"));
    let back = Trajectory::from_csv(&text, "x").unwrap();
    assert_eq!(back.points, t.points);
    assert!(Trajectory::from_csv("step,x,y\n0,1,2\n", "x").is_err());
    assert!(Trajectory::from_csv("step,x,y,z,yaw\n0,1,2,3\n", "x").is_err());
}

#[test]
fn decimals_have_nine_significant_digits() {
    for v in [0.0, 1.0, 0.5, 123.25, 1e-7, 359.99999999999994, 2.0f64.sqrt()] {
        let s = trajectory::format_decimal(v);
        assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        let digits = s.replace('.', "");
        let sig = digits.trim_start_matches('0').len();
        assert!(sig >= 9 || v == 0.0, "{s}");
    }
}

proptest! {
    #[test]
    fn csv_pose_round_trip(x in 0.0f64..100.0, y in 0.0f64..100.0, yaw in 0.0f64..360.0, step in 0u64..1_000_000) {
        let t = Trajectory {
            provenance: "p".into(),
            points: vec![TrajectoryPoint { step, pose: Pose::new(x, y, 1.0, yaw).unwrap() }],
        };
        let back = Trajectory::from_csv(&t.to_csv(), "p").unwrap();
        prop_assert_eq!(back.points, t.points);
    }
}

#[test]
fn plan_file_round_trip() {
    let plan = default_plan(21);
    let text = dataset::plan_to_json(&plan).unwrap();
    assert_eq!(dataset::plan_from_json(&text).unwrap(), plan);
    let bumped = text.replacen("\"version\": 1", "\"version\": 2", 1);
    assert!(dataset::plan_from_json(&bumped).is_err());
}

#[test]
fn dataset_write_load_round_trip() {
    let plan = default_plan(12);
    let palette = default_palette();
    let t = random_walk(&plan, 40, &MotionParams::default(), 12).unwrap();
    let policy = LightingPolicy::PerFrame { seed: 1, ids: vec![] };
    let frames = replay(&plan, &t, &policy, &palette, 32, 32).unwrap();
    let ds = Dataset::from_frames(plan.clone(), palette, frames.clone());
    let dir = tempfile::tempdir().unwrap();
    ds.write(dir.path()).unwrap();
    assert!(dir.path().join("frames/frame_000039.ppm").exists());
    let back = Dataset::load(dir.path()).unwrap();
    assert_eq!(back.plan, plan);
    assert_eq!(back.records, ds.records);
    assert_eq!(back.poses, ds.poses);
    assert_eq!(back.images, ds.images);
    for (r, f) in back.records.iter().zip(&frames) {
        assert_eq!(r.room_label.as_deref(), room_label(&plan, &f.pose));
    }
    let saved = dataset::read_trajectory(&dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(saved.points, t.points);
}
