use std::path::PathBuf;

use microtwin_core::vision::read_pgm;
use microtwin_harness::scenario::Scenario;
use microtwin_harness::sim::{run_scenario, RunOptions, Simulation};
use microtwin_harness::telemetry::{read_telemetry, to_csv_bytes, write_telemetry_file};

fn scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(format!("{name}.toml"));
    Scenario::load(&path).unwrap()
}

#[test]
fn shipped_scenarios_parse() {
    for name in ["circle", "dual_actuation", "pushing", "manual"] {
        scenario(name);
    }
}

#[test]
fn circle_completes() {
    let (s, rows) = run_scenario(scenario("circle"), RunOptions::default()).unwrap();
    println!("{s:#?}");
    assert!(s.success);
    assert_eq!(rows.len() as u64, s.frames);
}

#[test]
fn dual_actuation_finds_peak() {
    let (s, _) = run_scenario(scenario("dual_actuation"), RunOptions::default()).unwrap();
    println!("{s:#?}");
    assert!(s.success);
}

#[test]
fn pushing_keeps_identities_and_moves_the_sphere() {
    let mut sim = Simulation::new(scenario("pushing"), RunOptions::default()).unwrap();
    let mut sphere_path = 0.0;
    let mut last: Option<(f64, f64)> = None;
    let mut min_gap = f64::INFINITY;
    let s = sim
        .run(|_, bodies| {
            let p = (bodies[1].x, bodies[1].y);
            if let Some(q) = last {
                sphere_path += (p.0 - q.0).hypot(p.1 - q.1);
            }
            last = Some(p);
            min_gap = min_gap.min(bodies[0].distance_to(&bodies[1]) - bodies[0].radius - bodies[1].radius);
        })
        .unwrap();
    assert!(s.success, "{s:?}");
    assert_eq!(s.identity_swaps, 0);
    assert_eq!(s.frames, 960);
    // the sphere was carried, not just nudged
    assert!(sphere_path > 300.0, "sphere moved {sphere_path} um");
    assert!(min_gap > -1e-9, "bodies overlapped by {}", -min_gap);
}

#[test]
fn same_seed_same_bytes() {
    for name in ["circle", "pushing"] {
        let a = run_scenario(scenario(name), RunOptions::default()).unwrap().1;
        let b = run_scenario(scenario(name), RunOptions::default()).unwrap().1;
        let n = scenario(name).robots.iter().filter(|r| r.track).count();
        assert_eq!(to_csv_bytes(n, &a).unwrap(), to_csv_bytes(n, &b).unwrap(), "{name}");
    }
}

#[test]
fn noise_seed_changes_the_run() {
    let mut sc = scenario("circle");
    sc.physics.brownian_diffusion = 0.05;
    let a = run_scenario(
        sc.clone(),
        RunOptions {
            seed: Some(1),
            ..Default::default()
        },
    )
    .unwrap()
    .1;
    let b = run_scenario(
        sc.clone(),
        RunOptions {
            seed: Some(1),
            ..Default::default()
        },
    )
    .unwrap()
    .1;
    let c = run_scenario(
        sc,
        RunOptions {
            seed: Some(2),
            ..Default::default()
        },
    )
    .unwrap()
    .1;
    assert_eq!(to_csv_bytes(1, &a).unwrap(), to_csv_bytes(1, &b).unwrap());
    assert_ne!(to_csv_bytes(1, &a).unwrap(), to_csv_bytes(1, &c).unwrap());
}

#[test]
fn frame_cadence() {
    let mut sc = scenario("manual");
    sc.duration = 25.0;
    let (s, rows) = run_scenario(sc, RunOptions::default()).unwrap();
    assert_eq!(rows.len(), 600);
    assert_eq!(s.ticks, 12_500);
    assert_eq!(s.ticks_per_row, Some((20, 21)));
    for (k, r) in rows.iter().enumerate() {
        assert_eq!(r.frame, k as u64);
        assert!((r.time - k as f64 / 24.0).abs() < 1e-12);
    }
}

#[test]
fn telemetry_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pushing.csv");
    let (_, rows) = run_scenario(scenario("pushing"), RunOptions::default()).unwrap();
    write_telemetry_file(&path, 2, &rows).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let (n, back) = read_telemetry(bytes.as_slice()).unwrap();
    assert_eq!(n, 2);
    assert_eq!(back.len(), rows.len());
    assert_eq!(to_csv_bytes(2, &back).unwrap(), bytes);
}

#[test]
fn dump_frames_writes_pgm() {
    let dir = tempfile::tempdir().unwrap();
    let mut sc = scenario("manual");
    sc.duration = 0.2;
    sc.camera.width = 128;
    sc.camera.height = 96;
    let opts = RunOptions {
        dump_frames: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    let (s, _) = run_scenario(sc, opts).unwrap();
    let mut names: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len() as u64, s.frames);
    let f = read_pgm(&dir.path().join(&names[0])).unwrap();
    assert_eq!((f.width, f.height), (128, 96));
    assert_eq!(f.get(64, 48), 220);
}
