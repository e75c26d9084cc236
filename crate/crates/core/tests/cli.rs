//! End-to-end checks of the `poleloc` binary.

use std::path::Path;
use std::process::{Command, Output};

fn poleloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_poleloc")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn simulate_writes_consistent_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    let o = poleloc(&["simulate", "--seed", "4", "--out", p(&out), "--loop_length_m", "100"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let frames = lines(&out.join("truth.csv")) - 1;
    assert_eq!(frames, 200);
    assert_eq!(lines(&out.join("odometry.csv")) - 1, frames);
    assert_eq!(lines(&out.join("map.csv")) - 1, 40);
    let obs = std::fs::read_to_string(out.join("observations.csv")).unwrap();
    let last_frame: usize = obs.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).max().unwrap();
    assert!(last_frame < frames);

    let again = tmp.path().join("again");
    assert!(poleloc(&["simulate", "--seed", "4", "--out", p(&again), "--loop_length_m", "100"]).status.success());
    for f in ["map.csv", "truth.csv", "odometry.csv", "observations.csv"] {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn empty_world_gives_header_only_map() {
    let tmp = tempfile::tempdir().unwrap();
    let o = poleloc(&["simulate", "--out", p(tmp.path()), "--pole_count", "0", "--loop_length_m", "50"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(tmp.path().join("map.csv")).unwrap(), "id,east_m,north_m,label\n");
}

#[test]
fn localize_from_files_and_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    assert!(poleloc(&["simulate", "--seed", "2", "--out", p(&sim), "--loop_length_m", "120"]).status.success());
    let truth = std::fs::read_to_string(sim.join("truth.csv")).unwrap();
    let first: Vec<&str> = truth.lines().nth(1).unwrap().split(',').collect();
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(
        &cfg,
        format!(
            "# files written by simulate\nmap = sim/map.csv\nodometry = sim/odometry.csv\nobservations = sim/observations.csv\n\
             init_east_m = {}\ninit_north_m = {}\ninit_psi_rad = {}\nparticles = 200\n",
            first[2], first[3], first[4]
        ),
    )
    .unwrap();
    let run = tmp.path().join("run");
    let o = poleloc(&["localize", "--config", p(&cfg), "--out", p(&run), "--alignment-every", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(lines(&run.join("trajectory.csv")), lines(&sim.join("truth.csv")));
    assert_eq!(lines(&run.join("frames.jsonl")), lines(&sim.join("truth.csv")) - 1);
    let log = std::fs::read_to_string(run.join("frames.jsonl")).unwrap();
    let odd: serde_json::Value = serde_json::from_str(log.lines().nth(1).unwrap()).unwrap();
    assert!(odd.get("alignment").is_none(), "frame 1 is skipped with --alignment-every 2");

    let eval = tmp.path().join("eval");
    let o = poleloc(&["evaluate", p(&run.join("trajectory.csv")), p(&sim.join("truth.csv")), "--out", p(&eval)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(eval.join("metrics.json")).unwrap()).unwrap();
    assert!(report["rmse_trans_m"].as_f64().unwrap() < 2.0, "{report}");
    assert_eq!(lines(&eval.join("errors.csv")), lines(&sim.join("truth.csv")));
}

#[test]
fn single_frame_input_gives_single_row() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("map.csv"), "id,east_m,north_m,label\n1,0,10,Pole\n").unwrap();
    std::fs::write(d.join("odo.csv"), "t_s,v_mps,omega_radps\n0,0,0\n").unwrap();
    std::fs::write(d.join("obs.csv"), "frame,u_px,label,group_width,pixel_count\n0,320,Pole,3,100\n").unwrap();
    let out = d.join("out");
    let o = poleloc(&[
        "localize", "--out", p(&out), "--map", p(&d.join("map.csv")), "--odometry", p(&d.join("odo.csv")),
        "--observations", p(&d.join("obs.csv")), "--init_east_m", "0", "--init_north_m", "0", "--init_psi_rad", "0",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(lines(&out.join("trajectory.csv")), 2);
}

#[test]
fn evaluate_identity_and_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let truth = tmp.path().join("truth.csv");
    std::fs::write(&truth, "frame,t_s,east_m,north_m,psi_rad\n0,0,1,2,0.1\n1,0.1,1.5,2,0.1\n").unwrap();
    let o = poleloc(&["evaluate", p(&truth), p(&truth)]);
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["rmse_trans_m"], 0.0);
    assert_eq!(report["recall_pose"][0], 1.0);

    let short = tmp.path().join("short.csv");
    std::fs::write(&short, "frame,east_m,north_m,psi_rad,mode\n0,1,2,0.1,coarse\n").unwrap();
    let o = poleloc(&["evaluate", p(&short), p(&truth)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("1 frames"), "{}", stderr(&o));
}

#[test]
fn extract_masks_in_file_order() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    let o = poleloc(&[
        "simulate", "--seed", "6", "--out", p(&sim), "--loop_length_m", "30", "--render_masks", "true",
        "--sensor_sigma_px", "0", "--sensor_p_d", "1", "--clutter_rate", "0",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = tmp.path().join("ex");
    let o = poleloc(&["extract", p(&sim.join("masks")), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let read = |path: &Path| -> Vec<(usize, f64, String)> {
        std::fs::read_to_string(path).unwrap().lines().skip(1).map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].to_string())
        }).collect()
    };
    let simulated = read(&sim.join("observations.csv"));
    let extracted = read(&out.join("observations.csv"));
    assert!(!simulated.is_empty());
    // 5 px stripes of nearby poles merge or occlude; isolated ones round-trip
    let mut isolated = 0;
    for (frame, u, label) in &simulated {
        let in_frame = |v: &Vec<(usize, f64, String)>| -> Vec<(f64, String)> {
            v.iter().filter(|o| o.0 == *frame).map(|o| (o.1, o.2.clone())).collect()
        };
        let near = in_frame(&extracted).into_iter().map(|(x, _)| (x - u).abs()).fold(f64::INFINITY, f64::min);
        assert!(near <= 5.0, "frame {frame}: pole at {u} lost");
        let alone = in_frame(&simulated).iter().filter(|(x, _)| (x - u).abs() < 10.0).count() == 1;
        if alone {
            isolated += 1;
            assert!(in_frame(&extracted).iter().any(|(x, l)| (x - u).abs() <= 0.5 && l == label), "frame {frame}: {u}");
        }
    }
    assert!(isolated > simulated.len() / 2);
    for frame in 0..lines(&sim.join("truth.csv")) - 1 {
        let count = |v: &Vec<(usize, f64, String)>| v.iter().filter(|o| o.0 == frame).count();
        assert!(count(&extracted) <= count(&simulated));
    }

    let empty = tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let o = poleloc(&["extract", p(&empty), "--out", p(&tmp.path().join("ex2"))]);
    assert!(o.status.success());
    assert_eq!(
        std::fs::read_to_string(tmp.path().join("ex2/observations.csv")).unwrap(),
        "frame,u_px,label,group_width,pixel_count\n"
    );

    std::fs::write(empty.join("notes.txt"), "not a mask").unwrap();
    let o = poleloc(&["extract", p(&empty), "--out", p(&tmp.path().join("ex3"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("notes.txt"), "{}", stderr(&o));
}

#[test]
fn input_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(poleloc(&["localize", "--bogus_key", "1", "--out", p(tmp.path())]).status.code(), Some(1));
    assert_eq!(poleloc(&["frobnicate"]).status.code(), Some(1));
    let cfg = tmp.path().join("bad.cfg");
    std::fs::write(&cfg, "seed = 1\nnot_a_key = 3\n").unwrap();
    let o = poleloc(&["simulate", "--config", p(&cfg), "--out", p(tmp.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.cfg:2"), "{}", stderr(&o));
    let o = poleloc(&["localize", "--out", p(tmp.path()), "--map", "missing.csv", "--odometry", "missing.csv", "--observations", "x.csv",
        "--init_east_m", "0", "--init_north_m", "0", "--init_psi_rad", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.csv"), "{}", stderr(&o));
}
