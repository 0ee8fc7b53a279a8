use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use quadmimic_core::motion::{load_motion, save_motion, validate};
use quadmimic_core::robot::RobotModel;
use tempfile::TempDir;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quadmimic"))
        .current_dir(dir)
        .env_remove("QUADMIC_OUT")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path, gait: &str) -> PathBuf {
    ok(dir, &["synth", "--gait", gait, "--out", "."]);
    dir.join(format!("{gait}.csv"))
}

#[test]
fn synth_writes_a_valid_motion() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["synth", "--gait", "trot", "--speed", "0.4", "-o", "t.csv"]);
    let m = load_motion(tmp.path().join("t.csv")).unwrap();
    assert!(m.cyclic);
    assert!(validate(&m, &RobotModel::default()).is_clean());
}

#[test]
fn synth_usage_errors() {
    let tmp = TempDir::new().unwrap();
    let out = run(tmp.path(), &["synth", "--speed", "0.4"]);
    assert_eq!(out.status.code(), Some(1));

    let out = run(tmp.path(), &["synth", "--gait", "pace", "--speed", "-5"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("speed"));

    let out = run(tmp.path(), &["synth", "--gait", "gallop"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_file_sits_between_defaults_and_flags() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(
        tmp.path().join("run.toml"),
        "output_dir = \"runs\"\n[gait]\nclearance = 0.05\nstep_frequency = 2.5\n",
    )
    .unwrap();
    ok(tmp.path(), &["--config", "run.toml", "synth", "--gait", "trot", "--clearance", "0.06"]);
    let m = load_motion(tmp.path().join("runs/trot.csv")).unwrap();
    // period from the file, clearance from the flag
    assert!((m.duration() - 0.4).abs() < 1e-9);
    let apex = m.frames.iter().map(|f| f.com_pos.z + f.foot_pos[0].z).fold(f64::MIN, f64::max);
    assert!((apex - 0.06).abs() < 5e-3, "apex {apex}");

    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[gait]\nwobble = 1\n").unwrap();
    let out = run(tmp.path(), &["--config", "bad.toml", "synth", "--gait", "trot"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn output_dir_falls_back_to_environment() {
    let tmp = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_quadmimic"))
        .current_dir(tmp.path())
        .env("QUADMIC_OUT", "from_env")
        .args(["synth", "--gait", "pace"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(tmp.path().join("from_env/pace.csv").exists());
}

#[test]
fn fit_reports_every_channel_and_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    synth(tmp.path(), "trot");
    ok(tmp.path(), &["fit", "trot.csv", "-o", "a.toml", "--report", "a.csv"]);
    ok(tmp.path(), &["fit", "trot.csv", "-o", "b.toml", "--report", "b.csv"]);
    let a = std::fs::read(tmp.path().join("a.toml")).unwrap();
    assert_eq!(a, std::fs::read(tmp.path().join("b.toml")).unwrap());

    let report = std::fs::read_to_string(tmp.path().join("a.csv")).unwrap();
    let rows: Vec<&str> = report.lines().skip(1).collect();
    assert_eq!(rows.len(), 24);
    for r in rows {
        let rel: f64 = r.split(',').nth(4).unwrap().parse().unwrap();
        assert!(rel < 0.05, "{r}");
    }
}

#[test]
fn fit_rejects_non_cyclic_motion() {
    let tmp = TempDir::new().unwrap();
    let path = synth(tmp.path(), "trot");
    let mut m = load_motion(&path).unwrap();
    m.cyclic = false;
    save_motion(&m, tmp.path().join("open.csv")).unwrap();
    let out = run(tmp.path(), &["fit", "open.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cyclic"));
}

#[test]
fn rollout_reports_both_controllers_and_oracle() {
    let tmp = TempDir::new().unwrap();
    synth(tmp.path(), "trot");
    let table = ok(
        tmp.path(),
        &["rollout", "trot.csv", "--controller", "mbc,raibert", "--duration", "2", "--log", "--out", "."],
    );
    assert!(table.lines().any(|l| l.starts_with("mbc") && l.contains("Completed")));
    assert!(table.lines().any(|l| l.starts_with("raibert")));
    let log = load_motion(tmp.path().join("trot.mbc.log.csv")).unwrap();
    assert_eq!(log.len(), 1000);

    let oracle = ok(tmp.path(), &["rollout", "trot.csv", "--oracle-replay", "--duration", "1"]);
    assert!(oracle.contains("1.0000"), "{oracle}");
}

#[test]
fn optimize_is_seeded_and_monotone() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["synth", "--gait", "trot", "--clearance", "0.01", "-o", "low.csv"]);
    let args = |dir: &'static str| ["optimize", "low.csv", "--iters", "3", "--seed", "7", "--duration", "2", "--out", dir];
    ok(tmp.path(), &args("a"));
    ok(tmp.path(), &args("b"));
    let h = std::fs::read_to_string(tmp.path().join("a/low.history.csv")).unwrap();
    assert_eq!(h, std::fs::read_to_string(tmp.path().join("b/low.history.csv")).unwrap());
    let best: Vec<f64> = h.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(best.len(), 4);
    assert!(best.windows(2).all(|w| w[1] >= w[0]));
    assert!(load_motion(tmp.path().join("a/low.optimized.csv")).unwrap().cyclic);
    assert!(tmp.path().join("a/low.optimized.dmp.toml").exists());
}

#[test]
fn compare_writes_matrix_and_chart() {
    let tmp = TempDir::new().unwrap();
    for g in ["trot", "pace", "turn", "side-step"] {
        synth(tmp.path(), g);
    }
    ok(
        tmp.path(),
        &[
            "compare", "trot.csv", "pace.csv", "turn.csv", "side-step.csv", "--iters", "1", "--duration", "1",
            "--out", "report",
        ],
    );
    let csv = std::fs::read_to_string(tmp.path().join("report/compare.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "motion,mbc,mbc_dmp,raibert");
    assert_eq!(lines.len(), 5);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 4));
    let svg = std::fs::read_to_string(tmp.path().join("report/compare.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("side-step"));

    assert_eq!(run(tmp.path(), &["compare"]).status.code(), Some(1));
}

#[test]
fn stitch_passthrough_seam_and_mismatch() {
    let tmp = TempDir::new().unwrap();
    let trot = synth(tmp.path(), "trot");
    synth(tmp.path(), "pace");

    ok(tmp.path(), &["stitch", "trot.csv", "-o", "same.csv"]);
    assert_eq!(std::fs::read(&trot).unwrap(), std::fs::read(tmp.path().join("same.csv")).unwrap());

    ok(tmp.path(), &["stitch", "pace.csv", "trot.csv", "--cycles", "2,3", "--no-optimize", "-o", "pt.csv"]);
    let m = load_motion(tmp.path().join("pt.csv")).unwrap();
    assert_eq!(m.len(), 2 * 50 + 3 * 50 + 1);
    let jump = m.frames.windows(2).map(|w| (w[1].com_pos - w[0].com_pos).norm()).fold(0.0, f64::max);
    assert!(jump < 0.02, "largest CoM step {jump}");

    ok(tmp.path(), &["synth", "--gait", "trot", "--frame-dt", "0.02", "-o", "coarse.csv"]);
    let out = run(tmp.path(), &["stitch", "trot.csv", "coarse.csv", "--no-optimize"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("incompatible"));
}

#[test]
fn stitch_optimizes_jointly() {
    let tmp = TempDir::new().unwrap();
    synth(tmp.path(), "trot");
    synth(tmp.path(), "pace");
    ok(
        tmp.path(),
        &["stitch", "pace.csv", "trot.csv", "--cycles", "2,2", "--iters", "1", "--duration", "1", "-o", "j.csv"],
    );
    let m = load_motion(tmp.path().join("j.csv")).unwrap();
    assert_eq!(m.len(), 4 * 50 + 1);
    assert!(tmp.path().join("j.history.csv").exists());
}
