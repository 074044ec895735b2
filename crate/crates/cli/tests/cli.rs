use std::path::Path;
use std::process::{Command, Output};

fn gaze(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gaze"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn calibrate_then_evaluate_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = gaze(&["calibrate", "--seed", "4"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("samples=63"));
    let calib = dir.path().join("calibration.jsonl");
    assert!(calib.exists());

    let eval_dir = dir.path().join("eval");
    let o = gaze(
        &[
            "evaluate",
            "--calib",
            calib.to_str().unwrap(),
            "--trials",
            "12",
            "--corrective",
            "1",
            "--strict-digest",
        ],
        &eval_dir,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("mean primary"));
    let csv = std::fs::read_to_string(eval_dir.join("trials.csv")).unwrap();
    assert!(csv.starts_with("trial_id,start_pan,start_tilt,ecc_deg,dir_deg,bucket,"));
    let summary = std::fs::read_to_string(eval_dir.join("summary.txt")).unwrap();
    assert!(summary.lines().any(|l| l == "status=ok"));
    assert!(summary
        .lines()
        .any(|l| l.starts_with("reference_mean_primary_deg=1.13")));
    assert!(eval_dir.join("scatter.csv").exists());
}

#[test]
fn evaluate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = gaze(&["evaluate", "--seed", "9", "--trials", "8"], d);
        assert!(o.status.success());
    }
    assert_eq!(
        std::fs::read(a.join("trials.csv")).unwrap(),
        std::fs::read(b.join("trials.csv")).unwrap()
    );
}

#[test]
fn strict_digest_rejects_changed_rig() {
    let dir = tempfile::tempdir().unwrap();
    assert!(gaze(&["calibrate"], dir.path()).status.success());
    let cfg = dir.path().join("changed.toml");
    std::fs::write(&cfg, "[rig]\nbacklash = 0.5\n").unwrap();
    let calib = dir.path().join("calibration.jsonl");
    let o = gaze(
        &[
            "evaluate",
            "--config",
            cfg.to_str().unwrap(),
            "--calib",
            calib.to_str().unwrap(),
            "--strict-digest",
            "--trials",
            "2",
        ],
        &dir.path().join("e"),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("digest"));
}

#[test]
fn bad_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[rig]\nno_such_key = 1\n").unwrap();
    let o = gaze(
        &["calibrate", "--config", cfg.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    let o = gaze(&["calibrate", "--step", "0"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn corrupt_calibration_file_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let calib = dir.path().join("broken.jsonl");
    std::fs::write(&calib, "{\"format\":\"dijit-calib/1\"}\n").unwrap();
    let o = gaze(
        &[
            "evaluate",
            "--calib",
            calib.to_str().unwrap(),
            "--trials",
            "1",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn empty_sweep_is_a_calibration_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("far.toml");
    std::fs::write(&cfg, "[board.pose]\ntranslation = [0.0, 0.0, -1000.0]\n").unwrap();
    let o = gaze(
        &["calibrate", "--config", cfg.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn single_saccade_and_oracle_agree_on_ideal_rig() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ideal.toml");
    std::fs::write(
        &cfg,
        "[rig]\npan_axis = { direction = [0.0, 1.0, 0.0], point = [0.0, 0.0, 0.0] }\n\
         tilt_axis = { direction = [-1.0, 0.0, 0.0], point = [0.0, 0.0, 0.0] }\n\
         quantization_step = 0.0\nbacklash = 0.0\ngain_pan = 1.0\ngain_tilt = 1.0\ncorner_noise_sigma = 0.0\n",
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    let o = gaze(
        &[
            "saccade", "--config", c, "--pan", "-3", "--tilt", "2", "--ecc", "9", "--dir", "30",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("case=B"), "{text}");
    let err: f64 = text
        .lines()
        .find(|l| l.starts_with("pass 0"))
        .and_then(|l| l.split("error=").nth(1))
        .and_then(|s| s.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!(err < 0.05, "{text}");

    let o = gaze(
        &[
            "oracle", "--config", c, "--pan", "-3", "--tilt", "2", "--ecc", "9", "--dir", "30",
        ],
        dir.path(),
    );
    assert!(o.status.success());
    assert!(stdout(&o).contains("oracle pan="));
}
