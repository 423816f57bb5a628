//! Black-box checks of the binary: exit codes, file outputs, flag handling.

use std::path::Path;
use std::process::{Command, Output};

fn dipmatte(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dipmatte"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn make_case(dir: &Path) {
    let out = dipmatte(&[
        "synth",
        "disk",
        dir.to_str().unwrap(),
        "--size",
        "32x32",
        "--band",
        "2",
        "--seed",
        "4",
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
}

#[test]
fn help_and_version_exit_cleanly() {
    assert_eq!(code(&dipmatte(&["--help"])), 0);
    assert_eq!(code(&dipmatte(&["--version"])), 0);
    assert_eq!(code(&dipmatte(&["extract", "--help"])), 0);
}

#[test]
fn unknown_flags_and_subcommands_are_usage_errors() {
    assert_eq!(code(&dipmatte(&["--frobnicate"])), 1);
    assert_eq!(code(&dipmatte(&["transmogrify"])), 1);
    assert_eq!(code(&dipmatte(&[])), 1);
    assert_eq!(code(&dipmatte(&["synth", "blob", "/tmp/x"])), 1);
}

#[test]
fn missing_input_files_exit_with_io_error() {
    let out = dipmatte(&[
        "extract",
        "/nonexistent/image.png",
        "/nonexistent/trimap.png",
        "/tmp/dipmatte-cli-test-out",
        "--iters",
        "1",
    ]);
    assert_eq!(code(&out), 2, "{out:?}");
    assert_eq!(code(&dipmatte(&["eval", "/no/a.png", "/no/b.png", "/no/c.png"])), 2);
}

#[test]
fn loss_threshold_without_warm_start_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let case = dir.path().join("case");
    make_case(&case);
    let out = dipmatte(&[
        "extract",
        case.join("image.png").to_str().unwrap(),
        case.join("trimap.png").to_str().unwrap(),
        dir.path().join("out").to_str().unwrap(),
        "--iters",
        "1",
        "--loss-threshold",
        "0.5",
    ]);
    assert_eq!(code(&out), 1, "{out:?}");
}

#[test]
fn extract_writes_matte_losses_and_weights() {
    let dir = tempfile::tempdir().unwrap();
    let case = dir.path().join("case");
    make_case(&case);
    let out_dir = dir.path().join("out");
    let out = dipmatte(&[
        "extract",
        case.join("image.png").to_str().unwrap(),
        case.join("trimap.png").to_str().unwrap(),
        out_dir.to_str().unwrap(),
        "--iters",
        "8",
        "--depth",
        "1",
        "--channels",
        "6",
        "--seed",
        "1",
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    for name in ["alpha.png", "fg.png", "bg.png", "loss.txt", "weights.bin"] {
        assert!(out_dir.join(name).exists(), "missing {name}");
    }
    let loss = std::fs::read_to_string(out_dir.join("loss.txt")).unwrap();
    // Header plus one row per iteration.
    assert_eq!(loss.lines().count(), 9);
    let header = loss.lines().next().unwrap();
    for col in ["L_I", "L_alpha", "L_F", "L_B", "L_c", "L_e", "total"] {
        assert!(header.contains(col), "loss.txt header missing {col}");
    }

    // The matte has the right dimensions and decodes as 16-bit gray.
    let img = image::open(out_dir.join("alpha.png")).unwrap();
    assert_eq!((img.width(), img.height()), (32, 32));

    // And the weight snapshot can warm-start a follow-up run.
    let warm_dir = dir.path().join("warm");
    let out = dipmatte(&[
        "extract",
        case.join("image.png").to_str().unwrap(),
        case.join("trimap.png").to_str().unwrap(),
        warm_dir.to_str().unwrap(),
        "--warm-start",
        out_dir.join("weights.bin").to_str().unwrap(),
        "--iters",
        "8",
        "--depth",
        "1",
        "--channels",
        "6",
        "--seed",
        "1",
        "--loss-threshold",
        "100.0",
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    // A generous threshold stops a warm run immediately.
    let loss = std::fs::read_to_string(warm_dir.join("loss.txt")).unwrap();
    assert_eq!(loss.lines().count(), 2);
}

#[test]
fn eval_of_ground_truth_against_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let case = dir.path().join("case");
    make_case(&case);
    let summary = dir.path().join("scores.txt");
    let out = dipmatte(&[
        "eval",
        case.join("gt_alpha.png").to_str().unwrap(),
        case.join("gt_alpha.png").to_str().unwrap(),
        case.join("trimap.png").to_str().unwrap(),
        "--summary",
        summary.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    let text = stdout(&out);
    let sad_line = text
        .lines()
        .find(|l| l.starts_with("sad_overall="))
        .expect("sad_overall line");
    let v: f64 = sad_line.split('=').nth(1).unwrap().parse().unwrap();
    assert_eq!(v, 0.0);
    assert_eq!(std::fs::read_to_string(&summary).unwrap(), text);
}

#[test]
fn composite_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let case = dir.path().join("case");
    make_case(&case);
    let out_path = dir.path().join("comp.png");
    // Compositing the ground truth over the original image is the identity
    // where alpha is 0 and the foreground color where alpha is 1.
    let out = dipmatte(&[
        "composite",
        case.join("gt_alpha.png").to_str().unwrap(),
        case.join("image.png").to_str().unwrap(),
        case.join("image.png").to_str().unwrap(),
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    let a = image::open(&out_path).unwrap().to_rgb8();
    let b = image::open(case.join("image.png")).unwrap().to_rgb8();
    assert_eq!(a.as_raw(), b.as_raw());
}

#[test]
fn synth_rejects_bad_sizes() {
    assert_eq!(code(&dipmatte(&["synth", "disk", "/tmp/x", "--size", "16x16"])), 2);
    assert_eq!(code(&dipmatte(&["synth", "disk", "/tmp/x", "--size", "64"])), 1);
}

#[test]
fn gradcheck_reports_per_op_lines() {
    let out = dipmatte(&["gradcheck", "--f64-gradcheck", "false"]);
    assert_eq!(code(&out), 0, "{out:?}");
    let text = stdout(&out);
    assert!(text.lines().filter(|l| l.starts_with("PASS ")).count() >= 17);
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let case = dir.path().join("case");
    make_case(&case);
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# run settings\niters = 3\ndepth = 1\nchannels = 6\nseed = 2\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = dipmatte(&[
        "extract",
        case.join("image.png").to_str().unwrap(),
        case.join("trimap.png").to_str().unwrap(),
        out_dir.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--iters",
        "5",
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    let loss = std::fs::read_to_string(out_dir.join("loss.txt")).unwrap();
    assert_eq!(loss.lines().count(), 6, "flag must override config iters");

    std::fs::write(&cfg, "unknown_key = 1\n").unwrap();
    let out = dipmatte(&[
        "extract",
        case.join("image.png").to_str().unwrap(),
        case.join("trimap.png").to_str().unwrap(),
        dir.path().join("out2").to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1, "unknown config keys are usage errors");
}

#[test]
fn video_runs_two_frames_and_reports_iterations() {
    let dir = tempfile::tempdir().unwrap();
    let case = dir.path().join("case");
    make_case(&case);
    let frames = dir.path().join("frames");
    let trimaps = dir.path().join("trimaps");
    std::fs::create_dir_all(&frames).unwrap();
    std::fs::create_dir_all(&trimaps).unwrap();
    for name in ["f0001.png", "f0002.png"] {
        std::fs::copy(case.join("image.png"), frames.join(name)).unwrap();
        std::fs::copy(case.join("trimap.png"), trimaps.join(name)).unwrap();
    }
    let out_dir = dir.path().join("out");
    let out = dipmatte(&[
        "video",
        frames.to_str().unwrap(),
        trimaps.to_str().unwrap(),
        out_dir.to_str().unwrap(),
        "--iters",
        "40",
        "--depth",
        "1",
        "--channels",
        "6",
        "--seed",
        "3",
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    assert!(out_dir.join("f0001/alpha.png").exists());
    assert!(out_dir.join("f0002/alpha.png").exists());
    let iters = std::fs::read_to_string(out_dir.join("iterations.txt")).unwrap();
    let counts: Vec<usize> = iters
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split_whitespace().last().unwrap().parse().unwrap())
        .collect();
    assert_eq!(counts.len(), 2);
    assert_eq!(counts[0], 40);
    assert!(counts[1] <= counts[0], "warm frame should not need more work");
}
