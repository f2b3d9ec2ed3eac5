use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lpkm_core::face::FaceTemplate;
use lpkm_core::io::{read_keypoints, write_motion};
use lpkm_core::motion::relative_driving;
use lpkm_core::trainer::{gen_dataset, gen_sample};

const TINY: &str = "[train]\nsteps = 4\nbatch = 2\nsamples = 6\nheld_out = 2\ncheckpoint_every = 0\n[render]\nimage_size = 32\n";

fn lpkm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lpkm"))
        .args(args)
        .env_remove("LPKM_SEED")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn ok(args: &[&str]) -> Output {
    let out = lpkm(args);
    assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.toml");
    fs::write(&path, TINY).unwrap();
    path.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&lpkm(&[])), 1);
    assert_eq!(code(&lpkm(&["train", "--stage", "nose", "--out", "x"])), 1);
    assert_eq!(code(&lpkm(&["--help"])), 0);
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_lpkm"))
        .args(["gen-data", "--out", s(dir.path()), "--count", "1"])
        .env("LPKM_SEED", "minus one")
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("LPKM_SEED"));
    // Enabling a branch without weights is a usage error too.
    let sweep = dir.path().join("sweep");
    assert_eq!(code(&lpkm(&["retarget-sweep", "--kind", "eyes", "--out", s(&sweep)])), 1);
}

#[test]
fn invalid_data_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.lpkm");
    fs::write(&junk, b"LPKM but not really").unwrap();
    assert_eq!(code(&lpkm(&["inspect", s(&junk)])), 2);
    assert_eq!(code(&lpkm(&["inspect", s(&dir.path().join("missing.lpkm"))])), 2);
    let motion = dir.path().join("motion.csv");
    fs::write(&motion, "scale,nonsense\n1,2\n").unwrap();
    let out = dir.path().join("anim");
    assert_eq!(code(&lpkm(&["animate", "--sample", "0", "--driving", s(&motion), "--out", s(&out)])), 2);
    let bad_cfg = dir.path().join("bad.toml");
    fs::write(&bad_cfg, "[train]\nsteps = \"many\"\n").unwrap();
    assert_eq!(code(&lpkm(&["gen-data", "--config", s(&bad_cfg), "--out", s(&out)])), 2);
}

#[test]
fn divergence_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("hot.toml");
    fs::write(&cfg, TINY.replacen("[train]\n", "[train]\nlr = 1e300\n", 1)).unwrap();
    let out = dir.path().join("run");
    let r = lpkm(&["train", "--config", s(&cfg), "--stage", "stitching", "--out", s(&out)]);
    assert_eq!(code(&r), 3, "{}", String::from_utf8_lossy(&r.stderr));
    // The last good network is still on disk.
    assert!(fs::read_dir(&out).unwrap().any(|e| e.unwrap().file_name().to_string_lossy().ends_with(".lpkm")));
}

#[test]
fn gen_data_is_reproducible_and_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    ok(&["gen-data", "--config", &cfg, "--out", s(&a)]);
    ok(&["gen-data", "--config", &cfg, "--out", s(&b)]);
    let seeded = Command::new(env!("CARGO_BIN_EXE_lpkm"))
        .args(["gen-data", "--config", &cfg, "--out", s(&c)])
        .env("LPKM_SEED", "5")
        .output()
        .unwrap();
    assert!(seeded.status.success());
    for f in ["canonical.csv", "source_kp.csv", "driving_kp.csv", "source_motion.csv", "driving_motion.csv", "conditions.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
        assert_ne!(fs::read(a.join(f)).unwrap(), fs::read(c.join(f)).unwrap(), "{f}");
    }
    assert_eq!(fs::read_dir(a.join("images")).unwrap().count(), 8);
    let kp = read_keypoints(fs::File::open(a.join("driving_kp.csv")).unwrap()).unwrap();
    let data = gen_dataset(0, 1).unwrap();
    assert_eq!(kp[0], data[0].driving_kp);
}

#[test]
fn train_inspect_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("st");
    ok(&["train", "--config", &cfg, "--stage", "stitching", "--out", s(&run)]);
    let loss = fs::read_to_string(run.join("stitching_loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 5);
    let summary = fs::read_to_string(run.join("stitching_summary.csv")).unwrap();
    assert!(summary.contains("heldout_shoulder_ratio"));
    let shown = ok(&["inspect", s(&run.join("stitching.lpkm"))]);
    let text = String::from_utf8(shown.stdout).unwrap();
    assert!(text.contains("126x128"), "{text}");
    assert!(text.contains("stitching"), "{text}");

    let eyes = dir.path().join("eyes");
    ok(&["train", "--config", &cfg, "--stage", "eyes", "--out", s(&eyes), "--target", "source"]);
    let sweep = dir.path().join("sweep");
    let w = eyes.join("eyes.lpkm");
    ok(&["retarget-sweep", "--config", &cfg, "--kind", "eyes", "--eyes-weights", s(&w), "--out", s(&sweep)]);
    assert_eq!(fs::read_dir(sweep.join("frames")).unwrap().count(), 9);
    let ratios = fs::read_to_string(sweep.join("ratios.csv")).unwrap();
    assert_eq!(ratios.lines().count(), 10);
    let ood = dir.path().join("ood");
    ok(&[
        "retarget-sweep", "--config", &cfg, "--kind", "eyes", "--eyes-weights", s(&w),
        "--start", "-0.2", "--end", "-0.2", "--out", s(&ood),
    ]);
    assert_eq!(fs::read_dir(ood.join("frames")).unwrap().count(), 1);
    // The wrong network for the branch is rejected as invalid data.
    let wrong = dir.path().join("wrong");
    let st = run.join("stitching.lpkm");
    let r = lpkm(&["retarget-sweep", "--config", &cfg, "--kind", "lip", "--lip-weights", s(&st), "--out", s(&wrong)]);
    assert_eq!(code(&r), 2);
}

#[test]
fn animate_without_flags_is_relative_driving() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let driving: Vec<_> = gen_dataset(4, 5).unwrap().iter().map(|s| s.driving).collect();
    let motion = dir.path().join("drv.csv");
    write_motion(fs::File::create(&motion).unwrap(), &driving).unwrap();
    let out = dir.path().join("anim");
    ok(&["animate", "--config", &cfg, "--sample", "3", "--driving", s(&motion), "--out", s(&out), "--reference"]);
    let src = gen_sample(&FaceTemplate::default(), 0, 3, 32).unwrap();
    let frames = read_keypoints(fs::File::open(out.join("keypoints.csv")).unwrap()).unwrap();
    assert_eq!(frames.len(), 5);
    for (i, x) in frames.iter().enumerate() {
        let expect = relative_driving(&src.canonical, &src.source, &driving[i], &driving[0]).unwrap();
        assert_eq!(*x, expect, "frame {i}");
    }
    assert!(frames[0].max_abs_diff(&src.source_kp) < 1e-9);

    let metrics = dir.path().join("metrics.csv");
    ok(&["eval", "--reference", s(&out), "--predicted", s(&out), "--out", s(&metrics)]);
    let text = fs::read_to_string(&metrics).unwrap();
    let mean = text.lines().last().unwrap();
    assert!(mean.starts_with("mean,99,"), "{mean}");
    assert!(text.lines().count() == 7);
}
