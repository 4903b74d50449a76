use std::fs;
use std::path::Path;

use humanslam_cli::run;
use serde_json::Value;

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn cli(args: &[&str]) -> Outcome {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run(std::iter::once("humanslam").chain(args.iter().copied()), &mut out, &mut err);
    Outcome { code, stdout: String::from_utf8(out).unwrap(), stderr: String::from_utf8(err).unwrap() }
}

fn json(o: &Outcome) -> Value {
    serde_json::from_str(&o.stdout).unwrap_or_else(|e| panic!("{}: {}\n{}", e, o.stdout, o.stderr))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, seed: u64, config: Option<&Path>) {
    let seed = seed.to_string();
    let mut args = vec!["synth", "--seed", &seed, "--out-dir", p(dir)];
    if let Some(c) = config {
        args.extend(["--config", p(c)]);
    }
    let o = cli(&args);
    assert_eq!(o.code, 0, "{}", o.stderr);
}

#[test]
fn stages_compose_into_the_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let scen = tmp.path().join("scen");
    synth(&scen, 7, None);
    let staged = tmp.path().join("staged");
    for stage in ["calibrate", "slam", "place", "denoise", "eval"] {
        let o = cli(&[stage, "--input", p(&scen), "--out-dir", p(&staged)]);
        assert_eq!(o.code, 0, "{}: {}", stage, o.stderr);
        assert_eq!(json(&o)["stage"].as_str().unwrap_or("eval"), stage);
    }
    let piped = tmp.path().join("piped");
    let o = cli(&["pipeline", "--input", p(&scen), "--out-dir", p(&piped)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    for f in ["trajectory.txt", "scene.ply", "bodies_denoised.jsonl", "metrics.json", "calibration.json"] {
        assert_eq!(fs::read(staged.join(f)).unwrap(), fs::read(piped.join(f)).unwrap(), "{}", f);
    }
    let m = &json(&o)["stages"]["eval"];
    assert!(m["ate_mm"].as_f64().unwrap() < 1.0);
}

#[test]
fn calibrate_recovers_scale_two_offset_half() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"synth": {"depth_scale": 2.0, "depth_offset": 0.5}}"#).unwrap();
    let scen = tmp.path().join("scen");
    synth(&scen, 11, Some(&cfg));
    let o = cli(&["calibrate", "--input", p(&scen), "--out-dir", p(&tmp.path().join("run"))]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let s = json(&o)["s"].as_f64().unwrap();
    assert!((1.998..=2.002).contains(&s), "s = {}", s);
}

#[test]
fn eval_of_identical_trajectories_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let scen = tmp.path().join("scen");
    synth(&scen, 2, None);
    let run_dir = tmp.path().join("run");
    fs::create_dir_all(&run_dir).unwrap();
    fs::copy(scen.join("gt/trajectory.txt"), run_dir.join("trajectory.txt")).unwrap();
    let o = cli(&["eval", "--input", p(&scen), "--out-dir", p(&run_dir)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let m = json(&o);
    assert_eq!(m["ate_mm"].as_f64().unwrap(), 0.0);
    assert!(m["wa_mpjpe_mm"].is_null());
    let on_disk: Value = serde_json::from_slice(&fs::read(run_dir.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(on_disk, m);
}

#[test]
fn bad_input_exits_one_and_names_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let scen = tmp.path().join("scen");
    synth(&scen, 3, None);
    let run_dir = tmp.path().join("run");

    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"slam": {"depth_wieght": 1.0}}"#).unwrap();
    let o = cli(&["calibrate", "--input", p(&scen), "--out-dir", p(&run_dir), "--config", p(&cfg)]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("cfg.json") && o.stderr.contains("depth_wieght"), "{}", o.stderr);

    let o = cli(&["slam", "--input", p(&scen), "--out-dir", p(&run_dir)]);
    assert_eq!(o.code, 1, "slam without calibrated depth");
    assert!(o.stderr.contains("000000.json"), "{}", o.stderr);

    fs::write(scen.join("masks/000002.pgm"), b"P5\n3 3\n255\n").unwrap();
    let o = cli(&["calibrate", "--input", p(&scen), "--out-dir", p(&run_dir)]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("000002.pgm"), "{}", o.stderr);

    assert_eq!(cli(&["calibrate", "--out-dir", p(&run_dir)]).code, 1);
    assert_eq!(cli(&["no-such-command"]).code, 1);
    assert_eq!(cli(&["--help"]).code, 0);
}

#[test]
fn numerical_failure_exits_two_with_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let scen = tmp.path().join("scen");
    synth(&scen, 4, None);
    let run_dir = tmp.path().join("run");
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"slam": {"ba": {"max_iters": 1}}}"#).unwrap();
    assert_eq!(cli(&["calibrate", "--input", p(&scen), "--out-dir", p(&run_dir)]).code, 0);
    let o = cli(&["slam", "--input", p(&scen), "--out-dir", p(&run_dir), "--config", p(&cfg)]);
    assert_eq!(o.code, 2, "{}", o.stderr);
    let diag: Value = serde_json::from_slice(&fs::read(run_dir.join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["stage"], "slam");
    assert!(diag["details"]["cost_trace"].as_array().unwrap().len() >= 2);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for d in [&a, &b] {
        let o = cli(&["pipeline", "--seed", "5", "--out-dir", p(d)]);
        assert_eq!(o.code, 0, "{}", o.stderr);
    }
    let mut files = Vec::new();
    let mut stack = vec![a.clone()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push(path);
            }
        }
    }
    assert!(files.len() > 30);
    for f in files {
        let rel = f.strip_prefix(&a).unwrap();
        assert_eq!(fs::read(&f).unwrap(), fs::read(b.join(rel)).unwrap(), "{}", rel.display());
    }
}
