//! End-to-end runs of the `kitro` binary.

use std::path::Path;
use std::process::{Command, Output};

use kitro::bench::synth::read_samples_jsonl;
use kitro::bench::PelvisMode;
use kitro::cli::read_results;
use kitro::refiner::RefineJob;
use kitro::skeleton::StateRecord;
use kitro::{refine_batch, RefineConfig, SkeletonModel};

fn kitro(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kitro"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

fn generate(dir: &Path, name: &str, extra: &[&str]) -> String {
    let out = path(dir, name);
    let mut args = vec!["generate", "-n", "6", "--seed", "3", "-o", &out];
    args.extend_from_slice(extra);
    let run = kitro(&args);
    assert_eq!(
        run.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    out
}

fn json(path: &str) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn generate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = generate(dir.path(), "a.jsonl", &[]);
    let b = generate(dir.path(), "b.jsonl", &[]);
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn zero_samples_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "x.jsonl");
    assert_eq!(
        kitro(&["generate", "-n", "0", "-o", &out]).status.code(),
        Some(2)
    );
    assert_eq!(kitro(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "r.jsonl");
    let missing = path(dir.path(), "none.jsonl");
    assert_eq!(
        kitro(&["refine", "-i", &missing, "-o", &out]).status.code(),
        Some(3)
    );
}

#[test]
fn existing_output_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let a = generate(dir.path(), "a.jsonl", &[]);
    assert_eq!(
        kitro(&["generate", "-n", "2", "-o", &a]).status.code(),
        Some(3)
    );
    assert_eq!(
        kitro(&["generate", "-n", "2", "-o", &a, "--force"])
            .status
            .code(),
        Some(0)
    );
}

#[test]
fn zero_iterations_returns_the_input() {
    let dir = tempfile::tempdir().unwrap();
    let s = generate(dir.path(), "s.jsonl", &[]);
    let r = path(dir.path(), "r.jsonl");
    assert_eq!(
        kitro(&["refine", "-i", &s, "-o", &r, "--iterations", "0"])
            .status
            .code(),
        Some(0)
    );
    let samples = read_samples_jsonl(&std::fs::read_to_string(&s).unwrap()).unwrap();
    for (rec, sample) in read_results(Path::new(&r)).unwrap().iter().zip(&samples) {
        assert_eq!(rec.state, StateRecord::from_state(&sample.init));
    }
}

#[test]
fn disabled_pose_stage_keeps_the_pose() {
    let dir = tempfile::tempdir().unwrap();
    let s = generate(dir.path(), "s.jsonl", &[]);
    let r = path(dir.path(), "r.jsonl");
    assert_eq!(
        kitro(&["refine", "-i", &s, "-o", &r, "--no-pose"])
            .status
            .code(),
        Some(0)
    );
    let samples = read_samples_jsonl(&std::fs::read_to_string(&s).unwrap()).unwrap();
    for (rec, sample) in read_results(Path::new(&r)).unwrap().iter().zip(&samples) {
        assert_eq!(rec.state.to_state().unwrap().theta, sample.init.theta);
    }
}

#[test]
fn cli_refine_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let s = generate(dir.path(), "s.jsonl", &[]);
    let r = path(dir.path(), "r.jsonl");
    assert_eq!(
        kitro(&["refine", "-i", &s, "-o", &r, "--threads", "2"])
            .status
            .code(),
        Some(0)
    );
    let samples = read_samples_jsonl(&std::fs::read_to_string(&s).unwrap()).unwrap();
    let jobs: Vec<RefineJob> = samples.iter().map(RefineJob::from_sample).collect();
    let lib = refine_batch(
        &SkeletonModel::canonical(),
        &jobs,
        &RefineConfig::default(),
        1,
    )
    .unwrap();
    for (rec, res) in read_results(Path::new(&r))
        .unwrap()
        .iter()
        .zip(&lib.results)
    {
        assert_eq!(rec.state, StateRecord::from_state(&res.state));
    }
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let s = generate(dir.path(), "s.jsonl", &[]);
    let mut texts = Vec::new();
    for threads in ["1", "4"] {
        let r = path(dir.path(), &format!("r{threads}.jsonl"));
        let t = path(dir.path(), &format!("t{threads}.json"));
        let run = kitro(&[
            "refine",
            "-i",
            &s,
            "-o",
            &r,
            "--trace",
            &t,
            "--threads",
            threads,
        ]);
        assert_eq!(run.status.code(), Some(0));
        texts.push((std::fs::read(&r).unwrap(), std::fs::read(&t).unwrap()));
    }
    assert_eq!(texts[0], texts[1]);
}

#[test]
fn ground_truth_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let s = generate(
        dir.path(),
        "s.jsonl",
        &[
            "--rot-sigma-deg",
            "0",
            "--beta-sigma",
            "0",
            "--trans-sigma-m",
            "0",
        ],
    );
    let r = path(dir.path(), "r.jsonl");
    let e = path(dir.path(), "e.json");
    assert_eq!(
        kitro(&["refine", "-i", &s, "-o", &r, "--iterations", "0"])
            .status
            .code(),
        Some(0)
    );
    let run = kitro(&[
        "eval",
        "--samples",
        &s,
        "--results",
        &r,
        "-o",
        &e,
        "--pelvis-mode",
        "hip-mean",
    ]);
    assert_eq!(
        run.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let report = json(&e);
    assert_eq!(
        report["pelvis_mode"],
        serde_json::to_value(PelvisMode::HipMean).unwrap()
    );
    for key in ["mpjpe", "pa_mpjpe", "reproj_px"] {
        assert!(report["refined"][key].as_f64().unwrap() < 1e-6, "{key}");
    }
}

#[test]
fn ablate_writes_every_row() {
    let dir = tempfile::tempdir().unwrap();
    let s = generate(dir.path(), "s.jsonl", &[]);
    let a = path(dir.path(), "a.json");
    let run = kitro(&[
        "ablate",
        "--samples",
        &s,
        "-o",
        &a,
        "--iterations",
        "2",
        "--baseline-steps",
        "5",
    ]);
    assert_eq!(
        run.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let rows = json(&a)["rows"].as_array().unwrap().clone();
    let names: Vec<&str> = rows.iter().map(|r| r["name"].as_str().unwrap()).collect();
    for want in [
        "camera+shape+pose",
        "none",
        "tree+soft",
        "greedy+hard",
        "large-focal",
        "reprojection-baseline",
    ] {
        assert!(names.contains(&want), "{want}");
    }
    assert_eq!(rows.len(), 14);
}
