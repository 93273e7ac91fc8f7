use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_padapter"));
    c.env_remove("PADAPTER_JOBS");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Checks the one-line JSON error contract and returns the error kind.
fn error_kind(out: &Output) -> String {
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    let line = stderr.trim_end();
    assert!(!line.contains('\n'), "multi-line error: {stderr}");
    let v: serde_json::Value = serde_json::from_str(line).unwrap();
    assert!(v["message"].is_string());
    v["error"].as_str().unwrap().to_string()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn path(&self) -> &Path {
        self.dir.path()
    }
}

/// Tiny dataset and checkpoints shared by every test.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        ok(
            d,
            &[
                "gen-data", "--out", "data", "--count", "6", "--size", "32", "--seed", "3",
            ],
        );
        ok(
            d,
            &[
                "pretrain",
                "--data",
                "data",
                "--out",
                "base.ckpt",
                "--steps",
                "4",
                "--res",
                "16",
                "--dim",
                "16",
                "--heads",
                "2",
                "--layers",
                "1",
                "--batch",
                "2",
            ],
        );
        ok(
            d,
            &[
                "train-dca",
                "--base",
                "base.ckpt",
                "--data",
                "data",
                "--out",
                "dca.ckpt",
                "--steps",
                "3",
                "--batch",
                "2",
            ],
        );
        ok(
            d,
            &[
                "train-rpa",
                "--base",
                "base.ckpt",
                "--dca",
                "dca.ckpt",
                "--data",
                "data",
                "--out",
                "rpa.ckpt",
                "--steps",
                "2",
                "--batch",
                "2",
            ],
        );
        Fixture { dir }
    })
}

fn inpaint_args<'a>(out: &'a str, mask: &'a str) -> Vec<&'a str> {
    vec![
        "inpaint",
        "--image",
        "data/img_00000.ppm",
        "--mask",
        mask,
        "--prompt",
        "red circle | blue stripes",
        "--patch-prompt",
        "1:green square",
        "--base",
        "base.ckpt",
        "--dca",
        "dca.ckpt",
        "--rpa",
        "rpa.ckpt",
        "--steps",
        "3",
        "--seed",
        "5",
        "--out",
        out,
    ]
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap()
}

#[test]
fn inpaint_is_deterministic_across_runs_and_jobs() {
    let f = fixture();
    let d = f.path();
    ok(d, &inpaint_args("a.ppm", "data/mask_00000.pgm"));
    ok(d, &inpaint_args("b.ppm", "data/mask_00000.pgm"));
    let mut four = vec!["--jobs", "4"];
    four.extend(inpaint_args("c.ppm", "data/mask_00000.pgm"));
    ok(d, &four);
    let env_jobs = bin()
        .current_dir(d)
        .env("PADAPTER_JOBS", "3")
        .args(inpaint_args("e.ppm", "data/mask_00000.pgm"))
        .output()
        .unwrap();
    assert!(env_jobs.status.success());
    let a = read(d, "a.ppm");
    assert_eq!(a, read(d, "b.ppm"));
    assert_eq!(a, read(d, "c.ppm"));
    assert_eq!(a, read(d, "e.ppm"));

    let manifest: serde_json::Value = serde_json::from_slice(&read(d, "c.ppm.run.json")).unwrap();
    assert!(!manifest["argv"]
        .as_array()
        .unwrap()
        .iter()
        .any(|v| v == "--jobs"));
    assert_eq!(manifest["config"]["sampler"]["steps"], 3);
    assert_eq!(manifest["config"]["sampler"]["cfg_scale"], 7.0);
    assert!(manifest["inputs"]
        .as_object()
        .unwrap()
        .contains_key("rpa.ckpt"));
}

#[test]
fn all_zero_mask_copies_input_bytes() {
    let f = fixture();
    let d = f.path();
    let mask = [b"P5\n32 32\n255\n".as_slice(), &[0u8; 32 * 32]].concat();
    fs::write(d.join("zero.pgm"), mask).unwrap();
    ok(d, &inpaint_args("zero.ppm", "zero.pgm"));
    assert_eq!(read(d, "zero.ppm"), read(d, "data/img_00000.ppm"));
}

#[test]
fn replay_reproduces_recorded_outputs() {
    let f = fixture();
    let d = f.path();
    ok(d, &inpaint_args("r.ppm", "data/mask_00001.pgm"));
    let first = read(d, "r.ppm");
    fs::write(d.join("r.ppm"), b"stale").unwrap();
    ok(d, &["replay", "--manifest", "r.ppm.run.json"]);
    assert_eq!(read(d, "r.ppm"), first);

    let mut m: serde_json::Value = serde_json::from_slice(&read(d, "r.ppm.run.json")).unwrap();
    m["outputs"]["r.ppm"] = serde_json::json!("00");
    fs::write(d.join("tampered.json"), serde_json::to_vec(&m).unwrap()).unwrap();
    let out = run(d, &["replay", "--manifest", "tampered.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_kind(&out), "runtime");
}

#[test]
fn training_outputs_are_reproducible() {
    let f = fixture();
    let d = f.path();
    ok(
        d,
        &[
            "train-dca",
            "--base",
            "base.ckpt",
            "--data",
            "data",
            "--out",
            "dca2.ckpt",
            "--steps",
            "3",
            "--batch",
            "2",
        ],
    );
    assert_eq!(read(d, "dca.ckpt"), read(d, "dca2.ckpt"));
    ok(
        d,
        &[
            "gen-data", "--out", "data2", "--count", "6", "--size", "32", "--seed", "3",
        ],
    );
    for name in [
        "manifest.json",
        "img_00004.ppm",
        "mask_00004.pgm",
        "meta_00004.json",
    ] {
        assert_eq!(
            read(d, &format!("data/{name}")),
            read(d, &format!("data2/{name}"))
        );
    }
    let run_json: serde_json::Value =
        serde_json::from_slice(&read(d, "dca.ckpt.run.json")).unwrap();
    let hash = run_json["inputs"]["base.ckpt"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
}

#[test]
fn empty_dataset_is_valid() {
    let f = fixture();
    let d = f.path();
    ok(
        d,
        &["gen-data", "--out", "empty", "--count", "0", "--size", "32"],
    );
    let m: serde_json::Value = serde_json::from_slice(&read(d, "empty/manifest.json")).unwrap();
    assert_eq!(m["count"], 0);
    assert!(m["items"].as_array().unwrap().is_empty());
    let out = run(
        d,
        &[
            "pretrain", "--data", "empty", "--out", "x.ckpt", "--steps", "1",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_two_with_json() {
    let f = fixture();
    let d = f.path();
    let mut no_dca = inpaint_args("n.ppm", "data/mask_00000.pgm");
    let at = no_dca.iter().position(|a| *a == "--dca").unwrap();
    no_dca.drain(at..at + 2);
    let cases: Vec<Vec<&str>> = vec![
        no_dca,
        vec!["frobnicate"],
        vec!["--jobs", "0", "gen-data", "--out", "z"],
        vec!["gen-data", "--out", "z", "--mix", "1.5"],
        {
            let mut v = inpaint_args("n.ppm", "data/mask_00000.pgm");
            let p = v
                .iter()
                .position(|a| *a == "red circle | blue stripes")
                .unwrap();
            v[p] = "unicorn";
            v
        },
        {
            let mut v = inpaint_args("n.ppm", "data/mask_00000.pgm");
            let p = v.iter().position(|a| *a == "data/mask_00000.pgm").unwrap();
            v[p] = "data/img_00001.ppm";
            v
        },
    ];
    for args in cases {
        let out = run(d, &args);
        assert_eq!(
            out.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert_eq!(error_kind(&out), "usage", "{args:?}");
    }
    assert!(!d.join("n.ppm").exists());

    let out = run(d, &["pretrain", "--data", "missing", "--out", "x.ckpt"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_kind(&out), "runtime");
    assert!(run(d, &["--help"]).status.success());
}

#[test]
fn eval_writes_report_and_manifest() {
    let f = fixture();
    let d = f.path();
    let cfg = serde_json::json!({
        "data": "data",
        "base": "base.ckpt",
        "seeds": [0, 1],
        "limit": 2,
        "sampler": {"steps": 2, "cfg_scale": 2.0},
        "arms": [{"name": "base", "mode": "base"}, {"name": "dca", "mode": "stage1", "dca": "dca.ckpt"}]
    });
    fs::write(
        d.join("ablation.json"),
        serde_json::to_vec_pretty(&cfg).unwrap(),
    )
    .unwrap();
    ok(
        d,
        &["eval", "--config", "ablation.json", "--out", "report.json"],
    );
    ok(
        d,
        &[
            "--jobs",
            "2",
            "eval",
            "--config",
            "ablation.json",
            "--out",
            "report2.json",
        ],
    );
    assert_eq!(read(d, "report.json"), read(d, "report2.json"));
    let report: serde_json::Value = serde_json::from_slice(&read(d, "report.json")).unwrap();
    assert_eq!(report["per_image"].as_array().unwrap().len(), 8);
    assert_eq!(report["seeds"], serde_json::json!([0, 1]));
    assert!(report["aggregates"]["delta"]["masked_mse"]["median"].is_number());
    assert_eq!(report["config"]["sampler"]["steps"], 2);
    assert!(d.join("report.json.run.json").exists());

    let bad = serde_json::json!({
        "data": "data", "base": "base.ckpt", "seeds": [0],
        "arms": [{"name": "a", "mode": "stage1"}]
    });
    fs::write(d.join("bad.json"), serde_json::to_vec(&bad).unwrap()).unwrap();
    let out = run(
        d,
        &["eval", "--config", "bad.json", "--out", "bad_report.json"],
    );
    assert_eq!(out.status.code(), Some(2));
}
