use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn resmatch(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_resmatch"))
        .args(args)
        .current_dir(cwd)
        .env_remove("RESMATCH_OUT")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    fs::write(&path, "image_size = 32\nlearning_rate = 1e-3\nepochs = 1\n").unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn missing_data_source_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = resmatch(&["train", "--epochs", "1"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("ERROR:usage:"), "{}", stderr(&out));
}

#[test]
fn unknown_flags_and_empty_ratio_lists_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = resmatch(&["train", "--synthetic", "8", "--bogus"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("ERROR:usage:"));
    let out = resmatch(&["sweep", "--synthetic", "8", "--ratios", ""], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--ratios"));
}

#[test]
fn runtime_failures_exit_1_with_a_coded_line() {
    let tmp = tempfile::tempdir().unwrap();
    let out = resmatch(&["train", "--dataset", "does-not-exist"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    let line = err.lines().last().unwrap();
    assert!(line.starts_with("ERROR:io:"), "{err}");

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "tau = 2.0\n").unwrap();
    let out = resmatch(
        &["train", "--synthetic", "8", "--config", bad.to_str().unwrap()],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("ERROR:config:"), "{}", stderr(&out));
}

#[test]
fn supervised_smoke_run_writes_results() {
    let tmp = tempfile::tempdir().unwrap();
    let out = resmatch(
        &[
            "train",
            "--synthetic",
            "64",
            "--mode",
            "supervised",
            "--epochs",
            "1",
            "--out",
            "run",
        ],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let run = tmp.path().join("run");
    for f in ["results.jsonl", "summary.json", "last.ckpt", "best.ckpt"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let text = fs::read_to_string(run.join("results.jsonl")).unwrap();
    let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines[0]["config"]["mode"], "supervised");
    let last = lines.last().unwrap();
    for key in ["step", "epoch", "L_sup", "L_unsup", "L_total", "mean_s", "oIoU"] {
        assert!(last.get(key).is_some(), "missing {key} in {last}");
    }
}

#[test]
fn resmatch_header_echoes_default_hyperparameters() {
    let tmp = tempfile::tempdir().unwrap();
    let out = resmatch(
        &[
            "train",
            "--synthetic",
            "16",
            "--mode",
            "resmatch",
            "--epochs",
            "0",
            "--out",
            "run",
        ],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(tmp.path().join("run/results.jsonl")).unwrap();
    let header: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    let c = &header["config"];
    assert_eq!(c["mode"], "resmatch");
    assert_eq!(c["lambda_x"], 5.0);
    assert_eq!(c["lambda_u"], 2.0);
    assert_eq!(c["lambda_t"], 0.8);
    assert_eq!(c["tau"], 0.7);
    assert_eq!(c["learning_rate"], 1e-5);
    assert_eq!(c["batch_size_labeled"], 2);
    assert_eq!(c["batch_size_unlabeled"], 2);
    assert_eq!(c["epochs"], 0);
    assert_eq!(c["image_size"], 480);
}

#[test]
fn out_dir_defaults_to_env() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = Command::new(env!("CARGO_BIN_EXE_resmatch"))
        .args(["train", "--synthetic", "8", "--epochs", "0", "--config", &cfg])
        .current_dir(tmp.path())
        .env("RESMATCH_OUT", tmp.path().join("from-env"))
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(tmp.path().join("from-env/results.jsonl").exists());
}

#[test]
fn gen_data_split_train_and_eval_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let ok = |out: Output| assert!(out.status.success(), "{}", stderr(&out));
    ok(resmatch(
        &[
            "gen-data",
            "--n",
            "16",
            "--image-size",
            "32",
            "--seed",
            "4",
            "--out",
            "data",
        ],
        tmp.path(),
    ));
    ok(resmatch(
        &[
            "make-split",
            "--dataset",
            "data",
            "--ratio",
            "0.25",
            "--seed",
            "4",
            "--out",
            "split.json",
        ],
        tmp.path(),
    ));
    let split: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("split.json")).unwrap()).unwrap();
    assert_eq!(split["labeled"].as_array().unwrap().len(), 4);
    ok(resmatch(
        &[
            "train",
            "--config",
            &cfg,
            "--dataset",
            "data",
            "--split",
            "split.json",
            "--out",
            "run",
        ],
        tmp.path(),
    ));
    let out = resmatch(
        &[
            "eval",
            "--checkpoint",
            "run/last.ckpt",
            "--dataset",
            "data",
            "--config",
            &cfg,
        ],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["count"], 4);
    let oiou = report["oIoU"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&oiou));
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn preview_is_deterministic_and_mirrors_position_words() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = |out: Output| assert!(out.status.success(), "{}", stderr(&out));
    ok(resmatch(
        &[
            "gen-data",
            "--n",
            "24",
            "--image-size",
            "32",
            "--seed",
            "1",
            "--out",
            "data",
        ],
        tmp.path(),
    ));
    for dir in ["p1", "p2"] {
        ok(resmatch(
            &[
                "preview-aug",
                "--dataset",
                "data",
                "--n",
                "24",
                "--seed",
                "5",
                "--out",
                dir,
            ],
            tmp.path(),
        ));
    }
    let a = read_dir_bytes(&tmp.path().join("p1"));
    assert_eq!(a.len(), 3 * 24 + 1);
    assert_eq!(a, read_dir_bytes(&tmp.path().join("p2")));
    assert!(a
        .iter()
        .any(|(name, bytes)| name.ends_with(".ppm") && bytes.starts_with(b"P6")));

    let text = fs::read_to_string(tmp.path().join("p1/text.txt")).unwrap();
    let mut mirrored = 0;
    for block in text.split("\n\n").filter(|b| !b.trim().is_empty()) {
        let field = |key: &str| {
            block
                .lines()
                .find_map(|l| l.strip_prefix(key))
                .unwrap_or_else(|| panic!("{key} missing in {block}"))
                .to_string()
        };
        let flipped = field("flipped: ") == "true";
        let original = field("original: ");
        let weak = field("weak: ");
        if flipped && original.contains("left") {
            assert_eq!(weak, original.replace("left", "right"));
            mirrored += 1;
        } else if flipped && original.contains("right") {
            assert_eq!(weak, original.replace("right", "left"));
            mirrored += 1;
        } else if !flipped {
            assert_eq!(weak, original);
        }
        for line in block.lines().filter(|l| l.starts_with("candidate ")) {
            let theta: f64 = line["candidate ".len()..].split(':').next().unwrap().parse().unwrap();
            assert!(theta >= 0.8, "{line}");
        }
    }
    assert!(mirrored > 0, "no flipped left/right sample among the previews:\n{text}");
}

#[test]
fn sweep_writes_one_row_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = resmatch(
        &[
            "sweep",
            "--synthetic",
            "24",
            "--config",
            &cfg,
            "--ratios",
            "0.1",
            "--seeds",
            "1,2,3",
            "--out",
            "sweep",
        ],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let table = fs::read_to_string(tmp.path().join("sweep/summary.tsv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "ratio\tseed\tmode\toIoU");
    assert_eq!(lines.len(), 4);
    let seeds: Vec<&str> = lines[1..].iter().map(|l| l.split('\t').nth(1).unwrap()).collect();
    assert_eq!(seeds, ["1", "2", "3"]);
}

#[test]
fn identical_invocations_give_identical_results() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    for dir in ["a", "b"] {
        let out = resmatch(
            &[
                "train",
                "--synthetic",
                "16",
                "--config",
                &cfg,
                "--seed",
                "9",
                "--out",
                dir,
            ],
            tmp.path(),
        );
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let body = |d: &str| {
        let text = fs::read_to_string(tmp.path().join(d).join("results.jsonl")).unwrap();
        text.lines().skip(1).map(str::to_string).collect::<Vec<_>>()
    };
    assert_eq!(body("a"), body("b"));
    assert_eq!(
        fs::read(tmp.path().join("a/last.ckpt")).unwrap(),
        fs::read(tmp.path().join("b/last.ckpt")).unwrap()
    );
}
