use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aptm::cli::{read_loss_log, RunConfig, CKPT_DIR, CONFIG_FILE, FINAL_CKPT, LOSS_LOG};

const TINY: &str = r#"
seed = 5
batch_size = 3
epochs = 3
warmup_steps = 2
peak_lr = 1e-3
floor_lr = 1e-4

[model]
proj_dim = 8

[model.image]
image_height = 16
image_width = 8
patch_size = 4
embed_dim = 8
num_layers = 1
num_heads = 2

[model.text]
embed_dim = 8
num_layers = 1
cross_layers = 1
num_heads = 2
"#;

fn aptm(args: &[&str]) -> Output {
    aptm_env(args, None)
}

fn aptm_env(args: &[&str], seed_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_aptm"));
    cmd.args(args).env_remove("APTM_SEED").env("RUST_LOG", "warn");
    if let Some(s) = seed_env {
        cmd.env("APTM_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthetic 7-pair manifest and the tiny config, in `dir`.
fn setup(dir: &Path) -> (PathBuf, PathBuf) {
    let data = dir.join("data");
    ok(aptm(&["synth", "--out", s(&data), "--pairs", "7", "--height", "48", "--width", "16"]));
    let config = dir.join("tiny.toml");
    fs::write(&config, TINY).unwrap();
    (data.join("manifest.jsonl"), config)
}

fn pretrain(manifest: &Path, config: &Path, run: &Path, extra: &[&str]) -> String {
    let mut args = vec!["pretrain", "--config", s(config), "--manifest", s(manifest), "--run-dir", s(run)];
    args.extend_from_slice(extra);
    ok(aptm(&args))
}

fn bytes(p: PathBuf) -> Vec<u8> {
    fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn prompts_prints_54_lines() {
    let out = ok(aptm(&["prompts"]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 54);
    assert!(lines.iter().all(|l| l.contains("the person")));
}

#[test]
fn annotate_text_prints_labels() {
    let out = ok(aptm(&["annotate", "--text", "a young woman with long hair and a backpack"]));
    let json: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(json["attributes"]["gender"], "female");
    assert_eq!(json["attributes"]["hair"], "long hair");
    assert_eq!(json["attributes"]["backpack"], "yes");
    assert_eq!(json["attributes"]["hat"], "no");
}

#[test]
fn bad_arguments_fail_cleanly() {
    let out = aptm(&["pretrain", "--manifest", "/nonexistent.jsonl", "--run-dir", "/tmp/x", "--batch_size=notanumber"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let out = aptm(&["eval", "--run-dir", "/nonexistent", "--manifest", "/nonexistent.jsonl"]);
    assert!(!out.status.success());
}

#[test]
fn overrides_and_seed_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, config) = setup(dir.path());
    let snapshot = |run: &Path| RunConfig::load(run.join(CONFIG_FILE)).unwrap();

    let run = dir.path().join("cfg");
    pretrain(&manifest, &config, &run, &["--epochs=1", "--model.text.num_heads=4", "--peak_lr=2e-3"]);
    let c = snapshot(&run);
    assert_eq!((c.seed, c.epochs, c.model.text.num_heads, c.peak_lr), (5, 1, 4, 2e-3));
    assert_eq!(c.model.text.vocab_size, fs::read_to_string(run.join("vocab.txt")).unwrap().lines().count());

    let run = dir.path().join("env");
    ok(aptm_env(
        &["pretrain", "--config", s(&config), "--manifest", s(&manifest), "--run-dir", s(&run), "--epochs=1"],
        Some("11"),
    ));
    assert_eq!(snapshot(&run).seed, 11);

    let run = dir.path().join("flag");
    ok(aptm_env(
        &["pretrain", "--config", s(&config), "--manifest", s(&manifest), "--run-dir", s(&run), "--epochs=1", "--seed", "12"],
        Some("11"),
    ));
    assert_eq!(snapshot(&run).seed, 12);

    let bad = aptm(&["pretrain", "--config", s(&config), "--manifest", s(&manifest), "--run-dir", s(&run), "--no_such_key=1"]);
    assert!(!bad.status.success());
}

#[test]
fn identical_runs_are_byte_identical_and_resume_matches() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, config) = setup(dir.path());
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    pretrain(&manifest, &config, &a, &[]);
    pretrain(&manifest, &config, &b, &[]);
    let files = |r: &Path| {
        let mut v = vec![r.join(LOSS_LOG), r.join(CKPT_DIR).join(FINAL_CKPT)];
        for e in 1..=3 {
            v.push(r.join(CKPT_DIR).join(format!("epoch_{e:04}.aptm")));
            v.push(r.join(CKPT_DIR).join(format!("state_{e:04}.aptm")));
        }
        v
    };
    for (x, y) in files(&a).into_iter().zip(files(&b)) {
        assert!(bytes(x.clone()) == bytes(y), "{} differs", x.display());
    }
    let log = read_loss_log(&a.join(LOSS_LOG)).unwrap();
    assert_eq!(log.len(), 9);
    assert!(log.iter().enumerate().all(|(i, l)| l.step == i as u64 + 1));

    // Stop after one epoch, then resume to the end.
    pretrain(&manifest, &config, &c, &["--stop_after_epoch=1"]);
    assert!(!c.join(CKPT_DIR).join(FINAL_CKPT).exists());
    assert_eq!(read_loss_log(&c.join(LOSS_LOG)).unwrap().len(), 3);
    pretrain(&manifest, &config, &c, &["--resume"]);
    assert!(bytes(a.join(LOSS_LOG)) == bytes(c.join(LOSS_LOG)), "resumed loss log differs");
    assert!(bytes(a.join(CKPT_DIR).join(FINAL_CKPT)) == bytes(c.join(CKPT_DIR).join(FINAL_CKPT)));

    // A different seed changes the trace.
    let d = dir.path().join("d");
    pretrain(&manifest, &config, &d, &["--seed", "6"]);
    assert!(bytes(a.join(LOSS_LOG)) != bytes(d.join(LOSS_LOG)));
}

#[test]
fn eval_attr_rec_and_checkpoint_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, config) = setup(dir.path());
    let run = dir.path().join("run");
    pretrain(&manifest, &config, &run, &["--epochs=1"]);

    let out = ok(aptm(&["eval", "--run-dir", s(&run), "--manifest", s(&manifest)]));
    let metrics: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(metrics["queries"], 7);
    for k in ["r1", "r5", "r10", "map"] {
        let v = metrics[k].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{k} = {v}");
    }
    assert!(metrics["r10"].as_f64().unwrap() == 1.0);
    let rankings = fs::read_to_string(run.join("rankings.jsonl")).unwrap();
    assert_eq!(rankings.lines().count(), 7);

    let reports = dir.path().join("reports");
    let out = ok(aptm(&["attr-rec", "--run-dir", s(&run), "--manifest", s(&manifest), "--out", s(&reports)]));
    let attr: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(attr["samples"], 7);
    assert!(reports.join("attr_metrics.json").exists());
    assert_eq!(fs::read_to_string(reports.join("attr_predictions.jsonl")).unwrap().lines().count(), 7);

    // A checkpoint from a wider model is rejected with a per-tensor diff.
    let wide = dir.path().join("wide");
    pretrain(&manifest, &config, &wide, &["--epochs=1", "--model.proj_dim=16"]);
    let bad = aptm(&[
        "eval",
        "--run-dir",
        s(&run),
        "--manifest",
        s(&manifest),
        "--checkpoint",
        s(&wide.join(CKPT_DIR).join(FINAL_CKPT)),
    ]);
    assert!(!bad.status.success());
    let err = String::from_utf8_lossy(&bad.stderr);
    assert!(err.contains("heads.image_proj.weight") && err.contains("[8, 16]") && err.contains("[8, 8]"), "{err}");

    // Finetuning from the pretrained run keeps its vocabulary and model shape.
    let ft = dir.path().join("ft");
    ok(aptm(&[
        "finetune",
        "--config",
        s(&config),
        "--manifest",
        s(&manifest),
        "--run-dir",
        s(&ft),
        "--init",
        s(&run),
        "--epochs=1",
        "--warmup_epochs=0",
    ]));
    assert_eq!(bytes(ft.join("vocab.txt")), bytes(run.join("vocab.txt")));
    let log = read_loss_log(&ft.join(LOSS_LOG)).unwrap();
    assert!(log.iter().all(|l| l.losses.iac == 0.0 && l.losses.iam == 0.0 && l.losses.mam == 0.0));
}

#[test]
fn annotate_and_filter_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _) = setup(dir.path());
    let out = dir.path().join("annotated.jsonl");
    let report = ok(aptm(&["annotate", "--manifest", s(&manifest), "--out", s(&out), "--overwrite"]));
    assert!(report.contains("7"));
    let original = fs::read_to_string(&manifest).unwrap();
    let annotated = fs::read_to_string(&out).unwrap();
    assert_eq!(original.lines().count(), annotated.lines().count());

    // The 48×16 synthetic images are all below the file-size threshold.
    let filtered = dir.path().join("filtered").join("manifest.jsonl");
    let report = ok(aptm(&["filter", "--manifest", s(&manifest), "--out", s(&filtered)]));
    let json: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(json["kept"], 0);
    assert_eq!(json["dropped"]["file_size"], 7);
    let report = ok(aptm(&["filter", "--manifest", s(&manifest), "--out", s(&filtered), "--filter.min_file_bytes=0"]));
    let json: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(json["kept"], 7);
}
