use std::fs;
use std::path::Path;
use std::process::Command;

use clap::Parser;
use foundpad::checkpoint::Checkpoint;
use foundpad::model::is_lora_tensor;
use foundpad::zero_shot::PromptEmbeddingPair;
use foundpad_cli::{run, Cli, CliError};
use ndarray::Array1;

fn cli(args: &[&str]) -> Result<String, CliError> {
    let parsed = Cli::try_parse_from(std::iter::once("foundpad").chain(args.iter().copied())).expect("arguments parse");
    let mut out = Vec::new();
    run(parsed, &mut out)?;
    Ok(String::from_utf8(out).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, domains: usize, per_class: usize) -> std::path::PathBuf {
    let data = dir.join("data");
    cli(&["synth", "--out-dir", p(&data), "--domains", &domains.to_string(), "--per-class", &per_class.to_string(), "--seed", "3"]).unwrap();
    data.join("manifest.jsonl")
}

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn train_eval_merge_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 2, 4);
    let cfg = write_config(
        dir.path(),
        "run.json",
        &format!(
            r#"{{"encoder": "toy", "adapter": {{"rank": 2}},
                "train": {{"mode": "foundpad", "epochs": 2, "batch_size": 4, "lr_backbone": 0.01, "lr_head": 0.01, "init_std": 0.3}},
                "manifests": [{:?}], "output_dir": "out"}}"#,
            p(&manifest)
        ),
    );
    let summary = dir.path().join("train.json");
    let text = cli(&["train", "--config", p(&cfg), "--seed", "5", "--out", p(&summary)]).unwrap();
    assert!(text.starts_with("trained foundpad on 16 samples"));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(summary["seed"], 5);
    let log = fs::read_to_string(dir.path().join("out/loss.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert!(log.lines().all(|l| l.contains("\"mean_loss\"") && l.contains("\"lr\"")));

    let final_ck = dir.path().join("out/final.fpad");
    let loaded = Checkpoint::load(&final_ck).unwrap();
    assert_eq!(loaded.header.seed, 5);
    assert_eq!(loaded.header.epoch, 2);
    assert_eq!(loaded.header.preset.as_deref(), Some("toy"));

    let merged = dir.path().join("merged.fpad");
    cli(&["merge", "--checkpoint", p(&final_ck), "--output", p(&merged)]).unwrap();
    let archive = foundpad::archive::TensorArchive::read(&merged).unwrap();
    assert_eq!(archive.names().filter(|n| is_lora_tensor(n)).count(), 0);

    let scores = |ck: &Path, name: &str| {
        let path = dir.path().join(name);
        cli(&["eval", "--checkpoint", p(ck), "--manifest", p(&manifest), "--scores", p(&path)]).unwrap();
        foundpad::metrics::read_scores(&path).unwrap()
    };
    let a = scores(&final_ck, "a.jsonl");
    let b = scores(&merged, "b.jsonl");
    assert_eq!(a.len(), 16);
    for (x, y) in a.iter().zip(&b) {
        assert!((x.score - y.score).abs() <= 1e-5, "{} vs {}", x.score, y.score);
    }
}

#[test]
fn merge_with_zero_b_keeps_base_weights() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 1, 2);
    let cfg = write_config(
        dir.path(),
        "run.json",
        &format!(r#"{{"encoder": "toy", "adapter": {{"rank": 2}}, "train": {{"mode": "foundpad", "epochs": 0}}, "manifests": [{:?}], "output_dir": "out"}}"#, p(&manifest)),
    );
    cli(&["train", "--config", p(&cfg)]).unwrap();
    let ck = dir.path().join("out/final.fpad");
    let merged = dir.path().join("merged.fpad");
    cli(&["merge", "--checkpoint", p(&ck), "--output", p(&merged)]).unwrap();
    let before = foundpad::archive::TensorArchive::read(&ck).unwrap();
    let after = foundpad::archive::TensorArchive::read(&merged).unwrap();
    for t in &after.tensors {
        assert_eq!(t, before.get(&t.name).unwrap(), "{}", t.name);
    }
    assert_eq!(after.tensors.len() + 4 * 2, before.tensors.len());
}

#[test]
fn eval_on_perfect_scores() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.jsonl");
    fs::write(
        &scores,
        r#"{"score":0.9,"label":"bona-fide","domain":"M"}
{"score":0.8,"label":"bona-fide","domain":"M"}
{"score":0.2,"label":"attack","domain":"M"}
{"score":0.1,"label":"attack","domain":"M"}
"#,
    )
    .unwrap();
    let out = dir.path().join("report.json");
    let text = cli(&["eval", "--from-scores", p(&scores), "--out", p(&out)]).unwrap();
    assert!(text.starts_with("HTER(%) / AUC(%) = 0.00 / 100.00"), "{text}");
    let text = cli(&["eval", "--from-scores", p(&scores), "--policy", "fixed"]).unwrap();
    assert!(text.contains("0.00 / 100.00") && text.contains("fixed(0.5)"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(report["hter_pct"], 0.0);
    assert_eq!(report["auc_pct"], 100.0);
}

#[test]
fn protocol_with_missing_domain_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 3, 1);
    let text = fs::read_to_string(&manifest).unwrap();
    let renamed = text.replace("\"D1\"", "\"O\"").replace("\"D2\"", "\"C\"").replace("\"D3\"", "\"M\"");
    let ocm = dir.path().join("data/ocm.jsonl");
    fs::write(&ocm, renamed).unwrap();
    let cfg = write_config(dir.path(), "run.json", &format!(r#"{{"encoder": "toy", "manifests": [{:?}]}}"#, p(&ocm)));
    let err = cli(&["protocol", "O&C&I→M", "--config", p(&cfg)]).unwrap_err();
    assert_eq!(err.kind(), "missing_domain");
    assert!(err.to_string().ends_with(" I"), "{err}");
    let line = err.to_json_line();
    assert!(!line.contains('\n'));
    let v: serde_json::Value = serde_json::from_str(&line).unwrap();
    assert_eq!(v["error"], "missing_domain");
}

#[test]
fn protocol_run_reports_held_out_domain() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 3, 3);
    let cfg = write_config(
        dir.path(),
        "run.json",
        &format!(
            r#"{{"encoder": "toy", "adapter": {{"rank": 2}}, "train": {{"mode": "fe", "epochs": 1, "batch_size": 4}}, "manifests": [{:?}]}}"#,
            p(&manifest)
        ),
    );
    let out = dir.path().join("protocol.json");
    let text = cli(&["protocol", "D1&D2->D3", "--config", p(&cfg), "--out", p(&out)]).unwrap();
    assert!(text.starts_with("D1&D2→D3 [fe] "), "{text}");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(report["domains"][0]["domain"], "D3");
    assert_eq!(report["domains"][0]["attacks"], 3);
}

#[test]
fn zeroshot_scores_with_prompt_file() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 1, 3);
    let cfg = write_config(
        dir.path(),
        "run.json",
        &format!(r#"{{"encoder": "toy", "train": {{"mode": "fe", "epochs": 0}}, "manifests": [{:?}], "output_dir": "out"}}"#, p(&manifest)),
    );
    cli(&["train", "--config", p(&cfg)]).unwrap();
    let prompts = dir.path().join("prompts.fpad");
    let pair = PromptEmbeddingPair::new(Array1::linspace(-1.0, 1.0, 8), Array1::linspace(1.0, -0.5, 8)).unwrap();
    pair.save(&prompts).unwrap();
    let ck = dir.path().join("out/final.fpad");
    let text = cli(&["zeroshot", "--checkpoint", p(&ck), "--prompts", p(&prompts), "--manifest", p(&manifest)]).unwrap();
    assert!(text.contains("3 attack, 3 bona-fide"), "{text}");

    let short = dir.path().join("short.fpad");
    PromptEmbeddingPair::new(Array1::ones(4), Array1::zeros(4) + 0.5).unwrap().save(&short).unwrap();
    let err = cli(&["zeroshot", "--checkpoint", p(&ck), "--prompts", p(&short), "--manifest", p(&manifest)]).unwrap_err();
    assert_eq!(err.kind(), "shape");
}

#[test]
fn config_errors_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write_config(dir.path(), "a.json", r#"{"encoder": "toy", "epochs": 3}"#);
    assert_eq!(cli(&["train", "--config", p(&unknown)]).unwrap_err().kind(), "schema");
    let mismatch = write_config(dir.path(), "b.json", r#"{"encoder": "toy", "adapter": {"rank": 99}, "train": {"mode": "foundpad"}}"#);
    assert_eq!(cli(&["train", "--config", p(&mismatch)]).unwrap_err().kind(), "config");
    let missing = dir.path().join("nope.json");
    assert_eq!(cli(&["train", "--config", p(&missing)]).unwrap_err().kind(), "io");
    let no_manifest = write_config(dir.path(), "c.json", r#"{"encoder": "toy", "manifests": ["absent.jsonl"]}"#);
    assert_eq!(cli(&["train", "--config", p(&no_manifest)]).unwrap_err().kind(), "io");
}

#[test]
fn binary_reports_single_line_json_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.json", r#"{"encoder": "toy", "bogus": true}"#);
    let out = Command::new(env!("CARGO_BIN_EXE_foundpad"))
        .args(["train", "--config", p(&cfg)])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.trim_end().lines().count(), 1);
    let v: serde_json::Value = serde_json::from_str(stderr.trim()).unwrap();
    assert_eq!(v["error"], "schema");
}

#[test]
fn synth_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = synth(a.path(), 2, 2);
    let mb = synth(b.path(), 2, 2);
    assert_eq!(fs::read_to_string(&ma).unwrap(), fs::read_to_string(&mb).unwrap());
    let img = "data/D2/attack/00001.png";
    assert_eq!(fs::read(a.path().join(img)).unwrap(), fs::read(b.path().join(img)).unwrap());
}
