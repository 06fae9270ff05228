use std::path::Path;
use std::process::{Command, Output};

fn fewshot(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fewshot"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = fewshot(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

const SMALL: [&str; 10] = [
    "--vocab-buckets", "4096", "--embed-dim", "16", "--hidden-dim", "16", "--out-dim", "16", "--profile", "desk",
];

#[test]
fn synth_split_train_eval_explain_compare() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--labels", "4", "--per-label", "40", "--output", "corpus.jsonl"]);
    ok(d, &["split", "--input", "corpus.jsonl", "--test-per-label", "10", "--out-dir", "splits"]);
    for (objective, model) in [("contrastive", "c.bin"), ("vanilla", "v.bin")] {
        let mut args = vec![
            "train", "--objective", objective, "--train", "splits/train.jsonl", "--samples-per-label", "4",
            "--output", model,
        ];
        args.extend(SMALL);
        ok(d, &args);
        assert!(d.join(model.replace(".bin", ".log.json")).exists());
    }
    let out = ok(d, &["eval", "--model", "c.bin", "--test", "splits/test.jsonl", "--out-dir", "eval"]);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("accuracy "));
    let predictions = std::fs::read_to_string(d.join("eval/predictions.csv")).unwrap();
    assert_eq!(predictions.lines().count(), 1 + 40);
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("eval/metrics.json")).unwrap()).unwrap();
    let acc = metrics["scores"]["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    for (model, out) in [("c.bin", "xc"), ("v.bin", "xv")] {
        ok(
            d,
            &[
                "explain", "--model", model, "--input", "splits/test.jsonl", "--label", "Notices", "--limit", "3",
                "--n-samples", "20", "--out-dir", out,
            ],
        );
        let lines = std::fs::read_to_string(d.join(out).join("explanations.jsonl")).unwrap();
        assert_eq!(lines.lines().count(), 3);
    }
    ok(
        d,
        &[
            "compare", "--a", "xc/explanations.jsonl", "--b", "xv/explanations.jsonl", "--label", "Notices",
            "--svg", "--out-dir", "cmp",
        ],
    );
    for f in ["comparison.json", "comparison.csv", "common_positive.svg", "a_top.svg"] {
        assert!(d.join("cmp").join(f).exists(), "{f}");
    }
}

#[test]
fn exit_codes_follow_failure_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(fewshot(d, &["--help"]).status.code(), Some(0));
    assert_eq!(fewshot(d, &["no-such-command"]).status.code(), Some(1));
    assert_eq!(fewshot(d, &["train", "--objective", "other"]).status.code(), Some(1));

    std::fs::write(d.join("bad.json"), "{}").unwrap();
    assert_eq!(fewshot(d, &["grid", "--config", "bad.json"]).status.code(), Some(1));

    let out = fewshot(d, &["eval", "--model", "missing.bin", "--test", "t.jsonl", "--out-dir", "e"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.bin"));

    std::fs::write(d.join("broken.jsonl"), "{\"text\": \"a\"}\nnot json\n").unwrap();
    let out = fewshot(d, &["split", "--input", "broken.jsonl", "--out-dir", "s"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_encoder_config_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--labels", "2", "--per-label", "6", "--output", "tiny.jsonl"]);
    let mut args = vec![
        "train", "--objective", "vanilla", "--train", "tiny.jsonl", "--init-scale", "1e308", "--output", "m.bin",
    ];
    args.extend(SMALL);
    let out = fewshot(d, &args);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!d.join("m.bin").exists());
}
