use std::path::Path;
use std::process::{Command, Output};

fn marginlm(dir: &Path, args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_marginlm"));
    cmd.args(args)
        .current_dir(dir)
        .env_remove("MARGINLM_THREADS");
    if let Some(t) = threads {
        cmd.env("MARGINLM_THREADS", t);
    }
    cmd.output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = marginlm(dir, args, None);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth_and_train(dir: &Path, threads: Option<&str>) {
    let steps: &[&[&str]] = &[
        &[
            "synth",
            "--seed",
            "3",
            "--vocab-size",
            "10",
            "--train-n",
            "120",
            "--dev-n",
            "20",
            "--test-n",
            "20",
            "--train-nbest-n",
            "40",
            "--k",
            "4",
            "--out-dir",
            "data",
        ],
        &[
            "train-mle",
            "--corpus",
            "data/train.txt",
            "--dev",
            "data/dev.txt",
            "--embed",
            "4",
            "--hidden",
            "5",
            "--epochs",
            "2",
            "--lr",
            "0.5",
            "--batch",
            "8",
            "--out",
            "mle.mlm",
        ],
        &[
            "train-margin",
            "--model",
            "mle.mlm",
            "--nbest",
            "data/train.nbest.jsonl",
            "--epochs",
            "1",
            "--lr",
            "0.1",
            "--batch",
            "4",
            "--out",
            "lmlm.mlm",
        ],
    ];
    for args in steps {
        let out = marginlm(dir, args, threads);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn thread_cap_does_not_change_results() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth_and_train(a.path(), None);
    synth_and_train(b.path(), Some("1"));
    for f in [
        "mle.mlm",
        "mle.mlm.curve.csv",
        "lmlm.mlm",
        "lmlm.mlm.curve.csv",
        "data/test.nbest.jsonl",
    ] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    let bad = marginlm(
        a.path(),
        &["eval", "--nbest", "data/dev.nbest.jsonl"],
        Some("zero"),
    );
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("MARGINLM_THREADS"));
}

#[test]
fn replay_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_and_train(d, None);
    let original = std::fs::read(d.join("lmlm.mlm")).unwrap();
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("lmlm.mlm.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["subcommand"], "train-margin");
    assert_eq!(manifest["seeds"]["seed"], 1);
    assert_eq!(manifest["config"]["train-margin"]["lr"], 0.1);
    assert_eq!(manifest["config"]["train-margin"]["tau"], 1.0);
    std::fs::remove_file(d.join("lmlm.mlm")).unwrap();
    ok(d, &["replay", "--manifest", "lmlm.mlm.manifest.json"]);
    assert_eq!(std::fs::read(d.join("lmlm.mlm")).unwrap(), original);

    let synth_manifest = std::fs::read(d.join("data/manifest.json")).unwrap();
    let nbest = std::fs::read(d.join("data/train.nbest.jsonl")).unwrap();
    std::fs::remove_dir_all(d.join("data")).unwrap();
    std::fs::create_dir(d.join("data")).unwrap();
    std::fs::write(d.join("m.json"), &synth_manifest).unwrap();
    ok(d, &["replay", "--manifest", "m.json"]);
    assert_eq!(
        std::fs::read(d.join("data/train.nbest.jsonl")).unwrap(),
        nbest
    );
}

#[test]
fn reporting_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_and_train(d, None);

    let eval = ok(d, &["eval", "--nbest", "data/test.nbest.jsonl"]);
    assert!(
        eval.starts_with("WER ") && eval.trim_end().ends_with('%'),
        "{eval}"
    );
    let decimals = eval
        .trim_end()
        .trim_end_matches('%')
        .rsplit('.')
        .next()
        .unwrap();
    assert_eq!(decimals.len(), 2);
    assert!(ok(
        d,
        &[
            "eval",
            "--nbest",
            "data/test.nbest.jsonl",
            "--metric",
            "bleu"
        ]
    )
    .starts_with("BLEU "));

    let ppl: f64 = ok(
        d,
        &["ppl", "--model", "mle.mlm", "--corpus", "data/dev.txt"],
    )
    .trim()
    .parse()
    .unwrap();
    assert!(ppl > 1.0 && ppl < 13.0 * 3.0, "{ppl}");

    let scores = ok(
        d,
        &["score", "--model", "mle.mlm", "--input", "data/dev.txt"],
    );
    assert_eq!(scores.lines().count(), 20);
    assert!(scores.lines().all(|l| l.parse::<f64>().unwrap() < 0.0));

    let tune = ok(
        d,
        &[
            "tune",
            "--model",
            "lmlm.mlm",
            "--nbest",
            "data/dev.nbest.jsonl",
            "--grid",
            "0:1:0.5",
            "--out",
            "tune.json",
        ],
    );
    assert!(tune.starts_with("weight "));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("tune.json")).unwrap()).unwrap();
    assert_eq!(report["table"].as_array().unwrap().len(), 3);
    assert_eq!(report["objective"], "min-wer");

    ok(
        d,
        &[
            "rescore",
            "--model",
            "lmlm.mlm",
            "--nbest",
            "data/test.nbest.jsonl",
            "--weight",
            "0",
            "--out",
            "r0.jsonl",
        ],
    );
    assert_eq!(
        ok(d, &["eval", "--nbest", "r0.jsonl"]),
        ok(d, &["eval", "--nbest", "data/test.nbest.jsonl"])
    );

    ok(
        d,
        &[
            "adapt",
            "--model",
            "mle.mlm",
            "--corpus",
            "data/dev.txt",
            "--lr",
            "0.5",
            "--out",
            "adapted.mlm",
        ],
    );
    ok(
        d,
        &[
            "diagnose",
            "--models",
            "mle=mle.mlm",
            "--nbest",
            "data/test.nbest.jsonl",
            "--out-dir",
            "diag",
        ],
    );
    assert!(d.join("diag/comparison.csv").exists());
    assert!(!d.join("diag/margin_histogram.csv").exists());
    let table = std::fs::read_to_string(d.join("diag/comparison.csv")).unwrap();
    assert!(
        table.lines().nth(1).unwrap().starts_with("baseline,")
            && table.lines().nth(1).unwrap().ends_with(",NA,NA")
    );

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("data/source_report.json")).unwrap())
            .unwrap();
    let oracle = report["splits"]["dev"]["oracle_ppl"].as_f64().unwrap();
    assert!(oracle > 1.0 && oracle < 10.0);
}

#[test]
fn errors_and_usage() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(marginlm(d, &["train-mle"], None).status.code(), Some(2));
    assert_eq!(marginlm(d, &["bogus"], None).status.code(), Some(2));
    assert_eq!(
        marginlm(
            d,
            &["tune", "--model", "m", "--nbest", "n", "--grid", "1:0:0.1"],
            None
        )
        .status
        .code(),
        Some(2)
    );

    std::fs::write(d.join("bad.jsonl"), "{\"id\":\"x\",\"reference\":[\"a\"],\"hypotheses\":[{\"tokens\":[\"a\"],\"task_score\":\"oops\"}]}\n").unwrap();
    let out = marginlm(d, &["eval", "--nbest", "bad.jsonl"], None);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("bad.jsonl:1") && err.contains("task_score"),
        "{err}"
    );

    std::fs::write(d.join("c.txt"), "a b\nc\n").unwrap();
    ok(
        d,
        &[
            "train-mle",
            "--corpus",
            "c.txt",
            "--embed",
            "2",
            "--hidden",
            "2",
            "--epochs",
            "1",
            "--out",
            "cold.mlm",
        ],
    );
    let help = ok(d, &["--help"]);
    assert!(help.contains("train-margin"));
}
