use std::path::Path;
use std::process::{Command, Output};

fn kernspace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kernspace"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth_small(dir: &Path, extra: &[&str]) {
    let out = dir.to_str().unwrap();
    let mut args = vec![
        "synth",
        "--out",
        out,
        "--seed",
        "4",
        "--image-size",
        "32",
        "--train-fonts",
        "8",
        "--val-fonts",
        "2",
        "--test-fonts",
        "3",
    ];
    args.extend_from_slice(extra);
    let o = kernspace(&args);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn help_works_for_every_subcommand() {
    let o = kernspace(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    for (sub, flags) in [
        (
            "synth",
            &["--out", "--seed", "--mode", "--shapes", "--config", "--threads"][..],
        ),
        ("pretrain-encoder", &["--corpus", "--out", "--channels"]),
        (
            "train",
            &["--model", "--features", "--corpus", "--encoder", "--out", "--max-steps"],
        ),
        ("fit-baseline", &["--kind", "--corpus", "--out"]),
        ("kern", &["--model", "--font-dir", "--out"]),
        ("eval", &["--corpus", "--methods", "--out", "--split"]),
        ("render", &["--font-dir", "--word", "--spaces", "--out", "--compare"]),
        ("gradcheck", &["--model", "--tiny"]),
    ] {
        let o = kernspace(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub}");
        let text = stdout(&o);
        for flag in flags {
            assert!(text.contains(flag), "{sub} help lacks {flag}");
        }
    }
}

#[test]
fn gradcheck_tiny_setwise_exits_zero() {
    let o = kernspace(&["gradcheck", "--model", "setwise", "--tiny"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let err: f64 = text.split_whitespace().nth(3).unwrap().parse().unwrap();
    assert!(err <= 1e-5, "{text}");
}

#[test]
fn usage_errors_exit_one_with_code_prefix() {
    let o = kernspace(&["gradcheck", "--model", "sideways", "--tiny"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("usage: "));
    assert_eq!(stderr(&o).trim_end().lines().count(), 1);

    let o = kernspace(&["synth"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--out"));
}

#[test]
fn unknown_config_key_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"seed": 1, "learning_rate": 0.1}"#).unwrap();
    let out = dir.path().join("c");
    let o = kernspace(&[
        "synth",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("validation: "), "{}", stderr(&o));
    assert!(stderr(&o).contains("learning_rate"));
}

#[test]
fn config_file_is_overridden_by_flags_and_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"seed": 1, "image_size": 32, "train_fonts": 3, "val_fonts": 1, "test_fonts": 1}"#,
    )
    .unwrap();
    let out = dir.path().join("c");
    let o = kernspace(&[
        "synth",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "9",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let echoed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(echoed["seed"], 9);
    assert_eq!(echoed["train_fonts"], 3);
}

#[test]
fn eval_of_ground_truth_gives_zero_mae_and_full_wins() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    synth_small(&corpus, &[]);
    let mono = dir.path().join("mono.json");
    let o = kernspace(&[
        "fit-baseline",
        "--kind",
        "monospace",
        "--corpus",
        corpus.to_str().unwrap(),
        "--out",
        mono.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = dir.path().join("report");
    let methods = format!("truth=gt,mono={}", mono.display());
    let o = kernspace(&[
        "eval",
        "--corpus",
        corpus.to_str().unwrap(),
        "--methods",
        &methods,
        "--out",
        report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(report.join("report.json")).unwrap()).unwrap();
    let truth = &json["methods"][0];
    assert_eq!(truth["name"], "truth");
    assert_eq!(truth["mae"], 0.0);
    assert_eq!(truth["wins"], 3);
    assert_eq!(json["n_fonts"], 3);
    assert!(report.join("config.json").is_file());
    assert!(report.join("mae_truth.csv").is_file());
}

#[test]
fn pipeline_train_kern_render_and_missing_glyph() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    synth_small(&corpus, &["--n-categories", "4"]);
    let ckpt = dir.path().join("model.ckpt");
    let train = |out: &Path| {
        kernspace(&[
            "train",
            "--model",
            "setwise",
            "--features",
            "peripheral",
            "--corpus",
            corpus.to_str().unwrap(),
            "--max-epochs",
            "3",
            "--batch-size",
            "4",
            "--threads",
            "1",
            "--out",
            out.to_str().unwrap(),
        ])
    };
    let o = train(&ckpt);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("model.ckpt.log.csv").is_file());

    let again = dir.path().join("again.ckpt");
    assert!(train(&again).status.success());
    assert_eq!(std::fs::read(&ckpt).unwrap(), std::fs::read(&again).unwrap());

    let font = std::fs::read_dir(corpus.join("fonts"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let kerning = dir.path().join("kerning.json");
    let o = kernspace(&[
        "kern",
        "--model",
        ckpt.to_str().unwrap(),
        "--font-dir",
        font.to_str().unwrap(),
        "--out",
        kerning.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table: Vec<Vec<f64>> = serde_json::from_str(&std::fs::read_to_string(&kerning).unwrap()).unwrap();
    assert_eq!(table.len(), 4);
    assert!(table.iter().all(|r| r.len() == 4 && r.iter().all(|v| v.is_finite())));

    let img = dir.path().join("word.pgm");
    let o = kernspace(&[
        "render",
        "--font-dir",
        font.to_str().unwrap(),
        "--word",
        "0123",
        "--spaces",
        "gt",
        "--compare",
        kerning.to_str().unwrap(),
        "--out",
        img.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(std::fs::read(&img).unwrap().starts_with(b"P5"));
    let gaps = std::fs::read_to_string(dir.path().join("word.pgm.gaps.csv")).unwrap();
    assert_eq!(gaps.lines().count(), 4);

    std::fs::remove_file(font.join("glyphs").join("2.pgm")).unwrap();
    let o = kernspace(&[
        "kern",
        "--model",
        ckpt.to_str().unwrap(),
        "--font-dir",
        font.to_str().unwrap(),
        "--out",
        kerning.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.starts_with("validation: "), "{err}");
    assert!(err.contains("missing glyph: 2"), "{err}");
}

#[test]
fn render_rejects_letters_outside_the_font() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    synth_small(&corpus, &["--n-categories", "4"]);
    let font = std::fs::read_dir(corpus.join("fonts"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let img = dir.path().join("w.pgm");
    let o = kernspace(&[
        "render",
        "--font-dir",
        font.to_str().unwrap(),
        "--word",
        "09",
        "--spaces",
        "gt",
        "--out",
        img.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
