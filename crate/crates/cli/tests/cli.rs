use std::path::Path;
use std::process::{Command, Output};

fn sfi(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_sfi")).args(args).output().expect("spawn sfi");
    assert!(
        out.status.success(),
        "sfi {args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL_MODEL: &[&str] = &[
    "--preset",
    "desk",
    "--embed-dim",
    "8",
    "--filters",
    "8",
    "--select-dim",
    "8",
    "--max-history",
    "8",
    "--title-len",
    "6",
    "--top-k",
    "3",
    "--conv3d-channels",
    "4,4",
    "--epochs",
    "1",
];

#[test]
fn synth_train_eval_predict_bench_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    sfi(&[
        "synth",
        "--out",
        p(&data),
        "--n-train",
        "60",
        "--n-eval",
        "20",
        "--n-users",
        "20",
        "--min-history",
        "8",
        "--max-history",
        "8",
    ]);
    for f in ["news.tsv", "train_behaviors.tsv", "eval_behaviors.tsv", "planted.tsv"] {
        assert!(data.join(f).exists(), "{f}");
    }

    let ckpt = dir.path().join("model.ckpt");
    let news = data.join("news.tsv");
    let train = data.join("train_behaviors.tsv");
    let eval = data.join("eval_behaviors.tsv");
    let mut args = vec!["train", "--news", p(&news), "--behaviors", p(&train), "--out", p(&ckpt)];
    args.extend_from_slice(SMALL_MODEL);
    args.extend(["--valid-behaviors", p(&eval)]);
    let out = sfi(&args);
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch 0: loss"));
    assert!(ckpt.exists() && dir.path().join("model.ckpt.vocab").exists());

    let data_args = ["--checkpoint", p(&ckpt), "--news", p(&news), "--behaviors", p(&eval)];
    let metrics = dir.path().join("metrics.json");
    let out = sfi(&[&["eval"][..], &data_args, &["--metrics-out", p(&metrics)]].concat());
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["n_impressions"], 20);
    let auc = json["auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));
    assert!(metrics.exists());

    let preds = dir.path().join("prediction.txt");
    sfi(&[&["predict"][..], &data_args, &["--out", p(&preds)]].concat());
    let text = std::fs::read_to_string(&preds).unwrap();
    assert_eq!(text.lines().count(), 20);
    let first = text.lines().next().unwrap();
    let ranks = first.split_once(' ').unwrap().1;
    assert!(ranks.starts_with('[') && ranks.ends_with(']'));
    let mut r: Vec<usize> = ranks[1..ranks.len() - 1].split(',').map(|x| x.parse().unwrap()).collect();
    r.sort_unstable();
    assert_eq!(r, (1..=r.len()).collect::<Vec<_>>());

    let out = sfi(&[&["bench"][..], &data_args, &["--k", "1,3", "--duration", "0.3", "--warmup", "0.1"]].concat());
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let reports = json["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports[0]["mode"], "SFI(1)");
    assert!(reports[1]["iterations_per_second"].as_f64().unwrap() > 0.0);

    let analysis = dir.path().join("analysis");
    let planted = data.join("planted.tsv");
    let out = sfi(&[&["analyze"][..], &data_args, &["--out-dir", p(&analysis), "--planted", p(&planted)]].concat());
    assert!(String::from_utf8_lossy(&out.stdout).contains("planted precision at top-3"));
    let csv = std::fs::read_to_string(analysis.join("informativeness.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 8);
    assert!(analysis.join("informativeness.svg").exists());
    let sweep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(analysis.join("threshold_sweep.json")).unwrap()).unwrap();
    assert_eq!(sweep.as_array().unwrap().len(), 7);
}

#[test]
fn config_file_overrides_flags_and_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    sfi(&["synth", "--out", p(&data), "--n-train", "10", "--n-eval", "2", "--min-history", "8", "--max-history", "8"]);
    let news = data.join("news.tsv");
    let train = data.join("train_behaviors.tsv");
    let ckpt = dir.path().join("m.ckpt");
    let cfg = dir.path().join("model.toml");
    std::fs::write(&cfg, "top_k = 2\nepochs = 0\n").unwrap();
    let mut args = vec!["train", "--news", p(&news), "--behaviors", p(&train), "--out", p(&ckpt)];
    args.extend_from_slice(SMALL_MODEL);
    args.extend(["--config", p(&cfg)]);
    sfi(&args);
    // The flags ask for K=3; the file's K=2 must win.
    let out = sfi(&[
        "analyze",
        "--checkpoint",
        p(&ckpt),
        "--news",
        p(&news),
        "--behaviors",
        p(&data.join("eval_behaviors.tsv")),
        "--out-dir",
        p(&dir.path().join("analysis")),
        "--planted",
        p(&data.join("planted.tsv")),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("at top-2"));

    std::fs::write(&cfg, "top_kk = 2\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_sfi")).args(&args).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("top_kk"));
}

#[test]
fn missing_checkpoint_is_a_clean_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_sfi"))
        .args(["eval", "--checkpoint", "/nonexistent/x.ckpt", "--news", "a", "--behaviors", "b"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("loading checkpoint"));
}
