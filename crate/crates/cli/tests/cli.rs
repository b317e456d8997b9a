use std::path::Path;
use std::process::{Command, Output};

fn dualpt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualpt"))
        .args(args)
        .env_remove("DUALPT_LLM_TOKEN")
        .output()
        .expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth_small(dir: &Path) {
    let out = dualpt(&[
        "synth",
        "--out",
        p(dir),
        "--num-classes",
        "4",
        "--parts",
        "2",
        "--tokens",
        "6",
        "--dim",
        "8",
        "--shots",
        "2",
        "--test-per-class",
        "3",
        "--seed",
        "3",
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
}

#[test]
fn gen_queries_writes_the_template_in_input_order() {
    let dir = tempfile::tempdir().unwrap();
    let classes = dir.path().join("c.txt");
    std::fs::write(&classes, "panda\nzebra\nant\n").unwrap();
    let out_path = dir.path().join("q.json");
    let out = dualpt(&[
        "gen-queries",
        "--classes",
        p(&classes),
        "--out",
        p(&out_path),
    ]);
    assert!(out.status.success());
    let records: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    let names: Vec<&str> = records
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["class_name"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["panda", "zebra", "ant"]);
    assert_eq!(
        records[0]["query"],
        "Q: What are the useful features for distinguishing a panda in a photo? \
         Please just give me a list of short phrases. Answer: -"
    );
}

#[test]
fn gen_queries_input_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.txt");
    std::fs::write(&empty, "\n").unwrap();
    let out_path = dir.path().join("q.json");
    let out = dualpt(&["gen-queries", "--classes", p(&empty), "--out", p(&out_path)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("no classes"));

    let missing = dir.path().join("missing.txt");
    let out = dualpt(&[
        "gen-queries",
        "--classes",
        p(&missing),
        "--out",
        p(&out_path),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("missing.txt"));
}

#[test]
fn mock_fetch_then_warm_cache() {
    let dir = tempfile::tempdir().unwrap();
    let classes = dir.path().join("c.txt");
    std::fs::write(&classes, "panda\n").unwrap();
    let cache = dir.path().join("cache.json");
    let args = [
        "fetch",
        "--classes",
        p(&classes),
        "--cache",
        p(&cache),
        "--mock",
    ];
    let out = dualpt(&args);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("1 fetched, 0 cached"));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&cache).unwrap()).unwrap();
    assert_eq!(doc["classes"]["panda"].as_array().unwrap().len(), 5);
    assert_eq!(doc["meta"]["temperature"], 0.7);

    let out = dualpt(&args);
    assert!(text(&out.stdout).contains("0 fetched, 1 cached"));
}

#[test]
fn unreachable_endpoint_exits_3_and_names_the_class() {
    let dir = tempfile::tempdir().unwrap();
    let classes = dir.path().join("c.txt");
    std::fs::write(&classes, "panda\n").unwrap();
    let cache = dir.path().join("cache.json");
    let out = Command::new(env!("CARGO_BIN_EXE_dualpt"))
        .args([
            "fetch",
            "--classes",
            p(&classes),
            "--cache",
            p(&cache),
            "--endpoint",
            "http://127.0.0.1:9/v1/chat/completions",
            "--no-retry",
            "--timeout",
            "2",
        ])
        .env("DUALPT_LLM_TOKEN", "test-token")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(text(&out.stderr).contains("panda"));
    assert!(!cache.exists());
}

#[test]
fn embed_writes_a_valid_store() {
    let dir = tempfile::tempdir().unwrap();
    let classes = dir.path().join("c.txt");
    std::fs::write(&classes, "panda\ntiger\n").unwrap();
    let cache = dir.path().join("cache.json");
    assert!(dualpt(&[
        "fetch",
        "--classes",
        p(&classes),
        "--cache",
        p(&cache),
        "--mock"
    ])
    .status
    .success());
    let store = dir.path().join("store.json");
    let out = dualpt(&[
        "embed",
        "--cache",
        p(&cache),
        "--out",
        p(&store),
        "--dim",
        "16",
        "--seed",
        "7",
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&store).unwrap()).unwrap();
    assert_eq!(doc["dim"], 16);
    assert_eq!(
        doc["classes"]["panda"]["descriptors"]
            .as_array()
            .unwrap()
            .len(),
        5
    );
    assert!(dir.path().join("store.manifest.json").exists());
}

#[test]
fn pipeline_is_deterministic() {
    let run = |dir: &Path| -> (Vec<u8>, serde_json::Value) {
        synth_small(&dir.join("data"));
        let model = dir.join("run/model.json");
        let out = dualpt(&[
            "train",
            "--train",
            p(&dir.join("data/train_2.jsonl")),
            "--store",
            p(&dir.join("data/store.json")),
            "--out",
            p(&model),
            "--epochs",
            "3",
            "--m",
            "2",
        ]);
        assert!(out.status.success(), "{}", text(&out.stderr));
        let report = dir.join("run/report.json");
        let out = dualpt(&[
            "eval",
            "--model",
            p(&model),
            "--test",
            p(&dir.join("data/test.jsonl")),
            "--out",
            p(&report),
        ]);
        assert!(out.status.success(), "{}", text(&out.stderr));
        let mut report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
        report["wall_time_secs"] = 0.into();
        report["config"]["model"] = serde_json::Value::Null;
        report["config"]["test"] = serde_json::Value::Null;
        (std::fs::read(&model).unwrap(), report)
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (model_a, report_a) = run(a.path());
    let (model_b, report_b) = run(b.path());
    assert_eq!(model_a, model_b);
    assert_eq!(report_a, report_b);
    assert_eq!(report_a["metrics"]["kind"], "few_shot");
    assert!(a.path().join("run/model.manifest.json").exists());
    assert!(a.path().join("data/manifest.json").exists());
}

#[test]
fn base_to_new_evaluation_uses_store_anchors() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path());
    let model = dir.path().join("base.json");
    let out = dualpt(&[
        "train",
        "--train",
        p(&dir.path().join("train_2.jsonl")),
        "--store",
        p(&dir.path().join("store.json")),
        "--subset",
        "base",
        "--out",
        p(&model),
        "--epochs",
        "2",
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let test = dir.path().join("test.jsonl");
    let out = dualpt(&[
        "eval",
        "--model",
        p(&model),
        "--test",
        p(&test),
        "--subset",
        "base-to-new",
    ]);
    assert_eq!(out.status.code(), Some(2), "new anchors need the store");
    let out = dualpt(&[
        "eval",
        "--model",
        p(&model),
        "--test",
        p(&test),
        "--store",
        p(&dir.path().join("store.json")),
        "--subset",
        "base-to-new",
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&text(&out.stdout)).unwrap();
    let m = &report["metrics"];
    let (b, n) = (
        m["base_accuracy"].as_f64().unwrap(),
        m["new_accuracy"].as_f64().unwrap(),
    );
    if b + n > 0.0 {
        assert!((m["harmonic_mean"].as_f64().unwrap() - 2.0 * b * n / (b + n)).abs() < 1e-9);
    }
}

#[test]
fn replaying_a_manifest_reproduces_the_model() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path());
    let model = dir.path().join("out/model.json");
    let out = dualpt(&[
        "train",
        "--train",
        p(&dir.path().join("train_2.jsonl")),
        "--store",
        p(&dir.path().join("store.json")),
        "--out",
        p(&model),
        "--epochs",
        "2",
    ]);
    assert!(out.status.success());
    let first = std::fs::read(&model).unwrap();
    std::fs::remove_file(&model).unwrap();
    let out = dualpt(&["replay", p(&dir.path().join("out/model.manifest.json"))]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert_eq!(std::fs::read(&model).unwrap(), first);
}

#[test]
fn solve_ot_zero_cost_gives_uniform_plan() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("ot.json");
    std::fs::write(&input, r#"{"cost": [[0, 0, 0], [0, 0, 0]]}"#).unwrap();
    let out = dualpt(&["solve-ot", "--input", p(&input)]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let doc: serde_json::Value = serde_json::from_str(&text(&out.stdout)).unwrap();
    for row in doc["plan"].as_array().unwrap() {
        for x in row.as_array().unwrap() {
            assert!((x.as_f64().unwrap() - 1.0 / 6.0).abs() < 1e-12);
        }
    }
    assert_eq!(doc["objective"], 0.0);
    assert!(doc["row_residual"].as_f64().unwrap() <= 1e-6);
    assert!(doc["inner_iterations"].as_u64().unwrap() >= 1);
}

#[test]
fn solve_ot_accepts_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("ot.json");
    std::fs::write(
        &input,
        r#"{"z": [[1, 0], [0, 1], [1, 1]], "w": [[1, 0], [0, 1]]}"#,
    )
    .unwrap();
    let out = dualpt(&["solve-ot", "--input", p(&input), "--alpha", "0.5"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let doc: serde_json::Value = serde_json::from_str(&text(&out.stdout)).unwrap();
    assert_eq!(doc["plan"].as_array().unwrap().len(), 3);
}

#[test]
fn schema_errors_exit_2_with_a_pointer() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("ot.json");
    std::fs::write(&input, r#"{"cost": [[0, 1], [1, "x"]]}"#).unwrap();
    let out = dualpt(&["solve-ot", "--input", p(&input)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("/cost/1/1"));

    synth_small(&dir.path().join("d"));
    let train = dir.path().join("d/train_2.jsonl");
    let body = std::fs::read_to_string(&train).unwrap();
    std::fs::write(
        &train,
        body.replacen("\"split\":\"train\"", "\"split\":\"dev\"", 1),
    )
    .unwrap();
    let out = dualpt(&[
        "train",
        "--train",
        p(&train),
        "--store",
        p(&dir.path().join("d/store.json")),
        "--out",
        p(&dir.path().join("m.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        text(&out.stderr).contains("/0/split"),
        "{}",
        text(&out.stderr)
    );
}

#[test]
fn ignored_alpha_is_flagged() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path());
    let out = dualpt(&[
        "ablate",
        "--train",
        p(&dir.path().join("train_2.jsonl")),
        "--test",
        p(&dir.path().join("test.jsonl")),
        "--store",
        p(&dir.path().join("store.json")),
        "--out",
        p(&dir.path().join("grid.csv")),
        "--align",
        "node",
        "--distill",
        "none",
        "--alpha",
        "0.2",
        "--epochs",
        "1",
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stderr).contains("node alignment ignores --alpha"));
    let csv = std::fs::read_to_string(dir.path().join("grid.csv")).unwrap();
    assert!(csv.starts_with("distill,align,alpha,beta,M,shots,seed,accuracy\nnone,node,0.2,"));

    let out = dualpt(&[
        "ablate",
        "--train",
        p(&dir.path().join("train_2.jsonl")),
        "--test",
        p(&dir.path().join("test.jsonl")),
        "--store",
        p(&dir.path().join("store.json")),
        "--out",
        p(&dir.path().join("grid2.csv")),
        "--align",
        "node",
        "--distill",
        "none",
        "--epochs",
        "1",
    ]);
    assert!(!text(&out.stderr).contains("ignores"));
}

#[test]
fn divergent_training_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path());
    let out = dualpt(&[
        "train",
        "--train",
        p(&dir.path().join("train_2.jsonl")),
        "--store",
        p(&dir.path().join("store.json")),
        "--out",
        p(&dir.path().join("m.json")),
        "--epochs",
        "2",
        "--lr",
        "1e308",
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", text(&out.stderr));
}

#[test]
fn locked_output_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join(".dualpt.lock"), "").unwrap();
    let out = dualpt(&["synth", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("locked"));
}

#[test]
fn help_lists_defaults() {
    let out = dualpt(&["train", "--help"]);
    let help = text(&out.stdout);
    for flag in [
        "--m <M>",
        "[default: 4]",
        "--alpha",
        "[default: 0.2]",
        "--beta",
        "--lr",
        "[default: 0.002]",
        "--tau",
        "[default: 0.01]",
        "--lambda",
        "[default: 0.1]",
    ] {
        assert!(help.contains(flag), "missing {flag}");
    }
    let top = text(&dualpt(&["--help"]).stdout);
    assert!(top.contains("DUALPT_LLM_TOKEN"));
}
