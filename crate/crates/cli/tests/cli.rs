use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn udcg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_udcg"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = udcg(dir, args);
    assert!(
        out.status.success(),
        "udcg {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(dir: &Path, args: &[&str]) -> String {
    let out = udcg(dir, args);
    assert!(!out.status.success(), "udcg {args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn write(dir: &Path, name: &str, lines: &[String]) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}

/// One question, six passages; p1 and p2 are relevant.
fn fixture() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let utils = [0.9, 0.6, -0.1, -0.9, 0.0, -0.5];
    write(d, "questions.jsonl", &[r#"{"id":"q1","text":"who?","reference_answers":["x"]}"#.into()]);
    write(
        d,
        "passages.jsonl",
        &(1..=6).map(|i| format!(r#"{{"id":"p{i}","text":"passage {i}"}}"#)).collect::<Vec<_>>(),
    );
    write(
        d,
        "judgments.jsonl",
        &(1..=6)
            .map(|i| format!(r#"{{"question_id":"q1","passage_id":"p{i}","relevant":{}}}"#, i <= 2))
            .collect::<Vec<_>>(),
    );
    write(
        d,
        "annotations.jsonl",
        &utils
            .iter()
            .enumerate()
            .map(|(i, u): (usize, &f64)| {
                format!(
                    r#"{{"question_id":"q1","passage_id":"p{}","p_no_response":{},"utility":{u}}}"#,
                    i + 1,
                    1.0 - u.abs()
                )
            })
            .collect::<Vec<_>>(),
    );
    write(
        d,
        "rankings.jsonl",
        &[format!(
            r#"{{"question_id":"q1","entries":[{}]}}"#,
            [6, 3, 1, 5, 2, 4]
                .iter()
                .enumerate()
                .map(|(r, p)| format!(r#"{{"passage_id":"p{p}","score":{}}}"#, 10 - r))
                .collect::<Vec<_>>()
                .join(",")
        )],
    );
    let ctx = |id: &str, ids: &[u8], outcome: &str| {
        let ids: Vec<String> = ids.iter().map(|i| format!("\"p{i}\"")).collect();
        format!(
            r#"{{"question_id":"q1","context_id":"{id}","passage_ids":[{}],"outcome":"{outcome}"}}"#,
            ids.join(",")
        )
    };
    write(
        d,
        "contexts.jsonl",
        &[
            ctx("c1", &[1, 2, 3, 4, 5], "correct"),
            ctx("c2", &[3, 4, 5, 6, 1], "correct"),
            ctx("c3", &[3, 5, 6, 4, 2], "abstain"),
            ctx("c4", &[4, 6, 3, 5, 2], "wrong"),
            ctx("c5", &[3, 4, 5, 6, 2], "wrong"),
        ],
    );
    write(d, "short.jsonl", &[ctx("s1", &[1, 2, 3, 4], "correct")]);
    dir
}

const DATA: [&str; 6] = [
    "--contexts",
    "contexts.jsonl",
    "--annotations",
    "annotations.jsonl",
    "--judgments",
    "judgments.jsonl",
];

fn with_data<'a>(head: &[&'a str]) -> Vec<&'a str> {
    head.iter().copied().chain(DATA).collect()
}

#[test]
fn annotate_uses_the_cache_on_rerun() {
    let dir = fixture();
    let d = dir.path();
    let args = [
        "--out", "ann", "--provider", "constant:0.1", "annotate", "--questions", "questions.jsonl",
        "--passages", "passages.jsonl", "--judgments", "judgments.jsonl", "--cache", "cache",
    ];
    let first = ok(d, &args);
    assert!(first.contains("provider calls: 6  cache hits: 0"), "{first}");
    assert!(first.contains("relevant: 2  weak: 0  intermediate: 0  hard: 4"), "{first}");
    let bytes = fs::read(d.join("ann/annotations.jsonl")).unwrap();
    let second = ok(d, &args);
    assert!(second.contains("provider calls: 0  cache hits: 6"), "{second}");
    assert_eq!(fs::read(d.join("ann/annotations.jsonl")).unwrap(), bytes);
    let text = String::from_utf8(bytes).unwrap();
    assert!(text.lines().next().unwrap().contains(r#""utility":0.9"#), "{text}");
}

#[test]
fn annotate_reports_missing_files() {
    let dir = fixture();
    let err = fails(
        dir.path(),
        &[
            "--provider", "constant:0.1", "annotate", "--questions", "questions.jsonl", "--passages",
            "passages.jsonl", "--judgments", "missing-judgments.jsonl",
        ],
    );
    assert!(err.contains("missing-judgments.jsonl"), "{err}");
}

#[test]
fn score_writes_one_row_per_context() {
    let dir = fixture();
    let d = dir.path();
    ok(d, &with_data(&["--out", "s", "--metrics", "precision,udcg,ndcg", "score"]));
    let mut rdr = csv::Reader::from_path(d.join("s/scores.csv")).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(str::to_owned).collect();
    assert_eq!(header, ["question_id", "context_id", "k", "precision", "udcg", "ndcg"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 5);
    assert_eq!(&rows[0][3], "0.4");
}

#[test]
fn zero_utilities_score_one_half() {
    let dir = fixture();
    let d = dir.path();
    let zero: Vec<String> = (1..=6)
        .map(|i| format!(r#"{{"question_id":"q1","passage_id":"p{i}","p_no_response":1.0,"utility":0.0}}"#))
        .collect();
    write(d, "zero.jsonl", &zero);
    ok(
        d,
        &[
            "--out", "z", "--metrics", "udcg", "score", "--contexts", "contexts.jsonl", "--annotations",
            "zero.jsonl", "--judgments", "judgments.jsonl",
        ],
    );
    let text = fs::read_to_string(d.join("z/scores.csv")).unwrap();
    assert!(text.lines().skip(1).all(|l| l.ends_with(",0.5")), "{text}");
}

#[test]
fn theta_dimension_must_match_the_contexts() {
    let dir = fixture();
    let d = dir.path();
    ok(d, &with_data(&["--out", "t", "train"]));
    let err = fails(
        d,
        &[
            "--out", "s", "--theta", "t/theta.json", "--metrics", "udcg_theta", "score", "--contexts",
            "short.jsonl", "--annotations", "annotations.jsonl", "--judgments", "judgments.jsonl",
        ],
    );
    assert!(err.contains("dimension"), "{err}");
    let err = fails(d, &with_data(&["--metrics", "udcg_theta", "score"]));
    assert!(err.contains("--theta"), "{err}");
}

#[test]
fn correlate_table_shape_and_empty_metric_list() {
    let dir = fixture();
    let d = dir.path();
    ok(d, &with_data(&["--out", "c", "--metrics", "precision,udcg", "correlate"]));
    let text = fs::read_to_string(d.join("c/correlation.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "metric,mean_rho,scored,skipped");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("precision,") && lines[2].starts_with("udcg,"));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("c/correlation.json")).unwrap()).unwrap();
    assert_eq!(json[0]["per_question"][0]["question_id"], "q1");

    let err = fails(d, &with_data(&["--metrics", "", "correlate"]));
    assert!(err.contains("empty"), "{err}");
}

#[test]
fn train_is_reproducible() {
    let dir = fixture();
    let d = dir.path();
    let out = ok(d, &with_data(&["--out", "a", "--seed", "4", "train", "--held-out", "contexts.jsonl"]));
    assert!(out.contains("trained on 8 pairs"), "{out}");
    assert!(out.contains("held-out pairwise accuracy: "), "{out}");
    ok(d, &with_data(&["--out", "b", "--seed", "4", "train"]));
    assert_eq!(fs::read(d.join("a/theta.json")).unwrap(), fs::read(d.join("b/theta.json")).unwrap());
    let log = fs::read_to_string(d.join("a/train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,loss,pairwise_accuracy\n"));
}

#[test]
fn simulate_experiments() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--out", "p", "simulate", "position_sweep"]);
    let sweep = fs::read_to_string(d.join("p/position_sweep.csv")).unwrap();
    let rows: Vec<Vec<f64>> = sweep
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 5);
    assert!(rows.windows(2).all(|w| w[0][2] > w[1][2]), "ndcg column not decreasing");

    ok(d, &["--out", "g", "simulate", "distractor_gap"]);
    let gap = fs::read_to_string(d.join("g/distractor_gap.csv")).unwrap();
    let acc: Vec<f64> = gap.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert!(acc[0] > acc[1], "{gap}");

    let args = ["--seed", "9", "--metrics", "ndcg,udcg", "simulate", "k_sweep", "--questions", "12"];
    ok(d, &[&["--out", "k1"][..], &args].concat());
    ok(d, &[&["--out", "k2"][..], &args].concat());
    for f in ["k_sweep.csv", "k_sweep_std.csv"] {
        assert_eq!(fs::read(d.join("k1").join(f)).unwrap(), fs::read(d.join("k2").join(f)).unwrap());
    }

    let err = fails(d, &["simulate", "nonsense"]);
    assert!(err.contains("nonsense"), "{err}");
}

#[test]
fn context_bench_output_feeds_the_other_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--out", "b", "--seed", "2", "simulate", "context_bench", "--questions", "15"]);
    let data = [
        "--contexts", "b/contexts.jsonl", "--annotations", "b/annotations.jsonl", "--judgments",
        "b/judgments.jsonl",
    ];
    ok(d, &[&["--out", "t", "train"][..], &data].concat());
    ok(d, &[&["--out", "c", "--theta", "t/theta.json", "correlate"][..], &data].concat());
    let text = fs::read_to_string(d.join("c/correlation.csv")).unwrap();
    assert!(text.lines().any(|l| l.starts_with("udcg_theta,")), "{text}");
}

#[test]
fn rerank_modes() {
    let dir = fixture();
    let d = dir.path();
    let data = [
        "--rankings", "rankings.jsonl", "--annotations", "annotations.jsonl", "--judgments",
        "judgments.jsonl",
    ];
    ok(d, &[&["--out", "u", "--k", "3", "rerank", "--mode", "utility"][..], &data].concat());
    let ctx: serde_json::Value =
        serde_json::from_str(fs::read_to_string(d.join("u/contexts.jsonl")).unwrap().trim()).unwrap();
    assert_eq!(ctx["passage_ids"], serde_json::json!(["p1", "p2", "p5"]));

    ok(d, &[&["--out", "b", "--k", "3", "rerank", "--mode", "binary"][..], &data].concat());
    let ctx: serde_json::Value =
        serde_json::from_str(fs::read_to_string(d.join("b/contexts.jsonl")).unwrap().trim()).unwrap();
    assert_eq!(ctx["passage_ids"], serde_json::json!(["p1", "p2", "p6"]));

    let err = fails(d, &[&["--k", "5", "rerank", "--m", "3"][..], &data].concat());
    assert!(err.contains("smaller than k"), "{err}");
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = fixture();
    let d = dir.path();
    fs::write(
        d.join("run.toml"),
        r#"
out = "from-config"
metrics = ["precision"]
[data]
contexts = "contexts.jsonl"
annotations = "annotations.jsonl"
judgments = "judgments.jsonl"
"#,
    )
    .unwrap();
    ok(d, &["--config", "run.toml", "score"]);
    let header = fs::read_to_string(d.join("from-config/scores.csv")).unwrap();
    assert!(header.starts_with("question_id,context_id,k,precision\n"));
    ok(d, &["--config", "run.toml", "--out", "flag", "--metrics", "hits", "score"]);
    assert!(fs::read_to_string(d.join("flag/scores.csv")).unwrap().starts_with("question_id,context_id,k,hits\n"));

    fs::write(d.join("bad.toml"), "colour = 1\n").unwrap();
    let err = fails(d, &["--config", "bad.toml", "score"]);
    assert!(err.contains("bad.toml"), "{err}");
}
