use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use anomaly_seek::embedding::index::write_manifest;
use anomaly_seek::embedding::{EmbeddingMatrix, KnowledgeDocument};
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anomaly-seek"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok_lines(args: &[&str]) -> Vec<Value> {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    text.lines()
        .map(|l| serde_json::from_str(l).unwrap_or_else(|e| panic!("stdout line is not JSON ({e}): {l}")))
        .collect()
}

fn schema(name: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas").join(format!("{name}.schema.json"));
    let value: Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    jsonschema::validator_for(&value).unwrap()
}

fn assert_valid(name: &str, lines: &[Value]) {
    let v = schema(name);
    assert!(!lines.is_empty());
    for line in lines {
        let errors: Vec<String> = v.iter_errors(line).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{name}: {errors:?} in {line}");
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, text: &str) -> PathBuf {
        let path = self.path(name);
        std::fs::write(&path, text).unwrap();
        path
    }

    fn kb(&self) -> (PathBuf, PathBuf) {
        let spec = self.write(
            "kb.json",
            r#"{"seed": 4, "dim": 16, "queries": 2,
                "clusters": [{"count": 6, "mean": 0.9, "spread": 0.01}, {"count": 30, "mean": 0.2, "spread": 0.1}],
                "relevance": {"cluster": 0, "count": 1}}"#,
        );
        let kb = self.path("kb");
        assert_valid("synth", &ok_lines(&["synth", "kb", "--spec", p(&spec), "--out", p(&kb)]));
        let idx = self.path("idx");
        let lines = ok_lines(&[
            "ingest",
            "--manifest",
            p(&kb.join("manifest.jsonl")),
            "--embeddings",
            p(&kb.join("locks.adsk")),
            "--out",
            p(&idx),
        ]);
        assert_valid("ingest", &lines);
        (idx, kb)
    }

    fn defect(&self) -> PathBuf {
        let spec = self.write(
            "defect.json",
            r#"{"seed": 2, "dim": 12,
                "defect": {"grid_h": 4, "grid_w": 4, "out_h": 16, "out_w": 16,
                           "rect": {"top": 1, "left": 1, "height": 2, "width": 2}, "signal": 0.5, "noise": 0.1}}"#,
        );
        let out = self.path("defect");
        assert_valid("synth", &ok_lines(&["synth", "defect", "--spec", p(&spec), "--out", p(&out)]));
        out
    }
}

fn doc(id: &str, row: usize) -> KnowledgeDocument {
    KnowledgeDocument {
        doc_id: id.into(),
        category: "bottle".into(),
        defect_type: "crack".into(),
        page: 1,
        summary: String::new(),
        lock_row: row,
    }
}

#[test]
fn duplicate_doc_id_exits_2_naming_it() {
    let f = Fixture::new();
    let manifest = f.write("m.jsonl", &write_manifest(&[doc("dup-7", 0), doc("dup-7", 1)]));
    let emb = f.path("e.adsk");
    EmbeddingMatrix::from_rows(2, &[[1.0f32, 0.0], [0.0, 1.0]]).unwrap().save(&emb).unwrap();
    let out = run(&["ingest", "--manifest", p(&manifest), "--embeddings", p(&emb), "--out", p(&f.path("b"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dup-7"));
    assert!(out.stdout.is_empty());
}

#[test]
fn missing_index_exits_2() {
    let f = Fixture::new();
    let keys = f.path("k.adsk");
    EmbeddingMatrix::from_rows(2, &[[1.0f32, 0.0]]).unwrap().save(&keys).unwrap();
    let out = run(&["retrieve", "--index", p(&f.path("nowhere")), "--keys", p(&keys)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn key_dimension_mismatch_exits_3() {
    let f = Fixture::new();
    let (idx, _) = f.kb();
    let keys = f.path("k.adsk");
    EmbeddingMatrix::from_rows(3, &[[1.0f32, 0.0, 0.0]]).unwrap().save(&keys).unwrap();
    assert_eq!(run(&["retrieve", "--index", p(&idx), "--keys", p(&keys)]).status.code(), Some(3));
}

#[test]
fn malformed_embedding_file_exits_2() {
    let f = Fixture::new();
    let bad = f.write("bad.adsk", "not an embedding file");
    let manifest = f.write("m.jsonl", &write_manifest(&[doc("a", 0)]));
    let out = run(&["ingest", "--manifest", p(&manifest), "--embeddings", p(&bad), "--out", p(&f.path("b"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_config_exits_3() {
    assert_eq!(run(&["--set", "k_max=0", "config"]).status.code(), Some(3));
    assert_eq!(run(&["--set", "no_such_key=1", "config"]).status.code(), Some(3));
    assert_eq!(run(&["--method", "bogus", "config"]).status.code(), Some(3));
}

#[test]
fn topk_puts_planted_document_first() {
    let f = Fixture::new();
    let (idx, kb) = f.kb();
    let lines = ok_lines(&["--method", "topk", "--budget", "1", "retrieve", "--index", p(&idx), "--keys", p(&kb.join("keys.adsk"))]);
    assert_valid("retrieve", &lines);
    let queries: Vec<Value> = std::fs::read_to_string(kb.join("queries.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    for (line, q) in lines.iter().zip(&queries) {
        assert_eq!(line["results"][0]["doc_id"], q["relevant"][0]);
        assert_eq!(line["results"].as_array().unwrap().len(), 1);
        assert!(line["clustering"].is_null());
    }
}

#[test]
fn kde_with_one_cluster_matches_topk() {
    let f = Fixture::new();
    let (idx, kb) = f.kb();
    let keys = kb.join("keys.adsk");
    let pick = |lines: Vec<Value>| -> Vec<Vec<(String, f64)>> {
        lines
            .iter()
            .map(|l| {
                l["results"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|r| (r["doc_id"].as_str().unwrap().to_string(), r["score"].as_f64().unwrap()))
                    .collect()
            })
            .collect()
    };
    let kde = ok_lines(&["--set", "k_max=1", "--budget", "7", "retrieve", "--index", p(&idx), "--keys", p(&keys)]);
    assert_valid("retrieve", &kde);
    assert!(kde.iter().all(|l| l["clustering"]["k"] == 1));
    let topk = ok_lines(&["--method", "topk", "--budget", "7", "retrieve", "--index", p(&idx), "--keys", p(&keys)]);
    assert_eq!(pick(kde), pick(topk));
}

#[test]
fn symmetric_prompts_score_half() {
    let f = Fixture::new();
    let d = f.defect();
    let prompts = EmbeddingMatrix::load(d.join("prompts.adsk")).unwrap();
    let same = f.path("same.adsk");
    EmbeddingMatrix::from_rows(prompts.dim(), &[prompts.row(0), prompts.row(0)]).unwrap().save(&same).unwrap();
    let lines = ok_lines(&["score", "--patches", p(&d.join("patches.adsk")), "--grid", "4x4", "--prompts", p(&same)]);
    assert_valid("score", &lines);
    assert!((lines[0]["image_score"].as_f64().unwrap() - 0.5).abs() < 1e-9);
}

#[test]
fn zero_lambda_square_dictionary_leaves_map_unchanged() {
    let f = Fixture::new();
    let d = f.defect();
    let vis = f.path("vis.adsk");
    EmbeddingMatrix::from_rows(1, &[[0.0f32]]).unwrap().save(&vis).unwrap();
    let dict = f.path("dict.adsk");
    let rows: Vec<Vec<f32>> = (0..12)
        .map(|i| (0..12).map(|j| if i == j { 1.0 } else { 0.05 * ((i * 7 + j * 3) % 5) as f32 - 0.1 }).collect())
        .collect();
    EmbeddingMatrix::from_rows(12, &rows).unwrap().save(&dict).unwrap();

    let (patches, prompts) = (d.join("patches.adsk"), d.join("prompts.adsk"));
    let score = |extra: &[&str], prior: &Path| -> Value {
        let mut args = vec![
            "score",
            "--patches",
            p(&patches),
            "--grid",
            "4x4",
            "--out-size",
            "16x16",
            "--prompts",
            p(&prompts),
            "--vis",
            p(&vis),
            "--prior-out",
            p(prior),
        ];
        args.extend_from_slice(extra);
        let lines = ok_lines(&args);
        assert_valid("score", &lines);
        lines[0].clone()
    };
    let (plain, coded) = (f.path("plain.adsk"), f.path("coded.adsk"));
    let a = score(&[], &plain);
    let b = score(
        &["--hsp-lambda", "0", "--set", "hsp_iters=20000", "--set", "hsp_tol=1e-14", "--hsp-dict", p(&dict), "--diagnostics"],
        &coded,
    );
    assert!(b["hsp"][0]["converged"].as_bool().unwrap());
    assert!((a["image_score"].as_f64().unwrap() - b["image_score"].as_f64().unwrap()).abs() < 1e-6);
    let (ma, mb) = (EmbeddingMatrix::load(&plain).unwrap(), EmbeddingMatrix::load(&coded).unwrap());
    assert_eq!(ma.dim(), 16 * 16 + 1);
    for (x, y) in ma.as_slice().iter().zip(mb.as_slice()) {
        assert!((x - y).abs() < 1e-6);
    }
}

#[test]
fn eval_and_scores_outputs_validate() {
    let f = Fixture::new();
    let d = f.defect();
    let map = f.path("map.pgm");
    ok_lines(&[
        "score",
        "--patches",
        p(&d.join("patches.adsk")),
        "--grid",
        "4x4",
        "--out-size",
        "16x16",
        "--prompts",
        p(&d.join("prompts.adsk")),
        "--out",
        p(&map),
    ]);
    let lines = ok_lines(&["eval", "--map", p(&map), "--mask", p(&d.join("mask.pgm"))]);
    assert_valid("eval", &lines);
    assert!(lines[0]["pixel_auroc"].as_f64().unwrap() > 0.9);

    let scores = f.write("s.jsonl", "{\"id\":\"a\",\"score\":0.9,\"label\":1}\n{\"id\":\"b\",\"score\":0.1,\"label\":0}\n");
    let lines = ok_lines(&["eval", "--scores", p(&scores)]);
    assert_valid("eval", &lines);
    assert_eq!(lines[0]["image_auroc"], 1.0);

    let spec = f.write("mix.json", r#"{"clusters": [{"count": 4, "mean": 0.5, "spread": 0.1}]}"#);
    assert_valid("synth", &ok_lines(&["synth", "scores", "--spec", p(&spec), "--out", p(&f.path("mix"))]));
}

#[test]
fn config_and_bench_outputs_validate() {
    let lines = ok_lines(&["--seed", "9", "config"]);
    assert_valid("config", &lines);
    assert_eq!(lines[0]["seed"], 9);
    let lines = ok_lines(&["bench", "--runs", "2", "--", "--budget", "3", "config"]);
    assert_valid("bench", &lines);
    assert_eq!(lines[0]["report"]["outputs_identical"], true);
    assert_eq!(run(&["bench", "--", "bench", "--", "config"]).status.code(), Some(3));
}

#[test]
fn help_lists_every_config_key() {
    let out = run(&["--help"]);
    assert!(out.status.success());
    let help = String::from_utf8(out.stdout).unwrap();
    let schema: Value =
        serde_json::from_slice(&std::fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas/config.schema.json")).unwrap())
            .unwrap();
    let keys = schema["required"].as_array().unwrap();
    assert_eq!(keys.len(), schema["properties"].as_object().unwrap().len());
    for key in keys {
        assert!(help.contains(key.as_str().unwrap()), "help is missing {key}");
    }
    let config = ok_lines(&["config"]);
    assert_eq!(config[0].as_object().unwrap().len(), keys.len());
}
