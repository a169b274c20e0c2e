use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anomaly_seek::embedding::{build_index, CentroidStore, EmbeddingMatrix, KnowledgeIndex};
use anomaly_seek::eval::{self, auroc, pixel_auroc, LabeledScores, SyntheticSpec};
use anomaly_seek::expert::{assemble_prior, image_score, localization_map, PatchGrid};
use anomaly_seek::pgm;
use anomaly_seek::retrieval::{kde_sample, score_all, top_k, RetrievalResult};
use anomaly_seek::sparse::{from_dmatrix, hierarchical_apply, to_dmatrix, Stage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{Method, RunConfig};
use crate::error::CliError;
use crate::{Command, EvalArgs, IngestArgs, RetrieveArgs, ScoreArgs, SynthArgs, SynthKind};

type Result<T> = std::result::Result<T, CliError>;

fn emit(out: &mut dyn Write, value: &impl Serialize) -> Result<()> {
    let mut line = serde_json::to_vec(value).map_err(|e| CliError::Numerical(e.to_string()))?;
    line.push(b'\n');
    out.write_all(&line)
        .map_err(|e| CliError::Input(format!("cannot write output: {e}")))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

pub fn run(command: &Command, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Ingest(a) => ingest(a, out),
        Command::Retrieve(a) => retrieve(a, cfg, out),
        Command::Score(a) => score(a, cfg, out),
        Command::Eval(a) => evaluate(a, cfg, out),
        Command::Synth(a) => synth(a, cfg, out),
        Command::Config => emit(out, cfg),
        Command::Bench(_) => Err(CliError::Config("bench cannot be nested".into())),
    }
}

fn ingest(a: &IngestArgs, out: &mut dyn Write) -> Result<()> {
    let embeddings = EmbeddingMatrix::load(&a.embeddings)?;
    let index = build_index(&a.manifest, &embeddings)?;
    index.save_bundle(&a.out)?;
    emit(
        out,
        &json!({ "documents": index.len(), "dim": index.dim(), "bundle": a.out }),
    )
}

#[derive(Serialize)]
struct ResultRow<'a> {
    doc_id: &'a str,
    score: f64,
    cluster: Option<usize>,
}

fn clustering_json(r: &RetrievalResult) -> Value {
    let Some(c) = &r.clustering else {
        return Value::Null;
    };
    let chosen = c.candidates.iter().find(|f| f.k == c.k);
    let kde = c.kde.as_ref();
    json!({
        "k": c.k,
        "means": c.components.iter().map(|g| g.mean).collect::<Vec<_>>(),
        "variances": c.components.iter().map(|g| g.variance).collect::<Vec<_>>(),
        "weights": c.components.iter().map(|g| g.weight).collect::<Vec<_>>(),
        "bic": chosen.map(|f| f.bic),
        "cluster_sizes": c.cluster_sizes(),
        "bandwidth": kde.map(|k| k.bandwidth),
        "kde_weights": kde.map(|k| k.cluster_weights.clone()),
        "allocations": r.allocations,
    })
}

fn retrieve(a: &RetrieveArgs, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let index = KnowledgeIndex::load_bundle(&a.index)?;
    if index.is_empty() {
        return Err(CliError::Input("knowledge index is empty".into()));
    }
    let keys = EmbeddingMatrix::load(&a.keys)?;
    let kde_cfg = cfg.kde_sample();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let results: Vec<RetrievalResult> = pool.install(|| {
        (0..keys.count())
            .into_par_iter()
            .map(|i| {
                let scores = score_all(keys.row(i), &index)?;
                match cfg.method {
                    Method::Topk => Ok(top_k(&scores, cfg.budget)),
                    Method::Kde => Ok(kde_sample(&scores, cfg.budget, cfg.seed, &kde_cfg)?),
                }
            })
            .collect::<Result<Vec<_>>>()
    })?;
    for (i, r) in results.iter().enumerate() {
        let rows: Vec<ResultRow> = r
            .hits
            .iter()
            .map(|h| ResultRow {
                doc_id: &index.documents()[h.index].doc_id,
                score: h.score,
                cluster: h.cluster,
            })
            .collect();
        emit(
            out,
            &json!({
                "query_id": i,
                "method": cfg.method,
                "budget": cfg.budget,
                "results": rows,
                "clustering": clustering_json(r),
            }),
        )?;
    }
    Ok(())
}

pub fn parse_shape(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height in {s:?}"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width in {s:?}"))?;
    if h == 0 || w == 0 {
        return Err(format!("shape {s:?} must be positive"));
    }
    Ok((h, w))
}

fn load_prompts(a: &ScoreArgs, cfg: &RunConfig) -> Result<(Vec<f32>, Vec<f32>)> {
    if let Some(path) = &a.prompts {
        let m = EmbeddingMatrix::load(path)?;
        if m.count() != 2 {
            return Err(CliError::Config(format!(
                "{} must hold exactly 2 rows (positive, negative), found {}",
                path.display(),
                m.count()
            )));
        }
        return Ok((m.row(0).to_vec(), m.row(1).to_vec()));
    }
    let (Some(table), Some(label)) = (&a.prompt_table, &a.label) else {
        return Err(CliError::Config(
            "give either --prompts or --prompt-table with --label".into(),
        ));
    };
    let store = CentroidStore::load(table)?;
    let pair = cfg
        .prompt_templates()
        .instantiate(label, a.object.as_deref().unwrap_or("object"))?;
    let lookup = |text: &str| -> Result<Vec<f32>> {
        store
            .labels()
            .iter()
            .position(|l| l == text)
            .map(|i| store.centroids().row(i).to_vec())
            .ok_or_else(|| CliError::Input(format!("prompt {text:?} not found in {}", table.display())))
    };
    Ok((lookup(&pair.positive)?, lookup(&pair.negative)?))
}

fn score(a: &ScoreArgs, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let (grid_h, grid_w) = parse_shape(&a.grid).map_err(CliError::Config)?;
    let (out_h, out_w) = match &a.out_size {
        Some(s) => parse_shape(s).map_err(CliError::Config)?,
        None => (grid_h, grid_w),
    };
    let mut patches = EmbeddingMatrix::load(&a.patches)?;
    let mut stage_reports = Vec::new();
    if !a.hsp_dict.is_empty() {
        let stages = a
            .hsp_dict
            .iter()
            .map(|p| {
                Ok(Stage {
                    dictionary: to_dmatrix(&EmbeddingMatrix::load(p)?),
                    lambda: cfg.hsp_lambda,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let coded = hierarchical_apply(&stages, &to_dmatrix(&patches), &cfg.solver())?;
        if let Some(row) = coded.embeddings.row_iter().position(|r| r.iter().all(|&v| v == 0.0)) {
            return Err(CliError::Numerical(format!(
                "sparse coding reconstructed patch {row} as zero; lower hsp_lambda"
            )));
        }
        patches = from_dmatrix(&coded.embeddings)?;
        stage_reports = coded.stages;
    }
    let grid = PatchGrid::new(grid_h, grid_w, &patches)?;
    let (positive, negative) = load_prompts(a, cfg)?;
    let map = localization_map(&grid, &positive, &negative, out_h, out_w, cfg.aggregator())?;
    if map.degenerate_patches > 0 {
        eprintln!(
            "warning: {} patches had zero shifted similarity to both prompts and were set to 0.5",
            map.degenerate_patches
        );
    }
    if let Some(path) = &a.out {
        write_file(path, &map.to_pgm())?;
    }
    let mut report = json!({
        "image_score": map.image_score,
        "aggregator": map.aggregator,
        "h": map.height,
        "w": map.width,
        "grid_h": grid_h,
        "grid_w": grid_w,
        "degenerate_patches": map.degenerate_patches,
    });
    if let Some(vis_path) = &a.vis {
        let vis = EmbeddingMatrix::load(vis_path)?;
        if vis.count() != 1 {
            return Err(CliError::Config(format!("{} must hold one row", vis_path.display())));
        }
        let vis: Vec<f64> = vis.row(0).iter().map(|&v| v as f64).collect();
        let prior = assemble_prior(&map, &vis)?;
        report["prior_len"] = json!(prior.values.len());
        if let Some(path) = &a.prior_out {
            let row = EmbeddingMatrix::from_f64_rows(prior.values.len(), &[&prior.values])?;
            write_file(path, &row.to_bytes())?;
        }
    }
    if a.diagnostics && !stage_reports.is_empty() {
        report["hsp"] = serde_json::to_value(&stage_reports).map_err(|e| CliError::Numerical(e.to_string()))?;
    }
    emit(out, &report)
}

#[derive(Deserialize)]
struct ScoreRow {
    #[allow(dead_code)]
    id: Value,
    score: f64,
    label: u8,
}

fn read_scores(path: &Path) -> Result<LabeledScores> {
    let text = String::from_utf8(read_file(path)?)
        .map_err(|_| CliError::Input(format!("{} is not UTF-8", path.display())))?;
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: ScoreRow = serde_json::from_str(line)
            .map_err(|e| CliError::Input(format!("{}:{}: {e}", path.display(), n + 1)))?;
        scores.push(row.score);
        labels.push(row.label);
    }
    Ok(LabeledScores::new(scores, labels)?)
}

fn read_pgm(path: &Path) -> Result<pgm::Pgm> {
    pgm::decode(&read_file(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn evaluate(a: &EvalArgs, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    if a.scores.is_none() && a.map.is_empty() {
        return Err(CliError::Input("nothing to evaluate: give --scores and/or --map/--mask".into()));
    }
    if a.map.len() != a.mask.len() {
        return Err(CliError::Config(format!(
            "{} maps but {} masks",
            a.map.len(),
            a.mask.len()
        )));
    }
    let mut images = Vec::with_capacity(a.map.len());
    for (map_path, mask_path) in a.map.iter().zip(&a.mask) {
        let (map, mask) = (read_pgm(map_path)?, read_pgm(mask_path)?);
        if (map.width, map.height) != (mask.width, mask.height) {
            return Err(CliError::Config(format!(
                "{} is {}x{} but {} is {}x{}",
                map_path.display(),
                map.height,
                map.width,
                mask_path.display(),
                mask.height,
                mask.width
            )));
        }
        let values: Vec<f64> = map.pixels.iter().map(|&p| p as f64 / 255.0).collect();
        let labels: Vec<u8> = mask.pixels.iter().map(|&p| u8::from(p != 0)).collect();
        images.push((values, labels));
    }

    let (image_auroc, n) = match &a.scores {
        Some(path) => {
            let data = read_scores(path)?;
            (Some(auroc(&data)?), data.len())
        }
        None => {
            let scores = images.iter().map(|(v, _)| image_score(v, cfg.aggregator())).collect();
            let labels = images.iter().map(|(_, m)| u8::from(m.contains(&1))).collect();
            let data = LabeledScores::new(scores, labels)?;
            let value = auroc(&data).ok();
            if value.is_none() {
                eprintln!("note: image AUROC undefined, every map has the same image label");
            }
            (value, data.len())
        }
    };
    let pixel = if images.is_empty() {
        None
    } else {
        Some(pixel_auroc(images.iter().map(|(v, m)| (v.as_slice(), m.as_slice())))?)
    };
    emit(
        out,
        &json!({
            "image_auroc": image_auroc,
            "pixel_auroc": pixel.as_ref().map(|p| p.value),
            "n": n,
            "pixel_images": pixel.as_ref().map_or(0, |p| p.images_used),
            "pixel_images_skipped": pixel.as_ref().map_or(0, |p| p.images_skipped),
        }),
    )
}

fn read_spec(path: &Path, cfg: &RunConfig) -> Result<SyntheticSpec> {
    let mut value: Value = serde_json::from_slice(&read_file(path)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    if let Some(obj) = value.as_object_mut() {
        obj.entry("seed").or_insert(json!(cfg.seed));
    }
    serde_json::from_value(value).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn synth(a: &SynthArgs, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let spec = read_spec(&a.spec, cfg)?;
    let file = |name: &str| -> PathBuf { a.out.join(name) };
    match a.kind {
        SynthKind::Kb => {
            let kb = eval::gen_planted_kb(&spec)?;
            kb.write_files(&a.out)?;
            emit(
                out,
                &json!({
                    "kind": "kb",
                    "documents": kb.documents.len(),
                    "queries": kb.queries.len(),
                    "dim": spec.dim,
                    "files": ["locks.adsk", "manifest.jsonl", "keys.adsk", "queries.jsonl"],
                }),
            )
        }
        SynthKind::Defect => {
            let f = eval::gen_defect_grid(&spec)?;
            write_file(&file("patches.adsk"), &f.embeddings.to_bytes())?;
            let prompts = EmbeddingMatrix::from_rows(spec.dim, &[&f.positive, &f.negative])?;
            write_file(&file("prompts.adsk"), &prompts.to_bytes())?;
            let mask: Vec<u8> = f.mask.iter().map(|&m| m * 255).collect();
            write_file(&file("mask.pgm"), &pgm::encode(f.out_w, f.out_h, &mask))?;
            let fraction = f.mask.iter().filter(|&&m| m == 1).count() as f64 / f.mask.len() as f64;
            emit(
                out,
                &json!({
                    "kind": "defect",
                    "grid_h": f.patches.height(),
                    "grid_w": f.patches.width(),
                    "out_h": f.out_h,
                    "out_w": f.out_w,
                    "dim": spec.dim,
                    "defect_fraction": fraction,
                    "files": ["patches.adsk", "prompts.adsk", "mask.pgm"],
                }),
            )
        }
        SynthKind::Scores => {
            let m = eval::gen_score_mixture(&spec)?;
            let mut text = String::new();
            for (i, (s, c)) in m.scores.iter().zip(&m.labels).enumerate() {
                text.push_str(&json!({ "id": i, "score": s, "cluster": c }).to_string());
                text.push('\n');
            }
            write_file(&file("scores.jsonl"), text.as_bytes())?;
            emit(
                out,
                &json!({
                    "kind": "scores",
                    "n": m.scores.len(),
                    "clusters": spec.clusters.len(),
                    "files": ["scores.jsonl"],
                }),
            )
        }
    }
}
