use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use regionmask_core::cost::{
    block_reference_bytes, bytes_to_mb, flops_dense, flops_masked, masked_scatter_gather_ops,
    memory_eventful, memory_region_mask, token_buffer_bytes,
};
use regionmask_core::harness::{
    fit_head, generate, random_scene, read_frames, run_oracle, run_sequence, run_study,
    write_frames, RunOptions, RunResult, StaticPrior, StudyConfig, StudyResult, TRAIN_SEED_OFFSET,
};
use regionmask_core::mask::{
    accumulate_heatmap, region_scores, static_mask, AnnotationSet, FrameAnnotation,
};
use regionmask_core::{EvalResult, Frame, GridSpec, Model};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Header, RunConfig};
use crate::error::{CliError, Context, Result};

pub const FRAMES_FILE: &str = "frames.mvdf";
pub const ANNOTATIONS_FILE: &str = "annotations.json";
pub const TRAIN_ANNOTATIONS_FILE: &str = "train_annotations.json";
pub const SCENE_FILE: &str = "scene.json";

/// What `gen` produced, so later commands can report the scene seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub seed_scene: u64,
    pub frame_size: [usize; 2],
    pub num_frames: usize,
    pub num_objects: usize,
    pub train_sequences: usize,
}

/// Reads `scene.json` from a data directory if there is one.
pub fn read_manifest(dir: &Path) -> Result<Option<SceneManifest>> {
    let path = dir.join(SCENE_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = read_text(&path)?;
    let m = serde_json::from_str(&text)
        .map_err(regionmask_core::Error::from)
        .context(|| format!("parsing {}", path.display()))?;
    Ok(Some(m))
}

/// Column order of `run.csv`; the oracle columns follow only with `--oracle`.
pub const RUN_COLUMNS: [&str; 14] = [
    "dataset",
    "backbone",
    "seed_scene",
    "seed_model",
    "tokens_processed",
    "patch_keep_rate",
    "period",
    "static_keep_rate",
    "precision",
    "recall",
    "f1",
    "gmacs",
    "buffer_mb",
    "scatter_gather_ops",
];

pub const ORACLE_COLUMNS: [&str; 5] = [
    "oracle_precision",
    "oracle_recall",
    "oracle_f1",
    "oracle_max_rel_error",
    "oracle_mean_rel_error",
];

fn create_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).context(|| format!("writing {}", path.display()))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).context(|| format!("reading {}", path.display()))
}

fn read_annotations(path: &Path) -> Result<AnnotationSet> {
    AnnotationSet::from_json(&read_text(path)?).context(|| format!("parsing {}", path.display()))
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value).map_err(regionmask_core::Error::from)?;
    s.push('\n');
    Ok(s.into_bytes())
}

/// Joins the annotations of several sequences into one set with running
/// frame indices.
fn concat_annotations(sets: &[AnnotationSet]) -> AnnotationSet {
    let frame_size = sets.first().map_or([0, 0], |s| s.frame_size);
    let frames = sets
        .iter()
        .flat_map(|s| s.frames.iter())
        .enumerate()
        .map(|(i, f)| FrameAnnotation {
            index: i,
            ..f.clone()
        })
        .collect();
    AnnotationSet { frame_size, frames }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WrittenFile {
    pub path: PathBuf,
    pub sha256: String,
}

/// Writes the evaluation sequence (frames and annotations) and the training
/// annotations for the static mask.
pub fn cmd_gen(cfg: &RunConfig, out: &mut impl Write) -> Result<Vec<WrittenFile>> {
    create_out(&cfg.out)?;
    let params = cfg.scene_params();
    let video = generate(&random_scene(&params, cfg.seed_scene)?)?;
    let mut train = Vec::with_capacity(cfg.train_sequences);
    for j in 0..cfg.train_sequences as u64 {
        let scene = random_scene(&params, cfg.seed_scene + TRAIN_SEED_OFFSET + j)?;
        train.push(generate(&scene)?.annotations);
    }

    let mut frames = Vec::new();
    write_frames(&mut frames, &video.frames)?;
    let manifest = SceneManifest {
        seed_scene: cfg.seed_scene,
        frame_size: [cfg.frame_height, cfg.frame_width],
        num_frames: cfg.num_frames,
        num_objects: cfg.num_objects,
        train_sequences: cfg.train_sequences,
    };
    let files = [
        (SCENE_FILE, to_json(&manifest)?),
        (FRAMES_FILE, frames),
        (ANNOTATIONS_FILE, video.annotations.to_json()?.into_bytes()),
        (
            TRAIN_ANNOTATIONS_FILE,
            concat_annotations(&train).to_json()?.into_bytes(),
        ),
    ];
    writeln!(out, "{}", cfg.seed_line()).context(|| "writing report".into())?;
    let mut written = Vec::new();
    for (name, bytes) in files {
        let path = cfg.out.join(name);
        write_file(&path, &bytes)?;
        let sha256 = sha256_hex(&bytes);
        writeln!(out, "{}  {}", sha256, path.display()).context(|| "writing report".into())?;
        written.push(WrittenFile { path, sha256 });
    }
    Ok(written)
}

/// Builds the static mask from an annotation file and writes it as JSON and
/// PGM, along with the heatmap.
pub fn cmd_mask(cfg: &RunConfig, annotations: Option<&Path>, out: &mut impl Write) -> Result<()> {
    let path = annotations.map_or_else(|| cfg.data.join(TRAIN_ANNOTATIONS_FILE), Path::to_path_buf);
    let set = read_annotations(&path)?;
    let grid = GridSpec::padded(set.height(), set.width(), cfg.region_size)?;
    let boxes = set.boxes();
    let heatmap = accumulate_heatmap(boxes.iter().map(Vec::as_slice), &grid)
        .context(|| format!("accumulating {}", path.display()))?;
    let mask = static_mask(&region_scores(&heatmap, &grid)?, cfg.static_keep_rate);

    create_out(&cfg.out)?;
    let mut mask_pgm = Vec::new();
    mask.write_pgm(&mut mask_pgm, grid.region_size)?;
    let mut heat_pgm = Vec::new();
    heatmap.write_pgm(&mut heat_pgm)?;
    for (name, bytes) in [
        ("static_mask.json", mask.to_json()?.into_bytes()),
        ("static_mask.pgm", mask_pgm),
        ("heatmap.pgm", heat_pgm),
    ] {
        let p = cfg.out.join(name);
        write_file(&p, &bytes)?;
        writeln!(out, "{}", p.display()).context(|| "writing report".into())?;
    }
    writeln!(
        out,
        "kept {} of {} regions (k_s = {})",
        mask.keep_count(),
        grid.num_tokens(),
        cfg.static_keep_rate
    )
    .context(|| "writing report".into())?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub header: Header,
    pub result: RunResult,
    /// Dense per-frame evaluation, present with `--oracle`.
    pub oracle: Option<EvalResult>,
}

impl RunReport {
    pub fn csv_header(&self) -> Vec<&'static str> {
        let mut h = RUN_COLUMNS.to_vec();
        if self.oracle.is_some() {
            h.extend(ORACLE_COLUMNS);
        }
        h
    }

    pub fn csv_row(&self, cfg: &RunConfig) -> Vec<String> {
        let r = &self.result;
        let s = &r.options.schedule;
        let mut row = vec![
            cfg.dataset.clone(),
            cfg.backbone.to_string(),
            cfg.seed_scene.to_string(),
            cfg.seed_model.to_string(),
            r.mean_tokens_processed().to_string(),
            r.mean_keep_rate().to_string(),
            s.period.to_string(),
            s.static_keep_rate.to_string(),
            r.eval.precision.to_string(),
            r.eval.recall.to_string(),
            r.eval.f1.to_string(),
            r.mean_gmacs().to_string(),
            bytes_to_mb(r.frames.first().map_or(0, |f| f.cost.buffer_bytes)).to_string(),
            r.mean_scatter_gather_ops().to_string(),
        ];
        if let Some(o) = &self.oracle {
            row.extend([
                o.precision.to_string(),
                o.recall.to_string(),
                o.f1.to_string(),
                r.max_relative_error().unwrap_or(0.0).to_string(),
                r.mean_relative_error().unwrap_or(0.0).to_string(),
            ]);
        }
        row
    }
}

fn load_frames(path: &Path) -> Result<Vec<Frame>> {
    let file = File::open(path).context(|| format!("opening {}", path.display()))?;
    read_frames(&mut BufReader::new(file)).context(|| format!("reading {}", path.display()))
}

/// Runs the masked pipeline over the generated sequence in `cfg.data`.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunReport> {
    let frames = load_frames(&cfg.data.join(FRAMES_FILE))?;
    let ann = read_annotations(&cfg.data.join(ANNOTATIONS_FILE))?;
    let train = read_annotations(&cfg.data.join(TRAIN_ANNOTATIONS_FILE))?;
    if frames.is_empty() {
        return Err(CliError::Data {
            context: format!("reading {}", cfg.data.join(FRAMES_FILE).display()),
            source: regionmask_core::Error::EmptySequence,
        });
    }
    if ann.frames.len() != frames.len() {
        return Err(CliError::Usage(format!(
            "{} annotated frames for {} video frames",
            ann.frames.len(),
            frames.len()
        )));
    }
    let mut padded = Vec::with_capacity(frames.len());
    let mut grid = None;
    for f in &frames {
        let (p, g) = f.pad_to_grid(cfg.region_size)?;
        padded.push(p);
        grid = Some(g);
    }
    let grid = grid.expect("at least one frame");
    let model = Model::new(cfg.model_config_for(grid)?)?;

    let first = &ann.frames[0];
    let num_classes = ann
        .frames
        .iter()
        .flat_map(|f| f.classes.iter())
        .max()
        .map_or(1, |&c| c as usize + 1);
    let head = fit_head(
        &model,
        &[(&padded[0], &first.boxes, &first.classes)],
        num_classes,
        cfg.ridge,
    )?;
    let prior = StaticPrior::from_annotations([&train], &grid)?;
    let mut options = RunOptions::new(cfg.schedule()?);
    options.oracle = cfg.oracle;
    options.iou_threshold = cfg.iou_threshold;
    let gts = ann.boxes();
    let result = run_sequence(&padded, &gts, &prior, &model, &head, &options)?;
    let oracle = if cfg.oracle {
        Some(run_oracle(&padded, &model, &head)?.evaluate(&gts, cfg.iou_threshold)?)
    } else {
        None
    };
    Ok(RunReport {
        header: cfg.header(),
        result,
        oracle,
    })
}

fn csv_bytes(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner()
        .map_err(|e| e.into_error())
        .context(|| "buffering csv".into())
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    write_file(path, &csv_bytes(w)?)
}

/// Writes `run.json` and `run.csv`.
pub fn cmd_run(cfg: &RunConfig, out: &mut impl Write) -> Result<RunReport> {
    let report = run_pipeline(cfg)?;
    create_out(&cfg.out)?;
    write_file(&cfg.out.join("run.json"), &to_json(&report)?)?;
    write_csv(
        &cfg.out.join("run.csv"),
        &report.csv_header(),
        &[report.csv_row(cfg)],
    )?;
    let r = &report.result;
    writeln!(
        out,
        "{}\nf1 {:.4}  keep rate {:.4}  gmacs {:.6}",
        cfg.seed_line(),
        r.eval.f1,
        r.mean_keep_rate(),
        r.mean_gmacs()
    )
    .context(|| "writing report".into())?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub header: Header,
    pub study: StudyResult,
}

pub const ABLATION_COLUMNS: [&str; 10] = [
    "dataset",
    "backbone",
    "seed_scene",
    "seed_model",
    "mask",
    "patch_keep_rate",
    "precision",
    "recall",
    "f1",
    "sequences",
];

/// Dense, combined, static-only and dynamic-only runs over `cfg.sequences`
/// generated sequences.
pub fn cmd_ablate(cfg: &RunConfig, out: &mut impl Write) -> Result<AblationReport> {
    let study_cfg = StudyConfig {
        model: cfg.model_config()?,
        scene: cfg.scene_params(),
        sequences: cfg.sequences,
        train_sequences: cfg.train_sequences,
        scene_seed: cfg.seed_scene,
        schedule: cfg.schedule()?,
        ridge: cfg.ridge,
        iou_threshold: cfg.iou_threshold,
    };
    let study = run_study(&study_cfg)?;
    let rows: Vec<Vec<String>> = [
        ("dense", 1.0, &study.dense),
        ("combined", study.combined_keep_rate, &study.combined),
        (
            "static_only",
            study.static_only_keep_rate,
            &study.static_only,
        ),
        (
            "dynamic_only",
            study.dynamic_only_keep_rate,
            &study.dynamic_only,
        ),
    ]
    .into_iter()
    .map(|(name, rate, e)| {
        vec![
            cfg.dataset.clone(),
            cfg.backbone.to_string(),
            cfg.seed_scene.to_string(),
            cfg.seed_model.to_string(),
            name.to_string(),
            rate.to_string(),
            e.precision.to_string(),
            e.recall.to_string(),
            e.f1.to_string(),
            cfg.sequences.to_string(),
        ]
    })
    .collect();
    let report = AblationReport {
        header: cfg.header(),
        study,
    };
    create_out(&cfg.out)?;
    write_csv(&cfg.out.join("ablation.csv"), &ABLATION_COLUMNS, &rows)?;
    write_file(&cfg.out.join("ablation.json"), &to_json(&report)?)?;
    writeln!(out, "{}", cfg.seed_line()).context(|| "writing report".into())?;
    for r in &rows {
        writeln!(out, "{:<13} keep {:<22} f1 {}", r[4], r[5], r[8])
            .context(|| "writing report".into())?;
    }
    Ok(report)
}

pub const COST_COLUMNS: [&str; 10] = [
    "method",
    "backbone",
    "tokens_processed",
    "patch_keep_rate",
    "gmacs",
    "buffer_mb",
    "block_ref_mb",
    "output_buffer_mb",
    "scatter_gather_ops",
    "eventful_mb",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostRow {
    pub method: &'static str,
    pub backbone: String,
    pub tokens_processed: usize,
    pub patch_keep_rate: f64,
    pub gmacs: f64,
    pub buffer_mb: f64,
    pub block_ref_mb: f64,
    pub output_buffer_mb: f64,
    pub scatter_gather_ops: u64,
    pub eventful_mb: f64,
}

/// Which masked rows to tabulate.
#[derive(Debug, Clone, PartialEq)]
pub enum CostGrid {
    Tokens(Vec<usize>),
    KeepRates(Vec<f64>),
}

/// Dense row followed by masked rows in increasing token count. Keep rates
/// round up to whole tokens.
pub fn cost_table(cfg: &RunConfig, which: &CostGrid) -> Result<Vec<CostRow>> {
    let model = cfg.model_config()?;
    let n = model.num_tokens();
    let mut tokens: Vec<usize> = match which {
        CostGrid::Tokens(t) => t.clone(),
        CostGrid::KeepRates(rates) => {
            let mut out = Vec::with_capacity(rates.len());
            for &r in rates {
                if !(r > 0.0 && r <= 1.0) {
                    return Err(CliError::Usage(format!("keep rate {r} outside (0, 1]")));
                }
                out.push(((r * n as f64).ceil() as usize).clamp(1, n));
            }
            out
        }
    };
    tokens.sort_unstable();
    tokens.dedup();
    let eventful = bytes_to_mb(memory_eventful(&model));
    let mut rows = vec![CostRow {
        method: "dense",
        backbone: cfg.backbone.to_string(),
        tokens_processed: n,
        patch_keep_rate: 1.0,
        gmacs: flops_dense(&model),
        buffer_mb: 0.0,
        block_ref_mb: 0.0,
        output_buffer_mb: 0.0,
        scatter_gather_ops: 0,
        eventful_mb: eventful,
    }];
    for kept in tokens {
        rows.push(CostRow {
            method: "masked",
            backbone: cfg.backbone.to_string(),
            tokens_processed: kept,
            patch_keep_rate: kept as f64 / n as f64,
            gmacs: flops_masked(&model, kept)?,
            buffer_mb: bytes_to_mb(memory_region_mask(&model)),
            block_ref_mb: bytes_to_mb(block_reference_bytes(&model)),
            output_buffer_mb: bytes_to_mb(token_buffer_bytes(&model)),
            scatter_gather_ops: masked_scatter_gather_ops(&model),
            eventful_mb: eventful,
        });
    }
    Ok(rows)
}

/// Writes `cost.csv`.
pub fn cmd_cost(cfg: &RunConfig, which: &CostGrid, out: &mut impl Write) -> Result<Vec<CostRow>> {
    let rows = cost_table(cfg, which)?;
    create_out(&cfg.out)?;
    let path = cfg.out.join("cost.csv");
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r)?;
    }
    write_file(&path, &csv_bytes(w)?)?;
    for r in &rows {
        writeln!(
            out,
            "{:<7} {:>6} tokens  {:>9.3} GMACs  {:>8.2} MB",
            r.method, r.tokens_processed, r.gmacs, r.buffer_mb
        )
        .context(|| "writing report".into())?;
    }
    Ok(rows)
}
