//! Multi-sequence mask study: dense oracle against combined, static-only and
//! dynamic-only masks over a family of synthetic sequences.

use serde::{Deserialize, Serialize};

use crate::detector::EvalResult;
use crate::error::{Error, Result};
use crate::geometry::GridSpec;
use crate::harness::runner::{ablate_masks, fit_head, run_oracle, RunOptions, StaticPrior};
use crate::harness::synth::{generate, random_scene, SceneParams};
use crate::mask::MaskSchedule;
use crate::vit::{Backbone, Model, ModelConfig};

/// Offset between evaluation and prior-training scene seeds.
pub const TRAIN_SEED_OFFSET: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub model: ModelConfig,
    pub scene: SceneParams,
    pub sequences: usize,
    /// Sequences whose annotations build the static prior.
    pub train_sequences: usize,
    /// Evaluation sequence `i` uses seed `scene_seed + i`; training sequence
    /// `j` uses `scene_seed + TRAIN_SEED_OFFSET + j`.
    pub scene_seed: u64,
    pub schedule: MaskSchedule,
    pub ridge: f64,
    pub iou_threshold: f64,
}

impl StudyConfig {
    /// Toy model dimensions on a 12×12 grid with two-lane scenes, P = 8 and
    /// `k_s = 0.3`.
    pub fn toy_default(backbone: Backbone, model_seed: u64) -> Self {
        let mut model = ModelConfig::toy(backbone, model_seed);
        model.grid = GridSpec::from_regions(12, 12, model.grid.region_size).expect("12x12 grid");
        let scene = SceneParams::lane_scene(model.grid.frame_height, model.grid.frame_width, 32);
        Self {
            model,
            scene,
            sequences: 10,
            train_sequences: 20,
            scene_seed: 0,
            schedule: MaskSchedule::new(8, 0.3, 0).expect("valid schedule"),
            ridge: 1.0,
            iou_threshold: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.schedule.validate()?;
        if self.sequences == 0 || self.train_sequences == 0 {
            return Err(Error::InvalidConfig(
                "study needs at least one sequence of each kind".into(),
            ));
        }
        if self.sequences as u64 > TRAIN_SEED_OFFSET {
            return Err(Error::InvalidConfig(format!(
                "at most {TRAIN_SEED_OFFSET} evaluation sequences"
            )));
        }
        if (self.scene.height, self.scene.width)
            != (self.model.grid.frame_height, self.model.grid.frame_width)
        {
            return Err(Error::DimensionMismatch(format!(
                "scene {}x{} vs model frame {}x{}",
                self.scene.height,
                self.scene.width,
                self.model.grid.frame_height,
                self.model.grid.frame_width
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceScores {
    pub scene_seed: u64,
    pub dense_f1: f64,
    pub combined_f1: f64,
    pub static_only_f1: f64,
    pub dynamic_only_f1: f64,
    pub combined_keep_rate: f64,
    pub static_only_keep_rate: f64,
    pub dynamic_only_keep_rate: f64,
}

/// Pooled results; keep rates are means over masked frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub dense: EvalResult,
    pub combined: EvalResult,
    pub static_only: EvalResult,
    pub dynamic_only: EvalResult,
    pub combined_keep_rate: f64,
    pub static_only_keep_rate: f64,
    pub dynamic_only_keep_rate: f64,
    pub sequences: Vec<SequenceScores>,
}

impl StudyResult {
    /// Combined F1 minus dense F1.
    pub fn masked_gap(&self) -> f64 {
        self.combined.f1 - self.dense.f1
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Runs the study. The detection head is fitted per sequence on frame 0's
/// dense features; the static prior is shared by all sequences.
pub fn run_study(config: &StudyConfig) -> Result<StudyResult> {
    config.validate()?;
    let model = Model::new(config.model.clone())?;
    let grid = config.model.grid;
    let num_classes = config.scene.num_classes;

    let mut train = Vec::with_capacity(config.train_sequences);
    for j in 0..config.train_sequences as u64 {
        let scene = random_scene(&config.scene, config.scene_seed + TRAIN_SEED_OFFSET + j)?;
        train.push(generate(&scene)?.annotations);
    }
    let prior = StaticPrior::from_annotations(train.iter(), &grid)?;
    let mut options = RunOptions::new(config.schedule);
    options.iou_threshold = config.iou_threshold;

    let (mut dense, mut combined, mut static_only, mut dynamic_only) =
        (vec![], vec![], vec![], vec![]);
    let mut sequences = Vec::with_capacity(config.sequences);
    for i in 0..config.sequences as u64 {
        let seed = config.scene_seed + i;
        let video = generate(&random_scene(&config.scene, seed)?)?;
        let gts = video.boxes();
        let first = &video.annotations.frames[0];
        let head = fit_head(
            &model,
            &[(&video.frames[0], &first.boxes, &first.classes)],
            num_classes,
            config.ridge,
        )?;
        let oracle =
            run_oracle(&video.frames, &model, &head)?.evaluate(&gts, config.iou_threshold)?;
        let ab = ablate_masks(&video.frames, &gts, &prior, &model, &head, &options)?;
        sequences.push(SequenceScores {
            scene_seed: seed,
            dense_f1: oracle.f1,
            combined_f1: ab.combined.eval.f1,
            static_only_f1: ab.static_only.eval.f1,
            dynamic_only_f1: ab.dynamic_only.eval.f1,
            combined_keep_rate: ab.combined.mean_masked_keep_rate(),
            static_only_keep_rate: ab.static_only.mean_masked_keep_rate(),
            dynamic_only_keep_rate: ab.dynamic_only.mean_masked_keep_rate(),
        });
        dense.push(oracle);
        combined.push(ab.combined.eval);
        static_only.push(ab.static_only.eval);
        dynamic_only.push(ab.dynamic_only.eval);
    }
    let thr = config.iou_threshold;
    Ok(StudyResult {
        dense: EvalResult::pooled(dense.iter(), thr),
        combined: EvalResult::pooled(combined.iter(), thr),
        static_only: EvalResult::pooled(static_only.iter(), thr),
        dynamic_only: EvalResult::pooled(dynamic_only.iter(), thr),
        combined_keep_rate: mean(sequences.iter().map(|s| s.combined_keep_rate)),
        static_only_keep_rate: mean(sequences.iter().map(|s| s.static_only_keep_rate)),
        dynamic_only_keep_rate: mean(sequences.iter().map(|s| s.dynamic_only_keep_rate)),
        sequences,
    })
}
