//! End-to-end sequence runners.
//!
//! A run processes frame 0 densely, then follows the refresh schedule. Each
//! masked frame's mask is the static mask combined with the regions covered
//! by the previous frame's detections, so the detector output closes the loop.

use serde::{Deserialize, Serialize};

use crate::cost::{measure_run, CostReport};
use crate::detector::{evaluate, Detection, DetectionHead, EvalResult, ProbeSample};
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::geometry::{BBox, GridSpec};
use crate::mask::{
    accumulate_heatmap, combined_mask, dynamic_mask, region_scores, schedule_frame, static_mask,
    AnnotationSet, FrameKind, MaskSchedule, RegionMask, RegionScores,
};
use crate::tensor::Matrix;
use crate::vit::{Model, ReferenceState};

/// Region scores from training annotations, built once per dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticPrior {
    scores: RegionScores,
}

impl StaticPrior {
    pub fn from_annotations<'a, I>(sets: I, grid: &GridSpec) -> Result<Self>
    where
        I: IntoIterator<Item = &'a AnnotationSet>,
    {
        let sets: Vec<&AnnotationSet> = sets.into_iter().collect();
        let heatmap = accumulate_heatmap(
            sets.iter()
                .flat_map(|s| s.frames.iter().map(|f| f.boxes.as_slice())),
            grid,
        )?;
        Ok(Self {
            scores: region_scores(&heatmap, grid)?,
        })
    }

    pub fn from_scores(scores: RegionScores) -> Self {
        Self { scores }
    }

    pub fn scores(&self) -> &RegionScores {
        &self.scores
    }

    pub fn mask(&self, static_keep_rate: f64) -> RegionMask {
        static_mask(&self.scores, static_keep_rate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskPolicy {
    #[default]
    Combined,
    StaticOnly,
    DynamicOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub schedule: MaskSchedule,
    pub policy: MaskPolicy,
    /// Also run a dense oracle on every frame and record feature errors.
    pub oracle: bool,
    pub iou_threshold: f64,
}

impl RunOptions {
    pub fn new(schedule: MaskSchedule) -> Self {
        Self {
            schedule,
            policy: MaskPolicy::Combined,
            oracle: false,
            iou_threshold: 0.5,
        }
    }
}

/// Masked features against a dense pass over the same frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureError {
    /// `‖masked − dense‖_F / ‖dense‖_F` over all tokens.
    pub relative_frobenius: f64,
    /// Largest absolute difference over the tokens processed this frame.
    pub selected_max_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub index: usize,
    pub kind: FrameKind,
    pub tokens_processed: usize,
    pub keep_rate: f64,
    pub detections: Vec<Detection>,
    pub cost: CostReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<FeatureError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub options: RunOptions,
    pub static_mask_keep_count: usize,
    pub frames: Vec<FrameRecord>,
    pub eval: EvalResult,
}

impl RunResult {
    pub fn detections(&self) -> Vec<Vec<Detection>> {
        self.frames.iter().map(|f| f.detections.clone()).collect()
    }

    fn mean(&self, f: impl Fn(&FrameRecord) -> f64) -> f64 {
        if self.frames.is_empty() {
            return 0.0;
        }
        self.frames.iter().map(f).sum::<f64>() / self.frames.len() as f64
    }

    pub fn mean_tokens_processed(&self) -> f64 {
        self.mean(|f| f.tokens_processed as f64)
    }

    pub fn mean_keep_rate(&self) -> f64 {
        self.mean(|f| f.keep_rate)
    }

    /// Mean keep rate over masked frames only (0 when there are none).
    pub fn mean_masked_keep_rate(&self) -> f64 {
        let masked: Vec<f64> = self
            .frames
            .iter()
            .filter(|f| f.kind == FrameKind::Masked)
            .map(|f| f.keep_rate)
            .collect();
        if masked.is_empty() {
            0.0
        } else {
            masked.iter().sum::<f64>() / masked.len() as f64
        }
    }

    pub fn mean_gmacs(&self) -> f64 {
        self.mean(|f| f.cost.backbone_gmacs)
    }

    pub fn mean_scatter_gather_ops(&self) -> f64 {
        self.mean(|f| f.cost.scatter_gather_ops as f64)
    }

    pub fn max_relative_error(&self) -> Option<f64> {
        self.frames
            .iter()
            .filter_map(|f| f.error.map(|e| e.relative_frobenius))
            .reduce(f64::max)
    }

    pub fn mean_relative_error(&self) -> Option<f64> {
        let errs: Vec<f64> = self
            .frames
            .iter()
            .filter_map(|f| f.error.map(|e| e.relative_frobenius))
            .collect();
        (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64)
    }

    pub fn max_selected_error(&self) -> Option<f64> {
        self.frames
            .iter()
            .filter_map(|f| f.error.map(|e| e.selected_max_abs))
            .reduce(f64::max)
    }
}

fn feature_error(masked: &Matrix, dense: &Matrix, selected: &[usize]) -> FeatureError {
    let mut diff = 0.0;
    for (a, b) in masked.as_slice().iter().zip(dense.as_slice()) {
        diff += (*a as f64 - *b as f64).powi(2);
    }
    let norm = dense.frobenius();
    let relative_frobenius = if norm > 0.0 {
        diff.sqrt() / norm
    } else {
        diff.sqrt()
    };
    let selected_max_abs = selected
        .iter()
        .flat_map(|&r| {
            masked
                .row(r)
                .iter()
                .zip(dense.row(r))
                .map(|(a, b)| (*a as f64 - *b as f64).abs())
        })
        .fold(0.0, f64::max);
    FeatureError {
        relative_frobenius,
        selected_max_abs,
    }
}

/// Runs the masked pipeline over a sequence and evaluates it against
/// `ground_truth` (one box list per frame).
pub fn run_sequence(
    frames: &[Frame],
    ground_truth: &[Vec<BBox>],
    prior: &StaticPrior,
    model: &Model,
    head: &DetectionHead,
    options: &RunOptions,
) -> Result<RunResult> {
    if frames.is_empty() {
        return Err(Error::EmptySequence);
    }
    options.schedule.validate()?;
    let config = model.config();
    let grid = config.grid;
    let n = grid.num_tokens();
    let static_part = match options.policy {
        MaskPolicy::DynamicOnly => RegionMask::none(grid),
        _ => prior.mask(options.schedule.static_keep_rate),
    };
    if static_part.grid() != &grid {
        return Err(Error::DimensionMismatch(
            "static prior grid differs from model grid".into(),
        ));
    }

    let mut state = ReferenceState::new(config);
    let mut oracle_state = ReferenceState::new(config);
    let mut previous: Vec<Detection> = Vec::new();
    let mut records = Vec::with_capacity(frames.len());
    for (t, frame) in frames.iter().enumerate() {
        // Frame 0 is always dense regardless of the period.
        let kind = schedule_frame(t, &options.schedule);
        let (out, selected) = match kind {
            FrameKind::FullFrame => (model.forward_dense(frame, &mut state)?, (0..n).collect()),
            FrameKind::Masked => {
                let mask = match options.policy {
                    MaskPolicy::StaticOnly => static_part.clone(),
                    _ => {
                        let boxes: Vec<BBox> = previous.iter().map(|d| d.bbox).collect();
                        let dynamic = dynamic_mask(&boxes, &grid, options.schedule.dilation);
                        combined_mask(&static_part, &dynamic)?
                    }
                };
                let out = model.forward_masked(frame, &mask, &mut state)?;
                (out, mask.locations())
            }
        };
        let error = if options.oracle {
            let dense = model.forward_dense(frame, &mut oracle_state)?;
            Some(feature_error(&out.features, &dense.features, &selected))
        } else {
            None
        };
        let detections = head.detect(&out.features)?;
        let cost = measure_run(&out.trace, config);
        records.push(FrameRecord {
            index: t,
            kind,
            tokens_processed: cost.tokens_processed,
            keep_rate: cost.tokens_processed as f64 / n as f64,
            detections: detections.clone(),
            cost,
            error,
        });
        previous = detections;
    }
    let dets: Vec<Vec<Detection>> = records.iter().map(|r| r.detections.clone()).collect();
    let eval = evaluate(&dets, ground_truth, options.iou_threshold)?;
    Ok(RunResult {
        options: *options,
        static_mask_keep_count: static_part.keep_count(),
        frames: records,
        eval,
    })
}

/// Dense features and detections for every frame.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleRun {
    pub features: Vec<Matrix>,
    pub detections: Vec<Vec<Detection>>,
}

impl OracleRun {
    pub fn evaluate(&self, ground_truth: &[Vec<BBox>], iou_threshold: f64) -> Result<EvalResult> {
        evaluate(&self.detections, ground_truth, iou_threshold)
    }
}

/// Processes every frame densely, ignoring any schedule.
pub fn run_oracle(frames: &[Frame], model: &Model, head: &DetectionHead) -> Result<OracleRun> {
    let mut state = ReferenceState::new(model.config());
    let mut features = Vec::with_capacity(frames.len());
    let mut detections = Vec::with_capacity(frames.len());
    for frame in frames {
        let out = model.forward_dense(frame, &mut state)?;
        detections.push(head.detect(&out.features)?);
        features.push(out.features);
    }
    Ok(OracleRun {
        features,
        detections,
    })
}

/// Fits the detection head's probes on dense features of the given frames.
pub fn fit_head(
    model: &Model,
    frames: &[(&Frame, &[BBox], &[u32])],
    num_classes: usize,
    ridge: f64,
) -> Result<DetectionHead> {
    let mut feats = Vec::with_capacity(frames.len());
    for (frame, _, _) in frames {
        let mut state = ReferenceState::new(model.config());
        feats.push(model.forward_dense(frame, &mut state)?.features);
    }
    let samples: Vec<ProbeSample<'_>> = feats
        .iter()
        .zip(frames)
        .map(|(f, (_, boxes, classes))| ProbeSample {
            features: f,
            boxes,
            classes,
        })
        .collect();
    DetectionHead::fit(model.config().grid, &samples, num_classes, ridge)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    pub combined: RunResult,
    pub static_only: RunResult,
    pub dynamic_only: RunResult,
    /// Static keep rate used for the static-only run.
    pub static_only_keep_rate: f64,
}

/// Static-only, dynamic-only and combined masks on the same sequence. The
/// static-only run raises `k_s` to the combined run's mean masked-frame keep
/// rate; the dynamic-only run uses `k_s = 0`.
pub fn ablate_masks(
    frames: &[Frame],
    ground_truth: &[Vec<BBox>],
    prior: &StaticPrior,
    model: &Model,
    head: &DetectionHead,
    options: &RunOptions,
) -> Result<Ablation> {
    let combined = run_sequence(
        frames,
        ground_truth,
        prior,
        model,
        head,
        &RunOptions {
            policy: MaskPolicy::Combined,
            ..*options
        },
    )?;
    let static_only_keep_rate = combined.mean_masked_keep_rate();
    ablate_with_rate(
        frames,
        ground_truth,
        prior,
        model,
        head,
        options,
        combined,
        static_only_keep_rate,
    )
}

/// [`ablate_masks`] with an explicit static-only keep rate, e.g. one matched
/// to a pooled combined rate across several sequences.
#[allow(clippy::too_many_arguments)]
pub fn ablate_with_rate(
    frames: &[Frame],
    ground_truth: &[Vec<BBox>],
    prior: &StaticPrior,
    model: &Model,
    head: &DetectionHead,
    options: &RunOptions,
    combined: RunResult,
    static_only_keep_rate: f64,
) -> Result<Ablation> {
    // pad up to a whole region count so static-only never keeps fewer
    // regions than the combined mask did on average
    let n = prior.scores().grid.num_tokens();
    let count = (static_only_keep_rate.clamp(0.0, 1.0) * n as f64)
        .ceil()
        .min(n as f64);
    let mut static_sched = options.schedule;
    static_sched.static_keep_rate = ((count + 0.5) / n as f64).min(1.0);
    let static_only = run_sequence(
        frames,
        ground_truth,
        prior,
        model,
        head,
        &RunOptions {
            schedule: static_sched,
            policy: MaskPolicy::StaticOnly,
            ..*options
        },
    )?;
    let mut dyn_sched = options.schedule;
    dyn_sched.static_keep_rate = 0.0;
    let dynamic_only = run_sequence(
        frames,
        ground_truth,
        prior,
        model,
        head,
        &RunOptions {
            schedule: dyn_sched,
            policy: MaskPolicy::DynamicOnly,
            ..*options
        },
    )?;
    Ok(Ablation {
        combined,
        static_only,
        dynamic_only,
        static_only_keep_rate,
    })
}
