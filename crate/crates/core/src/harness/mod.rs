//! Synthetic video, the frame container, and end-to-end sequence runners.

pub mod container;
pub mod runner;
pub mod study;
pub mod synth;

pub use container::{read_frames, write_frames};
pub use runner::{
    ablate_masks, ablate_with_rate, fit_head, run_oracle, run_sequence, Ablation, FeatureError,
    FrameRecord, MaskPolicy, OracleRun, RunOptions, RunResult, StaticPrior,
};
pub use study::{run_study, SequenceScores, StudyConfig, StudyResult, TRAIN_SEED_OFFSET};
pub use synth::{
    generate, random_scene, CameraMotion, GeneratedVideo, SceneObject, SceneParams, SyntheticScene,
};
