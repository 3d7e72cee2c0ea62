//! Region masking for frame-based video object detection.
//!
//! The pipeline processes one frame in every `P` densely and, for the frames
//! in between, embeds only the 16×16-pixel regions selected by a combined
//! static (dataset heatmap) and dynamic (previous-frame detections) mask.
//! Windowed transformer blocks keep one reference tensor each; the selected
//! tokens are scattered into it, the block runs at full width, and the rows
//! are gathered back. Global blocks operate on the reduced token set.
//!
//! Modules:
//! - [`mask`]: heatmaps, static/dynamic/combined masks and the refresh schedule
//! - [`vit`]: a small seeded ViT backbone with dense and masked forward passes
//! - [`detector`]: a linear-probe detection head and IoU-based evaluation
//! - [`cost`]: analytic MAC and buffer-memory accounting
//! - [`harness`]: synthetic video, frame containers and sequence runners

pub mod cost;
pub mod detector;
pub mod error;
pub mod frame;
pub mod geometry;
pub mod harness;
pub mod mask;
pub mod tensor;
pub mod vit;

pub use cost::CostReport;
pub use detector::{Detection, DetectionHead, EvalResult};
pub use error::{Error, Result};
pub use frame::Frame;
pub use geometry::{BBox, GridSpec};
pub use mask::{FrameKind, Heatmap, MaskSchedule, RegionMask};
pub use tensor::Matrix;
pub use vit::{Backbone, Model, ModelConfig, OpTrace, ReferenceState, TokenSet};
