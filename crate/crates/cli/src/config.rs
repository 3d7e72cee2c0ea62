//! Run configuration: built-in defaults, then a JSON config file, then flags.

use std::path::{Path, PathBuf};

use clap::Args;
use regionmask_core::harness::SceneParams;
use regionmask_core::vit::default_global_blocks;
use regionmask_core::{Backbone, GridSpec, MaskSchedule, ModelConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Everything a command needs. The JSON form of a config file uses the same
/// keys; any subset may be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub toy: bool,
    /// Label written to the `dataset` CSV column.
    pub dataset: String,
    pub backbone: Backbone,
    pub period: usize,
    pub static_keep_rate: f64,
    pub region_size: usize,
    pub dilation: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub num_blocks: usize,
    pub window_side: usize,
    pub ffn_hidden: usize,
    /// 1-based global block indices for the windowed backbone; derived from
    /// `num_blocks` when absent.
    pub global_blocks: Option<Vec<usize>>,
    pub frame_height: usize,
    pub frame_width: usize,
    pub num_frames: usize,
    pub num_objects: usize,
    pub train_sequences: usize,
    pub sequences: usize,
    pub seed_scene: u64,
    pub seed_model: u64,
    pub oracle: bool,
    pub ridge: f64,
    pub iou_threshold: f64,
    /// Directory read by `run` and by `mask` when no annotation file is given.
    pub data: PathBuf,
    pub out: PathBuf,
}

impl RunConfig {
    /// Reference geometry (ViT-B on 672×672), or the toy model on an 8×8
    /// grid of 16-pixel regions.
    pub fn defaults(toy: bool) -> Self {
        let (l, h, b, w, f, side) = if toy {
            (64, 4, 4, 4, 256, 128)
        } else {
            (768, 12, 12, 14, 3072, 672)
        };
        Self {
            toy,
            dataset: "synthetic".into(),
            backbone: Backbone::Windowed,
            period: 8,
            static_keep_rate: 0.3,
            region_size: 16,
            dilation: 0,
            embed_dim: l,
            num_heads: h,
            num_blocks: b,
            window_side: w,
            ffn_hidden: f,
            global_blocks: None,
            frame_height: side,
            frame_width: side,
            num_frames: 32,
            num_objects: 2,
            train_sequences: 20,
            sequences: 10,
            seed_scene: 0,
            seed_model: 0,
            oracle: false,
            ridge: 1.0,
            iou_threshold: 0.5,
            data: PathBuf::from("out"),
            out: PathBuf::from("out"),
        }
    }

    /// Resolves defaults, the optional config file and the flags, in that
    /// order of increasing precedence.
    pub fn resolve(flags: &CommonArgs) -> Result<Self> {
        let file = match &flags.config {
            Some(path) => Some(read_config_file(path)?),
            None => None,
        };
        let file_toy = file
            .as_ref()
            .and_then(|m| m.get("toy"))
            .and_then(|v| v.as_bool());
        let toy = flags.toy || file_toy.unwrap_or(false);

        let mut value = serde_json::to_value(Self::defaults(toy)).expect("config serializes");
        if let Some(map) = file {
            let target = value.as_object_mut().expect("config is an object");
            for (k, v) in map {
                if !target.contains_key(&k) {
                    return Err(CliError::Usage(format!("unknown config key {k:?}")));
                }
                target.insert(k, v);
            }
        }
        let mut cfg: RunConfig = serde_json::from_value(value)
            .map_err(|e| CliError::Usage(format!("invalid config value: {e}")))?;
        cfg.toy = toy;
        flags.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let usage = |m: String| Err(CliError::Usage(m));
        if self.num_frames == 0 {
            return usage("num_frames must be ≥ 1".into());
        }
        if self.frame_height == 0 || self.frame_width == 0 {
            return usage("frame size must be positive".into());
        }
        if self.num_objects == 0 {
            return usage("num_objects must be ≥ 1".into());
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return usage(format!(
                "iou_threshold {} outside (0, 1]",
                self.iou_threshold
            ));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return usage(format!(
                "ridge {} must be a finite non-negative number",
                self.ridge
            ));
        }
        self.schedule()?;
        self.model_config()?.validate()?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<MaskSchedule> {
        Ok(MaskSchedule::new(
            self.period,
            self.static_keep_rate,
            self.dilation,
        )?)
    }

    /// Region grid covering the frame, padded up to whole regions.
    pub fn grid(&self) -> Result<GridSpec> {
        Ok(GridSpec::padded(
            self.frame_height,
            self.frame_width,
            self.region_size,
        )?)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        self.model_config_for(self.grid()?)
    }

    pub fn model_config_for(&self, grid: GridSpec) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::with_backbone(
            self.backbone,
            self.embed_dim,
            self.num_heads,
            self.num_blocks,
            self.window_side,
            self.ffn_hidden,
            grid,
            self.seed_model,
        );
        if self.backbone == Backbone::Windowed {
            cfg.global_blocks = match &self.global_blocks {
                Some(g) => g.clone(),
                None => default_global_blocks(self.num_blocks),
            };
        }
        Ok(cfg)
    }

    pub fn scene_params(&self) -> SceneParams {
        let mut p = SceneParams::lane_scene(self.frame_height, self.frame_width, self.num_frames);
        p.num_objects = self.num_objects;
        p
    }

    /// Seeds and settings for report headers; paths are left out so reports
    /// do not depend on where they were written.
    pub fn header(&self) -> Header {
        let mut settings = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = settings.as_object_mut() {
            m.remove("data");
            m.remove("out");
        }
        Header {
            seed_scene: self.seed_scene,
            seed_model: self.seed_model,
            config: settings,
        }
    }

    pub fn seed_line(&self) -> String {
        format!(
            "# seed_scene={} seed_model={}",
            self.seed_scene, self.seed_model
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub seed_scene: u64,
    pub seed_model: u64,
    pub config: serde_json::Value,
}

fn read_config_file(path: &Path) -> Result<serde_json::Map<String, serde_json::Value>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data {
        context: format!("reading {}", path.display()),
        source: e.into(),
    })?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Data {
        context: format!("parsing {}", path.display()),
        source: e.into(),
    })?;
    match value {
        serde_json::Value::Object(m) => Ok(m),
        _ => Err(CliError::Usage(format!(
            "{} must hold a JSON object",
            path.display()
        ))),
    }
}

fn parse_on_off(s: &str) -> std::result::Result<bool, String> {
    match s {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        other => Err(format!("expected on or off, got {other:?}")),
    }
}

fn parse_frame_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(h)?, parse(w)?))
}

/// Flags shared by every subcommand. Each one overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON file with any subset of the run configuration keys
    #[arg(long, value_name = "FILE", global = true)]
    pub config: Option<PathBuf>,

    /// Toy model (L=64, 4 heads, 4 blocks, window 4) on 128×128 frames
    #[arg(long, global = true)]
    pub toy: bool,

    /// Backbone: windowed or global
    #[arg(long, value_name = "KIND", global = true)]
    pub backbone: Option<Backbone>,

    /// Dense refresh period P
    #[arg(long, value_name = "P", global = true)]
    pub period: Option<usize>,

    /// Static keep rate k_s in [0, 1]
    #[arg(long = "static-keep", value_name = "K_S", global = true)]
    pub static_keep: Option<f64>,

    /// Region (patch) side in pixels
    #[arg(long, value_name = "PIXELS", global = true)]
    pub region_size: Option<usize>,

    /// Dynamic mask dilation in regions
    #[arg(long, value_name = "REGIONS", global = true)]
    pub dilation: Option<usize>,

    /// Scene seed
    #[arg(long, value_name = "SEED", global = true)]
    pub seed_scene: Option<u64>,

    /// Model weight seed
    #[arg(long, value_name = "SEED", global = true)]
    pub seed_model: Option<u64>,

    /// Also run the dense oracle and report feature errors
    #[arg(long, value_name = "on|off", num_args = 0..=1, default_missing_value = "on",
          value_parser = parse_on_off, global = true)]
    pub oracle: Option<bool>,

    /// Output directory
    #[arg(long, value_name = "DIR", global = true)]
    pub out: Option<PathBuf>,

    /// Frame size in pixels
    #[arg(long, value_name = "HxW", value_parser = parse_frame_size, global = true)]
    pub frame_size: Option<(usize, usize)>,

    /// Frames per generated sequence
    #[arg(long, value_name = "N", global = true)]
    pub frames: Option<usize>,

    /// Objects per generated sequence
    #[arg(long, value_name = "N", global = true)]
    pub objects: Option<usize>,

    /// Sequences whose annotations build the static mask
    #[arg(long, value_name = "N", global = true)]
    pub train_sequences: Option<usize>,

    /// Evaluation sequences for ablate
    #[arg(long, value_name = "N", global = true)]
    pub sequences: Option<usize>,
}

impl CommonArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! set {
            ($flag:expr => $field:expr) => {
                if let Some(v) = $flag.clone() {
                    $field = v;
                }
            };
        }
        set!(self.backbone => cfg.backbone);
        set!(self.period => cfg.period);
        set!(self.static_keep => cfg.static_keep_rate);
        set!(self.region_size => cfg.region_size);
        set!(self.dilation => cfg.dilation);
        set!(self.seed_scene => cfg.seed_scene);
        set!(self.seed_model => cfg.seed_model);
        set!(self.oracle => cfg.oracle);
        set!(self.out => cfg.out);
        set!(self.frames => cfg.num_frames);
        set!(self.objects => cfg.num_objects);
        set!(self.train_sequences => cfg.train_sequences);
        set!(self.sequences => cfg.sequences);
        if let Some((h, w)) = self.frame_size {
            cfg.frame_height = h;
            cfg.frame_width = w;
        }
    }
}
