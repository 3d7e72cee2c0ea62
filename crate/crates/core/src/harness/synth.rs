//! Deterministic synthetic video: solid-colour rectangles moving over a
//! blocky grey texture, with exact ground-truth boxes.
//!
//! Objects bounce off the frame edges. In moving-camera mode the whole view
//! additionally translates by a fixed integer shift per frame: the texture is
//! sampled in world coordinates and every object's on-screen position moves
//! by the negated camera offset. Objects pushed partly off-screen are
//! clipped; those with less than half their area visible are not annotated
//! or drawn.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::geometry::BBox;
use crate::mask::{AnnotationSet, FrameAnnotation};

/// High channel-contrast colour per class.
pub const CLASS_COLORS: [[u8; 3]; 3] = [[230, 30, 30], [30, 210, 50], [40, 60, 235]];

/// Texture cell side in pixels.
const TEXTURE_CELL: i64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    /// Top-left corner at frame 0.
    pub x: i64,
    pub y: i64,
    pub width: usize,
    pub height: usize,
    pub color: [u8; 3],
    /// Pixels per frame.
    pub velocity: (i64, i64),
    pub class_id: u32,
    /// Rows `[top, bottom)` the object bounces within vertically. The whole
    /// frame when `None`.
    #[serde(default)]
    pub lane: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraMotion {
    #[default]
    Static,
    /// Camera moves by `(dx, dy)` pixels per frame.
    Moving { dx: i64, dy: i64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub height: usize,
    pub width: usize,
    pub objects: Vec<SceneObject>,
    pub background_seed: u64,
    pub num_frames: usize,
    #[serde(default)]
    pub camera: CameraMotion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedVideo {
    pub frames: Vec<Frame>,
    pub annotations: AnnotationSet,
}

impl GeneratedVideo {
    pub fn boxes(&self) -> Vec<Vec<BBox>> {
        self.annotations.boxes()
    }
}

fn hash(seed: u64, x: i64, y: i64) -> u64 {
    // splitmix64 over the mixed coordinates
    let mut z = seed
        ^ (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn texture(seed: u64, wx: i64, wy: i64) -> [u8; 3] {
    let h = hash(
        seed,
        wx.div_euclid(TEXTURE_CELL),
        wy.div_euclid(TEXTURE_CELL),
    );
    let base = 80 + (h % 81) as u8;
    let tint = ((h >> 8) % 11) as u8;
    [base, base + tint / 2, base + tint]
}

/// Bounces a 1-D position inside `0..=max` after one step.
fn step_reflect(pos: &mut i64, vel: &mut i64, max: i64) {
    *pos += *vel;
    if max <= 0 {
        *pos = 0;
        return;
    }
    loop {
        if *pos < 0 {
            *pos = -*pos;
            *vel = -*vel;
        } else if *pos > max {
            *pos = 2 * max - *pos;
            *vel = -*vel;
        } else {
            break;
        }
    }
}

pub fn generate(scene: &SyntheticScene) -> Result<GeneratedVideo> {
    let (h, w) = (scene.height, scene.width);
    if h == 0 || w == 0 {
        return Err(Error::InvalidConfig("empty frame".into()));
    }
    for (i, o) in scene.objects.iter().enumerate() {
        if o.width == 0 || o.height == 0 || o.width > w || o.height > h {
            return Err(Error::InvalidConfig(format!(
                "object {i} ({}x{}) does not fit the {h}x{w} frame",
                o.height, o.width
            )));
        }
    }
    for (i, o) in scene.objects.iter().enumerate() {
        if let Some((top, bottom)) = o.lane {
            if top > bottom || bottom > h || bottom - top < o.height {
                return Err(Error::InvalidConfig(format!(
                    "object {i} ({} tall) does not fit lane {top}..{bottom}",
                    o.height
                )));
            }
        }
    }
    // vertical positions are tracked relative to the lane top
    let lanes: Vec<(i64, i64)> = scene
        .objects
        .iter()
        .map(|o| {
            let (top, bottom) = o.lane.unwrap_or((0, h));
            (top as i64, (bottom - top - o.height) as i64)
        })
        .collect();
    let mut state: Vec<(i64, i64, (i64, i64))> = scene
        .objects
        .iter()
        .zip(&lanes)
        .map(|(o, &(top, my))| {
            let mx = (w - o.width) as i64;
            (o.x.clamp(0, mx), (o.y - top).clamp(0, my), o.velocity)
        })
        .collect();

    let mut frames = Vec::with_capacity(scene.num_frames);
    let mut annotations = Vec::with_capacity(scene.num_frames);
    for t in 0..scene.num_frames {
        if t > 0 {
            for ((o, (x, y, v)), &(_, my)) in scene.objects.iter().zip(state.iter_mut()).zip(&lanes)
            {
                step_reflect(x, &mut v.0, (w - o.width) as i64);
                step_reflect(y, &mut v.1, my);
            }
        }
        let (cam_x, cam_y) = match scene.camera {
            CameraMotion::Static => (0, 0),
            CameraMotion::Moving { dx, dy } => (dx * t as i64, dy * t as i64),
        };
        let mut frame = Frame::new(h, w);
        for py in 0..h {
            for px in 0..w {
                frame.set_pixel(
                    py,
                    px,
                    texture(scene.background_seed, px as i64 + cam_x, py as i64 + cam_y),
                );
            }
        }
        let mut boxes = Vec::new();
        let mut classes = Vec::new();
        for ((o, &(x, y, _)), &(top, _)) in scene.objects.iter().zip(&state).zip(&lanes) {
            let (sx, sy) = (x - cam_x, y + top - cam_y);
            let x1 = sx.clamp(0, w as i64) as usize;
            let y1 = sy.clamp(0, h as i64) as usize;
            let x2 = (sx + o.width as i64).clamp(0, w as i64) as usize;
            let y2 = (sy + o.height as i64).clamp(0, h as i64) as usize;
            if x1 >= x2 || y1 >= y2 || 2 * (x2 - x1) * (y2 - y1) < o.width * o.height {
                continue;
            }
            for py in y1..y2 {
                for px in x1..x2 {
                    frame.set_pixel(py, px, o.color);
                }
            }
            boxes.push(BBox { x1, y1, x2, y2 });
            classes.push(o.class_id);
        }
        frames.push(frame);
        annotations.push(FrameAnnotation {
            index: t,
            boxes,
            classes,
        });
    }
    Ok(GeneratedVideo {
        frames,
        annotations: AnnotationSet {
            frame_size: [h, w],
            frames: annotations,
        },
    })
}

/// Distribution for [`random_scene`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub height: usize,
    pub width: usize,
    pub num_frames: usize,
    pub num_objects: usize,
    /// Inclusive side-length range in pixels.
    pub object_size: (usize, usize),
    /// Maximum horizontal speed in pixels per frame (at least 1 is used).
    pub max_speed: i64,
    /// Chance that an object also drifts vertically by one pixel per frame.
    pub vertical_drift: f64,
    /// Rows `[top, bottom)` in which objects start, e.g. a road band. The
    /// whole frame when `None`.
    pub band: Option<(usize, usize)>,
    /// When set, the band is split into one lane per object with this many
    /// rows between lanes, and each object stays inside its own lane.
    #[serde(default)]
    pub lane_gap: Option<usize>,
    pub camera: CameraMotion,
    pub num_classes: usize,
}

impl SceneParams {
    /// Defaults for a `height × width` frame: two objects in separate lanes
    /// across the lower 85% of the frame, 24 rows apart. Objects are 48–64
    /// pixels from a height of 180 up and shrink to fit smaller frames.
    pub fn lane_scene(height: usize, width: usize, num_frames: usize) -> Self {
        const GAP: usize = 24;
        let top = height * 3 / 20;
        let hi = ((height - top).saturating_sub(GAP) / 2).min(64).min(width);
        let lo = hi.saturating_sub(16).max(8).min(hi);
        Self {
            height,
            width,
            num_frames,
            num_objects: 2,
            object_size: (lo, hi),
            max_speed: 4,
            vertical_drift: 0.25,
            band: Some((top, height)),
            lane_gap: Some(GAP),
            camera: CameraMotion::Static,
            num_classes: CLASS_COLORS.len(),
        }
    }
}

/// Samples a scene. Identical `(params, seed)` give identical scenes.
pub fn random_scene(params: &SceneParams, seed: u64) -> Result<SyntheticScene> {
    let (lo, hi) = params.object_size;
    if lo == 0 || lo > hi || hi > params.height || hi > params.width {
        return Err(Error::InvalidConfig(format!(
            "object size range {lo}..={hi} does not fit {}x{}",
            params.height, params.width
        )));
    }
    let (top, bottom) = params.band.unwrap_or((0, params.height));
    if top >= bottom || bottom > params.height {
        return Err(Error::InvalidConfig(format!("bad band {top}..{bottom}")));
    }
    let n = params.num_objects;
    let lanes: Vec<Option<(usize, usize)>> = match params.lane_gap {
        Some(gap) if n > 0 => {
            let free = (bottom - top).saturating_sub(gap * (n - 1));
            let lane = free / n;
            if lane < hi {
                return Err(Error::InvalidConfig(format!(
                    "{n} lanes with gap {gap} do not fit objects of {hi} rows in band {top}..{bottom}"
                )));
            }
            (0..n)
                .map(|i| {
                    let t = top + i * (lane + gap);
                    Some((t, t + lane))
                })
                .collect()
        }
        _ => vec![None; n],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = params.num_classes.clamp(1, CLASS_COLORS.len());
    let objects = lanes
        .into_iter()
        .map(|lane| {
            let width = rng.gen_range(lo..=hi);
            let height = rng.gen_range(lo..=hi);
            let (top, bottom) = lane.unwrap_or((top, bottom));
            let band_lo = top.min(params.height - height);
            let band_hi = bottom.saturating_sub(height).max(band_lo);
            let y = rng.gen_range(band_lo..=band_hi) as i64;
            let x = rng.gen_range(0..=params.width - width) as i64;
            let speed = rng.gen_range(1..=params.max_speed.max(1));
            let vx = if rng.gen_bool(0.5) { speed } else { -speed };
            let vy = if rng.gen_bool(params.vertical_drift.clamp(0.0, 1.0)) {
                if rng.gen_bool(0.5) {
                    1
                } else {
                    -1
                }
            } else {
                0
            };
            let class_id = rng.gen_range(0..classes) as u32;
            SceneObject {
                x,
                y,
                width,
                height,
                color: CLASS_COLORS[class_id as usize],
                velocity: (vx, vy),
                class_id,
                lane,
            }
        })
        .collect();
    Ok(SyntheticScene {
        height: params.height,
        width: params.width,
        objects,
        background_seed: rng.gen(),
        num_frames: params.num_frames,
        camera: params.camera,
    })
}
