use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::block::{msa_block_global, uniform_weight, wmsa_block, wmsa_block_masked, BlockWeights};
use super::config::ModelConfig;
use super::tokens::{scatter_into, TokenSet};
use super::trace::OpTrace;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::mask::RegionMask;
use crate::tensor::Matrix;

/// Half-width of the uniform positional-embedding initialiser.
const POS_EMBED_RANGE: f64 = 0.02;

/// Seeded backbone. Weights are immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    /// `L × (region² · 3)`.
    pub patch_weight: Matrix,
    pub patch_bias: Vec<f32>,
    /// `N × L` learned absolute positions.
    pub pos_embed: Matrix,
    pub blocks: Vec<BlockWeights>,
    windows: Vec<Vec<usize>>,
}

/// Per-sequence feature-reuse memory: the input of every windowed block from
/// the last processed frame, plus the backbone output buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceState {
    block_refs: Vec<Matrix>,
    reference_output: Matrix,
    last_full_frame: Option<usize>,
    frames_processed: usize,
}

impl ReferenceState {
    pub fn new(config: &ModelConfig) -> Self {
        let (n, l) = (config.num_tokens(), config.embed_dim);
        Self {
            block_refs: vec![Matrix::zeros(n, l); config.windowed_block_count()],
            reference_output: Matrix::zeros(n, l),
            last_full_frame: None,
            frames_processed: 0,
        }
    }

    /// Windowed-block references plus the output buffer.
    pub fn buffer_count(&self) -> usize {
        self.block_refs.len() + 1
    }

    pub fn buffer_bytes(&self) -> usize {
        self.block_refs
            .iter()
            .chain(std::iter::once(&self.reference_output))
            .map(|m| std::mem::size_of_val(m.as_slice()))
            .sum()
    }

    pub fn block_refs(&self) -> &[Matrix] {
        &self.block_refs
    }

    pub fn reference_output(&self) -> &Matrix {
        &self.reference_output
    }

    /// Counter value (number of frames processed before it) of the last dense frame.
    pub fn last_full_frame(&self) -> Option<usize> {
        self.last_full_frame
    }

    pub fn frames_processed(&self) -> usize {
        self.frames_processed
    }

    pub fn is_initialized(&self) -> bool {
        self.last_full_frame.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// `N × L` backbone output.
    pub features: Matrix,
    pub trace: OpTrace,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (n, l) = (config.num_tokens(), config.embed_dim);
        let patch_weight = uniform_weight(&mut rng, l, config.patch_dim());
        let pos = (0..n * l)
            .map(|_| ((rng.gen::<f64>() * 2.0 - 1.0) * POS_EMBED_RANGE) as f32)
            .collect();
        let pos_embed = Matrix::from_vec(n, l, pos)?;
        let blocks = (0..config.num_blocks)
            .map(|_| BlockWeights::random(&mut rng, l, config.ffn_hidden))
            .collect();
        Self::from_parts(config, patch_weight, vec![0.0; l], pos_embed, blocks)
    }

    pub fn from_parts(
        config: ModelConfig,
        patch_weight: Matrix,
        patch_bias: Vec<f32>,
        pos_embed: Matrix,
        blocks: Vec<BlockWeights>,
    ) -> Result<Self> {
        config.validate()?;
        let (n, l) = (config.num_tokens(), config.embed_dim);
        if patch_weight.shape() != (l, config.patch_dim())
            || patch_bias.len() != l
            || pos_embed.shape() != (n, l)
            || blocks.len() != config.num_blocks
            || blocks.iter().any(|b| {
                b.embed_dim() != l
                    || b.qkv_weight.shape() != (3 * l, l)
                    || b.fc1_weight.shape() != (config.ffn_hidden, l)
                    || b.fc2_weight.shape() != (l, config.ffn_hidden)
            })
        {
            return Err(Error::DimensionMismatch(
                "weights do not match model config".into(),
            ));
        }
        let windows = if config.windowed_block_count() > 0 {
            config.windows()
        } else {
            Vec::new()
        };
        Ok(Self {
            config,
            patch_weight,
            patch_bias,
            pos_embed,
            blocks,
            windows,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn windows(&self) -> &[Vec<usize>] {
        &self.windows
    }

    /// Flattened `region × region × 3` pixel block, scaled to `[-0.5, 0.5]`.
    pub fn patch_pixels(&self, frame: &Frame, location: usize) -> Vec<f32> {
        let grid = &self.config.grid;
        let s = grid.region_size;
        let (r, c) = grid.row_col(location);
        let mut out = Vec::with_capacity(s * s * 3);
        for y in r * s..(r + 1) * s {
            for x in c * s..(c + 1) * s {
                out.extend(frame.pixel(y, x).iter().map(|&v| v as f32 / 255.0 - 0.5));
            }
        }
        out
    }

    /// Projects the kept regions to tokens and adds their positional embedding.
    /// `None` embeds every region.
    pub fn patch_embed(
        &self,
        frame: &Frame,
        mask: Option<&RegionMask>,
        trace: &mut OpTrace,
    ) -> Result<TokenSet> {
        let grid = &self.config.grid;
        frame.check_grid(grid)?;
        let locations = match mask {
            Some(m) => {
                if m.grid() != grid {
                    return Err(Error::DimensionMismatch(
                        "mask grid differs from model grid".into(),
                    ));
                }
                m.locations()
            }
            None => (0..grid.num_tokens()).collect(),
        };
        let pd = self.config.patch_dim();
        let mut patches = Matrix::zeros(locations.len(), pd);
        for (i, &loc) in locations.iter().enumerate() {
            patches
                .row_mut(i)
                .copy_from_slice(&self.patch_pixels(frame, loc));
        }
        trace.add_macs(locations.len() * pd * self.config.embed_dim);
        let mut emb = patches.linear(&self.patch_weight, &self.patch_bias)?;
        for (i, &loc) in locations.iter().enumerate() {
            for (e, &p) in emb.row_mut(i).iter_mut().zip(self.pos_embed.row(loc)) {
                *e += p;
            }
        }
        trace.tokens_processed = locations.len();
        TokenSet::new(locations, emb)
    }

    /// Processes every token and refreshes all reference tensors.
    pub fn forward_dense(
        &self,
        frame: &Frame,
        state: &mut ReferenceState,
    ) -> Result<ForwardOutput> {
        self.check_state(state)?;
        let mut trace = OpTrace::default();
        let mut tokens = self.patch_embed(frame, None, &mut trace)?;
        let mut window_block = 0;
        for (i, w) in self.blocks.iter().enumerate() {
            if self.config.is_global(i) {
                tokens = msa_block_global(&tokens, w, self.config.num_heads, &mut trace)?;
            } else {
                let (locations, x) = tokens.into_parts();
                let y = wmsa_block(&x, w, &self.config, &self.windows, &mut trace)?;
                state.block_refs[window_block] = x;
                window_block += 1;
                tokens = TokenSet::new(locations, y)?;
            }
        }
        let (_, features) = tokens.into_parts();
        state.reference_output = features.clone();
        state.last_full_frame = Some(state.frames_processed);
        state.frames_processed += 1;
        Ok(ForwardOutput { features, trace })
    }

    /// Processes only the masked-in regions and updates the reference output
    /// at their locations. All other rows keep their previous values.
    pub fn forward_masked(
        &self,
        frame: &Frame,
        mask: &RegionMask,
        state: &mut ReferenceState,
    ) -> Result<ForwardOutput> {
        self.check_state(state)?;
        if !state.is_initialized() {
            return Err(Error::Uninitialized);
        }
        let mut trace = OpTrace::default();
        let mut tokens = self.patch_embed(frame, Some(mask), &mut trace)?;
        trace.gathers += 1;
        let mut window_block = 0;
        for (i, w) in self.blocks.iter().enumerate() {
            if self.config.is_global(i) {
                tokens = msa_block_global(&tokens, w, self.config.num_heads, &mut trace)?;
            } else {
                let (out, new_ref) = wmsa_block_masked(
                    &tokens,
                    &state.block_refs[window_block],
                    w,
                    &self.config,
                    &self.windows,
                    &mut trace,
                )?;
                state.block_refs[window_block] = new_ref;
                window_block += 1;
                tokens = out;
            }
        }
        scatter_into(&tokens, &mut state.reference_output)?;
        trace.scatters += 1;
        state.frames_processed += 1;
        Ok(ForwardOutput {
            features: state.reference_output.clone(),
            trace,
        })
    }

    fn check_state(&self, state: &ReferenceState) -> Result<()> {
        let shape = (self.config.num_tokens(), self.config.embed_dim);
        if state.block_refs.len() != self.config.windowed_block_count()
            || state.reference_output.shape() != shape
        {
            return Err(Error::DimensionMismatch(
                "reference state was built for a different model".into(),
            ));
        }
        Ok(())
    }
}
