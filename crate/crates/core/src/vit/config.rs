use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GridSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    /// Windowed attention blocks interleaved with a few global blocks.
    Windowed,
    /// Global attention in every block.
    Global,
}

impl std::str::FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "windowed" => Ok(Backbone::Windowed),
            "global" | "non-windowed" => Ok(Backbone::Global),
            other => Err(Error::InvalidConfig(format!("unknown backbone {other:?}"))),
        }
    }
}

impl std::fmt::Display for Backbone {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Backbone::Windowed => "windowed",
            Backbone::Global => "global",
        })
    }
}

/// 1-based indices of the global blocks in a windowed backbone: every third
/// block from 6 blocks up (`{3, 6, 9, 12}` for 12), every second below that.
pub fn default_global_blocks(num_blocks: usize) -> Vec<usize> {
    let step = if num_blocks >= 6 { 3 } else { 2 };
    let mut out: Vec<usize> = (1..=num_blocks).filter(|i| i % step == 0).collect();
    if out.is_empty() && num_blocks > 0 {
        out.push(num_blocks);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub num_heads: usize,
    pub num_blocks: usize,
    /// 1-based, sorted.
    pub global_blocks: Vec<usize>,
    /// Tokens per window side in windowed blocks.
    pub window_side: usize,
    pub ffn_hidden: usize,
    pub grid: GridSpec,
    pub seed: u64,
}

impl ModelConfig {
    /// ViT-B geometry on a 672×672 input: 1764 tokens, L = 768, 12 heads,
    /// 12 blocks, 14×14 windows.
    pub fn vit_b(backbone: Backbone) -> Self {
        Self::with_backbone(
            backbone,
            768,
            12,
            12,
            14,
            3072,
            GridSpec::new(672, 672, 16).expect("valid grid"),
            0,
        )
    }

    /// 8×8-token toy model: L = 64, 4 heads, 4 blocks, 4×4 windows.
    pub fn toy(backbone: Backbone, seed: u64) -> Self {
        Self::with_backbone(
            backbone,
            64,
            4,
            4,
            4,
            256,
            GridSpec::from_regions(8, 8, 16).expect("valid grid"),
            seed,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_backbone(
        backbone: Backbone,
        embed_dim: usize,
        num_heads: usize,
        num_blocks: usize,
        window_side: usize,
        ffn_hidden: usize,
        grid: GridSpec,
        seed: u64,
    ) -> Self {
        let global_blocks = match backbone {
            Backbone::Windowed => default_global_blocks(num_blocks),
            Backbone::Global => (1..=num_blocks).collect(),
        };
        Self {
            embed_dim,
            num_heads,
            num_blocks,
            global_blocks,
            window_side,
            ffn_hidden,
            grid,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.embed_dim == 0 || self.num_heads == 0 || self.ffn_hidden == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.embed_dim % self.num_heads != 0 {
            return bad(format!(
                "embed_dim {} not divisible by {} heads",
                self.embed_dim, self.num_heads
            ));
        }
        let set: BTreeSet<_> = self.global_blocks.iter().copied().collect();
        if set.len() != self.global_blocks.len()
            || set.iter().any(|&b| b == 0 || b > self.num_blocks)
        {
            return bad(format!(
                "global blocks {:?} not a subset of 1..={}",
                self.global_blocks, self.num_blocks
            ));
        }
        if self.windowed_block_count() > 0 {
            let w = self.window_side;
            if w == 0 || self.grid.rows() % w != 0 || self.grid.cols() % w != 0 {
                return bad(format!(
                    "{}x{} token grid not divisible by window side {w}",
                    self.grid.rows(),
                    self.grid.cols()
                ));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn num_tokens(&self) -> usize {
        self.grid.num_tokens()
    }

    /// Input width of the patch projection: `region_size² · 3`.
    pub fn patch_dim(&self) -> usize {
        self.grid.region_size * self.grid.region_size * 3
    }

    /// Whether the 0-based block `i` uses global attention.
    pub fn is_global(&self, i: usize) -> bool {
        self.global_blocks.contains(&(i + 1))
    }

    pub fn windowed_block_count(&self) -> usize {
        self.num_blocks - self.global_blocks.len()
    }

    pub fn backbone(&self) -> Backbone {
        if self.windowed_block_count() == 0 {
            Backbone::Global
        } else {
            Backbone::Windowed
        }
    }

    /// Token windows, each listed in row-major order; windows themselves in
    /// row-major window order.
    pub fn windows(&self) -> Vec<Vec<usize>> {
        let w = self.window_side;
        let (rows, cols) = (self.grid.rows(), self.grid.cols());
        let mut out = Vec::with_capacity((rows / w) * (cols / w));
        for wr in 0..rows / w {
            for wc in 0..cols / w {
                let mut win = Vec::with_capacity(w * w);
                for r in wr * w..(wr + 1) * w {
                    for c in wc * w..(wc + 1) * w {
                        win.push(r * cols + c);
                    }
                }
                out.push(win);
            }
        }
        out
    }
}
