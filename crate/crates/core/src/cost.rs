//! Analytic MAC and buffer-memory accounting for the backbone.
//!
//! Counting unit is the multiply-accumulate. Per block with `n` tokens of
//! width `L` and FFN width `F`:
//!
//! | sublayer              | MACs                         |
//! |-----------------------|------------------------------|
//! | QKV projection        | `3·n·L²`                     |
//! | `QKᵀ` and `A·V`       | `2·pairs·L`                  |
//! | output projection     | `n·L²`                       |
//! | FFN                   | `2·n·L·F`                    |
//!
//! where `pairs = n²` for global attention and `N·w²` for windowed attention
//! with `w × w` windows. The patch projection adds `n·L·(region²·3)`. Layer
//! norms, softmax, GELU, bias and residual adds are not counted.
//!
//! Masked frames: global blocks and the patch projection run at the kept
//! token count. Windowed blocks run QKV, attention and output projection over
//! the full scattered tensor and the FFN over the gathered tokens.
//!
//! Buffers are sized for 32-bit floats.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vit::{ModelConfig, OpTrace};

const BYTES_PER_VALUE: u64 = 4;

fn u(v: usize) -> u64 {
    v as u64
}

fn attention_macs(config: &ModelConfig, n: usize, global: bool) -> u64 {
    let l = u(config.embed_dim);
    let pairs = if global {
        u(n) * u(n)
    } else {
        u(n) * u(config.window_side * config.window_side)
    };
    2 * pairs * l
}

fn projection_macs(config: &ModelConfig, n: usize) -> u64 {
    let l = u(config.embed_dim);
    4 * u(n) * l * l
}

fn ffn_macs(config: &ModelConfig, n: usize) -> u64 {
    2 * u(n) * u(config.embed_dim) * u(config.ffn_hidden)
}

fn patch_macs(config: &ModelConfig, n: usize) -> u64 {
    u(n) * u(config.embed_dim) * u(config.patch_dim())
}

/// Exact MACs of a dense forward pass.
pub fn macs_dense(config: &ModelConfig) -> u64 {
    let n = config.num_tokens();
    let blocks: u64 = (0..config.num_blocks)
        .map(|i| {
            projection_macs(config, n)
                + attention_macs(config, n, config.is_global(i))
                + ffn_macs(config, n)
        })
        .sum();
    blocks + patch_macs(config, n)
}

/// Dense forward cost in GMACs.
pub fn flops_dense(config: &ModelConfig) -> f64 {
    macs_dense(config) as f64 / 1e9
}

/// Exact MACs of a masked forward pass that keeps `tokens_kept` tokens.
pub fn macs_masked(config: &ModelConfig, tokens_kept: usize) -> Result<u64> {
    let total = config.num_tokens();
    if tokens_kept == 0 || tokens_kept > total {
        return Err(Error::OutOfRange(format!(
            "tokens_kept {tokens_kept} (valid 1..={total})"
        )));
    }
    let blocks: u64 = (0..config.num_blocks)
        .map(|i| {
            if config.is_global(i) {
                projection_macs(config, tokens_kept)
                    + attention_macs(config, tokens_kept, true)
                    + ffn_macs(config, tokens_kept)
            } else {
                projection_macs(config, total)
                    + attention_macs(config, total, false)
                    + ffn_macs(config, tokens_kept)
            }
        })
        .sum();
    Ok(blocks + patch_macs(config, tokens_kept))
}

/// Masked forward cost in GMACs.
pub fn flops_masked(config: &ModelConfig, tokens_kept: usize) -> Result<f64> {
    Ok(macs_masked(config, tokens_kept)? as f64 / 1e9)
}

/// One `N × L` token buffer.
pub fn token_buffer_bytes(config: &ModelConfig) -> u64 {
    u(config.num_tokens()) * u(config.embed_dim) * BYTES_PER_VALUE
}

/// Reference tensors held for the windowed blocks.
pub fn block_reference_bytes(config: &ModelConfig) -> u64 {
    u(config.windowed_block_count()) * token_buffer_bytes(config)
}

/// Total feature-reuse memory: one reference per windowed block plus the
/// output buffer.
pub fn memory_region_mask(config: &ModelConfig) -> u64 {
    block_reference_bytes(config) + token_buffer_bytes(config)
}

/// Delta-gated (Eventful-style) overhead for raw geometry: per block, eight
/// `N × L` token gates/buffers, the `N × N × H` query-key product and the
/// `N × L` attention-value product.
pub fn eventful_memory(
    num_tokens: usize,
    embed_dim: usize,
    num_heads: usize,
    num_blocks: usize,
) -> u64 {
    let (n, l) = (u(num_tokens), u(embed_dim));
    let products = n * n * u(num_heads) * BYTES_PER_VALUE + n * l * BYTES_PER_VALUE;
    u(num_blocks) * (8 * n * l * BYTES_PER_VALUE + products)
}

/// The two attention-product caches of one delta-gated block.
pub fn eventful_product_bytes(config: &ModelConfig) -> u64 {
    let n = u(config.num_tokens());
    n * n * u(config.num_heads) * BYTES_PER_VALUE + token_buffer_bytes(config)
}

/// Per-block overhead of a delta-gated block.
pub fn eventful_block_bytes(config: &ModelConfig) -> u64 {
    eventful_memory(config.num_tokens(), config.embed_dim, config.num_heads, 1)
}

pub fn memory_eventful(config: &ModelConfig) -> u64 {
    eventful_memory(
        config.num_tokens(),
        config.embed_dim,
        config.num_heads,
        config.num_blocks,
    )
}

/// Scatter/gather operations on a masked frame: the input gather, one
/// scatter and one gather per windowed block, and the final scatter.
pub fn masked_scatter_gather_ops(config: &ModelConfig) -> u64 {
    2 + 2 * u(config.windowed_block_count())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub backbone_gmacs: f64,
    pub buffer_bytes: u64,
    pub scatter_gather_ops: u64,
    pub tokens_processed: usize,
}

/// Cost report for one executed forward pass.
pub fn measure_run(trace: &OpTrace, config: &ModelConfig) -> CostReport {
    CostReport {
        backbone_gmacs: trace.macs as f64 / 1e9,
        buffer_bytes: memory_region_mask(config),
        scatter_gather_ops: trace.scatter_gather_ops(),
        tokens_processed: trace.tokens_processed,
    }
}

pub fn bytes_to_mb(bytes: u64) -> f64 {
    bytes as f64 / 1e6
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GridSpec;
    use crate::vit::Backbone;

    #[test]
    fn single_token_closed_form() {
        let grid = GridSpec::from_regions(1, 1, 16).unwrap();
        let (l, f, b) = (32u64, 80u64, 3usize);
        for backbone in [Backbone::Windowed, Backbone::Global] {
            let c = ModelConfig::with_backbone(backbone, 32, 4, b, 1, 80, grid, 0);
            c.validate().unwrap();
            let expected = l * 768 + b as u64 * (4 * l * l + 2 * l * f + 2 * l);
            assert_eq!(macs_dense(&c), expected, "{backbone}");
            assert_eq!(macs_masked(&c, 1).unwrap(), expected);
        }
    }

    #[test]
    fn masked_range_checks() {
        let c = ModelConfig::toy(Backbone::Windowed, 0);
        assert!(macs_masked(&c, 0).is_err());
        assert!(macs_masked(&c, 65).is_err());
        assert_eq!(macs_masked(&c, 64).unwrap(), macs_dense(&c));
    }

    #[test]
    fn token_buffer_is_5_4_mb() {
        let c = ModelConfig::vit_b(Backbone::Windowed);
        assert_eq!(token_buffer_bytes(&c), 5_419_008);
    }

    #[test]
    fn unit_geometry_memory() {
        let grid = GridSpec::from_regions(1, 1, 16).unwrap();
        let c = ModelConfig::with_backbone(Backbone::Windowed, 1, 1, 6, 1, 4, grid, 0);
        assert_eq!(
            memory_region_mask(&c),
            4 * (c.windowed_block_count() as u64 + 1)
        );
    }

    #[test]
    fn eventful_zero_tokens() {
        assert_eq!(eventful_memory(0, 768, 12, 12), 0);
        let c = ModelConfig::vit_b(Backbone::Windowed);
        assert_eq!(
            eventful_block_bytes(&c),
            8 * token_buffer_bytes(&c) + eventful_product_bytes(&c)
        );
    }

    #[test]
    fn scatter_gather_budget() {
        assert_eq!(
            masked_scatter_gather_ops(&ModelConfig::vit_b(Backbone::Windowed)),
            18
        );
        assert_eq!(
            masked_scatter_gather_ops(&ModelConfig::vit_b(Backbone::Global)),
            2
        );
    }
}
