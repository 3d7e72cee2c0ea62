//! Pre-norm transformer blocks.
//!
//! `x ← x + Proj(MHA(LN₁(x)))`, then `x ← x + FC₂(GELU(FC₁(LN₂(x))))`.

use rand::Rng;

use super::attention::multi_head_attention;
use super::config::ModelConfig;
use super::tokens::{gather, scatter_into, TokenSet};
use super::trace::OpTrace;
use crate::error::{Error, Result};
use crate::tensor::{gelu, Matrix};

pub(crate) const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub ln1_gamma: Vec<f32>,
    pub ln1_beta: Vec<f32>,
    /// `3L × L`, rows ordered Q, K, V.
    pub qkv_weight: Matrix,
    pub qkv_bias: Vec<f32>,
    pub proj_weight: Matrix,
    pub proj_bias: Vec<f32>,
    pub ln2_gamma: Vec<f32>,
    pub ln2_beta: Vec<f32>,
    pub fc1_weight: Matrix,
    pub fc1_bias: Vec<f32>,
    pub fc2_weight: Matrix,
    pub fc2_bias: Vec<f32>,
}

/// Uniform `(-1/√fan_in, 1/√fan_in)` weights.
pub(crate) fn uniform_weight<R: Rng>(rng: &mut R, out: usize, fan_in: usize) -> Matrix {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..out * fan_in)
        .map(|_| ((rng.gen::<f64>() * 2.0 - 1.0) * bound) as f32)
        .collect();
    Matrix::from_vec(out, fan_in, data).expect("sized")
}

impl BlockWeights {
    pub(crate) fn random<R: Rng>(rng: &mut R, embed: usize, hidden: usize) -> Self {
        Self {
            ln1_gamma: vec![1.0; embed],
            ln1_beta: vec![0.0; embed],
            qkv_weight: uniform_weight(rng, 3 * embed, embed),
            qkv_bias: vec![0.0; 3 * embed],
            proj_weight: uniform_weight(rng, embed, embed),
            proj_bias: vec![0.0; embed],
            ln2_gamma: vec![1.0; embed],
            ln2_beta: vec![0.0; embed],
            fc1_weight: uniform_weight(rng, hidden, embed),
            fc1_bias: vec![0.0; hidden],
            fc2_weight: uniform_weight(rng, embed, hidden),
            fc2_bias: vec![0.0; embed],
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.proj_weight.rows()
    }
}

fn linear(x: &Matrix, w: &Matrix, b: &[f32], trace: &mut OpTrace) -> Result<Matrix> {
    trace.add_macs(x.rows() * w.rows() * w.cols());
    x.linear(w, b)
}

/// `x + Proj(MHA(LN₁(x)))` where rows attend within their group.
pub fn attention_sublayer(
    x: &Matrix,
    w: &BlockWeights,
    num_heads: usize,
    groups: &[Vec<usize>],
    trace: &mut OpTrace,
) -> Result<Matrix> {
    let normed = x.layer_norm(&w.ln1_gamma, &w.ln1_beta, LN_EPS);
    let qkv = linear(&normed, &w.qkv_weight, &w.qkv_bias, trace)?;
    let (attn, macs) = multi_head_attention(&qkv, num_heads, groups)?;
    trace.add_macs(macs);
    let mut out = linear(&attn, &w.proj_weight, &w.proj_bias, trace)?;
    out.add_assign(x)?;
    Ok(out)
}

/// `x + FC₂(GELU(FC₁(LN₂(x))))`; purely per-row.
pub fn ffn_sublayer(x: &Matrix, w: &BlockWeights, trace: &mut OpTrace) -> Result<Matrix> {
    let normed = x.layer_norm(&w.ln2_gamma, &w.ln2_beta, LN_EPS);
    let mut hidden = linear(&normed, &w.fc1_weight, &w.fc1_bias, trace)?;
    hidden.map_inplace(gelu);
    let mut out = linear(&hidden, &w.fc2_weight, &w.fc2_bias, trace)?;
    out.add_assign(x)?;
    Ok(out)
}

/// Global block over exactly the provided tokens. Locations pass through.
pub fn msa_block_global(
    tokens: &TokenSet,
    w: &BlockWeights,
    num_heads: usize,
    trace: &mut OpTrace,
) -> Result<TokenSet> {
    if tokens.is_empty() {
        return Ok(tokens.clone());
    }
    let all = vec![(0..tokens.len()).collect::<Vec<_>>()];
    let x = attention_sublayer(tokens.embeddings(), w, num_heads, &all, trace)?;
    let x = ffn_sublayer(&x, w, trace)?;
    Ok(tokens.with_embeddings(x))
}

/// Dense windowed block over all `N` tokens.
pub fn wmsa_block(
    x: &Matrix,
    w: &BlockWeights,
    config: &ModelConfig,
    windows: &[Vec<usize>],
    trace: &mut OpTrace,
) -> Result<Matrix> {
    check_full(x, config)?;
    let x = attention_sublayer(x, w, config.num_heads, windows, trace)?;
    ffn_sublayer(&x, w, trace)
}

/// Windowed block on a sparse token set.
///
/// The tokens are scattered into a copy of the block's reference tensor,
/// which becomes the new reference. The attention sublayer runs over all
/// `N` rows so windows partition cleanly; rows at the token locations are
/// then gathered and only they pass through the FFN, which is per-row and
/// therefore yields exactly the dense block's rows at those locations.
pub fn wmsa_block_masked(
    tokens: &TokenSet,
    reference: &Matrix,
    w: &BlockWeights,
    config: &ModelConfig,
    windows: &[Vec<usize>],
    trace: &mut OpTrace,
) -> Result<(TokenSet, Matrix)> {
    check_full(reference, config)?;
    let mut scattered = reference.clone();
    scatter_into(tokens, &mut scattered)?;
    trace.scatters += 1;
    trace.gathers += 1;
    if tokens.is_empty() {
        return Ok((tokens.clone(), scattered));
    }
    let attended = attention_sublayer(&scattered, w, config.num_heads, windows, trace)?;
    let picked = gather(&attended, tokens.locations())?;
    let out = ffn_sublayer(picked.embeddings(), w, trace)?;
    Ok((tokens.with_embeddings(out), scattered))
}

fn check_full(x: &Matrix, config: &ModelConfig) -> Result<()> {
    if x.shape() != (config.num_tokens(), config.embed_dim) {
        return Err(Error::DimensionMismatch(format!(
            "expected a {}x{} tensor, got {:?}",
            config.num_tokens(),
            config.embed_dim,
            x.shape()
        )));
    }
    Ok(())
}
