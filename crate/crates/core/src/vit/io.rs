//! Little-endian binary containers for model weights and feature maps.
//!
//! Weights: `b"RMWT"`, `u32` version, config fields, `u32` tensor count, tensors.
//! Features: `b"RMFT"`, `u32` version, `u32` tensor count, tensors.
//!
//! Config fields, in order: `u32` embed_dim, num_heads, num_blocks,
//! window_side, ffn_hidden, frame_height, frame_width, region_size; `u64`
//! seed; `u32` global-block count followed by that many `u32` indices.
//!
//! A tensor is `u32` name length, UTF-8 name, `u32` rank, `u32` dims, then
//! row-major `f32` values.

use std::collections::HashMap;
use std::io::{Read, Write};

use super::block::BlockWeights;
use super::config::ModelConfig;
use super::model::Model;
use crate::error::{Error, Result};
use crate::geometry::GridSpec;
use crate::tensor::Matrix;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"RMWT";
pub const FEATURES_MAGIC: &[u8; 4] = b"RMFT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn from_matrix(name: impl Into<String>, m: &Matrix) -> Self {
        Self {
            name: name.into(),
            dims: vec![m.rows(), m.cols()],
            data: m.as_slice().to_vec(),
        }
    }

    pub fn from_vector(name: impl Into<String>, v: &[f32]) -> Self {
        Self {
            name: name.into(),
            dims: vec![v.len()],
            data: v.to_vec(),
        }
    }

    pub fn to_matrix(&self) -> Result<Matrix> {
        match self.dims[..] {
            [r, c] => Matrix::from_vec(r, c, self.data.clone()),
            _ => Err(Error::Format(format!("{} is not rank 2", self.name))),
        }
    }
}

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(Error::Format(format!(
            "bad magic {m:?}, expected {magic:?}"
        )));
    }
    let version = get_u32(r)?;
    if version != FORMAT_VERSION as usize {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    Ok(())
}

pub fn write_tensors<W: Write>(w: &mut W, tensors: &[NamedTensor]) -> Result<()> {
    put_u32(w, tensors.len())?;
    for t in tensors {
        if t.dims.iter().product::<usize>() != t.data.len() {
            return Err(Error::Format(format!(
                "{}: dims disagree with data",
                t.name
            )));
        }
        put_u32(w, t.name.len())?;
        w.write_all(t.name.as_bytes())?;
        put_u32(w, t.dims.len())?;
        for &d in &t.dims {
            put_u32(w, d)?;
        }
        let mut buf = Vec::with_capacity(t.data.len() * 4);
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_tensors<R: Read>(r: &mut R) -> Result<Vec<NamedTensor>> {
    let count = get_u32(r)?;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = get_u32(r)?;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
        let rank = get_u32(r)?;
        let dims = (0..rank).map(|_| get_u32(r)).collect::<Result<Vec<_>>>()?;
        let len: usize = dims.iter().product();
        let mut raw = vec![0u8; len * 4];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push(NamedTensor { name, dims, data });
    }
    Ok(out)
}

pub fn write_features<W: Write>(w: &mut W, tensors: &[NamedTensor]) -> Result<()> {
    w.write_all(FEATURES_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    write_tensors(w, tensors)
}

pub fn read_features<R: Read>(r: &mut R) -> Result<Vec<NamedTensor>> {
    expect_magic(r, FEATURES_MAGIC)?;
    read_tensors(r)
}

fn model_tensors(model: &Model) -> Vec<NamedTensor> {
    let mut t = vec![
        NamedTensor::from_matrix("patch_embed.weight", &model.patch_weight),
        NamedTensor::from_vector("patch_embed.bias", &model.patch_bias),
        NamedTensor::from_matrix("pos_embed", &model.pos_embed),
    ];
    for (i, b) in model.blocks.iter().enumerate() {
        let p = |s: &str| format!("blocks.{i}.{s}");
        t.extend([
            NamedTensor::from_vector(p("ln1.gamma"), &b.ln1_gamma),
            NamedTensor::from_vector(p("ln1.beta"), &b.ln1_beta),
            NamedTensor::from_matrix(p("qkv.weight"), &b.qkv_weight),
            NamedTensor::from_vector(p("qkv.bias"), &b.qkv_bias),
            NamedTensor::from_matrix(p("proj.weight"), &b.proj_weight),
            NamedTensor::from_vector(p("proj.bias"), &b.proj_bias),
            NamedTensor::from_vector(p("ln2.gamma"), &b.ln2_gamma),
            NamedTensor::from_vector(p("ln2.beta"), &b.ln2_beta),
            NamedTensor::from_matrix(p("fc1.weight"), &b.fc1_weight),
            NamedTensor::from_vector(p("fc1.bias"), &b.fc1_bias),
            NamedTensor::from_matrix(p("fc2.weight"), &b.fc2_weight),
            NamedTensor::from_vector(p("fc2.bias"), &b.fc2_bias),
        ]);
    }
    t
}

pub fn write_model<W: Write>(w: &mut W, model: &Model) -> Result<()> {
    let c = model.config();
    w.write_all(WEIGHTS_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    for v in [
        c.embed_dim,
        c.num_heads,
        c.num_blocks,
        c.window_side,
        c.ffn_hidden,
        c.grid.frame_height,
        c.grid.frame_width,
        c.grid.region_size,
    ] {
        put_u32(w, v)?;
    }
    w.write_all(&c.seed.to_le_bytes())?;
    put_u32(w, c.global_blocks.len())?;
    for &g in &c.global_blocks {
        put_u32(w, g)?;
    }
    write_tensors(w, &model_tensors(model))
}

pub fn read_model<R: Read>(r: &mut R) -> Result<Model> {
    expect_magic(r, WEIGHTS_MAGIC)?;
    let f: Vec<usize> = (0..8).map(|_| get_u32(r)).collect::<Result<_>>()?;
    let seed = get_u64(r)?;
    let n_global = get_u32(r)?;
    let global_blocks = (0..n_global)
        .map(|_| get_u32(r))
        .collect::<Result<Vec<_>>>()?;
    let config = ModelConfig {
        embed_dim: f[0],
        num_heads: f[1],
        num_blocks: f[2],
        window_side: f[3],
        ffn_hidden: f[4],
        grid: GridSpec::new(f[5], f[6], f[7])?,
        seed,
        global_blocks,
    };
    config.validate()?;

    let mut by_name: HashMap<String, NamedTensor> = read_tensors(r)?
        .into_iter()
        .map(|t| (t.name.clone(), t))
        .collect();
    let mut take = |name: String| {
        by_name
            .remove(&name)
            .ok_or_else(|| Error::Format(format!("missing tensor {name}")))
    };
    let patch_weight = take("patch_embed.weight".into())?.to_matrix()?;
    let patch_bias = take("patch_embed.bias".into())?.data;
    let pos_embed = take("pos_embed".into())?.to_matrix()?;
    let mut blocks = Vec::with_capacity(config.num_blocks);
    for i in 0..config.num_blocks {
        let mut get = |s: &str| take(format!("blocks.{i}.{s}"));
        blocks.push(BlockWeights {
            ln1_gamma: get("ln1.gamma")?.data,
            ln1_beta: get("ln1.beta")?.data,
            qkv_weight: get("qkv.weight")?.to_matrix()?,
            qkv_bias: get("qkv.bias")?.data,
            proj_weight: get("proj.weight")?.to_matrix()?,
            proj_bias: get("proj.bias")?.data,
            ln2_gamma: get("ln2.gamma")?.data,
            ln2_beta: get("ln2.beta")?.data,
            fc1_weight: get("fc1.weight")?.to_matrix()?,
            fc1_bias: get("fc1.bias")?.data,
            fc2_weight: get("fc2.weight")?.to_matrix()?,
            fc2_bias: get("fc2.bias")?.data,
        });
    }
    Model::from_parts(config, patch_weight, patch_bias, pos_embed, blocks)
}
