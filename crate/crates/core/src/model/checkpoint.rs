use std::fs;
use std::path::Path;

use super::{Layout, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::seqbuild::{AnnotationCodebook, LabelMode};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ICLCKPT1";

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, vs: impl IntoIterator<Item = f32>) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Layout: magic; config block (u32 d_in, d_model, n_layers, n_heads, d_ff,
/// max_positions, u8 input_layernorm); codebook (u8 mode, f64 scale,
/// f32 x d_in label vector, f32 x d_in spurious vector); u64 parameter
/// count; parameters as little-endian f32 in layout order.
pub fn write_checkpoint(params: &ModelParams<f32>) -> Vec<u8> {
    let c = &params.config;
    let mut out = Vec::with_capacity(64 + 4 * (params.theta.len() + 2 * c.d_in));
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for v in [c.d_in, c.d_model, c.n_layers, c.n_heads, c.d_ff, c.max_positions] {
        put_u32(&mut out, v);
    }
    out.push(u8::from(c.input_layernorm));
    let cb = &params.codebook;
    out.push(match cb.mode {
        LabelMode::LabelOnly => 0,
        LabelMode::Group => 1,
    });
    out.extend_from_slice(&cb.anno_scale.to_le_bytes());
    put_f32s(&mut out, cb.v_label.iter().copied());
    put_f32s(&mut out, cb.v_spur.iter().copied());
    out.extend_from_slice(&(params.theta.len() as u64).to_le_bytes());
    put_f32s(&mut out, params.theta.iter().copied());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let len = n.checked_mul(4).ok_or_else(|| Error::Format("checkpoint size overflow".into()))?;
        Ok(self.take(len)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<ModelParams<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = r.u32()?;
    }
    let input_layernorm = match r.u8()? {
        0 => false,
        1 => true,
        b => return Err(Error::Format(format!("bad layer-norm flag {b}"))),
    };
    let config = ModelConfig {
        d_in: dims[0],
        d_model: dims[1],
        n_layers: dims[2],
        n_heads: dims[3],
        d_ff: dims[4],
        max_positions: dims[5],
        input_layernorm,
    };
    config.validate().map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    let mode = match r.u8()? {
        0 => LabelMode::LabelOnly,
        1 => LabelMode::Group,
        b => return Err(Error::Format(format!("bad annotation mode {b}"))),
    };
    let anno_scale = r.f64()?;
    let v_label = r.f32s(config.d_in)?;
    let v_spur = r.f32s(config.d_in)?;
    let layout = Layout::new(&config);
    let count = r.u64()?;
    if count != layout.total as u64 {
        return Err(Error::DimensionMismatch { expected: layout.total, got: count as usize });
    }
    let theta = r.f32s(layout.total)?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes in checkpoint", bytes.len() - r.pos)));
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("checkpoint holds non-finite parameters".into()));
    }
    Ok(ModelParams { config, layout, theta, codebook: AnnotationCodebook { v_label, v_spur, anno_scale, mode } })
}

/// Writes through a temporary file and renames it into place.
pub fn save_checkpoint(path: impl AsRef<Path>, params: &ModelParams<f32>) -> Result<()> {
    crate::fsio::write_atomic(path, &write_checkpoint(params))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
