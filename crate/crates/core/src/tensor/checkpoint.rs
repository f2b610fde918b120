//! Binary checkpoint format.
//!
//! ```text
//! "MMX1" | version: u32 | layer count: u32
//! per layer: kind tag: u32 | rank: u32 | rank × dim: u32
//! all parameters, layer order, flat little-endian f64
//! ```
//!
//! All integers are little-endian. Parameter counts are implied by the kind
//! tag and shape, so the payload carries no further framing.

use std::io::{Read, Write};

use super::{Result, Tensor, TensorError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MMX1";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u32)]
pub enum LayerTag {
    /// Shape `[in, out]`; params weight `[in, out]`, bias `[out]`.
    Dense = 1,
    /// Shape `[out_c, in_c, kh, kw]`; params weight (same shape), bias `[out_c]`.
    Conv2dSame = 2,
    Conv2dValid = 3,
    Relu = 4,
    Sigmoid = 5,
    MaxPool2 = 6,
    Upsample2 = 7,
    /// Shape is the per-sample target shape.
    Reshape = 8,
}

impl LayerTag {
    fn from_u32(v: u32) -> Result<Self> {
        use LayerTag::*;
        Ok(match v {
            1 => Dense,
            2 => Conv2dSame,
            3 => Conv2dValid,
            4 => Relu,
            5 => Sigmoid,
            6 => MaxPool2,
            7 => Upsample2,
            8 => Reshape,
            other => return Err(TensorError::Checkpoint(format!("unknown layer tag {other}"))),
        })
    }

    /// Parameter shapes implied by this tag and its descriptor shape.
    pub fn param_shapes(self, shape: &[usize]) -> Result<Vec<Vec<usize>>> {
        let bad = || TensorError::Checkpoint(format!("bad shape {shape:?} for {self:?}"));
        match self {
            LayerTag::Dense => {
                if shape.len() != 2 {
                    return Err(bad());
                }
                Ok(vec![shape.to_vec(), vec![shape[1]]])
            }
            LayerTag::Conv2dSame | LayerTag::Conv2dValid => {
                if shape.len() != 4 {
                    return Err(bad());
                }
                Ok(vec![shape.to_vec(), vec![shape[0]]])
            }
            _ => Ok(vec![]),
        }
    }
}

/// One layer as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerRecord {
    pub tag: LayerTag,
    pub shape: Vec<usize>,
    pub params: Vec<Tensor>,
}

pub fn write_checkpoint<W: Write>(mut out: W, layers: &[LayerRecord]) -> Result<()> {
    let io = |e: std::io::Error| TensorError::Checkpoint(e.to_string());
    out.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    out.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    out.write_all(&(layers.len() as u32).to_le_bytes()).map_err(io)?;
    for layer in layers {
        let expected = layer.tag.param_shapes(&layer.shape)?;
        if expected.len() != layer.params.len()
            || expected.iter().zip(&layer.params).any(|(s, p)| s.as_slice() != p.shape())
        {
            return Err(TensorError::Checkpoint(format!(
                "parameters of {:?} do not match shape {:?}",
                layer.tag, layer.shape
            )));
        }
        out.write_all(&(layer.tag as u32).to_le_bytes()).map_err(io)?;
        out.write_all(&(layer.shape.len() as u32).to_le_bytes()).map_err(io)?;
        for &d in &layer.shape {
            let d = u32::try_from(d).map_err(|_| TensorError::Checkpoint("dimension overflow".into()))?;
            out.write_all(&d.to_le_bytes()).map_err(io)?;
        }
    }
    for layer in layers {
        for p in &layer.params {
            let mut buf = Vec::with_capacity(p.len() * 8);
            for v in p.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&buf).map_err(io)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Vec<LayerRecord>> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| TensorError::Checkpoint(e.to_string()))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(4)? != CHECKPOINT_MAGIC {
        return Err(TensorError::Checkpoint("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(TensorError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = cur.u32()? as usize;
    let mut headers = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let tag = LayerTag::from_u32(cur.u32()?)?;
        let rank = cur.u32()? as usize;
        if rank > 8 {
            return Err(TensorError::Checkpoint(format!("rank {rank} too large")));
        }
        let shape = (0..rank)
            .map(|_| cur.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        headers.push((tag, shape));
    }
    let mut layers = Vec::with_capacity(headers.len());
    for (tag, shape) in headers {
        let mut params = Vec::new();
        for ps in tag.param_shapes(&shape)? {
            let n: usize = ps.iter().product();
            let raw = cur.take(n.checked_mul(8).ok_or_else(|| {
                TensorError::Checkpoint("parameter size overflow".into())
            })?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            params.push(Tensor::new(ps, data)?);
        }
        layers.push(LayerRecord { tag, shape, params });
    }
    if cur.pos != bytes.len() {
        return Err(TensorError::Checkpoint("trailing bytes".into()));
    }
    Ok(layers)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(TensorError::Checkpoint("truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
