//! IDX files as used by MNIST and Fashion-MNIST: a big-endian magic
//! `0x0000 08 NN` (u8 payload, NN dimensions), NN big-endian u32 sizes, then
//! the raw bytes.

use std::fs;
use std::path::Path;

use super::{Dataset, Split};
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxFile {
    pub dims: Vec<usize>,
    pub payload: Vec<u8>,
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxFile> {
    if bytes.len() < 4 {
        return Err(Error::Data("idx: truncated header".into()));
    }
    if bytes[0] != 0 || bytes[1] != 0 || bytes[2] != 0x08 {
        return Err(Error::Data(format!(
            "idx: bad magic {:02x}{:02x}{:02x}{:02x}",
            bytes[0], bytes[1], bytes[2], bytes[3]
        )));
    }
    let ndim = bytes[3] as usize;
    if ndim == 0 {
        return Err(Error::Data("idx: zero dimensions".into()));
    }
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::Data("idx: truncated dimensions".into()));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|k| u32::from_be_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap()) as usize)
        .collect();
    let total = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Data("idx: dimension overflow".into()))?;
    let payload = &bytes[header..];
    if payload.len() < total {
        return Err(Error::Data(format!(
            "idx: truncated payload ({} of {total} bytes)",
            payload.len()
        )));
    }
    if payload.len() > total {
        return Err(Error::Data("idx: trailing bytes".into()));
    }
    Ok(IdxFile {
        dims,
        payload: payload.to_vec(),
    })
}

pub fn read_idx(path: impl AsRef<Path>) -> Result<IdxFile> {
    parse_idx(&fs::read(path)?)
}

/// Serializes an IDX file with a u8 payload.
pub fn write_idx(path: impl AsRef<Path>, dims: &[usize], payload: &[u8]) -> Result<()> {
    let total: usize = dims.iter().product();
    if total != payload.len() || dims.is_empty() || dims.len() > 255 {
        return Err(Error::Data("idx: payload does not match dimensions".into()));
    }
    let mut out = vec![0u8, 0, 0x08, dims.len() as u8];
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::Data("idx: dimension overflow".into()))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(payload);
    fs::write(path, out)?;
    Ok(())
}

/// Images scaled from u8 to `[0, 1]`; each sample keeps the trailing
/// dimensions of the file (e.g. `[28, 28]`).
pub fn load_idx_images(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = read_idx(path)?;
    if file.dims.len() < 2 {
        return Err(Error::Data("idx: image file needs at least 2 dimensions".into()));
    }
    let shape = file.dims[1..].to_vec();
    let data = file.payload.iter().map(|&b| b as f64 / 255.0).collect();
    Dataset::new(shape, data, None, Split::Train, path.display().to_string())
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let file = read_idx(path)?;
    if file.dims.len() != 1 {
        return Err(Error::Data("idx: label file must be one-dimensional".into()));
    }
    Ok(file.payload.iter().map(|&b| b as usize).collect())
}

/// Image file plus optional matching label file.
pub fn load_idx(images: impl AsRef<Path>, labels: Option<&Path>) -> Result<Dataset> {
    let ds = load_idx_images(images)?;
    match labels {
        None => Ok(ds),
        Some(p) => {
            let l = load_idx_labels(p)?;
            let shape = ds.sample_shape().to_vec();
            let provenance = ds.provenance().to_string();
            let split = ds.split();
            Dataset::new(shape, ds.values().to_vec(), Some(l), split, provenance)
        }
    }
}
