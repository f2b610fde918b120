use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seed;

/// `x + n` with `n ~ N(0, σ²I)`, clipped to `[0, 1]`.
pub fn gaussian_augment(data: &Dataset, sigma: f64, seed: u64) -> Result<Dataset> {
    let bad = || Error::InvalidArgument(format!("σ must be finite and ≥ 0, got {sigma}"));
    if !(sigma >= 0.0) {
        return Err(bad());
    }
    let normal = Normal::new(0.0, sigma).map_err(|_| bad())?;
    let mut rng = seed::stream(seed, "augment-noise", 0);
    let noisy: Vec<f64> = data
        .values()
        .iter()
        .map(|&v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0))
        .collect();
    Dataset::new(
        data.sample_shape().to_vec(),
        noisy,
        data.labels().map(<[usize]>::to_vec),
        data.split(),
        format!("{} + gaussian(σ={sigma})", data.provenance()),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Transform {
    HorizontalFlip,
    VerticalFlip,
    /// Counter-clockwise rotation in degrees about the image centre,
    /// nearest-neighbour sampling, zero fill.
    Rotate { degrees: f64 },
}

fn image_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [h, w] => Ok((1, h, w)),
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::InvalidArgument(format!("expected an image shape, got {shape:?}"))),
    }
}

/// Applies `t` to one image of `shape` (`[H, W]` or `[C, H, W]`).
pub fn apply_transform(img: &[f64], shape: &[usize], t: Transform) -> Result<Vec<f64>> {
    let (c, h, w) = image_dims(shape)?;
    let mut out = vec![0.0; img.len()];
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..h {
            for x in 0..w {
                let src = match t {
                    Transform::HorizontalFlip => Some((y, w - 1 - x)),
                    Transform::VerticalFlip => Some((h - 1 - y, x)),
                    Transform::Rotate { degrees } => rotate_source(y, x, h, w, degrees),
                };
                if let Some((sy, sx)) = src {
                    out[base + y * w + x] = img[base + sy * w + sx];
                }
            }
        }
    }
    Ok(out)
}

/// Source pixel of output `(y, x)` under a counter-clockwise rotation by
/// `degrees`, in screen coordinates (y down). `None` when it falls outside.
fn rotate_source(y: usize, x: usize, h: usize, w: usize, degrees: f64) -> Option<(usize, usize)> {
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (s, c) = degrees.to_radians().sin_cos();
    let (dy, dx) = (y as f64 - cy, x as f64 - cx);
    // Inverse of the forward map (dx, dy) ↦ (c·dx + s·dy, −s·dx + c·dy).
    let sx = c * dx - s * dy + cx;
    let sy = s * dx + c * dy + cy;
    let (ry, rx) = (sy.round(), sx.round());
    if ry < 0.0 || rx < 0.0 || ry > h as f64 - 1.0 || rx > w as f64 - 1.0 {
        None
    } else {
        Some((ry as usize, rx as usize))
    }
}

/// Where a pixel at `(y, x)` lands under the forward rotation, before
/// rounding.
pub fn rotated_coordinate(y: f64, x: f64, h: usize, w: usize, degrees: f64) -> (f64, f64) {
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (s, c) = degrees.to_radians().sin_cos();
    let (dy, dx) = (y - cy, x - cx);
    (-s * dx + c * dy + cy, c * dx + s * dy + cx)
}

/// One transformed copy per sample; each sample gets a transform drawn
/// uniformly from `transforms` (stream `augment-geometric`).
pub fn geometric_augment(data: &Dataset, transforms: &[Transform], seed: u64) -> Result<Dataset> {
    if transforms.is_empty() {
        return Err(Error::InvalidArgument("no geometric transform enabled".into()));
    }
    image_dims(data.sample_shape())?;
    let mut rng = seed::stream(seed, "augment-geometric", 0);
    let mut out = Vec::with_capacity(data.values().len());
    for i in 0..data.len() {
        let t = transforms[rng.random_range(0..transforms.len())];
        out.extend(apply_transform(data.sample(i), data.sample_shape(), t)?);
    }
    Dataset::new(
        data.sample_shape().to_vec(),
        out,
        data.labels().map(<[usize]>::to_vec),
        data.split(),
        format!("{} + geometric", data.provenance()),
    )
}
