//! Synthetic sources: correlated Gaussian pairs with known mutual
//! information, and procedurally drawn handwritten-style digits used as an
//! offline stand-in for MNIST.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::seed;

pub const DIGIT_SIDE: usize = 28;

/// Affine squash from ℝ into `[0, 1]`: ±6 standard deviations span the unit
/// interval. Being invertible away from the clamp, it leaves MI unchanged.
pub fn squash(v: f64) -> f64 {
    (0.5 + v / 12.0).clamp(0.0, 1.0)
}

/// `n` jointly Gaussian pairs `(u, v)` with `v = ρu + √(1−ρ²)w`, each sample
/// stored as a `[2, dim]` block (row 0 = u, row 1 = v) after [`squash`].
#[derive(Clone, Debug)]
pub struct GaussianPairs {
    pub rho: f64,
    pub dim: usize,
    pub data: Dataset,
}

impl GaussianPairs {
    /// `−(dim/2)·ln(1−ρ²)` nats per pair.
    pub fn analytic_mi(&self) -> f64 {
        gaussian_mi(self.rho, self.dim)
    }

    pub fn u(&self, i: usize) -> &[f64] {
        &self.data.sample(i)[..self.dim]
    }

    pub fn v(&self, i: usize) -> &[f64] {
        &self.data.sample(i)[self.dim..]
    }
}

pub fn gaussian_mi(rho: f64, dim: usize) -> f64 {
    -(dim as f64 / 2.0) * (1.0 - rho * rho).ln()
}

pub fn synth_gaussian_pairs(rho: f64, dim: usize, n: usize, seed: u64) -> Result<GaussianPairs> {
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidArgument(format!("|rho| must be < 1, got {rho}")));
    }
    if dim == 0 || n == 0 {
        return Err(Error::InvalidArgument("dim and n must be positive".into()));
    }
    let mut rng = seed::stream(seed, "gaussian-pairs", 0);
    let s = (1.0 - rho * rho).sqrt();
    let mut data = Vec::with_capacity(n * 2 * dim);
    let mut v = vec![0.0; dim];
    for _ in 0..n {
        for vj in v.iter_mut() {
            let u: f64 = StandardNormal.sample(&mut rng);
            let w: f64 = StandardNormal.sample(&mut rng);
            data.push(squash(u));
            *vj = rho * u + s * w;
        }
        data.extend(v.iter().map(|&x| squash(x)));
    }
    let ds = Dataset::new(
        vec![2, dim],
        data,
        None,
        Split::Train,
        format!("synthetic gaussian pairs rho={rho} dim={dim} seed={seed}"),
    )?;
    Ok(GaussianPairs { rho, dim, data: ds })
}

type Stroke = Vec<(f64, f64)>;

fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64) -> Stroke {
    (0..=32)
        .map(|k| {
            let a = k as f64 / 32.0 * std::f64::consts::TAU;
            (cx + rx * a.cos(), cy + ry * a.sin())
        })
        .collect()
}

/// Glyph skeletons in a unit box, x to the right and y downwards.
fn glyph(digit: usize) -> Vec<Stroke> {
    match digit {
        0 => vec![ellipse(0.5, 0.5, 0.28, 0.42)],
        1 => vec![vec![(0.34, 0.25), (0.52, 0.08), (0.52, 0.92)]],
        2 => vec![vec![
            (0.22, 0.3),
            (0.3, 0.14),
            (0.5, 0.08),
            (0.7, 0.14),
            (0.78, 0.3),
            (0.7, 0.48),
            (0.22, 0.92),
            (0.82, 0.92),
        ]],
        3 => vec![vec![
            (0.22, 0.15),
            (0.5, 0.08),
            (0.75, 0.18),
            (0.74, 0.36),
            (0.46, 0.5),
            (0.76, 0.62),
            (0.78, 0.8),
            (0.52, 0.92),
            (0.22, 0.85),
        ]],
        4 => vec![vec![(0.66, 0.92), (0.66, 0.08), (0.18, 0.64), (0.84, 0.64)]],
        5 => vec![vec![
            (0.76, 0.08),
            (0.3, 0.08),
            (0.26, 0.45),
            (0.55, 0.4),
            (0.76, 0.54),
            (0.76, 0.78),
            (0.5, 0.92),
            (0.24, 0.85),
        ]],
        6 => vec![vec![
            (0.7, 0.1),
            (0.45, 0.14),
            (0.28, 0.4),
            (0.25, 0.7),
            (0.4, 0.92),
            (0.62, 0.9),
            (0.76, 0.72),
            (0.66, 0.52),
            (0.42, 0.52),
            (0.26, 0.66),
        ]],
        7 => vec![vec![(0.2, 0.08), (0.8, 0.08), (0.44, 0.92)]],
        8 => vec![ellipse(0.5, 0.29, 0.21, 0.2), ellipse(0.5, 0.71, 0.26, 0.21)],
        9 => vec![ellipse(0.5, 0.32, 0.24, 0.22), vec![(0.74, 0.32), (0.68, 0.92)]],
        _ => unreachable!("digit out of range"),
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// Renders one digit with a random similarity-plus-shear transform and
/// stroke width, anti-aliased by distance to the skeleton.
fn render_digit<R: Rng>(digit: usize, rng: &mut R) -> Vec<f64> {
    let side = DIGIT_SIDE as f64;
    let angle = rng.random_range(-0.22..0.22);
    let scale = rng.random_range(17.0..21.0);
    let aspect = rng.random_range(0.8..1.1);
    let shear = rng.random_range(-0.25..0.25);
    let (tx, ty) = (rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
    let half_width = rng.random_range(0.8..1.5);
    let peak = rng.random_range(0.85..1.0);
    let (sin, cos) = f64::sin_cos(angle);

    let strokes: Vec<Stroke> = glyph(digit)
        .into_iter()
        .map(|s| {
            s.into_iter()
                .map(|(gx, gy)| {
                    let x = (gx - 0.5) * aspect + shear * (gy - 0.5);
                    let y = gy - 0.5;
                    let (rx, ry) = (cos * x - sin * y, sin * x + cos * y);
                    (side / 2.0 + tx + scale * rx, side / 2.0 + ty + scale * ry)
                })
                .collect()
        })
        .collect();

    let mut img = vec![0.0; DIGIT_SIDE * DIGIT_SIDE];
    for r in 0..DIGIT_SIDE {
        for c in 0..DIGIT_SIDE {
            let p = (c as f64 + 0.5, r as f64 + 0.5);
            let d = strokes
                .iter()
                .flat_map(|s| s.windows(2).map(move |w| segment_distance(p, w[0], w[1])))
                .fold(f64::INFINITY, f64::min);
            img[r * DIGIT_SIDE + c] = peak * (1.0 - (d - half_width)).clamp(0.0, 1.0);
        }
    }
    img
}

/// `n` labelled 28×28 digit images with values in `[0, 1]`. Train and test
/// splits draw from distinct seed streams.
pub fn synth_digits(n: usize, seed: u64, split: Split) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    let name = match split {
        Split::Train => "synth-digits:train",
        Split::Test => "synth-digits:test",
    };
    let mut rng = seed::stream(seed, name, 0);
    let mut data = Vec::with_capacity(n * DIGIT_SIDE * DIGIT_SIDE);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let digit = rng.random_range(0..10);
        data.extend(render_digit(digit, &mut rng));
        labels.push(digit);
    }
    Dataset::new(
        vec![1, DIGIT_SIDE, DIGIT_SIDE],
        data,
        Some(labels),
        split,
        format!("synthetic digits seed={seed}"),
    )
}
