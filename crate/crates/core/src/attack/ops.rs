//! Scalar building blocks of the MinMax scheme.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `f⁺ = max(f, 0)` and whether its gradient passes (`f > 0`). At `f = 0`
/// the gate is closed.
pub fn hinge(f: f64) -> (f64, bool) {
    if f > 0.0 {
        (f, true)
    } else {
        (0.0, false)
    }
}

/// Clips `δ` to `[−ε, ε]`, then `x+δ` to `[0, 1]`, in that order.
///
/// The result is nudged by at most one ulp where rounding of `clip(x+δ) − x`
/// would otherwise leave `x+δ` or `δ` a hair outside its box, so that both
/// constraints hold exactly in floating point.
pub fn project_box(delta: &mut [f64], x: &[f64], eps: f64) {
    for (d, &xi) in delta.iter_mut().zip(x) {
        let a = d.clamp(-eps, eps);
        if (0.0..=1.0).contains(&(xi + a)) {
            // The second clip is the identity; keep δ bit-exact.
            *d = a;
            continue;
        }
        let p = (xi + a).clamp(0.0, 1.0);
        let mut v = p - xi;
        while xi + v > 1.0 || v > eps {
            v = v.next_down();
        }
        while xi + v < 0.0 || v < -eps {
            v = v.next_up();
        }
        *d = v;
    }
}

/// True when `δ ∈ [−ε, ε]^d` and `x+δ ∈ [0, 1]^d`, evaluated as written.
pub fn is_feasible(delta: &[f64], x: &[f64], eps: f64) -> bool {
    delta.len() == x.len()
        && delta
            .iter()
            .zip(x)
            .all(|(&d, &xi)| d.abs() <= eps && (0.0..=1.0).contains(&(xi + d)))
}

/// `c_{t+1} = (1 − β/t^{1/4})·c_t + β·f⁺`, projected to `[0, c̄]`.
pub fn c_update(c: f64, t: usize, beta: f64, fplus: f64, c_max: f64) -> Result<f64> {
    if t == 0 {
        return Err(Error::InvalidArgument("c update needs t ≥ 1".into()));
    }
    let next = (1.0 - beta / (t as f64).powf(0.25)) * c + beta * fplus;
    Ok(next.clamp(0.0, c_max))
}

/// `‖δ − P_Δ[δ − ∇_δF]‖² + (c − P_𝒞[c + ∇_cF])²` with `∇_cF = f⁺`, `P_Δ`
/// the sequential box projection and `P_𝒞` clamping to `[0, c̄]`.
pub fn stationarity(
    delta: &[f64],
    c: f64,
    grad_delta: &[f64],
    fplus: f64,
    eps: f64,
    x: &[f64],
    c_max: f64,
) -> f64 {
    let mut stepped: Vec<f64> = delta.iter().zip(grad_delta).map(|(d, g)| d - g).collect();
    project_box(&mut stepped, x, eps);
    let dpart: f64 = delta
        .iter()
        .zip(&stepped)
        .map(|(d, p)| (d - p) * (d - p))
        .sum();
    let cpart = c - (c + fplus).clamp(0.0, c_max);
    dpart + cpart * cpart
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureDistance {
    L2,
    Cosine,
}

/// Dissimilarity of two feature vectors: Euclidean distance, or one minus
/// the cosine of their angle (1 when either vector is zero).
pub fn alt_similarity(a: &[f64], b: &[f64], kind: FeatureDistance) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            expected: vec![a.len()],
            got: vec![b.len()],
        });
    }
    Ok(match kind {
        FeatureDistance::L2 => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        FeatureDistance::Cosine => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                1.0
            } else {
                1.0 - dot / (na * nb)
            }
        }
    })
}
