use super::{Result, Tape, Tensor, TensorError, Var};

/// Outcome of comparing reverse-mode and central-difference gradients.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub passed: bool,
    pub worst_index: usize,
    /// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-3)` at the worst index.
    pub worst_error: f64,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Relative error with both magnitudes floored at 1e-3 so that vanishing
/// gradients are compared on an absolute scale.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Checks the gradient of `function` at `point` element by element with
/// central differences of step `h`.
pub fn finite_diff_check<F>(function: F, point: &Tensor, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |p: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.leaf(p.clone());
        let y = function(&mut tape, x)?;
        let v = tape.value(y);
        if v.shape() != [1] {
            return Err(TensorError::NonScalarOutput(v.shape().to_vec()));
        }
        Ok(v.item())
    };

    let mut tape = Tape::new();
    let x = tape.leaf(point.clone());
    let y = function(&mut tape, x)?;
    let analytic = tape.backward(y, &[x])?.remove(0).into_data();

    let mut numeric = Vec::with_capacity(point.len());
    let mut probe = point.clone();
    for i in 0..point.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        numeric.push((up - down) / (2.0 * h));
    }

    let (worst_index, worst_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .enumerate()
        .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });

    Ok(GradCheckReport {
        passed: worst_error <= tol,
        worst_index,
        worst_error,
        analytic,
        numeric,
    })
}
