use std::sync::Arc;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{Tape, Tensor, Var};

/// `K` Gaussian matrices `M_k ∈ ℝ^{d′×d}` with i.i.d. `N(0, (1/d′)²)`
/// entries, stacked row-wise into one `[K·d′, d]` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionBank {
    seed: u64,
    k: usize,
    d: usize,
    d_prime: usize,
    stacked: Arc<Tensor>,
}

pub fn make_projection_bank(seed: u64, d: usize, d_prime: usize, k: usize) -> Result<ProjectionBank> {
    if k == 0 || d_prime == 0 || d == 0 {
        return Err(Error::InvalidArgument(format!(
            "projection bank needs positive sizes, got d={d}, d'={d_prime}, K={k}"
        )));
    }
    let normal = Normal::new(0.0, 1.0 / d_prime as f64).expect("positive standard deviation");
    let mut rng = seed::stream(seed, "projection-bank", 0);
    let data = (0..k * d_prime * d).map(|_| normal.sample(&mut rng)).collect();
    Ok(ProjectionBank {
        seed,
        k,
        d,
        d_prime,
        stacked: Arc::new(Tensor::new(vec![k * d_prime, d], data)?),
    })
}

impl ProjectionBank {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn d_prime(&self) -> usize {
        self.d_prime
    }

    /// Row-major `d′×d` entries of `M_k`.
    pub fn matrix(&self, k: usize) -> &[f64] {
        let n = self.d_prime * self.d;
        &self.stacked.data()[k * n..(k + 1) * n]
    }

    pub fn entries(&self) -> &[f64] {
        self.stacked.data()
    }

    /// `x_k = M_k x` for every k.
    pub fn compress(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        if x.len() != self.d {
            return Err(Error::Shape {
                expected: vec![self.d],
                got: vec![x.len()],
            });
        }
        let mut tape = Tape::new();
        let xv = tape.leaf(Tensor::new(vec![self.d], x.to_vec())?);
        let out = self.compress_on(&mut tape, xv)?;
        Ok(tape
            .value(out)
            .data()
            .chunks(self.d_prime)
            .map(<[f64]>::to_vec)
            .collect())
    }

    /// Differentiable compression of a `d`-element node into `[K, d′]`.
    pub fn compress_on(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let len = tape.try_value(x)?.len();
        if len != self.d {
            return Err(Error::Shape {
                expected: vec![self.d],
                got: tape.value(x).shape().to_vec(),
            });
        }
        let col = tape.reshape(x, &[self.d, 1])?;
        let m = tape.leaf_shared(self.stacked.clone());
        let y = tape.matmul(m, col)?;
        Ok(tape.reshape(y, &[self.k, self.d_prime])?)
    }
}
