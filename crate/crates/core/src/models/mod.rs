//! Desk-scale models: dense, sparse and convolutional autoencoders, a small
//! classifier, and the MINE statistics network.

mod spec;
mod state;
mod train;

pub use spec::{LayerSpec, ModelKind, ModelSpec, Padding};
pub use state::{Forward, ModelState, TrainMeta};
pub use train::{train_model, TrainConfig};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// `‖x − x̂‖₂`: the per-sample reconstruction loss entering the unsupervised
/// attack criterion. Not squared, not averaged.
pub fn recon_loss(x: &Tensor, xhat: &Tensor) -> Result<f64> {
    check_same(x, xhat)?;
    Ok(x.data()
        .iter()
        .zip(xhat.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Mean squared error over all entries.
pub fn mse(x: &Tensor, xhat: &Tensor) -> Result<f64> {
    check_same(x, xhat)?;
    let s: f64 = x
        .data()
        .iter()
        .zip(xhat.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(s / x.len() as f64)
}

/// [`recon_loss`] on the tape.
pub fn recon_loss_var(tape: &mut Tape, x: Var, xhat: Var) -> Result<Var> {
    let d = tape.sub(x, xhat)?;
    Ok(tape.l2_norm(d)?)
}

fn check_same(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            expected: a.shape().to_vec(),
            got: b.shape().to_vec(),
        });
    }
    Ok(())
}
