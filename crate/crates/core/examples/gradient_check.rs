//! Checks reverse-mode gradients of a small conv + dense network against
//! central finite differences.

use uae::tensor::{finite_diff_check, Tape, Tensor};

fn main() -> uae::Result<()> {
    let weight = Tensor::new(vec![2, 1, 3, 3], (0..18).map(|i| ((i * 7 % 11) as f64 - 5.0) / 10.0).collect())?;
    let bias = Tensor::vector(vec![0.1, -0.2])?;
    let dense = Tensor::new(vec![32, 1], (0..32).map(|i| ((i * 5 % 13) as f64 - 6.0) / 20.0).collect())?;
    let image = Tensor::new(vec![1, 1, 4, 4], (0..16).map(|i| (i as f64 * 0.3).sin().abs()).collect())?;

    let report = finite_diff_check(
        |tape: &mut Tape, x| {
            let w = tape.leaf(weight.clone());
            let b = tape.leaf(bias.clone());
            let d = tape.leaf(dense.clone());
            let h = tape.conv2d(x, w, b, 1)?;
            let h = tape.sigmoid(h)?;
            let h = tape.reshape(h, &[1, 32])?;
            let y = tape.matmul(h, d)?;
            tape.sum(y)
        },
        &image,
        1e-5,
        1e-4,
    )?;
    println!("passed: {}", report.passed);
    println!("worst relative error {:.2e} at input {}", report.worst_error, report.worst_index);
    for (i, (a, n)) in report.analytic.iter().zip(&report.numeric).take(4).enumerate() {
        println!("  d/dx[{i}]  analytic {a:+.8}  numeric {n:+.8}");
    }
    Ok(())
}
