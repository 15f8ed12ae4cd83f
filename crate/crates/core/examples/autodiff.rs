//! Reverse-mode gradients of a small softmax regression, checked against
//! central differences.

use aptm::numcore::{Graph, Tensor};
use aptm::Result;

fn loss(w: &Tensor<f64>, x: &Tensor<f64>, target: usize) -> Result<(f64, Tensor<f64>)> {
    let g = Graph::new();
    let w = g.param(w);
    let x = g.constant(x);
    let logp = x.matmul(&w)?.log_softmax(1)?;
    let nll = logp.slice_cols(target, 1)?.sum()?.neg()?;
    nll.backward()?;
    Ok((nll.item(), w.grad().expect("param has a gradient")))
}

fn main() -> Result<()> {
    let w = Tensor::from_f64(&[3, 4], &[0.1, -0.2, 0.3, 0.0, 0.5, 0.1, -0.4, 0.2, -0.3, 0.2, 0.1, 0.4])?;
    let x = Tensor::from_f64(&[2, 3], &[1.0, 0.5, -1.5, 0.2, -0.7, 0.9])?;
    let (value, grad) = loss(&w, &x, 2)?;
    println!("loss {value:.6}");

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..w.len() {
        let mut plus = w.clone();
        plus.data_mut()[i] += h;
        let mut minus = w.clone();
        minus.data_mut()[i] -= h;
        let numeric = (loss(&plus, &x, 2)?.0 - loss(&minus, &x, 2)?.0) / (2.0 * h);
        worst = worst.max((numeric - grad.data()[i]).abs());
    }
    println!("gradient {:?}", grad.to_f64_vec().iter().map(|v| format!("{v:+.4}")).collect::<Vec<_>>());
    println!("max |analytic - numeric| = {worst:.2e}");
    Ok(())
}
