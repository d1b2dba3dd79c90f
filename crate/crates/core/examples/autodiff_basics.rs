//! Reverse-mode autodiff on a two-layer network, checked against central
//! finite differences.
//!
//! ```text
//! cargo run --example autodiff_basics
//! ```

use icewatch::gradcheck::grad_check;
use icewatch::{Graph, Result, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = Tensor::uniform(vec![4, 3], 1.0, &mut rng);
    let w1 = Tensor::uniform(vec![3, 5], 0.5, &mut rng);
    let w2 = Tensor::uniform(vec![5, 1], 0.5, &mut rng);

    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let w1v = g.param(w1.clone());
    let w2v = g.param(w2.clone());
    let h = g.matmul(xv, w1v)?;
    let h = g.tanh(h);
    let y = g.matmul(h, w2v)?;
    let loss = g.mean(y);
    g.backward(loss)?;
    println!("loss = {:.6}", g.value(loss).item());
    println!("dL/dW2 = {:?}", g.grad(w2v).expect("trainable").data());

    let err = grad_check(
        |g, w| {
            let xv = g.constant(x.clone());
            let w2v = g.constant(w2.clone());
            let h = g.matmul(xv, w)?;
            let h = g.tanh(h);
            let y = g.matmul(h, w2v)?;
            Ok(g.mean(y))
        },
        &w1,
        1e-5,
    )?;
    println!("max relative error on dL/dW1 = {err:.2e}");
    Ok(())
}
