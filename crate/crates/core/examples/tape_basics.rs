//! Record a small graph, differentiate it and inspect what the tape retained.
//!
//! Run with `cargo run --example tape_basics`.

use evograd::{Result, Tape, Tensor};

fn main() -> Result<()> {
    let mut tape = Tape::new();
    let w = tape.leaf(Tensor::matrix(2, 3, vec![0.1, -0.2, 0.3, 0.4, 0.5, -0.6])?);
    let x = tape.constant(Tensor::matrix(3, 1, vec![1.0, 2.0, 3.0])?);
    let target = tape.constant(Tensor::matrix(2, 1, vec![0.5, -0.5])?);

    let y = tape.matmul(w, x)?;
    let h = tape.sigmoid(y)?;
    let loss = tape.mse(h, target)?;

    let grads = tape.backward(loss, &[w])?;
    println!("loss = {:.6}", tape.value(loss)?.item());
    println!("dloss/dw = {:?}", grads[0].data());

    let stats = tape.stats();
    println!("{} tracked nodes, {} bytes retained", stats.node_count, stats.stored_bytes);
    tape.dump(std::io::stdout().lock())?;
    Ok(())
}
