//! Reverse-mode differentiation on the tape and an Adam fit of a tiny
//! linear model.

use hetsched::autodiff::{Adam, AdamConfig, AutodiffError, ParamStore, Tape, Tensor};

fn main() -> Result<(), AutodiffError> {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_vec(1, 1, vec![3.0])?);
    let sq = tape.mul(x, x)?;
    let y = tape.sum(sq);
    let grads = tape.backward(y)?;
    println!(
        "d(x^2)/dx at 3 = {}",
        grads.get(x).expect("x is on the tape").item()
    );

    let inputs = Tensor::from_vec(4, 2, vec![0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 2.0, 1.0])?;
    let targets = Tensor::from_vec(4, 1, vec![1.0, 2.0, 3.0, 5.0])?;
    let mut store = ParamStore::new();
    store.add("w", Tensor::zeros(2, 1));
    let mut adam = Adam::new(
        &store,
        AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        },
    );
    for step in 0..=400 {
        let mut tape = Tape::new();
        let w = tape.param(0, store.get(0));
        let xs = tape.constant(inputs.clone());
        let pred = tape.matmul(xs, w)?;
        let t = tape.constant(targets.clone());
        let err = tape.sub(pred, t)?;
        let sq = tape.mul(err, err)?;
        let loss = tape.sum(sq);
        let grads = tape.backward(loss)?;
        if step % 100 == 0 {
            println!("step {step:>3}  loss {:.6}", tape.value(loss).item());
        }
        let mut g = store.zeros_like();
        grads.accumulate_params(&mut g, 1.0);
        adam.step(&mut store, &g);
    }
    println!("w = {:?} (exact fit is [2, 1])", store.get(0).data());
    Ok(())
}
