//! Record a small network on the autodiff tape, backpropagate a loss, and
//! check one parameter gradient against a central finite difference.
//!
//! The tape runs eagerly: each op computes its value as it is recorded,
//! and `backward` walks the recorded graph in reverse. Named leaves and
//! taps surface in the returned gradient map.
//!
//! Run with: cargo run --example autodiff_gradients

use bamkit::autodiff::{GradMap, NodeId, Tape};
use bamkit::tensor::{DType, Tensor};

/// Assemble the demo network; returns the tape, the loss node, and the
/// post-activation node that gets tapped.
fn build(kernel_data: &[f64]) -> bamkit::Result<(Tape, NodeId)> {
    let mut tape = Tape::new();
    let input_data: Vec<f64> = (0..36).map(|i| ((i % 7) as f64 - 3.0) / 5.0).collect();
    let input = tape.leaf(
        "input",
        Tensor::from_f64_vec(&[1, 6, 6], input_data, DType::F64),
    );
    let kernels = tape.leaf(
        "conv.weight",
        Tensor::from_f64_vec(&[2, 1, 3, 3], kernel_data.to_vec(), DType::F64),
    );
    let bias = tape.leaf(
        "conv.bias",
        Tensor::from_f64_vec(&[2], vec![0.1, -0.2], DType::F64),
    );
    let conv = tape.conv2d(input, kernels, bias, 1, 1)?;
    let act = tape.relu(conv);
    tape.tap("first-activation", act);
    let pooled = tape.maxpool2d(act, 2, 2)?;
    let flat = tape.reshape(pooled, &[2 * 3 * 3])?;
    let w = tape.leaf(
        "fc.weight",
        Tensor::from_f64_vec(
            &[3, 18],
            (0..54).map(|i| ((i * 31 % 13) as f64 - 6.0) / 20.0).collect(),
            DType::F64,
        ),
    );
    let b = tape.leaf("fc.bias", Tensor::from_f64_vec(&[3], vec![0.0; 3], DType::F64));
    let logits = tape.dense(flat, w, b)?;
    let probs = tape.softmax(logits)?;
    let loss = tape.cross_entropy(probs, 1)?;
    Ok((tape, loss))
}

fn loss_for(kernel_data: &[f64]) -> bamkit::Result<f64> {
    let (tape, loss) = build(kernel_data)?;
    Ok(tape.value(loss).to_f64_vec()[0])
}

fn main() -> bamkit::Result<()> {
    let kernel_data: Vec<f64> = (0..18).map(|i| ((i * 17 % 11) as f64 - 5.0) / 10.0).collect();

    let (tape, loss) = build(&kernel_data)?;
    println!("loss: {:.6}", tape.value(loss).to_f64_vec()[0]);

    let grads: GradMap = tape.backward(loss)?;
    println!("gradient map entries: {:?}", grads.keys().collect::<Vec<_>>());
    let tap_grad = &grads["first-activation"];
    println!("tapped activation gradient shape: {:?}", tap_grad.shape());

    // central finite difference on one conv kernel element
    let g = grads["conv.weight"].to_f64_vec();
    let idx = 4;
    let h = 1e-6;
    let mut plus = kernel_data.clone();
    plus[idx] += h;
    let mut minus = kernel_data.clone();
    minus[idx] -= h;
    let numeric = (loss_for(&plus)? - loss_for(&minus)?) / (2.0 * h);
    println!(
        "conv.weight[{idx}]: analytic {:.8}, central difference {:.8}, |diff| {:.2e}",
        g[idx],
        numeric,
        (g[idx] - numeric).abs()
    );
    Ok(())
}
