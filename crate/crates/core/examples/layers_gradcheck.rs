//! Compares a convolution's backward pass against central differences.
//!
//!     cargo run --release --example layers_gradcheck

use ericnn::layers::Conv2d;
use ericnn::rng::stream;
use ericnn::Tensor;
use rand::Rng;

const EPS: f64 = 1e-5;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = stream(seed, &[]);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// `sum(r * conv(x))`, the scalar whose gradient is checked.
fn objective(filters: &Tensor<f64>, bias: &Tensor<f64>, x: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    let y = Conv2d::from_parts(filters.clone(), bias.clone()).unwrap().infer(x).unwrap();
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

fn main() -> ericnn::Result<()> {
    let (filters, bias) = (random(&[3, 3, 2, 4], 1), random(&[4], 2));
    let x = random(&[2, 5, 5, 2], 3);
    let r = random(&[2, 5, 5, 4], 4);

    let mut conv = Conv2d::from_parts(filters.clone(), bias.clone())?;
    conv.forward(&x)?;
    let grads = conv.backward(&r)?;

    let mut worst = 0.0f64;
    for i in 0..filters.len() {
        let (mut up, mut down) = (filters.clone(), filters.clone());
        up.data_mut()[i] += EPS;
        down.data_mut()[i] -= EPS;
        let numeric = (objective(&up, &bias, &x, &r) - objective(&down, &bias, &x, &r)) / (2.0 * EPS);
        let analytic = grads.dfilters.data()[i];
        worst = worst.max((numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8));
    }
    println!("filter gradient: worst relative error {worst:.2e} over {} entries", filters.len());

    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let (mut up, mut down) = (x.clone(), x.clone());
        up.data_mut()[i] += EPS;
        down.data_mut()[i] -= EPS;
        let numeric = (objective(&filters, &bias, &up, &r) - objective(&filters, &bias, &down, &r)) / (2.0 * EPS);
        let analytic = grads.dx.data()[i];
        worst = worst.max((numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8));
    }
    println!("input gradient:  worst relative error {worst:.2e} over {} entries", x.len());
    println!("bias gradient:   {:?}", grads.dbias.data());
    Ok(())
}
