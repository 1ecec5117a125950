//! Walks one unit through the slope-angle construction, then aligns a
//! convolution to a batch of images and shows each filter vanishing at its
//! anchor patch.
//!
//!     cargo run --release --example init_geometry -- --alpha-min 30

use clap::Parser;
use ericnn::data::{synthetic_cross, Split};
use ericnn::init::{eri_init_layer, rotation_component, sample_neuron, weights_from_normal, SlopeInterval};
use ericnn::layers::Conv2d;
use ericnn::rng::stream;

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 30.0)]
    alpha_min: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn main() -> ericnn::Result<()> {
    let args = Args::parse();
    let interval = SlopeInterval::new(args.alpha_min)?;

    let w0 = rotation_component(&[3.0, 4.0], 45.0, 0)?;
    let w = weights_from_normal(&[3.0, 4.0], w0)?;
    println!("normal (3, 4) at 45 degrees: w0 = {w0}, weights = {w:?}");

    let mut rng = stream(args.seed, &[]);
    println!("\n{:>9} {:>9} {:>10} {:>10} {:>10}", "alpha", "|normal|", "w0", "|omega|", "4|tan a|");
    for _ in 0..8 {
        let n = sample_neuron(4, &interval, &mut rng)?;
        let norm = n.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        println!(
            "{:>9.3} {:>9.4} {:>10.4} {:>10.4} {:>10.4}",
            n.alpha,
            n.normal_norm(),
            n.w0,
            norm,
            4.0 * n.alpha.to_radians().tan().abs()
        );
    }

    let images = synthetic_cross(4, args.seed, Split::Train);
    let batch = images.stack(&[0, 1, 2, 3])?;
    let mut conv = Conv2d::<f32>::new((2, 2), 3, 8);
    let units = eri_init_layer(&mut conv, &interval, Some(&batch), &mut stream(args.seed, &[1]))?;
    println!("\naligned 2x2 filters, response at anchor patch:");
    for (i, u) in units.iter().enumerate() {
        println!("  filter {i}: alpha {:>8.3}, bias {:>9.4}, response {:?}", u.alpha, u.bias, u.response_at_anchor());
    }
    Ok(())
}
