//! Prints the classifier's layer stack with output shapes and parameter
//! counts.
//!
//!     cargo run --release --example architecture

use ericnn::model::Network;

fn main() {
    let net = Network::<f32>::eri_cnn();
    let params = net.parameters();
    println!("input {:?}", net.input_shape());
    for (kind, shape) in net.shape_trace() {
        println!("{kind:<8} -> {shape:?}");
    }
    println!();
    for (name, t) in &params {
        println!("{name:<14} {:>18} {:>8}", format!("{:?}", t.shape()), t.len());
    }
    println!("\ntotal parameters: {}", net.param_count());
}
