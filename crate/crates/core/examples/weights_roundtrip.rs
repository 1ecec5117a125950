//! Saves an initialized network, reloads it and checks that predictions
//! agree bit for bit.
//!
//!     cargo run --release --example weights_roundtrip

use ericnn::data::{synthetic_cross, Split};
use ericnn::init::{InitScheme, SlopeInterval};
use ericnn::model::{build_eri_cnn, load_weights, save_weights, weights_checksum};

fn main() -> ericnn::Result<()> {
    let data = synthetic_cross(64, 3, Split::Train);
    let net = build_eri_cnn(InitScheme::Eri, &SlopeInterval::default(), &data, 3)?;
    let dir = tempfile::tempdir().map_err(|e| ericnn::Error::io("creating temp dir", e))?;
    let path = dir.path().join("model.ericnn");
    save_weights(&net, &path)?;
    let size = std::fs::metadata(&path).map_err(|e| ericnn::Error::io("reading metadata", e))?.len();
    let back = load_weights(&path)?;

    let batch = data.stack(&[0, 1, 2, 3])?;
    let a = net.predict(&batch)?;
    let b = back.predict(&batch)?;
    let same = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
    println!("{} bytes, checksum {:016x} -> {:016x}", size, weights_checksum(&net), weights_checksum(&back));
    println!("predictions {:?}", a.data());
    println!("bit-identical after reload: {same}");
    Ok(())
}
