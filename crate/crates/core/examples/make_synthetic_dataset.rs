//! Writes the cross-on-noise task as class-folder PNGs, ready for the
//! `ericnn` binary.
//!
//!     cargo run --release --example make_synthetic_dataset -- --root data/synthetic
//!     cargo run --release --bin ericnn -- train --data-root data/synthetic/train --out-dir runs/synth

use std::path::PathBuf;

use clap::Parser;
use ericnn::data::{save_class_folders, synthetic_cross, ClassFolders, Split};

#[derive(Parser)]
struct Args {
    #[arg(long, default_value = "data/synthetic")]
    root: PathBuf,
    #[arg(long, default_value_t = 1000)]
    train: usize,
    #[arg(long, default_value_t = 200)]
    test: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn main() -> ericnn::Result<()> {
    let args = Args::parse();
    let folders = ClassFolders::default();
    for (name, n, split) in [("train", args.train, Split::Train), ("test", args.test, Split::Test)] {
        let data = synthetic_cross(n, args.seed, split);
        let dir = args.root.join(name);
        save_class_folders(&data, &dir, &folders)?;
        let (pos, neg) = data.class_counts();
        println!("{}: {pos} {} / {neg} {}", dir.display(), folders.cactus, folders.no_cactus);
    }
    Ok(())
}
