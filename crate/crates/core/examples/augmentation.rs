//! Draws augmentation parameters for a few images and writes the results as
//! PNGs.
//!
//!     cargo run --release --example augmentation -- --out-dir /tmp/aug

use std::path::PathBuf;

use clap::Parser;
use ericnn::augment::{apply_params, draw_params, item_rng, AugmentSpec};
use ericnn::data::{synthetic_cross, write_png, Split};

#[derive(Parser)]
struct Args {
    #[arg(long, default_value = "augmentation-preview")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 3)]
    images: usize,
    #[arg(long, default_value_t = 4)]
    variants: usize,
    #[arg(long, default_value_t = 5)]
    seed: u64,
}

fn main() -> ericnn::Result<()> {
    let args = Args::parse();
    std::fs::create_dir_all(&args.out_dir).map_err(|e| ericnn::Error::io("creating output directory", e))?;
    let spec = AugmentSpec { seed: args.seed, ..AugmentSpec::default() };
    let data = synthetic_cross(args.images, args.seed, Split::Train);
    for (i, item) in data.items.iter().enumerate() {
        write_png(&item.image, &args.out_dir.join(format!("{i}_original.png")))?;
        for v in 0..args.variants {
            let p = draw_params(&spec, &mut item_rng(spec.seed, v as u64, i));
            println!(
                "image {i} variant {v}: rot {:+.2} zoom {:.3} scale ({:.3}, {:.3}) flip {} shift {:+.3} gamma {:.3}",
                p.rotation_deg, p.zoom, p.scale_x, p.scale_y, p.flip, p.shift, p.gamma
            );
            let out = apply_params(&item.image, &p)?;
            write_png(&out, &args.out_dir.join(format!("{i}_variant{v}.png")))?;
        }
    }
    println!("wrote images to {}", args.out_dir.display());
    Ok(())
}
