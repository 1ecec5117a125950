//! Trains the classifier on the generated cross-on-noise task and reports
//! test metrics.
//!
//!     cargo run --release --example synthetic_training -- --epochs 10

use clap::Parser;
use ericnn::augment::AugmentSpec;
use ericnn::data::{synthetic_cross, Split};
use ericnn::init::{InitScheme, SlopeInterval};
use ericnn::model::{build_eri_cnn, evaluate, Network, train, TrainConfig};
use ericnn::optim::AdamConfig;

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 1000)]
    train: usize,
    #[arg(long, default_value_t = 200)]
    test: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 30.0)]
    alpha_min: f64,
    #[arg(long, default_value = "eri")]
    init: InitScheme,
    #[arg(long)]
    augment: bool,
    /// Leave biases at zero instead of aligning them to training patches.
    #[arg(long)]
    no_align: bool,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn main() -> ericnn::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let train_set = synthetic_cross(args.train, args.seed, Split::Train);
    let val_set = synthetic_cross(args.test, args.seed, Split::Val);
    let test_set = synthetic_cross(args.test, args.seed, Split::Test);

    let interval = SlopeInterval::new(args.alpha_min)?;
    let mut net = if args.no_align {
        let mut net = Network::eri_cnn();
        net.initialize(args.init, &interval, None, args.seed)?;
        net
    } else {
        build_eri_cnn(args.init, &interval, &train_set, args.seed)?
    };
    let config = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        adam: AdamConfig { lr: args.lr, ..AdamConfig::default() },
        augment: if args.augment {
            AugmentSpec { seed: args.seed, ..AugmentSpec::default() }
        } else {
            AugmentSpec::disabled()
        },
        seed: args.seed,
    };
    let run = train(&mut net, &train_set, &val_set, &config)?;
    let report = evaluate(&net, &test_set)?;
    println!("trained {} epochs in {:.1?}", run.history.len(), run.duration);
    println!("{}", report.table());
    Ok(())
}
