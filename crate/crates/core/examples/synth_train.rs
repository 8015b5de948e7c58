//! Trains on a generated synthetic corpus and prints the learning curve.
//!
//! `cargo run --release -p gridptr --example synth_train -- [stack] [seed] [lr] [epochs]`

use std::time::Instant;

use gridptr::data::{filter_trainable, EmbeddingTable, FeatureProvider};
use gridptr::model::{train, ModelConfig, PointerModel, StackMode, TrainConfig};
use gridptr::synth::{generate, SynthConfig};

fn main() -> gridptr::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let stack: StackMode = args.first().map_or(Ok(StackMode::Stacked), |s| s.parse())?;
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let defaults = TrainConfig::default();
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(defaults.lr);
    let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(defaults.epochs);

    let corpus = generate(&SynthConfig::default())?;
    let features = FeatureProvider::from_records(corpus.features, 19)?;
    let (kept, _) = filter_trainable(corpus.examples);
    let table = EmbeddingTable::fixture();
    let config = ModelConfig {
        stack,
        ..ModelConfig::default()
    };
    let model = PointerModel::new(config, seed)?;
    let start = Instant::now();
    let out = train(
        model,
        &kept,
        &table,
        &features,
        &TrainConfig {
            lr,
            epochs,
            seed,
            ..defaults
        },
    )?;
    for r in out.log.iter().filter(|r| r.epoch % 5 == 0 || r.epoch == 1) {
        println!("{:4} loss {:9.4} anls {:.4}", r.epoch, r.mean_loss, r.train_anls);
    }
    println!(
        "{stack} seed {seed}: best {:.4} at epoch {}, final {:.4}, {:.1}s",
        out.best_anls,
        out.best_epoch,
        out.final_anls(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
