//! Trains the desk-scale p4 model and the CNN baseline on noisy synthetic
//! rotated glyphs and reports test accuracy.
//!
//! Usage: desk_training [epochs] [seed]

use std::time::Instant;

use pdeq::data_io::{synth_rotated_shapes_with, SynthOptions};
use pdeq::tensor_ops::{evaluate, train, ModelConfig};
use pdeq::GroupSpec;

fn main() -> pdeq::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(12);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let opts = SynthOptions::desk();
    let train_set = synth_rotated_shapes_with(2000, 3, seed, &opts)?;
    let test_set = synth_rotated_shapes_with(1000, 3, seed + 1, &opts)?;
    for mut cfg in [ModelConfig::desk_pdo(GroupSpec::new(4, false), 3, seed), ModelConfig::desk_cnn(3, seed)] {
        cfg.epochs = epochs;
        let start = Instant::now();
        let t = train(&cfg, &train_set, |m| {
            println!(
                "{:?} epoch {} train {:.3} val {:.3} loss {:.4}",
                cfg.arch, m.epoch, m.train_acc, m.val_acc, m.loss
            )
        })?;
        let acc = evaluate(&t.model, &test_set)?;
        println!(
            "{:?}: {} params, test accuracy {:.4}, {:.1}s",
            cfg.arch,
            t.model.num_params(),
            acc,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
