//! Trains the desk-scale ensemble on the default synthetic dataset with the
//! full mini schedule (30 epochs, lr decay at 24) and reports the loss trace.
//! Takes about half a minute; artifacts land in target/example-out/train_mini.
//!
//! Run: cargo run --example train_mini

use densemble::config::ExperimentConfig;
use densemble::data::generate_synthetic;
use densemble::ensemble::EnsembleModel;
use densemble::train::run_training;

fn main() -> densemble::Result<()> {
    let cfg = ExperimentConfig::mini();
    let ds = generate_synthetic(&cfg.dataset)?;
    let ids: std::collections::BTreeSet<u32> = ds.train.iter().map(|i| i.id).collect();
    let model_cfg = cfg.resolved_model(ids.len())?;
    println!(
        "model: {} heads, embedding {} -> concatenated dim {}, {} parameters",
        model_cfg.num_heads(),
        model_cfg.embedding_dim,
        model_cfg.concatenated_dim(),
        EnsembleModel::new(model_cfg.clone(), 0)?.param_count(),
    );

    let out = std::path::Path::new("target/example-out/train_mini");
    let mut model = EnsembleModel::new(model_cfg, cfg.train.seed)?;
    let logs = run_training(
        &mut model,
        &ds.train,
        &cfg.train,
        out,
        Some(&mut |log| {
            if log.epoch % 5 == 0 || log.epoch + 1 == cfg.train.epochs {
                let mean_acc: f64 =
                    log.head_accs.iter().sum::<f64>() / log.head_accs.len() as f64;
                println!(
                    "epoch {:>2}  lr {:<6}  loss {:>8.4}  mean train top-1 {:.3}",
                    log.epoch, log.lr, log.total_loss, mean_acc
                );
            }
        }),
    )?;

    let first = logs.first().expect("at least one epoch").total_loss;
    let last = logs.last().expect("at least one epoch").total_loss;
    println!(
        "loss {first:.4} -> {last:.4} ({:.1}% drop); logs and checkpoints in {}",
        100.0 * (first - last) / first,
        out.display()
    );
    Ok(())
}
