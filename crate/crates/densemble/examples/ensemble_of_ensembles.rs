//! Treats a whole trained ensemble as one base learner: trains two models
//! from different seeds, concatenates their embeddings, and compares
//! retrieval quality of each model alone against the combination.
//!
//! Run: cargo run --example ensemble_of_ensembles

use densemble::config::ExperimentConfig;
use densemble::data::generate_synthetic;
use densemble::ensemble::EnsembleModel;
use densemble::retrieval::{combine_features, evaluate, extract_features, Metric};
use densemble::train::run_training;

fn main() -> densemble::Result<()> {
    let mut cfg = ExperimentConfig::mini();
    cfg.train.epochs = 15;
    cfg.train.decay_epoch = 12;
    let ds = generate_synthetic(&cfg.dataset)?;
    let model_cfg = cfg.resolved_model(cfg.dataset.train_ids)?;

    let mut singles = Vec::new();
    let mut mats = Vec::new(); // (query, gallery) per model
    for seed in [3u64, 4] {
        let mut train_cfg = cfg.train.clone();
        train_cfg.seed = seed;
        let out = format!("target/example-out/ensemble_of_ensembles/seed{seed}");
        let mut model = EnsembleModel::new(model_cfg.clone(), seed)?;
        println!("training model with seed {seed} ({} epochs)...", train_cfg.epochs);
        run_training(&mut model, &ds.train, &train_cfg, &out, None)?;

        let all: Vec<usize> = (1..=model.config.num_heads()).collect();
        let q = extract_features(&mut model, &ds.query, &all)?;
        let g = extract_features(&mut model, &ds.gallery, &all)?;
        let rep = evaluate(&q, &g, Metric::Euclidean, 10)?;
        println!("  seed {seed} alone: R1 {:.4}  mAP {:.4}", rep.curve.rates[0], rep.curve.map);
        singles.push(rep.curve.map);
        mats.push((q, g));
    }

    // Same image order in both extractions, so rows concatenate 1:1.
    let q = combine_features(&[mats[0].0.clone(), mats[1].0.clone()])?;
    let g = combine_features(&[mats[0].1.clone(), mats[1].1.clone()])?;
    let rep = evaluate(&q, &g, Metric::Euclidean, 10)?;
    println!(
        "combined ({} dims): R1 {:.4}  mAP {:.4}  (singles: {:.4}, {:.4})",
        q.dim(),
        rep.curve.rates[0],
        rep.curve.map,
        singles[0],
        singles[1]
    );
    Ok(())
}
