//! The full retrieval path: train briefly, embed query and gallery sets,
//! write the feature files (real-valued and binarized), reload them, and rank
//! under both Euclidean and Hamming distance.
//!
//! Run: cargo run --example retrieval_pipeline

use densemble::config::ExperimentConfig;
use densemble::data::generate_synthetic;
use densemble::ensemble::EnsembleModel;
use densemble::retrieval::{
    evaluate, evaluate_codes, extract_features, load_feature_file, quantize, save_codes,
    save_features, FeatureFile, Metric,
};
use densemble::train::run_training;

fn main() -> densemble::Result<()> {
    let mut cfg = ExperimentConfig::mini();
    cfg.train.epochs = 15;
    cfg.train.decay_epoch = 12;
    let ds = generate_synthetic(&cfg.dataset)?;
    let model_cfg = cfg.resolved_model(cfg.dataset.train_ids)?;

    let out = std::path::Path::new("target/example-out/retrieval_pipeline");
    let mut model = EnsembleModel::new(model_cfg, cfg.train.seed)?;
    println!("training {} epochs...", cfg.train.epochs);
    run_training(&mut model, &ds.train, &cfg.train, out, None)?;

    // Embeddings are the concatenation of all heads' tanh outputs; binary
    // codes are their elementwise signs.
    let all: Vec<usize> = (1..=model.config.num_heads()).collect();
    let query = extract_features(&mut model, &ds.query, &all)?;
    let gallery = extract_features(&mut model, &ds.gallery, &all)?;
    println!(
        "extracted {}x{} query and {}x{} gallery features",
        query.rows(),
        query.dim(),
        gallery.rows(),
        gallery.dim()
    );

    save_features(out.join("query.feat"), &query)?;
    save_codes(out.join("query.codes"), &quantize(&query))?;
    save_codes(out.join("gallery.codes"), &quantize(&gallery))?;
    let reloaded_q = match load_feature_file(out.join("query.codes"))? {
        FeatureFile::Codes(m) => m,
        FeatureFile::Real(_) => unreachable!("saved as codes"),
    };
    let reloaded_g = match load_feature_file(out.join("gallery.codes"))? {
        FeatureFile::Codes(m) => m,
        FeatureFile::Real(_) => unreachable!("saved as codes"),
    };

    let euc = evaluate(&query, &gallery, Metric::Euclidean, 10)?;
    let ham = evaluate_codes(&reloaded_q, &reloaded_g, Metric::Hamming, 10)?;
    for rep in [&euc, &ham] {
        println!(
            "{:<10} R1 {:.4}  R5 {:.4}  R10 {:.4}  mAP {:.4}  ({} queries scored)",
            rep.metric.name(),
            rep.curve.rates[0],
            rep.curve.rates[4],
            rep.curve.rates[9],
            rep.curve.map,
            rep.scored
        );
    }
    println!(
        "binarization costs {:.4} mAP against {}-bit codes ({}x smaller than f32)",
        euc.curve.map - ham.curve.map,
        query.dim(),
        32
    );
    Ok(())
}
