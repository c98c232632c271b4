//! Temporary probe: single-seed difficulty check for generator tuning.

use densemble::data::{generate_synthetic, load_dataset, save_dataset, SyntheticSpec};
use densemble::ensemble::{EnsembleConfig, EnsembleModel};
use densemble::retrieval::{evaluate, extract_features, select_head_columns, Metric};
use densemble::train::{train, TrainConfig};

fn class_count(items: &[densemble::data::ReidItem]) -> usize {
    let mut ids: Vec<u32> = items.iter().map(|i| i.id).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.len()
}

#[test]
#[ignore]
fn single_seed() {
    let seeds: Vec<u64> = std::env::var("PROBE_SEEDS")
        .unwrap_or_else(|_| "0".into())
        .split(',')
        .map(|s| s.parse().unwrap())
        .collect();
    let ds = generate_synthetic(&SyntheticSpec::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let ds = load_dataset(dir.path()).unwrap();
    let num_classes = class_count(&ds.train);
    for &seed in &seeds {
        let cfg = EnsembleConfig::mini(num_classes);
        let num_heads = cfg.num_heads();
        let h_dim = cfg.embedding_dim;
        let mut model = EnsembleModel::new(cfg, seed).unwrap();
        let mut tcfg = TrainConfig::mini();
        tcfg.seed = seed;
        let logs = train(&mut model, &ds.train, &tcfg, &mut |_, _| Ok(())).unwrap();
        let all: Vec<usize> = (1..=num_heads).collect();
        let q = extract_features(&mut model, &ds.query, &all).unwrap();
        let g = extract_features(&mut model, &ds.gallery, &all).unwrap();
        let map_of = |subset: &[usize]| -> f64 {
            let qs = select_head_columns(&q, h_dim, subset).unwrap();
            let gs = select_head_columns(&g, h_dim, subset).unwrap();
            evaluate(&qs, &gs, Metric::Euclidean, 10).unwrap().curve.map
        };
        let singles: Vec<f64> = (1..=num_heads).map(|h| map_of(&[h])).collect();
        let cums: Vec<f64> = (1..=num_heads)
            .map(|k| map_of(&(1..=k).collect::<Vec<_>>()))
            .collect();
        let dips = cums.windows(2).filter(|wn| wn[1] < wn[0]).count();
        let mean = singles.iter().sum::<f64>() / singles.len() as f64;
        let max = singles.iter().cloned().fold(f64::MIN, f64::max);
        println!(
            "seed {seed}: loss {:.3}->{:.3} | singles {} mean {mean:.4} max {max:.4} | cums {} | dips {dips}",
            logs.first().unwrap().total_loss,
            logs.last().unwrap().total_loss,
            singles.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" "),
            cums.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" "),
        );
    }
}
