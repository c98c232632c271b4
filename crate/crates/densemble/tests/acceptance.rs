//! End-to-end checks for the properties this crate promises, one test per
//! criterion so a `cargo test` run reads as a checklist. The ensemble-quality
//! criteria (5-7) share one set of five seeded training runs on the default
//! synthetic dataset; everything else is cheap and self-contained.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use densemble::backbone::DenseNetConfig;
use densemble::data::{class_indices, generate_synthetic, SyntheticSpec};
use densemble::ensemble::{EnsembleConfig, EnsembleModel};
use densemble::flops::{all_heads, count_baseline, count_model};
use densemble::gradcheck::{full_model_check, primitive_battery};
use densemble::retrieval::{
    average_precision, cmc, codes_to_reals, evaluate, extract_features, hamming, quantize,
    rank_codes, rank_real, select_head_columns, FeatureMatrix, Metric,
};
use densemble::rng::RngStream;
use densemble::train::{lr_at, run_training, train, TrainConfig};

/// One seeded end-to-end run: mini model trained on the default synthetic
/// dataset with the stock desk schedule, then evaluated per head.
struct SeedRun {
    seed: u64,
    first_loss: f64,
    last_loss: f64,
    /// mAP of each singleton head, real-valued Euclidean ranking.
    singleton_map: Vec<f64>,
    /// mAP of heads 1..=k for k = 1..=2L; last entry is the full ensemble.
    cumulative_map: Vec<f64>,
    full_map_euclidean: f64,
    full_map_hamming: f64,
}

struct RunSet {
    runs: Vec<SeedRun>,
    wall: Duration,
}

fn shared_runs() -> &'static RunSet {
    static RUNS: OnceLock<RunSet> = OnceLock::new();
    RUNS.get_or_init(|| {
        let started = Instant::now();
        // Round-trip through the on-disk format: datasets ship as 8-bit image
        // files, so training always sees the quantized pixels.
        let ds = generate_synthetic(&SyntheticSpec::default()).expect("default dataset");
        let dir = tempfile::tempdir().expect("dataset dir");
        densemble::data::save_dataset(&ds, dir.path()).expect("save dataset");
        let ds = densemble::data::load_dataset(dir.path()).expect("reload dataset");
        let num_classes = class_indices(&ds.train).0.len();
        let mut runs = Vec::new();
        for seed in 0..5u64 {
            let cfg = EnsembleConfig::mini(num_classes);
            let num_heads = cfg.num_heads();
            let h_dim = cfg.embedding_dim;
            let mut model = EnsembleModel::new(cfg, seed).expect("model init");
            let mut tcfg = TrainConfig::mini();
            tcfg.seed = seed;
            let logs = train(&mut model, &ds.train, &tcfg, &mut |_, _| Ok(()))
                .expect("training run");
            let all: Vec<usize> = (1..=num_heads).collect();
            let query = extract_features(&mut model, &ds.query, &all).expect("query features");
            let gallery =
                extract_features(&mut model, &ds.gallery, &all).expect("gallery features");

            let map_of = |subset: &[usize]| -> f64 {
                let q = select_head_columns(&query, h_dim, subset).expect("subset q");
                let g = select_head_columns(&gallery, h_dim, subset).expect("subset g");
                evaluate(&q, &g, Metric::Euclidean, 10).expect("eval").curve.map
            };
            let singleton_map: Vec<f64> = (1..=num_heads).map(|h| map_of(&[h])).collect();
            let cumulative_map: Vec<f64> = (1..=num_heads)
                .map(|k| map_of(&(1..=k).collect::<Vec<_>>()))
                .collect();
            let full_map_euclidean = *cumulative_map.last().unwrap();
            let full_map_hamming = evaluate(&query, &gallery, Metric::Hamming, 10)
                .expect("hamming eval")
                .curve
                .map;
            runs.push(SeedRun {
                seed,
                first_loss: logs.first().unwrap().total_loss,
                last_loss: logs.last().unwrap().total_loss,
                singleton_map,
                cumulative_map,
                full_map_euclidean,
                full_map_hamming,
            });
        }
        RunSet { runs, wall: started.elapsed() }
    })
}

#[test]
fn criterion_1_gradient_integrity() {
    let started = Instant::now();
    let mut worst_primitive: (String, f64) = (String::new(), 0.0);
    for seed in 0..20 {
        for report in primitive_battery(seed).expect("battery") {
            if report.max_rel_err > worst_primitive.1 {
                worst_primitive = (format!("{} (seed {seed})", report.name), report.max_rel_err);
            }
        }
    }
    let full = full_model_check(0, 6).expect("full model check");
    let elapsed = started.elapsed();
    println!(
        "criterion 1: worst primitive {} = {:.3e}, full model = {:.3e}, {:.1}s",
        worst_primitive.0,
        worst_primitive.1,
        full.max_rel_err,
        elapsed.as_secs_f64()
    );
    assert!(
        worst_primitive.1 <= 1e-5,
        "primitive gradient error {} = {:.3e} exceeds 1e-5",
        worst_primitive.0,
        worst_primitive.1
    );
    assert!(
        full.max_rel_err <= 1e-4,
        "full-model gradient error {:.3e} exceeds 1e-4",
        full.max_rel_err
    );
    assert!(elapsed < Duration::from_secs(60), "gradient checks took {elapsed:?}");
}

#[test]
fn criterion_2_flops_reproduction() {
    let baseline = count_baseline(&DenseNetConfig::densenet121((384, 128)), 1024).unwrap();
    let baseline_g = baseline.total_macs() as f64 / 1e9;
    let cfg = EnsembleConfig::paper(8, 512, 751);
    let ensemble = count_model(&cfg, &all_heads(&cfg), false).unwrap();
    let ensemble_g = ensemble.total_macs() as f64 / 1e9;
    let shared = ensemble.shared_fraction();
    println!(
        "criterion 2: baseline {baseline_g:.4} G (target 2.82), ensemble {ensemble_g:.4} G \
         (target 2.85), shared fraction {shared:.5}"
    );
    assert!((baseline_g - 2.82).abs() / 2.82 < 0.05, "baseline {baseline_g} G");
    assert!((ensemble_g - 2.85).abs() / 2.85 < 0.05, "ensemble {ensemble_g} G");
    assert!(shared >= 0.98, "shared fraction {shared}");
}

#[test]
fn criterion_3_feature_geometry() {
    let main = EnsembleConfig::paper(8, 512, 751);
    assert_eq!(main.num_heads(), 16);
    assert_eq!(main.concatenated_dim(), 8192);
    for (l, h) in [(4usize, 1024usize), (8, 512), (16, 256)] {
        let cfg = EnsembleConfig::paper(l, h, 751);
        cfg.validate().unwrap();
        assert_eq!(
            cfg.concatenated_dim(),
            8192,
            "2L={} H={h} should concatenate to 8192",
            2 * l
        );
    }
    println!("criterion 3: 2L=16 x H=512 = 8192; pairings (8,1024),(16,512),(32,256) all 8192");
}

/// Brute-force AP/CMC oracle: recomputes mask, stable distance order, AP and
/// first-hit histogram directly from raw distances, sharing no code with the
/// ranking path.
fn oracle_ap_cmc(
    dists: &[Vec<f64>],
    q_ids: &[u32],
    q_cams: &[u16],
    g_ids: &[u32],
    g_cams: &[u16],
    max_rank: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut aps = Vec::new();
    let mut first_hits = vec![0usize; max_rank];
    let mut scored = 0usize;
    for q in 0..q_ids.len() {
        let keep: Vec<usize> = (0..g_ids.len())
            .filter(|&g| g_ids[g] != 0 && !(g_ids[g] == q_ids[q] && g_cams[g] == q_cams[q]))
            .collect();
        if !keep.iter().any(|&g| g_ids[g] == q_ids[q]) {
            continue;
        }
        scored += 1;
        let mut order = keep.clone();
        order.sort_by(|&a, &b| dists[q][a].total_cmp(&dists[q][b]).then(a.cmp(&b)));
        let rel: Vec<bool> = order.iter().map(|&g| g_ids[g] == q_ids[q]).collect();
        let total = rel.iter().filter(|&&r| r).count();
        let mut hits = 0usize;
        let mut ap = 0.0;
        for (k, &r) in rel.iter().enumerate() {
            if r {
                hits += 1;
                ap += hits as f64 / (k + 1) as f64;
                if hits == 1 && k < max_rank {
                    first_hits[k] += 1;
                }
            }
        }
        aps.push(ap / total as f64);
    }
    let mut rates = Vec::with_capacity(max_rank);
    let mut acc = 0usize;
    for r in 0..max_rank {
        acc += first_hits[r];
        rates.push(acc as f64 / scored as f64);
    }
    (aps, rates)
}

#[test]
fn criterion_4_metric_oracles() {
    let mut rng = RngStream::new_seeded(41);
    // AP / CMC against the brute-force oracle on 100 random instances.
    for instance in 0..100 {
        let n_query = 1 + rng.below(5);
        let n_gallery = 2 + rng.below(19); // <= 20
        let dim = 1 + rng.below(6);
        let ids = |rng: &mut RngStream, n: usize| -> Vec<u32> {
            (0..n).map(|_| 1 + rng.below(4) as u32).collect()
        };
        let cams = |rng: &mut RngStream, n: usize| -> Vec<u16> {
            (0..n).map(|_| 1 + rng.below(3) as u16).collect()
        };
        let feats = |rng: &mut RngStream, n: usize| -> Vec<f64> {
            (0..n * dim).map(|_| rng.uniform_in(-1.0, 1.0)).collect()
        };
        let q = FeatureMatrix::new(dim, feats(&mut rng, n_query), ids(&mut rng, n_query), cams(&mut rng, n_query)).unwrap();
        let g = FeatureMatrix::new(dim, feats(&mut rng, n_gallery), ids(&mut rng, n_gallery), cams(&mut rng, n_gallery)).unwrap();
        let dists: Vec<Vec<f64>> = (0..n_query)
            .map(|i| {
                (0..n_gallery)
                    .map(|j| {
                        q.row(i)
                            .iter()
                            .zip(g.row(j))
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum()
                    })
                    .collect()
            })
            .collect();
        let (oracle_aps, oracle_rates) =
            oracle_ap_cmc(&dists, &q.ids, &q.cams, &g.ids, &g.cams, n_gallery);
        let rankings = rank_real(&q, &g).unwrap();
        assert_eq!(rankings.results.len(), oracle_aps.len(), "instance {instance}");
        if rankings.results.is_empty() {
            continue;
        }
        for (res, want) in rankings.results.iter().zip(&oracle_aps) {
            let got = average_precision(res);
            assert!((got - want).abs() < 1e-12, "instance {instance}: AP {got} vs {want}");
        }
        let curve = cmc(&rankings.results, n_gallery).unwrap();
        for (r, (got, want)) in curve.rates.iter().zip(&oracle_rates).enumerate() {
            assert!((got - want).abs() < 1e-12, "instance {instance} rank {r}: {got} vs {want}");
        }
    }

    // Packed Hamming against a per-bit loop on 1000 random pairs.
    let dim = 130; // forces multi-word rows plus a ragged final word
    let rand_codes = |rng: &mut RngStream, n: usize| {
        let data: Vec<f64> = (0..n * dim).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        quantize(&FeatureMatrix::new(dim, data, vec![1; n], vec![1; n]).unwrap())
    };
    let a = rand_codes(&mut rng, 1000);
    let b = rand_codes(&mut rng, 1000);
    for i in 0..1000 {
        let packed = hamming(a.row(i), b.row(i)).unwrap();
        let mut loop_count = 0u32;
        for bit in 0..dim {
            if a.bit(i, bit) != b.bit(i, bit) {
                loop_count += 1;
            }
        }
        assert_eq!(packed, loop_count, "pair {i}");
    }

    // Squared Euclidean over {0,1} reals must rank exactly like Hamming.
    for seed in 0..10 {
        let mut rng = RngStream::new_seeded(900 + seed);
        let n_q = 4;
        let n_g = 12;
        let data = |rng: &mut RngStream, n: usize| -> Vec<f64> {
            (0..n * dim).map(|_| rng.uniform_in(-1.0, 1.0)).collect()
        };
        let mk = |rng: &mut RngStream, n: usize| {
            let ids = (0..n).map(|_| 1 + rng.below(3) as u32).collect();
            let cams = (0..n).map(|_| 1 + rng.below(2) as u16).collect();
            quantize(&FeatureMatrix::new(dim, data(rng, n), ids, cams).unwrap())
        };
        let q = mk(&mut rng, n_q);
        let g = mk(&mut rng, n_g);
        let by_hamming = rank_codes(&q, &g).unwrap();
        let by_euclid = rank_real(&codes_to_reals(&q), &codes_to_reals(&g)).unwrap();
        assert_eq!(by_hamming.skipped, by_euclid.skipped);
        for (h, e) in by_hamming.results.iter().zip(&by_euclid.results) {
            assert_eq!(h.order, e.order, "seed {seed}");
        }
    }
    println!(
        "criterion 4: AP/CMC match brute force on 100 instances; packed Hamming matches \
         bit loop on 1000 pairs; Euclidean-on-codes ranking == Hamming ranking"
    );
}

#[test]
fn criterion_5_ensemble_benefit() {
    let set = shared_runs();
    let mut full_beats_mean = 0usize;
    let mut full_beats_every = 0usize;
    let mut steps_total = 0usize;
    let mut steps_nondecreasing = 0usize;
    for run in &set.runs {
        let mean = run.singleton_map.iter().sum::<f64>() / run.singleton_map.len() as f64;
        let max = run.singleton_map.iter().cloned().fold(f64::MIN, f64::max);
        if run.full_map_euclidean >= mean {
            full_beats_mean += 1;
        }
        if run.full_map_euclidean >= max {
            full_beats_every += 1;
        }
        for step in run.cumulative_map.windows(2) {
            steps_total += 1;
            if step[1] >= step[0] {
                steps_nondecreasing += 1;
            }
        }
        println!(
            "  seed {}: full mAP {:.4}, singleton mean {:.4}, singleton max {:.4}",
            run.seed, run.full_map_euclidean, mean, max
        );
    }
    let step_frac = steps_nondecreasing as f64 / steps_total as f64;
    println!(
        "criterion 5: full>=mean in {full_beats_mean}/5, full>=every in {full_beats_every}/5, \
         nondecreasing steps {steps_nondecreasing}/{steps_total} ({:.1}%), wall {:.1}s",
        step_frac * 100.0,
        set.wall.as_secs_f64()
    );
    assert!(full_beats_mean >= 4, "full ensemble beat the mean singleton in only {full_beats_mean}/5 runs");
    assert!(full_beats_every >= 3, "full ensemble beat every singleton in only {full_beats_every}/5 runs");
    assert!(step_frac >= 0.8, "cumulative mAP nondecreasing in only {steps_nondecreasing}/{steps_total} steps");
    assert!(set.wall < Duration::from_secs(15 * 60), "runs took {:?}", set.wall);
}

#[test]
fn criterion_6_quantization_robustness() {
    let set = shared_runs();
    let mut gaps: Vec<f64> = set
        .runs
        .iter()
        .map(|r| (r.full_map_hamming - r.full_map_euclidean).abs())
        .collect();
    gaps.sort_by(f64::total_cmp);
    let median = gaps[gaps.len() / 2];
    println!("criterion 6: median |mAP(hamming) - mAP(euclidean)| = {median:.4}");
    assert!(median <= 0.10, "median euclidean/hamming gap {median}");
}

#[test]
fn criterion_7_training_sanity() {
    let set = shared_runs();
    for run in &set.runs {
        let drop = 1.0 - run.last_loss / run.first_loss;
        println!(
            "  seed {}: loss {:.3} -> {:.3} ({:.1}% drop)",
            run.seed,
            run.first_loss,
            run.last_loss,
            drop * 100.0
        );
        assert!(
            drop >= 0.5,
            "seed {}: loss dropped only {:.1}% over 30 epochs",
            run.seed,
            drop * 100.0
        );
    }
    let paper = TrainConfig::paper();
    let pre = lr_at(paper.decay_epoch - 1, &paper);
    let post = lr_at(paper.decay_epoch, &paper);
    println!("criterion 7: loss drops >= 50% in all runs; paper lr {pre} pre-decay, {post} post-decay");
    assert_eq!(pre, 0.05);
    assert!((post - 0.005).abs() < 1e-15);
}

#[test]
fn criterion_8_determinism() {
    let mut spec = SyntheticSpec::default();
    spec.train_ids = 4;
    spec.test_ids = 2;
    spec.views_per_id = 4;
    spec.cams = 2;
    let ds = generate_synthetic(&spec).unwrap();
    let num_classes = class_indices(&ds.train).0.len();

    let run = |dir: &std::path::Path| {
        let mut model = EnsembleModel::new(EnsembleConfig::mini(num_classes), 9).unwrap();
        let mut cfg = TrainConfig::mini();
        cfg.seed = 9;
        cfg.epochs = 2;
        cfg.decay_epoch = 2;
        cfg.batch_size = 8;
        run_training(&mut model, &ds.train, &cfg, dir, None).unwrap();
        let all: Vec<usize> = (1..=model.config.num_heads()).collect();
        let q = extract_features(&mut model, &ds.query, &all).unwrap();
        densemble::retrieval::save_features(dir.join("query.feat"), &q).unwrap();
        densemble::retrieval::save_codes(dir.join("query.codes"), &quantize(&q)).unwrap();
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(a.path());
    run(b.path());
    for name in ["metrics.csv", "model.ckpt", "query.feat", "query.codes"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between identical runs");
    }
    println!("criterion 8: identical runs produce byte-identical logs, checkpoints and feature files");
}
