//! Command-line binding of the library: dataset generation, training,
//! feature extraction, evaluation, cost analysis, gradient checking and
//! hyper-parameter sweeps.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error. Every command
//! that creates artifacts also records how they were produced (resolved
//! config, seeds, tool version) next to them, so a run directory is enough to
//! reproduce itself.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::backbone::DenseNetConfig;
use crate::config::{
    load_experiment_config, model_config_text, write_resolved_config, ExperimentConfig,
    MetricChoice,
};
use crate::data::{generate_synthetic, load_dataset, save_dataset, ReidDataset, ReidItem};
use crate::ensemble::{EnsembleConfig, EnsembleModel};
use crate::error::{Error, Result};
use crate::flops::{all_heads, count_baseline, count_model, giga, FlopReport};
use crate::gradcheck::{full_model_check, primitive_battery, MODEL_TOL, PRIMITIVE_TOL};
use crate::retrieval::{
    combine_features, evaluate, evaluate_codes, extract_features, load_feature_file, quantize,
    save_codes, save_features, select_head_columns, CmcCurve, FeatureFile, Metric,
};
use crate::train::run_training;

#[derive(Parser)]
#[command(
    name = "densemble",
    version,
    about = "Shared-backbone embedding ensembles: train, extract, rank, analyze"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Profile + optional INI overrides; shared by config-driven commands.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// Named base profile (mini or paper).
    #[arg(long, default_value = "mini")]
    profile: String,
    /// INI file applied on top of the profile; unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let base = ExperimentConfig::profile(&self.profile)?;
        let cfg = match &self.config {
            Some(path) => load_experiment_config(path, base)?,
            None => base,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic identity dataset under --out.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Overrides [dataset] seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train an ensemble on --data, writing logs and checkpoints to --out.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides [train] seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Overrides lr0.
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        checkpoint_every: Option<usize>,
    },
    /// Extract embeddings from one or more checkpoints into a feature file.
    Extract {
        /// Model checkpoint; repeat with --combine for ensembles of ensembles.
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Dataset partition: train, query or gallery.
        #[arg(long, default_value = "query")]
        split: String,
        #[arg(long)]
        out: PathBuf,
        /// Head subset: "all" or a comma list of 1-based indices.
        #[arg(long, default_value = "all")]
        heads: String,
        /// Store binary codes instead of real-valued features.
        #[arg(long)]
        quantize: bool,
        /// Concatenate features from all given checkpoints.
        #[arg(long)]
        combine: bool,
    },
    /// Rank gallery against query and report Rank-1/5/10 and mAP.
    Eval {
        /// Checkpoint mode: extract features here, with per-head breakdown.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Feature-file mode: evaluate pre-extracted matrices as-is.
        #[arg(long)]
        query_features: Option<PathBuf>,
        #[arg(long)]
        gallery_features: Option<PathBuf>,
        #[arg(long, default_value = "both")]
        metric: String,
        #[arg(long, default_value_t = 10)]
        max_rank: usize,
        /// Heads in the per-head table (checkpoint mode): "all" or comma list.
        #[arg(long, default_value = "all")]
        heads: String,
        /// Also write CMC and per-head CSVs here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Static MAC/FLOP analysis of a named model configuration.
    Flops {
        /// mini, paper, densenet121-full or densenet121-baseline.
        #[arg(long, default_value = "mini")]
        profile: String,
        /// Machine-readable per-layer rows instead of the table.
        #[arg(long)]
        csv: bool,
        /// Head subset: "all", "none" or a comma list.
        #[arg(long, default_value = "all")]
        heads: String,
        /// Count classifier layers too (extraction normally stops before them).
        #[arg(long)]
        include_classifier: bool,
    },
    /// Finite-difference verification of every gradient path.
    GradCheck {
        /// Number of random primitive-battery seeds.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Coordinates sampled per tensor in the full-model check.
        #[arg(long, default_value_t = 2)]
        coords: usize,
    },
    /// Train/evaluate a seed x L x H grid; one CSV row per cell.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "0")]
        seeds: String,
        #[arg(long, default_value = "4")]
        heads_per_family: String,
        #[arg(long, default_value = "64")]
        embedding_dims: String,
        /// Shorter schedule for the whole grid.
        #[arg(long)]
        epochs: Option<usize>,
    },
}

/// Entry point used by the binary; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version arrive here too; they are not errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData { cfg, out, seed } => cmd_gen_data(cfg, &out, seed),
        Command::Train { cfg, data, out, seed, epochs, batch_size, lr, checkpoint_every } => {
            cmd_train(cfg, &data, &out, seed, epochs, batch_size, lr, checkpoint_every)
        }
        Command::Extract { checkpoint, data, split, out, heads, quantize, combine } => {
            cmd_extract(&checkpoint, &data, &split, &out, &heads, quantize, combine)
        }
        Command::Eval {
            checkpoint,
            data,
            query_features,
            gallery_features,
            metric,
            max_rank,
            heads,
            out,
        } => cmd_eval(
            checkpoint.as_deref(),
            data.as_deref(),
            query_features.as_deref(),
            gallery_features.as_deref(),
            &metric,
            max_rank,
            &heads,
            out.as_deref(),
        ),
        Command::Flops { profile, csv, heads, include_classifier } => {
            cmd_flops(&profile, csv, &heads, include_classifier)
        }
        Command::GradCheck { seeds, coords } => cmd_grad_check(seeds, coords),
        Command::Sweep { cfg, data, out, seeds, heads_per_family, embedding_dims, epochs } => {
            cmd_sweep(cfg, &data, &out, &seeds, &heads_per_family, &embedding_dims, epochs)
        }
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::config(format!("cannot parse '{t}' in {what} list")))
        })
        .collect()
}

fn parse_heads(s: &str, num_heads: usize) -> Result<Vec<usize>> {
    if s == "all" {
        return Ok((1..=num_heads).collect());
    }
    let heads: Vec<usize> = parse_list(s, "head")?;
    crate::retrieval::normalize_subset(&heads, num_heads)
}

fn split_items<'a>(ds: &'a ReidDataset, split: &str) -> Result<&'a [ReidItem]> {
    match split {
        "train" => Ok(&ds.train),
        "query" => Ok(&ds.query),
        "gallery" => Ok(&ds.gallery),
        other => Err(Error::config(format!(
            "unknown split '{other}' (want train, query or gallery)"
        ))),
    }
}

fn cmd_gen_data(cfg: ConfigArgs, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = cfg.load()?;
    if let Some(seed) = seed {
        cfg.dataset.seed = seed;
    }
    let ds = generate_synthetic(&cfg.dataset)?;
    save_dataset(&ds, out)?;
    write_resolved_config(out, &cfg)?;
    println!(
        "wrote {} train / {} query / {} gallery images to {}",
        ds.train.len(),
        ds.query.len(),
        ds.gallery.len(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    cfg: ConfigArgs,
    data: &Path,
    out: &Path,
    seed: Option<u64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    checkpoint_every: Option<usize>,
) -> Result<()> {
    let mut cfg = cfg.load()?;
    if let Some(v) = seed {
        cfg.train.seed = v;
    }
    if let Some(v) = epochs {
        cfg.train.epochs = v;
        cfg.train.decay_epoch = cfg.train.decay_epoch.min(v);
    }
    if let Some(v) = batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = lr {
        cfg.train.lr0 = v;
    }
    if let Some(v) = checkpoint_every {
        cfg.train.checkpoint_every = v;
    }
    let ds = load_dataset(data)?;
    let ids: std::collections::BTreeSet<u32> = ds.train.iter().map(|i| i.id).collect();
    let model_cfg = cfg.resolved_model(ids.len())?;
    cfg.model = model_cfg.clone();
    let mut model = EnsembleModel::new(model_cfg, cfg.train.seed)?;
    write_resolved_config(out, &cfg)?;
    let logs = run_training(
        &mut model,
        &ds.train,
        &cfg.train,
        out,
        Some(&mut |log| {
            println!(
                "epoch {:>3}  lr {:<8}  loss {:.4}",
                log.epoch, log.lr, log.total_loss
            );
        }),
    )?;
    if let (Some(first), Some(last)) = (logs.first(), logs.last()) {
        println!(
            "loss {:.4} -> {:.4} over {} epochs; artifacts in {}",
            first.total_loss,
            last.total_loss,
            logs.len(),
            out.display()
        );
    }
    Ok(())
}

/// Provenance notes dropped next to extracted feature files.
fn write_sidecar(path: &Path, lines: &[String]) -> Result<()> {
    let sidecar = PathBuf::from(format!("{}.ini", path.display()));
    let mut text = format!("# densemble {}\n", env!("CARGO_PKG_VERSION"));
    for l in lines {
        text.push_str(&format!("# {l}\n"));
    }
    fs::write(&sidecar, text).map_err(|e| Error::io(&sidecar, e))
}

fn cmd_extract(
    checkpoints: &[PathBuf],
    data: &Path,
    split: &str,
    out: &Path,
    heads: &str,
    do_quantize: bool,
    combine: bool,
) -> Result<()> {
    if checkpoints.len() > 1 && !combine {
        return Err(Error::config(
            "multiple checkpoints require --combine (features are concatenated)",
        ));
    }
    let ds = load_dataset(data)?;
    let items = split_items(&ds, split)?;
    let mut mats = Vec::new();
    for path in checkpoints {
        let mut model = EnsembleModel::load_checkpoint(path)?;
        let subset = parse_heads(heads, model.config.num_heads())?;
        mats.push(extract_features(&mut model, items, &subset)?);
    }
    let features = combine_features(&mats)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    if do_quantize {
        save_codes(out, &quantize(&features))?;
    } else {
        save_features(out, &features)?;
    }
    let mut notes = vec![
        format!("data = {}", data.display()),
        format!("split = {split}"),
        format!("heads = {heads}"),
        format!("quantize = {do_quantize}"),
    ];
    for c in checkpoints {
        notes.push(format!("checkpoint = {}", c.display()));
    }
    write_sidecar(out, &notes)?;
    println!(
        "extracted {} rows x {} dims ({}) to {}",
        features.rows(),
        features.dim(),
        if do_quantize { "binary codes" } else { "f32 features" },
        out.display()
    );
    Ok(())
}

fn rate_at(curve: &CmcCurve, rank: usize) -> String {
    match curve.rates.get(rank - 1) {
        Some(v) => format!("{v:.4}"),
        None => "-".into(),
    }
}

fn score_line(label: &str, curve: &CmcCurve) -> String {
    format!(
        "{label}: R1 {}  R5 {}  R10 {}  mAP {:.4}",
        rate_at(curve, 1),
        rate_at(curve, 5),
        rate_at(curve, 10),
        curve.map
    )
}

/// CSV per the retrieval contract: rank,match_rate rows then a mAP summary line.
fn cmc_csv(curve: &CmcCurve) -> String {
    let mut s = String::from("rank,match_rate\n");
    for (i, rate) in curve.rates.iter().enumerate() {
        let _ = writeln!(s, "{},{}", i + 1, rate);
    }
    let _ = writeln!(s, "mAP,{}", curve.map);
    s
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    checkpoint: Option<&Path>,
    data: Option<&Path>,
    query_features: Option<&Path>,
    gallery_features: Option<&Path>,
    metric: &str,
    max_rank: usize,
    heads: &str,
    out: Option<&Path>,
) -> Result<()> {
    let choice = MetricChoice::parse(metric)?;
    if max_rank == 0 {
        return Err(Error::config("max_rank must be at least 1"));
    }
    let mut csv_artifacts: Vec<(String, String)> = Vec::new();

    match (checkpoint, data, query_features, gallery_features) {
        (Some(ckpt), Some(data), None, None) => {
            let mut model = EnsembleModel::load_checkpoint(ckpt)?;
            let ds = load_dataset(data)?;
            let num_heads = model.config.num_heads();
            let h_dim = model.config.embedding_dim;
            let subset = parse_heads(heads, num_heads)?;
            let all: Vec<usize> = (1..=num_heads).collect();
            let query = extract_features(&mut model, &ds.query, &all)?;
            let gallery = extract_features(&mut model, &ds.gallery, &all)?;
            for m in choice.metrics() {
                println!("metric {}", m.name());
                for &h in &subset {
                    let q = select_head_columns(&query, h_dim, &[h])?;
                    let g = select_head_columns(&gallery, h_dim, &[h])?;
                    let rep = evaluate(&q, &g, m, max_rank)?;
                    println!("  {}", score_line(&format!("head {h}"), &rep.curve));
                }
                let mut last = None;
                for k in 1..=subset.len() {
                    let q = select_head_columns(&query, h_dim, &subset[..k])?;
                    let g = select_head_columns(&gallery, h_dim, &subset[..k])?;
                    let rep = evaluate(&q, &g, m, max_rank)?;
                    println!(
                        "  {}",
                        score_line(&format!("heads {:?}", &subset[..k]), &rep.curve)
                    );
                    last = Some(rep);
                }
                let rep = last.expect("subset is nonempty");
                if !rep.skipped.is_empty() {
                    println!("  skipped queries (no cross-camera match): {:?}", rep.skipped);
                }
                csv_artifacts.push((format!("cmc_{}.csv", m.name()), cmc_csv(&rep.curve)));
            }
            if let Some(dir) = out {
                let record = format!(
                    "# densemble {}\n# checkpoint = {}\n# data = {}\n# heads = {heads}\n\
                     # metric = {} max_rank = {max_rank}\n\n{}",
                    env!("CARGO_PKG_VERSION"),
                    ckpt.display(),
                    data.display(),
                    choice.name(),
                    model_config_text(&model.config),
                );
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let p = dir.join("config.ini");
                fs::write(&p, record).map_err(|e| Error::io(&p, e))?;
            }
        }
        (None, None, Some(qp), Some(gp)) => {
            let q = load_feature_file(qp)?;
            let g = load_feature_file(gp)?;
            for m in choice.metrics() {
                let rep = match (&q, &g) {
                    (FeatureFile::Real(q), FeatureFile::Real(g)) => evaluate(q, g, m, max_rank)?,
                    (FeatureFile::Codes(q), FeatureFile::Codes(g)) => {
                        evaluate_codes(q, g, m, max_rank)?
                    }
                    _ => {
                        return Err(Error::data(
                            "query and gallery feature files have different kinds",
                        ))
                    }
                };
                println!("metric {}", m.name());
                println!(
                    "  {}",
                    score_line(&format!("{} scored queries", rep.scored), &rep.curve)
                );
                if !rep.skipped.is_empty() {
                    println!("  skipped queries (no cross-camera match): {:?}", rep.skipped);
                }
                csv_artifacts.push((format!("cmc_{}.csv", m.name()), cmc_csv(&rep.curve)));
            }
            if let Some(dir) = out {
                let record = format!(
                    "# densemble {}\n# query_features = {}\n# gallery_features = {}\n\
                     # metric = {} max_rank = {max_rank}\n",
                    env!("CARGO_PKG_VERSION"),
                    qp.display(),
                    gp.display(),
                    choice.name(),
                );
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let p = dir.join("config.ini");
                fs::write(&p, record).map_err(|e| Error::io(&p, e))?;
            }
        }
        _ => {
            return Err(Error::config(
                "eval wants either --checkpoint with --data, or --query-features with --gallery-features",
            ))
        }
    }

    if let Some(dir) = out {
        for (name, text) in csv_artifacts {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
        println!("wrote CSV artifacts to {}", dir.display());
    }
    Ok(())
}

fn cmd_flops(profile: &str, csv: bool, heads: &str, include_classifier: bool) -> Result<()> {
    let report: FlopReport = match profile {
        "densenet121-baseline" => {
            count_baseline(&DenseNetConfig::densenet121((384, 128)), 1024)?
        }
        name => {
            let cfg = match name {
                "mini" => {
                    let mut c = ExperimentConfig::mini().model;
                    c.num_classes = 20; // placeholder; classifiers excluded by default
                    c
                }
                "paper" | "densenet121-full" => EnsembleConfig::paper(8, 512, 751),
                other => {
                    return Err(Error::config(format!(
                        "unknown flops profile '{other}' (want mini, paper, densenet121-full or densenet121-baseline)"
                    )))
                }
            };
            let subset = if heads == "none" {
                Vec::new()
            } else if heads == "all" {
                all_heads(&cfg)
            } else {
                parse_heads(heads, cfg.num_heads())?
            };
            count_model(&cfg, &subset, include_classifier)?
        }
    };
    if csv {
        print!("{}", report.render_csv());
    } else {
        print!("{}", report.render_table());
        println!(
            "per-image cost {:.4} G MACs (reported as GFLOPs under the MAC convention)",
            giga(report.total_macs())
        );
    }
    Ok(())
}

fn cmd_grad_check(seeds: u64, coords: usize) -> Result<()> {
    let mut failures = Vec::new();
    let mut worst: std::collections::BTreeMap<String, f64> = Default::default();
    let mut total_coords = 0usize;
    for seed in 0..seeds {
        for rep in primitive_battery(seed)? {
            total_coords += rep.coords;
            let w = worst.entry(rep.name.clone()).or_insert(0.0);
            if rep.max_rel_err > *w {
                *w = rep.max_rel_err;
            }
            if rep.max_rel_err > PRIMITIVE_TOL {
                failures.push(format!(
                    "primitive {} seed {seed}: {:.3e} > {PRIMITIVE_TOL:.0e}",
                    rep.name, rep.max_rel_err
                ));
            }
        }
    }
    for (name, err) in &worst {
        println!(
            "{name:<24} max rel err {err:.3e}  (tol {PRIMITIVE_TOL:.0e}) {}",
            if *err <= PRIMITIVE_TOL { "ok" } else { "FAIL" }
        );
    }
    let model_rep = full_model_check(0, coords)?;
    total_coords += model_rep.coords;
    println!(
        "{:<24} max rel err {:.3e}  (tol {MODEL_TOL:.0e}) {}",
        model_rep.name,
        model_rep.max_rel_err,
        if model_rep.max_rel_err <= MODEL_TOL { "ok" } else { "FAIL" }
    );
    if model_rep.max_rel_err > MODEL_TOL {
        failures.push(format!(
            "full model: {:.3e} > {MODEL_TOL:.0e}",
            model_rep.max_rel_err
        ));
    }
    println!("checked {total_coords} coordinates over {seeds} seeds");
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Error::config(format!(
            "gradient check failed:\n  {}",
            failures.join("\n  ")
        )))
    }
}

fn cmd_sweep(
    cfg: ConfigArgs,
    data: &Path,
    out: &Path,
    seeds: &str,
    heads_per_family: &str,
    embedding_dims: &str,
    epochs: Option<usize>,
) -> Result<()> {
    let base = cfg.load()?;
    let seeds: Vec<u64> = parse_list(seeds, "seed")?;
    let ls: Vec<usize> = parse_list(heads_per_family, "heads_per_family")?;
    let hs: Vec<usize> = parse_list(embedding_dims, "embedding_dim")?;
    if seeds.is_empty() || ls.is_empty() || hs.is_empty() {
        return Err(Error::config("sweep grids must be nonempty"));
    }
    let ds = load_dataset(data)?;
    let num_ids = ds
        .train
        .iter()
        .map(|i| i.id)
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_resolved_config(out, &base)?;

    let mut csv = String::from(
        "heads_per_family,num_heads,embedding_dim,concat_dim,seed,final_loss,\
         rank1_euclidean,map_euclidean,rank1_hamming,map_hamming\n",
    );
    for &l in &ls {
        for &h in &hs {
            for &seed in &seeds {
                let mut cell = base.clone();
                cell.model.heads_per_family = l;
                cell.model.block4_attach =
                    EnsembleConfig::default_attach(l, cell.model.backbone.block_sizes[3]);
                cell.model.embedding_dim = h;
                cell.train.seed = seed;
                if let Some(e) = epochs {
                    cell.train.epochs = e;
                    cell.train.decay_epoch = cell.train.decay_epoch.min(e);
                }
                let model_cfg = cell.resolved_model(num_ids)?;
                cell.model = model_cfg.clone();
                let cell_dir = out.join(format!("L{l}_H{h}_seed{seed}"));
                let mut model = EnsembleModel::new(model_cfg, seed)?;
                write_resolved_config(&cell_dir, &cell)?;
                let logs = run_training(&mut model, &ds.train, &cell.train, &cell_dir, None)?;
                let final_loss = logs.last().map(|e| e.total_loss).unwrap_or(f64::NAN);

                let all: Vec<usize> = (1..=cell.model.num_heads()).collect();
                let query = extract_features(&mut model, &ds.query, &all)?;
                let gallery = extract_features(&mut model, &ds.gallery, &all)?;
                let euc = evaluate(&query, &gallery, Metric::Euclidean, 10)?;
                let ham = evaluate(&query, &gallery, Metric::Hamming, 10)?;
                let _ = writeln!(
                    csv,
                    "{l},{},{h},{},{seed},{},{},{},{},{}",
                    2 * l,
                    query.dim(),
                    final_loss,
                    euc.curve.rates[0],
                    euc.curve.map,
                    ham.curve.rates[0],
                    ham.curve.map
                );
                println!(
                    "cell L={l} H={h} seed={seed}: loss {final_loss:.4} mAP(euclidean) {:.4} mAP(hamming) {:.4}",
                    euc.curve.map, ham.curve.map
                );
            }
        }
    }
    let path = out.join("sweep.csv");
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    println!("wrote {}", path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heads_parser_accepts_all_and_lists() {
        assert_eq!(parse_heads("all", 4).unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(parse_heads("3,1", 4).unwrap(), vec![1, 3]);
        assert!(parse_heads("0", 4).is_err());
        assert!(parse_heads("5", 4).is_err());
        assert!(parse_heads("x", 4).is_err());
    }

    #[test]
    fn list_parser_reports_bad_tokens() {
        assert_eq!(parse_list::<u64>("0, 7,9", "seed").unwrap(), vec![0, 7, 9]);
        assert!(parse_list::<u64>("1,x", "seed").is_err());
    }

    #[test]
    fn cli_parses_representative_command_lines() {
        for argv in [
            vec!["densemble", "gen-data", "--out", "/tmp/d"],
            vec!["densemble", "train", "--data", "/tmp/d", "--out", "/tmp/r", "--seed", "7"],
            vec![
                "densemble", "extract", "--checkpoint", "m.ckpt", "--data", "/tmp/d", "--out",
                "q.feat", "--split", "query", "--quantize",
            ],
            vec!["densemble", "eval", "--query-features", "q.feat", "--gallery-features", "g.feat"],
            vec!["densemble", "flops", "--profile", "densenet121-full", "--csv"],
            vec!["densemble", "grad-check", "--seeds", "3"],
            vec![
                "densemble", "sweep", "--data", "/tmp/d", "--out", "/tmp/s", "--seeds", "0,1",
                "--heads-per-family", "2,4",
            ],
        ] {
            Cli::try_parse_from(&argv).unwrap_or_else(|e| panic!("{argv:?}: {e}"));
        }
    }

    #[test]
    fn unknown_flags_are_usage_errors() {
        assert!(Cli::try_parse_from(["densemble", "train", "--data", "d", "--out", "o", "--bogus"])
            .is_err());
        assert!(Cli::try_parse_from(["densemble", "nonsense"]).is_err());
    }
}
