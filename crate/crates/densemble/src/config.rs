//! INI-style configuration: parsing, serialization, named profiles.
//!
//! Grammar: `[section]` headers, `key = value` pairs, `#`/`;` comments, blank
//! lines. Unknown sections or keys are rejected with the offending name and
//! line number, as are duplicate keys; a config never silently ignores a
//! typo. Serialization uses shortest-round-trip float formatting so
//! emit -> parse is lossless.
//!
//! Two entry points: the full experiment config (dataset + model + training +
//! evaluation), and the model-only subset ([backbone] + [ensemble]) that gets
//! embedded in checkpoint headers.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use crate::data::SyntheticSpec;
use crate::ensemble::{Block3Tap, Block4Tap, EnsembleConfig};
use crate::error::{Error, Result};
use crate::retrieval::Metric;
use crate::train::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricChoice {
    Euclidean,
    Hamming,
    Both,
}

impl MetricChoice {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(MetricChoice::Euclidean),
            "hamming" => Ok(MetricChoice::Hamming),
            "both" => Ok(MetricChoice::Both),
            other => Err(Error::config(format!(
                "unknown metric '{other}' (want euclidean, hamming or both)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricChoice::Euclidean => "euclidean",
            MetricChoice::Hamming => "hamming",
            MetricChoice::Both => "both",
        }
    }

    pub fn metrics(self) -> Vec<Metric> {
        match self {
            MetricChoice::Euclidean => vec![Metric::Euclidean],
            MetricChoice::Hamming => vec![Metric::Hamming],
            MetricChoice::Both => vec![Metric::Euclidean, Metric::Hamming],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub metric: MetricChoice,
    pub max_rank: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { metric: MetricChoice::Both, max_rank: 10 }
    }
}

/// Everything a run needs. `model.num_classes == 0` means "resolve from the
/// training partition", the usual case.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: SyntheticSpec,
    pub model: EnsembleConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    /// Desk-scale defaults: 64x32 inputs, mini backbone, 2L = 8 heads.
    pub fn mini() -> Self {
        let mut model = EnsembleConfig::mini(0);
        model.num_classes = 0;
        ExperimentConfig {
            dataset: SyntheticSpec::default(),
            model,
            train: TrainConfig::mini(),
            eval: EvalConfig::default(),
        }
    }

    /// Full-scale recipe: 384x128 inputs, DenseNet121 backbone, 2L = 16 heads
    /// of 512, the published training schedule.
    pub fn paper() -> Self {
        let mut model = EnsembleConfig::paper(8, 512, 0);
        model.num_classes = 0;
        let mut dataset = SyntheticSpec::default();
        dataset.height = 384;
        dataset.width = 128;
        ExperimentConfig {
            dataset,
            model,
            train: TrainConfig::paper(),
            eval: EvalConfig::default(),
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "mini" => Ok(Self::mini()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::config(format!(
                "unknown profile '{other}' (want mini or paper)"
            ))),
        }
    }

    /// Structural validation; tolerates unresolved (0) num_classes.
    pub fn validate(&self) -> Result<()> {
        let mut model = self.model.clone();
        if model.num_classes == 0 {
            model.num_classes = 2;
        }
        model.validate()?;
        self.train.validate()?;
        if self.eval.max_rank == 0 {
            return Err(Error::config("max_rank must be at least 1"));
        }
        Ok(())
    }

    /// Concrete model config with num_classes filled in from the data.
    pub fn resolved_model(&self, num_train_ids: usize) -> Result<EnsembleConfig> {
        let mut model = self.model.clone();
        if model.num_classes == 0 {
            model.num_classes = num_train_ids;
        } else if model.num_classes != num_train_ids {
            return Err(Error::config(format!(
                "config says {} classes but the training set has {num_train_ids} identities",
                model.num_classes
            )));
        }
        model.validate()?;
        Ok(model)
    }
}

#[derive(Clone, Debug)]
struct IniEntry {
    section: String,
    key: String,
    value: String,
    line: usize,
}

fn parse_ini(text: &str) -> Result<Vec<IniEntry>> {
    let mut entries = Vec::new();
    let mut section = String::new();
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') || t.starts_with(';') {
            continue;
        }
        if let Some(name) = t.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| Error::config(format!("line {line}: unterminated section header")))?
                .trim();
            if name.is_empty() {
                return Err(Error::config(format!("line {line}: empty section name")));
            }
            section = name.to_string();
            continue;
        }
        let Some(eq) = t.find('=') else {
            return Err(Error::config(format!(
                "line {line}: expected 'key = value', got '{t}'"
            )));
        };
        let key = t[..eq].trim().to_string();
        let value = t[eq + 1..].trim().to_string();
        if key.is_empty() {
            return Err(Error::config(format!("line {line}: empty key")));
        }
        if section.is_empty() {
            return Err(Error::config(format!(
                "line {line}: key '{key}' appears before any [section]"
            )));
        }
        if !seen.insert((section.clone(), key.clone())) {
            return Err(Error::config(format!(
                "line {line}: duplicate key '{key}' in section [{section}]"
            )));
        }
        entries.push(IniEntry { section: section.clone(), key, value, line });
    }
    Ok(entries)
}

fn bad_value(e: &IniEntry, want: &str) -> Error {
    Error::config(format!(
        "line {}: key '{}' in [{}]: cannot parse '{}' as {want}",
        e.line, e.key, e.section, e.value
    ))
}

fn parse_usize(e: &IniEntry) -> Result<usize> {
    e.value.parse().map_err(|_| bad_value(e, "an unsigned integer"))
}

fn parse_u64(e: &IniEntry) -> Result<u64> {
    e.value.parse().map_err(|_| bad_value(e, "an unsigned integer"))
}

fn parse_f64(e: &IniEntry) -> Result<f64> {
    e.value.parse().map_err(|_| bad_value(e, "a number"))
}

fn parse_bool(e: &IniEntry) -> Result<bool> {
    match e.value.as_str() {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad_value(e, "true or false")),
    }
}

fn parse_usize_list(e: &IniEntry) -> Result<Vec<usize>> {
    e.value
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| bad_value(e, "a comma-separated integer list")))
        .collect()
}

fn unknown_key(e: &IniEntry) -> Error {
    Error::config(format!(
        "line {}: unknown key '{}' in section [{}]",
        e.line, e.key, e.section
    ))
}

/// Applies a [backbone] or [ensemble] entry. Ok(false) = section not ours.
fn apply_model_entry(cfg: &mut EnsembleConfig, e: &IniEntry) -> Result<bool> {
    match e.section.as_str() {
        "backbone" => {
            let b = &mut cfg.backbone;
            match e.key.as_str() {
                "input_channels" => b.input.0 = parse_usize(e)?,
                "input_height" => b.input.1 = parse_usize(e)?,
                "input_width" => b.input.2 = parse_usize(e)?,
                "growth_rate" => b.growth_rate = parse_usize(e)?,
                "block_sizes" => {
                    let v = parse_usize_list(e)?;
                    b.block_sizes = v
                        .try_into()
                        .map_err(|_| bad_value(e, "exactly four block sizes"))?;
                }
                "stem_channels" => b.stem_channels = parse_usize(e)?,
                "compression" => b.compression = parse_f64(e)?,
                "bottleneck_factor" => b.bottleneck_factor = parse_usize(e)?,
                _ => return Err(unknown_key(e)),
            }
            Ok(true)
        }
        "ensemble" => {
            match e.key.as_str() {
                "heads_per_family" => cfg.heads_per_family = parse_usize(e)?,
                "embedding_dim" => cfg.embedding_dim = parse_usize(e)?,
                "num_classes" => cfg.num_classes = parse_usize(e)?,
                "block4_attach" => cfg.block4_attach = parse_usize_list(e)?,
                "block3_tap" => {
                    cfg.block3_tap = match e.value.as_str() {
                        "pre-transition" => Block3Tap::PreTransition,
                        "post-transition" => Block3Tap::PostTransition,
                        _ => return Err(bad_value(e, "pre-transition or post-transition")),
                    }
                }
                "block4_tap" => {
                    cfg.block4_tap = match e.value.as_str() {
                        "layer-features" => Block4Tap::LayerFeatures,
                        "full-state" => Block4Tap::FullState,
                        _ => return Err(bad_value(e, "layer-features or full-state")),
                    }
                }
                "head_init_std" => cfg.head_init_std = parse_f64(e)?,
                _ => return Err(unknown_key(e)),
            }
            Ok(true)
        }
        _ => Ok(false),
    }
}

fn tap3_name(t: Block3Tap) -> &'static str {
    match t {
        Block3Tap::PreTransition => "pre-transition",
        Block3Tap::PostTransition => "post-transition",
    }
}

fn tap4_name(t: Block4Tap) -> &'static str {
    match t {
        Block4Tap::LayerFeatures => "layer-features",
        Block4Tap::FullState => "full-state",
    }
}

fn join(list: &[usize]) -> String {
    list.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// [backbone] + [ensemble] sections only; this is the checkpoint header.
pub fn model_config_text(cfg: &EnsembleConfig) -> String {
    let b = &cfg.backbone;
    let mut s = String::new();
    s.push_str("[backbone]\n");
    s.push_str(&format!("input_channels = {}\n", b.input.0));
    s.push_str(&format!("input_height = {}\n", b.input.1));
    s.push_str(&format!("input_width = {}\n", b.input.2));
    s.push_str(&format!("growth_rate = {}\n", b.growth_rate));
    s.push_str(&format!("block_sizes = {}\n", join(&b.block_sizes)));
    s.push_str(&format!("stem_channels = {}\n", b.stem_channels));
    s.push_str(&format!("compression = {}\n", b.compression));
    s.push_str(&format!("bottleneck_factor = {}\n", b.bottleneck_factor));
    s.push_str("\n[ensemble]\n");
    s.push_str(&format!("heads_per_family = {}\n", cfg.heads_per_family));
    s.push_str(&format!("embedding_dim = {}\n", cfg.embedding_dim));
    s.push_str(&format!("num_classes = {}\n", cfg.num_classes));
    s.push_str(&format!("block4_attach = {}\n", join(&cfg.block4_attach)));
    s.push_str(&format!("block3_tap = {}\n", tap3_name(cfg.block3_tap)));
    s.push_str(&format!("block4_tap = {}\n", tap4_name(cfg.block4_tap)));
    s.push_str(&format!("head_init_std = {}\n", cfg.head_init_std));
    s
}

const BACKBONE_KEYS: [&str; 8] = [
    "input_channels",
    "input_height",
    "input_width",
    "growth_rate",
    "block_sizes",
    "stem_channels",
    "compression",
    "bottleneck_factor",
];
const ENSEMBLE_KEYS: [&str; 7] = [
    "heads_per_family",
    "embedding_dim",
    "num_classes",
    "block4_attach",
    "block3_tap",
    "block4_tap",
    "head_init_std",
];

/// Strict inverse of `model_config_text`: every model key must be present
/// (checkpoint headers are complete by construction, so a missing key means
/// corruption, not a default).
pub fn parse_model_config(text: &str) -> Result<EnsembleConfig> {
    let entries = parse_ini(text)?;
    let mut cfg = EnsembleConfig::mini(2); // placeholder; fully overwritten
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    for e in &entries {
        if !apply_model_entry(&mut cfg, e)? {
            return Err(Error::config(format!(
                "line {}: unknown section [{}] in model config",
                e.line, e.section
            )));
        }
        seen.insert((e.section.clone(), e.key.clone()));
    }
    for key in BACKBONE_KEYS {
        if !seen.contains(&("backbone".to_string(), key.to_string())) {
            return Err(Error::config(format!("model config is missing backbone.{key}")));
        }
    }
    for key in ENSEMBLE_KEYS {
        if !seen.contains(&("ensemble".to_string(), key.to_string())) {
            return Err(Error::config(format!("model config is missing ensemble.{key}")));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Full experiment config in canonical section order. Starts with a version
/// comment so resolved configs dropped into run directories identify the
/// binary that produced them.
pub fn experiment_config_text(cfg: &ExperimentConfig) -> String {
    let d = &cfg.dataset;
    let t = &cfg.train;
    let a = &t.augment;
    let mut s = format!("# densemble {}\n\n", env!("CARGO_PKG_VERSION"));
    s.push_str("[dataset]\n");
    s.push_str(&format!("train_ids = {}\n", d.train_ids));
    s.push_str(&format!("test_ids = {}\n", d.test_ids));
    s.push_str(&format!("views_per_id = {}\n", d.views_per_id));
    s.push_str(&format!("cams = {}\n", d.cams));
    s.push_str(&format!("height = {}\n", d.height));
    s.push_str(&format!("width = {}\n", d.width));
    s.push_str(&format!("seed = {}\n", d.seed));
    s.push('\n');
    s.push_str(&model_config_text(&cfg.model));
    s.push_str("\n[train]\n");
    s.push_str(&format!("batch_size = {}\n", t.batch_size));
    s.push_str(&format!("lr0 = {}\n", t.lr0));
    s.push_str(&format!("epochs = {}\n", t.epochs));
    s.push_str(&format!("decay_epoch = {}\n", t.decay_epoch));
    s.push_str(&format!("decay_factor = {}\n", t.decay_factor));
    s.push_str(&format!("momentum = {}\n", t.momentum));
    s.push_str(&format!("weight_decay = {}\n", t.weight_decay));
    s.push_str(&format!("seed = {}\n", t.seed));
    s.push_str(&format!("checkpoint_every = {}\n", t.checkpoint_every));
    s.push_str(&format!("flip = {}\n", a.flip));
    s.push_str(&format!("crop = {}\n", a.crop));
    s.push_str(&format!("crop_pad = {}\n", a.crop_pad));
    s.push_str(&format!("erase = {}\n", a.erase));
    s.push_str(&format!("erase_prob = {}\n", a.erase_prob));
    s.push_str(&format!("erase_area_lo = {}\n", a.erase_area.0));
    s.push_str(&format!("erase_area_hi = {}\n", a.erase_area.1));
    s.push_str(&format!("erase_aspect_lo = {}\n", a.erase_aspect.0));
    s.push_str(&format!("erase_aspect_hi = {}\n", a.erase_aspect.1));
    s.push_str("\n[eval]\n");
    s.push_str(&format!("metric = {}\n", cfg.eval.metric.name()));
    s.push_str(&format!("max_rank = {}\n", cfg.eval.max_rank));
    s
}

/// Applies `text` on top of `base` (typically a profile); only mentioned keys
/// change. Unknown sections/keys are errors.
pub fn parse_experiment_config(text: &str, base: ExperimentConfig) -> Result<ExperimentConfig> {
    let entries = parse_ini(text)?;
    let mut cfg = base;
    for e in &entries {
        if apply_model_entry(&mut cfg.model, e)? {
            continue;
        }
        match e.section.as_str() {
            "dataset" => {
                let d = &mut cfg.dataset;
                match e.key.as_str() {
                    "train_ids" => d.train_ids = parse_usize(e)?,
                    "test_ids" => d.test_ids = parse_usize(e)?,
                    "views_per_id" => d.views_per_id = parse_usize(e)?,
                    "cams" => d.cams = parse_usize(e)?,
                    "height" => d.height = parse_usize(e)?,
                    "width" => d.width = parse_usize(e)?,
                    "seed" => d.seed = parse_u64(e)?,
                    _ => return Err(unknown_key(e)),
                }
            }
            "train" => {
                let t = &mut cfg.train;
                match e.key.as_str() {
                    "batch_size" => t.batch_size = parse_usize(e)?,
                    "lr0" => t.lr0 = parse_f64(e)?,
                    "epochs" => t.epochs = parse_usize(e)?,
                    "decay_epoch" => t.decay_epoch = parse_usize(e)?,
                    "decay_factor" => t.decay_factor = parse_f64(e)?,
                    "momentum" => t.momentum = parse_f64(e)?,
                    "weight_decay" => t.weight_decay = parse_f64(e)?,
                    "seed" => t.seed = parse_u64(e)?,
                    "checkpoint_every" => t.checkpoint_every = parse_usize(e)?,
                    "flip" => t.augment.flip = parse_bool(e)?,
                    "crop" => t.augment.crop = parse_bool(e)?,
                    "crop_pad" => t.augment.crop_pad = parse_usize(e)?,
                    "erase" => t.augment.erase = parse_bool(e)?,
                    "erase_prob" => t.augment.erase_prob = parse_f64(e)?,
                    "erase_area_lo" => t.augment.erase_area.0 = parse_f64(e)?,
                    "erase_area_hi" => t.augment.erase_area.1 = parse_f64(e)?,
                    "erase_aspect_lo" => t.augment.erase_aspect.0 = parse_f64(e)?,
                    "erase_aspect_hi" => t.augment.erase_aspect.1 = parse_f64(e)?,
                    _ => return Err(unknown_key(e)),
                }
            }
            "eval" => match e.key.as_str() {
                "metric" => cfg.eval.metric = MetricChoice::parse(&e.value).map_err(|_| {
                    bad_value(e, "euclidean, hamming or both")
                })?,
                "max_rank" => cfg.eval.max_rank = parse_usize(e)?,
                _ => return Err(unknown_key(e)),
            },
            other => {
                return Err(Error::config(format!(
                    "line {}: unknown section [{other}]",
                    e.line
                )))
            }
        }
    }
    Ok(cfg)
}

/// Reads and applies a config file over `base`; errors carry the file name.
pub fn load_experiment_config(
    path: impl AsRef<Path>,
    base: ExperimentConfig,
) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_experiment_config(&text, base)
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

/// Drops the fully resolved config (with version comment and seeds) into a
/// run directory so every artifact records how it was produced.
pub fn write_resolved_config(dir: impl AsRef<Path>, cfg: &ExperimentConfig) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("config.ini");
    fs::write(&path, experiment_config_text(cfg)).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_config_round_trips() {
        let mut cfg = EnsembleConfig::mini(17);
        cfg.head_init_std = 0.25;
        cfg.block4_attach = vec![1, 2, 3, 4];
        let back = parse_model_config(&model_config_text(&cfg)).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn model_config_round_trips_paper_scale() {
        let cfg = EnsembleConfig::paper(8, 512, 751);
        let back = parse_model_config(&model_config_text(&cfg)).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn missing_model_key_is_rejected() {
        let cfg = EnsembleConfig::mini(5);
        let text = model_config_text(&cfg);
        let without = text
            .lines()
            .filter(|l| !l.starts_with("growth_rate"))
            .collect::<Vec<_>>()
            .join("\n");
        let err = parse_model_config(&without).unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains("growth_rate"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_and_sections_are_named() {
        let base = ExperimentConfig::mini();
        let err = parse_experiment_config("[train]\nlearning_rate = 0.1\n", base.clone())
            .unwrap_err();
        match err {
            Error::Config(msg) => {
                assert!(msg.contains("learning_rate") && msg.contains("line 2"), "{msg}")
            }
            other => panic!("{other:?}"),
        }
        let err = parse_experiment_config("[optimizer]\nlr = 0.1\n", base.clone()).unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains("[optimizer]"), "{msg}"),
            other => panic!("{other:?}"),
        }
        let err =
            parse_experiment_config("[train]\nlr0 = 0.1\nlr0 = 0.2\n", base).unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains("duplicate"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn values_must_parse() {
        let base = ExperimentConfig::mini();
        for text in [
            "[train]\nepochs = soon\n",
            "[train]\nflip = yes\n",
            "[backbone]\nblock_sizes = 2,2\n",
            "[ensemble]\nblock3_tap = sideways\n",
            "[eval]\nmetric = cosine\n",
        ] {
            let err = parse_experiment_config(text, base.clone()).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{text}");
        }
    }

    #[test]
    fn experiment_config_round_trips_through_text() {
        let mut cfg = ExperimentConfig::mini();
        cfg.dataset.train_ids = 12;
        cfg.train.lr0 = 0.025;
        cfg.train.augment.erase_prob = 0.75;
        cfg.eval.metric = MetricChoice::Hamming;
        cfg.model.num_classes = 12;
        let text = experiment_config_text(&cfg);
        // Apply over a deliberately different base: every key is present in
        // the text, so the base must not leak through.
        let back = parse_experiment_config(&text, ExperimentConfig::paper()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_apply_on_top_of_profile() {
        let cfg =
            parse_experiment_config("[train]\nepochs = 3\n", ExperimentConfig::mini()).unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.lr0, TrainConfig::mini().lr0);
        assert_eq!(cfg.dataset.train_ids, 20);
    }

    #[test]
    fn profiles_validate() {
        ExperimentConfig::mini().validate().unwrap();
        ExperimentConfig::paper().validate().unwrap();
        assert!(ExperimentConfig::profile("nano").is_err());
    }

    #[test]
    fn resolved_model_fills_or_checks_classes() {
        let cfg = ExperimentConfig::mini();
        let model = cfg.resolved_model(20).unwrap();
        assert_eq!(model.num_classes, 20);
        let mut fixed = ExperimentConfig::mini();
        fixed.model.num_classes = 10;
        assert!(fixed.resolved_model(20).is_err());
        assert_eq!(fixed.resolved_model(10).unwrap().num_classes, 10);
    }

    #[test]
    fn resolved_config_lands_in_run_dir_with_version() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::mini();
        write_resolved_config(dir.path(), &cfg).unwrap();
        let text = fs::read_to_string(dir.path().join("config.ini")).unwrap();
        assert!(text.starts_with(&format!("# densemble {}", env!("CARGO_PKG_VERSION"))));
        let back = parse_experiment_config(&text, ExperimentConfig::paper()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn ini_parser_handles_comments_and_whitespace() {
        let text = "\n; leading comment\n[train]\n  epochs = 5  \n# trailing\n";
        let cfg = parse_experiment_config(text, ExperimentConfig::mini()).unwrap();
        assert_eq!(cfg.train.epochs, 5);
        assert!(parse_experiment_config("[train\nepochs = 5\n", ExperimentConfig::mini()).is_err());
        assert!(parse_experiment_config("epochs = 5\n", ExperimentConfig::mini()).is_err());
        assert!(parse_experiment_config("[train]\nepochs\n", ExperimentConfig::mini()).is_err());
    }
}
