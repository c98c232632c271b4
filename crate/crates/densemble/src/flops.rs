//! Static multiply-accumulate analyzer.
//!
//! Cost unit is MACs (one multiply-add), reported in the tables as "GFLOPs"
//! because that is the label the compared-against efficiency figures use for
//! the same quantity; elementwise ops (BN, ReLU, pooling) count zero. The
//! tables list MAC-bearing layers only (convolutions and linears). Counts are
//! per test image (N = 1) and exclude classifiers by default, since test-time
//! extraction stops at the embeddings.

use crate::backbone::DenseNetConfig;
use crate::ensemble::EnsembleConfig;
use crate::error::{Error, Result};

/// Shape-and-cost description of one countable layer.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Conv { out_channels: usize, kernel: usize, stride: usize, pad: usize },
    Linear { out_features: usize },
    BatchNorm,
    Relu,
    AvgPool { kernel: usize, stride: usize },
}

/// Output shape and MAC count of a layer applied to `input`
/// ([C, H, W] for spatial layers, [D] for linear).
pub fn count_layer(spec: &LayerSpec, input: &[usize]) -> Result<(Vec<usize>, u64)> {
    let spatial = |input: &[usize]| -> Result<(usize, usize, usize)> {
        match *input {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::config(format!(
                "spatial layer wants [C,H,W] input, got {input:?}"
            ))),
        }
    };
    match *spec {
        LayerSpec::Conv { out_channels, kernel, stride, pad } => {
            let (c, h, w) = spatial(input)?;
            if h + 2 * pad < kernel || w + 2 * pad < kernel || stride == 0 {
                return Err(Error::config(format!(
                    "conv k{kernel} s{stride} p{pad} does not fit input {input:?}"
                )));
            }
            let oh = (h + 2 * pad - kernel) / stride + 1;
            let ow = (w + 2 * pad - kernel) / stride + 1;
            let macs = (out_channels * c * kernel * kernel * oh * ow) as u64;
            Ok((vec![out_channels, oh, ow], macs))
        }
        LayerSpec::Linear { out_features } => match *input {
            [d] => Ok((vec![out_features], (out_features * d) as u64)),
            _ => Err(Error::config(format!(
                "linear wants [D] input, got {input:?}"
            ))),
        },
        LayerSpec::BatchNorm | LayerSpec::Relu => Ok((input.to_vec(), 0)),
        LayerSpec::AvgPool { kernel, stride } => {
            let (c, h, w) = spatial(input)?;
            if stride == 0 || h < kernel || w < kernel {
                return Err(Error::config(format!(
                    "pool k{kernel} s{stride} does not fit input {input:?}"
                )));
            }
            Ok((vec![c, (h - kernel) / stride + 1, (w - kernel) / stride + 1], 0))
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerCost {
    pub name: String,
    pub output_shape: Vec<usize>,
    pub macs: u64,
    /// Backbone layers are shared across all heads; head layers are not.
    pub shared: bool,
}

#[derive(Clone, Debug, Default)]
pub struct FlopReport {
    pub layers: Vec<LayerCost>,
}

impl FlopReport {
    pub fn shared_macs(&self) -> u64 {
        self.layers.iter().filter(|l| l.shared).map(|l| l.macs).sum()
    }

    pub fn head_macs(&self) -> u64 {
        self.layers.iter().filter(|l| !l.shared).map(|l| l.macs).sum()
    }

    pub fn total_macs(&self) -> u64 {
        self.shared_macs() + self.head_macs()
    }

    pub fn shared_fraction(&self) -> f64 {
        let total = self.total_macs();
        if total == 0 {
            return 0.0;
        }
        self.shared_macs() as f64 / total as f64
    }

    /// Human table: one row per layer plus totals.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<28} {:>16} {:>14} {:>7}\n", "layer", "output", "MACs", "shared"));
        for l in &self.layers {
            let shape = l
                .output_shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("x");
            out.push_str(&format!(
                "{:<28} {:>16} {:>14} {:>7}\n",
                l.name,
                shape,
                l.macs,
                if l.shared { "yes" } else { "no" }
            ));
        }
        out.push_str(&format!(
            "total {:.6} G (shared {:.6} G, heads {:.6} G, shared fraction {:.4})\n",
            giga(self.total_macs()),
            giga(self.shared_macs()),
            giga(self.head_macs()),
            self.shared_fraction()
        ));
        out
    }

    /// Machine-readable rows: layer,output_shape,shared,macs.
    pub fn render_csv(&self) -> String {
        let mut out = String::from("layer,output_shape,shared,macs\n");
        for l in &self.layers {
            let shape = l
                .output_shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("x");
            out.push_str(&format!(
                "{},{},{},{}\n",
                l.name,
                shape,
                if l.shared { "true" } else { "false" },
                l.macs
            ));
        }
        out
    }
}

pub fn giga(macs: u64) -> f64 {
    macs as f64 / 1e9
}

/// All MAC-bearing backbone layers in forward order, pushed into `report`.
/// Returns the per-head flattened input dims so callers can cost the heads.
fn walk_backbone(cfg: &DenseNetConfig, report: &mut FlopReport) -> Result<()> {
    cfg.plan()?; // validates
    let (c, h, w) = cfg.input;
    let mut shape = vec![c, h, w];
    let mut push = |name: String, spec: LayerSpec, shape: &mut Vec<usize>| -> Result<()> {
        let (out, macs) = count_layer(&spec, shape)?;
        if macs > 0 {
            report.layers.push(LayerCost {
                name,
                output_shape: out.clone(),
                macs,
                shared: true,
            });
        }
        *shape = out;
        Ok(())
    };
    push(
        "stem.conv".into(),
        LayerSpec::Conv { out_channels: cfg.stem_channels, kernel: 7, stride: 2, pad: 3 },
        &mut shape,
    )?;
    let (pooled, _) = count_layer(&LayerSpec::AvgPool { kernel: 2, stride: 2 }, &shape)?;
    shape = pooled;

    let k = cfg.growth_rate;
    for (bi, &layers) in cfg.block_sizes.iter().enumerate() {
        for li in 0..layers {
            let mut branch = shape.clone();
            push(
                format!("block{}.layer{}.conv1", bi + 1, li + 1),
                LayerSpec::Conv {
                    out_channels: cfg.bottleneck_factor * k,
                    kernel: 1,
                    stride: 1,
                    pad: 0,
                },
                &mut branch,
            )?;
            push(
                format!("block{}.layer{}.conv2", bi + 1, li + 1),
                LayerSpec::Conv { out_channels: k, kernel: 3, stride: 1, pad: 1 },
                &mut branch,
            )?;
            shape[0] += k; // concatenation widens the state by the growth rate
        }
        if bi < 3 {
            let compressed = (shape[0] as f64 * cfg.compression).floor() as usize;
            push(
                format!("transition{}.conv", bi + 1),
                LayerSpec::Conv { out_channels: compressed, kernel: 1, stride: 1, pad: 0 },
                &mut shape,
            )?;
            let (pooled, _) = count_layer(&LayerSpec::AvgPool { kernel: 2, stride: 2 }, &shape)?;
            shape = pooled;
        }
    }
    Ok(())
}

/// Full report for an ensemble config. `head_subset` uses 1-based head
/// indices; empty means backbone only (shared cost is identical either way).
pub fn count_model(
    cfg: &EnsembleConfig,
    head_subset: &[usize],
    include_classifier: bool,
) -> Result<FlopReport> {
    cfg.validate()?;
    let mut report = FlopReport::default();
    walk_backbone(&cfg.backbone, &mut report)?;
    let dims = cfg.head_input_dims()?;
    for &head in head_subset {
        if head == 0 || head > cfg.num_heads() {
            return Err(Error::config(format!(
                "head index {head} out of range 1..={}",
                cfg.num_heads()
            )));
        }
        let flat = vec![dims[head - 1]];
        let (emb_shape, emb_macs) =
            count_layer(&LayerSpec::Linear { out_features: cfg.embedding_dim }, &flat)?;
        report.layers.push(LayerCost {
            name: format!("head{head}.embed"),
            output_shape: emb_shape.clone(),
            macs: emb_macs,
            shared: false,
        });
        if include_classifier {
            let (cls_shape, cls_macs) =
                count_layer(&LayerSpec::Linear { out_features: cfg.num_classes }, &emb_shape)?;
            report.layers.push(LayerCost {
                name: format!("head{head}.classify"),
                output_shape: cls_shape,
                macs: cls_macs,
                shared: false,
            });
        }
    }
    Ok(report)
}

pub fn all_heads(cfg: &EnsembleConfig) -> Vec<usize> {
    (1..=cfg.num_heads()).collect()
}

/// Single-head comparator: the backbone's final state is globally average
/// pooled (zero MACs) and embedded by one `final_channels -> embed_dim`
/// linear layer. This is the conventional one-learner cost that the shared
/// ensemble is measured against.
pub fn count_baseline(backbone: &DenseNetConfig, embed_dim: usize) -> Result<FlopReport> {
    let plan = backbone.plan()?;
    let mut report = FlopReport::default();
    walk_backbone(backbone, &mut report)?;
    let final_channels = plan.block_out[3].0;
    let (shape, macs) =
        count_layer(&LayerSpec::Linear { out_features: embed_dim }, &[final_channels])?;
    report.layers.push(LayerCost {
        name: "gap_head.embed".into(),
        output_shape: shape,
        macs,
        shared: false,
    });
    Ok(report)
}
