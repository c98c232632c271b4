//! The 2L-head ensemble: L sub-networks on channel-wise splits of the
//! block-3 tap, L more on block-4 per-layer states, all sharing one backbone.
//!
//! Each head flattens its tap slice (no pooling, so spatial layout survives),
//! applies Linear -> tanh to get an H-dim embedding, then a Linear classifier.
//! The training loss is the unweighted sum over heads of per-head softmax
//! cross-entropy; `backward` routes every head's gradient through its private
//! parameters and accumulates all of them into the shared backbone.
//!
//! Tap styles are configurable: the block-3 family can consume the
//! pre-transition block-3 output or the compressed map entering block 4, and
//! the block-4 family can consume each attach layer's fresh k channels or the
//! full concatenated state. Defaults are post-transition + fresh-channels,
//! which keeps head cost a small fraction of the shared cost.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::backbone::{Backbone, BackboneCache, BackboneTaps, DenseNetConfig, TapGrads};
use crate::error::{Error, Result};
use crate::ops::{
    add_into_channels, argmax_rows, channel_slice, softmax_cross_entropy, split_channels,
    split_widths, tanh_act, tanh_backward, Linear, Parameter, Phase, StateSlot,
};
use crate::rng::RngStream;
use crate::tensor::{Precision, Tensor};

/// Where the block-3 head family taps the backbone.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Block3Tap {
    /// Block-3 output before its transition (wider, higher resolution).
    PreTransition,
    /// Compressed map entering block 4.
    PostTransition,
}

/// What each block-4 head consumes at its attach layer.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Block4Tap {
    /// Only the k channels the attach layer appended.
    LayerFeatures,
    /// The whole concatenated state at that layer.
    FullState,
}

pub const DEFAULT_HEAD_INIT_STD: f64 = 0.001;

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleConfig {
    pub backbone: DenseNetConfig,
    /// L; the model has 2L heads.
    pub heads_per_family: usize,
    /// Embedding width H.
    pub embedding_dim: usize,
    pub num_classes: usize,
    /// 1-based block-4 dense-layer indices, strictly increasing, last = n4.
    pub block4_attach: Vec<usize>,
    pub block3_tap: Block3Tap,
    pub block4_tap: Block4Tap,
    /// Gaussian std for head weight init (biases zero).
    pub head_init_std: f64,
}

impl EnsembleConfig {
    pub fn new(backbone: DenseNetConfig, heads_per_family: usize, embedding_dim: usize, num_classes: usize) -> Self {
        let n4 = backbone.block_sizes[3];
        EnsembleConfig {
            backbone,
            heads_per_family,
            embedding_dim,
            num_classes,
            block4_attach: Self::default_attach(heads_per_family, n4),
            block3_tap: Block3Tap::PostTransition,
            block4_tap: Block4Tap::LayerFeatures,
            head_init_std: DEFAULT_HEAD_INIT_STD,
        }
    }

    /// Desk-scale default: mini backbone, 2L=8 heads, H=64.
    ///
    /// Two knobs deviate from the full-scale defaults, both because the mini
    /// backbone is trained from scratch instead of starting pretrained:
    /// near-zero head init leaves the loss on the uniform plateau for the
    /// whole desk-scale schedule, so heads use a moderate std; and the
    /// fresh-features-only block-4 tap gives those heads just 16 inputs each,
    /// too thin to train into useful members here, so they tap the full
    /// running state instead.
    pub fn mini(num_classes: usize) -> Self {
        let mut cfg = Self::new(DenseNetConfig::mini(), 4, 64, num_classes);
        cfg.head_init_std = 0.3;
        cfg.block4_tap = Block4Tap::FullState;
        cfg
    }

    /// Full-scale config at 384x128. `heads_per_family` of 4/8/16 pair with
    /// embedding widths 1024/512/256 so the concatenation is always 8192.
    pub fn paper(heads_per_family: usize, embedding_dim: usize, num_classes: usize) -> Self {
        Self::new(
            DenseNetConfig::densenet121((384, 128)),
            heads_per_family,
            embedding_dim,
            num_classes,
        )
    }

    /// Evenly spaced attach points ending at the last dense layer:
    /// ceil(i*n4/L) for i = 1..L.
    pub fn default_attach(l: usize, n4: usize) -> Vec<usize> {
        (1..=l).map(|i| (i * n4).div_ceil(l)).collect()
    }

    pub fn num_heads(&self) -> usize {
        2 * self.heads_per_family
    }

    /// Dimension of the concatenated all-heads embedding.
    pub fn concatenated_dim(&self) -> usize {
        self.num_heads() * self.embedding_dim
    }

    pub fn validate(&self) -> Result<()> {
        let plan = self.backbone.plan()?;
        let l = self.heads_per_family;
        if l == 0 {
            return Err(Error::config("heads_per_family must be >= 1"));
        }
        if self.embedding_dim == 0 {
            return Err(Error::config("embedding_dim must be >= 1"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be >= 2"));
        }
        if !(self.head_init_std > 0.0) {
            return Err(Error::config("head_init_std must be positive"));
        }
        let c3 = match self.block3_tap {
            Block3Tap::PreTransition => plan.block_out[2].0,
            Block3Tap::PostTransition => plan.transition_out[2].0,
        };
        if l > c3 {
            return Err(Error::config(format!(
                "cannot split {c3} tap channels into {l} heads"
            )));
        }
        let n4 = self.backbone.block_sizes[3];
        if self.block4_attach.len() != l {
            return Err(Error::config(format!(
                "block4_attach has {} entries, expected L={l}",
                self.block4_attach.len()
            )));
        }
        for pair in self.block4_attach.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::config(format!(
                    "block4_attach must be strictly increasing, got {:?}",
                    self.block4_attach
                )));
            }
        }
        match (self.block4_attach.first(), self.block4_attach.last()) {
            (Some(&first), Some(&last)) if first >= 1 && last == n4 => {}
            _ => {
                return Err(Error::config(format!(
                    "block4_attach must lie in 1..={n4} and end at {n4}, got {:?}",
                    self.block4_attach
                )));
            }
        }
        Ok(())
    }

    /// (C, H, W) of the slice each head flattens, heads in index order
    /// (block-3 family first, then block-4 family).
    pub fn head_tap_shapes(&self) -> Result<Vec<(usize, usize, usize)>> {
        self.validate()?;
        let plan = self.backbone.plan()?;
        let l = self.heads_per_family;
        let k = self.backbone.growth_rate;
        let (c3, h3, w3) = match self.block3_tap {
            Block3Tap::PreTransition => plan.block_out[2],
            Block3Tap::PostTransition => plan.transition_out[2],
        };
        let mut shapes: Vec<(usize, usize, usize)> = split_widths(c3, l)
            .into_iter()
            .map(|c| (c, h3, w3))
            .collect();
        let (c4_in, h4, w4) = plan.block_in[3];
        for &a in &self.block4_attach {
            let c = match self.block4_tap {
                Block4Tap::LayerFeatures => k,
                Block4Tap::FullState => c4_in + a * k,
            };
            shapes.push((c, h4, w4));
        }
        Ok(shapes)
    }

    /// Flattened input width per head.
    pub fn head_input_dims(&self) -> Result<Vec<usize>> {
        Ok(self
            .head_tap_shapes()?
            .into_iter()
            .map(|(c, h, w)| c * h * w)
            .collect())
    }
}

/// One head: Linear(flatten -> H) + tanh embedding, Linear(H -> C) classifier.
#[derive(Clone, Debug)]
pub struct SubNetwork {
    pub embedding: Linear,
    pub classifier: Linear,
}

impl SubNetwork {
    pub fn new(flat_dim: usize, embedding_dim: usize, num_classes: usize, std: f64, rng: &mut RngStream) -> Self {
        SubNetwork {
            embedding: Linear::new(flat_dim, embedding_dim, std, rng),
            classifier: Linear::new(embedding_dim, num_classes, std, rng),
        }
    }

    pub fn forward(&self, flat: &Tensor) -> Result<BaseLearnerOutput> {
        let emb = tanh_act(&self.embedding.forward(flat)?);
        let logits = self.classifier.forward(&emb)?;
        Ok(BaseLearnerOutput {
            embedding: emb,
            logits,
        })
    }

    /// Backpropagates `weight * grad_logits` and returns the gradient with
    /// respect to the flattened tap input.
    pub fn backward(
        &mut self,
        flat: &Tensor,
        output: &BaseLearnerOutput,
        grad_logits: &Tensor,
        weight: f64,
    ) -> Result<Tensor> {
        let mut g_logits = grad_logits.clone();
        for v in g_logits.data_mut() {
            *v *= weight;
        }
        let g_emb = self.classifier.backward(&output.embedding, &g_logits)?;
        let g_pre = tanh_backward(&output.embedding, &g_emb);
        self.embedding.backward(flat, &g_pre)
    }

    pub fn for_each_param(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.embedding.weight);
        f(&mut self.embedding.bias);
        f(&mut self.classifier.weight);
        f(&mut self.classifier.bias);
    }

    pub fn for_each_slot(&mut self, f: &mut dyn FnMut(StateSlot)) {
        f(StateSlot::Value(&mut self.embedding.weight.value));
        f(StateSlot::Value(&mut self.embedding.bias.value));
        f(StateSlot::Value(&mut self.classifier.weight.value));
        f(StateSlot::Value(&mut self.classifier.bias.value));
    }
}

/// Per-head forward result.
#[derive(Clone, Debug)]
pub struct BaseLearnerOutput {
    /// Post-tanh embedding, shape [N, H]; every value in (-1, 1).
    pub embedding: Tensor,
    /// Unbounded classifier logits, shape [N, C].
    pub logits: Tensor,
}

/// Joint loss over all heads.
#[derive(Clone, Debug)]
pub struct EnsembleLoss {
    /// Sum over heads of the per-head batch-mean cross-entropy.
    pub total: f64,
    /// Batch-mean cross-entropy per head.
    pub per_head: Vec<f64>,
    /// Per-sample loss summed over heads.
    pub per_sample_total: Vec<f64>,
    /// d(per-head mean loss)/d(logits), one tensor per head.
    pub logit_grads: Vec<Tensor>,
}

pub struct EnsembleCache {
    backbone: BackboneCache,
    /// Flattened [N, D_j] input each head saw.
    head_inputs: Vec<Tensor>,
}

#[derive(Clone, Debug)]
pub struct EnsembleModel {
    pub config: EnsembleConfig,
    pub backbone: Backbone,
    /// Heads in index order: block-3 family 0..L, block-4 family L..2L.
    pub heads: Vec<SubNetwork>,
}

impl EnsembleModel {
    /// Builds and initializes the whole model from one seed. Draw order is
    /// fixed (backbone in registration order, then heads 0..2L), so a seed
    /// fully determines the initial parameters.
    pub fn new(config: EnsembleConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = RngStream::new_seeded(seed);
        let backbone = Backbone::new(config.backbone.clone(), &mut rng)?;
        let dims = config.head_input_dims()?;
        let heads = dims
            .iter()
            .map(|&d| {
                SubNetwork::new(
                    d,
                    config.embedding_dim,
                    config.num_classes,
                    config.head_init_std,
                    &mut rng,
                )
            })
            .collect();
        Ok(EnsembleModel {
            config,
            backbone,
            heads,
        })
    }

    /// Extracts and flattens the per-head tap slices from backbone taps.
    pub fn head_inputs(config: &EnsembleConfig, taps: &BackboneTaps) -> Result<Vec<Tensor>> {
        let l = config.heads_per_family;
        let k = config.backbone.growth_rate;
        let mut inputs = Vec::with_capacity(2 * l);
        let b3_src = match config.block3_tap {
            Block3Tap::PreTransition => &taps.block3_out,
            Block3Tap::PostTransition => &taps.block4_input,
        };
        for part in split_channels(b3_src, l)? {
            let (n, c, h, w) = part.dims4()?;
            inputs.push(part.reshape(vec![n, c * h * w])?);
        }
        for &a in &config.block4_attach {
            let state = taps.block4_states.get(a - 1).ok_or_else(|| {
                Error::config(format!(
                    "block4_attach index {a} exceeds recorded states ({})",
                    taps.block4_states.len()
                ))
            })?;
            let (n, c, h, w) = state.dims4()?;
            let slice = match config.block4_tap {
                Block4Tap::LayerFeatures => channel_slice(state, c - k, k)?,
                Block4Tap::FullState => state.clone(),
            };
            let sc = slice.shape()[1];
            inputs.push(slice.reshape(vec![n, sc * h * w])?);
        }
        Ok(inputs)
    }

    pub fn forward(&mut self, x: &Tensor, phase: Phase) -> Result<(Vec<BaseLearnerOutput>, Option<EnsembleCache>)> {
        let (taps, backbone_cache) = self.backbone.forward(x, phase)?;
        let head_inputs = Self::head_inputs(&self.config, &taps)?;
        let outputs = self
            .heads
            .iter()
            .zip(&head_inputs)
            .map(|(head, input)| head.forward(input))
            .collect::<Result<Vec<_>>>()?;
        let cache = backbone_cache.map(|backbone| EnsembleCache {
            backbone,
            head_inputs,
        });
        Ok((outputs, cache))
    }

    /// Unweighted sum over heads of per-head batch-mean cross-entropy.
    pub fn loss(outputs: &[BaseLearnerOutput], labels: &[usize]) -> Result<EnsembleLoss> {
        if outputs.is_empty() {
            return Err(Error::config("loss of an ensemble with zero heads"));
        }
        let n = labels.len();
        let mut per_head = Vec::with_capacity(outputs.len());
        let mut logit_grads = Vec::with_capacity(outputs.len());
        let mut per_sample_total = vec![0.0; n];
        for out in outputs {
            let sm = softmax_cross_entropy(&out.logits, labels)?;
            per_head.push(sm.mean);
            for (acc, l) in per_sample_total.iter_mut().zip(&sm.per_sample) {
                *acc += l;
            }
            logit_grads.push(sm.grad);
        }
        let total = per_head.iter().sum();
        Ok(EnsembleLoss {
            total,
            per_head,
            per_sample_total,
            logit_grads,
        })
    }

    /// Backward through every head and the shared backbone. `head_weights`
    /// scales each head's contribution (all 1.0 when `None`); a zero weight
    /// cuts that head out of both its own and the shared gradients. Returns
    /// the gradient with respect to the input batch.
    pub fn backward(
        &mut self,
        cache: &EnsembleCache,
        outputs: &[BaseLearnerOutput],
        logit_grads: &[Tensor],
        head_weights: Option<&[f64]>,
    ) -> Result<Tensor> {
        let num_heads = self.config.num_heads();
        if outputs.len() != num_heads || logit_grads.len() != num_heads {
            return Err(Error::config(format!(
                "expected {num_heads} head outputs/grads, got {}/{}",
                outputs.len(),
                logit_grads.len()
            )));
        }
        if let Some(w) = head_weights {
            if w.len() != num_heads {
                return Err(Error::config(format!(
                    "expected {num_heads} head weights, got {}",
                    w.len()
                )));
            }
        }
        let shapes = self.config.head_tap_shapes()?;
        let plan = self.config.backbone.plan()?;
        let l = self.config.heads_per_family;
        let k = self.config.backbone.growth_rate;
        let n4 = self.config.backbone.block_sizes[3];
        let n = cache.head_inputs[0].shape()[0];

        let mut tap_grads = TapGrads {
            block4_states: vec![None; n4],
            ..TapGrads::default()
        };
        let (c3, h3, w3) = match self.config.block3_tap {
            Block3Tap::PreTransition => plan.block_out[2],
            Block3Tap::PostTransition => plan.transition_out[2],
        };
        let b3_widths = split_widths(c3, l);
        let (c4_in, h4, w4) = plan.block_in[3];

        let mut b3_offset = 0;
        for (j, head) in self.heads.iter_mut().enumerate() {
            let weight = head_weights.map_or(1.0, |w| w[j]);
            let g_flat = head.backward(&cache.head_inputs[j], &outputs[j], &logit_grads[j], weight)?;
            let (c, h, w) = shapes[j];
            let g4 = g_flat.reshape(vec![n, c, h, w])?;
            if j < l {
                let dst = match self.config.block3_tap {
                    Block3Tap::PreTransition => &mut tap_grads.block3_out,
                    Block3Tap::PostTransition => &mut tap_grads.block4_input,
                };
                accumulate(dst, &[n, c3, h3, w3], &g4, b3_offset)?;
                b3_offset += b3_widths[j];
            } else {
                let a = self.config.block4_attach[j - l];
                let state_c = c4_in + a * k;
                let offset = match self.config.block4_tap {
                    Block4Tap::LayerFeatures => state_c - k,
                    Block4Tap::FullState => 0,
                };
                accumulate(
                    &mut tap_grads.block4_states[a - 1],
                    &[n, state_c, h4, w4],
                    &g4,
                    offset,
                )?;
            }
        }
        self.backbone.backward(&cache.backbone, tap_grads)
    }

    pub fn zero_grad(&mut self) {
        self.for_each_param(&mut |p| p.zero_grad());
    }

    pub fn for_each_param(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.backbone.for_each_param(f);
        for head in &mut self.heads {
            head.for_each_param(f);
        }
    }

    pub fn for_each_slot(&mut self, f: &mut dyn FnMut(StateSlot)) {
        self.backbone.for_each_slot(f);
        for head in &mut self.heads {
            head.for_each_slot(f);
        }
    }

    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.for_each_param(&mut |p| n += p.value.numel());
        n
    }

    /// Checkpoint: u32 length-prefixed UTF-8 config echo, then every persisted
    /// tensor in registration order (f64, batchnorm running stats included).
    pub fn save_checkpoint(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let header = crate::config::model_config_text(&self.config);
        let mut io_err = None;
        let res = (|| -> std::io::Result<()> {
            w.write_all(&(header.len() as u32).to_le_bytes())?;
            w.write_all(header.as_bytes())?;
            Ok(())
        })();
        if let Err(e) = res {
            return Err(Error::io(path, e));
        }
        self.for_each_slot(&mut |slot| {
            if io_err.is_some() {
                return;
            }
            let res = match slot {
                StateSlot::Value(t) => t.write_to(&mut w, Precision::F64),
                StateSlot::Stats(v) => {
                    let t = Tensor::new(vec![v.len()], v.clone()).expect("stat vec is its own shape");
                    t.write_to(&mut w, Precision::F64)
                }
            };
            if let Err(e) = res {
                io_err = Some(e);
            }
        });
        if let Some(e) = io_err {
            return Err(Error::io(path, e));
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<EnsembleModel> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut len_bytes = [0u8; 4];
        r.read_exact(&mut len_bytes)
            .map_err(|e| Error::data(format!("{}: truncated checkpoint header: {e}", path.display())))?;
        let len = u32::from_le_bytes(len_bytes) as usize;
        if len > 1 << 20 {
            return Err(Error::data(format!(
                "{}: implausible checkpoint header length {len}",
                path.display()
            )));
        }
        let mut header = vec![0u8; len];
        r.read_exact(&mut header)
            .map_err(|e| Error::data(format!("{}: truncated checkpoint header: {e}", path.display())))?;
        let header = String::from_utf8(header)
            .map_err(|_| Error::data(format!("{}: checkpoint header is not UTF-8", path.display())))?;
        let config = crate::config::parse_model_config(&header)
            .map_err(|e| Error::data(format!("{}: bad checkpoint header: {e}", path.display())))?;
        let mut model = EnsembleModel::new(config, 0)?;

        let mut slot_idx = 0usize;
        let mut failure: Option<Error> = None;
        model.for_each_slot(&mut |slot| {
            if failure.is_some() {
                return;
            }
            let tensor = match Tensor::read_from(&mut r) {
                Ok(t) => t,
                Err(e) => {
                    failure = Some(Error::data(format!(
                        "{}: tensor {slot_idx}: {e}",
                        path.display()
                    )));
                    return;
                }
            };
            match slot {
                StateSlot::Value(dst) => {
                    if tensor.shape() != dst.shape() {
                        failure = Some(Error::data(format!(
                            "{}: tensor {slot_idx} shape {:?} does not match model shape {:?}",
                            path.display(),
                            tensor.shape(),
                            dst.shape()
                        )));
                        return;
                    }
                    *dst = tensor;
                }
                StateSlot::Stats(dst) => {
                    if tensor.shape() != [dst.len()] {
                        failure = Some(Error::data(format!(
                            "{}: tensor {slot_idx} shape {:?} does not match stat length {}",
                            path.display(),
                            tensor.shape(),
                            dst.len()
                        )));
                        return;
                    }
                    *dst = tensor.into_data();
                }
            }
            slot_idx += 1;
        });
        if let Some(e) = failure {
            return Err(e);
        }
        let mut probe = [0u8; 1];
        match r.read(&mut probe) {
            Ok(0) => Ok(model),
            Ok(_) => Err(Error::data(format!(
                "{}: trailing bytes after final tensor",
                path.display()
            ))),
            Err(e) => Err(Error::io(path, e)),
        }
    }
}

fn accumulate(dst: &mut Option<Tensor>, full_shape: &[usize], src: &Tensor, channel_offset: usize) -> Result<()> {
    if dst.is_none() {
        *dst = Some(Tensor::zeros(full_shape));
    }
    add_into_channels(dst.as_mut().expect("just filled"), src, channel_offset)
}

/// Fraction of rows whose argmax equals the label.
pub fn top1_accuracy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let preds = argmax_rows(logits)?;
    if preds.len() != labels.len() {
        return Err(Error::config(format!(
            "{} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mini_model(seed: u64) -> EnsembleModel {
        EnsembleModel::new(EnsembleConfig::mini(5), seed).unwrap()
    }

    fn random_batch(n: usize, seed: u64) -> Tensor {
        let mut rng = RngStream::new_seeded(seed);
        let mut x = Tensor::zeros(&[n, 3, 64, 32]);
        for v in x.data_mut() {
            *v = rng.uniform();
        }
        x
    }

    #[test]
    fn default_attach_is_evenly_spaced_and_ends_at_n4() {
        assert_eq!(EnsembleConfig::default_attach(4, 4), vec![1, 2, 3, 4]);
        assert_eq!(
            EnsembleConfig::default_attach(8, 16),
            vec![2, 4, 6, 8, 10, 12, 14, 16]
        );
        assert_eq!(EnsembleConfig::default_attach(3, 16), vec![6, 11, 16]);
    }

    #[test]
    fn paper_pairings_all_concatenate_to_8192() {
        for (l, h) in [(4usize, 1024usize), (8, 512), (16, 256)] {
            let cfg = EnsembleConfig::paper(l, h, 751);
            cfg.validate().unwrap();
            assert_eq!(cfg.concatenated_dim(), 8192);
        }
    }

    #[test]
    fn head_dims_mini_tap_variants() {
        let cfg = EnsembleConfig::mini(5);
        // Post-transition tap: 24 channels at 2x1 split 4 ways -> 6*2*1 = 12;
        // block-4 full states: 32,40,48,56 channels at 2x1.
        assert_eq!(
            cfg.head_input_dims().unwrap(),
            vec![12, 12, 12, 12, 64, 80, 96, 112]
        );
        let mut pre = cfg.clone();
        pre.block3_tap = Block3Tap::PreTransition;
        // Pre-transition: 48 channels at 4x2 split 4 ways -> 12*4*2 = 96.
        assert_eq!(
            pre.head_input_dims().unwrap(),
            vec![96, 96, 96, 96, 64, 80, 96, 112]
        );
        let mut fresh = cfg.clone();
        fresh.block4_tap = Block4Tap::LayerFeatures;
        // Fresh block-4 features only: 8*2*1 = 16 per attached layer.
        assert_eq!(
            fresh.head_input_dims().unwrap(),
            vec![12, 12, 12, 12, 16, 16, 16, 16]
        );
    }

    #[test]
    fn bad_attach_vectors_are_rejected() {
        let mut cfg = EnsembleConfig::mini(5);
        cfg.block4_attach = vec![1, 2, 3, 3];
        assert!(cfg.validate().is_err());
        cfg.block4_attach = vec![1, 2, 3]; // wrong length
        assert!(cfg.validate().is_err());
        cfg.block4_attach = vec![1, 2, 3, 5]; // beyond n4
        assert!(cfg.validate().is_err());
        cfg.block4_attach = vec![1, 2, 3, 4];
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn forward_shapes_and_embedding_range() {
        let mut model = mini_model(7);
        let x = random_batch(3, 42);
        let (outputs, cache) = model.forward(&x, Phase::Train).unwrap();
        assert!(cache.is_some());
        assert_eq!(outputs.len(), 8);
        for out in &outputs {
            assert_eq!(out.embedding.shape(), &[3, 64]);
            assert_eq!(out.logits.shape(), &[3, 5]);
            assert!(out.embedding.data().iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn loss_on_uniform_logits_is_2l_ln_c() {
        let outputs: Vec<BaseLearnerOutput> = (0..8)
            .map(|_| BaseLearnerOutput {
                embedding: Tensor::zeros(&[2, 4]),
                logits: Tensor::zeros(&[2, 5]),
            })
            .collect();
        let loss = EnsembleModel::loss(&outputs, &[0, 3]).unwrap();
        let want = 8.0 * 5.0f64.ln();
        assert!((loss.total - want).abs() < 1e-12);
        for s in &loss.per_sample_total {
            assert!((s - want).abs() < 1e-12);
        }
    }

    #[test]
    fn total_loss_is_exactly_the_head_sum() {
        let mut model = mini_model(3);
        let x = random_batch(4, 9);
        let (outputs, _) = model.forward(&x, Phase::Train).unwrap();
        let labels = [0usize, 1, 2, 3];
        let loss = EnsembleModel::loss(&outputs, &labels).unwrap();
        // Independent re-summation oracle.
        let resum: f64 = outputs
            .iter()
            .map(|o| softmax_cross_entropy(&o.logits, &labels).unwrap().mean)
            .sum();
        assert!((loss.total - resum).abs() < 1e-12);
        let head_sum: f64 = loss.per_head.iter().sum();
        assert!((loss.total - head_sum).abs() < 1e-12);
    }

    #[test]
    fn single_head_family_reduces_to_plain_cross_entropy() {
        // L=1 with one class split covers the degenerate single-learner case:
        // per-head loss equals softmax CE directly.
        let mut cfg = EnsembleConfig::mini(4);
        cfg.heads_per_family = 1;
        cfg.block4_attach = vec![4];
        let mut model = EnsembleModel::new(cfg, 11).unwrap();
        let x = random_batch(2, 13);
        let (outputs, _) = model.forward(&x, Phase::Train).unwrap();
        let loss = EnsembleModel::loss(&outputs[..1], &[1, 2]).unwrap();
        let direct = softmax_cross_entropy(&outputs[0].logits, &[1, 2]).unwrap();
        assert!((loss.total - direct.mean).abs() < 1e-15);
    }

    #[test]
    fn zero_weight_head_gets_no_gradient_and_shared_grads_shrink() {
        let mut model = mini_model(21);
        let x = random_batch(2, 5);
        let labels = [0usize, 2];
        let (outputs, cache) = model.forward(&x, Phase::Train).unwrap();
        let cache = cache.unwrap();
        let loss = EnsembleModel::loss(&outputs, &labels).unwrap();

        model.zero_grad();
        model
            .backward(&cache, &outputs, &loss.logit_grads, None)
            .unwrap();
        let full_stem_norm: f64 = grad_norm_of_first_param(&mut model);

        let mut weights = vec![1.0; 8];
        weights[3] = 0.0;
        model.zero_grad();
        model
            .backward(&cache, &outputs, &loss.logit_grads, Some(&weights))
            .unwrap();
        let damped_stem_norm = grad_norm_of_first_param(&mut model);
        let head3_grad_norm: f64 = {
            let h = &model.heads[3];
            h.embedding.weight.grad.data().iter().map(|v| v * v).sum::<f64>()
                + h.classifier.weight.grad.data().iter().map(|v| v * v).sum::<f64>()
        };
        assert_eq!(head3_grad_norm, 0.0);
        assert!(damped_stem_norm > 0.0);
        // Head 3 contributed to the shared gradient, so removing it changes it
        // (norms need not shrink: contributions can cancel).
        assert!((damped_stem_norm - full_stem_norm).abs() > 1e-30);

        // All-zero weights silence the shared gradient entirely.
        model.zero_grad();
        model
            .backward(&cache, &outputs, &loss.logit_grads, Some(&[0.0; 8]))
            .unwrap();
        assert_eq!(grad_norm_of_first_param(&mut model), 0.0);
    }

    fn grad_norm_of_first_param(model: &mut EnsembleModel) -> f64 {
        let mut norm = None;
        model.for_each_param(&mut |p| {
            if norm.is_none() {
                norm = Some(p.grad.data().iter().map(|v| v * v).sum::<f64>());
            }
        });
        norm.unwrap()
    }

    #[test]
    fn shared_grad_is_additive_over_heads() {
        let mut model = mini_model(31);
        let x = random_batch(2, 17);
        let labels = [1usize, 3];
        let (outputs, cache) = model.forward(&x, Phase::Train).unwrap();
        let cache = cache.unwrap();
        let loss = EnsembleModel::loss(&outputs, &labels).unwrap();

        model.zero_grad();
        model
            .backward(&cache, &outputs, &loss.logit_grads, None)
            .unwrap();
        let mut joint: Vec<f64> = Vec::new();
        model.backbone.for_each_param(&mut |p| joint.extend_from_slice(p.grad.data()));

        let mut summed = vec![0.0; joint.len()];
        for head in 0..8 {
            let mut weights = vec![0.0; 8];
            weights[head] = 1.0;
            model.zero_grad();
            model
                .backward(&cache, &outputs, &loss.logit_grads, Some(&weights))
                .unwrap();
            let mut i = 0;
            model.backbone.for_each_param(&mut |p| {
                for g in p.grad.data() {
                    summed[i] += g;
                    i += 1;
                }
            });
        }
        let max_diff = joint
            .iter()
            .zip(&summed)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff <= 1e-10, "max diff {max_diff}");
    }

    #[test]
    fn heads_on_different_taps_differ_at_init() {
        for seed in 0..5 {
            let mut model = mini_model(seed);
            let x = random_batch(1, 1000 + seed);
            let (outputs, _) = model.forward(&x, Phase::Eval).unwrap();
            // Head 0 (block-3 family) vs head 4 (block-4 family).
            assert_ne!(outputs[0].embedding.data(), outputs[4].embedding.data());
        }
    }

    #[test]
    fn checkpoint_round_trips_eval_outputs_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut model = mini_model(77);
        // Push the running stats away from init so they must be persisted.
        let x = random_batch(4, 3);
        let _ = model.forward(&x, Phase::Train).unwrap();
        model.save_checkpoint(&path).unwrap();

        let mut reloaded = EnsembleModel::load_checkpoint(&path).unwrap();
        assert_eq!(reloaded.config, model.config);
        let probe = random_batch(2, 99);
        let (a, _) = model.forward(&probe, Phase::Eval).unwrap();
        let (b, _) = reloaded.forward(&probe, Phase::Eval).unwrap();
        for (oa, ob) in a.iter().zip(&b) {
            assert_eq!(oa.embedding.data(), ob.embedding.data());
            assert_eq!(oa.logits.data(), ob.logits.data());
        }
    }

    #[test]
    fn corrupt_checkpoint_is_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut model = mini_model(1);
        model.save_checkpoint(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 10);
        std::fs::write(&path, &bytes).unwrap();
        let err = EnsembleModel::load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "{err:?}");
    }
}
