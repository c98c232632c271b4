//! Densely connected backbone with tap points for ensemble heads.
//!
//! Layout: stem (7x7/s2 conv, BN, ReLU, 2x2/s2 avgpool) then four dense
//! blocks with compressing transitions between them. Each dense layer maps a
//! `c`-channel state to `c + k` channels by appending
//! Conv3x3(ReLU(BN(Conv1x1(ReLU(BN(state)))))), where the 1x1 bottleneck has
//! `bottleneck_factor * k` channels.
//!
//! The forward pass records the activations downstream consumers tap:
//! the block-3 output (pre-transition), the map entering block 4
//! (post-transition), and the concatenated state after every block-4 layer.
//! `backward` accepts a gradient for any subset of those taps and routes all
//! of them back to the input in one pass.

use crate::error::{Error, Result};
use crate::ops::{
    add_assign, avgpool2d, avgpool2d_backward, concat_channels, relu, relu_backward,
    split_by_widths, BatchNorm2d, BnStats, Conv2d, Parameter, Phase, StateSlot,
};
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseNetConfig {
    /// Input dims (C, H, W).
    pub input: (usize, usize, usize),
    /// Channels appended per dense layer (k).
    pub growth_rate: usize,
    /// Dense-layer counts (n1, n2, n3, n4).
    pub block_sizes: [usize; 4],
    /// Channels after the stem conv.
    pub stem_channels: usize,
    /// Transition compression factor theta in (0, 1].
    pub compression: f64,
    /// Bottleneck conv width = factor * k.
    pub bottleneck_factor: usize,
}

/// Static (C, H, W) shapes at every stage boundary, derived purely from the
/// config recurrence: c_out = c_in + n*k per block, c_out = floor(theta*c)
/// per transition, spatial halved by the stem twice and by each transition.
#[derive(Clone, Debug, PartialEq)]
pub struct BackbonePlan {
    /// Shape after stem conv + pool, entering block 1.
    pub stem_out: (usize, usize, usize),
    pub block_in: [(usize, usize, usize); 4],
    /// Pre-transition block outputs.
    pub block_out: [(usize, usize, usize); 4],
    /// Outputs of the three transitions (after blocks 1..3).
    pub transition_out: [(usize, usize, usize); 3],
}

impl BackbonePlan {
    /// Channel widths of the concatenated state after each block-4 layer.
    pub fn block4_state_channels(&self, growth_rate: usize, n4: usize) -> Vec<usize> {
        let c_in = self.block_in[3].0;
        (1..=n4).map(|i| c_in + i * growth_rate).collect()
    }
}

impl DenseNetConfig {
    /// Full-scale reference: k=32, blocks (6,12,24,16), stem 64, theta 0.5.
    pub fn densenet121(input_hw: (usize, usize)) -> Self {
        DenseNetConfig {
            input: (3, input_hw.0, input_hw.1),
            growth_rate: 32,
            block_sizes: [6, 12, 24, 16],
            stem_channels: 64,
            compression: 0.5,
            bottleneck_factor: 4,
        }
    }

    /// Desk-scale default: k=8, blocks (2,2,4,4), stem 16, input 3x64x32.
    pub fn mini() -> Self {
        DenseNetConfig {
            input: (3, 64, 32),
            growth_rate: 8,
            block_sizes: [2, 2, 4, 4],
            stem_channels: 16,
            compression: 0.5,
            bottleneck_factor: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.plan().map(|_| ())
    }

    /// Walks the shape recurrence, failing on any inconsistent stage.
    pub fn plan(&self) -> Result<BackbonePlan> {
        if self.growth_rate == 0 {
            return Err(Error::config("growth_rate must be >= 1"));
        }
        if self.block_sizes.iter().any(|&n| n == 0) {
            return Err(Error::config("every block needs >= 1 dense layer"));
        }
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return Err(Error::config(format!(
                "compression must be in (0, 1], got {}",
                self.compression
            )));
        }
        if self.stem_channels == 0 || self.bottleneck_factor == 0 {
            return Err(Error::config("stem_channels and bottleneck_factor must be >= 1"));
        }
        let (c_img, h_img, w_img) = self.input;
        if c_img == 0 || h_img == 0 || w_img == 0 {
            return Err(Error::config(format!("bad input dims {:?}", self.input)));
        }
        // Stem conv 7x7 stride 2 pad 3, then 2x2 pool stride 2.
        let h1 = (h_img + 6 - 7) / 2 + 1;
        let w1 = (w_img + 6 - 7) / 2 + 1;
        if h1 < 2 || w1 < 2 || h1 % 2 != 0 || w1 % 2 != 0 {
            return Err(Error::config(format!(
                "stem output {h1}x{w1} not poolable; input H and W must be multiples of 4"
            )));
        }
        let stem_out = (self.stem_channels, h1 / 2, w1 / 2);

        let mut block_in = [(0, 0, 0); 4];
        let mut block_out = [(0, 0, 0); 4];
        let mut transition_out = [(0, 0, 0); 3];
        let mut cur = stem_out;
        for b in 0..4 {
            block_in[b] = cur;
            let c_out = cur.0 + self.block_sizes[b] * self.growth_rate;
            block_out[b] = (c_out, cur.1, cur.2);
            cur = block_out[b];
            if b < 3 {
                let compressed = (self.compression * c_out as f64).floor() as usize;
                if compressed == 0 {
                    return Err(Error::config(format!(
                        "transition after block {} compresses {c_out} channels to zero",
                        b + 1
                    )));
                }
                if cur.1 < 2 || cur.2 < 2 || cur.1 % 2 != 0 || cur.2 % 2 != 0 {
                    return Err(Error::config(format!(
                        "transition after block {} needs even spatial dims, got {}x{}",
                        b + 1,
                        cur.1,
                        cur.2
                    )));
                }
                transition_out[b] = (compressed, cur.1 / 2, cur.2 / 2);
                cur = transition_out[b];
            }
        }
        Ok(BackbonePlan {
            stem_out,
            block_in,
            block_out,
            transition_out,
        })
    }
}

/// One dense layer. Forward returns the input state with `k` new channels
/// appended; backward consumes the gradient of that concatenation.
#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub bn1: BatchNorm2d,
    pub conv1: Conv2d,
    pub bn2: BatchNorm2d,
    pub conv2: Conv2d,
}

#[derive(Clone, Debug)]
pub struct DenseLayerCache {
    state: Tensor,
    s1: BnStats,
    b1: Tensor,
    r1: Tensor,
    c1: Tensor,
    s2: BnStats,
    b2: Tensor,
    r2: Tensor,
}

impl DenseLayer {
    pub fn new(in_channels: usize, growth_rate: usize, bottleneck_factor: usize, rng: &mut RngStream) -> Self {
        let mid = bottleneck_factor * growth_rate;
        DenseLayer {
            bn1: BatchNorm2d::new(in_channels),
            conv1: Conv2d::new(in_channels, mid, 1, 1, 0, rng),
            bn2: BatchNorm2d::new(mid),
            conv2: Conv2d::new(mid, growth_rate, 3, 1, 1, rng),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.conv1.in_channels
    }

    pub fn growth_rate(&self) -> usize {
        self.conv2.out_channels
    }

    pub fn forward(&mut self, state: &Tensor, phase: Phase) -> Result<(Tensor, Option<DenseLayerCache>)> {
        let (_, c, _, _) = state.dims4()?;
        if c != self.in_channels() {
            return Err(Error::config(format!(
                "dense layer expects {} input channels, got {c}",
                self.in_channels()
            )));
        }
        match phase {
            Phase::Train => {
                let (b1, s1) = self.bn1.forward_train(state)?;
                let r1 = relu(&b1);
                let c1 = self.conv1.forward(&r1)?;
                let (b2, s2) = self.bn2.forward_train(&c1)?;
                let r2 = relu(&b2);
                let new = self.conv2.forward(&r2)?;
                let out = concat_channels(&[state, &new])?;
                Ok((
                    out,
                    Some(DenseLayerCache {
                        state: state.clone(),
                        s1,
                        b1,
                        r1,
                        c1,
                        s2,
                        b2,
                        r2,
                    }),
                ))
            }
            Phase::Eval => {
                let r1 = relu(&self.bn1.forward_eval(state)?);
                let c1 = self.conv1.forward(&r1)?;
                let r2 = relu(&self.bn2.forward_eval(&c1)?);
                let new = self.conv2.forward(&r2)?;
                Ok((concat_channels(&[state, &new])?, None))
            }
        }
    }

    /// `grad_out` covers the concatenated (c+k)-channel output.
    pub fn backward(&mut self, cache: &DenseLayerCache, grad_out: &Tensor) -> Result<Tensor> {
        let c = self.in_channels();
        let k = self.growth_rate();
        let parts = split_by_widths(grad_out, &[c, k])?;
        let (g_state_direct, g_new) = (&parts[0], &parts[1]);
        let g_r2 = self.conv2.backward(&cache.r2, g_new)?;
        let g_b2 = relu_backward(&cache.b2, &g_r2);
        let g_c1 = self.bn2.backward(&cache.c1, &cache.s2, &g_b2)?;
        let g_r1 = self.conv1.backward(&cache.r1, &g_c1)?;
        let g_b1 = relu_backward(&cache.b1, &g_r1);
        let mut g_state = self.bn1.backward(&cache.state, &cache.s1, &g_b1)?;
        add_assign(&mut g_state, g_state_direct)?;
        Ok(g_state)
    }

    pub fn for_each_param(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.bn1.gamma);
        f(&mut self.bn1.beta);
        f(&mut self.conv1.weight);
        f(&mut self.bn2.gamma);
        f(&mut self.bn2.beta);
        f(&mut self.conv2.weight);
    }

    pub fn for_each_slot(&mut self, f: &mut dyn FnMut(StateSlot)) {
        self.bn1.for_each_slot(f);
        f(StateSlot::Value(&mut self.conv1.weight.value));
        self.bn2.for_each_slot(f);
        f(StateSlot::Value(&mut self.conv2.weight.value));
    }
}

/// Compression between blocks: Conv1x1(ReLU(BN(state))) down to
/// floor(theta*c) channels, then 2x2 average pool, stride 2.
#[derive(Clone, Debug)]
pub struct Transition {
    pub bn: BatchNorm2d,
    pub conv: Conv2d,
}

#[derive(Clone, Debug)]
pub struct TransitionCache {
    x: Tensor,
    stats: BnStats,
    b: Tensor,
    r: Tensor,
    c: Tensor,
}

impl Transition {
    pub fn new(in_channels: usize, compression: f64, rng: &mut RngStream) -> Result<Self> {
        let out = (compression * in_channels as f64).floor() as usize;
        if out == 0 {
            return Err(Error::config(format!(
                "compression {compression} maps {in_channels} channels to zero"
            )));
        }
        Ok(Transition {
            bn: BatchNorm2d::new(in_channels),
            conv: Conv2d::new(in_channels, out, 1, 1, 0, rng),
        })
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_channels
    }

    pub fn forward(&mut self, x: &Tensor, phase: Phase) -> Result<(Tensor, Option<TransitionCache>)> {
        let (_, _, h, w) = x.dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::config(format!(
                "transition needs even spatial dims, got {h}x{w}"
            )));
        }
        match phase {
            Phase::Train => {
                let (b, stats) = self.bn.forward_train(x)?;
                let r = relu(&b);
                let c = self.conv.forward(&r)?;
                let y = avgpool2d(&c, 2, 2)?;
                Ok((
                    y,
                    Some(TransitionCache {
                        x: x.clone(),
                        stats,
                        b,
                        r,
                        c,
                    }),
                ))
            }
            Phase::Eval => {
                let r = relu(&self.bn.forward_eval(x)?);
                let c = self.conv.forward(&r)?;
                Ok((avgpool2d(&c, 2, 2)?, None))
            }
        }
    }

    pub fn backward(&mut self, cache: &TransitionCache, grad_out: &Tensor) -> Result<Tensor> {
        let g_c = avgpool2d_backward(cache.c.shape(), 2, 2, grad_out)?;
        let g_r = self.conv.backward(&cache.r, &g_c)?;
        let g_b = relu_backward(&cache.b, &g_r);
        self.bn.backward(&cache.x, &cache.stats, &g_b)
    }

    pub fn for_each_param(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.bn.gamma);
        f(&mut self.bn.beta);
        f(&mut self.conv.weight);
    }

    pub fn for_each_slot(&mut self, f: &mut dyn FnMut(StateSlot)) {
        self.bn.for_each_slot(f);
        f(StateSlot::Value(&mut self.conv.weight.value));
    }
}

#[derive(Clone, Debug)]
struct Stem {
    conv: Conv2d,
    bn: BatchNorm2d,
}

#[derive(Clone, Debug)]
struct StemCache {
    x: Tensor,
    c: Tensor,
    stats: BnStats,
    b: Tensor,
    r: Tensor,
}

impl Stem {
    fn forward(&mut self, x: &Tensor, phase: Phase) -> Result<(Tensor, Option<StemCache>)> {
        match phase {
            Phase::Train => {
                let c = self.conv.forward(x)?;
                let (b, stats) = self.bn.forward_train(&c)?;
                let r = relu(&b);
                let y = avgpool2d(&r, 2, 2)?;
                Ok((
                    y,
                    Some(StemCache {
                        x: x.clone(),
                        c,
                        stats,
                        b,
                        r,
                    }),
                ))
            }
            Phase::Eval => {
                let c = self.conv.forward(x)?;
                let r = relu(&self.bn.forward_eval(&c)?);
                Ok((avgpool2d(&r, 2, 2)?, None))
            }
        }
    }

    fn backward(&mut self, cache: &StemCache, grad_out: &Tensor) -> Result<Tensor> {
        let g_r = avgpool2d_backward(cache.r.shape(), 2, 2, grad_out)?;
        let g_b = relu_backward(&cache.b, &g_r);
        let g_c = self.bn.backward(&cache.c, &cache.stats, &g_b)?;
        self.conv.backward(&cache.x, &g_c)
    }
}

/// Activations recorded for downstream heads.
#[derive(Clone, Debug)]
pub struct BackboneTaps {
    /// Block-3 output before its transition.
    pub block3_out: Tensor,
    /// Map entering block 4 (block-3 transition output).
    pub block4_input: Tensor,
    /// Concatenated state after each block-4 dense layer; entry i has
    /// `c_in(block4) + (i+1)*k` channels.
    pub block4_states: Vec<Tensor>,
}

/// Gradients flowing into any subset of the taps; `None` means zero.
#[derive(Clone, Debug, Default)]
pub struct TapGrads {
    pub block3_out: Option<Tensor>,
    pub block4_input: Option<Tensor>,
    pub block4_states: Vec<Option<Tensor>>,
}

pub struct BackboneCache {
    stem: StemCache,
    blocks: Vec<Vec<DenseLayerCache>>,
    transitions: Vec<TransitionCache>,
    final_state_shape: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub config: DenseNetConfig,
    stem: Stem,
    pub blocks: Vec<Vec<DenseLayer>>,
    pub transitions: Vec<Transition>,
}

impl Backbone {
    pub fn new(config: DenseNetConfig, rng: &mut RngStream) -> Result<Self> {
        let plan = config.plan()?;
        let stem = Stem {
            conv: Conv2d::new(config.input.0, config.stem_channels, 7, 2, 3, rng),
            bn: BatchNorm2d::new(config.stem_channels),
        };
        let mut blocks = Vec::with_capacity(4);
        let mut transitions = Vec::with_capacity(3);
        for b in 0..4 {
            let mut layers = Vec::with_capacity(config.block_sizes[b]);
            let mut c = plan.block_in[b].0;
            for _ in 0..config.block_sizes[b] {
                layers.push(DenseLayer::new(c, config.growth_rate, config.bottleneck_factor, rng));
                c += config.growth_rate;
            }
            debug_assert_eq!(c, plan.block_out[b].0);
            blocks.push(layers);
            if b < 3 {
                transitions.push(Transition::new(c, config.compression, rng)?);
            }
        }
        Ok(Backbone {
            config,
            stem,
            blocks,
            transitions,
        })
    }

    pub fn forward(&mut self, x: &Tensor, phase: Phase) -> Result<(BackboneTaps, Option<BackboneCache>)> {
        let (_, c, h, w) = x.dims4()?;
        if (c, h, w) != self.config.input {
            return Err(Error::config(format!(
                "backbone expects input {:?}, got ({c}, {h}, {w})",
                self.config.input
            )));
        }
        let want_cache = phase == Phase::Train;
        let (mut state, stem_cache) = self.stem.forward(x, phase)?;
        let mut block_caches: Vec<Vec<DenseLayerCache>> = Vec::with_capacity(4);
        let mut transition_caches: Vec<TransitionCache> = Vec::with_capacity(3);
        let mut block3_out = None;
        let mut block4_input = None;
        let mut block4_states = Vec::with_capacity(self.config.block_sizes[3]);

        for b in 0..4 {
            if b == 3 {
                block4_input = Some(state.clone());
            }
            let mut layer_caches = Vec::new();
            for layer in &mut self.blocks[b] {
                let (next, cache) = layer.forward(&state, phase)?;
                state = next;
                if let Some(c) = cache {
                    layer_caches.push(c);
                }
                if b == 3 {
                    block4_states.push(state.clone());
                }
            }
            block_caches.push(layer_caches);
            if b == 2 {
                block3_out = Some(state.clone());
            }
            if b < 3 {
                let (next, cache) = self.transitions[b].forward(&state, phase)?;
                state = next;
                if let Some(c) = cache {
                    transition_caches.push(c);
                }
            }
        }

        let taps = BackboneTaps {
            block3_out: block3_out.expect("block 3 always runs"),
            block4_input: block4_input.expect("block 4 always runs"),
            block4_states,
        };
        let cache = if want_cache {
            Some(BackboneCache {
                stem: stem_cache.expect("train mode caches the stem"),
                blocks: block_caches,
                transitions: transition_caches,
                final_state_shape: state.shape().to_vec(),
            })
        } else {
            None
        };
        Ok((taps, cache))
    }

    /// Routes tap gradients back to the input image. Requires the cache from
    /// a train-mode forward pass.
    pub fn backward(&mut self, cache: &BackboneCache, grads: TapGrads) -> Result<Tensor> {
        let n4 = self.config.block_sizes[3];
        let mut injected = grads.block4_states;
        injected.resize_with(n4, || None);

        let mut g = match injected[n4 - 1].take() {
            Some(t) => t,
            None => Tensor::zeros(&cache.final_state_shape),
        };
        for j in (0..n4).rev() {
            if j < n4 - 1 {
                if let Some(extra) = injected[j].take() {
                    add_assign(&mut g, &extra)?;
                }
            }
            g = self.blocks[3][j].backward(&cache.blocks[3][j], &g)?;
        }
        if let Some(extra) = grads.block4_input {
            add_assign(&mut g, &extra)?;
        }
        g = self.transitions[2].backward(&cache.transitions[2], &g)?;
        if let Some(extra) = grads.block3_out {
            add_assign(&mut g, &extra)?;
        }
        for b in (0..3).rev() {
            for j in (0..self.config.block_sizes[b]).rev() {
                g = self.blocks[b][j].backward(&cache.blocks[b][j], &g)?;
            }
            if b > 0 {
                g = self.transitions[b - 1].backward(&cache.transitions[b - 1], &g)?;
            }
        }
        self.stem.backward(&cache.stem, &g)
    }

    /// Visits every trainable parameter in a fixed registration order: stem,
    /// then blocks interleaved with their transitions, layer by layer. The
    /// checkpoint stream and the optimizer both rely on this order.
    pub fn for_each_param(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.stem.conv.weight);
        f(&mut self.stem.bn.gamma);
        f(&mut self.stem.bn.beta);
        for b in 0..4 {
            for layer in &mut self.blocks[b] {
                layer.for_each_param(f);
            }
            if b < 3 {
                self.transitions[b].for_each_param(f);
            }
        }
    }

    /// Same order as `for_each_param` but includes batchnorm running stats,
    /// which the checkpoint must carry to reproduce eval-mode outputs.
    pub fn for_each_slot(&mut self, f: &mut dyn FnMut(StateSlot)) {
        f(StateSlot::Value(&mut self.stem.conv.weight.value));
        self.stem.bn.for_each_slot(f);
        for b in 0..4 {
            for layer in &mut self.blocks[b] {
                layer.for_each_slot(f);
            }
            if b < 3 {
                self.transitions[b].for_each_slot(f);
            }
        }
    }
}
