//! Finite-difference gradient verification.
//!
//! Central differences with step 1e-5 in double precision, compared by
//! relative error |a - b| / max(|a|, |b|, 1e-8). The primitive battery
//! randomizes shapes per seed and keeps ReLU inputs away from zero (a kink
//! within the FD step would make the two-sided difference meaningless). The
//! full-model check perturbs the input plus every parameter of a mini
//! ensemble; it uses a larger head init than training defaults because
//! near-zero head weights make true gradients so small that FD roundoff
//! noise, not the backward pass, would dominate the comparison.

use crate::ensemble::{EnsembleConfig, EnsembleModel};
use crate::error::{Error, Result};
use crate::ops::{
    avgpool2d, avgpool2d_backward, channel_slice, concat_channels, relu, relu_backward,
    softmax_cross_entropy, tanh_act, tanh_backward, BatchNorm2d, Conv2d, Linear, Parameter, Phase,
};
use crate::rng::RngStream;
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const PRIMITIVE_TOL: f64 = 1e-5;
pub const MODEL_TOL: f64 = 1e-4;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Which coordinates of each checked tensor to probe.
#[derive(Clone, Debug)]
pub enum CoordPlan {
    All,
    /// Up to `per_tensor` distinct coordinates, drawn deterministically.
    Sample { per_tensor: usize, seed: u64 },
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub coords: usize,
}

/// Checks d(loss)/d(slots[i]) for every planned coordinate. `f` evaluates the
/// scalar loss on the given slot values and, when asked, the analytic
/// gradients in slot order. The slots are restored on return.
pub fn check_gradients(
    slots: &mut [Tensor],
    f: &mut dyn FnMut(&[Tensor], bool) -> Result<(f64, Option<Vec<Tensor>>)>,
    plan: &CoordPlan,
) -> Result<(f64, usize)> {
    let (_, grads) = f(slots, true)?;
    let grads = grads.ok_or_else(|| Error::config("gradient closure returned no gradients"))?;
    if grads.len() != slots.len() {
        return Err(Error::config(format!(
            "gradient closure returned {} tensors for {} slots",
            grads.len(),
            slots.len()
        )));
    }
    let mut max_err = 0.0f64;
    let mut coords = 0usize;
    for s in 0..slots.len() {
        if grads[s].shape() != slots[s].shape() {
            return Err(Error::config(format!(
                "gradient {s} has shape {:?}, slot has {:?}",
                grads[s].shape(),
                slots[s].shape()
            )));
        }
        let numel = slots[s].numel();
        let picks: Vec<usize> = match plan {
            CoordPlan::All => (0..numel).collect(),
            CoordPlan::Sample { per_tensor, seed } => {
                if numel <= *per_tensor {
                    (0..numel).collect()
                } else {
                    let mut rng = RngStream::derived(*seed, &[0xFD, s as u64]);
                    let mut chosen = std::collections::BTreeSet::new();
                    while chosen.len() < *per_tensor {
                        chosen.insert(rng.below(numel));
                    }
                    chosen.into_iter().collect()
                }
            }
        };
        for i in picks {
            let orig = slots[s].data()[i];
            slots[s].data_mut()[i] = orig + FD_STEP;
            let (up, _) = f(slots, false)?;
            slots[s].data_mut()[i] = orig - FD_STEP;
            let (down, _) = f(slots, false)?;
            slots[s].data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * FD_STEP);
            let err = rel_err(fd, grads[s].data()[i]);
            if err > max_err {
                max_err = err;
            }
            coords += 1;
        }
    }
    Ok((max_err, coords))
}

/// Values with magnitude in [0.2, 1.2] and random sign: safely away from the
/// ReLU kink relative to the FD step.
fn away_from_kink(rng: &mut RngStream, shape: &[usize]) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        let mag = rng.uniform_in(0.2, 1.2);
        *v = if rng.uniform() < 0.5 { -mag } else { mag };
    }
    t
}

/// Fixed random weighting that turns a tensor-valued op into a scalar loss;
/// its adjoint is the weight tensor itself.
fn loss_weights(rng: &mut RngStream, shape: &[usize]) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.uniform_in(-1.0, 1.0);
    }
    t
}

fn weighted_sum(y: &Tensor, w: &Tensor) -> f64 {
    y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

fn report(name: &str, checked: (f64, usize)) -> GradCheckReport {
    GradCheckReport { name: name.into(), max_rel_err: checked.0, coords: checked.1 }
}

/// One full pass over every layer primitive with shapes derived from `seed`.
pub fn primitive_battery(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = RngStream::derived(seed, &[0x6C]);
    let mut out = Vec::new();

    // Convolution: gradients w.r.t. input and kernel.
    {
        let n = 1 + rng.below(2);
        let cin = 1 + rng.below(3);
        let cout = 1 + rng.below(3);
        let k = [1, 3][rng.below(2)];
        let stride = 1 + rng.below(2);
        let pad = if k == 3 { rng.below(2) } else { 0 };
        let h = k + stride * (1 + rng.below(2));
        let w = k + stride * (1 + rng.below(2));
        let x = away_from_kink(&mut rng, &[n, cin, h, w]);
        let wt = away_from_kink(&mut rng, &[cout, cin, k, k]);
        let probe = Conv2d::from_weight(wt.clone(), stride, pad)?;
        let lw = loss_weights(&mut rng, &probe.output_shape(x.shape())?);
        let mut slots = vec![x, wt];
        let checked = check_gradients(
            &mut slots,
            &mut |s, want| {
                let mut conv = Conv2d::from_weight(s[1].clone(), stride, pad)?;
                let y = conv.forward(&s[0])?;
                let loss = weighted_sum(&y, &lw);
                if !want {
                    return Ok((loss, None));
                }
                let gx = conv.backward(&s[0], &lw)?;
                Ok((loss, Some(vec![gx, conv.weight.grad.clone()])))
            },
            &CoordPlan::All,
        )?;
        out.push(report("conv2d", checked));
    }

    // Linear: input, weight, bias.
    {
        let n = 1 + rng.below(3);
        let din = 1 + rng.below(5);
        let dout = 1 + rng.below(4);
        let x = away_from_kink(&mut rng, &[n, din]);
        let w = away_from_kink(&mut rng, &[dout, din]);
        let b = away_from_kink(&mut rng, &[dout]);
        let lw = loss_weights(&mut rng, &[n, dout]);
        let mut slots = vec![x, w, b];
        let checked = check_gradients(
            &mut slots,
            &mut |s, want| {
                let mut lin = Linear {
                    weight: Parameter::new(s[1].clone()),
                    bias: Parameter::new(s[2].clone()),
                };
                let y = lin.forward(&s[0])?;
                let loss = weighted_sum(&y, &lw);
                if !want {
                    return Ok((loss, None));
                }
                let gx = lin.backward(&s[0], &lw)?;
                Ok((loss, Some(vec![gx, lin.weight.grad.clone(), lin.bias.grad.clone()])))
            },
            &CoordPlan::All,
        )?;
        out.push(report("linear", checked));
    }

    // Batchnorm (training statistics): input, gamma, beta.
    {
        let n = 2 + rng.below(2);
        let c = 1 + rng.below(3);
        let h = 1 + rng.below(3);
        let w = 1 + rng.below(3);
        let x = away_from_kink(&mut rng, &[n, c, h, w]);
        let gamma = away_from_kink(&mut rng, &[c]);
        let beta = away_from_kink(&mut rng, &[c]);
        let lw = loss_weights(&mut rng, &[n, c, h, w]);
        let mut slots = vec![x, gamma, beta];
        let checked = check_gradients(
            &mut slots,
            &mut |s, want| {
                let mut bn = BatchNorm2d::new(s[1].numel());
                bn.gamma.value = s[1].clone();
                bn.beta.value = s[2].clone();
                let (y, stats) = bn.forward_train(&s[0])?;
                let loss = weighted_sum(&y, &lw);
                if !want {
                    return Ok((loss, None));
                }
                let gx = bn.backward(&s[0], &stats, &lw)?;
                Ok((loss, Some(vec![gx, bn.gamma.grad.clone(), bn.beta.grad.clone()])))
            },
            &CoordPlan::All,
        )?;
        out.push(report("batchnorm", checked));
    }

    // ReLU.
    {
        let x = away_from_kink(&mut rng, &[2, 3, 2, 2]);
        let lw = loss_weights(&mut rng, x.shape());
        let mut slots = vec![x];
        let checked = check_gradients(
            &mut slots,
            &mut |s, want| {
                let y = relu(&s[0]);
                let loss = weighted_sum(&y, &lw);
                if !want {
                    return Ok((loss, None));
                }
                Ok((loss, Some(vec![relu_backward(&s[0], &lw)])))
            },
            &CoordPlan::All,
        )?;
        out.push(report("relu", checked));
    }

    // Tanh (backward consumes the activation output).
    {
        let x = away_from_kink(&mut rng, &[3, 4]);
        let lw = loss_weights(&mut rng, x.shape());
        let mut slots = vec![x];
        let checked = check_gradients(
            &mut slots,
            &mut |s, want| {
                let y = tanh_act(&s[0]);
                let loss = weighted_sum(&y, &lw);
                if !want {
                    return Ok((loss, None));
                }
                Ok((loss, Some(vec![tanh_backward(&y, &lw)])))
            },
            &CoordPlan::All,
        )?;
        out.push(report("tanh", checked));
    }

    // Average pooling.
    {
        let window = 1 + rng.below(2);
        let stride = window;
        let m_h = 1 + rng.below(2);
        let m_w = 1 + rng.below(2);
        let (h, w) = (window + stride * m_h, window + stride * m_w);
        let x = away_from_kink(&mut rng, &[2, 2, h, w]);
        let probe = avgpool2d(&x, window, stride)?;
        let lw = loss_weights(&mut rng, probe.shape());
        let mut slots = vec![x];
        let checked = check_gradients(
            &mut slots,
            &mut |s, want| {
                let y = avgpool2d(&s[0], window, stride)?;
                let loss = weighted_sum(&y, &lw);
                if !want {
                    return Ok((loss, None));
                }
                let gx = avgpool2d_backward(s[0].shape(), window, stride, &lw)?;
                Ok((loss, Some(vec![gx])))
            },
            &CoordPlan::All,
        )?;
        out.push(report("avgpool2d", checked));
    }

    // Softmax cross-entropy: the loss itself, gradient from the closed form.
    {
        let n = 2 + rng.below(3);
        let c = 2 + rng.below(4);
        let logits = away_from_kink(&mut rng, &[n, c]);
        let labels: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
        let mut slots = vec![logits];
        let checked = check_gradients(
            &mut slots,
            &mut |s, want| {
                let loss = softmax_cross_entropy(&s[0], &labels)?;
                if !want {
                    return Ok((loss.mean, None));
                }
                Ok((loss.mean, Some(vec![loss.grad.clone()])))
            },
            &CoordPlan::All,
        )?;
        out.push(report("softmax_cross_entropy", checked));
    }

    // Channel concatenation; the adjoint is slicing the upstream gradient.
    {
        let c1 = 1 + rng.below(3);
        let c2 = 1 + rng.below(3);
        let a = away_from_kink(&mut rng, &[2, c1, 2, 2]);
        let b = away_from_kink(&mut rng, &[2, c2, 2, 2]);
        let lw = loss_weights(&mut rng, &[2, c1 + c2, 2, 2]);
        let mut slots = vec![a, b];
        let checked = check_gradients(
            &mut slots,
            &mut |s, want| {
                let y = concat_channels(&[&s[0], &s[1]])?;
                let loss = weighted_sum(&y, &lw);
                if !want {
                    return Ok((loss, None));
                }
                let ga = channel_slice(&lw, 0, c1)?;
                let gb = channel_slice(&lw, c1, c2)?;
                Ok((loss, Some(vec![ga, gb])))
            },
            &CoordPlan::All,
        )?;
        out.push(report("concat_channels", checked));
    }

    Ok(out)
}

/// End-to-end check of the mini ensemble: loss gradients w.r.t. the input
/// image batch and every parameter tensor, at sampled coordinates.
pub fn full_model_check(seed: u64, coords_per_tensor: usize) -> Result<GradCheckReport> {
    // The mini profile's moderate head init also keeps head gradients well
    // above FD roundoff; a near-zero init would drown the comparison.
    let cfg = EnsembleConfig::mini(3);
    let mut model = EnsembleModel::new(cfg, seed)?;

    let mut rng = RngStream::derived(seed, &[0xF0]);
    let (c, h, w) = model.config.backbone.input;
    let n = 2;
    let mut x = Tensor::zeros(&[n, c, h, w]);
    for v in x.data_mut() {
        *v = rng.uniform_in(0.05, 0.95);
    }
    let labels: Vec<usize> = (0..n).map(|_| rng.below(model.config.num_classes)).collect();

    let mut slots = vec![x];
    model.for_each_param(&mut |p| slots.push(p.value.clone()));

    let checked = check_gradients(
        &mut slots,
        &mut |s, want| {
            let mut i = 1;
            model.for_each_param(&mut |p| {
                p.value = s[i].clone();
                i += 1;
            });
            model.zero_grad();
            let (outputs, cache) = model.forward(&s[0], Phase::Train)?;
            let loss = EnsembleModel::loss(&outputs, &labels)?;
            if !want {
                return Ok((loss.total, None));
            }
            let cache = cache.expect("train-phase forward always caches");
            let gx = model.backward(&cache, &outputs, &loss.logit_grads, None)?;
            let mut grads = vec![gx];
            model.for_each_param(&mut |p| grads.push(p.grad.clone()));
            Ok((loss.total, Some(grads)))
        },
        &CoordPlan::Sample { per_tensor: coords_per_tensor, seed },
    )?;
    Ok(report("mini_ensemble_model", checked))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_err_uses_symmetric_floor() {
        assert_eq!(rel_err(1.0, 1.0), 0.0);
        assert!((rel_err(1.0, 0.0) - 1.0).abs() < 1e-12);
        // Both tiny: floored denominator keeps noise from exploding.
        assert!(rel_err(1e-12, -1e-12) < 1e-3);
    }

    #[test]
    fn battery_passes_on_several_seeds() {
        for seed in 0..4 {
            for rep in primitive_battery(seed).unwrap() {
                assert!(
                    rep.max_rel_err <= PRIMITIVE_TOL,
                    "seed {seed} {}: {}",
                    rep.name,
                    rep.max_rel_err
                );
                assert!(rep.coords > 0);
            }
        }
    }

    #[test]
    fn check_gradients_catches_a_planted_error() {
        // loss = sum(x^2): true grad 2x; report 2x + 0.1 and expect failure.
        let mut slots = vec![Tensor::full(&[3], 0.7)];
        let (err, _) = check_gradients(
            &mut slots,
            &mut |s, want| {
                let loss: f64 = s[0].data().iter().map(|v| v * v).sum();
                if !want {
                    return Ok((loss, None));
                }
                let mut g = s[0].clone();
                for v in g.data_mut() {
                    *v = 2.0 * *v + 0.1;
                }
                Ok((loss, Some(vec![g])))
            },
            &CoordPlan::All,
        )
        .unwrap();
        assert!(err > 0.05, "planted gradient error went undetected: {err}");
    }

    #[test]
    fn full_model_check_is_within_tolerance() {
        let rep = full_model_check(0, 2).unwrap();
        assert!(
            rep.max_rel_err <= MODEL_TOL,
            "full model max rel err {}",
            rep.max_rel_err
        );
        assert!(rep.coords >= 2 * 80, "expected most tensors probed, got {}", rep.coords);
    }

    #[test]
    fn sampled_plan_restores_slots() {
        let mut slots = vec![Tensor::full(&[4], 1.5)];
        let before = slots[0].data().to_vec();
        check_gradients(
            &mut slots,
            &mut |s, want| {
                let loss: f64 = s[0].data().iter().sum();
                Ok((loss, want.then(|| vec![Tensor::full(&[4], 1.0)])))
            },
            &CoordPlan::Sample { per_tensor: 2, seed: 9 },
        )
        .unwrap();
        assert_eq!(slots[0].data(), before.as_slice());
    }
}
