//! Training-time image augmentation.
//!
//! Applied per sample in a fixed order: horizontal flip, zero-pad + random
//! crop, random erasing. All randomness comes from the caller's stream, so a
//! sample's augmentation is fully determined by (seed, epoch, sample index).

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub flip: bool,
    pub crop: bool,
    /// Zero padding added on each side before cropping back to the original size.
    pub crop_pad: usize,
    pub erase: bool,
    pub erase_prob: f64,
    /// Erased area as a fraction of the image, sampled uniformly in [lo, hi].
    pub erase_area: (f64, f64),
    /// Erased rectangle aspect ratio (h/w), sampled uniformly in [lo, hi].
    pub erase_aspect: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip: true,
            crop: true,
            crop_pad: 4,
            erase: true,
            erase_prob: 0.5,
            erase_area: (0.02, 0.4),
            erase_aspect: (0.3, 3.33),
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig {
            flip: false,
            crop: false,
            crop_pad: 0,
            erase: false,
            erase_prob: 0.0,
            erase_area: (0.02, 0.4),
            erase_aspect: (0.3, 3.33),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.erase_prob) {
            return Err(Error::config(format!(
                "erase_prob must be in [0,1], got {}",
                self.erase_prob
            )));
        }
        let (a_lo, a_hi) = self.erase_area;
        if !(a_lo > 0.0 && a_lo <= a_hi && a_hi < 1.0) {
            return Err(Error::config(format!(
                "erase area range must satisfy 0 < lo <= hi < 1, got [{a_lo}, {a_hi}]"
            )));
        }
        let (r_lo, r_hi) = self.erase_aspect;
        if !(r_lo > 0.0 && r_lo <= r_hi) {
            return Err(Error::config(format!(
                "erase aspect range must satisfy 0 < lo <= hi, got [{r_lo}, {r_hi}]"
            )));
        }
        Ok(())
    }
}

pub fn horizontal_flip(img: &mut Tensor) {
    let (c, h, w) = img.dims3().expect("image is [C,H,W]");
    let data = img.data_mut();
    for ch in 0..c {
        for y in 0..h {
            let row = ch * h * w + y * w;
            data[row..row + w].reverse();
        }
    }
}

/// Zero-pads by `pad` on every side, then crops a window of the original size
/// at a uniformly random offset in [0, 2*pad]^2.
pub fn pad_random_crop(img: &Tensor, pad: usize, rng: &mut RngStream) -> Tensor {
    let (c, h, w) = img.dims3().expect("image is [C,H,W]");
    if pad == 0 {
        return img.clone();
    }
    let oy = rng.below(2 * pad + 1);
    let ox = rng.below(2 * pad + 1);
    let mut out = Tensor::zeros(&[c, h, w]);
    let src = img.data();
    let dst = out.data_mut();
    let plane = h * w;
    // Destination pixel (y, x) reads padded coordinate (y+oy, x+ox), which is
    // source (y+oy-pad, x+ox-pad) or zero outside.
    for ch in 0..c {
        for y in 0..h {
            let sy = y as i64 + oy as i64 - pad as i64;
            if sy < 0 || sy >= h as i64 {
                continue;
            }
            for x in 0..w {
                let sx = x as i64 + ox as i64 - pad as i64;
                if sx < 0 || sx >= w as i64 {
                    continue;
                }
                dst[ch * plane + y * w + x] = src[ch * plane + sy as usize * w + sx as usize];
            }
        }
    }
    out
}

/// Random erasing: with probability `erase_prob`, pick a rectangle whose area
/// and aspect ratio are drawn from the configured ranges and overwrite it with
/// uniform [0, 1] noise. Rectangles that do not fit after integer rounding are
/// rejected; gives up after 100 attempts and leaves the image unchanged.
///
/// Returns the erased rectangle (y0, x0, h, w) if one was applied.
pub fn random_erase(
    img: &mut Tensor,
    cfg: &AugmentConfig,
    rng: &mut RngStream,
) -> Option<(usize, usize, usize, usize)> {
    let (c, h, w) = img.dims3().expect("image is [C,H,W]");
    if rng.uniform() >= cfg.erase_prob {
        return None;
    }
    let area = (h * w) as f64;
    for _ in 0..100 {
        let target = rng.uniform_in(cfg.erase_area.0, cfg.erase_area.1) * area;
        let aspect = rng.uniform_in(cfg.erase_aspect.0, cfg.erase_aspect.1);
        let eh = (target * aspect).sqrt().round() as usize;
        let ew = (target / aspect).sqrt().round() as usize;
        // Integer rounding can push the rectangle out of bounds; re-check.
        if eh == 0 || ew == 0 || eh > h || ew > w {
            continue;
        }
        let y0 = rng.below(h - eh + 1);
        let x0 = rng.below(w - ew + 1);
        let plane = h * w;
        let data = img.data_mut();
        for ch in 0..c {
            for y in y0..y0 + eh {
                for x in x0..x0 + ew {
                    data[ch * plane + y * w + x] = rng.uniform();
                }
            }
        }
        return Some((y0, x0, eh, ew));
    }
    None
}

/// Full augmentation pipeline for one training sample.
pub fn augment(img: &Tensor, cfg: &AugmentConfig, rng: &mut RngStream) -> Tensor {
    let mut out = img.clone();
    if cfg.flip && rng.uniform() < 0.5 {
        horizontal_flip(&mut out);
    }
    if cfg.crop && cfg.crop_pad > 0 {
        out = pad_random_crop(&out, cfg.crop_pad, rng);
    }
    if cfg.erase {
        random_erase(&mut out, cfg, rng);
    }
    out
}
