//! Paired augmentation: geometric transforms act jointly on both images and
//! the label, photometric ones on each image independently.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Image, SamplePair};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    /// Chance of each of the horizontal and vertical flips.
    pub flip_prob: f64,
    /// Chance of a rotation by an angle drawn from `[0°, 360°)`.
    pub rotation_prob: f64,
    pub blur_prob: f64,
    pub brightness_contrast_prob: f64,
    /// Additive brightness offset drawn from `±brightness_limit`.
    pub brightness_limit: f64,
    /// Multiplicative contrast factor drawn from `1 ± contrast_limit`.
    pub contrast_limit: f64,
    pub blur_sigma_min: f64,
    pub blur_sigma_max: f64,
    /// Mixed into every per-sample seed.
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            flip_prob: 0.5,
            rotation_prob: 0.5,
            blur_prob: 0.2,
            brightness_contrast_prob: 0.5,
            brightness_limit: 0.2,
            contrast_limit: 0.2,
            blur_sigma_min: 0.1,
            blur_sigma_max: 2.0,
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    /// No transform at all.
    pub fn disabled() -> Self {
        AugmentationConfig {
            flip_prob: 0.0,
            rotation_prob: 0.0,
            blur_prob: 0.0,
            brightness_contrast_prob: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("flip_prob", self.flip_prob),
            ("rotation_prob", self.rotation_prob),
            ("blur_prob", self.blur_prob),
            ("brightness_contrast_prob", self.brightness_contrast_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("augmentation.{name}: {p} is not a probability")));
            }
        }
        if !(0.0..=1.0).contains(&self.brightness_limit) || !(0.0..=1.0).contains(&self.contrast_limit) {
            return Err(Error::Config("augmentation: brightness_limit and contrast_limit must lie in [0, 1]".into()));
        }
        if !(self.blur_sigma_min > 0.0 && self.blur_sigma_min <= self.blur_sigma_max) {
            return Err(Error::Config("augmentation: need 0 < blur_sigma_min <= blur_sigma_max".into()));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.flip_prob == 0.0
            && self.rotation_prob == 0.0
            && self.blur_prob == 0.0
            && self.brightness_contrast_prob == 0.0
    }
}

/// Seed for one sample in one epoch. Independent of processing order, so
/// any number of workers produces the same augmentations.
pub fn sample_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    let mut z = seed ^ splitmix(epoch as u64 ^ splitmix(index as u64));
    z = splitmix(z);
    z
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draws and applies one random augmentation.
pub fn augment_pair(sample: &SamplePair, cfg: &AugmentationConfig, rng: &mut impl Rng) -> Result<SamplePair> {
    let mut out = sample.clone();
    let hflip = rng.gen::<f64>() < cfg.flip_prob;
    let vflip = rng.gen::<f64>() < cfg.flip_prob;
    if hflip || vflip {
        out = flip_pair(&out, hflip, vflip);
    }
    if rng.gen::<f64>() < cfg.rotation_prob {
        let angle = rng.gen_range(0.0..360.0);
        out = rotate_pair(&out, angle);
    }
    if !out.label.is_binary() {
        return Err(Error::Validation(format!(
            "sample '{}': label lost binarity under a geometric transform",
            sample.id
        )));
    }
    for img in [&mut out.reference, &mut out.comparison] {
        if rng.gen::<f64>() < cfg.blur_prob {
            let sigma = rng.gen_range(cfg.blur_sigma_min..=cfg.blur_sigma_max);
            *img = gaussian_blur(img, sigma);
        }
        if rng.gen::<f64>() < cfg.brightness_contrast_prob {
            let alpha = 1.0 + rng.gen_range(-cfg.contrast_limit..=cfg.contrast_limit);
            let beta = rng.gen_range(-cfg.brightness_limit..=cfg.brightness_limit);
            brightness_contrast(img, alpha as f32, beta as f32);
        }
    }
    Ok(out)
}

/// Augments with a generator seeded from [`sample_seed`].
pub(crate) fn augment_seeded(sample: &SamplePair, cfg: &AugmentationConfig, seed: u64) -> Result<SamplePair> {
    augment_pair(sample, cfg, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Mirrors all three rasters: `horizontal` reverses columns, `vertical`
/// reverses rows.
pub fn flip_pair(sample: &SamplePair, horizontal: bool, vertical: bool) -> SamplePair {
    let flip = |img: &Image| {
        let mut out = img.clone();
        for c in 0..img.channels {
            for y in 0..img.height {
                let sy = if vertical { img.height - 1 - y } else { y };
                for x in 0..img.width {
                    let sx = if horizontal { img.width - 1 - x } else { x };
                    let i = out.index(c, y, x);
                    out.data[i] = img.get(c, sy, sx);
                }
            }
        }
        out
    };
    SamplePair {
        id: sample.id.clone(),
        reference: flip(&sample.reference),
        comparison: flip(&sample.comparison),
        label: flip(&sample.label),
    }
}

/// Rotates about the raster centre by `degrees`. Output pixel `(y, x)` reads
/// the source at `(cy + cos·dy + sin·dx, cx − sin·dy + cos·dx)` where
/// `(dy, dx)` is its offset from the centre. Images are sampled bilinearly,
/// the label by nearest neighbour; everything outside the source is zero.
pub fn rotate_pair(sample: &SamplePair, degrees: f64) -> SamplePair {
    let rad = degrees.to_radians();
    // Snap so that multiples of 90° remap the grid exactly.
    let snap = |v: f64| {
        if v.abs() < 1e-12 {
            0.0
        } else if (v.abs() - 1.0).abs() < 1e-12 {
            v.signum()
        } else {
            v
        }
    };
    let (sin, cos) = (snap(rad.sin()), snap(rad.cos()));
    let rotate = |img: &Image, nearest: bool| {
        let (h, w) = (img.height, img.width);
        let cy = (h as f64 - 1.0) / 2.0;
        let cx = (w as f64 - 1.0) / 2.0;
        let mut out = Image::zeros(img.channels, h, w);
        for y in 0..h {
            let dy = y as f64 - cy;
            for x in 0..w {
                let dx = x as f64 - cx;
                let sy = cy + cos * dy + sin * dx;
                let sx = cx - sin * dy + cos * dx;
                for c in 0..img.channels {
                    let v = if nearest { sample_nearest(img, c, sy, sx) } else { sample_bilinear(img, c, sy, sx) };
                    let i = out.index(c, y, x);
                    out.data[i] = v;
                }
            }
        }
        out
    };
    SamplePair {
        id: sample.id.clone(),
        reference: rotate(&sample.reference, false),
        comparison: rotate(&sample.comparison, false),
        label: rotate(&sample.label, true),
    }
}

fn sample_nearest(img: &Image, c: usize, sy: f64, sx: f64) -> f32 {
    let (y, x) = (sy.round(), sx.round());
    if y < 0.0 || x < 0.0 || y >= img.height as f64 || x >= img.width as f64 {
        0.0
    } else {
        img.get(c, y as usize, x as usize)
    }
}

fn sample_bilinear(img: &Image, c: usize, sy: f64, sx: f64) -> f32 {
    let (y0, x0) = (sy.floor(), sx.floor());
    let (fy, fx) = (sy - y0, sx - x0);
    let at = |y: f64, x: f64| -> f64 {
        if y < 0.0 || x < 0.0 || y >= img.height as f64 || x >= img.width as f64 {
            0.0
        } else {
            img.get(c, y as usize, x as usize) as f64
        }
    };
    let mut v = 0.0;
    for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
        for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
            let wgt = wy * wx;
            if wgt != 0.0 {
                v += wgt * at(y0 + dy, x0 + dx);
            }
        }
    }
    v as f32
}

/// Separable Gaussian blur with a `2⌈2σ⌉ + 1` tap kernel and replicated
/// borders.
pub(crate) fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    let radius = (2.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let (h, w) = (img.height as isize, img.width as isize);
    let mut tmp = img.clone();
    let mut out = img.clone();
    for c in 0..img.channels {
        let src = img.plane(c);
        let dst = tmp.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, &wk) in kernel.iter().enumerate() {
                    let xx = (x + k as isize - radius).clamp(0, w - 1);
                    acc += wk * src[(y * w + xx) as usize] as f64;
                }
                dst[(y * w + x) as usize] = acc as f32;
            }
        }
        let src = tmp.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, &wk) in kernel.iter().enumerate() {
                    let yy = (y + k as isize - radius).clamp(0, h - 1);
                    acc += wk * src[(yy * w + x) as usize] as f64;
                }
                dst[(y * w + x) as usize] = acc as f32;
            }
        }
    }
    out
}

/// `clamp(alpha·v + beta, 0, 1)` on every sample.
pub(crate) fn brightness_contrast(img: &mut Image, alpha: f32, beta: f32) {
    for v in &mut img.data {
        *v = (alpha * *v + beta).clamp(0.0, 1.0);
    }
}
