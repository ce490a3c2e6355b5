//! Procedural bitemporal scenes: smooth-noise ground, a few flat-coloured
//! rectangles and ellipses, some of which appear or vanish between the two
//! acquisitions, plus a global brightness/contrast drift on the second image.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::dataset::Split;
use crate::data::io::{save_mask, save_rgb};
use crate::data::{Image, SamplePair};
use crate::error::{Error, Result};
use crate::train::sample_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub count: usize,
    /// Side of the square patches.
    pub size: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    /// Chance that a shape exists at only one of the two times.
    pub toggle_prob: f64,
    /// Half-width of the brightness and contrast drift applied to the
    /// comparison image.
    pub drift: f64,
    /// Amplitude of the independent per-image pixel noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            count: 100,
            size: 64,
            min_shapes: 2,
            max_shapes: 6,
            toggle_prob: 0.5,
            drift: 0.1,
            noise: 0.02,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// `multiple` is the cumulative stride the patches must be divisible by.
    pub fn validate(&self, multiple: usize) -> Result<()> {
        if self.size == 0 || !self.size.is_multiple_of(multiple.max(1)) {
            return Err(Error::Config(format!(
                "synthetic size {} is not a positive multiple of the cumulative stride {multiple}",
                self.size
            )));
        }
        if self.size < 8 {
            return Err(Error::Config("synthetic size must be at least 8".into()));
        }
        if self.min_shapes > self.max_shapes {
            return Err(Error::Config("synthetic min_shapes exceeds max_shapes".into()));
        }
        if !(0.0..=1.0).contains(&self.toggle_prob) {
            return Err(Error::Config(format!("toggle_prob {} is not a probability", self.toggle_prob)));
        }
        if !(0.0..=0.5).contains(&self.drift) || !(0.0..=0.5).contains(&self.noise) {
            return Err(Error::Config("synthetic drift and noise must lie in [0, 0.5]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
}

/// One shape in continuous pixel coordinates (pixel `(y, x)` spans
/// `[y, y+1) × [x, x+1)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticShape {
    pub kind: ShapeKind,
    pub cy: f64,
    pub cx: f64,
    /// Half extents.
    pub ry: f64,
    pub rx: f64,
    pub color: [f32; 3],
    pub at_t1: bool,
    pub at_t2: bool,
}

impl SyntheticShape {
    /// Whether the centre of pixel `(y, x)` lies inside the shape.
    pub fn covers(&self, y: usize, x: usize) -> bool {
        let dy = y as f64 + 0.5 - self.cy;
        let dx = x as f64 + 0.5 - self.cx;
        match self.kind {
            ShapeKind::Rectangle => dy.abs() <= self.ry && dx.abs() <= self.rx,
            ShapeKind::Ellipse => (dy / self.ry).powi(2) + (dx / self.rx).powi(2) <= 1.0,
        }
    }

    fn overlaps_box(&self, other: &SyntheticShape, margin: f64) -> bool {
        (self.cy - other.cy).abs() < self.ry + other.ry + margin
            && (self.cx - other.cx).abs() < self.rx + other.rx + margin
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub pair: SamplePair,
    pub shapes: Vec<SyntheticShape>,
}

fn quantize(v: f64) -> f32 {
    ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32
}

fn smooth_background(rng: &mut impl Rng, size: usize) -> Vec<[f64; 3]> {
    const GRID: usize = 5;
    let base: [f64; 3] = [0, 1, 2].map(|_| rng.gen_range(0.35..0.65));
    let knots: Vec<[f64; 3]> = (0..GRID * GRID).map(|_| base.map(|b| b + rng.gen_range(-0.1..0.1))).collect();
    let scale = (GRID - 1) as f64 / (size - 1) as f64;
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        let gy = y as f64 * scale;
        let y0 = (gy.floor() as usize).min(GRID - 2);
        let fy = gy - y0 as f64;
        for x in 0..size {
            let gx = x as f64 * scale;
            let x0 = (gx.floor() as usize).min(GRID - 2);
            let fx = gx - x0 as f64;
            let k = |yy: usize, xx: usize| knots[yy * GRID + xx];
            let mut px = [0.0; 3];
            for (c, p) in px.iter_mut().enumerate() {
                *p = (1.0 - fy) * ((1.0 - fx) * k(y0, x0)[c] + fx * k(y0, x0 + 1)[c])
                    + fy * ((1.0 - fx) * k(y0 + 1, x0)[c] + fx * k(y0 + 1, x0 + 1)[c]);
            }
            out.push(px);
        }
    }
    out
}

fn saturated_color(rng: &mut impl Rng) -> [f32; 3] {
    loop {
        let bits: [bool; 3] = [rng.gen(), rng.gen(), rng.gen()];
        if bits.iter().all(|&b| b) || bits.iter().all(|&b| !b) {
            continue;
        }
        return bits.map(|hi| if hi { rng.gen_range(0.8..0.95) } else { rng.gen_range(0.05..0.2) });
    }
}

fn place_shapes(rng: &mut impl Rng, spec: &SyntheticSpec) -> Vec<SyntheticShape> {
    let size = spec.size as f64;
    let n = rng.gen_range(spec.min_shapes..=spec.max_shapes);
    let mut shapes: Vec<SyntheticShape> = Vec::with_capacity(n);
    let (rmin, rmax) = (size / 16.0, size / 5.0);
    for _ in 0..n {
        for _attempt in 0..100 {
            let ry = rng.gen_range(rmin..rmax);
            let rx = rng.gen_range(rmin..rmax);
            let candidate = SyntheticShape {
                kind: if rng.gen() { ShapeKind::Rectangle } else { ShapeKind::Ellipse },
                cy: rng.gen_range(ry + 1.0..size - ry - 1.0),
                cx: rng.gen_range(rx + 1.0..size - rx - 1.0),
                ry,
                rx,
                color: saturated_color(rng),
                at_t1: true,
                at_t2: true,
            };
            if shapes.iter().all(|s| !s.overlaps_box(&candidate, 2.0)) {
                shapes.push(candidate);
                break;
            }
        }
    }
    for s in &mut shapes {
        if rng.gen::<f64>() < spec.toggle_prob {
            if rng.gen() {
                s.at_t2 = false;
            } else {
                s.at_t1 = false;
            }
        }
    }
    shapes
}

/// Sample `index` of `split`; a pure function of its arguments.
pub fn generate_sample(spec: &SyntheticSpec, split: Split, index: usize) -> SyntheticSample {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(spec.seed, 1000 + split as usize, index));
    let size = spec.size;
    let ground = smooth_background(&mut rng, size);
    let shapes = place_shapes(&mut rng, spec);

    let alpha = 1.0 + rng.gen_range(-spec.drift..=spec.drift);
    let beta = rng.gen_range(-spec.drift..=spec.drift);

    let mut reference = Image::zeros(3, size, size);
    let mut comparison = Image::zeros(3, size, size);
    let mut label = Image::zeros(1, size, size);
    for y in 0..size {
        for x in 0..size {
            let mut c1 = ground[y * size + x];
            let mut c2 = c1;
            let (mut occ1, mut occ2) = (false, false);
            for s in shapes.iter().filter(|s| s.covers(y, x)) {
                let col = s.color.map(f64::from);
                if s.at_t1 {
                    c1 = col;
                    occ1 = true;
                }
                if s.at_t2 {
                    c2 = col;
                    occ2 = true;
                }
            }
            for c in 0..3 {
                let n1 = spec.noise * rng.gen_range(-1.0..=1.0);
                let n2 = spec.noise * rng.gen_range(-1.0..=1.0);
                let i = reference.index(c, y, x);
                reference.data[i] = quantize(c1[c] + n1);
                comparison.data[i] = quantize(alpha * c2[c] + beta + n2);
            }
            let i = label.index(0, y, x);
            label.data[i] = if occ1 != occ2 { 1.0 } else { 0.0 };
        }
    }
    SyntheticSample { pair: SamplePair { id: format!("synth_{index:05}"), reference, comparison, label }, shapes }
}

/// File name of sample `index`.
pub fn sample_file(index: usize) -> String {
    format!("synth_{index:05}.png")
}

/// Writes `spec.count` samples to `root/<split>/{A,B,label}` plus a
/// `shapes.json` describing every shape. `multiple` is the cumulative stride
/// the patch size must respect.
pub fn generate_synthetic(spec: &SyntheticSpec, root: &Path, split: Split, multiple: usize) -> Result<()> {
    spec.validate(multiple)?;
    let dir = root.join(split.as_str());
    for sub in crate::data::dataset::SUBDIRS {
        std::fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let mut index: BTreeMap<String, Vec<SyntheticShape>> = BTreeMap::new();
    for i in 0..spec.count {
        let s = generate_sample(spec, split, i);
        let file = sample_file(i);
        save_rgb(&s.pair.reference, &dir.join("A").join(&file))?;
        save_rgb(&s.pair.comparison, &dir.join("B").join(&file))?;
        save_mask(&s.pair.label, &dir.join("label").join(&file))?;
        index.insert(s.pair.id.clone(), s.shapes);
    }
    let json = serde_json::to_string_pretty(&index).expect("shapes serialize");
    let path = dir.join("shapes.json");
    std::fs::write(&path, json).map_err(|e| Error::io(path, e))
}
