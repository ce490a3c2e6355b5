use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Channel-major `C×H×W` image with `f32` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::dim(
                "Image::new",
                format!("{channels}×{height}×{width} needs {} samples, got {}", channels * height * width, data.len()),
            ));
        }
        Ok(Image { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Image { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(c, y, x)]
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// `1×C×H×W` tensor.
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        Tensor::from_vec(
            [1, self.channels, self.height, self.width],
            self.data.iter().map(|&v| T::lit(v as f64)).collect(),
        )
        .expect("sizes agree")
    }

    /// Image `n` of a batched tensor.
    pub fn from_tensor<T: Element>(t: &Tensor<T>, n: usize) -> Image {
        let s = t.shape();
        let len = s.c * s.plane();
        let data = t.data()[n * len..(n + 1) * len].iter().map(|v| v.as_f64() as f32).collect();
        Image { channels: s.c, height: s.h, width: s.w, data }
    }
}

/// A registered image pair and its binary change label.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub id: String,
    /// Time-1 image, `3×H×W` in `[0, 1]`.
    pub reference: Image,
    /// Time-2 image, same shape.
    pub comparison: Image,
    /// `1×H×W`, values in `{0, 1}`.
    pub label: Image,
}

impl SamplePair {
    pub fn height(&self) -> usize {
        self.label.height
    }

    pub fn width(&self) -> usize {
        self.label.width
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.label.height, self.label.width);
        for (what, img) in [("reference", &self.reference), ("comparison", &self.comparison)] {
            if img.height != h || img.width != w {
                return Err(Error::Validation(format!(
                    "sample '{}': {what} is {}×{}, label is {h}×{w}",
                    self.id, img.height, img.width
                )));
            }
        }
        if self.reference.channels != self.comparison.channels {
            return Err(Error::Validation(format!(
                "sample '{}': images have {} and {} channels",
                self.id, self.reference.channels, self.comparison.channels
            )));
        }
        if self.label.channels != 1 || !self.label.is_binary() {
            return Err(Error::Validation(format!("sample '{}': label must be a single binary channel", self.id)));
        }
        Ok(())
    }
}

/// Stacks samples into `(reference, comparison, label)` batches.
pub fn collate<T: Element>(samples: &[&SamplePair]) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let first = samples.first().ok_or_else(|| Error::Usage("cannot build an empty batch".into()))?;
    let (c, h, w) = (first.reference.channels, first.height(), first.width());
    for s in samples {
        s.validate()?;
        if s.reference.channels != c || s.height() != h || s.width() != w {
            return Err(Error::Validation(format!(
                "sample '{}' is {}×{}×{}, batch started with {c}×{h}×{w} ('{}')",
                s.id,
                s.reference.channels,
                s.height(),
                s.width(),
                first.id
            )));
        }
    }
    let stack = |pick: &dyn Fn(&SamplePair) -> &Image, ch: usize| {
        let data = samples.iter().flat_map(|s| pick(s).data.iter().map(|&v| T::lit(v as f64))).collect();
        Tensor::from_vec([samples.len(), ch, h, w], data)
    };
    Ok((stack(&|s| &s.reference, c)?, stack(&|s| &s.comparison, c)?, stack(&|s| &s.label, 1)?))
}
