use crate::error::{Error, Result};
use crate::tensor::{Backward, Element, Tensor};

/// Default variance floor.
pub const INSTANCE_NORM_EPS: f64 = 1e-5;

struct InstanceNormBackward<T> {
    plane: usize,
    normalized: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Element> Backward<T> for InstanceNormBackward<T> {
    fn name(&self) -> &'static str {
        "instance_norm"
    }

    fn backward(&self, go: &[T], _inputs: &[Tensor<T>], grads: &mut [Option<Vec<T>>]) {
        let m = T::lit(self.plane as f64);
        let mut gx = vec![T::zero(); go.len()];
        for (slice, &inv) in self.inv_std.iter().enumerate() {
            let r = slice * self.plane..(slice + 1) * self.plane;
            let (g, xh) = (&go[r.clone()], &self.normalized[r.clone()]);
            let mean_g = g.iter().copied().sum::<T>() / m;
            let mean_gx = g.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() / m;
            for ((d, &gi), &xi) in gx[r].iter_mut().zip(g).zip(xh) {
                *d = inv * (gi - mean_g - xi * mean_gx);
            }
        }
        grads[0] = Some(gx);
    }
}

/// Per-(sample, channel) standardization over the spatial axes, without an
/// affine transform: `(x - mean) / sqrt(var + eps)` with the biased variance.
pub fn instance_norm<T: Element>(input: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    let shape = input.shape();
    let plane = shape.plane();
    if plane == 0 {
        return Err(Error::dim("instance_norm", "empty spatial extent"));
    }
    if eps <= 0.0 {
        return Err(Error::Config(format!("instance_norm eps must be positive, got {eps}")));
    }
    let m = T::lit(plane as f64);
    let eps = T::lit(eps);
    let x = input.data();
    let mut normalized = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(shape.n * shape.c);
    for (xs, out) in x.chunks_exact(plane).zip(normalized.chunks_exact_mut(plane)) {
        let mean = xs.iter().copied().sum::<T>() / m;
        let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / m;
        let inv = T::one() / (var + eps).sqrt();
        for (o, &v) in out.iter_mut().zip(xs) {
            *o = (v - mean) * inv;
        }
        inv_std.push(inv);
    }
    let data = normalized.clone();
    Ok(Tensor::from_op(shape, data, vec![input.clone()], InstanceNormBackward { plane, normalized, inv_std }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_channel_maps_to_zero() {
        let x = Tensor::<f64>::full([2, 3, 4, 4], 7.5);
        let y = instance_norm(&x, INSTANCE_NORM_EPS).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_checkerboard_is_nearly_fixed() {
        let data: Vec<f64> = (0..16).map(|i| if (i + i / 4) % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let x = Tensor::from_vec([1, 1, 4, 4], data.clone()).unwrap();
        let y = instance_norm(&x, INSTANCE_NORM_EPS).unwrap();
        let scale = 1.0 / (1.0 + INSTANCE_NORM_EPS).sqrt();
        for (a, b) in y.data().iter().zip(&data) {
            assert!((a - b * scale).abs() < 1e-15);
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn output_statistics() {
        let data: Vec<f64> = (0..2 * 3 * 25).map(|i| ((i * 37 % 11) as f64).sin() * 3.0 + 1.0).collect();
        let x = Tensor::from_vec([2, 3, 5, 5], data).unwrap();
        let y = instance_norm(&x, INSTANCE_NORM_EPS).unwrap();
        for slice in y.data().chunks(25) {
            let mean = slice.iter().sum::<f64>() / 25.0;
            let var = slice.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 25.0;
            assert!(mean.abs() <= 1e-6);
            assert!((var - 1.0).abs() <= 1e-4);
        }
    }
}
