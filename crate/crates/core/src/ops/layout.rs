//! Channel rearrangement, broadcast gating and resampling.

use crate::error::{Error, Result};
use crate::tensor::{ensure_same_shape, Backward, Element, Shape, Tensor};

struct InterleaveBackward;

impl<T: Element> Backward<T> for InterleaveBackward {
    fn name(&self) -> &'static str {
        "interleave_concat"
    }

    fn backward(&self, go: &[T], inputs: &[Tensor<T>], grads: &mut [Option<Vec<T>>]) {
        let s = inputs[0].shape();
        let (gx, gy) = split_interleaved(go, s);
        grads[0] = Some(gx);
        grads[1] = Some(gy);
    }
}

fn split_interleaved<T: Element>(z: &[T], half: Shape) -> (Vec<T>, Vec<T>) {
    let plane = half.plane();
    let mut x = Vec::with_capacity(half.numel());
    let mut y = Vec::with_capacity(half.numel());
    for pair in z.chunks_exact(2 * plane) {
        x.extend_from_slice(&pair[..plane]);
        y.extend_from_slice(&pair[plane..]);
    }
    (x, y)
}

/// Stacks `X` and `Y` along channels so that output channel `2c` is `X[c]`
/// and `2c + 1` is `Y[c]`.
pub fn interleave_concat<T: Element>(x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    ensure_same_shape("interleave_concat", x, y)?;
    let s = x.shape();
    let plane = s.plane();
    let mut out = Vec::with_capacity(2 * s.numel());
    for (xp, yp) in x.data().chunks_exact(plane).zip(y.data().chunks_exact(plane)) {
        out.extend_from_slice(xp);
        out.extend_from_slice(yp);
    }
    Ok(Tensor::from_op(Shape::new(s.n, 2 * s.c, s.h, s.w), out, vec![x.clone(), y.clone()], InterleaveBackward))
}

/// Inverse of [`interleave_concat`]: even channels, odd channels.
pub fn deinterleave<T: Element>(z: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let s = z.shape();
    if !s.c.is_multiple_of(2) {
        return Err(Error::dim("deinterleave", format!("channel count {} is odd", s.c)));
    }
    let half = Shape::new(s.n, s.c / 2, s.h, s.w);
    let (x, y) = split_interleaved(z.data(), half);
    Ok((Tensor::from_vec(half, x)?, Tensor::from_vec(half, y)?))
}

struct ConcatBackward;

impl<T: Element> Backward<T> for ConcatBackward {
    fn name(&self) -> &'static str {
        "concat_channels"
    }

    fn backward(&self, go: &[T], inputs: &[Tensor<T>], grads: &mut [Option<Vec<T>>]) {
        let s = inputs[0].shape();
        let block = s.c * s.plane();
        let mut gx = Vec::with_capacity(s.numel());
        let mut gy = Vec::with_capacity(s.numel());
        for sample in go.chunks_exact(2 * block) {
            gx.extend_from_slice(&sample[..block]);
            gy.extend_from_slice(&sample[block..]);
        }
        grads[0] = Some(gx);
        grads[1] = Some(gy);
    }
}

/// Block concatenation `[X; Y]` along channels.
pub fn concat_channels<T: Element>(x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    ensure_same_shape("concat_channels", x, y)?;
    let s = x.shape();
    let block = s.c * s.plane();
    let mut out = Vec::with_capacity(2 * s.numel());
    for (xb, yb) in x.data().chunks_exact(block).zip(y.data().chunks_exact(block)) {
        out.extend_from_slice(xb);
        out.extend_from_slice(yb);
    }
    Ok(Tensor::from_op(Shape::new(s.n, 2 * s.c, s.h, s.w), out, vec![x.clone(), y.clone()], ConcatBackward))
}

struct HadamardBackward;

impl<T: Element> Backward<T> for HadamardBackward {
    fn name(&self) -> &'static str {
        "hadamard_mask"
    }

    fn backward(&self, go: &[T], inputs: &[Tensor<T>], grads: &mut [Option<Vec<T>>]) {
        let (u, m) = (&inputs[0], &inputs[1]);
        let s = u.shape();
        let plane = s.plane();
        if u.requires_grad() {
            let mut gu = vec![T::zero(); go.len()];
            for n in 0..s.n {
                let mp = &m.data()[n * plane..(n + 1) * plane];
                for c in 0..s.c {
                    let o = (n * s.c + c) * plane;
                    for ((d, &g), &mv) in gu[o..o + plane].iter_mut().zip(&go[o..o + plane]).zip(mp) {
                        *d = g * mv;
                    }
                }
            }
            grads[0] = Some(gu);
        }
        if m.requires_grad() {
            let mut gm = vec![T::zero(); m.numel()];
            for n in 0..s.n {
                let dst = &mut gm[n * plane..(n + 1) * plane];
                for c in 0..s.c {
                    let o = (n * s.c + c) * plane;
                    for ((d, &g), &uv) in dst.iter_mut().zip(&go[o..o + plane]).zip(&u.data()[o..o + plane]) {
                        *d += g * uv;
                    }
                }
            }
            grads[1] = Some(gm);
        }
    }
}

/// Elementwise product of `U` (`N×C×H×W`) with a single-channel mask
/// (`N×1×H×W`) broadcast over channels.
pub fn hadamard_mask<T: Element>(u: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
    let (s, ms) = (u.shape(), mask.shape());
    if ms.c != 1 || ms.n != s.n || ms.h != s.h || ms.w != s.w {
        return Err(Error::dim("hadamard_mask", format!("mask must be {}×1×{}×{}, got {ms}", s.n, s.h, s.w)));
    }
    let plane = s.plane();
    let mut out = Vec::with_capacity(s.numel());
    for n in 0..s.n {
        let mp = &mask.data()[n * plane..(n + 1) * plane];
        for c in 0..s.c {
            let o = (n * s.c + c) * plane;
            out.extend(u.data()[o..o + plane].iter().zip(mp).map(|(&a, &b)| a * b));
        }
    }
    Ok(Tensor::from_op(s, out, vec![u.clone(), mask.clone()], HadamardBackward))
}

/// Interpolation taps along one axis: for each output index the two source
/// indices and the weight of the second.
#[derive(Debug, Clone)]
struct Taps {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<f64>,
}

/// Half-pixel-centred sampling positions (no corner alignment), clamped at
/// the borders.
fn taps(in_len: usize, out_len: usize) -> Taps {
    let scale = in_len as f64 / out_len as f64;
    let mut t =
        Taps { lo: Vec::with_capacity(out_len), hi: Vec::with_capacity(out_len), frac: Vec::with_capacity(out_len) };
    for d in 0..out_len {
        let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
        let lo = (src.floor() as usize).min(in_len - 1);
        let hi = (lo + 1).min(in_len - 1);
        t.lo.push(lo);
        t.hi.push(hi);
        t.frac.push(src - lo as f64);
    }
    t
}

struct UpsampleBackward {
    rows: Taps,
    cols: Taps,
}

impl<T: Element> Backward<T> for UpsampleBackward {
    fn name(&self) -> &'static str {
        "bilinear_upsample"
    }

    fn backward(&self, go: &[T], inputs: &[Tensor<T>], grads: &mut [Option<Vec<T>>]) {
        let s = inputs[0].shape();
        let (oh, ow) = (self.rows.lo.len(), self.cols.lo.len());
        let mut gx = vec![T::zero(); s.numel()];
        for (gp, dst) in go.chunks_exact(oh * ow).zip(gx.chunks_exact_mut(s.plane())) {
            for oy in 0..oh {
                let (y0, y1, fy) = (self.rows.lo[oy], self.rows.hi[oy], T::lit(self.rows.frac[oy]));
                for ox in 0..ow {
                    let (x0, x1, fx) = (self.cols.lo[ox], self.cols.hi[ox], T::lit(self.cols.frac[ox]));
                    let g = gp[oy * ow + ox];
                    let top = g * (T::one() - fy);
                    let bottom = g * fy;
                    dst[y0 * s.w + x0] += top * (T::one() - fx);
                    dst[y0 * s.w + x1] += top * fx;
                    dst[y1 * s.w + x0] += bottom * (T::one() - fx);
                    dst[y1 * s.w + x1] += bottom * fx;
                }
            }
        }
        grads[0] = Some(gx);
    }
}

/// Bilinear resize to a larger (or equal) spatial size.
pub fn bilinear_upsample<T: Element>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    if out_h < s.h || out_w < s.w {
        return Err(Error::Config(format!(
            "bilinear_upsample only enlarges: requested {out_h}×{out_w} from {}×{}",
            s.h, s.w
        )));
    }
    if s.h == 0 || s.w == 0 {
        return Err(Error::dim("bilinear_upsample", "empty spatial extent"));
    }
    let rows = taps(s.h, out_h);
    let cols = taps(s.w, out_w);
    let mut out = Vec::with_capacity(s.n * s.c * out_h * out_w);
    for src in input.data().chunks_exact(s.plane()) {
        for oy in 0..out_h {
            let (y0, y1, fy) = (rows.lo[oy], rows.hi[oy], T::lit(rows.frac[oy]));
            for ox in 0..out_w {
                let (x0, x1, fx) = (cols.lo[ox], cols.hi[ox], T::lit(cols.frac[ox]));
                let top = src[y0 * s.w + x0] * (T::one() - fx) + src[y0 * s.w + x1] * fx;
                let bottom = src[y1 * s.w + x0] * (T::one() - fx) + src[y1 * s.w + x1] * fx;
                out.push(top * (T::one() - fy) + bottom * fy);
            }
        }
    }
    Ok(Tensor::from_op(Shape::new(s.n, s.c, out_h, out_w), out, vec![input.clone()], UpsampleBackward { rows, cols }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn planes(n: usize, c: usize, base: f64) -> Tensor<f64> {
        let data = (0..n * c * 4).map(|i| base + (i / 4) as f64).collect();
        Tensor::from_vec([n, c, 2, 2], data).unwrap()
    }

    #[test]
    fn interleave_orders_pairs() {
        let x = planes(1, 2, 0.0); // channels x0=0, x1=1
        let y = planes(1, 2, 10.0); // channels y0=10, y1=11
        let z = interleave_concat(&x, &y).unwrap();
        let firsts: Vec<f64> = z.data().chunks(4).map(|p| p[0]).collect();
        assert_eq!(firsts, vec![0.0, 10.0, 1.0, 11.0]);

        let z1 = interleave_concat(&planes(1, 1, 0.0), &planes(1, 1, 5.0)).unwrap();
        assert_eq!(z1.shape().c, 2);
        assert_eq!(z1.data().chunks(4).map(|p| p[0]).collect::<Vec<_>>(), vec![0.0, 5.0]);
    }

    #[test]
    fn interleave_rejects_mismatch() {
        assert!(interleave_concat(&planes(1, 2, 0.0), &planes(1, 3, 0.0)).is_err());
    }

    #[test]
    fn concat_stacks_blocks() {
        let z = concat_channels(&planes(2, 2, 0.0), &planes(2, 2, 10.0)).unwrap();
        let firsts: Vec<f64> = z.data().chunks(4).map(|p| p[0]).collect();
        assert_eq!(firsts, vec![0.0, 1.0, 10.0, 11.0, 2.0, 3.0, 12.0, 13.0]);
    }

    #[test]
    fn hadamard_identity_and_zero() {
        let u = planes(2, 3, 1.0);
        let ones = Tensor::ones([2, 1, 2, 2]);
        assert_eq!(hadamard_mask(&u, &ones).unwrap().data(), u.data());
        let zeros = Tensor::zeros([2, 1, 2, 2]);
        assert!(hadamard_mask(&u, &zeros).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(hadamard_mask(&u, &Tensor::ones([2, 1, 2, 3])).is_err());
    }

    #[test]
    fn upsample_constant_stays_constant() {
        let x = Tensor::<f64>::full([1, 1, 2, 2], 3.0);
        let y = bilinear_upsample(&x, 4, 4).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 4, 4));
        assert!(y.data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn upsample_rejects_shrinking() {
        let x = Tensor::<f64>::zeros([1, 1, 4, 4]);
        assert!(matches!(bilinear_upsample(&x, 2, 4), Err(Error::Config(_))));
    }

    #[test]
    fn upsample_known_row() {
        // 1-D profile [0, 1] → [0, 0.25, 0.75, 1] under half-pixel sampling
        let x = Tensor::<f64>::from_vec([1, 1, 1, 2], vec![0.0, 1.0]).unwrap();
        let y = bilinear_upsample(&x, 1, 4).unwrap();
        assert_eq!(y.data(), &[0.0, 0.25, 0.75, 1.0]);
    }
}
