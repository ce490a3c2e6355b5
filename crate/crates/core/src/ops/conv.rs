//! Grouped 2-D cross-correlation and the depthwise-separable composition.
//!
//! Kernels are applied without flipping. Weights are laid out as
//! `C_out × (C_in / groups) × k_h × k_w`; the bias, when present, is
//! `1 × C_out × 1 × 1`.

use crate::error::{Error, Result};
use crate::tensor::{Backward, Element, Shape, Tensor};

#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
    cin_g: usize,
    cout_g: usize,
}

impl Geometry {
    fn out_shape(&self) -> Shape {
        Shape::new(self.n, self.cout, self.oh, self.ow)
    }

    fn weight_index(&self, oc: usize, icg: usize, ky: usize, kx: usize) -> usize {
        ((oc * self.cin_g + icg) * self.kh + ky) * self.kw + kx
    }
}

/// Output indices `o` with `0 <= o*stride + k - pad < len`.
#[inline]
fn valid_range(k: usize, pad: usize, stride: usize, len: usize, out_len: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    if len + pad <= k {
        return (0, 0);
    }
    let hi = ((len - 1 + pad - k) / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

fn geometry<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<Geometry> {
    let xs = input.shape();
    let ws = weight.shape();
    if stride == 0 {
        return Err(Error::Config("conv2d stride must be at least 1".into()));
    }
    if groups == 0 || !xs.c.is_multiple_of(groups) || !ws.n.is_multiple_of(groups) {
        return Err(Error::Config(format!(
            "conv2d groups={groups} must divide input channels ({}) and output channels ({})",
            xs.c, ws.n
        )));
    }
    let cin_g = xs.c / groups;
    if ws.c != cin_g {
        return Err(Error::dim(
            "conv2d",
            format!("weight axis 1 is {} but input channels / groups = {}/{} = {cin_g}", ws.c, xs.c, groups),
        ));
    }
    if let Some(b) = bias {
        if b.shape() != Shape::new(1, ws.n, 1, 1) {
            return Err(Error::dim("conv2d", format!("bias must be 1×{}×1×1, got {}", ws.n, b.shape())));
        }
    }
    if xs.h + 2 * padding < ws.h || xs.w + 2 * padding < ws.w {
        return Err(Error::dim(
            "conv2d",
            format!(
                "kernel {}×{} larger than padded input {}×{} (height, width)",
                ws.h,
                ws.w,
                xs.h + 2 * padding,
                xs.w + 2 * padding
            ),
        ));
    }
    Ok(Geometry {
        n: xs.n,
        cin: xs.c,
        h: xs.h,
        w: xs.w,
        cout: ws.n,
        kh: ws.h,
        kw: ws.w,
        oh: (xs.h + 2 * padding - ws.h) / stride + 1,
        ow: (xs.w + 2 * padding - ws.w) / stride + 1,
        stride,
        pad: padding,
        cin_g,
        cout_g: ws.n / groups,
    })
}

fn forward_kernel<T: Element>(g: &Geometry, x: &[T], wt: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (in_plane, out_plane) = (g.h * g.w, g.oh * g.ow);
    let mut out = vec![T::zero(); g.n * g.cout * out_plane];
    for n in 0..g.n {
        for oc in 0..g.cout {
            let group = oc / g.cout_g;
            let o0 = (n * g.cout + oc) * out_plane;
            let op = &mut out[o0..o0 + out_plane];
            if let Some(b) = bias {
                op.fill(b[oc]);
            }
            for icg in 0..g.cin_g {
                let ic = group * g.cin_g + icg;
                let i0 = (n * g.cin + ic) * in_plane;
                let ip = &x[i0..i0 + in_plane];
                for ky in 0..g.kh {
                    let (oy0, oy1) = valid_range(ky, g.pad, g.stride, g.h, g.oh);
                    for kx in 0..g.kw {
                        let (ox0, ox1) = valid_range(kx, g.pad, g.stride, g.w, g.ow);
                        if ox0 >= ox1 {
                            continue;
                        }
                        let wv = wt[g.weight_index(oc, icg, ky, kx)];
                        let len = ox1 - ox0;
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + ky - g.pad;
                            let ib = iy * g.w + ox0 * g.stride + kx - g.pad;
                            let orow = &mut op[oy * g.ow + ox0..oy * g.ow + ox1];
                            if g.stride == 1 {
                                for (o, &i) in orow.iter_mut().zip(&ip[ib..ib + len]) {
                                    *o += wv * i;
                                }
                            } else {
                                for (j, o) in orow.iter_mut().enumerate() {
                                    *o += wv * ip[ib + j * g.stride];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

struct Conv2dBackward {
    geom: Geometry,
}

impl<T: Element> Backward<T> for Conv2dBackward {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, go: &[T], inputs: &[Tensor<T>], grads: &mut [Option<Vec<T>>]) {
        let g = &self.geom;
        let x = inputs[0].data();
        let wt = inputs[1].data();
        let need_x = inputs[0].requires_grad();
        let need_w = inputs[1].requires_grad();
        let (in_plane, out_plane) = (g.h * g.w, g.oh * g.ow);

        let mut gx = need_x.then(|| vec![T::zero(); x.len()]);
        let mut gw = need_w.then(|| vec![T::zero(); wt.len()]);

        for n in 0..g.n {
            for oc in 0..g.cout {
                let group = oc / g.cout_g;
                let o0 = (n * g.cout + oc) * out_plane;
                let gop = &go[o0..o0 + out_plane];
                for icg in 0..g.cin_g {
                    let ic = group * g.cin_g + icg;
                    let i0 = (n * g.cin + ic) * in_plane;
                    let ip = &x[i0..i0 + in_plane];
                    for ky in 0..g.kh {
                        let (oy0, oy1) = valid_range(ky, g.pad, g.stride, g.h, g.oh);
                        for kx in 0..g.kw {
                            let (ox0, ox1) = valid_range(kx, g.pad, g.stride, g.w, g.ow);
                            if ox0 >= ox1 {
                                continue;
                            }
                            let widx = g.weight_index(oc, icg, ky, kx);
                            let wv = wt[widx];
                            let len = ox1 - ox0;
                            let mut acc = T::zero();
                            for oy in oy0..oy1 {
                                let iy = oy * g.stride + ky - g.pad;
                                let ib = iy * g.w + ox0 * g.stride + kx - g.pad;
                                let grow = &gop[oy * g.ow + ox0..oy * g.ow + ox1];
                                if g.stride == 1 {
                                    if let Some(gx) = gx.as_mut() {
                                        let dst = &mut gx[i0 + ib..i0 + ib + len];
                                        for (d, &v) in dst.iter_mut().zip(grow) {
                                            *d += wv * v;
                                        }
                                    }
                                    if need_w {
                                        for (&v, &i) in grow.iter().zip(&ip[ib..ib + len]) {
                                            acc += v * i;
                                        }
                                    }
                                } else {
                                    if let Some(gx) = gx.as_mut() {
                                        for (j, &v) in grow.iter().enumerate() {
                                            gx[i0 + ib + j * g.stride] += wv * v;
                                        }
                                    }
                                    if need_w {
                                        for (j, &v) in grow.iter().enumerate() {
                                            acc += v * ip[ib + j * g.stride];
                                        }
                                    }
                                }
                            }
                            if let Some(gw) = gw.as_mut() {
                                gw[widx] += acc;
                            }
                        }
                    }
                }
            }
        }

        grads[0] = gx;
        grads[1] = gw;
        if inputs.len() > 2 && inputs[2].requires_grad() {
            let mut gb = vec![T::zero(); g.cout];
            for n in 0..g.n {
                for (oc, b) in gb.iter_mut().enumerate() {
                    let o0 = (n * g.cout + oc) * out_plane;
                    *b += go[o0..o0 + out_plane].iter().copied().sum::<T>();
                }
            }
            grads[2] = Some(gb);
        }
    }
}

/// Grouped 2-D convolution (cross-correlation) with zero padding.
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<Tensor<T>> {
    let geom = geometry(input, weight, bias, stride, padding, groups)?;
    let out = forward_kernel(&geom, input.data(), weight.data(), bias.map(|b| b.data()));
    let mut inputs = vec![input.clone(), weight.clone()];
    if let Some(b) = bias {
        inputs.push(b.clone());
    }
    Ok(Tensor::from_op(geom.out_shape(), out, inputs, Conv2dBackward { geom }))
}

/// Per-channel spatial convolution (`groups = C_in`, padding `k/2`) followed
/// by a `1×1` channel-mixing convolution carrying the bias.
pub fn depthwise_separable_conv<T: Element>(
    input: &Tensor<T>,
    depthwise_weight: &Tensor<T>,
    pointwise_weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let c = input.shape().c;
    let dws = depthwise_weight.shape();
    if dws.n != c || dws.c != 1 {
        return Err(Error::dim("depthwise_separable_conv", format!("depthwise weight must be {c}×1×k×k, got {dws}")));
    }
    let pws = pointwise_weight.shape();
    if pws.c != c || pws.h != 1 || pws.w != 1 {
        return Err(Error::dim(
            "depthwise_separable_conv",
            format!("pointwise weight must be C_out×{c}×1×1, got {pws}"),
        ));
    }
    let spatial = conv2d(input, depthwise_weight, None, 1, dws.h / 2, c)?;
    conv2d(&spatial, pointwise_weight, bias, 1, 0, 1)
}
