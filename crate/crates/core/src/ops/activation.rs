use crate::error::{Error, Result};
use crate::tensor::{Backward, Element, Tensor};

struct PreluBackward;

impl<T: Element> Backward<T> for PreluBackward {
    fn name(&self) -> &'static str {
        "prelu"
    }

    fn backward(&self, go: &[T], inputs: &[Tensor<T>], grads: &mut [Option<Vec<T>>]) {
        let (input, slope) = (&inputs[0], &inputs[1]);
        let shape = input.shape();
        let plane = shape.plane();
        let shared = slope.numel() == 1;
        let a = slope.data();
        let x = input.data();

        if input.requires_grad() {
            let mut gx = vec![T::zero(); x.len()];
            for (i, ((d, &xi), &g)) in gx.iter_mut().zip(x).zip(go).enumerate() {
                let c = if shared { 0 } else { (i / plane) % shape.c };
                *d = if xi >= T::zero() { g } else { a[c] * g };
            }
            grads[0] = Some(gx);
        }
        if slope.requires_grad() {
            let mut ga = vec![T::zero(); a.len()];
            for (i, (&xi, &g)) in x.iter().zip(go).enumerate() {
                if xi < T::zero() {
                    let c = if shared { 0 } else { (i / plane) % shape.c };
                    ga[c] += g * xi;
                }
            }
            grads[1] = Some(ga);
        }
    }
}

/// `x` for `x >= 0`, `a_c · x` otherwise. `slope` holds one value shared by
/// all channels or one per channel (`1×C×1×1`).
pub fn prelu<T: Element>(input: &Tensor<T>, slope: &Tensor<T>) -> Result<Tensor<T>> {
    let shape = input.shape();
    let k = slope.numel();
    if k != 1 && k != shape.c {
        return Err(Error::Config(format!("prelu slope count must be 1 or {} (channels), got {k}", shape.c)));
    }
    let plane = shape.plane();
    let a = slope.data();
    let forced = crate::tensor::branch_decisions(input.data());
    let out = input
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let positive = match &forced {
                Some(d) => d[i],
                None => x >= T::zero(),
            };
            if positive {
                x
            } else {
                let c = if k == 1 { 0 } else { (i / plane) % shape.c };
                a[c] * x
            }
        })
        .collect();
    Ok(Tensor::from_op(shape, out, vec![input.clone(), slope.clone()], PreluBackward))
}

struct SigmoidBackward<T> {
    output: Vec<T>,
}

impl<T: Element> Backward<T> for SigmoidBackward<T> {
    fn name(&self) -> &'static str {
        "sigmoid"
    }

    fn backward(&self, go: &[T], _inputs: &[Tensor<T>], grads: &mut [Option<Vec<T>>]) {
        grads[0] = Some(go.iter().zip(&self.output).map(|(&g, &s)| g * s * (T::one() - s)).collect());
    }
}

#[inline]
fn stable_sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Element>(input: &Tensor<T>) -> Tensor<T> {
    let output: Vec<T> = input.data().iter().map(|&x| stable_sigmoid(x)).collect();
    Tensor::from_op(input.shape(), output.clone(), vec![input.clone()], SigmoidBackward { output })
}
