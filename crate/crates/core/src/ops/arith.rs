use crate::error::Result;
use crate::tensor::{ensure_same_shape, Backward, Element, Shape, Tensor};

struct AddBackward;

impl<T: Element> Backward<T> for AddBackward {
    fn name(&self) -> &'static str {
        "add"
    }

    fn backward(&self, go: &[T], _inputs: &[Tensor<T>], grads: &mut [Option<Vec<T>>]) {
        grads[0] = Some(go.to_vec());
        grads[1] = Some(go.to_vec());
    }
}

pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    ensure_same_shape("add", a, b)?;
    let out = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Ok(Tensor::from_op(a.shape(), out, vec![a.clone(), b.clone()], AddBackward))
}

struct SubBackward;

impl<T: Element> Backward<T> for SubBackward {
    fn name(&self) -> &'static str {
        "sub"
    }

    fn backward(&self, go: &[T], _inputs: &[Tensor<T>], grads: &mut [Option<Vec<T>>]) {
        grads[0] = Some(go.to_vec());
        grads[1] = Some(go.iter().map(|&g| -g).collect());
    }
}

pub fn sub<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    ensure_same_shape("sub", a, b)?;
    let out = a.data().iter().zip(b.data()).map(|(&x, &y)| x - y).collect();
    Ok(Tensor::from_op(a.shape(), out, vec![a.clone(), b.clone()], SubBackward))
}

struct MulBackward;

impl<T: Element> Backward<T> for MulBackward {
    fn name(&self) -> &'static str {
        "mul"
    }

    fn backward(&self, go: &[T], inputs: &[Tensor<T>], grads: &mut [Option<Vec<T>>]) {
        let (a, b) = (inputs[0].data(), inputs[1].data());
        grads[0] = Some(go.iter().zip(b).map(|(&g, &y)| g * y).collect());
        grads[1] = Some(go.iter().zip(a).map(|(&g, &x)| g * x).collect());
    }
}

/// Elementwise product of equally shaped tensors.
pub fn mul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    ensure_same_shape("mul", a, b)?;
    let out = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Ok(Tensor::from_op(a.shape(), out, vec![a.clone(), b.clone()], MulBackward))
}

struct ScaleBackward<T> {
    k: T,
}

impl<T: Element> Backward<T> for ScaleBackward<T> {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(&self, go: &[T], _inputs: &[Tensor<T>], grads: &mut [Option<Vec<T>>]) {
        grads[0] = Some(go.iter().map(|&g| g * self.k).collect());
    }
}

pub fn scale<T: Element>(a: &Tensor<T>, k: f64) -> Tensor<T> {
    let k = T::lit(k);
    let out = a.data().iter().map(|&x| x * k).collect();
    Tensor::from_op(a.shape(), out, vec![a.clone()], ScaleBackward { k })
}

struct SumBackward;

impl<T: Element> Backward<T> for SumBackward {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(&self, go: &[T], inputs: &[Tensor<T>], grads: &mut [Option<Vec<T>>]) {
        grads[0] = Some(vec![go[0]; inputs[0].numel()]);
    }
}

/// Sum of all elements as a `1×1×1×1` tensor.
pub fn sum<T: Element>(a: &Tensor<T>) -> Tensor<T> {
    let total = a.data().iter().copied().sum::<T>();
    Tensor::from_op(Shape::scalar(), vec![total], vec![a.clone()], SumBackward)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_forward() {
        let a = Tensor::<f64>::from_vec([1, 1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let b = Tensor::from_vec([1, 1, 1, 3], vec![0.5, -1.0, 2.0]).unwrap();
        assert_eq!(add(&a, &b).unwrap().data(), &[1.5, 1.0, 5.0]);
        assert_eq!(sub(&a, &b).unwrap().data(), &[0.5, 3.0, 1.0]);
        assert_eq!(mul(&a, &b).unwrap().data(), &[0.5, -2.0, 6.0]);
        assert_eq!(scale(&a, 2.0).data(), &[2.0, 4.0, 6.0]);
        assert_eq!(sum(&a).item().unwrap(), 6.0);
        assert!(add(&a, &Tensor::zeros([1, 1, 1, 2])).is_err());
    }
}
