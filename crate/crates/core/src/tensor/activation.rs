use super::{to_f64, Scalar, Tensor};
use crate::error::{Error, Result};

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| v.max(T::zero()))
}

/// Passes `d_out` where the forward input (or output) was positive; the
/// subgradient at zero is zero.
pub fn relu_backward<T: Scalar>(forward: &Tensor<T>, d_out: &Tensor<T>) -> Result<Tensor<T>> {
    if forward.dims() != d_out.dims() {
        return Err(Error::shape(forward.dims(), d_out.dims()));
    }
    let data = forward
        .data()
        .iter()
        .zip(d_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(forward.dims().to_vec(), data)
}

/// `(outer, len, inner)` view of the softmax axis: the whole tensor for rank
/// 1, otherwise the channel axis (dim 1).
fn softmax_layout(dims: &[usize]) -> (usize, usize, usize) {
    match dims {
        [len] => (1, *len, 1),
        [outer, len, rest @ ..] => (*outer, *len, rest.iter().product()),
        [] => (0, 0, 0),
    }
}

/// Softmax over the logit axis, evaluated independently at every batch
/// entry and spatial location. Max-subtracted so extreme logits stay finite.
pub fn softmax<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let (outer, len, inner) = softmax_layout(input.dims());
    let x = input.data();
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        let base = o * len * inner;
        for i in 0..inner {
            let at = |j: usize| base + j * inner + i;
            let max = (0..len).map(|j| x[at(j)]).fold(T::neg_infinity(), T::max);
            // Normaliser accumulated in f64 so single-precision kernels
            // still sum to one within a few ulps.
            let mut sum = 0.0f64;
            for j in 0..len {
                let e = (x[at(j)] - max).exp();
                out[at(j)] = e;
                sum += to_f64(e);
            }
            for j in 0..len {
                out[at(j)] = T::lit(to_f64(out[at(j)]) / sum);
            }
        }
    }
    Tensor::new(input.dims().to_vec(), out).expect("same extents as input")
}

/// Jacobian-vector product of softmax given its output `y`:
/// `dx = y * (dy - sum(dy * y))`.
pub fn softmax_backward<T: Scalar>(output: &Tensor<T>, d_out: &Tensor<T>) -> Result<Tensor<T>> {
    if output.dims() != d_out.dims() {
        return Err(Error::shape(output.dims(), d_out.dims()));
    }
    let (outer, len, inner) = softmax_layout(output.dims());
    let y = output.data();
    let dy = d_out.data();
    let mut dx = vec![T::zero(); y.len()];
    for o in 0..outer {
        let base = o * len * inner;
        for i in 0..inner {
            let at = |j: usize| base + j * inner + i;
            let dot: T = (0..len).map(|j| y[at(j)] * dy[at(j)]).sum();
            for j in 0..len {
                dx[at(j)] = y[at(j)] * (dy[at(j)] - dot);
            }
        }
    }
    Tensor::new(output.dims().to_vec(), dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vec1(v: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn relu_sign_cases() {
        let x = vec1(&[-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&x, &vec1(&[1.0, 1.0, 1.0])).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn softmax_uniform_for_zero_logits() {
        let y = softmax(&Tensor::<f64>::zeros(&[3362]));
        for &v in y.data() {
            assert!((v - 1.0 / 3362.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_peaked() {
        let y = softmax(&vec1(&[10.0, 0.0, 0.0]));
        let e = 10f64.exp();
        let expected = [e / (e + 2.0), 1.0 / (e + 2.0), 1.0 / (e + 2.0)];
        for (a, b) in y.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((y.data()[0] - 0.99991).abs() < 1e-5);
        assert!((y.data()[1] - 0.000045).abs() < 1e-6);
    }

    #[test]
    fn softmax_per_location_over_channels() {
        // [n=1, c=2, h=1, w=2]: each location normalises independently
        let x = Tensor::new(vec![1, 2, 1, 2], vec![0.0f64, 5.0, 0.0, -5.0]).unwrap();
        let y = softmax(&x);
        assert!((y.data()[0] - 0.5).abs() < 1e-15);
        assert!((y.data()[2] - 0.5).abs() < 1e-15);
        assert!((y.data()[1] + y.data()[3] - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn relu_non_negative(v in prop::collection::vec(-1e3f64..1e3, 1..64)) {
            prop_assert!(relu(&vec1(&v)).data().iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn softmax_normalised_for_extreme_logits(v in prop::collection::vec(-1e4f64..1e4, 1..512)) {
            let y = softmax(&vec1(&v));
            prop_assert!(y.data().iter().all(|&p| p >= 0.0 && p.is_finite()));
            prop_assert!((y.sum() - 1.0).abs() < 1e-6);
        }

        #[test]
        fn softmax_normalised_single_precision(v in prop::collection::vec(-1e4f32..1e4, 1..512)) {
            let t = Tensor::new(vec![v.len()], v).unwrap();
            let y = softmax(&t);
            prop_assert!(y.data().iter().all(|&p| p >= 0.0));
            let total: f64 = y.data().iter().map(|&p| p as f64).sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
        }
    }
}
