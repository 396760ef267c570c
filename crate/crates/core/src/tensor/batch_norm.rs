use super::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::Phase;

pub const BN_EPSILON: f64 = 1e-5;
/// Weight of the previous running statistic in the moving average.
pub const BN_MOMENTUM: f64 = 0.99;

/// Per-channel batch normalisation over batch and spatial positions.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    /// Biased (population) variance estimate.
    pub running_var: Tensor<T>,
    pub momentum: T,
    pub epsilon: T,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    phase: Phase,
    /// Normalised activations before the gamma/beta affine step.
    x_hat: Tensor<T>,
    inv_std: Vec<T>,
}

impl<T> BatchNormCache<T> {
    pub fn normalized(&self) -> &Tensor<T> {
        &self.x_hat
    }
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            momentum: T::lit(BN_MOMENTUM),
            epsilon: T::lit(BN_EPSILON),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, input: &Tensor<T>) -> Result<[usize; 4]> {
        let dims = input.nchw()?;
        if dims[1] != self.channels() {
            let mut expected = input.dims().to_vec();
            let c = expected.len() - 3;
            expected[c] = self.channels();
            return Err(Error::shape(&expected, input.dims()));
        }
        Ok(dims)
    }

    /// Train phase normalises with batch statistics and folds them into the
    /// running estimates; infer phase uses the running estimates only.
    pub fn forward(
        &mut self,
        input: &Tensor<T>,
        phase: Phase,
    ) -> Result<(Tensor<T>, BatchNormCache<T>)> {
        let [n, c, h, w] = self.check(input)?;
        let spatial = h * w;
        let x = input.data();
        let (mean, var) = match phase {
            Phase::Train => {
                if n < 2 {
                    return Err(Error::Config(format!(
                        "batch normalisation needs a batch of at least 2 in train phase, got {n}"
                    )));
                }
                let count = T::from_usize(n * spatial).expect("count");
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let plane = |b: usize| &x[(b * c + ch) * spatial..][..spatial];
                    let m = (0..n).flat_map(plane).copied().sum::<T>() / count;
                    let v = (0..n)
                        .flat_map(plane)
                        .map(|&v| (v - m) * (v - m))
                        .sum::<T>()
                        / count;
                    mean[ch] = m;
                    var[ch] = v;
                }
                let keep = self.momentum;
                let take = T::one() - keep;
                for ch in 0..c {
                    let rm = &mut self.running_mean.data_mut()[ch];
                    *rm = keep * *rm + take * mean[ch];
                    let rv = &mut self.running_var.data_mut()[ch];
                    *rv = keep * *rv + take * var[ch];
                }
                (mean, var)
            }
            Phase::Infer => (
                self.running_mean.data().to_vec(),
                self.running_var.data().to_vec(),
            ),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| (v + self.epsilon).sqrt().recip()).collect();
        let mut x_hat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for b in 0..n {
            for ch in 0..c {
                let at = (b * c + ch) * spatial;
                let (g, be, m, s) = (
                    self.gamma.data()[ch],
                    self.beta.data()[ch],
                    mean[ch],
                    inv_std[ch],
                );
                for i in at..at + spatial {
                    let nx = (x[i] - m) * s;
                    x_hat[i] = nx;
                    out[i] = g * nx + be;
                }
            }
        }
        let dims = input.dims().to_vec();
        Ok((
            Tensor::new(dims.clone(), out)?,
            BatchNormCache {
                phase,
                x_hat: Tensor::new(dims, x_hat)?,
                inv_std,
            },
        ))
    }

    /// Inference-only forward; leaves the running statistics untouched.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.clone().forward(input, Phase::Infer).map(|(out, _)| out)
    }

    /// Returns `(d_input, d_gamma, d_beta)`.
    pub fn backward(
        &self,
        cache: &BatchNormCache<T>,
        d_out: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
        if d_out.dims() != cache.x_hat.dims() {
            return Err(Error::shape(cache.x_hat.dims(), d_out.dims()));
        }
        let [n, c, h, w] = d_out.nchw()?;
        let spatial = h * w;
        let dy = d_out.data();
        let xh = cache.x_hat.data();
        let mut d_gamma = vec![T::zero(); c];
        let mut d_beta = vec![T::zero(); c];
        let mut dx = vec![T::zero(); dy.len()];
        let count = T::from_usize(n * spatial).expect("count");
        for ch in 0..c {
            let idx = |b: usize| (b * c + ch) * spatial..(b * c + ch + 1) * spatial;
            let (mut sum_dy, mut sum_dy_xh) = (T::zero(), T::zero());
            for b in 0..n {
                for i in idx(b) {
                    sum_dy = sum_dy + dy[i];
                    sum_dy_xh = sum_dy_xh + dy[i] * xh[i];
                }
            }
            d_beta[ch] = sum_dy;
            d_gamma[ch] = sum_dy_xh;
            let g = self.gamma.data()[ch];
            let s = cache.inv_std[ch];
            for b in 0..n {
                for i in idx(b) {
                    dx[i] = match cache.phase {
                        Phase::Infer => g * s * dy[i],
                        Phase::Train => {
                            g * s * (dy[i] - sum_dy / count - xh[i] * sum_dy_xh / count)
                        }
                    };
                }
            }
        }
        Ok((
            Tensor::new(d_out.dims().to_vec(), dx)?,
            Tensor::new(vec![c], d_gamma)?,
            Tensor::new(vec![c], d_beta)?,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_channel_maps_to_beta() {
        let mut bn = BatchNorm::<f64>::new(2);
        bn.beta.data_mut().copy_from_slice(&[0.25, -1.5]);
        bn.gamma.data_mut().copy_from_slice(&[3.0, 2.0]);
        let x = Tensor::full(&[3, 2, 4, 4], 0.7);
        let (y, _) = bn.forward(&x, Phase::Train).unwrap();
        for b in 0..3 {
            for i in 0..16 {
                assert!((y.data()[(b * 2) * 16 + i] - 0.25).abs() < 1e-9);
                assert!((y.data()[(b * 2 + 1) * 16 + i] + 1.5).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn normalised_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::from_fn(&[4, 3, 5, 5], |_| rng.gen_range(-3.0..7.0));
        let mut bn = BatchNorm::<f64>::new(3);
        let (_, cache) = bn.forward(&x, Phase::Train).unwrap();
        let xh = cache.normalized();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|b| xh.data()[(b * 3 + ch) * 25..][..25].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn infer_matches_train_with_batch_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::from_fn(&[3, 2, 4, 3], |_| rng.gen_range(-1.0..2.0));
        let mut bn = BatchNorm::<f64>::new(2);
        let (train_out, _) = bn.forward(&x, Phase::Train).unwrap();
        // Recompute the batch statistics directly and install them.
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3)
                .flat_map(|b| x.data()[(b * 2 + ch) * 12..][..12].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            bn.running_mean.data_mut()[ch] = mean;
            bn.running_var.data_mut()[ch] = var;
        }
        let infer_out = bn.infer(&x).unwrap();
        assert!(train_out.max_abs_diff(&infer_out).unwrap() < 1e-6);
    }

    #[test]
    fn running_statistics_move_toward_batch() {
        let mut bn = BatchNorm::<f64>::new(1);
        let x = Tensor::new(vec![2, 1, 1, 1], vec![1.0, 3.0]).unwrap();
        bn.forward(&x, Phase::Train).unwrap();
        assert!((bn.running_mean.data()[0] - 0.01 * 2.0).abs() < 1e-15);
        assert!((bn.running_var.data()[0] - (0.99 + 0.01 * 1.0)).abs() < 1e-15);
        assert!(bn.running_var.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn single_sample_train_batch_rejected() {
        let mut bn = BatchNorm::<f32>::new(1);
        let x = Tensor::zeros(&[1, 1, 3, 3]);
        assert!(matches!(bn.forward(&x, Phase::Train), Err(Error::Config(_))));
        assert!(bn.forward(&x, Phase::Infer).is_ok());
    }
}
