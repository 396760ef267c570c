//! Central finite-difference verification of analytic gradients.
//!
//! A [`GradCheckTarget`] exposes its differentiable tensors (parameters and
//! input), a scalar loss and the analytic gradient of that loss. Every
//! probed element is perturbed by `±h` and the central difference is compared
//! against the analytic value.
//!
//! Piecewise-linear pieces (ReLU, ℓ1) make the loss non-differentiable on a
//! measure-zero set. Targets report an activation-pattern signature with each
//! evaluation; when a perturbation changes the pattern the step is shrunk,
//! and a probe whose pattern still changes at the smallest step is counted
//! in [`GradCheckReport::kink_skips`] rather than compared.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{relu, relu_backward, softmax, softmax_backward, BatchNorm, Conv2d, Tensor};
use crate::error::{Error, Result};
use crate::Phase;

/// Scalar loss plus a fingerprint of the active piecewise-linear regions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub signature: u64,
}

pub trait GradCheckTarget {
    /// Differentiable tensors, in the same order as
    /// [`analytic_gradients`](Self::analytic_gradients).
    fn tensors_mut(&mut self) -> Vec<&mut Tensor<f64>>;
    fn evaluate(&mut self) -> Result<Evaluation>;
    fn analytic_gradients(&mut self) -> Result<Vec<Tensor<f64>>>;
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub perturbation: f64,
    /// Probe at most this many (seeded, distinct) elements per tensor.
    /// `None` probes every element.
    pub max_probes_per_tensor: Option<usize>,
    /// Denominator floor for the relative error, so gradients that are zero
    /// up to round-off are compared in absolute terms.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            perturbation: 1e-5,
            max_probes_per_tensor: None,
            abs_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(tensor index, element index)` of the worst probe.
    pub worst: Option<(usize, usize)>,
    pub probes: usize,
    pub kink_skips: usize,
}

const SHRINK_STEPS: usize = 2;

pub fn check_gradients(
    target: &mut impl GradCheckTarget,
    options: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&options.perturbation) {
        return Err(Error::Argument(format!(
            "perturbation {} outside [1e-7, 1e-3]",
            options.perturbation
        )));
    }
    let analytic = target.analytic_gradients()?;
    let base = target.evaluate()?;
    let lens: Vec<usize> = target.tensors_mut().iter().map(|t| t.len()).collect();
    if analytic.len() != lens.len() || analytic.iter().zip(&lens).any(|(g, &l)| g.len() != l) {
        return Err(Error::Shape {
            expected: lens,
            actual: analytic.iter().map(Tensor::len).collect(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut report = GradCheckReport::default();
    for (t, &len) in lens.iter().enumerate() {
        let mut picks: Vec<usize> = match options.max_probes_per_tensor {
            Some(max) if max < len => index::sample(&mut rng, len, max).into_vec(),
            _ => (0..len).collect(),
        };
        picks.sort_unstable();
        for e in picks {
            let Some(numeric) = central_difference(target, t, e, base, options.perturbation)?
            else {
                report.kink_skips += 1;
                continue;
            };
            let a = analytic[t].data()[e];
            let denom = a.abs().max(numeric.abs()).max(options.abs_floor);
            let err = (a - numeric).abs() / denom;
            report.probes += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = report.max_relative_error.max(err);
                report.worst = Some((t, e));
            }
        }
    }
    Ok(report)
}

fn central_difference(
    target: &mut impl GradCheckTarget,
    tensor: usize,
    elem: usize,
    base: Evaluation,
    perturbation: f64,
) -> Result<Option<f64>> {
    let original = target.tensors_mut()[tensor].data()[elem];
    let mut h = perturbation;
    for _ in 0..=SHRINK_STEPS {
        target.tensors_mut()[tensor].data_mut()[elem] = original + h;
        let plus = target.evaluate()?;
        target.tensors_mut()[tensor].data_mut()[elem] = original - h;
        let minus = target.evaluate()?;
        target.tensors_mut()[tensor].data_mut()[elem] = original;
        if plus.signature == base.signature && minus.signature == base.signature {
            return Ok(Some((plus.loss - minus.loss) / (2.0 * h)));
        }
        h /= 10.0;
    }
    Ok(None)
}

/// Order-sensitive fingerprint of a boolean pattern.
pub fn pattern_signature(bits: impl IntoIterator<Item = bool>) -> u64 {
    bits.into_iter().fold(0xcbf2_9ce4_8422_2325, |acc, b| {
        (acc ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

fn weighted_sum(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// `L = Σ upstream ⊙ conv(input)` over weights, bias and input.
pub struct ConvProbe {
    pub conv: Conv2d<f64>,
    pub input: Tensor<f64>,
    pub upstream: Tensor<f64>,
}

impl GradCheckTarget for ConvProbe {
    fn tensors_mut(&mut self) -> Vec<&mut Tensor<f64>> {
        vec![&mut self.conv.weights, &mut self.conv.bias, &mut self.input]
    }

    fn evaluate(&mut self) -> Result<Evaluation> {
        let out = self.conv.forward(&self.input)?;
        Ok(Evaluation {
            loss: weighted_sum(&out, &self.upstream),
            signature: 0,
        })
    }

    fn analytic_gradients(&mut self) -> Result<Vec<Tensor<f64>>> {
        let (_, cache) = self.conv.forward_cached(&self.input)?;
        let g = self.conv.backward(&cache, &self.upstream, true)?;
        Ok(vec![g.d_weights, g.d_bias, g.d_input.expect("requested")])
    }
}

pub struct ReluProbe {
    pub input: Tensor<f64>,
    pub upstream: Tensor<f64>,
}

impl GradCheckTarget for ReluProbe {
    fn tensors_mut(&mut self) -> Vec<&mut Tensor<f64>> {
        vec![&mut self.input]
    }

    fn evaluate(&mut self) -> Result<Evaluation> {
        Ok(Evaluation {
            loss: weighted_sum(&relu(&self.input), &self.upstream),
            signature: pattern_signature(self.input.data().iter().map(|&v| v > 0.0)),
        })
    }

    fn analytic_gradients(&mut self) -> Result<Vec<Tensor<f64>>> {
        Ok(vec![relu_backward(&self.input, &self.upstream)?])
    }
}

pub struct BatchNormProbe {
    pub bn: BatchNorm<f64>,
    pub input: Tensor<f64>,
    pub upstream: Tensor<f64>,
    pub phase: Phase,
}

impl GradCheckTarget for BatchNormProbe {
    fn tensors_mut(&mut self) -> Vec<&mut Tensor<f64>> {
        vec![&mut self.bn.gamma, &mut self.bn.beta, &mut self.input]
    }

    fn evaluate(&mut self) -> Result<Evaluation> {
        // Work on a copy so running statistics stay fixed across probes.
        let (out, _) = self.bn.clone().forward(&self.input, self.phase)?;
        Ok(Evaluation {
            loss: weighted_sum(&out, &self.upstream),
            signature: 0,
        })
    }

    fn analytic_gradients(&mut self) -> Result<Vec<Tensor<f64>>> {
        let mut bn = self.bn.clone();
        let (_, cache) = bn.forward(&self.input, self.phase)?;
        let (dx, dg, db) = bn.backward(&cache, &self.upstream)?;
        Ok(vec![dg, db, dx])
    }
}

pub struct SoftmaxProbe {
    pub input: Tensor<f64>,
    pub upstream: Tensor<f64>,
}

impl GradCheckTarget for SoftmaxProbe {
    fn tensors_mut(&mut self) -> Vec<&mut Tensor<f64>> {
        vec![&mut self.input]
    }

    fn evaluate(&mut self) -> Result<Evaluation> {
        Ok(Evaluation {
            loss: weighted_sum(&softmax(&self.input), &self.upstream),
            signature: 0,
        })
    }

    fn analytic_gradients(&mut self) -> Result<Vec<Tensor<f64>>> {
        Ok(vec![softmax_backward(&softmax(&self.input), &self.upstream)?])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(dims, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn single_conv_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv =
            Conv2d::new(random(&[4, 3, 3, 3], &mut rng), random(&[4], &mut rng), (1, 1)).unwrap();
        let mut probe = ConvProbe {
            conv,
            input: random(&[3, 6, 6], &mut rng),
            upstream: random(&[4, 4, 4], &mut rng),
        };
        let report = check_gradients(&mut probe, &GradCheckOptions::default()).unwrap();
        assert_eq!(report.probes, 4 * 27 + 4 + 108);
        assert!(report.max_relative_error < 1e-5, "{report:?}");
    }

    #[test]
    fn strided_conv_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv =
            Conv2d::new(random(&[3, 2, 2, 2], &mut rng), random(&[3], &mut rng), (2, 2)).unwrap();
        let mut probe = ConvProbe {
            conv,
            input: random(&[2, 2, 7, 7], &mut rng),
            upstream: random(&[2, 3, 3, 3], &mut rng),
        };
        let report = check_gradients(&mut probe, &GradCheckOptions::default()).unwrap();
        assert!(report.max_relative_error < 1e-5, "{report:?}");
    }

    #[test]
    fn relu_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut probe = ReluProbe {
            input: random(&[2, 3, 4, 4], &mut rng),
            upstream: random(&[2, 3, 4, 4], &mut rng),
        };
        let report = check_gradients(&mut probe, &GradCheckOptions::default()).unwrap();
        assert!(report.max_relative_error < 1e-5, "{report:?}");
    }

    #[test]
    fn batch_norm_both_phases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for phase in [Phase::Train, Phase::Infer] {
            let mut bn = BatchNorm::new(3);
            bn.gamma = random(&[3], &mut rng);
            bn.beta = random(&[3], &mut rng);
            bn.running_mean = random(&[3], &mut rng);
            bn.running_var = random(&[3], &mut rng).map(|v| v.abs() + 0.5);
            let mut probe = BatchNormProbe {
                bn,
                input: random(&[3, 3, 3, 2], &mut rng),
                upstream: random(&[3, 3, 3, 2], &mut rng),
                phase,
            };
            let report = check_gradients(&mut probe, &GradCheckOptions::default()).unwrap();
            assert!(report.max_relative_error < 1e-5, "{phase:?}: {report:?}");
        }
    }

    #[test]
    fn softmax_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut probe = SoftmaxProbe {
            input: random(&[2, 7, 1, 1], &mut rng).map(|v| 3.0 * v),
            upstream: random(&[2, 7, 1, 1], &mut rng),
        };
        let report = check_gradients(&mut probe, &GradCheckOptions::default()).unwrap();
        assert!(report.max_relative_error < 1e-5, "{report:?}");
    }

    #[test]
    fn zero_upstream_gives_exact_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let conv =
            Conv2d::new(random(&[2, 3, 3, 3], &mut rng), random(&[2], &mut rng), (1, 1)).unwrap();
        let mut probe = ConvProbe {
            conv,
            input: random(&[3, 6, 6], &mut rng),
            upstream: Tensor::zeros(&[2, 4, 4]),
        };
        for g in probe.analytic_gradients().unwrap() {
            assert!(g.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn detects_a_wrong_gradient() {
        struct Wrong(Tensor<f64>);
        impl GradCheckTarget for Wrong {
            fn tensors_mut(&mut self) -> Vec<&mut Tensor<f64>> {
                vec![&mut self.0]
            }
            fn evaluate(&mut self) -> Result<Evaluation> {
                let loss = self.0.data().iter().map(|v| v * v).sum();
                Ok(Evaluation { loss, signature: 0 })
            }
            fn analytic_gradients(&mut self) -> Result<Vec<Tensor<f64>>> {
                Ok(vec![self.0.map(|v| 3.0 * v)])
            }
        }
        let mut target = Wrong(Tensor::new(vec![2], vec![0.5, -1.0]).unwrap());
        let report = check_gradients(&mut target, &GradCheckOptions::default()).unwrap();
        assert!(report.max_relative_error > 0.3);
    }

    #[test]
    fn perturbation_range_enforced() {
        let mut target = ReluProbe {
            input: Tensor::zeros(&[1]),
            upstream: Tensor::zeros(&[1]),
        };
        let opts = GradCheckOptions {
            perturbation: 0.1,
            ..Default::default()
        };
        assert!(check_gradients(&mut target, &opts).is_err());
    }
}
