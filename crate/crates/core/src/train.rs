//! AdaMax training over augmented samples.

use std::fmt;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{augment_sample, center_sample, StoredSample};
use crate::error::{Error, Result};
use crate::net::{split_kernels, stack_receptive, KernelNet, KernelPair, NetGradients, Tape};
use crate::synth::{loss_gradient_wrt_kernel, residual_pattern, total_loss, LossBreakdown, LossWeights, Sample};
use crate::tensor::gradcheck::{pattern_signature, Evaluation, GradCheckTarget};
use crate::tensor::{to_f64, Scalar, Tensor};
use crate::Phase;

/// AdaMax optimiser state. Moments are allocated on the first step.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaMax<T> {
    pub beta1: T,
    pub beta2: T,
    pub learning_rate: T,
    step: u32,
    m: Vec<Vec<T>>,
    u: Vec<Vec<T>>,
}

impl<T: Scalar> Default for AdaMax<T> {
    fn default() -> Self {
        Self::new(T::lit(0.9), T::lit(0.999), T::lit(0.001))
    }
}

impl<T: Scalar> AdaMax<T> {
    pub fn new(beta1: T, beta2: T, learning_rate: T) -> Self {
        Self {
            beta1,
            beta2,
            learning_rate,
            step: 0,
            m: Vec::new(),
            u: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u32 {
        self.step
    }

    pub fn first_moment(&self) -> &[Vec<T>] {
        &self.m
    }

    pub fn infinity_norm(&self) -> &[Vec<T>] {
        &self.u
    }

    /// One update of every parameter. Elements whose infinity-norm
    /// accumulator is zero are left untouched.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        let lens: Vec<usize> = params.iter().map(|p| p.len()).collect();
        let glens: Vec<usize> = grads.iter().map(Tensor::len).collect();
        if lens != glens {
            return Err(Error::Shape {
                expected: lens,
                actual: glens,
            });
        }
        if self.m.is_empty() {
            self.m = lens.iter().map(|&n| vec![T::zero(); n]).collect();
            self.u = self.m.clone();
        } else if self.m.iter().map(Vec::len).ne(lens.iter().copied()) {
            return Err(Error::Shape {
                expected: self.m.iter().map(Vec::len).collect(),
                actual: lens,
            });
        }
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let step_size = self.learning_rate / (T::one() - b1.powi(self.step as i32));
        for (((p, g), m), u) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.u) {
            for (((theta, &g), m), u) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(u) {
                *m = b1 * *m + (T::one() - b1) * g;
                *u = (b2 * *u).max(g.abs());
                if *u != T::zero() {
                    *theta = *theta - step_size * *m / *u;
                }
            }
        }
        Ok(())
    }
}

/// Batch-mean losses in double precision.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeanLoss {
    pub color: f64,
    pub gradient: f64,
    pub total: f64,
}

impl MeanLoss {
    fn of<T: Scalar>(losses: &[LossBreakdown<T>]) -> Self {
        let n = losses.len().max(1) as f64;
        let mut out = Self::default();
        for l in losses {
            out.color += to_f64(l.color);
            out.gradient += to_f64(l.gradient);
            out.total += to_f64(l.total);
        }
        out.color /= n;
        out.gradient /= n;
        out.total /= n;
        out
    }
}

/// Result of one forward/backward pass over a batch.
#[derive(Debug, Clone)]
pub struct BatchOutcome<T> {
    pub loss: MeanLoss,
    pub per_sample: Vec<LossBreakdown<T>>,
    pub gradients: NetGradients<T>,
}

fn kernels_for<T: Scalar>(net: &mut KernelNet<T>, batch: &[Sample<T>], phase: Phase) -> Result<(Vec<KernelPair<T>>, Tape<T>)> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let r = net.config().receptive_field;
    let pairs: Vec<_> = batch.iter().map(|s| (&s.r1, &s.r2)).collect();
    let (out, tape) = net.forward(&stack_receptive(&pairs, r)?, phase)?;
    Ok((split_kernels(&out, net.config().patch_size)?, tape))
}

/// Mean loss over `batch` and its gradient with respect to every
/// parameter. Per-sample kernel gradients are computed in parallel and
/// reduced in batch order.
pub fn batch_objective<T: Scalar>(
    net: &mut KernelNet<T>,
    batch: &[Sample<T>],
    weights: LossWeights,
    phase: Phase,
) -> Result<BatchOutcome<T>> {
    let k = net.config().patch_size;
    let (kernels, tape) = kernels_for(net, batch, phase)?;
    let per: Vec<(LossBreakdown<T>, Vec<T>)> = batch
        .par_iter()
        .zip(&kernels)
        .map(|(s, kernel)| loss_gradient_wrt_kernel(&s.loss_patches(k)?, kernel, &s.truth, weights))
        .collect::<Result<_>>()?;
    let scale = T::lit(1.0 / batch.len() as f64);
    let d_kernels: Vec<T> = per.iter().flat_map(|(_, g)| g.iter().map(|&v| v * scale)).collect();
    let d_kernels = Tensor::new(vec![batch.len(), 2 * k * k, 1, 1], d_kernels)?;
    let gradients = net.backward(&tape, &d_kernels, false)?;
    let per_sample: Vec<LossBreakdown<T>> = per.into_iter().map(|(l, _)| l).collect();
    Ok(BatchOutcome {
        loss: MeanLoss::of(&per_sample),
        per_sample,
        gradients,
    })
}

/// Infer-phase mean losses over held-out samples.
pub fn validate(net: &KernelNet<f32>, samples: &[Sample<f32>], weights: LossWeights) -> Result<MeanLoss> {
    if samples.is_empty() {
        return Err(Error::Argument("validation needs at least one sample".into()));
    }
    let (r, k) = (net.config().receptive_field, net.config().patch_size);
    let mut losses = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(64) {
        let pairs: Vec<_> = chunk.iter().map(|s| (&s.r1, &s.r2)).collect();
        let kernels = split_kernels(&net.infer(&stack_receptive(&pairs, r)?)?, k)?;
        for (s, kernel) in chunk.iter().zip(&kernels) {
            losses.push(total_loss(&s.loss_patches(k)?, kernel, &s.truth, weights)?);
        }
    }
    Ok(MeanLoss::of(&losses))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub lambda: f64,
    /// AdaMax step size.
    pub learning_rate: f64,
    /// Trailing fraction of the dataset held out for validation.
    pub validation_fraction: f64,
    /// Save a checkpoint every this many steps.
    pub checkpoint_every: Option<usize>,
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            steps: 1000,
            seed: 0,
            lambda: 1.0,
            learning_rate: 0.001,
            validation_fraction: 0.1,
            checkpoint_every: None,
            checkpoint_path: None,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub color: f64,
    pub gradient: f64,
}

impl fmt::Display for StepLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step {} loss {} color {} grad {}", self.step, self.loss, self.color, self.gradient)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<StepLog>,
    pub validation: Option<MeanLoss>,
}

/// Trains on the leading part of `samples` and validates on the held-out
/// tail. Batches walk seeded permutations of the training part, each sample
/// freshly augmented. `on_step` sees every log line.
pub fn train(
    net: &mut KernelNet<f32>,
    samples: &[StoredSample],
    config: &TrainConfig,
    mut on_step: impl FnMut(&StepLog),
) -> Result<TrainReport> {
    if config.batch_size < 2 {
        return Err(Error::Config("batch size must be at least 2 for batch normalisation".into()));
    }
    if !(0.0..1.0).contains(&config.validation_fraction) || !config.lambda.is_finite() || config.lambda < 0.0 {
        return Err(Error::Config("validation fraction must be in [0, 1) and lambda non-negative".into()));
    }
    if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
        return Err(Error::Config(format!("learning rate {} must be positive", config.learning_rate)));
    }
    let n = samples.len();
    let held = if n >= 2 && config.validation_fraction > 0.0 {
        ((n as f64 * config.validation_fraction).round() as usize).clamp(1, n - 1)
    } else {
        0
    };
    let (train_set, val_set) = samples.split_at(n - held);
    if train_set.is_empty() {
        return Err(Error::Argument("training needs at least one sample".into()));
    }
    let net_config = net.config().clone();
    let weights = LossWeights { lambda: config.lambda };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer = AdaMax::<f32> {
        learning_rate: config.learning_rate as f32,
        ..AdaMax::default()
    };
    let mut order: Vec<usize> = Vec::new();
    let mut history = Vec::with_capacity(config.steps);

    for step in 1..=config.steps {
        let mut ids = Vec::with_capacity(config.batch_size);
        while ids.len() < config.batch_size {
            if order.is_empty() {
                order = (0..train_set.len()).collect();
                order.shuffle(&mut rng);
            }
            ids.push(order.pop().expect("refilled"));
        }
        let batch = ids
            .iter()
            .map(|&i| augment_sample(&train_set[i], &net_config, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let outcome = batch_objective(net, &batch, weights, Phase::Train)?;
        if !outcome.loss.total.is_finite() || outcome.gradients.params.iter().any(|g| !g.is_finite()) {
            let bad: Vec<usize> = ids
                .iter()
                .zip(&outcome.per_sample)
                .filter(|(_, l)| !l.total.is_finite())
                .map(|(&i, _)| i)
                .collect();
            return Err(Error::NonFinite {
                step,
                sample_ids: if bad.is_empty() { ids } else { bad },
            });
        }
        optimizer.step(&mut net.parameters_mut(), &outcome.gradients.params)?;
        let log = StepLog {
            step,
            loss: outcome.loss.total,
            color: outcome.loss.color,
            gradient: outcome.loss.gradient,
        };
        on_step(&log);
        history.push(log);
        if let (Some(every), Some(path)) = (config.checkpoint_every, &config.checkpoint_path) {
            if every > 0 && step % every == 0 {
                net.save(path)?;
            }
        }
    }

    let validation = if val_set.is_empty() {
        None
    } else {
        let held: Vec<Sample<f32>> = val_set.iter().map(|s| center_sample(s, &net_config)).collect::<Result<_>>()?;
        Some(validate(net, &held, weights)?)
    };
    if let Some(path) = &config.checkpoint_path {
        net.save(path)?;
    }
    Ok(TrainReport { history, validation })
}

/// Finite-difference target for the whole network under the combined loss
/// with train-phase batch normalisation.
#[derive(Debug, Clone)]
pub struct NetworkProbe {
    pub net: KernelNet<f64>,
    pub batch: Vec<Sample<f64>>,
    pub weights: LossWeights,
}

impl GradCheckTarget for NetworkProbe {
    fn tensors_mut(&mut self) -> Vec<&mut Tensor<f64>> {
        self.net.parameters_mut()
    }

    fn evaluate(&mut self) -> Result<Evaluation> {
        let k = self.net.config().patch_size;
        let (kernels, tape) = kernels_for(&mut self.net, &self.batch, Phase::Train)?;
        let mut total = 0.0;
        let mut bits = Vec::new();
        for (s, kernel) in self.batch.iter().zip(&kernels) {
            let patches = s.loss_patches(k)?;
            total += total_loss(&patches, kernel, &s.truth, self.weights)?.total;
            bits.extend(residual_pattern(&patches, kernel, &s.truth)?);
        }
        Ok(Evaluation {
            loss: total / self.batch.len() as f64,
            signature: tape.relu_signature() ^ pattern_signature(bits).rotate_left(1),
        })
    }

    fn analytic_gradients(&mut self) -> Result<Vec<Tensor<f64>>> {
        Ok(batch_objective(&mut self.net, &self.batch, self.weights, Phase::Train)?.gradients.params)
    }
}
