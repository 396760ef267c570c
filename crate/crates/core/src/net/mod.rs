//! The kernel-estimation network.
//!
//! Layer pattern, for `widths = [w0, .., wn]` and `d` down-convolutions:
//!
//! ```text
//! conv(size_i, w_i) + BN + ReLU      for i < n
//!   followed by down-conv 2x2/2 + ReLU for the first d of them
//! conv(size_n, w_n) + ReLU
//! conv(size_n+1, k * 2k)
//! softmax over the k * 2k logits
//! ```
//!
//! All convolutions are valid. A receptive field of `R x R` must reduce to
//! a single spatial position, which makes the network fully convolutional:
//! a larger input yields a grid of kernels with stride `2^d`.

mod checkpoint;
mod kernel;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::frame::Patch;
use crate::tensor::gradcheck::pattern_signature;
use crate::tensor::{
    relu, relu_backward, softmax, softmax_backward, BatchNorm, BatchNormCache, Conv2d, ConvCache,
    Scalar, Tensor,
};
use crate::Phase;

pub use checkpoint::{decode_tensor, encode_tensor, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use kernel::{Half, KernelPair};

/// Architecture hyper-parameters; [`paper`](Self::paper) and [`desk`](Self::desk)
/// are the two presets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    /// Side of the square receptive field (odd).
    pub receptive_field: usize,
    /// Side of the convolution patch; the kernel is `k x 2k` (odd).
    pub patch_size: usize,
    pub down_convs: usize,
    pub conv_widths: Vec<usize>,
    /// One kernel size per entry of `conv_widths`, plus the final layer's.
    pub conv_sizes: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    DownConv,
}

/// One row of the architecture table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub size: usize,
    pub stride: usize,
    pub batch_norm: bool,
    pub relu: bool,
    /// Spatial output side for an `R x R` input.
    pub output_side: usize,
}

impl NetworkConfig {
    /// 79x79 receptive field, 41x82 kernels, three down-convolutions.
    pub fn paper() -> Self {
        Self {
            receptive_field: 79,
            patch_size: 41,
            down_convs: 3,
            conv_widths: vec![32, 64, 128, 256, 2048],
            conv_sizes: vec![7, 5, 5, 3, 4, 1],
        }
    }

    /// 23x23 receptive field, 11x22 kernels, one down-convolution.
    pub fn desk() -> Self {
        Self {
            receptive_field: 23,
            patch_size: 11,
            down_convs: 1,
            conv_widths: vec![16, 32, 512],
            conv_sizes: vec![7, 5, 4, 1],
        }
    }

    /// Number of kernel coefficients, `k * 2k`.
    pub fn kernel_len(&self) -> usize {
        2 * self.patch_size * self.patch_size
    }

    /// Total downscaling factor `2^d`.
    pub fn stride_factor(&self) -> usize {
        1 << self.down_convs
    }

    pub const INPUT_CHANNELS: usize = 6;

    /// Symbolic shape chain; fails on the first inconsistent layer.
    pub fn layer_specs(&self) -> Result<Vec<LayerSpec>> {
        let (r, k) = (self.receptive_field, self.patch_size);
        if r % 2 == 0 || k % 2 == 0 || k == 0 || k > r {
            return Err(Error::Config(format!(
                "receptive field {r} and patch size {k} must be odd with k <= R"
            )));
        }
        let n = self.conv_widths.len();
        if n == 0 || self.conv_sizes.len() != n + 1 {
            return Err(Error::Config(format!(
                "{} conv widths need {} kernel sizes, got {}",
                n,
                n + 1,
                self.conv_sizes.len()
            )));
        }
        if self.down_convs > n {
            return Err(Error::Config(format!(
                "{} down-convolutions but only {n} conv layers",
                self.down_convs
            )));
        }
        if self.conv_widths.contains(&0) || self.conv_sizes.contains(&0) {
            return Err(Error::Config("layer widths and sizes must be positive".into()));
        }

        let mut specs = Vec::new();
        let mut side = r;
        let mut channels = Self::INPUT_CHANNELS;
        let mut push = |kind, out: usize, size: usize, stride: usize, bn, relu, side: &mut usize, ch: &mut usize| {
            let layer = specs.len() + 1;
            if size > *side {
                return Err(Error::Config(format!(
                    "layer {layer} ({kind:?} {size}x{size}) does not fit its {}x{} input",
                    *side, *side
                )));
            }
            *side = (*side - size) / stride + 1;
            specs.push(LayerSpec {
                kind,
                in_channels: *ch,
                out_channels: out,
                size,
                stride,
                batch_norm: bn,
                relu,
                output_side: *side,
            });
            *ch = out;
            Ok(())
        };
        for i in 0..n {
            let w = self.conv_widths[i];
            push(LayerKind::Conv, w, self.conv_sizes[i], 1, i + 1 < n, true, &mut side, &mut channels)?;
            if i < self.down_convs {
                push(LayerKind::DownConv, w, 2, 2, false, true, &mut side, &mut channels)?;
            }
        }
        if side != 1 {
            return Err(Error::Config(format!(
                "layer {} leaves a {side}x{side} output; the last hidden layer must reduce the receptive field to 1x1",
                specs.len()
            )));
        }
        push(LayerKind::Conv, self.kernel_len(), self.conv_sizes[n], 1, false, false, &mut side, &mut channels)?;
        Ok(specs)
    }

    pub fn validate(&self) -> Result<()> {
        self.layer_specs().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block<T> {
    spec: LayerSpec,
    conv: Conv2d<T>,
    bn: Option<BatchNorm<T>>,
}

/// Kernel-estimation network with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelNet<T> {
    config: NetworkConfig,
    blocks: Vec<Block<T>>,
}

#[derive(Debug, Clone)]
struct BlockTape<T> {
    conv: ConvCache<T>,
    bn: Option<BatchNormCache<T>>,
    /// Post-ReLU activations, when the block has a ReLU.
    activated: Option<Tensor<T>>,
}

/// Activations recorded by [`KernelNet::forward`] for one invocation.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    blocks: Vec<BlockTape<T>>,
    output: Option<Tensor<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn is_empty(&self) -> bool {
        self.output.is_none()
    }

    /// Fingerprint of every ReLU on/off decision in the recorded pass.
    pub fn relu_signature(&self) -> u64 {
        pattern_signature(
            self.blocks
                .iter()
                .filter_map(|b| b.activated.as_ref())
                .flat_map(|t| t.data().iter().map(|&v| v > T::zero())),
        )
    }
}

#[derive(Debug, Clone)]
pub struct NetGradients<T> {
    /// Same order as [`KernelNet::parameters`].
    pub params: Vec<Tensor<T>>,
    pub input: Option<Tensor<T>>,
}

impl<T: Scalar> KernelNet<T> {
    /// Xavier-uniform weights, zero biases, identity batch norm.
    pub fn init(config: NetworkConfig, seed: u64) -> Result<Self> {
        let specs = config.layer_specs()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = specs
            .into_iter()
            .map(|spec| {
                let area = spec.size * spec.size;
                let (fan_in, fan_out) = (spec.in_channels * area, spec.out_channels * area);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dims = [spec.out_channels, spec.in_channels, spec.size, spec.size];
                let weights = Tensor::from_fn(&dims, |_| T::lit(rng.gen_range(-limit..=limit)));
                let conv = Conv2d::new(weights, Tensor::zeros(&[spec.out_channels]), (spec.stride, spec.stride))?;
                let bn = spec.batch_norm.then(|| BatchNorm::new(spec.out_channels));
                Ok(Block { spec, conv, bn })
            })
            .collect::<Result<_>>()?;
        Ok(Self { config, blocks })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.blocks.iter().map(|b| b.spec).collect()
    }

    /// Trainable tensors: per layer weights, bias, then gamma and beta for
    /// batch-normalised layers.
    pub fn parameters(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.push(&b.conv.weights);
            out.push(&b.conv.bias);
            if let Some(bn) = &b.bn {
                out.push(&bn.gamma);
                out.push(&bn.beta);
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.push(&mut b.conv.weights);
            out.push(&mut b.conv.bias);
            if let Some(bn) = &mut b.bn {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out
    }

    /// Every persisted tensor: the trainable ones plus running statistics,
    /// in checkpoint order.
    pub(crate) fn state_tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.push(&b.conv.weights);
            out.push(&b.conv.bias);
            if let Some(bn) = &b.bn {
                out.extend([&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var]);
            }
        }
        out
    }

    pub(crate) fn state_tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.push(&mut b.conv.weights);
            out.push(&mut b.conv.bias);
            if let Some(bn) = &mut b.bn {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
                out.push(&mut bn.running_mean);
                out.push(&mut bn.running_var);
            }
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> KernelNet<U> {
        KernelNet {
            config: self.config.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    spec: b.spec,
                    conv: Conv2d {
                        weights: b.conv.weights.cast(),
                        bias: b.conv.bias.cast(),
                        stride: b.conv.stride,
                    },
                    bn: b.bn.as_ref().map(|bn| BatchNorm {
                        gamma: bn.gamma.cast(),
                        beta: bn.beta.cast(),
                        running_mean: bn.running_mean.cast(),
                        running_var: bn.running_var.cast(),
                        momentum: U::lit(crate::tensor::to_f64(bn.momentum)),
                        epsilon: U::lit(crate::tensor::to_f64(bn.epsilon)),
                    }),
                })
                .collect(),
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        let r = self.config.receptive_field;
        match *input.dims() {
            [_, 6, h, w] if h >= r && w >= r => Ok(()),
            _ => Err(Error::Shape {
                expected: vec![input.dims().first().copied().unwrap_or(1), 6, r, r],
                actual: input.dims().to_vec(),
            }),
        }
    }

    /// Read-only forward pass with running batch-norm statistics. `input`
    /// is `[n, 6, h, w]`; returns softmax-normalised kernels
    /// `[n, k*2k, h', w']` with one kernel per `2^d`-strided position.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(input)?;
        let mut x = input.clone();
        for b in &self.blocks {
            x = b.conv.forward(&x)?;
            if let Some(bn) = &b.bn {
                x = bn.infer(&x)?;
            }
            if b.spec.relu {
                x = relu(&x);
            }
        }
        Ok(softmax(&x))
    }

    /// Recording forward pass. Train phase normalises with batch statistics
    /// and updates the running estimates.
    pub fn forward(&mut self, input: &Tensor<T>, phase: Phase) -> Result<(Tensor<T>, Tape<T>)> {
        self.check_input(input)?;
        let mut tape = Tape::default();
        let mut x = input.clone();
        for b in &mut self.blocks {
            let (mut y, conv) = b.conv.forward_cached(&x)?;
            let bn = match &mut b.bn {
                Some(bn) => {
                    let (z, cache) = bn.forward(&y, phase)?;
                    y = z;
                    Some(cache)
                }
                None => None,
            };
            let activated = b.spec.relu.then(|| relu(&y));
            x = activated.clone().unwrap_or(y);
            tape.blocks.push(BlockTape { conv, bn, activated });
        }
        let out = softmax(&x);
        tape.output = Some(out.clone());
        Ok((out, tape))
    }

    /// Backpropagates `d_kernels = dL/d(softmax output)` through the tape.
    pub fn backward(&self, tape: &Tape<T>, d_kernels: &Tensor<T>, want_input: bool) -> Result<NetGradients<T>> {
        let out = tape
            .output
            .as_ref()
            .ok_or_else(|| Error::State("backward called without a recorded forward pass".into()))?;
        if tape.blocks.len() != self.blocks.len() {
            return Err(Error::State("tape was recorded by a different network".into()));
        }
        let mut d = softmax_backward(out, d_kernels)?;
        let mut per_block = Vec::with_capacity(self.blocks.len());
        let mut d_input = None;
        for (i, (b, t)) in self.blocks.iter().zip(&tape.blocks).enumerate().rev() {
            if let Some(act) = &t.activated {
                d = relu_backward(act, &d)?;
            }
            let mut bn_grads = None;
            if let (Some(bn), Some(cache)) = (&b.bn, &t.bn) {
                let (dx, dg, db) = bn.backward(cache, &d)?;
                d = dx;
                bn_grads = Some((dg, db));
            }
            let first = i == 0;
            let g = b.conv.backward(&t.conv, &d, !first || want_input)?;
            if let Some(dx) = g.d_input {
                if first {
                    d_input = Some(dx);
                } else {
                    d = dx;
                }
            }
            per_block.push((g.d_weights, g.d_bias, bn_grads));
        }
        let mut params = Vec::new();
        for (dw, db, bn) in per_block.into_iter().rev() {
            params.push(dw);
            params.push(db);
            if let Some((dg, dbeta)) = bn {
                params.push(dg);
                params.push(dbeta);
            }
        }
        Ok(NetGradients { params, input: d_input })
    }

    /// Kernel for one pixel from its two receptive-field patches.
    pub fn forward_kernel(&self, r1: &Patch<T>, r2: &Patch<T>) -> Result<KernelPair<T>> {
        let input = stack_receptive(&[(r1, r2)], self.config.receptive_field)?;
        let out = self.infer(&input)?;
        KernelPair::new(self.config.patch_size, out.into_data())
    }
}

/// Concatenates receptive-field pairs channel-wise into `[n, 6, R, R]`.
pub fn stack_receptive<T: Scalar>(pairs: &[(&Patch<T>, &Patch<T>)], r: usize) -> Result<Tensor<T>> {
    if pairs.is_empty() {
        return Err(Error::Argument("no receptive fields to stack".into()));
    }
    let mut data = Vec::with_capacity(pairs.len() * 6 * r * r);
    for (r1, r2) in pairs {
        for p in [r1, r2] {
            if p.side() != r {
                return Err(Error::shape(&[3, r, r], &[3, p.side(), p.side()]));
            }
            data.extend_from_slice(p.data());
        }
    }
    Tensor::new(vec![pairs.len(), 6, r, r], data)
}

/// Splits `[n, k*2k, 1, 1]` network output into per-sample kernels.
pub fn split_kernels<T: Scalar>(output: &Tensor<T>, k: usize) -> Result<Vec<KernelPair<T>>> {
    let len = 2 * k * k;
    match *output.dims() {
        [_, c, 1, 1] if c == len => output
            .data()
            .chunks(len)
            .map(|c| KernelPair::new(k, c.to_vec()))
            .collect(),
        _ => Err(Error::Shape {
            expected: vec![output.dims().first().copied().unwrap_or(1), len, 1, 1],
            actual: output.dims().to_vec(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_chain_matches_table() {
        let specs = NetworkConfig::paper().layer_specs().unwrap();
        let sides: Vec<usize> = specs.iter().map(|s| s.output_side).collect();
        assert_eq!(sides, vec![73, 36, 32, 16, 12, 6, 4, 1, 1]);
        let widths: Vec<usize> = specs.iter().map(|s| s.out_channels).collect();
        assert_eq!(widths, vec![32, 32, 64, 64, 128, 128, 256, 2048, 3362]);
        let bn: Vec<bool> = specs.iter().map(|s| s.batch_norm).collect();
        assert_eq!(bn, vec![true, false, true, false, true, false, true, false, false]);
        let relu: Vec<bool> = specs.iter().map(|s| s.relu).collect();
        assert_eq!(relu, vec![true; 8].into_iter().chain([false]).collect::<Vec<_>>());
        assert_eq!(NetworkConfig::paper().kernel_len(), 3362);
    }

    #[test]
    fn desk_chain() {
        let c = NetworkConfig::desk();
        let sides: Vec<usize> = c.layer_specs().unwrap().iter().map(|s| s.output_side).collect();
        assert_eq!(sides, vec![17, 8, 4, 1, 1]);
        assert_eq!(c.kernel_len(), 242);
    }

    #[test]
    fn invalid_chain_names_layer() {
        let mut c = NetworkConfig::desk();
        c.conv_sizes = vec![7, 5, 3, 1];
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("layer 4"), "{err}");

        let mut c = NetworkConfig::desk();
        c.conv_sizes = vec![7, 9, 4, 1];
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("layer 3"), "{err}");

        let mut c = NetworkConfig::desk();
        c.patch_size = 10;
        assert!(c.validate().is_err());
    }

    #[test]
    fn init_is_deterministic_and_xavier_bounded() {
        let a = KernelNet::<f32>::init(NetworkConfig::desk(), 42).unwrap();
        let b = KernelNet::<f32>::init(NetworkConfig::desk(), 42).unwrap();
        assert_eq!(a, b);
        let c = KernelNet::<f32>::init(NetworkConfig::desk(), 43).unwrap();
        assert_ne!(a, c);
        for (spec, w) in a.layer_specs().iter().zip(a.parameters().iter().filter(|t| t.rank() == 4)) {
            let area = spec.size * spec.size;
            let limit = (6.0 / ((spec.in_channels + spec.out_channels) * area) as f64).sqrt() as f32;
            assert!(w.data().iter().all(|v| v.abs() <= limit));
        }
    }

    #[test]
    fn backward_without_forward_is_state_error() {
        let net = KernelNet::<f64>::init(NetworkConfig::desk(), 0).unwrap();
        let err = net.backward(&Tape::default(), &Tensor::zeros(&[2, 242, 1, 1]), false);
        assert!(matches!(err, Err(Error::State(_))));
    }

    #[test]
    fn forward_kernel_rejects_wrong_patch() {
        let net = KernelNet::<f32>::init(NetworkConfig::desk(), 0).unwrap();
        let p = Patch::from_fn(21, |_, _, _| 0.5f32);
        assert!(matches!(net.forward_kernel(&p, &p), Err(Error::Shape { .. })));
    }
}
