use super::{nchw_dims, Scalar, Tensor};
use crate::error::{Error, Result};

/// Valid (unpadded) 2D cross-correlation with a per-output-channel bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    /// `[out_ch, in_ch, kh, kw]`
    pub weights: Tensor<T>,
    /// `[out_ch]`
    pub bias: Tensor<T>,
    pub stride: (usize, usize),
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    /// im2col matrix, `[in_ch * kh * kw, n * oh * ow]`.
    cols: Vec<T>,
    input_dims: Vec<usize>,
    out_hw: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub d_input: Option<Tensor<T>>,
    pub d_weights: Tensor<T>,
    pub d_bias: Tensor<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>, stride: (usize, usize)) -> Result<Self> {
        if weights.rank() != 4 {
            return Err(Error::shape(&[0, 0, 0, 0], weights.dims()));
        }
        if bias.dims() != [weights.dims()[0]] {
            return Err(Error::shape(&weights.dims()[..1], bias.dims()));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::Config("convolution stride must be positive".into()));
        }
        Ok(Self {
            weights,
            bias,
            stride,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weights.dims()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.dims()[1]
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        (self.weights.dims()[2], self.weights.dims()[3])
    }

    /// Spatial output extents for an `h x w` input.
    pub fn output_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel_size();
        if kh > h || kw > w {
            return Err(Error::Config(format!(
                "{kh}x{kw} kernel does not fit a {h}x{w} input"
            )));
        }
        Ok(((h - kh) / self.stride.0 + 1, (w - kw) / self.stride.1 + 1))
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<([usize; 4], (usize, usize))> {
        let dims = input.nchw()?;
        if dims[1] != self.in_channels() {
            let mut expected = input.dims().to_vec();
            let c = expected.len() - 3;
            expected[c] = self.in_channels();
            return Err(Error::shape(&expected, input.dims()));
        }
        let out = self.output_extent(dims[2], dims[3])?;
        Ok((dims, out))
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_cached(input).map(|(out, _)| out)
    }

    pub fn forward_cached(&self, input: &Tensor<T>) -> Result<(Tensor<T>, ConvCache<T>)> {
        let ([n, _, _, _], (oh, ow)) = self.check_input(input)?;
        let cols = self.im2col(input, oh, ow)?;
        let oc = self.out_channels();
        let k = self.weights.len() / oc;
        let spatial = oh * ow;
        let columns = n * spatial;

        // out[oc, n*oh*ow] = W[oc, k] * cols[k, n*oh*ow]
        let mut mat = vec![T::zero(); oc * columns];
        for (o, row) in mat.chunks_mut(columns).enumerate() {
            row.fill(self.bias.data()[o]);
        }
        T::gemm(
            oc,
            k,
            columns,
            self.weights.data(),
            (k as isize, 1),
            &cols,
            (columns as isize, 1),
            &mut mat,
            true,
        );

        let mut out = vec![T::zero(); n * oc * spatial];
        for o in 0..oc {
            for b in 0..n {
                let src = &mat[o * columns + b * spatial..][..spatial];
                out[(b * oc + o) * spatial..][..spatial].copy_from_slice(src);
            }
        }
        let out_dims = if input.rank() == 3 {
            vec![oc, oh, ow]
        } else {
            vec![n, oc, oh, ow]
        };
        let cache = ConvCache {
            cols,
            input_dims: input.dims().to_vec(),
            out_hw: (oh, ow),
        };
        Ok((Tensor::new(out_dims, out)?, cache))
    }

    fn im2col(&self, input: &Tensor<T>, oh: usize, ow: usize) -> Result<Vec<T>> {
        let [n, c, h, w] = input.nchw()?;
        let (kh, kw) = self.kernel_size();
        let (sh, sw) = self.stride;
        let spatial = oh * ow;
        let columns = n * spatial;
        let src = input.data();
        let mut cols = vec![T::zero(); c * kh * kw * columns];
        for ch in 0..c {
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = ((ch * kh + ky) * kw + kx) * columns;
                    for b in 0..n {
                        let plane = &src[(b * c + ch) * h * w..][..h * w];
                        for oy in 0..oh {
                            let line = &plane[(oy * sh + ky) * w + kx..];
                            let dst = &mut cols[row + b * spatial + oy * ow..][..ow];
                            if sw == 1 {
                                dst.copy_from_slice(&line[..ow]);
                            } else {
                                for (ox, d) in dst.iter_mut().enumerate() {
                                    *d = line[ox * sw];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(cols)
    }

    /// Gradients of a scalar loss given `d_out = dL/d(output)`.
    pub fn backward(
        &self,
        cache: &ConvCache<T>,
        d_out: &Tensor<T>,
        need_input_grad: bool,
    ) -> Result<ConvGrads<T>> {
        let [n, c, h, w] = nchw_dims(&cache.input_dims)?;
        let (oh, ow) = cache.out_hw;
        let oc = self.out_channels();
        let expected = if cache.input_dims.len() == 3 {
            vec![oc, oh, ow]
        } else {
            vec![n, oc, oh, ow]
        };
        if d_out.dims() != expected.as_slice() {
            return Err(Error::shape(&expected, d_out.dims()));
        }
        let spatial = oh * ow;
        let columns = n * spatial;
        let k = self.weights.len() / oc;

        let mut mat = vec![T::zero(); oc * columns];
        for o in 0..oc {
            for b in 0..n {
                mat[o * columns + b * spatial..][..spatial]
                    .copy_from_slice(&d_out.data()[(b * oc + o) * spatial..][..spatial]);
            }
        }

        let d_bias: Vec<T> = mat.chunks(columns).map(|r| r.iter().copied().sum()).collect();

        // dW[oc, k] = dOut[oc, cols] * cols^T
        let mut d_weights = vec![T::zero(); oc * k];
        T::gemm(
            oc,
            columns,
            k,
            &mat,
            (columns as isize, 1),
            &cache.cols,
            (1, columns as isize),
            &mut d_weights,
            false,
        );

        let d_input = if need_input_grad {
            // dCols[k, cols] = W^T * dOut
            let mut d_cols = vec![T::zero(); k * columns];
            T::gemm(
                k,
                oc,
                columns,
                self.weights.data(),
                (1, k as isize),
                &mat,
                (columns as isize, 1),
                &mut d_cols,
                false,
            );
            let mut d_in = vec![T::zero(); n * c * h * w];
            let (kh, kw) = self.kernel_size();
            let (sh, sw) = self.stride;
            for ch in 0..c {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let row = ((ch * kh + ky) * kw + kx) * columns;
                        for b in 0..n {
                            let plane = &mut d_in[(b * c + ch) * h * w..][..h * w];
                            for oy in 0..oh {
                                let base = (oy * sh + ky) * w + kx;
                                let srow = &d_cols[row + b * spatial + oy * ow..][..ow];
                                for (ox, &g) in srow.iter().enumerate() {
                                    plane[base + ox * sw] = plane[base + ox * sw] + g;
                                }
                            }
                        }
                    }
                }
            }
            Some(Tensor::new(cache.input_dims.clone(), d_in)?)
        } else {
            None
        };

        Ok(ConvGrads {
            d_input,
            d_weights: Tensor::new(self.weights.dims().to_vec(), d_weights)?,
            d_bias: Tensor::new(vec![oc], d_bias)?,
        })
    }
}
