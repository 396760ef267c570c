//! Full-frame interpolation.
//!
//! Both paths first build a dense field of per-pixel kernels and then run
//! the same synthesis, so they differ only in how the network is driven:
//! once per pixel on its receptive field, or `f^2` times on shifted copies
//! of the whole zero-padded frame pair, with `f = 2^d`.
//!
//! With valid convolutions, an input of side `R + f (n - 1)` yields `n`
//! outputs per axis, and output `i` sees the receptive window whose
//! top-left corner is at `f * i`. A pass whose crop starts at `(dy, dx)` in
//! the padded frame therefore covers the pixels `(dy + f i, dx + f j)`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::frame::{Frame, Patch};
use crate::net::{split_kernels, stack_receptive, Half, KernelNet, KernelPair, NetworkConfig};
use crate::tensor::Tensor;

/// How the kernel field is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InferMode {
    Pixelwise,
    #[default]
    ShiftStitch,
}

/// Zero border of `(R - 1) / 2` pixels.
pub fn pad_frame(frame: &Frame, config: &NetworkConfig) -> Frame {
    frame.padded(config.receptive_field / 2)
}

/// The shifted passes of shift-and-stitch for a given frame size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StitchPlan {
    pub down_convs: usize,
    pub factor: usize,
    /// Every `(dy, dx)` in `[0, f)^2`, row-major.
    pub shifts: Vec<(usize, usize)>,
    /// Padded frame `(height, width)`.
    pub padded: (usize, usize),
}

impl StitchPlan {
    pub fn new(config: &NetworkConfig, height: usize, width: usize) -> Self {
        let f = config.stride_factor();
        let pad = config.receptive_field - 1;
        Self {
            down_convs: config.down_convs,
            factor: f,
            shifts: (0..f).flat_map(|dy| (0..f).map(move |dx| (dy, dx))).collect(),
            padded: (height + pad, width + pad),
        }
    }

    /// Output grid `(rows, cols)` of one pass; zero when the shift lies
    /// beyond the frame.
    pub fn grid(&self, shift: (usize, usize), height: usize, width: usize) -> (usize, usize) {
        let n = |extent: usize, s: usize| extent.saturating_sub(s).div_ceil(self.factor);
        (n(height, shift.0), n(width, shift.1))
    }
}

/// One `k x 2k` kernel per pixel, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelField {
    pub width: usize,
    pub height: usize,
    pub size: usize,
    data: Vec<f32>,
}

impl KernelField {
    fn new(width: usize, height: usize, size: usize) -> Self {
        Self {
            width,
            height,
            size,
            data: vec![0.0; width * height * 2 * size * size],
        }
    }

    fn slot(&mut self, y: usize, x: usize) -> &mut [f32] {
        let n = 2 * self.size * self.size;
        let i = (y * self.width + x) * n;
        &mut self.data[i..i + n]
    }

    pub fn coefficients(&self, y: usize, x: usize) -> &[f32] {
        let n = 2 * self.size * self.size;
        let i = (y * self.width + x) * n;
        &self.data[i..i + n]
    }

    pub fn kernel(&self, y: usize, x: usize) -> KernelPair<f32> {
        KernelPair::new(self.size, self.coefficients(y, x).to_vec()).expect("field stores whole kernels")
    }
}

fn check_inputs(net: &KernelNet<f32>, i1: &Frame, i2: &Frame) -> Result<()> {
    i1.same_dims(i2)?;
    net.config().validate()
}

const PIXEL_CHUNK: usize = 256;

/// Network run once per pixel on its own receptive-field pair.
pub fn kernel_field_pixelwise(net: &KernelNet<f32>, i1: &Frame, i2: &Frame) -> Result<KernelField> {
    check_inputs(net, i1, i2)?;
    let (h, w) = i1.dims();
    let (r, k) = (net.config().receptive_field, net.config().patch_size);
    let mut field = KernelField::new(w, h, k);
    let pixels: Vec<(usize, usize)> = (0..h).flat_map(|y| (0..w).map(move |x| (y, x))).collect();
    let kernels: Vec<Vec<KernelPair<f32>>> = pixels
        .par_chunks(PIXEL_CHUNK)
        .map(|chunk| {
            let fields: Vec<(Patch<f32>, Patch<f32>)> = chunk
                .iter()
                .map(|&(y, x)| (i1.patch(y as isize, x as isize, r), i2.patch(y as isize, x as isize, r)))
                .collect();
            let pairs: Vec<_> = fields.iter().map(|(a, b)| (a, b)).collect();
            split_kernels(&net.infer(&stack_receptive(&pairs, r)?)?, k)
        })
        .collect::<Result<_>>()?;
    for (&(y, x), kernel) in pixels.iter().zip(kernels.iter().flatten()) {
        field.slot(y, x).copy_from_slice(kernel.data());
    }
    Ok(field)
}

fn crop_pair(p1: &Frame, p2: &Frame, y0: usize, x0: usize, rows: usize, cols: usize) -> Tensor<f32> {
    let mut data = Vec::with_capacity(6 * rows * cols);
    for f in [p1, p2] {
        for c in 0..3 {
            let plane = f.plane(c);
            for y in y0..y0 + rows {
                data.extend_from_slice(&plane[y * f.width() + x0..][..cols]);
            }
        }
    }
    Tensor::new(vec![1, 6, rows, cols], data).expect("sized above")
}

/// Network run on `f^2` shifted full-frame crops; the strided outputs are
/// interleaved into a dense field.
pub fn kernel_field_shift_stitch(net: &KernelNet<f32>, i1: &Frame, i2: &Frame) -> Result<KernelField> {
    check_inputs(net, i1, i2)?;
    let config = net.config();
    let (h, w) = i1.dims();
    let (r, k) = (config.receptive_field, config.patch_size);
    let plan = StitchPlan::new(config, h, w);
    let f = plan.factor;
    let (p1, p2) = (pad_frame(i1, config), pad_frame(i2, config));
    let passes: Vec<((usize, usize), (usize, usize), Tensor<f32>)> = plan
        .shifts
        .par_iter()
        .filter_map(|&shift| {
            let (ny, nx) = plan.grid(shift, h, w);
            if ny == 0 || nx == 0 {
                return None;
            }
            let input = crop_pair(&p1, &p2, shift.0, shift.1, r + f * (ny - 1), r + f * (nx - 1));
            Some(net.infer(&input).map(|out| (shift, (ny, nx), out)))
        })
        .collect::<Result<_>>()?;
    let mut field = KernelField::new(w, h, k);
    let len = 2 * k * k;
    for ((dy, dx), (ny, nx), out) in passes {
        if out.dims() != [1, len, ny, nx] {
            return Err(Error::shape(&[1, len, ny, nx], out.dims()));
        }
        let plane = ny * nx;
        for i in 0..ny {
            for j in 0..nx {
                let slot = field.slot(dy + f * i, dx + f * j);
                for (c, v) in slot.iter_mut().enumerate() {
                    *v = out.data()[c * plane + i * nx + j];
                }
            }
        }
    }
    Ok(field)
}

pub fn kernel_field(net: &KernelNet<f32>, i1: &Frame, i2: &Frame, mode: InferMode) -> Result<KernelField> {
    match mode {
        InferMode::Pixelwise => kernel_field_pixelwise(net, i1, i2),
        InferMode::ShiftStitch => kernel_field_shift_stitch(net, i1, i2),
    }
}

/// Applies each pixel's kernel to the co-centred `k x k` patches of the
/// two frames (zero outside), clamped to `[0, 1]`.
pub fn synthesize_frame(i1: &Frame, i2: &Frame, field: &KernelField) -> Result<Frame> {
    i1.same_dims(i2)?;
    if (field.height, field.width) != i1.dims() {
        return Err(Error::shape(&[field.height, field.width], &[i1.height(), i1.width()]));
    }
    let k = field.size;
    let half = k / 2;
    let (p1, p2) = (i1.padded(half), i2.padded(half));
    let pw = p1.width();
    let (h, w) = i1.dims();
    let rows: Vec<Vec<[f32; 3]>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let kernel = field.coefficients(y, x);
                    let mut rgb = [0.0f32; 3];
                    for (c, out) in rgb.iter_mut().enumerate() {
                        let (a, b) = (p1.plane(c), p2.plane(c));
                        let mut acc = 0.0f32;
                        for r in 0..k {
                            let krow = &kernel[r * 2 * k..(r + 1) * 2 * k];
                            let base = (y + r) * pw + x;
                            for col in 0..k {
                                acc += krow[col] * a[base + col] + krow[k + col] * b[base + col];
                            }
                        }
                        *out = acc.clamp(0.0, 1.0);
                    }
                    rgb
                })
                .collect()
        })
        .collect();
    Ok(Frame::from_fn(w, h, |c, y, x| rows[y][x][c]))
}

pub fn interpolate(net: &KernelNet<f32>, i1: &Frame, i2: &Frame, mode: InferMode) -> Result<Frame> {
    synthesize_frame(i1, i2, &kernel_field(net, i1, i2, mode)?)
}

pub fn interpolate_pixelwise(net: &KernelNet<f32>, i1: &Frame, i2: &Frame) -> Result<Frame> {
    interpolate(net, i1, i2, InferMode::Pixelwise)
}

pub fn interpolate_shift_stitch(net: &KernelNet<f32>, i1: &Frame, i2: &Frame) -> Result<Frame> {
    interpolate(net, i1, i2, InferMode::ShiftStitch)
}

/// `2^depth - 1` frames at `t = j / 2^depth`, in time order.
pub fn interpolate_recursive(
    net: &KernelNet<f32>,
    i1: &Frame,
    i2: &Frame,
    depth: usize,
    mode: InferMode,
) -> Result<Vec<Frame>> {
    if depth == 0 {
        return Err(Error::Argument("recursion depth must be at least 1".into()));
    }
    let mid = interpolate(net, i1, i2, mode)?;
    if depth == 1 {
        return Ok(vec![mid]);
    }
    let mut out = interpolate_recursive(net, i1, &mid, depth - 1, mode)?;
    let right = interpolate_recursive(net, &mid, i2, depth - 1, mode)?;
    out.push(mid);
    out.extend(right);
    Ok(out)
}

/// Reference synthesis of one pixel from explicit patches, used to
/// cross-check [`synthesize_frame`].
pub fn synthesize_at(i1: &Frame, i2: &Frame, kernel: &KernelPair<f32>, y: usize, x: usize) -> [f32; 3] {
    let k = kernel.size();
    let (a, b): (Patch<f32>, Patch<f32>) = (i1.patch(y as isize, x as isize, k), i2.patch(y as isize, x as isize, k));
    [0, 1, 2].map(|c| {
        let mut acc = 0.0f32;
        for r in 0..k {
            for col in 0..k {
                acc += kernel.at(Half::First, r, col) * a.get(c, r, col) + kernel.at(Half::Second, r, col) * b.get(c, r, col);
            }
        }
        acc.clamp(0.0, 1.0)
    })
}
