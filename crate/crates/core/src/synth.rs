//! Pixel synthesis by adaptive convolution, the colour and gradient losses,
//! and kernel diagnostics.
//!
//! A pixel is synthesised as `Σ k1 ⊙ p1 + Σ k2 ⊙ p2` per colour channel,
//! with one kernel shared by all three channels. The gradient loss relies on
//! differentiation commuting with that convolution: finite-difference
//! gradients of the input patches are convolved with the same kernel and
//! compared with the ground-truth gradients of the middle frame.

use crate::error::{Error, Result};
use crate::frame::Patch;
use crate::net::{Half, KernelPair};
use crate::tensor::{to_f64, Scalar};

/// The eight neighbour directions `(dy, dx)`, row-major around the centre.
pub const DIRECTIONS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// Index into [`DIRECTIONS`] of the direction mirrored left-right.
pub const MIRROR_HORIZONTAL: [usize; 8] = [2, 1, 0, 4, 3, 7, 6, 5];
/// Index into [`DIRECTIONS`] of the direction mirrored top-bottom.
pub const MIRROR_VERTICAL: [usize; 8] = [5, 6, 7, 3, 4, 0, 1, 2];

pub type Rgb<T> = [T; 3];

/// Co-centred patches from the two input frames. Either exactly `k x k`, or
/// `(k + 2) x (k + 2)` carrying the one-pixel apron the gradient loss needs.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair<T> {
    pub p1: Patch<T>,
    pub p2: Patch<T>,
}

impl<T: Scalar> PatchPair<T> {
    pub fn new(p1: Patch<T>, p2: Patch<T>) -> Result<Self> {
        if p1.side() != p2.side() {
            return Err(Error::shape(&[3, p1.side(), p1.side()], &[3, p2.side(), p2.side()]));
        }
        Ok(Self { p1, p2 })
    }

    pub fn side(&self) -> usize {
        self.p1.side()
    }

    /// Offset of the `k x k` convolution window inside the stored patches.
    fn window_offset(&self, k: usize) -> Result<usize> {
        match self.side() {
            s if s == k => Ok(0),
            s if s == k + 2 => Ok(1),
            s => Err(Error::shape(&[3, k, k], &[3, s, s])),
        }
    }

    fn apron_offset(&self, k: usize) -> Result<usize> {
        if self.side() == k + 2 {
            Ok(1)
        } else {
            Err(Error::shape(&[3, k + 2, k + 2], &[3, self.side(), self.side()]))
        }
    }

    pub fn flip_horizontal(&self) -> Self {
        Self {
            p1: self.p1.flip_horizontal(),
            p2: self.p2.flip_horizontal(),
        }
    }

    pub fn flip_vertical(&self) -> Self {
        Self {
            p1: self.p1.flip_vertical(),
            p2: self.p2.flip_vertical(),
        }
    }

    pub fn swap(&self) -> Self {
        Self {
            p1: self.p2.clone(),
            p2: self.p1.clone(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> PatchPair<U> {
        PatchPair {
            p1: self.p1.cast(),
            p2: self.p2.cast(),
        }
    }
}

/// Colour and eight directional gradients of the middle frame at the
/// sample centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth<T> {
    pub color: Rgb<T>,
    pub gradients: [Rgb<T>; 8],
}

impl<T: Scalar> GroundTruth<T> {
    /// Reads colour and forward differences at the centre of an odd patch of
    /// side at least 3.
    pub fn from_patch(middle: &Patch<T>) -> Result<Self> {
        let s = middle.side();
        if s < 3 || s % 2 == 0 {
            return Err(Error::shape(&[3, 3, 3], &[3, s, s]));
        }
        let h = (s / 2) as isize;
        let at = |c: usize, dy: isize, dx: isize| middle.get(c, (h + dy) as usize, (h + dx) as usize);
        let color = [0, 1, 2].map(|c| at(c, 0, 0));
        let gradients = DIRECTIONS.map(|(dy, dx)| [0, 1, 2].map(|c| at(c, dy, dx) - at(c, 0, 0)));
        Ok(Self { color, gradients })
    }

    pub fn flip_horizontal(&self) -> Self {
        Self {
            color: self.color,
            gradients: MIRROR_HORIZONTAL.map(|i| self.gradients[i]),
        }
    }

    pub fn flip_vertical(&self) -> Self {
        Self {
            color: self.color,
            gradients: MIRROR_VERTICAL.map(|i| self.gradients[i]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Weight of the gradient loss.
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown<T> {
    pub color: T,
    pub gradient: T,
    pub total: T,
}

fn check_kernel<T: Scalar>(patches: &PatchPair<T>, kernel: &KernelPair<T>) -> Result<usize> {
    patches.window_offset(kernel.size())
}

/// Kernel-weighted sum over the `k x k` windows starting at `(oy, ox)` in
/// both patches, per channel.
fn convolve_at<T: Scalar>(
    patches: &PatchPair<T>,
    kernel: &KernelPair<T>,
    oy: usize,
    ox: usize,
) -> Rgb<T> {
    let k = kernel.size();
    let mut out = [T::zero(); 3];
    for (c, acc) in out.iter_mut().enumerate() {
        for r in 0..k {
            for col in 0..k {
                *acc = *acc
                    + kernel.at(Half::First, r, col) * patches.p1.get(c, oy + r, ox + col)
                    + kernel.at(Half::Second, r, col) * patches.p2.get(c, oy + r, ox + col);
            }
        }
    }
    out
}

/// `Î_c = Σ k1 ⊙ p1_c + Σ k2 ⊙ p2_c`.
pub fn synthesize_pixel<T: Scalar>(patches: &PatchPair<T>, kernel: &KernelPair<T>) -> Result<Rgb<T>> {
    let o = check_kernel(patches, kernel)?;
    Ok(convolve_at(patches, kernel, o, o))
}

/// ℓ1 distance over the three channels.
pub fn color_loss<T: Scalar>(predicted: &Rgb<T>, truth: &Rgb<T>) -> T {
    predicted.iter().zip(truth).map(|(&p, &t)| (p - t).abs()).sum()
}

/// Kernel applied to each of the eight gradient patches `G^d = P(· + d) − P`.
pub fn synthesized_gradients<T: Scalar>(
    patches: &PatchPair<T>,
    kernel: &KernelPair<T>,
) -> Result<[Rgb<T>; 8]> {
    let o = patches.apron_offset(kernel.size())?;
    let k = kernel.size();
    let mut out = [[T::zero(); 3]; 8];
    for (d, &(dy, dx)) in DIRECTIONS.iter().enumerate() {
        let (sy, sx) = ((o as isize + dy) as usize, (o as isize + dx) as usize);
        for c in 0..3 {
            let mut acc = T::zero();
            for r in 0..k {
                for col in 0..k {
                    let g1 = patches.p1.get(c, sy + r, sx + col) - patches.p1.get(c, o + r, o + col);
                    let g2 = patches.p2.get(c, sy + r, sx + col) - patches.p2.get(c, o + r, o + col);
                    acc = acc + kernel.at(Half::First, r, col) * g1 + kernel.at(Half::Second, r, col) * g2;
                }
            }
            out[d][c] = acc;
        }
    }
    Ok(out)
}

pub fn gradient_loss<T: Scalar>(
    patches: &PatchPair<T>,
    kernel: &KernelPair<T>,
    truth: &GroundTruth<T>,
) -> Result<T> {
    let synth = synthesized_gradients(patches, kernel)?;
    Ok(synth
        .iter()
        .zip(&truth.gradients)
        .map(|(s, t)| color_loss(s, t))
        .sum())
}

/// `E_c + λ E_g`. The gradient term is evaluated whenever the patches carry
/// an apron; it is required when `λ > 0`.
pub fn total_loss<T: Scalar>(
    patches: &PatchPair<T>,
    kernel: &KernelPair<T>,
    truth: &GroundTruth<T>,
    weights: LossWeights,
) -> Result<LossBreakdown<T>> {
    let color = color_loss(&synthesize_pixel(patches, kernel)?, &truth.color);
    let gradient = if weights.lambda != 0.0 || patches.apron_offset(kernel.size()).is_ok() {
        gradient_loss(patches, kernel, truth)?
    } else {
        T::zero()
    };
    let total = if weights.lambda == 0.0 {
        color
    } else {
        color + T::lit(weights.lambda) * gradient
    };
    Ok(LossBreakdown {
        color,
        gradient,
        total,
    })
}

#[inline]
fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// `∂(E_c + λ E_g)/∂K` laid out like the kernel (`k x 2k`, row-major). The ℓ1
/// subgradient at zero residual is taken as zero.
pub fn loss_gradient_wrt_kernel<T: Scalar>(
    patches: &PatchPair<T>,
    kernel: &KernelPair<T>,
    truth: &GroundTruth<T>,
    weights: LossWeights,
) -> Result<(LossBreakdown<T>, Vec<T>)> {
    let loss = total_loss(patches, kernel, truth, weights)?;
    let k = kernel.size();
    let o = check_kernel(patches, kernel)?;
    let pred = convolve_at(patches, kernel, o, o);
    let color_sign: Rgb<T> = [0, 1, 2].map(|c| sign(pred[c] - truth.color[c]));

    let mut grad = vec![T::zero(); 2 * k * k];
    let idx = |half: Half, r: usize, col: usize| match half {
        Half::First => r * 2 * k + col,
        Half::Second => r * 2 * k + k + col,
    };
    for (half, patch) in [(Half::First, &patches.p1), (Half::Second, &patches.p2)] {
        for r in 0..k {
            for col in 0..k {
                grad[idx(half, r, col)] = (0..3)
                    .map(|c| color_sign[c] * patch.get(c, o + r, o + col))
                    .sum();
            }
        }
    }

    if weights.lambda != 0.0 {
        let lambda = T::lit(weights.lambda);
        let synth = synthesized_gradients(patches, kernel)?;
        for (d, &(dy, dx)) in DIRECTIONS.iter().enumerate() {
            let (sy, sx) = ((o as isize + dy) as usize, (o as isize + dx) as usize);
            let s: Rgb<T> = [0, 1, 2].map(|c| lambda * sign(synth[d][c] - truth.gradients[d][c]));
            for (half, patch) in [(Half::First, &patches.p1), (Half::Second, &patches.p2)] {
                for r in 0..k {
                    for col in 0..k {
                        let g: T = (0..3)
                            .map(|c| {
                                s[c] * (patch.get(c, sy + r, sx + col) - patch.get(c, o + r, o + col))
                            })
                            .sum();
                        let i = idx(half, r, col);
                        grad[i] = grad[i] + g;
                    }
                }
            }
        }
    }
    Ok((loss, grad))
}

/// Sub-kernel sums `(Σ k1, Σ k2)`.
pub fn sub_kernel_mass<T: Scalar>(kernel: &KernelPair<T>) -> (f64, f64) {
    let mass = |h| kernel.sub_kernel(h).iter().map(|&v| to_f64(v)).sum();
    (mass(Half::First), mass(Half::Second))
}

/// Below this mass a sub-kernel has no meaningful centroid.
pub const CENTROID_MIN_MASS: f64 = 1e-3;

/// Mass-weighted centroid `(dx, dy)` of each sub-kernel, relative to the
/// patch centre.
pub fn kernel_centroids<T: Scalar>(
    kernel: &KernelPair<T>,
) -> (Option<(f64, f64)>, Option<(f64, f64)>) {
    let k = kernel.size();
    let c = (k / 2) as f64;
    let centroid = |half| {
        let (mut m, mut sx, mut sy) = (0.0, 0.0, 0.0);
        for r in 0..k {
            for col in 0..k {
                let v = to_f64(kernel.at(half, r, col));
                m += v;
                sx += v * (col as f64 - c);
                sy += v * (r as f64 - c);
            }
        }
        (m >= CENTROID_MIN_MASS).then(|| (sx / m, sy / m))
    };
    (centroid(Half::First), centroid(Half::Second))
}

/// Signs of every ℓ1 residual in the loss, colour first, as a kink
/// fingerprint for finite-difference checks.
pub fn residual_pattern<T: Scalar>(
    patches: &PatchPair<T>,
    kernel: &KernelPair<T>,
    truth: &GroundTruth<T>,
) -> Result<Vec<bool>> {
    let pred = synthesize_pixel(patches, kernel)?;
    let mut bits: Vec<bool> = (0..3).map(|c| pred[c] > truth.color[c]).collect();
    if patches.apron_offset(kernel.size()).is_ok() {
        let g = synthesized_gradients(patches, kernel)?;
        for d in 0..8 {
            bits.extend((0..3).map(|c| g[d][c] > truth.gradients[d][c]));
        }
    }
    Ok(bits)
}

/// One training example: the two receptive fields centred on the target
/// pixel, plus the ground truth from the middle frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub r1: Patch<T>,
    pub r2: Patch<T>,
    pub truth: GroundTruth<T>,
}

impl<T: Scalar> Sample<T> {
    /// Central `(k + 2)`-sided patches of both receptive fields.
    pub fn loss_patches(&self, k: usize) -> Result<PatchPair<T>> {
        PatchPair::new(self.r1.center_crop(k + 2)?, self.r2.center_crop(k + 2)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_patch(side: usize, rng: &mut ChaCha8Rng) -> Patch<f64> {
        Patch::from_fn(side, |_, _, _| rng.gen_range(0.0..1.0))
    }

    fn random_kernel(k: usize, rng: &mut ChaCha8Rng) -> KernelPair<f64> {
        let raw: Vec<f64> = (0..2 * k * k).map(|_| rng.gen_range(0.0..1.0)).collect();
        let s: f64 = raw.iter().sum();
        KernelPair::new(k, raw.into_iter().map(|v| v / s).collect()).unwrap()
    }

    fn random_truth(rng: &mut ChaCha8Rng) -> GroundTruth<f64> {
        GroundTruth {
            color: [0, 1, 2].map(|_| rng.gen_range(0.0..1.0)),
            gradients: [0; 8].map(|_| [0, 1, 2].map(|_| rng.gen_range(-0.5..0.5))),
        }
    }

    #[test]
    fn constant_patches_give_constant_color() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = Patch::from_fn(5, |_, _, _| 0.5f64);
        let pair = PatchPair::new(p.clone(), p).unwrap();
        let rgb = synthesize_pixel(&pair, &random_kernel(5, &mut rng)).unwrap();
        for v in rgb {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn centre_delta_copies_first_patch() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pair = PatchPair::new(random_patch(5, &mut rng), random_patch(5, &mut rng)).unwrap();
        let k = KernelPair::delta(5, Half::First, 0, 0).unwrap();
        assert_eq!(synthesize_pixel(&pair, &k).unwrap(), pair.p1.center());
    }

    #[test]
    fn matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pair = PatchPair::new(random_patch(5, &mut rng), random_patch(5, &mut rng)).unwrap();
        let kernel = random_kernel(5, &mut rng);
        let got = synthesize_pixel(&pair, &kernel).unwrap();
        // Concatenate [p1 p2] into a 5x10 patch and dot with the 5x10 kernel.
        for c in 0..3 {
            let mut expected = 0.0;
            for r in 0..5 {
                for col in 0..10 {
                    let pv = if col < 5 {
                        pair.p1.get(c, r, col)
                    } else {
                        pair.p2.get(c, r, col - 5)
                    };
                    expected += kernel.data()[r * 10 + col] * pv;
                }
            }
            assert!((got[c] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn apron_patches_use_central_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pair = PatchPair::new(random_patch(7, &mut rng), random_patch(7, &mut rng)).unwrap();
        let inner = PatchPair::new(pair.p1.center_crop(5).unwrap(), pair.p2.center_crop(5).unwrap())
            .unwrap();
        let kernel = random_kernel(5, &mut rng);
        assert_eq!(synthesize_pixel(&pair, &kernel).unwrap(), synthesize_pixel(&inner, &kernel).unwrap());
        assert!(synthesize_pixel(&pair, &random_kernel(3, &mut rng)).is_err());
    }

    #[test]
    fn color_loss_values() {
        assert_eq!(color_loss(&[0.3f64, 0.2, 0.1], &[0.3, 0.2, 0.1]), 0.0);
        assert_eq!(color_loss(&[0.0f64; 3], &[1.0; 3]), 3.0);
        assert!((color_loss(&[0.2f64, 0.5, 0.9], &[0.1, 0.5, 1.0]) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn flat_patches_have_zero_gradient_loss() {
        let p = Patch::from_fn(7, |c, _, _| 0.1 * (c + 1) as f64);
        let pair = PatchPair::new(p.clone(), p.clone()).unwrap();
        let truth = GroundTruth::from_patch(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(gradient_loss(&pair, &random_kernel(5, &mut rng), &truth).unwrap(), 0.0);
    }

    #[test]
    fn ramp_east_gradient() {
        let k = 5usize;
        // p(x) = x / k over the (k + 2)-wide apron patch
        let ramp = Patch::from_fn(k + 2, |_, _, x| x as f64 / k as f64);
        let pair = PatchPair::new(ramp.clone(), ramp).unwrap();
        let kernel = KernelPair::delta(k, Half::First, 0, 0).unwrap();
        let g = synthesized_gradients(&pair, &kernel).unwrap();
        let east = DIRECTIONS.iter().position(|&d| d == (0, 1)).unwrap();
        for c in 0..3 {
            assert!((g[east][c] - 1.0 / k as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_loss_requires_apron() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pair = PatchPair::new(random_patch(5, &mut rng), random_patch(5, &mut rng)).unwrap();
        let truth = random_truth(&mut rng);
        let kernel = random_kernel(5, &mut rng);
        assert!(matches!(gradient_loss(&pair, &kernel, &truth), Err(Error::Shape { .. })));
        // without the gradient term the apron is optional
        let l = total_loss(&pair, &kernel, &truth, LossWeights { lambda: 0.0 }).unwrap();
        assert_eq!(l.total, l.color);
    }

    #[test]
    fn total_loss_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pair = PatchPair::new(random_patch(7, &mut rng), random_patch(7, &mut rng)).unwrap();
        let truth = random_truth(&mut rng);
        let kernel = random_kernel(5, &mut rng);
        let zero = total_loss(&pair, &kernel, &truth, LossWeights { lambda: 0.0 }).unwrap();
        assert_eq!(zero.total, color_loss(&synthesize_pixel(&pair, &kernel).unwrap(), &truth.color));
        let one = total_loss(&pair, &kernel, &truth, LossWeights::default()).unwrap();
        assert_eq!(one.total, one.color + one.gradient);
        assert!(one.gradient >= 0.0);

        // perfect prediction
        let exact = GroundTruth {
            color: synthesize_pixel(&pair, &kernel).unwrap(),
            gradients: synthesized_gradients(&pair, &kernel).unwrap(),
        };
        assert_eq!(total_loss(&pair, &kernel, &exact, LossWeights::default()).unwrap().total, 0.0);
    }

    #[test]
    fn lambda_scales_gradient_term_linearly() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pair = PatchPair::new(random_patch(7, &mut rng), random_patch(7, &mut rng)).unwrap();
        let truth = random_truth(&mut rng);
        let kernel = random_kernel(5, &mut rng);
        let g = |lambda| loss_gradient_wrt_kernel(&pair, &kernel, &truth, LossWeights { lambda }).unwrap().1;
        let (g0, g1, g2) = (g(0.0), g(1.0), g(2.0));
        for i in 0..g0.len() {
            assert!(((g2[i] - g0[i]) - 2.0 * (g1[i] - g0[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn centroid_examples() {
        let d = KernelPair::<f64>::delta(9, Half::First, 3, -2).unwrap();
        assert_eq!(kernel_centroids(&d), (Some((3.0, -2.0)), None));

        let u = KernelPair::<f64>::uniform(9);
        let (c1, c2) = kernel_centroids(&u);
        assert!(c1.unwrap().0.abs() < 1e-12 && c1.unwrap().1.abs() < 1e-12);
        assert!(c2.unwrap().0.abs() < 1e-12 && c2.unwrap().1.abs() < 1e-12);

        let mut two = KernelPair::<f64>::new(9, vec![0.0; 162]).unwrap();
        *two.at_mut(Half::Second, 4, 4) = 0.5;
        *two.at_mut(Half::Second, 4, 8) = 0.5;
        assert_eq!(kernel_centroids(&two).1, Some((2.0, 0.0)));
    }

    #[test]
    fn mass_examples() {
        let k = KernelPair::<f64>::delta(5, Half::Second, 1, 1).unwrap();
        assert_eq!(sub_kernel_mass(&k), (0.0, 1.0));
        let (m1, m2) = sub_kernel_mass(&KernelPair::<f64>::uniform(5));
        assert!((m1 - 0.5).abs() < 1e-12 && (m2 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ground_truth_flip_permutation_matches_flipped_patch() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_patch(5, &mut rng);
        let gt = GroundTruth::from_patch(&p).unwrap();
        assert_eq!(GroundTruth::from_patch(&p.flip_horizontal()).unwrap(), gt.flip_horizontal());
        assert_eq!(GroundTruth::from_patch(&p.flip_vertical()).unwrap(), gt.flip_vertical());
    }
}
