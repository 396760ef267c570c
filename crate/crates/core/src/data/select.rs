use rand::Rng;

use crate::error::{Error, Result};
use crate::frame::{quantize, Frame};

/// Added to every flow magnitude so static candidates stay selectable.
pub const WEIGHT_EPSILON: f64 = 0.1;
/// Histogram ℓ1 distance above which two patches straddle a cut.
pub const SHOT_THRESHOLD: f64 = 0.5;

const HIST_BINS: usize = 32;

/// Shannon entropy in bits of the 8-bit luma histogram.
pub fn patch_entropy(patch: &Frame) -> f64 {
    let mut hist = [0u64; 256];
    for v in patch.grayscale() {
        hist[quantize(v) as usize] += 1;
    }
    let n = (patch.width() * patch.height()) as f64;
    hist.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

fn channel_histograms(f: &Frame) -> Vec<f64> {
    let mut hist = vec![0.0; 3 * HIST_BINS];
    let n = (f.width() * f.height()) as f64;
    for c in 0..3 {
        for &v in f.plane(c) {
            let bin = ((v.clamp(0.0, 1.0) * HIST_BINS as f32) as usize).min(HIST_BINS - 1);
            hist[c * HIST_BINS + bin] += 1.0 / n;
        }
    }
    hist
}

/// Sum over channels of the ℓ1 distance between normalised 32-bin
/// histograms; in `[0, 6]`.
pub fn histogram_distance(a: &Frame, b: &Frame) -> Result<f64> {
    a.same_dims(b)?;
    Ok(channel_histograms(a)
        .iter()
        .zip(channel_histograms(b))
        .map(|(x, y)| (x - y).abs())
        .sum())
}

pub fn shot_boundary(a: &Frame, b: &Frame, threshold: f64) -> Result<bool> {
    Ok(histogram_distance(a, b)? > threshold)
}

/// Fenwick tree over non-negative weights.
struct Fenwick {
    tree: Vec<f64>,
}

impl Fenwick {
    fn new(weights: &[f64]) -> Self {
        let n = weights.len();
        let mut tree = vec![0.0; n + 1];
        for (i, &w) in weights.iter().enumerate() {
            tree[i + 1] += w;
            let parent = (i + 1) + ((i + 1) & (i + 1).wrapping_neg());
            if parent <= n {
                tree[parent] += tree[i + 1];
            }
        }
        Self { tree }
    }

    fn add(&mut self, i: usize, delta: f64) {
        let mut j = i + 1;
        while j < self.tree.len() {
            self.tree[j] += delta;
            j += j & j.wrapping_neg();
        }
    }

    /// Smallest index whose inclusive prefix sum exceeds `target`.
    fn find(&self, mut target: f64) -> usize {
        let n = self.tree.len() - 1;
        let mut pos = 0;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= target {
                target -= self.tree[next];
                pos = next;
            }
            step >>= 1;
        }
        pos.min(n - 1)
    }
}

/// Sequential sampling without replacement: each draw picks a remaining
/// candidate with probability proportional to `magnitude + WEIGHT_EPSILON`.
/// Returns candidate indices in draw order.
pub fn weighted_sample(magnitudes: &[f64], n: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if n > magnitudes.len() {
        return Err(Error::Argument(format!(
            "cannot draw {n} samples from {} candidates",
            magnitudes.len()
        )));
    }
    if let Some(bad) = magnitudes.iter().find(|m| !(m.is_finite() && **m >= 0.0)) {
        return Err(Error::Argument(format!("invalid flow magnitude {bad}")));
    }
    let mut weights: Vec<f64> = magnitudes.iter().map(|m| m + WEIGHT_EPSILON).collect();
    let mut tree = Fenwick::new(&weights);
    let mut remaining: f64 = weights.iter().sum();
    let mut picked = Vec::with_capacity(n);
    for _ in 0..n {
        let mut i = tree.find(rng.gen::<f64>() * remaining);
        if weights[i] == 0.0 {
            // Rounding in the prefix sums landed on a drawn candidate.
            i = (i..weights.len())
                .chain((0..i).rev())
                .find(|&j| weights[j] > 0.0)
                .expect("n <= candidate count");
        }
        remaining -= weights[i];
        tree.add(i, -weights[i]);
        weights[i] = 0.0;
        picked.push(i);
    }
    Ok(picked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn entropy_cases() {
        assert_eq!(patch_entropy(&Frame::filled(8, 8, [0.3, 0.6, 0.9])), 0.0);
        let two = Frame::from_fn(8, 8, |_, y, _| if y < 4 { 0.0 } else { 1.0 });
        assert!((patch_entropy(&two) - 1.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let levels: Vec<u8> = (0..256 * 256).map(|_| rng.gen()).collect();
        let f = Frame::from_fn(256, 256, |_, y, x| f32::from(levels[y * 256 + x]) / 255.0);
        // Oracle: histogram of the raw levels, which grey conversion maps to
        // themselves for equal channels.
        let mut hist = [0f64; 256];
        for &l in &levels {
            hist[l as usize] += 1.0;
        }
        let oracle: f64 = hist.iter().filter(|&&c| c > 0.0).map(|c| c / 65536.0).map(|p| -p * p.log2()).sum();
        let e = patch_entropy(&f);
        assert!((e - oracle).abs() < 1e-9, "{e} vs {oracle}");
        assert!((e - 8.0).abs() < 0.1);
    }

    #[test]
    fn histogram_distance_cases() {
        let black = Frame::filled(10, 10, [0.0; 3]);
        let white = Frame::filled(10, 10, [1.0; 3]);
        assert_eq!(histogram_distance(&black, &black).unwrap(), 0.0);
        assert!(!shot_boundary(&black, &black, SHOT_THRESHOLD).unwrap());
        assert!((histogram_distance(&black, &white).unwrap() - 6.0).abs() < 1e-12);
        assert!(shot_boundary(&black, &white, SHOT_THRESHOLD).unwrap());
    }

    #[test]
    fn small_noise_is_not_a_cut() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Frame::from_fn(64, 64, |_, y, x| ((x * 7 + y * 13) % 64) as f32 / 64.0);
        let mut normal = rand_distr_normal(&mut rng);
        let b = Frame::from_fn(64, 64, |c, y, x| (a.get(c, y, x) + 0.01 * normal()).clamp(0.0, 1.0));
        let d = histogram_distance(&a, &b).unwrap();
        // Direct recomputation of the same quantity.
        let bins = |f: &Frame, c: usize| {
            let mut h = [0.0f64; 32];
            for &v in f.plane(c) {
                h[((v * 32.0) as usize).min(31)] += 1.0 / 4096.0;
            }
            h
        };
        let oracle: f64 = (0..3)
            .map(|c| bins(&a, c).iter().zip(bins(&b, c)).map(|(x, y)| (x - y).abs()).sum::<f64>())
            .sum();
        assert!((d - oracle).abs() < 1e-9);
        assert!(d < SHOT_THRESHOLD, "{d}");
    }

    /// Box–Muller standard normal source.
    fn rand_distr_normal(rng: &mut ChaCha8Rng) -> impl FnMut() -> f32 + '_ {
        move || {
            let (u1, u2): (f64, f64) = (rng.gen_range(f64::EPSILON..1.0), rng.gen());
            ((-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()) as f32
        }
    }

    #[test]
    fn equal_weights_are_uniform() {
        let m = vec![2.0; 10];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0f64; 10];
        let trials = 10_000;
        for _ in 0..trials {
            counts[weighted_sample(&m, 1, &mut rng).unwrap()[0]] += 1.0;
        }
        let expected = trials as f64 / 10.0;
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        let p = 1.0 - ChiSquared::new(9.0).unwrap().cdf(chi2);
        assert!(p > 0.01, "chi2 {chi2} p {p}");
    }

    #[test]
    fn dominant_weight_wins() {
        let mut m = vec![1.0; 20];
        m[13] = 1e6 * 1.1 - WEIGHT_EPSILON;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let hits = (0..10_000)
            .filter(|_| weighted_sample(&m, 1, &mut rng).unwrap()[0] == 13)
            .count();
        assert!(hits as f64 / 10_000.0 > 0.999);
    }

    #[test]
    fn exhaustion_and_errors() {
        let m = [0.0, 5.0, 1.0, 3.0, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut all = weighted_sample(&m, 5, &mut rng).unwrap();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
        assert!(matches!(weighted_sample(&m, 6, &mut rng), Err(Error::Argument(_))));
    }

    #[test]
    fn deterministic_given_seed() {
        let m: Vec<f64> = (0..100).map(|i| (i % 7) as f64).collect();
        let a = weighted_sample(&m, 40, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = weighted_sample(&m, 40, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn first_draw_matches_weight_proportions() {
        let m = [0.0, 1.9, 0.9];
        let w: Vec<f64> = m.iter().map(|v| v + WEIGHT_EPSILON).collect();
        let total: f64 = w.iter().sum();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = [0f64; 3];
        let trials = 20_000;
        for _ in 0..trials {
            counts[weighted_sample(&m, 1, &mut rng).unwrap()[0]] += 1.0;
        }
        let chi2: f64 = (0..3)
            .map(|i| {
                let e = trials as f64 * w[i] / total;
                (counts[i] - e).powi(2) / e
            })
            .sum();
        assert!(1.0 - ChiSquared::new(2.0).unwrap().cdf(chi2) > 0.01);
    }
}
