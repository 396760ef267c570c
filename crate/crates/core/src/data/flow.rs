use crate::error::{Error, Result};
use crate::frame::Frame;

/// Exhaustive block-matching parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FlowParams {
    pub grid_step: usize,
    /// Search radius `w`: displacements in `[-w, w]^2`.
    pub window: usize,
    /// Odd block side `b`.
    pub block: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            grid_step: 4,
            window: 8,
            block: 9,
        }
    }
}

/// Sparse integer flow: `f3(p + flow) ≈ f1(p)` at each grid point `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    /// Grid points `(y, x)`.
    pub points: Vec<(usize, usize)>,
    /// Displacements `(dx, dy)`.
    pub flows: Vec<(i32, i32)>,
    pub mean_magnitude: f64,
}

/// Minimises the grayscale SAD of `b x b` blocks over every displacement in
/// the search window. Ties go to the smaller displacement, then to the first
/// in row-major order.
pub fn block_matching_flow(f1: &Frame, f3: &Frame, params: &FlowParams) -> Result<FlowField> {
    let FlowParams {
        grid_step,
        window: w,
        block: b,
    } = *params;
    if w == 0 || b % 2 == 0 || grid_step == 0 {
        return Err(Error::Config(format!(
            "block matching needs w >= 1, odd b and a positive grid step (w={w}, b={b}, step={grid_step})"
        )));
    }
    f1.same_dims(f3)?;
    let (h, width) = f1.dims();
    if h < b + 2 * w || width < b + 2 * w {
        return Err(Error::Config(format!(
            "{width}x{h} frame is smaller than block {b} plus twice the search radius {w}"
        )));
    }
    let (g1, g3) = (f1.grayscale(), f3.grayscale());
    let margin = b / 2 + w;
    let half = (b / 2) as isize;
    let w = w as isize;

    let mut candidates: Vec<(i32, i32)> = Vec::with_capacity(((2 * w + 1) * (2 * w + 1)) as usize);
    for dy in -w..=w {
        for dx in -w..=w {
            candidates.push((dx as i32, dy as i32));
        }
    }
    // Stable sort keeps row-major order among equal magnitudes.
    candidates.sort_by_key(|&(dx, dy)| dx * dx + dy * dy);

    let mut field = FlowField {
        points: Vec::new(),
        flows: Vec::new(),
        mean_magnitude: 0.0,
    };
    for y in (margin..h - margin).step_by(grid_step) {
        for x in (margin..width - margin).step_by(grid_step) {
            let mut best = (f32::INFINITY, (0, 0));
            for &(dx, dy) in &candidates {
                let mut sad = 0.0f32;
                for oy in -half..=half {
                    let r1 = (y as isize + oy) as usize * width;
                    let r3 = (y as isize + oy + dy as isize) as usize * width;
                    for ox in -half..=half {
                        let a = g1[r1 + (x as isize + ox) as usize];
                        let c = g3[r3 + (x as isize + ox + dx as isize) as usize];
                        sad += (a - c).abs();
                    }
                }
                if sad < best.0 {
                    best = (sad, (dx, dy));
                }
            }
            field.points.push((y, x));
            field.flows.push(best.1);
        }
    }
    let n = field.flows.len().max(1) as f64;
    field.mean_magnitude = field
        .flows
        .iter()
        .map(|&(dx, dy)| f64::from(dx * dx + dy * dy).sqrt())
        .sum::<f64>()
        / n;
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(w: usize, h: usize, seed: u64) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f32> = (0..w * h).map(|_| rng.gen()).collect();
        Frame::from_fn(w, h, |_, y, x| v[y * w + x])
    }

    fn shifted(f: &Frame, dx: isize, dy: isize) -> Frame {
        Frame::from_fn(f.width(), f.height(), |c, y, x| {
            f.get_or_zero(c, y as isize - dy, x as isize - dx)
        })
    }

    /// Full SAD table at one point, independent of the search order.
    fn oracle(g1: &[f32], g3: &[f32], width: usize, y: usize, x: usize, p: &FlowParams) -> (i32, i32) {
        let (w, half) = (p.window as i32, (p.block / 2) as i32);
        let mut table = Vec::new();
        for dy in -w..=w {
            for dx in -w..=w {
                let mut s = 0.0f32;
                for oy in -half..=half {
                    for ox in -half..=half {
                        let i1 = (y as i32 + oy) as usize * width + (x as i32 + ox) as usize;
                        let i3 = (y as i32 + oy + dy) as usize * width + (x as i32 + ox + dx) as usize;
                        s += (g1[i1] - g3[i3]).abs();
                    }
                }
                table.push((s, dx * dx + dy * dy, dy, dx));
            }
        }
        let best = table.iter().copied().fold(table[0], |a, b| {
            if (b.0, b.1, b.2, b.3) < (a.0, a.1, a.2, a.3) {
                b
            } else {
                a
            }
        });
        (best.3, best.2)
    }

    #[test]
    fn global_shift_recovered() {
        let f1 = noise(40, 36, 1);
        let f3 = shifted(&f1, 3, 0);
        let p = FlowParams {
            grid_step: 5,
            window: 4,
            block: 7,
        };
        let field = block_matching_flow(&f1, &f3, &p).unwrap();
        assert!(!field.flows.is_empty());
        assert!(field.flows.iter().all(|&f| f == (3, 0)));
        assert!((field.mean_magnitude - 3.0).abs() < 1e-12);
    }

    #[test]
    fn matches_exhaustive_oracle_on_unrelated_frames() {
        let (f1, f3) = (noise(30, 30, 2), noise(30, 30, 3));
        let p = FlowParams {
            grid_step: 3,
            window: 3,
            block: 5,
        };
        let field = block_matching_flow(&f1, &f3, &p).unwrap();
        let (g1, g3) = (f1.grayscale(), f3.grayscale());
        for (&(y, x), &flow) in field.points.iter().zip(&field.flows) {
            assert_eq!(flow, oracle(&g1, &g3, 30, y, x, &p));
        }
        let bound = 3.0 * 2f64.sqrt();
        assert!(field.mean_magnitude <= bound);
    }

    #[test]
    fn identity_is_zero_flow() {
        let f = noise(32, 32, 4);
        let field = block_matching_flow(&f, &f, &FlowParams::default()).unwrap();
        assert!(field.flows.iter().all(|&v| v == (0, 0)));
        assert_eq!(field.mean_magnitude, 0.0);
    }

    #[test]
    fn flat_frames_tie_to_zero() {
        let f = Frame::filled(20, 20, [0.5; 3]);
        let field = block_matching_flow(&f, &f, &FlowParams { grid_step: 1, window: 2, block: 3 }).unwrap();
        assert!(field.flows.iter().all(|&v| v == (0, 0)));
    }

    #[test]
    fn small_frame_rejected() {
        let f = Frame::filled(20, 30, [0.0; 3]);
        let p = FlowParams {
            grid_step: 1,
            window: 6,
            block: 9,
        };
        assert!(matches!(block_matching_flow(&f, &f, &p), Err(Error::Config(_))));
    }
}
