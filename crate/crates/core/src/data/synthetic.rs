//! Procedural layered scenes rendered at arbitrary times.
//!
//! Every layer carries an analytic texture (a sum of soft and hard-edged
//! blobs), so a frame at any time `t` is an exact render rather than a
//! resampled image. Pixels average the scene over their unit footprint.
//! Layer positions move linearly: a point at `p` at `t = 0` is at
//! `p + t * shift` at time `t`, so `shift` is the displacement from the
//! first to the last frame of a triple.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::frame::Frame;

const CELL: f64 = 8.0;
const HARD_EDGE_WIDTH: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
struct Blob {
    x: f64,
    y: f64,
    radius: f64,
    amplitude: [f64; 3],
    hard: bool,
}

impl Blob {
    fn reach(&self) -> f64 {
        if self.hard {
            self.radius + 12.0 * HARD_EDGE_WIDTH
        } else {
            4.0 * self.radius
        }
    }

    fn weight(&self, x: f64, y: f64) -> f64 {
        let r2 = (x - self.x).powi(2) + (y - self.y).powi(2);
        if self.hard {
            1.0 / (1.0 + ((r2.sqrt() - self.radius) / HARD_EDGE_WIDTH).exp())
        } else {
            (-r2 / (2.0 * self.radius * self.radius)).exp()
        }
    }
}

/// Seeded noise-blob texture over a bounded region of the plane; outside
/// the region it degrades to the base colour.
#[derive(Debug, Clone, PartialEq)]
pub struct Texture {
    base: [f64; 3],
    blobs: Vec<Blob>,
    origin: (f64, f64),
    cols: usize,
    rows: usize,
    cells: Vec<Vec<u32>>,
}

impl Texture {
    /// Roughly one blob per 20 square pixels of `[x0, x1) x [y0, y1)`.
    pub fn random(rng: &mut impl Rng, x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        let base = [0, 1, 2].map(|_| rng.gen_range(0.3..0.7));
        let count = (((x1 - x0) * (y1 - y0)) / 20.0).ceil().max(1.0) as usize;
        let blobs = (0..count)
            .map(|_| {
                let hard = rng.gen_bool(0.35);
                Blob {
                    x: rng.gen_range(x0..x1),
                    y: rng.gen_range(y0..y1),
                    radius: if hard { rng.gen_range(1.5..5.0) } else { rng.gen_range(1.2..4.0) },
                    amplitude: [0, 1, 2].map(|_| rng.gen_range(-0.5..0.5)),
                    hard,
                }
            })
            .collect();
        Self::with_blobs(base, blobs, (x0, y0, x1, y1))
    }

    /// A texture with no blobs.
    pub fn flat(rgb: [f64; 3]) -> Self {
        Self::with_blobs(rgb, Vec::new(), (0.0, 0.0, 1.0, 1.0))
    }

    fn with_blobs(base: [f64; 3], blobs: Vec<Blob>, extent: (f64, f64, f64, f64)) -> Self {
        let (x0, y0, x1, y1) = extent;
        let cols = ((x1 - x0) / CELL).ceil().max(1.0) as usize;
        let rows = ((y1 - y0) / CELL).ceil().max(1.0) as usize;
        let mut cells = vec![Vec::new(); cols * rows];
        for (i, b) in blobs.iter().enumerate() {
            let r = b.reach();
            let cx = |x: f64| (((x - x0) / CELL).floor().max(0.0) as usize).min(cols - 1);
            let cy = |y: f64| (((y - y0) / CELL).floor().max(0.0) as usize).min(rows - 1);
            for row in cy(b.y - r)..=cy(b.y + r) {
                for col in cx(b.x - r)..=cx(b.x + r) {
                    cells[row * cols + col].push(i as u32);
                }
            }
        }
        Self {
            base,
            blobs,
            origin: (x0, y0),
            cols,
            rows,
            cells,
        }
    }

    pub fn sample(&self, x: f64, y: f64) -> [f32; 3] {
        let mut v = self.base;
        let (gx, gy) = ((x - self.origin.0) / CELL, (y - self.origin.1) / CELL);
        if gx >= 0.0 && gy >= 0.0 && (gx as usize) < self.cols && (gy as usize) < self.rows {
            for &i in &self.cells[gy as usize * self.cols + gx as usize] {
                let b = &self.blobs[i as usize];
                let w = b.weight(x, y);
                for c in 0..3 {
                    v[c] += w * b.amplitude[c];
                }
            }
        }
        v.map(|c| (0.5 + 0.5 * (2.0 * (c - 0.5)).tanh()) as f32)
    }
}

/// Axis-aligned rectangle at `t = 0`, in pixel-centre coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl Rect {
    fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x && x < self.x + self.width && y >= self.y && y < self.y + self.height
    }
}

/// A textured plane (no `rect`) or rectangle translating by `shift` per
/// unit time.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub rect: Option<Rect>,
    pub shift: (f64, f64),
    pub texture: Texture,
}

impl Layer {
    fn covers(&self, x: f64, y: f64, t: f64) -> bool {
        match self.rect {
            None => true,
            Some(r) => r.contains(x - t * self.shift.0, y - t * self.shift.1),
        }
    }

    fn color(&self, x: f64, y: f64, t: f64) -> [f32; 3] {
        self.texture.sample(x - t * self.shift.0, y - t * self.shift.1)
    }
}

/// Geometry and motion of one synthetic clip. Frames are spaced half a time
/// unit apart, so every non-overlapping triple spans exactly one unit and
/// its middle frame is the exact midpoint render.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// First-to-last-frame displacement `(dx, dy)` of the background.
    pub background_shift: (f64, f64),
    /// Foreground rectangles and their displacements, drawn in order over
    /// the background.
    pub foreground: Vec<(Rect, (f64, f64))>,
    /// Brightness added per unit time, uniformly to all channels.
    pub brightness_ramp: f64,
    /// Replace the scene with an unrelated one from the third frame on.
    pub cut: bool,
    pub groups: usize,
}

impl SceneSpec {
    pub fn global_shift(width: usize, height: usize, dx: f64, dy: f64) -> Self {
        Self {
            width,
            height,
            background_shift: (dx, dy),
            foreground: Vec::new(),
            brightness_ramp: 0.0,
            cut: false,
            groups: 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.groups == 0 {
            return Err(Error::Config("scene needs a positive size and at least one group".into()));
        }
        let shifts = std::iter::once(self.background_shift).chain(self.foreground.iter().map(|f| f.1));
        for (dx, dy) in shifts {
            if !(dx.is_finite() && dy.is_finite())
                || dx.abs() >= self.width as f64
                || dy.abs() >= self.height as f64
            {
                return Err(Error::Config(format!(
                    "motion ({dx}, {dy}) exceeds the {}x{} frame",
                    self.width, self.height
                )));
            }
        }
        Ok(())
    }

    fn duration(&self) -> f64 {
        1.5 * self.groups as f64
    }

    /// Textures cover every texture coordinate the clip can reach.
    fn layers(&self, rng: &mut impl Rng) -> Vec<Layer> {
        let span = self.duration();
        let bound = |(dx, dy): (f64, f64)| {
            let mx = dx.abs() * span + 8.0;
            let my = dy.abs() * span + 8.0;
            (-mx, -my, self.width as f64 + mx, self.height as f64 + my)
        };
        let (x0, y0, x1, y1) = bound(self.background_shift);
        let mut layers = vec![Layer {
            rect: None,
            shift: self.background_shift,
            texture: Texture::random(rng, x0, y0, x1, y1),
        }];
        for &(rect, shift) in &self.foreground {
            let texture = Texture::random(rng, rect.x - 8.0, rect.y - 8.0, rect.x + rect.width + 8.0, rect.y + rect.height + 8.0);
            layers.push(Layer {
                rect: Some(rect),
                shift,
                texture,
            });
        }
        layers
    }
}

/// Per-pixel facts about the middle frame of a synthetic triple.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionTruth {
    /// First-to-last-frame displacement `(dx, dy)` of the visible surface.
    pub motion: Vec<(f32, f32)>,
    /// The surface point is visible in the first frame.
    pub visible_prev: Vec<bool>,
    /// The surface point is visible in the last frame.
    pub visible_next: Vec<bool>,
}

/// Three consecutive frames; `f2` is the interpolation target.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleGroup {
    pub f1: Frame,
    pub f2: Frame,
    pub f3: Frame,
    pub source: String,
    pub index: usize,
    pub truth: Option<MotionTruth>,
}

impl TripleGroup {
    pub fn new(f1: Frame, f2: Frame, f3: Frame, source: String, index: usize) -> Result<Self> {
        f1.same_dims(&f2)?;
        f1.same_dims(&f3)?;
        Ok(Self {
            f1,
            f2,
            f3,
            source,
            index,
            truth: None,
        })
    }

    pub fn width(&self) -> usize {
        self.f1.width()
    }

    pub fn height(&self) -> usize {
        self.f1.height()
    }
}

fn top_layer(layers: &[Layer], x: f64, y: f64, t: f64) -> usize {
    layers.iter().rposition(|l| l.covers(x, y, t)).unwrap_or(0)
}

/// Sub-samples per axis when integrating over a pixel's footprint. The
/// offsets are dyadic, so integer motion maps sub-samples onto each other
/// exactly.
const SUPERSAMPLE: usize = 4;

fn render(layers: &[Layer], spec: &SceneSpec, t: f64) -> Frame {
    let ramp = (spec.brightness_ramp * t) as f32;
    let offsets: Vec<f64> = (0..SUPERSAMPLE).map(|i| (i as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5).collect();
    let norm = 1.0 / (SUPERSAMPLE * SUPERSAMPLE) as f32;
    let mut frame = Frame::filled(spec.width, spec.height, [0.0; 3]);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let mut acc = [0.0f32; 3];
            for &oy in &offsets {
                for &ox in &offsets {
                    let (fx, fy) = (x as f64 + ox, y as f64 + oy);
                    let rgb = layers[top_layer(layers, fx, fy, t)].color(fx, fy, t);
                    for c in 0..3 {
                        acc[c] += rgb[c];
                    }
                }
            }
            for (c, v) in acc.into_iter().enumerate() {
                frame.set(c, y, x, (v * norm + ramp).clamp(0.0, 1.0));
            }
        }
    }
    frame
}

fn motion_truth(layers: &[Layer], spec: &SceneSpec, t_mid: f64) -> MotionTruth {
    let n = spec.width * spec.height;
    let mut truth = MotionTruth {
        motion: Vec::with_capacity(n),
        visible_prev: Vec::with_capacity(n),
        visible_next: Vec::with_capacity(n),
    };
    let inside = |x: f64, y: f64| x >= 0.0 && y >= 0.0 && x <= (spec.width - 1) as f64 && y <= (spec.height - 1) as f64;
    for y in 0..spec.height {
        for x in 0..spec.width {
            let (fx, fy) = (x as f64, y as f64);
            let l = top_layer(layers, fx, fy, t_mid);
            let (dx, dy) = layers[l].shift;
            let visible = |s: f64| {
                let (px, py) = (fx + s * dx, fy + s * dy);
                inside(px, py) && top_layer(layers, px, py, t_mid + s) == l
            };
            truth.motion.push((dx as f32, dy as f32));
            truth.visible_prev.push(visible(-0.5));
            truth.visible_next.push(visible(0.5));
        }
    }
    truth
}

/// Renders `3 * groups` frames and groups them into triples. Truth metadata
/// is attached unless the triple straddles a cut.
pub fn generate_synthetic_sequence(spec: &SceneSpec, seed: u64) -> Result<Vec<TripleGroup>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = spec.layers(&mut rng);
    let alternate = spec.cut.then(|| spec.layers(&mut rng));
    let frame_at = |j: usize| {
        let t = 0.5 * j as f64;
        match &alternate {
            Some(alt) if t >= 1.0 => render(alt, spec, t),
            _ => render(&layers, spec, t),
        }
    };
    (0..spec.groups)
        .map(|g| {
            let t_mid = 1.5 * g as f64 + 0.5;
            let mut group = TripleGroup::new(
                frame_at(3 * g),
                frame_at(3 * g + 1),
                frame_at(3 * g + 2),
                "synthetic".into(),
                g,
            )?;
            if alternate.is_none() {
                group.truth = Some(motion_truth(&layers, spec, t_mid));
            }
            Ok(group)
        })
        .collect()
}

/// A batch of single-triple clips with random integer motion.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub clips: usize,
    pub width: usize,
    pub height: usize,
    /// Largest first-to-last-frame displacement magnitude, in pixels.
    pub max_shift: f64,
    /// Chance that a clip carries one moving foreground rectangle.
    pub foreground_probability: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            clips: 50,
            width: 64,
            height: 64,
            max_shift: 8.0,
            foreground_probability: 0.0,
        }
    }
}

fn random_shift(rng: &mut impl Rng, max: f64) -> (f64, f64) {
    let m = max.floor() as i64;
    loop {
        let (dx, dy) = (rng.gen_range(-m..=m) as f64, rng.gen_range(-m..=m) as f64);
        if dx * dx + dy * dy <= max * max {
            return (dx, dy);
        }
    }
}

/// Clip `c` is generated from its own stream of `seed`, so clips are
/// independent of the corpus size.
pub fn generate_corpus(spec: &CorpusSpec, seed: u64) -> Result<Vec<TripleGroup>> {
    if !(spec.max_shift >= 0.0) || !(0.0..=1.0).contains(&spec.foreground_probability) {
        return Err(Error::Config("max shift must be non-negative and the foreground probability in [0, 1]".into()));
    }
    (0..spec.clips)
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let (dx, dy) = random_shift(&mut rng, spec.max_shift);
            let mut scene = SceneSpec::global_shift(spec.width, spec.height, dx, dy);
            if rng.gen_bool(spec.foreground_probability) {
                let side = |rng: &mut ChaCha8Rng, n: usize| rng.gen_range(n as f64 / 5.0..n as f64 / 2.5).round();
                let (w, h) = (side(&mut rng, spec.width), side(&mut rng, spec.height));
                let rect = Rect {
                    x: rng.gen_range(0.0..spec.width as f64 - w).round(),
                    y: rng.gen_range(0.0..spec.height as f64 - h).round(),
                    width: w,
                    height: h,
                };
                scene.foreground.push((rect, random_shift(&mut rng, spec.max_shift)));
            }
            let mut groups = generate_synthetic_sequence(&scene, rng.gen())?;
            let mut g = groups.remove(0);
            g.source = format!("clip_{c:04}");
            Ok(g)
        })
        .collect()
}
