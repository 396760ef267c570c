//! Kernel dumps for individual pixels: heatmaps of both sub-kernels, a
//! magnified crop of their support and a text summary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::net::{Half, KernelNet, KernelPair};
use crate::synth::{kernel_centroids, sub_kernel_mass};

/// Magnification of the support crop.
pub const CROP_SCALE: usize = 8;
/// Coefficients below this fraction of the largest one are outside the
/// support.
pub const SUPPORT_FRACTION: f32 = 0.01;

fn save_gray(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    image::save_buffer(path, pixels, width as u32, height as u32, image::ColorType::L8).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Heatmap intensity: each coefficient relative to the kernel's largest,
/// so the two halves share one scale.
fn intensities(kernel: &KernelPair<f32>) -> Vec<u8> {
    let max = kernel.data().iter().copied().fold(0.0f32, f32::max);
    kernel
        .data()
        .iter()
        .map(|&v| if max > 0.0 { (255.0 * v / max).round() as u8 } else { 0 })
        .collect()
}

/// Text summary: masses and centroids `(dx, dy)` of both sub-kernels.
pub fn kernel_summary(kernel: &KernelPair<f32>, x: usize, y: usize) -> String {
    let (m1, m2) = sub_kernel_mass(kernel);
    let (c1, c2) = kernel_centroids(kernel);
    let fmt = |c: Option<(f64, f64)>| c.map_or("none".to_string(), |(dx, dy)| format!("{dx} {dy}"));
    let mut s = String::new();
    writeln!(s, "pixel {x} {y}").unwrap();
    writeln!(s, "mass1 {m1}").unwrap();
    writeln!(s, "mass2 {m2}").unwrap();
    writeln!(s, "centroid1 {}", fmt(c1)).unwrap();
    writeln!(s, "centroid2 {}", fmt(c2)).unwrap();
    s
}

/// Writes `px_<x>_<y>_k1.png`, `_k2.png`, `_crop.png` and `_kernel.txt`.
pub fn write_kernel_dump(kernel: &KernelPair<f32>, x: usize, y: usize, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let k = kernel.size();
    let levels = intensities(kernel);
    let prefix = out_dir.join(format!("px_{x}_{y}"));
    let path = |suffix: &str| PathBuf::from(format!("{}_{suffix}", prefix.display()));
    let mut written = Vec::new();
    for (half, name) in [(Half::First, "k1.png"), (Half::Second, "k2.png")] {
        let offset = if half == Half::First { 0 } else { k };
        let pixels: Vec<u8> = (0..k * k).map(|i| levels[(i / k) * 2 * k + offset + i % k]).collect();
        save_gray(&path(name), k, k, &pixels)?;
        written.push(path(name));
    }

    // Bounding box of the support over the full k x 2k grid.
    let max = kernel.data().iter().copied().fold(0.0f32, f32::max);
    let (mut r0, mut r1, mut c0, mut c1) = (2 * k, 0, 2 * k, 0);
    for r in 0..k {
        for c in 0..2 * k {
            if max > 0.0 && kernel.data()[r * 2 * k + c] >= SUPPORT_FRACTION * max {
                (r0, r1, c0, c1) = (r0.min(r), r1.max(r), c0.min(c), c1.max(c));
            }
        }
    }
    if r0 > r1 {
        (r0, r1, c0, c1) = (0, k - 1, 0, 2 * k - 1);
    }
    let (h, w) = ((r1 - r0 + 1) * CROP_SCALE, (c1 - c0 + 1) * CROP_SCALE);
    let crop: Vec<u8> = (0..h * w)
        .map(|i| {
            let (py, px) = (i / w, i % w);
            levels[(r0 + py / CROP_SCALE) * 2 * k + c0 + px / CROP_SCALE]
        })
        .collect();
    save_gray(&path("crop.png"), w, h, &crop)?;
    written.push(path("crop.png"));

    std::fs::write(path("kernel.txt"), kernel_summary(kernel, x, y))?;
    written.push(path("kernel.txt"));
    Ok(written)
}

/// Estimates and dumps the kernel of every `(x, y)` in `pixels`.
pub fn dump_kernel_heatmaps(
    net: &KernelNet<f32>,
    i1: &Frame,
    i2: &Frame,
    pixels: &[(usize, usize)],
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    i1.same_dims(i2)?;
    let out_dir = out_dir.as_ref();
    if let Some(&(x, y)) = pixels.iter().find(|&&(x, y)| x >= i1.width() || y >= i1.height()) {
        return Err(Error::Argument(format!(
            "pixel ({x}, {y}) outside the {}x{} frame",
            i1.width(),
            i1.height()
        )));
    }
    std::fs::create_dir_all(out_dir)?;
    let r = net.config().receptive_field;
    let mut written = Vec::new();
    for &(x, y) in pixels {
        let (p1, p2) = (i1.patch(y as isize, x as isize, r), i2.patch(y as isize, x as isize, r));
        let kernel = net.forward_kernel(&p1, &p2)?;
        written.extend(write_kernel_dump(&kernel, x, y, out_dir)?);
    }
    Ok(written)
}
