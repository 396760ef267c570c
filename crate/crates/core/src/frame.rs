//! RGB frames and square patches, channel-planar with values in `[0, 1]`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// An RGB image, stored as three `height x width` planes.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != 3 * width * height {
            return Err(Error::Shape {
                expected: vec![3, height, width],
                actual: vec![data.len()],
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let plane = width * height;
        let mut data = vec![0.0; 3 * plane];
        for (c, v) in rgb.iter().enumerate() {
            data[c * plane..(c + 1) * plane].fill(*v);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut frame = Self::filled(width, height, [0.0; 3]);
        for c in 0..3 {
            for y in 0..height {
                for x in 0..width {
                    frame.set(c, y, x, f(c, y, x));
                }
            }
        }
        frame
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Zero outside the frame.
    pub fn get_or_zero(&self, c: usize, y: isize, x: isize) -> f32 {
        if y < 0 || x < 0 || y as usize >= self.height || x as usize >= self.width {
            0.0
        } else {
            self.get(c, y as usize, x as usize)
        }
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn same_dims(&self, other: &Frame) -> Result<()> {
        if self.dims() == other.dims() {
            Ok(())
        } else {
            Err(Error::shape(
                &[3, self.height, self.width],
                &[3, other.height, other.width],
            ))
        }
    }

    /// Zero border of `pad` pixels on every side.
    pub fn padded(&self, pad: usize) -> Frame {
        let (w, h) = (self.width + 2 * pad, self.height + 2 * pad);
        let mut out = Frame::filled(w, h, [0.0; 3]);
        for c in 0..3 {
            for y in 0..self.height {
                let src = &self.data[(c * self.height + y) * self.width..][..self.width];
                out.data[(c * h + y + pad) * w + pad..][..self.width].copy_from_slice(src);
            }
        }
        out
    }

    /// `side x side` patch centred on `(cy, cx)`, zero outside the frame.
    pub fn patch<T: Scalar>(&self, cy: isize, cx: isize, side: usize) -> Patch<T> {
        let half = (side / 2) as isize;
        let mut data = Vec::with_capacity(3 * side * side);
        for c in 0..3 {
            for dy in 0..side as isize {
                for dx in 0..side as isize {
                    let v = self.get_or_zero(c, cy - half + dy, cx - half + dx);
                    data.push(T::lit(f64::from(v)));
                }
            }
        }
        Patch { side, data }
    }

    /// BT.601 luma.
    pub fn grayscale(&self) -> Vec<f32> {
        let n = self.width * self.height;
        (0..n)
            .map(|i| 0.299 * self.data[i] + 0.587 * self.data[n + i] + 0.114 * self.data[2 * n + i])
            .collect()
    }

    /// Reads an 8-bit RGB image (any format the `image` crate decodes as
    /// RGB8; PNG in practice).
    pub fn load_png(path: impl AsRef<Path>) -> Result<Frame> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut frame = Frame::filled(w, h, [0.0; 3]);
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                frame.set(c, y as usize, x as usize, f32::from(px[c]) / 255.0);
            }
        }
        Ok(frame)
    }

    /// 8-bit quantisation: `round(v * 255)` clamped to `[0, 255]`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(3 * self.width * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..3 {
                    out.push(quantize(self.get(c, y, x)));
                }
            }
        }
        out
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        image::save_buffer(
            path,
            &self.to_rgb8(),
            self.width as u32,
            self.height as u32,
            image::ColorType::Rgb8,
        )
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Round-trips the frame through 8-bit quantisation.
    pub fn quantized(&self) -> Frame {
        Frame {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f32::from(quantize(v)) / 255.0).collect(),
        }
    }
}

pub fn quantize(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Square three-channel patch, `[3, side, side]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch<T> {
    side: usize,
    data: Vec<T>,
}

impl<T: Scalar> Patch<T> {
    pub fn new(side: usize, data: Vec<T>) -> Result<Self> {
        if side == 0 || data.len() != 3 * side * side {
            return Err(Error::Shape {
                expected: vec![3, side, side],
                actual: vec![data.len()],
            });
        }
        Ok(Self { side, data })
    }

    pub fn from_fn(side: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(3 * side * side);
        for c in 0..3 {
            for y in 0..side {
                for x in 0..side {
                    data.push(f(c, y, x));
                }
            }
        }
        Self { side, data }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.side * self.side;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.side + y) * self.side + x]
    }

    /// Sub-patch of `side` starting at `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, side: usize) -> Result<Patch<T>> {
        if y0 + side > self.side || x0 + side > self.side || side == 0 {
            return Err(Error::shape(&[3, self.side, self.side], &[3, y0 + side, x0 + side]));
        }
        Ok(Self::from_fn(side, |c, y, x| self.get(c, y0 + y, x0 + x)))
    }

    /// Centred sub-patch; `side` must have the same parity as the patch.
    pub fn center_crop(&self, side: usize) -> Result<Patch<T>> {
        if side > self.side || (self.side - side) % 2 != 0 {
            return Err(Error::shape(&[3, side, side], &[3, self.side, self.side]));
        }
        let off = (self.side - side) / 2;
        self.crop(off, off, side)
    }

    pub fn flip_horizontal(&self) -> Patch<T> {
        let s = self.side;
        Self::from_fn(s, |c, y, x| self.get(c, y, s - 1 - x))
    }

    pub fn flip_vertical(&self) -> Patch<T> {
        let s = self.side;
        Self::from_fn(s, |c, y, x| self.get(c, s - 1 - y, x))
    }

    pub fn cast<U: Scalar>(&self) -> Patch<U> {
        Patch {
            side: self.side,
            data: self.data.iter().map(|&v| U::lit(crate::tensor::to_f64(v))).collect(),
        }
    }

    pub fn center(&self) -> [T; 3] {
        let h = self.side / 2;
        [0, 1, 2].map(|c| self.get(c, h, h))
    }

    pub fn min_max(&self) -> (T, T) {
        self.data.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
    }
}
