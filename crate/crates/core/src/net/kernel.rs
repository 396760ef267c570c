use crate::error::{Error, Result};
use crate::tensor::{to_f64, Scalar};

/// Which input frame a sub-kernel applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Half {
    First,
    Second,
}

/// A `k x 2k` interpolation kernel: columns `[0, k)` weight the patch from
/// the first frame, columns `[k, 2k)` the patch from the second.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelPair<T> {
    size: usize,
    data: Vec<T>,
}

impl<T: Scalar> KernelPair<T> {
    /// Wraps a row-major `k x 2k` grid, e.g. a reshaped softmax output.
    pub fn new(size: usize, data: Vec<T>) -> Result<Self> {
        if size == 0 || data.len() != 2 * size * size {
            return Err(Error::Shape {
                expected: vec![size, 2 * size],
                actual: vec![data.len()],
            });
        }
        Ok(Self { size, data })
    }

    /// Builds a kernel from the two `k x k` sub-kernels.
    pub fn from_halves(size: usize, first: &[T], second: &[T]) -> Result<Self> {
        if first.len() != size * size || second.len() != size * size {
            return Err(Error::Shape {
                expected: vec![size, size],
                actual: vec![first.len(), second.len()],
            });
        }
        let mut data = Vec::with_capacity(2 * size * size);
        for row in 0..size {
            data.extend_from_slice(&first[row * size..(row + 1) * size]);
            data.extend_from_slice(&second[row * size..(row + 1) * size]);
        }
        Ok(Self { size, data })
    }

    /// Unit mass at offset `(dx, dy)` from the centre of one half.
    pub fn delta(size: usize, half: Half, dx: isize, dy: isize) -> Result<Self> {
        let c = (size / 2) as isize;
        let (x, y) = (c + dx, c + dy);
        if x < 0 || y < 0 || x >= size as isize || y >= size as isize {
            return Err(Error::Argument(format!("offset ({dx}, {dy}) outside a {size}x{size} kernel")));
        }
        let mut k = Self::new(size, vec![T::zero(); 2 * size * size])?;
        *k.at_mut(half, y as usize, x as usize) = T::one();
        Ok(k)
    }

    /// Equal weight on every coefficient of both halves.
    pub fn uniform(size: usize) -> Self {
        let v = T::lit(1.0 / (2 * size * size) as f64);
        Self {
            size,
            data: vec![v; 2 * size * size],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Row-major `k x 2k` coefficients.
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn at(&self, half: Half, row: usize, col: usize) -> T {
        self.data[self.index(half, row, col)]
    }

    pub fn at_mut(&mut self, half: Half, row: usize, col: usize) -> &mut T {
        let i = self.index(half, row, col);
        &mut self.data[i]
    }

    #[inline]
    fn index(&self, half: Half, row: usize, col: usize) -> usize {
        let offset = match half {
            Half::First => 0,
            Half::Second => self.size,
        };
        row * 2 * self.size + offset + col
    }

    /// Row-major `k x k` copy of one sub-kernel.
    pub fn sub_kernel(&self, half: Half) -> Vec<T> {
        let k = self.size;
        (0..k * k).map(|i| self.at(half, i / k, i % k)).collect()
    }

    /// Every coefficient non-negative and the total within `tol` of one.
    pub fn is_normalized(&self, tol: f64) -> bool {
        self.data.iter().all(|&v| v >= T::zero())
            && (self.data.iter().map(|&v| to_f64(v)).sum::<f64>() - 1.0).abs() <= tol
    }

    /// Both sub-kernels mirrored left-right.
    pub fn flip_horizontal(&self) -> Self {
        let k = self.size;
        let mut out = self.clone();
        for half in [Half::First, Half::Second] {
            for r in 0..k {
                for c in 0..k {
                    *out.at_mut(half, r, c) = self.at(half, r, k - 1 - c);
                }
            }
        }
        out
    }

    pub fn flip_vertical(&self) -> Self {
        let k = self.size;
        let mut out = self.clone();
        for half in [Half::First, Half::Second] {
            for r in 0..k {
                for c in 0..k {
                    *out.at_mut(half, r, c) = self.at(half, k - 1 - r, c);
                }
            }
        }
        out
    }

    /// Exchanges the two halves (temporal order reversal).
    pub fn swap_halves(&self) -> Self {
        Self::from_halves(self.size, &self.sub_kernel(Half::Second), &self.sub_kernel(Half::First))
            .expect("same size")
    }

    pub fn cast<U: Scalar>(&self) -> KernelPair<U> {
        KernelPair {
            size: self.size,
            data: self.data.iter().map(|&v| U::lit(to_f64(v))).collect(),
        }
    }
}
