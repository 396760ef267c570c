//! Binary checkpoint format (little-endian):
//!
//! ```text
//! "ADKN" u32:version
//! u32:R u32:k u32:d u32:n_widths u32*n_widths u32:n_sizes u32*n_sizes
//! tensor*   (per layer: weights, bias, then gamma, beta, running mean,
//!            running variance when batch-normalised)
//! tensor := u32:rank u32*rank f32*numel
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{KernelNet, NetworkConfig};
use crate::error::{Error, Result};
use crate::tensor::{to_f64, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ADKN";
pub const CHECKPOINT_VERSION: u32 = 1;

const MAX_RANK: usize = 8;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Argument(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

/// Appends one tensor in the shared `rank, dims, f32 data` encoding.
pub fn encode_tensor<T: Scalar>(out: &mut Vec<u8>, t: &Tensor<T>) -> Result<()> {
    put_u32(out, t.rank())?;
    for &d in t.dims() {
        put_u32(out, d)?;
    }
    for &v in t.data() {
        out.extend_from_slice(&(to_f64(v) as f32).to_le_bytes());
    }
    Ok(())
}

/// Decodes one tensor from the front of `bytes`, returning it and the
/// number of bytes consumed.
pub fn decode_tensor<T: Scalar>(bytes: &[u8]) -> Result<(Tensor<T>, usize)> {
    let mut r = Reader { bytes, pos: 0 };
    let t = read_tensor(&mut r)?;
    Ok((t, r.pos))
}

fn read_tensor<T: Scalar>(r: &mut Reader<'_>) -> Result<Tensor<T>> {
    let rank = r.u32("tensor rank")?;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::Format(format!("implausible tensor rank {rank}")));
    }
    let dims = (0..rank).map(|_| r.u32("tensor dims")).collect::<Result<Vec<_>>>()?;
    let numel = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .filter(|&n| n.checked_mul(4).is_some_and(|b| b <= r.bytes.len()))
        .ok_or_else(|| Error::Format(format!("tensor dims {dims:?} exceed the file size")))?;
    let raw = r.take(4 * numel, "tensor data")?;
    let data = raw
        .chunks_exact(4)
        .map(|b| T::lit(f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))))
        .collect();
    Tensor::new(dims, data)
}

impl<T: Scalar> KernelNet<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let c = &self.config;
        let mut out = CHECKPOINT_MAGIC.to_vec();
        put_u32(&mut out, CHECKPOINT_VERSION as usize)?;
        for v in [c.receptive_field, c.patch_size, c.down_convs, c.conv_widths.len()] {
            put_u32(&mut out, v)?;
        }
        for &w in &c.conv_widths {
            put_u32(&mut out, w)?;
        }
        put_u32(&mut out, c.conv_sizes.len())?;
        for &s in &c.conv_sizes {
            put_u32(&mut out, s)?;
        }
        for t in self.state_tensors() {
            encode_tensor(&mut out, t)?;
        }
        Ok(out)
    }

    /// Rebuilds a network from its serialised form. The embedded
    /// configuration determines the architecture.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a kernel-network checkpoint (bad magic)".into()));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION as usize {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let receptive_field = r.u32("receptive field")?;
        let patch_size = r.u32("patch size")?;
        let down_convs = r.u32("down-convolution count")?;
        let mut list = |what: &str| -> Result<Vec<usize>> {
            let n = r.u32(what)?;
            if n > 64 {
                return Err(Error::Format(format!("implausible {what} length {n}")));
            }
            (0..n).map(|_| r.u32(what)).collect()
        };
        let conv_widths = list("conv widths")?;
        let conv_sizes = list("conv sizes")?;
        let config = NetworkConfig {
            receptive_field,
            patch_size,
            down_convs,
            conv_widths,
            conv_sizes,
        };
        let mut net = KernelNet::init(config, 0)?;
        for slot in net.state_tensors_mut() {
            let t: Tensor<T> = read_tensor(&mut r)?;
            if t.dims() != slot.dims() {
                return Err(Error::Config(format!(
                    "checkpoint tensor has dims {:?} but the embedded configuration implies {:?}",
                    t.dims(),
                    slot.dims()
                )));
            }
            *slot = t;
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after the last tensor", bytes.len() - r.pos)));
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}
