use std::path::{Path, PathBuf};

use rand::Rng;

use super::manifest::DatasetManifest;
use crate::error::{Error, Result};
use crate::frame::{Frame, Patch};
use crate::net::{decode_tensor, encode_tensor, NetworkConfig};
use crate::synth::{GroundTruth, Sample};
use crate::tensor::Tensor;

/// Three co-centred `s x s` patches from one triple-frame group.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredSample {
    pub patches: [Frame; 3],
}

impl StoredSample {
    pub fn new(patches: [Frame; 3]) -> Result<Self> {
        let s = patches[0].width();
        for p in &patches {
            if p.dims() != (s, s) {
                return Err(Error::shape(&[3, s, s], &[3, p.height(), p.width()]));
            }
        }
        Ok(Self { patches })
    }

    pub fn side(&self) -> usize {
        self.patches[0].width()
    }

    /// One `[3, 3, s, s]` tensor in the checkpoint tensor encoding.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let s = self.side();
        let data = self.patches.iter().flat_map(|p| p.data().iter().copied()).collect();
        let mut out = Vec::new();
        encode_tensor(&mut out, &Tensor::new(vec![3, 3, s, s], data)?)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (t, used) = decode_tensor::<f32>(bytes)?;
        if used != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes in sample file", bytes.len() - used)));
        }
        let [3, 3, s, s2] = *t.dims() else {
            return Err(Error::Format(format!("sample tensor has dims {:?}, expected [3, 3, s, s]", t.dims())));
        };
        if s != s2 {
            return Err(Error::Format(format!("sample patches are {s}x{s2}, expected square")));
        }
        let data = t.into_data();
        let n = 3 * s * s;
        let frame = |i: usize| Frame::new(s, s, data[i * n..(i + 1) * n].to_vec());
        Self::new([frame(0)?, frame(1)?, frame(2)?])
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Random choices applied to one stored sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Augmentation {
    /// Top-left corner of the `(R + 2)` crop window.
    pub offset: (usize, usize),
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    pub swap_temporal: bool,
}

impl Augmentation {
    fn room(side: usize, config: &NetworkConfig) -> Result<usize> {
        let window = config.receptive_field + 2;
        side.checked_sub(window).ok_or_else(|| {
            Error::shape(&[3, window, window], &[3, side, side])
        })
    }

    pub fn random(rng: &mut impl Rng, side: usize, config: &NetworkConfig) -> Result<Self> {
        let room = Self::room(side, config)?;
        Ok(Self {
            offset: (rng.gen_range(0..=room), rng.gen_range(0..=room)),
            flip_horizontal: rng.gen_bool(0.5),
            flip_vertical: rng.gen_bool(0.5),
            swap_temporal: rng.gen_bool(0.5),
        })
    }

    /// Centre crop without flips or swap.
    pub fn centered(side: usize, config: &NetworkConfig) -> Result<Self> {
        let room = Self::room(side, config)?;
        Ok(Self {
            offset: (room / 2, room / 2),
            ..Self::default()
        })
    }

    /// Builds the training example. The receptive fields are the central
    /// `R x R` of the crop window and the ground truth is read from the
    /// transformed middle patch, so flips permute gradient directions
    /// implicitly.
    pub fn apply(&self, stored: &StoredSample, config: &NetworkConfig) -> Result<Sample<f32>> {
        let room = Self::room(stored.side(), config)?;
        let (oy, ox) = self.offset;
        if oy > room || ox > room {
            return Err(Error::Argument(format!("crop offset ({oy}, {ox}) exceeds {room}")));
        }
        let r = config.receptive_field;
        let [a, m, b] = stored.patches.each_ref().map(|f| -> Patch<f32> {
            let p: Patch<f32> = f.patch((oy + 1 + r / 2) as isize, (ox + 1 + r / 2) as isize, r);
            let p = if self.flip_horizontal { p.flip_horizontal() } else { p };
            if self.flip_vertical {
                p.flip_vertical()
            } else {
                p
            }
        });
        let truth = GroundTruth::from_patch(&m)?;
        let (r1, r2) = if self.swap_temporal { (b, a) } else { (a, b) };
        Ok(Sample { r1, r2, truth })
    }
}

pub fn augment_sample(stored: &StoredSample, config: &NetworkConfig, rng: &mut impl Rng) -> Result<Sample<f32>> {
    Augmentation::random(rng, stored.side(), config)?.apply(stored, config)
}

/// Deterministic example used for validation.
pub fn center_sample(stored: &StoredSample, config: &NetworkConfig) -> Result<Sample<f32>> {
    Augmentation::centered(stored.side(), config)?.apply(stored, config)
}

/// A manifest together with all of its samples, loaded into memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub samples: Vec<StoredSample>,
}

impl Dataset {
    pub const MANIFEST_FILE: &'static str = "manifest.txt";

    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let manifest = DatasetManifest::read(root.join(Self::MANIFEST_FILE))?;
        let samples = manifest
            .records
            .iter()
            .map(|r| StoredSample::load(root.join(&r.path)))
            .collect::<Result<_>>()?;
        Ok(Self {
            root,
            manifest,
            samples,
        })
    }
}
