//! Candidate extraction and selection:
//!
//! 1. `candidates_per_group` random centres per triple, uniform over the
//!    frame (patches are zero-padded at the border);
//! 2. reject candidates whose consecutive patches straddle a shot boundary;
//! 3. draw `n_weighted` survivors, weighted by block-matching flow magnitude;
//! 4. keep the `n_final` with the largest entropy, ties in source order.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::augment::{Dataset, StoredSample};
use super::flow::{block_matching_flow, FlowParams};
use super::manifest::{DatasetManifest, ManifestRecord};
use super::select::{patch_entropy, shot_boundary, weighted_sample, SHOT_THRESHOLD};
use super::synthetic::TripleGroup;
use crate::error::{Error, Result};
use crate::frame::Frame;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    /// Side `s` of the stored patches.
    pub sample_side: usize,
    pub candidates_per_group: usize,
    pub n_weighted: usize,
    pub n_final: usize,
    pub shot_threshold: f64,
    pub flow: FlowParams,
    pub seed: u64,
}

impl PipelineParams {
    /// Desk scale: `s = R + 6` for the 23x23 receptive field.
    pub fn desk() -> Self {
        Self {
            sample_side: 29,
            candidates_per_group: 1,
            n_weighted: 2000,
            n_final: 1000,
            shot_threshold: SHOT_THRESHOLD,
            flow: FlowParams::default(),
            seed: 0,
        }
    }

    pub fn paper() -> Self {
        Self {
            sample_side: 150,
            n_weighted: 500_000,
            n_final: 250_000,
            ..Self::desk()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_final > self.n_weighted {
            return Err(Error::Config(format!(
                "n_final {} exceeds n_weighted {}",
                self.n_final, self.n_weighted
            )));
        }
        if self.sample_side == 0 || self.candidates_per_group == 0 {
            return Err(Error::Config("sample side and candidates per group must be positive".into()));
        }
        Ok(())
    }
}

/// A scored candidate centre; patches are re-extracted on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub group: usize,
    pub center: (usize, usize),
    pub flow_magnitude: f64,
    pub entropy: f64,
}

impl Candidate {
    pub fn patches(&self, group: &TripleGroup, side: usize) -> StoredSample {
        let (y, x) = (self.center.0 as isize, self.center.1 as isize);
        let extract = |f: &Frame| {
            let p = f.patch::<f32>(y, x, side);
            Frame::new(side, side, p.data().to_vec()).expect("patch is square")
        };
        StoredSample {
            patches: [extract(&group.f1), extract(&group.f2), extract(&group.f3)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageCounts {
    pub candidates: usize,
    pub after_shot_rejection: usize,
    pub weighted: usize,
    pub selected: usize,
}

impl std::fmt::Display for StageCounts {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "candidates {}, after shot rejection {}, weighted {}, selected {}",
            self.candidates, self.after_shot_rejection, self.weighted, self.selected
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Final candidates in source order.
    pub selected: Vec<Candidate>,
    /// Survivors of shot rejection that the weighted draw did not pick.
    pub rejected_by_sampling: Vec<Candidate>,
    pub counts: StageCounts,
}

fn score_group(group: &TripleGroup, index: usize, params: &PipelineParams) -> Result<Vec<Option<Candidate>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(index as u64);
    (0..params.candidates_per_group)
        .map(|_| {
            let center = (rng.gen_range(0..group.height()), rng.gen_range(0..group.width()));
            let mut c = Candidate {
                group: index,
                center,
                flow_magnitude: 0.0,
                entropy: 0.0,
            };
            let s = c.patches(group, params.sample_side);
            let [p1, p2, p3] = &s.patches;
            if shot_boundary(p1, p2, params.shot_threshold)? || shot_boundary(p2, p3, params.shot_threshold)? {
                return Ok(None);
            }
            c.flow_magnitude = block_matching_flow(p1, p3, &params.flow)?.mean_magnitude;
            c.entropy = s.patches.iter().map(patch_entropy).sum::<f64>() / 3.0;
            Ok(Some(c))
        })
        .collect()
}

pub fn select_samples(triples: &[TripleGroup], params: &PipelineParams) -> Result<Selection> {
    params.validate()?;
    let scored = triples
        .par_iter()
        .enumerate()
        .map(|(i, g)| score_group(g, i, params))
        .collect::<Result<Vec<_>>>()?;
    let mut counts = StageCounts {
        candidates: triples.len() * params.candidates_per_group,
        ..StageCounts::default()
    };
    let survivors: Vec<Candidate> = scored.into_iter().flatten().flatten().collect();
    counts.after_shot_rejection = survivors.len();
    if survivors.len() < params.n_weighted {
        return Err(Error::Dataset {
            message: format!("{} candidates survive shot rejection, {} needed", survivors.len(), params.n_weighted),
            counts: counts.to_string(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(u64::MAX);
    let magnitudes: Vec<f64> = survivors.iter().map(|c| c.flow_magnitude).collect();
    let mut drawn = weighted_sample(&magnitudes, params.n_weighted, &mut rng)?;
    drawn.sort_unstable();
    counts.weighted = drawn.len();

    let mut by_entropy = drawn.clone();
    by_entropy.sort_by(|&a, &b| survivors[b].entropy.total_cmp(&survivors[a].entropy));
    let mut keep = by_entropy[..params.n_final].to_vec();
    keep.sort_unstable();
    counts.selected = keep.len();

    let mut is_drawn = vec![false; survivors.len()];
    for &i in &drawn {
        is_drawn[i] = true;
    }
    let rejected_by_sampling = survivors
        .iter()
        .zip(&is_drawn)
        .filter(|(_, &d)| !d)
        .map(|(c, _)| c.clone())
        .collect();
    Ok(Selection {
        selected: keep.into_iter().map(|i| survivors[i].clone()).collect(),
        rejected_by_sampling,
        counts,
    })
}

/// Runs the pipeline and writes `samples/*.bin`, the manifest and a
/// `pipeline.json` record of the parameters and stage counts.
pub fn build_dataset(triples: &[TripleGroup], params: &PipelineParams, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let out = out_dir.as_ref();
    let selection = select_samples(triples, params)?;
    std::fs::create_dir_all(out.join("samples"))?;
    let mut manifest = DatasetManifest::default();
    for (i, c) in selection.selected.iter().enumerate() {
        let rel = format!("samples/{i:06}.bin");
        c.patches(&triples[c.group], params.sample_side).save(out.join(&rel))?;
        manifest.records.push(ManifestRecord {
            path: rel,
            flow_magnitude: c.flow_magnitude,
            entropy: c.entropy,
        });
    }
    manifest.write(out.join(Dataset::MANIFEST_FILE))?;
    let sidecar = serde_json::json!({ "params": params, "counts": selection.counts });
    std::fs::write(
        out.join("pipeline.json"),
        serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Format(e.to_string()))? + "\n",
    )?;
    Ok(manifest)
}

fn frame_number(path: &Path) -> Option<u64> {
    let stem = path.file_stem()?.to_str()?;
    let digits: String = stem.chars().rev().take_while(char::is_ascii_digit).collect();
    digits.chars().rev().collect::<String>().parse().ok()
}

/// Reads every sub-directory of `root` as a clip of numbered PNG frames
/// (a directory of PNGs directly under `root` counts as one clip) and
/// groups each clip into non-overlapping consecutive triples.
pub fn load_triples(root: impl AsRef<Path>) -> Result<Vec<TripleGroup>> {
    let root = root.as_ref();
    let mut clips: Vec<PathBuf> = std::fs::read_dir(root)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    clips.sort();
    if clips.is_empty() {
        clips.push(root.to_path_buf());
    }
    let mut triples = Vec::new();
    for clip in clips {
        let mut frames: Vec<(u64, PathBuf)> = std::fs::read_dir(&clip)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
            .map(|p| {
                frame_number(&p)
                    .map(|n| (n, p.clone()))
                    .ok_or_else(|| Error::Argument(format!("frame file {} has no trailing frame number", p.display())))
            })
            .collect::<Result<_>>()?;
        frames.sort();
        let source = clip
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        for (i, chunk) in frames.chunks_exact(3).enumerate() {
            let load = |k: usize| Frame::load_png(&chunk[k].1);
            triples.push(TripleGroup::new(load(0)?, load(1)?, load(2)?, source.clone(), i)?);
        }
    }
    Ok(triples)
}
