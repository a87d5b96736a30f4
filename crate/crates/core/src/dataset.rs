//! Dataset manifests, fixed-length windows and the train/test split.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bvh::read_bvh;
use crate::error::{Error, Result};
use crate::motion::{RotationalMotion, SkeletonTopology};

pub const DEFAULT_WINDOW: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub style: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fps: Option<f64>,
    /// Half-open `[start, end)` frame range.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<(usize, usize)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Reads a JSON array of entries; relative paths resolve against the
    /// manifest's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for e in &mut m.entries {
            if e.path.is_relative() {
                e.path = base.join(&e.path);
            }
        }
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            if e.style.trim().is_empty() {
                return Err(Error::Config(format!("manifest entry {i} ({}) has an empty style", e.path.display())));
            }
            if let Some((a, b)) = e.frames {
                if a >= b {
                    return Err(Error::Config(format!("manifest entry {i} has empty frame range {a}..{b}")));
                }
            }
        }
        Ok(())
    }

    /// Sorted, deduplicated style labels.
    pub fn styles(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.style.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    }
}

#[derive(Clone, Debug)]
pub struct LoadedClip {
    pub entry: usize,
    pub motion: RotationalMotion,
}

/// Reads every manifest clip; all clips must share one skeleton.
pub fn load_clips(manifest: &DatasetManifest) -> Result<(SkeletonTopology, Vec<LoadedClip>)> {
    let mut skeleton: Option<SkeletonTopology> = None;
    let mut clips = Vec::with_capacity(manifest.entries.len());
    for (i, e) in manifest.entries.iter().enumerate() {
        if !e.path.exists() {
            return Err(Error::io(
                &e.path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "manifest file does not exist"),
            ));
        }
        let (skel, mut motion) = read_bvh(&e.path)?;
        if let Some(fps) = e.fps {
            motion.fps = fps;
        }
        if let Some((a, b)) = e.frames {
            let b = b.min(motion.frames());
            if a >= b {
                return Err(Error::Config(format!("{}: frame range {a}..{b} is empty", e.path.display())));
            }
            motion = motion.slice(a, b - a);
        }
        motion.style = Some(e.style.clone());
        match &skeleton {
            None => skeleton = Some(skel),
            Some(s) if s.names != skel.names || s.parents != skel.parents => {
                return Err(Error::Config(format!("{}: skeleton differs from the first clip", e.path.display())))
            }
            _ => {}
        }
        clips.push(LoadedClip { entry: i, motion });
    }
    let skeleton = skeleton.ok_or_else(|| Error::Config("manifest has no entries".into()))?;
    Ok((skeleton, clips))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClipWindow {
    /// Index of the source clip.
    pub source: usize,
    pub start: usize,
    pub length: usize,
}

/// Windows of `length` frames at stride `length − overlap`; a trailing
/// remainder shorter than `length` is dropped.
pub fn window_clips(clip_lengths: &[usize], length: usize, overlap: usize) -> Result<Vec<ClipWindow>> {
    if length == 0 || length % 4 != 0 {
        return Err(Error::InvalidArgument(format!("window length {length} must be a positive multiple of 4")));
    }
    if overlap >= length {
        return Err(Error::InvalidArgument(format!("overlap {overlap} must be below window length {length}")));
    }
    let stride = length - overlap;
    let mut out = Vec::new();
    for (source, &n) in clip_lengths.iter().enumerate() {
        let mut start = 0;
        while start + length <= n {
            out.push(ClipWindow { source, start, length });
            start += stride;
        }
    }
    Ok(out)
}

/// Grouped split: all windows of one source clip land on the same side.
/// Groups are shuffled with `seed` and moved to the test side until it holds
/// `round(test_fraction · N)` windows; at least one group stays in train.
pub fn split(windows: &[ClipWindow], test_fraction: f64, seed: u64) -> (Vec<ClipWindow>, Vec<ClipWindow>) {
    let mut groups: BTreeMap<usize, Vec<ClipWindow>> = BTreeMap::new();
    for w in windows {
        groups.entry(w.source).or_default().push(*w);
    }
    let mut ids: Vec<usize> = groups.keys().copied().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let target = (test_fraction * windows.len() as f64).round() as usize;
    let mut test_ids = BTreeSet::new();
    let mut test_count = 0;
    for id in &ids {
        if test_count >= target || test_ids.len() + 1 >= ids.len() {
            break;
        }
        test_ids.insert(*id);
        test_count += groups[id].len();
    }
    windows.iter().partition(|w| !test_ids.contains(&w.source))
}

/// What `dataset-prepare` writes: resolved entries, windows and the split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowIndex {
    pub window_length: usize,
    pub overlap: usize,
    pub test_fraction: f64,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
    pub train: Vec<ClipWindow>,
    pub test: Vec<ClipWindow>,
}

impl WindowIndex {
    pub fn build(manifest: &DatasetManifest, clip_lengths: &[usize], length: usize, test_fraction: f64, seed: u64) -> Result<Self> {
        let overlap = length / 4;
        let windows = window_clips(clip_lengths, length, overlap)?;
        let (train, test) = split(&windows, test_fraction, seed);
        Ok(Self {
            window_length: length,
            overlap,
            test_fraction,
            seed,
            entries: manifest.entries.clone(),
            train,
            test,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            entries: self.entries.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_starts() {
        assert_eq!(window_clips(&[32], 32, 8).unwrap(), vec![ClipWindow { source: 0, start: 0, length: 32 }]);
        let w = window_clips(&[56], 32, 8).unwrap();
        assert_eq!(w.iter().map(|w| w.start).collect::<Vec<_>>(), vec![0, 24]);
        assert!(window_clips(&[31], 32, 8).unwrap().is_empty());
        let w = window_clips(&[200], 32, 8).unwrap();
        assert!(w.iter().enumerate().all(|(i, w)| w.start == 24 * i && w.length == 32));
        assert!(window_clips(&[40], 30, 7).is_err());
    }

    #[test]
    fn split_cases() {
        let ten: Vec<ClipWindow> = (0..10).map(|s| ClipWindow { source: s, start: 0, length: 32 }).collect();
        let (train, test) = split(&ten, 0.1, 1);
        assert_eq!((train.len(), test.len()), (9, 1));

        let one: Vec<ClipWindow> = (0..6).map(|i| ClipWindow { source: 0, start: 24 * i, length: 32 }).collect();
        let (train, test) = split(&one, 0.1, 1);
        assert!(train.is_empty() || test.is_empty());
        assert_eq!(train.len() + test.len(), 6);

        assert_eq!(split(&ten, 0.1, 9), split(&ten, 0.1, 9));
    }

    #[test]
    fn manifest_rejects_empty_style() {
        let m = DatasetManifest {
            entries: vec![ManifestEntry {
                path: "a.bvh".into(),
                style: " ".into(),
                fps: None,
                frames: None,
            }],
        };
        assert!(m.validate().is_err());
    }
}
