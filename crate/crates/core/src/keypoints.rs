//! 2D keypoint sequences stored as JSON.
//!
//! ```json
//! { "fps": 30, "joints": ["Hips", "LeftUpLeg", ...],
//!   "frames": [[[x, y, conf], ...], ...],
//!   "mapping": { "pelvis": "Hips" }, "y_axis": "down" }
//! ```
//!
//! `mapping` renames keypoints to skeleton joints (unmapped names must match
//! a skeleton joint directly). `y_axis` is `"up"` (default) or `"down"` for
//! pixel coordinates.

use std::collections::HashMap;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{PositionalMotion2D, SkeletonTopology};
use crate::projection::normalize_2d;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KeypointFile {
    pub fps: f64,
    pub joints: Vec<String>,
    pub frames: Vec<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "HashMap::is_empty")]
    pub mapping: HashMap<String, String>,
    #[serde(default)]
    pub y_axis: YAxis,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum YAxis {
    #[default]
    Up,
    Down,
}

#[derive(Clone, Copy, Debug)]
pub struct KeypointOptions {
    /// Frames whose mean confidence falls below this are dropped.
    pub confidence_threshold: f64,
    pub pelvis: usize,
    pub torso_top: usize,
}

impl KeypointOptions {
    pub fn new(pelvis: usize, torso_top: usize) -> Self {
        Self {
            confidence_threshold: 0.3,
            pelvis,
            torso_top,
        }
    }
}

impl KeypointFile {
    pub fn from_motion(motion: &PositionalMotion2D, skel: &SkeletonTopology) -> Self {
        let frames = motion
            .positions
            .iter()
            .zip(&motion.confidence)
            .map(|(f, c)| f.iter().zip(c).map(|(p, c)| [p[0], p[1], *c]).collect())
            .collect();
        Self {
            fps: motion.fps,
            joints: skel.names.clone(),
            frames,
            mapping: HashMap::new(),
            y_axis: YAxis::Up,
        }
    }
}

/// Maps keypoints onto the skeleton's joint order, drops low-confidence
/// frames, centers on the pelvis and scales the mean torso length to 1.
pub fn keypoints_to_motion(
    file: &KeypointFile,
    skel: &SkeletonTopology,
    opts: &KeypointOptions,
) -> Result<PositionalMotion2D> {
    if file.frames.is_empty() {
        return Err(Error::Keypoints("empty frame list".into()));
    }
    if !(file.fps > 0.0) {
        return Err(Error::Keypoints(format!("fps must be positive, got {}", file.fps)));
    }
    let mut source_of = vec![None; skel.num_joints()];
    for (k, name) in file.joints.iter().enumerate() {
        let target = file.mapping.get(name).unwrap_or(name);
        if let Some(j) = skel.joint_index(target) {
            source_of[j] = Some(k);
        }
    }
    let missing: Vec<&str> = source_of
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_none())
        .map(|(j, _)| skel.names[j].as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Keypoints(format!(
            "no keypoint mapped to skeleton joints: {}",
            missing.join(", ")
        )));
    }
    let source_of: Vec<usize> = source_of.into_iter().map(Option::unwrap).collect();
    let flip = if file.y_axis == YAxis::Down { -1.0 } else { 1.0 };

    let mut positions = Vec::new();
    let mut confidence = Vec::new();
    let mut dropped = 0usize;
    for (t, frame) in file.frames.iter().enumerate() {
        if frame.len() != file.joints.len() {
            return Err(Error::Keypoints(format!(
                "frame {t} has {} keypoints, header declares {}",
                frame.len(),
                file.joints.len()
            )));
        }
        let pts: Vec<[f64; 3]> = source_of.iter().map(|&k| frame[k]).collect();
        if pts.iter().any(|p| !(p[0].is_finite() && p[1].is_finite()) || !(0.0..=1.0).contains(&p[2])) {
            return Err(Error::Keypoints(format!("frame {t} has non-finite or out-of-range values")));
        }
        let mean_conf = pts.iter().map(|p| p[2]).sum::<f64>() / pts.len() as f64;
        if mean_conf < opts.confidence_threshold {
            dropped += 1;
            continue;
        }
        positions.push(pts.iter().map(|p| [p[0], flip * p[1]]).collect());
        confidence.push(pts.iter().map(|p| p[2]).collect());
    }
    if positions.is_empty() {
        return Err(Error::Keypoints(format!(
            "all {} frames fall below confidence {}",
            file.frames.len(),
            opts.confidence_threshold
        )));
    }
    if dropped > 0 {
        warn!("dropped {dropped} of {} keypoint frames below confidence {}", file.frames.len(), opts.confidence_threshold);
    }
    let raw = PositionalMotion2D {
        positions,
        confidence,
        fps: file.fps,
    };
    normalize_2d(&raw, opts.pelvis, opts.torso_top)
}

pub fn load_keypoints2d(path: &Path, skel: &SkeletonTopology, opts: &KeypointOptions) -> Result<PositionalMotion2D> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: KeypointFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    keypoints_to_motion(&file, skel, opts)
}
