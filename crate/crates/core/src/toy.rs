//! Procedural gait clips on an 8-joint biped.
//!
//! Styles differ in posture: hip and knee bend and torso lean. Cadence,
//! phase, heading and a jitter on swing amplitudes vary per clip and play
//! the role of content. The root is driven so the lower foot stays planted: its height
//! is pinned to the ground and its horizontal velocity is cancelled.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bvh::save_bvh;
use crate::dataset::{DatasetManifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::kinematics::fk_frame;
use crate::motion::{RotationalMotion, SkeletonTopology};
use crate::projection::BodyLandmarks;
use crate::quat::{Axis, Quaternion};

pub const PELVIS: usize = 0;
pub const LEFT_HIP: usize = 1;
pub const LEFT_KNEE: usize = 2;
pub const LEFT_FOOT: usize = 3;
pub const RIGHT_HIP: usize = 4;
pub const RIGHT_KNEE: usize = 5;
pub const RIGHT_FOOT: usize = 6;
pub const NECK: usize = 7;

/// Pelvis, hips, knees, feet and a neck/head; faces +Z with the left side at +X.
pub fn toy_skeleton() -> SkeletonTopology {
    let names = ["Hips", "LeftUpLeg", "LeftLeg", "LeftFoot", "RightUpLeg", "RightLeg", "RightFoot", "Neck"];
    let parents = vec![None, Some(0), Some(1), Some(2), Some(0), Some(4), Some(5), Some(0)];
    let offsets = vec![
        [0.0, 0.95, 0.0],
        [0.1, -0.05, 0.0],
        [0.0, -0.45, 0.0],
        [0.0, -0.45, 0.0],
        [-0.1, -0.05, 0.0],
        [0.0, -0.45, 0.0],
        [0.0, -0.45, 0.0],
        [0.0, 0.5, 0.0],
    ];
    let mut s = SkeletonTopology::new(names.iter().map(|n| n.to_string()).collect(), parents, offsets).unwrap();
    s.end_sites[LEFT_FOOT] = Some([0.0, 0.0, 0.12]);
    s.end_sites[RIGHT_FOOT] = Some([0.0, 0.0, 0.12]);
    s.end_sites[NECK] = Some([0.0, 0.15, 0.0]);
    s.with_feet(LEFT_FOOT, RIGHT_FOOT).unwrap()
}

pub fn toy_landmarks() -> BodyLandmarks {
    BodyLandmarks {
        pelvis: PELVIS,
        torso_top: NECK,
        hips: (LEFT_HIP, RIGHT_HIP),
        shoulders: None,
    }
}

/// Gait parameters that make up a style (angles in radians).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyStyle {
    pub name: String,
    pub hip_amp: f64,
    pub hip_offset: f64,
    pub knee_amp: f64,
    pub knee_offset: f64,
    pub lean: f64,
    pub sway: f64,
}

pub fn toy_styles() -> Vec<ToyStyle> {
    let s = |name: &str, hip_amp, hip_offset, knee_amp, knee_offset, lean, sway| ToyStyle {
        name: name.to_string(),
        hip_amp,
        hip_offset,
        knee_amp,
        knee_offset,
        lean,
        sway,
    };
    vec![
        s("neutral", 0.35, 0.0, 0.6, 0.05, 0.0, 0.05),
        s("proud", 0.35, 0.1, 0.6, 0.0, -0.3, 0.05),
        s("crouched", 0.35, -0.45, 0.6, 0.7, 0.45, 0.05),
        s("stooped", 0.35, -0.15, 0.6, 0.3, 0.75, 0.05),
    ]
}

/// Per-clip content: cadence (Hz), starting phase and heading (radians).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyContent {
    pub cadence: f64,
    pub phase: f64,
    pub heading: f64,
}

impl ToyContent {
    pub fn sample(rng: &mut impl Rng) -> Self {
        Self {
            cadence: rng.gen_range(0.8..1.6),
            phase: rng.gen_range(0.0..2.0 * PI),
            heading: rng.gen_range(-PI..PI),
        }
    }
}

fn local_pose(style: &ToyStyle, phase: f64, heading: f64) -> Vec<Quaternion> {
    let rx = |a: f64| Quaternion::about(Axis::X, a);
    let leg = |p: f64| {
        let hip = rx(style.hip_offset - style.hip_amp * p.sin());
        let knee = rx(style.knee_offset + style.knee_amp * p.cos().max(0.0));
        (hip, knee, rx(-0.5 * (style.hip_offset + style.knee_offset)))
    };
    let (lh, lk, lf) = leg(phase);
    let (rh, rk, rf) = leg(phase + PI);
    let root = Quaternion::about(Axis::Y, heading)
        * Quaternion::about(Axis::Y, style.sway * phase.sin())
        * Quaternion::about(Axis::Z, 0.5 * style.sway * phase.sin());
    let neck = rx(style.lean + 0.05 * (2.0 * phase).sin());
    vec![root, lh, lk, lf, rh, rk, rf, neck]
}

/// One clip. The lower foot is held in place by moving the root.
pub fn toy_clip(style: &ToyStyle, content: &ToyContent, frames: usize, fps: f64) -> RotationalMotion {
    let skel = toy_skeleton();
    let omega = 2.0 * PI * content.cadence;
    let poses: Vec<Vec<Quaternion>> = (0..frames)
        .map(|t| local_pose(style, content.phase + omega * t as f64 / fps, content.heading))
        .collect();
    let rel: Vec<Vec<[f64; 3]>> = poses.iter().map(|p| fk_frame(&skel, p, [0.0; 3]).0).collect();
    let lower = |f: &Vec<[f64; 3]>| if f[LEFT_FOOT][1] <= f[RIGHT_FOOT][1] { LEFT_FOOT } else { RIGHT_FOOT };

    let mut root = Vec::with_capacity(frames);
    let (mut x, mut z) = (0.0, 0.0);
    for t in 0..frames {
        if t > 0 {
            let planted = lower(&rel[t - 1]);
            x -= rel[t][planted][0] - rel[t - 1][planted][0];
            z -= rel[t][planted][2] - rel[t - 1][planted][2];
        }
        let y = -rel[t][LEFT_FOOT][1].min(rel[t][RIGHT_FOOT][1]);
        root.push([x, y, z]);
    }
    RotationalMotion::new(poses, root, fps)
        .expect("toy clip is well formed")
        .with_style(style.name.clone())
        .hemisphere_aligned()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub clips_per_style: usize,
    pub frames: usize,
    pub fps: f64,
    /// Relative jitter applied to each clip's style parameters.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            clips_per_style: 32,
            frames: 56,
            fps: 30.0,
            jitter: 0.08,
            seed: 0,
        }
    }
}

fn jittered(style: &ToyStyle, rng: &mut impl Rng, j: f64) -> ToyStyle {
    let mut m = |v: f64| v * (1.0 + rng.gen_range(-j..=j));
    let s = ToyStyle {
        name: style.name.clone(),
        hip_amp: m(style.hip_amp),
        knee_amp: m(style.knee_amp),
        sway: m(style.sway),
        ..style.clone()
    };
    let mut a = |v: f64| v + rng.gen_range(-j..=j) * 0.4;
    ToyStyle {
        hip_offset: a(s.hip_offset),
        knee_offset: a(s.knee_offset),
        lean: a(s.lean),
        ..s
    }
}

/// `clips_per_style` clips for every style, ordered style by style.
pub fn toy_dataset(cfg: &ToyConfig) -> Vec<RotationalMotion> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    for style in toy_styles() {
        for _ in 0..cfg.clips_per_style {
            let s = jittered(&style, &mut rng, cfg.jitter);
            let c = ToyContent::sample(&mut rng);
            out.push(toy_clip(&s, &c, cfg.frames, cfg.fps));
        }
    }
    out
}

/// Writes one BVH per clip plus `manifest.json`; returns the manifest path.
pub fn write_toy_dataset(dir: &Path, cfg: &ToyConfig) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let skel = toy_skeleton();
    let mut manifest = DatasetManifest::default();
    for (i, clip) in toy_dataset(cfg).iter().enumerate() {
        let style = clip.style.clone().unwrap_or_default();
        let name = format!("{style}_{i:03}.bvh");
        save_bvh(&dir.join(&name), &skel, clip)?;
        manifest.entries.push(ManifestEntry {
            path: name.into(),
            style,
            fps: None,
            frames: None,
        });
    }
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::forward_kinematics;

    #[test]
    fn lower_foot_is_planted() {
        let clip = toy_clip(&toy_styles()[0], &ToyContent { cadence: 1.0, phase: 0.3, heading: 0.7 }, 60, 30.0);
        let pos = forward_kinematics(&toy_skeleton(), &clip, true).unwrap();
        let mut planted = 0;
        for t in 1..60 {
            let (a, b) = (&pos.positions[t - 1], &pos.positions[t]);
            let f = if a[LEFT_FOOT][1] <= a[RIGHT_FOOT][1] { LEFT_FOOT } else { RIGHT_FOOT };
            assert!(a[f][1].abs() < 1e-9);
            let slide = (b[f][0] - a[f][0]).hypot(b[f][2] - a[f][2]);
            if slide < 1e-9 {
                planted += 1;
            }
        }
        assert_eq!(planted, 59);
    }

    #[test]
    fn dataset_is_seeded_and_labelled() {
        let cfg = ToyConfig {
            clips_per_style: 2,
            ..ToyConfig::default()
        };
        let a = toy_dataset(&cfg);
        assert_eq!(a, toy_dataset(&cfg));
        assert_eq!(a.len(), 8);
        assert_eq!(a[0].style.as_deref(), Some("neutral"));
        assert_eq!(a[7].style.as_deref(), Some("stooped"));
        assert!(a.iter().all(|c| c.frames() == 56 && c.num_joints() == 8));
    }

    #[test]
    fn clips_survive_bvh() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ToyConfig {
            clips_per_style: 1,
            frames: 8,
            ..ToyConfig::default()
        };
        let path = write_toy_dataset(dir.path(), &cfg).unwrap();
        let m = DatasetManifest::load(&path).unwrap();
        assert_eq!(m.styles().len(), 4);
        let (skel, clips) = crate::dataset::load_clips(&m).unwrap();
        assert_eq!(skel.num_joints(), 8);
        let orig = toy_dataset(&cfg);
        let a = forward_kinematics(&skel, &clips[2].motion, true).unwrap();
        let b = forward_kinematics(&toy_skeleton(), &orig[2], true).unwrap();
        for (p, q) in a.positions.iter().flatten().zip(b.positions.iter().flatten()) {
            for k in 0..3 {
                assert!((p[k] - q[k]).abs() < 1e-4);
            }
        }
    }
}
