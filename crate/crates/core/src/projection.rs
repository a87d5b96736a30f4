//! Weak-perspective (scaled orthographic) camera.
//!
//! Coordinates are right-handed with +Y up. A clip's local frame has +Z
//! along its mean forward direction and +X = Y × Z; a character facing +Z
//! has its right side at −X.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{PositionalMotion2D, PositionalMotion3D, SkeletonTopology};
use crate::quat::{self, Axis, Quaternion, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraParams {
    pub scale: f64,
    /// Degrees.
    pub pitch: f64,
    pub yaw: f64,
    pub roll: f64,
}

impl CameraParams {
    pub const IDENTITY: CameraParams = CameraParams {
        scale: 1.0,
        pitch: 0.0,
        yaw: 0.0,
        roll: 0.0,
    };

    pub fn new(scale: f64, pitch: f64, yaw: f64, roll: f64) -> Result<Self> {
        if !(scale > 0.0) || !(pitch.is_finite() && yaw.is_finite() && roll.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "camera needs scale > 0 and finite angles, got s={scale} ({pitch}, {yaw}, {roll})"
            )));
        }
        Ok(Self { scale, pitch, yaw, roll })
    }

    /// Yaw about +Y first, then pitch about +X, then roll about +Z.
    pub fn rotation(&self) -> Quaternion {
        Quaternion::about(Axis::Z, self.roll.to_radians())
            * Quaternion::about(Axis::X, self.pitch.to_radians())
            * Quaternion::about(Axis::Y, self.yaw.to_radians())
    }
}

/// Joints used to orient and normalize a body.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyLandmarks {
    pub pelvis: usize,
    /// Upper end of the torso segment used for 2D scale normalization.
    pub torso_top: usize,
    /// `(left, right)` hip joints.
    pub hips: (usize, usize),
    /// `(left, right)` shoulder joints, when the skeleton has them.
    pub shoulders: Option<(usize, usize)>,
}

impl BodyLandmarks {
    pub fn check(&self, joints: usize) -> Result<()> {
        let mut all = vec![self.pelvis, self.torso_top, self.hips.0, self.hips.1];
        if let Some((l, r)) = self.shoulders {
            all.extend([l, r]);
        }
        match all.into_iter().find(|&j| j >= joints) {
            Some(j) => Err(Error::InvalidArgument(format!(
                "landmark joint {j} out of range for {joints} joints"
            ))),
            None => Ok(()),
        }
    }

    /// Landmarks from joint names: the root as pelvis, the grandparents of
    /// the feet as hips, a neck or head joint as torso top and shoulder or
    /// upper-arm joints when present.
    pub fn guess(skel: &SkeletonTopology) -> Result<Self> {
        let pelvis = skel
            .parents
            .iter()
            .position(Option::is_none)
            .ok_or_else(|| Error::InvalidArgument("skeleton has no root".into()))?;
        let (lf, rf) = skel
            .feet
            .or_else(|| crate::bvh::guess_feet(skel))
            .ok_or_else(|| Error::InvalidArgument("cannot identify foot joints by name".into()))?;
        let grandparent = |f: usize| skel.parents[f].and_then(|k| skel.parents[k]);
        let hips = match (grandparent(lf), grandparent(rf)) {
            (Some(l), Some(r)) if l != r => (l, r),
            _ => return Err(Error::InvalidArgument("feet lack distinct hip joints two levels up".into())),
        };
        let lower: Vec<String> = skel.names.iter().map(|n| n.to_ascii_lowercase()).collect();
        let named = |part: &str| lower.iter().position(|n| n.contains(part));
        let torso_top = named("neck")
            .or_else(|| named("head"))
            .ok_or_else(|| Error::InvalidArgument("no neck or head joint to anchor the torso".into()))?;
        let side = |prefix: &str, part: &str| lower.iter().position(|n| n.starts_with(prefix) && n.contains(part));
        let shoulders = ["shoulder", "arm"].iter().find_map(|p| Some((side("left", p)?, side("right", p)?)));
        let lm = Self {
            pelvis,
            torso_top,
            hips,
            shoulders,
        };
        lm.check(skel.num_joints())?;
        Ok(lm)
    }
}

/// Per-frame forward is `normalize(Y × lateral)` with lateral the mean of
/// the left→right hip (and shoulder) vectors; the result is the normalized
/// temporal mean. Frames with a degenerate lateral vector are skipped.
pub fn forward_direction(motion: &PositionalMotion3D, landmarks: &BodyLandmarks) -> Result<Vec3> {
    landmarks.check(motion.num_joints())?;
    let up = [0.0, 1.0, 0.0];
    let mut sum = [0.0; 3];
    let mut used = 0usize;
    for frame in &motion.positions {
        let mut lateral = quat::sub(frame[landmarks.hips.1], frame[landmarks.hips.0]);
        if let Some((l, r)) = landmarks.shoulders {
            lateral = quat::scale(quat::add(lateral, quat::sub(frame[r], frame[l])), 0.5);
        }
        if let Some(f) = quat::normalized(quat::cross(up, lateral)) {
            sum = quat::add(sum, f);
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::Degenerate("lateral vector vanishes in every frame".into()));
    }
    quat::normalized(sum).ok_or_else(|| Error::Degenerate("per-frame forward directions cancel out".into()))
}

/// Rotation taking world coordinates into the clip frame whose +Z is `forward`.
pub fn forward_frame(forward: Vec3) -> Quaternion {
    let heading = forward[0].atan2(forward[2]);
    Quaternion::about(Axis::Y, -heading)
}

/// Scaled orthographic projection in the frame defined by `forward`.
pub fn project_with_forward(motion: &PositionalMotion3D, cam: &CameraParams, forward: Vec3) -> PositionalMotion2D {
    let to_local = forward_frame(forward);
    let r = cam.rotation() * to_local;
    let m = r.to_matrix();
    let positions: Vec<Vec<[f64; 2]>> = motion
        .positions
        .iter()
        .map(|frame| {
            frame
                .iter()
                .map(|p| {
                    let q = quat::mat_vec(&m, *p);
                    [cam.scale * q[0], cam.scale * q[1]]
                })
                .collect()
        })
        .collect();
    let confidence = vec![vec![1.0; motion.num_joints()]; motion.frames()];
    PositionalMotion2D {
        positions,
        confidence,
        fps: motion.fps,
    }
}

pub fn project(motion: &PositionalMotion3D, cam: &CameraParams, landmarks: &BodyLandmarks) -> Result<PositionalMotion2D> {
    let forward = forward_direction(motion, landmarks)?;
    Ok(project_with_forward(motion, cam, forward))
}

/// Training cameras: yaw ~ U[−90°, 90°], scale ~ U[0.8, 1.2], no pitch or roll.
pub fn sample_cameras(rng: &mut impl Rng, n: usize) -> Vec<CameraParams> {
    (0..n)
        .map(|_| {
            let yaw = rng.gen_range(-90.0..=90.0);
            let scale = rng.gen_range(0.8..=1.2);
            CameraParams {
                scale,
                pitch: 0.0,
                yaw,
                roll: 0.0,
            }
        })
        .collect()
}

/// Centers every frame on the pelvis and scales so the mean torso length is 1.
pub fn normalize_2d(motion: &PositionalMotion2D, pelvis: usize, torso_top: usize) -> Result<PositionalMotion2D> {
    let mut total = 0.0;
    for f in &motion.positions {
        let d = [f[torso_top][0] - f[pelvis][0], f[torso_top][1] - f[pelvis][1]];
        total += d[0].hypot(d[1]);
    }
    let mean = total / motion.frames().max(1) as f64;
    if !(mean > 1e-9) {
        return Err(Error::Degenerate("torso length is zero".into()));
    }
    let positions = motion
        .positions
        .iter()
        .map(|f| {
            let c = f[pelvis];
            f.iter().map(|p| [(p[0] - c[0]) / mean, (p[1] - c[1]) / mean]).collect()
        })
        .collect();
    Ok(PositionalMotion2D {
        positions,
        confidence: motion.confidence.clone(),
        fps: motion.fps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // pelvis, left hip (+X), right hip (−X), head
    fn facing_z(frames: usize) -> PositionalMotion3D {
        let f = vec![[0.0, 1.0, 0.0], [0.2, 1.0, 0.0], [-0.2, 1.0, 0.0], [0.0, 1.6, 0.0]];
        PositionalMotion3D {
            positions: vec![f; frames],
            fps: 30.0,
        }
    }

    fn landmarks() -> BodyLandmarks {
        BodyLandmarks {
            pelvis: 0,
            torso_top: 3,
            hips: (1, 2),
            shoulders: None,
        }
    }

    fn rotate_clip(m: &PositionalMotion3D, q: Quaternion) -> PositionalMotion3D {
        PositionalMotion3D {
            positions: m.positions.iter().map(|f| f.iter().map(|p| q.rotate(*p)).collect()).collect(),
            fps: m.fps,
        }
    }

    #[test]
    fn guesses_toy_landmarks() {
        let skel = crate::toy::toy_skeleton();
        assert_eq!(BodyLandmarks::guess(&skel).unwrap(), crate::toy::toy_landmarks());
    }

    #[test]
    fn forward_axis_aligned() {
        let f = forward_direction(&facing_z(3), &landmarks()).unwrap();
        assert!((f[2] - 1.0).abs() < 1e-12 && f[0].abs() < 1e-12);
        let turned = rotate_clip(&facing_z(3), Quaternion::about(Axis::Y, std::f64::consts::FRAC_PI_2));
        let f = forward_direction(&turned, &landmarks()).unwrap();
        assert!((f[0] - 1.0).abs() < 1e-12 && f[2].abs() < 1e-12);
    }

    #[test]
    fn degenerate_lateral() {
        let m = PositionalMotion3D {
            positions: vec![vec![[0.0; 3]; 4]; 2],
            fps: 30.0,
        };
        assert!(forward_direction(&m, &landmarks()).is_err());
    }

    #[test]
    fn identity_camera_drops_depth() {
        let m = facing_z(2);
        let p = project(&m, &CameraParams::IDENTITY, &landmarks()).unwrap();
        for (f2, f3) in p.positions.iter().zip(&m.positions) {
            for (a, b) in f2.iter().zip(f3) {
                assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
            }
        }
        let cam2 = CameraParams::new(2.0, 0.0, 0.0, 0.0).unwrap();
        let p2 = project(&m, &cam2, &landmarks()).unwrap();
        for (a, b) in p2.positions.iter().flatten().zip(p.positions.iter().flatten()) {
            assert_eq!(a[0], 2.0 * b[0]);
            assert_eq!(a[1], 2.0 * b[1]);
        }
    }

    #[test]
    fn yaw_quarter_turn_matches_matrix() {
        let cam = CameraParams::new(1.0, 0.0, 90.0, 0.0).unwrap();
        let m = PositionalMotion3D {
            positions: vec![vec![[0.0, 0.0, 1.0]]],
            fps: 30.0,
        };
        let p = project_with_forward(&m, &cam, [0.0, 0.0, 1.0]);
        // Ry(θ) = [[cos, 0, sin], [0, 1, 0], [−sin, 0, cos]]
        let t = 90f64.to_radians();
        let ry = [[t.cos(), 0.0, t.sin()], [0.0, 1.0, 0.0], [-t.sin(), 0.0, t.cos()]];
        let expect = quat::mat_vec(&ry, [0.0, 0.0, 1.0]);
        assert!((p.positions[0][0][0] - expect[0]).abs() < 1e-12);
        assert!((p.positions[0][0][0] - 1.0).abs() < 1e-12);
        assert!(p.positions[0][0][1].abs() < 1e-12);
    }

    #[test]
    fn camera_sampling_bounds_and_determinism() {
        let a = sample_cameras(&mut ChaCha8Rng::seed_from_u64(4), 5);
        let b = sample_cameras(&mut ChaCha8Rng::seed_from_u64(4), 5);
        assert_eq!(a, b);
        let many = sample_cameras(&mut ChaCha8Rng::seed_from_u64(5), 10_000);
        assert!(many.iter().all(|c| (-90.0..=90.0).contains(&c.yaw)
            && (0.8..=1.2).contains(&c.scale)
            && c.pitch == 0.0
            && c.roll == 0.0));
        let mean = many.iter().map(|c| c.yaw).sum::<f64>() / many.len() as f64;
        // U[−90, 90] has σ = 180/√12; the sample mean has σ/√n.
        let sigma = 180.0 / 12f64.sqrt() / (many.len() as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean yaw {mean}");
    }

    #[test]
    fn normalize_2d_centers_and_scales() {
        let m = PositionalMotion2D {
            positions: vec![vec![[100.0, 200.0], [100.0, 150.0]]],
            confidence: vec![vec![1.0, 1.0]],
            fps: 30.0,
        };
        let n = normalize_2d(&m, 0, 1).unwrap();
        assert_eq!(n.positions[0][0], [0.0, 0.0]);
        assert_eq!(n.positions[0][1], [0.0, -1.0]);
    }
}
