//! Forward kinematics (with its reverse-mode derivative), joint speeds and
//! root normalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{PositionalMotion3D, RotationalMotion, SkeletonTopology};
use crate::quat::{self, Axis, Quaternion, Vec3};

/// Joint positions and global rotations of one frame.
///
/// Quaternions are used as given (no normalization), so positions are a
/// smooth function of all four components. Unit inputs give the usual FK.
pub fn fk_frame(skel: &SkeletonTopology, local: &[Quaternion], root: Vec3) -> (Vec<Vec3>, Vec<Quaternion>) {
    let n = skel.num_joints();
    let mut pos = vec![[0.0; 3]; n];
    let mut global = vec![Quaternion::IDENTITY; n];
    pos[0] = root;
    global[0] = local[0];
    for j in 1..n {
        let p = skel.parents[j].expect("validated skeleton");
        pos[j] = quat::add(pos[p], global[p].rotate(skel.offsets[j]));
        global[j] = global[p] * local[j];
    }
    (pos, global)
}

/// Gradient of `Σ_j ⟨grad_pos[j], p_j⟩` with respect to the local
/// quaternion components of one frame, as `[w, x, y, z]` per joint.
pub fn fk_frame_backward(skel: &SkeletonTopology, local: &[Quaternion], grad_pos: &[Vec3]) -> Vec<[f64; 4]> {
    let n = skel.num_joints();
    let (_, global) = fk_frame(skel, local, [0.0; 3]);
    let mut g_pos: Vec<Vec3> = grad_pos.to_vec();
    let mut g_glob = vec![[0.0f64; 4]; n];
    let mut g_local = vec![[0.0f64; 4]; n];
    for j in (1..n).rev() {
        let p = skel.parents[j].expect("validated skeleton");
        // global[j] = global[p] * local[j]
        let gq = g_glob[j];
        let gl = mul_right_transpose(global[p], gq);
        let gp = mul_left_transpose(local[j], gq);
        g_local[j] = gl;
        // pos[j] = pos[p] + rotate(global[p], offset[j])
        let gr = rotate_backward(global[p], skel.offsets[j], g_pos[j]);
        for k in 0..4 {
            g_glob[p][k] += gp[k] + gr[k];
        }
        let gj = g_pos[j];
        g_pos[p] = quat::add(g_pos[p], gj);
    }
    g_local[0] = g_glob[0];
    g_local
}

/// For `c = a * b`, returns `(∂c/∂b)ᵀ g` (the left-multiplication matrix of `a`, transposed).
fn mul_right_transpose(a: Quaternion, g: [f64; 4]) -> [f64; 4] {
    let (w, x, y, z) = (a.w, a.x, a.y, a.z);
    // L(a) rows: [w -x -y -z], [x w -z y], [y z w -x], [z -y x w]
    [
        w * g[0] + x * g[1] + y * g[2] + z * g[3],
        -x * g[0] + w * g[1] + z * g[2] - y * g[3],
        -y * g[0] - z * g[1] + w * g[2] + x * g[3],
        -z * g[0] + y * g[1] - x * g[2] + w * g[3],
    ]
}

/// For `c = a * b`, returns `(∂c/∂a)ᵀ g` (the right-multiplication matrix of `b`, transposed).
fn mul_left_transpose(b: Quaternion, g: [f64; 4]) -> [f64; 4] {
    let (w, x, y, z) = (b.w, b.x, b.y, b.z);
    // R(b) rows: [w -x -y -z], [x w z -y], [y -z w x], [z y -x w]
    [
        w * g[0] + x * g[1] + y * g[2] + z * g[3],
        -x * g[0] + w * g[1] - z * g[2] + y * g[3],
        -y * g[0] + z * g[1] + w * g[2] - x * g[3],
        -z * g[0] - y * g[1] + x * g[2] + w * g[3],
    ]
}

/// Gradient of `⟨g, q v q*⟩` with respect to `q`.
fn rotate_backward(q: Quaternion, v: Vec3, g: Vec3) -> [f64; 4] {
    let u = [q.x, q.y, q.z];
    let w = q.w;
    let gw = 2.0 * w * quat::dot(v, g) + 2.0 * quat::dot(quat::cross(u, v), g);
    let uv = quat::dot(u, v);
    let ug = quat::dot(u, g);
    let vg = quat::dot(v, g);
    let vxg = quat::cross(v, g);
    let mut gu = [0.0; 3];
    for k in 0..3 {
        gu[k] = -2.0 * u[k] * vg + 2.0 * uv * g[k] + 2.0 * v[k] * ug + 2.0 * w * vxg[k];
    }
    [gw, gu[0], gu[1], gu[2]]
}

pub fn forward_kinematics(
    skel: &SkeletonTopology,
    motion: &RotationalMotion,
    include_root_translation: bool,
) -> Result<PositionalMotion3D> {
    check_joints(skel, motion)?;
    let positions = motion
        .rotations
        .iter()
        .zip(&motion.root_translation)
        .map(|(frame, root)| {
            let root = if include_root_translation { *root } else { [0.0; 3] };
            fk_frame(skel, frame, root).0
        })
        .collect();
    Ok(PositionalMotion3D {
        positions,
        fps: motion.fps,
    })
}

pub(crate) fn check_joints(skel: &SkeletonTopology, motion: &RotationalMotion) -> Result<()> {
    if motion.num_joints() != skel.num_joints() {
        return Err(Error::JointCountMismatch {
            expected: skel.num_joints(),
            actual: motion.num_joints(),
        });
    }
    Ok(())
}

/// Root-relative joint speeds (`T × J`, length units per second) of any
/// dimension: central differences inside, one-sided at both ends.
pub fn joint_speeds<const D: usize>(positions: &[Vec<[f64; D]>], fps: f64, root: usize) -> Result<Vec<Vec<f64>>> {
    let t_len = positions.len();
    if t_len < 2 {
        return Err(Error::TooShort { needed: 2, actual: t_len });
    }
    let local: Vec<Vec<[f64; D]>> = positions
        .iter()
        .map(|f| {
            let r = f[root];
            f.iter().map(|p| std::array::from_fn(|k| p[k] - r[k])).collect()
        })
        .collect();
    let speeds = (0..t_len)
        .map(|t| {
            let (a, b, span) = if t == 0 {
                (0, 1, 1.0)
            } else if t == t_len - 1 {
                (t_len - 2, t_len - 1, 1.0)
            } else {
                (t - 1, t + 1, 2.0)
            };
            local[a]
                .iter()
                .zip(&local[b])
                .map(|(pa, pb)| {
                    let s: f64 = (0..D).map(|k| (pb[k] - pa[k]).powi(2)).sum();
                    s.sqrt() * fps / span
                })
                .collect()
        })
        .collect();
    Ok(speeds)
}

pub fn local_joint_velocity(motion: &PositionalMotion3D) -> Result<Vec<Vec<f64>>> {
    joint_speeds(&motion.positions, motion.fps, 0)
}

/// What [`root_normalize`] removed: the root track and the clip heading.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RootTransform {
    pub translation: Vec<Vec3>,
    /// Heading (rotation about +Y, radians) taken off the root rotation.
    pub yaw: f64,
}

impl RootTransform {
    pub fn is_identity(&self) -> bool {
        self.yaw == 0.0 && self.translation.iter().all(|t| *t == [0.0; 3])
    }

    /// Re-applies the heading and root track to a normalized motion.
    pub fn restore(&self, motion: &RotationalMotion) -> Result<RotationalMotion> {
        if motion.frames() != self.translation.len() {
            return Err(Error::ShapeMismatch(format!(
                "root transform has {} frames, motion {}",
                self.translation.len(),
                motion.frames()
            )));
        }
        let turn = Quaternion::about(Axis::Y, self.yaw);
        let mut out = motion.clone();
        for frame in out.rotations.iter_mut() {
            frame[0] = turn * frame[0];
        }
        out.root_translation = self.translation.clone();
        Ok(out.hemisphere_aligned())
    }
}

/// Average heading of the root's +Z axis projected on the ground plane.
pub fn mean_heading(motion: &RotationalMotion) -> f64 {
    let (mut sx, mut sz) = (0.0, 0.0);
    for frame in &motion.rotations {
        let f = frame[0].rotate([0.0, 0.0, 1.0]);
        sx += f[0];
        sz += f[2];
    }
    if sx.hypot(sz) < 1e-12 {
        0.0
    } else {
        sx.atan2(sz)
    }
}

/// Zeroes the root track and removes the mean heading from the root rotation.
pub fn root_normalize(motion: &RotationalMotion) -> (RotationalMotion, RootTransform) {
    let yaw = mean_heading(motion);
    let unturn = Quaternion::about(Axis::Y, -yaw);
    let mut out = motion.clone();
    for frame in out.rotations.iter_mut() {
        frame[0] = unturn * frame[0];
    }
    let transform = RootTransform {
        translation: std::mem::replace(&mut out.root_translation, vec![[0.0; 3]; motion.frames()]),
        yaw,
    };
    (out.hemisphere_aligned(), transform)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn random_quat(rng: &mut impl Rng) -> Quaternion {
        Quaternion::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )
        .normalize()
        .unwrap()
    }

    fn random_skeleton(rng: &mut impl Rng, n: usize) -> SkeletonTopology {
        let parents = (0..n).map(|j| if j == 0 { None } else { Some(rng.gen_range(0..j)) }).collect();
        let offsets = (0..n)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        SkeletonTopology::new((0..n).map(|j| format!("j{j}")).collect(), parents, offsets).unwrap()
    }

    #[test]
    fn identity_pose_sums_offsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let skel = random_skeleton(&mut rng, 6);
        let m = RotationalMotion::identity(2, 6, 30.0);
        let pos = forward_kinematics(&skel, &m, false).unwrap();
        let rest = skel.rest_positions();
        for j in 0..6 {
            for k in 0..3 {
                assert!((pos.positions[1][j][k] - rest[j][k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn root_rotation_moves_child() {
        let skel = SkeletonTopology::new(
            vec!["r".into(), "c".into()],
            vec![None, Some(0)],
            vec![[0.0; 3], [1.0, 0.0, 0.0]],
        )
        .unwrap();
        let mut m = RotationalMotion::identity(1, 2, 30.0);
        m.rotations[0][0] = Quaternion::about(Axis::Z, FRAC_PI_2);
        let p = forward_kinematics(&skel, &m, false).unwrap().positions[0][1];
        assert!(p[0].abs() < 1e-12 && (p[1] - 1.0).abs() < 1e-12 && p[2].abs() < 1e-12);
    }

    #[test]
    fn joint_mismatch_is_an_error() {
        let skel = SkeletonTopology::new(vec!["r".into()], vec![None], vec![[0.0; 3]]).unwrap();
        let m = RotationalMotion::identity(1, 2, 30.0);
        assert!(matches!(
            forward_kinematics(&skel, &m, false),
            Err(Error::JointCountMismatch { .. })
        ));
    }

    #[test]
    fn root_translation_flag() {
        let skel = SkeletonTopology::new(vec!["r".into()], vec![None], vec![[0.0; 3]]).unwrap();
        let mut m = RotationalMotion::identity(1, 1, 30.0);
        m.root_translation[0] = [1.0, 2.0, 3.0];
        assert_eq!(forward_kinematics(&skel, &m, true).unwrap().positions[0][0], [1.0, 2.0, 3.0]);
        assert_eq!(forward_kinematics(&skel, &m, false).unwrap().positions[0][0], [0.0; 3]);
    }

    #[test]
    fn fk_backward_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let skel = random_skeleton(&mut rng, 6);
            let local: Vec<Quaternion> = (0..6).map(|_| random_quat(&mut rng)).collect();
            let gp: Vec<Vec3> = (0..6)
                .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
                .collect();
            let objective = |q: &[Quaternion]| -> f64 {
                fk_frame(&skel, q, [0.0; 3]).0.iter().zip(&gp).map(|(p, g)| quat::dot(*p, *g)).sum()
            };
            let analytic = fk_frame_backward(&skel, &local, &gp);
            let h = 1e-6;
            for j in 0..6 {
                for k in 0..4 {
                    let mut plus = local.clone();
                    let mut minus = local.clone();
                    let mut a = plus[j].to_array();
                    a[k] += h;
                    plus[j] = Quaternion::from_array(a);
                    let mut b = minus[j].to_array();
                    b[k] -= h;
                    minus[j] = Quaternion::from_array(b);
                    let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
                    let an = analytic[j][k];
                    let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                    assert!(rel < 1e-4, "joint {j} comp {k}: fd {fd} analytic {an}");
                }
            }
        }
    }

    #[test]
    fn velocity_cases() {
        let still = vec![vec![[1.0, 2.0, 3.0], [0.0, 1.0, 0.0]]; 5];
        let v = joint_speeds(&still, 30.0, 0).unwrap();
        assert!(v.iter().flatten().all(|s| *s == 0.0));

        let moving: Vec<Vec<Vec3>> = (0..5).map(|t| vec![[0.0; 3], [t as f64, 0.0, 0.0]]).collect();
        let v = joint_speeds(&moving, 30.0, 0).unwrap();
        for frame in &v {
            assert!((frame[1] - 30.0).abs() < 1e-9);
            assert_eq!(frame[0], 0.0);
        }
        assert!(joint_speeds(&moving[..1], 30.0, 0).is_err());
    }

    #[test]
    fn velocity_sinusoid_matches_derivative() {
        let fps = 120.0;
        let w = 2.0;
        let pos: Vec<Vec<Vec3>> = (0..240)
            .map(|t| {
                let s = t as f64 / fps;
                vec![[0.0; 3], [(w * s).sin(), 0.0, 0.0]]
            })
            .collect();
        let v = joint_speeds(&pos, fps, 0).unwrap();
        for t in 1..239 {
            let s = t as f64 / fps;
            let exact = (w * (w * s).cos()).abs();
            // Central-difference error is w³/6 · h².
            assert!((v[t][1] - exact).abs() < w.powi(3) / fps.powi(2));
        }
    }

    #[test]
    fn root_normalize_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frames = 10;
        let mut m = RotationalMotion::identity(frames, 4, 30.0);
        for f in m.rotations.iter_mut() {
            for q in f.iter_mut() {
                *q = random_quat(&mut rng);
            }
        }
        for t in m.root_translation.iter_mut() {
            *t = [rng.gen_range(-3.0..3.0), rng.gen_range(0.0..2.0), rng.gen_range(-3.0..3.0)];
        }
        let m = m.hemisphere_aligned();
        let (norm, tf) = root_normalize(&m);
        assert!(norm.root_translation.iter().all(|t| *t == [0.0; 3]));
        let back = tf.restore(&norm).unwrap();
        for (a, b) in back.rotations.iter().flatten().zip(m.rotations.iter().flatten()) {
            assert!(a.dot(*b).abs() > 1.0 - 1e-12);
            for (x, y) in a.to_array().iter().zip(b.to_array()) {
                assert!((x - y).abs() < 1e-6);
            }
        }
        assert_eq!(back.root_translation, m.root_translation);

        // Normalizing twice leaves an identity transform (heading already zero).
        let (again, tf2) = root_normalize(&norm);
        assert!(tf2.yaw.abs() < 1e-12);
        for (a, b) in again.rotations.iter().flatten().zip(norm.rotations.iter().flatten()) {
            for (x, y) in a.to_array().iter().zip(b.to_array()) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn translated_clip_normalizes_to_origin() {
        let mut m = RotationalMotion::identity(3, 2, 30.0);
        let (origin, tf0) = root_normalize(&m);
        assert!(tf0.is_identity());
        for t in m.root_translation.iter_mut() {
            *t = [5.0, 0.0, 0.0];
        }
        let (norm, tf) = root_normalize(&m);
        assert_eq!(norm, origin);
        assert!(tf.translation.iter().all(|t| *t == [5.0, 0.0, 0.0]));
    }
}
