//! Test-time pipeline: translation with the content's root track, global
//! velocity warping, foot-contact cleanup and style interpolation.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{check_joints, fk_frame, forward_kinematics, joint_speeds, local_joint_velocity, root_normalize};
use crate::motion::{PositionalMotion2D, PositionalMotion3D, RotationalMotion, SkeletonTopology};
use crate::nets::{Model, StyleInput};
use crate::projection::{normalize_2d, project, CameraParams};
use crate::quat::{self, Quaternion, Vec3};

/// Foot-contact thresholds. The ground is the plane `y = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactThresholds {
    /// Maximum foot height (length units).
    pub height: f64,
    /// Maximum foot speed (length units per second).
    pub speed: f64,
}

impl ContactThresholds {
    /// 3% of the skeleton height and 0.5 units/s.
    pub fn for_skeleton(skel: &SkeletonTopology) -> Self {
        Self {
            height: 0.03 * skel.height(),
            speed: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.height > 0.0 && self.speed > 0.0) {
            return Err(Error::InvalidArgument(format!("contact thresholds must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferOptions {
    pub warp: bool,
    pub ik: bool,
    /// `None` uses [`ContactThresholds::for_skeleton`].
    pub contacts: Option<ContactThresholds>,
}

impl Default for TransferOptions {
    fn default() -> Self {
        Self {
            warp: true,
            ik: true,
            contacts: None,
        }
    }
}

/// `(1/T) Σ_t max_j v_j(t)` over root-relative joint speeds.
pub fn velocity_factor(motion: &PositionalMotion3D) -> Result<f64> {
    mean_of_max(&local_joint_velocity(motion)?)
}

/// [`velocity_factor`] for 2D keypoints, relative to joint `root`.
pub fn velocity_factor_2d(motion: &PositionalMotion2D, root: usize) -> Result<f64> {
    mean_of_max(&joint_speeds(&motion.positions, motion.fps, root)?)
}

fn mean_of_max(speeds: &[Vec<f64>]) -> Result<f64> {
    let mut sum = 0.0;
    for frame in speeds {
        sum += frame.iter().cloned().fold(0.0, f64::max);
    }
    Ok(sum / speeds.len() as f64)
}

/// Length after warping `frames` by `factor`: `round(T / factor)`, at least 2.
pub fn warped_length(frames: usize, factor: f64) -> usize {
    ((frames as f64 / factor).round() as usize).max(2)
}

fn check_factor(factor: f64) -> Result<()> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(Error::InvalidArgument(format!("warp factor must be positive and finite, got {factor}")));
    }
    Ok(())
}

/// Sample positions `i (T − 1) / (T' − 1)`; both endpoints map to themselves.
fn warp_samples(frames: usize, factor: f64) -> Vec<(usize, usize, f64)> {
    let out = warped_length(frames, factor);
    (0..out)
        .map(|i| {
            let s = i as f64 * (frames - 1) as f64 / (out - 1) as f64;
            let a = (s.floor() as usize).min(frames - 1);
            let b = (a + 1).min(frames - 1);
            (a, b, s - a as f64)
        })
        .collect()
}

/// Linearly resamples a trajectory to `round(T / factor)` samples.
pub fn time_warp(track: &[Vec3], factor: f64) -> Result<Vec<Vec3>> {
    check_factor(factor)?;
    if track.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            actual: track.len(),
        });
    }
    Ok(warp_samples(track.len(), factor)
        .into_iter()
        .map(|(a, b, u)| quat::lerp(track[a], track[b], u))
        .collect())
}

/// Resamples a whole clip: root linearly, joint rotations by slerp. The
/// frame rate is unchanged, so the clip plays `factor` times faster.
pub fn warp_motion(motion: &RotationalMotion, factor: f64) -> Result<RotationalMotion> {
    let root = time_warp(&motion.root_translation, factor)?;
    let rotations = warp_samples(motion.frames(), factor)
        .into_iter()
        .map(|(a, b, u)| {
            motion.rotations[a]
                .iter()
                .zip(&motion.rotations[b])
                .map(|(qa, qb)| if u == 0.0 { *qa } else { qa.slerp(*qb, u) })
                .collect()
        })
        .collect();
    Ok(RotationalMotion {
        rotations,
        root_translation: root,
        fps: motion.fps,
        style: motion.style.clone(),
    })
}

/// World-space speed of one point track (central differences inside).
fn point_speeds(track: &[Vec3], fps: f64) -> Vec<f64> {
    let n = track.len();
    (0..n)
        .map(|t| {
            if n < 2 {
                return 0.0;
            }
            let (a, b, span) = match t {
                0 => (0, 1, 1.0),
                _ if t == n - 1 => (n - 2, n - 1, 1.0),
                _ => (t - 1, t + 1, 2.0),
            };
            quat::norm(quat::sub(track[b], track[a])) * fps / span
        })
        .collect()
}

fn feet(skel: &SkeletonTopology) -> Result<[usize; 2]> {
    let (l, r) = skel
        .feet
        .ok_or_else(|| Error::InvalidArgument("skeleton has no foot joints defined".into()))?;
    Ok([l, r])
}

fn foot_tracks(skel: &SkeletonTopology, world: &PositionalMotion3D) -> Result<[Vec<Vec3>; 2]> {
    let f = feet(skel)?;
    Ok(f.map(|j| world.positions.iter().map(|p| p[j]).collect()))
}

/// `[left, right]` contact flags per frame, from world-space FK.
pub fn detect_foot_contacts(content: &RotationalMotion, skel: &SkeletonTopology, th: &ContactThresholds) -> Result<Vec<[bool; 2]>> {
    th.validate()?;
    let world = forward_kinematics(skel, content, true)?;
    let tracks = foot_tracks(skel, &world)?;
    let speeds = tracks.clone().map(|t| point_speeds(&t, content.fps));
    Ok((0..content.frames())
        .map(|t| std::array::from_fn(|k| tracks[k][t][1] < th.height && speeds[k][t] < th.speed))
        .collect())
}

/// Mean world-space foot speed over contact frames (both feet pooled).
pub fn foot_skate(motion: &RotationalMotion, skel: &SkeletonTopology, labels: &[[bool; 2]]) -> Result<f64> {
    let world = forward_kinematics(skel, motion, true)?;
    let tracks = foot_tracks(skel, &world)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for k in 0..2 {
        let sp = point_speeds(&tracks[k], motion.fps);
        for (t, l) in labels.iter().enumerate() {
            if l[k] {
                sum += sp[t];
                n += 1;
            }
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FootFixReport {
    /// Frames whose target lay beyond the leg's reach, per foot.
    pub unreachable: [Vec<usize>; 2],
}

const BLEND: usize = 3;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Nearest point to `target` that a leg rooted at `hip` can reach.
fn reachable(hip: Vec3, target: Vec3, lo: f64, hi: f64) -> Vec3 {
    let v = quat::sub(target, hip);
    let d = quat::norm(v);
    if d == 0.0 {
        return target;
    }
    quat::add(hip, quat::scale(v, d.clamp(lo, hi) / d))
}

/// Run target: the median of the run's foot positions, iterated until it is
/// also the median of the positions the leg can actually reach. Clamped
/// frames therefore do not shift the target on a second pass.
fn run_target(track: &[Vec3], hips: &[Vec3], lo: f64, hi: f64) -> Vec3 {
    let med = |pts: &[Vec3]| -> Vec3 { std::array::from_fn(|k| median(pts.iter().map(|p| p[k]).collect())) };
    let mut target = med(track);
    for _ in 0..200 {
        let reached: Vec<Vec3> = hips.iter().map(|&h| reachable(h, target, lo, hi)).collect();
        let next = med(&reached);
        let step = quat::norm(quat::sub(next, target));
        target = next;
        if step < 1e-12 {
            break;
        }
    }
    target
}

/// Per-frame foot target: inside a run, the run target limited to the leg's
/// reach; up to three frames outside, the edge correction tapered by `1 − k/4`.
/// The flag marks run frames whose run target lay out of reach.
fn contact_targets(track: &[Vec3], hips: &[Vec3], labels: &[bool], lo: f64, hi: f64) -> Vec<Option<(Vec3, bool)>> {
    let n = track.len();
    let mut runs = Vec::new();
    let mut t = 0;
    while t < n {
        if labels[t] {
            let start = t;
            while t < n && labels[t] {
                t += 1;
            }
            runs.push((start, t));
        } else {
            t += 1;
        }
    }
    let mut out: Vec<Option<(Vec3, bool)>> = vec![None; n];
    let mut dist = vec![usize::MAX; n];
    for &(a, b) in &runs {
        let target = run_target(&track[a..b], &hips[a..b], lo, hi);
        for t in a..b {
            let d = quat::norm(quat::sub(target, hips[t]));
            out[t] = Some((reachable(hips[t], target, lo, hi), d > hi + 1e-9 || d < lo - 1e-9));
            dist[t] = 0;
        }
        let edge = |t: usize| quat::sub(reachable(hips[t], target, lo, hi), track[t]);
        let (d_first, d_last) = (edge(a), edge(b - 1));
        for k in 1..=BLEND {
            let w = 1.0 - k as f64 / (BLEND + 1) as f64;
            if let Some(t) = a.checked_sub(k) {
                if k < dist[t] {
                    out[t] = Some((quat::add(track[t], quat::scale(d_first, w)), false));
                    dist[t] = k;
                }
            }
            let t = b - 1 + k;
            if t < n && k < dist[t] {
                out[t] = Some((quat::add(track[t], quat::scale(d_last, w)), false));
                dist[t] = k;
            }
        }
    }
    out
}

/// Analytic two-bone solve moving `ankle` onto `target`. Returns new global
/// rotations for hip and knee and whether the target had to be clamped.
fn two_bone(
    h: Vec3,
    k: Vec3,
    a: Vec3,
    target: Vec3,
    g_hip: Quaternion,
    g_knee: Quaternion,
) -> (Quaternion, Quaternion, bool) {
    let (l1, l2) = (quat::norm(quat::sub(k, h)), quat::norm(quat::sub(a, k)));
    let to_target = quat::sub(target, h);
    let d_raw = quat::norm(to_target);
    let (lo, hi) = ((l1 - l2).abs() + 1e-9, l1 + l2 - 1e-9);
    let d = d_raw.clamp(lo, hi);
    let clamped = d_raw > hi + 1e-9 || d_raw < lo - 1e-9;

    let (u, v) = (quat::sub(h, k), quat::sub(a, k));
    let cur = (quat::dot(u, v) / (l1 * l2)).clamp(-1.0, 1.0).acos();
    let want = ((l1 * l1 + l2 * l2 - d * d) / (2.0 * l1 * l2)).clamp(-1.0, 1.0).acos();
    let axis = quat::normalized(quat::cross(u, v)).unwrap_or_else(|| g_knee.rotate([1.0, 0.0, 0.0]));
    let r_knee = Quaternion::from_axis_angle(axis, want - cur);
    let a_new = quat::add(k, r_knee.rotate(v));
    let r_hip = Quaternion::between(quat::sub(a_new, h), to_target);
    (r_hip * g_hip, r_hip * r_knee * g_knee, clamped)
}

/// Pins feet during content-derived contact runs with two-bone leg IK.
/// Only the hip and knee rotations of each leg change.
pub fn fix_foot_contacts(
    output: &RotationalMotion,
    labels: &[[bool; 2]],
    skel: &SkeletonTopology,
) -> Result<(RotationalMotion, FootFixReport)> {
    check_joints(skel, output)?;
    if labels.len() != output.frames() {
        return Err(Error::ShapeMismatch(format!(
            "{} contact labels for {} frames",
            labels.len(),
            output.frames()
        )));
    }
    let feet = feet(skel)?;
    let chain = feet.map(|f| {
        let knee = skel.parents[f]?;
        let hip = skel.parents[knee]?;
        Some((hip, knee, f))
    });
    let world = forward_kinematics(skel, output, true)?;
    let tracks = foot_tracks(skel, &world)?;
    let mut out = output.clone();
    let mut report = FootFixReport::default();
    for side in 0..2 {
        let Some((hip, knee, foot)) = chain[side] else {
            return Err(Error::InvalidArgument(format!("foot joint {} lacks a two-bone leg", feet[side])));
        };
        let flags: Vec<bool> = labels.iter().map(|l| l[side]).collect();
        let hips: Vec<Vec3> = world.positions.iter().map(|p| p[hip]).collect();
        let p0 = &world.positions[0];
        let (l1, l2) = (quat::norm(quat::sub(p0[knee], p0[hip])), quat::norm(quat::sub(p0[foot], p0[knee])));
        let (lo, hi) = ((l1 - l2).abs() + 1e-9, l1 + l2 - 1e-9);
        let targets = contact_targets(&tracks[side], &hips, &flags, lo, hi);
        for (t, target) in targets.iter().enumerate() {
            let Some((target, out_of_reach)) = *target else { continue };
            if out_of_reach {
                report.unreachable[side].push(t);
            }
            if quat::norm(quat::sub(target, tracks[side][t])) == 0.0 {
                continue;
            }
            let (pos, globals) = fk_frame(skel, &out.rotations[t], out.root_translation[t]);
            let (gh, gk, _) = two_bone(pos[hip], pos[knee], pos[foot], target, globals[hip], globals[knee]);
            let parent = skel.parents[hip].map_or(Quaternion::IDENTITY, |p| globals[p]);
            out.rotations[t][hip] = (parent.conjugate() * gh).normalize()?;
            out.rotations[t][knee] = (gh.conjugate() * gk).normalize()?;
        }
    }
    for side in 0..2 {
        if !report.unreachable[side].is_empty() {
            warn!("{} contact frames of foot {side} were out of reach", report.unreachable[side].len());
        }
    }
    Ok((out.hemisphere_aligned(), report))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub v_con: f64,
    pub v_sty: Option<f64>,
    pub warp_factor: f64,
    /// Contact frames per foot in the content.
    pub contact_frames: [usize; 2],
    pub unreachable_frames: usize,
}

#[derive(Clone, Debug)]
pub struct TransferResult {
    pub motion: RotationalMotion,
    pub report: TransferReport,
}

/// Velocity factor of a style input, in the units of the matching content
/// measurement.
fn style_velocity(model: &Model, style: &StyleInput) -> Result<Option<f64>> {
    match style {
        StyleInput::Motion3D(m) | StyleInput::Both(m, _) => Ok(Some(velocity_factor(m)?)),
        StyleInput::Keypoints2D(m) => Ok(Some(velocity_factor_2d(m, model.landmarks.pelvis)?)),
        StyleInput::Code(_) => Ok(None),
    }
}

fn content_velocity(model: &Model, content: &RotationalMotion, style: &StyleInput) -> Result<f64> {
    let world = forward_kinematics(&model.skeleton, content, false)?;
    match style {
        StyleInput::Keypoints2D(_) => {
            let lm = &model.landmarks;
            let p = normalize_2d(&project(&world, &CameraParams::IDENTITY, lm)?, lm.pelvis, lm.torso_top)?;
            velocity_factor_2d(&p, lm.pelvis)
        }
        _ => velocity_factor(&world),
    }
}

/// Translates `content` into `style`, keeping the content's root track.
pub fn transfer(model: &Model, content: &RotationalMotion, style: &StyleInput, opts: &TransferOptions) -> Result<TransferResult> {
    let code = model.encode_style_code(style)?;
    let v_sty = style_velocity(model, style)?;
    let v_con = content_velocity(model, content, style)?;
    transfer_with_code(model, content, &code, v_con, v_sty, opts)
}

fn transfer_with_code(
    model: &Model,
    content: &RotationalMotion,
    code: &[f64],
    v_con: f64,
    v_sty: Option<f64>,
    opts: &TransferOptions,
) -> Result<TransferResult> {
    let skel = &model.skeleton;
    check_joints(skel, content)?;
    let (norm, root) = root_normalize(content);
    let stride = model.arch.content_stride();
    let t_len = content.frames();
    let padded_len = t_len.div_ceil(stride).max(2) * stride;
    let mut padded = norm.clone();
    while padded.frames() < padded_len {
        let last = padded.frames() - 1;
        padded.rotations.push(padded.rotations[last].clone());
        padded.root_translation.push(padded.root_translation[last]);
    }
    let translated = model.translate_with_code(&padded, code)?.slice(0, t_len);
    let mut motion = root.restore(&translated)?;
    motion.style = None;

    let mut report = TransferReport {
        v_con,
        v_sty,
        warp_factor: 1.0,
        ..TransferReport::default()
    };
    if opts.ik && skel.feet.is_some() {
        let th = opts.contacts.unwrap_or_else(|| ContactThresholds::for_skeleton(skel));
        let labels = detect_foot_contacts(content, skel, &th)?;
        report.contact_frames = [0, 1].map(|k| labels.iter().filter(|l| l[k]).count());
        let (fixed, r) = fix_foot_contacts(&motion, &labels, skel)?;
        report.unreachable_frames = r.unreachable[0].len() + r.unreachable[1].len();
        motion = fixed;
    }
    if opts.warp {
        if let Some(vs) = v_sty {
            if v_con > 0.0 && vs > 0.0 {
                report.warp_factor = vs / v_con;
                motion = warp_motion(&motion, report.warp_factor)?;
            } else {
                warn!("velocity factor is zero (content {v_con}, style {vs}); skipping the warp");
            }
        }
    }
    Ok(TransferResult { motion, report })
}

/// Transfer with the style code `(1 − w)·z_a + w·z_b`; the velocity factor
/// is interpolated the same way.
pub fn interpolate_styles(
    model: &Model,
    content: &RotationalMotion,
    style_a: &StyleInput,
    style_b: &StyleInput,
    w: f64,
    opts: &TransferOptions,
) -> Result<TransferResult> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::InvalidArgument(format!("interpolation weight {w} outside [0, 1]")));
    }
    let za = model.encode_style_code(style_a)?;
    let zb = model.encode_style_code(style_b)?;
    let code: Vec<f64> = za.iter().zip(&zb).map(|(a, b)| (1.0 - w) * a + w * b).collect();
    let (va, vb) = (style_velocity(model, style_a)?, style_velocity(model, style_b)?);
    let v_sty = match (va, vb) {
        (Some(a), Some(b)) => Some((1.0 - w) * a + w * b),
        _ => None,
    };
    let v_con = content_velocity(model, content, style_a)?;
    transfer_with_code(model, content, &code, v_con, v_sty, opts)
}

/// Evenly spaced weights `0, 1/(k−1), …, 1`.
pub fn interpolation_weights(steps: usize) -> Result<Vec<f64>> {
    if steps < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 interpolation steps, got {steps}")));
    }
    Ok((0..steps).map(|i| i as f64 / (steps - 1) as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::ArchConfig;
    use crate::toy::{toy_clip, toy_landmarks, toy_skeleton, toy_styles, ToyContent, LEFT_FOOT};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn static_clip(frames: usize) -> PositionalMotion3D {
        PositionalMotion3D {
            positions: vec![vec![[0.0, 1.0, 0.0], [0.3, 0.5, 0.1], [0.0, 2.0, 0.0]]; frames],
            fps: 30.0,
        }
    }

    #[test]
    fn velocity_cases() {
        assert_eq!(velocity_factor(&static_clip(5)).unwrap(), 0.0);
        let mut m = static_clip(6);
        for (t, f) in m.positions.iter_mut().enumerate() {
            f[1][0] += 2.0 * t as f64 / 30.0;
        }
        assert!((velocity_factor(&m).unwrap() - 2.0).abs() < 1e-12);
        assert!(velocity_factor(&static_clip(1)).is_err());
    }

    #[test]
    fn warp_cases() {
        let line: Vec<Vec3> = (0..9).map(|i| [i as f64, 0.0, 0.0]).collect();
        assert_eq!(time_warp(&line, 1.0).unwrap(), line);
        let half = time_warp(&line, 2.0).unwrap();
        assert_eq!(half.len(), 5);
        for (i, p) in half.iter().enumerate() {
            assert!((p[0] - 2.0 * i as f64).abs() < 1e-12);
        }
        assert!(time_warp(&line, 0.0).is_err());
        assert!(time_warp(&line, -1.0).is_err());
    }

    fn gait() -> RotationalMotion {
        toy_clip(&toy_styles()[0], &ToyContent { cadence: 1.1, phase: 0.4, heading: 0.3 }, 48, 30.0)
    }

    #[test]
    fn contacts_on_constructed_clips() {
        let skel = toy_skeleton();
        let th = ContactThresholds::for_skeleton(&skel);
        let mut jump = gait();
        jump.root_translation.iter_mut().for_each(|r| r[1] += 1.0);
        assert!(detect_foot_contacts(&jump, &skel, &th).unwrap().iter().all(|l| !l[0] && !l[1]));

        let still = RotationalMotion::new(vec![vec![Quaternion::IDENTITY; 8]; 10], vec![[0.0, 0.95, 0.0]; 10], 30.0).unwrap();
        assert!(detect_foot_contacts(&still, &skel, &th).unwrap().iter().all(|l| l[0] && l[1]));
    }

    #[test]
    fn fix_is_noop_without_contacts_and_idempotent() {
        let skel = toy_skeleton();
        let clip = gait();
        let none = vec![[false; 2]; clip.frames()];
        let (same, _) = fix_foot_contacts(&clip, &none, &skel).unwrap();
        assert_eq!(same.rotations, clip.rotations);

        // jitter the root so planted feet slide
        let clip = toy_clip(&toy_styles()[2], &ToyContent { cadence: 1.1, phase: 0.4, heading: 0.3 }, 48, 30.0);
        let labels = detect_foot_contacts(&clip, &skel, &ContactThresholds::for_skeleton(&skel)).unwrap();
        assert!(labels.iter().any(|l| l[0]) && labels.iter().any(|l| l[1]));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut skating = clip.clone();
        for r in skating.root_translation.iter_mut() {
            r[0] += rng.gen_range(-0.02..0.02);
            r[2] += rng.gen_range(-0.02..0.02);
        }
        let before = foot_skate(&skating, &skel, &labels).unwrap();
        let (fixed, rep) = fix_foot_contacts(&skating, &labels, &skel).unwrap();
        let after = foot_skate(&fixed, &skel, &labels).unwrap();
        assert!(after < before, "{after} !< {before}");
        assert!(rep.unreachable.iter().all(Vec::is_empty));

        let (again, _) = fix_foot_contacts(&fixed, &labels, &skel).unwrap();
        let p1 = forward_kinematics(&skel, &fixed, true).unwrap();
        let p2 = forward_kinematics(&skel, &again, true).unwrap();
        for (a, b) in p1.positions.iter().flatten().zip(p2.positions.iter().flatten()) {
            assert!(quat::norm(quat::sub(*a, *b)) < 1e-5);
        }
        // untouched non-leg joints
        for (a, b) in fixed.rotations.iter().zip(&skating.rotations) {
            assert_eq!(a[7], b[7]);
        }
    }

    #[test]
    fn two_bone_reaches_target() {
        let skel = toy_skeleton();
        let mut clip = gait().slice(0, 1);
        clip.rotations[0][2] = Quaternion::about(crate::quat::Axis::X, 0.5);
        let (pos, _) = fk_frame(&skel, &clip.rotations[0], clip.root_translation[0]);
        let target = quat::add(pos[LEFT_FOOT], [0.05, 0.08, -0.03]);
        let globals = globals_of(&skel, &clip);
        let (gh, gk, clamped) = two_bone(pos[1], pos[2], pos[3], target, globals[1], globals[2]);
        assert!(!clamped);
        let mut r = clip.rotations[0].clone();
        r[1] = globals[0].conjugate() * gh;
        r[2] = gh.conjugate() * gk;
        let (moved, _) = fk_frame(&skel, &r, clip.root_translation[0]);
        assert!(quat::norm(quat::sub(moved[LEFT_FOOT], target)) < 1e-9);
    }

    fn globals_of(skel: &SkeletonTopology, clip: &RotationalMotion) -> Vec<Quaternion> {
        fk_frame(skel, &clip.rotations[0], clip.root_translation[0]).1
    }

    #[test]
    fn run_target_is_median_of_reached_positions() {
        let hips: Vec<Vec3> = (0..7).map(|t| [0.1 * t as f64, 1.0, 0.0]).collect();
        let track: Vec<Vec3> = (0..7).map(|t| [0.3 + 0.02 * t as f64, 0.1, 0.0]).collect();
        let (lo, hi) = (0.0, 0.95);
        let target = run_target(&track, &hips, lo, hi);
        let reached: Vec<Vec3> = hips.iter().map(|&h| reachable(h, target, lo, hi)).collect();
        for k in 0..3 {
            let med = median(reached.iter().map(|p| p[k]).collect());
            assert!((med - target[k]).abs() < 1e-9);
        }
        let labels = vec![true; 7];
        let first = contact_targets(&track, &hips, &labels, lo, hi);
        assert!(first.iter().any(|f| f.unwrap().1), "some frames should be out of reach");
        let moved: Vec<Vec3> = first.iter().map(|f| f.unwrap().0).collect();
        let second = contact_targets(&moved, &hips, &labels, lo, hi);
        for (a, b) in first.iter().zip(&second) {
            let (a, b) = (a.unwrap(), b.unwrap());
            assert!(quat::norm(quat::sub(a.0, b.0)) < 1e-9);
            assert_eq!(a.1, b.1);
        }
    }

    #[test]
    fn pipeline_shapes_and_endpoints() {
        let skel = toy_skeleton();
        let lm = toy_landmarks();
        let model = Model::new(ArchConfig::tiny(8, 2), skel.clone(), lm, vec!["a".into(), "b".into()], 1).unwrap();
        let content = gait().slice(0, 30);
        let sa = StyleInput::Motion3D(forward_kinematics(&skel, &gait(), false).unwrap());
        let other = toy_clip(&toy_styles()[3], &ToyContent { cadence: 1.5, phase: 0.0, heading: 0.0 }, 40, 30.0);
        let sb = StyleInput::Motion3D(forward_kinematics(&skel, &other, false).unwrap());

        let plain = TransferOptions { warp: false, ik: false, contacts: None };
        let out = transfer(&model, &content, &sa, &plain).unwrap();
        assert_eq!(out.motion.frames(), 30);
        assert_eq!(out.motion.root_translation, content.root_translation);
        assert!(out.motion.rotations.iter().flatten().all(|q| (q.norm() - 1.0).abs() < 1e-9));

        let full = TransferOptions::default();
        let warped = transfer(&model, &content, &sb, &full).unwrap();
        assert_eq!(warped.motion.frames(), warped_length(30, warped.report.warp_factor));

        let a = transfer(&model, &content, &sa, &full).unwrap();
        let b = transfer(&model, &content, &sb, &full).unwrap();
        let i0 = interpolate_styles(&model, &content, &sa, &sb, 0.0, &full).unwrap();
        let i1 = interpolate_styles(&model, &content, &sa, &sb, 1.0, &full).unwrap();
        assert_eq!(i0.motion, a.motion);
        assert_eq!(i1.motion, b.motion);
        assert!(interpolate_styles(&model, &content, &sa, &sb, 1.5, &full).is_err());
        assert_eq!(interpolation_weights(3).unwrap(), vec![0.0, 0.5, 1.0]);
    }
}
