//! Skeleton and motion containers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quat::{hemisphere_align, Quaternion, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonTopology {
    pub names: Vec<String>,
    /// `None` for the root; otherwise an index smaller than the joint's own.
    pub parents: Vec<Option<usize>>,
    pub offsets: Vec<Vec3>,
    /// End-site offset for leaf joints that carry one.
    pub end_sites: Vec<Option<Vec3>>,
    /// `(left, right)` foot joints.
    pub feet: Option<(usize, usize)>,
}

impl SkeletonTopology {
    pub fn new(names: Vec<String>, parents: Vec<Option<usize>>, offsets: Vec<Vec3>) -> Result<Self> {
        let n = names.len();
        let skel = Self {
            names,
            parents,
            offsets,
            end_sites: vec![None; n],
            feet: None,
        };
        skel.validate()?;
        Ok(skel)
    }

    pub fn with_feet(mut self, left: usize, right: usize) -> Result<Self> {
        self.feet = Some((left, right));
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.names.len();
        if n == 0 {
            return Err(Error::InvalidArgument("skeleton has no joints".into()));
        }
        if self.parents.len() != n || self.offsets.len() != n || self.end_sites.len() != n {
            return Err(Error::ShapeMismatch(
                "skeleton names/parents/offsets/end sites differ in length".into(),
            ));
        }
        if self.parents[0].is_some() {
            return Err(Error::InvalidArgument("joint 0 must be the root".into()));
        }
        for (j, p) in self.parents.iter().enumerate().skip(1) {
            match p {
                None => return Err(Error::InvalidArgument(format!("second root at joint {j}"))),
                Some(p) if *p >= j => {
                    return Err(Error::InvalidArgument(format!(
                        "joint {j} has parent {p}; parents must precede children"
                    )))
                }
                _ => {}
            }
        }
        if let Some((l, r)) = self.feet {
            if l >= n || r >= n {
                return Err(Error::InvalidArgument(format!(
                    "foot indices ({l}, {r}) out of range for {n} joints"
                )));
            }
        }
        Ok(())
    }

    pub fn num_joints(&self) -> usize {
        self.names.len()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn children(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        self.parents
            .iter()
            .enumerate()
            .filter(move |(_, p)| **p == Some(j))
            .map(|(c, _)| c)
    }

    /// Rest-pose joint positions with the root at the origin.
    pub fn rest_positions(&self) -> Vec<Vec3> {
        let mut pos = vec![[0.0; 3]; self.num_joints()];
        for j in 1..self.num_joints() {
            let p = self.parents[j].expect("validated");
            pos[j] = crate::quat::add(pos[p], self.offsets[j]);
        }
        pos
    }

    /// Vertical extent of the rest pose, end sites included.
    pub fn height(&self) -> f64 {
        let pos = self.rest_positions();
        let mut ys: Vec<f64> = pos.iter().map(|p| p[1]).collect();
        for (j, e) in self.end_sites.iter().enumerate() {
            if let Some(e) = e {
                ys.push(pos[j][1] + e[1]);
            }
        }
        let max = ys.iter().cloned().fold(f64::MIN, f64::max);
        let min = ys.iter().cloned().fold(f64::MAX, f64::min);
        max - min
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationalMotion {
    /// `rotations[t][j]`: local rotation of joint `j` at frame `t`.
    pub rotations: Vec<Vec<Quaternion>>,
    pub root_translation: Vec<Vec3>,
    pub fps: f64,
    pub style: Option<String>,
}

impl RotationalMotion {
    pub fn new(rotations: Vec<Vec<Quaternion>>, root_translation: Vec<Vec3>, fps: f64) -> Result<Self> {
        let m = Self {
            rotations,
            root_translation,
            fps,
            style: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn identity(frames: usize, joints: usize, fps: f64) -> Self {
        Self {
            rotations: vec![vec![Quaternion::IDENTITY; joints]; frames],
            root_translation: vec![[0.0; 3]; frames],
            fps,
            style: None,
        }
    }

    pub fn with_style(mut self, style: impl Into<String>) -> Self {
        self.style = Some(style.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.rotations.is_empty() {
            return Err(Error::TooShort { needed: 1, actual: 0 });
        }
        if self.rotations.len() != self.root_translation.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} rotation frames vs {} root frames",
                self.rotations.len(),
                self.root_translation.len()
            )));
        }
        let j = self.rotations[0].len();
        if self.rotations.iter().any(|f| f.len() != j) {
            return Err(Error::ShapeMismatch("ragged rotation frames".into()));
        }
        if !(self.fps > 0.0) {
            return Err(Error::InvalidArgument(format!("fps must be positive, got {}", self.fps)));
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        self.rotations.len()
    }

    pub fn num_joints(&self) -> usize {
        self.rotations.first().map_or(0, Vec::len)
    }

    /// Per-joint sign alignment of every rotation track.
    pub fn hemisphere_aligned(mut self) -> Self {
        for j in 0..self.num_joints() {
            let track: Vec<Quaternion> = self.rotations.iter().map(|f| f[j]).collect();
            for (f, q) in self.rotations.iter_mut().zip(hemisphere_align(&track)) {
                f[j] = q;
            }
        }
        self
    }

    /// Frames `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self {
            rotations: self.rotations[start..start + len].to_vec(),
            root_translation: self.root_translation[start..start + len].to_vec(),
            fps: self.fps,
            style: self.style.clone(),
        }
    }

    /// Channel-major `4J × T` layout: channel `4j + k` holds component `k`
    /// (w, x, y, z) of joint `j`.
    pub fn to_channels(&self) -> Vec<f64> {
        let t_len = self.frames();
        let j_len = self.num_joints();
        let mut out = vec![0.0; 4 * j_len * t_len];
        for (t, frame) in self.rotations.iter().enumerate() {
            for (j, q) in frame.iter().enumerate() {
                for (k, v) in q.to_array().into_iter().enumerate() {
                    out[(4 * j + k) * t_len + t] = v;
                }
            }
        }
        out
    }

    /// Inverse of [`to_channels`](Self::to_channels); root track is zero.
    pub fn from_channels(data: &[f64], joints: usize, frames: usize, fps: f64) -> Result<Self> {
        if data.len() != 4 * joints * frames {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {joints} joints x {frames} frames",
                data.len()
            )));
        }
        let rotations = (0..frames)
            .map(|t| {
                (0..joints)
                    .map(|j| {
                        let c = |k: usize| data[(4 * j + k) * frames + t];
                        Quaternion::new(c(0), c(1), c(2), c(3))
                    })
                    .collect()
            })
            .collect();
        Self::new(rotations, vec![[0.0; 3]; frames], fps)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionalMotion3D {
    /// `positions[t][j]`.
    pub positions: Vec<Vec<Vec3>>,
    pub fps: f64,
}

impl PositionalMotion3D {
    pub fn frames(&self) -> usize {
        self.positions.len()
    }

    pub fn num_joints(&self) -> usize {
        self.positions.first().map_or(0, Vec::len)
    }

    /// Channel-major `3J × T` layout, each value multiplied by `scale`.
    pub fn to_channels(&self, scale: f64) -> Vec<f64> {
        channels(&self.positions, scale)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionalMotion2D {
    pub positions: Vec<Vec<[f64; 2]>>,
    /// Per-joint confidence in `[0, 1]`; 1.0 for synthetic projections.
    pub confidence: Vec<Vec<f64>>,
    pub fps: f64,
}

impl PositionalMotion2D {
    pub fn frames(&self) -> usize {
        self.positions.len()
    }

    pub fn num_joints(&self) -> usize {
        self.positions.first().map_or(0, Vec::len)
    }

    pub fn to_channels(&self) -> Vec<f64> {
        channels(&self.positions, 1.0)
    }
}

fn channels<const D: usize>(positions: &[Vec<[f64; D]>], scale: f64) -> Vec<f64> {
    let t_len = positions.len();
    let j_len = positions.first().map_or(0, Vec::len);
    let mut out = vec![0.0; D * j_len * t_len];
    for (t, frame) in positions.iter().enumerate() {
        for (j, p) in frame.iter().enumerate() {
            for k in 0..D {
                out[(D * j + k) * t_len + t] = p[k] * scale;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> SkeletonTopology {
        SkeletonTopology::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![None, Some(0), Some(1)],
            vec![[0.0; 3], [0.0, 1.0, 0.0], [0.0, 1.0, 0.0]],
        )
        .unwrap()
    }

    #[test]
    fn skeleton_validation() {
        assert!(SkeletonTopology::new(
            vec!["a".into(), "b".into()],
            vec![None, Some(1)],
            vec![[0.0; 3]; 2]
        )
        .is_err());
        assert!(SkeletonTopology::new(
            vec!["a".into(), "b".into()],
            vec![None, None],
            vec![[0.0; 3]; 2]
        )
        .is_err());
        assert!(chain().with_feet(2, 5).is_err());
        assert_eq!(chain().height(), 2.0);
    }

    #[test]
    fn channel_layout_round_trip() {
        let mut m = RotationalMotion::identity(3, 2, 30.0);
        m.rotations[1][1] = Quaternion::new(0.5, 0.5, 0.5, 0.5);
        let c = m.to_channels();
        assert_eq!(c.len(), 24);
        assert_eq!(c[(4 + 1) * 3 + 1], 0.5);
        let back = RotationalMotion::from_channels(&c, 2, 3, 30.0).unwrap();
        assert_eq!(back.rotations, m.rotations);
    }

    #[test]
    fn motion_validation() {
        assert!(RotationalMotion::new(vec![], vec![], 30.0).is_err());
        assert!(RotationalMotion::new(vec![vec![Quaternion::IDENTITY]], vec![], 30.0).is_err());
    }
}
