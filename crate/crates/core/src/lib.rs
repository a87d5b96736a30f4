//! Unpaired motion style transfer.
//!
//! A content encoder strips per-channel temporal statistics from a rotation
//! clip with instance normalization; a style encoder (3D positions or 2D
//! keypoints) produces a fixed-length code that an MLP turns into AdaIN
//! gains and biases for the decoder. Training is unpaired: clips only carry
//! a style label.

pub mod analysis;
pub mod autodiff;
pub mod bvh;
pub mod dataset;
pub mod error;
pub mod inference;
pub mod keypoints;
pub mod kinematics;
pub mod losses;
pub mod motion;
pub mod nets;
pub mod projection;
pub mod quat;
pub mod spectral;
pub mod toy;
pub mod training;

pub use error::{Error, Result};
pub use motion::{PositionalMotion2D, PositionalMotion3D, RotationalMotion, SkeletonTopology};
pub use quat::Quaternion;
