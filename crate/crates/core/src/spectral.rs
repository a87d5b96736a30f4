//! Frequency-domain style transfer baseline and the convolution/affine
//! identity behind instance normalization.

use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};
use crate::motion::{PositionalMotion3D, RotationalMotion};
use crate::quat::Quaternion;

/// Output channels plus the largest imaginary part dropped by the inverse
/// transform.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralOutput {
    pub channels: Vec<Vec<f64>>,
    pub max_imag: f64,
}

fn check_lengths(x: &[Vec<f64>], ys: &[Vec<f64>], yt: &[Vec<f64>]) -> Result<usize> {
    if x.len() != ys.len() || x.len() != yt.len() {
        return Err(Error::ShapeMismatch(format!(
            "channel counts differ: input {}, source style {}, target style {}",
            x.len(),
            ys.len(),
            yt.len()
        )));
    }
    let t = x.first().map_or(0, Vec::len);
    for (i, c) in x.iter().chain(ys).chain(yt).enumerate() {
        if c.len() != t {
            return Err(Error::ShapeMismatch(format!("signal {i} has {} samples, expected {t}", c.len())));
        }
    }
    if t == 0 {
        return Err(Error::TooShort { needed: 1, actual: 0 });
    }
    Ok(t)
}

/// Per channel: magnitude `max(0, |x| + |y_t| − |y_s|)` with the phase of
/// `x` (phase 0 where `x` vanishes), then back to the time domain.
pub fn spectral_transfer(x: &[Vec<f64>], ys: &[Vec<f64>], yt: &[Vec<f64>]) -> Result<SpectralOutput> {
    let t = check_lengths(x, ys, yt)?;
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(t);
    let inv = planner.plan_fft_inverse(t);
    let spectrum = |s: &[f64]| {
        let mut buf: Vec<Complex<f64>> = s.iter().map(|&v| Complex::new(v, 0.0)).collect();
        fwd.process(&mut buf);
        buf
    };
    let mut out = SpectralOutput {
        channels: Vec::with_capacity(x.len()),
        max_imag: 0.0,
    };
    for c in 0..x.len() {
        let (fx, fs, ft) = (spectrum(&x[c]), spectrum(&ys[c]), spectrum(&yt[c]));
        let mut buf: Vec<Complex<f64>> = (0..t)
            .map(|w| {
                let mag = (fx[w].norm() + ft[w].norm() - fs[w].norm()).max(0.0);
                let phase = if fx[w].norm() == 0.0 { 0.0 } else { fx[w].arg() };
                Complex::from_polar(mag, phase)
            })
            .collect();
        inv.process(&mut buf);
        let n = t as f64;
        out.max_imag = buf.iter().fold(out.max_imag, |m, z| m.max((z.im / n).abs()));
        out.channels.push(buf.iter().map(|z| z.re / n).collect());
    }
    Ok(out)
}

/// Quaternion-component channels of a clip, one per `4j + k`.
fn rotation_channels(m: &RotationalMotion) -> Vec<Vec<f64>> {
    let t = m.frames();
    m.to_channels().chunks(t).map(<[f64]>::to_vec).collect()
}

fn same_frames(a: usize, b: usize, c: usize) -> Result<()> {
    if a != b || a != c {
        return Err(Error::ShapeMismatch(format!("clip lengths differ: {a}, {b}, {c}")));
    }
    Ok(())
}

/// [`spectral_transfer`] on quaternion components, renormalized per joint.
/// The root track of `x` is kept.
pub fn spectral_transfer_rotations(x: &RotationalMotion, ys: &RotationalMotion, yt: &RotationalMotion) -> Result<RotationalMotion> {
    same_frames(x.frames(), ys.frames(), yt.frames())?;
    let out = spectral_transfer(&rotation_channels(x), &rotation_channels(ys), &rotation_channels(yt))?;
    let mut rotations = Vec::with_capacity(x.frames());
    for t in 0..x.frames() {
        let frame = (0..x.num_joints())
            .map(|j| {
                let c = |k: usize| out.channels[4 * j + k][t];
                Quaternion::new(c(0), c(1), c(2), c(3)).normalize().unwrap_or(x.rotations[t][j])
            })
            .collect();
        rotations.push(frame);
    }
    Ok(RotationalMotion {
        rotations,
        root_translation: x.root_translation.clone(),
        fps: x.fps,
        style: None,
    }
    .hemisphere_aligned())
}

/// [`spectral_transfer`] on joint position coordinates.
pub fn spectral_transfer_positions(
    x: &PositionalMotion3D,
    ys: &PositionalMotion3D,
    yt: &PositionalMotion3D,
) -> Result<PositionalMotion3D> {
    same_frames(x.frames(), ys.frames(), yt.frames())?;
    let chans = |m: &PositionalMotion3D| -> Vec<Vec<f64>> {
        let t = m.frames();
        m.to_channels(1.0).chunks(t).map(<[f64]>::to_vec).collect()
    };
    let out = spectral_transfer(&chans(x), &chans(ys), &chans(yt))?;
    let positions = (0..x.frames())
        .map(|t| (0..x.num_joints()).map(|j| std::array::from_fn(|k| out.channels[3 * j + k][t])).collect())
        .collect();
    Ok(PositionalMotion3D { positions, fps: x.fps })
}

/// Valid-mode convolution `(x ∗ k)[t] = Σ_i x[t + K − 1 − i]·k[i]`.
pub fn convolve_valid(x: &[f64], k: &[f64]) -> Result<Vec<f64>> {
    if k.is_empty() || x.len() < k.len() {
        return Err(Error::ShapeMismatch(format!(
            "kernel of length {} does not fit a signal of length {}",
            k.len(),
            x.len()
        )));
    }
    let kl = k.len();
    Ok((0..=x.len() - kl)
        .map(|t| k.iter().enumerate().map(|(i, kv)| x[t + kl - 1 - i] * kv).sum())
        .collect())
}

/// `β(x ∗ k + b) + γ` and `x ∗ (βk) + (βb + γ)`.
pub fn affine_conv_equivalence(x: &[f64], k: &[f64], b: f64, beta: f64, gamma: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let lhs = convolve_valid(x, k)?.into_iter().map(|v| beta * (v + b) + gamma).collect();
    let scaled: Vec<f64> = k.iter().map(|v| beta * v).collect();
    let bias = beta * b + gamma;
    let rhs = convolve_valid(x, &scaled)?.into_iter().map(|v| v + bias).collect();
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_pair_is_identity() {
        let x = vec![vec![0.3, -1.0, 2.0, 0.5, 0.0, 1.5, -0.7]];
        let y = vec![vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]];
        let out = spectral_transfer(&x, &y, &y).unwrap();
        for (a, b) in out.channels[0].iter().zip(&x[0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(out.max_imag < 1e-12);
    }

    #[test]
    fn zero_input_takes_magnitude_difference() {
        let x = vec![vec![0.0; 4]];
        let ys = vec![vec![0.0; 4]];
        let yt = vec![vec![1.0, 0.0, 0.0, 0.0]];
        // |Y_t| = 1 everywhere, phase 0 → a unit impulse
        let out = spectral_transfer(&x, &ys, &yt).unwrap();
        let want = [1.0, 0.0, 0.0, 0.0];
        for (a, b) in out.channels[0].iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn length_mismatch() {
        assert!(spectral_transfer(&[vec![1.0; 4]], &[vec![1.0; 5]], &[vec![1.0; 4]]).is_err());
        assert!(spectral_transfer(&[vec![1.0; 4]], &[], &[vec![1.0; 4]]).is_err());
    }

    #[test]
    fn conv_identity_corners() {
        let x = [1.0, 2.0, -1.0, 0.5];
        let k = [0.5, -1.0];
        assert_eq!(convolve_valid(&x, &k).unwrap(), vec![0.0, -2.5, 1.25]);
        let (l, r) = affine_conv_equivalence(&x, &k, 0.3, 0.0, 2.0).unwrap();
        assert!(l.iter().chain(&r).all(|v| *v == 2.0));
        let (l, r) = affine_conv_equivalence(&x, &k, 0.0, 1.0, 0.0).unwrap();
        assert_eq!(l, convolve_valid(&x, &k).unwrap());
        assert_eq!(r, l);
    }
}
