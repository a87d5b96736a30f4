//! Translator networks: content encoder, 3D and 2D style encoders, the
//! AdaIN-parameter MLP, the decoder and the multi-style discriminator.
//!
//! Every network works on channel-major `[channels, time]` tensors recorded
//! on a [`Tape`]. The `*_code` / [`Model::translate`] helpers wrap the tape
//! calls for inference.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, FORMAT_VERSION};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::kinematics::{forward_kinematics, root_normalize};
use crate::motion::{PositionalMotion2D, PositionalMotion3D, RotationalMotion, SkeletonTopology};
use crate::projection::BodyLandmarks;

/// Layer widths and counts; fully determines every parameter shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub joints: usize,
    /// Output width of each strided content-encoder conv; the last is C_c.
    pub content_channels: Vec<usize>,
    pub content_res_blocks: usize,
    /// Output width of each strided style-encoder conv; the last is D_s.
    pub style_channels: Vec<usize>,
    pub mlp_hidden: usize,
    pub mlp_layers: usize,
    pub decoder_res_blocks: usize,
    pub disc_channels: Vec<usize>,
    pub num_styles: usize,
    pub down_kernel: usize,
    pub res_kernel: usize,
    pub slope: f64,
    /// Multiplies 3D positions before the style encoder and discriminator.
    pub position_scale: f64,
}

impl ArchConfig {
    pub fn new(joints: usize, num_styles: usize) -> Self {
        Self {
            joints,
            content_channels: vec![64, 96],
            content_res_blocks: 2,
            style_channels: vec![64, 96, 144],
            mlp_hidden: 192,
            mlp_layers: 2,
            decoder_res_blocks: 2,
            disc_channels: vec![64, 96, 144],
            num_styles,
            down_kernel: 4,
            res_kernel: 3,
            slope: 0.2,
            position_scale: 1.0,
        }
    }

    /// Narrow variant for tests.
    pub fn tiny(joints: usize, num_styles: usize) -> Self {
        Self {
            content_channels: vec![6, 8],
            content_res_blocks: 1,
            style_channels: vec![6, 6, 8],
            mlp_hidden: 8,
            mlp_layers: 1,
            decoder_res_blocks: 1,
            disc_channels: vec![6, 6, 8],
            ..Self::new(joints, num_styles)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("architecture: {m}")));
        if self.joints == 0 || self.num_styles == 0 {
            return bad("joints and styles must be positive");
        }
        if self.content_channels.is_empty() || self.style_channels.is_empty() || self.disc_channels.is_empty() {
            return bad("channel lists must be nonempty");
        }
        let widths = [&self.content_channels[..], &self.style_channels, &self.disc_channels];
        if widths.iter().any(|w| w.contains(&0)) || self.mlp_hidden == 0 {
            return bad("zero-width layer");
        }
        if self.down_kernel < 2 || self.down_kernel % 2 != 0 || self.res_kernel % 2 != 1 {
            return bad("down kernel must be even and ≥ 2, residual kernel odd");
        }
        if !(self.position_scale > 0.0) || !(self.slope >= 0.0) {
            return bad("position scale must be positive, slope non-negative");
        }
        Ok(())
    }

    pub fn content_width(&self) -> usize {
        *self.content_channels.last().unwrap()
    }

    pub fn style_dim(&self) -> usize {
        *self.style_channels.last().unwrap()
    }

    /// Temporal downsampling factor of the content encoder.
    pub fn content_stride(&self) -> usize {
        1 << self.content_channels.len()
    }

    /// Shortest clip the style encoders and the discriminator accept.
    pub fn min_style_frames(&self) -> usize {
        4 << self.style_channels.len().max(self.disc_channels.len()).saturating_sub(1)
    }

    /// Channel count of every decoder AdaIN layer, in application order.
    pub fn adain_sizes(&self) -> Vec<usize> {
        vec![self.content_width(); 2 * self.decoder_res_blocks]
    }
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    w: ParamId,
    b: ParamId,
    stride: usize,
    pad: usize,
}

#[derive(Clone, Copy, Debug)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct Layers {
    content_down: Vec<Conv>,
    content_res: Vec<(Conv, Conv)>,
    style3d: Vec<Conv>,
    style2d: Vec<Conv>,
    mlp: Vec<Linear>,
    adain_heads: Vec<Linear>,
    dec_res: Vec<(Conv, Conv)>,
    dec_up: Vec<Conv>,
    disc: Vec<Conv>,
    disc_head: Linear,
}

struct Builder<'r> {
    store: ParamStore,
    rng: Option<&'r mut ChaCha8Rng>,
}

impl Builder<'_> {
    fn tensor(&mut self, shape: Vec<usize>, fan_in: usize) -> Tensor {
        let mut t = Tensor::zeros(shape);
        if let Some(rng) = self.rng.as_deref_mut() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            t.data.iter_mut().for_each(|v| *v = rng.gen_range(-bound..bound));
        }
        t
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Conv {
        let w = self.tensor(vec![cout, cin, k], cin * k);
        let b = self.tensor(vec![cout], cin * k);
        Conv {
            w: self.store.add(format!("{name}.w"), w),
            b: self.store.add(format!("{name}.b"), b),
            stride,
            pad: if stride == 1 { k / 2 } else { (k - stride) / 2 },
        }
    }

    fn linear(&mut self, name: &str, n_in: usize, n_out: usize) -> Linear {
        let w = self.tensor(vec![n_out, n_in], n_in);
        let b = self.tensor(vec![n_out], n_in);
        Linear {
            w: self.store.add(format!("{name}.w"), w),
            b: self.store.add(format!("{name}.b"), b),
        }
    }
}

fn build(arch: &ArchConfig, rng: Option<&mut ChaCha8Rng>) -> (ParamStore, Layers) {
    let mut b = Builder {
        store: ParamStore::default(),
        rng,
    };
    let (kd, kr) = (arch.down_kernel, arch.res_kernel);
    let cc = arch.content_width();

    let mut cin = 4 * arch.joints;
    let mut content_down = Vec::new();
    for (i, &c) in arch.content_channels.iter().enumerate() {
        content_down.push(b.conv(&format!("content.down{i}"), cin, c, kd, 2));
        cin = c;
    }
    let content_res = (0..arch.content_res_blocks)
        .map(|i| (b.conv(&format!("content.res{i}.a"), cc, cc, kr, 1), b.conv(&format!("content.res{i}.b"), cc, cc, kr, 1)))
        .collect();

    let mut style = |prefix: &str, cin0: usize| {
        let mut cin = cin0;
        let mut v = Vec::new();
        for (i, &c) in arch.style_channels.iter().enumerate() {
            v.push(b.conv(&format!("{prefix}.conv{i}"), cin, c, kd, 2));
            cin = c;
        }
        v
    };
    let style3d = style("style3d", 3 * arch.joints);
    let style2d = style("style2d", 2 * arch.joints);

    let mut mlp = Vec::new();
    let mut n_in = arch.style_dim();
    for i in 0..arch.mlp_layers {
        mlp.push(b.linear(&format!("mlp.hidden{i}"), n_in, arch.mlp_hidden));
        n_in = arch.mlp_hidden;
    }
    let adain_heads = arch
        .adain_sizes()
        .iter()
        .enumerate()
        .map(|(i, &c)| b.linear(&format!("mlp.head{i}"), n_in, 2 * c))
        .collect();

    let dec_res = (0..arch.decoder_res_blocks)
        .map(|i| (b.conv(&format!("decoder.res{i}.a"), cc, cc, kr, 1), b.conv(&format!("decoder.res{i}.b"), cc, cc, kr, 1)))
        .collect();
    let mut outs: Vec<usize> = arch.content_channels.iter().rev().skip(1).copied().collect();
    outs.push(4 * arch.joints);
    let mut cin = cc;
    let mut dec_up = Vec::new();
    for (i, &c) in outs.iter().enumerate() {
        dec_up.push(b.conv(&format!("decoder.up{i}"), cin, c, kr, 1));
        cin = c;
    }

    let mut cin = 3 * arch.joints;
    let mut disc = Vec::new();
    for (i, &c) in arch.disc_channels.iter().enumerate() {
        disc.push(b.conv(&format!("disc.conv{i}"), cin, c, kd, 2));
        cin = c;
    }
    let disc_head = b.linear("disc.head", cin, arch.num_styles);

    let layers = Layers {
        content_down,
        content_res,
        style3d,
        style2d,
        mlp,
        adain_heads,
        dec_res,
        dec_up,
        disc,
        disc_head,
    };
    (b.store, layers)
}

/// Style input for translation.
#[derive(Clone, Debug)]
pub enum StyleInput {
    Motion3D(PositionalMotion3D),
    Keypoints2D(PositionalMotion2D),
    /// A 3D clip together with 2D views of it; the code is the mean of the
    /// 3D code and the mean 2D code.
    Both(PositionalMotion3D, Vec<PositionalMotion2D>),
    Code(Vec<f64>),
}

/// Output of [`Model::decode`] with the AdaIN layer outputs kept for probing.
pub struct Decoded {
    pub rotations: Var,
    pub adain_features: Vec<Var>,
}

/// Every network weight plus what is needed to rebuild the layer graph.
#[derive(Clone, Debug)]
pub struct Model {
    pub arch: ArchConfig,
    pub skeleton: SkeletonTopology,
    pub landmarks: BodyLandmarks,
    pub styles: Vec<String>,
    pub seed: u64,
    pub params: ParamStore,
    layers: Layers,
}

impl Model {
    pub fn new(
        arch: ArchConfig,
        skeleton: SkeletonTopology,
        landmarks: BodyLandmarks,
        styles: Vec<String>,
        seed: u64,
    ) -> Result<Self> {
        Self::check(&arch, &skeleton, &landmarks, &styles)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (params, layers) = build(&arch, Some(&mut rng));
        Ok(Self {
            arch,
            skeleton,
            landmarks,
            styles,
            seed,
            params,
            layers,
        })
    }

    /// Same layer graph with all weights zero; used when loading.
    pub(crate) fn zeroed(
        arch: ArchConfig,
        skeleton: SkeletonTopology,
        landmarks: BodyLandmarks,
        styles: Vec<String>,
        seed: u64,
    ) -> Result<Self> {
        Self::check(&arch, &skeleton, &landmarks, &styles)?;
        let (params, layers) = build(&arch, None);
        Ok(Self {
            arch,
            skeleton,
            landmarks,
            styles,
            seed,
            params,
            layers,
        })
    }

    fn check(arch: &ArchConfig, skeleton: &SkeletonTopology, landmarks: &BodyLandmarks, styles: &[String]) -> Result<()> {
        arch.validate()?;
        skeleton.validate()?;
        landmarks.check(skeleton.num_joints())?;
        if skeleton.num_joints() != arch.joints {
            return Err(Error::JointCountMismatch {
                expected: arch.joints,
                actual: skeleton.num_joints(),
            });
        }
        if styles.len() != arch.num_styles {
            return Err(Error::Config(format!("{} style names for {} discriminator heads", styles.len(), arch.num_styles)));
        }
        Ok(())
    }

    pub fn style_index(&self, name: &str) -> Option<usize> {
        self.styles.iter().position(|s| s == name)
    }

    /// `true` for discriminator weights, `false` for everything in G.
    pub fn discriminator_mask(&self) -> Vec<bool> {
        self.params.iter().map(|(_, n, _)| n.starts_with("disc.")).collect()
    }

    fn conv<'a>(&'a self, tape: &mut Tape<'a>, c: &Conv, x: Var) -> Var {
        let (w, b) = (tape.param(c.w), tape.param(c.b));
        tape.conv1d_reflect(x, w, b, c.stride, c.pad)
    }

    fn linear<'a>(&'a self, tape: &mut Tape<'a>, l: &Linear, x: Var) -> Var {
        let (w, b) = (tape.param(l.w), tape.param(l.b));
        tape.linear(x, w, b)
    }

    /// `[4J, T]` root-normalized rotations → `[C_c, T / stride]`.
    ///
    /// `probe` adds a constant per-channel offset to the features right
    /// before the final instance normalization.
    pub fn encode_content<'a>(&'a self, tape: &mut Tape<'a>, x: Var, probe: Option<&[f64]>) -> Result<Var> {
        let (c, t) = tape.value(x).dims2();
        check_channels(c, 4 * self.arch.joints)?;
        let stride = self.arch.content_stride();
        if t == 0 || t % stride != 0 || t / stride < 2 {
            return Err(Error::InvalidArgument(format!(
                "content length {t} must be a multiple of {stride} and at least {}",
                2 * stride
            )));
        }
        let slope = self.arch.slope;
        let mut h = x;
        for conv in &self.layers.content_down {
            h = self.conv(tape, conv, h);
            h = tape.instance_norm(h);
            h = tape.leaky_relu(h, slope);
        }
        for (a, b) in &self.layers.content_res {
            let mut r = self.conv(tape, a, h);
            r = tape.instance_norm(r);
            r = tape.leaky_relu(r, slope);
            r = self.conv(tape, b, r);
            r = tape.instance_norm(r);
            h = tape.add(h, r);
        }
        if let Some(off) = probe {
            let (c, t) = tape.value(h).dims2();
            check_channels(off.len(), c)?;
            let o = tape.constant(Tensor::new(vec![c, t], (0..c * t).map(|i| off[i / t]).collect()));
            h = tape.add(h, o);
        }
        Ok(tape.instance_norm(h))
    }

    fn encode_style<'a>(&'a self, tape: &mut Tape<'a>, convs: &[Conv], x: Var, dims: usize) -> Result<Var> {
        let (c, t) = tape.value(x).dims2();
        check_channels(c, dims * self.arch.joints)?;
        let min = self.arch.min_style_frames();
        if t < min {
            return Err(Error::TooShort { needed: min, actual: t });
        }
        let mut h = x;
        for (i, conv) in convs.iter().enumerate() {
            h = self.conv(tape, conv, h);
            if i + 1 < convs.len() {
                h = tape.leaky_relu(h, self.arch.slope);
            }
        }
        Ok(tape.max_pool_time(h))
    }

    /// `[3J, T]` root-relative positions (already scaled) → `[D_s]`.
    pub fn encode_style_3d<'a>(&'a self, tape: &mut Tape<'a>, x: Var) -> Result<Var> {
        self.encode_style(tape, &self.layers.style3d, x, 3)
    }

    /// `[2J, T]` normalized keypoints → `[D_s]`.
    pub fn encode_style_2d<'a>(&'a self, tape: &mut Tape<'a>, x: Var) -> Result<Var> {
        self.encode_style(tape, &self.layers.style2d, x, 2)
    }

    /// One `(γ, β)` pair per AdaIN layer; `γ = 1 + head output`.
    pub fn style_to_adain<'a>(&'a self, tape: &mut Tape<'a>, z: Var) -> Vec<(Var, Var)> {
        let mut h = z;
        for l in &self.layers.mlp {
            h = self.linear(tape, l, h);
            h = tape.leaky_relu(h, self.arch.slope);
        }
        self.layers
            .adain_heads
            .iter()
            .zip(self.arch.adain_sizes())
            .map(|(head, c)| {
                let out = self.linear(tape, head, h);
                let g = tape.slice(out, 0, c);
                let g = tape.add_scalar(g, 1.0);
                let b = tape.slice(out, c, c);
                (g, b)
            })
            .collect()
    }

    /// `[C_c, T/stride]` content code → `[4J, T]` unit quaternions.
    pub fn decode<'a>(&'a self, tape: &mut Tape<'a>, zc: Var, adain: &[(Var, Var)]) -> Result<Decoded> {
        let (c, _) = tape.value(zc).dims2();
        check_channels(c, self.arch.content_width())?;
        if adain.len() != self.arch.adain_sizes().len() {
            return Err(Error::ShapeMismatch(format!(
                "{} AdaIN parameter sets for {} layers",
                adain.len(),
                self.arch.adain_sizes().len()
            )));
        }
        let slope = self.arch.slope;
        let mut feats = Vec::new();
        let mut h = zc;
        for (i, (a, b)) in self.layers.dec_res.iter().enumerate() {
            let (g0, b0) = adain[2 * i];
            let (g1, b1) = adain[2 * i + 1];
            let mut r = self.conv(tape, a, h);
            r = tape.adain(r, g0, b0);
            feats.push(r);
            r = tape.leaky_relu(r, slope);
            r = self.conv(tape, b, r);
            r = tape.adain(r, g1, b1);
            feats.push(r);
            h = tape.add(h, r);
        }
        let n = self.layers.dec_up.len();
        for (i, conv) in self.layers.dec_up.iter().enumerate() {
            h = tape.upsample2(h);
            h = self.conv(tape, conv, h);
            if i + 1 < n {
                h = tape.leaky_relu(h, slope);
            }
        }
        Ok(Decoded {
            rotations: tape.quat_normalize(h),
            adain_features: feats,
        })
    }

    /// `[4J, T]` rotations → (per-style scores `[|S|]`, last feature).
    pub fn discriminate<'a>(&'a self, tape: &mut Tape<'a>, rotations: Var) -> Result<(Var, Var)> {
        let (c, t) = tape.value(rotations).dims2();
        check_channels(c, 4 * self.arch.joints)?;
        let min = self.arch.min_style_frames();
        if t < min {
            return Err(Error::TooShort { needed: min, actual: t });
        }
        let p = tape.fk(rotations, &self.skeleton);
        let mut h = tape.scale(p, self.arch.position_scale);
        for conv in &self.layers.disc {
            h = self.conv(tape, conv, h);
            h = tape.leaky_relu(h, self.arch.slope);
        }
        let feature = tape.mean_time(h);
        let scores = self.linear(tape, &self.layers.disc_head, feature);
        Ok((scores, feature))
    }

    /// Encodes any style input on `tape`.
    pub fn style_code<'a>(&'a self, tape: &mut Tape<'a>, style: &StyleInput) -> Result<Var> {
        match style {
            StyleInput::Motion3D(m) => {
                let x = tape.constant(self.positions_tensor(m));
                self.encode_style_3d(tape, x)
            }
            StyleInput::Keypoints2D(m) => {
                check_channels(m.num_joints(), self.arch.joints)?;
                let x = tape.constant(Tensor::new(vec![2 * m.num_joints(), m.frames()], m.to_channels()));
                self.encode_style_2d(tape, x)
            }
            StyleInput::Both(m3, views) => {
                let z3 = self.style_code(tape, &StyleInput::Motion3D(m3.clone()))?;
                if views.is_empty() {
                    return Ok(z3);
                }
                let z2: Vec<Var> = views
                    .iter()
                    .map(|v| self.style_code(tape, &StyleInput::Keypoints2D(v.clone())))
                    .collect::<Result<_>>()?;
                let z2 = tape.average(&z2);
                Ok(tape.average(&[z3, z2]))
            }
            StyleInput::Code(z) => {
                check_channels(z.len(), self.arch.style_dim())?;
                Ok(tape.constant(Tensor::vector(z.clone())))
            }
        }
    }

    /// Root-relative positions scaled by `position_scale`, as `[3J, T]`.
    pub fn positions_tensor(&self, m: &PositionalMotion3D) -> Tensor {
        let scale = self.arch.position_scale;
        let t_len = m.frames();
        let j_len = m.num_joints();
        let mut data = vec![0.0; 3 * j_len * t_len];
        for (t, f) in m.positions.iter().enumerate() {
            let r = f[0];
            for (j, p) in f.iter().enumerate() {
                for k in 0..3 {
                    data[(3 * j + k) * t_len + t] = scale * (p[k] - r[k]);
                }
            }
        }
        Tensor::new(vec![3 * j_len, t_len], data)
    }

    /// Style code `z_s` of a style input.
    pub fn encode_style_code(&self, style: &StyleInput) -> Result<Vec<f64>> {
        let mut tape = Tape::inference(&self.params);
        let z = self.style_code(&mut tape, style)?;
        Ok(tape.value(z).data.clone())
    }

    /// Style code of a rotational clip via root-normalized, root-free FK.
    pub fn style_code_of_clip(&self, clip: &RotationalMotion) -> Result<Vec<f64>> {
        let (norm, _) = root_normalize(clip);
        let pos = forward_kinematics(&self.skeleton, &norm, false)?;
        self.encode_style_code(&StyleInput::Motion3D(pos))
    }

    /// Content code `[C_c, T/stride]` of a root-normalized clip.
    pub fn content_code(&self, content: &RotationalMotion) -> Result<Tensor> {
        let mut tape = Tape::inference(&self.params);
        let x = tape.constant(rotation_tensor(content));
        let z = self.encode_content(&mut tape, x, None)?;
        Ok(tape.value(z).clone())
    }

    /// Flattened `(γ, β)` of every AdaIN layer for a style code.
    pub fn adain_params(&self, code: &[f64]) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        let mut tape = Tape::inference(&self.params);
        let z = self.style_code(&mut tape, &StyleInput::Code(code.to_vec()))?;
        Ok(self
            .style_to_adain(&mut tape, z)
            .into_iter()
            .map(|(g, b)| (tape.value(g).data.clone(), tape.value(b).data.clone()))
            .collect())
    }

    /// Decodes a content code `[C_c, T']` under a style code.
    pub fn decode_codes(&self, zc: &Tensor, code: &[f64], fps: f64) -> Result<RotationalMotion> {
        let mut tape = Tape::inference(&self.params);
        let zc = tape.constant(zc.clone());
        let z = self.style_code(&mut tape, &StyleInput::Code(code.to_vec()))?;
        let adain = self.style_to_adain(&mut tape, z);
        let out = self.decode(&mut tape, zc, &adain)?;
        let (c, t) = tape.value(out.rotations).dims2();
        RotationalMotion::from_channels(&tape.value(out.rotations).data, c / 4, t, fps)
    }

    /// Rotations of `content` (already root-normalized, T a multiple of the
    /// content stride) re-rendered in `style`. The root track is zero.
    pub fn translate(&self, content: &RotationalMotion, style: &StyleInput) -> Result<RotationalMotion> {
        let code = self.encode_style_code(style)?;
        self.translate_with_code(content, &code)
    }

    pub fn translate_with_code(&self, content: &RotationalMotion, code: &[f64]) -> Result<RotationalMotion> {
        let zc = self.content_code(content)?;
        let mut out = self.decode_codes(&zc, code, content.fps)?;
        out.style = content.style.clone();
        Ok(out)
    }

    /// Scores and last feature of the discriminator for one clip.
    pub fn discriminate_clip(&self, clip: &RotationalMotion) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::inference(&self.params);
        let x = tape.constant(rotation_tensor(clip));
        let (s, f) = self.discriminate(&mut tape, x)?;
        Ok((tape.value(s).data.clone(), tape.value(f).data.clone()))
    }
}

fn check_channels(actual: usize, expected: usize) -> Result<()> {
    if actual != expected {
        return Err(Error::ShapeMismatch(format!("expected {expected} channels, got {actual}")));
    }
    Ok(())
}

/// `[4J, T]` tensor of a clip's rotations.
pub fn rotation_tensor(m: &RotationalMotion) -> Tensor {
    Tensor::new(vec![4 * m.num_joints(), m.frames()], m.to_channels())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::autodiff::gradcheck::max_rel_error_with;
    use crate::quat::Quaternion;

    pub(crate) fn chain(j: usize) -> SkeletonTopology {
        let names = (0..j).map(|i| format!("j{i}")).collect();
        let parents = (0..j).map(|i| i.checked_sub(1)).collect();
        let offsets = (0..j).map(|i| if i == 0 { [0.0; 3] } else { [0.1 * i as f64, 0.5, 0.0] }).collect();
        SkeletonTopology::new(names, parents, offsets).unwrap()
    }

    pub(crate) fn chain_landmarks() -> BodyLandmarks {
        BodyLandmarks {
            pelvis: 0,
            torso_top: 1,
            hips: (1, 2),
            shoulders: None,
        }
    }

    fn tiny_model(j: usize, styles: usize) -> Model {
        let names = (0..styles).map(|i| format!("s{i}")).collect();
        Model::new(ArchConfig::tiny(j, styles), chain(j), chain_landmarks(), names, 7).unwrap()
    }

    fn wavy_clip(j: usize, t: usize, phase: f64) -> RotationalMotion {
        let rotations = (0..t)
            .map(|f| {
                (0..j)
                    .map(|k| {
                        let a = 0.4 * ((f as f64) * 0.3 + phase + k as f64).sin();
                        Quaternion::from_axis_angle([1.0, 0.0, 0.0], a)
                    })
                    .collect()
            })
            .collect();
        RotationalMotion::new(rotations, vec![[0.0; 3]; t], 30.0).unwrap()
    }

    #[test]
    fn default_shapes() {
        let a = ArchConfig::new(8, 4);
        assert_eq!(a.content_width(), 96);
        assert_eq!(a.style_dim(), 144);
        assert_eq!(a.content_stride(), 4);
        assert_eq!(a.min_style_frames(), 16);
        assert_eq!(a.adain_sizes(), vec![96; 4]);
        let m = Model::new(a, chain(8), chain_landmarks(), (0..4).map(|i| i.to_string()).collect(), 0).unwrap();
        let code = m.content_code(&wavy_clip(8, 32, 0.0)).unwrap();
        assert_eq!(code.shape, vec![96, 8]);
    }

    #[test]
    fn content_code_is_deterministic_and_offset_blind() {
        let m = tiny_model(3, 2);
        let clip = wavy_clip(3, 16, 0.2);
        assert_eq!(m.content_code(&clip).unwrap(), m.content_code(&clip).unwrap());
        assert!(m.content_code(&wavy_clip(3, 18, 0.0)).is_err());

        let mut tape = Tape::inference(&m.params);
        let x = tape.constant(rotation_tensor(&clip));
        let plain = m.encode_content(&mut tape, x, None).unwrap();
        let probed = m.encode_content(&mut tape, x, Some(&[5.0, -3.0, 0.5, 9.0, 1.0, -2.0, 0.0, 4.0])).unwrap();
        for (a, b) in tape.value(plain).data.iter().zip(&tape.value(probed).data) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn style_code_length_is_fixed() {
        let m = tiny_model(3, 2);
        let pos = |t| forward_kinematics(&m.skeleton, &wavy_clip(3, t, 0.0), false).unwrap();
        let a = m.encode_style_code(&StyleInput::Motion3D(pos(16))).unwrap();
        let b = m.encode_style_code(&StyleInput::Motion3D(pos(40))).unwrap();
        assert_eq!(a.len(), 8);
        assert_eq!(b.len(), 8);
        assert!(matches!(
            m.encode_style_code(&StyleInput::Motion3D(pos(12))),
            Err(Error::TooShort { needed: 16, actual: 12 })
        ));
    }

    #[test]
    fn mean_code_for_two_modalities() {
        let m = tiny_model(3, 2);
        let p3 = forward_kinematics(&m.skeleton, &wavy_clip(3, 16, 0.0), false).unwrap();
        let p2 = crate::projection::project_with_forward(&p3, &crate::projection::CameraParams::IDENTITY, [0.0, 0.0, 1.0]);
        let z3 = m.encode_style_code(&StyleInput::Motion3D(p3.clone())).unwrap();
        let z2 = m.encode_style_code(&StyleInput::Keypoints2D(p2.clone())).unwrap();
        let zb = m.encode_style_code(&StyleInput::Both(p3, vec![p2])).unwrap();
        for i in 0..z3.len() {
            assert!((zb[i] - 0.5 * (z3[i] + z2[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn translate_composes_stages() {
        let m = tiny_model(3, 2);
        let clip = wavy_clip(3, 16, 0.0);
        let style = StyleInput::Motion3D(forward_kinematics(&m.skeleton, &wavy_clip(3, 16, 1.0), false).unwrap());
        let out = m.translate(&clip, &style).unwrap();
        let code = m.encode_style_code(&style).unwrap();
        let manual = m.decode_codes(&m.content_code(&clip).unwrap(), &code, 30.0).unwrap();
        assert_eq!(out.rotations, manual.rotations);
        assert_eq!(out.frames(), 16);
        for q in out.rotations.iter().flatten() {
            assert!((q.norm() - 1.0).abs() < 1e-9);
        }
        let adain = m.adain_params(&code).unwrap();
        assert_eq!(adain.len(), 2);
        assert!(adain.iter().all(|(g, b)| g.len() == 8 && b.len() == 8));
    }

    #[test]
    fn discriminator_scores_and_gradient() {
        let m = tiny_model(3, 3);
        let clip = wavy_clip(3, 16, 0.0);
        let (s, f) = m.discriminate_clip(&clip).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(f.len(), 8);
        assert_eq!(m.discriminate_clip(&clip).unwrap().0, s);

        let x = rotation_tensor(&clip);
        let err = max_rel_error_with(
            || Tape::inference(&m.params),
            &x,
            1e-6,
            |tape, v| {
                let (s, _) = m.discriminate(tape, v).unwrap();
                let i = tape.slice(s, 1, 1);
                let d = tape.add_scalar(i, -1.0);
                let sq = tape.square(d);
                tape.sum(sq)
            },
        );
        assert!(err < 1e-4, "rel err {err}");
    }
}
