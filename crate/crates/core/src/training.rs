//! Unpaired training: batch sampling, one discriminator update followed by
//! one generator update per iteration, Adam, checkpoints and a metric CSV.

use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamGrads, ParamStore, Tape, Tensor, Var};
use crate::dataset::ClipWindow;
use crate::error::{Error, Result};
use crate::kinematics::{forward_kinematics, root_normalize};
use crate::losses::{self, LossComponents, LossWeights};
use crate::motion::{RotationalMotion, SkeletonTopology};
use crate::nets::{rotation_tensor, save_checkpoint, Model};
use crate::projection::{sample_cameras, CameraParams};
use crate::quat;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Fraction of training after which both learning rates fall linearly
    /// to zero at the last iteration (1: constant rates).
    pub lr_decay_from: f64,
    pub weights: LossWeights,
    /// Camera views sampled per style clip per iteration.
    pub cameras: usize,
    /// Probability that the same-style input is the content window itself.
    pub p_self: f64,
    pub seed: u64,
    /// Checkpoint every this many iterations (0: only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            batch_size: 8,
            lr_g: 1e-4,
            lr_d: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            lr_decay_from: 1.0,
            weights: LossWeights::default(),
            cameras: 5,
            p_self: 0.2,
            seed: 0,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size == 0 || self.cameras == 0 {
            return Err(Error::Config("batch size and camera count must be positive".into()));
        }
        if !(self.lr_g > 0.0 && self.lr_d > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::Config("Adam moment coefficients must lie in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.p_self) {
            return Err(Error::Config("p_self must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.lr_decay_from) {
            return Err(Error::Config("lr_decay_from must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Learning-rate multiplier at iteration `it` (0-based).
    pub fn lr_factor(&self, it: usize) -> f64 {
        let n = self.iterations as f64;
        let start = self.lr_decay_from * n;
        if self.lr_decay_from >= 1.0 || (it as f64) < start {
            return 1.0;
        }
        ((n - it as f64) / (n - start)).clamp(0.0, 1.0)
    }
}

/// A root-normalized window with its cached network inputs.
#[derive(Clone, Debug)]
pub struct TrainWindow {
    pub style: usize,
    pub motion: RotationalMotion,
    pub rotations: Tensor,
    /// Root-free positions in torso units, `[3J, T]`.
    pub positions: Tensor,
    /// Root-free positions in torso units, per frame and joint.
    pub points: Vec<Vec<[f64; 3]>>,
}

#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub styles: Vec<String>,
    pub windows: Vec<TrainWindow>,
    by_style: Vec<Vec<usize>>,
}

impl TrainingSet {
    /// Cuts, root-normalizes and labels the windows of `clips`.
    pub fn new(
        model: &Model,
        clips: &[RotationalMotion],
        windows: &[ClipWindow],
    ) -> Result<Self> {
        let styles = model.styles.clone();
        let mut out = Vec::with_capacity(windows.len());
        for w in windows {
            let clip = clips
                .get(w.source)
                .ok_or_else(|| Error::Config(format!("window refers to missing clip {}", w.source)))?;
            if w.start + w.length > clip.frames() {
                return Err(Error::Config(format!("window {w:?} exceeds clip length {}", clip.frames())));
            }
            let label = clip.style.as_deref().ok_or_else(|| Error::Config(format!("clip {} has no style", w.source)))?;
            let style = model
                .style_index(label)
                .ok_or_else(|| Error::Config(format!("style {label} is not among the model styles")))?;
            out.push(prepare_window(model, &clip.slice(w.start, w.length), style)?);
        }
        Self::from_windows(styles, out)
    }

    pub fn from_windows(styles: Vec<String>, windows: Vec<TrainWindow>) -> Result<Self> {
        let mut by_style = vec![Vec::new(); styles.len()];
        for (i, w) in windows.iter().enumerate() {
            by_style[w.style].push(i);
        }
        for (s, ids) in by_style.iter().enumerate() {
            if ids.len() < 2 {
                return Err(Error::Config(format!(
                    "style {} has {} training windows; at least 2 are needed",
                    styles[s],
                    ids.len()
                )));
            }
        }
        if styles.len() < 2 {
            return Err(Error::Config("training needs at least two styles".into()));
        }
        Ok(Self {
            styles,
            windows,
            by_style,
        })
    }

    pub fn windows_of(&self, style: usize) -> &[usize] {
        &self.by_style[style]
    }
}

/// Root-normalizes a window and caches its tensors.
pub fn prepare_window(model: &Model, window: &RotationalMotion, style: usize) -> Result<TrainWindow> {
    let (motion, _) = root_normalize(window);
    let pos = forward_kinematics(&model.skeleton, &motion, false)?;
    let s = model.arch.position_scale;
    let points = pos
        .positions
        .iter()
        .map(|f| f.iter().map(|p| quat::scale(*p, s)).collect())
        .collect();
    Ok(TrainWindow {
        style,
        rotations: rotation_tensor(&motion),
        positions: model.positions_tensor(&pos),
        points,
        motion,
    })
}

/// `s · R · p` for every frame, as a `[2J, T]` tensor.
pub fn project_points(points: &[Vec<[f64; 3]>], cam: &CameraParams) -> Tensor {
    let m = cam.rotation().to_matrix();
    let t_len = points.len();
    let j_len = points.first().map_or(0, Vec::len);
    let mut data = vec![0.0; 2 * j_len * t_len];
    for (t, f) in points.iter().enumerate() {
        for (j, p) in f.iter().enumerate() {
            let q = quat::mat_vec(&m, *p);
            data[(2 * j) * t_len + t] = cam.scale * q[0];
            data[(2 * j + 1) * t_len + t] = cam.scale * q[1];
        }
    }
    Tensor::new(vec![2 * j_len, t_len], data)
}

/// One training example: indices into the training set plus cameras.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Content window `m^s`.
    pub content: usize,
    /// Same-style window `n^s` (possibly `content` itself).
    pub same: usize,
    /// Target-style window `n^t`.
    pub target: usize,
    /// Second target-style window `x^t`.
    pub target_alt: usize,
    /// Source-style window `w^s` (triplet negative).
    pub source_alt: usize,
    pub source_style: usize,
    pub target_style: usize,
    /// Views of `same`, `target`, `target_alt` and `source_alt`.
    pub cameras: [Vec<CameraParams>; 4],
}

fn pick_other(rng: &mut impl Rng, ids: &[usize], not: usize) -> usize {
    loop {
        let c = *ids.choose(rng).unwrap();
        if c != not {
            return c;
        }
    }
}

pub fn sample_batch(set: &TrainingSet, cfg: &TrainConfig, rng: &mut impl Rng) -> Vec<Sample> {
    let n_styles = set.styles.len();
    (0..cfg.batch_size)
        .map(|_| {
            let s = rng.gen_range(0..n_styles);
            let mut t = rng.gen_range(0..n_styles - 1);
            if t >= s {
                t += 1;
            }
            let content = *set.by_style[s].choose(rng).unwrap();
            let same = if rng.gen_bool(cfg.p_self) {
                content
            } else {
                pick_other(rng, &set.by_style[s], content)
            };
            let target = *set.by_style[t].choose(rng).unwrap();
            let target_alt = pick_other(rng, &set.by_style[t], target);
            let source_alt = *set.by_style[s].choose(rng).unwrap();
            let cameras = std::array::from_fn(|_| sample_cameras(rng, cfg.cameras));
            Sample {
                content,
                same,
                target,
                target_alt,
                source_alt,
                source_style: s,
                target_style: t,
                cameras,
            }
        })
        .collect()
}

/// Adam over a subset of the parameters.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, beta1: f64, beta2: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Updates every parameter with `mask[i]` set and a gradient present.
    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads, mask: &[bool]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            if !mask[id.0] {
                continue;
            }
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            for (i, p) in store.get_mut(id).data.iter_mut().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g.data[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g.data[i] * g.data[i];
                *p -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Per-iteration row of the metric log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub iteration: usize,
    pub losses: LossComponents,
    pub total: f64,
}

pub const METRIC_HEADER: [&str; 8] = ["iteration", "L_con", "L_adv_g", "L_adv_d", "L_reg", "L_joint", "L_trip", "total"];

impl MetricRow {
    pub fn record(&self) -> Vec<String> {
        let c = &self.losses;
        let mut r = vec![self.iteration.to_string()];
        r.extend([c.con, c.adv_g, c.adv_d, c.reg, c.joint, c.trip, self.total].iter().map(|v| v.to_string()));
        r
    }
}

/// 3D code, 2D codes and their combination for one style window.
struct StyleCodes {
    combined: Var,
    code3d: Var,
    codes2d: Vec<Var>,
}

fn encode_views<'a>(model: &'a Model, tape: &mut Tape<'a>, w: &TrainWindow, cams: &[CameraParams]) -> Result<StyleCodes> {
    let x3 = tape.constant(w.positions.clone());
    let code3d = model.encode_style_3d(tape, x3)?;
    let codes2d = cams
        .iter()
        .map(|c| {
            let x2 = tape.constant(project_points(&w.points, c));
            model.encode_style_2d(tape, x2)
        })
        .collect::<Result<Vec<_>>>()?;
    let mean2d = tape.average(&codes2d);
    let combined = tape.average(&[code3d, mean2d]);
    Ok(StyleCodes {
        combined,
        code3d,
        codes2d,
    })
}

fn translate_on<'a>(model: &'a Model, tape: &mut Tape<'a>, zc: Var, code: Var) -> Result<Var> {
    let adain = model.style_to_adain(tape, code);
    Ok(model.decode(tape, zc, &adain)?.rotations)
}

/// Discriminator loss for one sample; the fake is produced without gradient.
fn d_sample(model: &Model, mask: &[bool], set: &TrainingSet, s: &Sample) -> Result<(f64, ParamGrads)> {
    let fake = {
        let mut tape = Tape::inference(&model.params);
        let m = tape.constant(set.windows[s.content].rotations.clone());
        let zc = model.encode_content(&mut tape, m, None)?;
        let codes = encode_views(model, &mut tape, &set.windows[s.target], &s.cameras[1])?;
        let out = translate_on(model, &mut tape, zc, codes.combined)?;
        tape.value(out).clone()
    };
    let mut tape = Tape::with_trainable(&model.params, mask);
    let real = tape.constant(set.windows[s.target].rotations.clone());
    let fake = tape.constant(fake);
    let (rs, _) = model.discriminate(&mut tape, real)?;
    let (fs, _) = model.discriminate(&mut tape, fake)?;
    let loss = losses::adversarial_d(&mut tape, rs, fs, s.target_style)?;
    let value = tape.value(loss).item();
    Ok((value, tape.backward(loss).into_params()))
}

/// Generator objective for one sample.
fn g_sample(model: &Model, mask: &[bool], set: &TrainingSet, s: &Sample, w: &LossWeights) -> Result<(LossComponents, ParamGrads)> {
    let mut tape = Tape::with_trainable(&model.params, mask);
    let win = |i: usize| &set.windows[i];
    let m = tape.constant(win(s.content).rotations.clone());
    let zc = model.encode_content(&mut tape, m, None)?;
    let same = encode_views(model, &mut tape, win(s.same), &s.cameras[0])?;
    let target = encode_views(model, &mut tape, win(s.target), &s.cameras[1])?;

    let mut c = LossComponents::default();
    let mut terms: Vec<(Var, f64)> = Vec::new();

    let rec = translate_on(model, &mut tape, zc, same.combined)?;
    let l_con = losses::content_consistency(&mut tape, rec, m, &model.skeleton, w.pos, model.arch.position_scale)?;
    c.con = tape.value(l_con).item();
    terms.push((l_con, 1.0));

    if w.adv > 0.0 || w.reg > 0.0 {
        let fake = translate_on(model, &mut tape, zc, target.combined)?;
        let (scores, feat) = model.discriminate(&mut tape, fake)?;
        if w.adv > 0.0 {
            let l = losses::adversarial_g(&mut tape, scores, s.target_style)?;
            c.adv_g = tape.value(l).item();
            terms.push((l, w.adv));
        }
        if w.reg > 0.0 {
            let real: Vec<Var> = [s.target, s.target_alt]
                .iter()
                .map(|&i| {
                    let r = tape.constant(win(i).rotations.clone());
                    model.discriminate(&mut tape, r).map(|(_, f)| f)
                })
                .collect::<Result<_>>()?;
            let l = losses::feature_matching(&mut tape, feat, &real)?;
            c.reg = tape.value(l).item();
            terms.push((l, w.reg));
        }
    }

    let j_same = losses::joint_embedding(&mut tape, same.code3d, &same.codes2d)?;
    let j_target = losses::joint_embedding(&mut tape, target.code3d, &target.codes2d)?;
    let l_joint = tape.average(&[j_same, j_target]);
    c.joint = tape.value(l_joint).item();
    if w.joint > 0.0 {
        terms.push((l_joint, w.joint));
    }

    if w.trip > 0.0 {
        let pos = encode_views(model, &mut tape, win(s.target_alt), &s.cameras[2])?;
        let neg = encode_views(model, &mut tape, win(s.source_alt), &s.cameras[3])?;
        let l = losses::triplet(&mut tape, target.combined, pos.combined, neg.combined, w.margin)?;
        c.trip = tape.value(l).item();
        terms.push((l, w.trip));
    }

    let scaled: Vec<Var> = terms.iter().map(|&(v, k)| tape.scale(v, k)).collect();
    let mut total = scaled[0];
    for &v in &scaled[1..] {
        total = tape.add(total, v);
    }
    Ok((c, tape.backward(total).into_params()))
}

fn mean_grads(n_params: usize, parts: Vec<ParamGrads>) -> ParamGrads {
    let mut acc = ParamGrads::empty(n_params);
    let k = 1.0 / parts.len() as f64;
    for p in &parts {
        acc.accumulate(p, k);
    }
    acc
}

/// Optimizer state for both players.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub iteration: usize,
    adam_g: Adam,
    adam_d: Adam,
    d_mask: Vec<bool>,
    g_mask: Vec<bool>,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: &Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let d_mask = model.discriminator_mask();
        let g_mask = d_mask.iter().map(|d| !d).collect();
        Ok(Self {
            adam_g: Adam::new(&model.params, config.lr_g, config.beta1, config.beta2),
            adam_d: Adam::new(&model.params, config.lr_d, config.beta1, config.beta2),
            d_mask,
            g_mask,
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_ba7c),
            iteration: 0,
            config,
        })
    }

    /// Samples a batch and runs one discriminator then one generator update.
    pub fn step(&mut self, model: &mut Model, set: &TrainingSet) -> Result<MetricRow> {
        let batch = sample_batch(set, &self.config, &mut self.rng);
        self.step_on(model, set, &batch)
    }

    pub fn step_on(&mut self, model: &mut Model, set: &TrainingSet, batch: &[Sample]) -> Result<MetricRow> {
        let it = self.iteration;
        let f = self.config.lr_factor(it);
        self.adam_g.lr = self.config.lr_g * f;
        self.adam_d.lr = self.config.lr_d * f;
        let w = self.config.weights;
        let n_params = model.params.len();
        let mut c = LossComponents::default();

        if w.adv > 0.0 {
            let parts: Vec<(f64, ParamGrads)> = batch
                .par_iter()
                .map(|s| d_sample(model, &self.d_mask, set, s))
                .collect::<Result<_>>()?;
            c.adv_d = parts.iter().map(|p| p.0).sum::<f64>() / batch.len() as f64;
            if !c.adv_d.is_finite() {
                return Err(Error::Divergence {
                    component: "L_adv_d".into(),
                    iteration: it,
                });
            }
            let grads = mean_grads(n_params, parts.into_iter().map(|p| p.1).collect());
            self.adam_d.step(&mut model.params, &grads, &self.d_mask);
        }

        let parts: Vec<(LossComponents, ParamGrads)> = batch
            .par_iter()
            .map(|s| g_sample(model, &self.g_mask, set, s, &w))
            .collect::<Result<_>>()?;
        let k = 1.0 / batch.len() as f64;
        for (p, _) in &parts {
            c.con += k * p.con;
            c.adv_g += k * p.adv_g;
            c.reg += k * p.reg;
            c.joint += k * p.joint;
            c.trip += k * p.trip;
        }
        let total = losses::total(&c, &w, it)?;
        let grads = mean_grads(n_params, parts.into_iter().map(|p| p.1).collect());
        self.adam_g.step(&mut model.params, &grads, &self.g_mask);
        self.iteration += 1;
        Ok(MetricRow {
            iteration: it,
            losses: c,
            total,
        })
    }
}

/// Result of [`fit`].
#[derive(Clone, Debug)]
pub struct FitOutput {
    pub model: Model,
    pub log: Vec<MetricRow>,
    pub checkpoints: Vec<PathBuf>,
}

/// Runs the configured number of iterations. With `out_dir`, writes
/// `metrics.csv` and `checkpoint-NNNNNN` directories at the cadence and at
/// the end.
pub fn fit(mut model: Model, set: &TrainingSet, config: &TrainConfig, out_dir: Option<&Path>) -> Result<FitOutput> {
    let mut trainer = Trainer::new(&model, config.clone())?;
    let mut log = Vec::with_capacity(config.iterations);
    let mut checkpoints = Vec::new();
    let mut writer = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("metrics.csv");
            let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
            w.write_record(METRIC_HEADER).map_err(|e| csv_error(&path, e))?;
            Some((w, path))
        }
        None => None,
    };
    for i in 0..config.iterations {
        let row = trainer.step(&mut model, set)?;
        if let Some((w, path)) = writer.as_mut() {
            w.write_record(row.record()).map_err(|e| csv_error(path, e))?;
        }
        let done = i + 1;
        if done % 100 == 0 || done == config.iterations {
            info!(
                "iteration {done}/{}: total {:.4} con {:.4} adv_d {:.4} trip {:.4}",
                config.iterations, row.total, row.losses.con, row.losses.adv_d, row.losses.trip
            );
        }
        log.push(row);
        let due = config.checkpoint_every > 0 && done % config.checkpoint_every == 0;
        if let (Some(dir), true) = (out_dir, due || done == config.iterations) {
            let ck = dir.join(format!("checkpoint-{done:06}"));
            save_checkpoint(&model, &ck, done)?;
            if let Some((w, path)) = writer.as_mut() {
                w.flush().map_err(|e| Error::io(path.clone(), e))?;
            }
            checkpoints.push(ck);
        }
    }
    if let Some((mut w, path)) = writer {
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(FitOutput {
        model,
        log,
        checkpoints,
    })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Writes a metric log as CSV text.
pub fn metrics_csv(log: &[MetricRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRIC_HEADER).unwrap();
    for r in log {
        w.write_record(r.record()).unwrap();
    }
    let mut buf = w.into_inner().unwrap();
    buf.flush().unwrap();
    String::from_utf8(buf).unwrap()
}

/// Rest-pose pelvis-to-torso-top length, the unit of network positions.
pub fn torso_length(skel: &SkeletonTopology, pelvis: usize, torso_top: usize) -> Result<f64> {
    let rest = skel.rest_positions();
    let l = quat::norm(quat::sub(rest[torso_top], rest[pelvis]));
    if !(l > 1e-9) {
        return Err(Error::Degenerate("rest torso length is zero".into()));
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::ArchConfig;
    use crate::toy::{toy_clip, toy_landmarks, toy_skeleton, toy_styles, ToyContent};

    fn tiny_setup(per_style: usize, styles: usize) -> (Model, TrainingSet) {
        let skel = toy_skeleton();
        let lm = toy_landmarks();
        let mut arch = ArchConfig::tiny(8, styles);
        arch.position_scale = 1.0 / torso_length(&skel, lm.pelvis, lm.torso_top).unwrap();
        let names: Vec<String> = toy_styles().iter().take(styles).map(|s| s.name.clone()).collect();
        let model = Model::new(arch, skel, lm, names, 3).unwrap();
        let mut windows = Vec::new();
        for (si, st) in toy_styles().iter().take(styles).enumerate() {
            for k in 0..per_style {
                let c = ToyContent {
                    cadence: 1.0 + 0.1 * k as f64,
                    phase: k as f64,
                    heading: 0.3 * k as f64,
                };
                windows.push(prepare_window(&model, &toy_clip(st, &c, 16, 30.0), si).unwrap());
            }
        }
        let set = TrainingSet::from_windows(model.styles.clone(), windows).unwrap();
        (model, set)
    }

    #[test]
    fn batch_labels() {
        let (_, set) = tiny_setup(3, 2);
        let cfg = TrainConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for s in sample_batch(&set, &cfg, &mut rng) {
            let w = |i: usize| set.windows[i].style;
            assert_eq!(w(s.content), s.source_style);
            assert_eq!(w(s.same), s.source_style);
            assert_eq!(w(s.target), s.target_style);
            assert_eq!(w(s.target_alt), s.target_style);
            assert_eq!(w(s.source_alt), s.source_style);
            assert_ne!(s.source_style, s.target_style);
            assert_ne!(s.target, s.target_alt);
            assert!(s.cameras.iter().all(|c| c.len() == 5));
        }
        let a = sample_batch(&set, &cfg, &mut ChaCha8Rng::seed_from_u64(2));
        let b = sample_batch(&set, &cfg, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(a, b);
    }

    #[test]
    fn lr_factor_schedule() {
        let mut cfg = TrainConfig { iterations: 100, ..TrainConfig::default() };
        assert!((0..100).all(|it| cfg.lr_factor(it) == 1.0));
        cfg.lr_decay_from = 0.6;
        assert_eq!(cfg.lr_factor(59), 1.0);
        assert_eq!(cfg.lr_factor(60), 1.0);
        assert!((cfg.lr_factor(80) - 0.5).abs() < 1e-12);
        assert!((cfg.lr_factor(99) - 1.0 / 40.0).abs() < 1e-12);
        cfg.lr_decay_from = 1.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn too_few_windows_is_a_config_error() {
        let (model, set) = tiny_setup(2, 2);
        let mut ws = set.windows.clone();
        ws.truncate(3);
        assert!(matches!(TrainingSet::from_windows(model.styles.clone(), ws), Err(Error::Config(_))));
    }

    #[test]
    fn no_adv_leaves_discriminator_untouched() {
        let (mut model, set) = tiny_setup(2, 2);
        let before = model.params.clone();
        let mut cfg = TrainConfig {
            batch_size: 2,
            ..TrainConfig::default()
        };
        cfg.weights.adv = 0.0;
        cfg.weights.reg = 0.0;
        let mut tr = Trainer::new(&model, cfg).unwrap();
        let row = tr.step(&mut model, &set).unwrap();
        assert_eq!(row.losses.adv_d, 0.0);
        let mask = model.discriminator_mask();
        for ((id, _, t), d) in model.params.iter().zip(&mask) {
            if *d {
                assert_eq!(t, before.get(id));
            }
        }
    }

    #[test]
    fn d_step_touches_only_discriminator() {
        let (mut model, set) = tiny_setup(2, 2);
        let before = model.params.clone();
        let cfg = TrainConfig {
            batch_size: 2,
            ..TrainConfig::default()
        };
        let mut tr = Trainer::new(&model, cfg.clone()).unwrap();
        let batch = sample_batch(&set, &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        let parts: Vec<_> = batch.iter().map(|s| d_sample(&model, &tr.d_mask, &set, s).unwrap().1).collect();
        let grads = mean_grads(model.params.len(), parts);
        for (id, name, _) in model.params.iter() {
            assert_eq!(grads.get(id).is_some(), name.starts_with("disc."), "{name}");
        }
        tr.adam_d.step(&mut model.params, &grads, &tr.d_mask);
        for (id, name, t) in model.params.iter() {
            if !name.starts_with("disc.") {
                assert_eq!(t, before.get(id));
            }
        }
    }

    #[test]
    fn reconstruction_descends() {
        let (mut model, set) = tiny_setup(2, 2);
        let mut cfg = TrainConfig {
            batch_size: 1,
            lr_g: 1e-3,
            p_self: 1.0,
            ..TrainConfig::default()
        };
        cfg.weights = LossWeights {
            adv: 0.0,
            reg: 0.0,
            joint: 0.0,
            trip: 0.0,
            ..LossWeights::default()
        };
        let mut tr = Trainer::new(&model, cfg.clone()).unwrap();
        let batch = sample_batch(&set, &cfg, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(batch[0].same, batch[0].content);
        let first = tr.step_on(&mut model, &set, &batch).unwrap();
        let second = tr.step_on(&mut model, &set, &batch).unwrap();
        assert!(second.losses.con < first.losses.con, "{} !< {}", second.losses.con, first.losses.con);
    }

    #[test]
    fn fit_is_reproducible_and_checkpoints() {
        let (model, set) = tiny_setup(2, 2);
        let cfg = TrainConfig {
            iterations: 3,
            batch_size: 2,
            checkpoint_every: 1000,
            ..TrainConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let a = fit(model.clone(), &set, &cfg, Some(dir.path())).unwrap();
        let b = fit(model, &set, &cfg, None).unwrap();
        assert_eq!(metrics_csv(&a.log), metrics_csv(&b.log));
        assert_eq!(a.checkpoints.len(), 1);
        let text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(text, metrics_csv(&a.log));
        assert!(text.starts_with("iteration,L_con,L_adv_g,L_adv_d,L_reg,L_joint,L_trip,total\n"));
        let (back, _) = crate::nets::load_checkpoint(&a.checkpoints[0]).unwrap();
        assert_eq!(back.params, a.model.params);
    }
}
