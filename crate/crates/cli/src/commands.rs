use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use log::info;
use msk_core::analysis::{self, CodeKind, CodeTable, LabeledClip};
use msk_core::bvh::{read_bvh, save_bvh};
use msk_core::dataset::{load_clips, ClipWindow, DatasetManifest, WindowIndex};
use msk_core::inference::{interpolate_styles, interpolation_weights, transfer, TransferReport};
use msk_core::keypoints::{load_keypoints2d, KeypointOptions};
use msk_core::kinematics::{forward_kinematics, root_normalize};
use msk_core::nets::{load_checkpoint, ArchConfig, Model, StyleInput};
use msk_core::projection::BodyLandmarks;
use msk_core::spectral::{spectral_transfer_positions, spectral_transfer_rotations};
use msk_core::toy::{write_toy_dataset, ToyConfig};
use msk_core::training::{fit, torso_length, TrainingSet};
use msk_core::{RotationalMotion, SkeletonTopology};

use crate::config::RunConfig;
use crate::{Cli, Command, Kind, Split, SpectralMode};

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::resolve(cli.config.as_deref(), None)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.train.seed = cfg.seed;
    match cli.command {
        Command::ToyData(a) => toy_data(&cfg, a),
        Command::DatasetPrepare(a) => dataset_prepare(&cfg, a),
        Command::Train(a) => train(cfg, a),
        Command::Transfer(a) => cmd_transfer(&cfg, a),
        Command::Interpolate(a) => interpolate(&cfg, a),
        Command::Embed(a) => embed(a),
        Command::EvalCluster(a) => eval_cluster(&cfg, a),
        Command::BaselineSpectral(a) => baseline_spectral(a),
    }
}

fn toy_data(cfg: &RunConfig, a: crate::ToyDataArgs) -> Result<()> {
    let d = ToyConfig::default();
    let toy = ToyConfig {
        clips_per_style: a.clips_per_style.unwrap_or(d.clips_per_style),
        frames: a.frames.unwrap_or(d.frames),
        jitter: a.jitter.unwrap_or(d.jitter),
        seed: cfg.seed,
        ..d
    };
    ensure!(toy.clips_per_style > 0 && toy.frames >= 2, "need at least one clip per style and two frames");
    let manifest = write_toy_dataset(&a.out, &toy)?;
    println!("wrote {}", manifest.display());
    Ok(())
}

fn dataset_prepare(cfg: &RunConfig, a: crate::PrepareArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&a.manifest).with_context(|| format!("loading manifest {}", a.manifest.display()))?;
    let (_, clips) = load_clips(&manifest)?;
    let lengths: Vec<usize> = clips.iter().map(|c| c.motion.frames()).collect();
    let window = a.window.unwrap_or(cfg.data.window);
    let fraction = a.test_fraction.unwrap_or(cfg.data.test_fraction);
    ensure!((0.0..1.0).contains(&fraction), "test fraction must lie in [0, 1)");
    let index = WindowIndex::build(&manifest, &lengths, window, fraction, cfg.seed)?;
    ensure!(!index.train.is_empty(), "no clip is long enough for {window}-frame windows");
    index.save(&a.out)?;
    println!(
        "{} windows ({} train, {} test) of {window} frames from {} clips",
        index.train.len() + index.test.len(),
        index.train.len(),
        index.test.len(),
        clips.len()
    );
    Ok(())
}

/// Model for a skeleton and style set, with position scale in torso units.
fn new_model(cfg: &RunConfig, skel: SkeletonTopology, styles: Vec<String>) -> Result<Model> {
    let landmarks = BodyLandmarks::guess(&skel).context("locating pelvis, hips and torso in the skeleton")?;
    let mut arch = cfg.arch.apply(ArchConfig::new(skel.num_joints(), styles.len()));
    arch.position_scale = 1.0 / torso_length(&skel, landmarks.pelvis, landmarks.torso_top)?;
    Ok(Model::new(arch, skel, landmarks, styles, cfg.seed)?)
}

fn indexed_clips(index: &WindowIndex) -> Result<(SkeletonTopology, Vec<RotationalMotion>)> {
    let (skel, clips) = load_clips(&index.manifest())?;
    Ok((skel, clips.into_iter().map(|c| c.motion).collect()))
}

fn train(mut cfg: RunConfig, a: crate::TrainArgs) -> Result<()> {
    if let Some(v) = a.iterations {
        cfg.train.iterations = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.train.lr_g = v;
        cfg.train.lr_d = v;
    }
    if let Some(v) = a.checkpoint_every {
        cfg.train.checkpoint_every = v;
    }
    if a.no_adv {
        cfg.train.weights.adv = 0.0;
        cfg.train.weights.reg = 0.0;
    }
    if a.no_triplet {
        cfg.train.weights.trip = 0.0;
    }
    let index = WindowIndex::load(&a.index).with_context(|| format!("loading window index {}", a.index.display()))?;
    let (skel, clips) = indexed_clips(&index)?;
    let model = new_model(&cfg, skel, index.manifest().styles())?;
    let set = TrainingSet::new(&model, &clips, &index.train)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    std::fs::write(a.out.join("config.toml"), cfg.to_toml()?)?;
    info!("training on {} windows of {} styles", set.windows.len(), set.styles.len());
    let out = fit(model, &set, &cfg.train, Some(&a.out))?;
    let last = out.log.last().map_or(f64::NAN, |r| r.total);
    println!("{} iterations, final total loss {last:.6}", out.log.len());
    for c in &out.checkpoints {
        println!("checkpoint {}", c.display());
    }
    Ok(())
}

/// A checkpoint directory, or the newest `checkpoint-*` inside a training
/// directory.
fn checkpoint_dir(path: &Path) -> Result<PathBuf> {
    if path.join("meta.json").is_file() {
        return Ok(path.to_path_buf());
    }
    let mut found: Vec<PathBuf> = std::fs::read_dir(path)
        .with_context(|| format!("reading {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("meta.json").is_file())
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("checkpoint-")))
        .collect();
    found.sort();
    found.pop().with_context(|| format!("{} holds no checkpoint", path.display()))
}

fn load_model(path: &Path) -> Result<Model> {
    let dir = checkpoint_dir(path)?;
    let (model, meta) = load_checkpoint(&dir).with_context(|| format!("loading checkpoint {}", dir.display()))?;
    info!("loaded {} (iteration {})", dir.display(), meta.iteration);
    Ok(model)
}

fn read_clip(model: &Model, path: &Path) -> Result<RotationalMotion> {
    let (skel, motion) = read_bvh(path)?;
    if skel.names != model.skeleton.names || skel.parents != model.skeleton.parents {
        bail!("{}: skeleton does not match the checkpoint's", path.display());
    }
    Ok(motion)
}

fn style_3d(model: &Model, path: &Path) -> Result<StyleInput> {
    let clip = read_clip(model, path)?;
    let (norm, _) = root_normalize(&clip);
    Ok(StyleInput::Motion3D(forward_kinematics(&model.skeleton, &norm, false)?))
}

fn style_2d(model: &Model, path: &Path) -> Result<StyleInput> {
    let opts = KeypointOptions::new(model.landmarks.pelvis, model.landmarks.torso_top);
    let m = load_keypoints2d(path, &model.skeleton, &opts).with_context(|| format!("reading {}", path.display()))?;
    Ok(StyleInput::Keypoints2D(m))
}

fn print_report(r: &TransferReport) {
    println!("V_con {:.6}", r.v_con);
    match r.v_sty {
        Some(v) => println!("V_sty {v:.6}"),
        None => println!("V_sty n/a"),
    }
    println!("warp factor {:.6}", r.warp_factor);
    println!("contact frames left {} right {}", r.contact_frames[0], r.contact_frames[1]);
    if r.unreachable_frames > 0 {
        println!("unreachable contact frames {}", r.unreachable_frames);
    }
}

fn cmd_transfer(cfg: &RunConfig, a: crate::TransferArgs) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let content = read_clip(&model, &a.content)?;
    let style = match (&a.style, &a.style_2d) {
        (Some(p), _) => style_3d(&model, p)?,
        (None, Some(p)) => style_2d(&model, p)?,
        (None, None) => bail!("one of --style or --style-2d is required"),
    };
    let mut opts = cfg.transfer.options(&model.skeleton);
    opts.warp &= !a.no_warp;
    opts.ik &= !a.no_ik;
    let out = transfer(&model, &content, &style, &opts)?;
    save_bvh(&a.out, &model.skeleton, &out.motion)?;
    print_report(&out.report);
    println!("wrote {} ({} frames)", a.out.display(), out.motion.frames());
    Ok(())
}

fn interpolate(cfg: &RunConfig, a: crate::InterpolateArgs) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let content = read_clip(&model, &a.content)?;
    let (sa, sb) = (style_3d(&model, &a.style_a)?, style_3d(&model, &a.style_b)?);
    let weights = match (a.weight, a.steps) {
        (Some(w), _) => vec![w],
        (None, Some(k)) => interpolation_weights(k)?,
        (None, None) => bail!("one of --weight or --steps is required"),
    };
    let mut opts = cfg.transfer.options(&model.skeleton);
    opts.warp &= !a.no_warp;
    opts.ik &= !a.no_ik;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for (i, w) in weights.iter().enumerate() {
        let out = interpolate_styles(&model, &content, &sa, &sb, *w, &opts)?;
        let path = a.out.join(format!("interp_{i:03}.bvh"));
        save_bvh(&path, &model.skeleton, &out.motion)?;
        println!("w {w:.4} -> {} ({} frames, warp {:.4})", path.display(), out.motion.frames(), out.report.warp_factor);
    }
    Ok(())
}

fn window_clips_of(index: &WindowIndex, split: Split) -> Result<Vec<LabeledClip>> {
    let (_, clips) = indexed_clips(index)?;
    let windows: Vec<&ClipWindow> = match split {
        Split::Train => index.train.iter().collect(),
        Split::Test => index.test.iter().collect(),
        Split::All => index.train.iter().chain(&index.test).collect(),
    };
    windows
        .into_iter()
        .map(|w| {
            let clip = clips.get(w.source).with_context(|| format!("window refers to missing clip {}", w.source))?;
            let stem = index.entries[w.source].path.file_stem().and_then(|s| s.to_str()).unwrap_or("clip");
            Ok(LabeledClip {
                id: format!("{stem}@{}", w.start),
                label: index.entries[w.source].style.clone(),
                motion: clip.slice(w.start, w.length),
            })
        })
        .collect()
}

fn embed(a: crate::EmbedArgs) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let index = WindowIndex::load(&a.index).with_context(|| format!("loading window index {}", a.index.display()))?;
    let clips = window_clips_of(&index, a.split)?;
    ensure!(!clips.is_empty(), "the selected split holds no windows");
    let kind = match a.kind {
        Kind::Content => CodeKind::Content,
        Kind::Style => CodeKind::Style,
        Kind::Adain => CodeKind::Adain,
    };
    let table = analysis::export_codes(&model, &clips, kind)?;
    table.save_csv(&a.out)?;
    println!("wrote {} rows of {} {} values to {}", table.len(), table.dim(), kind.as_str(), a.out.display());
    Ok(())
}

fn eval_cluster(cfg: &RunConfig, a: crate::EvalClusterArgs) -> Result<()> {
    let table = CodeTable::load_csv(&a.codes)?;
    let m = analysis::cluster_metrics(&table, cfg.seed)?;
    println!("rows {} dim {} kind {}", table.len(), table.dim(), table.kind.as_str());
    println!("silhouette {:.6}", m.silhouette);
    println!("probe accuracy {:.6} (chance {:.6})", m.probe_accuracy, m.chance);
    match analysis::pca2(&table) {
        Ok(p) => {
            println!("pca explained {:.6} {:.6}", p.explained[0], p.explained[1]);
            if let Some(path) = &a.pca_out {
                let mut text = String::from("id,label,pc1,pc2\n");
                for (r, c) in table.rows.iter().zip(&p.coords) {
                    text += &format!("{},{},{:e},{:e}\n", r.id, r.label, c[0], c[1]);
                }
                std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Err(e) => {
            if a.pca_out.is_some() {
                return Err(e.into());
            }
            println!("pca unavailable: {e}");
        }
    }
    Ok(())
}

fn baseline_spectral(a: crate::SpectralArgs) -> Result<()> {
    let read = |p: &Path| read_bvh(p).with_context(|| format!("reading {}", p.display()));
    let (skel, mut x) = read(&a.content)?;
    let (s1, mut ys) = read(&a.style_source)?;
    let (s2, mut yt) = read(&a.style_target)?;
    ensure!(
        skel.names == s1.names && skel.names == s2.names,
        "all three clips must share one skeleton"
    );
    if a.crop {
        let n = x.frames().min(ys.frames()).min(yt.frames());
        x = x.slice(0, n);
        ys = ys.slice(0, n);
        yt = yt.slice(0, n);
    }
    match a.mode {
        SpectralMode::Rotations => {
            let out = spectral_transfer_rotations(&x, &ys, &yt)?;
            save_bvh(&a.out, &skel, &out)?;
        }
        SpectralMode::Positions => {
            let fk = |m: &RotationalMotion| forward_kinematics(&skel, m, true);
            let out = spectral_transfer_positions(&fk(&x)?, &fk(&ys)?, &fk(&yt)?)?;
            let mut text = String::from("frame,joint,x,y,z\n");
            for (t, f) in out.positions.iter().enumerate() {
                for (j, p) in f.iter().enumerate() {
                    text += &format!("{t},{},{:e},{:e},{:e}\n", skel.names[j], p[0], p[1], p[2]);
                }
            }
            std::fs::write(&a.out, text).with_context(|| format!("writing {}", a.out.display()))?;
        }
    }
    println!("wrote {} ({} frames)", a.out.display(), x.frames());
    Ok(())
}
