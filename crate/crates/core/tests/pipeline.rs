use msk_core::analysis::{export_codes, CodeKind, CodeTable, LabeledClip};
use msk_core::bvh::{read_bvh, save_bvh};
use msk_core::dataset::{load_clips, DatasetManifest, WindowIndex};
use msk_core::inference::{transfer, TransferOptions};
use msk_core::kinematics::{forward_kinematics, root_normalize};
use msk_core::nets::{load_checkpoint, ArchConfig, Model, StyleInput};
use msk_core::projection::BodyLandmarks;
use msk_core::toy::{write_toy_dataset, ToyConfig};
use msk_core::training::{fit, torso_length, TrainConfig, TrainingSet};

#[test]
fn files_to_checkpoint_to_transfer() {
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = write_toy_dataset(
        &dir.path().join("toy"),
        &ToyConfig {
            clips_per_style: 2,
            ..ToyConfig::default()
        },
    )
    .unwrap();
    let manifest = DatasetManifest::load(&manifest_path).unwrap();
    let (skel, clips) = load_clips(&manifest).unwrap();
    assert_eq!(clips.len(), 8);
    let lengths: Vec<usize> = clips.iter().map(|c| c.motion.frames()).collect();
    let index = WindowIndex::build(&manifest, &lengths, 32, 0.25, 0).unwrap();
    let index_path = dir.path().join("index.json");
    index.save(&index_path).unwrap();
    let index = WindowIndex::load(&index_path).unwrap();
    assert!(!index.train.is_empty() && !index.test.is_empty());

    let landmarks = BodyLandmarks::guess(&skel).unwrap();
    let styles = manifest.styles();
    let mut arch = ArchConfig::tiny(skel.num_joints(), styles.len());
    arch.position_scale = 1.0 / torso_length(&skel, landmarks.pelvis, landmarks.torso_top).unwrap();
    let model = Model::new(arch, skel.clone(), landmarks, styles, 0).unwrap();
    let motions: Vec<_> = clips.iter().map(|c| c.motion.clone()).collect();
    let set = TrainingSet::new(&model, &motions, &index.train).unwrap();
    let cfg = TrainConfig {
        iterations: 4,
        batch_size: 2,
        checkpoint_every: 2,
        ..TrainConfig::default()
    };
    let run = dir.path().join("run");
    let out = fit(model, &set, &cfg, Some(&run)).unwrap();
    assert_eq!(out.checkpoints.len(), 2);
    let (loaded, meta) = load_checkpoint(out.checkpoints.last().unwrap()).unwrap();
    assert_eq!(meta.iteration, 4);

    let content = &motions[0];
    let (norm, _) = root_normalize(&motions[5]);
    let style = StyleInput::Motion3D(forward_kinematics(&skel, &norm, false).unwrap());
    let result = transfer(&loaded, content, &style, &TransferOptions::default()).unwrap();
    assert!(result.report.warp_factor > 0.0);
    let path = dir.path().join("out.bvh");
    save_bvh(&path, &skel, &result.motion).unwrap();
    let (skel2, back) = read_bvh(&path).unwrap();
    assert_eq!(skel2.names, skel.names);
    assert_eq!(back.frames(), result.motion.frames());

    let labeled: Vec<LabeledClip> = index
        .test
        .iter()
        .map(|w| LabeledClip {
            id: format!("{}@{}", w.source, w.start),
            label: index.entries[w.source].style.clone(),
            motion: motions[w.source].slice(w.start, w.length),
        })
        .collect();
    for kind in [CodeKind::Content, CodeKind::Style, CodeKind::Adain] {
        let table = export_codes(&loaded, &labeled, kind).unwrap();
        let csv = dir.path().join(format!("{}.csv", kind.as_str()));
        table.save_csv(&csv).unwrap();
        let back = CodeTable::load_csv(&csv).unwrap();
        assert_eq!(back.kind, kind);
        assert_eq!(back.len(), labeled.len());
        assert_eq!(back.rows[0].vector, table.rows[0].vector);
    }
}
