use sceneformer_core::codec::ModelKind;
use sceneformer_core::model::checkpoint::{from_bytes, load_checkpoint, save_checkpoint, to_bytes, VERSION};
use sceneformer_core::model::train::{floor_condition, prepare_example, train_model, TrainConfig, TrainingExample};
use sceneformer_core::model::{Conditioning, PropertyModel, TransformerConfig};
use sceneformer_core::scene::{make_synthetic_dataset, SyntheticConfig};
use sceneformer_core::Error;

fn trained(kind: ModelKind) -> (PropertyModel, sceneformer_core::scene::Dataset) {
    let d = make_synthetic_dataset(&SyntheticConfig::default(), 3, 1).unwrap();
    let cfg = TransformerConfig::desk(kind, d.table.len(), Conditioning::Shape);
    let mut m = PropertyModel::new(cfg, 2).unwrap();
    let ex: Vec<_> = d.scenes.iter().cloned().map(TrainingExample::new).collect();
    let tc = TrainConfig { steps: 3, batch_size: 2, ..Default::default() };
    train_model(&mut m, &ex, &d.table, &tc, |_| {}).unwrap();
    (m, d)
}

#[test]
fn round_trip_reproduces_forward_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    for kind in ModelKind::ALL {
        let (m, d) = trained(kind);
        let path = dir.path().join(format!("{}.ckpt", kind.name()));
        save_checkpoint(&path, &m, true).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.config, m.config);
        for (a, b) in m.params.iter().zip(back.params.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
            assert_eq!(a.adam_m, b.adam_m);
            assert_eq!(a.adam_v, b.adam_v);
            assert_eq!(a.step_count, b.step_count);
        }
        let cond = floor_condition(&d.scenes[0], 64).unwrap();
        let (input, _) = prepare_example(&m, &d.table, &d.scenes[0], None).unwrap();
        let x = m.logits(std::slice::from_ref(&input), &[&cond]).unwrap();
        let y = back.logits(&[input], &[&cond]).unwrap();
        let bits = |t: &sceneformer_core::numerics::Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&x), bits(&y));
    }
}

#[test]
fn optimizer_state_is_optional() {
    let (m, _) = trained(ModelKind::Category);
    let slim = to_bytes(&m, false).unwrap();
    let full = to_bytes(&m, true).unwrap();
    assert!(slim.len() < full.len());
    let back = from_bytes(&slim).unwrap();
    assert!(back.params.iter().all(|p| p.step_count == 0));
    assert_eq!(back.params.iter().map(|p| p.value.clone()).collect::<Vec<_>>(), m.params.iter().map(|p| p.value.clone()).collect::<Vec<_>>());
}

#[test]
fn truncated_file_rejected() {
    let (m, _) = trained(ModelKind::Orientation);
    let bytes = to_bytes(&m, true).unwrap();
    for cut in [0, 3, 11, 100, bytes.len() / 2, bytes.len() - 1] {
        assert!(from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
    }
}

#[test]
fn flipped_bit_fails_checksum() {
    let (m, _) = trained(ModelKind::Location);
    let mut bytes = to_bytes(&m, false).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    assert!(matches!(from_bytes(&bytes), Err(Error::Checksum { .. })));
}

#[test]
fn bumped_version_rejected() {
    let (m, _) = trained(ModelKind::Dimension);
    let mut bytes = to_bytes(&m, false).unwrap();
    bytes[4..8].copy_from_slice(&(VERSION + 1).to_le_bytes());
    match from_bytes(&bytes) {
        Err(Error::Version { found, expected }) => assert_eq!((found, expected), (VERSION + 1, VERSION)),
        other => panic!("expected a version error, got {other:?}"),
    }
}

#[test]
fn wrong_magic_rejected() {
    let (m, _) = trained(ModelKind::Category);
    let mut bytes = to_bytes(&m, false).unwrap();
    bytes[0] = b'X';
    assert!(matches!(from_bytes(&bytes), Err(Error::Corrupt(_))));
}
