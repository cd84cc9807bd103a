use dla_lab::checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_as, save_checkpoint};
use dla_lab::dataset::{load_dataset, load_manifest, save_dataset, IMAGE_MAGIC};
use dla_lab::LabError;
use dla_lab_core::data::{gen_synthetic, DatasetRecord};
use dla_lab_core::detector::{preset, DetectorParams};
use dla_lab_core::params::ParamSet;

fn f32_rounded(r: &DatasetRecord) -> Vec<f64> {
    r.image.data().iter().map(|&v| v as f32 as f64).collect()
}

#[test]
fn dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_synthetic(8, (32, 32), 3, 7).unwrap();
    save_dataset(dir.path(), &data, None).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.len(), data.len());
    for (a, b) in data.iter().zip(&back) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.lines, b.lines);
        assert_eq!(f32_rounded(a), b.image.data());
    }
}

#[test]
fn empty_dataset_has_valid_index() {
    let dir = tempfile::tempdir().unwrap();
    save_dataset(dir.path(), &[], None).unwrap();
    assert!(load_manifest(dir.path()).unwrap().records.is_empty());
    assert!(load_dataset(dir.path()).unwrap().is_empty());
}

#[test]
fn corrupted_magic_names_the_record() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_synthetic(3, (16, 16), 2, 1).unwrap();
    save_dataset(dir.path(), &data, None).unwrap();
    let path = dir.path().join(format!("{}.lnimg", data[1].id));
    let mut bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..6], IMAGE_MAGIC);
    bytes[2] = b'X';
    std::fs::write(&path, bytes).unwrap();
    match load_dataset(dir.path()) {
        Err(LabError::BadMagic { record }) => assert_eq!(record, data[1].id),
        other => panic!("expected bad magic, got {other:?}"),
    }
}

#[test]
fn truncated_image_and_version_mismatch_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_synthetic(1, (16, 16), 2, 1).unwrap();
    save_dataset(dir.path(), &data, None).unwrap();
    let path = dir.path().join(format!("{}.lnimg", data[0].id));
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(LabError::Truncated { .. })));

    std::fs::write(&path, &bytes).unwrap();
    let mpath = dir.path().join("manifest.json");
    let text = std::fs::read_to_string(&mpath).unwrap().replace("\"version\": 1", "\"version\": 9");
    std::fs::write(&mpath, text).unwrap();
    assert!(matches!(
        load_dataset(dir.path()),
        Err(LabError::VersionMismatch { expected: 1, found: 9, .. })
    ));
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = preset("linea-n-toy").unwrap();
    let params = DetectorParams::init(&cfg, 3).unwrap();
    let a = dir.path().join("a.dlackpt");
    let b = dir.path().join("b.dlackpt");
    save_checkpoint(&a, &cfg, &params).unwrap();
    let (cfg2, loaded) = load_checkpoint(&a).unwrap();
    assert_eq!(cfg2, cfg);
    let want: Vec<f64> = params.flatten().iter().map(|&v| v as f32 as f64).collect();
    assert_eq!(loaded.flatten(), want);
    save_checkpoint(&b, &cfg2, &loaded).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn checkpoint_offsets_cover_blob() {
    let cfg = preset("linea-s-toy").unwrap();
    let params = DetectorParams::zeros(&cfg).unwrap();
    let bytes = encode_checkpoint(&cfg, &params);
    let (header, values) = decode_checkpoint(&bytes, "mem").unwrap();
    let mut next = 0;
    for p in &header.params {
        assert_eq!(p.offset, next);
        next += p.shape.iter().product::<usize>();
    }
    assert_eq!(next, header.blob_len);
    assert_eq!(values.len(), params.num_values());
}

#[test]
fn checkpoint_into_wrong_preset_names_first_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let n = preset("linea-n-toy").unwrap();
    let s = preset("linea-s-toy").unwrap();
    let path = dir.path().join("n.dlackpt");
    save_checkpoint(&path, &n, &DetectorParams::zeros(&n).unwrap()).unwrap();
    let err = load_checkpoint_as(&path, &s).unwrap_err();
    let first = DetectorParams::zeros(&n)
        .unwrap()
        .inventory()
        .into_iter()
        .zip(DetectorParams::zeros(&s).unwrap().inventory())
        .find(|(a, b)| a != b)
        .unwrap()
        .1
         .0;
    match err {
        LabError::ParamMismatch { name, .. } => assert_eq!(name, first),
        other => panic!("expected parameter mismatch, got {other:?}"),
    }
}

#[test]
fn truncated_checkpoint_is_distinct_error() {
    let cfg = preset("linea-n-toy").unwrap();
    let bytes = encode_checkpoint(&cfg, &DetectorParams::zeros(&cfg).unwrap());
    assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 1], "x"), Err(LabError::Truncated { .. })));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_checkpoint(&bad, "x"), Err(LabError::BadMagic { .. })));
}
