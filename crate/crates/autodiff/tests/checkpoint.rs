use tensorgrad::checkpoint::{load, save};
use tensorgrad::{ParamStore, Tensor};

fn store() -> ParamStore<f32> {
    let mut s = ParamStore::new();
    s.insert("enc.w", Tensor::from_fn([3, 4], |i| i as f32 * 0.25 - 1.0))
        .unwrap();
    s.insert("enc.b", Tensor::from_fn([4], |i| (i as f32).sin()))
        .unwrap();
    s.insert("lambda", Tensor::scalar(0.125f32)).unwrap();
    s
}

#[test]
fn round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("model.manifest");
    let meta = vec![("stages".to_string(), "3".to_string())];
    save(&store(), &manifest, "model.bin", &meta).unwrap();
    let loaded = load::<f32>(&manifest).unwrap();
    assert_eq!(loaded.params, store());
    assert_eq!(loaded.meta, meta);

    let text = std::fs::read_to_string(&manifest).unwrap();
    assert!(text.contains("param enc.w 3x4 f32 0"));
    assert!(text.contains("param enc.b 4 f32 48"));
    let blob = std::fs::read(dir.path().join("model.bin")).unwrap();
    assert_eq!(blob.len(), (12 + 4 + 1) * 4);
    assert_eq!(&blob[..4], &(-1.0f32).to_le_bytes());
}

#[test]
fn truncated_blob_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.manifest");
    save(&store(), &manifest, "m.bin", &[]).unwrap();
    let blob = dir.path().join("m.bin");
    let bytes = std::fs::read(&blob).unwrap();
    std::fs::write(&blob, &bytes[..bytes.len() - 3]).unwrap();
    let err = load::<f32>(&manifest).err().expect("must fail");
    assert!(err.to_string().contains("truncated"), "{err}");
}

#[test]
fn f32_checkpoint_loads_as_f64() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.manifest");
    save(&store(), &manifest, "m.bin", &[]).unwrap();
    let loaded = load::<f64>(&manifest).unwrap();
    assert_eq!(loaded.params.get("lambda").unwrap().data(), &[0.125]);
}
