use cassi_unfold::cassi::{forward_measure, generate_mask};
use cassi_unfold::io::{write_pgm, Container, CsvTable};
use cassi_unfold::{DispersionSpec, Error, HsiCube, NoiseSpec, Plane};
use proptest::prelude::*;
use tensorgrad::DType;

fn cube() -> HsiCube {
    HsiCube::new(3, 4, 2, (0..24).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap()
}

#[test]
fn cube_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.hsic");
    let c = cube();
    Container::from_cube(&c)
        .with_config(Some("seed = 3\n".into()))
        .save(&path)
        .unwrap();
    let back = Container::load(&path).unwrap();
    assert_eq!(back.config.as_deref(), Some("seed = 3\n"));
    assert_eq!(back.kind(), Some("cube"));
    assert_eq!(back.into_cube().unwrap(), c);
}

#[test]
fn single_precision_payload_rounds_values() {
    let c = cube();
    let mut cont = Container::from_cube(&c);
    cont.dtype = DType::F32;
    let back = Container::decode(&cont.encode()).unwrap();
    assert_eq!(back.dtype, DType::F32);
    for (a, b) in back.data.iter().zip(&c.data) {
        assert_eq!(*a, *b as f32 as f64);
    }
}

#[test]
fn measurement_and_mask_round_trip() {
    let mask = generate_mask(5, 6, 0.5, 2).unwrap();
    let spec = DispersionSpec::new(2).unwrap();
    let scene = HsiCube::new(5, 6, 3, vec![0.25; 90]).unwrap();
    let y = forward_measure(&scene, &mask, spec, NoiseSpec::None).unwrap();
    let y2 = Container::decode(&Container::from_measurement(&y).encode())
        .unwrap()
        .into_measurement()
        .unwrap();
    assert_eq!(y2, y);
    let m2 = Container::decode(&Container::from_mask(&mask).encode())
        .unwrap()
        .into_mask()
        .unwrap();
    assert_eq!(m2, mask);
}

#[test]
fn truncated_payload_is_reported() {
    let bytes = Container::from_cube(&cube()).encode();
    let cut = &bytes[..bytes.len() - 5];
    assert!(matches!(
        Container::decode(cut),
        Err(Error::Truncated { .. })
    ));
}

#[test]
fn wrong_magic_and_trailing_bytes_rejected() {
    let mut bytes = Container::from_cube(&cube()).encode();
    bytes.push(0);
    assert!(matches!(Container::decode(&bytes), Err(Error::Format(_))));
    let mut bad = Container::from_cube(&cube()).encode();
    bad[0] = b'X';
    assert!(matches!(Container::decode(&bad), Err(Error::Format(_))));
}

#[test]
fn dtype_mismatch_on_typed_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.hsic");
    let mut cont = Container::from_cube(&cube());
    cont.dtype = DType::F32;
    cont.save(&path).unwrap();
    assert!(matches!(
        Container::load_as(&path, DType::F64),
        Err(Error::DtypeMismatch { .. })
    ));
    assert!(Container::load_as(&path, DType::F32).is_ok());
}

#[test]
fn kind_mismatch_rejected() {
    let c = Container::from_cube(&cube());
    assert!(c.clone().into_mask().is_err());
    assert!(c.into_measurement().is_err());
}

#[test]
fn pgm_header_and_scaling() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.pgm");
    let p = Plane::new(1, 3, vec![0.0, 0.5, 2.0]).unwrap();
    write_pgm(&path, &p, 0.0, 1.0).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert!(bytes.starts_with(b"P5\n3 1\n255\n"));
    assert_eq!(&bytes[bytes.len() - 3..], &[0, 128, 255]);
}

#[test]
fn csv_round_trip() {
    let mut t = CsvTable::new(&["epoch", "psnr"]);
    t.push(vec!["1".into(), "12.5".into()]).unwrap();
    t.push(vec!["2".into(), "0.1".into()]).unwrap();
    assert!(t.push(vec!["3".into()]).is_err());
    let back = CsvTable::parse(&t.to_bytes().unwrap()).unwrap();
    assert_eq!(back, t);
    assert_eq!(back.f64_column("psnr").unwrap(), vec![12.5, 0.1]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn any_cube_round_trips(h in 1usize..6, w in 1usize..6, l in 1usize..4, seed in 0u64..1000) {
        let data: Vec<f64> = (0..h * w * l).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 997.0 - 0.3).collect();
        let c = HsiCube::new(h, w, l, data).unwrap();
        let back = Container::decode(&Container::from_cube(&c).encode()).unwrap().into_cube().unwrap();
        prop_assert_eq!(back, c);
    }
}
