use std::fs;

use pyrreg::cnn::checkpoint::Checkpoint;
use pyrreg::cnn::Network;
use pyrreg::dataio::{load_checkpoint, read_pfm, read_pgm, read_pnm, read_ppm, save_checkpoint, write_pfm, write_pgm, write_ppm};
use pyrreg::image::{Image, ScalarMap};
use pyrreg::rng;
use pyrreg::Error;

#[test]
fn checkpoint_file_round_trip_leaves_file_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    let mut net = Network::table1();
    net.init_weights(&mut rng::from_seed(2));
    let ckpt = Checkpoint { mu: 4.0, network: net };
    save_checkpoint(&ckpt, &path).unwrap();
    let before = fs::read(&path).unwrap();
    let modified = fs::metadata(&path).unwrap().modified().unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), ckpt);
    assert_eq!(fs::read(&path).unwrap(), before);
    assert_eq!(fs::metadata(&path).unwrap().modified().unwrap(), modified);
    // header + 4 bytes per parameter
    assert!(before.len() > 4 * 552_775);
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    save_checkpoint(&Checkpoint { mu: 2.0, network: Network::compact(6, 1) }, &path).unwrap();
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(load_checkpoint(&path).is_err());
}

#[test]
fn missing_file_reports_path() {
    let err = read_pfm("/no/such/file.pfm").unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("/no/such/file.pfm"));
}

#[test]
fn image_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let rgb = Image::from_fn(7, 9, 3, |y, x, c| ((y * 31 + x * 7 + c * 50) % 256) as f32 / 255.0);
    let gray = Image::from_fn(7, 9, 1, |y, x, _| ((y * 9 + x) * 3 % 256) as f32 / 255.0);
    write_ppm(&rgb, dir.path().join("a.ppm")).unwrap();
    write_pgm(&gray, dir.path().join("a.pgm")).unwrap();
    assert_eq!(read_ppm(dir.path().join("a.ppm")).unwrap(), rgb);
    assert_eq!(read_pgm(dir.path().join("a.pgm")).unwrap(), gray);
    assert_eq!(read_pnm(dir.path().join("a.pgm")).unwrap(), gray);
    assert!(read_ppm(dir.path().join("a.pgm")).is_err());
    assert!(read_pgm(dir.path().join("a.ppm")).is_err());

    let data: Vec<f32> = (0..63).map(|i| if i == 5 { f32::INFINITY } else { i as f32 * -0.37 }).collect();
    let map = ScalarMap::new(7, 9, data).unwrap();
    write_pfm(&map, dir.path().join("d.pfm")).unwrap();
    assert_eq!(read_pfm(dir.path().join("d.pfm")).unwrap().into_scalar_map().unwrap(), map);
}
