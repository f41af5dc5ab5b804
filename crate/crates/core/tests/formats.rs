mod common;

use common::{cifar_fixture, idx_fixture, RECORD};
use sharppath::data::{
    decode_cifar10, decode_idx, encode_cifar10, encode_idx, load_cifar10_bin, load_idx, subsample_first_n, write_cifar10_bin, write_idx,
    DatasetSource, Split,
};
use sharppath::models::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, ModelKind};
use sharppath::{Error, ParamVector};

#[test]
fn cifar_fixture_decodes_to_known_pixels() {
    let ds = decode_cifar10(&cifar_fixture(), Split::Train).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.labels(), &[3, 9]);
    assert_eq!(ds.example_shape(), &[32, 32, 3]);
    let x = ds.inputs().data();
    // Pixel (row 1, col 5) of image 0 is plane index 37, stored NHWC.
    let at = |img: usize, row: usize, col: usize, c: usize| x[((img * 32 + row) * 32 + col) * 3 + c];
    assert_eq!(at(0, 1, 5, 0), 37.0 / 255.0);
    assert_eq!(at(0, 1, 5, 1), 200.0 / 255.0);
    assert_eq!(at(0, 1, 5, 2), (255.0 - 37.0) / 255.0);
    assert_eq!(at(1, 31, 31, 2), 17.0 / 255.0);
    assert_eq!(at(1, 31, 31, 1), 0.0);
}

#[test]
fn cifar_files_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    std::fs::write(&a, cifar_fixture()).unwrap();
    let ds = load_cifar10_bin(std::slice::from_ref(&a), Split::Train).unwrap();
    write_cifar10_bin(&ds, &b).unwrap();
    assert_eq!(std::fs::read(&b).unwrap(), cifar_fixture());
    let again = load_cifar10_bin(std::slice::from_ref(&b), Split::Train).unwrap();
    assert_eq!(again.inputs(), ds.inputs());
    assert_eq!(again.labels(), ds.labels());
    // Files concatenate in order.
    let both = load_cifar10_bin(&[a, b], Split::Train).unwrap();
    assert_eq!(both.len(), 4);
    assert_eq!(encode_cifar10(&subsample_first_n(&both, 2).unwrap()).unwrap(), cifar_fixture());
}

#[test]
fn malformed_cifar_is_a_format_error() {
    let mut truncated = cifar_fixture();
    truncated.pop();
    assert!(matches!(decode_cifar10(&truncated, Split::Train), Err(Error::Format(_))));
    let mut bad_label = cifar_fixture();
    bad_label[RECORD] = 10;
    assert!(matches!(decode_cifar10(&bad_label, Split::Train), Err(Error::Format(_))));
    assert!(matches!(decode_cifar10(&[], Split::Train), Err(Error::Format(_))));
}

#[test]
fn idx_fixture_decodes_exactly() {
    let (images, labels) = idx_fixture();
    let ds = decode_idx(&images, &labels, Split::Test).unwrap();
    assert_eq!(ds.example_shape(), &[2, 3, 1]);
    assert_eq!(ds.labels(), &[0, 1, 2, 1]);
    let want: Vec<f64> = (0..4).flat_map(|i| (0..6).map(move |j| (10 * i + j) as f64 / 255.0)).collect();
    assert_eq!(ds.inputs().data(), &want[..]);
}

#[test]
fn idx_files_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (images, labels) = idx_fixture();
    let (ip, lp) = (dir.path().join("img.idx"), dir.path().join("lab.idx"));
    std::fs::write(&ip, &images).unwrap();
    std::fs::write(&lp, &labels).unwrap();
    let ds = load_idx(&ip, &lp, Split::Train).unwrap();
    let (ip2, lp2) = (dir.path().join("img2.idx"), dir.path().join("lab2.idx"));
    write_idx(&ds, &ip2, &lp2).unwrap();
    assert_eq!(std::fs::read(&ip2).unwrap(), images);
    assert_eq!(std::fs::read(&lp2).unwrap(), labels);
    assert_eq!(encode_idx(&ds).unwrap(), (images, labels));
}

#[test]
fn malformed_idx_is_a_format_error() {
    let (images, labels) = idx_fixture();
    let format_err = |i: &[u8], l: &[u8]| matches!(decode_idx(i, l, Split::Train), Err(Error::Format(_)));

    let mut bad_magic = images.clone();
    bad_magic[3] = 1;
    assert!(format_err(&bad_magic, &labels));
    assert!(format_err(&images, &images));

    let mut fewer_labels = labels.clone();
    fewer_labels[7] = 3;
    fewer_labels.pop();
    assert!(format_err(&images, &fewer_labels));

    let mut short = images.clone();
    short.pop();
    assert!(format_err(&short, &labels));

    let empty_images = vec![0, 0, 8, 3, 0, 0, 0, 0, 0, 0, 0, 2, 0, 0, 0, 3];
    let empty_labels = vec![0, 0, 8, 1, 0, 0, 0, 0];
    assert!(format_err(&empty_images, &empty_labels));
    assert!(format_err(&images[..10], &labels));
}

#[test]
fn missing_dataset_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let src = DatasetSource::Cifar10 {
        files: vec!["nowhere/data_batch_1.bin".into()],
    };
    match src.load(dir.path(), Split::Train) {
        Err(Error::Config(msg)) => assert!(msg.contains("nowhere/data_batch_1.bin"), "{msg}"),
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn checkpoints_round_trip_bit_exactly() {
    let values = vec![0.1, -2.5e-300, f64::MAX, -0.0, 1.0 / 3.0];
    let params = ParamVector::new(values.clone());
    let bytes = encode_checkpoint(ModelKind::Mlp, &params);
    assert!(bytes.starts_with(b"SHARPPATH1"));
    let (kind, back) = decode_checkpoint(&bytes).unwrap();
    assert_eq!(kind, ModelKind::Mlp);
    assert!(back.iter().zip(&values).all(|(a, b)| a.to_bits() == b.to_bits()));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.ckpt");
    write_checkpoint(&path, ModelKind::SimpleCnn, &params).unwrap();
    assert_eq!(read_checkpoint(&path).unwrap().0, ModelKind::SimpleCnn);
    assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
}
