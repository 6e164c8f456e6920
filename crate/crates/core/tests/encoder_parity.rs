mod common;

use smoe::encoder::{EncoderArch, EncoderNetwork, SmwFile, Tensor};
use smoe::{ImageGrid, SmoeError};

#[test]
fn outputs_match_reference_forward_pass() {
    let sets = common::fixture_sets();
    assert_eq!(sets.len(), 3);
    for set in sets {
        assert!(set.count >= 100);
        let file = common::random_weights(&set.arch, set.seed);
        let bytes = file.to_bytes();
        assert_eq!(common::sha256_hex(&bytes), set.weights_sha256, "{}: weight bytes", set.tag);

        let net = EncoderNetwork::from_bytes(&bytes).unwrap();
        let got = net.forward_batch(&set.inputs, set.count).unwrap();
        let mut worst = 0.0f32;
        for (row, want) in got.iter().zip(set.outputs.chunks_exact(24)) {
            for (a, b) in row.iter().zip(want) {
                worst = worst.max((a - b).abs());
            }
        }
        assert!(worst <= 1e-4, "{}: max deviation {worst}", set.tag);

        // Single-block path agrees with the batch.
        let n = set.arch.block_size;
        let block = ImageGrid::new(n, n, set.inputs[2 * n * n..3 * n * n].iter().map(|&v| v as f64).collect())
            .unwrap();
        assert_eq!(net.forward(&block).unwrap(), got[2]);
    }
}

#[test]
fn outputs_differ_between_blocks() {
    let set = &common::fixture_sets()[0];
    let first = &set.outputs[..24];
    let distinct = set.outputs.chunks_exact(24).filter(|o| o != &first).count();
    assert!(distinct >= set.count - 2);
}

#[test]
fn save_and_reload_round_trip() {
    let arch = EncoderArch::strided(8).unwrap();
    let net = EncoderNetwork::from_smw(&common::random_weights(&arch, 5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("enc.smw");
    net.save(&path).unwrap();
    let back = EncoderNetwork::load(&path).unwrap();
    let block = ImageGrid::from_fn(8, 8, |r, c| ((r * 5 + c * 3) % 8) as f64 / 8.0);
    assert_eq!(back.forward(&block).unwrap(), net.forward(&block).unwrap());
}

#[test]
fn parameter_counts() {
    // Fully convolutional at block resolution: flatten sees N*N*1024 features.
    let full16 = EncoderArch::full_resolution(16).unwrap().parameter_count();
    let full8 = EncoderArch::full_resolution(8).unwrap().parameter_count();
    assert!((full16 as f64 / 275e6 - 1.0).abs() < 0.01, "{full16}");
    assert!((full8 as f64 / 74e6 - 1.0).abs() < 0.02, "{full8}");
    let strided = EncoderArch::strided(16).unwrap().parameter_count();
    assert!(strided < 10_000_000, "{strided}");
}

fn small_file() -> SmwFile {
    common::random_weights(&EncoderArch::strided(8).unwrap(), 3)
}

#[test]
fn rejects_corrupt_headers() {
    let bytes = small_file().to_bytes();

    let mut magic = bytes.clone();
    magic[..6].copy_from_slice(b"SMOEW2");
    assert!(matches!(EncoderNetwork::from_bytes(&magic), Err(SmoeError::BadMagic { .. })));

    let text = String::from_utf8_lossy(&bytes[..200]).into_owned();
    let header_end = text.find("conv1.weight").unwrap();
    let mut rank = bytes.clone();
    // "conv1.weight 4 16 1 3 3" -> "conv1.weight x 16 1 3 3"
    rank[header_end + 13] = b'x';
    assert!(matches!(
        EncoderNetwork::from_bytes(&rank),
        Err(SmoeError::MalformedHeader { line: 3, .. })
    ));

    let mut arch = bytes.clone();
    let at = text.find("kc6").unwrap();
    arch[at..at + 3].copy_from_slice(b"kc7");
    assert!(matches!(
        EncoderNetwork::from_bytes(&arch),
        Err(SmoeError::MalformedHeader { line: 2, .. })
    ));

    assert!(matches!(
        EncoderNetwork::from_bytes(b"SMOEW1\nconv1.weight 4 16 1 3 3"),
        Err(SmoeError::MalformedHeader { .. })
    ));
}

#[test]
fn rejects_shape_and_tensor_errors() {
    let good = small_file();

    let mut shape = good.clone();
    let t = &mut shape.tensors[2];
    *t = Tensor::new("conv2.weight", vec![32, 16, 1, 9], t.data.clone()).unwrap();
    match EncoderNetwork::from_smw(&shape) {
        Err(SmoeError::ShapeMismatch { name, expected, found }) => {
            assert_eq!(name, "conv2.weight");
            assert_eq!(expected, vec![32, 16, 3, 3]);
            assert_eq!(found, vec![32, 16, 1, 9]);
        }
        other => panic!("unexpected {other:?}"),
    }

    let mut missing = good.clone();
    missing.tensors.retain(|t| t.name != "dense6.bias");
    assert!(matches!(
        EncoderNetwork::from_smw(&missing),
        Err(SmoeError::MissingTensor(n)) if n == "dense6.bias"
    ));

    // Weights for a different stride schedule under the original ARCH line.
    let mut other = common::random_weights(&EncoderArch::new(8, [2, 2, 1, 1, 1, 1, 1]).unwrap(), 3);
    other.arch = good.arch.clone();
    assert!(matches!(
        EncoderNetwork::from_smw(&other),
        Err(SmoeError::ShapeMismatch { name, .. }) if name == "dense1.weight"
    ));

    let mut inf = good.clone();
    inf.tensors[20].data[7] = f32::INFINITY;
    assert!(matches!(
        EncoderNetwork::from_smw(&inf),
        Err(SmoeError::NonFinite { name, index: 7 }) if name == "dense4.weight"
    ));
}

#[test]
fn rejects_truncation() {
    let bytes = small_file().to_bytes();
    for cut in [1, 4, 1000, bytes.len() / 2] {
        let short = &bytes[..bytes.len() - cut];
        match EncoderNetwork::from_bytes(short) {
            Err(SmoeError::Truncated { expected, actual }) => assert_eq!(expected - actual, cut),
            other => panic!("cut {cut}: unexpected {other:?}"),
        }
    }
    let mut long = bytes.clone();
    long.extend_from_slice(&[0; 4]);
    assert!(matches!(EncoderNetwork::from_bytes(&long), Err(SmoeError::TrailingBytes(4))));
}

#[test]
fn load_reports_missing_file() {
    assert!(matches!(
        EncoderNetwork::load("/nonexistent/enc.smw"),
        Err(SmoeError::Io { .. })
    ));
}
