use mmfuse_core::pipeline::{encoder_forward, EncoderConfig, EncoderWeights};
use mmfuse_core::store::{Params, WeightStore};
use mmfuse_core::Tensor;
use mmfuse_harness::format::{decode, encode, load_weights, save_weights, FormatError};
use mmfuse_harness::synth::synth_pair;

fn same_bits(a: &WeightStore, b: &WeightStore) -> bool {
    a.len() == b.len()
        && a.iter().zip(b.iter()).all(|((na, ta), (nb, tb))| {
            na == nb
                && ta.shape() == tb.shape()
                && ta.data().iter().zip(tb.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        })
}

#[test]
fn every_encoder_layout_round_trips() {
    let configs = [
        EncoderConfig::default(),
        EncoderConfig::small(),
        EncoderConfig { share_cei: true, stages: [16, 16, 16], ..EncoderConfig::small() },
        EncoderConfig { active_adapters: true, ..EncoderConfig::small() },
    ];
    for cfg in configs {
        let store = EncoderWeights::init(&cfg, 9).unwrap().to_store();
        assert!(same_bits(&decode(&encode(&store).unwrap()).unwrap(), &store));
    }
}

#[test]
fn file_round_trip_preserves_forward() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("enc.mmdw");
    let w = EncoderWeights::init(&EncoderConfig { active_adapters: true, ..EncoderConfig::small() }, 4).unwrap();
    save_weights(&w.to_store(), &path).unwrap();
    let store = load_weights(&path).unwrap();
    let (rgb, ir) = synth_pair(4, 32).unwrap();
    assert_eq!(encoder_forward(&rgb, &ir, &store).unwrap(), w.forward(&rgb, &ir).unwrap());
}

#[test]
fn header_layout_is_little_endian() {
    let mut s = WeightStore::new();
    s.set("w", Tensor::new(vec![2], vec![1.0, -2.0]).unwrap());
    let b = encode(&s).unwrap();
    assert_eq!(&b[..4], b"MMDW");
    assert_eq!(b[4..12], [1, 0, 0, 0, 1, 0, 0, 0]);
    assert_eq!(b[12..15], [1, 0, b'w']);
    assert_eq!(b[15], 1);
    assert_eq!(b[16..20], [2, 0, 0, 0]);
    assert_eq!(b[20..28], 1.0f64.to_le_bytes());
    assert_eq!(b.len(), 36);
}

#[test]
fn damaged_files_are_rejected() {
    let store = EncoderWeights::init(&EncoderConfig::small(), 1).unwrap().to_store();
    let good = encode(&store).unwrap();
    assert!(matches!(decode(&good[..good.len() - 3]), Err(FormatError::Truncated { .. })));
    let mut extra = good.clone();
    extra.push(0);
    assert!(matches!(decode(&extra), Err(FormatError::TrailingBytes(1))));
    let mut bad_name = good.clone();
    bad_name[14] = 0xff;
    assert!(matches!(decode(&bad_name), Err(FormatError::BadName(14))));
    assert!(matches!(load_weights(std::path::Path::new("/nonexistent.mmdw")), Err(FormatError::Io { .. })));
}

#[test]
fn missing_tensor_is_named_by_encoder_forward() {
    let mut store = EncoderWeights::init(&EncoderConfig::small(), 1).unwrap().to_store();
    let name = store.names().find(|n| n.starts_with("mpf.") && n.ends_with(".weight")).unwrap().to_string();
    store.remove(&name);
    let (rgb, ir) = synth_pair(0, 32).unwrap();
    let err = encoder_forward(&rgb, &ir, &store).unwrap_err().to_string();
    assert!(err.contains(&name), "{err}");
}

#[test]
fn leftover_tensor_is_rejected() {
    let mut store = EncoderWeights::init(&EncoderConfig::small(), 1).unwrap().to_store();
    store.set("mpf.td4.reduce.extra", Tensor::zeros(&[1]));
    let (rgb, ir) = synth_pair(0, 32).unwrap();
    let err = encoder_forward(&rgb, &ir, &store).unwrap_err().to_string();
    assert!(err.contains("unused weights: mpf.td4.reduce.extra"), "{err}");
}
