use std::collections::BTreeMap;

use duet_core::dataset::images_to_batch;
use duet_core::duet::DuetConfig;
use duet_core::model::{train_epoch, ModelState, TrainConfig};
use duet_core::nn::EncoderConfig;
use duet_core::optim::AdamConfig;
use duet_core::transforms::{GroupSpec, StackPreset, TransformKind};
use duet_core::Tensor;
use duet_lab::checkpoint::{decode_model, encode_model, load_model, save_model};
use duet_lab::cifar::{load_cifar, RECORD_BYTES};
use duet_lab::export::{
    export_matrix, matrix_csv, metrics_csv, parse_matrix_csv, parse_metrics_csv, MatrixSidecar, MetricsRow,
};
use duet_lab::idx::{encode_idx_images, encode_idx_labels, load_idx, parse_idx, IMAGES_MAGIC};
use duet_lab::synth::{synthesize, SynthKind};
use duet_lab::LabError;
use proptest::prelude::*;

#[test]
fn idx_pair_round_trip() {
    let ds = synthesize(SynthKind::OrientedBars, 12, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = (dir.path().join("img.idx"), dir.path().join("lab.idx"));
    std::fs::write(&ip, encode_idx_images(&ds.images)).unwrap();
    std::fs::write(&lp, encode_idx_labels(ds.labels.as_ref().unwrap())).unwrap();
    let back = load_idx(&ip, &lp, "t", 0).unwrap();
    assert_eq!(back.len(), 12);
    assert_eq!(back.image_dims(), Some((28, 28, 1)));
    assert_eq!(back.labels, ds.labels);
    for (a, b) in back.images.iter().zip(&ds.images) {
        for (x, y) in a.pixels().iter().zip(b.pixels()) {
            assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}

#[test]
fn idx_count_mismatch() {
    let ds = synthesize(SynthKind::OrientedBars, 3, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = (dir.path().join("img.idx"), dir.path().join("lab.idx"));
    std::fs::write(&ip, encode_idx_images(&ds.images)).unwrap();
    std::fs::write(&lp, encode_idx_labels(&[0, 1])).unwrap();
    assert!(matches!(
        load_idx(&ip, &lp, "t", 0),
        Err(LabError::CountMismatch { images: 3, labels: 2 })
    ));
}

#[test]
fn idx_labels_file_read_as_images_is_rejected_at_offset_zero() {
    let b = encode_idx_labels(&[1, 2]);
    let err = parse_idx(&b, IMAGES_MAGIC).unwrap_err();
    assert!(matches!(err, LabError::Parse { offset: 0, .. }));
    assert!(err.to_string().contains("offset 0"));
}

#[test]
fn cifar_batch_of_ten_records() {
    let mut bytes = Vec::with_capacity(10 * RECORD_BYTES);
    for r in 0..10u8 {
        bytes.push(r);
        bytes.extend((0..3072).map(|k| ((k + r as usize) % 256) as u8));
    }
    assert_eq!(bytes.len(), 30730);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("data_batch_1.bin");
    std::fs::write(&p, &bytes).unwrap();
    let ds = load_cifar(&p, "cifar", 0).unwrap();
    assert_eq!(ds.len(), 10);
    assert_eq!(ds.labels.as_ref().unwrap(), &(0..10).collect::<Vec<_>>());
    assert_eq!(ds.image_dims(), Some((32, 32, 3)));
    // pixel (0, 1) green is plane byte 1024 + 1 of record 3
    assert_eq!(ds.images[3].get(0, 1, 1), ((1024 + 1 + 3) % 256) as f64 / 255.0);
    std::fs::write(&p, &bytes[..30729]).unwrap();
    assert!(load_cifar(&p, "cifar", 0).is_err());
}

#[test]
fn synthetic_sets_are_deterministic() {
    for kind in [SynthKind::OrientedBars, SynthKind::TwoClassBlobs] {
        let a = synthesize(kind, 20, 9).unwrap();
        let b = synthesize(kind, 20, 9).unwrap();
        let c = synthesize(kind, 20, 10).unwrap();
        let bits = |d: &duet_core::dataset::Dataset| -> Vec<u64> {
            d.images.iter().flat_map(|im| im.pixels().iter().map(|v| v.to_bits())).collect()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&c));
        assert_eq!(a.labels, b.labels);
    }
    assert!(synthesize(SynthKind::OrientedBars, 0, 1).is_err());
}

#[test]
fn synthetic_class_balance() {
    for kind in [SynthKind::OrientedBars, SynthKind::TwoClassBlobs] {
        let ds = synthesize(kind, 1000, 5).unwrap();
        let labels = ds.labels.as_ref().unwrap();
        let classes = ds.num_classes();
        let mut counts = vec![0usize; classes];
        for l in labels {
            counts[*l] += 1;
        }
        let uniform = 1000.0 / classes as f64;
        for c in counts {
            assert!((c as f64 - uniform).abs() <= 0.1 * uniform, "{kind:?}: {c} vs {uniform}");
        }
    }
}

fn trained_model() -> ModelState {
    let ds = synthesize(SynthKind::OrientedBars, 32, 2).unwrap();
    let duet = DuetConfig {
        content: 4,
        groups: 4,
        proj_hidden: 8,
        proj_out: 8,
        ..DuetConfig::default()
    };
    let enc = EncoderConfig {
        hidden_dims: vec![32, 16],
        ..EncoderConfig::with_layout(784, 4, 4)
    };
    let mut state = ModelState::new(duet, &enc, AdamConfig::default(), 3).unwrap();
    let tc = TrainConfig {
        epochs: 2,
        batch_size: 16,
        base_lr: 1e-3,
        warmup_epochs: 0.5,
        seed: 3,
    };
    let stack = StackPreset::Identity.items();
    let spec = GroupSpec::new(TransformKind::Rot360);
    for e in 0..2 {
        train_epoch(&mut state, &ds, &stack, &spec, &tc, e).unwrap();
    }
    state
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    let state = trained_model();
    let run: BTreeMap<String, String> = [("dataset".to_string(), "oriented_bars".to_string())].into();
    let first = encode_model(&state, 3, &run).unwrap();
    let (loaded, manifest) = decode_model(&first).unwrap();
    assert_eq!(manifest.epoch, 2);
    assert_eq!(manifest.run, run);
    let second = encode_model(&loaded, manifest.rng.seed, &manifest.run).unwrap();
    assert_eq!(first, second);
}

#[test]
fn checkpoint_preserves_eval_outputs() {
    let state = trained_model();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.duet");
    save_model(&state, 3, &BTreeMap::new(), &p).unwrap();
    let (loaded, _) = load_model(&p).unwrap();
    let ds = synthesize(SynthKind::OrientedBars, 4, 77).unwrap();
    let x = images_to_batch(&ds.images).unwrap();
    let a = state.encoder.encode(&x).unwrap();
    let b = loaded.encoder.encode(&x).unwrap();
    let diff = a.data().iter().zip(b.data()).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
    assert!(diff <= 1e-6, "max abs diff {diff}");
}

#[test]
fn truncated_checkpoint_is_a_length_mismatch() {
    let bytes = encode_model(&trained_model(), 3, &BTreeMap::new()).unwrap();
    let cut = &bytes[..bytes.len() - 5];
    assert!(matches!(decode_model(cut), Err(LabError::LengthMismatch { .. })));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_model(&bad), Err(LabError::Checkpoint(_))));
}

#[test]
fn metrics_header_and_round_trip() {
    assert_eq!(metrics_csv(&[]), "epoch,loss_total,loss_content,loss_group,lr,probe_acc\n");
    let rows = vec![
        MetricsRow {
            epoch: 0,
            loss_total: 0.1 + 0.2,
            loss_content: 1e-300,
            loss_group: 123456789.125,
            lr: 1e-3,
            probe_acc: None,
        },
        MetricsRow {
            epoch: 1,
            loss_total: 2.0,
            loss_content: 1.5,
            loss_group: 0.05,
            lr: 0.0,
            probe_acc: Some(0.875),
        },
    ];
    let text = metrics_csv(&rows);
    let back = parse_metrics_csv(&text).unwrap();
    assert_eq!(back, rows);
    assert_eq!(metrics_csv(&back), text);
    assert!(text.contains("0.30000000000000004"));
    assert!(!text.contains('\r'));
}

#[test]
fn matrix_export_min_max_pgm() {
    let m = Tensor::from_rows(&[vec![0.0, 1.0], vec![2.0, 3.0]]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let sidecar = MatrixSidecar {
        spec: "rot360".into(),
        resolution: 2,
        n_images: 5,
    };
    let files = export_matrix(&m, &sidecar, dir.path(), "h").unwrap();
    assert_eq!(files.len(), 3);
    let pgm = std::fs::read(dir.path().join("h.pgm")).unwrap();
    let header = b"P5\n2 2\n255\n";
    assert_eq!(&pgm[..header.len()], header);
    // oracle: round((v - min) / (max - min) * 255)
    let oracle: Vec<u8> = [0.0f64, 1.0, 2.0, 3.0].iter().map(|v| (v / 3.0 * 255.0).round() as u8).collect();
    assert_eq!(&pgm[header.len()..], &oracle[..]);
    assert_eq!(oracle, vec![0, 85, 170, 255]);
    let csv = std::fs::read_to_string(dir.path().join("h.csv")).unwrap();
    assert_eq!(csv, "0,1\n2,3\n");
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("h.json")).unwrap()).unwrap();
    assert_eq!(json["spec"], "rot360");
    assert_eq!(json["resolution"], 2);
    assert_eq!(json["n_images"], 5);
}

proptest! {
    #[test]
    fn metrics_csv_round_trips_any_finite_values(
        vals in prop::collection::vec((any::<f64>(), any::<f64>(), any::<f64>(), any::<f64>(), proptest::option::of(0.0f64..=1.0)), 0..6)
    ) {
        let rows: Vec<MetricsRow> = vals
            .into_iter()
            .enumerate()
            .filter(|(_, (a, b, c, d, _))| [a, b, c, d].iter().all(|v| v.is_finite()))
            .map(|(epoch, (a, b, c, d, p))| MetricsRow {
                epoch,
                loss_total: a,
                loss_content: b,
                loss_group: c,
                lr: d,
                probe_acc: p,
            })
            .collect();
        let text = metrics_csv(&rows);
        let back = parse_metrics_csv(&text).unwrap();
        prop_assert_eq!(&back, &rows);
        prop_assert_eq!(metrics_csv(&back), text);
    }

    #[test]
    fn matrix_csv_round_trips(vals in prop::collection::vec(-1e6f64..1e6, 9)) {
        let m = Tensor::new(vec![3, 3], vals).unwrap();
        let text = matrix_csv(&m);
        let back = parse_matrix_csv(&text).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(matrix_csv(&back), text);
    }
}
