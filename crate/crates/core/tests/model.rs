mod common;

use common::*;
use ericnn::augment::AugmentSpec;
use ericnn::data::{synthetic_cross, Dataset, Item, Split};
use ericnn::init::{InitScheme, SlopeInterval};
use ericnn::model::{
    build_eri_cnn, decode_weights, encode_weights, evaluate, train, Network, TrainConfig,
};
use ericnn::optim::AdamConfig;
use ericnn::{Error, Tensor};

/// Filter sizes, input and output channels of each convolution, in order.
const CONV_ROWS: [(usize, usize, usize); 9] = [
    (2, 3, 16),
    (2, 16, 32),
    (2, 32, 32),
    (3, 32, 64),
    (3, 64, 64),
    (3, 64, 64),
    (3, 64, 128),
    (3, 128, 128),
    (3, 128, 128),
];

fn quick_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        adam: AdamConfig { lr: 1e-2, ..AdamConfig::default() },
        augment: AugmentSpec::disabled(),
        seed: 3,
    }
}

fn eri_net(train: &Dataset, seed: u64) -> Network {
    build_eri_cnn(InitScheme::Eri, &SlopeInterval::new(0.0).unwrap(), train, seed).unwrap()
}

#[test]
fn parameter_count_matches_row_sum() {
    let convs: usize = CONV_ROWS.iter().map(|&(k, cin, cout)| k * k * cin * cout + cout).sum();
    let oracle = convs + (512 * 128 + 128) + (128 + 1);
    assert_eq!(oracle, 533_585);
    assert_eq!(Network::<f32>::eri_cnn().param_count(), oracle);
}

#[test]
fn shape_trace_follows_pooling_ladder() {
    let net = Network::<f32>::eri_cnn();
    let mut sizes = vec![32];
    for (kind, shape) in net.shape_trace() {
        let s = match kind {
            "maxpool" => shape[0],
            "flatten" | "dense" => shape[0],
            _ => continue,
        };
        sizes.push(s);
    }
    assert_eq!(sizes, vec![32, 16, 8, 4, 2, 512, 128, 1]);
    let convs: Vec<_> = net
        .shape_trace()
        .into_iter()
        .filter(|(k, _)| *k == "conv")
        .map(|(_, s)| s)
        .collect();
    let expected: Vec<_> = CONV_ROWS
        .iter()
        .zip([32, 16, 16, 8, 8, 8, 4, 4, 4])
        .map(|(&(_, _, c), side)| vec![side, side, c])
        .collect();
    assert_eq!(convs, expected);
}

#[test]
fn zero_image_gives_a_probability() {
    let d = synthetic_cross(16, 1, Split::Train);
    for scheme in [InitScheme::Eri, InitScheme::Baseline] {
        let net = build_eri_cnn(scheme, &SlopeInterval::default(), &d, 2).unwrap();
        let p = net.predict(&Tensor::zeros(&[1, 32, 32, 3])).unwrap().data()[0];
        assert!(p.is_finite() && (0.0..=1.0).contains(&p), "{scheme}: {p}");
    }
}

#[test]
fn evaluation_is_pure() {
    let d = synthetic_cross(20, 1, Split::Test);
    let net = eri_net(&d, 5);
    let before = encode_weights(&net).unwrap();
    let a = evaluate(&net, &d).unwrap();
    let b = evaluate(&net, &d).unwrap();
    assert_eq!(a, b);
    assert_eq!(encode_weights(&net).unwrap(), before);
}

#[test]
fn forced_positive_output_scores_all_cactus_set_perfectly() {
    let mut d = synthetic_cross(20, 1, Split::Test);
    d.items.retain(|i| i.label == 1);
    let mut net = Network::<f32>::eri_cnn();
    for (name, t) in net.parameters_mut() {
        if name == "fc2.bias" {
            t.data_mut()[0] = 100.0;
        }
    }
    let r = evaluate(&net, &d).unwrap();
    assert_eq!((r.accuracy, r.precision, r.recall, r.f1), (1.0, 1.0, 1.0, 1.0));
}

#[test]
fn untrained_network_is_at_chance_on_label_independent_data() {
    // Noise-only images with alternating labels: predictions cannot depend
    // on the label.
    let noise = synthetic_cross(1000, 11, Split::Test);
    let items: Vec<Item> = noise
        .items
        .into_iter()
        .filter(|i| i.label == 0)
        .enumerate()
        .map(|(k, mut i)| {
            i.label = (k % 2) as u8;
            i
        })
        .collect();
    assert_eq!(items.len(), 500);
    let test = Dataset::new(items, Split::Test).unwrap();
    let net = eri_net(&synthetic_cross(64, 12, Split::Train), 13);
    let acc = evaluate(&net, &test).unwrap().accuracy;
    assert!((acc - 0.5).abs() <= 0.1, "accuracy {acc}");
}

#[test]
fn weights_round_trip_bit_exactly() {
    let d = synthetic_cross(16, 1, Split::Train);
    let net = eri_net(&d, 8);
    let bytes = encode_weights(&net).unwrap();
    let back = decode_weights(&bytes, &Network::eri_cnn()).unwrap();
    assert_eq!(encode_weights(&back).unwrap(), bytes);
    for s in 0..10 {
        let x = random_tensor(&[1, 32, 32, 3], s, 0.0, 1.0).cast::<f32>();
        let a = net.predict_logits(&x).unwrap();
        let b = back.predict_logits(&x).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    let file = tempfile::NamedTempFile::new().unwrap();
    ericnn::model::save_weights(&net, file.path()).unwrap();
    assert_eq!(std::fs::read(file.path()).unwrap(), bytes);
    let loaded = ericnn::model::load_weights(file.path()).unwrap();
    assert_eq!(encode_weights(&loaded).unwrap(), bytes);
}

#[test]
fn damaged_weight_files_are_rejected() {
    let net = Network::<f32>::eri_cnn();
    let bytes = encode_weights(&net).unwrap();
    let tmpl = Network::eri_cnn();
    for cut in [0, 7, 12, 40, bytes.len() - 1] {
        let err = decode_weights(&bytes[..cut], &tmpl).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{cut}: {err}");
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_weights(&bad, &tmpl), Err(Error::Format(_))));
    let mut bad = bytes.clone();
    bad[14] = b'X'; // inside the first record name
    let msg = decode_weights(&bad, &tmpl).unwrap_err().to_string();
    assert!(msg.contains("record 0"), "{msg}");
    let mut bad = bytes.clone();
    bad.push(0);
    assert!(matches!(decode_weights(&bad, &tmpl), Err(Error::Format(_))));
}

#[test]
fn one_epoch_on_a_toy_set() {
    let tr = synthetic_cross(10, 1, Split::Train);
    let va = synthetic_cross(4, 1, Split::Val);
    let mut net = eri_net(&tr, 1);
    let run = train(&mut net, &tr, &va, &quick_config(1)).unwrap();
    assert_eq!(run.history.len(), 1);
    let e = run.history[0];
    assert!([e.train_loss, e.train_acc, e.val_loss, e.val_acc].iter().all(|v| v.is_finite()));
}

#[test]
fn training_is_reproducible_and_reduces_loss() {
    let tr = synthetic_cross(200, 2, Split::Train);
    let va = synthetic_cross(40, 2, Split::Val);
    let config = TrainConfig {
        augment: AugmentSpec { seed: 3, ..AugmentSpec::default() },
        ..quick_config(10)
    };
    let mut a = eri_net(&tr, 4);
    let mut b = eri_net(&tr, 4);
    let ra = train(&mut a, &tr, &va, &config).unwrap();
    let rb = train(&mut b, &tr, &va, &config).unwrap();
    assert_eq!(ra.history_csv(), rb.history_csv());
    assert_eq!(encode_weights(&a).unwrap(), encode_weights(&b).unwrap());
    assert!(ra.history[9].train_loss < ra.history[0].train_loss, "{}", ra.history_csv());
}

#[test]
fn non_finite_input_aborts_with_position() {
    let mut tr = synthetic_cross(8, 1, Split::Train);
    for item in &mut tr.items {
        item.image.data_mut()[0] = f32::NAN;
    }
    let va = synthetic_cross(4, 1, Split::Val);
    let mut net = eri_net(&synthetic_cross(8, 1, Split::Train), 1);
    let err = train(&mut net, &tr, &va, &quick_config(1)).unwrap_err();
    assert!(matches!(err, Error::NonFinite(ref m) if m.contains("epoch 1")), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn overlapping_or_empty_splits_are_rejected() {
    let tr = synthetic_cross(8, 1, Split::Train);
    let mut net = eri_net(&tr, 1);
    let va = Dataset { items: tr.items[..2].to_vec(), split: Split::Val };
    assert!(matches!(train(&mut net, &tr, &va, &quick_config(1)), Err(Error::Usage(_))));
    let empty = Dataset { items: Vec::new(), split: Split::Val };
    assert!(matches!(train(&mut net, &tr, &empty, &quick_config(1)), Err(Error::Domain(_))));
    assert!(matches!(evaluate(&net, &empty), Err(Error::Domain(_))));
}
