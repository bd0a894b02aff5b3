mod common;

use common::*;
use rand::seq::SliceRandom;

use senet_core::arch::{preset, SeSettings};
use senet_core::probe::{
    per_class_indices, record_excitations, record_excitations_at, saturation_report, ExcitationRow, ExcitationStats,
};
use senet_core::train::{make_synthetic, Normalization, SyntheticConfig};
use senet_core::{build_network, Network, Tensor};

fn data() -> senet_core::train::Dataset {
    make_synthetic(&SyntheticConfig {
        samples: 64,
        ..SyntheticConfig::default()
    })
    .unwrap()
}

fn ready(name: &str) -> Network {
    let mut net = build_network(&preset(name).unwrap(), 2).unwrap();
    net.set_identity_bn_stats();
    net
}

#[test]
fn forced_gates_give_constant_stats() {
    let settings = SeSettings {
        ratio: 4,
        fc_bias: true,
        ..SeSettings::default()
    };
    let arch = preset("toy").unwrap().with_variant(senet_core::arch::IntegrationVariant::Standard, settings);
    let mut net = build_network(&arch, 0).unwrap();
    net.set_identity_bn_stats();
    for p in net.params_mut().iter_mut() {
        if p.name.ends_with(".se.fc2.weight") {
            p.value = Tensor::zeros(p.value.dims());
        }
        if p.name.ends_with(".se.fc2.bias") {
            p.value = Tensor::full(p.value.dims(), (0.7f64 / 0.3).ln());
        }
    }
    let stats = record_excitations(&mut net, &data(), &Normalization::identity(4), 8, None).unwrap();
    assert!(!stats.rows.is_empty());
    for r in &stats.rows {
        assert!((r.mean - 0.7).abs() < 1e-12 && r.std < 1e-12, "{r:?}");
    }
}

#[test]
fn one_sample_per_class_has_zero_spread() {
    let mut net = ready("toy-se");
    let stats = record_excitations(&mut net, &data(), &Normalization::identity(4), 1, None).unwrap();
    for r in stats.rows.iter().filter(|r| r.class.is_some()) {
        assert_eq!((r.std, r.count), (0.0, 1));
    }
    for r in stats.rows.iter().filter(|r| r.class.is_none()) {
        assert_eq!(r.count, 4);
    }
}

#[test]
fn rows_cover_blocks_classes_and_channels() {
    let mut net = ready("toy-se");
    let stats = record_excitations(&mut net, &data(), &Normalization::identity(4), 5, Some(6)).unwrap();
    assert_eq!(stats.blocks(), ["SE_2_1", "SE_2_2", "SE_3_1", "SE_3_2"]);
    assert_eq!(stats.classes(), [0, 1, 2, 3]);
    // 16 channels strided down to 6 in stage 2, 32 down to 6 in stage 3; 4 classes plus "all".
    assert_eq!(stats.rows.len(), 4 * 6 * 5);
    assert_eq!(stats.mean_vector("SE_3_1", Some(2)).len(), 6);
    for r in &stats.rows {
        assert!(r.mean > 0.0 && r.mean < 1.0 && r.std >= 0.0 && r.count > 0);
    }
    let channels: Vec<usize> = stats.rows.iter().filter(|r| r.block == "SE_3_2" && r.class == Some(0)).map(|r| r.channel).collect();
    assert_eq!(channels, [0, 5, 10, 16, 21, 26]);
}

#[test]
fn aggregation_ignores_sample_order() {
    let mut net = ready("toy-se");
    let ds = data();
    let norm = Normalization::identity(4);
    let mut idx = per_class_indices(&ds, 10);
    let a = record_excitations_at(&mut net, &ds, &norm, &idx, None).unwrap();
    idx.shuffle(&mut rng(1));
    let b = record_excitations_at(&mut net, &ds, &norm, &idx, None).unwrap();
    assert_eq!(a.rows.len(), b.rows.len());
    for (x, y) in a.rows.iter().zip(&b.rows) {
        assert_eq!((&x.block, x.class, x.channel, x.count), (&y.block, y.class, y.channel, y.count));
        assert!((x.mean - y.mean).abs() < 1e-10 && (x.std - y.std).abs() < 1e-10);
    }
}

#[test]
fn csv_round_trip_is_exact() {
    let mut net = ready("toy-se");
    let stats = record_excitations(&mut net, &data(), &Normalization::identity(4), 3, None).unwrap();
    let mut buf = Vec::new();
    stats.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("block,class,channel,mean,std,count\n"));
    assert!(text.contains(",all,"));
    assert_eq!(ExcitationStats::read_csv(buf.as_slice()).unwrap(), stats);
    assert!(ExcitationStats::read_csv("a,b\n1,2\n".as_bytes()).is_err());
}

#[test]
fn hooks_do_not_touch_logits() {
    let mut net = ready("toy-se");
    assert!(hooks_are_transparent(&mut net));
}

#[test]
fn plain_net_cannot_be_probed() {
    let mut net = ready("toy");
    assert!(record_excitations(&mut net, &data(), &Normalization::identity(4), 2, None).is_err());
}

fn table(means: &[(&str, f64)]) -> ExcitationStats {
    ExcitationStats {
        rows: means
            .iter()
            .enumerate()
            .map(|(i, &(block, mean))| ExcitationRow {
                block: block.into(),
                class: Some(i % 3),
                channel: i,
                mean,
                std: 0.0,
                count: 1,
            })
            .collect(),
    }
}

#[test]
fn saturation_fractions() {
    let all_hot = table(&[("SE_2_1", 0.95); 6]);
    assert_eq!(saturation_report(&all_hot), [("SE_2_1".to_string(), 1.0)]);
    let all_mid = table(&[("SE_2_1", 0.5); 6]);
    assert_eq!(saturation_report(&all_mid), [("SE_2_1".to_string(), 0.0)]);
    let mixed = table(&[
        ("SE_4_1", 0.91),
        ("SE_4_1", 0.2),
        ("SE_4_1", 0.99),
        ("SE_4_1", 0.9),
        ("SE_5_2", 0.97),
        ("SE_5_2", 0.1),
        ("SE_5_2", 0.3),
    ]);
    assert_eq!(
        saturation_report(&mixed),
        [("SE_4_1".to_string(), 2.0 / 4.0), ("SE_5_2".to_string(), 1.0 / 3.0)]
    );
}
