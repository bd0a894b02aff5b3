use senet_core::arch::{preset, preset_names, IntegrationVariant, SeSettings};
use senet_core::complexity::{analyze, count_flops, count_params, se_extra_params, se_extra_params_ideal, with_input};

const R50: [(usize, usize); 4] = [(3, 256), (4, 512), (6, 1024), (3, 2048)];

fn within(value: f64, target: f64, frac: f64) -> bool {
    (value - target).abs() <= frac * target
}

#[test]
fn closed_form_values() {
    assert_eq!(se_extra_params(&R50, 16), 2_514_944);
    assert_eq!(se_extra_params(&R50, 2), 20_119_552);
    // Reported totals: 45.7M at r = 2, 26.9M at r = 32, 25.6M without SE.
    assert!(within(se_extra_params(&R50, 2) as f64, 45.7e6 - 25.6e6, 0.01));
    assert!(within(se_extra_params(&R50, 32) as f64, 26.9e6 - 25.6e6, 0.05));
    assert_eq!(se_extra_params(&[(1, 64)], 64), 128);
    assert_eq!(se_extra_params(&[(2, 10)], 3), 2 * 2 * 10 * 3);
}

#[test]
fn ideal_and_floor_agree_when_r_divides() {
    for r in [1, 2, 4, 8, 16, 32] {
        assert_eq!(se_extra_params_ideal(&R50, r as f64), se_extra_params(&R50, r) as f64);
    }
    assert!(se_extra_params_ideal(&[(1, 10)], 3.0) > se_extra_params(&[(1, 10)], 3) as f64);
}

#[test]
fn preset_totals() {
    let r50 = count_params(&preset("resnet50").unwrap()).unwrap();
    let se50 = count_params(&preset("se-resnet50-r16").unwrap()).unwrap();
    assert_eq!(r50, 25_557_032);
    assert!(within(r50 as f64, 25.6e6, 0.02));
    assert!(within(se50 as f64, 28.1e6, 0.02));
    assert_eq!(se50 - r50, se_extra_params(&R50, 16));
}

#[test]
fn flop_totals() {
    let r50 = analyze(&preset("resnet50").unwrap()).unwrap();
    assert!(within(r50.flops as f64, 3.86e9, 0.10), "{}", r50.flops);
    let se = analyze(&preset("se-resnet50-r16").unwrap()).unwrap();
    assert!((0.15..=0.40).contains(&se.flops_overhead_pct), "{}", se.flops_overhead_pct);
    assert_eq!(se.baseline_flops, r50.flops);
    assert!(se.mac_flops_overhead_pct > 0.0 && se.mac_flops_overhead_pct < se.flops_overhead_pct);
}

#[test]
fn single_layer_rows() {
    let r = analyze(&preset("resnet50").unwrap()).unwrap();
    let row = r.rows.iter().find(|x| x.name == "stage2.block1.reduce.conv").unwrap();
    assert_eq!((row.params, row.flops), (64 * 64, 12_845_056));
    let fc = r.rows.iter().find(|x| x.name == "fc").unwrap();
    assert_eq!((fc.params, fc.flops), (2048 * 1000 + 1000, 2048 * 1000));

    let mut toy = preset("toy").unwrap();
    toy.classes = 10;
    toy.stages.last_mut().unwrap().out_channels = 20;
    let fc = analyze(&toy).unwrap().rows.into_iter().find(|x| x.name == "fc").unwrap();
    assert_eq!(fc.params, 210);
}

#[test]
fn totals_are_row_sums_everywhere() {
    for name in preset_names() {
        let r = analyze(&preset(name).unwrap()).unwrap();
        assert_eq!(r.params, r.rows.iter().map(|x| x.params).sum::<u64>(), "{name}");
        assert_eq!(r.flops, r.rows.iter().map(|x| x.flops).sum::<u64>(), "{name}");
        assert_eq!(r.params, count_params(&preset(name).unwrap()).unwrap());
        assert_eq!(r.se_extra_params, r.params - r.baseline_params, "{name}");
        let se_rows: u64 = r.rows.iter().filter(|x| x.se).map(|x| x.params).sum();
        assert_eq!(se_rows, r.se_extra_params, "{name}");
        assert_eq!(r.to_csv().lines().count(), r.rows.len() + 1);
    }
}

#[test]
fn final_stage_holds_most_se_parameters() {
    let se = preset("se-resnet50-r16").unwrap();
    let mut no_last = se.clone();
    let last = no_last.stages.last_mut().unwrap();
    *last = last.clone().with_se(IntegrationVariant::None, SeSettings::default());
    let drop = count_params(&se).unwrap() - count_params(&no_last).unwrap();
    assert_eq!(drop, 3 * 2 * 2048 * 128);
    assert!(drop * 2 > se_extra_params(&R50, 16));
}

#[test]
fn flops_grow_with_input() {
    let a = preset("resnet50").unwrap();
    let small = count_flops(&with_input(&a, 112, 112)).unwrap();
    let big = count_flops(&a).unwrap();
    assert!(small * 3 < big && big < small * 5);
}

#[test]
fn senet154_is_costed() {
    let r = analyze(&preset("senet154").unwrap()).unwrap();
    assert_eq!(r.params, 115_300_264);
    assert!(r.flops > 15_000_000_000 && r.flops < 25_000_000_000, "{}", r.flops);
}
