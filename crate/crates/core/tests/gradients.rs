mod common;

use common::*;
use senet_core::gradcheck::{find_target, gradcheck, relative_error, TARGETS};
use senet_core::ops::{self, ConvGeometry};
use senet_core::{Dims, Tape, Tensor};

#[test]
fn every_target_passes_twenty_seeds() {
    for t in TARGETS.iter().filter(|t| t.name != "fixture_corrupt") {
        for seed in 0..20 {
            let r = gradcheck(t.name, seed).unwrap();
            assert!(r.checked > 0, "{}", t.name);
            assert!(r.max_rel_error < 1e-4, "{} seed {seed}: {:e} {:?}", t.name, r.max_rel_error, r.worst);
        }
    }
}

#[test]
fn linear_is_exact_to_rounding() {
    for seed in 0..20 {
        let r = gradcheck("linear", seed).unwrap();
        assert!(r.max_rel_error < 1e-8, "seed {seed}: {:e}", r.max_rel_error);
    }
}

#[test]
fn corrupted_backward_is_caught() {
    for seed in 0..5 {
        assert!(gradcheck("fixture_corrupt", seed).unwrap().max_rel_error > 1e-2);
    }
}

#[test]
fn unknown_target_is_an_error() {
    assert!(find_target("no_such_op").is_err());
    assert!(gradcheck("no_such_op", 0).is_err());
}

/// The fixed-shape conv example, checked here without the registry.
#[test]
fn conv_2x3x5x5_against_differences() {
    let mut r = rng(21);
    let x = uniform(&mut r, Dims::new(2, 3, 5, 5));
    let w = uniform(&mut r, Dims::new(4, 3, 3, 3));
    let proj = uniform(&mut r, Dims::new(2, 4, 5, 5));
    let geom = ConvGeometry::new(1, 1, 1);
    let loss = |x: &Tensor, w: &Tensor| ops::conv2d(x, w, None, geom).unwrap().dot(&proj);

    let mut tape = Tape::new();
    let (xv, wv) = (tape.leaf(x.clone()), tape.leaf(w.clone()));
    let y = tape.conv2d(xv, wv, None, geom).unwrap();
    let grads = tape.backward(y, proj.clone()).unwrap();

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (v, base, is_x) in [(xv, &x, true), (wv, &w, false)] {
        let analytic = grads.get(v).unwrap();
        for i in 0..base.numel() {
            let (mut plus, mut minus) = (base.clone(), base.clone());
            plus.data_mut()[i] += h;
            minus.data_mut()[i] -= h;
            let numeric = if is_x {
                (loss(&plus, &w) - loss(&minus, &w)) / (2.0 * h)
            } else {
                (loss(&x, &plus) - loss(&x, &minus)) / (2.0 * h)
            };
            worst = worst.max(relative_error(analytic.data()[i], numeric));
        }
    }
    assert!(worst < 1e-4, "{worst:e}");
}
