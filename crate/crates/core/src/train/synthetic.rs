//! Class-conditional blob images where the class lives in which channel lights up.
//!
//! Sample `i` has label `i % classes`. Every pixel starts as N(0, 1) noise.
//! Class `k` adds a Gaussian blob at a random position to channel `k % C`,
//! scaled so the channel mean rises by exactly `boost`. A second blob with
//! random sign and amplitude `distractor * boost` lands on a random other
//! channel; it carries no class information and averages to zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

use super::data::Dataset;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub samples: usize,
    /// `(c, h, w)`
    pub shape: [usize; 3],
    pub seed: u64,
    pub boost: f64,
    pub distractor: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            classes: 4,
            samples: 512,
            shape: [4, 8, 8],
            seed: 0,
            boost: 1.0,
            distractor: 0.5,
        }
    }
}

/// Mean-one Gaussian bump centered at `(cy, cx)`.
fn bump(h: usize, w: usize, cy: f64, cx: f64) -> Vec<f64> {
    let sigma = h.max(w) as f64 / 4.0;
    let mut b: Vec<f64> = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let mean = b.iter().sum::<f64>() / b.len() as f64;
    b.iter_mut().for_each(|v| *v /= mean);
    b
}

pub fn make_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    let [c, h, w] = cfg.shape;
    if cfg.classes == 0 || c == 0 || h == 0 || w == 0 {
        return Err(Error::Config(format!(
            "synthetic data needs positive classes and shape, got {} classes of {:?}",
            cfg.classes, cfg.shape
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let plane = h * w;
    let mut values = Vec::with_capacity(cfg.samples * c * plane);
    let mut labels = Vec::with_capacity(cfg.samples);
    for i in 0..cfg.samples {
        let k = i % cfg.classes;
        let mut img: Vec<f64> = (0..c * plane).map(|_| StandardNormal.sample(&mut rng)).collect();
        let signal = k % c;
        let b = bump(h, w, rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64));
        for (v, bv) in img[signal * plane..(signal + 1) * plane].iter_mut().zip(&b) {
            *v += cfg.boost * bv;
        }
        if c > 1 && cfg.distractor != 0.0 {
            let other = (signal + rng.random_range(1..c)) % c;
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let b = bump(h, w, rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64));
            for (v, bv) in img[other * plane..(other + 1) * plane].iter_mut().zip(&b) {
                *v += sign * cfg.distractor * cfg.boost * bv;
            }
        }
        values.extend(img);
        labels.push(k);
    }
    Dataset::from_values(cfg.shape, cfg.classes, values, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_has_unit_mean() {
        let b = bump(8, 8, 2.3, 5.9);
        assert!((b.iter().sum::<f64>() / 64.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic() {
        let cfg = SyntheticConfig::default();
        assert_eq!(make_synthetic(&cfg).unwrap(), make_synthetic(&cfg).unwrap());
        let other = SyntheticConfig { seed: 1, ..cfg.clone() };
        assert_ne!(make_synthetic(&cfg).unwrap(), make_synthetic(&other).unwrap());
    }
}
