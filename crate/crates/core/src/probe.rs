//! Excitation statistics: per block, class and channel mean/std of SE gate outputs.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::arch::{GateHook, Network};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::train::trainer::make_batch;
use crate::train::{Dataset, Normalization};

/// Records every gate it sees, keyed by block label, one channel vector per sample.
/// Gates with spatial extent are averaged over positions first.
#[derive(Debug, Default)]
pub struct Recorder {
    pub gates: BTreeMap<String, Vec<Vec<f64>>>,
}

impl GateHook for Recorder {
    fn gate(&mut self, label: &str, gate: &Tensor) -> Option<Tensor> {
        let d = gate.dims();
        let plane = d.plane();
        let rows = self.gates.entry(label.to_string()).or_default();
        for n in 0..d.n {
            let sample = &gate.data()[n * d.sample()..(n + 1) * d.sample()];
            rows.push(sample.chunks(plane).map(|c| c.iter().sum::<f64>() / plane as f64).collect());
        }
        None
    }
}

/// One aggregate. `class == None` is the all-classes row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcitationRow {
    pub block: String,
    #[serde(with = "class_field")]
    pub class: Option<usize>,
    pub channel: usize,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

mod class_field {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(c) => s.serialize_str(&c.to_string()),
            None => s.serialize_str("all"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        let s = String::deserialize(d)?;
        if s == "all" {
            return Ok(None);
        }
        s.parse().map(Some).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExcitationStats {
    pub rows: Vec<ExcitationRow>,
}

/// Population mean and standard deviation, two-pass.
fn moments(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `m` channel indices spread with a uniform stride over `0..c` (all of them if `m >= c`).
pub fn strided_channels(c: usize, m: Option<usize>) -> Vec<usize> {
    match m {
        Some(m) if m > 0 && m < c => (0..m).map(|i| i * c / m).collect(),
        _ => (0..c).collect(),
    }
}

impl ExcitationStats {
    /// Aggregates recorded gates. `labels[i]` is the class of the i-th recorded sample.
    pub fn from_records(
        gates: &BTreeMap<String, Vec<Vec<f64>>>,
        labels: &[usize],
        channel_subsample: Option<usize>,
    ) -> Result<Self> {
        let mut rows = Vec::new();
        let mut classes: Vec<usize> = labels.to_vec();
        classes.sort_unstable();
        classes.dedup();
        for (block, samples) in gates {
            if samples.len() != labels.len() {
                return Err(Error::Probe(format!(
                    "{block}: {} gate vectors for {} labels",
                    samples.len(),
                    labels.len()
                )));
            }
            let c = samples.first().map_or(0, Vec::len);
            for ch in strided_channels(c, channel_subsample) {
                for &k in &classes {
                    let vals: Vec<f64> = samples
                        .iter()
                        .zip(labels)
                        .filter(|(_, &l)| l == k)
                        .map(|(s, _)| s[ch])
                        .collect();
                    let (mean, std) = moments(&vals);
                    rows.push(ExcitationRow {
                        block: block.clone(),
                        class: Some(k),
                        channel: ch,
                        mean,
                        std,
                        count: vals.len(),
                    });
                }
                let vals: Vec<f64> = samples.iter().map(|s| s[ch]).collect();
                let (mean, std) = moments(&vals);
                rows.push(ExcitationRow {
                    block: block.clone(),
                    class: None,
                    channel: ch,
                    mean,
                    std,
                    count: vals.len(),
                });
            }
        }
        Ok(ExcitationStats { rows })
    }

    /// Block labels in first-seen order.
    pub fn blocks(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.block) {
                out.push(r.block.clone());
            }
        }
        out
    }

    pub fn classes(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.rows.iter().filter_map(|r| r.class).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Mean gate per channel for `class` (`None` for all classes), ordered by channel.
    pub fn mean_vector(&self, block: &str, class: Option<usize>) -> Vec<f64> {
        let mut v: Vec<(usize, f64)> = self
            .rows
            .iter()
            .filter(|r| r.block == block && r.class == class)
            .map(|r| (r.channel, r.mean))
            .collect();
        v.sort_by_key(|&(c, _)| c);
        v.into_iter().map(|(_, m)| m).collect()
    }

    /// Mean pairwise cosine similarity between the per-class mean vectors of `block`.
    pub fn class_similarity(&self, block: &str) -> f64 {
        let vecs: Vec<Vec<f64>> = self
            .classes()
            .into_iter()
            .map(|k| self.mean_vector(block, Some(k)))
            .collect();
        mean_pairwise_cosine(&vecs)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["block", "class", "channel", "mean", "std", "count"] {
            return Err(Error::Probe(format!("unexpected stats header {headers:?}")));
        }
        let rows = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
        Ok(ExcitationStats { rows })
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

pub fn mean_pairwise_cosine(vecs: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0;
    for i in 0..vecs.len() {
        for j in i + 1..vecs.len() {
            total += cosine(&vecs[i], &vecs[j]);
            pairs += 1;
        }
    }
    if pairs == 0 {
        1.0
    } else {
        total / pairs as f64
    }
}

/// The first `per_class` indices of every class, in dataset order.
pub fn per_class_indices(data: &Dataset, per_class: usize) -> Vec<usize> {
    let mut taken = vec![0usize; data.classes()];
    let mut out = Vec::new();
    for (i, &l) in data.labels().iter().enumerate() {
        if taken[l] < per_class {
            taken[l] += 1;
            out.push(i);
        }
    }
    out
}

/// Runs `indices` through `net` in eval mode and aggregates every SE gate.
pub fn record_excitations_at(
    net: &mut Network,
    data: &Dataset,
    norm: &Normalization,
    indices: &[usize],
    channel_subsample: Option<usize>,
) -> Result<ExcitationStats> {
    if net.se_units().is_empty() {
        return Err(Error::Probe(format!("network `{}` has no SE blocks", net.spec().name)));
    }
    if indices.is_empty() {
        return Err(Error::Probe("no samples selected".into()));
    }
    let mut rec = Recorder::default();
    let mut labels = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(64) {
        let (x, y) = make_batch(data, chunk, norm, None)?;
        net.predict_with_hook(&x, &mut rec)?;
        labels.extend(y);
    }
    ExcitationStats::from_records(&rec.gates, &labels, channel_subsample)
}

pub fn record_excitations(
    net: &mut Network,
    data: &Dataset,
    norm: &Normalization,
    samples_per_class: usize,
    channel_subsample: Option<usize>,
) -> Result<ExcitationStats> {
    let indices = per_class_indices(data, samples_per_class);
    record_excitations_at(net, data, norm, &indices, channel_subsample)
}

/// Fraction of per-class channel means above 0.9, per block.
pub fn saturation_report(stats: &ExcitationStats) -> Vec<(String, f64)> {
    stats
        .blocks()
        .into_iter()
        .map(|b| {
            let means: Vec<f64> = stats
                .rows
                .iter()
                .filter(|r| r.block == b && r.class.is_some())
                .map(|r| r.mean)
                .collect();
            let hot = means.iter().filter(|&&m| m > 0.9).count();
            let frac = if means.is_empty() { 0.0 } else { hot as f64 / means.len() as f64 };
            (b, frac)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strided() {
        assert_eq!(strided_channels(10, Some(5)), vec![0, 2, 4, 6, 8]);
        assert_eq!(strided_channels(3, Some(5)), vec![0, 1, 2]);
        assert_eq!(strided_channels(4, None), vec![0, 1, 2, 3]);
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine(&[1.0, 0.0], &[2.0, 0.0]) - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
        assert_eq!(mean_pairwise_cosine(&[vec![1.0]]), 1.0);
    }
}
