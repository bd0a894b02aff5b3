//! Static parameter and FLOP accounting over an [`ArchSpec`].
//!
//! FLOP convention: one multiply-add is one FLOP for convolutions and fully
//! connected layers. Global average pooling and channel-wise scaling cost one
//! FLOP per input element. Batch norm, activations, residual additions and the
//! stem max pool are free. [`CostReport::mac_flops`] gives the conv/FC-only
//! total for comparison.

use std::fmt::Write as _;

use serde::Serialize;

use crate::arch::spec::{ArchSpec, Downsample, IntegrationVariant, SeSettings, StageSpec, StemKind, StrideOn};
use crate::arch::BlockPosition;
use crate::error::{Error, Result};
use crate::ops::conv::conv_out_len;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    Conv,
    Linear,
    BatchNorm,
    Pool,
    Scale,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostRow {
    pub name: String,
    pub kind: RowKind,
    pub params: u64,
    pub flops: u64,
    /// Belongs to an SE unit.
    pub se: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub arch: String,
    pub input: [usize; 3],
    pub rows: Vec<CostRow>,
    pub params: u64,
    pub flops: u64,
    /// Conv and FC multiply-adds only.
    pub mac_flops: u64,
    /// Parameters inside SE units.
    pub se_extra_params: u64,
    /// Same backbone with SE removed.
    pub baseline_params: u64,
    pub baseline_flops: u64,
    pub baseline_mac_flops: u64,
    pub params_overhead_pct: f64,
    pub flops_overhead_pct: f64,
    pub mac_flops_overhead_pct: f64,
}

/// Added SE parameters with `floor(C/r)` (at least 1) bottleneck widths and no biases.
/// `stages` holds `(blocks, channels)` pairs.
pub fn se_extra_params(stages: &[(usize, usize)], r: usize) -> u64 {
    assert!(r >= 1, "reduction ratio must be positive");
    stages
        .iter()
        .map(|&(n, c)| {
            let w = (c / r).max(1) as u64;
            n as u64 * 2 * c as u64 * w
        })
        .sum()
}

/// `2/r * sum N_s C_s^2` over real numbers.
pub fn se_extra_params_ideal(stages: &[(usize, usize)], r: f64) -> f64 {
    2.0 / r * stages.iter().map(|&(n, c)| n as f64 * (c as f64).powi(2)).sum::<f64>()
}

/// Exact learned-parameter count, classifier included, BN running statistics excluded.
pub fn count_params(arch: &ArchSpec) -> Result<u64> {
    Ok(walk(arch)?.iter().map(|r| r.params).sum())
}

/// Total FLOPs under the module convention for a spec at its declared input size.
pub fn count_flops(arch: &ArchSpec) -> Result<u64> {
    Ok(walk(arch)?.iter().map(|r| r.flops).sum())
}

/// `arch` with its input resized to `h x w`.
pub fn with_input(arch: &ArchSpec, h: usize, w: usize) -> ArchSpec {
    let mut a = arch.clone();
    a.input = [a.input[0], h, w];
    a
}

pub fn analyze(arch: &ArchSpec) -> Result<CostReport> {
    let rows = walk(arch)?;
    let baseline = walk(&arch.with_variant(IntegrationVariant::None, SeSettings::default()))?;
    let sum = |rows: &[CostRow], f: fn(&CostRow) -> u64| rows.iter().map(f).sum::<u64>();
    let macs = |r: &CostRow| if matches!(r.kind, RowKind::Conv | RowKind::Linear) { r.flops } else { 0 };
    let params = sum(&rows, |r| r.params);
    let flops = sum(&rows, |r| r.flops);
    let mac_flops = sum(&rows, macs);
    let baseline_params = sum(&baseline, |r| r.params);
    let baseline_flops = sum(&baseline, |r| r.flops);
    let baseline_mac_flops = sum(&baseline, macs);
    let pct = |a: u64, b: u64| if b == 0 { 0.0 } else { 100.0 * (a as f64 - b as f64) / b as f64 };
    Ok(CostReport {
        arch: arch.name.clone(),
        input: arch.input,
        se_extra_params: rows.iter().filter(|r| r.se).map(|r| r.params).sum(),
        params_overhead_pct: pct(params, baseline_params),
        flops_overhead_pct: pct(flops, baseline_flops),
        mac_flops_overhead_pct: pct(mac_flops, baseline_mac_flops),
        rows,
        params,
        flops,
        mac_flops,
        baseline_params,
        baseline_flops,
        baseline_mac_flops,
    })
}

struct Walker {
    rows: Vec<CostRow>,
    se: bool,
}

impl Walker {
    fn push(&mut self, name: String, kind: RowKind, params: u64, flops: u64) {
        self.rows.push(CostRow {
            name,
            kind,
            params,
            flops,
            se: self.se,
        });
    }

    /// Convolution without bias; returns the output extent.
    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        groups: usize,
        bias: bool,
        (h, w): (usize, usize),
    ) -> Result<(usize, usize)> {
        let out = |len| {
            conv_out_len(len, k, stride, pad)
                .filter(|&v| v > 0)
                .ok_or_else(|| Error::Arch(format!("{name}: spatial size underflows")))
        };
        let (ho, wo) = (out(h)?, out(w)?);
        let weights = (c_out * (c_in / groups) * k * k) as u64;
        let params = weights + if bias { c_out as u64 } else { 0 };
        self.push(format!("{name}.conv"), RowKind::Conv, params, weights * (ho * wo) as u64);
        Ok((ho, wo))
    }

    fn bn(&mut self, name: &str, c: usize) {
        self.push(format!("{name}.bn"), RowKind::BatchNorm, 2 * c as u64, 0);
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_bn(
        &mut self,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        groups: usize,
        hw: (usize, usize),
    ) -> Result<(usize, usize)> {
        let out = self.conv(name, c_in, c_out, k, stride, pad, groups, false, hw)?;
        self.bn(name, c_out);
        Ok(out)
    }

    fn linear(&mut self, name: &str, c_in: usize, c_out: usize, bias: bool) {
        let w = (c_in * c_out) as u64;
        self.push(name.to_string(), RowKind::Linear, w + if bias { c_out as u64 } else { 0 }, w);
    }

    fn se(&mut self, prefix: &str, c: usize, s: &SeSettings, no_squeeze: bool, (h, w): (usize, usize)) {
        self.se = true;
        let width = (c / s.ratio).max(1);
        let hw = (h * w) as u64;
        let bias = |n: usize| if s.fc_bias { n as u64 } else { 0 };
        let (c64, w64) = (c as u64, width as u64);
        if no_squeeze {
            self.push(format!("{prefix}.conv1"), RowKind::Conv, c64 * w64 + bias(width), c64 * w64 * hw);
            self.push(format!("{prefix}.conv2"), RowKind::Conv, w64 * c64 + bias(c), w64 * c64 * hw);
        } else {
            self.push(format!("{prefix}.squeeze"), RowKind::Pool, 0, c64 * hw);
            self.linear(&format!("{prefix}.fc1"), c, width, s.fc_bias);
            self.linear(&format!("{prefix}.fc2"), width, c, s.fc_bias);
        }
        self.push(format!("{prefix}.scale"), RowKind::Scale, 0, c64 * hw);
        self.se = false;
    }

    fn bottleneck(
        &mut self,
        arch: &ArchSpec,
        stage: &StageSpec,
        pos: BlockPosition,
        c_in: usize,
        hw: (usize, usize),
    ) -> Result<(usize, usize)> {
        let name = pos.prefix();
        let stride = if pos.block == 0 { stage.stride } else { 1 };
        let (s1, s3) = match arch.stride_on {
            StrideOn::Spatial3x3 => (1, stride),
            StrideOn::Reduce1x1 => (stride, 1),
        };
        let (r, m, o) = (stage.reduce_channels, stage.bottleneck_channels, stage.out_channels);
        let settings = stage.se.unwrap_or_default();
        let v = stage.variant;
        let se_prefix = format!("{name}.se");
        if v == IntegrationVariant::Pre {
            self.se(&se_prefix, c_in, &settings, false, hw);
        }
        let hw1 = self.conv_bn(&format!("{name}.reduce"), c_in, r, 1, s1, 0, 1, hw)?;
        let hw3 = self.conv_bn(&format!("{name}.spatial"), r, m, 3, s3, 1, stage.groups, hw1)?;
        if v == IntegrationVariant::Inside3x3 {
            self.se(&se_prefix, m, &settings, false, hw3);
        }
        let out = self.conv_bn(&format!("{name}.expand"), m, o, 1, 1, 0, 1, hw3)?;
        if matches!(v, IntegrationVariant::Standard | IntegrationVariant::NoSqueeze) {
            self.se(&se_prefix, o, &settings, v == IntegrationVariant::NoSqueeze, out);
        }
        if stride != 1 || c_in != o {
            let proj = format!("{name}.proj");
            match arch.downsample {
                Downsample::Conv1x1 => self.conv_bn(&proj, c_in, o, 1, stride, 0, 1, hw)?,
                Downsample::Conv3x3 => self.conv_bn(&proj, c_in, o, 3, stride, 1, 1, hw)?,
            };
        }
        if matches!(v, IntegrationVariant::Identity | IntegrationVariant::Post) {
            self.se(&se_prefix, o, &settings, false, out);
        }
        Ok(out)
    }
}

/// Walks the spec layer by layer without building any tensors.
fn walk(arch: &ArchSpec) -> Result<Vec<CostRow>> {
    arch.validate()?;
    let mut wk = Walker {
        rows: Vec::new(),
        se: false,
    };
    let [c_in, h, w] = arch.input;
    let sc = arch.stem_channels;
    let pool = |(h, w): (usize, usize)| {
        let f = |l| conv_out_len(l, 3, 2, 1).unwrap_or(0);
        (f(h), f(w))
    };
    let mut hw = match arch.stem {
        StemKind::Cifar => wk.conv_bn("stem.1", c_in, sc, 3, 1, 1, 1, (h, w))?,
        StemKind::ImageNet => pool(wk.conv_bn("stem.1", c_in, sc, 7, 2, 3, 1, (h, w))?),
        StemKind::Deep3x3 => {
            let half = sc / 2;
            let a = wk.conv_bn("stem.1", c_in, half, 3, 2, 1, 1, (h, w))?;
            let b = wk.conv_bn("stem.2", half, half, 3, 1, 1, 1, a)?;
            pool(wk.conv_bn("stem.3", half, sc, 3, 1, 1, 1, b)?)
        }
    };
    let mut channels = sc;
    for (si, stage) in arch.stages.iter().enumerate() {
        for bi in 0..stage.blocks {
            let pos = BlockPosition { stage: si, block: bi };
            hw = wk.bottleneck(arch, stage, pos, channels, hw)?;
            channels = stage.out_channels;
        }
    }
    wk.push("head.pool".into(), RowKind::Pool, 0, (channels * hw.0 * hw.1) as u64);
    wk.linear("fc", channels, arch.classes, true);
    Ok(wk.rows)
}

impl CostReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,params,flops\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.name, r.params, r.flops);
        }
        out
    }

    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(5).max(5);
        let mut out = format!("{:<width$}  {:>12}  {:>15}\n", "layer", "params", "flops");
        for r in &self.rows {
            let _ = writeln!(out, "{:<width$}  {:>12}  {:>15}", r.name, r.params, r.flops);
        }
        let _ = writeln!(out, "{:<width$}  {:>12}  {:>15}", "total", self.params, self.flops);
        let _ = writeln!(
            out,
            "\n{}: {:.2}M params, {:.3} GFLOPs ({:.3} G conv/FC multiply-adds)",
            self.arch,
            self.params as f64 / 1e6,
            self.flops as f64 / 1e9,
            self.mac_flops as f64 / 1e9
        );
        if self.se_extra_params > 0 {
            let _ = writeln!(
                out,
                "SE units: +{} params ({:+.2}%), {:+.3}% FLOPs ({:+.3}% conv/FC only)",
                self.se_extra_params, self.params_overhead_pct, self.flops_overhead_pct, self.mac_flops_overhead_pct
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::preset;

    const R50: [(usize, usize); 4] = [(3, 256), (4, 512), (6, 1024), (3, 2048)];

    #[test]
    fn closed_form() {
        assert_eq!(se_extra_params(&R50, 16), 2_514_944);
        assert_eq!(se_extra_params(&R50, 2), 20_119_552);
        assert_eq!(se_extra_params(&[(1, 7)], 7), 14);
        assert_eq!(se_extra_params(&[(1, 7)], 100), 14);
        assert!((se_extra_params_ideal(&R50, 16.0) - 2_514_944.0).abs() < 1e-6);
    }

    #[test]
    fn report_totals_are_row_sums() {
        let r = analyze(&preset("se-resnet50-r16").unwrap()).unwrap();
        assert_eq!(r.params, r.rows.iter().map(|x| x.params).sum::<u64>());
        assert_eq!(r.flops, r.rows.iter().map(|x| x.flops).sum::<u64>());
        assert_eq!(r.se_extra_params, 2_514_944);
        assert_eq!(r.params - r.baseline_params, r.se_extra_params);
        assert!(r.to_csv().starts_with("layer,params,flops\nstem.1.conv,9408,"));
    }
}
