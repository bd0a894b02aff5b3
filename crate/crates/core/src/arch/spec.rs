//! Declarative network descriptions and their text format.
//!
//! ```text
//! name = se-resnet50-r16
//! input = 3x224x224
//! classes = 1000
//! stem = imagenet          # imagenet | cifar | deep3x3
//! stem_channels = 64
//! se = standard            # default variant for every stage
//! se.ratio = 16
//! stage = blocks=3 mid=64 out=256 stride=1
//! stage = blocks=4 mid=128 out=512 stride=2 se=none
//! ```
//!
//! Stage keys: `blocks`, `out`, `mid` (3x3 width), `reduce` (first 1x1 width,
//! defaults to `mid`), `stride`, `groups`, `se`, `ratio`, `squeeze`, `excite`,
//! `bias`. Top-level keys: `name`, `input`, `classes`, `stem`,
//! `stem_channels`, `downsample` (`conv1x1` | `conv3x3`), `stride_on`
//! (`3x3` | `1x1`), `dropout`, `se`, `se.ratio`, `se.squeeze`, `se.excite`,
//! `se.bias`.

use std::fmt::{self, Write as _};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kv::{inline_pairs, parse_bool, parse_extent, KvDoc};
use crate::ops::conv::conv_out_len;
use crate::ops::{ActivationKind, PoolKind};
use crate::se::{SeConfig, DEFAULT_RATIO};

/// Where an SE unit sits relative to a residual unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum IntegrationVariant {
    /// On the residual branch output, before the summation.
    Standard,
    /// On the block input, residual path only.
    Pre,
    /// After the summation and its ReLU.
    Post,
    /// On the shortcut path.
    Identity,
    /// Right after the 3x3 convolution unit.
    Inside3x3,
    /// Standard position, but pooling removed and the FCs replaced by 1x1 convolutions.
    NoSqueeze,
    None,
}

impl IntegrationVariant {
    pub const ALL_SE: [IntegrationVariant; 6] = [
        IntegrationVariant::Standard,
        IntegrationVariant::Pre,
        IntegrationVariant::Post,
        IntegrationVariant::Identity,
        IntegrationVariant::Inside3x3,
        IntegrationVariant::NoSqueeze,
    ];

    pub fn name(self) -> &'static str {
        match self {
            IntegrationVariant::Standard => "standard",
            IntegrationVariant::Pre => "pre",
            IntegrationVariant::Post => "post",
            IntegrationVariant::Identity => "identity",
            IntegrationVariant::Inside3x3 => "inside3x3",
            IntegrationVariant::NoSqueeze => "nosqueeze",
            IntegrationVariant::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.to_ascii_lowercase().as_str() {
            "standard" | "se" => IntegrationVariant::Standard,
            "pre" => IntegrationVariant::Pre,
            "post" => IntegrationVariant::Post,
            "identity" => IntegrationVariant::Identity,
            "inside3x3" | "se_3x3" | "3x3" => IntegrationVariant::Inside3x3,
            "nosqueeze" => IntegrationVariant::NoSqueeze,
            "none" => IntegrationVariant::None,
            _ => return None,
        })
    }

    pub fn has_se(self) -> bool {
        self != IntegrationVariant::None
    }
}

impl fmt::Display for IntegrationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// SE knobs that do not depend on where the unit is placed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SeSettings {
    pub ratio: usize,
    pub squeeze: PoolKind,
    pub excitation: ActivationKind,
    pub fc_bias: bool,
}

impl Default for SeSettings {
    fn default() -> Self {
        SeSettings {
            ratio: DEFAULT_RATIO,
            squeeze: PoolKind::Avg,
            excitation: ActivationKind::Sigmoid,
            fc_bias: false,
        }
    }
}

impl SeSettings {
    pub fn for_channels(&self, channels: usize) -> SeConfig {
        SeConfig {
            channels,
            ratio: self.ratio,
            squeeze: self.squeeze,
            excitation: self.excitation,
            fc_bias: self.fc_bias,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageSpec {
    pub blocks: usize,
    pub out_channels: usize,
    /// Width of the 3x3 convolution.
    pub bottleneck_channels: usize,
    /// Width of the first 1x1 convolution; equals `bottleneck_channels` unless halved.
    pub reduce_channels: usize,
    pub stride: usize,
    pub groups: usize,
    pub variant: IntegrationVariant,
    pub se: Option<SeSettings>,
}

impl StageSpec {
    pub fn plain(blocks: usize, bottleneck: usize, out: usize, stride: usize) -> Self {
        StageSpec {
            blocks,
            out_channels: out,
            bottleneck_channels: bottleneck,
            reduce_channels: bottleneck,
            stride,
            groups: 1,
            variant: IntegrationVariant::None,
            se: None,
        }
    }

    pub fn with_se(mut self, variant: IntegrationVariant, settings: SeSettings) -> Self {
        self.variant = variant;
        self.se = variant.has_se().then_some(settings);
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn validate(&self, index: usize) -> Result<()> {
        let err = |m: String| Err(Error::Arch(format!("stage {}: {m}", index + 1)));
        if self.blocks == 0 {
            return err("needs at least one block".into());
        }
        if self.out_channels == 0 || self.bottleneck_channels == 0 || self.reduce_channels == 0 {
            return err("channel counts must be positive".into());
        }
        if !(1..=2).contains(&self.stride) {
            return err(format!("stride {} not in {{1, 2}}", self.stride));
        }
        if self.groups == 0
            || self.bottleneck_channels % self.groups != 0
            || self.reduce_channels % self.groups != 0
        {
            return err(format!(
                "groups {} must divide widths {}/{}",
                self.groups, self.reduce_channels, self.bottleneck_channels
            ));
        }
        if self.variant.has_se() != self.se.is_some() {
            return err(format!("variant {} inconsistent with SE settings", self.variant));
        }
        if let Some(se) = &self.se {
            if se.ratio == 0 {
                return err("SE ratio must be positive".into());
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum StemKind {
    /// 7x7 stride-2 convolution, BN, ReLU, 3x3 stride-2 max pool.
    ImageNet,
    /// One 3x3 stride-1 convolution, BN, ReLU.
    Cifar,
    /// Three 3x3 convolutions (first stride 2), each with BN and ReLU, then the 3x3 max pool.
    Deep3x3,
}

impl StemKind {
    pub fn name(self) -> &'static str {
        match self {
            StemKind::ImageNet => "imagenet",
            StemKind::Cifar => "cifar",
            StemKind::Deep3x3 => "deep3x3",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "imagenet" => Some(StemKind::ImageNet),
            "cifar" => Some(StemKind::Cifar),
            "deep3x3" => Some(StemKind::Deep3x3),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Downsample {
    Conv1x1,
    Conv3x3,
}

/// Which convolution of the first block of a stage carries the stride.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum StrideOn {
    Spatial3x3,
    Reduce1x1,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArchSpec {
    pub name: String,
    /// `(channels, height, width)` of one input sample.
    pub input: [usize; 3],
    pub classes: usize,
    pub stem: StemKind,
    pub stem_channels: usize,
    pub stages: Vec<StageSpec>,
    pub downsample: Downsample,
    pub stride_on: StrideOn,
    pub dropout: f64,
}

/// Spatial size after every stage, for diagnostics and cost accounting.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpatialPlan {
    pub after_stem: (usize, usize),
    pub stages: Vec<(usize, usize)>,
}

const TOP_KEYS: &[&str] = &[
    "name",
    "input",
    "classes",
    "stem",
    "stem_channels",
    "downsample",
    "stride_on",
    "dropout",
    "stage",
    "se",
    "se.ratio",
    "se.squeeze",
    "se.excite",
    "se.bias",
];

impl ArchSpec {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let doc = KvDoc::parse(text, origin)?;
        Self::from_doc(&doc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Loads a preset name or a spec file path.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        match preset(name_or_path) {
            Some(spec) => Ok(spec),
            None => Self::load(Path::new(name_or_path)),
        }
    }

    pub fn from_doc(doc: &KvDoc) -> Result<Self> {
        doc.reject_unknown(TOP_KEYS)?;
        let bad = |key: &str, what: &str| {
            let line = doc.get(key).map_or(0, |e| e.line);
            doc.error(line, format!("`{key}`: {what}"))
        };

        let input = match doc.get("input") {
            Some(e) => match parse_extent(&e.value).as_deref() {
                Some(&[c, h, w]) => [c, h, w],
                _ => return Err(bad("input", "expected CxHxW")),
            },
            None => return Err(bad("input", "missing")),
        };
        let stem = StemKind::parse(doc.str_or("stem", "imagenet"))
            .ok_or_else(|| bad("stem", "expected imagenet | cifar | deep3x3"))?;
        let downsample = match doc.str_or("downsample", "conv1x1") {
            "conv1x1" => Downsample::Conv1x1,
            "conv3x3" => Downsample::Conv3x3,
            _ => return Err(bad("downsample", "expected conv1x1 | conv3x3")),
        };
        let stride_on = match doc.str_or("stride_on", "3x3") {
            "3x3" => StrideOn::Spatial3x3,
            "1x1" => StrideOn::Reduce1x1,
            _ => return Err(bad("stride_on", "expected 3x3 | 1x1")),
        };

        let default_variant = IntegrationVariant::parse(doc.str_or("se", "none"))
            .ok_or_else(|| bad("se", "unknown integration variant"))?;
        let mut se_defaults = SeSettings {
            ratio: doc.parsed_or("se.ratio", DEFAULT_RATIO)?,
            ..SeSettings::default()
        };
        if let Some(e) = doc.get("se.squeeze") {
            se_defaults.squeeze = PoolKind::parse(&e.value).ok_or_else(|| bad("se.squeeze", "expected avg | max"))?;
        }
        if let Some(e) = doc.get("se.excite") {
            se_defaults.excitation = ActivationKind::parse(&e.value)
                .ok_or_else(|| bad("se.excite", "expected sigmoid | tanh | relu"))?;
        }
        if let Some(e) = doc.get("se.bias") {
            se_defaults.fc_bias = parse_bool(&e.value).ok_or_else(|| bad("se.bias", "expected true | false"))?;
        }

        let mut stages = Vec::new();
        for e in doc.all("stage") {
            let pairs = inline_pairs(&e.value).map_err(|m| doc.error(e.line, m))?;
            stages.push(parse_stage(&pairs, default_variant, se_defaults).map_err(|m| doc.error(e.line, m))?);
        }

        let spec = ArchSpec {
            name: doc.str_or("name", "unnamed").to_string(),
            input,
            classes: doc.required("classes")?,
            stem,
            stem_channels: doc.parsed_or("stem_channels", 64)?,
            stages,
            downsample,
            stride_on,
            dropout: doc.parsed_or("dropout", 0.0)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Arch(format!("{}: no stages", self.name)));
        }
        if self.classes == 0 || self.stem_channels == 0 || self.input.contains(&0) {
            return Err(Error::Arch(format!(
                "{}: classes, stem width and input extents must be positive",
                self.name
            )));
        }
        if self.stem == StemKind::Deep3x3 && self.stem_channels < 2 {
            return Err(Error::Arch("deep3x3 stem needs at least 2 channels".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Arch(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        for (i, s) in self.stages.iter().enumerate() {
            s.validate(i)?;
        }
        self.spatial_plan().map(|_| ())
    }

    /// Tracks spatial extents through the stem and every stage.
    pub fn spatial_plan(&self) -> Result<SpatialPlan> {
        let underflow = |at: &str| Error::Arch(format!("{}: spatial size underflows at {at}", self.name));
        let step = |len: usize, k: usize, s: usize, p: usize, at: &str| {
            conv_out_len(len, k, s, p).filter(|&v| v > 0).ok_or_else(|| underflow(at))
        };
        let [_, mut h, mut w] = self.input;
        match self.stem {
            StemKind::Cifar => {
                h = step(h, 3, 1, 1, "stem")?;
                w = step(w, 3, 1, 1, "stem")?;
            }
            StemKind::ImageNet => {
                h = step(step(h, 7, 2, 3, "stem conv")?, 3, 2, 1, "stem pool")?;
                w = step(step(w, 7, 2, 3, "stem conv")?, 3, 2, 1, "stem pool")?;
            }
            StemKind::Deep3x3 => {
                h = step(step(h, 3, 2, 1, "stem conv")?, 3, 2, 1, "stem pool")?;
                w = step(step(w, 3, 2, 1, "stem conv")?, 3, 2, 1, "stem pool")?;
            }
        }
        let after_stem = (h, w);
        let mut stages = Vec::with_capacity(self.stages.len());
        for (i, s) in self.stages.iter().enumerate() {
            let at = format!("stage {}", i + 1);
            // Both placements of the stride give the same extent: a strided 1x1
            // without padding and a strided 3x3 with padding 1.
            h = step(h, 3, s.stride, 1, &at)?;
            w = step(w, 3, s.stride, 1, &at)?;
            stages.push((h, w));
        }
        Ok(SpatialPlan { after_stem, stages })
    }

    /// Stage ID used in SE block labels (`SE_<stage>_<block>`): the first stage is 2.
    pub fn stage_id(stage_index: usize) -> usize {
        stage_index + 2
    }

    /// Same network with every stage's SE replaced.
    pub fn with_variant(&self, variant: IntegrationVariant, settings: SeSettings) -> ArchSpec {
        let mut out = self.clone();
        for s in &mut out.stages {
            *s = s.clone().with_se(variant, settings);
        }
        out
    }

    /// Renders the spec back into the text format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "name = {}", self.name);
        let _ = writeln!(out, "input = {}x{}x{}", self.input[0], self.input[1], self.input[2]);
        let _ = writeln!(out, "classes = {}", self.classes);
        let _ = writeln!(out, "stem = {}", self.stem.name());
        let _ = writeln!(out, "stem_channels = {}", self.stem_channels);
        if self.downsample == Downsample::Conv3x3 {
            let _ = writeln!(out, "downsample = conv3x3");
        }
        if self.stride_on == StrideOn::Reduce1x1 {
            let _ = writeln!(out, "stride_on = 1x1");
        }
        if self.dropout > 0.0 {
            let _ = writeln!(out, "dropout = {}", self.dropout);
        }
        for s in &self.stages {
            let _ = write!(
                out,
                "stage = blocks={} mid={} out={} stride={} groups={} se={}",
                s.blocks, s.bottleneck_channels, s.out_channels, s.stride, s.groups, s.variant
            );
            if s.reduce_channels != s.bottleneck_channels {
                let _ = write!(out, " reduce={}", s.reduce_channels);
            }
            if let Some(se) = &s.se {
                let _ = write!(
                    out,
                    " ratio={} squeeze={} excite={} bias={}",
                    se.ratio,
                    se.squeeze.name(),
                    se.excitation.name(),
                    se.fc_bias
                );
            }
            out.push('\n');
        }
        out
    }
}

fn parse_stage(
    pairs: &[(&str, &str)],
    default_variant: IntegrationVariant,
    se_defaults: SeSettings,
) -> std::result::Result<StageSpec, String> {
    let num = |k: &str, v: &str| v.parse::<usize>().map_err(|_| format!("stage `{k}`: bad number `{v}`"));
    let mut blocks = None;
    let mut out = None;
    let mut mid = None;
    let mut reduce = None;
    let mut stride = 1;
    let mut groups = 1;
    let mut variant = default_variant;
    let mut se = se_defaults;
    for &(k, v) in pairs {
        match k {
            "blocks" => blocks = Some(num(k, v)?),
            "out" => out = Some(num(k, v)?),
            "mid" => mid = Some(num(k, v)?),
            "reduce" => reduce = Some(num(k, v)?),
            "stride" => stride = num(k, v)?,
            "groups" => groups = num(k, v)?,
            "ratio" => se.ratio = num(k, v)?,
            "se" => variant = IntegrationVariant::parse(v).ok_or_else(|| format!("unknown variant `{v}`"))?,
            "squeeze" => se.squeeze = PoolKind::parse(v).ok_or_else(|| format!("unknown squeeze `{v}`"))?,
            "excite" => {
                se.excitation = ActivationKind::parse(v).ok_or_else(|| format!("unknown excitation `{v}`"))?
            }
            "bias" => se.fc_bias = parse_bool(v).ok_or_else(|| format!("bad bool `{v}`"))?,
            other => return Err(format!("unknown stage key `{other}`")),
        }
    }
    let blocks = blocks.ok_or("stage needs `blocks`")?;
    let out = out.ok_or("stage needs `out`")?;
    let mid = mid.ok_or("stage needs `mid`")?;
    Ok(StageSpec {
        blocks,
        out_channels: out,
        bottleneck_channels: mid,
        reduce_channels: reduce.unwrap_or(mid),
        stride,
        groups,
        variant,
        se: variant.has_se().then_some(se),
    })
}

const PRESETS: &[(&str, &str)] = &[
    ("resnet50", include_str!("../../presets/resnet50.arch")),
    ("se-resnet50-r16", include_str!("../../presets/se-resnet50-r16.arch")),
    ("se-resnext50-32x4d", include_str!("../../presets/se-resnext50-32x4d.arch")),
    ("senet154", include_str!("../../presets/senet154.arch")),
    ("toy", include_str!("../../presets/toy.arch")),
    ("toy-se", include_str!("../../presets/toy-se.arch")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

pub fn preset_text(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn preset(name: &str) -> Option<ArchSpec> {
    preset_text(name).map(|t| ArchSpec::parse(t, name).expect("shipped presets parse"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_parses_and_round_trips() {
        for name in preset_names() {
            let spec = preset(name).unwrap();
            let again = ArchSpec::parse(&spec.to_text(), name).unwrap();
            assert_eq!(spec, again, "{name}");
        }
    }

    #[test]
    fn resnet50_layout() {
        let spec = preset("resnet50").unwrap();
        let blocks: Vec<usize> = spec.stages.iter().map(|s| s.blocks).collect();
        assert_eq!(blocks, [3, 4, 6, 3]);
        assert_eq!(spec.stages[0].bottleneck_channels, 64);
        assert_eq!(spec.stages[0].out_channels, 256);
        let plan = spec.spatial_plan().unwrap();
        assert_eq!(plan.after_stem, (56, 56));
        assert_eq!(plan.stages, [(56, 56), (28, 28), (14, 14), (7, 7)]);
        assert!(spec.stages.iter().all(|s| s.variant == IntegrationVariant::None));
    }

    #[test]
    fn resnext_groups() {
        let spec = preset("se-resnext50-32x4d").unwrap();
        assert_eq!(spec.stages[0].bottleneck_channels, 128);
        assert_eq!(spec.stages[0].groups, 32);
        assert_eq!(spec.stages[0].variant, IntegrationVariant::Standard);
    }

    #[test]
    fn stage_overrides() {
        let text = "input = 3x8x8\nclasses = 2\nstem = cifar\nse = standard\nse.ratio = 4\n\
                    stage = blocks=1 mid=4 out=8\nstage = blocks=1 mid=4 out=8 stride=2 se=post excite=tanh ratio=2\n";
        let spec = ArchSpec::parse(text, "t").unwrap();
        assert_eq!(spec.stages[0].se.unwrap().ratio, 4);
        assert_eq!(spec.stages[1].variant, IntegrationVariant::Post);
        let se = spec.stages[1].se.unwrap();
        assert_eq!((se.ratio, se.excitation), (2, ActivationKind::Tanh));
    }

    #[test]
    fn invalid_specs() {
        let base = "input = 3x8x8\nclasses = 2\nstem = cifar\n";
        for bad in [
            "stage = blocks=1 mid=6 out=8 groups=4\n",
            "stage = blocks=1 mid=4 out=8 stride=3\n",
            "stage = blocks=0 mid=4 out=8\n",
            "stage = blocks=1 out=8\n",
            "stage = blocks=1 mid=4 out=8 wat=1\n",
            "",
        ] {
            assert!(ArchSpec::parse(&format!("{base}{bad}"), "t").is_err(), "{bad}");
        }
        let underflow = "input = 3x2x2\nclasses = 2\nstem = imagenet\nstage = blocks=1 mid=4 out=8 stride=2\nstage = blocks=1 mid=4 out=8 stride=2\n";
        assert!(ArchSpec::parse(underflow, "t").is_ok());
        let deep = "input = 3x1x1\nclasses = 2\nstem = imagenet\nstage = blocks=1 mid=4 out=8 stride=2\n";
        assert!(ArchSpec::parse(deep, "t").is_ok());
        assert!(ArchSpec::parse("classes = 2\nstage = blocks=1 mid=4 out=8\n", "t").is_err());
    }
}
