//! Trains one network per SE integration variant and per excitation non-linearity.

use crate::arch::{build_network, ArchSpec, IntegrationVariant, SeSettings};
use crate::error::Result;
use crate::ops::ActivationKind;

use super::data::Dataset;
use super::trainer::{fit, TrainOptions};

#[derive(Clone, Debug)]
pub struct AblationCase {
    pub name: String,
    pub variant: IntegrationVariant,
    pub excitation: ActivationKind,
    pub arch: ArchSpec,
}

/// Baseline, every integration variant with `settings`, then the standard
/// placement under each non-sigmoid excitation.
pub fn ablation_cases(base: &ArchSpec, settings: SeSettings) -> Vec<AblationCase> {
    let case = |name: String, variant, settings: SeSettings| AblationCase {
        name,
        variant,
        excitation: settings.excitation,
        arch: base.with_variant(variant, settings),
    };
    let mut out = vec![case("none".into(), IntegrationVariant::None, settings)];
    for v in IntegrationVariant::ALL_SE {
        out.push(case(format!("variant:{v}"), v, settings));
    }
    for e in [ActivationKind::Relu, ActivationKind::Tanh] {
        if e != settings.excitation {
            let s = SeSettings { excitation: e, ..settings };
            out.push(case(format!("excite:{}", e.name()), IntegrationVariant::Standard, s));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub variant: IntegrationVariant,
    pub excitation: ActivationKind,
    pub params: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

pub fn run_ablation(
    cases: &[AblationCase],
    train: &Dataset,
    val: Option<&Dataset>,
    opts: &TrainOptions,
) -> Result<Vec<AblationRow>> {
    cases
        .iter()
        .map(|c| {
            let mut net = build_network(&c.arch, opts.seed)?;
            let report = fit(&mut net, train, val, opts, None)?;
            let last = report.rows.last().expect("at least one epoch");
            Ok(AblationRow {
                name: c.name.clone(),
                variant: c.variant,
                excitation: c.excitation,
                params: net.param_count(),
                train_loss: last.train_loss,
                train_acc: last.train_acc,
                val_acc: last.val_acc,
            })
        })
        .collect()
}

pub fn write_ablation_csv<W: std::io::Write>(rows: &[AblationRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["name", "variant", "excitation", "params", "train_loss", "train_acc", "val_acc"])?;
    for r in rows {
        out.write_record([
            r.name.clone(),
            r.variant.to_string(),
            r.excitation.name().to_string(),
            r.params.to_string(),
            r.train_loss.to_string(),
            r.train_acc.to_string(),
            r.val_acc.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
