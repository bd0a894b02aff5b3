use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use senet_core::arch::{checkpoint, preset, preset_names, IntegrationVariant, SeSettings};
use senet_core::complexity::{analyze, with_input};
use senet_core::gradcheck::{gradcheck, TARGETS};
use senet_core::probe::{record_excitations, saturation_report};
use senet_core::train::ablation::{ablation_cases, run_ablation, write_ablation_csv};
use senet_core::train::{load_cifar10, make_synthetic, train, Normalization, SyntheticConfig, TrainConfig};
use senet_core::{build_network, ArchSpec};

#[derive(Parser)]
#[command(name = "senet", version, about = "Squeeze-and-Excitation networks: cost analysis, training and gate probes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Per-layer parameter and FLOP counts.
    Analyze {
        /// Preset name or spec file.
        #[arg(long)]
        arch: String,
        /// Input side length, or HxW.
        #[arg(long)]
        input: Option<String>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// Train from a key-value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Record SE gate statistics per block, class and channel.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Preset name or spec file the checkpoint was trained with.
        #[arg(long)]
        arch: String,
        /// CIFAR-10 binary directory; the test batch is probed.
        #[arg(long, conflicts_with = "synthetic")]
        data: Option<PathBuf>,
        /// Probe a synthetic set generated with this seed instead.
        #[arg(long)]
        synthetic: Option<u64>,
        #[arg(long, default_value_t = 50)]
        per_class: usize,
        /// Channels kept per block, evenly strided.
        #[arg(long)]
        channels: Option<usize>,
        /// Normalize by training-set channel statistics (the default for CIFAR-10).
        #[arg(long)]
        normalize: Option<bool>,
        #[arg(long, default_value = "stats.csv")]
        out: PathBuf,
    },
    /// Compare tape gradients against central finite differences.
    Gradcheck {
        #[arg(long, required_unless_present = "list")]
        target: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Exit nonzero when the worst relative error exceeds this.
        #[arg(long, default_value_t = 1e-4)]
        threshold: f64,
        /// List registered targets.
        #[arg(long)]
        list: bool,
    },
    /// Train every SE placement and excitation on the config's data and backbone.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 16)]
        ratio: usize,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List built-in architectures.
    Presets,
}

fn parse_input(s: &str) -> Result<(usize, usize)> {
    let dims: Vec<usize> = s
        .split(['x', 'X'])
        .map(|p| p.trim().parse().with_context(|| format!("bad input size `{s}`")))
        .collect::<Result<_>>()?;
    match dims[..] {
        [n] => Ok((n, n)),
        [h, w] => Ok((h, w)),
        _ => bail!("input size `{s}` should be N or HxW"),
    }
}

fn cmd_analyze(arch: &str, input: Option<&str>, format: Format) -> Result<()> {
    let mut spec = ArchSpec::resolve(arch)?;
    if let Some(s) = input {
        let (h, w) = parse_input(s)?;
        spec = with_input(&spec, h, w);
    }
    let report = analyze(&spec)?;
    match format {
        Format::Table => print!("{}", report.to_table()),
        Format::Csv => print!("{}", report.to_csv()),
        Format::Json => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

fn cmd_train(config: &PathBuf) -> Result<()> {
    let cfg = TrainConfig::load(config)?;
    let (net, report) = train(&cfg)?;
    println!("epoch  train_loss  train_acc  val_acc     lr");
    for r in &report.rows {
        let val = r.val_acc.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!("{:>5}  {:>10.5}  {:>9.4}  {:>7}  {:.3e}", r.epoch, r.train_loss, r.train_acc, val, r.lr);
    }
    println!(
        "{}: {} params, {} steps in {:.1}s{}",
        net.spec().name,
        net.param_count(),
        report.steps,
        report.wall_time.as_secs_f64(),
        if report.stopped_early { " (stopped early)" } else { "" }
    );
    if let Some(p) = &report.report_csv {
        println!("report: {}", p.display());
    }
    if let Some(p) = &report.checkpoint {
        println!("checkpoint: {}", p.display());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_probe(
    ckpt: &PathBuf,
    arch: &str,
    data: Option<&PathBuf>,
    synthetic: Option<u64>,
    per_class: usize,
    channels: Option<usize>,
    normalize: Option<bool>,
    out: &PathBuf,
) -> Result<()> {
    let spec = ArchSpec::resolve(arch)?;
    let mut net = build_network(&spec, 0)?;
    checkpoint::load_into(&mut net, ckpt)?;
    let (train_set, probe_set, default_norm) = match (data, synthetic) {
        (Some(dir), _) => {
            let (tr, te) = load_cifar10(dir)?;
            (tr, te, true)
        }
        (None, seed) => {
            let cfg = SyntheticConfig {
                seed: seed.unwrap_or(0),
                ..SyntheticConfig::default()
            };
            let set = make_synthetic(&cfg)?;
            (set.clone(), set, false)
        }
    };
    let norm = if normalize.unwrap_or(default_norm) {
        train_set.channel_stats()
    } else {
        Normalization::identity(train_set.shape()[0])
    };
    let stats = record_excitations(&mut net, &probe_set, &norm, per_class, channels)?;
    let file = File::create(out).with_context(|| format!("creating {}", out.display()))?;
    stats.write_csv(BufWriter::new(file))?;
    println!("block     similarity  saturated");
    for (block, sat) in saturation_report(&stats) {
        println!("{block:<8}  {:>10.4}  {sat:>9.3}", stats.class_similarity(&block));
    }
    println!("{} rows written to {}", stats.rows.len(), out.display());
    Ok(())
}

fn cmd_gradcheck(target: Option<&str>, seed: u64, threshold: f64, list: bool) -> Result<ExitCode> {
    if list {
        for t in TARGETS {
            println!("{:<24} {}", t.name, t.about);
        }
        return Ok(ExitCode::SUCCESS);
    }
    let target = target.expect("clap requires --target without --list");
    let report = gradcheck(target, seed)?;
    println!(
        "{} seed {}: max relative error {:.3e} over {} entries",
        report.target, report.seed, report.max_rel_error, report.checked
    );
    if let Some(w) = &report.worst {
        println!("worst: {}[{}] analytic {:.10e} numeric {:.10e}", w.input, w.index, w.analytic, w.numeric);
    }
    if report.max_rel_error > threshold {
        eprintln!("FAIL: above threshold {threshold:e}");
        return Ok(ExitCode::FAILURE);
    }
    println!("PASS");
    Ok(ExitCode::SUCCESS)
}

fn cmd_ablate(config: &PathBuf, ratio: usize, out: Option<&PathBuf>) -> Result<()> {
    if ratio == 0 {
        bail!("ratio must be at least 1");
    }
    let cfg = TrainConfig::load(config)?;
    let base = ArchSpec::resolve(&cfg.arch)?.with_variant(IntegrationVariant::None, SeSettings::default());
    let settings = SeSettings {
        ratio,
        ..SeSettings::default()
    };
    let (train_set, val_set) = cfg.data.load()?;
    let rows = run_ablation(&ablation_cases(&base, settings), &train_set, Some(&val_set), &cfg.options)?;
    match out {
        Some(path) => {
            let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_ablation_csv(&rows, BufWriter::new(file))?;
            eprintln!("{} runs written to {}", rows.len(), path.display());
        }
        None => write_ablation_csv(&rows, io::stdout().lock())?,
    }
    Ok(())
}

fn cmd_presets() -> Result<()> {
    let mut out = io::stdout().lock();
    for name in preset_names() {
        let r = analyze(&preset(name).expect("listed preset"))?;
        writeln!(out, "{name:<20} {:>8.2}M params {:>8.3} GFLOPs", r.params as f64 / 1e6, r.flops as f64 / 1e9)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Analyze { arch, input, format } => cmd_analyze(arch, input.as_deref(), *format).map(|_| ExitCode::SUCCESS),
        Command::Train { config } => cmd_train(config).map(|_| ExitCode::SUCCESS),
        Command::Probe {
            checkpoint,
            arch,
            data,
            synthetic,
            per_class,
            channels,
            normalize,
            out,
        } => cmd_probe(checkpoint, arch, data.as_ref(), *synthetic, *per_class, *channels, *normalize, out)
            .map(|_| ExitCode::SUCCESS),
        Command::Gradcheck {
            target,
            seed,
            threshold,
            list,
        } => cmd_gradcheck(target.as_deref(), *seed, *threshold, *list),
        Command::Ablate { config, ratio, out } => cmd_ablate(config, *ratio, out.as_ref()).map(|_| ExitCode::SUCCESS),
        Command::Presets => cmd_presets().map(|_| ExitCode::SUCCESS),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(2)
    })
}
