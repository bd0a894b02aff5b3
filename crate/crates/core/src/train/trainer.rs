//! The epoch loop, its key-value config file and the per-epoch report.
//!
//! ```text
//! arch = toy-se            # preset name or spec file
//! data = synthetic         # synthetic | cifar10
//! synthetic.samples = 512
//! epochs = 30
//! batch_size = 32
//! lr = 0.05
//! lr_schedule = 20, 25     # epochs (0-based) where lr drops by lr_decay
//! out = runs/toy
//! ```

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::arch::{build_network, checkpoint, ArchSpec, Mode, Network, NoHook};
use crate::error::{Error, Result};
use crate::kv::{parse_bool, parse_extent, KvDoc};
use crate::tape::Tape;
use crate::tensor::Tensor;

use super::augment::{augment, CROP_PADDING};
use super::cifar::load_cifar10;
use super::data::{Dataset, Normalization};
use super::loss::{label_smoothing_loss, DEFAULT_LABEL_SMOOTHING};
use super::sgd::{Sgd, StepSchedule};
use super::synthetic::{make_synthetic, SyntheticConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay: f64,
    pub lr_schedule: Vec<usize>,
    pub label_smoothing: f64,
    pub seed: u64,
    /// Pad-crop-flip augmentation of training images.
    pub augment: bool,
    /// Normalize inputs by the training set's per-channel mean and std.
    pub normalize: bool,
    /// From this epoch (0-based, at least 1) on, BN layers use their running statistics.
    pub freeze_bn_from: Option<usize>,
    /// Stop once the validation loss has not improved for this many epochs.
    pub patience: Option<usize>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 30,
            batch_size: 32,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_decay: 10.0,
            lr_schedule: Vec::new(),
            label_smoothing: DEFAULT_LABEL_SMOOTHING,
            seed: 0,
            augment: false,
            normalize: false,
            freeze_bn_from: None,
            patience: None,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size {} < 2; batch norm needs two samples", self.batch_size));
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return bad(format!("label_smoothing {} not in [0, 0.5)", self.label_smoothing));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {} must be finite and non-negative", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return bad(format!("lr_decay {} must be positive", self.lr_decay));
        }
        if self.freeze_bn_from == Some(0) {
            return bad("freeze_bn_from must be at least 1 so running statistics exist".into());
        }
        Ok(())
    }

    pub fn schedule(&self) -> StepSchedule {
        StepSchedule {
            initial: self.lr,
            factor: self.lr_decay,
            milestones: self.lr_schedule.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic { train: SyntheticConfig, val_samples: usize },
    Cifar10 { dir: PathBuf },
}

impl DataSource {
    /// Training and validation sets.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match self {
            DataSource::Synthetic { train, val_samples } => {
                let val = SyntheticConfig {
                    samples: *val_samples,
                    seed: train.seed ^ 0x5eed_0f_7a1,
                    ..train.clone()
                };
                Ok((make_synthetic(train)?, make_synthetic(&val)?))
            }
            DataSource::Cifar10 { dir } => load_cifar10(dir),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Preset name or spec file path.
    pub arch: String,
    pub data: DataSource,
    pub options: TrainOptions,
    /// Directory for `report.csv` and `final.ckpt`.
    pub out: Option<PathBuf>,
}

const CONFIG_KEYS: &[&str] = &[
    "arch",
    "data",
    "data.dir",
    "synthetic.classes",
    "synthetic.samples",
    "synthetic.val_samples",
    "synthetic.shape",
    "synthetic.seed",
    "synthetic.boost",
    "synthetic.distractor",
    "epochs",
    "batch_size",
    "lr",
    "momentum",
    "weight_decay",
    "lr_decay",
    "lr_schedule",
    "label_smoothing",
    "seed",
    "augment",
    "normalize",
    "freeze_bn_from",
    "patience",
    "out",
];

impl TrainConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let doc = KvDoc::parse(text, origin)?;
        doc.reject_unknown(CONFIG_KEYS)?;
        let d = TrainOptions::default();
        let seed = doc.parsed_or("seed", d.seed)?;
        let flag = |key: &str, default: bool| -> Result<bool> {
            match doc.get(key) {
                None => Ok(default),
                Some(e) => parse_bool(&e.value).ok_or_else(|| doc.error(e.line, format!("`{key}` expects true/false"))),
            }
        };
        let (data, image_like) = match doc.str_or("data", "synthetic") {
            "synthetic" => {
                let sd = SyntheticConfig::default();
                let shape = match doc.get("synthetic.shape") {
                    None => sd.shape,
                    Some(e) => match parse_extent(&e.value).as_deref() {
                        Some(&[c, h, w]) => [c, h, w],
                        _ => return Err(doc.error(e.line, "synthetic.shape expects CxHxW")),
                    },
                };
                let train = SyntheticConfig {
                    classes: doc.parsed_or("synthetic.classes", sd.classes)?,
                    samples: doc.parsed_or("synthetic.samples", sd.samples)?,
                    shape,
                    seed: doc.parsed_or("synthetic.seed", seed)?,
                    boost: doc.parsed_or("synthetic.boost", sd.boost)?,
                    distractor: doc.parsed_or("synthetic.distractor", sd.distractor)?,
                };
                let val_samples = doc.parsed_or("synthetic.val_samples", train.samples / 4)?;
                (DataSource::Synthetic { train, val_samples }, false)
            }
            "cifar10" => {
                let dir = doc
                    .get("data.dir")
                    .ok_or_else(|| doc.error(0, "data = cifar10 needs `data.dir`"))?;
                (DataSource::Cifar10 { dir: PathBuf::from(&dir.value) }, true)
            }
            other => {
                let line = doc.get("data").map_or(0, |e| e.line);
                return Err(doc.error(line, format!("unknown data source `{other}`")));
            }
        };
        let lr_schedule = match doc.get("lr_schedule") {
            None => Vec::new(),
            Some(e) => e
                .value
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|_| doc.error(e.line, format!("bad epoch `{s}` in lr_schedule"))))
                .collect::<Result<_>>()?,
        };
        let options = TrainOptions {
            epochs: doc.parsed_or("epochs", d.epochs)?,
            batch_size: doc.parsed_or("batch_size", d.batch_size)?,
            lr: doc.parsed_or("lr", d.lr)?,
            momentum: doc.parsed_or("momentum", d.momentum)?,
            weight_decay: doc.parsed_or("weight_decay", d.weight_decay)?,
            lr_decay: doc.parsed_or("lr_decay", d.lr_decay)?,
            lr_schedule,
            label_smoothing: doc.parsed_or("label_smoothing", d.label_smoothing)?,
            seed,
            augment: flag("augment", image_like)?,
            normalize: flag("normalize", image_like)?,
            freeze_bn_from: doc.parsed("freeze_bn_from")?,
            patience: doc.parsed::<usize>("patience")?.filter(|&p| p > 0),
        };
        options.validate()?;
        Ok(TrainConfig {
            arch: doc.str_or("arch", "toy-se").to_string(),
            data,
            options,
            out: doc.get("out").map(|e| PathBuf::from(&e.value)),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRow {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub rows: Vec<EpochRow>,
    pub wall_time: Duration,
    pub steps: usize,
    pub stopped_early: bool,
    pub checkpoint: Option<PathBuf>,
    pub report_csv: Option<PathBuf>,
}

impl TrainReport {
    pub fn final_train_acc(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.train_acc)
    }

    pub fn best_train_acc(&self) -> f64 {
        self.rows.iter().map(|r| r.train_acc).fold(0.0, f64::max)
    }

    /// `epoch,train_loss,train_acc,val_acc,lr`; `val_acc` is empty without a validation set.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "train_loss", "train_acc", "val_acc", "lr"])?;
        for r in &self.rows {
            out.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.train_acc.to_string(),
                r.val_acc.map(|v| v.to_string()).unwrap_or_default(),
                r.lr.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// splitmix64 over a seed and a path of indices.
pub(crate) fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    path.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p)))
}

/// Stacks images at `indices` into one batch. With `augment = Some((seed, epoch))`
/// each image gets its own stream derived from `(seed, epoch, index)`.
pub fn make_batch(
    data: &Dataset,
    indices: &[usize],
    norm: &Normalization,
    augment_with: Option<(u64, usize)>,
) -> Result<(Tensor, Vec<usize>)> {
    let images: Vec<Tensor> = indices
        .par_iter()
        .map(|&i| {
            let img = data.image(i);
            match augment_with {
                Some((seed, epoch)) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[epoch as u64, i as u64]));
                    augment(&img, norm, &mut rng)
                }
                None => {
                    let mut img = img;
                    norm.apply(&mut img);
                    img
                }
            }
        })
        .collect();
    let labels = indices.iter().map(|&i| data.label(i)).collect();
    Ok((Tensor::stack(&images)?, labels))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

/// Eval-mode cross-entropy (no smoothing) and accuracy over a dataset.
pub fn evaluate(net: &mut Network, data: &Dataset, norm: &Normalization, batch: usize) -> Result<Evaluation> {
    let mut loss = 0.0;
    let mut correct = 0;
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(batch.max(1)) {
        let (x, y) = make_batch(data, chunk, norm, None)?;
        let logits = net.predict(&x)?;
        let out = label_smoothing_loss(&logits, &y, 0.0)?;
        loss += out.loss * chunk.len() as f64;
        correct += out.correct;
    }
    let n = data.len().max(1) as f64;
    Ok(Evaluation {
        loss: loss / n,
        accuracy: correct as f64 / n,
    })
}

fn diverged(step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { op } => Error::Diverged { step, detail: op },
        other => other,
    }
}

/// Trains `net` in place. Writes `report.csv` after every epoch and `final.ckpt`
/// at the end when `out` is given.
pub fn fit(
    net: &mut Network,
    train: &Dataset,
    val: Option<&Dataset>,
    opts: &TrainOptions,
    out: Option<&Path>,
) -> Result<TrainReport> {
    opts.validate()?;
    let [c, h, w] = net.spec().input;
    if train.shape() != [c, h, w] || train.classes() > net.spec().classes {
        return Err(Error::Config(format!(
            "data of {:?} with {} classes does not fit network input {:?} with {} classes",
            train.shape(),
            train.classes(),
            net.spec().input,
            net.spec().classes
        )));
    }
    if train.len() < 2 {
        return Err(Error::Config("training set needs at least two samples".into()));
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    let start = Instant::now();
    let norm = if opts.normalize {
        train.channel_stats()
    } else {
        Normalization::identity(c)
    };
    if opts.augment && (h <= CROP_PADDING || w <= CROP_PADDING) {
        return Err(Error::Config(format!("images of {h}x{w} are too small to augment")));
    }
    let schedule = opts.schedule();
    let mut sgd = Sgd::new(net.params(), opts.momentum, opts.weight_decay);
    let mut report = TrainReport {
        rows: Vec::new(),
        wall_time: Duration::ZERO,
        steps: 0,
        stopped_early: false,
        checkpoint: None,
        report_csv: out.map(|d| d.join("report.csv")),
    };
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..opts.epochs {
        let lr = schedule.lr_at(epoch);
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, &[epoch as u64, u64::MAX])));
        let mode = match opts.freeze_bn_from {
            Some(f) if epoch >= f => Mode::TrainFrozenBn,
            _ => Mode::Train,
        };
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for chunk in order.chunks(opts.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let step = report.steps;
            let aug = opts.augment.then_some((opts.seed, epoch));
            let (x, y) = make_batch(train, chunk, &norm, aug)?;
            let mut tape = Tape::new();
            let pass = net.forward(&mut tape, &x, mode, &mut NoHook).map_err(|e| diverged(step, e))?;
            let lo = label_smoothing_loss(tape.value(pass.logits), &y, opts.label_smoothing)
                .map_err(|e| diverged(step, e))?;
            let grads = tape.backward(pass.logits, lo.grad).map_err(|e| diverged(step, e))?;
            let pg = pass.param_grads(&grads, &tape);
            sgd.step(net.params_mut(), &pg, lr).map_err(|e| diverged(step, e))?;
            loss_sum += lo.loss * chunk.len() as f64;
            correct += lo.correct;
            seen += chunk.len();
            report.steps += 1;
        }
        let seen_f = seen.max(1) as f64;
        let v = match val {
            Some(ds) if !ds.is_empty() => Some(evaluate(net, ds, &norm, 256)?),
            _ => None,
        };
        let row = EpochRow {
            epoch: epoch + 1,
            train_loss: loss_sum / seen_f,
            train_acc: correct as f64 / seen_f,
            val_loss: v.map(|e| e.loss),
            val_acc: v.map(|e| e.accuracy),
            lr,
        };
        let monitored = row.val_loss.unwrap_or(row.train_loss);
        report.rows.push(row);
        if let Some(path) = &report.report_csv {
            report.write_csv(std::fs::File::create(path)?)?;
        }
        if monitored < best {
            best = monitored;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if opts.patience.is_some_and(|p| since_best >= p) {
            report.stopped_early = epoch + 1 < opts.epochs;
            break;
        }
    }
    if let Some(dir) = out {
        let path = dir.join("final.ckpt");
        checkpoint::save(net, &path)?;
        report.checkpoint = Some(path);
    }
    report.wall_time = start.elapsed();
    Ok(report)
}

/// Builds the network named by `config`, loads its data and trains it.
pub fn train(config: &TrainConfig) -> Result<(Network, TrainReport)> {
    let arch = ArchSpec::resolve(&config.arch)?;
    let mut net = build_network(&arch, config.options.seed)?;
    let (train_set, val_set) = config.data.load()?;
    let report = fit(&mut net, &train_set, Some(&val_set), &config.options, config.out.as_deref())?;
    Ok((net, report))
}
