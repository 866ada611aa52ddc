//! Single-model training and the landscape probes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use augex_core::augment::{AugmentationPolicy, Sampler};
use augex_core::landscape::{
    flatness as flatness_probe, quadratic_selftest, sample_gradient_std, FlatnessConfig,
    FlatnessReport, GradNoiseConfig, GradientNoiseReport, NoisePoint, NoiseTrace, Normalization,
};
use augex_core::rng::SeedStream;
use augex_core::trainer::{load_checkpoint, save_checkpoint, Model, TrainReport};
use augex_core::Error;
use clap::{Args, ValueEnum};
use serde::Serialize;

use crate::manifest::{emit, write_file, RunManifest};
use crate::simulate::{task_data, train_one, NamedPolicy, SimConfig, TaskData, TaskKind};
use crate::{CmdResult, Failure};

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum NormArg {
    Filter,
    None,
}

impl From<NormArg> for Normalization {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::Filter => Normalization::Filter,
            NormArg::None => Normalization::None,
        }
    }
}

/// The dataset a checkpoint is probed on.
#[derive(Debug, Args, Serialize)]
pub struct DatasetArgs {
    #[arg(long, value_enum, default_value = "rotated")]
    pub task: TaskKind,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training subset size.
    #[arg(long)]
    pub size: usize,
    /// Run seed; selects the task instance and the measurement stream.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Augmentation policy JSON; identity when absent.
    #[arg(long)]
    pub policy: Option<PathBuf>,
}

impl DatasetArgs {
    fn load(&self) -> CmdResult<(SimConfig, TaskData, AugmentationPolicy)> {
        let config = match &self.config {
            Some(p) => SimConfig::from_file(p)?,
            None => SimConfig::default(),
        };
        let data = task_data(self.task, &config, self.size, self.seed)?;
        let policy = match &self.policy {
            Some(p) => NamedPolicy::from_file(p)?.policy,
            None => AugmentationPolicy::identity(),
        };
        Ok((config, data, policy))
    }

    fn inputs(&self) -> Vec<&Path> {
        self.config
            .iter()
            .chain(&self.policy)
            .map(PathBuf::as_path)
            .collect()
    }
}

#[derive(Debug, Args, Serialize)]
pub struct NoiseArgs {
    /// Base samples per measured batch.
    #[arg(long = "batch-size", default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long = "n-batches", default_value_t = 10)]
    pub n_batches: usize,
    #[arg(long, value_enum, default_value = "filter")]
    pub normalization: NormArg,
    /// Measure on plain base samples under the random strategy.
    #[arg(long = "no-fresh-augmentation")]
    pub no_fresh_augmentation: bool,
}

impl NoiseArgs {
    pub fn config(&self) -> GradNoiseConfig {
        GradNoiseConfig {
            batch_size: self.batch_size,
            n_batches: self.n_batches,
            normalization: self.normalization.into(),
            fresh_augmentation: !self.no_fresh_augmentation,
        }
    }
}

fn flags_header(flags: &impl Serialize) -> CmdResult<String> {
    Ok(format!(
        "# flags: {}\n",
        serde_json::to_string(flags).map_err(Error::from)?
    ))
}

fn trace_csv(report: &TrainReport) -> String {
    let splits: Vec<&String> = report
        .trace
        .first()
        .map(|p| p.accuracy.keys().collect())
        .unwrap_or_default();
    let mut out = String::from("step,train_loss");
    for s in &splits {
        let _ = write!(out, ",{s}");
    }
    out.push('\n');
    for p in &report.trace {
        let _ = write!(out, "{},{}", p.step, p.train_loss);
        for s in &splits {
            let _ = write!(out, ",{}", p.accuracy[*s]);
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Evaluation trace CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Record gradient std every N steps into --noise-out.
    #[arg(long = "noise-every")]
    pub noise_every: Option<usize>,
    #[arg(long = "noise-out")]
    pub noise_out: Option<PathBuf>,
    #[command(flatten)]
    pub noise: NoiseArgs,
}

pub fn train(args: &TrainArgs) -> CmdResult {
    let (config, _, policy) = args.dataset.load()?;
    let d = &args.dataset;
    let mut hook = match args.noise_every {
        Some(every) => Some(NoiseTrace::new(
            every,
            args.noise.config(),
            &SeedStream::new(d.seed),
        )?),
        None => None,
    };
    let (model, _, report) = match hook.as_mut() {
        Some(h) => train_one(d.task, &config, &policy, d.size, d.seed, h)?,
        None => train_one(d.task, &config, &policy, d.size, d.seed, &mut ())?,
    };
    if let Some(dir) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    save_checkpoint(&model, &args.out)?;
    let mut manifest = RunManifest::new("train", args, vec![d.seed]);
    for p in d.inputs() {
        manifest = manifest.input(p)?;
    }
    manifest = manifest.output(&args.out);
    if let Some(path) = &args.trace {
        write_file(path, &trace_csv(&report))?;
        manifest = manifest.output(path);
    }
    if let Some(h) = hook {
        let text = flags_header(args)? + &h.into_report().to_csv();
        match &args.noise_out {
            Some(path) => {
                write_file(path, &text)?;
                manifest = manifest.output(path);
            }
            None => print!("{text}"),
        }
    }
    manifest.write_beside_output()?;
    for (split, _) in report
        .trace
        .last()
        .map(|p| p.accuracy.clone())
        .unwrap_or_default()
    {
        println!(
            "{split}: final={:.4} peak={:.4}",
            report.final_accuracy(&split).unwrap_or(f64::NAN),
            report.peak_accuracy(&split).unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct GradnoiseArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub dataset: DatasetArgs,
    #[command(flatten)]
    pub noise: NoiseArgs,
    /// Training step the checkpoint was taken at, for the report.
    #[arg(long, default_value_t = 0)]
    pub step: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn gradnoise_report(args: &GradnoiseArgs) -> CmdResult<GradientNoiseReport> {
    let model: Model = load_checkpoint(&args.checkpoint)?;
    let (_, data, policy) = args.dataset.load()?;
    let s = SeedStream::new(args.dataset.seed);
    let sampler = Sampler::new(Arc::new(data.train), Arc::new(policy), &s.split("run"))?;
    let cfg = args.noise.config();
    let grad_std = sample_gradient_std(&model, &sampler, &cfg, &s.split("gradnoise"))?;
    Ok(GradientNoiseReport {
        every: 0,
        points: vec![NoisePoint {
            step: args.step,
            grad_std,
            n_batches: cfg.n_batches,
        }],
        config: cfg,
    })
}

pub fn gradnoise(args: &GradnoiseArgs) -> CmdResult {
    let report = gradnoise_report(args)?;
    let text = flags_header(args)? + &report.to_csv();
    let mut manifest =
        RunManifest::new("gradnoise", args, vec![args.dataset.seed]).input(&args.checkpoint)?;
    for p in args.dataset.inputs() {
        manifest = manifest.input(p)?;
    }
    if args.out.is_some() {
        println!("grad_std={}", report.points[0].grad_std);
    }
    emit(args.out.as_deref(), &text, manifest)
}

#[derive(Debug, Args, Serialize)]
pub struct FlatnessArgs {
    #[arg(long, required_unless_present = "selftest")]
    pub checkpoint: Option<PathBuf>,
    /// Probe the built-in quadratic instead of a checkpoint.
    #[arg(long)]
    pub selftest: bool,
    #[arg(long, value_enum, default_value = "rotated")]
    pub task: TaskKind,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, required_unless_present = "selftest")]
    pub size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub threshold: f64,
    #[arg(long = "n-directions", default_value_t = 10)]
    pub n_directions: usize,
    #[arg(long = "max-radius", default_value_t = 100.0)]
    pub max_radius: f64,
    #[arg(long, value_enum, default_value = "filter")]
    pub normalization: NormArg,
    /// Write the report as JSON instead of CSV.
    #[arg(long)]
    pub json: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn flatness_report(args: &FlatnessArgs) -> CmdResult<FlatnessReport> {
    let seed = SeedStream::new(args.seed).split("flatness");
    if args.selftest {
        return Ok(quadratic_selftest(
            args.threshold,
            args.n_directions,
            &seed,
        )?);
    }
    let (Some(ckpt), Some(size)) = (&args.checkpoint, args.size) else {
        return Err(Failure::validation(
            "flatness needs --checkpoint and --size",
        ));
    };
    let model: Model = load_checkpoint(ckpt)?;
    let config = match &args.config {
        Some(p) => SimConfig::from_file(p)?,
        None => SimConfig::default(),
    };
    let data = task_data(args.task, &config, size, args.seed)?;
    let cfg = FlatnessConfig {
        loss_threshold: args.threshold,
        n_directions: args.n_directions,
        max_radius: args.max_radius,
        normalization: args.normalization.into(),
        ..FlatnessConfig::default()
    };
    Ok(flatness_probe(&model, &data.train, &cfg, &seed)?)
}

pub fn flatness(args: &FlatnessArgs) -> CmdResult {
    let report = flatness_report(args)?;
    let text = if args.json {
        serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n"
    } else {
        flags_header(args)? + &report.to_csv()
    };
    let mut manifest = RunManifest::new("flatness", args, vec![args.seed]);
    for p in args.checkpoint.iter().chain(&args.config) {
        manifest = manifest.input(p)?;
    }
    if args.out.is_some() || args.selftest {
        println!("flatness={:.6}", report.mean_distance);
    }
    if args.selftest && args.out.is_none() {
        return Ok(());
    }
    emit(args.out.as_deref(), &text, manifest)
}
