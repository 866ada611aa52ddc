//! Training sweeps on the synthetic tasks.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use augex_core::augment::{AugmentationPolicy, Dataset, Sampler, ViewStrategy};
use augex_core::rng::SeedStream;
use augex_core::store::{ExperimentRecord, Store};
use augex_core::trainer::{
    make_blobs, make_rotated_prototypes, save_checkpoint, train, Architecture, Model, RotatedTask,
    TrainConfig, TrainHook, TrainReport,
};
use augex_core::{Error, Result};
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::manifest::RunManifest;
use crate::{CmdResult, Failure};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Rotated,
    Blobs,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Rotated => "rotated",
            TaskKind::Blobs => "blobs",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlobsTask {
    pub n_classes: usize,
    pub dims: usize,
    pub n_test: usize,
    pub hidden: Vec<usize>,
}

impl Default for BlobsTask {
    fn default() -> Self {
        Self {
            n_classes: 4,
            dims: 8,
            n_test: 400,
            hidden: vec![16],
        }
    }
}

/// Sweep configuration, read from `--config`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Defaults to the task name.
    pub dataset_id: Option<String>,
    pub train: TrainConfig,
    pub rotated: RotatedTask,
    pub blobs: BlobsTask,
    /// Defaults to the small CNN for the rotated task and an MLP for blobs.
    pub architecture: Option<Architecture>,
    /// Count same-batch batches in base samples: a batch holds
    /// `batch_size` bases times `k` views.
    pub base_batch: bool,
    /// Share one task instance across seeds; by default every seed draws
    /// its own prototypes and angles.
    pub task_seed: Option<u64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dataset_id: None,
            train: TrainConfig {
                steps: 800,
                batch_size: 32,
                peak_lr: 0.05,
                warmup_steps: 80,
                eval_every: 200,
                ..TrainConfig::default()
            },
            rotated: RotatedTask::default(),
            blobs: BlobsTask::default(),
            architecture: None,
            base_batch: false,
            task_seed: None,
        }
    }
}

impl SimConfig {
    pub fn from_file(path: &Path) -> CmdResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            Failure::validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        Ok(serde_json::from_str(&text).map_err(Error::from)?)
    }

    pub fn dataset_id(&self, task: TaskKind) -> String {
        self.dataset_id
            .clone()
            .unwrap_or_else(|| task.as_str().to_owned())
    }

    /// Training batch size for `strategy`.
    pub fn batch_size(&self, strategy: ViewStrategy) -> usize {
        match strategy {
            ViewStrategy::FixedViewsSameBatch { k } if self.base_batch => self.train.batch_size * k,
            _ => self.train.batch_size,
        }
    }
}

/// Training set of the requested size plus named evaluation splits.
#[derive(Clone, Debug)]
pub struct TaskData {
    pub train: Dataset,
    pub evals: Vec<(String, Dataset)>,
    pub architecture: Architecture,
}

impl TaskData {
    pub fn eval_refs(&self) -> Vec<(&str, &Dataset)> {
        self.evals.iter().map(|(n, d)| (n.as_str(), d)).collect()
    }
}

pub fn task_data(task: TaskKind, cfg: &SimConfig, size: usize, seed: u64) -> Result<TaskData> {
    let s = SeedStream::new(seed);
    match task {
        TaskKind::Rotated => {
            let task_seed = cfg
                .task_seed
                .map(SeedStream::new)
                .unwrap_or_else(|| s.split("task"));
            let splits = make_rotated_prototypes(&cfg.rotated, &task_seed)?;
            if size == 0 || size > splits.train.len() {
                return Err(Error::InvalidParameter(format!(
                    "size {size} outside 1..={} for the rotated task",
                    splits.train.len()
                )));
            }
            let t = &cfg.rotated;
            Ok(TaskData {
                train: splits.train.head(size),
                evals: vec![
                    ("in_domain".into(), splits.test),
                    ("shifted".into(), splits.shifted),
                ],
                architecture: cfg.architecture.clone().unwrap_or_else(|| {
                    Architecture::small_cnn([t.channels, t.image_size, t.image_size], t.n_classes)
                }),
            })
        }
        TaskKind::Blobs => {
            let b = &cfg.blobs;
            if size == 0 {
                return Err(Error::InvalidParameter("size must be positive".into()));
            }
            Ok(TaskData {
                train: make_blobs(b.n_classes, b.dims, size, &s.split("blobs_train"))?,
                evals: vec![(
                    "in_domain".into(),
                    make_blobs(b.n_classes, b.dims, b.n_test, &s.split("blobs_test"))?,
                )],
                architecture: cfg
                    .architecture
                    .clone()
                    .unwrap_or_else(|| Architecture::mlp(b.dims, &b.hidden, b.n_classes)),
            })
        }
    }
}

/// Trains one model. The sampler, initialization and measurement streams
/// all derive from `seed`.
pub fn train_one(
    task: TaskKind,
    cfg: &SimConfig,
    policy: &AugmentationPolicy,
    size: usize,
    seed: u64,
    hook: &mut dyn TrainHook<f64>,
) -> Result<(Model, TaskData, TrainReport)> {
    let data = task_data(task, cfg, size, seed)?;
    let s = SeedStream::new(seed);
    let mut sampler = Sampler::new(
        Arc::new(data.train.clone()),
        Arc::new(policy.clone()),
        &s.split("run"),
    )?;
    let mut model = Model::init(data.architecture.clone(), &s.split("init"))?;
    let train_cfg = TrainConfig {
        batch_size: cfg.batch_size(policy.strategy),
        seed,
        ..cfg.train.clone()
    };
    let report = train(
        &mut model,
        &mut sampler,
        &train_cfg,
        &data.eval_refs(),
        hook,
    )?;
    Ok((model, data, report))
}

#[derive(Clone, Debug)]
pub struct NamedPolicy {
    pub id: String,
    pub policy: AugmentationPolicy,
    pub source: Option<PathBuf>,
}

impl NamedPolicy {
    /// Reads a policy JSON file; its stem becomes the policy id.
    pub fn from_file(path: &Path) -> CmdResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            Failure::validation(format!("cannot read policy {}: {e}", path.display()))
        })?;
        let policy = AugmentationPolicy::from_json(&text)?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Failure::validation(format!("bad policy path {}", path.display())))?;
        Ok(Self {
            id,
            policy,
            source: Some(path.to_path_buf()),
        })
    }
}

#[derive(Clone, Debug)]
pub struct Cell {
    pub policy: usize,
    pub size: usize,
    pub seed: u64,
}

#[derive(Debug)]
pub enum CellOutcome {
    Done(Vec<ExperimentRecord>),
    Diverged(String),
}

#[derive(Debug, Default)]
pub struct SweepResult {
    pub records: Vec<ExperimentRecord>,
    pub diverged: Vec<String>,
}

pub struct Sweep<'a> {
    pub task: TaskKind,
    pub config: &'a SimConfig,
    pub policies: &'a [NamedPolicy],
    pub sizes: &'a [usize],
    pub seeds: &'a [u64],
    pub checkpoint_dir: Option<&'a Path>,
}

impl Sweep<'_> {
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for policy in 0..self.policies.len() {
            for &size in self.sizes {
                for &seed in self.seeds {
                    cells.push(Cell { policy, size, seed });
                }
            }
        }
        cells
    }

    fn record(&self, cell: &Cell, split: &str, report: &TrainReport) -> ExperimentRecord {
        let p = &self.policies[cell.policy];
        ExperimentRecord {
            dataset_id: self.config.dataset_id(self.task),
            policy_id: p.id.clone(),
            subset_size: cell.size as u64,
            repetitions: p.policy.strategy.views().unwrap_or(0) as u32,
            strategy: p.policy.strategy.as_store(),
            seed: cell.seed,
            steps: self.config.train.steps as u64,
            final_accuracy: report.final_accuracy(split).unwrap_or(f64::NAN),
            peak_accuracy: report.peak_accuracy(split).unwrap_or(f64::NAN),
            eval_split: split.to_owned(),
        }
    }

    /// Records the sweep would produce, with placeholder accuracies; used
    /// to reject duplicates before any training.
    pub fn planned(&self) -> Vec<ExperimentRecord> {
        let splits: &[&str] = match self.task {
            TaskKind::Rotated => &["in_domain", "shifted"],
            TaskKind::Blobs => &["in_domain"],
        };
        let empty = TrainReport { trace: Vec::new() };
        self.cells()
            .iter()
            .flat_map(|c| splits.iter().map(move |s| (c, *s)))
            .map(|(c, s)| self.record(c, s, &empty))
            .collect()
    }

    pub fn run_cell(&self, cell: &Cell) -> Result<CellOutcome> {
        let p = &self.policies[cell.policy];
        match train_one(
            self.task,
            self.config,
            &p.policy,
            cell.size,
            cell.seed,
            &mut (),
        ) {
            Ok((model, data, report)) => {
                if let Some(dir) = self.checkpoint_dir {
                    fs::create_dir_all(dir).map_err(|e| Error::Io {
                        path: dir.to_path_buf(),
                        source: e,
                    })?;
                    let name = format!("{}_n{}_s{}.ckpt", p.id, cell.size, cell.seed);
                    save_checkpoint(&model, &dir.join(name))?;
                }
                Ok(CellOutcome::Done(
                    data.evals
                        .iter()
                        .map(|(split, _)| self.record(cell, split, &report))
                        .collect(),
                ))
            }
            Err(e @ Error::Diverged { .. }) => Ok(CellOutcome::Diverged(format!(
                "{} size={} seed={}: {e}",
                p.id, cell.size, cell.seed
            ))),
            Err(e) => Err(e),
        }
    }

    /// Runs every cell in parallel; results keep the cell order.
    pub fn run(&self) -> Result<SweepResult> {
        let outcomes = self
            .cells()
            .par_iter()
            .map(|c| self.run_cell(c))
            .collect::<Result<Vec<_>>>()?;
        let mut out = SweepResult::default();
        for o in outcomes {
            match o {
                CellOutcome::Done(r) => out.records.extend(r),
                CellOutcome::Diverged(msg) => out.diverged.push(msg),
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub task: TaskKind,
    /// Policy JSON file; repeatable. The file stem is the policy id.
    #[arg(long = "policy", required = true)]
    pub policies: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, env = "AUGEX_STORE")]
    pub store: PathBuf,
    /// Write one checkpoint per run into this directory.
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
}

pub fn simulate(args: &SimulateArgs) -> CmdResult {
    let config = match &args.config {
        Some(p) => SimConfig::from_file(p)?,
        None => SimConfig::default(),
    };
    let policies = args
        .policies
        .iter()
        .map(|p| NamedPolicy::from_file(p))
        .collect::<CmdResult<Vec<_>>>()?;
    let mut ids = HashSet::new();
    for p in &policies {
        if !ids.insert(p.id.as_str()) {
            return Err(Failure::validation(format!(
                "policy id {} given twice",
                p.id
            )));
        }
    }
    let sweep = Sweep {
        task: args.task,
        config: &config,
        policies: &policies,
        sizes: &args.sizes,
        seeds: &args.seeds,
        checkpoint_dir: args.checkpoint_dir.as_deref(),
    };

    let store = Store::open(&args.store)?;
    let existing: HashSet<_> = store
        .snapshot()?
        .records()
        .iter()
        .map(|r| r.tuple())
        .collect();
    let clashes: Vec<String> = sweep
        .planned()
        .iter()
        .filter(|r| existing.contains(&r.tuple()))
        .map(|r| format!("{} size={} seed={}", r.key(), r.subset_size, r.seed))
        .collect();
    if !clashes.is_empty() {
        return Err(Error::DuplicateKey(clashes).into());
    }

    let result = sweep.run()?;
    for msg in &result.diverged {
        eprintln!("diverged: {msg}");
    }
    let n = store.append(result.records)?;

    let mut manifest = RunManifest::new("simulate", args, args.seeds.clone());
    if let Some(c) = &args.config {
        manifest = manifest.input(c)?;
    }
    for p in &args.policies {
        manifest = manifest.input(p)?;
    }
    let tag =
        crate::manifest::sha256_bytes(&serde_json::to_vec(&manifest.flags).map_err(Error::from)?);
    manifest.write(
        &args
            .store
            .join("manifests")
            .join(format!("simulate-{}.json", &tag[..16])),
    )?;
    println!(
        "appended {n} records ({} runs diverged)",
        result.diverged.len()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_batch_counts_bases() {
        let cfg = SimConfig {
            base_batch: true,
            ..SimConfig::default()
        };
        assert_eq!(
            cfg.batch_size(ViewStrategy::FixedViewsSameBatch { k: 4 }),
            128
        );
        assert_eq!(cfg.batch_size(ViewStrategy::FixedViews { k: 4 }), 32);
        assert_eq!(
            SimConfig::default().batch_size(ViewStrategy::FixedViewsSameBatch { k: 4 }),
            32
        );
    }

    #[test]
    fn config_defaults_fill_in() {
        let cfg: SimConfig = serde_json::from_str(r#"{"train": {"steps": 10}}"#).unwrap();
        assert_eq!(cfg.train.steps, 10);
        assert_eq!(cfg.rotated, RotatedTask::default());
    }

    #[test]
    fn oversized_subset_rejected() {
        let cfg = SimConfig::default();
        assert!(task_data(TaskKind::Rotated, &cfg, 10_000, 0).is_err());
        let d = task_data(TaskKind::Rotated, &cfg, 30, 0).unwrap();
        assert_eq!(d.train.len(), 30);
        assert_eq!(d.evals.len(), 2);
    }

    #[test]
    fn planned_counts_splits() {
        let cfg = SimConfig::default();
        let policies = vec![NamedPolicy {
            id: "none".into(),
            policy: AugmentationPolicy::identity(),
            source: None,
        }];
        let sweep = Sweep {
            task: TaskKind::Rotated,
            config: &cfg,
            policies: &policies,
            sizes: &[10, 20],
            seeds: &[0, 1, 2],
            checkpoint_dir: None,
        };
        assert_eq!(sweep.planned().len(), 12);
    }
}
