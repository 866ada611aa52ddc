//! Experiment records: ingestion, validation, persistence and aggregation
//! into learning-curve points.
//!
//! On disk a store is a directory holding one append-only CSV per dataset
//! id under `records/`, plus a `manifest.json` index. Writers take an
//! exclusive lock file for the duration of an append; readers work on a
//! [`RecordSet`] snapshot and never lock.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    FixedViews,
    FixedViewsSameBatch,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::FixedViews => "fixed_views",
            Strategy::FixedViewsSameBatch => "fixed_views_same_batch",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Strategy::Random),
            "fixed_views" => Ok(Strategy::FixedViews),
            "fixed_views_same_batch" => Ok(Strategy::FixedViewsSameBatch),
            other => Err(Error::InvalidParameter(format!(
                "unknown strategy {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Final,
    Peak,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "final" => Ok(Metric::Final),
            "peak" => Ok(Metric::Peak),
            other => Err(Error::InvalidParameter(format!("unknown metric {other:?}"))),
        }
    }
}

/// Outcome of one training run, evaluated on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub dataset_id: String,
    pub policy_id: String,
    /// Number of base (unaugmented) samples.
    pub subset_size: u64,
    /// Frozen views per base sample; 0 means the unaugmented base set.
    pub repetitions: u32,
    pub strategy: Strategy,
    pub seed: u64,
    pub steps: u64,
    pub final_accuracy: f64,
    pub peak_accuracy: f64,
    pub eval_split: String,
}

impl ExperimentRecord {
    pub fn key(&self) -> CurveKey {
        CurveKey::new(
            &self.dataset_id,
            &self.policy_id,
            self.repetitions,
            self.strategy,
            &self.eval_split,
        )
    }

    pub fn accuracy(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Final => self.final_accuracy,
            Metric::Peak => self.peak_accuracy,
        }
    }

    /// Checks the record invariants; `row` is used in error messages.
    pub fn validate(&self, row: u64) -> Result<()> {
        for (field, value) in [
            ("final_accuracy", self.final_accuracy),
            ("peak_accuracy", self.peak_accuracy),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::AccuracyRange { row, field, value });
            }
        }
        let invalid = |message: String| Err(Error::InvalidRecord { row, message });
        if self.final_accuracy > self.peak_accuracy {
            return invalid(format!(
                "final_accuracy {} exceeds peak_accuracy {}",
                self.final_accuracy, self.peak_accuracy
            ));
        }
        if self.subset_size == 0 {
            return invalid("subset_size must be at least 1".into());
        }
        if self.steps == 0 {
            return invalid("steps must be at least 1".into());
        }
        for (field, id) in [
            ("dataset_id", &self.dataset_id),
            ("policy_id", &self.policy_id),
            ("eval_split", &self.eval_split),
        ] {
            if let Err(message) = check_id(id) {
                return invalid(format!("{field}: {message}"));
            }
        }
        if self.dataset_id.starts_with('.') {
            return invalid("dataset_id may not start with '.'".into());
        }
        Ok(())
    }

    /// Uniqueness key within a store.
    pub fn tuple(&self) -> (CurveKey, u64, u64) {
        (self.key(), self.subset_size, self.seed)
    }
}

fn check_id(id: &str) -> std::result::Result<(), String> {
    if id.trim().is_empty() {
        return Err("must not be empty".into());
    }
    if let Some(c) = id
        .chars()
        .find(|c| matches!(c, ':' | '/' | '\\' | ',' | '"') || c.is_control())
    {
        return Err(format!("{id:?} contains forbidden character {c:?}"));
    }
    Ok(())
}

/// Identifies one learning curve within a store.
///
/// With zero repetitions the strategy carries no meaning and is normalized
/// to `random`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CurveKey {
    pub dataset_id: String,
    pub policy_id: String,
    pub repetitions: u32,
    pub strategy: Strategy,
    pub eval_split: String,
}

impl CurveKey {
    pub fn new(
        dataset_id: &str,
        policy_id: &str,
        repetitions: u32,
        strategy: Strategy,
        eval_split: &str,
    ) -> Self {
        Self {
            dataset_id: dataset_id.to_owned(),
            policy_id: policy_id.to_owned(),
            repetitions,
            strategy: if repetitions == 0 {
                Strategy::Random
            } else {
                strategy
            },
            eval_split: eval_split.to_owned(),
        }
    }
}

/// `dataset:policy:repetitions:strategy:split`
impl fmt::Display for CurveKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}:{}:{}",
            self.dataset_id, self.policy_id, self.repetitions, self.strategy, self.eval_split
        )
    }
}

impl FromStr for CurveKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let [dataset, policy, reps, strategy, split] = parts[..] else {
            return Err(Error::InvalidParameter(format!(
                "curve key {s:?} must look like dataset:policy:repetitions:strategy:split"
            )));
        };
        let reps = reps
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("bad repetitions {reps:?} in key")))?;
        Ok(CurveKey::new(
            dataset,
            policy,
            reps,
            strategy.parse()?,
            split,
        ))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningCurvePoint {
    pub subset_size: u64,
    pub mean_accuracy: f64,
    /// Sample standard deviation over seeds divided by `sqrt(n_seeds)`.
    pub std_error: f64,
    pub n_seeds: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::InvalidParameter(format!("unknown format {other:?}"))),
        }
    }
}

/// Parses and validates records from a file in the ingest schema.
pub fn read_records(path: &Path, format: Format) -> Result<Vec<ExperimentRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    match format {
        Format::Csv => parse_csv(file),
        Format::Json => parse_json(file),
    }
}

pub const CSV_HEADER: [&str; 10] = [
    "dataset_id",
    "policy_id",
    "subset_size",
    "repetitions",
    "strategy",
    "seed",
    "steps",
    "final_accuracy",
    "peak_accuracy",
    "eval_split",
];

pub fn parse_csv(reader: impl std::io::Read) -> Result<Vec<ExperimentRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| csv_error(&e, 1))?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "header must be exactly `{}`, found `{}`",
                CSV_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<ExperimentRecord>().enumerate() {
        // Header is line 1.
        let fallback_line = i as u64 + 2;
        let record = row.map_err(|e| csv_error(&e, fallback_line))?;
        record.validate(fallback_line)?;
        out.push(record);
    }
    Ok(out)
}

fn csv_error(e: &csv::Error, fallback_line: u64) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(fallback_line);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

pub fn parse_json(reader: impl std::io::Read) -> Result<Vec<ExperimentRecord>> {
    let records: Vec<ExperimentRecord> =
        serde_json::from_reader(BufReader::new(reader)).map_err(|e| Error::Parse {
            line: e.line() as u64,
            message: e.to_string(),
        })?;
    for (i, r) in records.iter().enumerate() {
        r.validate(i as u64 + 1)?;
    }
    Ok(records)
}

/// An immutable collection of records; all queries are pure.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RecordSet {
    records: Vec<ExperimentRecord>,
}

impl RecordSet {
    pub fn new(records: Vec<ExperimentRecord>) -> Self {
        Self { records }
    }

    pub fn records(&self) -> &[ExperimentRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct curve keys, sorted.
    pub fn keys(&self) -> Vec<CurveKey> {
        let mut keys: Vec<_> = self.records.iter().map(|r| r.key()).collect();
        keys.sort();
        keys.dedup();
        keys
    }

    pub fn aggregate(&self, key: &CurveKey, metric: Metric) -> Result<Vec<LearningCurvePoint>> {
        aggregate(&self.records, key, metric)
    }
}

/// Mean accuracy over seeds for every subset size on one curve, sorted by size.
pub fn aggregate(
    records: &[ExperimentRecord],
    key: &CurveKey,
    metric: Metric,
) -> Result<Vec<LearningCurvePoint>> {
    let mut by_size: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| &r.key() == key) {
        by_size
            .entry(r.subset_size)
            .or_default()
            .push(r.accuracy(metric));
    }
    if by_size.is_empty() {
        return Err(Error::EmptySelection(key.to_string()));
    }
    Ok(by_size
        .into_iter()
        .map(|(subset_size, mut accs)| {
            // Fixed summation order keeps the result independent of record order.
            accs.sort_by(f64::total_cmp);
            let n = accs.len();
            let mean = accs.iter().sum::<f64>() / n as f64;
            let std_error = if n > 1 {
                let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                var.sqrt() / (n as f64).sqrt()
            } else {
                0.0
            };
            LearningCurvePoint {
                subset_size,
                mean_accuracy: mean,
                std_error,
                n_seeds: n,
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MonotoneCheck {
    pub monotone: bool,
    /// Index of the first point whose accuracy drops below its predecessor.
    pub first_violation: Option<usize>,
}

/// Reports whether mean accuracy is non-decreasing along the (sorted) points.
pub fn assert_monotone(points: &[LearningCurvePoint]) -> MonotoneCheck {
    let first_violation = points
        .windows(2)
        .position(|w| w[1].mean_accuracy < w[0].mean_accuracy)
        .map(|i| i + 1);
    MonotoneCheck {
        monotone: first_violation.is_none(),
        first_violation,
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct Manifest {
    format: u32,
    datasets: BTreeMap<String, DatasetEntry>,
    #[serde(default)]
    ingests: Vec<IngestEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct DatasetEntry {
    file: String,
    records: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct IngestEntry {
    source: String,
    records: usize,
}

const MANIFEST: &str = "manifest.json";
const LOCK: &str = ".lock";
const RECORDS_DIR: &str = "records";

/// A directory-backed experiment store.
#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

struct WriteLock {
    path: PathBuf,
}

impl WriteLock {
    fn acquire(root: &Path) -> Result<Self> {
        let path = root.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::StoreLocked(path))
            }
            Err(e) => Err(Error::io(path, e)),
        }
    }
}

impl Drop for WriteLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

impl Store {
    /// Opens the store at `root`, creating an empty one if it does not exist.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let records = root.join(RECORDS_DIR);
        fs::create_dir_all(&records).map_err(|e| Error::io(&records, e))?;
        let store = Self { root };
        if !store.manifest_path().exists() {
            store.write_manifest(&Manifest {
                format: 1,
                ..Default::default()
            })?;
        }
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST)
    }

    fn dataset_path(&self, dataset_id: &str) -> PathBuf {
        self.root
            .join(RECORDS_DIR)
            .join(format!("{dataset_id}.csv"))
    }

    fn read_manifest(&self) -> Result<Manifest> {
        let path = self.manifest_path();
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn write_manifest(&self, manifest: &Manifest) -> Result<()> {
        let path = self.manifest_path();
        let tmp = self.root.join(format!("{MANIFEST}.tmp"));
        let text = serde_json::to_string_pretty(manifest)?;
        fs::write(&tmp, text + "\n").map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    /// Reads every record currently in the store.
    pub fn snapshot(&self) -> Result<RecordSet> {
        let manifest = self.read_manifest()?;
        let mut records = Vec::new();
        for entry in manifest.datasets.values() {
            let path = self.root.join(&entry.file);
            let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
            records.extend(parse_csv(file)?);
        }
        Ok(RecordSet::new(records))
    }

    /// Parses `path` and appends its records. Returns the number added.
    pub fn ingest(&self, path: &Path, format: Format) -> Result<usize> {
        let records = read_records(path, format)?;
        self.append_with_source(records, &path.display().to_string())
    }

    pub fn append(&self, records: Vec<ExperimentRecord>) -> Result<usize> {
        self.append_with_source(records, "<in-memory>")
    }

    fn append_with_source(&self, records: Vec<ExperimentRecord>, source: &str) -> Result<usize> {
        for (i, r) in records.iter().enumerate() {
            r.validate(i as u64 + 1)?;
        }
        let _lock = WriteLock::acquire(&self.root)?;
        let existing = self.snapshot()?;
        let mut seen: HashSet<(CurveKey, u64, u64)> =
            existing.records().iter().map(|r| r.tuple()).collect();
        let mut duplicates = Vec::new();
        for r in &records {
            if !seen.insert(r.tuple()) {
                duplicates.push(format!(
                    "{} size={} seed={}",
                    r.key(),
                    r.subset_size,
                    r.seed
                ));
            }
        }
        if !duplicates.is_empty() {
            return Err(Error::DuplicateKey(duplicates));
        }

        let mut manifest = self.read_manifest()?;
        let mut by_dataset: BTreeMap<&str, Vec<&ExperimentRecord>> = BTreeMap::new();
        for r in &records {
            by_dataset.entry(&r.dataset_id).or_default().push(r);
        }
        for (dataset_id, rows) in by_dataset {
            let path = self.dataset_path(dataset_id);
            let fresh = !path.exists();
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            let mut wtr = csv::WriterBuilder::new()
                .has_headers(fresh)
                .from_writer(file);
            for r in &rows {
                wtr.serialize(r).map_err(|e| Error::io(&path, e.into()))?;
            }
            wtr.flush().map_err(|e| Error::io(&path, e))?;
            let entry = manifest
                .datasets
                .entry(dataset_id.to_owned())
                .or_insert_with(|| DatasetEntry {
                    file: format!("{RECORDS_DIR}/{dataset_id}.csv"),
                    records: 0,
                });
            entry.records += rows.len();
        }
        manifest.ingests.push(IngestEntry {
            source: source.to_owned(),
            records: records.len(),
        });
        self.write_manifest(&manifest)?;
        Ok(records.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn record(size: u64, seed: u64, acc: f64) -> ExperimentRecord {
        ExperimentRecord {
            dataset_id: "synth".into(),
            policy_id: "none".into(),
            subset_size: size,
            repetitions: 0,
            strategy: Strategy::Random,
            seed,
            steps: 100,
            final_accuracy: acc,
            peak_accuracy: acc,
            eval_split: "in_domain".into(),
        }
    }

    fn key() -> CurveKey {
        CurveKey::new("synth", "none", 0, Strategy::Random, "in_domain")
    }

    const CSV: &str = "dataset_id,policy_id,subset_size,repetitions,strategy,seed,steps,final_accuracy,peak_accuracy,eval_split
synth,none,1000,0,random,0,100,0.6,0.61,in_domain
synth,none,1000,0,random,1,100,0.64,0.65,in_domain
synth,none,2000,0,random,0,100,0.7,0.7,in_domain
";

    #[test]
    fn csv_with_three_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.csv");
        fs::write(&path, CSV).unwrap();
        let store = Store::open(dir.path().join("store")).unwrap();
        assert_eq!(store.ingest(&path, Format::Csv).unwrap(), 3);
        assert_eq!(store.snapshot().unwrap().len(), 3);
    }

    #[test]
    fn accuracy_out_of_range_names_row() {
        let bad = CSV.replace("0.7,0.7", "1.2,1.2");
        let err = parse_csv(bad.as_bytes()).unwrap_err();
        match err {
            Error::AccuracyRange { row, value, .. } => {
                assert_eq!(row, 4);
                assert_eq!(value, 1.2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let bad = CSV.replace("2000,0,random", "two-thousand,0,random");
        match parse_csv(bad.as_bytes()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_header_rejected() {
        let bad = CSV.replacen("dataset_id", "dataset", 1);
        assert!(matches!(
            parse_csv(bad.as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn final_above_peak_rejected() {
        let bad = CSV.replace("0.6,0.61", "0.62,0.61");
        assert!(matches!(
            parse_csv(bad.as_bytes()),
            Err(Error::InvalidRecord { row: 2, .. })
        ));
    }

    #[test]
    fn double_ingest_is_duplicate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.csv");
        fs::write(&path, CSV).unwrap();
        let store = Store::open(dir.path().join("store")).unwrap();
        store.ingest(&path, Format::Csv).unwrap();
        let err = store.ingest(&path, Format::Csv).unwrap_err();
        match err {
            Error::DuplicateKey(dups) => assert_eq!(dups.len(), 3),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(store.snapshot().unwrap().len(), 3);
    }

    #[test]
    fn new_seed_is_not_duplicate() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        store.append(vec![record(1000, 0, 0.5)]).unwrap();
        assert_eq!(store.append(vec![record(1000, 1, 0.5)]).unwrap(), 1);
    }

    #[test]
    fn held_lock_blocks_writers() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let _held = WriteLock::acquire(dir.path()).unwrap();
        assert!(matches!(
            store.append(vec![record(1, 0, 0.5)]),
            Err(Error::StoreLocked(_))
        ));
        // readers are unaffected
        assert!(store.snapshot().is_ok());
    }

    #[test]
    fn json_ingest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.json");
        let recs = vec![record(1000, 0, 0.5), record(2000, 0, 0.6)];
        fs::write(&path, serde_json::to_string(&recs).unwrap()).unwrap();
        let store = Store::open(dir.path().join("s")).unwrap();
        assert_eq!(store.ingest(&path, Format::Json).unwrap(), 2);
        assert_eq!(store.snapshot().unwrap().records(), &recs[..]);
    }

    #[test]
    fn two_seed_mean_and_std_error() {
        let recs = vec![record(1000, 0, 0.60), record(1000, 1, 0.64)];
        let pts = aggregate(&recs, &key(), Metric::Final).unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].subset_size, 1000);
        assert!((pts[0].mean_accuracy - 0.62).abs() < 1e-12);
        assert!((pts[0].std_error - 0.02).abs() < 1e-12);
        assert_eq!(pts[0].n_seeds, 2);
    }

    #[test]
    fn single_record_has_zero_std_error() {
        let pts = aggregate(&[record(10, 0, 0.3)], &key(), Metric::Final).unwrap();
        assert_eq!(pts[0].std_error, 0.0);
    }

    #[test]
    fn points_sorted_by_size() {
        let recs = vec![record(2000, 0, 0.7), record(1000, 0, 0.6)];
        let pts = aggregate(&recs, &key(), Metric::Final).unwrap();
        let sizes: Vec<u64> = pts.iter().map(|p| p.subset_size).collect();
        assert_eq!(sizes, vec![1000, 2000]);
    }

    #[test]
    fn peak_metric_selects_peak() {
        let mut r = record(10, 0, 0.3);
        r.peak_accuracy = 0.4;
        let pts = aggregate(&[r], &key(), Metric::Peak).unwrap();
        assert_eq!(pts[0].mean_accuracy, 0.4);
    }

    #[test]
    fn empty_selection() {
        let other = CurveKey::new("synth", "flips", 0, Strategy::Random, "in_domain");
        assert!(matches!(
            aggregate(&[record(10, 0, 0.3)], &other, Metric::Final),
            Err(Error::EmptySelection(_))
        ));
    }

    fn pts(accs: &[f64]) -> Vec<LearningCurvePoint> {
        accs.iter()
            .enumerate()
            .map(|(i, &a)| LearningCurvePoint {
                subset_size: (i as u64 + 1) * 100,
                mean_accuracy: a,
                std_error: 0.0,
                n_seeds: 1,
            })
            .collect()
    }

    #[test]
    fn monotone_checks() {
        assert_eq!(
            assert_monotone(&pts(&[0.5, 0.6, 0.7])),
            MonotoneCheck {
                monotone: true,
                first_violation: None
            }
        );
        assert_eq!(
            assert_monotone(&pts(&[0.5, 0.7, 0.65])),
            MonotoneCheck {
                monotone: false,
                first_violation: Some(2)
            }
        );
        assert!(assert_monotone(&pts(&[0.5, 0.5])).monotone);
    }

    #[test]
    fn key_round_trips_through_string() {
        let k = CurveKey::new(
            "cinic",
            "flips",
            4,
            Strategy::FixedViewsSameBatch,
            "shifted",
        );
        assert_eq!(k.to_string().parse::<CurveKey>().unwrap(), k);
        assert!("a:b:c".parse::<CurveKey>().is_err());
    }

    #[test]
    fn zero_repetitions_ignores_strategy() {
        let a = CurveKey::new("d", "p", 0, Strategy::FixedViews, "s");
        let b = CurveKey::new("d", "p", 0, Strategy::Random, "s");
        assert_eq!(a, b);
    }

    #[test]
    fn path_like_ids_rejected() {
        let mut r = record(1, 0, 0.5);
        r.dataset_id = "../escape".into();
        assert!(r.validate(1).is_err());
    }
}
