//! ingest → fit → exchange.

use std::fs;
use std::path::{Path, PathBuf};

use augex_core::exchange::{
    exchange_curve, exchange_ratio, ExchangeResult, ExchangeTable, Protocol, ReferenceModel,
};
use augex_core::scaling::{self, CurveFamily, CurveFit, FitOptions, Init};
use augex_core::store::{CurveKey, Format, LearningCurvePoint, Metric, Store};
use augex_core::Error;
use clap::{Args, ValueEnum};
use serde::Serialize;

use crate::manifest::{emit, RunManifest};
use crate::{CmdResult, Failure, MetricArg};

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    #[arg(long, env = "AUGEX_STORE")]
    pub store: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: FormatArg,
}

pub fn ingest(args: &IngestArgs) -> CmdResult {
    let store = Store::open(&args.store)?;
    let format = match args.format {
        FormatArg::Csv => Format::Csv,
        FormatArg::Json => Format::Json,
    };
    let n = store.ingest(&args.input, format)?;
    let manifest = RunManifest::new("ingest", args, Vec::new()).input(&args.input)?;
    let name = format!("ingest-{}.json", &manifest.inputs[0].sha256[..16]);
    manifest.write(&args.store.join("manifests").join(name))?;
    println!("{n}");
    Ok(())
}

/// A single family or `auto` (lowest AIC over all families).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FamilyArg {
    Auto,
    One(CurveFamily),
}

impl Serialize for FamilyArg {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            FamilyArg::Auto => s.serialize_str("auto"),
            FamilyArg::One(f) => s.serialize_str(f.as_str()),
        }
    }
}

impl std::str::FromStr for FamilyArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            Ok(FamilyArg::Auto)
        } else {
            s.parse()
                .map(FamilyArg::One)
                .map_err(|e: Error| e.to_string())
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[arg(long, env = "AUGEX_STORE")]
    pub store: PathBuf,
    /// dataset:policy:repetitions:strategy:split
    #[arg(long)]
    pub key: String,
    #[arg(long, default_value = "power_law")]
    pub family: FamilyArg,
    #[arg(long, value_enum, default_value = "final")]
    pub metric: MetricArg,
    /// Weight residuals by inverse squared standard error.
    #[arg(long)]
    pub weighted: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn load_points(store: &Path, key: &str, metric: Metric) -> CmdResult<Vec<LearningCurvePoint>> {
    let key: CurveKey = key.parse()?;
    let store = Store::open(store)?;
    Ok(store.snapshot()?.aggregate(&key, metric)?)
}

pub fn fit_points(
    points: &[LearningCurvePoint],
    family: FamilyArg,
    options: &FitOptions,
) -> CmdResult<(CurveFit, Option<Vec<scaling::FamilyScore>>)> {
    Ok(match family {
        FamilyArg::One(f) => (scaling::fit(points, f, &Init::Default, options)?, None),
        FamilyArg::Auto => {
            let sel = scaling::select_family(points, &CurveFamily::ALL, options)?;
            (sel.best, Some(sel.scores))
        }
    })
}

pub fn fit_json(fit: &CurveFit) -> CmdResult<String> {
    Ok(serde_json::to_string_pretty(fit).map_err(Error::from)? + "\n")
}

pub fn fit(args: &FitArgs) -> CmdResult {
    let points = load_points(&args.store, &args.key, args.metric.into())?;
    let options = FitOptions {
        weighted: args.weighted,
        ..FitOptions::default()
    };
    let (fit, scores) = fit_points(&points, args.family, &options)?;
    if let Some(scores) = &scores {
        for s in scores {
            match (s.aic, &s.failure) {
                (Some(aic), _) => eprintln!("{:<14} aic={aic:.4}", s.family.as_str()),
                (None, Some(why)) => eprintln!("{:<14} failed: {why}", s.family.as_str()),
                _ => {}
            }
        }
    }
    let params: Vec<String> = fit.params.values.iter().map(|v| format!("{v}")).collect();
    println!(
        "family={} rmse={} params=[{}] converged={}",
        fit.family(),
        fit.rmse,
        params.join(", "),
        fit.converged
    );
    if let Some(out) = &args.out {
        let manifest = RunManifest::new("fit", args, Vec::new());
        crate::manifest::write_file(out, &fit_json(&fit)?)?;
        manifest.output(out).write_beside_output()?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ExchangeMode {
    /// Effective extra samples between two fitted curves.
    Curve,
    /// Exchange ratios against the reference spline.
    Ratio,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Markdown,
    Csv,
}

#[derive(Debug, Args, Serialize)]
pub struct ExchangeArgs {
    /// Reference curve: a fit JSON file or a curve key.
    #[arg(long = "ref")]
    pub reference: String,
    /// Augmented curve(s): fit JSON files or curve keys.
    #[arg(long = "aug", required = true)]
    pub aug: Vec<String>,
    #[arg(long, value_enum, default_value = "curve")]
    pub mode: ExchangeMode,
    /// Base sizes for ratio mode, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub base: Vec<u64>,
    /// Curve-mode grid: comma-separated sizes or `geom:LO:HI:N`.
    #[arg(long)]
    pub grid: Option<String>,
    /// Family used when a key has to be fitted.
    #[arg(long, default_value = "power_law")]
    pub family: FamilyArg,
    #[arg(long, value_enum, default_value = "final")]
    pub metric: MetricArg,
    #[arg(long, env = "AUGEX_STORE")]
    pub store: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "markdown")]
    pub format: TableFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A curve argument resolved to its fit, and its measured points when it
/// came from the store.
struct Resolved {
    label: String,
    /// Absent for store keys resolved without fitting.
    fit: Option<CurveFit>,
    points: Option<Vec<LearningCurvePoint>>,
    file: Option<PathBuf>,
}

impl Resolved {
    fn fit(&self) -> &CurveFit {
        self.fit.as_ref().expect("resolved with a fit")
    }
}

fn looks_like_key(s: &str) -> bool {
    s.split(':').count() == 5 && !Path::new(s).exists()
}

fn resolve(arg: &str, args: &ExchangeArgs, need_fit: bool) -> CmdResult<Resolved> {
    if looks_like_key(arg) {
        let store = args
            .store
            .as_deref()
            .ok_or_else(|| Failure::validation(format!("curve key {arg} needs --store")))?;
        let key: CurveKey = arg.parse()?;
        let points = load_points(store, arg, args.metric.into())?;
        let fit = if need_fit {
            Some(fit_points(&points, args.family, &FitOptions::default())?.0)
        } else {
            None
        };
        let label = if key.repetitions == 0 {
            key.policy_id.clone()
        } else {
            format!("{} {}({})", key.policy_id, key.strategy, key.repetitions)
        };
        return Ok(Resolved {
            label,
            fit,
            points: Some(points),
            file: None,
        });
    }
    let path = PathBuf::from(arg);
    let text = fs::read_to_string(&path)
        .map_err(|e| Failure::validation(format!("cannot read fit {arg}: {e}")))?;
    let fit: CurveFit = serde_json::from_str(&text).map_err(Error::from)?;
    Ok(Resolved {
        label: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| arg.to_owned()),
        fit: Some(fit),
        points: None,
        file: Some(path),
    })
}

pub fn parse_grid(spec: &str) -> CmdResult<Vec<f64>> {
    let bad = || Failure::validation(format!("bad grid {spec:?}"));
    if let Some(rest) = spec.strip_prefix("geom:") {
        let parts: Vec<&str> = rest.split(':').collect();
        let [lo, hi, n] = parts[..] else {
            return Err(bad());
        };
        let lo: f64 = lo.parse().map_err(|_| bad())?;
        let hi: f64 = hi.parse().map_err(|_| bad())?;
        let n: usize = n.parse().map_err(|_| bad())?;
        return geometric_grid(lo, hi, n);
    }
    spec.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
        .collect()
}

pub fn geometric_grid(lo: f64, hi: f64, n: usize) -> CmdResult<Vec<f64>> {
    if !(lo > 0.0 && hi > lo) || n < 2 {
        return Err(Failure::validation(format!(
            "geometric grid needs 0 < lo < hi and n >= 2, got {lo}, {hi}, {n}"
        )));
    }
    let ratio = (hi / lo).ln() / (n - 1) as f64;
    Ok((0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                (lo.ln() + ratio * i as f64).exp().round()
            }
        })
        .collect())
}

/// Reference model for ratio mode. A fit file has no measured points, so
/// its spline is built on 13 geometric samples of the fit itself.
fn reference_model(r: &Resolved) -> CmdResult<ReferenceModel> {
    let points = match &r.points {
        Some(p) => p.clone(),
        None => {
            let [lo, hi] = r.fit().fitted_range;
            let xs: Vec<u64> = geometric_grid(lo.max(1.0), hi.max(lo.max(1.0) + 1.0), 13)?
                .into_iter()
                .map(|x| x as u64)
                .collect();
            let ys = xs
                .iter()
                .map(|&x| r.fit().params.evaluate(x as f64))
                .collect::<augex_core::Result<Vec<f64>>>()?;
            scaling::points_from_xy(&xs, &ys)
        }
    };
    Ok(ReferenceModel::new(&points, r.fit().clone())?)
}

/// Accuracy of an augmented curve at `base`: the measured mean if the key
/// has that size, else nothing; fit files are evaluated directly.
fn accuracy_at(r: &Resolved, base: u64) -> CmdResult<Option<f64>> {
    Ok(match &r.points {
        Some(points) => points
            .iter()
            .find(|p| p.subset_size == base)
            .map(|p| p.mean_accuracy),
        None => Some(r.fit().params.evaluate(base as f64)?),
    })
}

pub fn exchange_output(args: &ExchangeArgs) -> CmdResult<(String, Vec<PathBuf>)> {
    let reference = resolve(&args.reference, args, true)?;
    let fit_augs = matches!(args.mode, ExchangeMode::Curve);
    let augs = args
        .aug
        .iter()
        .map(|a| resolve(a, args, fit_augs))
        .collect::<CmdResult<Vec<_>>>()?;
    let mut inputs: Vec<PathBuf> = reference.file.iter().cloned().collect();
    inputs.extend(augs.iter().filter_map(|a| a.file.clone()));

    let text = match args.mode {
        ExchangeMode::Curve => {
            let grid = match &args.grid {
                Some(g) => parse_grid(g)?,
                None => {
                    let [lo, hi] = reference.fit().fitted_range;
                    geometric_grid(lo.max(1.0), hi.max(lo.max(1.0) + 1.0), 25)?
                }
            };
            let mut out = format!("# protocol: {}\n", Protocol::CurveToCurve.as_str());
            for (i, aug) in augs.iter().enumerate() {
                let curve = exchange_curve(&reference.fit().params, &aug.fit().params, &grid)?;
                if augs.len() > 1 {
                    if i > 0 {
                        out.push('\n');
                    }
                    out.push_str(&format!("# aug: {}\n", aug.label));
                }
                out.push_str(&curve.to_csv());
            }
            out
        }
        ExchangeMode::Ratio => {
            if args.base.is_empty() {
                return Err(Failure::validation("ratio mode needs --base"));
            }
            let model = reference_model(&reference)?;
            let mut table = ExchangeTable::new(
                format!("exchange ratio vs {}", reference.label),
                Protocol::SplineRatio,
            );
            for &b in &args.base {
                if b == 0 {
                    return Err(Failure::validation("base sizes must be positive"));
                }
                table.add_column(&b.to_string());
            }
            for aug in &augs {
                table.add_row(&aug.label);
                for &b in &args.base {
                    if let Some(acc) = accuracy_at(aug, b)? {
                        let r: ExchangeResult = exchange_ratio(&model, acc, b);
                        table.insert(&aug.label, &b.to_string(), r);
                    }
                }
            }
            match args.format {
                TableFormat::Markdown => table.to_markdown(),
                TableFormat::Csv => format!(
                    "# protocol: {}\n{}",
                    Protocol::SplineRatio.as_str(),
                    table.to_csv()
                ),
            }
        }
    };
    Ok((text, inputs))
}

pub fn exchange(args: &ExchangeArgs) -> CmdResult {
    let (text, inputs) = exchange_output(args)?;
    let mut manifest = RunManifest::new("exchange", args, Vec::new());
    for p in &inputs {
        manifest = manifest.input(p)?;
    }
    emit(args.out.as_deref(), &text, manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_arg_parses() {
        assert_eq!("auto".parse::<FamilyArg>().unwrap(), FamilyArg::Auto);
        assert_eq!(
            "sym_rational".parse::<FamilyArg>().unwrap(),
            FamilyArg::One(CurveFamily::SymRational)
        );
        assert!("cubic".parse::<FamilyArg>().is_err());
    }

    #[test]
    fn grids() {
        assert_eq!(parse_grid("10,20,40").unwrap(), vec![10.0, 20.0, 40.0]);
        let g = parse_grid("geom:100:10000:3").unwrap();
        assert_eq!(g, vec![100.0, 1000.0, 10000.0]);
        assert!(parse_grid("geom:0:10:3").is_err());
        assert!(parse_grid("a,b").is_err());
    }

    #[test]
    fn key_detection() {
        assert!(looks_like_key("rot:none:0:random:in_domain"));
        assert!(!looks_like_key("fits/none.json"));
    }
}
