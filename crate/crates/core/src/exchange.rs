//! Exchange rates between augmented and unaugmented training.
//!
//! Two protocols are exposed and every result says which one produced it:
//!
//! * curve-to-curve: effective extra samples `f_ref⁻¹(f_aug(x)) − x` from
//!   two fitted curves;
//! * spline ratio: `f_ref⁻¹(accuracy) / base_size`, where `f_ref` is a
//!   piecewise-linear interpolant of measured reference accuracies inside
//!   the measured range and a fitted tail curve outside it.

use std::collections::HashMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scaling::{self, CurveFamily, CurveFit, CurveParams, FitOptions, Init, Inverse};
use crate::store::{assert_monotone, LearningCurvePoint};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Marker {
    InRange,
    /// Computed from the tail fit outside the measured accuracy range.
    Extrapolated,
    /// The reference can never reach the requested accuracy.
    NoExchange,
}

impl Marker {
    pub fn as_str(self) -> &'static str {
        match self {
            Marker::InRange => "in_range",
            Marker::Extrapolated => "extrapolated",
            Marker::NoExchange => "no_exchange",
        }
    }
}

impl fmt::Display for Marker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    CurveToCurve,
    SplineRatio,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::CurveToCurve => "curve_to_curve",
            Protocol::SplineRatio => "spline_ratio",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExchangeResult {
    /// Extra samples or ratio; absent for [`Marker::NoExchange`].
    pub value: Option<f64>,
    pub marker: Marker,
}

impl ExchangeResult {
    pub fn in_range(value: f64) -> Self {
        Self {
            value: Some(value),
            marker: Marker::InRange,
        }
    }

    pub fn extrapolated(value: f64) -> Self {
        Self {
            value: Some(value),
            marker: Marker::Extrapolated,
        }
    }

    pub fn no_exchange() -> Self {
        Self {
            value: None,
            marker: Marker::NoExchange,
        }
    }

    /// Table cell text: two decimals, `*` when extrapolated, `✓` when no
    /// amount of reference data suffices.
    pub fn cell(&self) -> String {
        match (self.marker, self.value) {
            (Marker::NoExchange, _) | (_, None) => "✓".to_owned(),
            (Marker::InRange, Some(v)) => format!("{v:.2}"),
            (Marker::Extrapolated, Some(v)) => format!("{v:.2}*"),
        }
    }
}

/// Effective extra samples at base size `x`: how much more reference data
/// would match the augmented curve's accuracy at `x`. Negative values mean
/// the augmentation hurts at this scale.
pub fn effective_extra_samples(
    f_ref: &CurveParams,
    f_aug: &CurveParams,
    x: f64,
) -> Result<ExchangeResult> {
    f_ref.require_monotone()?;
    f_aug.require_monotone()?;
    let target = f_aug.evaluate(x)?;
    // strictly increasing, so an equal value has preimage x itself
    if target == f_ref.evaluate(x)? {
        return Ok(ExchangeResult::in_range(0.0));
    }
    Ok(match f_ref.invert(target)? {
        Inverse::At(x_ref) => ExchangeResult::in_range(x_ref - x),
        Inverse::NoSolution => ExchangeResult::no_exchange(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NoExchangeRegion {
    /// First grid point without an exchange.
    pub onset: f64,
    /// Last grid point of the contiguous run.
    pub end: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExchangeCurve {
    pub points: Vec<(f64, ExchangeResult)>,
    pub no_exchange: Vec<NoExchangeRegion>,
}

impl ExchangeCurve {
    /// `x,value,marker` rows; `value` is empty where there is no exchange.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,value,marker\n");
        for (x, r) in &self.points {
            let value = r.value.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{x},{value},{}", r.marker);
        }
        out
    }

    /// Onset of the first no-exchange region, if any.
    pub fn onset(&self) -> Option<f64> {
        self.no_exchange.first().map(|r| r.onset)
    }
}

pub fn exchange_curve(
    f_ref: &CurveParams,
    f_aug: &CurveParams,
    grid: &[f64],
) -> Result<ExchangeCurve> {
    if grid.iter().any(|&x| !(x > 0.0)) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(
            "exchange grid must be positive and strictly ascending".into(),
        ));
    }
    let points = grid
        .iter()
        .map(|&x| Ok((x, effective_extra_samples(f_ref, f_aug, x)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut no_exchange: Vec<NoExchangeRegion> = Vec::new();
    let mut open = false;
    for (x, r) in &points {
        if r.marker == Marker::NoExchange {
            match (open, no_exchange.last_mut()) {
                (true, Some(region)) => region.end = *x,
                _ => no_exchange.push(NoExchangeRegion { onset: *x, end: *x }),
            }
            open = true;
        } else {
            open = false;
        }
    }
    Ok(ExchangeCurve {
        points,
        no_exchange,
    })
}

/// Piecewise-linear interpolant through knots strictly increasing in both
/// coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotoneSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl MonotoneSpline {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::ShapeMismatch("spline knot coordinates".into()));
        }
        if xs.len() < 2 {
            return Err(Error::InsufficientPoints {
                needed: 2,
                got: xs.len(),
            });
        }
        if let Some(i) = (1..xs.len()).find(|&i| !(xs[i] > xs[i - 1] && ys[i] > ys[i - 1])) {
            return Err(Error::NonMonotone(format!(
                "spline knots must increase strictly in both coordinates (knot {i})"
            )));
        }
        Ok(Self { xs, ys })
    }

    pub fn knots(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.xs.iter().copied().zip(self.ys.iter().copied())
    }

    pub fn x_range(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    pub fn y_range(&self) -> (f64, f64) {
        (self.ys[0], self.ys[self.ys.len() - 1])
    }

    /// Value at `x` inside the knot range.
    pub fn eval(&self, x: f64) -> Option<f64> {
        interpolate(&self.xs, &self.ys, x)
    }

    /// Preimage of `y` inside the knot range; exact at knots.
    pub fn invert(&self, y: f64) -> Option<f64> {
        interpolate(&self.ys, &self.xs, y)
    }
}

fn interpolate(from: &[f64], to: &[f64], v: f64) -> Option<f64> {
    match from.binary_search_by(|k| k.total_cmp(&v)) {
        Ok(i) => Some(to[i]),
        Err(0) => None,
        Err(i) if i == from.len() => None,
        Err(i) => {
            let t = (v - from[i - 1]) / (from[i] - from[i - 1]);
            Some(to[i - 1] + t * (to[i] - to[i - 1]))
        }
    }
}

/// Reference learning curve built from measured unaugmented runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceModel {
    pub spline: MonotoneSpline,
    pub tail_fit: CurveFit,
    pub observed_range: [f64; 2],
    pub accuracy_range: [f64; 2],
}

impl ReferenceModel {
    pub fn new(points: &[LearningCurvePoint], tail_fit: CurveFit) -> Result<Self> {
        let check = assert_monotone(points);
        if let Some(i) = check.first_violation {
            return Err(Error::NonMonotone(format!(
                "reference accuracy decreases at point {i}"
            )));
        }
        tail_fit.params.require_monotone()?;
        let spline = MonotoneSpline::new(
            points.iter().map(|p| p.subset_size as f64).collect(),
            points.iter().map(|p| p.mean_accuracy).collect(),
        )?;
        let (x0, x1) = spline.x_range();
        let (y0, y1) = spline.y_range();
        Ok(Self {
            spline,
            tail_fit,
            observed_range: [x0, x1],
            accuracy_range: [y0, y1],
        })
    }

    /// Builds the spline and fits the tail curve (a power law unless
    /// another family is requested) to the same points.
    pub fn fit(points: &[LearningCurvePoint], family: CurveFamily) -> Result<Self> {
        let tail = scaling::fit(points, family, &Init::Default, &FitOptions::default())?;
        Self::new(points, tail)
    }
}

/// Dataset-size multiple the reference needs to reach `accuracy`, relative
/// to `base_size`.
pub fn exchange_ratio(reference: &ReferenceModel, accuracy: f64, base_size: u64) -> ExchangeResult {
    let base = base_size as f64;
    let [lo, hi] = reference.accuracy_range;
    if (lo..=hi).contains(&accuracy) {
        // inside the knot range the interpolant always has a preimage
        let x = reference
            .spline
            .invert(accuracy)
            .expect("accuracy within knot range");
        return ExchangeResult::in_range(x / base);
    }
    match reference.tail_fit.params.invert(accuracy) {
        Ok(Inverse::At(x)) => ExchangeResult::extrapolated(x / base),
        _ => ExchangeResult::no_exchange(),
    }
}

/// Exchange results laid out as policy rows × repetition (or other) columns.
#[derive(Clone, Debug, Default)]
pub struct ExchangeTable {
    pub title: String,
    pub protocol: Option<Protocol>,
    rows: Vec<String>,
    cols: Vec<String>,
    cells: HashMap<(usize, usize), ExchangeResult>,
}

impl ExchangeTable {
    pub fn new(title: impl Into<String>, protocol: Protocol) -> Self {
        Self {
            title: title.into(),
            protocol: Some(protocol),
            ..Default::default()
        }
    }

    fn index_of(labels: &mut Vec<String>, label: &str) -> usize {
        labels.iter().position(|l| l == label).unwrap_or_else(|| {
            labels.push(label.to_owned());
            labels.len() - 1
        })
    }

    /// Declares a column so it renders even if no cell lands in it.
    pub fn add_column(&mut self, col: &str) {
        Self::index_of(&mut self.cols, col);
    }

    pub fn add_row(&mut self, row: &str) {
        Self::index_of(&mut self.rows, row);
    }

    pub fn insert(&mut self, row: &str, col: &str, result: ExchangeResult) {
        let r = Self::index_of(&mut self.rows, row);
        let c = Self::index_of(&mut self.cols, col);
        self.cells.insert((r, c), result);
    }

    /// Cell text, `-` where no result is available.
    pub fn cell(&self, row: usize, col: usize) -> String {
        self.cells
            .get(&(row, col))
            .map(ExchangeResult::cell)
            .unwrap_or_else(|| "-".to_owned())
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        if !self.title.is_empty() {
            let _ = writeln!(out, "**{}**\n", self.title);
        }
        let _ = write!(out, "| policy |");
        for c in &self.cols {
            let _ = write!(out, " {c} |");
        }
        out.push('\n');
        out.push_str("|---|");
        for _ in &self.cols {
            out.push_str("---|");
        }
        out.push('\n');
        for (r, row) in self.rows.iter().enumerate() {
            let _ = write!(out, "| {row} |");
            for c in 0..self.cols.len() {
                let _ = write!(out, " {} |", self.cell(r, c));
            }
            out.push('\n');
        }
        out.push_str("\n`*` extrapolated beyond measured reference accuracies; `✓` no exchange possible; `-` not available.\n");
        if let Some(p) = self.protocol {
            let _ = writeln!(out, "protocol: {}", p.as_str());
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("policy");
        for c in &self.cols {
            out.push(',');
            out.push_str(&csv_field(c));
        }
        out.push('\n');
        for (r, row) in self.rows.iter().enumerate() {
            out.push_str(&csv_field(row));
            for c in 0..self.cols.len() {
                out.push(',');
                out.push_str(&self.cell(r, c));
            }
            out.push('\n');
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}
