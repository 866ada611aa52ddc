use serde::{Deserialize, Serialize};

use super::family::{CurveFamily, CurveParams};
use super::lm::{self, LeastSquares};
use crate::error::{Error, Result};
use crate::store::LearningCurvePoint;

/// A fitted curve plus the statistics of the fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "CurveFitJson", try_from = "CurveFitJson")]
pub struct CurveFit {
    pub params: CurveParams,
    /// Unweighted root-mean-square residual over the fitted points.
    pub rmse: f64,
    pub fitted_range: [f64; 2],
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Serialize, Deserialize)]
struct CurveFitJson {
    family: CurveFamily,
    params: Vec<f64>,
    rmse: f64,
    fitted_range: [f64; 2],
    converged: bool,
    iterations: usize,
}

impl From<CurveFit> for CurveFitJson {
    fn from(f: CurveFit) -> Self {
        Self {
            family: f.params.family,
            params: f.params.values,
            rmse: f.rmse,
            fitted_range: f.fitted_range,
            converged: f.converged,
            iterations: f.iterations,
        }
    }
}

impl TryFrom<CurveFitJson> for CurveFit {
    type Error = Error;

    fn try_from(j: CurveFitJson) -> Result<Self> {
        Ok(Self {
            params: CurveParams::new(j.family, j.params)?,
            rmse: j.rmse,
            fitted_range: j.fitted_range,
            converged: j.converged,
            iterations: j.iterations,
        })
    }
}

impl CurveFit {
    pub fn family(&self) -> CurveFamily {
        self.params.family
    }

    /// Residual sum of squares implied by `rmse` over `n` points.
    pub fn rss(&self, n: usize) -> f64 {
        self.rmse * self.rmse * n as f64
    }
}

#[derive(Clone, Debug)]
pub enum Init {
    /// Endpoint-matched starts (see [`default_init`]), several shape scales.
    Default,
    Params(CurveParams),
}

#[derive(Clone, Copy, Debug)]
pub struct FitOptions {
    /// Weight residuals by `1 / std_error²`. Points with zero standard
    /// error fall back to unit weight.
    pub weighted: bool,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            weighted: false,
            max_iterations: lm::MAX_ITERATIONS,
        }
    }
}

const EPS: f64 = 1e-12;
/// Exponent used for the `d` parameter of the exponential families at init.
pub const INIT_EXPONENT_D: f64 = 0.77;

struct CurveProblem<'a> {
    family: CurveFamily,
    xs: &'a [f64],
    ys: &'a [f64],
    sqrt_w: Vec<f64>,
}

/// Lower and upper bounds that keep a family on its increasing branch.
fn bounds(family: CurveFamily) -> Vec<(f64, f64)> {
    let any = (f64::NEG_INFINITY, f64::INFINITY);
    let pos = (EPS, f64::INFINITY);
    let neg = (f64::NEG_INFINITY, -EPS);
    match family {
        CurveFamily::PowerLaw | CurveFamily::TanhBounded => vec![neg, any, pos],
        CurveFamily::SymExp => vec![pos, pos, pos, pos],
        CurveFamily::SymRational => vec![any, pos, (0.0, f64::INFINITY)],
        CurveFamily::SymPowerExp => vec![(EPS, 1.0 - EPS), pos, pos, pos, any],
    }
}

fn clamp_to_bounds(family: CurveFamily, p: &mut [f64]) -> bool {
    let mut changed = false;
    for (v, (lo, hi)) in p.iter_mut().zip(bounds(family)) {
        let c = v.clamp(lo, hi);
        if c != *v {
            *v = c;
            changed = true;
        }
    }
    changed
}

impl LeastSquares for CurveProblem<'_> {
    fn n_params(&self) -> usize {
        self.family.arity()
    }

    fn residuals(&self, p: &[f64]) -> Option<Vec<f64>> {
        let curve = CurveParams {
            family: self.family,
            values: p.to_vec(),
        };
        Some(
            self.xs
                .iter()
                .zip(self.ys)
                .zip(&self.sqrt_w)
                .map(|((&x, &y), &w)| w * (curve.raw(x) - y))
                .collect(),
        )
    }

    fn jacobian(&self, p: &[f64]) -> Vec<Vec<f64>> {
        let curve = CurveParams {
            family: self.family,
            values: p.to_vec(),
        };
        self.xs
            .iter()
            .zip(&self.sqrt_w)
            .map(|(&x, &w)| curve.gradient(x).into_iter().map(|g| g * w).collect())
            .collect()
    }

    fn project(&self, p: &mut [f64]) -> bool {
        clamp_to_bounds(self.family, p)
    }

    fn at_bound(&self, p: &[f64]) -> bool {
        p.iter()
            .zip(bounds(self.family))
            .any(|(&v, (lo, hi))| v == lo || v == hi)
    }
}

fn check_points(points: &[LearningCurvePoint], needed: usize) -> Result<()> {
    if points.len() < needed {
        return Err(Error::InsufficientPoints {
            needed,
            got: points.len(),
        });
    }
    if points
        .windows(2)
        .any(|w| w[1].subset_size <= w[0].subset_size)
    {
        return Err(Error::InvalidParameter(
            "subset sizes must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Starting parameters matched to the first and last points.
///
/// The asymptote (or supremum) is placed 0.02 above the last accuracy,
/// capped below 1, and the remaining scale is solved so the curve passes
/// through the first point. Shape exponents start at 0.5 (power laws) or
/// [`INIT_EXPONENT_D`] (exponential families).
pub fn default_init(points: &[LearningCurvePoint], family: CurveFamily) -> Result<CurveParams> {
    check_points(points, 2)?;
    Ok(endpoint_init(points, family, 1.0))
}

/// `shape` rescales the family's curvature parameter relative to the default.
fn endpoint_init(points: &[LearningCurvePoint], family: CurveFamily, shape: f64) -> CurveParams {
    let first = points[0];
    let last = points[points.len() - 1];
    let x1 = first.subset_size as f64;
    let y_max = points
        .iter()
        .map(|p| p.mean_accuracy)
        .fold(f64::MIN, f64::max);
    let mut top = (last.mean_accuracy.max(y_max) + 0.02).min(0.999);
    if top <= first.mean_accuracy {
        top = first.mean_accuracy + 1e-3;
    }
    let y1 = first.mean_accuracy.clamp(1e-3, top - 1e-6);
    let gap = top - y1;
    let mut values = match family {
        CurveFamily::PowerLaw => {
            let c = 0.5 * shape;
            vec![-gap * x1.powf(c), top, c]
        }
        CurveFamily::TanhBounded => {
            let c = 0.5 * shape;
            vec![-gap / x1.powf(-c).tanh(), top, c]
        }
        CurveFamily::SymRational => {
            let c = x1 * shape;
            vec![top, gap * (x1 + c), c]
        }
        CurveFamily::SymExp => {
            let c = shape / x1;
            let d = INIT_EXPONENT_D;
            let b = -(y1 / top).ln() * (c * x1 + 1.0).powf(d);
            vec![top, b, c, d]
        }
        CurveFamily::SymPowerExp => {
            let c = shape / x1;
            let d = INIT_EXPONENT_D;
            let e = 1.0 - top;
            let a: f64 = 0.5;
            let b = (y1 + e).ln() / a.ln() * (c * x1 + 1.0).powf(d);
            vec![a, b, c, d, e]
        }
    };
    clamp_to_bounds(family, &mut values);
    CurveParams { family, values }
}

fn shape_scales(family: CurveFamily) -> &'static [f64] {
    match family {
        CurveFamily::PowerLaw | CurveFamily::TanhBounded => &[1.0, 0.2, 0.6, 2.0],
        CurveFamily::SymRational => &[1.0, 0.1, 10.0],
        CurveFamily::SymExp | CurveFamily::SymPowerExp => &[1.0, 0.1, 10.0, 0.01],
    }
}

/// Least-squares fit of `family` to the points.
pub fn fit(
    points: &[LearningCurvePoint],
    family: CurveFamily,
    init: &Init,
    options: &FitOptions,
) -> Result<CurveFit> {
    check_points(points, family.arity())?;
    let xs: Vec<f64> = points.iter().map(|p| p.subset_size as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean_accuracy).collect();
    let sqrt_w = points
        .iter()
        .map(|p| {
            if options.weighted && p.std_error > 0.0 {
                1.0 / p.std_error
            } else {
                1.0
            }
        })
        .collect();
    let problem = CurveProblem {
        family,
        xs: &xs,
        ys: &ys,
        sqrt_w,
    };

    let starts: Vec<CurveParams> = match init {
        Init::Params(p) => {
            if p.family != family {
                return Err(Error::InvalidParameter(format!(
                    "initial parameters are {} but fitting {family}",
                    p.family
                )));
            }
            vec![p.clone()]
        }
        Init::Default => shape_scales(family)
            .iter()
            .map(|&s| endpoint_init(points, family, s))
            .collect(),
    };

    let mut best: Option<lm::LmReport> = None;
    let mut last_err = None;
    for start in &starts {
        match lm::minimize(&problem, &start.values, options.max_iterations) {
            Ok(rep) => {
                if best.as_ref().is_none_or(|b| rep.cost < b.cost) {
                    best = Some(rep);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let rep = match (best, last_err) {
        (Some(rep), _) => rep,
        (None, Some(e)) => return Err(e),
        (None, None) => unreachable!("at least one start"),
    };

    let params = CurveParams {
        family,
        values: rep.params,
    };
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(&x, &y)| (params.raw(x) - y).powi(2))
        .sum();
    Ok(CurveFit {
        params,
        rmse: (rss / xs.len() as f64).sqrt(),
        fitted_range: [xs[0], xs[xs.len() - 1]],
        converged: rep.converged,
        iterations: rep.iterations,
    })
}

/// Convenience wrapper for raw `(x, y)` data with one seed per point.
pub fn points_from_xy(xs: &[u64], ys: &[f64]) -> Vec<LearningCurvePoint> {
    xs.iter()
        .zip(ys)
        .map(|(&subset_size, &mean_accuracy)| LearningCurvePoint {
            subset_size,
            mean_accuracy,
            std_error: 0.0,
            n_seeds: 1,
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct FamilyScore {
    pub family: CurveFamily,
    pub aic: Option<f64>,
    pub rss: Option<f64>,
    pub rmse: Option<f64>,
    /// Why the candidate was excluded, if it was.
    pub failure: Option<String>,
}

#[derive(Clone, Debug)]
pub struct Selection {
    pub best: CurveFit,
    pub scores: Vec<FamilyScore>,
}

/// Akaike information criterion for a least-squares fit with Gaussian errors.
pub fn aic(rss: f64, n: usize, arity: usize) -> f64 {
    let n = n as f64;
    n * (rss.max(f64::MIN_POSITIVE) / n).ln() + 2.0 * arity as f64
}

/// Fits every candidate and keeps the one with the lowest AIC.
pub fn select_family(
    points: &[LearningCurvePoint],
    candidates: &[CurveFamily],
    options: &FitOptions,
) -> Result<Selection> {
    let n = points.len();
    let mut scores = Vec::new();
    let mut best: Option<(f64, CurveFit)> = None;
    for &family in candidates {
        match fit(points, family, &Init::Default, options) {
            Ok(f) => {
                let rss = f.rss(n);
                let score = aic(rss, n, family.arity());
                scores.push(FamilyScore {
                    family,
                    aic: Some(score),
                    rss: Some(rss),
                    rmse: Some(f.rmse),
                    failure: None,
                });
                if best.as_ref().is_none_or(|(s, _)| score < *s) {
                    best = Some((score, f));
                }
            }
            Err(e) => scores.push(FamilyScore {
                family,
                aic: None,
                rss: None,
                rmse: None,
                failure: Some(e.to_string()),
            }),
        }
    }
    match best {
        Some((_, best)) => Ok(Selection { best, scores }),
        None => Err(Error::AllCandidatesFailed(
            scores
                .into_iter()
                .map(|s| format!("{}: {}", s.family, s.failure.unwrap_or_default()))
                .collect(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Subset sizes of the reference grid.
    pub(crate) const GRID: [u64; 13] = [
        1000, 2000, 3000, 6000, 12000, 24000, 48000, 96000, 128000, 144000, 168000, 180000, 192000,
    ];

    fn sample(f: &CurveParams) -> Vec<LearningCurvePoint> {
        let ys: Vec<f64> = GRID
            .iter()
            .map(|&x| f.evaluate(x as f64).unwrap())
            .collect();
        points_from_xy(&GRID, &ys)
    }

    #[test]
    fn two_points_for_three_params() {
        let pts = points_from_xy(&[1000, 2000], &[0.5, 0.6]);
        assert!(matches!(
            fit(
                &pts,
                CurveFamily::PowerLaw,
                &Init::Default,
                &FitOptions::default()
            ),
            Err(Error::InsufficientPoints { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn unsorted_sizes_rejected() {
        let pts = points_from_xy(&[1000, 3000, 2000], &[0.5, 0.6, 0.7]);
        assert!(fit(
            &pts,
            CurveFamily::PowerLaw,
            &Init::Default,
            &FitOptions::default()
        )
        .is_err());
    }

    #[test]
    fn endpoint_init_example() {
        let pts = points_from_xy(&[1000, 192000], &[0.5, 0.9]);
        let init = default_init(&pts, CurveFamily::PowerLaw).unwrap();
        assert!((init.values[1] - 0.92).abs() < 1e-12);
        assert!(init.values[0] < 0.0);
        assert!(init.monotone_domain());
    }

    #[test]
    fn flat_points_init() {
        let pts = points_from_xy(&[1000, 2000, 4000], &[0.6, 0.6, 0.6]);
        for family in CurveFamily::ALL {
            let init = default_init(&pts, family).unwrap();
            assert!(init.monotone_domain(), "{family}");
            assert!(
                (init.evaluate(1000.0).unwrap() - 0.6).abs() < 0.05,
                "{family}"
            );
        }
    }

    #[test]
    fn init_passes_near_first_point() {
        let pts = points_from_xy(&[500, 4000, 30000], &[0.31, 0.55, 0.71]);
        for family in CurveFamily::ALL {
            let init = default_init(&pts, family).unwrap();
            assert!(init.monotone_domain(), "{family}");
            let y = init.evaluate(500.0).unwrap();
            assert!((y - 0.31).abs() < 0.05, "{family}: {y}");
        }
    }

    #[test]
    fn rational_appendix_constants_refit_exactly() {
        let gen = CurveParams::sym_rational(0.866576773986552, 10798.9835603424, 17236.4768553924);
        let f = fit(
            &sample(&gen),
            CurveFamily::SymRational,
            &Init::Default,
            &FitOptions::default(),
        )
        .unwrap();
        assert!(f.rmse <= 1e-8, "rmse {}", f.rmse);
    }

    #[test]
    fn fit_json_shape() {
        let fit = CurveFit {
            params: CurveParams::power_law(-2.0, 0.95, 0.3),
            rmse: 0.001,
            fitted_range: [1000.0, 192000.0],
            converged: true,
            iterations: 12,
        };
        let v: serde_json::Value = serde_json::to_value(&fit).unwrap();
        assert_eq!(v["family"], "power_law");
        assert_eq!(v["params"].as_array().unwrap().len(), 3);
        assert_eq!(v["fitted_range"][1], 192000.0);
        let back: CurveFit = serde_json::from_value(v).unwrap();
        assert_eq!(back, fit);
    }

    #[test]
    fn wrong_arity_json_rejected() {
        let text = r#"{"family":"power_law","params":[1,2],"rmse":0,"fitted_range":[1,2],"converged":true,"iterations":1}"#;
        assert!(serde_json::from_str::<CurveFit>(text).is_err());
    }

    #[test]
    fn power_law_preferred_on_power_law_data() {
        let gen = CurveParams::power_law(-2.0, 0.95, 0.3);
        let sel = select_family(
            &sample(&gen),
            &[CurveFamily::PowerLaw, CurveFamily::SymRational],
            &FitOptions::default(),
        )
        .unwrap();
        assert_eq!(sel.best.family(), CurveFamily::PowerLaw);
        assert_eq!(sel.scores.len(), 2);
    }

    #[test]
    fn single_candidate_wins() {
        let gen = CurveParams::power_law(-2.0, 0.95, 0.3);
        let sel = select_family(
            &sample(&gen),
            &[CurveFamily::SymExp],
            &FitOptions::default(),
        )
        .unwrap();
        assert_eq!(sel.best.family(), CurveFamily::SymExp);
    }

    #[test]
    fn all_failed() {
        let pts = points_from_xy(&[1000, 2000, 3000], &[0.5, 0.6, 0.7]);
        let err = select_family(
            &pts,
            &[CurveFamily::SymExp, CurveFamily::SymPowerExp],
            &FitOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::AllCandidatesFailed(v) if v.len() == 2));
    }

    #[test]
    fn weighted_fit_runs() {
        let gen = CurveParams::power_law(-2.0, 0.95, 0.3);
        let mut pts = sample(&gen);
        for (i, p) in pts.iter_mut().enumerate() {
            p.std_error = 0.001 * (1 + i % 3) as f64;
        }
        let opts = FitOptions {
            weighted: true,
            ..Default::default()
        };
        let f = fit(&pts, CurveFamily::PowerLaw, &Init::Default, &opts).unwrap();
        assert!(f.rmse < 1e-8);
    }
}
