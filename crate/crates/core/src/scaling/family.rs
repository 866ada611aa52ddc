use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The registered learning-curve families. Parameter order follows the
/// letters in each formula.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveFamily {
    /// `a * x^(-c) + b`, params `[a, b, c]`.
    PowerLaw,
    /// `a * tanh(x^(-c)) + b`, params `[a, b, c]`.
    TanhBounded,
    /// `a * exp(-b / (c*x + 1)^d)`, params `[a, b, c, d]`.
    SymExp,
    /// `a - b / (x + c)`, params `[a, b, c]`.
    SymRational,
    /// `a^(b / (c*x + 1)^d) - e`, params `[a, b, c, d, e]`.
    SymPowerExp,
}

impl CurveFamily {
    pub const ALL: [CurveFamily; 5] = [
        CurveFamily::PowerLaw,
        CurveFamily::TanhBounded,
        CurveFamily::SymExp,
        CurveFamily::SymRational,
        CurveFamily::SymPowerExp,
    ];

    pub fn arity(self) -> usize {
        match self {
            CurveFamily::PowerLaw | CurveFamily::TanhBounded | CurveFamily::SymRational => 3,
            CurveFamily::SymExp => 4,
            CurveFamily::SymPowerExp => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CurveFamily::PowerLaw => "power_law",
            CurveFamily::TanhBounded => "tanh_bounded",
            CurveFamily::SymExp => "sym_exp",
            CurveFamily::SymRational => "sym_rational",
            CurveFamily::SymPowerExp => "sym_power_exp",
        }
    }

    /// Whether `invert` has a closed form for this family.
    pub fn has_closed_inverse(self) -> bool {
        matches!(self, CurveFamily::PowerLaw | CurveFamily::SymRational)
    }
}

impl fmt::Display for CurveFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CurveFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CurveFamily::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown curve family {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveParams {
    pub family: CurveFamily,
    pub values: Vec<f64>,
}

/// Result of inverting a curve: either the preimage or a marker that the
/// requested value lies outside the curve's range on `x > 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Inverse {
    At(f64),
    NoSolution,
}

impl Inverse {
    pub fn value(self) -> Option<f64> {
        match self {
            Inverse::At(x) => Some(x),
            Inverse::NoSolution => None,
        }
    }
}

// Geometric bracket 2^-60 .. 2^60 for the bisection inverse.
const BRACKET_EXP: i32 = 60;
const BISECTION_STEPS: usize = 200;

impl CurveParams {
    pub fn new(family: CurveFamily, values: Vec<f64>) -> Result<Self> {
        if values.len() != family.arity() {
            return Err(Error::InvalidParameter(format!(
                "{family} takes {} parameters, got {}",
                family.arity(),
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{family} parameter {v}")));
        }
        Ok(Self { family, values })
    }

    pub fn power_law(a: f64, b: f64, c: f64) -> Self {
        Self {
            family: CurveFamily::PowerLaw,
            values: vec![a, b, c],
        }
    }

    pub fn tanh_bounded(a: f64, b: f64, c: f64) -> Self {
        Self {
            family: CurveFamily::TanhBounded,
            values: vec![a, b, c],
        }
    }

    pub fn sym_exp(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self {
            family: CurveFamily::SymExp,
            values: vec![a, b, c, d],
        }
    }

    pub fn sym_rational(a: f64, b: f64, c: f64) -> Self {
        Self {
            family: CurveFamily::SymRational,
            values: vec![a, b, c],
        }
    }

    pub fn sym_power_exp(a: f64, b: f64, c: f64, d: f64, e: f64) -> Self {
        Self {
            family: CurveFamily::SymPowerExp,
            values: vec![a, b, c, d, e],
        }
    }

    /// Curve value without domain or finiteness checks.
    pub(crate) fn raw(&self, x: f64) -> f64 {
        let v = &self.values;
        match self.family {
            CurveFamily::PowerLaw => v[0] * x.powf(-v[2]) + v[1],
            CurveFamily::TanhBounded => v[0] * x.powf(-v[2]).tanh() + v[1],
            CurveFamily::SymExp => v[0] * (-v[1] / (v[2] * x + 1.0).powf(v[3])).exp(),
            CurveFamily::SymRational => v[0] - v[1] / (x + v[2]),
            CurveFamily::SymPowerExp => v[0].powf(v[1] / (v[2] * x + 1.0).powf(v[3])) - v[4],
        }
    }

    pub fn evaluate(&self, x: f64) -> Result<f64> {
        if !(x > 0.0) {
            return Err(Error::Domain(format!(
                "curve evaluated at x = {x}, need x > 0"
            )));
        }
        let y = self.raw(x);
        if !y.is_finite() {
            return Err(Error::NonFinite(format!(
                "{} {:?} at x = {x} gives {y}",
                self.family, self.values
            )));
        }
        Ok(y)
    }

    /// Partial derivatives of the curve value with respect to each parameter.
    pub fn gradient(&self, x: f64) -> Vec<f64> {
        let v = &self.values;
        match self.family {
            CurveFamily::PowerLaw => {
                let (a, c) = (v[0], v[2]);
                let p = x.powf(-c);
                vec![p, 1.0, -a * x.ln() * p]
            }
            CurveFamily::TanhBounded => {
                let (a, c) = (v[0], v[2]);
                let u = x.powf(-c);
                let t = u.tanh();
                vec![t, 1.0, -a * (1.0 - t * t) * x.ln() * u]
            }
            CurveFamily::SymExp => {
                let (a, b, c, d) = (v[0], v[1], v[2], v[3]);
                let s = c * x + 1.0;
                let sd = s.powf(-d);
                let e = (-b * sd).exp();
                vec![
                    e,
                    -a * e * sd,
                    a * e * b * d * x * sd / s,
                    a * e * b * sd * s.ln(),
                ]
            }
            CurveFamily::SymRational => {
                let (b, c) = (v[1], v[2]);
                let q = x + c;
                vec![1.0, -1.0 / q, b / (q * q)]
            }
            CurveFamily::SymPowerExp => {
                let (a, b, c, d) = (v[0], v[1], v[2], v[3]);
                let s = c * x + 1.0;
                let sd = s.powf(-d);
                let g = b * sd;
                let ag = a.powf(g);
                let ln_a = a.ln();
                vec![
                    g * a.powf(g - 1.0),
                    ag * ln_a * sd,
                    -ag * ln_a * b * d * x * sd / s,
                    -ag * ln_a * g * s.ln(),
                    -1.0,
                ]
            }
        }
    }

    /// True iff the parameterization is strictly increasing on `x > 0`.
    pub fn monotone_domain(&self) -> bool {
        let v = &self.values;
        if v.len() != self.family.arity() || v.iter().any(|p| !p.is_finite()) {
            return false;
        }
        match self.family {
            CurveFamily::PowerLaw | CurveFamily::TanhBounded => v[0] < 0.0 && v[2] > 0.0,
            CurveFamily::SymExp => v[0] > 0.0 && v[1] > 0.0 && v[2] > 0.0 && v[3] > 0.0,
            CurveFamily::SymRational => v[1] > 0.0 && v[2] >= 0.0,
            CurveFamily::SymPowerExp => {
                v[0] > 0.0 && v[0] < 1.0 && v[1] > 0.0 && v[2] > 0.0 && v[3] > 0.0
            }
        }
    }

    pub(crate) fn require_monotone(&self) -> Result<()> {
        if self.monotone_domain() {
            Ok(())
        } else {
            Err(Error::NonMonotone(format!(
                "{} {:?}",
                self.family, self.values
            )))
        }
    }

    /// Infimum and supremum of the curve over `x > 0` (monotone params only).
    pub fn range(&self) -> (f64, f64) {
        let v = &self.values;
        match self.family {
            CurveFamily::PowerLaw => (f64::NEG_INFINITY, v[1]),
            CurveFamily::TanhBounded => (v[0] + v[1], v[1]),
            CurveFamily::SymExp => (v[0] * (-v[1]).exp(), v[0]),
            CurveFamily::SymRational => {
                let inf = if v[2] > 0.0 {
                    v[0] - v[1] / v[2]
                } else {
                    f64::NEG_INFINITY
                };
                (inf, v[0])
            }
            CurveFamily::SymPowerExp => (v[0].powf(v[1]) - v[4], 1.0 - v[4]),
        }
    }

    /// Solves `f(x) = y` for `x > 0`.
    ///
    /// Closed form for the power law and the rational family; geometric
    /// bracketing over `2^-60 .. 2^60` followed by bisection otherwise.
    /// Targets outside the open range, or whose preimage lies beyond the
    /// bracket, give [`Inverse::NoSolution`].
    pub fn invert(&self, y: f64) -> Result<Inverse> {
        self.require_monotone()?;
        if !y.is_finite() {
            return Err(Error::NonFinite(format!("inverse requested at y = {y}")));
        }
        let (inf, sup) = self.range();
        if y >= sup || y <= inf {
            return Ok(Inverse::NoSolution);
        }
        let v = &self.values;
        let x = match self.family {
            CurveFamily::PowerLaw => ((y - v[1]) / v[0]).powf(-1.0 / v[2]),
            CurveFamily::SymRational => v[1] / (v[0] - y) - v[2],
            _ => return Ok(self.bisect(y)),
        };
        if x > 0.0 && x.is_finite() {
            Ok(Inverse::At(x))
        } else {
            Ok(Inverse::NoSolution)
        }
    }

    fn bisect(&self, y: f64) -> Inverse {
        let lo_limit = 2f64.powi(-BRACKET_EXP);
        let hi_limit = 2f64.powi(BRACKET_EXP);
        if self.raw(lo_limit) > y || self.raw(hi_limit) < y {
            return Inverse::NoSolution;
        }
        // Walk the geometric grid to the first point at or above the target.
        let mut hi = lo_limit;
        while self.raw(hi) < y {
            hi *= 2.0;
        }
        if self.raw(hi) == y {
            return Inverse::At(hi);
        }
        let mut lo = hi / 2.0;
        for _ in 0..BISECTION_STEPS {
            let mid = (lo * hi).sqrt();
            if mid <= lo || mid >= hi {
                break;
            }
            if self.raw(mid) < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (flo, fhi) = (self.raw(lo), self.raw(hi));
        Inverse::At(if (y - flo).abs() <= (fhi - y).abs() {
            lo
        } else {
            hi
        })
    }
}
