//! Learning-curve families, inversion, and least-squares fitting.

mod family;
mod fit;
pub mod lm;

pub use family::{CurveFamily, CurveParams, Inverse};
pub use fit::{
    aic, default_init, fit, points_from_xy, select_family, CurveFit, FamilyScore, FitOptions, Init,
    Selection, INIT_EXPONENT_D,
};
