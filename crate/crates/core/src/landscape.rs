//! Gradient noise and flatness probes.
//!
//! Both measurements are filter normalized by default: the gradient
//! deviation of each weight filter is divided by that filter's norm, and
//! random directions are rescaled per filter to the filter's norm. Bias
//! groups are left out of the normalized forms.

use std::fmt::Write as _;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::augment::{Dataset, Sampler, ViewStrategy};
use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::trainer::{FilterGroup, GroupKind, Model, TrainHook};

const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    Filter,
    /// Gradient std: raw deviations. Flatness: a unit-norm direction.
    None,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Per-parameter population standard deviation across `grads`, computed
/// from pairwise differences so identical gradients give exactly zero.
pub fn parameter_std(grads: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = grads.len();
    if n < 2 {
        return Err(Error::InsufficientPoints { needed: 2, got: n });
    }
    let p = grads[0].len();
    if grads.iter().any(|g| g.len() != p) {
        return Err(Error::ShapeMismatch(
            "gradients of different lengths".into(),
        ));
    }
    let mut var = vec![0.0; p];
    for i in 0..n {
        for j in i + 1..n {
            for ((v, a), b) in var.iter_mut().zip(&grads[i]).zip(&grads[j]) {
                let d = a - b;
                *v += d * d;
            }
        }
    }
    let scale = 1.0 / (n * n) as f64;
    Ok(var.into_iter().map(|v| (v * scale).sqrt()).collect())
}

/// Global norm of the (optionally filter-normalized) std tensor.
pub fn std_norm(
    std: &[f64],
    params: &[f64],
    groups: &[FilterGroup],
    mode: Normalization,
) -> Result<f64> {
    if mode == Normalization::None {
        return Ok(norm(std));
    }
    let mut total = 0.0;
    for g in groups.iter().filter(|g| g.kind == GroupKind::Weight) {
        let block = &std[g.range.clone()];
        let block_sq: f64 = block.iter().map(|v| v * v).sum();
        let w = norm(&params[g.range.clone()]);
        if w < DEGENERATE_NORM {
            if block_sq > 0.0 {
                return Err(Error::DegenerateFilter(g.name.clone()));
            }
            continue;
        }
        total += block_sq / (w * w);
    }
    Ok(total.sqrt())
}

/// Filter-normalized gradient std over the given batches.
pub fn gradient_std(model: &Model, batches: &[Dataset], mode: Normalization) -> Result<f64> {
    let grads = batches
        .iter()
        .map(|b| Ok(model.loss_and_grad(b)?.1))
        .collect::<Result<Vec<_>>>()?;
    std_norm(
        &parameter_std(&grads)?,
        &model.params,
        model.net.groups(),
        mode,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradNoiseConfig {
    pub batch_size: usize,
    pub n_batches: usize,
    pub normalization: Normalization,
    /// Draw fresh augmentations for measured batches under the random
    /// strategy; when false they are plain base samples.
    pub fresh_augmentation: bool,
}

impl Default for GradNoiseConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            n_batches: 10,
            normalization: Normalization::Filter,
            fresh_augmentation: true,
        }
    }
}

/// Measures gradient std on batches of `batch_size` base samples drawn
/// from a fork of `sampler` seeded by `seed`; the training sampler is not
/// advanced.
pub fn sample_gradient_std(
    model: &Model,
    sampler: &Sampler,
    cfg: &GradNoiseConfig,
    seed: &SeedStream,
) -> Result<f64> {
    if cfg.n_batches < 2 {
        return Err(Error::InsufficientPoints {
            needed: 2,
            got: cfg.n_batches,
        });
    }
    let plain = !cfg.fresh_augmentation && sampler.policy().strategy == ViewStrategy::Random;
    let mut s = if plain {
        sampler.fork_unaugmented(seed)
    } else {
        sampler.fork(seed)
    };
    let batches = (0..cfg.n_batches)
        .map(|_| s.measurement_batch(cfg.batch_size))
        .collect::<Result<Vec<_>>>()?;
    gradient_std(model, &batches, cfg.normalization)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisePoint {
    pub step: usize,
    pub grad_std: f64,
    pub n_batches: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientNoiseReport {
    pub every: usize,
    pub config: GradNoiseConfig,
    pub points: Vec<NoisePoint>,
}

impl GradientNoiseReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# every={} batch_size={} n_batches={} normalization={:?} fresh_augmentation={}\nstep,grad_std,n_batches\n",
            self.every, self.config.batch_size, self.config.n_batches, self.config.normalization, self.config.fresh_augmentation
        );
        for p in &self.points {
            let _ = writeln!(out, "{},{},{}", p.step, p.grad_std, p.n_batches);
        }
        out
    }

    pub fn last(&self) -> Option<f64> {
        self.points.last().map(|p| p.grad_std)
    }
}

/// Training hook recording gradient std every `every` steps, starting at
/// step 0. Measurements use their own generator per checkpoint.
pub struct NoiseTrace {
    seed: SeedStream,
    report: GradientNoiseReport,
}

impl NoiseTrace {
    pub fn new(every: usize, config: GradNoiseConfig, seed: &SeedStream) -> Result<Self> {
        if every == 0 {
            return Err(Error::InvalidParameter(
                "trace interval must be positive".into(),
            ));
        }
        Ok(Self {
            seed: seed.split("noise"),
            report: GradientNoiseReport {
                every,
                config,
                points: Vec::new(),
            },
        })
    }

    pub fn into_report(self) -> GradientNoiseReport {
        self.report
    }
}

impl TrainHook<f64> for NoiseTrace {
    fn at_step(&mut self, step: usize, model: &Model, sampler: &Sampler) -> Result<()> {
        if step.is_multiple_of(self.report.every) {
            let cfg = &self.report.config;
            let grad_std = sample_gradient_std(model, sampler, cfg, &self.seed.index(step as u64))?;
            self.report.points.push(NoisePoint {
                step,
                grad_std,
                n_batches: cfg.n_batches,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlatnessConfig {
    pub loss_threshold: f64,
    pub n_directions: usize,
    pub max_radius: f64,
    pub initial_step: f64,
    pub bisection_steps: usize,
    pub normalization: Normalization,
}

impl Default for FlatnessConfig {
    fn default() -> Self {
        Self {
            loss_threshold: 1.0,
            n_directions: 10,
            max_radius: 100.0,
            initial_step: 0.01,
            bisection_steps: 30,
            normalization: Normalization::Filter,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatnessReport {
    pub config: FlatnessConfig,
    pub base_loss: f64,
    /// Mean over uncensored directions.
    pub mean_distance: f64,
    /// Distance per direction; `None` where the threshold was not reached
    /// within `max_radius`.
    pub distances: Vec<Option<f64>>,
    pub n_directions: usize,
    pub censored: usize,
}

impl FlatnessReport {
    pub fn to_csv(&self) -> String {
        let c = &self.config;
        let mut out = format!(
            "# loss_threshold={} n_directions={} max_radius={} normalization={:?} base_loss={} mean_distance={} censored={}\ndirection_index,distance\n",
            c.loss_threshold, c.n_directions, c.max_radius, c.normalization, self.base_loss, self.mean_distance, self.censored
        );
        for (i, d) in self.distances.iter().enumerate() {
            let _ = writeln!(out, "{i},{}", d.map(|v| v.to_string()).unwrap_or_default());
        }
        out
    }
}

/// Random direction for `theta`: per weight filter rescaled to the
/// filter's norm (biases zeroed), or a unit vector.
pub fn direction(
    theta: &[f64],
    groups: &[FilterGroup],
    mode: Normalization,
    rng: &mut crate::rng::Rng,
) -> Vec<f64> {
    let mut d: Vec<f64> = (0..theta.len())
        .map(|_| StandardNormal.sample(rng))
        .collect();
    match mode {
        Normalization::None => {
            let n = norm(&d);
            d.iter_mut().for_each(|v| *v /= n);
        }
        Normalization::Filter => {
            for g in groups {
                let r = g.range.clone();
                let scale = match g.kind {
                    GroupKind::Bias => 0.0,
                    GroupKind::Weight => {
                        let dn = norm(&d[r.clone()]);
                        if dn > 0.0 {
                            norm(&theta[r.clone()]) / dn
                        } else {
                            0.0
                        }
                    }
                };
                d[r].iter_mut().for_each(|v| *v *= scale);
            }
        }
    }
    d
}

/// Smallest `t` with `loss(t) >= threshold` by doubling from `t0` and then
/// bisecting; `None` if `max_radius` is reached first.
pub fn distance_to_threshold(
    loss: &mut impl FnMut(f64) -> Result<f64>,
    threshold: f64,
    t0: f64,
    max_radius: f64,
    bisection_steps: usize,
) -> Result<Option<f64>> {
    let mut lo = 0.0;
    let mut hi = t0.min(max_radius);
    loop {
        if loss(hi)? >= threshold {
            break;
        }
        if hi >= max_radius {
            return Ok(None);
        }
        lo = hi;
        hi = (2.0 * hi).min(max_radius);
    }
    for _ in 0..bisection_steps {
        let mid = 0.5 * (lo + hi);
        if loss(mid)? >= threshold {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

/// Flatness of an arbitrary loss around `theta`. `groups` supplies the
/// filters for filter normalization.
pub fn flatness_of(
    mut loss: impl FnMut(&[f64]) -> Result<f64>,
    theta: &[f64],
    groups: &[FilterGroup],
    cfg: &FlatnessConfig,
    seed: &SeedStream,
) -> Result<FlatnessReport> {
    if cfg.n_directions == 0 || !(cfg.max_radius > 0.0) || !(cfg.initial_step > 0.0) {
        return Err(Error::InvalidParameter(
            "flatness needs directions, a positive radius and a positive initial step".into(),
        ));
    }
    let base_loss = loss(theta)?;
    if !(base_loss < cfg.loss_threshold) {
        return Err(Error::InvalidParameter(format!(
            "loss {base_loss} at the model is not below the threshold {}",
            cfg.loss_threshold
        )));
    }
    let mut distances = Vec::with_capacity(cfg.n_directions);
    let mut point = theta.to_vec();
    for i in 0..cfg.n_directions {
        let d = direction(
            theta,
            groups,
            cfg.normalization,
            &mut seed.index(i as u64).rng(),
        );
        let mut along = |t: f64| {
            for ((p, &th), &dv) in point.iter_mut().zip(theta).zip(&d) {
                *p = th + t * dv;
            }
            loss(&point)
        };
        distances.push(distance_to_threshold(
            &mut along,
            cfg.loss_threshold,
            cfg.initial_step,
            cfg.max_radius,
            cfg.bisection_steps,
        )?);
    }
    let reached: Vec<f64> = distances.iter().flatten().copied().collect();
    if reached.is_empty() {
        return Err(Error::ThresholdUnreachable {
            threshold: cfg.loss_threshold,
            censored_radius: cfg.max_radius,
        });
    }
    Ok(FlatnessReport {
        config: cfg.clone(),
        base_loss,
        mean_distance: reached.iter().sum::<f64>() / reached.len() as f64,
        censored: distances.len() - reached.len(),
        n_directions: cfg.n_directions,
        distances,
    })
}

/// Flatness of the cross-entropy on `data`, which should be the
/// unaugmented training set.
pub fn flatness(
    model: &Model,
    data: &Dataset,
    cfg: &FlatnessConfig,
    seed: &SeedStream,
) -> Result<FlatnessReport> {
    let net = model.net.clone();
    let x = crate::trainer::inputs::<f64>(data);
    let labels = data.labels.clone();
    flatness_of(
        |p| net.loss(p, &x, &labels),
        &model.params,
        net.groups(),
        cfg,
        seed,
    )
}

/// Flatness of `‖θ‖²` at the origin with unit directions: every distance
/// is `√threshold`.
pub fn quadratic_selftest(
    threshold: f64,
    n_directions: usize,
    seed: &SeedStream,
) -> Result<FlatnessReport> {
    let cfg = FlatnessConfig {
        loss_threshold: threshold,
        n_directions,
        normalization: Normalization::None,
        ..Default::default()
    };
    flatness_of(
        |p| Ok(p.iter().map(|v| v * v).sum()),
        &[0.0; 16],
        &[],
        &cfg,
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::{Architecture, Model};

    #[test]
    fn identical_gradients_have_zero_std() {
        let g = vec![vec![0.1, -3.7, 1e-9]; 5];
        assert!(parameter_std(&g).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_unit_gradients() {
        let s = parameter_std(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let n = std_norm(&s, &[], &[], Normalization::None).unwrap();
        assert!((n - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn std_is_order_invariant() {
        let g = vec![
            vec![0.3, 1.0],
            vec![-0.2, 0.4],
            vec![0.9, -1.1],
            vec![0.05, 0.0],
        ];
        let mut r = g.clone();
        r.reverse();
        r.swap(0, 2);
        assert_eq!(parameter_std(&g).unwrap(), parameter_std(&r).unwrap());
    }

    #[test]
    fn filter_normalization_is_homogeneous() {
        let model: Model =
            Model::init(Architecture::small_cnn([1, 4, 4], 3), &SeedStream::new(1)).unwrap();
        let groups = model.net.groups();
        let std: Vec<f64> = (0..model.params.len())
            .map(|i| (i % 5) as f64 * 0.01)
            .collect();
        let a = std_norm(&std, &model.params, groups, Normalization::Filter).unwrap();
        let doubled: Vec<f64> = model.params.iter().map(|v| 2.0 * v).collect();
        let b = std_norm(&std, &doubled, groups, Normalization::Filter).unwrap();
        assert!((a - 2.0 * b).abs() <= 1e-12 * a);
    }

    #[test]
    fn zero_filter_with_noise_is_degenerate() {
        let model: Model = Model::zeros(Architecture::mlp(3, &[], 2)).unwrap();
        let std = vec![0.1; model.params.len()];
        assert!(matches!(
            std_norm(
                &std,
                &model.params,
                model.net.groups(),
                Normalization::Filter
            ),
            Err(Error::DegenerateFilter(_))
        ));
        let quiet = vec![0.0; model.params.len()];
        assert_eq!(
            std_norm(
                &quiet,
                &model.params,
                model.net.groups(),
                Normalization::Filter
            )
            .unwrap(),
            0.0
        );
    }

    #[test]
    fn quadratic_oracle() {
        let one = quadratic_selftest(1.0, 10, &SeedStream::new(3)).unwrap();
        assert!((one.mean_distance - 1.0).abs() < 1e-6);
        assert!(one
            .distances
            .iter()
            .all(|d| (d.unwrap() - 1.0).abs() < 1e-6));
        let four = quadratic_selftest(4.0, 10, &SeedStream::new(3)).unwrap();
        assert!((four.mean_distance - 2.0).abs() < 1e-6);
    }

    #[test]
    fn unreachable_threshold() {
        let cfg = FlatnessConfig {
            loss_threshold: 1.0,
            n_directions: 3,
            max_radius: 0.5,
            normalization: Normalization::None,
            ..Default::default()
        };
        let r = flatness_of(
            |p| Ok(p.iter().map(|v| v * v).sum()),
            &[0.0; 4],
            &[],
            &cfg,
            &SeedStream::new(1),
        );
        assert!(matches!(r, Err(Error::ThresholdUnreachable { .. })));
    }

    #[test]
    fn censored_directions_are_counted() {
        // loss grows only along the first axis
        let cfg = FlatnessConfig {
            loss_threshold: 1.0,
            n_directions: 20,
            max_radius: 3.0,
            normalization: Normalization::None,
            ..Default::default()
        };
        let r = flatness_of(
            |p| Ok(p[0] * p[0]),
            &[0.0; 2],
            &[],
            &cfg,
            &SeedStream::new(4),
        )
        .unwrap();
        assert!(r.censored > 0 && r.censored < 20);
        let reached: Vec<f64> = r.distances.iter().flatten().copied().collect();
        assert!(
            (r.mean_distance - reached.iter().sum::<f64>() / reached.len() as f64).abs() < 1e-15
        );
        assert!(reached.iter().all(|&d| d > 0.0));
        assert_eq!(
            r.to_csv().lines().filter(|l| l.ends_with(',')).count(),
            r.censored
        );
    }

    #[test]
    fn threshold_below_base_loss_rejected() {
        let cfg = FlatnessConfig::default();
        assert!(flatness_of(|_| Ok(2.0), &[0.0], &[], &cfg, &SeedStream::new(0)).is_err());
    }
}
