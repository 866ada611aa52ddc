//! Label-preserving image transforms, augmentation policies and the view
//! sampling strategies (fresh random views, a frozen pool of views, and a
//! frozen pool with every view of a sample in the same batch).

use std::sync::Arc;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Rng, SeedStream};

/// Channels × height × width, row-major, values in [0, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::ShapeMismatch(format!(
                "image dimensions {c}x{h}x{w}"
            )));
        }
        if data.len() != c * h * w {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {c}x{h}x{w} image",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidParameter(format!(
                "pixel value {v} outside [0, 1]"
            )));
        }
        Ok(Self { c, h, w, data })
    }

    pub fn filled(c: usize, h: usize, w: usize, value: f64) -> Result<Self> {
        Self::new(c, h, w, vec![value; c * h * w])
    }

    pub fn from_fn(
        c: usize,
        h: usize,
        w: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data.push(f(ch, y, x));
                }
            }
        }
        Self::new(c, h, w, data)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    fn map_pixels(&self, f: impl Fn(usize, usize, usize) -> f64) -> Image {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.c {
            for y in 0..self.h {
                for x in 0..self.w {
                    data.push(f(c, y, x));
                }
            }
        }
        Image { data, ..*self }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    HorizontalFlip,
    VerticalFlip,
    RandomCrop {
        pad: usize,
    },
    ColorJitter {
        range: f64,
    },
    GaussianBlur {
        sigma: f64,
    },
    /// Counter-clockwise rotation by `angle` degrees.
    Rotation {
        angle: f64,
    },
}

impl Transform {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Transform::ColorJitter { range } if !(0.0..=1.0).contains(&range) => Err(
                Error::InvalidParameter(format!("jitter range {range} outside [0, 1]")),
            ),
            Transform::GaussianBlur { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                Err(Error::InvalidParameter(format!("blur sigma {sigma}")))
            }
            Transform::Rotation { angle } if !angle.is_finite() => {
                Err(Error::InvalidParameter(format!("rotation angle {angle}")))
            }
            _ => Ok(()),
        }
    }

    /// True if the transform uses no randomness.
    pub fn is_deterministic(&self) -> bool {
        !matches!(
            self,
            Transform::RandomCrop { .. } | Transform::ColorJitter { .. }
        )
    }
}

pub fn apply_transform(t: &Transform, img: &Image, rng: &mut Rng) -> Result<Image> {
    t.validate()?;
    Ok(match *t {
        Transform::HorizontalFlip => img.map_pixels(|c, y, x| img.get(c, y, img.w - 1 - x)),
        Transform::VerticalFlip => img.map_pixels(|c, y, x| img.get(c, img.h - 1 - y, x)),
        Transform::RandomCrop { pad } => {
            if pad >= img.h.min(img.w) {
                return Err(Error::InvalidParameter(format!(
                    "crop pad {pad} must be below the image side {}",
                    img.h.min(img.w)
                )));
            }
            let oy = rng.random_range(0..=2 * pad) as isize - pad as isize;
            let ox = rng.random_range(0..=2 * pad) as isize - pad as isize;
            img.map_pixels(|c, y, x| {
                let sy = y as isize + oy;
                let sx = x as isize + ox;
                if sy < 0 || sx < 0 || sy >= img.h as isize || sx >= img.w as isize {
                    0.0
                } else {
                    img.get(c, sy as usize, sx as usize)
                }
            })
        }
        Transform::ColorJitter { range } => {
            let contrast = rng.random_range(1.0 - range..=1.0 + range);
            let brightness = rng.random_range(1.0 - range..=1.0 + range);
            let mean = img.mean();
            img.map_pixels(|c, y, x| {
                (((img.get(c, y, x) - mean) * contrast + mean) * brightness).clamp(0.0, 1.0)
            })
        }
        Transform::GaussianBlur { sigma } => blur(img, sigma),
        Transform::Rotation { angle } => rotate(img, angle),
    })
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Half-sample symmetric reflection: `d c b a | a b c d | d c b a`.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

fn blur(img: &Image, sigma: f64) -> Image {
    if sigma == 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let conv = |src: &Image, horizontal: bool| {
        src.map_pixels(|c, y, x| {
            k.iter()
                .enumerate()
                .map(|(j, wk)| {
                    let off = j as isize - r;
                    let v = if horizontal {
                        src.get(c, y, reflect(x as isize + off, src.w))
                    } else {
                        src.get(c, reflect(y as isize + off, src.h), x)
                    };
                    wk * v
                })
                .sum::<f64>()
                .clamp(0.0, 1.0)
        })
    };
    conv(&conv(img, true), false)
}

fn rotate(img: &Image, degrees: f64) -> Image {
    let (s, co) = degrees.to_radians().sin_cos();
    let cy = (img.h as f64 - 1.0) / 2.0;
    let cx = (img.w as f64 - 1.0) / 2.0;
    let fetch = |c: usize, y: isize, x: isize| {
        if y < 0 || x < 0 || y >= img.h as isize || x >= img.w as isize {
            0.0
        } else {
            img.get(c, y as usize, x as usize)
        }
    };
    img.map_pixels(|c, y, x| {
        // inverse map, with y pointing down
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        let sx = co * dx - s * dy + cx;
        let sy = s * dx + co * dy + cy;
        let x0 = sx.floor();
        let y0 = sy.floor();
        let fx = sx - x0;
        let fy = sy - y0;
        let (x0, y0) = (x0 as isize, y0 as isize);
        let v = (1.0 - fy) * ((1.0 - fx) * fetch(c, y0, x0) + fx * fetch(c, y0, x0 + 1))
            + fy * ((1.0 - fx) * fetch(c, y0 + 1, x0) + fx * fetch(c, y0 + 1, x0 + 1));
        v.clamp(0.0, 1.0)
    })
}

/// One step of a policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Op {
    HorizontalFlip,
    VerticalFlip,
    RandomCrop {
        pad: usize,
    },
    ColorJitter {
        range: f64,
    },
    GaussianBlur {
        sigma: f64,
    },
    /// Rotation by an angle drawn uniformly from `[-angle, angle]`.
    Rotation {
        angle: f64,
    },
    /// Flips odd-numbered frozen views; a fair coin for fresh views.
    ViewFlip,
    /// Applies one of `ops`, chosen uniformly.
    OneOf {
        ops: Vec<Op>,
    },
    /// One transform from the built-in table at a uniformly random strength.
    Trivial,
}

fn default_p() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyOp {
    #[serde(flatten)]
    pub op: Op,
    #[serde(default = "default_p")]
    pub p: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ViewStrategy {
    #[default]
    Random,
    FixedViews {
        k: usize,
    },
    FixedViewsSameBatch {
        k: usize,
    },
}

impl ViewStrategy {
    pub fn views(self) -> Option<usize> {
        match self {
            ViewStrategy::Random => None,
            ViewStrategy::FixedViews { k } | ViewStrategy::FixedViewsSameBatch { k } => Some(k),
        }
    }

    pub fn as_store(self) -> crate::store::Strategy {
        use crate::store::Strategy;
        match self {
            ViewStrategy::Random => Strategy::Random,
            ViewStrategy::FixedViews { .. } => Strategy::FixedViews,
            ViewStrategy::FixedViewsSameBatch { .. } => Strategy::FixedViewsSameBatch,
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    #[serde(default)]
    pub ops: Vec<PolicyOp>,
    #[serde(default)]
    pub strategy: ViewStrategy,
    /// Draw a fresh frozen view pool for every run seed. When false the pool
    /// depends only on the dataset, so all seeds share it.
    #[serde(default = "default_true")]
    pub redraw_views_per_seed: bool,
}

const TRIVIAL_TABLE: usize = 7;

impl Op {
    fn validate(&self) -> Result<()> {
        match self {
            Op::RandomCrop { pad } => Transform::RandomCrop { pad: *pad }.validate(),
            Op::ColorJitter { range } => Transform::ColorJitter { range: *range }.validate(),
            Op::GaussianBlur { sigma } => Transform::GaussianBlur { sigma: *sigma }.validate(),
            Op::Rotation { angle } => Transform::Rotation { angle: *angle }.validate(),
            Op::OneOf { ops } if ops.is_empty() => Err(Error::InvalidParameter(
                "one_of needs at least one op".into(),
            )),
            Op::OneOf { ops } => ops.iter().try_for_each(Op::validate),
            _ => Ok(()),
        }
    }

    fn apply(&self, img: &Image, rng: &mut Rng, view: Option<usize>) -> Result<Image> {
        match self {
            Op::HorizontalFlip => apply_transform(&Transform::HorizontalFlip, img, rng),
            Op::VerticalFlip => apply_transform(&Transform::VerticalFlip, img, rng),
            Op::RandomCrop { pad } => {
                apply_transform(&Transform::RandomCrop { pad: *pad }, img, rng)
            }
            Op::ColorJitter { range } => {
                apply_transform(&Transform::ColorJitter { range: *range }, img, rng)
            }
            Op::GaussianBlur { sigma } => {
                apply_transform(&Transform::GaussianBlur { sigma: *sigma }, img, rng)
            }
            Op::Rotation { angle } => {
                let a = rng.random_range(-angle.abs()..=angle.abs());
                apply_transform(&Transform::Rotation { angle: a }, img, rng)
            }
            Op::ViewFlip => {
                let flip = match view {
                    Some(j) => j % 2 == 1,
                    None => rng.random_bool(0.5),
                };
                if flip {
                    apply_transform(&Transform::HorizontalFlip, img, rng)
                } else {
                    Ok(img.clone())
                }
            }
            Op::OneOf { ops } => {
                let i = rng.random_range(0..ops.len());
                ops[i].apply(img, rng, view)
            }
            Op::Trivial => {
                let side = img.h.min(img.w);
                let s: f64 = rng.random();
                let t = match rng.random_range(0..TRIVIAL_TABLE) {
                    0 => return Ok(img.clone()),
                    1 => Transform::HorizontalFlip,
                    2 => Transform::VerticalFlip,
                    3 => Transform::RandomCrop {
                        pad: ((s * side as f64 / 4.0).round() as usize).min(side - 1),
                    },
                    4 => Transform::ColorJitter { range: 0.5 * s },
                    5 => Transform::GaussianBlur { sigma: s },
                    _ => Transform::Rotation {
                        angle: 30.0 * (2.0 * s - 1.0),
                    },
                };
                apply_transform(&t, img, rng)
            }
        }
    }
}

impl AugmentationPolicy {
    pub fn identity() -> Self {
        Self {
            redraw_views_per_seed: true,
            ..Default::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for op in &self.ops {
            if !(0.0..=1.0).contains(&op.p) {
                return Err(Error::InvalidParameter(format!(
                    "probability {} outside [0, 1]",
                    op.p
                )));
            }
            op.op.validate()?;
        }
        if self.strategy.views() == Some(0) {
            return Err(Error::InvalidParameter(
                "fixed strategies need k >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.ops.iter().all(|o| o.p == 0.0)
    }

    /// Runs the ops in order; each fires with its probability. `view` is the
    /// frozen-view index, if any.
    pub fn apply(&self, img: &Image, rng: &mut Rng, view: Option<usize>) -> Result<Image> {
        let mut out = img.clone();
        for op in &self.ops {
            // always consume the coin so streams stay aligned across p
            let fire = rng.random::<f64>() < op.p;
            if fire {
                out = op.op.apply(&out, rng, view)?;
            }
        }
        Ok(out)
    }
}

/// Labeled images.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(images: Vec<Image>, labels: Vec<usize>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(first) = images.first() {
            if images.iter().any(|i| i.shape() != first.shape()) {
                return Err(Error::ShapeMismatch("images of different shapes".into()));
            }
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// First `n` samples.
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            images: self.images[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Frozen augmented views; views of base sample `i` sit at `i*k .. i*k+k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewPool {
    pub k: usize,
    pub views: Dataset,
}

impl ViewPool {
    pub fn n_base(&self) -> usize {
        self.views.len() / self.k
    }
}

/// Replaces every base sample by `k` augmented views drawn once. Base
/// sample `i` draws from its own stream, so the pool does not depend on
/// iteration order.
pub fn build_fixed_views_dataset(
    base: &Dataset,
    policy: &AugmentationPolicy,
    k: usize,
    seed: &SeedStream,
) -> Result<ViewPool> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    let mut images = Vec::with_capacity(base.len() * k);
    let mut labels = Vec::with_capacity(base.len() * k);
    for (i, (img, &label)) in base.images.iter().zip(&base.labels).enumerate() {
        let mut rng = seed.index(i as u64).rng();
        for j in 0..k {
            images.push(policy.apply(img, &mut rng, Some(j))?);
            labels.push(label);
        }
    }
    Ok(ViewPool {
        k,
        views: Dataset { images, labels },
    })
}

/// Batch iterator for one training run.
#[derive(Clone, Debug)]
pub struct Sampler {
    base: Arc<Dataset>,
    policy: Arc<AugmentationPolicy>,
    pool: Option<Arc<ViewPool>>,
    rng: Rng,
}

impl Sampler {
    /// `seed` is the run's stream; the frozen pool (if any) comes from its
    /// `views` child unless the policy shares one pool across seeds.
    pub fn new(
        base: Arc<Dataset>,
        policy: Arc<AugmentationPolicy>,
        seed: &SeedStream,
    ) -> Result<Self> {
        if base.is_empty() {
            return Err(Error::EmptyDataset);
        }
        policy.validate()?;
        let pool = match policy.strategy.views() {
            Some(k) => {
                let pool_seed = if policy.redraw_views_per_seed {
                    seed.split("views")
                } else {
                    SeedStream::new(0).split("views")
                };
                Some(Arc::new(build_fixed_views_dataset(
                    &base, &policy, k, &pool_seed,
                )?))
            }
            None => None,
        };
        Ok(Self {
            base,
            policy,
            pool,
            rng: seed.split("batches").rng(),
        })
    }

    /// Same data and pool, independent generator.
    pub fn fork(&self, seed: &SeedStream) -> Sampler {
        Sampler {
            rng: seed.rng(),
            ..self.clone()
        }
    }

    /// Plain sampling of unaugmented base samples with its own generator.
    pub fn fork_unaugmented(&self, seed: &SeedStream) -> Sampler {
        Sampler {
            base: self.base.clone(),
            policy: Arc::new(AugmentationPolicy::identity()),
            pool: None,
            rng: seed.rng(),
        }
    }

    pub fn policy(&self) -> &AugmentationPolicy {
        &self.policy
    }

    pub fn base(&self) -> &Dataset {
        &self.base
    }

    pub fn pool(&self) -> Option<&ViewPool> {
        self.pool.as_deref()
    }

    /// Number of samples training effectively iterates over.
    pub fn effective_len(&self) -> usize {
        self.pool
            .as_ref()
            .map_or(self.base.len(), |p| p.views.len())
    }

    pub fn next_batch(&mut self, batch_size: usize) -> Result<Dataset> {
        if batch_size == 0 {
            return Err(Error::InvalidParameter(
                "batch size must be at least 1".into(),
            ));
        }
        match (self.policy.strategy, &self.pool) {
            (ViewStrategy::FixedViewsSameBatch { k }, Some(pool)) => {
                let n = pool.n_base();
                let m = batch_size.div_ceil(k).min(n);
                let picks = index::sample(&mut self.rng, n, m).into_vec();
                let mut idx: Vec<usize> = picks.iter().flat_map(|&i| i * k..i * k + k).collect();
                idx.truncate(batch_size);
                Ok(pool.views.subset(&idx))
            }
            (_, Some(pool)) => {
                let idx = draw(&mut self.rng, pool.views.len(), batch_size);
                Ok(pool.views.subset(&idx))
            }
            (_, None) => {
                let idx = draw(&mut self.rng, self.base.len(), batch_size);
                let mut out = self.base.subset(&idx);
                if !self.policy.is_identity() {
                    for img in &mut out.images {
                        *img = self.policy.apply(img, &mut self.rng, None)?;
                    }
                }
                Ok(out)
            }
        }
    }
}

impl Sampler {
    /// A batch of `batch_size` distinct base samples (all of them if there
    /// are fewer), each presented the way its strategy presents it: one
    /// fresh view, one frozen view, or every frozen view.
    pub fn measurement_batch(&mut self, batch_size: usize) -> Result<Dataset> {
        if batch_size == 0 {
            return Err(Error::InvalidParameter(
                "batch size must be at least 1".into(),
            ));
        }
        let picks = draw(&mut self.rng, self.base.len(), batch_size);
        match (self.policy.strategy, &self.pool) {
            (ViewStrategy::FixedViewsSameBatch { k }, Some(pool)) => {
                let idx: Vec<usize> = picks.iter().flat_map(|&i| i * k..i * k + k).collect();
                Ok(pool.views.subset(&idx))
            }
            (_, Some(pool)) => {
                let k = pool.k;
                let idx: Vec<usize> = picks
                    .iter()
                    .map(|&i| i * k + self.rng.random_range(0..k))
                    .collect();
                Ok(pool.views.subset(&idx))
            }
            (_, None) => {
                let mut out = self.base.subset(&picks);
                if !self.policy.is_identity() {
                    for img in &mut out.images {
                        *img = self.policy.apply(img, &mut self.rng, None)?;
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Uniform draw without replacement, or every index when the batch covers
/// the whole set.
fn draw(rng: &mut Rng, n: usize, batch: usize) -> Vec<usize> {
    if batch >= n {
        (0..n).collect()
    } else {
        index::sample(rng, n, batch).into_vec()
    }
}
