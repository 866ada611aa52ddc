//! Desk-scale supervised training: networks, synthetic tasks, SGD with
//! warmup and cosine decay, and the invariance mechanisms (orbit-averaged
//! predictions and flip canonicalization).

mod checkpoint;
mod data;
mod net;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::augment::{apply_transform, Dataset, Image, Sampler, Transform};
use crate::error::{Error, Result};
use crate::rng::SeedStream;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
};
pub use data::{
    make_blobs, make_rotated_prototypes, prototypes, Corruption, Prototype, RotatedTask,
    TaskSplits, ANGLE_GRID,
};
pub use net::{
    cross_entropy, softmax, Activations, Architecture, FilterGroup, GroupKind, LayerSpec, Network,
    Scalar,
};

/// A network together with its parameter values.
#[derive(Clone, Debug)]
pub struct Model<T = f64> {
    pub net: Arc<Network>,
    pub params: Vec<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(net: Arc<Network>, params: Vec<T>) -> Result<Self> {
        if params.len() != net.n_params() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} parameters",
                params.len(),
                net.n_params()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(Self { net, params })
    }

    pub fn init(arch: Architecture, seed: &SeedStream) -> Result<Self> {
        let net = Arc::new(Network::new(arch)?);
        let params = net.init(&mut seed.rng());
        Ok(Self { net, params })
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        let net = Arc::new(Network::new(arch)?);
        let params = vec![T::zero(); net.n_params()];
        Ok(Self { net, params })
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            net: self.net.clone(),
            params: self.params.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    pub fn logits(&self, data: &Dataset) -> Result<Vec<T>> {
        self.net.logits(&self.params, &inputs(data), data.len())
    }

    pub fn loss(&self, data: &Dataset) -> Result<T> {
        self.net.loss(&self.params, &inputs(data), &data.labels)
    }

    pub fn loss_and_grad(&self, data: &Dataset) -> Result<(T, Vec<T>)> {
        self.net
            .loss_and_grad(&self.params, &inputs(data), &data.labels)
    }

    /// Top-1 accuracy, evaluated in chunks.
    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let k = self.net.n_classes();
        let mut correct = 0usize;
        for start in (0..data.len()).step_by(256) {
            let idx: Vec<usize> = (start..(start + 256).min(data.len())).collect();
            let chunk = data.subset(&idx);
            let logits = self.logits(&chunk)?;
            for (row, &label) in logits.chunks(k).zip(&chunk.labels) {
                if argmax(row) == label {
                    correct += 1;
                }
            }
        }
        Ok(correct as f64 / data.len() as f64)
    }
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Flattens images into one batch-major input buffer.
pub fn inputs<T: Scalar>(data: &Dataset) -> Vec<T> {
    data.images
        .iter()
        .flat_map(|img| img.data().iter().map(|&v| T::of(v)))
        .collect()
}

/// How orbit averaging enters the training loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrbitLoss {
    /// Cross-entropy of the mean logits over the orbit.
    #[default]
    MeanLogits,
    /// Mean of the per-element cross-entropies.
    MeanLoss,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
    pub seed: u64,
    pub eval_every: usize,
    /// Train on orbit-averaged predictions over these transforms.
    pub orbit: Option<Vec<Transform>>,
    pub orbit_loss: OrbitLoss,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 128,
            peak_lr: 0.1,
            warmup_steps: 2000,
            momentum: 0.9,
            nesterov: true,
            weight_decay: 5e-4,
            seed: 0,
            eval_every: 500,
            orbit: None,
            orbit_loss: OrbitLoss::MeanLogits,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::InvalidParameter(
                "steps, batch_size and eval_every must be positive".into(),
            ));
        }
        if self.warmup_steps >= self.steps {
            return Err(Error::InvalidParameter(format!(
                "warmup_steps {} must be below steps {}",
                self.warmup_steps, self.steps
            )));
        }
        if !(self.peak_lr > 0.0)
            || !(0.0..1.0).contains(&self.momentum)
            || !(self.weight_decay >= 0.0)
        {
            return Err(Error::InvalidParameter(
                "learning rate, momentum or weight decay".into(),
            ));
        }
        if self.orbit.as_ref().is_some_and(|o| o.is_empty()) {
            return Err(Error::InvalidParameter("orbit must not be empty".into()));
        }
        Ok(())
    }

    /// Linear warmup from 0 to `peak_lr`, then a half cosine down to 0.
    pub fn learning_rate(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            self.peak_lr * step as f64 / self.warmup_steps as f64
        } else if step >= self.steps {
            0.0
        } else {
            let t = (step - self.warmup_steps) as f64 / (self.steps - self.warmup_steps) as f64;
            self.peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
        }
    }
}

/// Nesterov momentum SGD with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    momentum: T,
    nesterov: bool,
    weight_decay: T,
    velocity: Vec<T>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(n: usize, momentum: f64, nesterov: bool, weight_decay: f64) -> Self {
        Self {
            momentum: T::of(momentum),
            nesterov,
            weight_decay: T::of(weight_decay),
            velocity: vec![T::zero(); n],
        }
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T], lr: f64) {
        let lr = T::of(lr);
        let mu = self.momentum;
        for ((p, &g), v) in params.iter_mut().zip(grad).zip(&mut self.velocity) {
            *v = mu * *v + g;
            let d = if self.nesterov { g + mu * *v } else { *v };
            *p = *p - lr * self.weight_decay * *p - lr * d;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub train_loss: f64,
    pub accuracy: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub trace: Vec<EvalPoint>,
}

impl TrainReport {
    pub fn final_accuracy(&self, split: &str) -> Option<f64> {
        self.trace
            .last()
            .and_then(|p| p.accuracy.get(split).copied())
    }

    pub fn peak_accuracy(&self, split: &str) -> Option<f64> {
        self.trace
            .iter()
            .filter_map(|p| p.accuracy.get(split).copied())
            .reduce(f64::max)
    }
}

/// Observer called before the first update (step 0) and after every
/// update, with the number of updates done so far.
pub trait TrainHook<T> {
    fn at_step(&mut self, step: usize, model: &Model<T>, sampler: &Sampler) -> Result<()>;
}

impl<T> TrainHook<T> for () {
    fn at_step(&mut self, _: usize, _: &Model<T>, _: &Sampler) -> Result<()> {
        Ok(())
    }
}

fn orbit_of(data: &Dataset, orbit: &[Transform]) -> Result<Dataset> {
    let mut rng = SeedStream::new(0).rng();
    let mut images = Vec::with_capacity(data.len() * orbit.len());
    let mut labels = Vec::with_capacity(data.len() * orbit.len());
    for (img, &l) in data.images.iter().zip(&data.labels) {
        for t in orbit {
            images.push(apply_transform(t, img, &mut rng)?);
            labels.push(l);
        }
    }
    Dataset::new(images, labels)
}

/// Loss and gradient of one training batch, honouring orbit averaging.
pub fn batch_loss_and_grad<T: Scalar>(
    model: &Model<T>,
    batch: &Dataset,
    cfg: &TrainConfig,
) -> Result<(T, Vec<T>)> {
    let Some(orbit) = cfg.orbit.as_deref() else {
        return model.loss_and_grad(batch);
    };
    let expanded = orbit_of(batch, orbit)?;
    if cfg.orbit_loss == OrbitLoss::MeanLoss {
        return model.loss_and_grad(&expanded);
    }
    let net = &model.net;
    let k = net.n_classes();
    let m = orbit.len();
    let acts = net.forward(&model.params, &inputs(&expanded), expanded.len())?;
    let logits = acts.logits();
    let scale = T::of(1.0 / m as f64);
    let mut mean = vec![T::zero(); batch.len() * k];
    for (b, row) in mean.chunks_mut(k).enumerate() {
        for j in 0..m {
            for (acc, &v) in row.iter_mut().zip(&logits[(b * m + j) * k..][..k]) {
                *acc = *acc + v;
            }
        }
        row.iter_mut().for_each(|v| *v = *v * scale);
    }
    let (loss, dmean) = cross_entropy(&mean, &batch.labels, k)?;
    let mut dlogits = vec![T::zero(); logits.len()];
    for b in 0..batch.len() {
        for j in 0..m {
            for c in 0..k {
                dlogits[(b * m + j) * k + c] = dmean[b * k + c] * scale;
            }
        }
    }
    let mut grad = vec![T::zero(); net.n_params()];
    net.backward(&model.params, &acts, &dlogits, &mut grad);
    Ok((loss, grad))
}

/// Runs SGD on batches from `sampler`, evaluating accuracy on every named
/// split at step 0, every `eval_every` updates and after the last update.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    sampler: &mut Sampler,
    cfg: &TrainConfig,
    evals: &[(&str, &Dataset)],
    hook: &mut dyn TrainHook<T>,
) -> Result<TrainReport> {
    cfg.validate()?;
    let mut opt = Sgd::new(
        model.params.len(),
        cfg.momentum,
        cfg.nesterov,
        cfg.weight_decay,
    );
    let mut trace = Vec::new();
    let mut last_loss = f64::NAN;
    let evaluate = |model: &Model<T>, step: usize, loss: f64| -> Result<EvalPoint> {
        let mut accuracy = BTreeMap::new();
        for (name, data) in evals {
            let acc = match cfg.orbit.as_deref() {
                Some(orbit) => orbit_accuracy(model, data, orbit)?,
                None => model.accuracy(data)?,
            };
            accuracy.insert(name.to_string(), acc);
        }
        Ok(EvalPoint {
            step,
            train_loss: loss,
            accuracy,
        })
    };
    hook.at_step(0, model, sampler)?;
    trace.push(evaluate(model, 0, last_loss)?);
    for step in 0..cfg.steps {
        let batch = sampler.next_batch(cfg.batch_size)?;
        let (loss, grad) = batch_loss_and_grad(model, &batch, cfg)?;
        let loss = loss.f64();
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step, loss });
        }
        last_loss = loss;
        opt.step(&mut model.params, &grad, cfg.learning_rate(step + 1));
        let done = step + 1;
        hook.at_step(done, model, sampler)?;
        if done % cfg.eval_every == 0 || done == cfg.steps {
            trace.push(evaluate(model, done, last_loss)?);
        }
    }
    Ok(TrainReport { trace })
}

/// Softmax of the mean logits over the orbit of `img`.
pub fn predict_orbit_averaged<T: Scalar>(
    model: &Model<T>,
    img: &Image,
    orbit: &[Transform],
) -> Result<Vec<T>> {
    if orbit.is_empty() {
        return Err(Error::InvalidParameter("orbit must not be empty".into()));
    }
    let data = orbit_of(&Dataset::new(vec![img.clone()], vec![0])?, orbit)?;
    let logits = model.logits(&data)?;
    Ok(softmax(&mean_rows(&logits, model.net.n_classes())))
}

fn mean_rows<T: Scalar>(logits: &[T], k: usize) -> Vec<T> {
    let m = logits.len() / k;
    let mut mean = vec![T::zero(); k];
    for row in logits.chunks(k) {
        for (acc, &v) in mean.iter_mut().zip(row) {
            *acc = *acc + v;
        }
    }
    mean.into_iter().map(|v| v / T::of(m as f64)).collect()
}

fn orbit_accuracy<T: Scalar>(model: &Model<T>, data: &Dataset, orbit: &[Transform]) -> Result<f64> {
    let k = model.net.n_classes();
    let m = orbit.len();
    let logits = model.logits(&orbit_of(data, orbit)?)?;
    let correct = logits
        .chunks(k * m)
        .zip(&data.labels)
        .filter(|(rows, &l)| argmax(&mean_rows(rows, k)) == l)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Picks the element of `{img, hflip(img)}` whose left half is brighter.
/// Exactly balanced halves fall back to the lexicographically larger
/// pixel sequence, so mirrored inputs always map to the same image and a
/// mirror-symmetric image maps to itself.
pub fn canonicalize_flip(img: &Image) -> Image {
    let (c, h, w) = img.shape();
    let mut diff = 0.0;
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w / 2 {
                diff += img.get(ch, y, x) - img.get(ch, y, w - 1 - x);
            }
        }
    }
    let flipped = apply_transform(
        &Transform::HorizontalFlip,
        img,
        &mut SeedStream::new(0).rng(),
    )
    .expect("flip is always valid");
    let keep = if diff != 0.0 {
        diff > 0.0
    } else {
        img.data()
            .iter()
            .zip(flipped.data())
            .find(|(a, b)| a != b)
            .is_none_or(|(a, b)| a > b)
    };
    if keep {
        img.clone()
    } else {
        flipped
    }
}
