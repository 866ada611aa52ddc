//! Synthetic tasks: linearly separable blobs and rotated prototypes.

use std::f64::consts::PI;

use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::augment::{apply_transform, Dataset, Image, Transform};
use crate::error::{Error, Result};
use crate::rng::SeedStream;

/// Blob features are `4·e_c + U(-1, 1)^dims`, mapped affinely into [0, 1].
pub fn make_blobs(n_classes: usize, dims: usize, n: usize, seed: &SeedStream) -> Result<Dataset> {
    if n_classes < 2 || dims < n_classes {
        return Err(Error::InvalidParameter(format!(
            "blobs need 2 <= classes <= dims, got {n_classes} classes in {dims} dims"
        )));
    }
    let mut rng = seed.rng();
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % n_classes;
        let data = (0..dims)
            .map(|d| {
                let centre = if d == label { 4.0 } else { 0.0 };
                (centre + rng.random_range(-1.0..=1.0) + 1.0) / 6.0
            })
            .collect();
        images.push(Image::new(1, 1, dims, data)?);
        labels.push(label);
    }
    Dataset::new(images, labels)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Corruption {
    Blur { sigma: f64 },
    HorizontalFlip,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RotatedTask {
    pub n_classes: usize,
    pub image_size: usize,
    pub channels: usize,
    pub train_angles: usize,
    pub test_angles: usize,
    /// Sinusoids per prototype channel.
    pub components: usize,
    /// Held-out corruption applied to test rotations for the shifted split.
    pub shift: Corruption,
}

impl Default for RotatedTask {
    fn default() -> Self {
        Self {
            n_classes: 10,
            image_size: 16,
            channels: 1,
            train_angles: 50,
            test_angles: 50,
            components: 4,
            shift: Corruption::Blur { sigma: 1.0 },
        }
    }
}

/// Angles are drawn from a 0.5° grid.
pub const ANGLE_GRID: usize = 720;

#[derive(Clone, Debug)]
pub struct TaskSplits {
    /// Angle-major: the first `n_classes` samples are one rotation of each
    /// prototype, so any prefix is close to class balanced.
    pub train: Dataset,
    pub test: Dataset,
    pub shifted: Dataset,
    pub train_angles: Vec<f64>,
    pub test_angles: Vec<f64>,
}

#[derive(Clone, Debug)]
struct Wave {
    amp: f64,
    fx: f64,
    fy: f64,
    phase: f64,
}

/// Smooth random field on the unit disc, values in [0, 1].
#[derive(Clone, Debug)]
pub struct Prototype {
    channels: Vec<Vec<Wave>>,
}

impl Prototype {
    fn random(channels: usize, components: usize, rng: &mut crate::rng::Rng) -> Self {
        let channels = (0..channels)
            .map(|_| {
                (0..components)
                    .map(|_| {
                        let freq = rng.random_range(0.4..1.6);
                        let dir = rng.random_range(0.0..2.0 * PI);
                        let z: f64 = StandardNormal.sample(rng);
                        Wave {
                            amp: 0.5 + z.abs(),
                            fx: freq * dir.cos(),
                            fy: freq * dir.sin(),
                            phase: rng.random_range(0.0..2.0 * PI),
                        }
                    })
                    .collect()
            })
            .collect();
        Self { channels }
    }

    /// Value at centred coordinates `(u, v)`, `u` rightwards and `v` down,
    /// both in [-1, 1]; a soft disc mask zeroes the corners.
    pub fn value(&self, c: usize, u: f64, v: f64) -> f64 {
        let waves = &self.channels[c];
        let total: f64 = waves.iter().map(|w| w.amp).sum();
        let s: f64 = waves
            .iter()
            .map(|w| w.amp * (PI * (w.fx * u + w.fy * v) + w.phase).sin())
            .sum();
        let r2 = u * u + v * v;
        let mask = if r2 >= 1.0 { 0.0 } else { (1.0 - r2).powi(2) };
        (0.5 + 0.5 * s / total) * mask
    }

    /// Rendered counter-clockwise rotation by `degrees`.
    pub fn render(&self, size: usize, degrees: f64) -> Result<Image> {
        let (s, c) = degrees.to_radians().sin_cos();
        let half = (size as f64 - 1.0) / 2.0;
        let scale = size as f64 / 2.0;
        Image::from_fn(self.channels.len(), size, size, |ch, y, x| {
            let u = (x as f64 - half) / scale;
            let v = (y as f64 - half) / scale;
            // sample the unrotated field at the inverse-rotated point
            let su = c * u - s * v;
            let sv = s * u + c * v;
            self.value(ch, su, sv).clamp(0.0, 1.0)
        })
    }
}

pub fn prototypes(task: &RotatedTask, seed: &SeedStream) -> Vec<Prototype> {
    (0..task.n_classes)
        .map(|k| {
            Prototype::random(
                task.channels,
                task.components,
                &mut seed.split("prototype").index(k as u64).rng(),
            )
        })
        .collect()
}

pub fn make_rotated_prototypes(task: &RotatedTask, seed: &SeedStream) -> Result<TaskSplits> {
    if task.n_classes < 2 || task.image_size < 4 || task.channels == 0 || task.components == 0 {
        return Err(Error::InvalidParameter(format!("rotated task {task:?}")));
    }
    let total = task.train_angles + task.test_angles;
    if task.train_angles == 0 || task.test_angles == 0 || total > ANGLE_GRID {
        return Err(Error::InvalidParameter(format!(
            "need 1..{ANGLE_GRID} disjoint angles, asked for {} + {}",
            task.train_angles, task.test_angles
        )));
    }
    let protos = prototypes(task, seed);
    let picks = index::sample(&mut seed.split("angles").rng(), ANGLE_GRID, total).into_vec();
    let angles: Vec<f64> = picks.iter().map(|&i| i as f64 * 0.5).collect();
    let (train_angles, test_angles) = angles.split_at(task.train_angles);
    debug_assert!(train_angles.iter().all(|a| !test_angles.contains(a)));

    let render = |angles: &[f64]| -> Result<Dataset> {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for &a in angles {
            for (k, p) in protos.iter().enumerate() {
                images.push(p.render(task.image_size, a)?);
                labels.push(k);
            }
        }
        Dataset::new(images, labels)
    };
    let train = render(train_angles)?;
    let test = render(test_angles)?;
    let corruption = match task.shift {
        Corruption::Blur { sigma } => Transform::GaussianBlur { sigma },
        Corruption::HorizontalFlip => Transform::HorizontalFlip,
    };
    let mut unused = seed.split("shift").rng();
    let shifted = Dataset::new(
        test.images
            .iter()
            .map(|img| apply_transform(&corruption, img, &mut unused))
            .collect::<Result<_>>()?,
        test.labels.clone(),
    )?;
    Ok(TaskSplits {
        train,
        test,
        shifted,
        train_angles: train_angles.to_vec(),
        test_angles: test_angles.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_separable_by_argmax() {
        let d = make_blobs(4, 6, 200, &SeedStream::new(1)).unwrap();
        for (img, &l) in d.images.iter().zip(&d.labels) {
            let best = (0..6)
                .max_by(|&a, &b| img.data()[a].total_cmp(&img.data()[b]))
                .unwrap();
            assert_eq!(best, l);
        }
    }

    #[test]
    fn rotated_counts_and_disjoint_angles() {
        let task = RotatedTask::default();
        let s = make_rotated_prototypes(&task, &SeedStream::new(2)).unwrap();
        assert_eq!(s.train.len(), 500);
        assert_eq!(s.test.len(), 500);
        assert_eq!(s.shifted.len(), 500);
        assert!(s.train_angles.iter().all(|a| !s.test_angles.contains(a)));
        assert_eq!(&s.train.labels[..10], &(0..10).collect::<Vec<_>>()[..]);
    }

    #[test]
    fn equal_seeds_give_equal_prototypes() {
        let task = RotatedTask {
            train_angles: 3,
            test_angles: 2,
            ..Default::default()
        };
        let a = make_rotated_prototypes(&task, &SeedStream::new(5)).unwrap();
        let b = make_rotated_prototypes(&task, &SeedStream::new(5)).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.shifted, b.shifted);
        let c = make_rotated_prototypes(&task, &SeedStream::new(6)).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn too_many_angles_rejected() {
        let task = RotatedTask {
            train_angles: 500,
            test_angles: 300,
            ..Default::default()
        };
        assert!(make_rotated_prototypes(&task, &SeedStream::new(0)).is_err());
    }

    #[test]
    fn rendering_rotates_the_field() {
        let p = &prototypes(&RotatedTask::default(), &SeedStream::new(3))[0];
        let a = p.render(16, 0.0).unwrap();
        let b = p.render(16, 360.0).unwrap();
        assert!(a
            .data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| (x - y).abs() < 1e-9));
        let r = p.render(16, 90.0).unwrap();
        assert!(a
            .data()
            .iter()
            .zip(r.data())
            .any(|(x, y)| (x - y).abs() > 1e-3));
    }
}
