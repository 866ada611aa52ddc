//! Small conv/dense networks with hand-written backpropagation.
//!
//! Parameters live in one flat vector. Every scalar belongs to exactly one
//! [`FilterGroup`]: a conv output-channel kernel, a dense output row, or a
//! layer's bias vector.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::Range;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Floating-point type a network computes in.
pub trait Scalar: num_traits::Float + Sum + Debug + Send + Sync + 'static {
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
}

impl Scalar for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn f64(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn f64(self) -> f64 {
        self as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    /// 3×3 convolution, stride 1, zero padding 1.
    Conv {
        out_channels: usize,
    },
    Relu,
    /// 2×2 average pooling, stride 2.
    AvgPool,
    Dense {
        units: usize,
    },
}

/// Hidden layers plus an implicit final dense layer onto the classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: [usize; 3],
    pub hidden: Vec<LayerSpec>,
    pub n_classes: usize,
}

impl Architecture {
    /// Two conv blocks and two dense layers, no normalization.
    pub fn small_cnn(input: [usize; 3], n_classes: usize) -> Self {
        Self {
            input,
            hidden: vec![
                LayerSpec::Conv { out_channels: 6 },
                LayerSpec::Relu,
                LayerSpec::AvgPool,
                LayerSpec::Conv { out_channels: 12 },
                LayerSpec::Relu,
                LayerSpec::AvgPool,
                LayerSpec::Dense { units: 32 },
                LayerSpec::Relu,
            ],
            n_classes,
        }
    }

    pub fn mlp(input_len: usize, hidden: &[usize], n_classes: usize) -> Self {
        Self {
            input: [1, 1, input_len],
            hidden: hidden
                .iter()
                .flat_map(|&units| [LayerSpec::Dense { units }, LayerSpec::Relu])
                .collect(),
            n_classes,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    Weight,
    Bias,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterGroup {
    pub name: String,
    pub kind: GroupKind,
    pub range: Range<usize>,
}

#[derive(Clone, Debug, PartialEq)]
enum Layer {
    Conv {
        cin: usize,
        cout: usize,
        h: usize,
        w: usize,
        weights: usize,
        bias: usize,
    },
    Relu,
    AvgPool {
        c: usize,
        h: usize,
        w: usize,
    },
    Dense {
        nin: usize,
        nout: usize,
        weights: usize,
        bias: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    arch: Architecture,
    layers: Vec<Layer>,
    /// Per-sample activation length at every layer boundary.
    sizes: Vec<usize>,
    n_params: usize,
    groups: Vec<FilterGroup>,
}

/// Activations of a batch at every layer boundary; the last are logits.
#[derive(Clone, Debug)]
pub struct Activations<T> {
    pub batch: usize,
    acts: Vec<Vec<T>>,
}

impl<T: Scalar> Activations<T> {
    pub fn logits(&self) -> &[T] {
        self.acts.last().expect("at least the input")
    }

    /// Input to layer `i` (`i == 0` is the network input).
    pub fn layer(&self, i: usize) -> &[T] {
        &self.acts[i]
    }
}

impl Network {
    pub fn new(arch: Architecture) -> Result<Self> {
        let [c0, h0, w0] = arch.input;
        if c0 == 0 || h0 == 0 || w0 == 0 || arch.n_classes == 0 {
            return Err(Error::ShapeMismatch(format!(
                "input {:?} with {} classes",
                arch.input, arch.n_classes
            )));
        }
        let (mut c, mut h, mut w) = (c0, h0, w0);
        let mut flat = false;
        let mut layers = Vec::new();
        let mut sizes = vec![c * h * w];
        let mut groups = Vec::new();
        let mut n = 0usize;
        let specs = arch.hidden.iter().copied().chain([LayerSpec::Dense {
            units: arch.n_classes,
        }]);
        for (li, spec) in specs.enumerate() {
            let layer = match spec {
                LayerSpec::Conv { out_channels } => {
                    if flat {
                        return Err(Error::ShapeMismatch(format!(
                            "layer {li}: conv after dense"
                        )));
                    }
                    let weights = n;
                    for o in 0..out_channels {
                        let len = c * 9;
                        groups.push(FilterGroup {
                            name: format!("l{li}.conv.filter{o}"),
                            kind: GroupKind::Weight,
                            range: n..n + len,
                        });
                        n += len;
                    }
                    groups.push(FilterGroup {
                        name: format!("l{li}.conv.bias"),
                        kind: GroupKind::Bias,
                        range: n..n + out_channels,
                    });
                    let bias = n;
                    n += out_channels;
                    let l = Layer::Conv {
                        cin: c,
                        cout: out_channels,
                        h,
                        w,
                        weights,
                        bias,
                    };
                    c = out_channels;
                    l
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::AvgPool => {
                    if flat || h < 2 || w < 2 {
                        return Err(Error::ShapeMismatch(format!(
                            "layer {li}: cannot pool {c}x{h}x{w}"
                        )));
                    }
                    let l = Layer::AvgPool { c, h, w };
                    h /= 2;
                    w /= 2;
                    l
                }
                LayerSpec::Dense { units } => {
                    let nin = if flat { w } else { c * h * w };
                    let weights = n;
                    for o in 0..units {
                        groups.push(FilterGroup {
                            name: format!("l{li}.dense.row{o}"),
                            kind: GroupKind::Weight,
                            range: n..n + nin,
                        });
                        n += nin;
                    }
                    groups.push(FilterGroup {
                        name: format!("l{li}.dense.bias"),
                        kind: GroupKind::Bias,
                        range: n..n + units,
                    });
                    let bias = n;
                    n += units;
                    flat = true;
                    (c, h, w) = (1, 1, units);
                    Layer::Dense {
                        nin,
                        nout: units,
                        weights,
                        bias,
                    }
                }
            };
            if matches!(
                spec,
                LayerSpec::Conv { out_channels: 0 } | LayerSpec::Dense { units: 0 }
            ) {
                return Err(Error::ShapeMismatch(format!("layer {li} has no outputs")));
            }
            layers.push(layer);
            sizes.push(c * h * w);
        }
        Ok(Self {
            arch,
            layers,
            sizes,
            n_params: n,
            groups,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_classes(&self) -> usize {
        self.arch.n_classes
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn groups(&self) -> &[FilterGroup] {
        &self.groups
    }

    /// He-normal weights, zero biases.
    pub fn init<T: Scalar>(&self, rng: &mut Rng) -> Vec<T> {
        let mut p = vec![T::zero(); self.n_params];
        for g in &self.groups {
            if g.kind == GroupKind::Weight {
                let std = (2.0 / g.range.len() as f64).sqrt();
                for v in &mut p[g.range.clone()] {
                    let z: f64 = StandardNormal.sample(rng);
                    *v = T::of(std * z);
                }
            }
        }
        // keep the generator position independent of T
        let _: u64 = rng.random();
        p
    }

    fn check(&self, params_len: usize, inputs_len: usize, batch: usize) -> Result<()> {
        if params_len != self.n_params {
            return Err(Error::ShapeMismatch(format!(
                "{params_len} parameters, network has {}",
                self.n_params
            )));
        }
        if inputs_len != batch * self.input_len() {
            return Err(Error::ShapeMismatch(format!(
                "{inputs_len} input values for a batch of {batch} × {}",
                self.input_len()
            )));
        }
        Ok(())
    }

    pub fn forward<T: Scalar>(
        &self,
        params: &[T],
        inputs: &[T],
        batch: usize,
    ) -> Result<Activations<T>> {
        self.check(params.len(), inputs.len(), batch)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(inputs.to_vec());
        for (li, layer) in self.layers.iter().enumerate() {
            let (sin, sout) = (self.sizes[li], self.sizes[li + 1]);
            let x = &acts[li];
            let mut y = vec![T::zero(); batch * sout];
            for b in 0..batch {
                let xi = &x[b * sin..(b + 1) * sin];
                let yo = &mut y[b * sout..(b + 1) * sout];
                forward_one(layer, params, xi, yo);
            }
            acts.push(y);
        }
        Ok(Activations { batch, acts })
    }

    /// Accumulates parameter gradients for upstream `dlogits` into `grad`.
    pub fn backward<T: Scalar>(
        &self,
        params: &[T],
        acts: &Activations<T>,
        dlogits: &[T],
        grad: &mut [T],
    ) {
        let batch = acts.batch;
        let mut g = dlogits.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let (sin, sout) = (self.sizes[li], self.sizes[li + 1]);
            let need_input = li > 0;
            let mut gin = vec![T::zero(); if need_input { batch * sin } else { 0 }];
            for b in 0..batch {
                let x = &acts.acts[li][b * sin..(b + 1) * sin];
                let y = &acts.acts[li + 1][b * sout..(b + 1) * sout];
                let go = &g[b * sout..(b + 1) * sout];
                let gi = if need_input {
                    Some(&mut gin[b * sin..(b + 1) * sin])
                } else {
                    None
                };
                backward_one(layer, params, x, y, go, gi, grad);
            }
            g = gin;
        }
    }

    pub fn logits<T: Scalar>(&self, params: &[T], inputs: &[T], batch: usize) -> Result<Vec<T>> {
        Ok(self
            .forward(params, inputs, batch)?
            .acts
            .pop()
            .expect("logits"))
    }

    /// Mean softmax cross-entropy.
    pub fn loss<T: Scalar>(&self, params: &[T], inputs: &[T], labels: &[usize]) -> Result<T> {
        let logits = self.logits(params, inputs, labels.len())?;
        Ok(cross_entropy(&logits, labels, self.n_classes())?.0)
    }

    pub fn loss_and_grad<T: Scalar>(
        &self,
        params: &[T],
        inputs: &[T],
        labels: &[usize],
    ) -> Result<(T, Vec<T>)> {
        let acts = self.forward(params, inputs, labels.len())?;
        let (loss, dlogits) = cross_entropy(acts.logits(), labels, self.n_classes())?;
        let mut grad = vec![T::zero(); self.n_params];
        self.backward(params, &acts, &dlogits, &mut grad);
        Ok((loss, grad))
    }
}

/// Mean cross-entropy over rows of `logits` and its gradient.
pub fn cross_entropy<T: Scalar>(
    logits: &[T],
    labels: &[usize],
    classes: usize,
) -> Result<(T, Vec<T>)> {
    if logits.len() != labels.len() * classes {
        return Err(Error::ShapeMismatch(format!(
            "{} logits for {} labels",
            logits.len(),
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidParameter(format!(
            "label {l} with {classes} classes"
        )));
    }
    let n = T::of(labels.len() as f64);
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); logits.len()];
    for (b, &label) in labels.iter().enumerate() {
        let row = &logits[b * classes..(b + 1) * classes];
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let z: T = row.iter().map(|&v| (v - m).exp()).sum();
        let lse = m + z.ln();
        loss = loss + (lse - row[label]);
        for (k, &v) in row.iter().enumerate() {
            let p = (v - lse).exp();
            grad[b * classes + k] = (p - if k == label { T::one() } else { T::zero() }) / n;
        }
    }
    Ok((loss / n, grad))
}

pub fn softmax<T: Scalar>(row: &[T]) -> Vec<T> {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
    let z: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Index range of rows that stay in bounds after shifting by `d` in `-1..=1`.
fn valid(n: usize, d: isize) -> Range<usize> {
    match d {
        -1 => 1..n,
        1 => 0..n.saturating_sub(1),
        _ => 0..n,
    }
}

fn forward_one<T: Scalar>(layer: &Layer, p: &[T], x: &[T], y: &mut [T]) {
    match *layer {
        Layer::Conv {
            cin,
            cout,
            h,
            w,
            weights,
            bias,
        } => {
            let hw = h * w;
            for o in 0..cout {
                let out = &mut y[o * hw..(o + 1) * hw];
                out.fill(p[bias + o]);
                for i in 0..cin {
                    let inp = &x[i * hw..(i + 1) * hw];
                    let k = &p[weights + (o * cin + i) * 9..][..9];
                    for ky in 0..3 {
                        let dy = ky as isize - 1;
                        for kx in 0..3 {
                            let dx = kx as isize - 1;
                            let wv = k[ky * 3 + kx];
                            let xs = valid(w, dx);
                            for yy in valid(h, dy) {
                                let sy = (yy as isize + dy) as usize;
                                let orow = &mut out[yy * w..(yy + 1) * w];
                                let irow = &inp[sy * w..(sy + 1) * w];
                                for xx in xs.clone() {
                                    orow[xx] = orow[xx] + wv * irow[(xx as isize + dx) as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        Layer::Relu => {
            for (o, &v) in y.iter_mut().zip(x) {
                *o = v.max(T::zero());
            }
        }
        Layer::AvgPool { c, h, w } => {
            let (ho, wo) = (h / 2, w / 2);
            let q = T::of(0.25);
            for ch in 0..c {
                for yy in 0..ho {
                    for xx in 0..wo {
                        let at = |dy: usize, dx: usize| x[(ch * h + 2 * yy + dy) * w + 2 * xx + dx];
                        y[(ch * ho + yy) * wo + xx] =
                            (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) * q;
                    }
                }
            }
        }
        Layer::Dense {
            nin,
            nout,
            weights,
            bias,
        } => {
            for (j, out) in y.iter_mut().enumerate().take(nout) {
                let row = &p[weights + j * nin..][..nin];
                let mut acc = p[bias + j];
                for (wv, xv) in row.iter().zip(x) {
                    acc = acc + *wv * *xv;
                }
                *out = acc;
            }
        }
    }
}

fn backward_one<T: Scalar>(
    layer: &Layer,
    p: &[T],
    x: &[T],
    y: &[T],
    go: &[T],
    mut gi: Option<&mut [T]>,
    grad: &mut [T],
) {
    match *layer {
        Layer::Conv {
            cin,
            cout,
            h,
            w,
            weights,
            bias,
        } => {
            let hw = h * w;
            for o in 0..cout {
                let g = &go[o * hw..(o + 1) * hw];
                grad[bias + o] = grad[bias + o] + g.iter().copied().sum();
                for i in 0..cin {
                    let inp = &x[i * hw..(i + 1) * hw];
                    let kofs = weights + (o * cin + i) * 9;
                    for ky in 0..3 {
                        let dy = ky as isize - 1;
                        for kx in 0..3 {
                            let dx = kx as isize - 1;
                            let xs = valid(w, dx);
                            let wv = p[kofs + ky * 3 + kx];
                            let mut acc = T::zero();
                            for yy in valid(h, dy) {
                                let sy = (yy as isize + dy) as usize;
                                let grow = &g[yy * w..(yy + 1) * w];
                                let irow = &inp[sy * w..(sy + 1) * w];
                                for xx in xs.clone() {
                                    acc = acc + grow[xx] * irow[(xx as isize + dx) as usize];
                                }
                                if let Some(gi) = gi.as_deref_mut() {
                                    let gin = &mut gi[i * hw + sy * w..i * hw + (sy + 1) * w];
                                    for xx in xs.clone() {
                                        let sx = (xx as isize + dx) as usize;
                                        gin[sx] = gin[sx] + wv * grow[xx];
                                    }
                                }
                            }
                            grad[kofs + ky * 3 + kx] = grad[kofs + ky * 3 + kx] + acc;
                        }
                    }
                }
            }
        }
        Layer::Relu => {
            if let Some(gi) = gi {
                for ((d, &g), &v) in gi.iter_mut().zip(go).zip(y) {
                    *d = if v > T::zero() { g } else { T::zero() };
                }
            }
        }
        Layer::AvgPool { c, h, w } => {
            if let Some(gi) = gi {
                let (ho, wo) = (h / 2, w / 2);
                let q = T::of(0.25);
                for ch in 0..c {
                    for yy in 0..ho {
                        for xx in 0..wo {
                            let g = go[(ch * ho + yy) * wo + xx] * q;
                            for dy in 0..2 {
                                for dx in 0..2 {
                                    gi[(ch * h + 2 * yy + dy) * w + 2 * xx + dx] = g;
                                }
                            }
                        }
                    }
                }
            }
        }
        Layer::Dense {
            nin,
            nout,
            weights,
            bias,
        } => {
            for j in 0..nout {
                let g = go[j];
                grad[bias + j] = grad[bias + j] + g;
                let row = &mut grad[weights + j * nin..][..nin];
                for (r, &xv) in row.iter_mut().zip(x) {
                    *r = *r + g * xv;
                }
            }
            if let Some(gi) = gi {
                for j in 0..nout {
                    let g = go[j];
                    let row = &p[weights + j * nin..][..nin];
                    for (d, &wv) in gi.iter_mut().zip(row) {
                        *d = *d + wv * g;
                    }
                }
            }
        }
    }
}
