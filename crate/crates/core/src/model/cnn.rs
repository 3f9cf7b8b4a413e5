//! A small reference CNN with an exact analytic backward pass.
//!
//! Layout: `[conv 3x3 (same) + ReLU + maxpool 2] x N`, flatten, dense +
//! ReLU, optional inverted dropout, dense, softmax. The default
//! [`CnnSpec::micro`] is 64x64x3 input with 16/32/64 filters and a
//! 512-unit hidden layer over 5 classes.
//!
//! Activations are channel-major (`[c, h, w]`); convolutions run as
//! im2col followed by a matrix product.

use ndarray::{s, Array1, Array2, Array4, Axis};
use serde::{Deserialize, Serialize};

use super::loss::{cross_entropy, softmax};
use super::{ModelError, Scalar};
use crate::rng::SeededStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnnSpec {
    pub input_size: usize,
    pub in_channels: usize,
    pub conv_channels: Vec<usize>,
    pub dense_units: usize,
    pub classes: usize,
    /// Dropout after the hidden dense layer (training mode only).
    pub dropout: Option<f64>,
}

impl CnnSpec {
    pub fn micro() -> Self {
        Self {
            input_size: 64,
            in_channels: 3,
            conv_channels: vec![16, 32, 64],
            dense_units: 512,
            classes: 5,
            dropout: None,
        }
    }

    pub fn with_dropout(mut self, p: Option<f64>) -> Self {
        self.dropout = p;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let blocks = self.conv_channels.len();
        if self.input_size == 0 || self.in_channels == 0 || self.dense_units == 0 || self.classes < 2 {
            return Err(ModelError::InvalidSpec(format!("{self:?}")));
        }
        if self.conv_channels.contains(&0) {
            return Err(ModelError::InvalidSpec("zero-width conv layer".into()));
        }
        if !self.input_size.is_multiple_of(1 << blocks) {
            return Err(ModelError::InvalidSpec(format!(
                "input size {} not divisible by 2^{blocks}",
                self.input_size
            )));
        }
        if let Some(p) = self.dropout {
            if !(0.0..1.0).contains(&p) {
                return Err(ModelError::InvalidSpec(format!("dropout {p} outside [0, 1)")));
            }
        }
        Ok(())
    }

    /// Spatial size after all pooling stages.
    pub fn final_size(&self) -> usize {
        self.input_size >> self.conv_channels.len()
    }

    pub fn flat_features(&self) -> usize {
        let last = self.conv_channels.last().copied().unwrap_or(self.in_channels);
        last * self.final_size() * self.final_size()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    /// Conv: `[out, in * 9]`; dense: `[out, in]`.
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Layer<T> {
    fn zeros(out: usize, fan_in: usize) -> Self {
        Self {
            weight: Array2::zeros((out, fan_in)),
            bias: Array1::zeros(out),
        }
    }

    /// Fan-in scaled uniform weights, zero biases.
    fn init(out: usize, fan_in: usize, rng: &mut SeededStream) -> Self {
        let limit = (6.0 / fan_in as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((out, fan_in), || T::of(rng.uniform(-limit, limit)));
        Self {
            weight,
            bias: Array1::zeros(out),
        }
    }
}

/// All trainable tensors. Also used for gradients and optimizer moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    pub convs: Vec<Layer<T>>,
    pub hidden: Layer<T>,
    pub output: Layer<T>,
}

impl<T: Scalar> Params<T> {
    pub fn zeros(spec: &CnnSpec) -> Self {
        let mut convs = Vec::new();
        let mut c_in = spec.in_channels;
        for &c in &spec.conv_channels {
            convs.push(Layer::zeros(c, c_in * 9));
            c_in = c;
        }
        Self {
            convs,
            hidden: Layer::zeros(spec.dense_units, spec.flat_features()),
            output: Layer::zeros(spec.classes, spec.dense_units),
        }
    }

    pub fn init(spec: &CnnSpec, seed: u64) -> Self {
        let mut rng = SeededStream::new(seed);
        let mut convs = Vec::new();
        let mut c_in = spec.in_channels;
        for &c in &spec.conv_channels {
            convs.push(Layer::init(c, c_in * 9, &mut rng));
            c_in = c;
        }
        let hidden = Layer::init(spec.dense_units, spec.flat_features(), &mut rng);
        let output = Layer::init(spec.classes, spec.dense_units, &mut rng);
        Self { convs, hidden, output }
    }

    fn layers(&self) -> impl Iterator<Item = &Layer<T>> {
        self.convs.iter().chain([&self.hidden, &self.output])
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer<T>> {
        self.convs.iter_mut().chain([&mut self.hidden, &mut self.output])
    }

    /// Flat views in a fixed order: per layer, weight then bias.
    pub fn tensors(&self) -> Vec<&[T]> {
        self.layers()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.layers_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    /// Number of leading tensors belonging to the convolutional trunk.
    pub fn trunk_tensors(&self) -> usize {
        2 * self.convs.len()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        let cast_layer = |l: &Layer<T>| Layer {
            weight: l.weight.mapv(|v| U::of(v.f64())),
            bias: l.bias.mapv(|v| U::of(v.f64())),
        };
        Params {
            convs: self.convs.iter().map(cast_layer).collect(),
            hidden: cast_layer(&self.hidden),
            output: cast_layer(&self.output),
        }
    }
}

pub enum Mode<'a> {
    Eval,
    /// Dropout active, masks drawn from the stream.
    Train(&'a mut SeededStream),
}

struct ConvCache<T> {
    col: Array2<T>,
    /// Post-ReLU activations `[filters, h * w]`.
    act: Array2<T>,
    /// Flat index into `act` of each pooled maximum.
    argmax: Vec<u32>,
    size: usize,
}

/// Everything the backward pass needs from a forward pass.
pub struct ForwardCache<T> {
    samples: Vec<Vec<ConvCache<T>>>,
    flat: Array2<T>,
    hidden_act: Array2<T>,
    dropout_mask: Option<Array2<T>>,
    hidden_out: Array2<T>,
    pub probs: Array2<T>,
}

impl<T: Scalar> ForwardCache<T> {
    /// True when both passes took the same piecewise-linear branch: same
    /// ReLU on/off pattern everywhere and same pooling winners. Finite
    /// differences are only meaningful between such passes.
    pub fn same_activation_pattern(&self, other: &ForwardCache<T>) -> bool {
        let on = |a: &Array2<T>| a.iter().map(|&v| v > T::zero()).collect::<Vec<_>>();
        self.samples.len() == other.samples.len()
            && self.samples.iter().zip(&other.samples).all(|(a, b)| {
                a.iter()
                    .zip(b)
                    .all(|(x, y)| x.argmax == y.argmax && on(&x.act) == on(&y.act))
            })
            && on(&self.hidden_act) == on(&other.hidden_act)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MicroCnn<T> {
    pub spec: CnnSpec,
    pub params: Params<T>,
}

fn im2col<T: Scalar>(input: &[T], channels: usize, size: usize) -> Array2<T> {
    let hw = size * size;
    let mut col = Array2::<T>::zeros((channels * 9, hw));
    for c in 0..channels {
        let plane = &input[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let mut row = col.row_mut(c * 9 + ky * 3 + kx);
                let row = row.as_slice_mut().expect("contiguous row");
                for y in 0..size {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= size as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * size..(sy as usize + 1) * size];
                    let dst = &mut row[y * size..(y + 1) * size];
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..size - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..size - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
    col
}

fn col2im<T: Scalar>(col: &Array2<T>, channels: usize, size: usize) -> Vec<T> {
    let hw = size * size;
    let mut out = vec![T::zero(); channels * hw];
    for c in 0..channels {
        let plane = &mut out[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = col.row(c * 9 + ky * 3 + kx);
                let row = row.as_slice().expect("contiguous row");
                for y in 0..size {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= size as isize {
                        continue;
                    }
                    let src = &row[y * size..(y + 1) * size];
                    let dst = &mut plane[sy as usize * size..(sy as usize + 1) * size];
                    match kx {
                        0 => dst[..size - 1].iter_mut().zip(&src[1..]).for_each(|(d, &s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s),
                        _ => dst[1..].iter_mut().zip(&src[..size - 1]).for_each(|(d, &s)| *d += s),
                    }
                }
            }
        }
    }
    out
}

/// Matrix products may come back column-major; parameters and gradients
/// are kept row-major so they can be viewed as flat slices.
fn standard<T: Scalar>(a: Array2<T>) -> Array2<T> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

/// 2x2 stride-2 max pool over `[c, size * size]`; first maximum wins ties.
fn maxpool<T: Scalar>(act: &Array2<T>, size: usize) -> (Vec<T>, Vec<u32>) {
    let half = size / 2;
    let channels = act.nrows();
    let mut out = Vec::with_capacity(channels * half * half);
    let mut idx = Vec::with_capacity(channels * half * half);
    let data = act.as_slice().expect("standard layout");
    for c in 0..channels {
        let base = c * size * size;
        for y in 0..half {
            for x in 0..half {
                let candidates = [
                    base + 2 * y * size + 2 * x,
                    base + 2 * y * size + 2 * x + 1,
                    base + (2 * y + 1) * size + 2 * x,
                    base + (2 * y + 1) * size + 2 * x + 1,
                ];
                let mut best = candidates[0];
                for &k in &candidates[1..] {
                    if data[k] > data[best] {
                        best = k;
                    }
                }
                out.push(data[best]);
                idx.push(best as u32);
            }
        }
    }
    (out, idx)
}

impl<T: Scalar> MicroCnn<T> {
    pub fn new(spec: CnnSpec, seed: u64) -> Result<Self, ModelError> {
        spec.validate()?;
        let params = Params::init(&spec, seed);
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: CnnSpec, params: Params<T>) -> Result<Self, ModelError> {
        spec.validate()?;
        let expect = Params::<T>::zeros(&spec);
        let shapes_match = expect
            .tensors()
            .iter()
            .zip(params.tensors())
            .all(|(a, b)| a.len() == b.len())
            && expect.tensors().len() == params.tensors().len();
        if !shapes_match {
            return Err(ModelError::ShapeMismatch("parameters do not match spec".into()));
        }
        Ok(Self { spec, params })
    }

    fn check_batch(&self, batch: &Array4<T>) -> Result<(), ModelError> {
        let (_, c, h, w) = batch.dim();
        let s = self.spec.input_size;
        if c != self.spec.in_channels || h != s || w != s {
            return Err(ModelError::ShapeMismatch(format!(
                "batch is {c}x{h}x{w}, model expects {}x{s}x{s}",
                self.spec.in_channels
            )));
        }
        Ok(())
    }

    /// Class probabilities, one row per sample.
    pub fn forward(&self, batch: &Array4<T>, mode: Mode<'_>) -> Result<Array2<T>, ModelError> {
        Ok(self.forward_cached(batch, mode)?.probs)
    }

    pub fn forward_cached(&self, batch: &Array4<T>, mode: Mode<'_>) -> Result<ForwardCache<T>, ModelError> {
        self.check_batch(batch)?;
        let n = batch.dim().0;
        let features = self.spec.flat_features();
        let mut flat = Array2::<T>::zeros((n, features));
        let mut samples = Vec::with_capacity(n);
        for i in 0..n {
            let sample = batch.index_axis(Axis(0), i);
            let mut x: Vec<T> = sample.iter().copied().collect();
            let mut channels = self.spec.in_channels;
            let mut size = self.spec.input_size;
            let mut caches = Vec::with_capacity(self.params.convs.len());
            for layer in &self.params.convs {
                let col = im2col(&x, channels, size);
                let mut act = standard(layer.weight.dot(&col));
                for (mut row, &b) in act.axis_iter_mut(Axis(0)).zip(layer.bias.iter()) {
                    row.mapv_inplace(|v| (v + b).max(T::zero()));
                }
                let (pooled, argmax) = maxpool(&act, size);
                caches.push(ConvCache { col, act, argmax, size });
                x = pooled;
                channels = layer.weight.nrows();
                size /= 2;
            }
            flat.row_mut(i).assign(&ndarray::ArrayView1::from(&x[..]));
            samples.push(caches);
        }

        let mut hidden_act = flat.dot(&self.params.hidden.weight.t()) + &self.params.hidden.bias;
        hidden_act.mapv_inplace(|v| v.max(T::zero()));
        let (hidden_out, dropout_mask) = match (mode, self.spec.dropout) {
            (Mode::Train(rng), Some(p)) if p > 0.0 => {
                let scale = T::of(1.0 / (1.0 - p));
                let mask = Array2::from_shape_simple_fn(hidden_act.dim(), || {
                    if rng.bernoulli(p) {
                        T::zero()
                    } else {
                        scale
                    }
                });
                (&hidden_act * &mask, Some(mask))
            }
            _ => (hidden_act.clone(), None),
        };
        let logits = hidden_out.dot(&self.params.output.weight.t()) + &self.params.output.bias;
        let mut probs = Array2::<T>::zeros(logits.dim());
        for (mut p, z) in probs.axis_iter_mut(Axis(0)).zip(logits.axis_iter(Axis(0))) {
            let z: Vec<T> = z.to_vec();
            p.assign(&ndarray::ArrayView1::from(&softmax(&z)[..]));
        }
        Ok(ForwardCache {
            samples,
            flat,
            hidden_act,
            dropout_mask,
            hidden_out,
            probs,
        })
    }

    /// Mean cross-entropy of a cached forward pass.
    pub fn loss(cache: &ForwardCache<T>, targets: &[usize]) -> f64 {
        let n = targets.len();
        targets
            .iter()
            .enumerate()
            .map(|(i, &t)| cross_entropy(cache.probs.row(i).as_slice().expect("row"), t))
            .sum::<f64>()
            / n as f64
    }

    /// Gradients of the mean cross-entropy (softmax input gradient
    /// `(p - y) / n`). With `trunk = false` the convolutional gradients are
    /// left at zero and not computed.
    pub fn backward(&self, cache: &ForwardCache<T>, targets: &[usize], trunk: bool) -> Result<Params<T>, ModelError> {
        let n = cache.probs.nrows();
        if targets.len() != n {
            return Err(ModelError::ShapeMismatch(format!("{} targets for {n} samples", targets.len())));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= self.spec.classes) {
            return Err(ModelError::ShapeMismatch(format!("target {bad} >= {} classes", self.spec.classes)));
        }
        let mut grads = Params::<T>::zeros(&self.spec);
        let inv_n = T::of(1.0 / n as f64);
        let mut dlogits = cache.probs.clone();
        for (i, &t) in targets.iter().enumerate() {
            dlogits[[i, t]] -= T::one();
        }
        dlogits.mapv_inplace(|v| v * inv_n);

        grads.output.weight = standard(dlogits.t().dot(&cache.hidden_out));
        grads.output.bias = dlogits.sum_axis(Axis(0));
        let mut dhidden = dlogits.dot(&self.params.output.weight);
        if let Some(mask) = &cache.dropout_mask {
            dhidden *= mask;
        }
        ndarray::Zip::from(&mut dhidden)
            .and(&cache.hidden_act)
            .for_each(|d, &a| {
                if a <= T::zero() {
                    *d = T::zero();
                }
            });
        grads.hidden.weight = standard(dhidden.t().dot(&cache.flat));
        grads.hidden.bias = dhidden.sum_axis(Axis(0));
        if !trunk || self.params.convs.is_empty() {
            return Ok(grads);
        }

        let dflat = dhidden.dot(&self.params.hidden.weight);
        for (i, caches) in cache.samples.iter().enumerate() {
            let mut upstream: Vec<T> = dflat.row(i).to_vec();
            for (l, cc) in caches.iter().enumerate().rev() {
                let layer = &self.params.convs[l];
                let filters = layer.weight.nrows();
                // Un-pool into the argmax positions, masked by ReLU.
                let mut dact = Array2::<T>::zeros((filters, cc.size * cc.size));
                {
                    let d = dact.as_slice_mut().expect("standard layout");
                    let act = cc.act.as_slice().expect("standard layout");
                    for (&k, &g) in cc.argmax.iter().zip(&upstream) {
                        let k = k as usize;
                        if act[k] > T::zero() {
                            d[k] += g;
                        }
                    }
                }
                let gw = dact.dot(&cc.col.t());
                grads.convs[l].weight += &gw;
                grads.convs[l].bias += &dact.sum_axis(Axis(1));
                if l > 0 {
                    let dcol = standard(layer.weight.t().dot(&dact));
                    let channels = layer.weight.ncols() / 9;
                    upstream = col2im(&dcol, channels, cc.size);
                }
            }
        }
        Ok(grads)
    }

    /// Mean loss and its gradient in one call.
    pub fn loss_and_grad(
        &self,
        batch: &Array4<T>,
        targets: &[usize],
        mode: Mode<'_>,
        trunk: bool,
    ) -> Result<(f64, Params<T>, Array2<T>), ModelError> {
        let cache = self.forward_cached(batch, mode)?;
        let loss = Self::loss(&cache, targets);
        let grads = self.backward(&cache, targets, trunk)?;
        Ok((loss, grads, cache.probs))
    }
}

/// Pack `[h, w, 3]` byte images into a `[n, 3, h, w]` batch scaled to `[0, 1]`.
pub fn batch_from_images<T: Scalar>(images: &[&crate::imaging::ImageBuffer]) -> Array4<T> {
    let (h, w) = images
        .first()
        .map(|i| (i.height(), i.width()))
        .unwrap_or((0, 0));
    let mut batch = Array4::<T>::zeros((images.len(), 3, h, w));
    let scale = 1.0 / 255.0;
    for (i, img) in images.iter().enumerate() {
        assert_eq!((img.height(), img.width()), (h, w), "mixed image sizes in batch");
        let data = img.data();
        for c in 0..3 {
            let mut plane = batch.slice_mut(s![i, c, .., ..]);
            for (k, v) in plane.iter_mut().enumerate() {
                *v = T::of(data[k * 3 + c] as f64 * scale);
            }
        }
    }
    batch
}

/// Plain `[n, d]` view helper for tests and diagnostics.
pub fn rows_of<T: Scalar>(m: &Array2<T>) -> Vec<Vec<T>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}
