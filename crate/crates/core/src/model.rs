//! Small differentiable models with optional low-rank adapters and exact
//! per-sample gradients.
//!
//! Two architectures are supported: a single linear head and a two-layer
//! tanh MLP. Layers are named `linear` and `fc1`/`fc2` respectively; this
//! order is the flat parameter layout used everywhere else (optimizer
//! state, checkpoints, gradients).
//!
//! When an adapter is attached, only its factors are trainable and the base
//! weights are frozen. The trainable layout is then, per adapted layer in
//! architecture order, `A` (rank × d_in, row-major) followed by `B`
//! (d_out × rank, row-major).

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;
use core::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, dot, DenseMatrix, DenseVector};

pub const DEFAULT_LORA_RANK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    Linear {
        d_in: usize,
        d_out: usize,
    },
    /// Two layers with a tanh hidden activation.
    Mlp {
        d_in: usize,
        hidden: usize,
        d_out: usize,
    },
}

impl Architecture {
    pub fn layer_names(&self) -> &'static [&'static str] {
        match self {
            Architecture::Linear { .. } => &["linear"],
            Architecture::Mlp { .. } => &["fc1", "fc2"],
        }
    }

    /// `(d_out, d_in)` per layer, in layout order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        match *self {
            Architecture::Linear { d_in, d_out } => vec![(d_out, d_in)],
            Architecture::Mlp { d_in, hidden, d_out } => vec![(hidden, d_in), (d_out, hidden)],
        }
    }

    pub fn input_dim(&self) -> usize {
        match *self {
            Architecture::Linear { d_in, .. } | Architecture::Mlp { d_in, .. } => d_in,
        }
    }

    pub fn output_dim(&self) -> usize {
        match *self {
            Architecture::Linear { d_out, .. } | Architecture::Mlp { d_out, .. } => d_out,
        }
    }

    fn layer_index(&self, name: &str) -> Option<usize> {
        self.layer_names().iter().position(|n| *n == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// ½‖pred − target‖²
    Regression,
    /// Softmax cross-entropy over the output logits.
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    arch: Architecture,
    segments: Vec<(String, DenseMatrix)>,
}

impl ModelParams {
    pub fn new(arch: Architecture, weights: Vec<DenseMatrix>) -> Result<Self> {
        let shapes = arch.layer_shapes();
        if weights.len() != shapes.len() {
            return Err(Error::dim("model segments", shapes.len(), weights.len()));
        }
        let mut segments = Vec::with_capacity(weights.len());
        for ((name, shape), w) in arch.layer_names().iter().zip(&shapes).zip(weights) {
            if w.shape() != *shape {
                return Err(Error::dim("model segment rows", shape.0 * shape.1, w.len()));
            }
            segments.push((name.to_string(), w));
        }
        Ok(ModelParams { arch, segments })
    }

    /// Gaussian weights with standard deviation `scale / sqrt(d_in)` per layer.
    pub fn random(arch: Architecture, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = arch
            .layer_shapes()
            .into_iter()
            .map(|(rows, cols)| {
                let std = scale / libm::sqrt(cols as f64);
                let normal = Normal::new(0.0, std).expect("finite std");
                let data = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
                DenseMatrix::from_vec(rows, cols, data).expect("shape by construction")
            })
            .collect();
        ModelParams::new(arch, weights).expect("shape by construction")
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn segments(&self) -> &[(String, DenseMatrix)] {
        &self.segments
    }

    pub fn weight(&self, name: &str) -> Result<&DenseMatrix> {
        self.segments
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, w)| w)
            .ok_or_else(|| Error::Lookup(name.to_string()))
    }

    pub fn num_params(&self) -> usize {
        self.segments.iter().map(|(_, w)| w.len()).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (_, w) in &self.segments {
            out.extend_from_slice(w.as_slice());
        }
        out
    }

    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::dim("model flat params", self.num_params(), flat.len()));
        }
        let mut out = self.clone();
        let mut offset = 0;
        for (_, w) in out.segments.iter_mut() {
            let n = w.len();
            w.as_mut_slice().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraLayer {
    pub name: String,
    /// rank × d_in
    pub a: DenseMatrix,
    /// d_out × rank
    pub b: DenseMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    rank: usize,
    alpha: f64,
    layers: Vec<LoraLayer>,
}

impl LoraAdapter {
    pub fn new(rank: usize, alpha: f64, layers: Vec<LoraLayer>) -> Result<Self> {
        if rank == 0 {
            return Err(Error::config("adapter rank must be >= 1"));
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::config("adapter alpha must be positive"));
        }
        for l in &layers {
            if l.a.rows() != rank || l.b.cols() != rank {
                return Err(Error::dim("adapter rank", rank, l.a.rows()));
            }
        }
        Ok(LoraAdapter { rank, alpha, layers })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn layers(&self) -> &[LoraLayer] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&LoraLayer> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.a.len() + l.b.len()).sum()
    }

    /// `(alpha / rank) · B · A` for one layer.
    pub fn delta(&self, name: &str) -> Result<DenseMatrix> {
        let l = self.layer(name).ok_or_else(|| Error::Lookup(name.to_string()))?;
        Ok(l.b.matmul(&l.a)?.scale(self.scale()))
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.a.as_slice());
            out.extend_from_slice(l.b.as_slice());
        }
        out
    }

    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::dim("adapter flat params", self.num_params(), flat.len()));
        }
        let mut out = self.clone();
        let mut offset = 0;
        for l in out.layers.iter_mut() {
            for m in [&mut l.a, &mut l.b] {
                let n = m.len();
                m.as_mut_slice().copy_from_slice(&flat[offset..offset + n]);
                offset += n;
            }
        }
        Ok(out)
    }

    /// Same layers, rank and alpha (and therefore the same shapes).
    pub fn is_compatible(&self, other: &LoraAdapter) -> bool {
        self.rank == other.rank
            && self.alpha == other.alpha
            && self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(x, y)| x.name == y.name && x.a.shape() == y.a.shape() && x.b.shape() == y.b.shape())
    }
}

/// Fresh adapter: `A` i.i.d. Gaussian with variance `1/rank`, `B = 0`.
pub fn init_adapter(arch: Architecture, layers: &[&str], rank: usize, alpha: f64, seed: u64) -> Result<LoraAdapter> {
    if layers.is_empty() {
        return Err(Error::config("at least one layer must be adapted"));
    }
    let shapes = arch.layer_shapes();
    let mut wanted: Vec<usize> = Vec::with_capacity(layers.len());
    for name in layers {
        let idx = arch.layer_index(name).ok_or_else(|| Error::Lookup(name.to_string()))?;
        if wanted.contains(&idx) {
            return Err(Error::config(format!("layer `{name}` listed twice")));
        }
        wanted.push(idx);
    }
    wanted.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, libm::sqrt(1.0 / rank.max(1) as f64)).map_err(|_| Error::config("invalid rank"))?;
    let mut out = Vec::with_capacity(wanted.len());
    for idx in wanted {
        let (d_out, d_in) = shapes[idx];
        if rank == 0 || rank > d_in.min(d_out) {
            return Err(Error::config(format!(
                "rank {rank} out of range for layer `{}` ({d_out}x{d_in})",
                arch.layer_names()[idx]
            )));
        }
        let a = (0..rank * d_in).map(|_| normal.sample(&mut rng)).collect();
        out.push(LoraLayer {
            name: arch.layer_names()[idx].to_string(),
            a: DenseMatrix::from_vec(rank, d_in, a)?,
            b: DenseMatrix::zeros(d_out, rank),
        });
    }
    LoraAdapter::new(rank, alpha, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PollutionKind {
    /// Target replaced by an independent teacher's output.
    LabelSubstitution,
    /// Features zeroed beyond a prefix.
    Truncation,
    /// Heavy Gaussian noise added to the target.
    NoiseInjection,
}

impl PollutionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PollutionKind::LabelSubstitution => "label_substitution",
            PollutionKind::Truncation => "truncation",
            PollutionKind::NoiseInjection => "noise_injection",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityLabel {
    Clean,
    Polluted(PollutionKind),
}

impl QualityLabel {
    pub fn is_clean(&self) -> bool {
        matches!(self, QualityLabel::Clean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Value(Vec<f64>),
    Class(usize),
}

impl Target {
    pub fn loss_kind(&self) -> LossKind {
        match self {
            Target::Value(_) => LossKind::Regression,
            Target::Class(_) => LossKind::Classification,
        }
    }
}

/// Counts every read of a sample's ground-truth quality label.
///
/// Scoring, selection, merging and federation must never move this counter.
pub mod label_audit {
    use super::*;

    pub(super) static READS: AtomicU64 = AtomicU64::new(0);

    pub fn reads() -> u64 {
        READS.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u64,
    pub features: DenseVector,
    pub target: Target,
    quality: QualityLabel,
}

impl Sample {
    pub fn new(id: u64, features: Vec<f64>, target: Target, quality: QualityLabel) -> Self {
        Sample {
            id,
            features: DenseVector(features),
            target,
            quality,
        }
    }

    pub fn clean(id: u64, features: Vec<f64>, target: Target) -> Self {
        Self::new(id, features, target, QualityLabel::Clean)
    }

    /// Ground truth for evaluation only. Every call is counted by
    /// [`label_audit`].
    pub fn quality_label(&self) -> QualityLabel {
        label_audit::READS.fetch_add(1, Ordering::SeqCst);
        self.quality
    }

    pub(crate) fn relabel(mut self, quality: QualityLabel) -> Self {
        self.quality = quality;
        self
    }
}

/// Per-layer activations kept from the forward pass for backprop.
struct Trace {
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// `A · input` for each adapted layer (None for frozen/unadapted).
    projected: Vec<Option<Vec<f64>>>,
    output: Vec<f64>,
}

fn check_adapter(params: &ModelParams, adapter: &LoraAdapter) -> Result<()> {
    let shapes = params.arch.layer_shapes();
    for l in adapter.layers() {
        let idx = params
            .arch
            .layer_index(&l.name)
            .ok_or_else(|| Error::Lookup(l.name.clone()))?;
        let (d_out, d_in) = shapes[idx];
        if l.a.cols() != d_in {
            return Err(Error::dim("adapter A columns", d_in, l.a.cols()));
        }
        if l.b.rows() != d_out {
            return Err(Error::dim("adapter B rows", d_out, l.b.rows()));
        }
    }
    Ok(())
}

fn run_forward(params: &ModelParams, adapter: Option<&LoraAdapter>, x: &[f64]) -> Result<Trace> {
    if x.len() != params.arch.input_dim() {
        return Err(Error::dim("model input", params.arch.input_dim(), x.len()));
    }
    if let Some(ad) = adapter {
        check_adapter(params, ad)?;
    }
    let n_layers = params.segments.len();
    let mut inputs = Vec::with_capacity(n_layers);
    let mut projected = Vec::with_capacity(n_layers);
    let mut current = x.to_vec();
    for (i, (name, w)) in params.segments.iter().enumerate() {
        let mut z = w.matvec(&current)?;
        let lora = adapter.and_then(|ad| ad.layer(name).map(|l| (ad.scale(), l)));
        let proj = match lora {
            Some((scale, l)) => {
                let ax = l.a.matvec(&current)?;
                let bax = l.b.matvec(&ax)?;
                for (zi, d) in z.iter_mut().zip(&bax) {
                    *zi += scale * d;
                }
                Some(ax)
            }
            None => None,
        };
        inputs.push(current);
        projected.push(proj);
        if i + 1 < n_layers {
            z.iter_mut().for_each(|v| *v = libm::tanh(*v));
        }
        current = z;
    }
    if !all_finite(&current) {
        return Err(Error::Numeric("model prediction"));
    }
    Ok(Trace {
        inputs,
        projected,
        output: current,
    })
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| libm::exp(l - max)).sum();
    max + libm::log(sum)
}

fn loss_and_output_grad(pred: &[f64], target: &Target) -> Result<(f64, Vec<f64>)> {
    match target {
        Target::Value(t) => {
            if t.len() != pred.len() {
                return Err(Error::dim("regression target", pred.len(), t.len()));
            }
            let resid: Vec<f64> = pred.iter().zip(t).map(|(p, y)| p - y).collect();
            Ok((0.5 * dot(&resid, &resid), resid))
        }
        Target::Class(c) => {
            if *c >= pred.len() {
                return Err(Error::dim("class index", pred.len(), *c + 1));
            }
            let lse = log_sum_exp(pred);
            let grad: Vec<f64> = pred
                .iter()
                .enumerate()
                .map(|(i, l)| libm::exp(l - lse) - if i == *c { 1.0 } else { 0.0 })
                .collect();
            Ok((lse - pred[*c], grad))
        }
    }
}

/// Prediction of the adapter-augmented model; adapted layers use
/// `W + (alpha/r)·B·A`.
pub fn forward(params: &ModelParams, adapter: Option<&LoraAdapter>, x: &DenseVector) -> Result<DenseVector> {
    Ok(DenseVector(run_forward(params, adapter, x.as_slice())?.output))
}

pub fn per_sample_loss(params: &ModelParams, adapter: Option<&LoraAdapter>, z: &Sample) -> Result<f64> {
    let trace = run_forward(params, adapter, z.features.as_slice())?;
    let (loss, _) = loss_and_output_grad(&trace.output, &z.target)?;
    if !loss.is_finite() {
        return Err(Error::Numeric("per-sample loss"));
    }
    Ok(loss)
}

/// Loss and exact gradient with respect to the trainable parameters.
pub fn loss_and_grad(params: &ModelParams, adapter: Option<&LoraAdapter>, z: &Sample) -> Result<(f64, Vec<f64>)> {
    let trace = run_forward(params, adapter, z.features.as_slice())?;
    let (loss, mut delta) = loss_and_output_grad(&trace.output, &z.target)?;
    let n_layers = params.segments.len();
    // Gradient blocks are produced back to front, then reversed.
    let mut blocks: Vec<Vec<f64>> = Vec::with_capacity(2 * n_layers);
    for i in (0..n_layers).rev() {
        let (name, w) = &params.segments[i];
        let input = &trace.inputs[i];
        let lora = adapter.and_then(|ad| ad.layer(name).map(|l| (ad.scale(), l)));
        let mut upstream = w.matvec_t(&delta)?;
        match (adapter, lora) {
            (None, _) => blocks.push(DenseMatrix::outer(&delta, input).into_vec()),
            (Some(_), Some((scale, l))) => {
                let bt_delta = l.b.matvec_t(&delta)?;
                let ax = trace.projected[i].as_ref().expect("adapted layer has projection");
                let mut grad_b = DenseMatrix::outer(&delta, ax);
                grad_b.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
                let mut grad_a = DenseMatrix::outer(&bt_delta, input);
                grad_a.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
                blocks.push(grad_b.into_vec());
                blocks.push(grad_a.into_vec());
                let at = l.a.matvec_t(&bt_delta)?;
                for (u, v) in upstream.iter_mut().zip(&at) {
                    *u += scale * v;
                }
            }
            (Some(_), None) => {}
        }
        if i > 0 {
            // input of layer i is tanh of the previous pre-activation
            for (u, h) in upstream.iter_mut().zip(input) {
                *u *= 1.0 - h * h;
            }
            delta = upstream;
        }
    }
    blocks.reverse();
    let grad: Vec<f64> = blocks.concat();
    if !all_finite(&grad) {
        return Err(Error::Numeric("per-sample gradient"));
    }
    Ok((loss, grad))
}

pub fn per_sample_grad(params: &ModelParams, adapter: Option<&LoraAdapter>, z: &Sample) -> Result<Vec<f64>> {
    loss_and_grad(params, adapter, z).map(|(_, g)| g)
}

/// Offsets of one layer's A and B blocks inside the adapter gradient.
pub fn adapter_layer_range(adapter: &LoraAdapter, layer: &str) -> Result<Range<usize>> {
    let mut offset = 0;
    for l in adapter.layers() {
        let n = l.a.len() + l.b.len();
        if l.name == layer {
            return Ok(offset..offset + n);
        }
        offset += n;
    }
    Err(Error::Lookup(layer.to_string()))
}

/// Gradient restricted to the A and B blocks of one adapted layer.
pub fn per_sample_grad_layer(params: &ModelParams, adapter: &LoraAdapter, z: &Sample, layer: &str) -> Result<Vec<f64>> {
    let range = adapter_layer_range(adapter, layer)?;
    let g = per_sample_grad(params, Some(adapter), z)?;
    Ok(g[range].to_vec())
}

/// Central differences `(f(x+h·eᵢ) − f(x−h·eᵢ)) / 2h`.
pub fn finite_diff_grad<F>(loss_fn: F, point: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut x = point.to_vec();
    (0..point.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = loss_fn(&x);
            x[i] = orig - h;
            let down = loss_fn(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Frozen base weights plus an optional adapter, viewed through its flat
/// trainable-parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainableModel {
    pub base: ModelParams,
    pub adapter: Option<LoraAdapter>,
}

/// Name, shape and flat offset of one trainable segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl SegmentInfo {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.rows * self.cols
    }
}

impl TrainableModel {
    pub fn new(base: ModelParams, adapter: Option<LoraAdapter>) -> Result<Self> {
        if let Some(ad) = &adapter {
            check_adapter(&base, ad)?;
        }
        Ok(TrainableModel { base, adapter })
    }

    pub fn num_trainable(&self) -> usize {
        match &self.adapter {
            Some(ad) => ad.num_params(),
            None => self.base.num_params(),
        }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        match &self.adapter {
            Some(ad) => ad.flat(),
            None => self.base.flat(),
        }
    }

    pub fn with_flat_params(&self, flat: &[f64]) -> Result<Self> {
        match &self.adapter {
            Some(ad) => Ok(TrainableModel {
                base: self.base.clone(),
                adapter: Some(ad.with_flat(flat)?),
            }),
            None => Ok(TrainableModel {
                base: self.base.with_flat(flat)?,
                adapter: None,
            }),
        }
    }

    pub fn layout(&self) -> Vec<SegmentInfo> {
        let mut out = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, rows: usize, cols: usize| {
            out.push(SegmentInfo {
                name,
                rows,
                cols,
                offset,
            });
            offset += rows * cols;
        };
        match &self.adapter {
            Some(ad) => {
                for l in ad.layers() {
                    push(format!("{}.lora_a", l.name), l.a.rows(), l.a.cols());
                    push(format!("{}.lora_b", l.name), l.b.rows(), l.b.cols());
                }
            }
            None => {
                for (name, w) in self.base.segments() {
                    push(name.clone(), w.rows(), w.cols());
                }
            }
        }
        out
    }

    /// Names of the layers that carry trainable parameters.
    pub fn trainable_layers(&self) -> Vec<String> {
        match &self.adapter {
            Some(ad) => ad.layers().iter().map(|l| l.name.clone()).collect(),
            None => self.base.segments().iter().map(|(n, _)| n.clone()).collect(),
        }
    }

    /// Flat range holding all trainable parameters of one layer.
    pub fn layer_range(&self, layer: &str) -> Result<Range<usize>> {
        match &self.adapter {
            Some(ad) => adapter_layer_range(ad, layer),
            None => {
                let mut offset = 0;
                for (name, w) in self.base.segments() {
                    if name == layer {
                        return Ok(offset..offset + w.len());
                    }
                    offset += w.len();
                }
                Err(Error::Lookup(layer.to_string()))
            }
        }
    }

    pub fn forward(&self, x: &DenseVector) -> Result<DenseVector> {
        forward(&self.base, self.adapter.as_ref(), x)
    }

    pub fn loss(&self, z: &Sample) -> Result<f64> {
        per_sample_loss(&self.base, self.adapter.as_ref(), z)
    }

    pub fn grad(&self, z: &Sample) -> Result<Vec<f64>> {
        per_sample_grad(&self.base, self.adapter.as_ref(), z)
    }

    pub fn loss_and_grad(&self, z: &Sample) -> Result<(f64, Vec<f64>)> {
        loss_and_grad(&self.base, self.adapter.as_ref(), z)
    }

    pub fn mean_loss(&self, samples: &[Sample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::Data("mean loss of an empty set".into()));
        }
        let mut total = 0.0;
        for z in samples {
            total += self.loss(z)?;
        }
        Ok(total / samples.len() as f64)
    }
}
