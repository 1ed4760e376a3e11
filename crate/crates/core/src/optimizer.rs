//! SGD, Adam and AdamW steps that expose the update direction, plus
//! checkpoint trajectory capture.
//!
//! Every variant satisfies `θ' = θ − η_t · L`. For SGD `L` is the gradient;
//! for Adam `L = m̂ / (√v̂ + ε)` with bias-corrected moments
//! `m̂ = (β₁m + (1−β₁)g) / (1−β₁ᵗ)`, `v̂ = (β₂v + (1−β₂)g²) / (1−β₂ᵗ)`;
//! AdamW adds `λθ` to `L`. Stored moments are the raw (uncorrected)
//! exponential averages.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::all_finite;
use crate::model::{Sample, TrainableModel};

pub const DEFAULT_BATCH_SIZE: usize = 16;
pub const DEFAULT_EPOCHS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerVariant {
    Sgd,
    Adam,
    #[serde(rename = "adamw")]
    AdamW,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant(f64),
    /// η for steps 1, 2, …; the last entry repeats past the end.
    PerStep(Vec<f64>),
}

impl LrSchedule {
    pub fn at(&self, t: u64) -> f64 {
        match self {
            LrSchedule::Constant(lr) => *lr,
            LrSchedule::PerStep(v) => {
                let idx = (t.max(1) - 1) as usize;
                v[idx.min(v.len() - 1)]
            }
        }
    }

    /// Every rate multiplied by `c`.
    pub fn scaled(&self, c: f64) -> LrSchedule {
        match self {
            LrSchedule::Constant(lr) => LrSchedule::Constant(lr * c),
            LrSchedule::PerStep(v) => LrSchedule::PerStep(v.iter().map(|lr| lr * c).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerKind {
    pub variant: OptimizerVariant,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Required for AdamW, ignored otherwise.
    #[serde(default)]
    pub weight_decay: Option<f64>,
    pub lr: LrSchedule,
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

impl OptimizerKind {
    pub fn sgd(lr: f64) -> Self {
        OptimizerKind {
            variant: OptimizerVariant::Sgd,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: None,
            lr: LrSchedule::Constant(lr),
        }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerKind {
            variant: OptimizerVariant::Adam,
            ..Self::sgd(lr)
        }
    }

    pub fn adamw(lr: f64, weight_decay: f64) -> Self {
        OptimizerKind {
            variant: OptimizerVariant::AdamW,
            weight_decay: Some(weight_decay),
            ..Self::sgd(lr)
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.lr {
            LrSchedule::Constant(lr) if !(lr.is_finite() && *lr > 0.0) => {
                return Err(Error::config("learning rate must be positive"))
            }
            LrSchedule::PerStep(v) if v.is_empty() || v.iter().any(|lr| lr.is_nan() || *lr <= 0.0) => {
                return Err(Error::config("every scheduled learning rate must be positive"))
            }
            _ => {}
        }
        if self.variant == OptimizerVariant::Sgd {
            return Ok(());
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::config("betas must lie in [0, 1)"));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::config("epsilon must be positive"));
        }
        if self.variant == OptimizerVariant::AdamW {
            match self.weight_decay {
                Some(wd) if wd >= 0.0 && wd.is_finite() => {}
                Some(_) => return Err(Error::config("weight decay must be >= 0")),
                None => return Err(Error::config("AdamW requires a weight decay")),
            }
        }
        Ok(())
    }

    pub fn uses_moments(&self) -> bool {
        self.variant != OptimizerVariant::Sgd
    }

    fn decay(&self) -> f64 {
        match self.variant {
            OptimizerVariant::AdamW => self.weight_decay.unwrap_or(0.0),
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of steps already taken.
    pub step: u64,
}

impl OptimState {
    pub fn fresh(n: usize) -> Self {
        OptimState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub params: Vec<f64>,
    pub state: OptimState,
    pub direction: Vec<f64>,
}

/// One moment update and the resulting direction, for the coordinates in
/// `grad`. `m`, `v` and `params` must be the matching slices.
pub(crate) fn moment_direction(
    kind: &OptimizerKind,
    m: &[f64],
    v: &[f64],
    params: &[f64],
    grad: &[f64],
    t: u64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (b1, b2) = (kind.beta1, kind.beta2);
    let c1 = 1.0 - libm::pow(b1, t as f64);
    let c2 = 1.0 - libm::pow(b2, t as f64);
    let decay = kind.decay();
    let mut m_new = Vec::with_capacity(grad.len());
    let mut v_new = Vec::with_capacity(grad.len());
    let mut dir = Vec::with_capacity(grad.len());
    for i in 0..grad.len() {
        let g = grad[i];
        let mi = b1 * m[i] + (1.0 - b1) * g;
        let vi = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = mi / c1;
        let v_hat = vi / c2;
        let mut l = m_hat / (libm::sqrt(v_hat) + kind.eps);
        if decay != 0.0 {
            l += decay * params[i];
        }
        m_new.push(mi);
        v_new.push(vi);
        dir.push(l);
    }
    (m_new, v_new, dir)
}

/// One optimizer step at (1-based) step index `t`.
pub fn step(kind: &OptimizerKind, params: &[f64], state: &OptimState, grad: &[f64], t: u64) -> Result<StepOutput> {
    if grad.len() != params.len() {
        return Err(Error::dim("optimizer gradient", params.len(), grad.len()));
    }
    if !all_finite(grad) {
        return Err(Error::Numeric("optimizer gradient"));
    }
    let lr = kind.lr.at(t);
    let (state, direction) = if kind.uses_moments() {
        if t == 0 {
            return Err(Error::StepIndex(t));
        }
        if state.len() != params.len() || state.v.len() != params.len() {
            return Err(Error::dim("optimizer state", params.len(), state.len()));
        }
        if state.step + 1 != t {
            return Err(Error::State(format!(
                "state has taken {} steps, cannot apply step {t}",
                state.step
            )));
        }
        let (m, v, dir) = moment_direction(kind, &state.m, &state.v, params, grad, t);
        (OptimState { m, v, step: t }, dir)
    } else {
        (
            OptimState {
                step: state.step + 1,
                ..state.clone()
            },
            grad.to_vec(),
        )
    };
    let params = params.iter().zip(&direction).map(|(p, l)| p - lr * l).collect();
    Ok(StepOutput {
        params,
        state,
        direction,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Index of the step this snapshot enters (1-based).
    pub step: u64,
    /// Flat trainable parameters.
    pub params: Vec<f64>,
    pub lr: f64,
    /// Optimizer state entering `step`; absent for SGD.
    pub state: Option<OptimState>,
}

/// Apply one hypothetical moment update from the checkpoint's stored state
/// with `grad` and return the direction `L`, without mutating anything.
pub fn hypothetical_direction(kind: &OptimizerKind, checkpoint: &Checkpoint, grad: &[f64]) -> Result<Vec<f64>> {
    hypothetical_direction_slice(kind, checkpoint, 0..checkpoint.params.len(), grad)
}

/// Same as [`hypothetical_direction`] restricted to a coordinate range.
pub fn hypothetical_direction_slice(
    kind: &OptimizerKind,
    checkpoint: &Checkpoint,
    range: core::ops::Range<usize>,
    grad: &[f64],
) -> Result<Vec<f64>> {
    if grad.len() != range.len() {
        return Err(Error::dim("hypothetical gradient", range.len(), grad.len()));
    }
    if !kind.uses_moments() {
        return Ok(grad.to_vec());
    }
    let state = checkpoint
        .state
        .as_ref()
        .ok_or_else(|| Error::State("checkpoint carries no optimizer state".into()))?;
    if state.m.len() < range.end || state.v.len() < range.end {
        return Err(Error::dim("checkpoint state", range.end, state.m.len()));
    }
    let (_, _, dir) = moment_direction(
        kind,
        &state.m[range.clone()],
        &state.v[range.clone()],
        &checkpoint.params[range],
        grad,
        state.step + 1,
    );
    Ok(dir)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cadence {
    /// Snapshot entering steps 1, 1+k, 1+2k, …
    EverySteps(u64),
    /// Snapshot after the last step of each epoch.
    #[default]
    EpochEnd,
    /// Snapshot of the aggregated global model after every k-th
    /// communication round (federated training only).
    Rounds(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Model at the start of training; checkpoints hold its flat params.
    pub model: TrainableModel,
    pub optimizer: OptimizerKind,
    pub cadence: Cadence,
    pub checkpoints: Vec<Checkpoint>,
}

impl Trajectory {
    pub fn model_at(&self, idx: usize) -> Result<TrainableModel> {
        let ck = self
            .checkpoints
            .get(idx)
            .ok_or_else(|| Error::State(format!("no checkpoint {idx}")))?;
        self.model.with_flat_params(&ck.params)
    }

    pub fn last(&self) -> Result<&Checkpoint> {
        self.checkpoints
            .last()
            .ok_or_else(|| Error::State("empty trajectory".into()))
    }

    pub fn final_model(&self) -> Result<TrainableModel> {
        self.model.with_flat_params(&self.last()?.params)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRunConfig {
    pub optimizer: OptimizerKind,
    pub epochs: u32,
    pub batch_size: usize,
    pub cadence: Cadence,
    pub seed: u64,
    /// Keep every step's batch gradient and direction.
    pub log_steps: bool,
}

impl TrainingRunConfig {
    pub fn new(optimizer: OptimizerKind, seed: u64) -> Self {
        TrainingRunConfig {
            optimizer,
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            cadence: Cadence::EpochEnd,
            seed,
            log_steps: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: u64,
    pub grad: Vec<f64>,
    pub direction: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingOutcome {
    pub trajectory: Trajectory,
    pub final_params: Vec<f64>,
    pub final_state: OptimState,
    pub steps: Vec<StepRecord>,
}

/// Mean of per-sample gradients over a batch.
pub fn batch_gradient(model: &TrainableModel, batch: &[&Sample]) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; model.num_trainable()];
    for z in batch {
        for (a, g) in acc.iter_mut().zip(model.grad(z)?) {
            *a += g;
        }
    }
    let n = batch.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Sample visiting order for one epoch of a client's data stream.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Infinite mini-batch stream over a dataset: reshuffled every epoch,
/// last batch of an epoch may be short.
#[derive(Debug, Clone)]
pub struct BatchStream {
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    pos: usize,
    order: Vec<usize>,
}

impl BatchStream {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("empty training set"));
        }
        if batch_size == 0 {
            return Err(Error::config("batch size must be >= 1"));
        }
        Ok(BatchStream {
            n,
            batch_size,
            seed,
            epoch: 0,
            pos: 0,
            order: epoch_order(n, seed, 0),
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.n.div_ceil(self.batch_size)
    }

    /// Indices of the next batch and whether it closes an epoch.
    pub fn next_batch(&mut self) -> (Vec<usize>, bool) {
        let end = (self.pos + self.batch_size).min(self.n);
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        let epoch_end = end == self.n;
        if epoch_end {
            self.epoch += 1;
            self.pos = 0;
            self.order = epoch_order(self.n, self.seed, self.epoch);
        }
        (batch, epoch_end)
    }
}

/// Local training loop shared by trajectory recording and the federation.
pub struct LocalTrainer<'a> {
    pub model: TrainableModel,
    pub optimizer: &'a OptimizerKind,
    pub params: Vec<f64>,
    pub state: OptimState,
    data: &'a [Sample],
    stream: BatchStream,
}

impl<'a> LocalTrainer<'a> {
    pub fn new(
        model: TrainableModel,
        optimizer: &'a OptimizerKind,
        state: OptimState,
        data: &'a [Sample],
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        optimizer.validate()?;
        let params = model.flat_params();
        if state.len() != params.len() {
            return Err(Error::dim("trainer state", params.len(), state.len()));
        }
        let stream = BatchStream::new(data.len(), batch_size, seed)?;
        Ok(LocalTrainer {
            model,
            optimizer,
            params,
            state,
            data,
            stream,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.stream.batches_per_epoch()
    }

    /// Take one step; returns (t, grad, direction, epoch_end).
    pub fn step(&mut self) -> Result<(u64, Vec<f64>, Vec<f64>, bool)> {
        let (idx, epoch_end) = self.stream.next_batch();
        let batch: Vec<&Sample> = idx.iter().map(|&i| &self.data[i]).collect();
        let current = self.model.with_flat_params(&self.params)?;
        let grad = batch_gradient(&current, &batch)?;
        let t = self.state.step + 1;
        let out = step(self.optimizer, &self.params, &self.state, &grad, t)?;
        self.params = out.params;
        self.state = out.state;
        Ok((t, grad, out.direction, epoch_end))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let t = self.state.step + 1;
        Checkpoint {
            step: t,
            params: self.params.clone(),
            lr: self.optimizer.lr.at(t),
            state: self.optimizer.uses_moments().then(|| self.state.clone()),
        }
    }

    pub fn current_model(&self) -> Result<TrainableModel> {
        self.model.with_flat_params(&self.params)
    }
}

/// Train `model` on `data` and record checkpoints at the configured cadence.
pub fn record_trajectory(
    model: &TrainableModel,
    data: &[Sample],
    config: &TrainingRunConfig,
) -> Result<TrainingOutcome> {
    if data.is_empty() {
        return Err(Error::config("empty training set"));
    }
    match config.cadence {
        Cadence::EverySteps(0) => return Err(Error::config("checkpoint cadence must be >= 1")),
        Cadence::Rounds(_) => {
            return Err(Error::config("round cadence needs a federated run"));
        }
        _ => {}
    }
    let mut trainer = LocalTrainer::new(
        model.clone(),
        &config.optimizer,
        OptimState::fresh(model.num_trainable()),
        data,
        config.batch_size,
        config.seed,
    )?;
    let total = trainer.batches_per_epoch() as u64 * config.epochs as u64;
    let mut checkpoints = Vec::new();
    let mut steps = Vec::new();
    for _ in 0..total {
        let t = trainer.state.step + 1;
        if let Cadence::EverySteps(k) = config.cadence {
            if (t - 1) % k == 0 {
                checkpoints.push(trainer.checkpoint());
            }
        }
        let (t, grad, direction, epoch_end) = trainer.step()?;
        if config.log_steps {
            steps.push(StepRecord { t, grad, direction });
        }
        if epoch_end && config.cadence == Cadence::EpochEnd {
            checkpoints.push(trainer.checkpoint());
        }
    }
    Ok(TrainingOutcome {
        trajectory: Trajectory {
            model: model.clone(),
            optimizer: config.optimizer.clone(),
            cadence: config.cadence,
            checkpoints,
        },
        final_params: trainer.params,
        final_state: trainer.state,
        steps,
    })
}
