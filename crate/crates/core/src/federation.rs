//! The two-step collaborative workflow.
//!
//! Step one: clients fine-tune on their mixed-quality data (stage 1), score
//! every private sample (stage 2), the server scores the public anchor set
//! and averages those scores into one global threshold (stage 3), and every
//! client keeps the samples scoring at or above it (stage 4). Step two:
//! clients retrain from the shared initial adapter on what they kept
//! (stage 5) and the server merges the adapters (stage 6).
//!
//! `MergeOnce` runs local training to completion and merges once;
//! `Federated` repeats sample-train-merge for a number of rounds, and its
//! stage-1 checkpoints are the aggregated global models.
//!
//! Every value that crosses the client/server boundary is recorded as a
//! [`Message`]; [`audit_messages`] checks the log for private payloads.
//! Nothing in this module reads ground-truth quality labels.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::merging::{merge, MergeMethod, MergeWeights};
use crate::model::{init_adapter, LoraAdapter, ModelParams, Sample, Target, TrainableModel};
use crate::optimizer::{
    record_trajectory, Cadence, Checkpoint, LocalTrainer, OptimState, OptimizerKind, TrainingRunConfig, Trajectory,
    DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS,
};
use crate::scoring::{score_samples, QualityScore, ScoreVariant, Scorer, ScoringConfig};
use crate::selection::{
    anchor_scores, global_threshold, select_by_fixed_score, select_by_ratio, select_with_fallback, AnchorScore,
    AnchorSet, AnchorTrajectories, ClientSelection, GlobalThreshold,
};

pub const DEFAULT_CLIENTS: usize = 20;
pub const DEFAULT_ROUNDS: u32 = 30;
pub const DEFAULT_LOCAL_STEPS: u64 = 10;
pub const DEFAULT_RANK: usize = 8;

/// Local work per client per federated round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LocalBudget {
    Steps(u64),
    Epochs(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Mode {
    MergeOnce,
    Federated {
        rounds: u32,
        /// Clients per round; `None` means every client.
        #[serde(default)]
        client_sample_size: Option<usize>,
        #[serde(default = "default_budget")]
        local: LocalBudget,
        /// Keep a stage-1 checkpoint after every k-th round.
        #[serde(default = "default_every")]
        checkpoint_every: u32,
    },
}

fn default_budget() -> LocalBudget {
    LocalBudget::Steps(DEFAULT_LOCAL_STEPS)
}

fn default_every() -> u32 {
    1
}

impl Mode {
    pub fn federated(rounds: u32) -> Self {
        Mode::Federated {
            rounds,
            client_sample_size: None,
            local: default_budget(),
            checkpoint_every: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum SelectionRule {
    /// Keep `S(z) ≥ τ` with τ from the anchor set.
    GlobalThreshold,
    /// Keep the top fraction of every client.
    Ratio { ratio: f64 },
    /// Keep `S(z) ≥ s₀` for a fixed `s₀`.
    FixedScore { score: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    /// Data sizes for linear merging, uniform otherwise.
    #[default]
    Default,
    DataSize,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkflowConfig {
    pub mode: Mode,
    pub optimizer: OptimizerKind,
    /// Local epochs of stage 1, and of stage 5 in MergeOnce mode.
    pub epochs: u32,
    pub batch_size: usize,
    /// Stage-1 checkpoint cadence in MergeOnce mode.
    pub cadence: Cadence,
    pub lora_rank: usize,
    /// Adapter scale numerator; `None` uses the rank (scale 1).
    pub lora_alpha: Option<f64>,
    /// Layers to adapt; empty adapts every layer.
    pub adapted_layers: Vec<String>,
    pub scorer: Scorer,
    pub selection: SelectionRule,
    pub merge: MergeMethod,
    pub merge_weights: WeightScheme,
    pub seed: u64,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        WorkflowConfig {
            mode: Mode::MergeOnce,
            optimizer: OptimizerKind::sgd(0.05),
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            cadence: Cadence::EpochEnd,
            lora_rank: DEFAULT_RANK,
            lora_alpha: None,
            adapted_layers: Vec::new(),
            scorer: Scorer::Clues(ScoringConfig::new(ScoreVariant::SgdDot)),
            selection: SelectionRule::GlobalThreshold,
            merge: MergeMethod::Linear,
            merge_weights: WeightScheme::Default,
            seed: 0,
        }
    }
}

impl WorkflowConfig {
    pub fn validate(&self, clients: usize) -> Result<()> {
        self.optimizer.validate()?;
        if clients == 0 {
            return Err(Error::config("at least one client is required"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch size must be >= 1"));
        }
        match self.cadence {
            Cadence::EverySteps(0) => return Err(Error::config("checkpoint cadence must be >= 1")),
            Cadence::Rounds(_) => return Err(Error::config("stage-1 cadence cannot be round-based")),
            _ => {}
        }
        if let Mode::Federated {
            rounds,
            client_sample_size,
            local,
            checkpoint_every,
        } = &self.mode
        {
            if *rounds == 0 {
                return Err(Error::config("federated mode needs at least one round"));
            }
            if let Some(m) = client_sample_size {
                if *m == 0 || *m > clients {
                    return Err(Error::config(format!(
                        "client sample size {m} must lie in 1..={clients}"
                    )));
                }
            }
            if matches!(local, LocalBudget::Steps(0) | LocalBudget::Epochs(0)) {
                return Err(Error::config("local budget must be >= 1"));
            }
            if *checkpoint_every == 0 || *checkpoint_every > *rounds {
                return Err(Error::config("checkpoint interval must lie in 1..=rounds"));
            }
        }
        match self.selection {
            SelectionRule::Ratio { ratio } if !(0.0..=1.0).contains(&ratio) => {
                return Err(Error::config("selection ratio must lie in [0, 1]"))
            }
            SelectionRule::FixedScore { score } if !score.is_finite() => {
                return Err(Error::config("fixed selection score must be finite"))
            }
            _ => {}
        }
        if let MergeMethod::Ties { density } = self.merge {
            if !(density > 0.0 && density <= 1.0) {
                return Err(Error::config("TIES density must lie in (0, 1]"));
            }
        }
        Ok(())
    }

    fn alpha(&self) -> f64 {
        self.lora_alpha.unwrap_or(self.lora_rank as f64)
    }
}

// ---------------------------------------------------------------------------
// messages

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Party {
    Server,
    Client(u32),
    /// Broadcast from the server to every client.
    AllClients,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Training,
    Scoring,
    Threshold,
    Selection,
    Retraining,
    Merging,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Training => "stage 1 (mixed-quality training)",
            Stage::Scoring => "stage 2 (client scoring)",
            Stage::Threshold => "stage 3 (global threshold)",
            Stage::Selection => "stage 4 (selection)",
            Stage::Retraining => "stage 5 (retraining)",
            Stage::Merging => "stage 6 (merging)",
        }
    }
}

/// One stage-1 checkpoint as sent to the server: the full adapter
/// parameters plus the optimizer moments of the scoring layer only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSegment {
    pub step: u64,
    pub lr: f64,
    pub params: Vec<f64>,
    pub m: Option<Vec<f64>>,
    pub v: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    /// Locally trained adapter and the number of samples it was trained on.
    Adapter {
        params: Vec<f64>,
        num_samples: usize,
    },
    /// Raw optimizer moments after local training.
    Moments {
        m: Vec<f64>,
        v: Vec<f64>,
        step: u64,
    },
    /// Stage-1 checkpoints restricted to the scoring layer.
    Checkpoints {
        layer: String,
        range_start: usize,
        range_end: usize,
        checkpoints: Vec<CheckpointSegment>,
    },
    /// Anchor scores computed client-side (baseline scorers).
    AnchorScores {
        scorer: String,
        scores: Vec<QualityScore>,
    },
    Threshold {
        tau: f64,
    },
    /// Aggregated global adapter (and moments, for moment optimizers).
    GlobalModel {
        params: Vec<f64>,
        state: Option<OptimState>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub stage: Stage,
    pub round: u32,
    pub from: Party,
    pub to: Party,
    pub payload: Payload,
}

impl Message {
    pub fn is_client_to_server(&self) -> bool {
        matches!(self.from, Party::Client(_)) && self.to == Party::Server
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PrivacyAudit {
    pub messages: usize,
    pub client_to_server: usize,
    pub violations: Vec<String>,
}

impl PrivacyAudit {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

fn payload_vectors(p: &Payload) -> Vec<&[f64]> {
    match p {
        Payload::Adapter { params, .. } => vec![params],
        Payload::Moments { m, v, .. } => vec![m, v],
        Payload::Checkpoints { checkpoints, .. } => {
            let mut out: Vec<&[f64]> = Vec::new();
            for c in checkpoints {
                out.push(&c.params);
                if let Some(m) = &c.m {
                    out.push(m);
                }
                if let Some(v) = &c.v {
                    out.push(v);
                }
            }
            out
        }
        Payload::AnchorScores { .. } | Payload::Threshold { .. } => Vec::new(),
        Payload::GlobalModel { params, state } => {
            let mut out: Vec<&[f64]> = vec![params];
            if let Some(s) = state {
                out.push(&s.m);
                out.push(&s.v);
            }
            out
        }
    }
}

/// Scan every client→server message for a private sample's feature or
/// target vector (bit-exact, contiguous). Anchor scores may only name
/// public anchor ids.
/// Sample id, field name and values of one private vector.
type Needle<'a> = (u64, &'static str, &'a [f64]);

pub fn audit_messages(log: &[Message], private: &[(u32, &[Sample])], public_ids: &BTreeSet<u64>) -> PrivacyAudit {
    let mut needles: BTreeMap<u64, Vec<Needle>> = BTreeMap::new();
    for (_, data) in private {
        for z in *data {
            let mut vecs: Vec<(&'static str, &[f64])> = vec![("features", z.features.as_slice())];
            if let Target::Value(t) = &z.target {
                vecs.push(("target", t));
            }
            for (what, v) in vecs {
                if v.len() >= 2 && v.iter().any(|x| *x != 0.0) {
                    needles.entry(v[0].to_bits()).or_default().push((z.id, what, v));
                }
            }
        }
    }
    let mut audit = PrivacyAudit {
        messages: log.len(),
        ..Default::default()
    };
    for (i, msg) in log.iter().enumerate() {
        if !msg.is_client_to_server() {
            continue;
        }
        audit.client_to_server += 1;
        if let Payload::AnchorScores { scores, .. } = &msg.payload {
            for s in scores {
                if !public_ids.contains(&s.sample_id) {
                    audit
                        .violations
                        .push(format!("message {i}: score for non-public sample {}", s.sample_id));
                }
            }
        }
        for hay in payload_vectors(&msg.payload) {
            for start in 0..hay.len() {
                let Some(cands) = needles.get(&hay[start].to_bits()) else {
                    continue;
                };
                for (id, what, needle) in cands {
                    let end = start + needle.len();
                    if end <= hay.len()
                        && hay[start..end]
                            .iter()
                            .zip(needle.iter())
                            .all(|(a, b)| a.to_bits() == b.to_bits())
                    {
                        audit.violations.push(format!("message {i}: {what} of sample {id}"));
                    }
                }
            }
        }
    }
    audit
}

// ---------------------------------------------------------------------------
// participants

/// One client: private data plus everything it derives from it.
#[derive(Debug, Clone)]
pub struct ClientState<'a> {
    pub client_id: u32,
    data: &'a [Sample],
    pub trajectory: Option<Trajectory>,
    pub scores: Vec<QualityScore>,
    pub selected: Option<Vec<u64>>,
    pub fell_back: bool,
}

impl<'a> ClientState<'a> {
    pub fn new(client_id: u32, data: &'a [Sample]) -> Self {
        ClientState {
            client_id,
            data,
            trajectory: None,
            scores: Vec::new(),
            selected: None,
            fell_back: false,
        }
    }

    pub fn data(&self) -> &'a [Sample] {
        self.data
    }

    /// The kept subset `D'_k`, in data order.
    pub fn selected_data(&self) -> Result<Vec<Sample>> {
        let ids = self
            .selected
            .as_ref()
            .ok_or_else(|| Error::State(format!("client {} has no selection", self.client_id)))?;
        let keep: BTreeSet<u64> = ids.iter().copied().collect();
        Ok(self.data.iter().filter(|z| keep.contains(&z.id)).cloned().collect())
    }
}

/// The server's view: public weights, public data and aggregated state.
#[derive(Debug, Clone)]
pub struct ServerState {
    /// Frozen pretrained weights shared by every participant.
    pub base: ModelParams,
    /// θ⁰, the adapter every client starts from.
    pub initial: LoraAdapter,
    pub anchor: AnchorSet,
    pub val_set: Vec<Sample>,
    pub threshold: Option<GlobalThreshold>,
    pub anchor_table: Vec<AnchorScore>,
    pub global: Option<LoraAdapter>,
    pub global_trajectory: Option<Trajectory>,
    pub round: u32,
    pub log: Vec<Message>,
}

impl ServerState {
    pub fn new(base: ModelParams, anchor: AnchorSet, val_set: Vec<Sample>, cfg: &WorkflowConfig) -> Result<Self> {
        let initial = initial_adapter(&base, cfg)?;
        Ok(ServerState {
            base,
            initial,
            anchor,
            val_set,
            threshold: None,
            anchor_table: Vec::new(),
            global: None,
            global_trajectory: None,
            round: 0,
            log: Vec::new(),
        })
    }

    pub fn initial_model(&self) -> Result<TrainableModel> {
        TrainableModel::new(self.base.clone(), Some(self.initial.clone()))
    }

    pub fn val_loss(&self, adapter: &LoraAdapter) -> Result<f64> {
        TrainableModel::new(self.base.clone(), Some(adapter.clone()))?.mean_loss(&self.val_set)
    }

    fn send(&mut self, stage: Stage, from: Party, to: Party, payload: Payload) {
        self.log.push(Message {
            stage,
            round: self.round,
            from,
            to,
            payload,
        });
    }
}

pub fn initial_adapter(base: &ModelParams, cfg: &WorkflowConfig) -> Result<LoraAdapter> {
    let arch = base.architecture();
    let layers: Vec<&str> = if cfg.adapted_layers.is_empty() {
        arch.layer_names().to_vec()
    } else {
        cfg.adapted_layers.iter().map(|s| s.as_str()).collect()
    };
    init_adapter(
        arch,
        &layers,
        cfg.lora_rank,
        cfg.alpha(),
        derive_seed(cfg.seed, TAG_ADAPTER, 0, 0),
    )
}

// ---------------------------------------------------------------------------
// seeds

const TAG_ADAPTER: u64 = 1;
const TAG_TRAIN: u64 = 2;
const TAG_RETRAIN: u64 = 3;
const TAG_SAMPLING: u64 = 4;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn derive_seed(seed: u64, tag: u64, a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(splitmix64(seed) ^ tag) ^ a) ^ b)
}

/// Participants of one round: `m` of `k` clients, uniformly without
/// replacement, ascending.
pub fn sample_clients(k: usize, m: usize, seed: u64, tag: u64, round: u32) -> Vec<usize> {
    if m >= k {
        return (0..k).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, TAG_SAMPLING, tag, round as u64));
    let mut picked = rand::seq::index::sample(&mut rng, k, m).into_vec();
    picked.sort_unstable();
    picked
}

// ---------------------------------------------------------------------------
// local training and aggregation

fn local_train(
    model: &TrainableModel,
    optimizer: &OptimizerKind,
    state: OptimState,
    data: &[Sample],
    budget: LocalBudget,
    batch_size: usize,
    seed: u64,
) -> Result<(Vec<f64>, OptimState)> {
    let mut trainer = LocalTrainer::new(model.clone(), optimizer, state, data, batch_size, seed)?;
    let steps = match budget {
        LocalBudget::Steps(n) => n,
        LocalBudget::Epochs(e) => e as u64 * trainer.batches_per_epoch() as u64,
    };
    for _ in 0..steps {
        trainer.step()?;
    }
    Ok((trainer.params, trainer.state))
}

/// Normalized merge weights for the given per-client data sizes.
pub fn merge_weights(cfg: &WorkflowConfig, sizes: &[usize]) -> Result<Vec<f64>> {
    let by_size = match cfg.merge_weights {
        WeightScheme::DataSize => true,
        WeightScheme::Uniform => false,
        WeightScheme::Default => cfg.merge == MergeMethod::Linear,
    };
    if by_size {
        MergeWeights::by_size(sizes).resolved()
    } else {
        MergeWeights::uniform(sizes.len()).resolved()
    }
}

fn average_states(states: &[OptimState], weights: &[f64]) -> OptimState {
    let n = states[0].len();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    for (s, w) in states.iter().zip(weights) {
        for i in 0..n {
            m[i] += w * s.m[i];
            v[i] += w * s.v[i];
        }
    }
    OptimState {
        m,
        v,
        step: states.iter().map(|s| s.step).max().unwrap_or(0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeProvenance {
    pub method: MergeMethod,
    /// Weights of the last merge, in participant order.
    pub weights: Vec<f64>,
    pub participants: Vec<u32>,
}

struct RoundsOutcome {
    global: LoraAdapter,
    checkpoints: Vec<Checkpoint>,
    val_curve: Vec<f64>,
    provenance: MergeProvenance,
}

/// `rounds` of (sample clients → local training from the global model →
/// merge). Clients start round 0 from θ⁰ and a fresh optimizer state.
#[allow(clippy::too_many_arguments)]
fn federated_rounds<E: Executor>(
    exec: &E,
    server: &mut ServerState,
    datasets: &[(u32, &[Sample])],
    cfg: &WorkflowConfig,
    stage: Stage,
    rounds: u32,
    client_sample_size: Option<usize>,
    local: LocalBudget,
    checkpoint_every: Option<u32>,
) -> Result<RoundsOutcome> {
    let tag = if stage == Stage::Training {
        TAG_TRAIN
    } else {
        TAG_RETRAIN
    };
    let start = server.initial_model()?;
    let mut params = start.flat_params();
    let mut state = OptimState::fresh(params.len());
    let mut checkpoints = Vec::new();
    let mut val_curve = vec![server.val_loss(&server.initial)?];
    let k = datasets.len();
    let mut provenance = MergeProvenance {
        method: cfg.merge.clone(),
        weights: Vec::new(),
        participants: Vec::new(),
    };
    for round in 0..rounds {
        server.round = round;
        let picked = sample_clients(k, client_sample_size.unwrap_or(k), cfg.seed, tag, round);
        let global_model = start.with_flat_params(&params)?;
        let moments = cfg.optimizer.uses_moments().then(|| state.clone());
        server.send(
            stage,
            Party::Server,
            Party::AllClients,
            Payload::GlobalModel {
                params: params.clone(),
                state: moments,
            },
        );
        let jobs: Vec<(u32, &[Sample])> = picked.iter().map(|&i| datasets[i]).collect();
        let results = exec.map(&jobs, |(id, data)| {
            local_train(
                &global_model,
                &cfg.optimizer,
                state.clone(),
                data,
                local,
                cfg.batch_size,
                derive_seed(cfg.seed, tag, *id as u64, round as u64),
            )
        });
        let mut adapters = Vec::with_capacity(jobs.len());
        let mut states = Vec::with_capacity(jobs.len());
        for ((id, data), res) in jobs.iter().zip(results) {
            let (p, s) = res.map_err(|e| e.in_stage(stage.as_str()))?;
            server.send(
                stage,
                Party::Client(*id),
                Party::Server,
                Payload::Adapter {
                    params: p.clone(),
                    num_samples: data.len(),
                },
            );
            if cfg.optimizer.uses_moments() {
                server.send(
                    stage,
                    Party::Client(*id),
                    Party::Server,
                    Payload::Moments {
                        m: s.m.clone(),
                        v: s.v.clone(),
                        step: s.step,
                    },
                );
            }
            adapters.push(server.initial.with_flat(&p)?);
            states.push(s);
        }
        let sizes: Vec<usize> = jobs.iter().map(|(_, d)| d.len()).collect();
        let weights = merge_weights(cfg, &sizes)?;
        let merged = merge(&adapters, &cfg.merge, &weights).map_err(|e| e.in_stage(Stage::Merging.as_str()))?;
        params = merged.flat();
        state = average_states(&states, &weights);
        if let Some(every) = checkpoint_every {
            if (round + 1) % every == 0 {
                let t = state.step + 1;
                checkpoints.push(Checkpoint {
                    step: t,
                    params: params.clone(),
                    lr: cfg.optimizer.lr.at(t),
                    state: cfg.optimizer.uses_moments().then(|| state.clone()),
                });
            }
        }
        val_curve.push(server.val_loss(&merged)?);
        provenance.weights = weights;
        provenance.participants = jobs.iter().map(|(id, _)| *id).collect();
    }
    Ok(RoundsOutcome {
        global: server.initial.with_flat(&params)?,
        checkpoints,
        val_curve,
        provenance,
    })
}

// ---------------------------------------------------------------------------
// stages

/// Stage 1. MergeOnce: every client records its own trajectory from θ⁰.
/// Federated: one global trajectory of post-aggregation checkpoints, shared
/// with every client.
pub fn run_stage1_training<E: Executor>(
    exec: &E,
    clients: &mut [ClientState<'_>],
    server: &mut ServerState,
    cfg: &WorkflowConfig,
) -> Result<()> {
    let stage = Stage::Training;
    let tag = |e: Error| e.in_stage(stage.as_str());
    cfg.validate(clients.len()).map_err(tag)?;
    if let Some(c) = clients.iter().find(|c| c.data.is_empty()) {
        return Err(tag(Error::config(format!("client {} has no data", c.client_id))));
    }
    let model = server.initial_model().map_err(tag)?;
    match &cfg.mode {
        Mode::MergeOnce => {
            let jobs: Vec<(u32, &[Sample])> = clients.iter().map(|c| (c.client_id, c.data)).collect();
            let results = exec.map(&jobs, |(id, data)| {
                let run = TrainingRunConfig {
                    optimizer: cfg.optimizer.clone(),
                    epochs: cfg.epochs,
                    batch_size: cfg.batch_size,
                    cadence: cfg.cadence,
                    seed: derive_seed(cfg.seed, TAG_TRAIN, *id as u64, 0),
                    log_steps: false,
                };
                record_trajectory(&model, data, &run)
            });
            for (client, res) in clients.iter_mut().zip(results) {
                client.trajectory = Some(res.map_err(tag)?.trajectory);
            }
        }
        Mode::Federated {
            rounds,
            client_sample_size,
            local,
            checkpoint_every,
        } => {
            let datasets: Vec<(u32, &[Sample])> = clients.iter().map(|c| (c.client_id, c.data)).collect();
            let out = federated_rounds(
                exec,
                server,
                &datasets,
                cfg,
                stage,
                *rounds,
                *client_sample_size,
                *local,
                Some(*checkpoint_every),
            )
            .map_err(tag)?;
            let traj = Trajectory {
                model,
                optimizer: cfg.optimizer.clone(),
                cadence: Cadence::Rounds(*checkpoint_every),
                checkpoints: out.checkpoints,
            };
            server.round = *rounds;
            server.send(
                stage,
                Party::Server,
                Party::AllClients,
                Payload::GlobalModel {
                    params: out.global.flat(),
                    state: None,
                },
            );
            for client in clients.iter_mut() {
                client.trajectory = Some(traj.clone());
            }
            server.global_trajectory = Some(traj);
        }
    }
    Ok(())
}

fn scoring_layer(model: &TrainableModel, cfg: &ScoringConfig) -> Result<(String, core::ops::Range<usize>)> {
    let layer = match &cfg.layer {
        Some(l) => l.clone(),
        None => model
            .trainable_layers()
            .first()
            .cloned()
            .ok_or_else(|| Error::config("model has no trainable layers"))?,
    };
    let range = model
        .layer_range(&layer)
        .map_err(|_| Error::config(format!("scoring layer `{layer}` is not trainable")))?;
    Ok((layer, range))
}

/// What a client sends so the server can score anchors on its trajectory.
fn checkpoint_message(traj: &Trajectory, layer: String, range: core::ops::Range<usize>) -> Payload {
    Payload::Checkpoints {
        layer,
        range_start: range.start,
        range_end: range.end,
        checkpoints: traj
            .checkpoints
            .iter()
            .map(|c| CheckpointSegment {
                step: c.step,
                lr: c.lr,
                params: c.params.clone(),
                m: c.state.as_ref().map(|s| s.m[range.clone()].to_vec()),
                v: c.state.as_ref().map(|s| s.v[range.clone()].to_vec()),
            })
            .collect(),
    }
}

/// Server-side reconstruction of a client trajectory from its checkpoint
/// message. Moments outside the scoring layer are unknown and zero-filled;
/// scoring never reads them.
fn trajectory_from_message(model: &TrainableModel, cfg: &WorkflowConfig, payload: &Payload) -> Result<Trajectory> {
    let Payload::Checkpoints {
        range_start,
        range_end,
        checkpoints,
        ..
    } = payload
    else {
        return Err(Error::State("expected a checkpoint message".into()));
    };
    let n = model.num_trainable();
    let fill = |part: &[f64]| {
        let mut full = vec![0.0; n];
        full[*range_start..*range_end].copy_from_slice(part);
        full
    };
    let checkpoints = checkpoints
        .iter()
        .map(|c| Checkpoint {
            step: c.step,
            params: c.params.clone(),
            lr: c.lr,
            state: match (&c.m, &c.v) {
                (Some(m), Some(v)) => Some(OptimState {
                    m: fill(m),
                    v: fill(v),
                    step: c.step - 1,
                }),
                _ => None,
            },
        })
        .collect();
    Ok(Trajectory {
        model: model.clone(),
        optimizer: cfg.optimizer.clone(),
        cadence: cfg.cadence,
        checkpoints,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub threshold: GlobalThreshold,
    pub anchor_table: Vec<AnchorScore>,
    pub selections: Vec<(u32, ClientSelection)>,
}

/// Stages 2–4: client scoring, the anchor-based global threshold, and
/// client-side selection under `cfg.selection`.
pub fn run_stage2_to_4_selection<E: Executor>(
    exec: &E,
    clients: &mut [ClientState<'_>],
    server: &mut ServerState,
    cfg: &WorkflowConfig,
) -> Result<SelectionOutcome> {
    let score_tag = |e: Error| e.in_stage(Stage::Scoring.as_str());
    let tau_tag = |e: Error| e.in_stage(Stage::Threshold.as_str());
    let scorer = &cfg.scorer;

    for client in clients.iter_mut() {
        let traj = client
            .trajectory
            .as_ref()
            .ok_or_else(|| score_tag(Error::State(format!("client {} has no trajectory", client.client_id))))?;
        client.scores =
            score_samples(exec, scorer, client.data, client.data, &server.val_set, traj).map_err(score_tag)?;
    }

    let model = server.initial_model().map_err(tau_tag)?;
    let table = match (scorer, &cfg.mode) {
        (Scorer::Clues(sc), Mode::MergeOnce) => {
            let (layer, range) = scoring_layer(&model, sc).map_err(score_tag)?;
            let mut trajectories = Vec::with_capacity(clients.len());
            for client in clients.iter() {
                let traj = client.trajectory.as_ref().expect("checked above");
                let payload = checkpoint_message(traj, layer.clone(), range.clone());
                let rebuilt = trajectory_from_message(&model, cfg, &payload).map_err(tau_tag)?;
                server.send(
                    Stage::Threshold,
                    Party::Client(client.client_id),
                    Party::Server,
                    payload,
                );
                trajectories.push((client.client_id, rebuilt));
            }
            anchor_scores(
                exec,
                &server.anchor,
                AnchorTrajectories::PerClient(&trajectories),
                &server.val_set,
                sc,
            )
            .map_err(tau_tag)?
        }
        (Scorer::Clues(sc), Mode::Federated { .. }) => {
            let traj = server
                .global_trajectory
                .as_ref()
                .ok_or_else(|| tau_tag(Error::State("no global trajectory".into())))?;
            anchor_scores(
                exec,
                &server.anchor,
                AnchorTrajectories::Global(traj),
                &server.val_set,
                sc,
            )
            .map_err(tau_tag)?
        }
        _ => {
            let mut table = Vec::new();
            for client in clients.iter() {
                let traj = client.trajectory.as_ref().expect("checked above");
                let scores = score_samples(exec, scorer, &server.anchor.samples, client.data, &server.val_set, traj)
                    .map_err(tau_tag)?;
                server.send(
                    Stage::Threshold,
                    Party::Client(client.client_id),
                    Party::Server,
                    Payload::AnchorScores {
                        scorer: scorer.name().to_string(),
                        scores: scores.clone(),
                    },
                );
                table.extend(scores.into_iter().map(|s| AnchorScore {
                    client_id: Some(client.client_id),
                    sample_id: s.sample_id,
                    score: s.score,
                }));
            }
            table
        }
    };
    let threshold = global_threshold(&table, scorer.name()).map_err(tau_tag)?;
    server.send(
        Stage::Threshold,
        Party::Server,
        Party::AllClients,
        Payload::Threshold { tau: threshold.tau },
    );
    server.threshold = Some(threshold.clone());
    server.anchor_table = table.clone();

    let mut selections = Vec::with_capacity(clients.len());
    for client in clients.iter_mut() {
        let sel = match cfg.selection {
            SelectionRule::GlobalThreshold => select_with_fallback(&client.scores, threshold.tau),
            SelectionRule::Ratio { ratio } => ClientSelection {
                selected: select_by_ratio(&client.scores, ratio).map_err(|e| e.in_stage(Stage::Selection.as_str()))?,
                fell_back: false,
            },
            SelectionRule::FixedScore { score } => ClientSelection {
                selected: select_by_fixed_score(&client.scores, score)
                    .map_err(|e| e.in_stage(Stage::Selection.as_str()))?,
                fell_back: false,
            },
        };
        client.selected = Some(sel.selected.clone());
        client.fell_back = sel.fell_back;
        selections.push((client.client_id, sel));
    }
    Ok(SelectionOutcome {
        threshold,
        anchor_table: table,
        selections,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainOutcome {
    pub global: LoraAdapter,
    /// Validation loss of θ⁰ followed by the global model after each merge.
    pub val_loss_curve: Vec<f64>,
    pub merge: MergeProvenance,
}

/// Stages 5–6: every client retrains from θ⁰ on its kept subset, then the
/// server merges (once, or once per federated round).
pub fn run_stage5_6_retrain_merge<E: Executor>(
    exec: &E,
    clients: &[ClientState<'_>],
    server: &mut ServerState,
    cfg: &WorkflowConfig,
) -> Result<RetrainOutcome> {
    let stage = Stage::Retraining;
    let tag = |e: Error| e.in_stage(stage.as_str());
    cfg.validate(clients.len()).map_err(tag)?;
    let kept: Vec<Vec<Sample>> = clients
        .iter()
        .map(|c| c.selected_data())
        .collect::<Result<_>>()
        .map_err(tag)?;
    for (c, d) in clients.iter().zip(&kept) {
        if d.is_empty() {
            return Err(tag(Error::config(format!("client {} kept no samples", c.client_id))));
        }
    }
    let datasets: Vec<(u32, &[Sample])> = clients
        .iter()
        .zip(&kept)
        .map(|(c, d)| (c.client_id, d.as_slice()))
        .collect();
    let out = match &cfg.mode {
        Mode::MergeOnce => federated_rounds(
            exec,
            server,
            &datasets,
            cfg,
            stage,
            1,
            None,
            LocalBudget::Epochs(cfg.epochs),
            None,
        ),
        Mode::Federated {
            rounds,
            client_sample_size,
            local,
            ..
        } => federated_rounds(
            exec,
            server,
            &datasets,
            cfg,
            stage,
            *rounds,
            *client_sample_size,
            *local,
            None,
        ),
    }
    .map_err(tag)?;
    server.global = Some(out.global.clone());
    Ok(RetrainOutcome {
        global: out.global,
        val_loss_curve: out.val_curve,
        merge: out.provenance,
    })
}

/// Label-free output of one pass through stages 1–6.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkflowOutput {
    pub selection: SelectionOutcome,
    pub scores: Vec<(u32, Vec<QualityScore>)>,
    pub retrain: RetrainOutcome,
    pub log: Vec<Message>,
}

/// Stages 1 through 6 on fresh client and server states.
pub fn run_workflow<E: Executor>(
    exec: &E,
    base: &ModelParams,
    anchor: &AnchorSet,
    val_set: &[Sample],
    client_data: &[(u32, &[Sample])],
    cfg: &WorkflowConfig,
) -> Result<WorkflowOutput> {
    let mut server = ServerState::new(base.clone(), anchor.clone(), val_set.to_vec(), cfg)?;
    let mut clients: Vec<ClientState<'_>> = client_data.iter().map(|(id, d)| ClientState::new(*id, d)).collect();
    run_stage1_training(exec, &mut clients, &mut server, cfg)?;
    let selection = run_stage2_to_4_selection(exec, &mut clients, &mut server, cfg)?;
    let retrain = run_stage5_6_retrain_merge(exec, &clients, &mut server, cfg)?;
    Ok(WorkflowOutput {
        selection,
        scores: clients.iter().map(|c| (c.client_id, c.scores.clone())).collect(),
        retrain,
        log: server.log,
    })
}
