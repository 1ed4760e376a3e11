//! Synthetic mixed-quality benchmarks.
//!
//! Every client draws inputs `x ~ N(0, I)` and labels them with a teacher
//! network: a shared pretrained base plus a low-rank per-task perturbation.
//! Polluted samples are produced by one of three operators, each standing in
//! for a class of text corruption:
//!
//! * label substitution: the target comes from an unrelated teacher
//!   (a mismatched answer);
//! * truncation: features past a prefix are zeroed (an incomplete answer);
//! * noise injection: heavy Gaussian noise is added to the target.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::model::{forward, Architecture, ModelParams, QualityLabel, Sample, Target};
use crate::selection::{AnchorSet, DEFAULT_ANCHOR_SIZE};

pub use crate::model::PollutionKind;

pub const DEFAULT_VAL_SIZE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Every client samples the same task.
    Iid,
    /// One independent teacher per client.
    DomainHet,
    /// Shared teacher, per-client pollution ratios.
    QualityHet,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Iid => "iid",
            Regime::DomainHet => "domain-het",
            Regime::QualityHet => "quality-het",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Regression,
    /// Argmax of the teacher's noisy logits over `d_out` classes.
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub arch: Architecture,
    /// Clean label noise σ.
    pub noise: f64,
    /// Rank of each teacher's perturbation of the base weights.
    pub teacher_rank: usize,
    /// Magnitude of that perturbation relative to the base weights.
    pub teacher_scale: f64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            kind: TaskKind::Regression,
            arch: Architecture::Mlp {
                d_in: 8,
                hidden: 16,
                d_out: 16,
            },
            noise: 0.1,
            teacher_rank: 2,
            teacher_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PollutionPlan {
    /// One ratio per client, or a single ratio applied to all.
    pub ratios: Vec<f64>,
    /// Kind mix; proportions are normalized.
    pub kinds: Vec<(PollutionKind, f64)>,
    /// Features kept by truncation.
    pub truncation_prefix: usize,
    /// σ of injected noise; must exceed the clean σ.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl PollutionPlan {
    pub fn uniform(ratio: f64, kind: PollutionKind, seed: u64) -> Self {
        PollutionPlan {
            ratios: vec![ratio],
            kinds: vec![(kind, 1.0)],
            truncation_prefix: 2,
            noise_sigma: 2.0,
            seed,
        }
    }

    pub fn ratio_for(&self, client: usize) -> f64 {
        if self.ratios.len() == 1 {
            self.ratios[0]
        } else {
            self.ratios[client]
        }
    }

    fn validate(&self, clients: usize, task: &TaskSpec) -> Result<()> {
        if self.ratios.is_empty() || (self.ratios.len() != 1 && self.ratios.len() != clients) {
            return Err(Error::config(format!(
                "{} pollution ratios for {clients} clients",
                self.ratios.len()
            )));
        }
        if self.ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::config("pollution ratios must lie in [0, 1]"));
        }
        if self.kinds.is_empty() || self.kinds.iter().any(|(_, p)| !(*p >= 0.0 && p.is_finite())) {
            return Err(Error::config("pollution kind mix must be nonempty and nonnegative"));
        }
        if self.kinds.iter().map(|(_, p)| p).sum::<f64>() <= 0.0 {
            return Err(Error::config("pollution kind mix sums to zero"));
        }
        let uses = |k: PollutionKind| self.kinds.iter().any(|(x, p)| *x == k && *p > 0.0);
        if uses(PollutionKind::Truncation) && self.truncation_prefix >= task.arch.input_dim() {
            return Err(Error::config("truncation prefix must be shorter than the input"));
        }
        if uses(PollutionKind::NoiseInjection) && (self.noise_sigma.is_nan() || self.noise_sigma <= task.noise) {
            return Err(Error::config("injected noise must exceed the clean noise"));
        }
        Ok(())
    }

    /// Kind of the i-th polluted sample out of `count`.
    fn kind_at(&self, i: usize, count: usize) -> PollutionKind {
        let total: f64 = self.kinds.iter().map(|(_, p)| p).sum();
        let pos = (i as f64 + 0.5) / count as f64;
        let mut acc = 0.0;
        for (k, p) in &self.kinds {
            acc += p / total;
            if pos < acc {
                return *k;
            }
        }
        self.kinds.last().expect("validated nonempty").0
    }
}

/// Parameters for the pollution operators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PollutionParams {
    pub truncation_prefix: usize,
    pub noise_sigma: f64,
    pub clean_noise: f64,
    pub task: TaskKind,
}

/// Teacher network: the base weights plus a low-rank perturbation.
pub fn make_teacher(base: &ModelParams, rank: usize, scale: f64, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = base
        .segments()
        .iter()
        .map(|(_, w)| {
            let (rows, cols) = w.shape();
            let r = rank.min(rows).min(cols).max(1);
            let u: Vec<f64> = (0..rows * r).map(|_| rng.sample(StandardNormal)).collect();
            let v: Vec<f64> = (0..r * cols).map(|_| rng.sample(StandardNormal)).collect();
            let u = DenseMatrix::from_vec(rows, r, u).expect("shape");
            let v = DenseMatrix::from_vec(r, cols, v).expect("shape");
            // entries of U·V have variance r; normalize like the base init
            let s = scale / libm::sqrt(r as f64 * cols as f64);
            w.add(&u.matmul(&v).expect("shape").scale(s)).expect("shape")
        })
        .collect();
    ModelParams::new(base.architecture(), weights).expect("same architecture")
}

fn label(teacher: &ModelParams, x: &[f64], noise: f64, task: TaskKind, rng: &mut ChaCha8Rng) -> Target {
    let out = forward(teacher, None, &DenseVector(x.to_vec()))
        .expect("teacher matches input")
        .0;
    let noisy: Vec<f64> = out
        .iter()
        .map(|o| o + noise * rng.sample::<f64, _>(StandardNormal))
        .collect();
    match task {
        TaskKind::Regression => Target::Value(noisy),
        TaskKind::Classification => {
            let mut best = 0;
            for (i, v) in noisy.iter().enumerate() {
                if *v > noisy[best] {
                    best = i;
                }
            }
            Target::Class(best)
        }
    }
}

/// Apply one pollution operator to a clean sample.
pub fn pollute(
    sample: Sample,
    kind: PollutionKind,
    aux_teacher: &ModelParams,
    params: &PollutionParams,
    seed: u64,
) -> Result<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = sample;
    match kind {
        PollutionKind::LabelSubstitution => {
            z.target = label(
                aux_teacher,
                z.features.as_slice(),
                params.clean_noise,
                params.task,
                &mut rng,
            );
        }
        PollutionKind::Truncation => {
            if params.truncation_prefix >= z.features.len() {
                return Err(Error::config("truncation prefix must be shorter than the input"));
            }
            for v in z.features.0.iter_mut().skip(params.truncation_prefix) {
                *v = 0.0;
            }
        }
        PollutionKind::NoiseInjection => {
            if params.noise_sigma.is_nan() || params.noise_sigma <= params.clean_noise {
                return Err(Error::config("injected noise must exceed the clean noise"));
            }
            let normal = Normal::new(0.0, params.noise_sigma).map_err(|_| Error::config("noise"))?;
            z.target = match z.target {
                Target::Value(v) => Target::Value(v.iter().map(|t| t + normal.sample(&mut rng)).collect()),
                Target::Class(_) => {
                    let classes = aux_teacher.architecture().output_dim();
                    Target::Class(rng.random_range(0..classes))
                }
            };
        }
    }
    Ok(z.relabel(QualityLabel::Polluted(kind)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BundleSpec {
    pub regime: Regime,
    pub clients: usize,
    pub n_per_client: usize,
    pub task: TaskSpec,
    pub plan: PollutionPlan,
    pub anchor_size: usize,
    pub val_size: usize,
    pub seed: u64,
}

impl Default for PollutionPlan {
    fn default() -> Self {
        PollutionPlan::uniform(0.0, PollutionKind::LabelSubstitution, 0)
    }
}

impl Default for BundleSpec {
    fn default() -> Self {
        BundleSpec::new(
            Regime::Iid,
            4,
            500,
            PollutionPlan::uniform(0.4, PollutionKind::LabelSubstitution, 1),
            0,
        )
    }
}

impl BundleSpec {
    pub fn new(regime: Regime, clients: usize, n_per_client: usize, plan: PollutionPlan, seed: u64) -> Self {
        BundleSpec {
            regime,
            clients,
            n_per_client,
            task: TaskSpec::default(),
            plan,
            anchor_size: DEFAULT_ANCHOR_SIZE,
            val_size: DEFAULT_VAL_SIZE,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientData {
    pub client_id: u32,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub spec: BundleSpec,
    /// Shared pretrained weights every client fine-tunes from.
    pub base: ModelParams,
    /// Clean teachers: one for Iid/QualityHet, one per client for DomainHet.
    pub teachers: Vec<ModelParams>,
    /// Source of substituted labels.
    pub aux_teacher: ModelParams,
    pub clients: Vec<ClientData>,
    pub validation: Vec<Sample>,
    pub anchor: AnchorSet,
}

impl DatasetBundle {
    pub fn teacher_for(&self, client: usize) -> &ModelParams {
        &self.teachers[client % self.teachers.len()]
    }

    /// Every sample id paired with its ground-truth label (evaluation only).
    pub fn labels(&self, client: usize) -> Vec<(u64, bool)> {
        self.clients[client]
            .samples
            .iter()
            .map(|z| (z.id, z.quality_label().is_clean()))
            .collect()
    }
}

/// Draws seeded by `(seed, stream)` so that each part of a bundle has its
/// own independent random stream.
fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn draw_input(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// Split a clean pool into disjoint anchor and validation sets.
pub fn make_splits(
    clean_pool: &[Sample],
    anchor_size: usize,
    val_size: usize,
    seed: u64,
) -> Result<(AnchorSet, Vec<Sample>)> {
    if clean_pool.len() < anchor_size + val_size {
        return Err(Error::config(format!(
            "clean pool of {} cannot supply {anchor_size} anchor + {val_size} validation samples",
            clean_pool.len()
        )));
    }
    let mut order: Vec<usize> = (0..clean_pool.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let anchor = order[..anchor_size].iter().map(|&i| clean_pool[i].clone()).collect();
    let val = order[anchor_size..anchor_size + val_size]
        .iter()
        .map(|&i| clean_pool[i].clone())
        .collect();
    Ok((AnchorSet { samples: anchor }, val))
}

const STREAM_BASE: u64 = 1;
const STREAM_TEACHERS: u64 = 2;
const STREAM_POOL: u64 = 3;
const STREAM_CLIENTS: u64 = 1000;

pub fn gen_bundle(spec: &BundleSpec) -> Result<DatasetBundle> {
    let k = spec.clients;
    if k == 0 || spec.n_per_client == 0 {
        return Err(Error::config("need at least one client and one sample per client"));
    }
    spec.plan.validate(k, &spec.task)?;
    if spec.regime == Regime::Iid && spec.plan.ratios.iter().any(|r| *r != spec.plan.ratios[0]) {
        return Err(Error::config(
            "the iid regime needs one pollution ratio for all clients",
        ));
    }
    if spec.task.kind == TaskKind::Classification && spec.task.arch.output_dim() < 2 {
        return Err(Error::config("classification needs at least two output classes"));
    }
    let task = &spec.task;
    let d = task.arch.input_dim();
    let base = ModelParams::random(task.arch, 1.0, stream_rng(spec.seed, STREAM_BASE).random());
    let mut teacher_rng = stream_rng(spec.seed, STREAM_TEACHERS);
    let n_teachers = if spec.regime == Regime::DomainHet { k } else { 1 };
    let teachers: Vec<ModelParams> = (0..n_teachers)
        .map(|_| make_teacher(&base, task.teacher_rank, task.teacher_scale, teacher_rng.random()))
        .collect();
    let aux_teacher = make_teacher(&base, task.teacher_rank, task.teacher_scale, teacher_rng.random());
    let params = PollutionParams {
        truncation_prefix: spec.plan.truncation_prefix,
        noise_sigma: spec.plan.noise_sigma,
        clean_noise: task.noise,
        task: task.kind,
    };

    let mut next_id = 0u64;
    let mut clients = Vec::with_capacity(k);
    for c in 0..k {
        let mut rng = stream_rng(spec.seed, STREAM_CLIENTS + c as u64);
        let teacher = &teachers[c % teachers.len()];
        let aux = if spec.regime == Regime::DomainHet && k > 1 {
            &teachers[(c + 1) % k]
        } else {
            &aux_teacher
        };
        let mut samples: Vec<Sample> = (0..spec.n_per_client)
            .map(|_| {
                let x = draw_input(d, &mut rng);
                let y = label(teacher, &x, task.noise, task.kind, &mut rng);
                let z = Sample::clean(next_id, x, y);
                next_id += 1;
                z
            })
            .collect();
        let n_bad = libm::floor(spec.plan.ratio_for(c) * spec.n_per_client as f64) as usize;
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut plan_rng = stream_rng(spec.plan.seed, STREAM_CLIENTS + c as u64);
        order.shuffle(&mut plan_rng);
        for (j, &i) in order[..n_bad].iter().enumerate() {
            let kind = spec.plan.kind_at(j, n_bad);
            let z = core::mem::replace(&mut samples[i], Sample::clean(0, vec![], Target::Class(0)));
            samples[i] = pollute(z, kind, aux, &params, plan_rng.random())?;
        }
        clients.push(ClientData {
            client_id: c as u32,
            samples,
        });
    }

    let mut pool_rng = stream_rng(spec.seed, STREAM_POOL);
    let pool: Vec<Sample> = (0..spec.anchor_size + spec.val_size)
        .map(|i| {
            let teacher = &teachers[i % teachers.len()];
            let x = draw_input(d, &mut pool_rng);
            let y = label(teacher, &x, task.noise, task.kind, &mut pool_rng);
            let z = Sample::clean(next_id, x, y);
            next_id += 1;
            z
        })
        .collect();
    let (anchor, validation) = make_splits(&pool, spec.anchor_size, spec.val_size, pool_rng.random())?;

    Ok(DatasetBundle {
        spec: spec.clone(),
        base,
        teachers,
        aux_teacher,
        clients,
        validation,
        anchor,
    })
}
