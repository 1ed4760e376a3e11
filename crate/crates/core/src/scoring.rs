//! Per-sample data-quality scores.
//!
//! The main scorer traces training dynamics: for every saved checkpoint `t`
//! and validation sample `z'` it adds `η_t · ⟨dir(z'), dir(z)⟩`, where `dir`
//! is the layer-restricted loss gradient (SGD form) or the optimizer update
//! direction after one hypothetical moment update (Adam/AdamW form). A
//! positive term means a step on `z` at that checkpoint would have lowered
//! the loss on `z'`, so higher scores mean higher quality.
//!
//! Baselines share the same output shape: negative loss at the final
//! checkpoint, DataInf's closed-form influence, and a seeded random control.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{Executor, Serial};
use crate::linalg::dot;
use crate::model::{Sample, TrainableModel};
use crate::optimizer::{hypothetical_direction_slice, OptimizerKind, OptimizerVariant, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreVariant {
    SgdDot,
    AdamDot,
    #[serde(rename = "adamw_dot")]
    AdamWDot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointFilter {
    #[default]
    All,
    /// Checkpoint indices into the trajectory.
    Subset(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoringConfig {
    pub variant: ScoreVariant,
    /// Adapted layer to restrict directions to; `None` picks the first.
    #[serde(default)]
    pub layer: Option<String>,
    #[serde(default)]
    pub checkpoints: CheckpointFilter,
}

impl ScoringConfig {
    pub fn new(variant: ScoreVariant) -> Self {
        ScoringConfig {
            variant,
            layer: None,
            checkpoints: CheckpointFilter::All,
        }
    }

    pub fn with_layer(mut self, layer: impl Into<String>) -> Self {
        self.layer = Some(layer.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    pub sample_id: u64,
    pub score: f64,
}

/// Validation-side directions for one checkpoint, reused across samples.
struct PreparedCheckpoint {
    index: usize,
    lr: f64,
    model: TrainableModel,
    val_dirs: Vec<Vec<f64>>,
}

/// Everything needed to score samples against one trajectory.
pub struct PreparedScorer<'a> {
    trajectory: &'a Trajectory,
    kind: Option<OptimizerKind>,
    range: Range<usize>,
    checkpoints: Vec<PreparedCheckpoint>,
}

fn direction_kind(variant: ScoreVariant, traj: &OptimizerKind) -> Option<OptimizerKind> {
    let mut kind = traj.clone();
    match variant {
        ScoreVariant::SgdDot => return None,
        ScoreVariant::AdamDot => {
            kind.variant = OptimizerVariant::Adam;
            kind.weight_decay = None;
        }
        ScoreVariant::AdamWDot => {
            kind.variant = OptimizerVariant::AdamW;
            kind.weight_decay = Some(traj.weight_decay.unwrap_or(0.0));
        }
    }
    Some(kind)
}

impl<'a> PreparedScorer<'a> {
    pub fn new(trajectory: &'a Trajectory, val_set: &[Sample], config: &ScoringConfig) -> Result<Self> {
        Self::new_with(&Serial, trajectory, val_set, config)
    }

    pub fn new_with<E: Executor>(
        exec: &E,
        trajectory: &'a Trajectory,
        val_set: &[Sample],
        config: &ScoringConfig,
    ) -> Result<Self> {
        if trajectory.checkpoints.is_empty() {
            return Err(Error::State("scoring needs a nonempty trajectory".into()));
        }
        if val_set.is_empty() {
            return Err(Error::config("scoring needs a nonempty validation set"));
        }
        let layers = trajectory.model.trainable_layers();
        let layer = match &config.layer {
            Some(l) => l.clone(),
            None => layers
                .first()
                .cloned()
                .ok_or_else(|| Error::config("model has no trainable layer"))?,
        };
        let range = trajectory
            .model
            .layer_range(&layer)
            .map_err(|_| Error::config(format!("scoring layer `{layer}` is not trainable")))?;
        let indices: Vec<usize> = match &config.checkpoints {
            CheckpointFilter::All => (0..trajectory.checkpoints.len()).collect(),
            CheckpointFilter::Subset(s) => {
                if s.is_empty() {
                    return Err(Error::config("checkpoint subset is empty"));
                }
                if let Some(bad) = s.iter().find(|&&i| i >= trajectory.checkpoints.len()) {
                    return Err(Error::config(format!("checkpoint index {bad} out of range")));
                }
                let mut s = s.clone();
                s.sort_unstable();
                s.dedup();
                s
            }
        };
        let kind = direction_kind(config.variant, &trajectory.optimizer);
        if kind.is_some() {
            for &i in &indices {
                if trajectory.checkpoints[i].state.is_none() {
                    return Err(Error::State(format!(
                        "checkpoint {i} has no optimizer moments for a moment-based score"
                    )));
                }
            }
        }
        let mut val_sorted: Vec<&Sample> = val_set.iter().collect();
        val_sorted.sort_by_key(|z| z.id);
        let mut prepared = Vec::with_capacity(indices.len());
        let mut scorer = PreparedScorer {
            trajectory,
            kind,
            range,
            checkpoints: Vec::new(),
        };
        for index in indices {
            let model = trajectory.model_at(index)?;
            let dirs: Vec<Result<Vec<f64>>> = exec.map(&val_sorted, |z| scorer.direction_at(index, &model, z));
            let val_dirs = dirs.into_iter().collect::<Result<Vec<_>>>()?;
            prepared.push(PreparedCheckpoint {
                index,
                lr: trajectory.checkpoints[index].lr,
                model,
                val_dirs,
            });
        }
        scorer.checkpoints = prepared;
        Ok(scorer)
    }

    fn direction_at(&self, index: usize, model: &TrainableModel, z: &Sample) -> Result<Vec<f64>> {
        let grad = model.grad(z)?;
        let restricted = &grad[self.range.clone()];
        match &self.kind {
            None => Ok(restricted.to_vec()),
            Some(kind) => hypothetical_direction_slice(
                kind,
                &self.trajectory.checkpoints[index],
                self.range.clone(),
                restricted,
            ),
        }
    }

    /// Score one sample: Σ_t Σ_z' η_t ⟨dir(z'), dir(z)⟩, checkpoint-major,
    /// validation ids ascending.
    pub fn score(&self, z: &Sample) -> Result<QualityScore> {
        let mut total = 0.0;
        for ck in &self.checkpoints {
            let dir = self.direction_at(ck.index, &ck.model, z)?;
            for v in &ck.val_dirs {
                total += ck.lr * dot(v, &dir);
            }
        }
        if !total.is_finite() {
            return Err(Error::Numeric("quality score"));
        }
        Ok(QualityScore {
            sample_id: z.id,
            score: total,
        })
    }

    pub fn layer_range(&self) -> Range<usize> {
        self.range.clone()
    }
}

pub fn clues_score(
    z: &Sample,
    val_set: &[Sample],
    trajectory: &Trajectory,
    config: &ScoringConfig,
) -> Result<QualityScore> {
    PreparedScorer::new(trajectory, val_set, config)?.score(z)
}

fn sorted_by_id(mut scores: Vec<QualityScore>) -> Vec<QualityScore> {
    scores.sort_by_key(|s| s.sample_id);
    scores
}

/// One score per training sample, ordered by sample id.
pub fn score_dataset(
    data: &[Sample],
    val_set: &[Sample],
    trajectory: &Trajectory,
    config: &ScoringConfig,
) -> Result<Vec<QualityScore>> {
    score_dataset_with(&Serial, data, val_set, trajectory, config)
}

pub fn score_dataset_with<E: Executor>(
    exec: &E,
    data: &[Sample],
    val_set: &[Sample],
    trajectory: &Trajectory,
    config: &ScoringConfig,
) -> Result<Vec<QualityScore>> {
    let scorer = PreparedScorer::new_with(exec, trajectory, val_set, config)?;
    let scores = exec.map(data, |z| scorer.score(z));
    Ok(sorted_by_id(scores.into_iter().collect::<Result<Vec<_>>>()?))
}

/// Negative loss at the final model: lower loss, higher quality.
pub fn loss_score(z: &Sample, final_model: &TrainableModel) -> Result<QualityScore> {
    Ok(QualityScore {
        sample_id: z.id,
        score: -final_model.loss(z)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Damping {
    /// Explicit λ per trainable layer, in layer order.
    PerLayer(Vec<f64>),
    /// λ_l = c · mean_i ‖g_{l,i}‖² / d_l.
    Relative(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataInfConfig {
    pub damping: Damping,
}

impl Default for DataInfConfig {
    fn default() -> Self {
        DataInfConfig {
            damping: Damping::Relative(0.1),
        }
    }
}

/// Per-layer precomputation for DataInf scoring.
struct DataInfLayer {
    range: Range<usize>,
    lambda: f64,
    /// Summed validation gradient.
    val_grad: Vec<f64>,
    /// (1/n) Σ_i (v·g_i)/(λ + ‖g_i‖²) · g_i
    correction: Vec<f64>,
}

/// Closed-form DataInf influence with the sign flipped so that higher means
/// higher quality:
/// `Σ_l (1/λ_l)(v_l·g_k − (1/n) Σ_i (v_l·g_i)(g_i·g_k)/(λ_l + g_i·g_i))`.
pub struct DataInfScorer {
    model: TrainableModel,
    layers: Vec<DataInfLayer>,
}

impl DataInfScorer {
    /// `population` supplies the n gradients of the Hessian surrogate.
    pub fn new(
        model: &TrainableModel,
        population: &[Sample],
        val_set: &[Sample],
        config: &DataInfConfig,
    ) -> Result<Self> {
        if population.is_empty() {
            return Err(Error::config("DataInf needs at least one training sample"));
        }
        let names = model.trainable_layers();
        if let Damping::PerLayer(l) = &config.damping {
            if l.len() != names.len() {
                return Err(Error::config(format!(
                    "{} damping values for {} layers",
                    l.len(),
                    names.len()
                )));
            }
            if l.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::config("DataInf damping must be positive"));
            }
        }
        if let Damping::Relative(c) = config.damping {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::config("DataInf relative damping must be positive"));
            }
        }
        let pop_grads = population.iter().map(|z| model.grad(z)).collect::<Result<Vec<_>>>()?;
        let mut val_total = vec![0.0; model.num_trainable()];
        let mut sorted: Vec<&Sample> = val_set.iter().collect();
        sorted.sort_by_key(|z| z.id);
        for z in sorted {
            for (a, g) in val_total.iter_mut().zip(model.grad(z)?) {
                *a += g;
            }
        }
        let n = population.len() as f64;
        let mut layers = Vec::with_capacity(names.len());
        for (li, name) in names.iter().enumerate() {
            let range = model.layer_range(name)?;
            let norms: Vec<f64> = pop_grads
                .iter()
                .map(|g| dot(&g[range.clone()], &g[range.clone()]))
                .collect();
            let lambda = match &config.damping {
                Damping::PerLayer(l) => l[li],
                Damping::Relative(c) => {
                    let mean = norms.iter().sum::<f64>() / n / range.len() as f64;
                    // all-zero gradients still need a positive damping
                    (c * mean).max(f64::MIN_POSITIVE)
                }
            };
            let val_grad = val_total[range.clone()].to_vec();
            let mut correction = vec![0.0; range.len()];
            for (g, norm) in pop_grads.iter().zip(&norms) {
                let gl = &g[range.clone()];
                let c = dot(&val_grad, gl) / (lambda + norm) / n;
                for (acc, gi) in correction.iter_mut().zip(gl) {
                    *acc += c * gi;
                }
            }
            layers.push(DataInfLayer {
                range,
                lambda,
                val_grad,
                correction,
            });
        }
        Ok(DataInfScorer {
            model: model.clone(),
            layers,
        })
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.lambda).collect()
    }

    pub fn score(&self, z: &Sample) -> Result<QualityScore> {
        let g = self.model.grad(z)?;
        let mut total = 0.0;
        for l in &self.layers {
            let gk = &g[l.range.clone()];
            total += (dot(&l.val_grad, gk) - dot(&l.correction, gk)) / l.lambda;
        }
        if !total.is_finite() {
            return Err(Error::Numeric("DataInf score"));
        }
        Ok(QualityScore {
            sample_id: z.id,
            score: total,
        })
    }
}

pub fn datainf_score(
    z: &Sample,
    population: &[Sample],
    val_set: &[Sample],
    final_model: &TrainableModel,
    config: &DataInfConfig,
) -> Result<QualityScore> {
    DataInfScorer::new(final_model, population, val_set, config)?.score(z)
}

/// Uniform [0, 1) score keyed by `(seed, sample_id)`.
pub fn random_score(z: &Sample, seed: u64) -> QualityScore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(z.id);
    QualityScore {
        sample_id: z.id,
        score: rng.random::<f64>(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scorer {
    Clues(ScoringConfig),
    Loss,
    DataInf(DataInfConfig),
    Random { seed: u64 },
}

impl Scorer {
    pub fn name(&self) -> &'static str {
        match self {
            Scorer::Clues(_) => "clues",
            Scorer::Loss => "loss",
            Scorer::DataInf(_) => "datainf",
            Scorer::Random { .. } => "random",
        }
    }
}

/// Score `samples` with any scorer. `population` is the scoring client's own
/// training set (used by DataInf only).
pub fn score_samples<E: Executor>(
    exec: &E,
    scorer: &Scorer,
    samples: &[Sample],
    population: &[Sample],
    val_set: &[Sample],
    trajectory: &Trajectory,
) -> Result<Vec<QualityScore>> {
    let scores = match scorer {
        Scorer::Clues(cfg) => return score_dataset_with(exec, samples, val_set, trajectory, cfg),
        Scorer::Loss => {
            let model = trajectory.final_model()?;
            exec.map(samples, |z| loss_score(z, &model))
        }
        Scorer::DataInf(cfg) => {
            let model = trajectory.final_model()?;
            let s = DataInfScorer::new(&model, population, val_set, cfg)?;
            exec.map(samples, |z| s.score(z))
        }
        Scorer::Random { seed } => exec.map(samples, |z| Ok(random_score(z, *seed))),
    };
    Ok(sorted_by_id(scores.into_iter().collect::<Result<Vec<_>>>()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;
    use crate::model::{Architecture, LoraAdapter, LoraLayer, ModelParams, Target};
    use crate::optimizer::{Cadence, Checkpoint, OptimState};

    /// Linear 2→1 model trained directly (no adapter); gradient of
    /// ½(w·x − y)² is (w·x − y)·x.
    fn plain_traj(points: &[(Vec<f64>, f64)]) -> Trajectory {
        let arch = Architecture::Linear { d_in: 2, d_out: 1 };
        let base = ModelParams::new(arch, vec![DenseMatrix::zeros(1, 2)]).unwrap();
        Trajectory {
            model: TrainableModel::new(base, None).unwrap(),
            optimizer: OptimizerKind::sgd(0.1),
            cadence: Cadence::EpochEnd,
            checkpoints: points
                .iter()
                .enumerate()
                .map(|(i, (w, lr))| Checkpoint {
                    step: i as u64 + 1,
                    params: w.clone(),
                    lr: *lr,
                    state: None,
                })
                .collect(),
        }
    }

    fn s(id: u64, x: [f64; 2], y: f64) -> Sample {
        Sample::clean(id, x.to_vec(), Target::Value(vec![y]))
    }

    #[test]
    fn unit_direction_hand_value() {
        // w = 0, x = e1, y = -1  =>  gradient (1, 0)
        let traj = plain_traj(&[(vec![0.0, 0.0], 0.1)]);
        let z = s(1, [1.0, 0.0], -1.0);
        let val = vec![s(2, [1.0, 0.0], -1.0)];
        let cfg = ScoringConfig::new(ScoreVariant::SgdDot);
        let score = clues_score(&z, &val, &traj, &cfg).unwrap();
        assert!((score.score - 0.1).abs() < 1e-15);
    }

    #[test]
    fn two_checkpoint_sum() {
        // val x = e1, y' = −1 → grad (w1 + 1)·e1
        // z   x = 2e1, y = −0.5 → grad 2(2w1 + 0.5)·e1
        // ck1 w1 = 0,     η = 0.1:  1 · 1 · 0.1 = 0.1
        // ck2 w1 = −0.75, η = 0.08: 0.25 · (−2) · 0.08 = −0.04
        let traj = plain_traj(&[(vec![0.0, 0.0], 0.1), (vec![-0.75, 0.0], 0.08)]);
        let z = s(1, [2.0, 0.0], -0.5);
        let val = vec![s(2, [1.0, 0.0], -1.0)];
        let cfg = ScoringConfig::new(ScoreVariant::SgdDot);
        let score = clues_score(&z, &val, &traj, &cfg).unwrap();
        assert!((score.score - 0.06).abs() < 1e-15);
    }

    #[test]
    fn zero_validation_gradient_gives_zero_score() {
        let traj = plain_traj(&[(vec![1.0, 1.0], 0.1), (vec![1.0, 1.0], 0.2)]);
        let val = vec![s(5, [1.0, 2.0], 3.0)]; // residual 0 at w=(1,1)
        let z = s(1, [0.3, -0.7], 9.0);
        let cfg = ScoringConfig::new(ScoreVariant::SgdDot);
        assert_eq!(clues_score(&z, &val, &traj, &cfg).unwrap().score, 0.0);
    }

    #[test]
    fn dataset_scores_are_sorted_and_match_single() {
        let traj = plain_traj(&[(vec![0.5, -0.5], 0.1)]);
        let val = vec![s(10, [1.0, 0.0], 1.0), s(11, [0.0, 1.0], -1.0)];
        let data = vec![s(3, [1.0, 1.0], 0.0), s(1, [2.0, 0.0], 1.0), s(2, [0.0, 1.0], 2.0)];
        let cfg = ScoringConfig::new(ScoreVariant::SgdDot);
        let out = score_dataset(&data, &val, &traj, &cfg).unwrap();
        assert_eq!(out.iter().map(|q| q.sample_id).collect::<Vec<_>>(), vec![1, 2, 3]);
        let mut rev = data.clone();
        rev.reverse();
        assert_eq!(score_dataset(&rev, &val, &traj, &cfg).unwrap(), out);
        let single = clues_score(&data[1], &val, &traj, &cfg).unwrap();
        assert_eq!(out[0], single);
    }

    #[test]
    fn config_errors() {
        let traj = plain_traj(&[(vec![0.0, 0.0], 0.1)]);
        let val = vec![s(2, [1.0, 0.0], 1.0)];
        let z = s(1, [1.0, 0.0], 1.0);
        let bad_layer = ScoringConfig::new(ScoreVariant::SgdDot).with_layer("fc7");
        assert!(matches!(
            clues_score(&z, &val, &traj, &bad_layer),
            Err(Error::Config(_))
        ));
        let adam = ScoringConfig::new(ScoreVariant::AdamDot);
        assert!(matches!(clues_score(&z, &val, &traj, &adam), Err(Error::State(_))));
        let mut empty = ScoringConfig::new(ScoreVariant::SgdDot);
        empty.checkpoints = CheckpointFilter::Subset(vec![]);
        assert!(clues_score(&z, &val, &traj, &empty).is_err());
        assert!(clues_score(&z, &[], &traj, &ScoringConfig::new(ScoreVariant::SgdDot)).is_err());
    }

    #[test]
    fn loss_scores_preserve_ordering() {
        let traj = plain_traj(&[(vec![0.0, 0.0], 0.1)]);
        let m = traj.final_model().unwrap();
        let a = loss_score(&s(1, [0.0, 0.0], 0.1f64.sqrt() * 2f64.sqrt()), &m).unwrap();
        let b = loss_score(&s(2, [0.0, 0.0], 0.9f64.sqrt() * 2f64.sqrt()), &m).unwrap();
        assert!((a.score + 0.1).abs() < 1e-12 && (b.score + 0.9).abs() < 1e-12);
        assert!(a.score > b.score);
        assert_eq!(loss_score(&s(3, [0.0, 0.0], 0.0), &m).unwrap().score, 0.0);
    }

    #[test]
    fn datainf_hand_value_single_sample() {
        // one layer, n = 1: g_1 = (1, 0), g_k = (1, 1), v = (2, 0), λ = 1
        // (1/λ)(v·g_k − (v·g_1)(g_1·g_k)/(λ + g_1·g_1)) = 2 − 2·1/2 = 1
        let traj = plain_traj(&[(vec![0.0, 0.0], 0.1)]);
        let m = traj.final_model().unwrap();
        let pop = vec![s(1, [1.0, 0.0], -1.0)];
        let val = vec![s(9, [1.0, 0.0], -2.0)];
        let zk = s(2, [1.0, 1.0], -1.0);
        let cfg = DataInfConfig {
            damping: Damping::PerLayer(vec![1.0]),
        };
        let score = datainf_score(&zk, &pop, &val, &m, &cfg).unwrap();
        assert!((score.score - 1.0).abs() < 1e-15);
        let zero_val = vec![s(9, [1.0, 0.0], 0.0)];
        assert_eq!(datainf_score(&zk, &pop, &zero_val, &m, &cfg).unwrap().score, 0.0);
        let bad = DataInfConfig {
            damping: Damping::PerLayer(vec![0.0]),
        };
        assert!(matches!(
            datainf_score(&zk, &pop, &val, &m, &bad),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn random_scores_are_keyed_and_in_range() {
        let a = random_score(&s(4, [0.0, 0.0], 0.0), 17);
        let b = random_score(&s(4, [1.0, 0.0], 3.0), 17);
        let c = random_score(&s(5, [0.0, 0.0], 0.0), 17);
        assert_eq!(a, b);
        assert_ne!(a.score, c.score);
        assert!((0.0..1.0).contains(&a.score));
    }

    #[test]
    fn adapter_scores_use_first_layer_by_default() {
        let arch = Architecture::Mlp {
            d_in: 2,
            hidden: 3,
            d_out: 1,
        };
        let base = ModelParams::random(arch, 1.0, 1);
        let ad = LoraAdapter::new(
            1,
            1.0,
            vec![
                LoraLayer {
                    name: "fc1".into(),
                    a: DenseMatrix::from_vec(1, 2, vec![0.3, -0.2]).unwrap(),
                    b: DenseMatrix::from_vec(3, 1, vec![0.1, 0.2, -0.1]).unwrap(),
                },
                LoraLayer {
                    name: "fc2".into(),
                    a: DenseMatrix::from_vec(1, 3, vec![0.5, 0.1, 0.2]).unwrap(),
                    b: DenseMatrix::from_vec(1, 1, vec![0.4]).unwrap(),
                },
            ],
        )
        .unwrap();
        let model = TrainableModel::new(base, Some(ad)).unwrap();
        let traj = Trajectory {
            optimizer: OptimizerKind::adam(0.1),
            cadence: Cadence::EpochEnd,
            checkpoints: vec![Checkpoint {
                step: 1,
                params: model.flat_params(),
                lr: 0.1,
                state: Some(OptimState::fresh(model.num_trainable())),
            }],
            model,
        };
        let val = vec![s(7, [0.2, 0.9], 1.0)];
        let z = s(1, [-0.5, 0.4], 0.3);
        let default = clues_score(&z, &val, &traj, &ScoringConfig::new(ScoreVariant::SgdDot));
        let first = clues_score(
            &z,
            &val,
            &traj,
            &ScoringConfig::new(ScoreVariant::SgdDot).with_layer("fc1"),
        );
        assert_eq!(default.unwrap(), first.unwrap());
        let range = traj.model.layer_range("fc1").unwrap();
        let gz = traj.model.grad(&z).unwrap();
        let gv = traj.model.grad(&val[0]).unwrap();
        let expect = 0.1 * dot(&gv[range.clone()], &gz[range]);
        let got = clues_score(&z, &val, &traj, &ScoringConfig::new(ScoreVariant::SgdDot))
            .unwrap()
            .score;
        assert!((got - expect).abs() <= 1e-15 * expect.abs().max(1.0));
        assert!(clues_score(&z, &val, &traj, &ScoringConfig::new(ScoreVariant::AdamDot)).is_ok());
    }
}
