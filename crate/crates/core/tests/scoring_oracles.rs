mod common;

use clues_core::model::{per_sample_grad_layer, per_sample_loss, Architecture, ModelParams, Sample, TrainableModel};
use clues_core::optimizer::{Cadence, Checkpoint, OptimState, OptimizerKind, Trajectory};
use clues_core::scoring::{
    clues_score, datainf_score, score_dataset, Damping, DataInfConfig, DataInfScorer, ScoreVariant, ScoringConfig,
};
use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn val_loss(base: &ModelParams, val: &[Sample]) -> f64 {
    val.iter().map(|z| per_sample_loss(base, None, z).unwrap()).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// One SGD step on z changes the total validation loss by −S(z) to
    /// first order (quadratic model, so the remainder is O(η²)).
    #[test]
    fn score_is_first_order_loss_reduction(seed in 0u64..100_000) {
        let arch = Architecture::Linear { d_in: 4, d_out: 3 };
        let base = ModelParams::random(arch, 1.0, seed);
        let mut r = rng(seed);
        let val: Vec<Sample> = (0..5).map(|i| regression_sample(&mut r, 100 + i, 4, 3)).collect();
        let z = regression_sample(&mut r, 0, 4, 3);
        let eta = 1e-4;
        let model = TrainableModel::new(base.clone(), None).unwrap();
        let traj = Trajectory {
            model: model.clone(),
            optimizer: OptimizerKind::sgd(eta),
            cadence: Cadence::EverySteps(1),
            checkpoints: vec![Checkpoint { step: 1, params: base.flat(), lr: eta, state: None }],
        };
        let s = clues_score(&z, &val, &traj, &ScoringConfig::new(ScoreVariant::SgdDot)).unwrap().score;
        let g = model.grad(&z).unwrap();
        let stepped: Vec<f64> = base.flat().iter().zip(&g).map(|(p, gi)| p - eta * gi).collect();
        let delta = val_loss(&base.with_flat(&stepped).unwrap(), &val) - val_loss(&base, &val);
        prop_assert!((delta + s).abs() <= 1e-6, "Δℓ = {delta}, S = {s}");
    }
}

fn two_checkpoint_trajectory(kind: OptimizerKind, seed: u64) -> (Trajectory, Vec<Sample>, Vec<Sample>) {
    let arch = Architecture::Mlp {
        d_in: 4,
        hidden: 5,
        d_out: 3,
    };
    let (base, ad) = adapted(arch, 2, seed);
    let model = TrainableModel::new(base, Some(ad)).unwrap();
    let n = model.num_trainable();
    let mut r = rng(seed);
    let mut ck = |step: u64, lr: f64| Checkpoint {
        step,
        params: model.flat_params().iter().map(|p| p + 0.1 * r_val(&mut r)).collect(),
        lr,
        state: kind.uses_moments().then(|| OptimState {
            m: gauss_vec(&mut r, n).iter().map(|v| 0.1 * v).collect(),
            v: gauss_vec(&mut r, n).iter().map(|v| 0.01 * v * v).collect(),
            step: step - 1,
        }),
    };
    let checkpoints = vec![ck(4, 0.05), ck(9, 0.02)];
    let traj = Trajectory {
        model,
        optimizer: kind,
        cadence: Cadence::EverySteps(5),
        checkpoints,
    };
    let val = (0..4).map(|i| regression_sample(&mut r, 50 + i, 4, 3)).collect();
    let train = (0..6).map(|i| regression_sample(&mut r, i, 4, 3)).collect();
    (traj, val, train)
}

fn r_val(r: &mut rand_chacha::ChaCha8Rng) -> f64 {
    gauss_vec(r, 1)[0]
}

/// Hand-written Adam direction from stored raw moments.
fn adam_dir(kind: &OptimizerKind, ck: &Checkpoint, range: std::ops::Range<usize>, g: &[f64]) -> Vec<f64> {
    let st = ck.state.as_ref().unwrap();
    let t = ck.step as i32;
    range
        .enumerate()
        .map(|(j, i)| {
            let m = kind.beta1 * st.m[i] + (1.0 - kind.beta1) * g[j];
            let v = kind.beta2 * st.v[i] + (1.0 - kind.beta2) * g[j] * g[j];
            let m_hat = m / (1.0 - kind.beta1.powi(t));
            let v_hat = v / (1.0 - kind.beta2.powi(t));
            let mut d = m_hat / (v_hat.sqrt() + kind.eps);
            if let Some(wd) = kind
                .weight_decay
                .filter(|_| kind.variant == clues_core::optimizer::OptimizerVariant::AdamW)
            {
                d += wd * ck.params[i];
            }
            d
        })
        .collect()
}

fn hand_score(traj: &Trajectory, val: &[Sample], z: &Sample, variant: ScoreVariant) -> f64 {
    let range = traj.model.layer_range("fc1").unwrap();
    let mut total = 0.0;
    for (i, ck) in traj.checkpoints.iter().enumerate() {
        let m = traj.model_at(i).unwrap();
        let ad = m.adapter.as_ref().unwrap();
        let dir = |s: &Sample| {
            let g = per_sample_grad_layer(&m.base, ad, s, "fc1").unwrap();
            match variant {
                ScoreVariant::SgdDot => g,
                _ => adam_dir(&traj.optimizer, ck, range.clone(), &g),
            }
        };
        let dz = dir(z);
        for v in val {
            let dv = dir(v);
            total += ck.lr * dv.iter().zip(&dz).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    total
}

#[test]
fn clues_scores_match_hand_sums_for_every_variant() {
    let cases = [
        (OptimizerKind::sgd(0.05), ScoreVariant::SgdDot),
        (OptimizerKind::adam(0.01), ScoreVariant::AdamDot),
        (OptimizerKind::adamw(0.01, 0.05), ScoreVariant::AdamWDot),
    ];
    for (seed, (kind, variant)) in cases.into_iter().enumerate() {
        let (traj, val, train) = two_checkpoint_trajectory(kind, seed as u64 + 7);
        let scores = score_dataset(&train, &val, &traj, &ScoringConfig::new(variant)).unwrap();
        for (s, z) in scores.iter().zip(&train) {
            let want = hand_score(&traj, &val, z, variant);
            assert!(
                (s.score - want).abs() <= 1e-12 * want.abs().max(1.0),
                "{variant:?}: {} vs {want}",
                s.score
            );
        }
    }
}

/// Dense reference: per layer, average the damped inverses
/// `(λI + g_i g_iᵀ)⁻¹` and contract with the summed validation gradient.
fn dense_datainf(model: &TrainableModel, pop: &[Sample], val: &[Sample], z: &Sample, lambdas: &[f64]) -> f64 {
    let mut total = 0.0;
    for (name, lambda) in model.trainable_layers().iter().zip(lambdas) {
        let range = model.layer_range(name).unwrap();
        let d = range.len();
        let grad = |s: &Sample| DVector::from_vec(model.grad(s).unwrap()[range.clone()].to_vec());
        let mut avg = DMatrix::<f64>::zeros(d, d);
        for s in pop {
            let g = grad(s);
            let h = DMatrix::<f64>::identity(d, d) * *lambda + &g * g.transpose();
            avg += h.try_inverse().unwrap();
        }
        avg /= pop.len() as f64;
        let v = val.iter().map(grad).fold(DVector::zeros(d), |acc, g| acc + g);
        total += (v.transpose() * avg * grad(z))[(0, 0)];
    }
    total
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn datainf_closed_form_matches_dense_solve(seed in 0u64..100_000, lam in 1e-3f64..1.0) {
        let arch = Architecture::Mlp { d_in: 3, hidden: 4, d_out: 2 };
        let (base, ad) = adapted(arch, 2, seed);
        let model = TrainableModel::new(base, Some(ad)).unwrap();
        let mut r = rng(seed);
        let pop: Vec<Sample> = (0..7).map(|i| regression_sample(&mut r, i, 3, 2)).collect();
        let val: Vec<Sample> = (0..3).map(|i| regression_sample(&mut r, 100 + i, 3, 2)).collect();
        let cfg = DataInfConfig { damping: Damping::PerLayer(vec![lam, 2.0 * lam]) };
        for z in &pop {
            let got = datainf_score(z, &pop, &val, &model, &cfg).unwrap().score;
            let want = dense_datainf(&model, &pop, &val, z, &[lam, 2.0 * lam]);
            prop_assert!((got - want).abs() <= 1e-8 * want.abs().max(1e-12), "{got} vs {want}");
        }
    }
}

#[test]
fn relative_damping_is_scaled_mean_squared_gradient() {
    let arch = Architecture::Linear { d_in: 3, d_out: 4 };
    let (base, ad) = adapted(arch, 1, 3);
    let model = TrainableModel::new(base, Some(ad)).unwrap();
    let mut r = rng(1);
    let pop: Vec<Sample> = (0..5).map(|i| regression_sample(&mut r, i, 3, 4)).collect();
    let s = DataInfScorer::new(&model, &pop, &pop, &DataInfConfig::default()).unwrap();
    let d = model.num_trainable() as f64;
    let mean: f64 = pop
        .iter()
        .map(|z| model.grad(z).unwrap().iter().map(|g| g * g).sum::<f64>())
        .sum::<f64>()
        / 5.0;
    assert!((s.lambdas()[0] - 0.1 * mean / d).abs() < 1e-15);
}
