//! Experiment harness: Mixed / Oracle / Selected arms on one bundle, with
//! selection metrics, score separation and validation-loss curves.
//!
//! The harness is the only place that reads ground-truth quality labels
//! (to build the oracle arm and to score selections).

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::{format, vec};

use serde::{Deserialize, Serialize};

use crate::datagen::{gen_bundle, BundleSpec, DatasetBundle};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::federation::{
    audit_messages, run_stage1_training, run_stage2_to_4_selection, run_stage5_6_retrain_merge, ClientState,
    MergeProvenance, PrivacyAudit, SelectionRule, ServerState, WorkflowConfig,
};
use crate::merging::MergeMethod;
use crate::metrics::{score_auc, selection_metrics, SelectionMetrics};
use crate::model::{LoraAdapter, Sample};
use crate::optimizer::Trajectory;
use crate::scoring::{QualityScore, Scorer};
use crate::selection::GlobalThreshold;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arm", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArmSpec {
    /// Retrain on everything.
    Mixed,
    /// Retrain on the ground-truth clean samples only.
    Oracle,
    /// The workflow, optionally overriding stages 2–6.
    Selected {
        #[serde(default)]
        name: Option<String>,
        #[serde(default)]
        scorer: Option<Scorer>,
        #[serde(default)]
        selection: Option<SelectionRule>,
        #[serde(default)]
        merge: Option<MergeMethod>,
    },
}

impl ArmSpec {
    pub fn selected() -> Self {
        ArmSpec::Selected {
            name: None,
            scorer: None,
            selection: None,
            merge: None,
        }
    }

    pub fn name(&self, base: &WorkflowConfig) -> String {
        match self {
            ArmSpec::Mixed => "mixed".into(),
            ArmSpec::Oracle => "oracle".into(),
            ArmSpec::Selected { name: Some(n), .. } => n.clone(),
            ArmSpec::Selected { scorer, selection, .. } => {
                let scorer = scorer.as_ref().unwrap_or(&base.scorer).name();
                match selection.as_ref().unwrap_or(&base.selection) {
                    SelectionRule::GlobalThreshold => format!("selected-{scorer}"),
                    SelectionRule::Ratio { ratio } => format!("selected-{scorer}-ratio-{ratio}"),
                    SelectionRule::FixedScore { score } => format!("selected-{scorer}-fixed-{score}"),
                }
            }
        }
    }
}

fn default_arms() -> Vec<ArmSpec> {
    vec![ArmSpec::Mixed, ArmSpec::Oracle, ArmSpec::selected()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub bundle: BundleSpec,
    pub workflow: WorkflowConfig,
    pub arms: Vec<ArmSpec>,
    /// Uniform pollution ratios to sweep; each point reruns every arm.
    pub sweep: Vec<f64>,
    pub output_dir: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            bundle: BundleSpec::default(),
            workflow: WorkflowConfig::default(),
            arms: default_arms(),
            sweep: Vec::new(),
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let b = &self.bundle;
        if b.clients == 0 || b.n_per_client == 0 {
            return Err(Error::config(
                "bundle needs at least one client and one sample per client",
            ));
        }
        if b.anchor_size == 0 || b.val_size == 0 {
            return Err(Error::config("anchor and validation sets must be non-empty"));
        }
        self.workflow.validate(b.clients)?;
        if self.arms.is_empty() {
            return Err(Error::config("no comparison arms configured"));
        }
        let mut names = BTreeSet::new();
        for arm in &self.arms {
            if !names.insert(arm.name(&self.workflow)) {
                return Err(Error::config(format!("duplicate arm `{}`", arm.name(&self.workflow))));
            }
            if let ArmSpec::Selected { .. } = arm {
                self.arm_workflow(arm).validate(b.clients)?;
            }
        }
        if let Some(r) = self.sweep.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::config(format!("sweep ratio {r} outside [0, 1]")));
        }
        Ok(())
    }

    fn arm_workflow(&self, arm: &ArmSpec) -> WorkflowConfig {
        let mut wf = self.workflow.clone();
        if let ArmSpec::Selected {
            scorer,
            selection,
            merge,
            ..
        } = arm
        {
            if let Some(s) = scorer {
                wf.scorer = s.clone();
            }
            if let Some(s) = selection {
                wf.selection = *s;
            }
            if let Some(m) = merge {
                wf.merge = m.clone();
            }
        }
        wf
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientReport {
    pub client_id: u32,
    pub n: usize,
    pub kept: usize,
    pub keep_fraction: f64,
    pub fell_back: bool,
    pub metrics: SelectionMetrics,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ArmReport {
    pub name: String,
    pub error: Option<String>,
    pub scorer: Option<String>,
    pub selection: Option<SelectionRule>,
    pub threshold: Option<GlobalThreshold>,
    pub clients: Vec<ClientReport>,
    pub pooled: Option<SelectionMetrics>,
    pub auc: Option<f64>,
    pub val_loss_curve: Vec<f64>,
    pub final_val_loss: Option<f64>,
    pub merge: Option<MergeProvenance>,
    pub privacy: Option<PrivacyAudit>,
}

impl ArmReport {
    fn failed(name: String, err: &Error) -> Self {
        ArmReport {
            name,
            error: Some(err.to_string()),
            ..Default::default()
        }
    }
}

/// One arm at one pollution level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub arm: String,
    pub error: Option<String>,
    pub tau: Option<f64>,
    pub keep_fraction: Option<f64>,
    pub pooled: Option<SelectionMetrics>,
    pub auc: Option<f64>,
    pub final_val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub ratio: f64,
    pub arms: Vec<SweepEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub arms: Vec<ArmReport>,
    #[serde(default)]
    pub sweep: Vec<SweepPoint>,
}

impl RunReport {
    pub fn arm(&self, name: &str) -> Option<&ArmReport> {
        self.arms.iter().find(|a| a.name == name)
    }
}

/// Per-arm outputs that go to disk next to the report.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmArtifacts {
    pub name: String,
    pub tau: Option<f64>,
    pub scores: Vec<(u32, Vec<QualityScore>)>,
    pub selections: Vec<(u32, Vec<u64>)>,
    pub global: Option<LoraAdapter>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub arm: Option<String>,
    pub stage: String,
    pub seconds: f64,
}

pub struct ComparisonOutput {
    pub report: RunReport,
    pub bundle: DatasetBundle,
    pub artifacts: Vec<ArmArtifacts>,
    /// Stage-1 trajectory of every client (shared in federated mode).
    pub trajectories: Vec<(u32, Trajectory)>,
    /// Wall-clock per stage; kept out of the report so reports stay
    /// byte-identical across runs.
    pub timings: Vec<StageTiming>,
}

/// Seconds since an arbitrary origin.
pub trait Clock {
    fn now(&self) -> f64;
}

/// A clock that always reads zero, for targets without a timer.
pub struct NoClock;

impl Clock for NoClock {
    fn now(&self) -> f64 {
        0.0
    }
}

struct Timer<'c, C: Clock> {
    clock: &'c C,
    out: Vec<StageTiming>,
}

impl<C: Clock> Timer<'_, C> {
    fn time<R>(&mut self, arm: Option<&str>, stage: &str, f: impl FnOnce() -> R) -> R {
        let t0 = self.clock.now();
        let r = f();
        self.out.push(StageTiming {
            arm: arm.map(|s| s.to_string()),
            stage: stage.to_string(),
            seconds: self.clock.now() - t0,
        });
        r
    }
}

fn client_reports(
    bundle: &DatasetBundle,
    selections: &[(u32, Vec<u64>)],
    fell_back: &[bool],
) -> Result<Vec<ClientReport>> {
    selections
        .iter()
        .enumerate()
        .map(|(i, (id, sel))| {
            let n = bundle.clients[i].samples.len();
            Ok(ClientReport {
                client_id: *id,
                n,
                kept: sel.len(),
                keep_fraction: sel.len() as f64 / n as f64,
                fell_back: fell_back.get(i).copied().unwrap_or(false),
                metrics: selection_metrics(sel, &bundle.labels(i))?,
            })
        })
        .collect()
}

fn pooled_auc(bundle: &DatasetBundle, scores: &[(u32, Vec<QualityScore>)]) -> Option<f64> {
    let mut pairs = Vec::new();
    for (i, (_, s)) in scores.iter().enumerate() {
        let labels = bundle.labels(i);
        for (q, (id, clean)) in s.iter().zip(labels.iter()) {
            debug_assert_eq!(q.sample_id, *id);
            pairs.push((q.score, *clean));
        }
    }
    score_auc(&pairs).ok()
}

struct Shared<'b> {
    bundle: &'b DatasetBundle,
    public_ids: BTreeSet<u64>,
}

impl<'b> Shared<'b> {
    fn new(bundle: &'b DatasetBundle) -> Self {
        let public_ids = bundle
            .anchor
            .samples
            .iter()
            .chain(bundle.validation.iter())
            .map(|z| z.id)
            .collect();
        Shared { bundle, public_ids }
    }

    fn private(&self) -> Vec<(u32, &'b [Sample])> {
        self.bundle
            .clients
            .iter()
            .map(|c| (c.client_id, c.samples.as_slice()))
            .collect()
    }

    fn server(&self, wf: &WorkflowConfig) -> Result<ServerState> {
        ServerState::new(
            self.bundle.base.clone(),
            self.bundle.anchor.clone(),
            self.bundle.validation.clone(),
            wf,
        )
    }

    fn clients(&self) -> Vec<ClientState<'b>> {
        self.bundle
            .clients
            .iter()
            .map(|c| ClientState::new(c.client_id, &c.samples))
            .collect()
    }
}

/// Mixed or Oracle: a fixed selection straight into stages 5–6.
fn run_fixed_arm<E: Executor, C: Clock>(
    exec: &E,
    timer: &mut Timer<'_, C>,
    shared: &Shared<'_>,
    wf: &WorkflowConfig,
    name: &str,
    oracle: bool,
) -> Result<(ArmReport, ArmArtifacts)> {
    let b = shared.bundle;
    let mut clients = shared.clients();
    let mut selections = Vec::with_capacity(clients.len());
    for (i, client) in clients.iter_mut().enumerate() {
        let ids: Vec<u64> = if oracle {
            b.labels(i)
                .into_iter()
                .filter(|(_, clean)| *clean)
                .map(|(id, _)| id)
                .collect()
        } else {
            client.data().iter().map(|z| z.id).collect()
        };
        client.selected = Some(ids.clone());
        selections.push((client.client_id, ids));
    }
    let mut server = shared.server(wf)?;
    let out = timer.time(Some(name), "retrain_merge", || {
        run_stage5_6_retrain_merge(exec, &clients, &mut server, wf)
    })?;
    let report = ArmReport {
        name: name.to_string(),
        clients: client_reports(b, &selections, &[])?,
        pooled: None,
        final_val_loss: out.val_loss_curve.last().copied(),
        val_loss_curve: out.val_loss_curve,
        merge: Some(out.merge),
        privacy: Some(audit_messages(&server.log, &shared.private(), &shared.public_ids)),
        ..Default::default()
    };
    Ok((
        with_pooled(report),
        ArmArtifacts {
            name: name.to_string(),
            tau: None,
            scores: Vec::new(),
            selections,
            global: Some(out.global),
        },
    ))
}

fn with_pooled(mut r: ArmReport) -> ArmReport {
    let parts: Vec<SelectionMetrics> = r.clients.iter().map(|c| c.metrics).collect();
    r.pooled = Some(SelectionMetrics::pooled(&parts));
    r
}

fn run_selected_arm<E: Executor, C: Clock>(
    exec: &E,
    timer: &mut Timer<'_, C>,
    shared: &Shared<'_>,
    wf: &WorkflowConfig,
    name: &str,
    stage1: &(Vec<ClientState<'_>>, ServerState),
) -> Result<(ArmReport, ArmArtifacts)> {
    let b = shared.bundle;
    let mut clients = stage1.0.clone();
    let mut server = stage1.1.clone();
    let sel = timer.time(Some(name), "score_select", || {
        run_stage2_to_4_selection(exec, &mut clients, &mut server, wf)
    })?;
    let out = timer.time(Some(name), "retrain_merge", || {
        run_stage5_6_retrain_merge(exec, &clients, &mut server, wf)
    })?;
    let selections: Vec<(u32, Vec<u64>)> = sel.selections.iter().map(|(id, s)| (*id, s.selected.clone())).collect();
    let fell_back: Vec<bool> = sel.selections.iter().map(|(_, s)| s.fell_back).collect();
    let scores: Vec<(u32, Vec<QualityScore>)> = clients.iter().map(|c| (c.client_id, c.scores.clone())).collect();
    let report = ArmReport {
        name: name.to_string(),
        error: None,
        scorer: Some(wf.scorer.name().to_string()),
        selection: Some(wf.selection),
        threshold: Some(sel.threshold.clone()),
        clients: client_reports(b, &selections, &fell_back)?,
        pooled: None,
        auc: pooled_auc(b, &scores),
        final_val_loss: out.val_loss_curve.last().copied(),
        val_loss_curve: out.val_loss_curve,
        merge: Some(out.merge),
        privacy: Some(audit_messages(&server.log, &shared.private(), &shared.public_ids)),
    };
    Ok((
        with_pooled(report),
        ArmArtifacts {
            name: name.to_string(),
            tau: Some(sel.threshold.tau),
            scores,
            selections,
            global: Some(out.global),
        },
    ))
}

/// Runs every configured arm on the same bundle and seeds. Stage 1 is
/// shared by all Selected arms; an arm that fails is recorded with its
/// error and the remaining arms still run.
pub fn run_comparison<E: Executor, C: Clock>(exec: &E, clock: &C, cfg: &ExperimentConfig) -> Result<ComparisonOutput> {
    cfg.validate()?;
    let mut timer = Timer { clock, out: Vec::new() };
    let bundle = timer.time(None, "gen_bundle", || gen_bundle(&cfg.bundle))?;
    let shared = Shared::new(&bundle);

    let needs_stage1 = cfg.arms.iter().any(|a| matches!(a, ArmSpec::Selected { .. }));
    let stage1 = if needs_stage1 {
        let wf = &cfg.workflow;
        timer.time(None, "train", || -> Result<_> {
            let mut server = shared.server(wf)?;
            let mut clients = shared.clients();
            run_stage1_training(exec, &mut clients, &mut server, wf)?;
            Ok((clients, server))
        })
    } else {
        Err(Error::State("stage 1 not run".into()))
    };

    let mut arms = Vec::with_capacity(cfg.arms.len());
    let mut artifacts = Vec::new();
    for arm in &cfg.arms {
        let name = arm.name(&cfg.workflow);
        let wf = cfg.arm_workflow(arm);
        let res = match arm {
            ArmSpec::Mixed => run_fixed_arm(exec, &mut timer, &shared, &wf, &name, false),
            ArmSpec::Oracle => run_fixed_arm(exec, &mut timer, &shared, &wf, &name, true),
            ArmSpec::Selected { .. } => match &stage1 {
                Ok(s1) => run_selected_arm(exec, &mut timer, &shared, &wf, &name, s1),
                Err(e) => Err(e.clone()),
            },
        };
        match res {
            Ok((r, a)) => {
                arms.push(r);
                artifacts.push(a);
            }
            Err(e) => {
                log::warn!("arm `{name}` failed: {e}");
                arms.push(ArmReport::failed(name, &e));
            }
        }
    }

    let mut sweep = Vec::with_capacity(cfg.sweep.len());
    for &ratio in &cfg.sweep {
        let mut point_cfg = cfg.clone();
        point_cfg.sweep.clear();
        point_cfg.bundle.plan.ratios = vec![ratio];
        let point = timer.time(None, "sweep_point", || run_comparison(exec, clock, &point_cfg))?;
        sweep.push(SweepPoint {
            ratio,
            arms: point.report.arms.iter().map(sweep_entry).collect(),
        });
    }

    let trajectories = match &stage1 {
        Ok((clients, _)) => clients
            .iter()
            .filter_map(|c| c.trajectory.clone().map(|t| (c.client_id, t)))
            .collect(),
        Err(_) => Vec::new(),
    };
    Ok(ComparisonOutput {
        report: RunReport {
            schema_version: SCHEMA_VERSION,
            config: cfg.clone(),
            arms,
            sweep,
        },
        bundle,
        artifacts,
        trajectories,
        timings: timer.out,
    })
}

fn sweep_entry(a: &ArmReport) -> SweepEntry {
    let (n, kept) = a.clients.iter().fold((0, 0), |(n, k), c| (n + c.n, k + c.kept));
    SweepEntry {
        arm: a.name.clone(),
        error: a.error.clone(),
        tau: a.threshold.as_ref().map(|t| t.tau),
        keep_fraction: (n > 0).then(|| kept as f64 / n as f64),
        pooled: a.pooled,
        auc: a.auc,
        final_val_loss: a.final_val_loss,
    }
}

/// Stages 1–6 for the configured workflow alone. Errors abort with their
/// stage tag instead of being recorded.
pub fn full_pipeline<E: Executor, C: Clock>(exec: &E, clock: &C, cfg: &ExperimentConfig) -> Result<ComparisonOutput> {
    let mut single = cfg.clone();
    single.arms = vec![ArmSpec::selected()];
    single.sweep.clear();
    let out = run_comparison(exec, clock, &single)?;
    if let Some(err) = &out.report.arms[0].error {
        return Err(Error::State(err.clone()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{PollutionKind, PollutionPlan, Regime};
    use crate::exec::Serial;

    fn small(ratio: f64) -> ExperimentConfig {
        ExperimentConfig {
            bundle: BundleSpec::new(
                Regime::Iid,
                2,
                80,
                PollutionPlan::uniform(ratio, PollutionKind::LabelSubstitution, 3),
                11,
            ),
            ..Default::default()
        }
    }

    #[test]
    fn zero_pollution_oracle_equals_mixed() {
        let out = run_comparison(&Serial, &NoClock, &small(0.0)).unwrap();
        let mixed = out.report.arm("mixed").unwrap();
        let oracle = out.report.arm("oracle").unwrap();
        assert_eq!(mixed.val_loss_curve, oracle.val_loss_curve);
        assert_eq!(mixed.clients, oracle.clients);
        let sel = out.report.arm("selected-clues").unwrap();
        assert!(sel.error.is_none());
        assert!(sel.auc.is_none(), "single-class AUC is undefined");
    }

    #[test]
    fn failing_arm_is_recorded_and_others_continue() {
        let mut cfg = small(1.0);
        cfg.arms = vec![ArmSpec::Oracle, ArmSpec::Mixed];
        let out = run_comparison(&Serial, &NoClock, &cfg).unwrap();
        assert!(out.report.arms[0].error.as_deref().unwrap().contains("kept no samples"));
        assert!(out.report.arms[1].error.is_none());
        assert!(out.report.arms[1].final_val_loss.is_some());
    }

    #[test]
    fn report_is_deterministic_and_privacy_clean() {
        let a = run_comparison(&Serial, &NoClock, &small(0.4)).unwrap();
        let b = run_comparison(&Serial, &NoClock, &small(0.4)).unwrap();
        assert_eq!(a.report, b.report);
        for arm in &a.report.arms {
            assert!(arm.privacy.as_ref().unwrap().is_clean());
        }
    }

    #[test]
    fn sweep_emits_one_point_per_ratio() {
        let mut cfg = small(0.0);
        cfg.arms = vec![ArmSpec::Mixed];
        cfg.sweep = vec![0.0, 0.5];
        let out = run_comparison(&Serial, &NoClock, &cfg).unwrap();
        assert_eq!(out.report.sweep.len(), 2);
        let p = &out.report.sweep[1].arms[0].pooled.unwrap();
        assert!((p.precision - 0.5).abs() < 1e-12);
    }

    #[test]
    fn duplicate_arms_and_bad_sweeps_are_rejected() {
        let mut cfg = small(0.0);
        cfg.arms = vec![ArmSpec::Mixed, ArmSpec::Mixed];
        assert!(cfg.validate().is_err());
        let mut cfg = small(0.0);
        cfg.sweep = vec![1.5];
        assert!(cfg.validate().is_err());
    }
}
