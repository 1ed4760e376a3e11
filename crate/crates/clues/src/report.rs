//! Run outputs: `report.json`, `timing.json`, CSV tables, selection
//! manifests, merged adapters, stage-1 trajectories and the bundle.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use clues_core::eval::{ArmArtifacts, ComparisonOutput, RunReport, StageTiming};

use crate::bundle::write_bundle;
use crate::ckpt::{save_adapter, save_trajectory, MergeRecord};

pub const REPORT_FILE: &str = "report.json";
pub const TIMING_FILE: &str = "timing.json";

pub fn render_report(report: &RunReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)? + "\n")
}

pub fn parse_report(text: &str) -> Result<RunReport> {
    Ok(serde_json::from_str(text)?)
}

pub fn load_report(path: &Path) -> Result<RunReport> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_report(&text).with_context(|| format!("parsing {}", path.display()))
}

/// File-name-safe arm name.
pub fn slug(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// `metrics.csv` (per client and pooled), `curves.csv` and, for sweeps,
/// `sweep.csv`.
pub fn write_tables(dir: &Path, report: &RunReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("metrics.csv"))?;
    w.write_record([
        "arm",
        "client",
        "n",
        "kept",
        "keep_fraction",
        "precision",
        "recall",
        "f1",
        "accuracy",
        "tp",
        "fp",
        "tn",
        "fn",
        "tau",
        "auc",
        "final_val_loss",
        "error",
    ])?;
    for arm in &report.arms {
        let tau = opt(arm.threshold.as_ref().map(|t| t.tau));
        for c in &arm.clients {
            let m = &c.metrics;
            w.write_record([
                arm.name.clone(),
                c.client_id.to_string(),
                c.n.to_string(),
                c.kept.to_string(),
                c.keep_fraction.to_string(),
                m.precision.to_string(),
                m.recall.to_string(),
                m.f1.to_string(),
                m.accuracy.to_string(),
                m.tp.to_string(),
                m.fp.to_string(),
                m.tn.to_string(),
                m.fn_.to_string(),
                tau.clone(),
                String::new(),
                String::new(),
                String::new(),
            ])?;
        }
        let (n, kept) = arm.clients.iter().fold((0, 0), |(n, k), c| (n + c.n, k + c.kept));
        let p = arm.pooled.unwrap_or_default();
        w.write_record([
            arm.name.clone(),
            "pooled".into(),
            n.to_string(),
            kept.to_string(),
            if n > 0 {
                (kept as f64 / n as f64).to_string()
            } else {
                String::new()
            },
            p.precision.to_string(),
            p.recall.to_string(),
            p.f1.to_string(),
            p.accuracy.to_string(),
            p.tp.to_string(),
            p.fp.to_string(),
            p.tn.to_string(),
            p.fn_.to_string(),
            tau,
            opt(arm.auc),
            opt(arm.final_val_loss),
            arm.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("curves.csv"))?;
    w.write_record(["arm", "round", "val_loss"])?;
    for arm in &report.arms {
        for (i, l) in arm.val_loss_curve.iter().enumerate() {
            w.write_record([arm.name.clone(), i.to_string(), l.to_string()])?;
        }
    }
    w.flush()?;

    if !report.sweep.is_empty() {
        let mut w = csv::Writer::from_path(dir.join("sweep.csv"))?;
        w.write_record([
            "ratio",
            "arm",
            "tau",
            "keep_fraction",
            "precision",
            "recall",
            "f1",
            "auc",
            "final_val_loss",
            "error",
        ])?;
        for p in &report.sweep {
            for e in &p.arms {
                w.write_record([
                    p.ratio.to_string(),
                    e.arm.clone(),
                    opt(e.tau),
                    opt(e.keep_fraction),
                    opt(e.pooled.map(|m| m.precision)),
                    opt(e.pooled.map(|m| m.recall)),
                    opt(e.pooled.map(|m| m.f1)),
                    opt(e.auc),
                    opt(e.final_val_loss),
                    e.error.clone().unwrap_or_default(),
                ])?;
            }
        }
        w.flush()?;
    }
    Ok(())
}

/// Selection manifest: `client_id,sample_id,score,selected,tau`. Arms
/// without scores (mixed, oracle) leave `score` and `tau` empty.
pub fn write_selection_manifest(path: &Path, arm: &ArmArtifacts, all_ids: &[(u32, Vec<u64>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["client_id", "sample_id", "score", "selected", "tau"])?;
    let tau = opt(arm.tau);
    for (client, ids) in all_ids {
        let kept: std::collections::BTreeSet<u64> = arm
            .selections
            .iter()
            .find(|(c, _)| c == client)
            .map(|(_, s)| s.iter().copied().collect())
            .unwrap_or_default();
        let scores = arm.scores.iter().find(|(c, _)| c == client).map(|(_, s)| s);
        for (i, id) in ids.iter().enumerate() {
            let score = scores.map(|s| {
                debug_assert_eq!(s[i].sample_id, *id);
                s[i].score.to_string()
            });
            w.write_record([
                client.to_string(),
                id.to_string(),
                score.unwrap_or_default(),
                (kept.contains(id) as u8).to_string(),
                tau.clone(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_timings(path: &Path, timings: &[StageTiming]) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(timings)? + "\n")?;
    Ok(())
}

/// Everything a `run` or `compare` produces.
pub fn write_outputs(dir: &Path, out: &ComparisonOutput) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join(REPORT_FILE), render_report(&out.report)?)?;
    write_timings(&dir.join(TIMING_FILE), &out.timings)?;
    write_tables(dir, &out.report)?;
    write_bundle(&dir.join("bundle"), &out.bundle)?;
    let ids: Vec<(u32, Vec<u64>)> = out
        .bundle
        .clients
        .iter()
        .map(|c| (c.client_id, c.samples.iter().map(|z| z.id).collect()))
        .collect();
    for art in &out.artifacts {
        let s = slug(&art.name);
        write_selection_manifest(&dir.join(format!("selection_{s}.csv")), art, &ids)?;
        if let Some(global) = &art.global {
            let merge = out
                .report
                .arm(&art.name)
                .and_then(|a| a.merge.as_ref())
                .map(|m| MergeRecord {
                    method: m.method.clone(),
                    weights: m.weights.clone(),
                    inputs: m.participants.iter().map(|p| format!("client {p}")).collect(),
                });
            save_adapter(&dir.join(format!("adapter_{s}.ckpt")), global, merge)?;
        }
    }
    for (client, traj) in &out.trajectories {
        save_trajectory(&dir.join("trajectories").join(format!("client_{client:03}")), traj)?;
    }
    Ok(())
}
