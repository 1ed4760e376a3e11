use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use clap::Parser;
use clues::bundle::read_samples;
use clues::cli::{execute, exit_code, Cli};
use clues::report::load_report;
use clues_core::metrics::selection_metrics;
use clues_core::model::QualityLabel;

fn run(args: &[&str]) -> anyhow::Result<()> {
    let mut full = vec!["clues"];
    full.extend_from_slice(args);
    execute(Cli::try_parse_from(full).expect("arguments parse"))
}

fn code(args: &[&str]) -> u8 {
    run(args).map(|_| 0).unwrap_or_else(|e| exit_code(&e))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const CONFIG: &str = r#"
name = "cli"
[bundle]
clients = 3
n_per_client = 60
[workflow]
epochs = 2
"#;

/// Recompute selection metrics from the written manifest and bundle CSVs and
/// compare them with the report.
fn check_manifest_against_report(out: &Path, arm: &str) {
    let report = load_report(&out.join("report.json")).unwrap();
    let arm_report = report.arm(arm).unwrap();
    let mut kept: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
    let mut r = csv::Reader::from_path(out.join(format!("selection_{arm}.csv"))).unwrap();
    for rec in r.records() {
        let rec = rec.unwrap();
        if &rec[3] == "1" {
            kept.entry(rec[0].parse().unwrap())
                .or_default()
                .push(rec[1].parse().unwrap());
        }
    }
    for c in &arm_report.clients {
        let samples = read_samples(&out.join("bundle").join(format!("client_{:03}.csv", c.client_id))).unwrap();
        let labels: Vec<(u64, bool)> = samples
            .iter()
            .map(|z| (z.id, z.quality_label() == QualityLabel::Clean))
            .collect();
        let sel = kept.get(&c.client_id).cloned().unwrap_or_default();
        assert_eq!(sel.len(), c.kept);
        assert_eq!(selection_metrics(&sel, &labels).unwrap(), c.metrics);
    }
}

#[test]
fn end_to_end_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("exp.toml");
    fs::write(&cfg, CONFIG).unwrap();

    let out = d.join("out");
    assert_eq!(code(&["compare", "--config", s(&cfg), "--out", s(&out)]), 0);
    for f in [
        "report.json",
        "timing.json",
        "metrics.csv",
        "curves.csv",
        "selection_mixed.csv",
        "adapter_selected-clues.ckpt",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    check_manifest_against_report(&out, "selected-clues");
    check_manifest_against_report(&out, "oracle");

    let scores = d.join("scores.csv");
    let traj = out.join("trajectories/client_001");
    assert_eq!(
        code(&[
            "score",
            "--bundle",
            s(&out.join("bundle")),
            "--trajectory",
            s(&traj),
            "--client",
            "1",
            "--out",
            s(&scores)
        ]),
        0
    );
    assert_eq!(fs::read_to_string(&scores).unwrap().lines().count(), 61);

    let merged = d.join("m.ckpt");
    let a = out.join("adapter_selected-clues.ckpt");
    let b = out.join("adapter_oracle.ckpt");
    assert_eq!(
        code(&[
            "merge",
            "--method",
            "ties",
            "--weights",
            "1,3",
            s(&a),
            s(&b),
            "-o",
            s(&merged)
        ]),
        0
    );
    assert!(merged.exists());
    assert_eq!(
        code(&["merge", "--weights", "1,2,3", s(&a), s(&b), "-o", s(&merged)]),
        2
    );

    let tables = d.join("tables");
    assert_eq!(code(&["report", "--report", s(&out), "--out", s(&tables)]), 0);
    assert_eq!(
        fs::read(tables.join("metrics.csv")).unwrap(),
        fs::read(out.join("metrics.csv")).unwrap()
    );

    let bundle = d.join("gen");
    assert_eq!(
        code(&[
            "gen",
            "--regime",
            "quality-het",
            "--ratios",
            "0.8,0.2,0.1,0.5",
            "--n",
            "20",
            "--out",
            s(&bundle)
        ]),
        0
    );
    let bad: usize = (0..4)
        .map(|c| {
            read_samples(&bundle.join(format!("client_{c:03}.csv")))
                .unwrap()
                .iter()
                .filter(|z| z.quality_label() != QualityLabel::Clean)
                .count()
        })
        .sum();
    assert_eq!(bad, 16 + 4 + 2 + 10);
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("bad.toml");
    fs::write(&cfg, format!("{CONFIG}\nlearning_rate = 1.0\n")).unwrap();
    assert_eq!(code(&["run", "--config", s(&cfg), "--out", s(&d.join("o"))]), 2);
    fs::write(&cfg, CONFIG.replace("epochs = 2", "epochs = 0")).unwrap();
    assert_eq!(code(&["run", "--config", s(&cfg), "--out", s(&d.join("o"))]), 2);
    fs::write(&cfg, CONFIG).unwrap();
    assert_eq!(code(&["run", "--config", s(&cfg)]), 2);
    assert_eq!(
        code(&[
            "gen",
            "--regime",
            "iid",
            "--ratios",
            "0.1,0.2",
            "--out",
            s(&d.join("g"))
        ]),
        2
    );
    assert!(Cli::try_parse_from(["clues", "frobnicate"]).is_err());
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing = d.join("nope.ckpt");
    assert_eq!(code(&["merge", s(&missing), "-o", s(&d.join("m.ckpt"))]), 1);
    let junk = d.join("junk.ckpt");
    fs::write(&junk, b"definitely not a checkpoint").unwrap();
    assert_eq!(code(&["merge", s(&junk), "-o", s(&d.join("m.ckpt"))]), 1);
    assert_eq!(code(&["report", "--report", s(&d.join("none.json")), "--out", s(d)]), 1);
}

#[test]
fn run_writes_only_the_selected_arm() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("exp.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let out = d.join("out");
    assert_eq!(code(&["run", "--config", s(&cfg), "--out", s(&out)]), 0);
    let report = load_report(&out.join("report.json")).unwrap();
    let names: BTreeSet<&str> = report.arms.iter().map(|a| a.name.as_str()).collect();
    assert_eq!(names, BTreeSet::from(["selected-clues"]));
}
