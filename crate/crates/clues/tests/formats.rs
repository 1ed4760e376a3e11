use clues::bundle::{read_bundle, read_samples, write_bundle, write_samples};
use clues::ckpt::{
    load_adapter, load_trajectory, save_adapter, save_trajectory, sidecar_path, CheckpointFile, CkptError, MergeRecord,
    Segment,
};
use clues::config::{parse_experiment, render_experiment};
use clues::report::{parse_report, render_report};
use clues_core::datagen::{gen_bundle, BundleSpec, PollutionPlan, Regime, TaskKind, TaskSpec};
use clues_core::eval::{run_comparison, ExperimentConfig, NoClock};
use clues_core::exec::Serial;
use clues_core::federation::{run_stage1_training, ClientState, ServerState, WorkflowConfig};
use clues_core::merging::MergeMethod;
use clues_core::model::{init_adapter, Architecture, PollutionKind, Sample};
use clues_core::optimizer::OptimizerKind;
use proptest::prelude::*;

fn any_f64() -> impl Strategy<Value = f64> {
    prop_oneof![any::<f64>(), Just(0.0), Just(-0.0), Just(f64::MIN_POSITIVE / 2.0)]
}

fn ckpt_file() -> impl Strategy<Value = CheckpointFile> {
    let seg = ("[a-z_.0-9]{1,12}", 1usize..4, 1usize..5).prop_flat_map(|(name, r, c)| {
        prop::collection::vec(any_f64(), r * c).prop_map(move |data| Segment {
            name: name.clone(),
            shape: vec![r, c],
            data,
        })
    });
    (prop::collection::vec(seg, 1..4), any_f64(), any::<u64>(), any::<bool>()).prop_map(|(segments, lr, step, mom)| {
        let moments = mom.then(|| {
            let m: Vec<Vec<f64>> = segments
                .iter()
                .map(|s| s.data.iter().map(|x| x * 0.5).collect())
                .collect();
            let v: Vec<Vec<f64>> = segments
                .iter()
                .map(|s| s.data.iter().map(|x| x * x).collect())
                .collect();
            (m, v)
        });
        CheckpointFile {
            segments,
            lr,
            step,
            moments,
        }
    })
}

fn bits(f: &CheckpointFile) -> Vec<u64> {
    let mut out: Vec<u64> = f
        .segments
        .iter()
        .flat_map(|s| s.data.iter().map(|x| x.to_bits()))
        .collect();
    if let Some((m, v)) = &f.moments {
        out.extend(m.iter().chain(v).flatten().map(|x| x.to_bits()));
    }
    out.push(f.lr.to_bits());
    out
}

proptest! {
    #[test]
    fn checkpoint_bytes_round_trip_bit_exactly(f in ckpt_file()) {
        let back = CheckpointFile::from_bytes(&f.to_bytes()).unwrap();
        prop_assert_eq!(bits(&back), bits(&f));
        prop_assert_eq!(back.step, f.step);
        prop_assert_eq!(back.to_bytes(), f.to_bytes());
    }

    #[test]
    fn every_truncation_is_rejected(f in ckpt_file(), cut in 0.0f64..1.0) {
        let bytes = f.to_bytes();
        let n = (cut * bytes.len() as f64) as usize;
        prop_assert!(CheckpointFile::from_bytes(&bytes[..n]).is_err());
    }
}

#[test]
fn corrupted_headers_are_rejected() {
    let f = CheckpointFile {
        segments: vec![Segment {
            name: "w".into(),
            shape: vec![2, 1],
            data: vec![1.0, 2.0],
        }],
        lr: 0.1,
        step: 3,
        moments: None,
    };
    let good = f.to_bytes();
    let mut bad = good.clone();
    bad[0] = b'X';
    assert!(matches!(CheckpointFile::from_bytes(&bad), Err(CkptError::Magic)));
    let mut bad = good.clone();
    bad[9] = 7;
    assert!(matches!(CheckpointFile::from_bytes(&bad), Err(CkptError::Version(7))));
    let mut bad = good.clone();
    bad.push(0);
    assert!(CheckpointFile::from_bytes(&bad).is_err());
    assert!(matches!(
        CheckpointFile::from_bytes(&good[..good.len() - 3]),
        Err(CkptError::Truncated)
    ));
}

#[test]
fn adapter_and_sidecar_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let arch = Architecture::Mlp {
        d_in: 3,
        hidden: 5,
        d_out: 2,
    };
    let ad = init_adapter(arch, &["fc1", "fc2"], 2, 3.5, 9).unwrap();
    let path = dir.path().join("a.ckpt");
    let rec = MergeRecord {
        method: MergeMethod::Ties { density: 0.2 },
        weights: vec![0.25, 0.75],
        inputs: vec!["x".into(), "y".into()],
    };
    save_adapter(&path, &ad, Some(rec.clone())).unwrap();
    let (back, meta) = load_adapter(&path).unwrap();
    assert_eq!(back, ad);
    assert_eq!(meta.unwrap().merge, Some(rec));
    std::fs::remove_file(sidecar_path(&path)).unwrap();
    let (no_meta, meta) = load_adapter(&path).unwrap();
    assert!(meta.is_none());
    assert_eq!(no_meta.alpha(), 2.0);
    assert_eq!(no_meta.flat(), ad.flat());
}

#[test]
fn trajectory_round_trips_for_moment_optimizers() {
    let b = gen_bundle(&BundleSpec {
        n_per_client: 40,
        clients: 2,
        ..Default::default()
    })
    .unwrap();
    let data: Vec<(u32, &[Sample])> = b.clients.iter().map(|c| (c.client_id, c.samples.as_slice())).collect();
    for opt in [OptimizerKind::sgd(0.05), OptimizerKind::adam(0.01)] {
        let cfg = WorkflowConfig {
            optimizer: opt,
            epochs: 2,
            ..Default::default()
        };
        let mut server = ServerState::new(b.base.clone(), b.anchor.clone(), b.validation.clone(), &cfg).unwrap();
        let mut clients: Vec<_> = data.iter().map(|(id, d)| ClientState::new(*id, d)).collect();
        run_stage1_training(&Serial, &mut clients, &mut server, &cfg).unwrap();
        let traj = clients[0].trajectory.clone().unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_trajectory(dir.path(), &traj).unwrap();
        assert_eq!(load_trajectory(dir.path()).unwrap(), traj);
    }
}

#[test]
fn bundle_csvs_round_trip_exactly() {
    for kind in [TaskKind::Regression, TaskKind::Classification] {
        let mut plan = PollutionPlan::uniform(0.0, PollutionKind::LabelSubstitution, 1);
        plan.ratios = vec![0.5, 0.1, 0.3];
        let spec = BundleSpec {
            task: TaskSpec {
                kind,
                ..TaskSpec::default()
            },
            ..BundleSpec::new(Regime::QualityHet, 3, 30, plan, 4)
        };
        let b = gen_bundle(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_bundle(dir.path(), &b).unwrap();
        assert_eq!(read_bundle(dir.path()).unwrap(), b);
    }
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.csv");
    let tricky = vec![Sample::clean(
        7,
        vec![0.1 + 0.2, -1e-300, 5e-324],
        clues_core::model::Target::Value(vec![1.0 / 3.0]),
    )];
    write_samples(&p, &tricky).unwrap();
    assert_eq!(read_samples(&p).unwrap(), tricky);
}

fn small_config() -> ExperimentConfig {
    parse_experiment(
        r#"
name = "small"
[bundle]
clients = 2
n_per_client = 50
[workflow]
epochs = 2
"#,
    )
    .unwrap()
}

#[test]
fn report_json_round_trips() {
    let out = run_comparison(&Serial, &NoClock, &small_config()).unwrap();
    let text = render_report(&out.report).unwrap();
    let back = parse_report(&text).unwrap();
    assert_eq!(back, out.report);
    assert_eq!(render_report(&back).unwrap(), text);
}

#[test]
fn config_round_trips_and_rejects_unknown_keys() {
    let cfg = small_config();
    assert_eq!(parse_experiment(&render_experiment(&cfg)).unwrap(), cfg);
    for bad in [
        "nmae = \"x\"",
        "[workflow]\nepoch = 3",
        "[workflow.optimizer]\nvariant = \"sgd\"\nlr = 0.1\nbeta = 0.9",
        "[bundle.plan]\nratio = [0.1]",
        "[workflow]\nepochs = 0",
    ] {
        assert!(parse_experiment(bad).is_err(), "accepted: {bad}");
    }
}
