//! Bundle persistence: one CSV per client, anchor and validation CSVs, and
//! `manifest.json` with the spec and generating weights.
//!
//! CSV columns: `id, x0..x{d-1}, target` (class index) or
//! `id, x0..x{d-1}, target0..target{m-1}` (regression), then
//! `quality_label, pollution_kind`.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clues_core::datagen::{BundleSpec, ClientData, DatasetBundle};
use clues_core::model::{ModelParams, PollutionKind, QualityLabel, Sample, Target};
use clues_core::selection::AnchorSet;
use serde::{Deserialize, Serialize};

pub const MANIFEST: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleManifest {
    pub schema_version: u32,
    pub spec: BundleSpec,
    pub base: ModelParams,
    pub teachers: Vec<ModelParams>,
    pub aux_teacher: ModelParams,
    pub client_files: Vec<String>,
    pub anchor_file: String,
    pub validation_file: String,
}

pub fn client_file(id: u32) -> String {
    format!("client_{id:03}.csv")
}

fn header(d: usize, target: &Target) -> Vec<String> {
    let mut h = vec!["id".to_string()];
    h.extend((0..d).map(|i| format!("x{i}")));
    match target {
        Target::Class(_) => h.push("target".into()),
        Target::Value(v) => h.extend((0..v.len()).map(|i| format!("target{i}"))),
    }
    h.push("quality_label".into());
    h.push("pollution_kind".into());
    h
}

fn label_fields(q: QualityLabel) -> [&'static str; 2] {
    match q {
        QualityLabel::Clean => ["clean", ""],
        QualityLabel::Polluted(k) => ["polluted", k.as_str()],
    }
}

pub fn write_samples(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    if let Some(first) = samples.first() {
        w.write_record(header(first.features.len(), &first.target))?;
    }
    for z in samples {
        let mut rec = vec![z.id.to_string()];
        rec.extend(z.features.as_slice().iter().map(|x| x.to_string()));
        match &z.target {
            Target::Class(c) => rec.push(c.to_string()),
            Target::Value(v) => rec.extend(v.iter().map(|x| x.to_string())),
        }
        rec.extend(label_fields(z.quality_label()).iter().map(|s| s.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_kind(s: &str) -> Result<PollutionKind> {
    Ok(match s {
        "label_substitution" => PollutionKind::LabelSubstitution,
        "truncation" => PollutionKind::Truncation,
        "noise_injection" => PollutionKind::NoiseInjection,
        other => bail!("unknown pollution kind `{other}`"),
    })
}

pub fn read_samples(path: &Path) -> Result<Vec<Sample>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers = r.headers()?.clone();
    let d = headers.iter().filter(|h| h.starts_with('x')).count();
    let class = headers.iter().any(|h| h == "target");
    let m = headers.iter().filter(|h| h.starts_with("target")).count();
    if headers.len() != 1 + d + m + 2 {
        bail!("{}: unexpected columns", path.display());
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let ctx = || format!("{} row {}", path.display(), line + 2);
        let num = |i: usize| -> Result<f64> { rec[i].parse::<f64>().with_context(ctx) };
        let id: u64 = rec[0].parse().with_context(ctx)?;
        let features = (1..=d).map(num).collect::<Result<Vec<_>>>()?;
        let target = if class {
            Target::Class(rec[1 + d].parse().with_context(ctx)?)
        } else {
            Target::Value((1 + d..1 + d + m).map(num).collect::<Result<Vec<_>>>()?)
        };
        let quality = match &rec[1 + d + m] {
            "clean" => QualityLabel::Clean,
            "polluted" => QualityLabel::Polluted(parse_kind(&rec[2 + d + m]).with_context(ctx)?),
            other => bail!("{}: bad quality label `{other}`", ctx()),
        };
        out.push(Sample::new(id, features, target, quality));
    }
    Ok(out)
}

pub fn write_bundle(dir: &Path, bundle: &DatasetBundle) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut client_files = Vec::with_capacity(bundle.clients.len());
    for c in &bundle.clients {
        let name = client_file(c.client_id);
        write_samples(&dir.join(&name), &c.samples)?;
        client_files.push(name);
    }
    write_samples(&dir.join("anchor.csv"), &bundle.anchor.samples)?;
    write_samples(&dir.join("validation.csv"), &bundle.validation)?;
    let manifest = BundleManifest {
        schema_version: MANIFEST_VERSION,
        spec: bundle.spec.clone(),
        base: bundle.base.clone(),
        teachers: bundle.teachers.clone(),
        aux_teacher: bundle.aux_teacher.clone(),
        client_files,
        anchor_file: "anchor.csv".into(),
        validation_file: "validation.csv".into(),
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<BundleManifest> {
    let path = dir.join(MANIFEST);
    let m: BundleManifest =
        serde_json::from_slice(&fs::read(&path).with_context(|| format!("reading {}", path.display()))?)
            .with_context(|| format!("parsing {}", path.display()))?;
    if m.schema_version != MANIFEST_VERSION {
        bail!("unsupported bundle manifest version {}", m.schema_version);
    }
    if m.client_files.len() != m.spec.clients {
        bail!(
            "manifest lists {} client files for {} clients",
            m.client_files.len(),
            m.spec.clients
        );
    }
    Ok(m)
}

pub fn read_bundle(dir: &Path) -> Result<DatasetBundle> {
    let m = read_manifest(dir)?;
    let clients = m
        .client_files
        .iter()
        .enumerate()
        .map(|(i, f)| {
            Ok(ClientData {
                client_id: i as u32,
                samples: read_samples(&dir.join(f))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetBundle {
        spec: m.spec,
        base: m.base,
        teachers: m.teachers,
        aux_teacher: m.aux_teacher,
        clients,
        validation: read_samples(&dir.join(&m.validation_file))?,
        anchor: AnchorSet {
            samples: read_samples(&dir.join(&m.anchor_file))?,
        },
    })
}
