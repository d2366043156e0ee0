//! On-disk layout of session directories and feature blobs.
//!
//! A session directory holds `session_NNNNN.csi` files, each with an optional
//! `session_NNNNN.labels` track next to it. `synth` also writes
//! `manifest.json` with the hidden generation parameters of every session.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use alesal_core::csi_data::{parse_label_track, parse_session, serialize_label_track, serialize_session};
use alesal_core::pipeline::{from_blob, session_examples, to_blob, LabeledExample};
use alesal_core::preprocess::{read_blob, write_blob};
use alesal_core::synthgen::{gen_session, ActivationPlan};
use alesal_core::{DatasetConfig, LabelInterval, PreprocessParams, SleepClass};
use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub class: SleepClass,
    pub plan: ActivationPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub sessions: Vec<ManifestEntry>,
}

/// Renders a synthetic dataset into `dir`.
pub fn write_synthetic(dir: &Path, config: &DatasetConfig, seed: u64) -> Result<Manifest> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let sessions = (0..config.total())
        .into_par_iter()
        .map(|i| -> Result<ManifestEntry> {
            let g = gen_session(config, i, seed)?;
            let stem = format!("session_{i:05}");
            fs::write(dir.join(format!("{stem}.csi")), serialize_session(&g.session.meta, &g.session.records))?;
            fs::write(dir.join(format!("{stem}.labels")), serialize_label_track(&g.session.meta.label_track))?;
            Ok(ManifestEntry { file: format!("{stem}.csi"), class: g.class, plan: g.plan })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest { seed, dataset: config.clone(), sessions };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

/// `.csi` files of a session directory in name order.
pub fn session_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == "csi"));
    files.sort();
    if files.is_empty() {
        bail!("no .csi session files in {}", dir.display());
    }
    Ok(files)
}

/// Windows and preprocesses every session in `dir`. Sessions without a label
/// file yield unlabeled windows.
pub fn read_session_dir(dir: &Path, params: &PreprocessParams) -> Result<Vec<LabeledExample>> {
    params.validate()?;
    let files = session_files(dir)?;
    let per_file = files
        .par_iter()
        .enumerate()
        .map(|(i, path)| -> Result<Vec<LabeledExample>> {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut session = parse_session(&text).with_context(|| format!("in {}", path.display()))?;
            let label_path = path.with_extension("labels");
            let labeled = label_path.exists();
            if labeled {
                let track = fs::read_to_string(&label_path)?;
                session.meta.label_track = parse_label_track(&track).with_context(|| format!("in {}", label_path.display()))?;
            } else {
                // Placeholder track so every window is kept; labels are dropped below.
                let end = session.records.last().map_or(0.0, |r| r.timestamp).max(0.0) + 1.0;
                session.meta.label_track = vec![LabelInterval::new(0.0, end, SleepClass::Normal)];
            }
            let mut ex = session_examples(&session, i, params, 0).with_context(|| format!("in {}", path.display()))?;
            if !labeled {
                ex.iter_mut().for_each(|e| e.label = None);
            }
            Ok(ex)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out: Vec<LabeledExample> = per_file.into_iter().flatten().collect();
    for (i, e) in out.iter_mut().enumerate() {
        e.window_id = i as u32;
    }
    if out.is_empty() {
        bail!("{} produced no complete windows", dir.display());
    }
    Ok(out)
}

/// Loads examples from a session directory or a feature blob. For a blob the
/// window geometry recorded in its header replaces the one in `params`.
pub fn load_examples(path: &Path, params: &PreprocessParams) -> Result<(Vec<LabeledExample>, PreprocessParams)> {
    if path.is_dir() {
        return Ok((read_session_dir(path, params)?, *params));
    }
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let blob = read_blob(std::io::BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?;
    let h = blob.header;
    let params = PreprocessParams {
        rate: h.rate as f64,
        window_sec: h.window_sec as f64,
        stft_window_sec: h.stft_window_sec as f64,
        stft_hop_sec: h.stft_hop_sec as f64,
        ..*params
    };
    let examples = from_blob(&blob)?;
    if examples.is_empty() {
        bail!("{} holds no windows", path.display());
    }
    Ok((examples, params))
}

pub fn write_features(path: &Path, examples: &[LabeledExample], params: &PreprocessParams) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    write_blob(&mut w, &to_blob(examples, params))?;
    w.flush()?;
    Ok(())
}

/// Writes `text` to `path`, or to stdout when no path is given.
pub fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
