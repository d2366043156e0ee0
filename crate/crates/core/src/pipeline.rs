//! Glue from CSI sessions to labeled model inputs, and the conversion of
//! feature sets to and from the binary feature blob.

use rayon::prelude::*;

use crate::csi_data::{windowize, Session, SleepClass};
use crate::error::{Error, Result};
use crate::model::WindowInput;
use crate::nn::Tensor;
use crate::preprocess::{preprocess_window, BlobEntry, BlobHeader, FeatureBlob, PreprocessParams, UNLABELED};
use crate::synthgen::{gen_session, DatasetConfig, GeneratedSession};

const KIND_SERIES: u8 = 0;
const KIND_SPECTROGRAM: u8 = 1;

/// One preprocessed window.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub window_id: u32,
    /// Source session index within its dataset.
    pub session: usize,
    pub start: f64,
    pub label: Option<SleepClass>,
    pub input: WindowInput,
}

impl LabeledExample {
    pub fn class_index(&self) -> Result<usize> {
        self.label.map(|c| c.index()).ok_or_else(|| Error::Eval(format!("window {} is unlabeled", self.window_id)))
    }
}

/// Windows and preprocesses one session. Window ids are assigned from
/// `first_id` upward.
pub fn session_examples(session: &Session, session_index: usize, params: &PreprocessParams, first_id: u32) -> Result<Vec<LabeledExample>> {
    let windows = windowize(&session.records, &session.meta, &params.window_spec())?;
    windows
        .iter()
        .enumerate()
        .map(|(k, w)| {
            let features = preprocess_window(w, params)?;
            Ok(LabeledExample {
                window_id: first_id + k as u32,
                session: session_index,
                start: w.start,
                label: Some(w.label),
                input: WindowInput::from_features(&features)?,
            })
        })
        .collect()
}

/// Examples of one generated synthetic session.
pub fn generated_examples(g: &GeneratedSession, params: &PreprocessParams, first_id: u32) -> Result<Vec<LabeledExample>> {
    session_examples(&g.session, g.index, params, first_id)
}

/// Renders and preprocesses a whole synthetic dataset without keeping the raw
/// CSI. Sessions are processed in parallel and returned in index order.
pub fn synthetic_examples(config: &DatasetConfig, params: &PreprocessParams, seed: u64) -> Result<Vec<LabeledExample>> {
    if (config.rate - params.rate).abs() > 1e-9 {
        return Err(Error::InvalidParam(format!("synthetic rate {} Hz differs from the preprocessing rate {} Hz", config.rate, params.rate)));
    }
    let per_session = (0..config.total())
        .into_par_iter()
        .map(|i| {
            let g = gen_session(config, i, seed)?;
            generated_examples(&g, params, 0)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out: Vec<LabeledExample> = per_session.into_iter().flatten().collect();
    for (i, e) in out.iter_mut().enumerate() {
        e.window_id = i as u32;
    }
    Ok(out)
}

/// Inputs and class indices of labeled examples.
pub fn split_inputs(examples: &[LabeledExample]) -> Result<(Vec<&WindowInput>, Vec<usize>)> {
    let labels = examples.iter().map(LabeledExample::class_index).collect::<Result<Vec<_>>>()?;
    Ok((examples.iter().map(|e| &e.input).collect(), labels))
}

/// Per-class counts of labeled examples.
pub fn class_counts(examples: &[LabeledExample]) -> [usize; 3] {
    let mut c = [0; 3];
    for e in examples {
        if let Some(l) = e.label {
            c[l.index()] += 1;
        }
    }
    c
}

pub fn to_blob(examples: &[LabeledExample], params: &PreprocessParams) -> FeatureBlob {
    let header = BlobHeader {
        rate: params.rate as f32,
        window_sec: params.window_sec as f32,
        stft_window_sec: params.stft_window_sec as f32,
        stft_hop_sec: params.stft_hop_sec as f32,
    };
    let mut entries = Vec::new();
    for e in examples {
        let label = e.label.map_or(UNLABELED, |c| c.index() as u8);
        for (p, (series, spec)) in e.input.series.iter().zip(&e.input.spectrograms).enumerate() {
            entries.push(BlobEntry {
                window_id: e.window_id,
                pair: p as u16,
                kind: KIND_SERIES,
                label,
                dims: vec![series.len() as u32],
                data: series.iter().map(|&v| v as f32).collect(),
            });
            entries.push(BlobEntry {
                window_id: e.window_id,
                pair: p as u16,
                kind: KIND_SPECTROGRAM,
                label,
                dims: spec.shape().iter().map(|&d| d as u32).collect(),
                data: spec.data().iter().map(|&v| v as f32).collect(),
            });
        }
    }
    FeatureBlob { header, entries }
}

/// Regroups blob entries into examples, in first-appearance order of window ids.
/// Session indices and start times are not stored in the blob and come back as
/// the window id and 0.
pub fn from_blob(blob: &FeatureBlob) -> Result<Vec<LabeledExample>> {
    let mut order: Vec<u32> = Vec::new();
    let mut groups: std::collections::HashMap<u32, Vec<&BlobEntry>> = std::collections::HashMap::new();
    for e in &blob.entries {
        groups
            .entry(e.window_id)
            .or_insert_with(|| {
                order.push(e.window_id);
                Vec::new()
            })
            .push(e);
    }
    order
        .into_iter()
        .map(|id| {
            let entries = &groups[&id];
            let pairs = entries.iter().map(|e| e.pair as usize + 1).max().unwrap_or(0);
            let mut series: Vec<Option<Vec<f64>>> = vec![None; pairs];
            let mut specs: Vec<Option<Tensor>> = vec![None; pairs];
            let label_byte = entries[0].label;
            for e in entries {
                if e.label != label_byte {
                    return Err(Error::Format(format!("window {id}: entries disagree on the label")));
                }
                let values: Vec<f64> = e.data.iter().map(|&v| v as f64).collect();
                let slot = e.pair as usize;
                match e.kind {
                    KIND_SERIES if e.dims.len() == 1 => series[slot] = Some(values),
                    KIND_SPECTROGRAM if e.dims.len() == 2 => {
                        specs[slot] = Some(Tensor::new(e.dims.iter().map(|&d| d as usize).collect(), values)?);
                    }
                    k => return Err(Error::Format(format!("window {id}: entry kind {k} with dims {:?}", e.dims))),
                }
            }
            let series = series.into_iter().collect::<Option<Vec<_>>>();
            let specs = specs.into_iter().collect::<Option<Vec<_>>>();
            let (Some(series), Some(spectrograms)) = (series, specs) else {
                return Err(Error::Format(format!("window {id}: missing a series or spectrogram entry")));
            };
            let label = match label_byte {
                UNLABELED => None,
                b => Some(SleepClass::from_index(b as usize).ok_or_else(|| Error::Format(format!("window {id}: label {b}")))?),
            };
            Ok(LabeledExample { window_id: id, session: id as usize, start: 0.0, label, input: WindowInput { series, spectrograms } })
        })
        .collect()
}
