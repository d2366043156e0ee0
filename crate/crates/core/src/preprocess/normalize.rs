use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where the min/max of the amplitude normalisation are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationMode {
    /// Across all subcarriers of the pair at each time instant.
    #[default]
    PerInstant,
    /// Across all subcarriers and all instants of the window.
    PerWindow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedPair {
    /// `[time][subcarrier]`, every entry in `[0, 1]`.
    pub values: Vec<Vec<f64>>,
    /// Instants where max == min; their row is all zeros.
    pub degenerate_instants: Vec<usize>,
}

impl NormalizedPair {
    pub fn is_degenerate(&self) -> bool {
        !self.degenerate_instants.is_empty()
    }
}

fn scale_row(row: &[f64], lo: f64, hi: f64) -> Option<Vec<f64>> {
    let span = hi - lo;
    if span <= 0.0 || !span.is_finite() {
        return None;
    }
    Some(row.iter().map(|&a| ((a - lo) / span).clamp(0.0, 1.0)).collect())
}

/// Min-max normalises one pair's amplitude matrix `[time][subcarrier]`.
pub fn normalize_pair(amplitudes: &[Vec<f64>], mode: NormalizationMode) -> Result<NormalizedPair> {
    if amplitudes.is_empty() || amplitudes[0].is_empty() {
        return Err(Error::Preprocess("normalize: empty input".into()));
    }
    let mut degenerate = Vec::new();
    let bounds = |row: &[f64]| row.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &a| (lo.min(a), hi.max(a)));
    let values = match mode {
        NormalizationMode::PerInstant => amplitudes
            .iter()
            .enumerate()
            .map(|(t, row)| {
                let (lo, hi) = bounds(row);
                scale_row(row, lo, hi).unwrap_or_else(|| {
                    degenerate.push(t);
                    vec![0.0; row.len()]
                })
            })
            .collect(),
        NormalizationMode::PerWindow => {
            let (lo, hi) = amplitudes
                .iter()
                .map(|r| bounds(r))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (c, d)| (a.min(c), b.max(d)));
            amplitudes
                .iter()
                .enumerate()
                .map(|(t, row)| {
                    scale_row(row, lo, hi).unwrap_or_else(|| {
                        degenerate.push(t);
                        vec![0.0; row.len()]
                    })
                })
                .collect()
        }
    };
    Ok(NormalizedPair { values, degenerate_instants: degenerate })
}
