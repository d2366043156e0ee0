//! Turns raw CSI windows into the two model inputs per antenna pair: the
//! first-principal-component amplitude series and its magnitude spectrogram.
//!
//! Stage order for every pair: min-max normalisation across subcarriers,
//! zero-phase Butterworth band-pass per subcarrier, PCA over subcarriers,
//! then STFT of the PCA series.

mod blob;
mod filter;
mod normalize;
mod pca;
mod resample;
mod stft;

use serde::{Deserialize, Serialize};

pub use blob::{read_blob, write_blob, BlobEntry, BlobHeader, FeatureBlob, UNLABELED};
pub use filter::{bandpass, BandpassFilter, Biquad, FilterSpec};
pub use normalize::{normalize_pair, NormalizationMode, NormalizedPair};
pub use pca::{covariance, leading_eigenvector, pca_first_component, PcaProjection, POWER_ITERATION_MAX, POWER_ITERATION_TOL};
pub use resample::{resample, UniformSeries};
pub use stft::{hann, stft, Spectrogram};

use crate::csi_data::{CsiWindow, WindowSpec};
use crate::error::{Error, Result};

/// Real-valued per-pair time series (the PCA output).
#[derive(Debug, Clone, PartialEq)]
pub struct PairSeries {
    pub pair: usize,
    pub rate: f64,
    pub values: Vec<f64>,
}

/// Everything the pipeline needs to turn a window into features. Defaults
/// are 10 Hz, 20 s windows, a 0.1 to 2 Hz band and a
/// 10 s STFT window with a 1 s hop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessParams {
    pub rate: f64,
    pub window_sec: f64,
    pub band_min: f64,
    pub band_max: f64,
    pub filter_order: usize,
    pub stft_window_sec: f64,
    pub stft_hop_sec: f64,
    pub normalization: NormalizationMode,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        Self {
            rate: 10.0,
            window_sec: 20.0,
            band_min: 0.1,
            band_max: 2.0,
            filter_order: 4,
            stft_window_sec: 10.0,
            stft_hop_sec: 1.0,
            normalization: NormalizationMode::PerInstant,
        }
    }
}

impl PreprocessParams {
    pub fn filter_spec(&self) -> FilterSpec {
        FilterSpec { b_min: self.band_min, b_max: self.band_max, order: self.filter_order, rate: self.rate }
    }

    /// Non-overlapping window geometry used for training sets.
    pub fn window_spec(&self) -> WindowSpec {
        WindowSpec { window_sec: self.window_sec, hop_sec: self.window_sec, rate: self.rate }
    }

    pub fn series_len(&self) -> Result<usize> {
        self.window_spec().samples_per_window()
    }

    fn stft_samples(&self) -> (usize, usize) {
        (
            (self.stft_window_sec * self.rate).round() as usize,
            (self.stft_hop_sec * self.rate).round() as usize,
        )
    }

    pub fn num_frames(&self) -> Result<usize> {
        let len = self.series_len()?;
        let (win, hop) = self.stft_samples();
        if win == 0 || hop == 0 || win > len {
            return Err(Error::InvalidParam(format!(
                "STFT window {} s / hop {} s do not fit a {} s window",
                self.stft_window_sec, self.stft_hop_sec, self.window_sec
            )));
        }
        Ok((len - win) / hop + 1)
    }

    pub fn num_bins(&self) -> usize {
        self.stft_samples().0 / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        self.filter_spec().validate()?;
        self.num_frames()?;
        if self.series_len()? <= self.filter_spec().pad_len() {
            return Err(Error::InvalidParam("window too short for the band-pass filter".into()));
        }
        Ok(())
    }
}

/// Per-pair model inputs for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFeatures {
    pub series: PairSeries,
    pub spectrogram: Spectrogram,
    pub explained_ratio: f64,
    pub degenerate_instants: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowFeatures {
    pub start: f64,
    pub pairs: Vec<PairFeatures>,
}

/// Runs the full chain on one antenna pair's amplitude matrix `[time][subcarrier]`.
pub fn preprocess_pair(pair: usize, amplitudes: &[Vec<f64>], params: &PreprocessParams, filter: &BandpassFilter) -> Result<PairFeatures> {
    let normalized = normalize_pair(amplitudes, params.normalization)?;
    let time = normalized.values.len();
    let subs = normalized.values[0].len();
    let mut filtered = vec![vec![0.0; subs]; time];
    let mut column = vec![0.0; time];
    for s in 0..subs {
        for (c, row) in column.iter_mut().zip(&normalized.values) {
            *c = row[s];
        }
        let out = filter.filtfilt(&column)?;
        for (row, v) in filtered.iter_mut().zip(out) {
            row[s] = v;
        }
    }
    let pca = pca_first_component(&filtered)?;
    let spectrogram = stft(&pca.scores, params.stft_window_sec, params.stft_hop_sec, params.rate)?;
    Ok(PairFeatures {
        series: PairSeries { pair, rate: params.rate, values: pca.scores },
        spectrogram,
        explained_ratio: pca.explained_ratio,
        degenerate_instants: normalized.degenerate_instants.len(),
    })
}

/// Preprocesses every antenna pair of a window.
pub fn preprocess_window(window: &CsiWindow, params: &PreprocessParams) -> Result<WindowFeatures> {
    params.validate()?;
    let expected = params.series_len()?;
    if window.time_steps != expected || (window.rate - params.rate).abs() > 1e-9 {
        return Err(Error::Preprocess(format!(
            "window has {} samples at {} Hz, expected {} at {} Hz",
            window.time_steps, window.rate, expected, params.rate
        )));
    }
    let filter = BandpassFilter::design(params.filter_spec())?;
    let pairs = (0..window.pairs)
        .map(|p| preprocess_pair(p, &window.pair_amplitudes(p), params, &filter))
        .collect::<Result<Vec<_>>>()?;
    Ok(WindowFeatures { start: window.start, pairs })
}
