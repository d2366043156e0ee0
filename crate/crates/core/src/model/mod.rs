//! The attention network: per-pair morphology extractors with antenna-pair
//! (ECA-style) channel attention over the amplitude series, per-pair GRU with
//! self-attention over spectrogram frames, and a two-layer classification head.

mod network;
mod train;

use serde::{Deserialize, Serialize};

pub use network::{AlesalModel, AlesalParams, BatchForward, HeadParams, InputNorm, MeParams, PairAttentionParams, Prediction};
pub use train::argmax;
pub use train::{evaluate_loss, fit, fit_with_split, split_validation, BatchResult, EpochRecord, TrainConfig, TrainHistory, Trainable};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::preprocess::WindowFeatures;

/// Nearest odd integer to `log2(n)/gamma + b/gamma`; exact ties round up.
/// Always at least 1.
pub fn eca_kernel_size(n: usize, gamma: f64, b: f64) -> usize {
    let x = (n.max(1) as f64).log2() / gamma + b / gamma;
    let m = ((x - 1.0) / 2.0 + 0.5).floor().max(0.0);
    2 * m as usize + 1
}

/// Which branches and attention blocks are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub with_ta: bool,
    pub with_pa: bool,
    /// Drop the spectrogram (GRU) branches.
    pub amplitude_only: bool,
    /// Drop the amplitude (morphology extractor) branches.
    pub spectrum_only: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { with_ta: true, with_pa: true, amplitude_only: false, spectrum_only: false }
    }
}

impl AblationConfig {
    pub const FULL: Self = Self { with_ta: true, with_pa: true, amplitude_only: false, spectrum_only: false };
    pub const TA_ONLY: Self = Self { with_ta: true, with_pa: false, amplitude_only: false, spectrum_only: false };
    pub const PA_ONLY: Self = Self { with_ta: false, with_pa: true, amplitude_only: false, spectrum_only: false };
    pub const NONE: Self = Self { with_ta: false, with_pa: false, amplitude_only: false, spectrum_only: false };

    pub fn uses_spectrum(&self) -> bool {
        !self.amplitude_only
    }

    pub fn uses_amplitude(&self) -> bool {
        !self.spectrum_only
    }

    pub fn validate(&self) -> Result<()> {
        if self.amplitude_only && self.spectrum_only {
            return Err(Error::Model("ablation disables every input branch".into()));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        let mut s = match (self.amplitude_only, self.spectrum_only) {
            (true, _) => "amplitude-only".to_string(),
            (_, true) => "spectrum-only".to_string(),
            _ => "both-branches".to_string(),
        };
        s.push_str(if self.with_ta { "+TA" } else { "-TA" });
        s.push_str(if self.with_pa { "+PA" } else { "-PA" });
        s
    }
}

/// Architecture hyperparameters. Defaults give a 200-sample series per pair,
/// 11 × 51 spectrograms, 16 extractor channels per pair (N = 64 for four
/// pairs) and extractor output length 22.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub pairs: usize,
    pub series_len: usize,
    pub frames: usize,
    pub bins: usize,
    pub me_channels: usize,
    pub me_kernel: usize,
    pub gru_hidden: usize,
    pub d_k: usize,
    /// Size of each pair's time-branch latent.
    pub time_latent: usize,
    /// Size of the pair-attention latent `u`.
    pub pair_latent: usize,
    pub head_hidden: usize,
    pub eca_gamma: f64,
    pub eca_b: f64,
    /// One GRU shared by every pair instead of one per pair.
    pub shared_gru: bool,
    pub ablation: AblationConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            pairs: 4,
            series_len: 200,
            frames: 11,
            bins: 51,
            me_channels: 16,
            me_kernel: 7,
            gru_hidden: 32,
            d_k: 32,
            time_latent: 16,
            pair_latent: 16,
            head_hidden: 64,
            eca_gamma: 2.0,
            eca_b: 1.0,
            shared_gru: false,
            ablation: AblationConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Total extractor channels `N` across pairs.
    pub fn channels(&self) -> usize {
        self.me_channels * self.pairs
    }

    pub fn eca_kernel(&self) -> usize {
        eca_kernel_size(self.channels(), self.eca_gamma, self.eca_b)
    }

    /// Extractor output length `L` after two pooling stages.
    pub fn me_out_len(&self) -> usize {
        self.series_len / crate::nn::POOL_WINDOW / crate::nn::POOL_WINDOW
    }

    pub fn head_input(&self) -> usize {
        let mut n = 0;
        if self.ablation.uses_spectrum() {
            n += self.pairs * self.time_latent;
        }
        if self.ablation.uses_amplitude() {
            n += self.pair_latent;
        }
        n
    }

    pub fn validate(&self) -> Result<()> {
        self.ablation.validate()?;
        let positive = [
            self.pairs,
            self.series_len,
            self.frames,
            self.bins,
            self.me_channels,
            self.gru_hidden,
            self.time_latent,
            self.pair_latent,
            self.head_hidden,
        ];
        if positive.contains(&0) {
            return Err(Error::Model("model dimensions must be positive".into()));
        }
        if self.me_kernel % 2 == 0 {
            return Err(Error::Model(format!("extractor kernel {} must be odd", self.me_kernel)));
        }
        if self.me_out_len() == 0 {
            return Err(Error::Model(format!("series length {} too short for two pooling stages", self.series_len)));
        }
        if self.d_k != self.gru_hidden {
            return Err(Error::Model(format!("d_k {} must equal the GRU hidden size {} for the residual", self.d_k, self.gru_hidden)));
        }
        if !(self.eca_gamma > 0.0) || !self.eca_b.is_finite() {
            return Err(Error::Model("ECA gamma must be positive".into()));
        }
        Ok(())
    }
}

/// Model inputs for one window: per pair, the PCA amplitude series and its
/// spectrogram `[frames × bins]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowInput {
    pub series: Vec<Vec<f64>>,
    pub spectrograms: Vec<Tensor>,
}

impl WindowInput {
    pub fn from_features(f: &WindowFeatures) -> Result<Self> {
        let series = f.pairs.iter().map(|p| p.series.values.clone()).collect();
        let spectrograms = f
            .pairs
            .iter()
            .map(|p| Tensor::from_rows(&p.spectrogram.frames))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { series, spectrograms })
    }

    pub fn pairs(&self) -> usize {
        self.series.len()
    }

    /// Concatenated amplitude series, the input of the MLP baseline.
    pub fn flat_series(&self) -> Vec<f64> {
        self.series.concat()
    }
}
