use std::path::Path;

use alesal_core::preprocess::NormalizationMode;
use alesal_core::{AblationConfig, DatasetConfig, ModelConfig, PreprocessParams, TrainConfig};
use anyhow::{Context, Result};
use serde::Deserialize;

use crate::{ModelArgs, Normalization, PreprocessArgs, SynthArgs, TrainArgs};

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub seed: u64,
    pub threads: Option<usize>,
    pub dataset: DatasetConfig,
    pub preprocess: PreprocessParams,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Settings {
    /// Defaults, then the config file, then the global flags.
    pub fn load(file: Option<&Path>, seed: Option<u64>, threads: Option<usize>) -> Result<Self> {
        let mut s = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
            }
            None => Settings::default(),
        };
        if let Some(seed) = seed {
            s.seed = seed;
        }
        if threads.is_some() {
            s.threads = threads;
        }
        s.train.seed = s.seed;
        Ok(s)
    }

    pub fn apply_synth(&mut self, a: &SynthArgs) {
        let d = &mut self.dataset;
        if let Some(n) = a.per_class {
            d.per_class = [n; 3];
        }
        set(&mut d.duration_sec, a.duration_sec);
        set(&mut d.rate, a.rate);
        set(&mut d.pairs, a.pairs);
        set(&mut d.subcarriers, a.subcarriers);
        if a.weak_pair.is_some() {
            d.weak_pair = a.weak_pair;
        }
    }

    pub fn apply_preprocess(&mut self, a: &PreprocessArgs) {
        let p = &mut self.preprocess;
        set(&mut p.rate, a.rate);
        set(&mut p.window_sec, a.window_sec);
        if let Some((lo, hi)) = a.band {
            p.band_min = lo;
            p.band_max = hi;
        }
        set(&mut p.filter_order, a.filter_order);
        set(&mut p.stft_window_sec, a.stft_window_sec);
        set(&mut p.stft_hop_sec, a.stft_hop_sec);
        if let Some(n) = a.normalization {
            p.normalization = match n {
                Normalization::PerInstant => NormalizationMode::PerInstant,
                Normalization::PerWindow => NormalizationMode::PerWindow,
            };
        }
    }

    pub fn apply_model(&mut self, a: &ModelArgs) {
        let m = &mut self.model;
        set(&mut m.me_channels, a.me_channels);
        set(&mut m.gru_hidden, a.gru_hidden);
        set(&mut m.d_k, a.d_k);
        set(&mut m.head_hidden, a.head_hidden);
        set(&mut m.eca_gamma, a.eca_gamma);
        set(&mut m.eca_b, a.eca_b);
        m.shared_gru |= a.shared_gru;
        let ab: &mut AblationConfig = &mut m.ablation;
        ab.with_ta &= !a.no_ta;
        ab.with_pa &= !a.no_pa;
        ab.amplitude_only |= a.amplitude_only;
        ab.spectrum_only |= a.spectrum_only;
    }

    pub fn apply_train(&mut self, a: &TrainArgs) {
        let t = &mut self.train;
        set(&mut t.max_epochs, a.epochs);
        set(&mut t.batch_size, a.batch_size);
        set(&mut t.adam.lr, a.lr);
        set(&mut t.patience, a.patience);
        set(&mut t.val_fraction, a.val_fraction);
    }

    /// Model configuration with the input geometry taken from the data.
    pub fn model_for(&self, params: &PreprocessParams, pairs: usize) -> alesal_core::Result<ModelConfig> {
        Ok(ModelConfig {
            pairs,
            series_len: params.series_len()?,
            frames: params.num_frames()?,
            bins: params.num_bins(),
            ..self.model.clone()
        })
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}
