//! Multi-seed training runs used by the ablation and baseline comparisons.

use std::fmt;
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate, Dmlp, DmlpConfig, EvalReport};
use crate::model::{fit, AblationConfig, AlesalModel, ModelConfig, TrainConfig, WindowInput};

/// A trainable classifier variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Alesal(AblationConfig),
    Dmlp,
}

impl Variant {
    pub const FULL: Self = Variant::Alesal(AblationConfig::FULL);
    pub const TA_ONLY: Self = Variant::Alesal(AblationConfig::TA_ONLY);
    pub const PA_ONLY: Self = Variant::Alesal(AblationConfig::PA_ONLY);
    pub const NONE: Self = Variant::Alesal(AblationConfig::NONE);
    pub const AMPLITUDE_ONLY: Self =
        Variant::Alesal(AblationConfig { with_ta: true, with_pa: true, amplitude_only: true, spectrum_only: false });
    pub const SPECTRUM_ONLY: Self =
        Variant::Alesal(AblationConfig { with_ta: true, with_pa: true, amplitude_only: false, spectrum_only: true });

    /// The four attention ablations.
    pub const ATTENTION: [Self; 4] = [Self::FULL, Self::TA_ONLY, Self::PA_ONLY, Self::NONE];

    pub fn name(&self) -> &'static str {
        match *self {
            Self::FULL => "full",
            Self::TA_ONLY => "ta-only",
            Self::PA_ONLY => "pa-only",
            Self::NONE => "none",
            Self::AMPLITUDE_ONLY => "amplitude-only",
            Self::SPECTRUM_ONLY => "spectrum-only",
            Variant::Dmlp => "dmlp",
            Variant::Alesal(_) => "custom",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Alesal(a) if self.name() == "custom" => write!(f, "{}", a.label()),
            _ => f.write_str(self.name()),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Self::FULL, Self::TA_ONLY, Self::PA_ONLY, Self::NONE, Self::AMPLITUDE_ONLY, Self::SPECTRUM_ONLY, Self::Dmlp]
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidParam(format!("unknown variant `{s}`")))
    }
}

/// Outcome of training one variant with one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: String,
    pub seed: u64,
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub epochs: usize,
    pub best_epoch: usize,
}

/// Labeled train and test inputs shared by every run of a study.
pub struct StudyData<'a> {
    pub train: &'a [WindowInput],
    pub train_labels: &'a [usize],
    pub test: &'a [WindowInput],
    pub test_labels: &'a [usize],
}

/// Trains `variant` with model and shuffling seed `seed` and evaluates it on
/// the test split.
pub fn run_variant(variant: Variant, seed: u64, base: &ModelConfig, train: &TrainConfig, data: &StudyData<'_>) -> Result<(RunResult, EvalReport)> {
    let cfg = TrainConfig { seed, ..train.clone() };
    let test_refs: Vec<&WindowInput> = data.test.iter().collect();
    let (history, report) = match variant {
        Variant::Alesal(ablation) => {
            let mut model = AlesalModel::new(ModelConfig { ablation, ..base.clone() }, seed)?;
            let h = fit(&mut model, data.train, data.train_labels, &cfg)?;
            (h, evaluate(&model, &test_refs, data.test_labels)?)
        }
        Variant::Dmlp => {
            let dim = base.pairs * base.series_len;
            let mut model = Dmlp::new(DmlpConfig { input_dim: dim, ..DmlpConfig::default() }, seed)?;
            let h = fit(&mut model, data.train, data.train_labels, &cfg)?;
            (h, evaluate(&model, &test_refs, data.test_labels)?)
        }
    };
    let run = RunResult {
        variant: variant.to_string(),
        seed,
        accuracy: report.accuracy,
        weighted_f1: report.weighted_f1,
        epochs: history.epochs.len(),
        best_epoch: history.best_epoch,
    };
    info!("{} seed {seed}: accuracy {:.4}, weighted F1 {:.2}", run.variant, run.accuracy, run.weighted_f1);
    Ok((run, report))
}

/// Every variant crossed with every seed, variant-major.
pub fn run_study(variants: &[Variant], seeds: &[u64], base: &ModelConfig, train: &TrainConfig, data: &StudyData<'_>) -> Result<Vec<RunResult>> {
    let mut out = Vec::with_capacity(variants.len() * seeds.len());
    for &v in variants {
        for &s in seeds {
            out.push(run_variant(v, s, base, train, data)?.0);
        }
    }
    Ok(out)
}

/// Mean accuracy and mean weighted F1 of one variant, `None` if it never ran.
pub fn variant_mean(runs: &[RunResult], variant: &str) -> Option<(f64, f64)> {
    let sel: Vec<&RunResult> = runs.iter().filter(|r| r.variant == variant).collect();
    if sel.is_empty() {
        return None;
    }
    let n = sel.len() as f64;
    Some((sel.iter().map(|r| r.accuracy).sum::<f64>() / n, sel.iter().map(|r| r.weighted_f1).sum::<f64>() / n))
}

/// Checks the expected mean-accuracy ordering of the attention ablations:
/// full ≥ ta-only ≥ none and full ≥ pa-only ≥ none. Returns one message per
/// violated or unmeasured relation.
pub fn ordering_violations(runs: &[RunResult]) -> Vec<String> {
    let mut out = Vec::new();
    for (hi, lo) in [("full", "ta-only"), ("ta-only", "none"), ("full", "pa-only"), ("pa-only", "none")] {
        match (variant_mean(runs, hi), variant_mean(runs, lo)) {
            (Some((a, _)), Some((b, _))) if a >= b => {}
            (Some((a, _)), Some((b, _))) => out.push(format!("{hi} mean accuracy {a:.4} < {lo} {b:.4}")),
            _ => out.push(format!("{hi} or {lo} missing from the study")),
        }
    }
    out
}

/// `variant,seed,accuracy,weighted_f1,epochs,best_epoch` rows.
pub fn runs_to_csv(runs: &[RunResult]) -> String {
    let mut s = String::from("variant,seed,accuracy,weighted_f1,epochs,best_epoch\n");
    for r in runs {
        s.push_str(&format!("{},{},{:.6},{:.6},{},{}\n", r.variant, r.seed, r.accuracy, r.weighted_f1, r.epochs, r.best_epoch));
    }
    s
}
