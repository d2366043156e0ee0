//! Confusion-matrix metrics and the fully connected (DMLP) comparison baseline.

use std::fmt::Write as _;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::csi_data::SleepClass;
use crate::error::{Error, Result};
use crate::model::{argmax, BatchResult, Trainable, WindowInput};
use crate::nn::ops::{dense, dense_backward, relu, relu_backward, softmax_rows};
use crate::nn::params::{join, zeros_like};
use crate::nn::{softmax_cross_entropy, Checkpoint, Parameters, Tensor};
use crate::NUM_CLASSES;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `confusion[true][predicted]`.
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
    pub per_class: [ClassMetrics; NUM_CLASSES],
    /// Fraction in `[0, 1]`.
    pub accuracy: f64,
    /// Support-weighted F1 in `[0, 100]`.
    pub weighted_f1: f64,
    /// Unweighted mean F1 in `[0, 100]`.
    pub macro_f1: f64,
    pub warnings: Vec<String>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalReport {
    pub fn from_confusion(confusion: [[usize; NUM_CLASSES]; NUM_CLASSES]) -> Result<Self> {
        let total: usize = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::Eval("empty test set".into()));
        }
        let mut warnings = Vec::new();
        let mut per_class = [ClassMetrics { precision: 0.0, recall: 0.0, f1: 0.0, support: 0 }; NUM_CLASSES];
        for c in 0..NUM_CLASSES {
            let tp = confusion[c][c];
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = (0..NUM_CLASSES).map(|r| confusion[r][c]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
            if support == 0 {
                let name = SleepClass::from_index(c).expect("class index").name();
                let msg = format!("class {name} absent from the test set; its F1 is 0");
                warn!("{msg}");
                warnings.push(msg);
            }
            per_class[c] = ClassMetrics { precision, recall, f1, support };
        }
        let trace: usize = (0..NUM_CLASSES).map(|c| confusion[c][c]).sum();
        let weighted = per_class.iter().map(|m| m.support as f64 * m.f1).sum::<f64>() / total as f64;
        let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / NUM_CLASSES as f64;
        Ok(Self { confusion, per_class, accuracy: ratio(trace, total), weighted_f1: 100.0 * weighted, macro_f1: 100.0 * macro_f1, warnings })
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Eval(format!("{} labels but {} predictions", truth.len(), predicted.len())));
        }
        let mut confusion = [[0; NUM_CLASSES]; NUM_CLASSES];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= NUM_CLASSES || p >= NUM_CLASSES {
                return Err(Error::Eval(format!("class index out of range ({t}, {p})")));
            }
            confusion[t][p] += 1;
        }
        Self::from_confusion(confusion)
    }

    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    /// Machine-readable report: one `metric,class,value` row per value.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,class,value\n");
        let _ = writeln!(s, "accuracy,all,{:.6}", self.accuracy);
        let _ = writeln!(s, "weighted_f1,all,{:.6}", self.weighted_f1);
        let _ = writeln!(s, "macro_f1,all,{:.6}", self.macro_f1);
        for class in SleepClass::ALL {
            let m = &self.per_class[class.index()];
            let n = class.name();
            let _ = writeln!(s, "precision,{n},{:.6}", m.precision);
            let _ = writeln!(s, "recall,{n},{:.6}", m.recall);
            let _ = writeln!(s, "f1,{n},{:.6}", m.f1);
            let _ = writeln!(s, "support,{n},{}", m.support);
        }
        for t in SleepClass::ALL {
            for p in SleepClass::ALL {
                let _ = writeln!(s, "confusion_{},{},{}", t.name(), p.name(), self.confusion[t.index()][p.index()]);
            }
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "windows {}  accuracy {:.2}%  weighted F1 {:.2}  macro F1 {:.2}\n",
            self.total(),
            100.0 * self.accuracy,
            self.weighted_f1,
            self.macro_f1
        );
        let _ = writeln!(s, "{:>8} {:>9} {:>7} {:>7} {:>7}", "class", "precision", "recall", "f1", "support");
        for class in SleepClass::ALL {
            let m = &self.per_class[class.index()];
            let _ = writeln!(s, "{:>8} {:>9.3} {:>7.3} {:>7.3} {:>7}", class.name(), m.precision, m.recall, m.f1, m.support);
        }
        let _ = writeln!(s, "confusion (rows true, columns predicted):");
        for row in &self.confusion {
            let _ = writeln!(s, "  {:>5} {:>5} {:>5}", row[0], row[1], row[2]);
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }
}

/// Evaluates a trained classifier on a labeled test set.
pub fn evaluate<M: Trainable>(model: &M, inputs: &[&M::Input], labels: &[usize]) -> Result<EvalReport> {
    if inputs.is_empty() {
        return Err(Error::Eval("empty test set".into()));
    }
    let probs = model.predict_proba(inputs)?;
    let predicted: Vec<usize> = probs.iter().map(argmax).collect();
    EvalReport::from_predictions(labels, &predicted)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DmlpConfig {
    pub input_dim: usize,
    pub hidden: [usize; 3],
}

impl Default for DmlpConfig {
    fn default() -> Self {
        Self { input_dim: 800, hidden: [256, 128, 64] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub w: Tensor,
    pub b: Tensor,
}

impl Parameters for DenseLayer {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "w"), &self.w);
        f(join(prefix, "b"), &self.b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "w"), &mut self.w);
        f(join(prefix, "b"), &mut self.b);
    }
}

/// MLP over the concatenated per-pair amplitude series: three ReLU hidden
/// layers and a 3-way output.
#[derive(Debug, Clone, PartialEq)]
pub struct Dmlp {
    pub config: DmlpConfig,
    pub layers: Vec<DenseLayer>,
    /// Input scale fitted on the training set (inputs are divided by it).
    pub input_rms: f64,
}

impl Dmlp {
    pub fn new(config: DmlpConfig, seed: u64) -> Result<Self> {
        if config.input_dim == 0 || config.hidden.contains(&0) {
            return Err(Error::Model("baseline layer sizes must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![config.input_dim];
        dims.extend(config.hidden);
        dims.push(NUM_CLASSES);
        let layers = dims
            .windows(2)
            .map(|d| DenseLayer { w: Tensor::uniform(&[d[0], d[1]], d[0], &mut rng), b: Tensor::uniform(&[d[1]], d[0], &mut rng) })
            .collect();
        Ok(Self { config, layers, input_rms: 1.0 })
    }

    fn input_matrix(&self, inputs: &[&WindowInput]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(inputs.len() * self.config.input_dim);
        for x in inputs {
            let flat = x.flat_series();
            if flat.len() != self.config.input_dim {
                return Err(Error::Shape(format!("baseline expects {} inputs, window has {}", self.config.input_dim, flat.len())));
            }
            data.extend(flat.iter().map(|v| v / self.input_rms));
        }
        Tensor::new(vec![inputs.len(), self.config.input_dim], data)
    }

    /// Returns pre-activations of every layer; the last one is the logits.
    fn forward(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            let z = dense(&a, &l.w, &l.b)?;
            if i + 1 < self.layers.len() {
                a = relu(&z);
            }
            pre.push(z);
        }
        Ok(pre)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new();
        ck.add_text("kind", "dmlp")?;
        ck.add_text("config", &serde_json::to_string(&self.config).map_err(|e| Error::Checkpoint(e.to_string()))?)?;
        ck.add_f64("input_norm", &[1], &[self.input_rms])?;
        ck.add_params("params", &self.layers)?;
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.text("kind")? != "dmlp" {
            return Err(Error::Checkpoint("not a baseline checkpoint".into()));
        }
        let config: DmlpConfig = serde_json::from_str(&ck.text("config")?).map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
        let mut m = Self::new(config, 0)?;
        m.input_rms = *ck.f64s("input_norm")?.1.first().ok_or_else(|| Error::Checkpoint("empty input_norm".into()))?;
        ck.load_params("params", &mut m.layers)?;
        Ok(m)
    }
}

impl Trainable for Dmlp {
    type Input = WindowInput;
    type Params = Vec<DenseLayer>;

    fn params(&self) -> &Vec<DenseLayer> {
        &self.layers
    }

    fn params_mut(&mut self) -> &mut Vec<DenseLayer> {
        &mut self.layers
    }

    fn prepare(&mut self, inputs: &[&WindowInput]) {
        let (sq, n) = inputs.iter().flat_map(|x| x.series.iter().flatten()).fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
        let rms = (sq / n.max(1) as f64).sqrt();
        self.input_rms = if rms > 1e-12 && rms.is_finite() { rms } else { 1.0 };
    }

    fn batch_gradients(&mut self, inputs: &[&WindowInput], labels: &[usize]) -> Result<BatchResult<Vec<DenseLayer>>> {
        let x = self.input_matrix(inputs)?;
        let pre = self.forward(&x)?;
        let ce = softmax_cross_entropy(pre.last().expect("output layer"), labels)?;
        let correct = (0..labels.len())
            .filter(|&i| {
                let r = ce.probs.row(i);
                argmax(&[r[0], r[1], r[2]]) == labels[i]
            })
            .count();
        let mut grads = zeros_like(&self.layers);
        let mut dz = ce.dlogits;
        for i in (0..self.layers.len()).rev() {
            let a = if i == 0 { x.clone() } else { relu(&pre[i - 1]) };
            let g = &mut grads[i];
            let da = dense_backward(&a, &self.layers[i].w, &dz, &mut g.w, &mut g.b)?;
            if i > 0 {
                dz = relu_backward(&pre[i - 1], &da);
            }
        }
        Ok(BatchResult { loss: ce.loss, correct, grads })
    }

    fn predict_proba(&self, inputs: &[&WindowInput]) -> Result<Vec<[f64; NUM_CLASSES]>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let pre = self.forward(&self.input_matrix(inputs)?)?;
        let probs = softmax_rows(pre.last().expect("output layer"))?;
        Ok((0..inputs.len())
            .map(|i| {
                let r = probs.row(i);
                [r[0], r[1], r[2]]
            })
            .collect())
    }
}
