use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, WindowInput};
use crate::csi_data::SleepClass;
use crate::error::{Error, Result};
use crate::nn::ops::{conv1d, conv1d_backward, dense, dense_backward, global_average_pool, global_average_pool_backward, relu, relu_backward, same_padding, sigmoid, sigmoid_backward, softmax_rows};
use crate::nn::params::{add_assign, join, zeros_like, Parameters};
use crate::nn::{
    batchnorm_relu_maxpool_backward, batchnorm_relu_maxpool_eval, batchnorm_relu_maxpool_train, gru_backward, gru_forward,
    pooled_projection, pooled_projection_backward, self_attention_residual, self_attention_residual_backward, AttentionCache,
    AttentionParams, BatchNorm, BatchStats, BlockCache, Checkpoint, GruCache, GruParams, Tensor,
};
use crate::NUM_CLASSES;

/// One morphology extractor: two conv → batch norm → ReLU → max-pool blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct MeParams {
    pub conv1: Tensor,
    pub bn1: BatchNorm,
    pub conv2: Tensor,
    pub bn2: BatchNorm,
}

impl Parameters for MeParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "conv1"), &self.conv1);
        self.bn1.visit(&join(prefix, "bn1"), f);
        f(join(prefix, "conv2"), &self.conv2);
        self.bn2.visit(&join(prefix, "bn2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "conv1"), &mut self.conv1);
        self.bn1.visit_mut(&join(prefix, "bn1"), f);
        f(join(prefix, "conv2"), &mut self.conv2);
        self.bn2.visit_mut(&join(prefix, "bn2"), f);
    }
}

/// Channel attention over the concatenated extractor outputs plus the
/// projection of the weighted, flattened features to the latent `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairAttentionParams {
    /// `[1 × 1 × k]` kernel sliding over the pooled channel vector.
    pub eca: Tensor,
    pub wd: Tensor,
    pub bd: Tensor,
}

impl Parameters for PairAttentionParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "eca"), &self.eca);
        f(join(prefix, "wd"), &self.wd);
        f(join(prefix, "bd"), &self.bd);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "eca"), &mut self.eca);
        f(join(prefix, "wd"), &mut self.wd);
        f(join(prefix, "bd"), &mut self.bd);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl Parameters for HeadParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        for (n, t) in [("w1", &self.w1), ("b1", &self.b1), ("w2", &self.w2), ("b2", &self.b2)] {
            f(join(prefix, n), t);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        for (n, t) in [("w1", &mut self.w1), ("b1", &mut self.b1), ("w2", &mut self.w2), ("b2", &mut self.b2)] {
            f(join(prefix, n), t);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlesalParams {
    /// One per pair; empty when the amplitude branch is off.
    pub me: Vec<MeParams>,
    pub pair_attention: Option<PairAttentionParams>,
    /// One per pair, or a single shared GRU; empty when the spectrum branch is off.
    pub gru: Vec<GruParams>,
    pub time_attention: Vec<AttentionParams>,
    pub head: HeadParams,
}

impl Parameters for AlesalParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.me.visit(&join(prefix, "me"), f);
        self.pair_attention.visit(&join(prefix, "pair_attention"), f);
        self.gru.visit(&join(prefix, "gru"), f);
        self.time_attention.visit(&join(prefix, "time_attention"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.me.visit_mut(&join(prefix, "me"), f);
        self.pair_attention.visit_mut(&join(prefix, "pair_attention"), f);
        self.gru.visit_mut(&join(prefix, "gru"), f);
        self.time_attention.visit_mut(&join(prefix, "time_attention"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

/// Fixed input scaling fitted on the training set (inputs are divided by these).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub series_rms: f64,
    pub spectrum_rms: f64,
}

impl Default for InputNorm {
    fn default() -> Self {
        Self { series_rms: 1.0, spectrum_rms: 1.0 }
    }
}

impl InputNorm {
    pub fn fit<'a>(inputs: impl IntoIterator<Item = &'a WindowInput>) -> Self {
        let (mut s2, mut sn, mut m2, mut mn) = (0.0, 0usize, 0.0, 0usize);
        for x in inputs {
            for s in &x.series {
                s2 += s.iter().map(|v| v * v).sum::<f64>();
                sn += s.len();
            }
            for m in &x.spectrograms {
                m2 += m.data().iter().map(|v| v * v).sum::<f64>();
                mn += m.len();
            }
        }
        let rms = |sq: f64, n: usize| {
            let r = (sq / n.max(1) as f64).sqrt();
            if r > 1e-12 && r.is_finite() {
                r
            } else {
                1.0
            }
        };
        Self { series_rms: rms(s2, sn), spectrum_rms: rms(m2, mn) }
    }
}

/// Output of inference on one window.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: [f64; NUM_CLASSES],
    pub class: SleepClass,
    /// Per pair `[frames × frames]`, present when time attention is active.
    pub time_attention: Option<Vec<Tensor>>,
    /// Channel weights `[N]`, present when pair attention is active.
    pub pair_weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
struct MeCache {
    x: Vec<Tensor>,
    pooled1: Vec<Tensor>,
    block1: BlockCache,
    block2: BlockCache,
}

#[derive(Debug, Clone)]
struct TimeCache {
    gru: GruCache,
    hidden: Tensor,
    attention: Option<AttentionCache>,
}

#[derive(Debug, Clone)]
struct PaCache {
    e: Tensor,
    /// Channel weights after the sigmoid, `None` when pair attention is off.
    w: Option<Tensor>,
    weighted: Tensor,
}

#[derive(Debug, Clone)]
struct SampleCache {
    time: Vec<TimeCache>,
    pa: Option<PaCache>,
}

/// Everything a training forward pass keeps for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchForward {
    pub logits: Tensor,
    z: Tensor,
    h1: Tensor,
    samples: Vec<SampleCache>,
    me: Vec<MeCache>,
    me_stats: Vec<(BatchStats, BatchStats)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlesalModel {
    pub config: ModelConfig,
    pub params: AlesalParams,
    pub input_norm: InputNorm,
}

impl AlesalModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ab = config.ablation;
        let c = config.me_channels;
        let k = config.me_kernel;
        let me = if ab.uses_amplitude() {
            (0..config.pairs)
                .map(|_| MeParams {
                    conv1: Tensor::uniform(&[c, 1, k], k, &mut rng),
                    bn1: BatchNorm::new(c),
                    conv2: Tensor::uniform(&[c, c, k], c * k, &mut rng),
                    bn2: BatchNorm::new(c),
                })
                .collect()
        } else {
            Vec::new()
        };
        let pair_attention = ab.uses_amplitude().then(|| {
            let ek = config.eca_kernel();
            let flat = config.channels() * config.me_out_len();
            PairAttentionParams {
                eca: Tensor::uniform(&[1, 1, ek], ek, &mut rng),
                wd: Tensor::uniform(&[flat, config.pair_latent], flat, &mut rng),
                bd: Tensor::uniform(&[config.pair_latent], flat, &mut rng),
            }
        });
        let (gru, time_attention) = if ab.uses_spectrum() {
            let n_gru = if config.shared_gru { 1 } else { config.pairs };
            let gru = (0..n_gru).map(|_| GruParams::new(config.bins, config.gru_hidden, &mut rng)).collect();
            let att = (0..config.pairs)
                .map(|_| AttentionParams::new(config.gru_hidden, config.d_k, config.time_latent, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            (gru, att)
        } else {
            (Vec::new(), Vec::new())
        };
        let hin = config.head_input();
        let head = HeadParams {
            w1: Tensor::uniform(&[hin, config.head_hidden], hin, &mut rng),
            b1: Tensor::uniform(&[config.head_hidden], hin, &mut rng),
            w2: Tensor::uniform(&[config.head_hidden, NUM_CLASSES], config.head_hidden, &mut rng),
            b2: Tensor::uniform(&[NUM_CLASSES], config.head_hidden, &mut rng),
        };
        Ok(Self { config, params: AlesalParams { me, pair_attention, gru, time_attention, head }, input_norm: InputNorm::default() })
    }

    fn gru_for(&self, pair: usize) -> usize {
        pair.min(self.params.gru.len().saturating_sub(1))
    }

    pub fn check_input(&self, x: &WindowInput) -> Result<()> {
        let c = &self.config;
        if x.series.len() != c.pairs || x.spectrograms.len() != c.pairs {
            return Err(Error::Shape(format!("window has {} pairs, model expects {}", x.series.len(), c.pairs)));
        }
        for (s, m) in x.series.iter().zip(&x.spectrograms) {
            if s.len() != c.series_len {
                return Err(Error::Shape(format!("series length {} vs model {}", s.len(), c.series_len)));
            }
            if m.shape() != [c.frames, c.bins] {
                return Err(Error::Shape(format!("spectrogram {:?} vs model [{}, {}]", m.shape(), c.frames, c.bins)));
            }
        }
        Ok(())
    }

    fn series_tensor(&self, x: &WindowInput, pair: usize) -> Tensor {
        let scale = 1.0 / self.input_norm.series_rms;
        Tensor::new(vec![1, self.config.series_len], x.series[pair].iter().map(|v| v * scale).collect()).expect("checked length")
    }

    fn spectrum_tensor(&self, x: &WindowInput, pair: usize) -> Tensor {
        let mut m = x.spectrograms[pair].clone();
        m.scale(1.0 / self.input_norm.spectrum_rms);
        m
    }

    /// Extractor outputs `[C × L]` per sample for one pair.
    fn me_forward(&self, pair: usize, xs: Vec<Tensor>, train: bool) -> Result<(Vec<Tensor>, Option<(MeCache, BatchStats, BatchStats)>)> {
        let me = &self.params.me[pair];
        let pad = same_padding(self.config.me_kernel)?;
        let a1 = xs.par_iter().map(|x| conv1d(x, &me.conv1, None, 1, pad)).collect::<Result<Vec<_>>>()?;
        if train {
            let (pooled1, block1, s1) = batchnorm_relu_maxpool_train(&a1, &me.bn1)?;
            let a2 = pooled1.par_iter().map(|x| conv1d(x, &me.conv2, None, 1, pad)).collect::<Result<Vec<_>>>()?;
            let (out, block2, s2) = batchnorm_relu_maxpool_train(&a2, &me.bn2)?;
            Ok((out, Some((MeCache { x: xs, pooled1, block1, block2 }, s1, s2))))
        } else {
            let out = a1
                .par_iter()
                .map(|a| {
                    let p1 = batchnorm_relu_maxpool_eval(a, &me.bn1)?;
                    batchnorm_relu_maxpool_eval(&conv1d(&p1, &me.conv2, None, 1, pad)?, &me.bn2)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((out, None))
        }
    }

    /// Concatenates per-pair extractor maps into `Ẽ: [N × L]`.
    fn concat_maps(&self, maps: &[&Tensor]) -> Result<Tensor> {
        let l = self.config.me_out_len();
        let n = self.config.channels();
        let mut data = Vec::with_capacity(n * l);
        for m in maps {
            data.extend_from_slice(m.data());
        }
        Tensor::new(vec![n, l], data)
    }

    /// Pair attention on `Ẽ: [N × L]`: returns the latent `u` and the channel
    /// weights (`None` when pair attention is off).
    pub fn pair_attention(&self, e: &Tensor) -> Result<(Tensor, Option<Vec<f64>>)> {
        if self.params.pair_attention.is_none() {
            return Err(Error::Model("amplitude branch is disabled".into()));
        }
        if e.shape() != [self.config.channels(), self.config.me_out_len()] {
            return Err(Error::Shape(format!("pair attention input {:?}", e.shape())));
        }
        let (u, cache) = self.pair_attention_forward(e.clone())?;
        Ok((u, cache.w.map(|w| w.into_data())))
    }

    /// Concatenated extractor maps `Ẽ` for each input. With `batch_stats`
    /// batch norm normalises with the statistics of `inputs` (training
    /// mode); otherwise it uses the running statistics.
    pub fn extractor_maps(&self, inputs: &[&WindowInput], batch_stats: bool) -> Result<Vec<Tensor>> {
        if !self.config.ablation.uses_amplitude() {
            return Err(Error::Model("amplitude branch is disabled".into()));
        }
        for x in inputs {
            self.check_input(x)?;
        }
        let mut per_pair = Vec::with_capacity(self.config.pairs);
        for p in 0..self.config.pairs {
            let xs = inputs.iter().map(|x| self.series_tensor(x, p)).collect();
            per_pair.push(self.me_forward(p, xs, batch_stats)?.0);
        }
        (0..inputs.len()).map(|i| self.concat_maps(&per_pair.iter().map(|m| &m[i]).collect::<Vec<_>>())).collect()
    }

    fn pair_attention_forward(&self, e: Tensor) -> Result<(Tensor, PaCache)> {
        let pa = self.params.pair_attention.as_ref().expect("amplitude branch active");
        let l = self.config.me_out_len();
        let n = self.config.channels();
        let (w, weighted) = if self.config.ablation.with_pa {
            let pooled = global_average_pool(&e)?.reshape(&[1, n])?;
            let k = pa.eca.dim(2);
            let s = conv1d(&pooled, &pa.eca, None, 1, same_padding(k)?)?;
            let w = sigmoid(&s).reshape(&[n])?;
            let mut weighted = e.clone();
            for c in 0..n {
                let wc = w.data()[c];
                weighted.data_mut()[c * l..(c + 1) * l].iter_mut().for_each(|v| *v *= wc);
            }
            (Some(w), weighted)
        } else {
            (None, e.clone())
        };
        let flat = weighted.clone().reshape(&[n * l])?;
        let u = dense(&flat, &pa.wd, &pa.bd)?;
        Ok((u, PaCache { e, w, weighted: flat }))
    }

    /// Returns `dE` as `[N × L]`.
    fn pair_attention_backward(&self, cache: &PaCache, du: &Tensor, grads: &mut PairAttentionParams) -> Result<Tensor> {
        let pa = self.params.pair_attention.as_ref().expect("amplitude branch active");
        let l = self.config.me_out_len();
        let n = self.config.channels();
        let dflat = dense_backward(&cache.weighted, &pa.wd, du, &mut grads.wd, &mut grads.bd)?;
        let Some(w) = &cache.w else {
            return dflat.reshape(&[n, l]);
        };
        let mut de = Tensor::zeros(&[n, l]);
        let mut dw = Tensor::zeros(&[n]);
        for c in 0..n {
            let wc = w.data()[c];
            let mut acc = 0.0;
            for i in c * l..(c + 1) * l {
                de.data_mut()[i] = dflat.data()[i] * wc;
                acc += dflat.data()[i] * cache.e.data()[i];
            }
            dw.data_mut()[c] = acc;
        }
        let ds = sigmoid_backward(w, &dw).reshape(&[1, n])?;
        let pooled = global_average_pool(&cache.e)?.reshape(&[1, n])?;
        let k = pa.eca.dim(2);
        let dpooled = conv1d_backward(&pooled, &pa.eca, &ds, 1, same_padding(k)?, &mut grads.eca, None)?;
        let dgap = global_average_pool_backward(&[n, l], &dpooled.reshape(&[n])?);
        de.add_assign(&dgap)?;
        Ok(de)
    }

    fn time_forward(&self, pair: usize, spec: &Tensor) -> Result<(Tensor, TimeCache)> {
        let gru = &self.params.gru[self.gru_for(pair)];
        let att = &self.params.time_attention[pair];
        let (hidden, gcache) = gru_forward(spec, gru, &vec![0.0; gru.hidden_dim])?;
        if self.config.ablation.with_ta {
            let (r, acache) = self_attention_residual(&hidden, att)?;
            Ok((r, TimeCache { gru: gcache, hidden, attention: Some(acache) }))
        } else {
            let r = pooled_projection(&hidden, att)?;
            Ok((r, TimeCache { gru: gcache, hidden, attention: None }))
        }
    }

    fn time_backward(&self, pair: usize, cache: &TimeCache, dr: &Tensor, grads: &mut AlesalParams) -> Result<()> {
        let gi = self.gru_for(pair);
        let att = &self.params.time_attention[pair];
        let dhidden = match &cache.attention {
            Some(a) => self_attention_residual_backward(att, a, dr, &mut grads.time_attention[pair])?,
            None => pooled_projection_backward(&cache.hidden, att, dr, &mut grads.time_attention[pair])?,
        };
        gru_backward(&self.params.gru[gi], &cache.gru, &dhidden, &mut grads.gru[gi])?;
        Ok(())
    }

    /// Per-sample part of the forward pass: time branches and pair attention.
    /// Returns the head input row and the cache.
    fn sample_forward(&self, x: &WindowInput, maps: Option<Vec<&Tensor>>) -> Result<(Vec<f64>, SampleCache)> {
        let mut z = Vec::with_capacity(self.config.head_input());
        let mut time = Vec::new();
        if self.config.ablation.uses_spectrum() {
            for p in 0..self.config.pairs {
                let (r, c) = self.time_forward(p, &self.spectrum_tensor(x, p))?;
                z.extend_from_slice(r.data());
                time.push(c);
            }
        }
        let pa = match maps {
            Some(m) => {
                let (u, c) = self.pair_attention_forward(self.concat_maps(&m)?)?;
                z.extend_from_slice(u.data());
                Some(c)
            }
            None => None,
        };
        Ok((z, SampleCache { time, pa }))
    }

    /// Forward pass over a batch. In training mode batch norm uses batch
    /// statistics (returned for the running-average update); otherwise it
    /// uses running statistics.
    pub fn forward_batch(&self, inputs: &[&WindowInput], train: bool) -> Result<BatchForward> {
        if inputs.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        for x in inputs {
            self.check_input(x)?;
        }
        let b = inputs.len();
        let mut me_out: Vec<Vec<Tensor>> = Vec::new();
        let mut me_caches = Vec::new();
        let mut me_stats = Vec::new();
        if self.config.ablation.uses_amplitude() {
            for p in 0..self.config.pairs {
                let xs = inputs.iter().map(|x| self.series_tensor(x, p)).collect();
                let (out, cache) = self.me_forward(p, xs, train)?;
                me_out.push(out);
                if let Some((c, s1, s2)) = cache {
                    me_caches.push(c);
                    me_stats.push((s1, s2));
                }
            }
        }
        let per_sample = (0..b)
            .into_par_iter()
            .map(|i| {
                let maps = (!me_out.is_empty()).then(|| me_out.iter().map(|m| &m[i]).collect());
                self.sample_forward(inputs[i], maps)
            })
            .collect::<Result<Vec<_>>>()?;
        let hin = self.config.head_input();
        let mut zdata = Vec::with_capacity(b * hin);
        let mut samples = Vec::with_capacity(b);
        for (z, c) in per_sample {
            zdata.extend(z);
            samples.push(c);
        }
        let z = Tensor::new(vec![b, hin], zdata)?;
        let head = &self.params.head;
        let h1 = dense(&z, &head.w1, &head.b1)?;
        let logits = dense(&relu(&h1), &head.w2, &head.b2)?;
        Ok(BatchForward { logits, z, h1, samples, me: me_caches, me_stats })
    }

    /// Folds the batch statistics of a training forward pass into the
    /// batch-norm running averages.
    pub fn update_running_stats(&mut self, fwd: &BatchForward) {
        for (me, (s1, s2)) in self.params.me.iter_mut().zip(&fwd.me_stats) {
            me.bn1.update_running(s1);
            me.bn2.update_running(s2);
        }
    }

    /// Backward pass of a training-mode [`forward_batch`](Self::forward_batch)
    /// given `dL/dlogits`. Returns gradients with the parameter structure.
    pub fn backward_batch(&self, fwd: &BatchForward, dlogits: &Tensor) -> Result<AlesalParams> {
        let b = fwd.samples.len();
        let mut grads = zeros_like(&self.params);
        let head = &self.params.head;
        let a1 = relu(&fwd.h1);
        let da1 = dense_backward(&a1, &head.w2, dlogits, &mut grads.head.w2, &mut grads.head.b2)?;
        let dh1 = relu_backward(&fwd.h1, &da1);
        let dz = dense_backward(&fwd.z, &head.w1, &dh1, &mut grads.head.w1, &mut grads.head.b1)?;

        let hin = self.config.head_input();
        let tl = self.config.time_latent;
        let template = {
            let mut g = zeros_like(&self.params);
            g.me.clear();
            g
        };
        let per_sample = (0..b)
            .into_par_iter()
            .map(|i| -> Result<(AlesalParams, Option<Tensor>)> {
                let row = &dz.data()[i * hin..(i + 1) * hin];
                let cache = &fwd.samples[i];
                let mut g = template.clone();
                let mut offset = 0;
                for (p, tc) in cache.time.iter().enumerate() {
                    let dr = Tensor::vector(row[offset..offset + tl].to_vec());
                    self.time_backward(p, tc, &dr, &mut g)?;
                    offset += tl;
                }
                let de = match &cache.pa {
                    Some(pc) => {
                        let du = Tensor::vector(row[offset..].to_vec());
                        Some(self.pair_attention_backward(pc, &du, g.pair_attention.as_mut().expect("branch active"))?)
                    }
                    None => None,
                };
                Ok((g, de))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut de_all = Vec::with_capacity(b);
        let mut rest = {
            let mut g = grads.clone();
            g.me.clear();
            g
        };
        for (g, de) in per_sample {
            add_assign(&mut rest, &g)?;
            de_all.push(de);
        }
        rest.me = std::mem::take(&mut grads.me);
        let mut grads = rest;

        if self.config.ablation.uses_amplitude() {
            let c = self.config.me_channels;
            let l = self.config.me_out_len();
            let pad = same_padding(self.config.me_kernel)?;
            for p in 0..self.config.pairs {
                let me = &self.params.me[p];
                let cache = &fwd.me[p];
                let dys: Vec<Tensor> = de_all
                    .iter()
                    .map(|de| {
                        let de = de.as_ref().expect("amplitude branch active");
                        Tensor::new(vec![c, l], de.data()[p * c * l..(p + 1) * c * l].to_vec())
                    })
                    .collect::<Result<_>>()?;
                let gme = &mut grads.me[p];
                let da2 = batchnorm_relu_maxpool_backward(&cache.block2, &dys, &me.bn2, &mut gme.bn2)?;
                let conv2_back = cache
                    .pooled1
                    .par_iter()
                    .zip(&da2)
                    .map(|(x, dy)| {
                        let mut dk = me.conv2.zeros_like();
                        let dx = conv1d_backward(x, &me.conv2, dy, 1, pad, &mut dk, None)?;
                        Ok((dx, dk))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let mut dp1 = Vec::with_capacity(b);
                for (dx, dk) in conv2_back {
                    gme.conv2.add_assign(&dk)?;
                    dp1.push(dx);
                }
                let da1 = batchnorm_relu_maxpool_backward(&cache.block1, &dp1, &me.bn1, &mut gme.bn1)?;
                let dks = cache
                    .x
                    .par_iter()
                    .zip(&da1)
                    .map(|(x, dy)| {
                        let mut dk = me.conv1.zeros_like();
                        conv1d_backward(x, &me.conv1, dy, 1, pad, &mut dk, None)?;
                        Ok(dk)
                    })
                    .collect::<Result<Vec<_>>>()?;
                for dk in dks {
                    gme.conv1.add_assign(&dk)?;
                }
            }
        }
        Ok(grads)
    }

    /// Evaluation-mode inference on a batch, with attention diagnostics.
    pub fn predict_batch(&self, inputs: &[&WindowInput]) -> Result<Vec<Prediction>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let fwd = self.forward_batch(inputs, false)?;
        let probs = softmax_rows(&fwd.logits)?;
        let ab = self.config.ablation;
        Ok(fwd
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let row = probs.row(i);
                let p = [row[0], row[1], row[2]];
                let best = super::train::argmax(&p);
                let time_attention = (ab.with_ta && ab.uses_spectrum())
                    .then(|| s.time.iter().map(|t| t.attention.as_ref().expect("attention active").attention()).collect());
                let pair_weights = s.pa.as_ref().and_then(|pa| pa.w.as_ref()).map(|w| w.data().to_vec());
                Prediction { probs: p, class: SleepClass::from_index(best).expect("valid index"), time_attention, pair_weights }
            })
            .collect())
    }

    pub fn predict(&self, input: &WindowInput) -> Result<Prediction> {
        Ok(self.predict_batch(&[input])?.remove(0))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new();
        ck.add_text("kind", "alesal")?;
        ck.add_text("config", &serde_json::to_string(&self.config).map_err(|e| Error::Checkpoint(e.to_string()))?)?;
        ck.add_f64("input_norm", &[2], &[self.input_norm.series_rms, self.input_norm.spectrum_rms])?;
        ck.add_params("params", &self.params)?;
        for (p, me) in self.params.me.iter().enumerate() {
            for (name, bn) in [("bn1", &me.bn1), ("bn2", &me.bn2)] {
                if let (Some(m), Some(v)) = (&bn.running_mean, &bn.running_var) {
                    ck.add_f64(&format!("state.me.{p}.{name}.running_mean"), &[m.len()], m)?;
                    ck.add_f64(&format!("state.me.{p}.{name}.running_var"), &[v.len()], v)?;
                }
            }
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.text("kind")? != "alesal" {
            return Err(Error::Checkpoint("not an attention-network checkpoint".into()));
        }
        let config: ModelConfig = serde_json::from_str(&ck.text("config")?).map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
        let mut model = Self::new(config, 0)?;
        let (_, norm) = ck.f64s("input_norm")?;
        if norm.len() != 2 {
            return Err(Error::Checkpoint("input_norm must hold two values".into()));
        }
        model.input_norm = InputNorm { series_rms: norm[0], spectrum_rms: norm[1] };
        ck.load_params("params", &mut model.params)?;
        for (p, me) in model.params.me.iter_mut().enumerate() {
            for (name, bn) in [("bn1", &mut me.bn1), ("bn2", &mut me.bn2)] {
                let key = format!("state.me.{p}.{name}.running_mean");
                if ck.contains(&key) {
                    bn.running_mean = Some(ck.f64s(&key)?.1);
                    bn.running_var = Some(ck.f64s(&format!("state.me.{p}.{name}.running_var"))?.1);
                }
            }
        }
        Ok(model)
    }
}
