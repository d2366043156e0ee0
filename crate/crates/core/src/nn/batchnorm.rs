//! Batch normalisation over `[C × L]` feature maps, plus the conv block tail
//! (batch norm, ReLU, max pool) used by the morphology extractor.

use super::ops::{maxpool1d, maxpool1d_backward, relu, relu_backward};
use super::params::{join, Parameters};
use super::Tensor;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Learnable scale/shift plus running statistics for evaluation mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Option<Vec<f64>>,
    pub running_var: Option<Vec<f64>>,
}

impl Parameters for BatchNorm {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "gamma"), &self.gamma);
        f(join(prefix, "beta"), &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "gamma"), &mut self.gamma);
        f(join(prefix, "beta"), &mut self.beta);
    }
}

/// Batch statistics from one training forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance used for normalisation.
    pub var: Vec<f64>,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct BnCache {
    xhat: Vec<Tensor>,
    inv_std: Vec<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::filled(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: None,
            running_var: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Tensor) -> Result<(usize, usize)> {
        match *x.shape() {
            [c, l] if c == self.channels() => Ok((c, l)),
            _ => Err(Error::Shape(format!("batch norm over {} channels got {:?}", self.channels(), x.shape()))),
        }
    }

    /// Training-mode forward over a batch of `[C × L]` maps. Statistics are
    /// taken per channel across every sample and position.
    pub fn forward_train(&self, xs: &[Tensor]) -> Result<(Vec<Tensor>, BnCache, BatchStats)> {
        if xs.is_empty() {
            return Err(Error::Shape("batch norm over an empty batch".into()));
        }
        let (c, l) = self.check(&xs[0])?;
        for x in xs {
            self.check(x)?;
            if x.dim(1) != l {
                return Err(Error::Shape("batch norm inputs differ in length".into()));
            }
        }
        let count = xs.len() * l;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ch in 0..c {
            let s: f64 = xs.iter().map(|x| x.data()[ch * l..(ch + 1) * l].iter().sum::<f64>()).sum();
            mean[ch] = s / count as f64;
            let q: f64 = xs
                .iter()
                .map(|x| x.data()[ch * l..(ch + 1) * l].iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>())
                .sum();
            var[ch] = q / count as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = Vec::with_capacity(xs.len());
        let mut ys = Vec::with_capacity(xs.len());
        for x in xs {
            let mut h = x.clone();
            let mut y = x.clone();
            for ch in 0..c {
                for i in ch * l..(ch + 1) * l {
                    let v = (x.data()[i] - mean[ch]) * inv_std[ch];
                    h.data_mut()[i] = v;
                    y.data_mut()[i] = self.gamma.data()[ch] * v + self.beta.data()[ch];
                }
            }
            xhat.push(h);
            ys.push(y);
        }
        Ok((ys, BnCache { xhat, inv_std }, BatchStats { mean, var, count }))
    }

    /// Evaluation-mode forward with running statistics.
    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let (c, l) = self.check(x)?;
        let (Some(mean), Some(var)) = (&self.running_mean, &self.running_var) else {
            return Err(Error::UninitializedRunningStats("batch norm evaluated before any training batch".into()));
        };
        let mut y = x.clone();
        for ch in 0..c {
            let inv = 1.0 / (var[ch] + BN_EPS).sqrt();
            for v in &mut y.data_mut()[ch * l..(ch + 1) * l] {
                *v = self.gamma.data()[ch] * (*v - mean[ch]) * inv + self.beta.data()[ch];
            }
        }
        Ok(y)
    }

    /// Exponential moving average update; the running variance uses the
    /// unbiased estimate. The first update copies the batch statistics.
    pub fn update_running(&mut self, stats: &BatchStats) {
        let unbias = if stats.count > 1 { stats.count as f64 / (stats.count - 1) as f64 } else { 1.0 };
        let var: Vec<f64> = stats.var.iter().map(|v| v * unbias).collect();
        match (&mut self.running_mean, &mut self.running_var) {
            (Some(m), Some(v)) => {
                for ch in 0..m.len() {
                    m[ch] = (1.0 - BN_MOMENTUM) * m[ch] + BN_MOMENTUM * stats.mean[ch];
                    v[ch] = (1.0 - BN_MOMENTUM) * v[ch] + BN_MOMENTUM * var[ch];
                }
            }
            _ => {
                self.running_mean = Some(stats.mean.clone());
                self.running_var = Some(var);
            }
        }
    }

    /// Backward of [`BatchNorm::forward_train`]; accumulates into `grads`.
    pub fn backward_train(&self, cache: &BnCache, dys: &[Tensor], grads: &mut BatchNorm) -> Result<Vec<Tensor>> {
        if dys.len() != cache.xhat.len() {
            return Err(Error::Shape("batch norm backward: batch size differs".into()));
        }
        let (c, l) = self.check(&cache.xhat[0])?;
        let m = (dys.len() * l) as f64;
        let mut dxs: Vec<Tensor> = dys.iter().map(|d| d.zeros_like()).collect();
        for ch in 0..c {
            let range = ch * l..(ch + 1) * l;
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for (dy, xh) in dys.iter().zip(&cache.xhat) {
                for (g, h) in dy.data()[range.clone()].iter().zip(&xh.data()[range.clone()]) {
                    sum_dy += g;
                    sum_dy_xhat += g * h;
                }
            }
            grads.gamma.data_mut()[ch] += sum_dy_xhat;
            grads.beta.data_mut()[ch] += sum_dy;
            let k = self.gamma.data()[ch] * cache.inv_std[ch] / m;
            for ((dx, dy), xh) in dxs.iter_mut().zip(dys).zip(&cache.xhat) {
                for i in range.clone() {
                    dx.data_mut()[i] = k * (m * dy.data()[i] - sum_dy - xh.data()[i] * sum_dy_xhat);
                }
            }
        }
        Ok(dxs)
    }
}

/// Cache for the batch-norm → ReLU → max-pool block tail.
#[derive(Debug, Clone)]
pub struct BlockCache {
    bn: BnCache,
    pre_relu: Vec<Tensor>,
    argmax: Vec<Vec<usize>>,
}

pub const POOL_WINDOW: usize = 3;

/// Training-mode block tail over a batch; returns outputs, cache and the
/// batch statistics (for the caller to fold into running stats).
pub fn batchnorm_relu_maxpool_train(xs: &[Tensor], bn: &BatchNorm) -> Result<(Vec<Tensor>, BlockCache, BatchStats)> {
    let (normed, bn_cache, stats) = bn.forward_train(xs)?;
    let mut ys = Vec::with_capacity(xs.len());
    let mut argmax = Vec::with_capacity(xs.len());
    for n in &normed {
        let (y, idx) = maxpool1d(&relu(n), POOL_WINDOW)?;
        ys.push(y);
        argmax.push(idx);
    }
    Ok((ys, BlockCache { bn: bn_cache, pre_relu: normed, argmax }, stats))
}

/// Evaluation-mode block tail for one map.
pub fn batchnorm_relu_maxpool_eval(x: &Tensor, bn: &BatchNorm) -> Result<Tensor> {
    Ok(maxpool1d(&relu(&bn.forward_eval(x)?), POOL_WINDOW)?.0)
}

pub fn batchnorm_relu_maxpool_backward(cache: &BlockCache, dys: &[Tensor], bn: &BatchNorm, grads: &mut BatchNorm) -> Result<Vec<Tensor>> {
    let mut dnormed = Vec::with_capacity(dys.len());
    for ((dy, pre), idx) in dys.iter().zip(&cache.pre_relu).zip(&cache.argmax) {
        let d = maxpool1d_backward(pre.shape(), idx, dy)?;
        dnormed.push(relu_backward(pre, &d));
    }
    bn.backward_train(&cache.bn, &dnormed, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zeros_stay_zero() {
        let bn = BatchNorm::new(2);
        let (ys, _, _) = batchnorm_relu_maxpool_train(&[Tensor::zeros(&[2, 6]), Tensor::zeros(&[2, 6])], &bn).unwrap();
        assert!(ys.iter().all(|y| y.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn eval_before_training_fails() {
        let err = batchnorm_relu_maxpool_eval(&Tensor::zeros(&[2, 6]), &BatchNorm::new(2)).unwrap_err();
        assert!(err.to_string().contains("uninitialized running stats"));
    }

    #[test]
    fn training_output_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut bn = BatchNorm::new(3);
        bn.gamma = Tensor::vector(vec![1.0, 2.0, 0.5]);
        bn.beta = Tensor::vector(vec![0.0, -1.0, 3.0]);
        let xs: Vec<Tensor> = (0..8)
            .map(|_| Tensor::new(vec![3, 50], (0..150).map(|_| rng.random_range(-4.0..9.0)).collect()).unwrap())
            .collect();
        let (ys, _, stats) = bn.forward_train(&xs).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = ys.iter().flat_map(|y| y.data()[ch * 50..(ch + 1) * 50].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
            assert!((mean - bn.beta.data()[ch]).abs() < 1e-6);
            assert!((std - bn.gamma.data()[ch]).abs() < 1e-3);
        }
        bn.update_running(&stats);
        assert_eq!(bn.running_mean.as_ref().unwrap(), &stats.mean);
        assert!(bn.forward_eval(&xs[0]).is_ok());
    }
}
