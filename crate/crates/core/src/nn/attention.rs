//! Single-head scaled dot-product self-attention with a residual connection,
//! followed by an output projection and a time-mean:
//!
//! ```text
//! A = softmax((R W_q + b_q)(R W_k + b_k)ᵀ / √d_k)
//! r = mean_t ((A (R W_v + b_v) + R) W_D + b_D)
//! ```

use rand::Rng;

use super::ops::{outer_acc, softmax_in_place, vec_mat_acc, vec_mat_t_acc};
use super::params::{join, Parameters};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub d_model: usize,
    pub d_k: usize,
    pub d_out: usize,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub bq: Tensor,
    pub bk: Tensor,
    pub bv: Tensor,
    pub wd: Tensor,
    pub bd: Tensor,
}

impl AttentionParams {
    /// The residual `A V + R` requires `d_k == d_model`.
    pub fn new<R: Rng>(d_model: usize, d_k: usize, d_out: usize, rng: &mut R) -> Result<Self> {
        if d_k == 0 || d_k != d_model {
            return Err(Error::Shape(format!("attention d_k {d_k} must equal d_model {d_model} for the residual")));
        }
        let proj = |rng: &mut R| Tensor::uniform(&[d_model, d_k], d_model, rng);
        let bias = |rng: &mut R| Tensor::uniform(&[d_k], d_model, rng);
        Ok(Self {
            d_model,
            d_k,
            d_out,
            wq: proj(rng),
            wk: proj(rng),
            wv: proj(rng),
            bq: bias(rng),
            bk: bias(rng),
            bv: bias(rng),
            wd: Tensor::uniform(&[d_k, d_out], d_k, rng),
            bd: Tensor::uniform(&[d_out], d_k, rng),
        })
    }
}

impl Parameters for AttentionParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        for (n, t) in [
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("bq", &self.bq),
            ("bk", &self.bk),
            ("bv", &self.bv),
            ("wd", &self.wd),
            ("bd", &self.bd),
        ] {
            f(join(prefix, n), t);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        for (n, t) in [
            ("wq", &mut self.wq),
            ("wk", &mut self.wk),
            ("wv", &mut self.wv),
            ("bq", &mut self.bq),
            ("bk", &mut self.bk),
            ("bv", &mut self.bv),
            ("wd", &mut self.wd),
            ("bd", &mut self.bd),
        ] {
            f(join(prefix, n), t);
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    r: Tensor,
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// Attention matrix `[T × T]`, rows sum to one.
    a: Vec<Vec<f64>>,
    /// `A V + R`.
    o: Vec<Vec<f64>>,
}

impl AttentionCache {
    pub fn attention(&self) -> Tensor {
        let t = self.a.len();
        Tensor::new(vec![t, t], self.a.concat()).expect("square attention")
    }
}

fn project(r: &Tensor, w: &Tensor, b: &Tensor) -> Vec<Vec<f64>> {
    (0..r.dim(0))
        .map(|t| {
            let mut row = b.data().to_vec();
            vec_mat_acc(r.row(t), w.data(), &mut row);
            row
        })
        .collect()
}

fn check_input(r: &Tensor, p: &AttentionParams) -> Result<usize> {
    match *r.shape() {
        [t, d] if d == p.d_model && t > 0 => Ok(t),
        _ => Err(Error::Shape(format!("attention input {:?} vs d_model {}", r.shape(), p.d_model))),
    }
}

/// Returns the latent `r: [d_out]` and the cache (which exposes the
/// attention matrix).
pub fn self_attention_residual(r: &Tensor, p: &AttentionParams) -> Result<(Tensor, AttentionCache)> {
    let t_len = check_input(r, p)?;
    if p.d_k != p.d_model || p.wq.shape() != [p.d_model, p.d_k] {
        return Err(Error::Shape(format!("attention d_k {} vs d_model {}", p.d_k, p.d_model)));
    }
    let q = project(r, &p.wq, &p.bq);
    let k = project(r, &p.wk, &p.bk);
    let v = project(r, &p.wv, &p.bv);
    let scale = 1.0 / (p.d_k as f64).sqrt();
    let mut a = Vec::with_capacity(t_len);
    let mut o = Vec::with_capacity(t_len);
    for i in 0..t_len {
        let mut row: Vec<f64> = k.iter().map(|kj| q[i].iter().zip(kj).map(|(x, y)| x * y).sum::<f64>() * scale).collect();
        softmax_in_place(&mut row);
        let mut oi = r.row(i).to_vec();
        for (w, vj) in row.iter().zip(&v) {
            oi.iter_mut().zip(vj).for_each(|(acc, x)| *acc += w * x);
        }
        a.push(row);
        o.push(oi);
    }
    let mut mean_o = vec![0.0; p.d_model];
    for oi in &o {
        mean_o.iter_mut().zip(oi).for_each(|(m, x)| *m += x / t_len as f64);
    }
    let mut out = p.bd.data().to_vec();
    vec_mat_acc(&mean_o, p.wd.data(), &mut out);
    let out = Tensor::vector(out);
    out.check_finite("self_attention")?;
    Ok((out, AttentionCache { r: r.clone(), q, k, v, a, o }))
}

/// Backward of [`self_attention_residual`]; returns `dR`.
pub fn self_attention_residual_backward(p: &AttentionParams, cache: &AttentionCache, dout: &Tensor, grads: &mut AttentionParams) -> Result<Tensor> {
    let t_len = cache.a.len();
    let d = p.d_model;
    if dout.len() != p.d_out {
        return Err(Error::Shape(format!("attention backward dout {:?} vs d_out {}", dout.shape(), p.d_out)));
    }
    let tf = t_len as f64;
    let mut mean_o = vec![0.0; d];
    for oi in &cache.o {
        mean_o.iter_mut().zip(oi).for_each(|(m, x)| *m += x / tf);
    }
    outer_acc(&mean_o, dout.data(), grads.wd.data_mut());
    grads.bd.data_mut().iter_mut().zip(dout.data()).for_each(|(g, x)| *g += x);
    let mut dmean = vec![0.0; d];
    vec_mat_t_acc(dout.data(), p.wd.data(), &mut dmean);
    // Every row of O receives dmean / T.
    let d_o: Vec<f64> = dmean.iter().map(|x| x / tf).collect();

    let mut dr = Tensor::zeros(&[t_len, d]);
    let mut dv = vec![vec![0.0; d]; t_len];
    let mut dq = vec![vec![0.0; d]; t_len];
    let mut dk = vec![vec![0.0; d]; t_len];
    let scale = 1.0 / (p.d_k as f64).sqrt();
    for i in 0..t_len {
        dr.data_mut()[i * d..(i + 1) * d].iter_mut().zip(&d_o).for_each(|(g, x)| *g += x);
        let ai = &cache.a[i];
        let da: Vec<f64> = cache.v.iter().map(|vj| vj.iter().zip(&d_o).map(|(x, y)| x * y).sum()).collect();
        for (j, w) in ai.iter().enumerate() {
            dv[j].iter_mut().zip(&d_o).for_each(|(g, x)| *g += w * x);
        }
        let dot: f64 = ai.iter().zip(&da).map(|(x, y)| x * y).sum();
        for j in 0..t_len {
            let ds = ai[j] * (da[j] - dot) * scale;
            if ds == 0.0 {
                continue;
            }
            for c in 0..d {
                dq[i][c] += ds * cache.k[j][c];
                dk[j][c] += ds * cache.q[i][c];
            }
        }
    }
    for t in 0..t_len {
        let rt = cache.r.row(t).to_vec();
        let drt = &mut dr.data_mut()[t * d..(t + 1) * d];
        for (g, w, dw, db) in [
            (&dq[t], &p.wq, &mut grads.wq, &mut grads.bq),
            (&dk[t], &p.wk, &mut grads.wk, &mut grads.bk),
            (&dv[t], &p.wv, &mut grads.wv, &mut grads.bv),
        ] {
            outer_acc(&rt, g, dw.data_mut());
            db.data_mut().iter_mut().zip(g.iter()).for_each(|(b, x)| *b += x);
            vec_mat_t_acc(g, w.data(), drt);
        }
    }
    Ok(dr)
}

/// Attention-free variant: `r = mean_t(R) W_D + b_D`.
pub fn pooled_projection(r: &Tensor, p: &AttentionParams) -> Result<Tensor> {
    let t_len = check_input(r, p)?;
    let mut mean = vec![0.0; p.d_model];
    for t in 0..t_len {
        mean.iter_mut().zip(r.row(t)).for_each(|(m, x)| *m += x / t_len as f64);
    }
    let mut out = p.bd.data().to_vec();
    vec_mat_acc(&mean, p.wd.data(), &mut out);
    Ok(Tensor::vector(out))
}

pub fn pooled_projection_backward(r: &Tensor, p: &AttentionParams, dout: &Tensor, grads: &mut AttentionParams) -> Result<Tensor> {
    let t_len = check_input(r, p)?;
    let mut mean = vec![0.0; p.d_model];
    for t in 0..t_len {
        mean.iter_mut().zip(r.row(t)).for_each(|(m, x)| *m += x / t_len as f64);
    }
    outer_acc(&mean, dout.data(), grads.wd.data_mut());
    grads.bd.data_mut().iter_mut().zip(dout.data()).for_each(|(g, x)| *g += x);
    let mut dmean = vec![0.0; p.d_model];
    vec_mat_t_acc(dout.data(), p.wd.data(), &mut dmean);
    let row: Vec<f64> = dmean.iter().map(|x| x / t_len as f64).collect();
    Tensor::new(vec![t_len, p.d_model], row.repeat(t_len))
}
