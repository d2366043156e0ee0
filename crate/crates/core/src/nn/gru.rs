//! Gated recurrent unit, reset-before-candidate form, row-vector convention:
//!
//! ```text
//! z_t = σ(x_t W_z + h_{t-1} U_z + b_z)
//! r_t = σ(x_t W_r + h_{t-1} U_r + b_r)
//! c_t = tanh(x_t W_h + (r_t ⊙ h_{t-1}) U_h + b_h)
//! h_t = (1 - z_t) ⊙ h_{t-1} + z_t ⊙ c_t
//! ```

use rand::Rng;

use super::ops::{outer_acc, sigmoid_scalar, vec_mat_acc, vec_mat_t_acc};
use super::params::{join, Parameters};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub wz: Tensor,
    pub wr: Tensor,
    pub wh: Tensor,
    pub uz: Tensor,
    pub ur: Tensor,
    pub uh: Tensor,
    pub bz: Tensor,
    pub br: Tensor,
    pub bh: Tensor,
}

impl GruParams {
    pub fn new<R: Rng>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let w = |rng: &mut R| Tensor::uniform(&[input_dim, hidden_dim], input_dim, rng);
        let u = |rng: &mut R| Tensor::uniform(&[hidden_dim, hidden_dim], hidden_dim, rng);
        let b = |rng: &mut R| Tensor::uniform(&[hidden_dim], hidden_dim, rng);
        Self {
            input_dim,
            hidden_dim,
            wz: w(rng),
            wr: w(rng),
            wh: w(rng),
            uz: u(rng),
            ur: u(rng),
            uh: u(rng),
            bz: b(rng),
            br: b(rng),
            bh: b(rng),
        }
    }

    /// All weights and biases zero.
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let w = Tensor::zeros(&[input_dim, hidden_dim]);
        let u = Tensor::zeros(&[hidden_dim, hidden_dim]);
        let b = Tensor::zeros(&[hidden_dim]);
        Self {
            input_dim,
            hidden_dim,
            wz: w.clone(),
            wr: w.clone(),
            wh: w,
            uz: u.clone(),
            ur: u.clone(),
            uh: u,
            bz: b.clone(),
            br: b.clone(),
            bh: b,
        }
    }
}

impl Parameters for GruParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        for (n, t) in [
            ("wz", &self.wz),
            ("wr", &self.wr),
            ("wh", &self.wh),
            ("uz", &self.uz),
            ("ur", &self.ur),
            ("uh", &self.uh),
            ("bz", &self.bz),
            ("br", &self.br),
            ("bh", &self.bh),
        ] {
            f(join(prefix, n), t);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        for (n, t) in [
            ("wz", &mut self.wz),
            ("wr", &mut self.wr),
            ("wh", &mut self.wh),
            ("uz", &mut self.uz),
            ("ur", &mut self.ur),
            ("uh", &mut self.uh),
            ("bz", &mut self.bz),
            ("br", &mut self.br),
            ("bh", &mut self.bh),
        ] {
            f(join(prefix, n), t);
        }
    }
}

/// Per-step activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GruCache {
    xs: Tensor,
    /// `h_0 .. h_T`, `T + 1` rows.
    hs: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
}

/// Runs the recurrence over `seq: [T × input_dim]` and returns the hidden
/// sequence `[T × hidden_dim]` (without `h0`).
pub fn gru_forward(seq: &Tensor, p: &GruParams, h0: &[f64]) -> Result<(Tensor, GruCache)> {
    let (t_len, inp) = match *seq.shape() {
        [t, i] => (t, i),
        _ => return Err(Error::Shape(format!("GRU input must be [T × in], got {:?}", seq.shape()))),
    };
    let hid = p.hidden_dim;
    if inp != p.input_dim || h0.len() != hid {
        return Err(Error::Shape(format!(
            "GRU input {:?} / h0 [{}] vs params [{} → {}]",
            seq.shape(),
            h0.len(),
            p.input_dim,
            hid
        )));
    }
    if t_len == 0 {
        return Err(Error::Shape("GRU over an empty sequence".into()));
    }
    let mut hs = Vec::with_capacity(t_len + 1);
    hs.push(h0.to_vec());
    let (mut zs, mut rs, mut cs) = (Vec::with_capacity(t_len), Vec::with_capacity(t_len), Vec::with_capacity(t_len));
    for t in 0..t_len {
        let x = seq.row(t);
        let hp = &hs[t];
        let mut z = p.bz.data().to_vec();
        vec_mat_acc(x, p.wz.data(), &mut z);
        vec_mat_acc(hp, p.uz.data(), &mut z);
        z.iter_mut().for_each(|v| *v = sigmoid_scalar(*v));
        let mut r = p.br.data().to_vec();
        vec_mat_acc(x, p.wr.data(), &mut r);
        vec_mat_acc(hp, p.ur.data(), &mut r);
        r.iter_mut().for_each(|v| *v = sigmoid_scalar(*v));
        let rh: Vec<f64> = r.iter().zip(hp).map(|(a, b)| a * b).collect();
        let mut c = p.bh.data().to_vec();
        vec_mat_acc(x, p.wh.data(), &mut c);
        vec_mat_acc(&rh, p.uh.data(), &mut c);
        c.iter_mut().for_each(|v| *v = v.tanh());
        let h: Vec<f64> = (0..hid).map(|j| (1.0 - z[j]) * hp[j] + z[j] * c[j]).collect();
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "gru", step: Some(t) });
        }
        hs.push(h);
        zs.push(z);
        rs.push(r);
        cs.push(c);
    }
    let out = Tensor::new(vec![t_len, hid], hs[1..].concat())?;
    Ok((out, GruCache { xs: seq.clone(), hs, z: zs, r: rs, c: cs }))
}

/// Backpropagation through time. `dhs: [T × hidden]` is the gradient of the
/// loss with respect to each returned hidden state. Returns `(dx, dh0)`.
pub fn gru_backward(p: &GruParams, cache: &GruCache, dhs: &Tensor, grads: &mut GruParams) -> Result<(Tensor, Vec<f64>)> {
    let t_len = cache.z.len();
    let hid = p.hidden_dim;
    if dhs.shape() != [t_len, hid] {
        return Err(Error::Shape(format!("GRU backward dhs {:?}, expected [{t_len}, {hid}]", dhs.shape())));
    }
    let mut dx = Tensor::zeros(&[t_len, p.input_dim]);
    let mut dh_next = vec![0.0; hid];
    for t in (0..t_len).rev() {
        let x = cache.xs.row(t);
        let hp = &cache.hs[t];
        let (z, r, c) = (&cache.z[t], &cache.r[t], &cache.c[t]);
        let dh: Vec<f64> = dhs.row(t).iter().zip(&dh_next).map(|(a, b)| a + b).collect();

        let mut dhp: Vec<f64> = (0..hid).map(|j| dh[j] * (1.0 - z[j])).collect();
        let da_z: Vec<f64> = (0..hid).map(|j| dh[j] * (c[j] - hp[j]) * z[j] * (1.0 - z[j])).collect();
        let da_c: Vec<f64> = (0..hid).map(|j| dh[j] * z[j] * (1.0 - c[j] * c[j])).collect();

        let rh: Vec<f64> = r.iter().zip(hp).map(|(a, b)| a * b).collect();
        let mut drh = vec![0.0; hid];
        vec_mat_t_acc(&da_c, p.uh.data(), &mut drh);
        let da_r: Vec<f64> = (0..hid).map(|j| drh[j] * hp[j] * r[j] * (1.0 - r[j])).collect();
        for j in 0..hid {
            dhp[j] += drh[j] * r[j];
        }

        let dxt = &mut dx.data_mut()[t * p.input_dim..(t + 1) * p.input_dim];
        for (da, w, dw, db) in [
            (&da_z, &p.wz, &mut grads.wz, &mut grads.bz),
            (&da_r, &p.wr, &mut grads.wr, &mut grads.br),
            (&da_c, &p.wh, &mut grads.wh, &mut grads.bh),
        ] {
            outer_acc(x, da, dw.data_mut());
            db.data_mut().iter_mut().zip(da.iter()).for_each(|(g, d)| *g += d);
            vec_mat_t_acc(da, w.data(), dxt);
        }
        outer_acc(hp, &da_z, grads.uz.data_mut());
        outer_acc(hp, &da_r, grads.ur.data_mut());
        outer_acc(&rh, &da_c, grads.uh.data_mut());
        vec_mat_t_acc(&da_z, p.uz.data(), &mut dhp);
        vec_mat_t_acc(&da_r, p.ur.data(), &mut dhp);
        dh_next = dhp;
    }
    Ok((dx, dh_next))
}
