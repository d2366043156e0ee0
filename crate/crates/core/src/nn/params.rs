//! Named parameter traversal shared by optimisers, checkpoints and gradient
//! accumulation. Gradients are held in a value of the same type as the
//! parameters (see [`zeros_like`]).

use sha2::{Digest, Sha256};

use super::Tensor;
use crate::error::{Error, Result};

pub trait Parameters {
    /// Calls `f` with every learnable tensor, in a fixed order, under a
    /// dotted name rooted at `prefix`.
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor));
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl<T: Parameters> Parameters for Vec<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        for (i, item) in self.iter().enumerate() {
            item.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        for (i, item) in self.iter_mut().enumerate() {
            item.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

impl<T: Parameters> Parameters for Option<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        if let Some(item) = self {
            item.visit(prefix, f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        if let Some(item) = self {
            item.visit_mut(prefix, f);
        }
    }
}

pub fn tensors<P: Parameters + ?Sized>(p: &P) -> Vec<&Tensor> {
    let mut out = Vec::new();
    p.visit("", &mut |_, t| out.push(t));
    out
}

pub fn named<P: Parameters + ?Sized>(p: &P) -> Vec<(String, &Tensor)> {
    let mut out = Vec::new();
    p.visit("", &mut |n, t| out.push((n, t)));
    out
}

pub fn param_count<P: Parameters + ?Sized>(p: &P) -> usize {
    tensors(p).iter().map(|t| t.len()).sum()
}

/// Same structure with every tensor zeroed; used as a gradient accumulator.
pub fn zeros_like<P: Parameters + Clone>(p: &P) -> P {
    let mut out = p.clone();
    out.visit_mut("", &mut |_, t| t.data_mut().iter_mut().for_each(|v| *v = 0.0));
    out
}

/// `dst += src`, tensor by tensor.
pub fn add_assign<P: Parameters>(dst: &mut P, src: &P) -> Result<()> {
    let src = tensors(src);
    let mut i = 0;
    let mut err = None;
    dst.visit_mut("", &mut |name, t| {
        match src.get(i) {
            Some(s) if s.shape() == t.shape() => t.add_assign(s).expect("shapes checked"),
            _ => err = err.take().or(Some(Error::Shape(format!("gradient structure differs at {name}")))),
        }
        i += 1;
    });
    match err {
        Some(e) => Err(e),
        None if i != src.len() => Err(Error::Shape("gradient structure differs in length".into())),
        None => Ok(()),
    }
}

pub fn scale<P: Parameters>(p: &mut P, factor: f64) {
    p.visit_mut("", &mut |_, t| t.scale(factor));
}

/// All parameter values concatenated in visit order.
pub fn flatten<P: Parameters + ?Sized>(p: &P) -> Vec<f64> {
    tensors(p).iter().flat_map(|t| t.data().iter().copied()).collect()
}

/// Overwrites parameter values from a flat vector in visit order.
pub fn unflatten<P: Parameters + ?Sized>(p: &mut P, values: &[f64]) -> Result<()> {
    let mut offset = 0;
    let mut short = false;
    p.visit_mut("", &mut |_, t| {
        let n = t.len();
        if offset + n <= values.len() {
            t.data_mut().copy_from_slice(&values[offset..offset + n]);
        } else {
            short = true;
        }
        offset += n;
    });
    if short || offset != values.len() {
        return Err(Error::Shape(format!("flat parameter vector of {} values, model holds {offset}", values.len())));
    }
    Ok(())
}

/// SHA-256 over names, shapes and little-endian values.
pub fn digest<P: Parameters + ?Sized>(p: &P) -> String {
    let mut h = Sha256::new();
    for (name, t) in named(p) {
        h.update(name.as_bytes());
        for d in t.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
