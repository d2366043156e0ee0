//! Stateless forward/backward kernels. Backward functions return the input
//! gradient and accumulate parameter gradients into the supplied buffers.

use super::Tensor;
use crate::error::{Error, Result};

fn as_matrix(x: &Tensor) -> Result<(usize, usize)> {
    match *x.shape() {
        [n] => Ok((1, n)),
        [b, n] => Ok((b, n)),
        _ => Err(Error::Shape(format!("expected a vector or matrix, got {:?}", x.shape()))),
    }
}

/// `y = x W + b` for `x: [batch × in]` (or `[in]`), `W: [in × out]`, `b: [out]`.
pub fn dense(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (batch, inp) = as_matrix(x)?;
    if w.rank() != 2 || w.dim(0) != inp || b.shape() != [w.dim(1)] {
        return Err(Error::Shape(format!("dense x {:?} vs W {:?}, b {:?}", x.shape(), w.shape(), b.shape())));
    }
    let out = w.dim(1);
    let mut y = Vec::with_capacity(batch * out);
    for i in 0..batch {
        let mut row = b.data().to_vec();
        let xi = &x.data()[i * inp..(i + 1) * inp];
        for (k, &xv) in xi.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wk = &w.data()[k * out..(k + 1) * out];
            row.iter_mut().zip(wk).for_each(|(r, wv)| *r += xv * wv);
        }
        y.extend(row);
    }
    let shape = if x.rank() == 1 { vec![out] } else { vec![batch, out] };
    let y = Tensor::new(shape, y)?;
    y.check_finite("dense")?;
    Ok(y)
}

/// Backward of [`dense`]: returns `dx`, accumulates `dW += xᵀ dy`, `db += Σ dy`.
pub fn dense_backward(x: &Tensor, w: &Tensor, dy: &Tensor, dw: &mut Tensor, db: &mut Tensor) -> Result<Tensor> {
    let (batch, inp) = as_matrix(x)?;
    let out = w.dim(1);
    if dy.len() != batch * out || dw.shape() != w.shape() || db.len() != out {
        return Err(Error::Shape(format!("dense backward dy {:?} vs W {:?}", dy.shape(), w.shape())));
    }
    let mut dx = vec![0.0; batch * inp];
    for i in 0..batch {
        let dyi = &dy.data()[i * out..(i + 1) * out];
        let xi = &x.data()[i * inp..(i + 1) * inp];
        db.data_mut().iter_mut().zip(dyi).for_each(|(d, g)| *d += g);
        let dxi = &mut dx[i * inp..(i + 1) * inp];
        for k in 0..inp {
            let wk = &w.data()[k * out..(k + 1) * out];
            dxi[k] = wk.iter().zip(dyi).map(|(a, b)| a * b).sum();
            let xv = xi[k];
            if xv != 0.0 {
                let dwk = &mut dw.data_mut()[k * out..(k + 1) * out];
                dwk.iter_mut().zip(dyi).for_each(|(d, g)| *d += xv * g);
            }
        }
    }
    Tensor::new(x.shape().to_vec(), dx)
}

/// Padding that keeps the length unchanged at stride 1; `k` must be odd.
pub fn same_padding(k: usize) -> Result<usize> {
    if k % 2 == 1 {
        Ok(k / 2)
    } else {
        Err(Error::Shape(format!("same padding needs an odd kernel, got {k}")))
    }
}

pub fn conv1d_output_len(len: usize, k: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 || k == 0 || k > len + 2 * padding {
        return Err(Error::Shape(format!("conv1d kernel {k} does not fit length {len} with padding {padding}")));
    }
    Ok((len + 2 * padding - k) / stride + 1)
}

fn conv_dims(x: &Tensor, k: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match (x.shape(), k.shape()) {
        (&[cin, len], &[cout, kcin, ks]) if kcin == cin => Ok((cin, len, cout, ks)),
        _ => Err(Error::Shape(format!("conv1d x {:?} vs kernels {:?}", x.shape(), k.shape()))),
    }
}

/// Cross-correlation `y[o][t] = Σ_c Σ_j K[o][c][j] x[c][t·stride + j − pad] (+ bias[o])`
/// with zero padding.
pub fn conv1d(x: &Tensor, kernels: &Tensor, bias: Option<&Tensor>, stride: usize, padding: usize) -> Result<Tensor> {
    let (cin, len, cout, ks) = conv_dims(x, kernels)?;
    let lout = conv1d_output_len(len, ks, stride, padding)?;
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::Shape(format!("conv1d bias {:?} vs {cout} output channels", b.shape())));
        }
    }
    let xd = x.data();
    let kd = kernels.data();
    let mut y = vec![0.0; cout * lout];
    for o in 0..cout {
        let yo = &mut y[o * lout..(o + 1) * lout];
        if let Some(b) = bias {
            yo.iter_mut().for_each(|v| *v = b.data()[o]);
        }
        for c in 0..cin {
            let xc = &xd[c * len..(c + 1) * len];
            for j in 0..ks {
                let w = kd[(o * cin + c) * ks + j];
                for (t, yv) in yo.iter_mut().enumerate() {
                    let pos = (t * stride + j) as isize - padding as isize;
                    if pos >= 0 && (pos as usize) < len {
                        *yv += w * xc[pos as usize];
                    }
                }
            }
        }
    }
    let y = Tensor::new(vec![cout, lout], y)?;
    y.check_finite("conv1d")?;
    Ok(y)
}

/// Backward of [`conv1d`]; returns `dx` and accumulates kernel and bias gradients.
pub fn conv1d_backward(
    x: &Tensor,
    kernels: &Tensor,
    dy: &Tensor,
    stride: usize,
    padding: usize,
    dk: &mut Tensor,
    dbias: Option<&mut Tensor>,
) -> Result<Tensor> {
    let (cin, len, cout, ks) = conv_dims(x, kernels)?;
    let lout = conv1d_output_len(len, ks, stride, padding)?;
    if dy.shape() != [cout, lout] || dk.shape() != kernels.shape() {
        return Err(Error::Shape(format!("conv1d backward dy {:?}, expected [{cout}, {lout}]", dy.shape())));
    }
    let xd = x.data();
    let kd = kernels.data();
    let dyd = dy.data();
    let mut dx = vec![0.0; cin * len];
    let dkd = dk.data_mut();
    for o in 0..cout {
        let dyo = &dyd[o * lout..(o + 1) * lout];
        for c in 0..cin {
            let xc = &xd[c * len..(c + 1) * len];
            let dxc = &mut dx[c * len..(c + 1) * len];
            for j in 0..ks {
                let idx = (o * cin + c) * ks + j;
                let w = kd[idx];
                let mut acc = 0.0;
                for (t, g) in dyo.iter().enumerate() {
                    let pos = (t * stride + j) as isize - padding as isize;
                    if pos >= 0 && (pos as usize) < len {
                        acc += g * xc[pos as usize];
                        dxc[pos as usize] += g * w;
                    }
                }
                dkd[idx] += acc;
            }
        }
    }
    if let Some(db) = dbias {
        for o in 0..cout {
            db.data_mut()[o] += dyd[o * lout..(o + 1) * lout].iter().sum::<f64>();
        }
    }
    Tensor::new(vec![cin, len], dx)
}

/// `acc += x W` for a row vector `x` and row-major `W: [x.len() × acc.len()]`.
pub(crate) fn vec_mat_acc(x: &[f64], w: &[f64], acc: &mut [f64]) {
    let out = acc.len();
    for (k, &xv) in x.iter().enumerate() {
        if xv != 0.0 {
            acc.iter_mut().zip(&w[k * out..(k + 1) * out]).for_each(|(a, wv)| *a += xv * wv);
        }
    }
}

/// `acc += d Wᵀ` for `W: [acc.len() × d.len()]`.
pub(crate) fn vec_mat_t_acc(d: &[f64], w: &[f64], acc: &mut [f64]) {
    let out = d.len();
    for (k, a) in acc.iter_mut().enumerate() {
        *a += w[k * out..(k + 1) * out].iter().zip(d).map(|(x, y)| x * y).sum::<f64>();
    }
}

/// `dW += xᵀ d` (outer product) for `dW: [x.len() × d.len()]`.
pub(crate) fn outer_acc(x: &[f64], d: &[f64], dw: &mut [f64]) {
    let out = d.len();
    for (k, &xv) in x.iter().enumerate() {
        if xv != 0.0 {
            dw[k * out..(k + 1) * out].iter_mut().zip(d).for_each(|(g, dv)| *g += xv * dv);
        }
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

/// Gradient of [`relu`] given its input.
pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    dx.data_mut().iter_mut().zip(x.data()).for_each(|(d, &v)| {
        if v <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

/// Non-overlapping max pooling over the last axis of `[C × L]`; a trailing
/// remainder shorter than `window` is dropped. Returns the output and, per
/// output element, the flat index of the selected input.
pub fn maxpool1d(x: &Tensor, window: usize) -> Result<(Tensor, Vec<usize>)> {
    let (c, len) = match *x.shape() {
        [c, len] => (c, len),
        [len] => (1, len),
        _ => return Err(Error::Shape(format!("maxpool expects [C × L], got {:?}", x.shape()))),
    };
    if window == 0 || len < window {
        return Err(Error::Shape(format!("maxpool window {window} longer than length {len}")));
    }
    let lout = len / window;
    let mut y = Vec::with_capacity(c * lout);
    let mut idx = Vec::with_capacity(c * lout);
    for ch in 0..c {
        for t in 0..lout {
            let start = ch * len + t * window;
            let mut best = start;
            for i in start + 1..start + window {
                if x.data()[i] > x.data()[best] {
                    best = i;
                }
            }
            y.push(x.data()[best]);
            idx.push(best);
        }
    }
    let shape = if x.rank() == 1 { vec![lout] } else { vec![c, lout] };
    Ok((Tensor::new(shape, y)?, idx))
}

pub fn maxpool1d_backward(input_shape: &[usize], argmax: &[usize], dy: &Tensor) -> Result<Tensor> {
    if argmax.len() != dy.len() {
        return Err(Error::Shape("maxpool backward: index count differs from dy".into()));
    }
    let mut dx = Tensor::zeros(input_shape);
    for (&i, g) in argmax.iter().zip(dy.data()) {
        dx.data_mut()[i] += g;
    }
    Ok(dx)
}

/// Per-channel mean of `[N × L]`.
pub fn global_average_pool(x: &Tensor) -> Result<Tensor> {
    let [n, l] = *x.shape() else {
        return Err(Error::Shape(format!("GAP expects [N × L], got {:?}", x.shape())));
    };
    if l == 0 {
        return Err(Error::Shape("GAP over zero-length channels".into()));
    }
    Ok(Tensor::vector((0..n).map(|c| x.data()[c * l..(c + 1) * l].iter().sum::<f64>() / l as f64).collect()))
}

pub fn global_average_pool_backward(input_shape: &[usize], dy: &Tensor) -> Tensor {
    let (n, l) = (input_shape[0], input_shape[1]);
    let mut dx = Tensor::zeros(input_shape);
    for c in 0..n {
        let g = dy.data()[c] / l as f64;
        dx.data_mut()[c * l..(c + 1) * l].iter_mut().for_each(|v| *v = g);
    }
    dx
}

pub fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = sigmoid_scalar(*v));
    y
}

/// Gradient of [`sigmoid`] given its output.
pub fn sigmoid_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    dx.data_mut().iter_mut().zip(y.data()).for_each(|(d, s)| *d *= s * (1.0 - s));
    dx
}

/// Numerically stable softmax of one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// Row-wise softmax of `[rows × cols]` (or a single vector).
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let (_, cols) = as_matrix(x)?;
    let mut y = x.clone();
    if cols > 0 {
        y.data_mut().chunks_mut(cols).for_each(softmax_in_place);
    }
    Ok(y)
}
