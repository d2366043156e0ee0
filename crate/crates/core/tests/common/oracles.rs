//! Independent reference implementations for the preprocessing chain.

use std::f64::consts::PI;

use alesal_core::preprocess::{pca_first_component, stft, BandpassFilter, FilterSpec};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use super::rng;

/// O(n²) DFT magnitudes of a periodic-Hann-windowed slice, bins `0..=n/2`.
pub fn naive_dft_frame(slice: &[f64]) -> Vec<f64> {
    let n = slice.len();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, x) in slice.iter().enumerate() {
                let w = 0.5 - 0.5 * (2.0 * PI * t as f64 / n as f64).cos();
                let ang = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
                re += w * x * ang.cos();
                im += w * x * ang.sin();
            }
            re.hypot(im)
        })
        .collect()
}

/// Largest absolute difference between the STFT and the naive DFT over
/// every frame and bin of a random series.
pub fn stft_max_error(len: usize, window_sec: f64, hop_sec: f64, rate: f64, seed: u64) -> f64 {
    let mut r = rng(seed);
    let series: Vec<f64> = (0..len).map(|_| r.random_range(-2.0..2.0)).collect();
    let spec = stft(&series, window_sec, hop_sec, rate).unwrap();
    let n = (window_sec * rate).round() as usize;
    let hop = (hop_sec * rate).round() as usize;
    assert_eq!(spec.num_frames(), (len - n) / hop + 1);
    let mut worst = 0.0f64;
    for (f, frame) in spec.frames.iter().enumerate() {
        let want = naive_dft_frame(&series[f * hop..f * hop + n]);
        assert_eq!(frame.len(), want.len());
        for (a, b) in frame.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Closed-form magnitude of a digital Butterworth band-pass designed by the
/// bilinear transform with pre-warped edges (single pass).
pub fn butterworth_gain(spec: &FilterSpec, f: f64) -> f64 {
    let warp = |f: f64| 2.0 * spec.rate * (PI * f / spec.rate).tan();
    let (w1, w2, w) = (warp(spec.b_min), warp(spec.b_max), warp(f));
    let omega = (w * w - w1 * w2) / (w * (w2 - w1));
    1.0 / (1.0 + omega.powi(2 * spec.order as i32)).sqrt()
}

/// Amplitude of the `freq` component of `y` by least squares on sin/cos.
fn fitted_amplitude(y: &[f64], freq: f64, rate: f64, offset: usize) -> f64 {
    let (mut ss, mut cc, mut sc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (k, v) in y.iter().enumerate() {
        let ph = 2.0 * PI * freq * (k + offset) as f64 / rate;
        let (s, c) = ph.sin_cos();
        ss += s * s;
        cc += c * c;
        sc += s * c;
        ys += v * s;
        yc += v * c;
    }
    let det = ss * cc - sc * sc;
    let a = (ys * cc - yc * sc) / det;
    let b = (yc * ss - ys * sc) / det;
    a.hypot(b)
}

pub struct FilterCheck {
    /// Worst `|measured / analytic - 1|` over passband frequencies.
    pub passband_rel_error: f64,
    /// Worst measured zero-phase gain over stopband frequencies.
    pub stopband_max_gain: f64,
    pub checked: usize,
}

/// Filters long sines zero-phase and compares the steady-state gain with the
/// squared closed-form magnitude (forward-backward squares the response).
pub fn check_filter(spec: FilterSpec) -> FilterCheck {
    let filter = BandpassFilter::design(spec).unwrap();
    let n = (400.0 * spec.rate) as usize;
    let measure = |f: f64| {
        let x: Vec<f64> = (0..n).map(|k| (2.0 * PI * f * k as f64 / spec.rate).sin()).collect();
        let y = filter.filtfilt(&x).unwrap();
        fitted_amplitude(&y[n / 4..3 * n / 4], f, spec.rate, n / 4)
    };
    let mut out = FilterCheck { passband_rel_error: 0.0, stopband_max_gain: 0.0, checked: 0 };
    let steps = 20;
    for i in 0..=steps {
        let f = spec.b_min + (spec.b_max - spec.b_min) * i as f64 / steps as f64;
        let want = butterworth_gain(&spec, f).powi(2);
        out.passband_rel_error = out.passband_rel_error.max((measure(f) / want - 1.0).abs());
        out.checked += 1;
    }
    let nyq = spec.rate / 2.0;
    let low = [spec.b_min / 4.0, spec.b_min / 2.0];
    let high = [2.0 * spec.b_max, (2.0 * spec.b_max + nyq) / 2.0, 0.95 * nyq];
    for f in low.into_iter().chain(high).filter(|&f| f < nyq) {
        out.stopband_max_gain = out.stopband_max_gain.max(measure(f));
        out.checked += 1;
    }
    out
}

/// `|var(scores) - λ_max|` for random correlated data, with `λ_max` from a
/// dense symmetric eigen-decomposition of the sample covariance.
pub fn pca_variance_error(rows: usize, cols: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let basis: Vec<f64> = (0..cols).map(|_| r.random_range(-1.0..1.0)).collect();
    let data: Vec<Vec<f64>> = (0..rows)
        .map(|_| {
            let a: f64 = r.random_range(-3.0..3.0);
            basis.iter().map(|b| a * b + r.random_range(-0.3..0.3)).collect()
        })
        .collect();
    let pca = pca_first_component(&data).unwrap();
    let mean = pca.scores.iter().sum::<f64>() / rows as f64;
    let var = pca.scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (rows - 1) as f64;

    let m = DMatrix::from_fn(rows, cols, |i, j| data[i][j]);
    let centred = DMatrix::from_fn(rows, cols, |i, j| m[(i, j)] - m.column(j).mean());
    let cov = centred.transpose() * &centred / (rows - 1) as f64;
    let top = SymmetricEigen::new(cov).eigenvalues.max();
    (var - top).abs()
}
