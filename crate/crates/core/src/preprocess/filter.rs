//! Butterworth band-pass design (bilinear transform with pre-warping) and
//! zero-phase forward-backward application over second-order sections.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub b_min: f64,
    pub b_max: f64,
    /// Order of the low-pass prototype; the band-pass has `2 * order` poles.
    pub order: usize,
    pub rate: f64,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self { b_min: 0.1, b_max: 2.0, order: 4, rate: 10.0 }
    }
}

impl FilterSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.b_min.is_finite()
            && self.b_max.is_finite()
            && self.rate.is_finite()
            && 0.0 < self.b_min
            && self.b_min < self.b_max
            && self.b_max < self.rate / 2.0
            && self.order >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!(
                "filter band [{}, {}] Hz at {} Hz, order {}: need 0 < b_min < b_max < rate/2",
                self.b_min, self.b_max, self.rate, self.order
            )))
        }
    }

    /// Samples of reflected padding added at each end before filtering.
    pub fn pad_len(&self) -> usize {
        3 * self.order
    }
}

/// One biquad `(b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + z_inv * self.b[1] + z2 * self.b[2]) / (self.a[0] + z_inv * self.a[1] + z2 * self.a[2])
    }

    /// Transposed direct-form II state reached after a long run of unit input.
    fn step_state(&self) -> [f64; 2] {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        let gain = (b0 + b1 + b2) / (1.0 + a1 + a2);
        [gain - b0, b2 - a2 * gain]
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (self.a[0] + self.a[1] + self.a[2])
    }

    fn run(&self, x: &mut [f64], mut state: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        for v in x.iter_mut() {
            let input = *v;
            let y = b0 * input + state[0];
            state[0] = b1 * input - a1 * y + state[1];
            state[1] = b2 * input - a2 * y;
            *v = y;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandpassFilter {
    pub spec: FilterSpec,
    pub sections: Vec<Biquad>,
}

impl BandpassFilter {
    pub fn design(spec: FilterSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.order;
        let fs = spec.rate;
        let warp = |f: f64| 2.0 * fs * (PI * f / fs).tan();
        let (w1, w2) = (warp(spec.b_min), warp(spec.b_max));
        let bw = w2 - w1;
        let w0 = (w1 * w2).sqrt();

        // Analog low-pass prototype poles on the unit circle, left half plane.
        let proto = (0..n).map(|k| Complex64::from_polar(1.0, PI * (2 * k + n + 1) as f64 / (2 * n) as f64));
        let mut poles = Vec::with_capacity(2 * n);
        for p in proto {
            let half = p * (bw / 2.0);
            let root = (half * half - w0 * w0).sqrt();
            for s in [half + root, half - root] {
                poles.push((2.0 * fs + s) / (2.0 * fs - s));
            }
        }

        let mut complex: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > 1e-12).collect();
        let mut real: Vec<f64> = poles.iter().filter(|p| p.im.abs() <= 1e-12).map(|p| p.re).collect();
        complex.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        real.sort_by(f64::total_cmp);
        if complex.len() * 2 + real.len() != 2 * n || real.len() % 2 != 0 {
            return Err(Error::Preprocess("filter design: unpaired poles".into()));
        }
        let mut sections: Vec<Biquad> = complex
            .iter()
            .map(|p| Biquad { b: [1.0, 0.0, -1.0], a: [1.0, -2.0 * p.re, p.norm_sqr()] })
            .collect();
        for pair in real.chunks(2) {
            sections.push(Biquad { b: [1.0, 0.0, -1.0], a: [1.0, -(pair[0] + pair[1]), pair[0] * pair[1]] });
        }

        // Unit gain at the digital image of the analog centre frequency.
        let mut filter = BandpassFilter { spec, sections };
        let f_center = fs / PI * (w0 / (2.0 * fs)).atan();
        let g = filter.response(f_center).norm();
        filter.sections[0].b.iter_mut().for_each(|b| *b /= g);
        Ok(filter)
    }

    /// Single-pass complex frequency response `H(e^{jω})` at `freq` Hz.
    pub fn response(&self, freq: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq / self.spec.rate);
        self.sections.iter().map(|s| s.response(z_inv)).product()
    }

    /// Magnitude of the zero-phase (forward-backward) response, `|H|^2`.
    pub fn zero_phase_gain(&self, freq: f64) -> f64 {
        self.response(freq).norm_sqr()
    }

    fn run_cascade(&self, x: &mut [f64]) {
        let mut scale = x[0];
        for s in &self.sections {
            let z = s.step_state();
            s.run(x, [z[0] * scale, z[1] * scale]);
            scale *= s.dc_gain();
        }
    }

    /// Zero-phase filtering with odd reflection padding of `3 * order` samples
    /// and steady-state initial conditions at both ends.
    pub fn filtfilt(&self, series: &[f64]) -> Result<Vec<f64>> {
        let pad = self.spec.pad_len();
        if series.len() <= pad {
            return Err(Error::Preprocess(format!(
                "bandpass: series length {} must exceed {} (3 x order)",
                series.len(),
                pad
            )));
        }
        let n = series.len();
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * series[0] - series[i]));
        ext.extend_from_slice(series);
        ext.extend((1..=pad).map(|i| 2.0 * series[n - 1] - series[n - 1 - i]));

        self.run_cascade(&mut ext);
        ext.reverse();
        self.run_cascade(&mut ext);
        ext.reverse();
        Ok(ext[pad..pad + n].to_vec())
    }
}

/// Designs the filter for `spec` and applies it zero-phase to `series`.
pub fn bandpass(series: &[f64], spec: &FilterSpec) -> Result<Vec<f64>> {
    BandpassFilter::design(*spec)?.filtfilt(series)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed-form Butterworth band-pass magnitude, pre-warped to the digital
    /// band edges. Independent of the pole/section construction above.
    fn analytic_gain(spec: &FilterSpec, f: f64) -> f64 {
        let warp = |f: f64| 2.0 * spec.rate * (PI * f / spec.rate).tan();
        let (w1, w2, w) = (warp(spec.b_min), warp(spec.b_max), warp(f));
        let omega = (w * w - w1 * w2) / (w * (w2 - w1));
        1.0 / (1.0 + omega.powi(2 * spec.order as i32)).sqrt()
    }

    fn sine(freq: f64, rate: f64, n: usize) -> Vec<f64> {
        (0..n).map(|k| (2.0 * PI * freq * k as f64 / rate).sin()).collect()
    }

    fn steady_amplitude(y: &[f64]) -> f64 {
        let mid = &y[y.len() / 4..3 * y.len() / 4];
        mid.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn designed_response_matches_closed_form() {
        let spec = FilterSpec::default();
        let f = BandpassFilter::design(spec).unwrap();
        assert_eq!(f.sections.len(), 4);
        for &freq in &[0.05, 0.1, 0.2, 0.3, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 4.9] {
            let got = f.response(freq).norm();
            let want = analytic_gain(&spec, freq);
            assert!((got - want).abs() < 1e-9, "f={freq}: {got} vs {want}");
        }
    }

    #[test]
    fn dc_input_is_rejected() {
        let y = bandpass(&vec![3.0; 200], &FilterSpec::default()).unwrap();
        assert!(y.iter().all(|v| v.abs() <= 3e-3), "max {}", steady_amplitude(&y));
    }

    #[test]
    fn passband_sine_keeps_unit_amplitude() {
        let spec = FilterSpec::default();
        let y = bandpass(&sine(0.3, 10.0, 600), &spec).unwrap();
        let expected = analytic_gain(&spec, 0.3).powi(2);
        let amp = steady_amplitude(&y);
        assert!((amp - 1.0).abs() <= 0.05, "amp {amp}");
        assert!((amp - expected).abs() <= 0.05 * expected);
    }

    #[test]
    fn stopband_sine_suppressed() {
        let spec = FilterSpec::default();
        let y = bandpass(&sine(4.0, 10.0, 600), &spec).unwrap();
        assert!(steady_amplitude(&y) <= 0.1);
        assert!(analytic_gain(&spec, 4.0).powi(2) <= 0.1);
    }

    #[test]
    fn invalid_specs_rejected() {
        for spec in [
            FilterSpec { b_min: 0.0, ..Default::default() },
            FilterSpec { b_min: 2.0, b_max: 1.0, ..Default::default() },
            FilterSpec { b_max: 5.0, ..Default::default() },
            FilterSpec { order: 0, ..Default::default() },
        ] {
            assert!(bandpass(&[0.0; 100], &spec).is_err());
        }
        assert!(bandpass(&[0.0; 12], &FilterSpec::default()).is_err());
    }

    #[test]
    fn odd_order_designs() {
        let spec = FilterSpec { order: 3, ..Default::default() };
        let f = BandpassFilter::design(spec).unwrap();
        for &freq in &[0.2, 1.0, 3.0] {
            assert!((f.response(freq).norm() - analytic_gain(&spec, freq)).abs() < 1e-9);
        }
    }
}
