use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Magnitude spectrogram `[frame][bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: Vec<Vec<f64>>,
    /// Centre time of each frame, seconds from the start of the series.
    pub frame_times: Vec<f64>,
    /// Ascending bin frequencies in `[0, rate / 2]`.
    pub bin_freqs: Vec<f64>,
}

impl Spectrogram {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn num_bins(&self) -> usize {
        self.bin_freqs.len()
    }
}

/// Periodic Hann window of `n` samples.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

fn to_samples(seconds: f64, rate: f64, what: &str) -> Result<usize> {
    let n = (seconds * rate).round();
    if !(n.is_finite() && n >= 1.0) {
        return Err(Error::InvalidParam(format!("{what} of {seconds} s at {rate} Hz")));
    }
    Ok(n as usize)
}

/// Short-time Fourier transform magnitude with a Hann window of
/// `window_sec * rate` samples advanced by `hop_sec * rate` samples.
pub fn stft(series: &[f64], window_sec: f64, hop_sec: f64, rate: f64) -> Result<Spectrogram> {
    let n = to_samples(window_sec, rate, "STFT window")?;
    let hop = to_samples(hop_sec, rate, "STFT hop")?;
    if n > series.len() {
        return Err(Error::Preprocess(format!(
            "stft: window of {n} samples exceeds series length {}",
            series.len()
        )));
    }
    let window = hann(n);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let bins = n / 2 + 1;
    let count = (series.len() - n) / hop + 1;
    let mut frames = Vec::with_capacity(count);
    let mut frame_times = Vec::with_capacity(count);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for f in 0..count {
        let start = f * hop;
        for (b, (x, w)) in buf.iter_mut().zip(series[start..start + n].iter().zip(&window)) {
            *b = Complex64::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        frames.push(buf[..bins].iter().map(|c| c.norm()).collect());
        frame_times.push((start as f64 + n as f64 / 2.0) / rate);
    }
    let bin_freqs = (0..bins).map(|k| k as f64 * rate / n as f64).collect();
    Ok(Spectrogram { frames, frame_times, bin_freqs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// O(n²) DFT magnitude of a Hann-windowed slice.
    fn naive_frame(slice: &[f64]) -> Vec<f64> {
        let n = slice.len();
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, x) in slice.iter().enumerate() {
                    let w = 0.5 - 0.5 * (2.0 * PI * t as f64 / n as f64).cos();
                    let ang = -2.0 * PI * (k * t) as f64 / n as f64;
                    re += w * x * ang.cos();
                    im += w * x * ang.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    #[test]
    fn zero_input_zero_output() {
        let s = stft(&[0.0; 200], 10.0, 1.0, 10.0).unwrap();
        assert_eq!(s.num_frames(), 11);
        assert_eq!(s.num_bins(), 51);
        assert!(s.frames.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn breathing_peak_located() {
        let x: Vec<f64> = (0..200).map(|k| (2.0 * PI * 0.3 * k as f64 / 10.0).sin()).collect();
        let s = stft(&x, 10.0, 1.0, 10.0).unwrap();
        for frame in &s.frames {
            let arg = frame.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            assert!((s.bin_freqs[arg] - 0.3).abs() <= 0.1 + 1e-12);
        }
        assert!(s.bin_freqs.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(*s.bin_freqs.last().unwrap(), 5.0);
    }

    #[test]
    fn window_longer_than_series_rejected() {
        assert!(stft(&[0.0; 50], 10.0, 1.0, 10.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn frames_match_naive_dft(x in proptest::collection::vec(-10.0f64..10.0, 40..120), win in 8usize..40, hop in 1usize..7) {
            let s = stft(&x, win as f64 / 4.0, hop as f64 / 4.0, 4.0).unwrap();
            for (f, frame) in s.frames.iter().enumerate() {
                let oracle = naive_frame(&x[f * hop..f * hop + win]);
                for (a, b) in frame.iter().zip(&oracle) {
                    prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
                }
            }
        }
    }
}
