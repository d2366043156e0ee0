use num_complex::Complex64;

use crate::csi_data::CsiRecord;
use crate::error::{Error, Result};

/// Uniformly sampled complex CSI for one antenna pair.
///
/// Sample `k` sits at absolute time `(start_index + k) / rate`.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformSeries {
    pub start_index: i64,
    pub rate: f64,
    /// `[time][subcarrier]`
    pub values: Vec<Vec<Complex64>>,
    /// Input gaps longer than `2 / rate`, as `(from, to)` timestamps.
    pub gaps: Vec<(f64, f64)>,
}

impl UniformSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time_of(&self, k: usize) -> f64 {
        (self.start_index + k as i64) as f64 / self.rate
    }
}

const KNOT_EPS: f64 = 1e-9;

/// Resamples one pair's record stream onto the grid `k / rate` by linear
/// interpolation of real and imaginary parts per subcarrier.
///
/// The stream is sorted internally; repeated timestamps are rejected.
pub fn resample(records: &[&CsiRecord], rate: f64) -> Result<UniformSeries> {
    if records.is_empty() {
        return Err(Error::Preprocess("resample: empty stream".into()));
    }
    if records.len() < 2 {
        return Err(Error::Preprocess("resample: need at least two records".into()));
    }
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::InvalidParam(format!("resample rate {rate}")));
    }
    let mut sorted: Vec<&CsiRecord> = records.to_vec();
    sorted.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    let width = sorted[0].values.len();
    for w in sorted.windows(2) {
        if w[1].timestamp <= w[0].timestamp {
            return Err(Error::Preprocess(format!("resample: repeated timestamp {}", w[1].timestamp)));
        }
        if w[1].values.len() != width {
            return Err(Error::Format("resample: subcarrier count changes within stream".into()));
        }
    }

    let gaps = sorted
        .windows(2)
        .filter(|w| w[1].timestamp - w[0].timestamp > 2.0 / rate + KNOT_EPS)
        .map(|w| (w[0].timestamp, w[1].timestamp))
        .collect::<Vec<_>>();
    if !gaps.is_empty() {
        log::debug!("resample: {} gaps longer than {:.3} s", gaps.len(), 2.0 / rate);
    }

    let first = sorted[0].timestamp;
    let last = sorted[sorted.len() - 1].timestamp;
    let k0 = (first * rate - KNOT_EPS).ceil() as i64;
    let k1 = (last * rate + KNOT_EPS).floor() as i64;
    let mut values = Vec::with_capacity((k1 - k0 + 1).max(0) as usize);
    let mut seg = 0usize;
    for k in k0..=k1 {
        let t = k as f64 / rate;
        while seg + 2 < sorted.len() && sorted[seg + 1].timestamp <= t + KNOT_EPS / rate {
            seg += 1;
        }
        let (a, b) = (sorted[seg], sorted[seg + 1]);
        let w = ((t - a.timestamp) / (b.timestamp - a.timestamp)).clamp(0.0, 1.0);
        let row = if (t - a.timestamp).abs() <= KNOT_EPS / rate {
            a.values.clone()
        } else if (b.timestamp - t).abs() <= KNOT_EPS / rate {
            b.values.clone()
        } else {
            a.values.iter().zip(&b.values).map(|(x, y)| x * (1.0 - w) + y * w).collect()
        };
        values.push(row);
    }
    Ok(UniformSeries { start_index: k0, rate, values, gaps })
}
