//! Central finite-difference gradient checking.

use super::Tensor;

/// Denominator floor in the relative error `|a - n| / max(|a|, |n|, floor)`.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradFailure {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tol: f64,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Inputs without a gradient slot.
    pub skipped: Vec<usize>,
    pub failures: Vec<GradFailure>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Checks every element of every input that tracks a gradient.
///
/// `f` maps the inputs to a scalar loss and the analytic gradient of that
/// loss with respect to each input (entries for frozen inputs are ignored).
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64, tol: f64) -> GradCheckReport
where
    F: Fn(&[Tensor]) -> (f64, Vec<Vec<f64>>),
{
    grad_check_sampled(f, inputs, h, tol, usize::MAX)
}

/// As [`grad_check`] but checks at most `limit` evenly strided elements per input.
pub fn grad_check_sampled<F>(f: F, inputs: &[Tensor], h: f64, tol: f64, limit: usize) -> GradCheckReport
where
    F: Fn(&[Tensor]) -> (f64, Vec<Vec<f64>>),
{
    let (_, analytic) = f(inputs);
    let mut work = inputs.to_vec();
    let mut report = GradCheckReport { tol, max_rel_error: 0.0, checked: 0, skipped: Vec::new(), failures: Vec::new() };
    for (i, input) in inputs.iter().enumerate() {
        if !input.tracks_grad() {
            report.skipped.push(i);
            continue;
        }
        let n = input.len();
        let stride = n.div_ceil(limit.max(1)).max(1);
        for idx in (0..n).step_by(stride) {
            let orig = work[i].data()[idx];
            work[i].data_mut()[idx] = orig + h;
            let (fp, _) = f(&work);
            work[i].data_mut()[idx] = orig - h;
            let (fm, _) = f(&work);
            work[i].data_mut()[idx] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[i][idx];
            let err = rel_error(a, numeric);
            report.checked += 1;
            report.max_rel_error = report.max_rel_error.max(err);
            if !(err <= tol) {
                report.failures.push(GradFailure { input: i, index: idx, analytic: a, numeric, rel_error: err });
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(xs: &[Tensor]) -> (f64, Vec<Vec<f64>>) {
        let x = xs[0].data();
        let c = xs[1].data();
        let loss = x.iter().zip(c).map(|(a, b)| a * a * b).sum();
        (loss, vec![x.iter().zip(c).map(|(a, b)| 2.0 * a * b).collect(), x.iter().map(|a| a * a).collect()])
    }

    #[test]
    fn frozen_inputs_are_skipped() {
        let x = Tensor::vector(vec![0.3, -1.2]).requires_grad();
        let c = Tensor::vector(vec![2.0, 0.5]);
        let report = grad_check(quadratic, &[x, c], 1e-5, 1e-6);
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.skipped, vec![1]);
        assert_eq!(report.checked, 2);
    }

    #[test]
    fn corrupted_backward_fails() {
        let x = Tensor::vector(vec![0.3, -1.2]).requires_grad();
        let c = Tensor::vector(vec![2.0, 0.5]).requires_grad();
        let bad = |xs: &[Tensor]| {
            let (l, mut g) = quadratic(xs);
            g[0][1] *= 1.5;
            (l, g)
        };
        let report = grad_check(bad, &[x, c], 1e-5, 1e-4);
        assert!(!report.passed());
        assert_eq!(report.failures.len(), 1);
        assert_eq!((report.failures[0].input, report.failures[0].index), (0, 1));
    }
}
