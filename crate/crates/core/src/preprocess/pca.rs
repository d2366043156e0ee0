use crate::error::{Error, Result};

pub const POWER_ITERATION_TOL: f64 = 1e-10;
pub const POWER_ITERATION_MAX: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    /// Mean-centred data projected on the leading eigenvector, one value per row.
    pub scores: Vec<f64>,
    /// Unit-norm leading eigenvector of the column covariance.
    pub component: Vec<f64>,
    /// Leading eigenvalue (Rayleigh quotient of `component`).
    pub eigenvalue: f64,
    /// `eigenvalue / trace(covariance)`.
    pub explained_ratio: f64,
    pub iterations: usize,
}

/// Sample covariance (`n - 1` normalisation) of the columns of `data` `[rows][cols]`,
/// along with the column means.
pub fn covariance(data: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let rows = data.len();
    let cols = data[0].len();
    let mut mean = vec![0.0; cols];
    for row in data {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    let mut cov = vec![vec![0.0; cols]; cols];
    let mut centred = vec![0.0; cols];
    for row in data {
        for ((c, v), m) in centred.iter_mut().zip(row).zip(&mean) {
            *c = v - m;
        }
        for i in 0..cols {
            let ci = centred[i];
            let out = &mut cov[i];
            for j in i..cols {
                out[j] += ci * centred[j];
            }
        }
    }
    let denom = (rows - 1) as f64;
    for i in 0..cols {
        for j in i..cols {
            let v = cov[i][j] / denom;
            cov[i][j] = v;
            cov[j][i] = v;
        }
    }
    (mean, cov)
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Power iteration for the leading eigenvector of a symmetric PSD matrix.
/// Starts from the matrix row of largest norm.
pub fn leading_eigenvector(m: &[Vec<f64>]) -> (Vec<f64>, usize) {
    let start = m
        .iter()
        .enumerate()
        .map(|(i, r)| (i, dot(r, r)))
        .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best })
        .0;
    let mut v = m[start].clone();
    let norm = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    let mut iterations = 0;
    for it in 1..=POWER_ITERATION_MAX {
        iterations = it;
        let mut next = mat_vec(m, &v);
        let norm = dot(&next, &next).sqrt();
        if norm == 0.0 {
            break;
        }
        next.iter_mut().for_each(|x| *x /= norm);
        let sign = if dot(&next, &v) < 0.0 { -1.0 } else { 1.0 };
        let delta = next.iter().zip(&v).map(|(a, b)| (a * sign - b).powi(2)).sum::<f64>().sqrt();
        v = next;
        if delta < POWER_ITERATION_TOL {
            break;
        }
    }
    (v, iterations)
}

/// First principal component of `data` `[time][subcarrier]`.
///
/// The component is oriented so the scores correlate non-negatively with the
/// mean-over-subcarriers series.
pub fn pca_first_component(data: &[Vec<f64>]) -> Result<PcaProjection> {
    if data.len() < 2 || data[0].is_empty() {
        return Err(Error::DegenerateWindow("PCA needs at least two rows and one column".into()));
    }
    let (mean, cov) = covariance(data);
    let trace: f64 = (0..cov.len()).map(|i| cov[i][i]).sum();
    if !(trace > f64::MIN_POSITIVE) {
        return Err(Error::DegenerateWindow("zero total variance".into()));
    }
    let (mut component, iterations) = leading_eigenvector(&cov);
    let centred = |row: &Vec<f64>| row.iter().zip(&mean).map(|(v, m)| v - m).collect::<Vec<f64>>();
    let mut scores: Vec<f64> = data.iter().map(|r| dot(&centred(r), &component)).collect();
    let reference: Vec<f64> = data.iter().map(|r| centred(r).iter().sum::<f64>()).collect();
    if dot(&scores, &reference) < 0.0 {
        component.iter_mut().for_each(|c| *c = -*c);
        scores.iter_mut().for_each(|s| *s = -*s);
    }
    let eigenvalue = dot(&component, &mat_vec(&cov, &component));
    Ok(PcaProjection { scores, component, eigenvalue, explained_ratio: eigenvalue / trace, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, SymmetricEigen};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn sample_variance(x: &[f64]) -> f64 {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
    }

    #[test]
    fn rank_one_data() {
        let s: Vec<f64> = (0..50).map(|t| (t as f64 * 0.3).sin() + 0.1 * t as f64).collect();
        let scales = [1.0, -2.0, 0.5, 3.0];
        let data: Vec<Vec<f64>> = s.iter().map(|v| scales.iter().map(|c| c * v).collect()).collect();
        let out = pca_first_component(&data).unwrap();
        assert!((out.explained_ratio - 1.0).abs() < 1e-12);
        let mean_s = s.iter().sum::<f64>() / s.len() as f64;
        let ratio = out.scores[0] / (s[0] - mean_s);
        for (score, v) in out.scores.iter().zip(&s) {
            assert!((score - ratio * (v - mean_s)).abs() < 1e-9);
        }
    }

    #[test]
    fn picks_larger_variance_direction() {
        // Directions (1,-1)/√2 with variance 4 and (1,1)/√2 with variance 1.
        // Covariance [[2.5,-1.5],[-1.5,2.5]] has eigenpairs 4 ↔ (1,-1)/√2 and 1 ↔ (1,1)/√2.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 4000;
        let data: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let a: f64 = rng.random_range(-1.0..1.0) * 2.0 * 3f64.sqrt();
                let b: f64 = rng.random_range(-1.0..1.0) * 3f64.sqrt();
                let h = std::f64::consts::FRAC_1_SQRT_2;
                vec![h * (a + b), h * (b - a)]
            })
            .collect();
        let out = pca_first_component(&data).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((out.component[0].abs() - h).abs() < 0.02);
        assert!(out.component[0] * out.component[1] < 0.0);
        assert!((out.eigenvalue - 4.0).abs() < 0.3);
    }

    #[test]
    fn zero_variance_is_degenerate() {
        let data = vec![vec![1.0, 2.0]; 10];
        assert!(matches!(pca_first_component(&data), Err(Error::DegenerateWindow(_))));
    }

    fn random_data(seed: u64, rows: usize, cols: usize) -> Vec<Vec<f64>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let latent: Vec<f64> = (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        (0..rows)
            .map(|t| {
                let s = (t as f64 * 0.2).sin() * 3.0;
                latent.iter().map(|l| l * s + rng.random_range(-0.3..0.3)).collect()
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn projection_variance_is_top_eigenvalue(seed in any::<u64>(), cols in 2usize..20) {
            let data = random_data(seed, 120, cols);
            let out = pca_first_component(&data).unwrap();
            let (_, cov) = covariance(&data);
            let m = DMatrix::from_fn(cols, cols, |i, j| cov[i][j]);
            let eig = SymmetricEigen::new(m);
            let top = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((sample_variance(&out.scores) - top).abs() < 1e-8);
            prop_assert!((out.eigenvalue - top).abs() < 1e-8);
        }

        #[test]
        fn invariant_under_subcarrier_permutation(seed in any::<u64>(), cols in 2usize..12) {
            let data = random_data(seed, 80, cols);
            let mut perm: Vec<usize> = (0..cols).collect();
            use rand::seq::SliceRandom;
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed.wrapping_add(1)));
            let permuted: Vec<Vec<f64>> = data.iter().map(|r| perm.iter().map(|&j| r[j]).collect()).collect();
            let a = pca_first_component(&data).unwrap();
            let b = pca_first_component(&permuted).unwrap();
            for (x, y) in a.scores.iter().zip(&b.scores) {
                prop_assert!((x - y).abs() < 1e-7);
            }
        }
    }
}
