//! Shared fixtures and independent oracles for integration tests.
//!
//! The oracles work on plain `Vec<f64>` with straightforward two-pass loops
//! and never call into the library's numeric code.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use neural_collapse::etf::SimplexEtf;
use neural_collapse::io::ActivationPack;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, &gaussian_vec(rng, rows * cols, scale))
}

/// Pack with per-class Gaussian offsets around random class centers.
pub fn random_pack(seed: u64, p: usize, c: usize, n: usize) -> ActivationPack {
    let mut rng = rng(seed);
    let centers: Vec<Vec<f64>> = (0..c).map(|_| gaussian_vec(&mut rng, p, 3.0)).collect();
    let mut data = Vec::with_capacity(p * c * n);
    for center in &centers {
        for _ in 0..n {
            let noise = gaussian_vec(&mut rng, p, 1.0);
            data.extend(center.iter().zip(&noise).map(|(a, b)| a + b));
        }
    }
    ActivationPack::new(p, c, n, data).unwrap()
}

/// Exactly collapsed pack: every row of class c equals μ_G + m_c, where the
/// m_c are the columns of a randomly posed simplex ETF.
pub fn collapsed_etf_pack(
    seed: u64,
    p: usize,
    c: usize,
    n: usize,
    scale: f64,
) -> (ActivationPack, DMatrix<f64>, DVector<f64>) {
    let mut rng = rng(seed);
    let m = SimplexEtf::random(c, p, scale, &mut rng).unwrap().realize();
    let mu_g = DVector::from_vec(gaussian_vec(&mut rng, p, 1.0));
    let mut data = Vec::with_capacity(p * c * n);
    for class in 0..c {
        let row = &mu_g + m.column(class);
        for _ in 0..n {
            data.extend(row.iter().copied());
        }
    }
    (ActivationPack::new(p, c, n, data).unwrap(), m, mu_g)
}

/// Two-pass population moments: (μ_G, Σ_T, Σ_B, Σ_W) as row-major p×p.
pub struct OracleMoments {
    pub global_mean: Vec<f64>,
    pub total: Vec<f64>,
    pub between: Vec<f64>,
    pub within: Vec<f64>,
}

pub fn oracle_moments(pack: &ActivationPack) -> OracleMoments {
    let (p, c, n) = (pack.feature_dim(), pack.num_classes(), pack.per_class());
    let total_rows = (c * n) as f64;
    let mut mu_g = vec![0.0; p];
    for row in pack.data().chunks(p) {
        for j in 0..p {
            mu_g[j] += row[j];
        }
    }
    mu_g.iter_mut().for_each(|v| *v /= total_rows);

    let mut means = vec![vec![0.0; p]; c];
    for (class, mean) in means.iter_mut().enumerate() {
        for i in 0..n {
            let row = pack.class_row(class, i);
            for j in 0..p {
                mean[j] += row[j];
            }
        }
        mean.iter_mut().for_each(|v| *v /= n as f64);
    }

    let mut total = vec![0.0; p * p];
    let mut within = vec![0.0; p * p];
    let mut between = vec![0.0; p * p];
    for (class, mean) in means.iter().enumerate() {
        for i in 0..n {
            let row = pack.class_row(class, i);
            for a in 0..p {
                for b in 0..p {
                    total[a * p + b] += (row[a] - mu_g[a]) * (row[b] - mu_g[b]);
                    within[a * p + b] += (row[a] - mean[a]) * (row[b] - mean[b]);
                }
            }
        }
        for a in 0..p {
            for b in 0..p {
                between[a * p + b] += (mean[a] - mu_g[a]) * (mean[b] - mu_g[b]);
            }
        }
    }
    total.iter_mut().for_each(|v| *v /= total_rows);
    within.iter_mut().for_each(|v| *v /= total_rows);
    between.iter_mut().for_each(|v| *v /= c as f64);
    OracleMoments {
        global_mean: mu_g,
        total,
        between,
        within,
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

/// Row-major copy of a matrix.
pub fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Standard normal upper tail reference values computed with 50-digit
/// arbitrary-precision arithmetic.
pub const Q_1_25: f64 = 0.105_649_773_666_855_26;
pub const Q_5_OVER_3: f64 = 0.047_790_352_272_814_71;
pub const Q_2: f64 = 0.022_750_131_948_179_21;
pub const Q_2_5: f64 = 0.006_209_665_325_776_135;
