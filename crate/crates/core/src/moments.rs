//! First and second moments of a balanced activation pack.
//!
//! All covariances use the population convention (divide by the count).
//! Per-class work runs in parallel, but every reduction follows a fixed
//! pairwise tree so the output is bitwise identical for any thread count.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::ActivationPack;
use crate::linalg::{max_abs, pairwise_accumulate, pairwise_merge};

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    /// μ_G
    pub global_mean: DVector<f64>,
    /// μ_c, one per class
    pub class_means: Vec<DVector<f64>>,
    pub sigma_total: DMatrix<f64>,
    pub sigma_between: DMatrix<f64>,
    pub sigma_within: DMatrix<f64>,
    /// p × C matrix whose column c is μ_c − μ_G.
    pub centered_means: DMatrix<f64>,
}

impl Moments {
    pub fn feature_dim(&self) -> usize {
        self.global_mean.len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_means.len()
    }
}

/// Default relative cutoff used by [`pseudo_inverse`] for a `p × p` input.
pub fn default_rtol(p: usize) -> f64 {
    1e-12 * p.max(1) as f64
}

struct ClassPartial {
    mean: Vec<f64>,
    scatter: Vec<f64>,
    total_scatter: Vec<f64>,
}

/// Average of outer products `(x − center)(x − center)ᵀ` over `rows`,
/// upper triangle accumulated and mirrored so the result is exactly
/// symmetric.
fn scatter_sum(rows: &[&[f64]], center: &[f64]) -> Vec<f64> {
    let p = center.len();
    let mut acc = pairwise_accumulate(rows.len(), p * p, &|i, acc: &mut [f64]| {
        let row = rows[i];
        for a in 0..p {
            let da = row[a] - center[a];
            let out = &mut acc[a * p..(a + 1) * p];
            for b in a..p {
                out[b] += da * (row[b] - center[b]);
            }
        }
    });
    for a in 0..p {
        for b in 0..a {
            acc[a * p + b] = acc[b * p + a];
        }
    }
    acc
}

fn mean_of(rows: &[&[f64]], p: usize) -> Vec<f64> {
    let n = rows.len() as f64;
    let mut acc = pairwise_accumulate(rows.len(), p, &|i, acc: &mut [f64]| {
        for (a, v) in acc.iter_mut().zip(rows[i]) {
            *a += v;
        }
    });
    acc.iter_mut().for_each(|v| *v /= n);
    acc
}

fn square(p: usize, buf: Vec<f64>, scale: f64) -> DMatrix<f64> {
    // buffers are row-major and symmetric, so column-major reading is fine
    DMatrix::from_vec(p, p, buf) * scale
}

pub fn compute_moments(pack: &ActivationPack) -> Result<Moments> {
    let p = pack.feature_dim();
    let c = pack.num_classes();
    let n = pack.per_class();
    if c < 2 {
        return Err(Error::arg("moments need at least 2 classes"));
    }

    let all_rows: Vec<&[f64]> = (0..pack.num_rows()).map(|i| pack.row(i)).collect();
    let global_mean = mean_of(&all_rows, p);

    let partials: Vec<ClassPartial> = (0..c)
        .into_par_iter()
        .map(|class| {
            let rows = &all_rows[class * n..(class + 1) * n];
            let mean = mean_of(rows, p);
            let scatter = scatter_sum(rows, &mean);
            let total_scatter = scatter_sum(rows, &global_mean);
            ClassPartial {
                mean,
                scatter,
                total_scatter,
            }
        })
        .collect();

    let within: Vec<Vec<f64>> = partials.iter().map(|pc| pc.scatter.clone()).collect();
    let total: Vec<Vec<f64>> = partials.iter().map(|pc| pc.total_scatter.clone()).collect();
    let sigma_within = square(p, pairwise_merge(&within, p * p), 1.0 / (c * n) as f64);
    let sigma_total = square(p, pairwise_merge(&total, p * p), 1.0 / (c * n) as f64);

    let means: Vec<&[f64]> = partials.iter().map(|pc| pc.mean.as_slice()).collect();
    let sigma_between = square(p, scatter_sum(&means, &global_mean), 1.0 / c as f64);

    let class_means: Vec<DVector<f64>> = partials.iter().map(|pc| DVector::from_column_slice(&pc.mean)).collect();
    let global_mean = DVector::from_vec(global_mean);
    let centered_means = DMatrix::from_fn(p, c, |i, j| class_means[j][i] - global_mean[i]);

    Ok(Moments {
        global_mean,
        class_means,
        sigma_total,
        sigma_between,
        sigma_within,
        centered_means,
    })
}

/// Moore–Penrose pseudoinverse of a symmetric PSD matrix through its
/// eigendecomposition. Eigenvalues at or below `rtol · λ_max` are treated
/// as zero.
pub fn pseudo_inverse(a: &DMatrix<f64>, rtol: f64) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::dims(format!(
            "pseudo_inverse needs a square matrix, got {:?}",
            a.shape()
        )));
    }
    if !(rtol > 0.0 && rtol.is_finite()) {
        return Err(Error::arg(format!("rtol must be positive, got {rtol}")));
    }
    let scale = max_abs(a);
    let asymmetry = max_abs(&(a - a.transpose()));
    if asymmetry > 1e-10 * scale {
        return Err(Error::NotSymmetric { asymmetry });
    }
    let p = a.nrows();
    if scale == 0.0 {
        return Ok(DMatrix::zeros(p, p));
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let lambda_max = eig.eigenvalues.max();
    if lambda_max <= 0.0 {
        return Ok(DMatrix::zeros(p, p));
    }
    let cutoff = rtol * lambda_max;
    let inv = eig.eigenvalues.map(|l| if l > cutoff { 1.0 / l } else { 0.0 });
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&inv) * v.transpose();
    Ok((&out + out.transpose()) * 0.5)
}
