//! Small dense helpers shared by the statistics modules.
//!
//! Reductions go through a fixed binary tree so that results do not depend
//! on how the work is split across threads.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Leaves of the reduction tree hold at most this many terms.
const PAIRWISE_BLOCK: usize = 32;

/// Pairwise (cascade) summation of a slice.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= PAIRWISE_BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Pairwise reduction of `count` terms where `term(i, acc)` adds term `i`
/// into an accumulator of length `len`.
pub fn pairwise_accumulate<F>(count: usize, len: usize, term: &F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]),
{
    fn go<F: Fn(usize, &mut [f64])>(lo: usize, hi: usize, len: usize, term: &F) -> Vec<f64> {
        if hi - lo <= PAIRWISE_BLOCK {
            let mut acc = vec![0.0; len];
            for i in lo..hi {
                term(i, &mut acc);
            }
            return acc;
        }
        let mid = lo + (hi - lo) / 2;
        let mut left = go(lo, mid, len, term);
        let right = go(mid, hi, len, term);
        for (l, r) in left.iter_mut().zip(&right) {
            *l += r;
        }
        left
    }
    if count == 0 {
        return vec![0.0; len];
    }
    go(0, count, len, term)
}

/// Sum a list of equally sized buffers with the same fixed tree.
pub fn pairwise_merge(parts: &[Vec<f64>], len: usize) -> Vec<f64> {
    pairwise_accumulate(parts.len(), len, &|i, acc: &mut [f64]| {
        for (a, v) in acc.iter_mut().zip(&parts[i]) {
            *a += v;
        }
    })
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = pairwise_sum(values) / n;
    let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    (mean, (pairwise_sum(&dev) / n).sqrt())
}

pub fn columns(m: &DMatrix<f64>) -> Vec<DVector<f64>> {
    m.column_iter().map(|c| c.into_owned()).collect()
}

/// A `rows × cols` matrix with orthonormal columns, drawn from the
/// Haar measure via QR of a Gaussian matrix with sign correction.
pub fn random_orthonormal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    assert!(cols <= rows, "need rows >= cols for orthonormal columns");
    let g = DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Largest deviation of `QᵀQ` from the identity.
pub fn orthonormality_defect(q: &DMatrix<f64>) -> f64 {
    let gram = q.transpose() * q;
    let eye = DMatrix::<f64>::identity(q.ncols(), q.ncols());
    max_abs(&(gram - eye))
}
