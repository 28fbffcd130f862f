//! Simplex equiangular tight frames and the maximin-distance geometry
//! around them.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{mean_std, orthonormality_defect, random_orthonormal};

/// The standard simplex ETF `√(C/(C−1)) (I − 𝟙𝟙ᵀ/C)`, a `C × C` matrix whose
/// columns are unit vectors with pairwise cosine `−1/(C−1)`.
pub fn standard_etf(num_classes: usize) -> Result<DMatrix<f64>> {
    if num_classes < 2 {
        return Err(Error::arg(format!("simplex ETF needs C >= 2, got {num_classes}")));
    }
    let c = num_classes as f64;
    let scale = (c / (c - 1.0)).sqrt();
    Ok(DMatrix::from_fn(num_classes, num_classes, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        scale * (delta - 1.0 / c)
    }))
}

/// `√(2C/(C−1))`, the largest achievable minimum distance between `C`
/// points in the unit ball.
pub fn optimal_delta(num_classes: usize) -> f64 {
    let c = num_classes as f64;
    (2.0 * c / (c - 1.0)).sqrt()
}

/// A general simplex ETF `α U M★` with `U` a `p × C` matrix with orthonormal
/// columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexEtf {
    num_classes: usize,
    scale: f64,
    pose: DMatrix<f64>,
}

impl SimplexEtf {
    pub fn new(num_classes: usize, scale: f64, pose: DMatrix<f64>) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::arg(format!("simplex ETF needs C >= 2, got {num_classes}")));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::arg(format!("scale must be positive, got {scale}")));
        }
        if pose.ncols() != num_classes || pose.nrows() < num_classes {
            return Err(Error::dims(format!(
                "pose must be p x {num_classes} with p >= {num_classes}, got {:?}",
                pose.shape()
            )));
        }
        let defect = orthonormality_defect(&pose);
        if defect > 1e-10 {
            return Err(Error::NonOrthonormalPose(defect));
        }
        Ok(SimplexEtf {
            num_classes,
            scale,
            pose,
        })
    }

    /// Identity pose in `ℝ^C`.
    pub fn standard(num_classes: usize, scale: f64) -> Result<Self> {
        SimplexEtf::new(num_classes, scale, DMatrix::identity(num_classes, num_classes))
    }

    /// Uniformly random pose in `ℝ^p`.
    pub fn random<R: Rng + ?Sized>(num_classes: usize, ambient_dim: usize, scale: f64, rng: &mut R) -> Result<Self> {
        if ambient_dim < num_classes {
            return Err(Error::arg(format!(
                "ambient dimension {ambient_dim} is smaller than C={num_classes}"
            )));
        }
        SimplexEtf::new(num_classes, scale, random_orthonormal(ambient_dim, num_classes, rng))
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn ambient_dim(&self) -> usize {
        self.pose.nrows()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn pose(&self) -> &DMatrix<f64> {
        &self.pose
    }

    /// The `p × C` matrix `α U M★`.
    pub fn realize(&self) -> DMatrix<f64> {
        let star = standard_etf(self.num_classes).expect("C >= 2 checked at construction");
        &self.pose * star * self.scale
    }
}

/// How far a set of column vectors is from a simplex ETF.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EtfDeviation {
    /// Std/Avg of the column norms.
    pub norm_cv: f64,
    /// Std of pairwise cosines over distinct pairs.
    pub cosine_std: f64,
    /// Avg over distinct pairs of `|cos + 1/(C−1)|`.
    pub max_angle_dev: f64,
}

/// Cosines of all distinct unordered column pairs `c < c'`.
pub(crate) fn pairwise_cosines(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let norms: Vec<f64> = m.column_iter().map(|c| c.norm()).collect();
    if let Some(idx) = norms.iter().position(|&n| n == 0.0 || !n.is_finite()) {
        return Err(Error::DegenerateColumn(idx));
    }
    let c = m.ncols();
    let mut out = Vec::with_capacity(c * (c - 1) / 2);
    for i in 0..c {
        for j in i + 1..c {
            out.push(m.column(i).dot(&m.column(j)) / (norms[i] * norms[j]));
        }
    }
    Ok(out)
}

pub fn etf_deviation(m: &DMatrix<f64>) -> Result<EtfDeviation> {
    let c = m.ncols();
    if c < 2 {
        return Err(Error::arg(format!("need at least 2 columns, got {c}")));
    }
    let cosines = pairwise_cosines(m)?;
    let norms: Vec<f64> = m.column_iter().map(|col| col.norm()).collect();
    let (norm_mean, norm_std) = mean_std(&norms);
    let (_, cosine_std) = mean_std(&cosines);
    let target = 1.0 / (c as f64 - 1.0);
    let dev: Vec<f64> = cosines.iter().map(|v| (v + target).abs()).collect();
    let (max_angle_dev, _) = mean_std(&dev);
    Ok(EtfDeviation {
        norm_cv: norm_std / norm_mean,
        cosine_std,
        max_angle_dev,
    })
}

/// Minimum Euclidean distance between any two columns.
pub fn maximin_distance(m: &DMatrix<f64>) -> Result<f64> {
    let c = m.ncols();
    if c < 2 {
        return Err(Error::arg(format!("need at least 2 columns, got {c}")));
    }
    let mut best = f64::INFINITY;
    for i in 0..c {
        for j in i + 1..c {
            best = best.min((m.column(i) - m.column(j)).norm());
        }
    }
    Ok(best)
}

/// Circumcenter and circumradius of affinely independent columns, within
/// their affine hull.
pub fn circumsphere(m: &DMatrix<f64>) -> Result<(nalgebra::DVector<f64>, f64)> {
    let c = m.ncols();
    if c < 2 {
        return Err(Error::arg(format!("need at least 2 columns, got {c}")));
    }
    let base = m.column(0).into_owned();
    let diffs = DMatrix::from_fn(m.nrows(), c - 1, |i, j| m[(i, j + 1)] - base[i]);
    // ‖μ_k − p₀‖ = ‖μ_0 − p₀‖ with p₀ = μ_0 + D a  ⇔  2 DᵀD a = diag(DᵀD)
    let gram = diffs.transpose() * &diffs;
    let eig = gram.clone().symmetric_eigen();
    let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    if hi <= 0.0 || lo <= 1e-12 * hi {
        return Err(Error::NoUniqueCircumsphere("columns are affinely dependent".into()));
    }
    let rhs = gram.diagonal();
    let coeffs = (gram * 2.0)
        .cholesky()
        .ok_or_else(|| Error::NoUniqueCircumsphere("singular circumcenter system".into()))?
        .solve(&rhs);
    let center = base + &diffs * coeffs;
    let radius = (m.column(0) - &center).norm();
    Ok((center, radius))
}

/// Map the columns onto the unit sphere through their circumsphere:
/// `μ_c ↦ (μ_c − p₀)/r`. Inputs must lie in the unit ball and be affinely
/// independent; the result has unit-norm columns and no pairwise distance
/// shrinks.
pub fn mes_rescale(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some((idx, n)) = m
        .column_iter()
        .map(|col| col.norm())
        .enumerate()
        .find(|(_, n)| *n > 1.0 + 1e-10)
    {
        return Err(Error::arg(format!("column {idx} has norm {n} > 1")));
    }
    let (center, radius) = circumsphere(m)?;
    if radius > 1.0 + 1e-10 {
        // The circumcenter then lies outside the convex hull and the
        // circumsphere is not the minimal enclosing sphere.
        return Err(Error::NoUniqueCircumsphere(format!(
            "circumradius {radius} exceeds 1; circumsphere is not the minimal enclosing sphere"
        )));
    }
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        col -= &center;
        col /= radius;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaSearch {
    pub best_delta: f64,
    pub best_m: DMatrix<f64>,
    pub best_restart: usize,
}

const ASCENT_ROUNDS: usize = 40;
const INITIAL_STEP: f64 = 0.1;
const MIN_STEP: f64 = 1e-9;
const SOFTMIN_WIDTH: f64 = 0.02;

fn project_to_ball(col: &mut nalgebra::DVector<f64>) {
    let n = col.norm();
    if n > 1.0 {
        *col /= n;
    }
}

fn own_min_distance(cols: &[nalgebra::DVector<f64>], c: usize, candidate: &nalgebra::DVector<f64>) -> f64 {
    cols.iter()
        .enumerate()
        .filter(|(j, _)| *j != c)
        .map(|(_, other)| (candidate - other).norm())
        .fold(f64::INFINITY, f64::min)
}

fn ascend(cols: &mut [nalgebra::DVector<f64>]) {
    let c_count = cols.len();
    for _ in 0..ASCENT_ROUNDS {
        for c in 0..c_count {
            let current = own_min_distance(cols, c, &cols[c]);
            // repulsion from near neighbours, weighted by a soft-min
            let mut dir = nalgebra::DVector::zeros(cols[c].len());
            for (j, other) in cols.iter().enumerate() {
                if j == c {
                    continue;
                }
                let diff = &cols[c] - other;
                let d = diff.norm();
                if d > 0.0 {
                    dir += diff * ((-(d - current) / SOFTMIN_WIDTH).exp() / d);
                }
            }
            let len = dir.norm();
            if len == 0.0 || !len.is_finite() {
                continue;
            }
            dir /= len;
            let mut step = INITIAL_STEP;
            while step > MIN_STEP {
                let mut candidate = &cols[c] + &dir * step;
                project_to_ball(&mut candidate);
                if own_min_distance(cols, c, &candidate) > current {
                    cols[c] = candidate;
                    break;
                }
                step *= 0.5;
            }
        }
    }
}

fn search_restart(num_classes: usize, seed: u64) -> (f64, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols: Vec<nalgebra::DVector<f64>> = (0..num_classes)
        .map(|_| {
            let v = nalgebra::DVector::from_fn(num_classes, |_, _| rng.sample::<f64, _>(StandardNormal));
            let n = v.norm();
            v / n
        })
        .collect();
    ascend(&mut cols);
    let m = DMatrix::from_columns(&cols);
    let delta = maximin_distance(&m).expect("C >= 2");
    (delta, m)
}

/// Randomised search for `max Δ(M)` over `C × C` matrices with columns in
/// the unit ball. Each restart draws random unit columns and runs a
/// coordinate ascent on the minimum pairwise distance. Restart `k` is
/// seeded with `seed + k`; the best restart wins, lowest index on ties.
pub fn delta_optimality_search(num_classes: usize, budget: usize, seed: u64) -> Result<DeltaSearch> {
    if num_classes < 2 {
        return Err(Error::arg(format!("need C >= 2, got {num_classes}")));
    }
    if budget == 0 {
        return Err(Error::arg("budget must be at least 1"));
    }
    let results: Vec<(f64, DMatrix<f64>)> = (0..budget)
        .into_par_iter()
        .map(|k| search_restart(num_classes, seed.wrapping_add(k as u64)))
        .collect();
    let mut best_restart = 0;
    for (k, (delta, _)) in results.iter().enumerate() {
        if *delta > results[best_restart].0 {
            best_restart = k;
        }
    }
    let (best_delta, best_m) = results.into_iter().nth(best_restart).expect("budget >= 1");
    Ok(DeltaSearch {
        best_delta,
        best_m,
        best_restart,
    })
}
