//! Codebook + Gaussian channel + linear decoder.
//!
//! A class `γ` is sent as the codeword `μ_γ` (a column of the codebook `M`),
//! received as `h = μ_γ + z` with `z ~ N(0, σ²I)`, and decoded by
//! `argmax_c ⟨w_c, h⟩ + b_c`. As `σ → 0` the error probability behaves like
//! `exp(−β/σ²)`; this module computes `β` in closed form and estimates the
//! error rate by Monte Carlo.
//!
//! The ambient space is `ℝ^C`: codebooks in higher dimension must be
//! rotated into `ℝ^C` by the caller.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::etf::standard_etf;

#[derive(Debug, Clone, PartialEq)]
pub struct CodecInstance {
    codebook: DMatrix<f64>,
    decoder: DMatrix<f64>,
    bias: DVector<f64>,
    sigma: f64,
}

impl CodecInstance {
    pub fn new(codebook: DMatrix<f64>, decoder: DMatrix<f64>, bias: DVector<f64>, sigma: f64) -> Result<Self> {
        let c = codebook.ncols();
        if c < 2 {
            return Err(Error::arg(format!("codebook needs C >= 2 columns, got {c}")));
        }
        if codebook.nrows() != c || decoder.shape() != (c, c) || bias.len() != c {
            return Err(Error::dims(format!(
                "codec needs C x C codebook and decoder and length-C bias; got M {:?}, W {:?}, b {}",
                codebook.shape(),
                decoder.shape(),
                bias.len()
            )));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::arg(format!("sigma must be positive, got {sigma}")));
        }
        if codebook
            .iter()
            .chain(decoder.iter())
            .chain(bias.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::arg("codec entries must be finite"));
        }
        if let Some((idx, n)) = codebook
            .column_iter()
            .map(|col| col.norm())
            .enumerate()
            .find(|(_, n)| *n > 1.0 + 1e-10)
        {
            return Err(Error::arg(format!("codeword {idx} has norm {n} > 1")));
        }
        Ok(CodecInstance {
            codebook,
            decoder,
            bias,
            sigma,
        })
    }

    /// `M = W = M★`, `b = 0`.
    pub fn simplex(num_classes: usize, sigma: f64) -> Result<Self> {
        let star = standard_etf(num_classes)?;
        CodecInstance::new(star.clone(), star, DVector::zeros(num_classes), sigma)
    }

    pub fn num_classes(&self) -> usize {
        self.codebook.ncols()
    }

    pub fn codebook(&self) -> &DMatrix<f64> {
        &self.codebook
    }

    pub fn decoder(&self) -> &DMatrix<f64> {
        &self.decoder
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        CodecInstance::new(self.codebook.clone(), self.decoder.clone(), self.bias.clone(), sigma)
    }

    fn decode(&self, h: &[f64]) -> usize {
        let c = self.num_classes();
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for k in 0..c {
            let mut score = self.bias[k];
            for (j, x) in h.iter().enumerate() {
                score += self.decoder[(k, j)] * x;
            }
            if k == 0 || score > best_score {
                best = k;
                best_score = score;
            }
        }
        best
    }
}

/// Standard normal upper tail `Q(x) = ½ erfc(x/√2)`, accurate to about
/// 1e-14 relative for `x` in `[0, 37]`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExponentReport {
    /// `β_{c,c'}`; the diagonal is NaN. `+∞` marks an unreachable event.
    pub beta_pairwise: DMatrix<f64>,
    /// `β_c = min_{c'≠c} β_{c,c'}`
    pub beta_per_class: DVector<f64>,
    /// `β = min_c β_c`
    pub beta: f64,
    /// Distance from `μ_c` to the decision halfspace of `c'`, i.e. `√(2β_{c,c'})`.
    pub margins: DMatrix<f64>,
    /// Pairs `(c, c')` with `w_c = w_c'` and `b_c ≤ b_c'`.
    pub degenerate_pairs: Vec<(usize, usize)>,
    /// Pairs `(c, c')` with `w_c = w_c'` and `b_c > b_c'`.
    pub unreachable_pairs: Vec<(usize, usize)>,
}

impl ExponentReport {
    /// Smallest finite margin, `√(2β)`.
    pub fn min_margin(&self) -> f64 {
        (2.0 * self.beta).sqrt()
    }
}

/// Closest point to the origin of
/// `K_{c,c'} = {z : ⟨w_c' − w_c, μ_c + z⟩ + b_c' − b_c ≥ 0}`, or `None`
/// when the decoder rows coincide.
pub fn closest_misclassifying_noise(instance: &CodecInstance, class: usize, other: usize) -> Option<DVector<f64>> {
    let g = (instance.decoder.row(class) - instance.decoder.row(other)).transpose();
    let g_sq = g.norm_squared();
    if g_sq == 0.0 {
        return None;
    }
    let slack = g.dot(&instance.codebook.column(class)) + instance.bias[class] - instance.bias[other];
    if slack <= 0.0 {
        return Some(DVector::zeros(g.len()));
    }
    Some(g * (-slack / g_sq))
}

pub fn analytic_exponent(instance: &CodecInstance) -> ExponentReport {
    let c = instance.num_classes();
    let mut beta_pairwise = DMatrix::from_element(c, c, f64::NAN);
    let mut margins = DMatrix::from_element(c, c, f64::NAN);
    let mut degenerate_pairs = Vec::new();
    let mut unreachable_pairs = Vec::new();
    for i in 0..c {
        for j in (0..c).filter(|&j| j != i) {
            let g = (instance.decoder.row(i) - instance.decoder.row(j)).transpose();
            let g_norm = g.norm();
            let offset = instance.bias[i] - instance.bias[j];
            let d = if g_norm == 0.0 {
                if offset > 0.0 {
                    unreachable_pairs.push((i, j));
                    f64::INFINITY
                } else {
                    degenerate_pairs.push((i, j));
                    0.0
                }
            } else {
                ((g.dot(&instance.codebook.column(i)) + offset) / g_norm).max(0.0)
            };
            margins[(i, j)] = d;
            beta_pairwise[(i, j)] = 0.5 * d * d;
        }
    }
    let beta_per_class = DVector::from_fn(c, |i, _| {
        (0..c)
            .filter(|&j| j != i)
            .map(|j| beta_pairwise[(i, j)])
            .fold(f64::INFINITY, f64::min)
    });
    let beta = beta_per_class.iter().copied().fold(f64::INFINITY, f64::min);
    ExponentReport {
        beta_pairwise,
        beta_per_class,
        beta,
        margins,
        degenerate_pairs,
        unreachable_pairs,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub trials: u64,
    pub errors: u64,
    pub error_rate: f64,
    /// `1.96 √(p̂(1−p̂)/trials)`
    pub ci_halfwidth: f64,
}

/// Trials per independently seeded block.
const BLOCK: u64 = 1 << 14;

fn simulate_block(instance: &CodecInstance, seed: u64, block: u64, trials: u64) -> u64 {
    let c = instance.num_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block);
    let start = block * BLOCK;
    let end = (start + BLOCK).min(trials);
    let mut h = vec![0.0; c];
    let mut errors = 0;
    for t in start..end {
        let class = (t % c as u64) as usize;
        for (j, x) in h.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            *x = instance.codebook[(j, class)] + instance.sigma * z;
        }
        if instance.decode(&h) != class {
            errors += 1;
        }
    }
    errors
}

/// Monte Carlo error rate with classes stratified (trial `t` sends class
/// `t mod C`). Trial blocks draw from independent ChaCha streams keyed by
/// `(seed, block)`, so the result does not depend on the thread count.
pub fn simulate_error_rate(instance: &CodecInstance, trials: u64, seed: u64) -> Result<McEstimate> {
    if trials == 0 {
        return Err(Error::arg("trials must be at least 1"));
    }
    let blocks = trials.div_ceil(BLOCK);
    let errors: u64 = (0..blocks)
        .into_par_iter()
        .map(|b| simulate_block(instance, seed, b, trials))
        .sum();
    let rate = errors as f64 / trials as f64;
    Ok(McEstimate {
        trials,
        errors,
        error_rate: rate,
        ci_halfwidth: 1.96 * (rate * (1.0 - rate) / trials as f64).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentPoint {
    pub sigma: f64,
    pub estimate: McEstimate,
    /// `−σ² log p̂`; `None` when no errors were observed.
    pub empirical_exponent: Option<f64>,
}

/// `−σ² log p̂(σ)` along a list of noise levels. Each level reuses `seed`.
pub fn exponent_estimate(
    instance: &CodecInstance,
    sigmas: &[f64],
    trials: u64,
    seed: u64,
) -> Result<Vec<ExponentPoint>> {
    sigmas
        .iter()
        .map(|&sigma| {
            let inst = instance.with_sigma(sigma)?;
            let estimate = simulate_error_rate(&inst, trials, seed)?;
            let empirical_exponent = (estimate.errors > 0).then(|| -sigma * sigma * estimate.error_rate.ln());
            Ok(ExponentPoint {
                sigma,
                estimate,
                empirical_exponent,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q_function_values() {
        assert!((q_function(0.0) - 0.5).abs() < 1e-15);
        assert!((q_function(2.5) - 0.006_209_665_325_776_132).abs() < 1e-15);
        assert!((q_function(1.0) - 0.158_655_253_931_457_05).abs() < 1e-15);
        // 30-digit reference values
        for (x, q) in [
            (3.0, 1.349_898_031_630_094_5e-3),
            (5.0, 2.866_515_718_791_939e-7),
            (8.0, 6.220_960_574_271_784e-16),
        ] {
            assert!(((q_function(x) - q) / q).abs() < 1e-14, "Q({x})");
        }
    }

    #[test]
    fn simplex_exponent_values() {
        assert!((analytic_exponent(&CodecInstance::simplex(2, 1.0).unwrap()).beta - 0.5).abs() < 1e-12);
        let b10 = analytic_exponent(&CodecInstance::simplex(10, 1.0).unwrap()).beta;
        assert!((b10 - 10.0 / 36.0).abs() < 1e-12);
        assert_eq!((b10 * 1e4).round() / 1e4, 0.2778);
    }

    #[test]
    fn inward_perturbation_lowers_beta() {
        let base = CodecInstance::simplex(4, 1.0).unwrap();
        let mut m = base.codebook().clone();
        m.column_mut(2).scale_mut(0.9);
        let shrunk = CodecInstance::new(m, base.decoder().clone(), base.bias().clone(), 1.0).unwrap();
        assert!(analytic_exponent(&shrunk).beta < analytic_exponent(&base).beta);
    }

    #[test]
    fn degenerate_and_unreachable_pairs() {
        let m = DMatrix::<f64>::identity(2, 2) * 0.5;
        let w = DMatrix::from_element(2, 2, 1.0);
        let inst = CodecInstance::new(m.clone(), w.clone(), DVector::from_vec(vec![1.0, 0.0]), 1.0).unwrap();
        let rep = analytic_exponent(&inst);
        assert_eq!(rep.unreachable_pairs, vec![(0, 1)]);
        assert_eq!(rep.degenerate_pairs, vec![(1, 0)]);
        assert!(rep.beta_pairwise[(0, 1)].is_infinite());
        assert_eq!(rep.beta_pairwise[(1, 0)], 0.0);
        assert_eq!(rep.beta, 0.0);
    }

    #[test]
    fn codec_validation() {
        let big = DMatrix::<f64>::identity(2, 2) * 2.0;
        assert!(CodecInstance::new(big, DMatrix::identity(2, 2), DVector::zeros(2), 1.0).is_err());
        assert!(CodecInstance::simplex(3, 0.0).is_err());
        assert!(CodecInstance::new(DMatrix::identity(2, 2), DMatrix::identity(3, 3), DVector::zeros(2), 1.0).is_err());
    }

    #[test]
    fn tiny_noise_has_no_errors() {
        let inst = CodecInstance::simplex(4, 1e-6).unwrap();
        let est = simulate_error_rate(&inst, 10_000, 3).unwrap();
        assert_eq!(est.errors, 0);
        assert_eq!(est.error_rate, 0.0);
    }

    #[test]
    fn zero_error_entries_are_unusable() {
        let inst = CodecInstance::simplex(2, 1.0).unwrap();
        let pts = exponent_estimate(&inst, &[1e-3], 1000, 1).unwrap();
        assert!(pts[0].empirical_exponent.is_none());
    }

    #[test]
    fn simulation_is_reproducible() {
        let inst = CodecInstance::simplex(3, 0.5).unwrap();
        let a = simulate_error_rate(&inst, 50_000, 9).unwrap();
        let b = simulate_error_rate(&inst, 50_000, 9).unwrap();
        assert_eq!(a, b);
        let c = simulate_error_rate(&inst, 50_000, 10).unwrap();
        assert_ne!(a.errors, c.errors);
    }
}
