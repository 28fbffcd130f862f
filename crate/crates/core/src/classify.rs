//! Decision rules and classifier constructions: the linear argmax rule,
//! nearest class-center, the closed-form MSE-optimal (Webb–Lowe) classifier,
//! and a bias-free multiclass max-margin solver.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::ClassifierSnapshot;
use crate::moments::{pseudo_inverse, Moments};

#[derive(Debug, Clone, PartialEq)]
pub enum DecisionRule {
    /// `argmax_c ⟨w_c, h⟩ + b_c`
    Linear { weights: DMatrix<f64>, bias: DVector<f64> },
    /// `argmin_c ‖h − μ_c‖₂`
    NearestClassCenter { means: Vec<DVector<f64>> },
}

impl DecisionRule {
    pub fn linear(clf: &ClassifierSnapshot) -> Self {
        DecisionRule::Linear {
            weights: clf.weights.clone(),
            bias: clf.bias.clone(),
        }
    }

    pub fn nearest_class_center(means: Vec<DVector<f64>>) -> Result<Self> {
        let p = means.first().map_or(0, |m| m.len());
        if means.len() < 2 || p == 0 {
            return Err(Error::arg("NCC needs at least 2 non-empty means"));
        }
        if means.iter().any(|m| m.len() != p) {
            return Err(Error::dims("class means have differing lengths"));
        }
        Ok(DecisionRule::NearestClassCenter { means })
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            DecisionRule::Linear { weights, .. } => weights.ncols(),
            DecisionRule::NearestClassCenter { means } => means[0].len(),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            DecisionRule::Linear { weights, .. } => weights.nrows(),
            DecisionRule::NearestClassCenter { means } => means.len(),
        }
    }

    /// Class index chosen for `h`; ties go to the lowest index.
    pub fn decide(&self, h: &[f64]) -> Result<usize> {
        if h.len() != self.feature_dim() {
            return Err(Error::dims(format!(
                "activation has length {} but rule expects {}",
                h.len(),
                self.feature_dim()
            )));
        }
        Ok(match self {
            DecisionRule::Linear { weights, bias } => {
                let scores = (0..weights.nrows())
                    .map(|c| weights.row(c).iter().zip(h).map(|(w, x)| w * x).sum::<f64>() + bias[c]);
                first_extremum(scores, |new, best| new > best)
            }
            DecisionRule::NearestClassCenter { means } => {
                let dists = means
                    .iter()
                    .map(|m| m.iter().zip(h).map(|(a, b)| (a - b) * (a - b)).sum::<f64>());
                first_extremum(dists, |new, best| new < best)
            }
        })
    }
}

fn first_extremum(values: impl Iterator<Item = f64>, better: impl Fn(f64, f64) -> bool) -> usize {
    let mut best_idx = 0;
    let mut best = f64::NAN;
    for (i, v) in values.enumerate() {
        if i == 0 || better(v, best) {
            best_idx = i;
            best = v;
        }
    }
    best_idx
}

/// MSE-optimal linear classifier on fixed features:
/// `W = (1/C) Ṁᵀ Σ_T†`, `b = (1/C) 𝟙 − (1/C) Ṁᵀ Σ_T† μ_G`.
pub fn webb_lowe(m: &Moments, rtol: f64) -> Result<ClassifierSnapshot> {
    let c = m.num_classes() as f64;
    let total_pinv = pseudo_inverse(&m.sigma_total, rtol)?;
    let weights = m.centered_means.transpose() * total_pinv / c;
    let bias = DVector::from_element(m.num_classes(), 1.0 / c) - &weights * &m.global_mean;
    ClassifierSnapshot::new(weights, bias)
}

/// `W = α Ṁᵀ`, `b = 𝟙/C − α Ṁᵀ μ_G`: the collapsed form of the Webb–Lowe
/// classifier.
pub fn self_dual_classifier(m: &Moments, alpha: f64) -> Result<ClassifierSnapshot> {
    let weights = m.centered_means.transpose() * alpha;
    let bias = DVector::from_element(m.num_classes(), 1.0 / m.num_classes() as f64) - &weights * &m.global_mean;
    ClassifierSnapshot::new(weights, bias)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxMarginOptions {
    pub tol: f64,
    pub max_sweeps: usize,
    /// Shuffle the constraint order on each sweep.
    pub seed: Option<u64>,
}

impl Default for MaxMarginOptions {
    fn default() -> Self {
        MaxMarginOptions {
            tol: 1e-6,
            max_sweeps: 200_000,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxMarginSolution {
    /// `C × p`
    pub weights: DMatrix<f64>,
    /// Multipliers, one per `(class, other, point)` constraint.
    pub duals: Vec<f64>,
    pub sweeps: usize,
    /// `max_k max(0, 1 − ⟨w_c − w_c', x_k⟩)`
    pub violation: f64,
    /// `max_k λ_k |⟨w_c − w_c', x_k⟩ − 1|`
    pub complementarity: f64,
    /// `‖W − Σ_k λ_k A_k‖_max`, recomputed from scratch.
    pub stationarity: f64,
}

impl MaxMarginSolution {
    pub fn kkt_residual(&self) -> f64 {
        self.violation.max(self.complementarity).max(self.stationarity)
    }
}

struct Constraint {
    class: usize,
    other: usize,
    point: usize,
}

/// Solve `min ½‖W‖²_F` subject to `⟨w_c − w_c', x⟩ ≥ 1` for every point `x`
/// of class `c` and every `c' ≠ c`, by coordinate ascent on the dual
/// (Hildreth's method).
///
/// `groups[c]` lists the points of class `c`.
pub fn max_margin_solve_points(groups: &[Vec<DVector<f64>>], opts: MaxMarginOptions) -> Result<MaxMarginSolution> {
    let num_classes = groups.len();
    if num_classes < 2 {
        return Err(Error::arg("max-margin needs at least 2 classes"));
    }
    let p = groups
        .iter()
        .flatten()
        .next()
        .map(|x| x.len())
        .ok_or_else(|| Error::arg("no points"))?;
    if groups.iter().flatten().any(|x| x.len() != p) {
        return Err(Error::dims("points have differing lengths"));
    }
    if opts.tol.is_nan() || opts.tol <= 0.0 {
        return Err(Error::arg("tol must be positive"));
    }

    let points: Vec<(usize, &DVector<f64>)> = groups
        .iter()
        .enumerate()
        .flat_map(|(c, pts)| pts.iter().map(move |x| (c, x)))
        .collect();
    for (i, (c, x)) in points.iter().enumerate() {
        if x.norm() == 0.0 {
            return Err(Error::Infeasible(format!("class {c} contains the zero vector")));
        }
        for (c2, y) in &points[i + 1..] {
            if c2 != c && x == y {
                return Err(Error::Infeasible(format!("classes {c} and {c2} share a point")));
            }
        }
    }

    let mut constraints = Vec::new();
    for (k, (c, _)) in points.iter().enumerate() {
        for other in (0..num_classes).filter(|o| o != c) {
            constraints.push(Constraint {
                class: *c,
                other,
                point: k,
            });
        }
    }
    let sq_norms: Vec<f64> = points.iter().map(|(_, x)| 2.0 * x.norm_squared()).collect();

    let mut weights = DMatrix::<f64>::zeros(num_classes, p);
    let mut duals = vec![0.0; constraints.len()];
    let mut order: Vec<usize> = (0..constraints.len()).collect();
    let mut rng = opts.seed.map(ChaCha8Rng::seed_from_u64);

    let margin = |w: &DMatrix<f64>, con: &Constraint| -> f64 {
        let x = points[con.point].1;
        (w.row(con.class) - w.row(con.other)).transpose().dot(x)
    };

    let mut sweeps = 0;
    let (mut violation, mut complementarity) = (f64::INFINITY, f64::INFINITY);
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        if let Some(rng) = rng.as_mut() {
            order.shuffle(rng);
        }
        for &k in &order {
            let con = &constraints[k];
            let x = points[con.point].1;
            let step = (1.0 - margin(&weights, con)) / sq_norms[con.point];
            let updated = (duals[k] + step).max(0.0);
            let delta = updated - duals[k];
            if delta != 0.0 {
                duals[k] = updated;
                for j in 0..p {
                    weights[(con.class, j)] += delta * x[j];
                    weights[(con.other, j)] -= delta * x[j];
                }
            }
        }
        violation = 0.0;
        complementarity = 0.0;
        for (k, con) in constraints.iter().enumerate() {
            let a = margin(&weights, con);
            violation = violation.max(1.0 - a);
            complementarity = complementarity.max(duals[k] * (a - 1.0).abs());
        }
        if violation <= opts.tol && complementarity <= opts.tol {
            break;
        }
    }

    let mut rebuilt = DMatrix::<f64>::zeros(num_classes, p);
    for (k, con) in constraints.iter().enumerate() {
        let x = points[con.point].1;
        for j in 0..p {
            rebuilt[(con.class, j)] += duals[k] * x[j];
            rebuilt[(con.other, j)] -= duals[k] * x[j];
        }
    }
    let stationarity = (&weights - &rebuilt).amax();

    if violation > opts.tol || complementarity > opts.tol {
        return Err(Error::NotConverged {
            iterations: sweeps,
            violation,
            complementarity,
        });
    }
    Ok(MaxMarginSolution {
        weights,
        duals,
        sweeps,
        violation: violation.max(0.0),
        complementarity,
        stationarity,
    })
}

/// Max-margin classifier when every activation sits at its class mean:
/// the constraints reduce to `⟨w_c − w_c', μ_c⟩ ≥ 1` on the columns of the
/// centered `p × C` mean matrix.
pub fn max_margin_solve(means: &DMatrix<f64>, opts: MaxMarginOptions) -> Result<MaxMarginSolution> {
    let col_sum = means.column_sum();
    if col_sum.norm() > 1e-10 * means.norm().max(1.0) {
        return Err(Error::arg(format!(
            "means must sum to zero (column sum norm {:e})",
            col_sum.norm()
        )));
    }
    let groups: Vec<Vec<DVector<f64>>> = means.column_iter().map(|c| vec![c.into_owned()]).collect();
    max_margin_solve_points(&groups, opts)
}

/// `‖W − Ṁᵀ‖_F / ‖Ṁ‖_F`
pub fn duality_residual(weights: &DMatrix<f64>, centered_means: &DMatrix<f64>) -> f64 {
    (weights - centered_means.transpose()).norm() / centered_means.norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::etf::standard_etf;
    use crate::io::ActivationPack;
    use crate::moments::compute_moments;

    #[test]
    fn linear_decision() {
        let rule = DecisionRule::Linear {
            weights: DMatrix::identity(2, 2),
            bias: DVector::zeros(2),
        };
        assert_eq!(rule.decide(&[0.1, 0.9]).unwrap(), 1);
    }

    #[test]
    fn ncc_decision_and_ties() {
        let rule = DecisionRule::nearest_class_center(vec![
            DVector::from_vec(vec![0.0, 0.0]),
            DVector::from_vec(vec![2.0, 0.0]),
        ])
        .unwrap();
        assert_eq!(rule.decide(&[0.9, 0.0]).unwrap(), 0);
        assert_eq!(rule.decide(&[1.1, 0.0]).unwrap(), 1);
        assert_eq!(rule.decide(&[1.0, 5.0]).unwrap(), 0);
    }

    #[test]
    fn linear_tie_goes_low() {
        let rule = DecisionRule::Linear {
            weights: DMatrix::zeros(3, 2),
            bias: DVector::from_vec(vec![0.0, 1.0, 1.0]),
        };
        assert_eq!(rule.decide(&[3.0, 4.0]).unwrap(), 1);
    }

    #[test]
    fn decide_dimension_mismatch() {
        let rule = DecisionRule::Linear {
            weights: DMatrix::identity(2, 2),
            bias: DVector::zeros(2),
        };
        assert!(matches!(rule.decide(&[1.0]), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn webb_lowe_scalar_example() {
        let pack = ActivationPack::new(1, 2, 2, vec![0.0, 2.0, 4.0, 6.0]).unwrap();
        let m = compute_moments(&pack).unwrap();
        let clf = webb_lowe(&m, 1e-12).unwrap();
        // hand evaluation: W = ½·[−2, 2]ᵀ·(1/5), b = ½ − 3W
        let w_hand = [0.5 * -2.0 / 5.0, 0.5 * 2.0 / 5.0];
        let b_hand = [0.5 - 3.0 * w_hand[0], 0.5 - 3.0 * w_hand[1]];
        for c in 0..2 {
            assert!((clf.weights[(c, 0)] - w_hand[c]).abs() < 1e-15);
            assert!((clf.bias[c] - b_hand[c]).abs() < 1e-15);
        }
        assert!((clf.weights[(0, 0)] + 0.2).abs() < 1e-15);
        assert!((clf.bias[0] - 1.1).abs() < 1e-14);
        assert!((clf.bias[1] + 0.1).abs() < 1e-14);
    }

    #[test]
    fn max_margin_two_class_closed_form() {
        let means = DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]);
        let sol = max_margin_solve(&means, MaxMarginOptions::default()).unwrap();
        assert!((&sol.weights - means.transpose()).amax() < 1e-6);
        for c in 0..2 {
            let o = 1 - c;
            let a = (sol.weights.row(c) - sol.weights.row(o))
                .transpose()
                .dot(&means.column(c));
            assert!((a - 1.0).abs() < 1e-6);
        }
        assert!(sol.kkt_residual() <= 1e-6);
    }

    #[test]
    fn max_margin_rejects_duplicates_and_uncentered() {
        let dup = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, -2.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            max_margin_solve(&dup, MaxMarginOptions::default()),
            Err(Error::Infeasible(_))
        ));
        let off = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        assert!(matches!(
            max_margin_solve(&off, MaxMarginOptions::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn max_margin_reports_non_convergence() {
        let etf = standard_etf(4).unwrap();
        let opts = MaxMarginOptions {
            max_sweeps: 1,
            ..Default::default()
        };
        assert!(matches!(max_margin_solve(&etf, opts), Err(Error::NotConverged { .. })));
    }
}
