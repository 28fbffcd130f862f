//! Neural Collapse trajectory metrics (NC1–NC4), computed per epoch from
//! train activations and, when available, the last-layer classifier.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::DecisionRule;
use crate::error::{Error, Result};
use crate::etf::etf_deviation;
use crate::io::{read_classifier_file, read_pack_file, ActivationPack, ClassifierSnapshot, EpochManifest};
use crate::linalg::mean_std;
use crate::moments::{compute_moments, default_rtol, pseudo_inverse, Moments};

/// `Tr(Σ_W Σ_B†)`
pub fn nc1_trace(m: &Moments, rtol: f64) -> Result<f64> {
    let between_pinv = pseudo_inverse(&m.sigma_between, rtol)?;
    Ok((&m.sigma_within * between_pinv).trace())
}

/// `Tr(Σ_W Σ_B†) / C`
pub fn nc1_collapse(m: &Moments, rtol: f64) -> Result<f64> {
    Ok(nc1_trace(m, rtol)? / m.num_classes() as f64)
}

/// Coefficient of variation (population std over mean) of the column norms.
pub fn equinorm_cv(vectors: &DMatrix<f64>) -> Result<f64> {
    if vectors.ncols() < 2 {
        return Err(Error::arg("need at least 2 vectors"));
    }
    let norms: Vec<f64> = vectors.column_iter().map(|c| c.norm()).collect();
    let (mean, std) = mean_std(&norms);
    if mean == 0.0 {
        return Err(Error::Degenerate("all vectors are zero".into()));
    }
    Ok(std / mean)
}

/// Std of the cosines over distinct column pairs.
pub fn equiangularity_std(vectors: &DMatrix<f64>) -> Result<f64> {
    Ok(etf_deviation(vectors)?.cosine_std)
}

/// Avg over distinct column pairs of `|cos + 1/(C−1)|`.
pub fn max_equiangularity(vectors: &DMatrix<f64>) -> Result<f64> {
    Ok(etf_deviation(vectors)?.max_angle_dev)
}

fn check_classifier(m: &Moments, clf: &ClassifierSnapshot) -> Result<()> {
    if clf.num_classes() != m.num_classes() || clf.feature_dim() != m.feature_dim() {
        return Err(Error::dims(format!(
            "classifier is C={}, p={} but activations are C={}, p={}",
            clf.num_classes(),
            clf.feature_dim(),
            m.num_classes(),
            m.feature_dim()
        )));
    }
    Ok(())
}

/// `‖W̃ᵀ − M̃‖²_F` with both sides scaled to unit Frobenius norm.
pub fn duality_gap(m: &Moments, clf: &ClassifierSnapshot) -> Result<f64> {
    check_classifier(m, clf)?;
    let w_norm = clf.weights.norm();
    let m_norm = m.centered_means.norm();
    if w_norm == 0.0 {
        return Err(Error::Degenerate("classifier weights are zero".into()));
    }
    if m_norm == 0.0 {
        return Err(Error::Degenerate("centered class means are zero".into()));
    }
    let diff = clf.weights.transpose() / w_norm - &m.centered_means / m_norm;
    Ok(diff.norm_squared())
}

/// Fraction of `probe` rows where the classifier's decision differs from
/// the nearest-train-mean decision.
pub fn ncc_mismatch(clf: &ClassifierSnapshot, train_means: &[DVector<f64>], probe: &ActivationPack) -> Result<f64> {
    if train_means.len() != clf.num_classes() {
        return Err(Error::dims(format!(
            "{} class means for a {}-class classifier",
            train_means.len(),
            clf.num_classes()
        )));
    }
    if probe.feature_dim() != clf.feature_dim() {
        return Err(Error::dims(format!(
            "probe has p={} but classifier has p={}",
            probe.feature_dim(),
            clf.feature_dim()
        )));
    }
    let linear = DecisionRule::linear(clf);
    let ncc = DecisionRule::nearest_class_center(train_means.to_vec())?;
    let rows = probe.num_rows();
    let mut disagree = 0usize;
    for i in 0..rows {
        let h = probe.row(i);
        if linear.decide(h)? != ncc.decide(h)? {
            disagree += 1;
        }
    }
    Ok(disagree as f64 / rows as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeSet {
    Train,
    Test,
}

impl ProbeSet {
    pub fn as_str(self) -> &'static str {
        match self {
            ProbeSet::Train => "train",
            ProbeSet::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NcReport {
    pub epoch: u64,
    pub nc1_within_over_between: f64,
    /// `Tr(Σ_W Σ_B†)` without the `1/C` factor.
    pub nc1_trace: f64,
    /// Σ_B was numerically zero, so NC1 is 0 by the pseudoinverse convention.
    pub between_degenerate: bool,
    pub norm_cv_means: f64,
    pub norm_cv_classifier: Option<f64>,
    pub angle_std_means: f64,
    pub angle_std_classifier: Option<f64>,
    pub max_angle_means: f64,
    pub max_angle_classifier: Option<f64>,
    pub duality_gap: Option<f64>,
    pub ncc_mismatch: Option<f64>,
    pub probe_set: Option<ProbeSet>,
    pub classifier_present: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    /// Pseudoinverse cutoff; `None` uses [`default_rtol`].
    pub rtol: Option<f64>,
    /// Preferred NC4 probe set. `Test` falls back to the train pack when an
    /// epoch has no test pack.
    pub probe: ProbeSet,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            rtol: None,
            probe: ProbeSet::Test,
        }
    }
}

/// All metrics for one epoch.
pub fn epoch_report(
    epoch: u64,
    train: &ActivationPack,
    classifier: Option<&ClassifierSnapshot>,
    test: Option<&ActivationPack>,
    opts: ReportOptions,
) -> Result<NcReport> {
    let m = compute_moments(train)?;
    let rtol = opts.rtol.unwrap_or_else(|| default_rtol(m.feature_dim()));
    let nc1_trace = nc1_trace(&m, rtol)?;
    let means_dev = etf_deviation(&m.centered_means)?;
    let between_degenerate = m.sigma_between.amax() == 0.0;

    let mut report = NcReport {
        epoch,
        nc1_within_over_between: nc1_trace / m.num_classes() as f64,
        nc1_trace,
        between_degenerate,
        norm_cv_means: means_dev.norm_cv,
        norm_cv_classifier: None,
        angle_std_means: means_dev.cosine_std,
        angle_std_classifier: None,
        max_angle_means: means_dev.max_angle_dev,
        max_angle_classifier: None,
        duality_gap: None,
        ncc_mismatch: None,
        probe_set: None,
        classifier_present: classifier.is_some(),
    };

    if let Some(clf) = classifier {
        clf.check_against(train)?;
        let rows = clf.weights.transpose();
        let clf_dev = etf_deviation(&rows)?;
        report.norm_cv_classifier = Some(clf_dev.norm_cv);
        report.angle_std_classifier = Some(clf_dev.cosine_std);
        report.max_angle_classifier = Some(clf_dev.max_angle_dev);
        report.duality_gap = Some(duality_gap(&m, clf)?);

        let (probe, probe_set) = match (opts.probe, test) {
            (ProbeSet::Test, Some(t)) => (t, ProbeSet::Test),
            _ => (train, ProbeSet::Train),
        };
        report.ncc_mismatch = Some(ncc_mismatch(clf, &m.class_means, probe)?);
        report.probe_set = Some(probe_set);
    }
    Ok(report)
}

#[derive(Debug)]
pub struct EpochReport {
    pub epoch: u64,
    pub outcome: std::result::Result<NcReport, String>,
}

impl EpochReport {
    pub fn is_ok(&self) -> bool {
        self.outcome.is_ok()
    }
}

fn load_and_report(manifest: &EpochManifest, index: usize, opts: ReportOptions) -> Result<((usize, usize), NcReport)> {
    let entry = &manifest.epochs[index];
    let train = read_pack_file(manifest.resolve(&entry.pack))?;
    let dims = (train.feature_dim(), train.num_classes());
    let classifier = entry
        .classifier
        .as_ref()
        .map(|p| read_classifier_file(manifest.resolve(p)))
        .transpose()?;
    let test = entry
        .test_pack
        .as_ref()
        .map(|p| read_pack_file(manifest.resolve(p)))
        .transpose()?;
    if let Some(t) = &test {
        if t.feature_dim() != train.feature_dim() || t.num_classes() != train.num_classes() {
            return Err(Error::dims(format!(
                "test pack is p={}, C={} but train pack is p={}, C={}",
                t.feature_dim(),
                t.num_classes(),
                train.feature_dim(),
                train.num_classes()
            )));
        }
    }
    let report = epoch_report(entry.epoch, &train, classifier.as_ref(), test.as_ref(), opts)?;
    Ok((dims, report))
}

/// One report per manifest epoch, in manifest order. Failures are recorded
/// per epoch; epochs whose `(p, C)` differ from the first readable epoch are
/// marked as dimension mismatches.
pub fn trajectory_report(manifest: &EpochManifest, opts: ReportOptions) -> Vec<EpochReport> {
    let results: Vec<Result<((usize, usize), NcReport)>> = (0..manifest.epochs.len())
        .into_par_iter()
        .map(|i| load_and_report(manifest, i, opts))
        .collect();
    let reference = results.iter().find_map(|r| r.as_ref().ok().map(|(dims, _)| *dims));
    results
        .into_iter()
        .zip(&manifest.epochs)
        .map(|(res, entry)| {
            let outcome = match res {
                Ok((dims, report)) => match reference {
                    Some(r) if r != dims => Err(Error::dims(format!(
                        "epoch has p={}, C={} but trajectory started with p={}, C={}",
                        dims.0, dims.1, r.0, r.1
                    ))
                    .to_string()),
                    _ => Ok(report),
                },
                Err(e) => Err(e.to_string()),
            };
            EpochReport {
                epoch: entry.epoch,
                outcome,
            }
        })
        .collect()
}
