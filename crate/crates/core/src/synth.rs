//! Synthetic activation trajectories with a controllable approach to the
//! collapsed end state.
//!
//! Epoch `e` draws `h_{i,c} = μ_G + m_c(e) + s_e ε_{i,c}` with standard normal
//! `ε`, where the class offsets `m_c(e)` either sit on a realized simplex
//! ETF throughout or drift linearly from random centered offsets to it. The
//! classifier snapshot is `W_e = (1 − t_e) R + t_e Ṁ(e)ᵀ` for a fixed random
//! `R`, with `Ṁ(e)` the measured centered means of the epoch's pack.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::etf::SimplexEtf;
use crate::io::{
    write_classifier_file, write_pack_file, ActivationPack, ClassifierSnapshot, EpochEntry, EpochManifest,
};
use crate::moments::compute_moments;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanTrajectory {
    #[default]
    FixedEtf,
    DriftToEtf,
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub feature_dim: usize,
    pub num_classes: usize,
    pub per_class: usize,
    pub epochs: usize,
    /// Per-epoch noise scale `s_e`; defaults to a geometric decay from 1 to 1e-3.
    #[serde(default)]
    pub noise_schedule: Option<Vec<f64>>,
    #[serde(default)]
    pub mean_trajectory: MeanTrajectory,
    /// Per-epoch interpolation `t_e ∈ [0, 1]`, nondecreasing; defaults to
    /// `e / (epochs − 1)`.
    #[serde(default)]
    pub interpolation: Option<Vec<f64>>,
    #[serde(default = "default_scale")]
    pub scale: f64,
    pub seed: u64,
    /// Defaults to `𝟙/√p`.
    #[serde(default)]
    pub global_mean: Option<Vec<f64>>,
}

impl SynthConfig {
    pub fn new(feature_dim: usize, num_classes: usize, per_class: usize, epochs: usize, seed: u64) -> Self {
        SynthConfig {
            feature_dim,
            num_classes,
            per_class,
            epochs,
            noise_schedule: None,
            mean_trajectory: MeanTrajectory::FixedEtf,
            interpolation: None,
            scale: 1.0,
            seed,
            global_mean: None,
        }
    }

    pub fn noise(&self) -> Vec<f64> {
        self.noise_schedule
            .clone()
            .unwrap_or_else(|| geometric_schedule(1.0, 1e-3, self.epochs))
    }

    pub fn interpolation(&self) -> Vec<f64> {
        self.interpolation.clone().unwrap_or_else(|| {
            if self.epochs <= 1 {
                vec![1.0; self.epochs]
            } else {
                (0..self.epochs).map(|e| e as f64 / (self.epochs - 1) as f64).collect()
            }
        })
    }

    pub fn global_mean(&self) -> DVector<f64> {
        match &self.global_mean {
            Some(v) => DVector::from_column_slice(v),
            None => DVector::from_element(self.feature_dim, 1.0 / (self.feature_dim as f64).sqrt()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::arg("synth needs C >= 2"));
        }
        if self.feature_dim < self.num_classes {
            return Err(Error::arg(format!(
                "synth needs p >= C to place a simplex ETF (p={}, C={})",
                self.feature_dim, self.num_classes
            )));
        }
        if self.per_class == 0 || self.epochs == 0 {
            return Err(Error::arg("per_class and epochs must be positive"));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::arg("scale must be positive"));
        }
        let noise = self.noise();
        if noise.len() != self.epochs {
            return Err(Error::arg(format!(
                "noise schedule has {} entries for {} epochs",
                noise.len(),
                self.epochs
            )));
        }
        if noise.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::arg("noise scales must be finite and >= 0"));
        }
        let t = self.interpolation();
        if t.len() != self.epochs {
            return Err(Error::arg(format!(
                "interpolation has {} entries for {} epochs",
                t.len(),
                self.epochs
            )));
        }
        if t.iter().any(|v| !(0.0..=1.0).contains(v)) || t.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::arg("interpolation must lie in [0, 1] and be nondecreasing"));
        }
        if let Some(g) = &self.global_mean {
            if g.len() != self.feature_dim || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::arg("global_mean must have length p and be finite"));
            }
        }
        Ok(())
    }
}

/// `len` values decaying geometrically from `first` to `last`.
pub fn geometric_schedule(first: f64, last: f64, len: usize) -> Vec<f64> {
    match len {
        0 => Vec::new(),
        1 => vec![first],
        _ => {
            let ratio = (last / first).powf(1.0 / (len - 1) as f64);
            (0..len).map(|e| first * ratio.powi(e as i32)).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthEpoch {
    pub epoch: u64,
    pub noise: f64,
    pub interpolation: f64,
    pub pack: ActivationPack,
    pub classifier: ClassifierSnapshot,
}

struct Fixture {
    etf: DMatrix<f64>,
    start: DMatrix<f64>,
    random_classifier: DMatrix<f64>,
    global_mean: DVector<f64>,
}

fn gaussian_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn fixture(config: &SynthConfig) -> Result<Fixture> {
    let (p, c) = (config.feature_dim, config.num_classes);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let etf = SimplexEtf::random(c, p, config.scale, &mut rng)?.realize();

    let mut start = gaussian_matrix(p, c, &mut rng);
    let centroid = start.column_mean();
    for mut col in start.column_iter_mut() {
        col -= &centroid;
    }
    // same overall energy as the ETF
    let target = config.scale * (c as f64).sqrt();
    start *= target / start.norm();

    let random_classifier = gaussian_matrix(c, p, &mut rng) * (config.scale / (p as f64).sqrt());
    Ok(Fixture {
        etf,
        start,
        random_classifier,
        global_mean: config.global_mean(),
    })
}

fn generate_epoch(config: &SynthConfig, fx: &Fixture, epoch: usize, noise: f64, t: f64) -> Result<SynthEpoch> {
    let (p, c, n) = (config.feature_dim, config.num_classes, config.per_class);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(epoch as u64 + 1);

    let offsets = match config.mean_trajectory {
        MeanTrajectory::FixedEtf => fx.etf.clone(),
        MeanTrajectory::DriftToEtf => &fx.start * (1.0 - t) + &fx.etf * t,
    };
    let mut data = Vec::with_capacity(p * c * n);
    for class in 0..c {
        for _ in 0..n {
            for j in 0..p {
                let eps: f64 = rng.sample(StandardNormal);
                data.push(fx.global_mean[j] + offsets[(j, class)] + noise * eps);
            }
        }
    }
    let pack = ActivationPack::new(p, c, n, data)?;

    let m = compute_moments(&pack)?;
    let weights = &fx.random_classifier * (1.0 - t) + m.centered_means.transpose() * t;
    // b_c = −⟨w_c, μ̂_G⟩ − ½‖w_c‖², which makes W = Ṁᵀ agree exactly with
    // the nearest-class-mean rule.
    let bias = DVector::from_fn(c, |k, _| {
        let w = weights.row(k);
        -(w * &m.global_mean)[0] - 0.5 * w.norm_squared()
    });
    Ok(SynthEpoch {
        epoch: epoch as u64,
        noise,
        interpolation: t,
        pack,
        classifier: ClassifierSnapshot::new(weights, bias)?,
    })
}

/// Generate every epoch in memory. Epochs use independent random streams
/// and may be produced concurrently.
pub fn generate_epochs(config: &SynthConfig) -> Result<Vec<SynthEpoch>> {
    config.validate()?;
    let fx = fixture(config)?;
    let noise = config.noise();
    let t = config.interpolation();
    (0..config.epochs)
        .into_par_iter()
        .map(|e| generate_epoch(config, &fx, e, noise[e], t[e]))
        .collect()
}

/// Generate, write `epoch_NNNN.ncap` / `epoch_NNNN.nclf` and `manifest.json`
/// into `out_dir`, and return the manifest.
pub fn generate(config: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<EpochManifest> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let epochs = generate_epochs(config)?;
    let mut entries = Vec::with_capacity(epochs.len());
    for ep in &epochs {
        let pack_name = format!("epoch_{:04}.ncap", ep.epoch);
        let clf_name = format!("epoch_{:04}.nclf", ep.epoch);
        write_pack_file(&ep.pack, out_dir.join(&pack_name))?;
        write_classifier_file(&ep.classifier, out_dir.join(&clf_name))?;
        entries.push(EpochEntry {
            epoch: ep.epoch,
            pack: pack_name.into(),
            classifier: Some(clf_name.into()),
            test_pack: None,
        });
    }
    let mut meta = BTreeMap::new();
    meta.insert("generator".to_string(), serde_json::json!("synth"));
    meta.insert("config".to_string(), serde_json::to_value(config)?);
    let manifest = EpochManifest::new(entries, meta).with_base_dir(out_dir);
    manifest.save(out_dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::etf::etf_deviation;
    use crate::metrics::{duality_gap, nc1_collapse};

    #[test]
    fn geometric_defaults() {
        let s = geometric_schedule(1.0, 1e-3, 4);
        assert_eq!(s.len(), 4);
        assert!((s[0] - 1.0).abs() < 1e-15);
        assert!((s[3] - 1e-3).abs() < 1e-15);
        assert!((s[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn noiseless_fixed_etf_is_collapsed_everywhere() {
        let mut cfg = SynthConfig::new(6, 4, 5, 3, 1);
        cfg.noise_schedule = Some(vec![0.0; 3]);
        for ep in generate_epochs(&cfg).unwrap() {
            let m = compute_moments(&ep.pack).unwrap();
            assert!(nc1_collapse(&m, 1e-12).unwrap() < 1e-20);
            let dev = etf_deviation(&m.centered_means).unwrap();
            assert!(dev.norm_cv < 1e-10 && dev.cosine_std < 1e-10 && dev.max_angle_dev < 1e-10);
        }
    }

    #[test]
    fn drift_ends_self_dual() {
        let mut cfg = SynthConfig::new(8, 3, 10, 5, 2);
        cfg.mean_trajectory = MeanTrajectory::DriftToEtf;
        let eps = generate_epochs(&cfg).unwrap();
        let last = eps.last().unwrap();
        let m = compute_moments(&last.pack).unwrap();
        assert!(duality_gap(&m, &last.classifier).unwrap() < 1e-9);
    }

    #[test]
    fn config_validation() {
        let mut cfg = SynthConfig::new(3, 4, 2, 2, 0);
        assert!(cfg.validate().is_err());
        cfg.feature_dim = 4;
        assert!(cfg.validate().is_ok());
        cfg.noise_schedule = Some(vec![1.0]);
        assert!(cfg.validate().is_err());
        cfg.noise_schedule = None;
        cfg.interpolation = Some(vec![0.5, 0.2]);
        assert!(cfg.validate().is_err());
        cfg.interpolation = Some(vec![0.2, 0.5]);
        cfg.noise_schedule = Some(vec![1.0, -1.0]);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_json_defaults() {
        let cfg: SynthConfig = serde_json::from_str(
            r#"{"feature_dim": 8, "num_classes": 3, "per_class": 4, "epochs": 5, "seed": 7,
                "mean_trajectory": "drift_to_etf"}"#,
        )
        .unwrap();
        assert_eq!(cfg.mean_trajectory, MeanTrajectory::DriftToEtf);
        assert_eq!(cfg.scale, 1.0);
        assert_eq!(cfg.noise().len(), 5);
        assert_eq!(cfg.interpolation(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }
}
