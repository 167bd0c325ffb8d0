//! Synthetic longitudinal multimodal cohort with a known risk function.
//!
//! Each patient owns a latent vector `u` in R^8 drawn from a
//! class-conditional Gaussian mixture with equal-norm class means, so
//! the exact posterior `p(y | u)` is available in closed form (it is a
//! softmax affine in `u`) and is stored on the record as the `latent`
//! log-posterior vector. Image features, text tokens, diagnoses, age,
//! and length of stay are all noisy functions of `u` plus independent
//! noise, which keeps the stored posterior a true Bayes ceiling for
//! anything trained on the observables.
//!
//! Signal layout, chosen so every modality matters:
//! - image features project all of `u`, but the last two latent dims
//!   are attenuated by `img_tail_scale`;
//! - text tokens encode the sign pattern of the first three dims;
//! - diagnosis codes load on the last two dims, the ones images barely
//!   see, so the disease-graph pathway carries real signal;
//! - risk, age, diagnosis count, and length of stay all rise along a
//!   shared severity direction.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rng::Rng;

/// Latent dimensionality of the generative model.
pub const LATENT_DIM: usize = 8;
/// Number of text topics (sign pattern of the first three latent dims).
const TOPICS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sex {
    #[serde(rename = "F")]
    Female,
    #[serde(rename = "M")]
    Male,
}

/// One clinical encounter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Visit {
    /// Synthetic image feature vector, length `d_img`.
    pub img: Vec<f64>,
    /// Token ids below the vocabulary size.
    pub tokens: Vec<u32>,
    /// Days since the previous visit; zero for the first visit.
    pub delta_t: f64,
    /// Disease codes active at this visit, sorted ascending.
    pub dx: Vec<u16>,
}

/// One patient's longitudinal record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: u64,
    pub age: u32,
    pub sex: Sex,
    /// Outcome class in `0..classes`.
    pub label: usize,
    /// Log-posterior vector of the generative model (empty when the
    /// record was loaded from a file that did not carry it).
    #[serde(default)]
    pub latent: Vec<f64>,
    pub length_of_stay: f64,
    pub visits: Vec<Visit>,
}

impl PatientRecord {
    /// Distinct diagnosis codes across all visits, sorted.
    pub fn distinct_dx(&self) -> Vec<u16> {
        let mut codes: Vec<u16> = self.visits.iter().flat_map(|v| v.dx.iter().copied()).collect();
        codes.sort_unstable();
        codes.dedup();
        codes
    }

    /// Keep only the most recent `max_visits` visits; the first kept
    /// visit becomes the new sequence start (gap reset to zero).
    pub fn truncate_history(&self, max_visits: usize) -> PatientRecord {
        let max_visits = max_visits.max(1);
        if self.visits.len() <= max_visits {
            return self.clone();
        }
        let mut out = self.clone();
        out.visits = self.visits[self.visits.len() - max_visits..].to_vec();
        out.visits[0].delta_t = 0.0;
        out
    }
}

/// Generator configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortConfig {
    pub n_patients: usize,
    /// Outcome classes; at most [`LATENT_DIM`].
    pub classes: usize,
    /// Image feature dimensionality.
    pub d_img: usize,
    /// Text vocabulary size.
    pub vocab: usize,
    /// Upper bound on visits per patient (uniform 1..=max).
    pub max_visits: usize,
    /// Probability a gap is drawn from the long regime.
    pub p_long: f64,
    /// Short-gap bounds in days.
    pub short_gap: (f64, f64),
    /// Long-gap bounds in days.
    pub long_gap: (f64, f64),
    /// Target class prevalences; empty means uniform.
    pub prevalence: Vec<f64>,
    /// Per-visit Gaussian noise on image features.
    pub img_noise: f64,
    /// Distance scale between class means in latent space.
    pub separation: f64,
    /// Attenuation of the last two latent dims in the image projection.
    pub img_tail_scale: f64,
    /// Number of diagnosis codes.
    pub n_codes: usize,
    /// Codes per synthetic chapter of the two-level hierarchy.
    pub codes_per_chapter: usize,
    pub seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            n_patients: 2000,
            classes: 2,
            d_img: 16,
            vocab: 200,
            max_visits: 8,
            p_long: 0.4,
            short_gap: (3.0, 30.0),
            long_gap: (90.0, 730.0),
            prevalence: Vec::new(),
            img_noise: 1.2,
            separation: 1.2,
            img_tail_scale: 0.25,
            n_codes: 24,
            codes_per_chapter: 6,
            seed: 42,
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(CoreError::InvalidConfig(msg));
        if self.n_patients == 0 {
            return fail("n_patients must be at least 1".into());
        }
        if self.classes < 2 || self.classes > LATENT_DIM {
            return fail(format!(
                "classes must lie in 2..={LATENT_DIM}, got {}",
                self.classes
            ));
        }
        if self.d_img == 0 || self.vocab < TOPICS || self.max_visits == 0 || self.n_codes == 0 {
            return fail("d_img, vocab, max_visits, n_codes must all be positive (vocab >= 8)".into());
        }
        if !(0.0..=1.0).contains(&self.p_long) {
            return fail(format!("p_long must lie in [0, 1], got {}", self.p_long));
        }
        if !self.prevalence.is_empty() {
            if self.prevalence.len() != self.classes {
                return fail(format!(
                    "prevalence has {} entries for {} classes",
                    self.prevalence.len(),
                    self.classes
                ));
            }
            let sum: f64 = self.prevalence.iter().sum();
            if self.prevalence.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > 1e-6 {
                return fail(format!("prevalence must be nonnegative and sum to 1, sums to {sum}"));
            }
        }
        if self.img_noise < 0.0 || self.separation < 0.0 || self.img_tail_scale < 0.0 {
            return fail("noise and scale parameters must be nonnegative".into());
        }
        Ok(())
    }

    pub fn prevalence_vec(&self) -> Vec<f64> {
        if self.prevalence.is_empty() {
            vec![1.0 / self.classes as f64; self.classes]
        } else {
            self.prevalence.clone()
        }
    }
}

/// Cohort-level generative parameters, all derived from the seed.
struct Generator {
    class_means: Vec<Vec<f64>>,
    prevalence: Vec<f64>,
    img_proj: Vec<f64>,
    severity_dir: Vec<f64>,
    dx_dirs: Vec<(f64, f64)>,
}

impl Generator {
    fn new(cfg: &CohortConfig) -> Generator {
        let mut rng = Rng::new(cfg.seed).child(0xC0_40_2);
        // Orthonormal class directions via Gram-Schmidt on Gaussians.
        let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(cfg.classes);
        while dirs.len() < cfg.classes {
            let mut v: Vec<f64> = (0..LATENT_DIM).map(|_| rng.normal()).collect();
            for d in &dirs {
                let proj: f64 = v.iter().zip(d).map(|(a, b)| a * b).sum();
                for (vi, di) in v.iter_mut().zip(d) {
                    *vi -= proj * di;
                }
            }
            let norm = libm::sqrt(v.iter().map(|x| x * x).sum());
            if norm < 1e-6 {
                continue;
            }
            for vi in v.iter_mut() {
                *vi /= norm;
            }
            dirs.push(v);
        }
        let class_means: Vec<Vec<f64>> = dirs
            .iter()
            .map(|d| d.iter().map(|x| x * cfg.separation).collect())
            .collect();

        let mut img_proj = vec![0.0; cfg.d_img * LATENT_DIM];
        for (i, w) in img_proj.iter_mut().enumerate() {
            let col = i % LATENT_DIM;
            let scale = if col >= LATENT_DIM - 2 {
                cfg.img_tail_scale
            } else {
                1.0
            };
            *w = rng.uniform(-0.6, 0.6) * scale;
        }

        // Severity rises with class index.
        let c_half = (cfg.classes as f64 - 1.0) / 2.0;
        let mut severity_dir = vec![0.0; LATENT_DIM];
        for (c, mean) in class_means.iter().enumerate() {
            let w = c as f64 - c_half;
            for (s, m) in severity_dir.iter_mut().zip(mean) {
                *s += w * m;
            }
        }
        let norm = libm::sqrt(severity_dir.iter().map(|x| x * x).sum::<f64>()).max(1e-12);
        for s in severity_dir.iter_mut() {
            *s /= norm;
        }

        let dx_dirs = (0..cfg.n_codes)
            .map(|j| {
                let angle = core::f64::consts::TAU * j as f64 / cfg.n_codes as f64
                    + rng.uniform(-0.2, 0.2);
                (1.6 * libm::cos(angle), 1.6 * libm::sin(angle))
            })
            .collect();

        Generator {
            class_means,
            prevalence: cfg.prevalence_vec(),
            img_proj,
            severity_dir,
            dx_dirs,
        }
    }

    /// Exact log-posterior over classes given the latent vector.
    fn log_posterior(&self, u: &[f64]) -> Vec<f64> {
        self.class_means
            .iter()
            .zip(&self.prevalence)
            .map(|(mean, prev)| {
                let sq: f64 = u.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
                libm::log(prev.max(1e-300)) - 0.5 * sq
            })
            .collect()
    }

    fn severity(&self, u: &[f64]) -> f64 {
        u.iter().zip(&self.severity_dir).map(|(a, b)| a * b).sum()
    }
}

fn generate_patient(cfg: &CohortConfig, generator: &Generator, id: u64, rng: &mut Rng) -> PatientRecord {
    let label = rng.categorical(&generator.prevalence);
    let u: Vec<f64> = generator.class_means[label]
        .iter()
        .map(|m| m + rng.normal())
        .collect();
    let latent = generator.log_posterior(&u);
    let severity = generator.severity(&u);

    let age_raw = 58.0 + 13.0 * severity + 9.0 * rng.normal();
    let age = libm::round(age_raw).clamp(18.0, 100.0) as u32;
    let sex = if rng.bernoulli(0.5) { Sex::Female } else { Sex::Male };
    let length_of_stay = libm::exp(1.0 + 0.45 * severity + 0.4 * rng.normal());

    let n_visits = 1 + rng.below(cfg.max_visits);
    let band = cfg.vocab / TOPICS;
    let topic = (u[0] > 0.0) as usize | (((u[1] > 0.0) as usize) << 1) | (((u[2] > 0.0) as usize) << 2);

    let visits = (0..n_visits)
        .map(|t| {
            let delta_t = if t == 0 {
                0.0
            } else if rng.bernoulli(cfg.p_long) {
                rng.uniform(cfg.long_gap.0, cfg.long_gap.1)
            } else {
                rng.uniform(cfg.short_gap.0, cfg.short_gap.1)
            };

            let img: Vec<f64> = (0..cfg.d_img)
                .map(|i| {
                    let signal: f64 = (0..LATENT_DIM)
                        .map(|k| generator.img_proj[i * LATENT_DIM + k] * u[k])
                        .sum();
                    signal + cfg.img_noise * rng.normal()
                })
                .collect();

            let n_tok = 4 + rng.below(9);
            let tokens: Vec<u32> = (0..n_tok)
                .map(|_| {
                    if rng.bernoulli(0.75) {
                        (topic * band + rng.below(band)) as u32
                    } else {
                        rng.below(cfg.vocab) as u32
                    }
                })
                .collect();

            let tail = (u[LATENT_DIM - 2], u[LATENT_DIM - 1]);
            let dx: Vec<u16> = generator
                .dx_dirs
                .iter()
                .enumerate()
                .filter_map(|(j, (wx, wy))| {
                    let logit = wx * tail.0 + wy * tail.1 - 1.8 + 0.5 * severity;
                    if rng.bernoulli(crate::tensor::sigmoid_scalar(logit)) {
                        Some(j as u16)
                    } else {
                        None
                    }
                })
                .collect();

            Visit {
                img,
                tokens,
                delta_t,
                dx,
            }
        })
        .collect();

    PatientRecord {
        patient_id: id,
        age,
        sex,
        label,
        latent,
        length_of_stay,
        visits,
    }
}

/// Generate the full cohort. Patients derive independent child streams
/// keyed on patient id, so the output is order-stable and identical
/// across runs with the same config.
pub fn generate_cohort(cfg: &CohortConfig) -> Result<Vec<PatientRecord>> {
    cfg.validate()?;
    let generator = Generator::new(cfg);
    let root = Rng::new(cfg.seed);
    Ok((0..cfg.n_patients as u64)
        .map(|id| {
            let mut rng = root.child(1 + id);
            generate_patient(cfg, &generator, id, &mut rng)
        })
        .collect())
}

/// Exact generative-model posterior per patient, the Bayes ceiling.
/// Fails when any record was loaded without its stored latent.
pub fn bayes_scores(cohort: &[PatientRecord]) -> Result<Vec<Vec<f64>>> {
    cohort
        .iter()
        .map(|p| {
            if p.latent.is_empty() {
                return Err(CoreError::MissingLatent {
                    patient_id: p.patient_id,
                });
            }
            let mx = p.latent.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = p.latent.iter().map(|&l| libm::exp(l - mx)).collect();
            let sum: f64 = exps.iter().sum();
            Ok(exps.iter().map(|e| e / sum).collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(n: usize, seed: u64) -> CohortConfig {
        CohortConfig {
            n_patients: n,
            seed,
            ..CohortConfig::default()
        }
    }

    #[test]
    fn deterministic_across_runs() {
        let cfg = small_cfg(100, 7);
        let a = generate_cohort(&cfg).unwrap();
        let b = generate_cohort(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn contract_fields() {
        let cfg = small_cfg(100, 11);
        let cohort = generate_cohort(&cfg).unwrap();
        assert_eq!(cohort.len(), 100);
        for p in &cohort {
            assert!((18..=100).contains(&p.age), "age {}", p.age);
            assert!(!p.visits.is_empty());
            assert_eq!(p.visits[0].delta_t, 0.0);
            assert!(p.label < cfg.classes);
            assert_eq!(p.latent.len(), cfg.classes);
            for v in &p.visits {
                assert!(v.delta_t >= 0.0);
                assert!(v.tokens.iter().all(|&t| (t as usize) < cfg.vocab));
                assert!(v.dx.windows(2).all(|w| w[0] < w[1]), "dx sorted unique");
            }
        }
    }

    #[test]
    fn prevalence_tracks_targets() {
        let cfg = CohortConfig {
            n_patients: 10_000,
            prevalence: vec![0.5, 0.5],
            seed: 3,
            ..CohortConfig::default()
        };
        let cohort = generate_cohort(&cfg).unwrap();
        let pos = cohort.iter().filter(|p| p.label == 1).count() as f64 / 10_000.0;
        assert!((pos - 0.5).abs() <= 0.02, "prevalence {pos}");
    }

    #[test]
    fn gap_mixture_covers_both_regimes() {
        let cohort = generate_cohort(&small_cfg(500, 5)).unwrap();
        let gaps: Vec<f64> = cohort
            .iter()
            .flat_map(|p| p.visits.iter().skip(1).map(|v| v.delta_t))
            .collect();
        assert!(gaps.iter().any(|&g| g < 30.0));
        assert!(gaps.iter().any(|&g| g > 365.0));
    }

    #[test]
    fn bayes_balanced_latent_gives_half() {
        let record = PatientRecord {
            patient_id: 0,
            age: 50,
            sex: Sex::Female,
            label: 0,
            latent: vec![-2.3, -2.3],
            length_of_stay: 3.0,
            visits: vec![],
        };
        let scores = bayes_scores(&[record]).unwrap();
        assert!((scores[0][0] - 0.5).abs() < 1e-12);
        assert!((scores[0][1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bayes_is_deterministic_and_requires_latent() {
        let cohort = generate_cohort(&small_cfg(50, 9)).unwrap();
        assert_eq!(bayes_scores(&cohort).unwrap(), bayes_scores(&cohort).unwrap());

        let mut stripped = cohort.clone();
        stripped[10].latent.clear();
        assert!(matches!(
            bayes_scores(&stripped),
            Err(CoreError::MissingLatent { patient_id: 10 })
        ));
    }

    #[test]
    fn truncation_keeps_most_recent_and_resets_gap() {
        let cohort = generate_cohort(&CohortConfig {
            n_patients: 40,
            max_visits: 12,
            seed: 13,
            ..CohortConfig::default()
        })
        .unwrap();
        let long = cohort.iter().find(|p| p.visits.len() > 4).unwrap();
        let cut = long.truncate_history(4);
        assert_eq!(cut.visits.len(), 4);
        assert_eq!(cut.visits[0].delta_t, 0.0);
        assert_eq!(
            cut.visits[1..],
            long.visits[long.visits.len() - 3..],
            "suffix preserved"
        );
    }

    #[test]
    fn config_validation_errors() {
        let mut cfg = CohortConfig::default();
        cfg.n_patients = 0;
        assert!(generate_cohort(&cfg).is_err());
        let mut cfg = CohortConfig::default();
        cfg.prevalence = vec![0.7, 0.7];
        assert!(generate_cohort(&cfg).is_err());
        let mut cfg = CohortConfig::default();
        cfg.classes = 9;
        assert!(generate_cohort(&cfg).is_err());
    }
}
