//! Synthetic survival cohorts with a hidden confounder and a known
//! conditional treatment log-hazard ratio.
//!
//! Data-generating process, per patient:
//!
//! - `X ~ N(0, I_d)` (shifted per center), hidden `V ~ N(0, 1)`
//! - `P(treated) = logistic(α₀ + αᵀX + γ_sel·V)`, or 1/2 in RCT mode
//! - event time `~ Exp(λ·exp(βᵀX + γ_out·V + θ·treated))`
//! - censoring time `~ U(0, censor_max)`; observed time is the minimum

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Cohort, DataError, PatientRecord};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic configuration: {0}")]
    InvalidConfig(String),
    #[error("one treatment arm stayed empty after {attempts} draws")]
    DegenerateArm { attempts: usize },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

const MAX_ATTEMPTS: usize = 5;

/// Center-specific shifts of the selection intercept and covariate means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterShift {
    pub alpha0: f64,
    pub covariate_mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n: usize,
    pub d: usize,
    pub beta: Vec<f64>,
    pub gamma_out: f64,
    pub gamma_sel: f64,
    pub theta: f64,
    pub alpha0: f64,
    pub alpha: Vec<f64>,
    pub baseline_rate: f64,
    pub censor_max: f64,
    pub rct_mode: bool,
    /// One entry per center; patients are split into equal contiguous blocks.
    pub centers: Option<Vec<CenterShift>>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            d: 3,
            beta: vec![0.5, -0.4, 0.3],
            gamma_out: 1.0,
            gamma_sel: 1.0,
            theta: 0.67f64.ln(),
            alpha0: 0.0,
            alpha: vec![0.4, 0.3, -0.3],
            baseline_rate: 0.02,
            censor_max: 120.0,
            rct_mode: false,
            centers: None,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Default configuration split over `count` centers with spread-out
    /// selection intercepts and covariate means.
    pub fn multicenter(count: usize) -> Self {
        let base = Self::default();
        let centers = (0..count)
            .map(|c| {
                let offset = c as f64 - (count as f64 - 1.0) / 2.0;
                CenterShift {
                    alpha0: 0.5 * offset,
                    covariate_mean: (0..base.d)
                        .map(|j| 0.3 * offset * if j % 2 == 0 { 1.0 } else { -1.0 })
                        .collect(),
                }
            })
            .collect();
        Self {
            centers: Some(centers),
            ..base
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.n < 4 {
            return bad(format!("n must be >= 4, got {}", self.n));
        }
        if self.d < 1 {
            return bad("d must be >= 1".into());
        }
        if self.beta.len() != self.d || self.alpha.len() != self.d {
            return bad(format!(
                "beta ({}) and alpha ({}) must have length d = {}",
                self.beta.len(),
                self.alpha.len(),
                self.d
            ));
        }
        if !(self.baseline_rate > 0.0 && self.baseline_rate.is_finite()) {
            return bad("baseline_rate must be positive".into());
        }
        if !(self.censor_max > 0.0 && self.censor_max.is_finite()) {
            return bad("censor_max must be positive".into());
        }
        if let Some(centers) = &self.centers {
            if centers.is_empty() || centers.len() > self.n {
                return bad("center count must lie in 1..=n".into());
            }
            if centers.iter().any(|c| c.covariate_mean.len() != self.d) {
                return bad("center covariate shifts must have length d".into());
            }
        }
        Ok(())
    }

    /// The configuration actually simulated: RCT mode zeroes every selection
    /// coefficient.
    pub fn effective(&self) -> Self {
        let mut c = self.clone();
        if c.rct_mode {
            c.gamma_sel = 0.0;
            c.alpha0 = 0.0;
            c.alpha = vec![0.0; c.d];
            if let Some(centers) = &mut c.centers {
                for s in centers {
                    s.alpha0 = 0.0;
                }
            }
        }
        c
    }
}

/// Ground truth written next to a synthetic cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub theta: f64,
    pub gamma_out: f64,
    pub gamma_sel: f64,
    pub seed: u64,
    pub config: SynthConfig,
}

#[derive(Debug, Clone)]
pub struct SynthCohort {
    pub cohort: Cohort,
    pub truth: Truth,
    hidden_v: Vec<f64>,
}

impl SynthCohort {
    /// The hidden confounder, for diagnostics only. It is not part of
    /// [`SynthCohort::cohort`] and must never be given to an estimator.
    pub fn hidden_v(&self) -> &[f64] {
        &self.hidden_v
    }

    /// Writes `<stem>.csv` and the truth sidecar `<stem>.truth.json`.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<(), SynthError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.cohort.save_csv(dir.join(format!("{stem}.csv")))?;
        fs::write(
            dir.join(format!("{stem}.truth.json")),
            serde_json::to_string_pretty(&self.truth)?,
        )?;
        Ok(())
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn generate(config: &SynthConfig) -> Result<SynthCohort, SynthError> {
    config.validate()?;
    let cfg = config.effective();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..MAX_ATTEMPTS {
        let (records, v) = draw(&cfg, &mut rng);
        let treated = records.iter().filter(|r| r.treatment).count();
        if treated == 0 || treated == records.len() {
            continue;
        }
        let names = (1..=cfg.d).map(|j| format!("x{j}")).collect();
        return Ok(SynthCohort {
            cohort: Cohort::new(records, names)?,
            truth: Truth {
                theta: cfg.theta,
                gamma_out: cfg.gamma_out,
                gamma_sel: cfg.gamma_sel,
                seed: cfg.seed,
                config: cfg,
            },
            hidden_v: v,
        });
    }
    Err(SynthError::DegenerateArm {
        attempts: MAX_ATTEMPTS,
    })
}

fn draw(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> (Vec<PatientRecord>, Vec<f64>) {
    let censor = Uniform::new(0.0, cfg.censor_max).expect("positive censoring bound");
    let n_centers = cfg.centers.as_ref().map_or(1, Vec::len);
    let mut records = Vec::with_capacity(cfg.n);
    let mut hidden = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let center = i * n_centers / cfg.n;
        let shift = cfg.centers.as_ref().map(|c| &c[center]);
        let x: Vec<f64> = (0..cfg.d)
            .map(|j| {
                let z: f64 = StandardNormal.sample(rng);
                z + shift.map_or(0.0, |s| s.covariate_mean[j])
            })
            .collect();
        let v: f64 = StandardNormal.sample(rng);
        let treated = if cfg.rct_mode {
            rng.random_bool(0.5)
        } else {
            let lin = cfg.alpha0
                + shift.map_or(0.0, |s| s.alpha0)
                + cfg.alpha.iter().zip(&x).map(|(a, x)| a * x).sum::<f64>()
                + cfg.gamma_sel * v;
            rng.random::<f64>() < sigmoid(lin)
        };
        let risk = cfg.beta.iter().zip(&x).map(|(b, x)| b * x).sum::<f64>()
            + cfg.gamma_out * v
            + if treated { cfg.theta } else { 0.0 };
        let rate = cfg.baseline_rate * risk.exp();
        let t_event = Exp::new(rate).expect("positive rate").sample(rng);
        let t_censor = censor.sample(rng);
        records.push(PatientRecord {
            id: format!("s{i:05}"),
            time: t_event.min(t_censor),
            event: t_event <= t_censor,
            treatment: treated,
            covariates: x,
            external_score: None,
            center: cfg.centers.as_ref().map(|_| format!("c{}", center + 1)),
        });
        hidden.push(v);
    }
    (records, hidden)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{correlation, mean};

    #[test]
    fn rct_assignment_is_fair() {
        let c = generate(&SynthConfig {
            n: 10_000,
            rct_mode: true,
            seed: 3,
            ..SynthConfig::default()
        })
        .unwrap();
        let t: Vec<f64> = c
            .cohort
            .treatment()
            .iter()
            .map(|&b| f64::from(u8::from(b)))
            .collect();
        assert!((mean(&t) - 0.5).abs() < 0.02);
        let bound = 4.0 / (t.len() as f64).sqrt();
        assert!(correlation(&t, c.hidden_v()).abs() < bound);
        for j in 0..3 {
            let xj: Vec<f64> = c.cohort.records().iter().map(|r| r.covariates[j]).collect();
            assert!(correlation(&t, &xj).abs() < bound);
        }
        assert_eq!(c.truth.config.gamma_sel, 0.0);
    }

    #[test]
    fn deterministic_and_validated() {
        let cfg = SynthConfig {
            n: 50,
            seed: 9,
            ..SynthConfig::default()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.cohort, b.cohort);
        assert_eq!(a.hidden_v(), b.hidden_v());
        assert!(generate(&SynthConfig {
            n: 3,
            ..cfg.clone()
        })
        .is_err());
        assert!(generate(&SynthConfig {
            beta: vec![1.0],
            ..cfg.clone()
        })
        .is_err());
    }

    #[test]
    fn degenerate_arm() {
        let cfg = SynthConfig {
            n: 4,
            alpha0: 60.0,
            gamma_sel: 0.0,
            ..SynthConfig::default()
        };
        assert!(matches!(
            generate(&cfg),
            Err(SynthError::DegenerateArm { attempts: 5 })
        ));
    }

    #[test]
    fn centers_are_labeled() {
        let c = generate(&SynthConfig {
            n: 40,
            ..SynthConfig::multicenter(4)
        })
        .unwrap();
        assert_eq!(c.cohort.centers(), vec!["c1", "c2", "c3", "c4"]);
        assert_eq!(c.cohort.center_indices("c2").len(), 10);
    }
}
