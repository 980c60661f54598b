//! Synthetic cohorts with known ground truth.
//!
//! Event times are exponential with subject hazard
//! `baseline * exp(linear_predictor)`; observed time is the minimum of the
//! event and censoring times. Every subject draws from its own ChaCha8
//! substream (stream = subject index), so a cohort is a pure function of the
//! spec and seed.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::biomarkers::minmax_scale;
use crate::cohort::{Cohort, PatientRecord, Sex};
use crate::error::{Error, Result};

/// Generator identity recorded in truth sidecars.
pub const RNG_NAME: &str = "ChaCha8 (rand_chacha 0.9), stream = subject index";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CensorModel {
    None,
    /// Censoring time uniform on `(0, max)` days.
    Uniform { max: f64 },
    Exponential { rate: f64 },
    /// Administrative censoring at a fixed day.
    Admin { horizon: f64 },
    /// Uniform censoring with the upper bound solved so that the expected
    /// censored fraction equals `fraction`.
    UniformFraction { fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateDist {
    Bernoulli { p: f64 },
    Normal { mean: f64, sd: f64 },
    Uniform { low: f64, high: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCovariate {
    pub name: String,
    pub dist: CovariateDist,
    pub log_hr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeModel {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
    #[serde(default)]
    pub log_hr_per_decade: f64,
}

impl Default for AgeModel {
    fn default() -> Self {
        AgeModel { mean: 65.0, sd: 12.0, min: 18.0, max: 100.0, log_hr_per_decade: 0.0 }
    }
}

/// Predicted age = chronological age + deviation ~ N(mean, sd).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FadModel {
    pub mean: f64,
    pub sd: f64,
    pub log_hr_per_decade: f64,
}

/// A latent standard-normal risk score; `risk_raw` is the score plus
/// measurement noise and `risk_scaled` its min-max scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub log_hr: f64,
    #[serde(default)]
    pub noise_sd: f64,
}

/// Gaussian embedding whose first `weights.len()` coordinates enter the log
/// hazard linearly. Signal coordinates have unit variance; the remaining
/// coordinates have standard deviation `noise_sd`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    pub dim: usize,
    pub weights: Vec<f64>,
    #[serde(default = "unit")]
    pub noise_sd: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub n: usize,
    pub seed: u64,
    /// Per-day hazard at linear predictor 0.
    pub baseline_hazard: f64,
    pub censor: CensorModel,
    #[serde(default)]
    pub covariates: Vec<SimCovariate>,
    #[serde(default)]
    pub age: AgeModel,
    /// Log-HR for male vs female; sex is Bernoulli(0.5).
    #[serde(default)]
    pub sex_log_hr: f64,
    #[serde(default)]
    pub fad: Option<FadModel>,
    #[serde(default)]
    pub score: Option<ScoreModel>,
    #[serde(default)]
    pub embedding: Option<EmbeddingModel>,
    /// Round observed times up to whole days (creates ties).
    #[serde(default = "yes")]
    pub round_to_days: bool,
}

fn yes() -> bool {
    true
}

impl SimSpec {
    /// Minimal spec: no covariate effects, no censoring.
    pub fn new(n: usize, seed: u64, baseline_hazard: f64) -> Self {
        SimSpec {
            n,
            seed,
            baseline_hazard,
            censor: CensorModel::None,
            covariates: vec![],
            age: AgeModel::default(),
            sex_log_hr: 0.0,
            fad: None,
            score: None,
            embedding: None,
            round_to_days: true,
        }
    }

    /// Named starting points:
    ///
    /// - `binary`: one Bernoulli(0.5) covariate `x` with log-HR 0.7.
    /// - `linear-risk`: 16-dim embedding, hazard `exp(6 * e0)`, nuisance sd 0.25.
    /// - `two-signal`: age deviation (log-HR 0.6 per decade) and an
    ///   independent latent score (log-HR 0.5), plus age and sex effects.
    /// - `quartile`: latent score with log-HR 1.2 per unit.
    /// - `demo`: embedding, age deviation, age and sex effects together.
    ///
    /// All presets censor 30% of subjects.
    pub fn preset(name: &str, n: usize, seed: u64) -> Result<Self> {
        let base = SimSpec { censor: CensorModel::UniformFraction { fraction: 0.3 }, ..SimSpec::new(n, seed, 1.0 / 730.0) };
        let embedding = |w: f64| Some(EmbeddingModel { dim: 16, weights: vec![w], noise_sd: 0.25 });
        let fad = Some(FadModel { mean: 1.1, sd: 8.0, log_hr_per_decade: 0.6 });
        let aged = AgeModel { log_hr_per_decade: 0.3, ..AgeModel::default() };
        Ok(match name {
            "binary" => SimSpec {
                covariates: vec![SimCovariate { name: "x".into(), dist: CovariateDist::Bernoulli { p: 0.5 }, log_hr: 0.7 }],
                baseline_hazard: 1.0 / 365.0,
                ..base
            },
            "linear-risk" => SimSpec { embedding: embedding(6.0), baseline_hazard: 1.0 / 3650.0, ..base },
            "two-signal" => SimSpec {
                age: aged,
                sex_log_hr: 0.2,
                fad,
                score: Some(ScoreModel { log_hr: 0.5, noise_sd: 0.0 }),
                ..base
            },
            "quartile" => SimSpec { score: Some(ScoreModel { log_hr: 1.2, noise_sd: 0.0 }), ..base },
            "demo" => SimSpec { age: aged, sex_log_hr: 0.2, fad, embedding: embedding(3.0), ..base },
            other => return Err(Error::UnknownName(format!("simulation preset {other:?}"))),
        })
    }

    pub const PRESETS: [&'static str; 5] = ["binary", "linear-risk", "two-signal", "quartile", "demo"];

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidInput("n must be > 0".into()));
        }
        if !(self.baseline_hazard > 0.0) {
            return Err(Error::InvalidInput("baseline hazard must be > 0".into()));
        }
        if let Some(e) = &self.embedding {
            if !(e.noise_sd >= 0.0) {
                return Err(Error::InvalidInput("embedding noise_sd must be >= 0".into()));
            }
            if e.dim == 0 || e.weights.len() > e.dim {
                return Err(Error::InvalidInput("embedding weights exceed dimension".into()));
            }
        }
        match self.censor {
            CensorModel::Uniform { max } if !(max > 0.0) => Err(Error::InvalidInput("uniform censoring max must be > 0".into())),
            CensorModel::Exponential { rate } if !(rate > 0.0) => Err(Error::InvalidInput("censoring rate must be > 0".into())),
            CensorModel::UniformFraction { fraction } if !(fraction > 0.0 && fraction < 1.0) => {
                Err(Error::InvalidInput("censoring fraction must lie in (0, 1)".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Ground truth written next to a simulated cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub spec: SimSpec,
    pub rng: String,
    /// True log hazard ratios by covariate name.
    pub beta_true: BTreeMap<String, f64>,
    /// True linear predictor per subject.
    pub linear_predictor: Vec<f64>,
    /// Resolved upper bound for fraction-targeted uniform censoring.
    pub censor_max: Option<f64>,
    pub expected_censored_fraction: f64,
    pub observed_censored_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct Simulated {
    pub cohort: Cohort,
    pub truth: Truth,
}

fn subject_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn draw(dist: &CovariateDist, rng: &mut ChaCha8Rng) -> f64 {
    match *dist {
        CovariateDist::Bernoulli { p } => (rng.random::<f64>() < p) as u8 as f64,
        CovariateDist::Normal { mean, sd } => mean + sd * std_normal(rng),
        CovariateDist::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
    }
}

fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    Normal::new(0.0, 1.0).unwrap().sample(rng)
}

/// Probability that censoring precedes an exponential(rate) event.
pub fn censored_probability(rate: f64, censor: &CensorModel) -> f64 {
    match *censor {
        CensorModel::None => 0.0,
        CensorModel::Uniform { max } => {
            let a = rate * max;
            if a < 1e-12 {
                1.0
            } else {
                -(-a).exp_m1() / a
            }
        }
        CensorModel::Exponential { rate: mu } => mu / (rate + mu),
        CensorModel::Admin { horizon } => (-rate * horizon).exp(),
        CensorModel::UniformFraction { .. } => f64::NAN,
    }
}

/// Expected censored fraction over subjects with the given event hazards.
pub fn expected_censored_fraction(hazards: &[f64], censor: &CensorModel) -> f64 {
    hazards.iter().map(|&h| censored_probability(h, censor)).sum::<f64>() / hazards.len() as f64
}

/// Upper bound of uniform censoring giving the target expected fraction.
pub fn solve_uniform_max(hazards: &[f64], fraction: f64) -> f64 {
    let frac = |m: f64| expected_censored_fraction(hazards, &CensorModel::Uniform { max: m });
    let mean_rate = hazards.iter().sum::<f64>() / hazards.len() as f64;
    let (mut lo, mut hi) = (1e-12 / mean_rate, 1.0 / mean_rate);
    while frac(hi) > fraction {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if frac(mid) > fraction {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn simulate(spec: &SimSpec) -> Result<Simulated> {
    spec.validate()?;
    let n = spec.n;
    let mut beta_true = BTreeMap::new();
    for c in &spec.covariates {
        beta_true.insert(c.name.clone(), c.log_hr);
    }
    beta_true.insert("age_per_decade".into(), spec.age.log_hr_per_decade);
    beta_true.insert("sex_male".into(), spec.sex_log_hr);
    if let Some(f) = &spec.fad {
        beta_true.insert("fad_per_decade".into(), f.log_hr_per_decade);
    }
    if let Some(s) = &spec.score {
        beta_true.insert("score".into(), s.log_hr);
    }
    if let Some(e) = &spec.embedding {
        for (k, w) in e.weights.iter().enumerate() {
            beta_true.insert(format!("e{k}"), *w);
        }
    }

    // covariates on even streams, times on odd streams
    let mut records = Vec::with_capacity(n);
    let mut eta = Vec::with_capacity(n);
    let mut latent_scores = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = subject_rng(spec.seed, 2 * i as u64);
        let mut r = PatientRecord::new(format!("s{i:05}"), 1.0, false, 0.0);
        let mut lp = 0.0;
        for c in &spec.covariates {
            let x = draw(&c.dist, &mut rng);
            lp += c.log_hr * x;
            r.extras.insert(c.name.clone(), x);
        }
        let a = &spec.age;
        r.chrono_age = (a.mean + a.sd * std_normal(&mut rng)).clamp(a.min, a.max);
        lp += a.log_hr_per_decade * (r.chrono_age - a.mean) / 10.0;
        let male = rng.random::<f64>() < 0.5;
        r.sex = if male { Sex::Male } else { Sex::Female };
        if male {
            lp += spec.sex_log_hr;
        }
        if let Some(f) = &spec.fad {
            let d = f.mean + f.sd * std_normal(&mut rng);
            r.predicted_age = Some(r.chrono_age + d);
            lp += f.log_hr_per_decade * d / 10.0;
        }
        if let Some(s) = &spec.score {
            let z = std_normal(&mut rng);
            lp += s.log_hr * z;
            r.risk_raw = Some(z + s.noise_sd * std_normal(&mut rng));
            latent_scores.push(z);
        }
        if let Some(e) = &spec.embedding {
            let v: Vec<f64> = (0..e.dim)
                .map(|k| std_normal(&mut rng) * if k < e.weights.len() { 1.0 } else { e.noise_sd })
                .collect();
            lp += e.weights.iter().zip(&v).map(|(w, x)| w * x).sum::<f64>();
            r.embedding = Some(v);
        }
        eta.push(lp);
        records.push(r);
    }

    let hazards: Vec<f64> = eta.iter().map(|e| spec.baseline_hazard * e.exp()).collect();
    let (censor, censor_max) = match spec.censor {
        CensorModel::UniformFraction { fraction } => {
            let m = solve_uniform_max(&hazards, fraction);
            (CensorModel::Uniform { max: m }, Some(m))
        }
        ref c => (c.clone(), None),
    };
    let expected = expected_censored_fraction(&hazards, &censor);

    for (i, r) in records.iter_mut().enumerate() {
        let mut rng = subject_rng(spec.seed, 2 * i as u64 + 1);
        let t_event = Exp::new(hazards[i]).map_err(|e| Error::InvalidInput(e.to_string()))?.sample(&mut rng);
        let t_censor = match censor {
            CensorModel::None => f64::INFINITY,
            CensorModel::Uniform { max } => max * rng.random::<f64>(),
            CensorModel::Exponential { rate } => Exp::new(rate).unwrap().sample(&mut rng),
            CensorModel::Admin { horizon } => horizon,
            CensorModel::UniformFraction { .. } => unreachable!(),
        };
        r.event = t_event <= t_censor;
        let t = t_event.min(t_censor);
        r.time = if spec.round_to_days { t.ceil().max(1.0) } else { t.max(f64::MIN_POSITIVE) };
    }

    if spec.score.is_some() {
        let raw: Vec<f64> = records.iter().map(|r| r.risk_raw.unwrap()).collect();
        if let Ok(scaled) = minmax_scale(&raw) {
            for (r, s) in records.iter_mut().zip(scaled) {
                r.risk_scaled = Some(s);
            }
        }
    }

    let observed = records.iter().filter(|r| !r.event).count() as f64 / n as f64;
    Ok(Simulated {
        cohort: Cohort::new(records)?,
        truth: Truth {
            spec: spec.clone(),
            rng: RNG_NAME.to_string(),
            beta_true,
            linear_predictor: eta,
            censor_max,
            expected_censored_fraction: expected,
            observed_censored_fraction: observed,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_cohort() {
        let spec = SimSpec::preset("demo", 50, 7).unwrap();
        let a = simulate(&spec).unwrap();
        let b = simulate(&spec).unwrap();
        assert_eq!(a.cohort, b.cohort);
        let c = simulate(&SimSpec::preset("demo", 50, 8).unwrap()).unwrap();
        assert_ne!(a.cohort, c.cohort);
    }

    #[test]
    fn prefix_stable_in_n() {
        // per-subject substreams: growing n does not change earlier subjects
        let a = simulate(&SimSpec::new(10, 3, 0.01)).unwrap();
        let b = simulate(&SimSpec::new(20, 3, 0.01)).unwrap();
        assert_eq!(a.cohort.records(), &b.cohort.records()[..10]);
    }

    #[test]
    fn admin_censoring_before_all_events() {
        let mut spec = SimSpec::new(200, 1, 1e-6);
        spec.censor = CensorModel::Admin { horizon: 1.0 };
        let sim = simulate(&spec).unwrap();
        // P(event before day 1) ~ 1e-6 per subject
        assert!(sim.cohort.records().iter().all(|r| !r.event));
        assert!((sim.truth.observed_censored_fraction - 1.0).abs() < 1e-12);
    }

    #[test]
    fn times_are_positive_whole_days() {
        let sim = simulate(&SimSpec::preset("demo", 300, 11).unwrap()).unwrap();
        for r in sim.cohort.records() {
            assert!(r.time >= 1.0 && r.time.fract() == 0.0);
        }
    }

    #[test]
    fn analytic_censoring_probabilities() {
        assert!((censored_probability(1.0, &CensorModel::Exponential { rate: 1.0 }) - 0.5).abs() < 1e-15);
        assert!((censored_probability(0.5, &CensorModel::Admin { horizon: 2.0 }) - (-1.0f64).exp()).abs() < 1e-15);
        let m = solve_uniform_max(&[0.01, 0.02], 0.3);
        let f = expected_censored_fraction(&[0.01, 0.02], &CensorModel::Uniform { max: m });
        assert!((f - 0.3).abs() < 1e-10);
    }

    #[test]
    fn invalid_specs() {
        assert!(simulate(&SimSpec::new(0, 1, 0.1)).is_err());
        assert!(simulate(&SimSpec::new(5, 1, 0.0)).is_err());
    }

    #[test]
    fn score_is_scaled_to_unit_interval() {
        let mut spec = SimSpec::new(100, 2, 0.01);
        spec.score = Some(ScoreModel { log_hr: 1.0, noise_sd: 0.0 });
        let sim = simulate(&spec).unwrap();
        let s: Vec<f64> = sim.cohort.records().iter().map(|r| r.risk_scaled.unwrap()).collect();
        assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(s.contains(&0.0) && s.contains(&1.0));
    }
}
