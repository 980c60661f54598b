//! Cox proportional hazards regression.
//!
//! The log partial likelihood is maximised by Newton-Raphson with step
//! halving, so the log-likelihood never decreases between iterations. Tied
//! event times use the Efron approximation unless Breslow is requested.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cohort::{Cohort, Intent, PatientRecord, Race, Sex, YearGroup, UNKNOWN};
use crate::error::{Error, Result};
use crate::stats::{chi_square_sf, two_sided_p};

/// Normal quantile used for the reported hazard-ratio intervals.
pub const CI_Z: f64 = 1.96;
pub const MAX_ITER: usize = 100;
pub const SCORE_TOL: f64 = 1e-8;
pub const REL_LOGLIK_TOL: f64 = 1e-9;
/// |beta| beyond this during iteration is treated as monotone separation.
pub const SEPARATION_BOUND: f64 = 50.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ties {
    #[default]
    Efron,
    Breslow,
}

/// Unit in which a continuous covariate enters the model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rescale {
    #[default]
    None,
    /// value / 10, e.g. years -> decades
    PerDecade,
    /// value / 0.1, e.g. a [0, 1] score per 0.1
    PerTenth,
}

impl Rescale {
    pub fn divisor(self) -> f64 {
        match self {
            Rescale::None => 1.0,
            Rescale::PerDecade => 10.0,
            Rescale::PerTenth => 0.1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Rescale::None => "unit",
            Rescale::PerDecade => "per decade",
            Rescale::PerTenth => "per 0.1",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NumericSource {
    ChronoAge,
    PredictedAge,
    /// predicted minus chronological age
    Fad,
    RiskRaw,
    RiskScaled,
    Extra(String),
    /// Caller-supplied values aligned with the cohort.
    Values(Vec<Option<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum FactorSource {
    Sex,
    Race,
    CancerSite,
    Intent,
    YearGroup,
    Technique,
    /// Caller-supplied labels aligned with the cohort, with level order.
    Labels { values: Vec<Option<String>>, levels: Vec<String> },
}

/// One model term: a continuous covariate or a categorical factor expanded
/// into indicators against a reference level.
#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    Numeric { name: String, source: NumericSource, rescale: Rescale },
    Factor { name: String, source: FactorSource, reference: String },
}

impl Term {
    pub fn numeric(name: impl Into<String>, source: NumericSource, rescale: Rescale) -> Self {
        Term::Numeric { name: name.into(), source, rescale }
    }

    pub fn factor(name: impl Into<String>, source: FactorSource, reference: impl Into<String>) -> Self {
        Term::Factor { name: name.into(), source, reference: reference.into() }
    }

    pub fn name(&self) -> &str {
        match self {
            Term::Numeric { name, .. } | Term::Factor { name, .. } => name,
        }
    }
}

impl NumericSource {
    /// Finite values per cohort record; `None` where missing.
    pub fn values(&self, cohort: &Cohort) -> Vec<Option<f64>> {
        cohort.records().iter().enumerate().map(|(i, r)| numeric_value(r, i, self)).collect()
    }
}

fn numeric_value(r: &PatientRecord, i: usize, src: &NumericSource) -> Option<f64> {
    let v = match src {
        NumericSource::ChronoAge => Some(r.chrono_age),
        NumericSource::PredictedAge => r.predicted_age,
        NumericSource::Fad => r.fad(),
        NumericSource::RiskRaw => r.risk_raw,
        NumericSource::RiskScaled => r.risk_scaled,
        NumericSource::Extra(n) => r.extras.get(n).copied(),
        NumericSource::Values(v) => v.get(i).copied().flatten(),
    };
    v.filter(|x| x.is_finite())
}

fn factor_value(r: &PatientRecord, i: usize, src: &FactorSource) -> Option<String> {
    let s = match src {
        FactorSource::Sex => r.sex.as_str().to_string(),
        FactorSource::Race => r.race.as_str().to_string(),
        FactorSource::CancerSite => r.cancer_site.clone(),
        FactorSource::Intent => r.intent.as_str().to_string(),
        FactorSource::YearGroup => r.year_group.as_str().to_string(),
        FactorSource::Technique => r.technique.clone(),
        FactorSource::Labels { values, .. } => values.get(i).cloned().flatten()?,
    };
    (s != UNKNOWN && !s.is_empty()).then_some(s)
}

fn declared_levels(src: &FactorSource, present: &[String]) -> Vec<String> {
    let fixed: Option<Vec<String>> = match src {
        FactorSource::Sex => Some(Sex::LEVELS.iter().map(|l| l.as_str().to_string()).collect()),
        FactorSource::Race => Some(Race::LEVELS.iter().map(|l| l.as_str().to_string()).collect()),
        FactorSource::Intent => Some(Intent::LEVELS.iter().map(|l| l.as_str().to_string()).collect()),
        FactorSource::YearGroup => Some(YearGroup::LEVELS.iter().map(|l| l.as_str().to_string()).collect()),
        FactorSource::Labels { levels, .. } => Some(levels.clone()),
        FactorSource::CancerSite | FactorSource::Technique => None,
    };
    match fixed {
        Some(levels) => {
            let mut out: Vec<String> = levels.into_iter().filter(|l| present.contains(l)).collect();
            // labels missing from the declared order go last, sorted
            let mut extra: Vec<String> = present.iter().filter(|p| !out.contains(p)).cloned().collect();
            extra.sort();
            out.extend(extra);
            out
        }
        None => {
            let mut v = present.to_vec();
            v.sort();
            v
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnInfo {
    pub name: String,
    pub term: String,
    /// Indicator level, for factor columns.
    pub level: Option<String>,
    pub reference: Option<String>,
    pub unit: String,
}

/// Model matrix over the rows that have every term available.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub columns: Vec<ColumnInfo>,
    /// Column range of each term, in term order.
    pub term_columns: Vec<(String, Range<usize>)>,
    /// Source row index (into the cohort) of each design row.
    pub rows: Vec<usize>,
    /// Number of rows in the source cohort.
    pub n_source: usize,
    /// Row-major `rows.len() x columns.len()`.
    values: Vec<f64>,
}

impl DesignMatrix {
    /// Design from plain numeric columns, every row included.
    pub fn from_columns(names: &[&str], columns: &[Vec<f64>]) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::LengthMismatch(format!("{} names for {} columns", names.len(), columns.len())));
        }
        let n = columns.first().map(Vec::len).unwrap_or(0);
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::LengthMismatch("columns differ in length".into()));
        }
        let k = columns.len();
        let mut values = vec![0.0; n * k];
        for (j, c) in columns.iter().enumerate() {
            for (i, &x) in c.iter().enumerate() {
                values[i * k + j] = x;
            }
        }
        Ok(DesignMatrix {
            columns: names
                .iter()
                .map(|n| ColumnInfo { name: n.to_string(), term: n.to_string(), level: None, reference: None, unit: "unit".into() })
                .collect(),
            term_columns: names.iter().enumerate().map(|(j, n)| (n.to_string(), j..j + 1)).collect(),
            rows: (0..n).collect(),
            n_source: n,
            values,
        })
    }

    /// Zero-column design over `n` rows (the null model).
    pub fn empty(n: usize) -> Self {
        DesignMatrix { columns: vec![], term_columns: vec![], rows: (0..n).collect(), n_source: n, values: vec![] }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n_cols() + col]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|i| self.value(i, col)).collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    /// SHA-256 over the included source row indices.
    pub fn row_fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n_source as u64).to_le_bytes());
        for &r in &self.rows {
            h.update((r as u64).to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Names of columns that are (numerically) linear combinations of the
    /// columns before them, after centering.
    pub fn dependent_columns(&self) -> Vec<String> {
        let n = self.n_rows();
        let mut basis: Vec<Vec<f64>> = Vec::new();
        let mut out = Vec::new();
        for j in 0..self.n_cols() {
            let mut c = self.column(j);
            let m = c.iter().sum::<f64>() / n.max(1) as f64;
            c.iter_mut().for_each(|x| *x -= m);
            let norm0 = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            for b in &basis {
                let dot: f64 = c.iter().zip(b).map(|(x, y)| x * y).sum();
                c.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
            let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm0 == 0.0 || norm <= 1e-9 * norm0 {
                out.push(self.columns[j].name.clone());
            } else {
                basis.push(c.into_iter().map(|x| x / norm).collect());
            }
        }
        out
    }
}

/// Builds the model matrix for `terms`. Rows with any term unavailable
/// (`unknown` category or missing value) are excluded.
pub fn build_design(cohort: &Cohort, terms: &[Term]) -> Result<DesignMatrix> {
    let recs = cohort.records();
    enum Raw {
        Num(Vec<Option<f64>>),
        Fac(Vec<Option<String>>),
    }
    let raws: Vec<Raw> = terms
        .iter()
        .map(|t| match t {
            Term::Numeric { source, .. } => {
                Raw::Num(recs.iter().enumerate().map(|(i, r)| numeric_value(r, i, source)).collect())
            }
            Term::Factor { source, .. } => {
                Raw::Fac(recs.iter().enumerate().map(|(i, r)| factor_value(r, i, source)).collect())
            }
        })
        .collect();
    let rows: Vec<usize> = (0..recs.len())
        .filter(|&i| {
            raws.iter().all(|raw| match raw {
                Raw::Num(v) => v[i].is_some(),
                Raw::Fac(v) => v[i].is_some(),
            })
        })
        .collect();

    let mut columns: Vec<ColumnInfo> = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut term_columns = Vec::new();
    for (term, raw) in terms.iter().zip(&raws) {
        let start = cols.len();
        match (term, raw) {
            (Term::Numeric { name, rescale, .. }, Raw::Num(v)) => {
                let c: Vec<f64> = rows.iter().map(|&i| v[i].unwrap() / rescale.divisor()).collect();
                if c.windows(2).all(|w| w[0] == w[1]) {
                    return Err(Error::ConstantColumn(name.clone()));
                }
                columns.push(ColumnInfo {
                    name: name.clone(),
                    term: name.clone(),
                    level: None,
                    reference: None,
                    unit: rescale.label().into(),
                });
                cols.push(c);
            }
            (Term::Factor { name, source, reference }, Raw::Fac(v)) => {
                let mut present: Vec<String> = Vec::new();
                for &i in &rows {
                    let l = v[i].as_ref().unwrap();
                    if !present.contains(l) {
                        present.push(l.clone());
                    }
                }
                if !present.contains(reference) {
                    return Err(Error::ReferenceAbsent { term: name.clone(), level: reference.clone() });
                }
                let levels: Vec<String> = declared_levels(source, &present).into_iter().filter(|l| l != reference).collect();
                if levels.is_empty() {
                    return Err(Error::ConstantColumn(name.clone()));
                }
                for level in levels {
                    cols.push(rows.iter().map(|&i| (v[i].as_deref() == Some(level.as_str())) as u8 as f64).collect());
                    columns.push(ColumnInfo {
                        name: format!("{name}[{level}]"),
                        term: name.clone(),
                        level: Some(level),
                        reference: Some(reference.clone()),
                        unit: "indicator".into(),
                    });
                }
            }
            _ => unreachable!(),
        }
        term_columns.push((term.name().to_string(), start..cols.len()));
    }

    let n = rows.len();
    let k = cols.len();
    let mut values = vec![0.0; n * k];
    for (j, c) in cols.iter().enumerate() {
        for (i, &x) in c.iter().enumerate() {
            values[i * k + j] = x;
        }
    }
    Ok(DesignMatrix { columns, term_columns, rows, n_source: recs.len(), values })
}

/// Log partial likelihood with its score and observed information.
#[derive(Debug, Clone)]
pub struct LikelihoodEval {
    pub log_pl: f64,
    pub score: Vec<f64>,
    /// Negative Hessian, row-major k x k.
    pub information: Vec<f64>,
}

/// Rows of a design sorted for risk-set sweeps, with centred covariates.
#[derive(Debug, Clone)]
pub struct PartialLikelihood {
    k: usize,
    /// time-descending order
    x: Vec<f64>,
    time: Vec<f64>,
    event: Vec<bool>,
    ties: Ties,
}

impl PartialLikelihood {
    /// `times`/`events` are aligned with the design's source rows.
    pub fn new(design: &DesignMatrix, times: &[f64], events: &[bool], ties: Ties) -> Result<Self> {
        if times.len() != design.n_source || events.len() != design.n_source {
            return Err(Error::LengthMismatch(format!(
                "design has {} source rows, got {} times and {} events",
                design.n_source,
                times.len(),
                events.len()
            )));
        }
        let k = design.n_cols();
        let n = design.n_rows();
        let mut means = vec![0.0; k];
        for i in 0..n {
            for (j, m) in means.iter_mut().enumerate() {
                *m += design.value(i, j);
            }
        }
        means.iter_mut().for_each(|m| *m /= n.max(1) as f64);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| times[design.rows[b]].total_cmp(&times[design.rows[a]]));
        let mut x = Vec::with_capacity(n * k);
        for &i in &order {
            for (j, m) in means.iter().enumerate() {
                x.push(design.value(i, j) - m);
            }
        }
        Ok(PartialLikelihood {
            k,
            x,
            time: order.iter().map(|&i| times[design.rows[i]]).collect(),
            event: order.iter().map(|&i| events[design.rows[i]]).collect(),
            ties,
        })
    }

    pub fn n_events(&self) -> usize {
        self.event.iter().filter(|&&e| e).count()
    }

    pub fn n(&self) -> usize {
        self.time.len()
    }

    pub fn evaluate(&self, beta: &[f64]) -> LikelihoodEval {
        let k = self.k;
        let n = self.time.len();
        let eta: Vec<f64> = (0..n)
            .map(|i| self.x[i * k..(i + 1) * k].iter().zip(beta).map(|(a, b)| a * b).sum())
            .collect();
        // shift for overflow safety; the partial likelihood is invariant to it
        let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(0.0);
        let w: Vec<f64> = eta.iter().map(|e| (e - shift).exp()).collect();

        let mut log_pl = 0.0;
        let mut score = vec![0.0; k];
        let mut info = vec![0.0; k * k];
        let (mut s0, mut s1, mut s2) = (0.0, vec![0.0; k], vec![0.0; k * k]);
        let mut i = 0;
        while i < n {
            let t = self.time[i];
            let mut j = i;
            let (mut a0, mut a1, mut a2) = (0.0, vec![0.0; k], vec![0.0; k * k]);
            let mut d = 0usize;
            while j < n && self.time[j] == t {
                let xi = &self.x[j * k..(j + 1) * k];
                s0 += w[j];
                for p in 0..k {
                    s1[p] += w[j] * xi[p];
                    for q in 0..k {
                        s2[p * k + q] += w[j] * xi[p] * xi[q];
                    }
                }
                if self.event[j] {
                    d += 1;
                    a0 += w[j];
                    log_pl += eta[j] - shift;
                    for p in 0..k {
                        a1[p] += w[j] * xi[p];
                        score[p] += xi[p];
                        for q in 0..k {
                            a2[p * k + q] += w[j] * xi[p] * xi[q];
                        }
                    }
                }
                j += 1;
            }
            if d > 0 {
                let df = d as f64;
                for l in 0..d {
                    let f = match self.ties {
                        Ties::Efron => l as f64 / df,
                        Ties::Breslow => 0.0,
                    };
                    let c0 = s0 - f * a0;
                    log_pl -= c0.ln();
                    let c1: Vec<f64> = (0..k).map(|p| s1[p] - f * a1[p]).collect();
                    for p in 0..k {
                        score[p] -= c1[p] / c0;
                        for q in 0..k {
                            let c2 = s2[p * k + q] - f * a2[p * k + q];
                            info[p * k + q] += c2 / c0 - c1[p] * c1[q] / (c0 * c0);
                        }
                    }
                }
            }
            i = j;
        }
        LikelihoodEval { log_pl, score, information: info }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoxFit {
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub hr: Vec<f64>,
    pub ci95: Vec<(f64, f64)>,
    pub z: Vec<f64>,
    pub wald_p: Vec<f64>,
    pub log_pl: f64,
    /// Log partial likelihood at beta = 0 on the same rows.
    pub null_log_pl: f64,
    pub aic: f64,
    pub n_used: usize,
    pub n_events: usize,
    pub ties_method: Ties,
    pub converged: bool,
    pub separation: bool,
    pub iterations: usize,
    pub log_pl_history: Vec<f64>,
    pub row_fingerprint: String,
}

impl CoxFit {
    /// Likelihood-ratio statistic against the null model on the same rows.
    pub fn lr_statistic(&self) -> f64 {
        (2.0 * (self.log_pl - self.null_log_pl)).max(0.0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn aic(log_pl: f64, k: usize) -> f64 {
    -2.0 * log_pl + 2.0 * k as f64
}

fn solve_spd(info: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let k = rhs.len();
    let m = DMatrix::from_row_slice(k, k, info);
    let chol = m.cholesky()?;
    Some(chol.solve(&DVector::from_column_slice(rhs)).iter().copied().collect())
}

fn condition_estimate(info: &[f64], k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let m = DMatrix::from_row_slice(k, k, info);
    let eig = m.symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Fits the Cox model on the design's rows. `times`/`events` are aligned
/// with the design's source (cohort) rows.
pub fn fit_cox(design: &DesignMatrix, times: &[f64], events: &[bool], ties: Ties) -> Result<CoxFit> {
    let pl = PartialLikelihood::new(design, times, events, ties)?;
    if pl.n_events() == 0 {
        return Err(Error::NoEvents);
    }
    let k = design.n_cols();
    let singular = |info: &[f64]| Error::SingularDesign {
        columns: design.dependent_columns(),
        condition: condition_estimate(info, k),
    };

    let mut beta = vec![0.0; k];
    let mut cur = pl.evaluate(&beta);
    let null_log_pl = cur.log_pl;
    let mut history = vec![cur.log_pl];
    let mut converged = k == 0;
    let mut separation = false;
    let mut iterations = 0;

    while !converged && iterations < MAX_ITER {
        if cur.score.iter().all(|s| s.abs() < SCORE_TOL) {
            converged = true;
            break;
        }
        let Some(delta) = solve_spd(&cur.information, &cur.score) else {
            if iterations == 0 || !design.dependent_columns().is_empty() {
                return Err(singular(&cur.information));
            }
            break;
        };
        iterations += 1;
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = beta.iter().zip(&delta).map(|(b, d)| b + step * d).collect();
            let ev = pl.evaluate(&cand);
            if ev.log_pl.is_finite() && ev.log_pl >= cur.log_pl {
                accepted = Some((cand, ev));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, ev)) = accepted else {
            // no ascent possible at machine precision
            converged = true;
            break;
        };
        let rel = (ev.log_pl - cur.log_pl).abs() / cur.log_pl.abs().max(1e-300);
        beta = cand;
        cur = ev;
        history.push(cur.log_pl);
        if beta.iter().any(|b| b.abs() > SEPARATION_BOUND) {
            separation = true;
            break;
        }
        if rel < REL_LOGLIK_TOL || cur.score.iter().all(|s| s.abs() < SCORE_TOL) {
            converged = true;
        }
    }

    // a Newton step that stays large relative to beta at termination marks a
    // coefficient diverging to infinity
    let mut diverging = vec![false; k];
    if let Some(delta) = solve_spd(&cur.information, &cur.score) {
        for j in 0..k {
            diverging[j] = separation && beta[j].abs() > SEPARATION_BOUND
                || (delta[j].abs() > 1e-3 && delta[j].abs() > 1e-2 * beta[j].abs() && beta[j].abs() > 5.0);
        }
    } else if separation {
        diverging = beta.iter().map(|b| b.abs() > SEPARATION_BOUND).collect();
    }
    separation |= diverging.iter().any(|&d| d);

    let covariance = if k == 0 {
        DMatrix::zeros(0, 0)
    } else {
        match DMatrix::from_row_slice(k, k, &cur.information).try_inverse() {
            Some(c) => c,
            None if separation => DMatrix::from_element(k, k, f64::NAN),
            None => return Err(singular(&cur.information)),
        }
    };
    let se: Vec<f64> = (0..k).map(|j| covariance[(j, j)].max(0.0).sqrt()).collect();
    let hr: Vec<f64> = beta
        .iter()
        .zip(&diverging)
        .map(|(&b, &div)| {
            if div {
                if b > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            } else {
                b.exp()
            }
        })
        .collect();
    let ci95 = beta.iter().zip(&se).map(|(&b, &s)| ((b - CI_Z * s).exp(), (b + CI_Z * s).exp())).collect();
    let z: Vec<f64> = beta.iter().zip(&se).map(|(&b, &s)| b / s).collect();
    let wald_p = z.iter().map(|&z| if z.is_finite() { two_sided_p(z) } else { f64::NAN }).collect();

    Ok(CoxFit {
        names: design.names(),
        beta,
        se,
        covariance: (0..k).map(|i| (0..k).map(|j| covariance[(i, j)]).collect()).collect(),
        hr,
        ci95,
        z,
        wald_p,
        log_pl: cur.log_pl,
        null_log_pl,
        aic: aic(cur.log_pl, k),
        n_used: pl.n(),
        n_events: pl.n_events(),
        ties_method: ties,
        converged,
        separation,
        iterations,
        log_pl_history: history,
        row_fingerprint: design.row_fingerprint(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScreenEntry {
    pub term: String,
    pub test: &'static str,
    pub p_value: Option<f64>,
    pub retained: bool,
    pub error: Option<String>,
    #[serde(skip)]
    pub fit: Option<CoxFit>,
}

#[derive(Debug, Clone)]
pub struct ScreenOutcome {
    pub retained: Vec<Term>,
    pub entries: Vec<ScreenEntry>,
}

/// Fits each candidate alone and keeps those with p < alpha, in input
/// order. Single-column terms use the Wald test; multi-level factors are
/// tested as a block with the likelihood-ratio test.
pub fn univariate_screen(cohort: &Cohort, candidates: &[Term], alpha: f64, ties: Ties) -> ScreenOutcome {
    let times = cohort.times();
    let events = cohort.events();
    let mut retained = Vec::new();
    let mut entries = Vec::new();
    for term in candidates {
        let result = build_design(cohort, std::slice::from_ref(term)).and_then(|d| fit_cox(&d, &times, &events, ties));
        match result {
            Ok(fit) => {
                let (test, p) = if fit.beta.len() == 1 {
                    ("wald", fit.wald_p[0])
                } else {
                    ("lrt", chi_square_sf(fit.lr_statistic(), fit.beta.len()))
                };
                let keep = p < alpha;
                if keep {
                    retained.push(term.clone());
                }
                entries.push(ScreenEntry { term: term.name().into(), test, p_value: Some(p), retained: keep, error: None, fit: Some(fit) });
            }
            Err(e) => entries.push(ScreenEntry {
                term: term.name().into(),
                test: "none",
                p_value: None,
                retained: false,
                error: Some(e.to_string()),
                fit: None,
            }),
        }
    }
    ScreenOutcome { retained, entries }
}

#[derive(Debug, Clone)]
pub struct AdjustedFit {
    pub fit: CoxFit,
    pub design: DesignMatrix,
    /// Columns belonging to the biomarker term.
    pub biomarker_columns: Range<usize>,
}

/// Multivariable fit of the biomarker together with the adjustment terms.
pub fn fit_adjusted(cohort: &Cohort, biomarker: &Term, adjusters: &[Term], ties: Ties) -> Result<AdjustedFit> {
    let mut terms = vec![biomarker.clone()];
    terms.extend(adjusters.iter().cloned());
    let design = build_design(cohort, &terms)?;
    let dependent = design.dependent_columns();
    if !dependent.is_empty() {
        return Err(Error::SingularDesign { columns: dependent, condition: f64::INFINITY });
    }
    let fit = fit_cox(&design, &cohort.times(), &cohort.events(), ties)?;
    let biomarker_columns = design.term_columns[0].1.clone();
    Ok(AdjustedFit { fit, design, biomarker_columns })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AicRank {
    /// Index into the input sequence.
    pub index: usize,
    pub aic: f64,
    pub delta: f64,
}

/// Orders fits by AIC (ascending) with differences to the best. All fits
/// must share the same row set.
pub fn compare_aic(fits: &[&CoxFit]) -> Result<Vec<AicRank>> {
    let Some(first) = fits.first() else {
        return Ok(vec![]);
    };
    if fits.iter().any(|f| f.row_fingerprint != first.row_fingerprint) {
        return Err(Error::RowSetMismatch);
    }
    let mut order: Vec<usize> = (0..fits.len()).collect();
    order.sort_by(|&a, &b| fits[a].aic.total_cmp(&fits[b].aic));
    let best = fits[order[0]].aic;
    Ok(order.into_iter().map(|i| AicRank { index: i, aic: fits[i].aic, delta: fits[i].aic - best }).collect())
}
