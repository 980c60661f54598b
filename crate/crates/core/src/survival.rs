//! Nonparametric survival estimates: product-limit curves with Greenwood
//! variance, reverse Kaplan-Meier follow-up, k-sample log-rank tests and
//! early-mortality tables.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{chi_square_sf, wilson_interval, Z95};

/// A single (time, event) pair. `event == false` means right-censored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub time: f64,
    pub event: bool,
}

impl Observation {
    pub fn new(time: f64, event: bool) -> Self {
        Observation { time, event }
    }
}

impl From<(f64, bool)> for Observation {
    fn from((time, event): (f64, bool)) -> Self {
        Observation { time, event }
    }
}

pub fn observations(times: &[f64], events: &[bool]) -> Result<Vec<Observation>> {
    if times.len() != events.len() {
        return Err(Error::LengthMismatch(format!("{} times vs {} events", times.len(), events.len())));
    }
    Ok(times.iter().zip(events).map(|(&t, &e)| Observation::new(t, e)).collect())
}

fn check_times(obs: &[Observation]) -> Result<()> {
    if obs.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(o) = obs.iter().find(|o| !(o.time.is_finite() && o.time > 0.0)) {
        return Err(Error::OutOfRange(format!("survival time {} is not > 0", o.time)));
    }
    Ok(())
}

/// Distinct times in ascending order with (deaths, censored) counts.
fn tally(obs: &[Observation]) -> Vec<(f64, usize, usize)> {
    let mut sorted: Vec<Observation> = obs.to_vec();
    sorted.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut out: Vec<(f64, usize, usize)> = Vec::new();
    for o in sorted {
        match out.last_mut() {
            Some(last) if last.0 == o.time => {
                if o.event {
                    last.1 += 1
                } else {
                    last.2 += 1
                }
            }
            _ => out.push((o.time, o.event as usize, (!o.event) as usize)),
        }
    }
    out
}

/// Product-limit estimate. Only event times are stored as steps; before the
/// first of them S = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
    /// Greenwood variance of S(t) at each step.
    pub variance: Vec<f64>,
    pub n: usize,
    /// Largest observed time, event or censored.
    pub last_time: f64,
}

impl SurvivalCurve {
    /// Step-function value; right-continuous.
    pub fn survival_at(&self, t: f64) -> f64 {
        match self.step_index(t) {
            Some(i) => self.survival[i],
            None => 1.0,
        }
    }

    fn step_index(&self, t: f64) -> Option<usize> {
        let k = self.times.partition_point(|&x| x <= t);
        k.checked_sub(1)
    }

    /// Smallest time where S drops to or below `p`.
    pub fn quantile_time(&self, p: f64) -> Option<f64> {
        self.survival.iter().position(|&s| s <= p).map(|i| self.times[i])
    }

    pub fn median(&self) -> Option<f64> {
        self.quantile_time(0.5)
    }

    /// Rows `time,survival,ci_low,ci_high,at_risk,events`, starting with the
    /// origin row at time 0.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["time", "survival", "ci_low", "ci_high", "at_risk", "events"])?;
        w.write_record(["0", "1", "1", "1", &self.n.to_string(), "0"])?;
        for i in 0..self.times.len() {
            let (lo, hi) = loglog_interval(self.survival[i], self.variance[i]);
            w.write_record([
                self.times[i].to_string(),
                self.survival[i].to_string(),
                lo.to_string(),
                hi.to_string(),
                self.at_risk[i].to_string(),
                self.events[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn kaplan_meier(obs: &[Observation]) -> Result<SurvivalCurve> {
    check_times(obs)?;
    let mut at_risk = obs.len();
    let mut s = 1.0;
    let mut greenwood = 0.0;
    let mut curve = SurvivalCurve {
        times: Vec::new(),
        survival: Vec::new(),
        at_risk: Vec::new(),
        events: Vec::new(),
        variance: Vec::new(),
        n: obs.len(),
        last_time: obs.iter().map(|o| o.time).fold(f64::MIN, f64::max),
    };
    // deaths at a tied time are processed before the censorings at that time
    for (t, d, c) in tally(obs) {
        if d > 0 {
            let n = at_risk as f64;
            let df = d as f64;
            s *= 1.0 - df / n;
            if d < at_risk {
                greenwood += df / (n * (n - df));
            }
            let var = if s > 0.0 { s * s * greenwood } else { 0.0 };
            curve.times.push(t);
            curve.survival.push(s);
            curve.at_risk.push(at_risk);
            curve.events.push(d);
            curve.variance.push(var);
        }
        at_risk -= d + c;
    }
    Ok(curve)
}

/// 95% band on S through the complementary log-log transform.
pub fn loglog_interval(s: f64, variance: f64) -> (f64, f64) {
    if s >= 1.0 || s <= 0.0 || variance <= 0.0 {
        return (s, s);
    }
    let se = variance.sqrt() / (s * s.ln().abs());
    let lo = s.powf((Z95 * se).exp());
    let hi = s.powf((-Z95 * se).exp());
    (lo.clamp(0.0, 1.0), hi.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KmEstimate {
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `t` lies beyond the last observed time.
    pub truncated: bool,
}

/// Label recorded alongside KM bands.
pub const CI_METHOD: &str = "log-log (Greenwood)";

pub fn km_estimate_at(curve: &SurvivalCurve, t: f64) -> Result<KmEstimate> {
    if !(t >= 0.0) {
        return Err(Error::OutOfRange(format!("evaluation time {t} < 0")));
    }
    let (estimate, variance) = match curve.step_index(t) {
        Some(i) => (curve.survival[i], curve.variance[i]),
        None => (1.0, 0.0),
    };
    let (ci_low, ci_high) = loglog_interval(estimate, variance);
    Ok(KmEstimate { estimate, ci_low, ci_high, truncated: t > curve.last_time })
}

/// Median follow-up: the median of the KM curve of the censoring
/// distribution (event flags inverted).
pub fn reverse_km_median_followup(obs: &[Observation]) -> Result<f64> {
    let flipped: Vec<Observation> = obs.iter().map(|o| Observation::new(o.time, !o.event)).collect();
    kaplan_meier(&flipped)?.median().ok_or(Error::MedianNotReached)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRankResult {
    pub chi_square: f64,
    pub dof: usize,
    pub p_value: f64,
    pub observed: Vec<f64>,
    pub expected: Vec<f64>,
}

/// k-sample log-rank test with the hypergeometric variance.
pub fn log_rank(groups: &[&[Observation]]) -> Result<LogRankResult> {
    let k = groups.len();
    if k < 2 {
        return Err(Error::InvalidInput(format!("log-rank needs at least 2 groups, got {k}")));
    }
    for (g, grp) in groups.iter().enumerate() {
        if grp.is_empty() {
            return Err(Error::InvalidInput(format!("group {g} has no subjects")));
        }
        check_times(grp)?;
    }
    let mut pooled: Vec<(f64, bool, usize)> = groups
        .iter()
        .enumerate()
        .flat_map(|(g, grp)| grp.iter().map(move |o| (o.time, o.event, g)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut n_g: Vec<f64> = groups.iter().map(|g| g.len() as f64).collect();
    let mut observed = vec![0.0; k];
    let mut expected = vec![0.0; k];
    let mut v = DMatrix::<f64>::zeros(k, k);
    let mut i = 0;
    while i < pooled.len() {
        let t = pooled[i].0;
        let mut j = i;
        let mut d_g = vec![0.0; k];
        let mut leave = vec![0.0; k];
        while j < pooled.len() && pooled[j].0 == t {
            let (_, e, g) = pooled[j];
            if e {
                d_g[g] += 1.0;
            }
            leave[g] += 1.0;
            j += 1;
        }
        let d: f64 = d_g.iter().sum();
        let n: f64 = n_g.iter().sum();
        if d > 0.0 {
            for g in 0..k {
                observed[g] += d_g[g];
                expected[g] += d * n_g[g] / n;
            }
            if n > 1.0 {
                let f = d * (n - d) / (n - 1.0);
                for g in 0..k {
                    for h in 0..k {
                        let delta = if g == h { 1.0 } else { 0.0 };
                        v[(g, h)] += f * (n_g[g] / n) * (delta - n_g[h] / n);
                    }
                }
            }
        }
        for g in 0..k {
            n_g[g] -= leave[g];
        }
        i = j;
    }
    if observed.iter().sum::<f64>() == 0.0 {
        return Err(Error::NoEvents);
    }
    let u = DVector::from_iterator(k - 1, (0..k - 1).map(|g| observed[g] - expected[g]));
    let vk = v.view((0, 0), (k - 1, k - 1)).into_owned();
    let svd = vk.svd(true, true);
    let tol = 1e-10 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let chi_square = if rank == 0 {
        0.0
    } else {
        let pinv = svd.pseudo_inverse(tol).map_err(|e| Error::Degenerate(e.to_string()))?;
        (u.transpose() * pinv * &u)[(0, 0)].max(0.0)
    };
    let dof = rank.max(1);
    Ok(LogRankResult { chi_square, dof, p_value: chi_square_sf(chi_square, dof), observed, expected })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketRate {
    pub lower: f64,
    pub upper: f64,
    pub deaths: usize,
    pub denominator: usize,
    pub fraction: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupMortality {
    pub group: String,
    pub n: usize,
    pub buckets: Vec<BucketRate>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MortalityTable {
    pub groups: Vec<GroupMortality>,
    pub warnings: Vec<String>,
}

pub const DEFAULT_MORTALITY_BUCKETS: [f64; 3] = [30.0, 60.0, 90.0];

/// Fraction of each group dying in `(prev, threshold]` day buckets.
///
/// A subject censored before a bucket's upper edge is removed from that
/// bucket's denominator (and from every later one).
pub fn early_mortality_table(
    obs: &[Observation],
    labels: &[String],
    groups: &[String],
    thresholds: &[f64],
) -> Result<MortalityTable> {
    if obs.len() != labels.len() {
        return Err(Error::LengthMismatch(format!("{} observations vs {} labels", obs.len(), labels.len())));
    }
    if thresholds.windows(2).any(|w| w[0] >= w[1]) || thresholds.first().is_some_and(|&t| t <= 0.0) {
        return Err(Error::InvalidInput("bucket thresholds must be positive and increasing".into()));
    }
    let mut table = MortalityTable::default();
    for g in groups {
        let members: Vec<&Observation> = obs.iter().zip(labels).filter(|(_, l)| *l == g).map(|(o, _)| o).collect();
        if members.is_empty() {
            table.warnings.push(format!("group `{g}` is empty and was omitted"));
            continue;
        }
        let mut buckets = Vec::with_capacity(thresholds.len());
        let mut lower = 0.0;
        for &upper in thresholds {
            let deaths = members.iter().filter(|o| o.event && o.time > lower && o.time <= upper).count();
            let censored_early = members.iter().filter(|o| !o.event && o.time < upper).count();
            let denominator = members.len() - censored_early;
            let (fraction, ci_low, ci_high) = if denominator == 0 {
                (None, None, None)
            } else {
                let (lo, hi) = wilson_interval(deaths, denominator, Z95);
                (Some(deaths as f64 / denominator as f64), Some(lo), Some(hi))
            };
            buckets.push(BucketRate { lower, upper, deaths, denominator, fraction, ci_low, ci_high });
            lower = upper;
        }
        table.groups.push(GroupMortality { group: g.clone(), n: members.len(), buckets });
    }
    Ok(table)
}
