//! Discrimination and comparison metrics.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::stats::{midranks, normal_sf};
use crate::survival::{kaplan_meier, Observation};

/// Tie policy recorded with every concordance result.
pub const CONCORDANCE_TIES: &str = "risk ties count 1/2; equal times never comparable";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcordanceResult {
    pub c_index: f64,
    pub concordant: u64,
    pub discordant: u64,
    pub tied_risk: u64,
    pub comparable_pairs: u64,
    pub tie_policy: &'static str,
}

fn check_aligned(a: usize, b: usize, c: usize) -> Result<()> {
    if a != b || a != c {
        return Err(Error::LengthMismatch(format!("lengths {a}, {b}, {c}")));
    }
    if a == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

/// Fenwick tree of counts over compressed risk ranks.
struct Fenwick(Vec<u64>);

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick(vec![0; n + 1])
    }
    fn add(&mut self, mut i: usize) {
        i += 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }
    /// count of ranks < i
    fn below(&self, mut i: usize) -> u64 {
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Harrell's C. A pair is comparable when the subject with the strictly
/// shorter time had the event; it is concordant when that subject also has
/// the higher risk. Runs in O(n log n).
pub fn harrell_c(risk: &[f64], times: &[f64], events: &[bool]) -> Result<ConcordanceResult> {
    check_aligned(risk.len(), times.len(), events.len())?;
    if risk.iter().chain(times).any(|x| x.is_nan()) {
        return Err(Error::InvalidInput("NaN in risk or time".into()));
    }
    if !events.iter().any(|&e| e) {
        return Err(Error::NoEvents);
    }
    let mut levels = risk.to_vec();
    levels.sort_by(|a, b| a.total_cmp(b));
    levels.dedup();
    let rank = |r: f64| levels.partition_point(|&x| x < r);

    let mut order: Vec<usize> = (0..risk.len()).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
    let mut tree = Fenwick::new(levels.len());
    let mut inserted = 0u64;
    let (mut conc, mut disc, mut tied) = (0u64, 0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let t = times[order[i]];
        let mut j = i;
        while j < order.len() && times[order[j]] == t {
            j += 1;
        }
        for &s in &order[i..j] {
            if events[s] {
                let r = rank(risk[s]);
                let lower = tree.below(r);
                let upto = tree.below(r + 1);
                conc += lower;
                tied += upto - lower;
                disc += inserted - upto;
            }
        }
        for &s in &order[i..j] {
            tree.add(rank(risk[s]));
            inserted += 1;
        }
        i = j;
    }
    let comparable = conc + disc + tied;
    if comparable == 0 {
        return Err(Error::NoComparablePairs);
    }
    Ok(ConcordanceResult {
        c_index: (conc as f64 + 0.5 * tied as f64) / comparable as f64,
        concordant: conc,
        discordant: disc,
        tied_risk: tied,
        comparable_pairs: comparable,
        tie_policy: CONCORDANCE_TIES,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeAucResult {
    pub horizon: f64,
    pub auc: f64,
    pub n_cases: usize,
    pub n_controls: usize,
}

/// Cumulative-case / dynamic-control AUC at `horizon`. Cases (events by the
/// horizon) are weighted by the inverse Kaplan-Meier probability of remaining
/// uncensored just before their event time; controls are subjects still
/// under observation past the horizon and share a common weight.
pub fn time_dependent_auc(marker: &[f64], times: &[f64], events: &[bool], horizon: f64) -> Result<TimeAucResult> {
    check_aligned(marker.len(), times.len(), events.len())?;
    if !(horizon > 0.0) {
        return Err(Error::OutOfRange(format!("horizon {horizon} must be > 0")));
    }
    let censoring: Vec<Observation> = times.iter().zip(events).map(|(&t, &e)| Observation::new(t, !e)).collect();
    let g = kaplan_meier(&censoring)?;
    let g_before = |t: f64| {
        let k = g.times.partition_point(|&x| x < t);
        if k == 0 {
            1.0
        } else {
            g.survival[k - 1]
        }
    };

    let mut controls: Vec<f64> = (0..times.len()).filter(|&i| times[i] > horizon).map(|i| marker[i]).collect();
    controls.sort_by(|a, b| a.total_cmp(b));
    let cases: Vec<usize> = (0..times.len()).filter(|&i| events[i] && times[i] <= horizon).collect();
    if cases.is_empty() {
        return Err(Error::NoCases(horizon));
    }
    if controls.is_empty() {
        return Err(Error::NoControls(horizon));
    }
    let nc = controls.len() as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for &i in &cases {
        let w = 1.0 / g_before(times[i]);
        let below = controls.partition_point(|&x| x < marker[i]);
        let upto = controls.partition_point(|&x| x <= marker[i]);
        num += w * (below as f64 + 0.5 * (upto - below) as f64);
        den += w * nc;
    }
    Ok(TimeAucResult { horizon, auc: num / den, n_cases: cases.len(), n_controls: controls.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgeBinError {
    /// Lower edge of the `[lower, lower + 5)` bin.
    pub lower: f64,
    pub n: usize,
    pub mae: f64,
    pub me: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgeAccuracy {
    pub mae: f64,
    pub me: f64,
    /// Mean of the per-bin MAEs over nonempty 5-year bins.
    pub binwise_mae: f64,
    pub bins: Vec<AgeBinError>,
}

pub const AGE_BIN_WIDTH: f64 = 5.0;

pub fn age_accuracy(predicted: &[f64], actual: &[f64]) -> Result<AgeAccuracy> {
    if predicted.len() != actual.len() {
        return Err(Error::LengthMismatch(format!("{} predictions vs {} ages", predicted.len(), actual.len())));
    }
    if predicted.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = predicted.len() as f64;
    let mae = predicted.iter().zip(actual).map(|(p, a)| (p - a).abs()).sum::<f64>() / n;
    let me = predicted.iter().zip(actual).map(|(p, a)| p - a).sum::<f64>() / n;
    let mut bins: std::collections::BTreeMap<i64, (usize, f64, f64)> = Default::default();
    for (p, a) in predicted.iter().zip(actual) {
        let b = (a / AGE_BIN_WIDTH).floor() as i64;
        let e = bins.entry(b).or_default();
        e.0 += 1;
        e.1 += (p - a).abs();
        e.2 += p - a;
    }
    let bins: Vec<AgeBinError> = bins
        .into_iter()
        .map(|(b, (n, abs, err))| AgeBinError { lower: b as f64 * AGE_BIN_WIDTH, n, mae: abs / n as f64, me: err / n as f64 })
        .collect();
    let binwise_mae = bins.iter().map(|b| b.mae).sum::<f64>() / bins.len() as f64;
    Ok(AgeAccuracy { mae, me, binwise_mae, bins })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignedRankResult {
    /// Sum of ranks of the positive differences.
    pub statistic: f64,
    pub n: usize,
    pub zeros_dropped: usize,
    pub p_value: f64,
    pub method: PMethod,
    pub zero_method: &'static str,
}

pub const SIGNED_RANK_EXACT_MAX: usize = 25;

/// Counts of subset sums of `weights`: `out[s]` = number of subsets summing to s.
fn subset_sum_counts(weights: &[usize]) -> Vec<u64> {
    let total: usize = weights.iter().sum();
    let mut dp = vec![0u64; total + 1];
    dp[0] = 1;
    let mut reach = 0;
    for &w in weights {
        for s in (0..=reach).rev() {
            if dp[s] > 0 {
                dp[s + w] += dp[s];
            }
        }
        reach += w;
    }
    dp
}

fn two_sided_from_counts(counts: &[u64], observed: usize) -> f64 {
    let total: u64 = counts.iter().sum();
    let lower: u64 = counts[..=observed].iter().sum();
    let upper: u64 = counts[observed..].iter().sum();
    (2.0 * lower.min(upper) as f64 / total as f64).min(1.0)
}

/// Two-sided Wilcoxon signed-rank test. Zero differences are dropped.
/// Exact (tie-aware, via midranks) for n <= 25, otherwise normal with
/// continuity and tie corrections.
pub fn wilcoxon_signed_rank(diffs: &[f64]) -> Result<SignedRankResult> {
    if diffs.iter().any(|d| d.is_nan()) {
        return Err(Error::InvalidInput("NaN difference".into()));
    }
    let nz: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    let zeros_dropped = diffs.len() - nz.len();
    if nz.is_empty() {
        return Err(Error::AllZero);
    }
    let n = nz.len();
    let abs: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = midranks(&abs);
    let w_plus: f64 = nz.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();

    let (p_value, method) = if n <= SIGNED_RANK_EXACT_MAX {
        // midranks are multiples of 1/2, so doubled ranks are integers
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let counts = subset_sum_counts(&doubled);
        (two_sided_from_counts(&counts, (2.0 * w_plus).round() as usize), PMethod::Exact)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let tie_adj: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
        let sd = (nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_adj).sqrt();
        let z = ((w_plus - mean).abs() - 0.5).max(0.0) / sd;
        ((2.0 * normal_sf(z)).min(1.0), PMethod::Normal)
    };
    Ok(SignedRankResult { statistic: w_plus, n, zeros_dropped, p_value, method, zero_method: "wilcox" })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankSumResult {
    /// Mann-Whitney U for the first sample.
    pub u: f64,
    /// Rank sum of the first sample.
    pub rank_sum: f64,
    pub p_value: f64,
    pub method: PMethod,
}

pub const RANK_SUM_EXACT_MAX: usize = 20;

/// Two-sided Wilcoxon rank-sum (Mann-Whitney U) test with midranks. Exact
/// when the pooled size is at most 20 and there are no ties.
pub fn wilcoxon_rank_sum(a: &[f64], b: &[f64]) -> Result<RankSumResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput);
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(Error::InvalidInput("NaN value".into()));
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let (m, n) = (a.len(), b.len());
    let rank_sum: f64 = ranks[..m].iter().sum();
    let u = rank_sum - (m * (m + 1)) as f64 / 2.0;

    let (p_value, method) = if m + n <= RANK_SUM_EXACT_MAX && ties.is_empty() {
        (two_sided_from_counts(&u_distribution(m, n), u.round() as usize), PMethod::Exact)
    } else {
        let (mf, nf) = (m as f64, n as f64);
        let total = mf + nf;
        let mean = mf * nf / 2.0;
        let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (total * (total - 1.0));
        let var = mf * nf / 12.0 * ((total + 1.0) - tie_term);
        let p = if var <= 0.0 {
            1.0
        } else {
            let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
            (2.0 * normal_sf(z)).min(1.0)
        };
        (p, PMethod::Normal)
    };
    Ok(RankSumResult { u, rank_sum, p_value, method })
}

/// Null distribution counts of U for sample sizes (m, n) without ties.
fn u_distribution(m: usize, n: usize) -> Vec<u64> {
    // ways[j][s]: choose j of the ranks processed so far with rank sum s
    let total = m + n;
    let max_sum = (total * (total + 1)) / 2;
    let mut ways = vec![vec![0u64; max_sum + 1]; m + 1];
    ways[0][0] = 1;
    for r in 1..=total {
        for j in (1..=m.min(r)).rev() {
            for s in (r..=max_sum).rev() {
                ways[j][s] += ways[j - 1][s - r];
            }
        }
    }
    let offset = m * (m + 1) / 2;
    ways[m][offset..=offset + m * n].to_vec()
}

/// Sample Pearson correlation.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(format!("{} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::InvalidInput("need at least 2 points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("x".into()));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("y".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}
