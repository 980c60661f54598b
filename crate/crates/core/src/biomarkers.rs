//! Biomarker transforms: age deviation, score scaling, stratification and
//! embedding similarity.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::stats::median;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiomarkerColumn {
    pub name: String,
    /// One entry per cohort subject; `None` where the input was missing.
    pub values: Vec<Option<f64>>,
    pub unit: String,
}

impl BiomarkerColumn {
    pub fn new(name: impl Into<String>, values: Vec<Option<f64>>, unit: impl Into<String>) -> Self {
        BiomarkerColumn { name: name.into(), values, unit: unit.into() }
    }

    pub fn present(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FadColumn {
    pub column: BiomarkerColumn,
    /// Indices of subjects without a predicted age.
    pub excluded: Vec<usize>,
}

/// Predicted minus chronological age, in years.
pub fn compute_fad(predicted: &[Option<f64>], chrono: &[f64]) -> Result<FadColumn> {
    if predicted.len() != chrono.len() {
        return Err(Error::LengthMismatch(format!("{} predictions vs {} ages", predicted.len(), chrono.len())));
    }
    let values: Vec<Option<f64>> = predicted.iter().zip(chrono).map(|(p, c)| p.map(|p| p - c)).collect();
    let excluded = values.iter().enumerate().filter(|(_, v)| v.is_none()).map(|(i, _)| i).collect();
    Ok(FadColumn { column: BiomarkerColumn::new("fad", values, "years"), excluded })
}

pub fn fad_of(cohort: &Cohort) -> FadColumn {
    let predicted: Vec<Option<f64>> = cohort.records().iter().map(|r| r.predicted_age).collect();
    compute_fad(&predicted, &cohort.chrono_ages()).expect("aligned by construction")
}

/// `(x - min) / (max - min)`.
pub fn minmax_scale(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("non-finite score".into()));
    }
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if raw.len() < 2 || !(max > min) {
        return Err(Error::ZeroVariance("scores".into()));
    }
    let span = max - min;
    Ok(raw.iter().map(|x| ((x - min) / span).clamp(0.0, 1.0)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    FadBands,
    FadGe5,
    FadLeMinus5,
    RiskQuartiles,
    RiskDeciles,
    RiskHalf,
}

impl Scheme {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "fad_bands" => Scheme::FadBands,
            "fad_ge5" => Scheme::FadGe5,
            "fad_le_minus5" => Scheme::FadLeMinus5,
            "risk_quartiles" => Scheme::RiskQuartiles,
            "risk_deciles" => Scheme::RiskDeciles,
            "risk_half" => Scheme::RiskHalf,
            other => return Err(Error::UnknownName(other.to_string())),
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::FadBands => "fad_bands",
            Scheme::FadGe5 => "fad_ge5",
            Scheme::FadLeMinus5 => "fad_le_minus5",
            Scheme::RiskQuartiles => "risk_quartiles",
            Scheme::RiskDeciles => "risk_deciles",
            Scheme::RiskHalf => "risk_half",
        }
    }

    pub fn is_risk(self) -> bool {
        matches!(self, Scheme::RiskQuartiles | Scheme::RiskDeciles | Scheme::RiskHalf)
    }

    /// Label of the lowest group, used as the Cox reference level.
    pub fn reference_label(self) -> String {
        self.labels(&DEFAULT_FAD_BANDS)[0].clone()
    }

    /// Group labels in ascending order.
    pub fn labels(self, fad_cuts: &[f64]) -> Vec<String> {
        match self {
            Scheme::FadBands => band_labels(fad_cuts),
            Scheme::FadGe5 => vec!["<5".into(), "≥5".into()],
            Scheme::FadLeMinus5 => vec!["≤-5".into(), ">-5".into()],
            Scheme::RiskQuartiles => vec!["<0.25".into(), "0.25-0.49".into(), "0.5-0.74".into(), "≥0.75".into()],
            Scheme::RiskDeciles => (0..10).map(|k| format!("{:.1}–{:.1}", k as f64 / 10.0, (k + 1) as f64 / 10.0)).collect(),
            Scheme::RiskHalf => vec!["<0.5".into(), "≥0.5".into()],
        }
    }
}

/// Interior cut points of the default FAD bands (years).
pub const DEFAULT_FAD_BANDS: [f64; 6] = [-10.0, -5.0, 0.0, 5.0, 10.0, 20.0];

fn band_labels(cuts: &[f64]) -> Vec<String> {
    let mut out = vec![format!("<{}", cuts[0])];
    for w in cuts.windows(2) {
        out.push(format!("{} to {}", w[0], w[1]));
    }
    out.push(format!("≥{}", cuts[cuts.len() - 1]));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrataAssignment {
    pub scheme: Scheme,
    /// Group label per subject; `None` where the biomarker is missing.
    pub labels: Vec<Option<String>>,
    /// Ordered group labels.
    pub levels: Vec<String>,
    pub boundaries: Vec<f64>,
}

impl StrataAssignment {
    pub fn counts(&self) -> Vec<(String, usize)> {
        self.levels
            .iter()
            .map(|l| (l.clone(), self.labels.iter().filter(|x| x.as_deref() == Some(l.as_str())).count()))
            .collect()
    }

    /// Rows `id,scheme,label`.
    pub fn write_csv<W: Write>(&self, ids: &[String], writer: W) -> Result<()> {
        if ids.len() != self.labels.len() {
            return Err(Error::LengthMismatch(format!("{} ids vs {} labels", ids.len(), self.labels.len())));
        }
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["id", "scheme", "label"])?;
        for (id, l) in ids.iter().zip(&self.labels) {
            w.write_record([id.as_str(), self.scheme.as_str(), l.as_deref().unwrap_or("")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Index of the `[b_{k-1}, b_k)` interval holding `value`; the outer
/// intervals are open-ended.
fn bucket(value: f64, boundaries: &[f64]) -> usize {
    boundaries.partition_point(|&b| b <= value)
}

/// Stratifies with the scheme's default FAD bands.
pub fn stratify(column: &BiomarkerColumn, scheme: Scheme) -> Result<StrataAssignment> {
    stratify_with(column, scheme, &DEFAULT_FAD_BANDS)
}

/// Stratifies a biomarker column. Intervals are left-closed and
/// right-open; for risk schemes the top interval includes 1.0. The
/// `fad_le_minus5` split puts exactly -5 in the lower group.
pub fn stratify_with(column: &BiomarkerColumn, scheme: Scheme, fad_cuts: &[f64]) -> Result<StrataAssignment> {
    if fad_cuts.is_empty() || fad_cuts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("band cuts must be strictly increasing".into()));
    }
    let boundaries: Vec<f64> = match scheme {
        Scheme::FadBands => fad_cuts.to_vec(),
        Scheme::FadGe5 => vec![5.0],
        Scheme::FadLeMinus5 => vec![-5.0],
        Scheme::RiskQuartiles => vec![0.25, 0.5, 0.75],
        Scheme::RiskDeciles => (1..10).map(|k| k as f64 / 10.0).collect(),
        Scheme::RiskHalf => vec![0.5],
    };
    let levels = scheme.labels(fad_cuts);
    let mut labels = Vec::with_capacity(column.values.len());
    for (i, v) in column.values.iter().enumerate() {
        let Some(v) = *v else {
            labels.push(None);
            continue;
        };
        if v.is_nan() {
            return Err(Error::InvalidInput(format!("NaN biomarker at subject {i}")));
        }
        if scheme.is_risk() && !(0.0..=1.0).contains(&v) {
            return Err(Error::OutOfRange(format!("risk score {v} at subject {i} outside [0, 1]")));
        }
        let k = match scheme {
            Scheme::FadLeMinus5 => (v > -5.0) as usize,
            _ => bucket(v, &boundaries),
        };
        labels.push(Some(levels[k].clone()));
    }
    Ok(StrataAssignment { scheme, labels, levels, boundaries })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CosineProfile {
    pub similarities: Vec<f64>,
    pub median: f64,
}

/// Per-subject cosine similarity between two embedding sets.
pub fn cosine_similarity_profile(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<CosineProfile> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(format!("{} vs {} subjects", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut similarities = Vec::with_capacity(a.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if x.len() != y.len() {
            return Err(Error::LengthMismatch(format!("subject {i}: dimension {} vs {}", x.len(), y.len())));
        }
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        let nx = x.iter().map(|p| p * p).sum::<f64>().sqrt();
        let ny = y.iter().map(|q| q * q).sum::<f64>().sqrt();
        if nx == 0.0 || ny == 0.0 {
            return Err(Error::ZeroNorm(i));
        }
        similarities.push((dot / (nx * ny)).clamp(-1.0, 1.0));
    }
    let median = median(&similarities).unwrap();
    Ok(CosineProfile { similarities, median })
}
