//! Parsing of model term specifications such as `fad/decade`,
//! `risk_scaled/0.1`, `sex:female` or `risk_quartiles`.

use anyhow::{anyhow, bail, Result};
use survmark_core::biomarkers::{fad_of, stratify, BiomarkerColumn, Scheme};
use survmark_core::cohort::Cohort;
use survmark_core::cox::{FactorSource, NumericSource, Rescale, Term};

pub fn numeric_source(name: &str, cohort: &Cohort) -> Option<NumericSource> {
    Some(match name {
        "chrono_age" | "age" => NumericSource::ChronoAge,
        "predicted_age" => NumericSource::PredictedAge,
        "fad" => NumericSource::Fad,
        "risk" | "risk_raw" => NumericSource::RiskRaw,
        "risk_scaled" => NumericSource::RiskScaled,
        other if cohort.extra_names().iter().any(|e| e == other) => NumericSource::Extra(other.to_string()),
        _ => return None,
    })
}

fn most_frequent(values: impl Iterator<Item = String>) -> Option<String> {
    let mut counts: std::collections::BTreeMap<String, usize> = Default::default();
    for v in values {
        *counts.entry(v).or_insert(0) += 1;
    }
    // ties resolve to the alphabetically first level
    counts.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).map(|(k, _)| k)
}

/// Biomarker values used to stratify a scheme.
pub fn scheme_column(cohort: &Cohort, scheme: Scheme) -> BiomarkerColumn {
    if scheme.is_risk() {
        BiomarkerColumn::new("risk_scaled", cohort.records().iter().map(|r| r.risk_scaled).collect(), "score")
    } else {
        fad_of(cohort).column
    }
}

pub fn parse_term(spec: &str, cohort: &Cohort) -> Result<Term> {
    let spec = spec.trim();
    if spec.is_empty() {
        bail!("empty term specification");
    }
    let (head, reference) = match spec.split_once(':') {
        Some((h, r)) => (h, Some(r.to_string())),
        None => (spec, None),
    };
    let (base, rescale) = match head.split_once('/') {
        Some((b, "decade")) => (b, Rescale::PerDecade),
        Some((b, "0.1")) => (b, Rescale::PerTenth),
        Some((_, other)) => bail!("unknown rescaling `/{other}` in `{spec}` (use /decade or /0.1)"),
        None => (head, Rescale::None),
    };

    if let Ok(scheme) = Scheme::parse(base) {
        if rescale != Rescale::None {
            bail!("stratification scheme `{base}` cannot be rescaled");
        }
        let strata = stratify(&scheme_column(cohort, scheme), scheme)?;
        let reference = reference.unwrap_or_else(|| scheme.reference_label());
        return Ok(Term::factor(base, FactorSource::Labels { values: strata.labels, levels: strata.levels }, reference));
    }

    let factor = match base {
        "sex" => Some((FactorSource::Sex, "female".to_string())),
        "race" => Some((FactorSource::Race, "white".to_string())),
        "intent" => Some((FactorSource::Intent, "curative".to_string())),
        "year_group" => Some((FactorSource::YearGroup, "pre2016".to_string())),
        "cancer_site" | "technique" => {
            let recs = cohort.records();
            let values = recs
                .iter()
                .map(|r| if base == "cancer_site" { r.cancer_site.clone() } else { r.technique.clone() })
                .filter(|v| v != survmark_core::cohort::UNKNOWN);
            let default = most_frequent(values).ok_or_else(|| anyhow!("`{base}` has no known values"))?;
            let source = if base == "cancer_site" { FactorSource::CancerSite } else { FactorSource::Technique };
            Some((source, default))
        }
        _ => None,
    };
    if let Some((source, default_ref)) = factor {
        if rescale != Rescale::None {
            bail!("factor `{base}` cannot be rescaled");
        }
        return Ok(Term::factor(base, source, reference.unwrap_or(default_ref)));
    }

    if reference.is_some() {
        bail!("`{base}` is numeric and takes no reference level");
    }
    let source = numeric_source(base, cohort).ok_or_else(|| anyhow!("unknown term `{base}`"))?;
    Ok(Term::numeric(base, source, rescale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use survmark_core::cohort::{PatientRecord, Sex};

    fn cohort() -> Cohort {
        let recs = (0..6)
            .map(|i| {
                let mut r = PatientRecord::new(format!("p{i}"), 10.0 + i as f64, i % 2 == 0, 50.0 + i as f64);
                r.sex = if i % 2 == 0 { Sex::Male } else { Sex::Female };
                r.predicted_age = Some(52.0 + 2.0 * i as f64);
                r.risk_scaled = Some(i as f64 / 5.0);
                r.cancer_site = if i < 4 { "lung".into() } else { "breast".into() };
                r.extras.insert("x".into(), i as f64);
                r
            })
            .collect();
        Cohort::new(recs).unwrap()
    }

    #[test]
    fn numeric_terms() {
        let c = cohort();
        assert_eq!(parse_term("fad/decade", &c).unwrap(), Term::numeric("fad", NumericSource::Fad, Rescale::PerDecade));
        assert_eq!(parse_term("risk_scaled/0.1", &c).unwrap(), Term::numeric("risk_scaled", NumericSource::RiskScaled, Rescale::PerTenth));
        assert_eq!(parse_term("x", &c).unwrap(), Term::numeric("x", NumericSource::Extra("x".into()), Rescale::None));
        assert!(parse_term("nope", &c).is_err());
        assert!(parse_term("fad/week", &c).is_err());
    }

    #[test]
    fn factor_terms_and_references() {
        let c = cohort();
        assert_eq!(parse_term("sex", &c).unwrap(), Term::factor("sex", FactorSource::Sex, "female"));
        assert_eq!(parse_term("sex:male", &c).unwrap(), Term::factor("sex", FactorSource::Sex, "male"));
        assert_eq!(parse_term("cancer_site", &c).unwrap(), Term::factor("cancer_site", FactorSource::CancerSite, "lung"));
        assert!(parse_term("sex/decade", &c).is_err());
    }

    #[test]
    fn scheme_terms() {
        let c = cohort();
        match parse_term("risk_quartiles", &c).unwrap() {
            Term::Factor { reference, source: FactorSource::Labels { levels, .. }, .. } => {
                assert_eq!(reference, "<0.25");
                assert_eq!(levels.len(), 4);
            }
            t => panic!("unexpected {t:?}"),
        }
    }
}
