use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use survmark_core::attention::{
    average_over_dataset, export_obj, read_grid_csv, read_landmarks_csv, read_obj, subdivide_once, triangle_attention,
    upsample_bilinear, DenseMap, FaceMesh, COLORMAP, DEFAULT_IMAGE_SIZE,
};
use survmark_core::biomarkers::{minmax_scale, stratify, Scheme};
use survmark_core::cohort::{read_cohort, read_embedding_sidecar, write_cohort, Cohort, Schema};
use survmark_core::cox::{build_design, fit_adjusted, fit_cox, univariate_screen, CoxFit, Ties};
use survmark_core::metrics::{harrell_c, time_dependent_auc};
use survmark_core::survival::{
    early_mortality_table, kaplan_meier, km_estimate_at, log_rank, reverse_km_median_followup, Observation,
    DEFAULT_MORTALITY_BUCKETS,
};
use survmark_core::synth::{simulate as run_simulation, SimSpec};
use survmark_core::trainer::{
    balance as balance_indices, bin_counts, train_age_model, train_risk_model, write_trace_csv, BalanceMode, BalancePlan, ModelMeta,
    TrainConfig,
};
use survmark_core::Error as CoreError;

use crate::bundle::{Bundle, Inputs};
use crate::terms::{numeric_source, parse_term, scheme_column};
use crate::{AnalysisFailure, CohortInput, Common};

/// Month horizons mapped to days: 3, 6, 12 and 24 months.
pub const DEFAULT_AUC_HORIZONS: [f64; 4] = [91.0, 182.0, 365.0, 730.0];
const HORIZON_NOTE: &str = "3/6/12/24 months = 91/182/365/730 days";

fn load_params<P: DeserializeOwned + Default>(config: &Option<PathBuf>, inputs: &mut Inputs) -> Result<P> {
    match config {
        Some(path) => {
            let bytes = inputs.read("config", path)?;
            serde_json::from_slice(&bytes).with_context(|| format!("parsing config {}", path.display()))
        }
        None => Ok(P::default()),
    }
}

fn load_cohort(input: &CohortInput, inputs: &mut Inputs, bundle: &mut Bundle) -> Result<Cohort> {
    let schema = match &input.schema {
        Some(path) => serde_json::from_slice(&inputs.read("schema", path)?).context("parsing schema")?,
        None => Schema::default(),
    };
    let bytes = inputs.read("cohort", &input.cohort)?;
    let loaded = read_cohort(bytes.as_slice(), &schema)?;
    for d in &loaded.dropped {
        bundle.notes.push(format!("dropped row {}: {}", d.row, d.reason));
    }
    if loaded.cohort.is_empty() {
        return Err(CoreError::EmptyInput).context("cohort has no usable rows");
    }
    Ok(loaded.cohort)
}

fn cohort_csv(cohort: &Cohort) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_cohort(cohort, &mut buf)?;
    Ok(buf)
}

// ---------------------------------------------------------------- simulate

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// binary, linear-risk, two-signal, quartile or demo.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SimulateParams {
    preset: String,
    n: usize,
    seed: u64,
    /// Full generator spec; replaces the preset when present.
    spec: Option<SimSpec>,
}

impl Default for SimulateParams {
    fn default() -> Self {
        SimulateParams { preset: "demo".into(), n: 2000, seed: 0, spec: None }
    }
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let mut inputs = Inputs::default();
    let mut p: SimulateParams = load_params(&args.common.config, &mut inputs)?;
    if let Some(v) = args.preset {
        p.preset = v;
    }
    let spec = match p.spec.take() {
        Some(mut s) => {
            if let Some(n) = args.n {
                s.n = n;
            }
            if let Some(seed) = args.common.seed {
                s.seed = seed;
            }
            s
        }
        None => SimSpec::preset(&p.preset, args.n.unwrap_or(p.n), args.common.seed.unwrap_or(p.seed))?,
    };
    let sim = run_simulation(&spec)?;
    let mut bundle = Bundle::default();
    bundle.add("cohort.csv", cohort_csv(&sim.cohort)?);
    bundle.add_json("truth.json", &sim.truth)?;
    bundle.summary = json!({
        "n": spec.n,
        "events": sim.cohort.events().iter().filter(|&&e| e).count(),
        "observed_censored_fraction": sim.truth.observed_censored_fraction,
        "expected_censored_fraction": sim.truth.expected_censored_fraction,
    });
    let config = json!({ "preset": p.preset, "spec": spec });
    bundle.commit(&args.common.out, "simulate", Some(spec.seed), config, inputs)?;
    Ok(())
}

// ---------------------------------------------------------------- train

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub input: CohortInput,
    /// risk (ranking loss) or age (mean absolute error).
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub smooth_lambda: Option<f64>,
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    /// Use a one-hidden-layer head of this width.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Binary f32 embedding sidecar (row-major, one row per cohort row).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Sidecar dimension; inferred from the file size when omitted.
    #[arg(long)]
    pub dim: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainParams {
    #[serde(default = "risk_task")]
    task: String,
    #[serde(flatten)]
    train: TrainConfig,
}

fn risk_task() -> String {
    "risk".into()
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams { task: risk_task(), train: TrainConfig::default() }
    }
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut inputs = Inputs::default();
    let mut bundle = Bundle::default();
    let mut p: TrainParams = load_params(&args.common.config, &mut inputs)?;
    let cfg = &mut p.train;
    if let Some(v) = args.common.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.smooth_lambda {
        cfg.smooth_lambda = v;
    }
    if let Some(v) = args.validation_fraction {
        cfg.validation_fraction = v;
    }
    if let Some(h) = args.hidden {
        cfg.head = survmark_core::trainer::HeadKind::Mlp { hidden: h };
    }
    if let Some(t) = args.task {
        p.task = t;
    }
    cfg.validate()?;

    let cohort = load_cohort(&args.input, &mut inputs, &mut bundle)?;
    let x = match &args.embeddings {
        Some(path) => {
            let bytes = inputs.read("embeddings", path)?;
            let n = cohort.len();
            let dim = match args.dim {
                Some(d) => d,
                None if bytes.len() % (4 * n) == 0 && !bytes.is_empty() => bytes.len() / (4 * n),
                None => bail!("cannot infer embedding dimension from {} bytes for {n} rows", bytes.len()),
            };
            read_embedding_sidecar(&bytes, n, dim)?
        }
        None => cohort
            .embeddings()
            .ok_or_else(|| CoreError::MissingColumn("e0 (embedding columns)".into()))?,
    };

    let cfg = p.train.clone();
    let meta = |epoch: usize| ModelMeta { task: p.task.clone(), seed: cfg.seed, epoch, config: cfg.clone() };
    match p.task.as_str() {
        "risk" => {
            let out = train_risk_model(&x, &cohort.times(), &cohort.events(), &cfg)?;
            bundle.add("model.bin", out.model.to_bytes(&meta(cfg.epochs))?);
            for (k, m) in out.checkpoints.iter().enumerate() {
                bundle.add(format!("checkpoints/epoch_{:03}.bin", k + 1), m.to_bytes(&meta(k + 1))?);
            }
            let mut trace = Vec::new();
            write_trace_csv(&out.trace, &mut trace)?;
            bundle.add("trace.csv", trace);

            let raw = out.model.predict_all(&x);
            let scaled = match minmax_scale(&raw) {
                Ok(s) => s.into_iter().map(Some).collect(),
                Err(e) => {
                    bundle.notes.push(format!("risk_scaled left empty: {e}"));
                    vec![None; raw.len()]
                }
            };
            let mut i = 0;
            let scored = cohort.map_records(|r| {
                let mut r = r.clone();
                r.risk_raw = Some(raw[i]);
                r.risk_scaled = scaled[i];
                i += 1;
                r
            })?;
            bundle.add("scored.csv", cohort_csv(&scored)?);
            let ids: Vec<&str> = out.split.validation.iter().map(|&i| cohort.records()[i].id.as_str()).collect();
            bundle.add_json(
                "training.json",
                &json!({
                    "task": "risk",
                    "n_train": out.split.train.len(),
                    "n_validation": out.split.validation.len(),
                    "validation_ids": ids,
                    "loss_form": out.loss_form,
                    "batches_without_pairs": out.batches_without_pairs,
                    "final": out.trace.last(),
                }),
            )?;
            bundle.summary = json!({ "final": out.trace.last(), "epochs": cfg.epochs });
        }
        "age" => {
            let out = train_age_model(&x, &cohort.chrono_ages(), &cfg)?;
            bundle.add("model.bin", out.model.to_bytes(&meta(cfg.epochs))?);
            let mut trace = String::from("epoch,train_mae,val_mae\n");
            for e in &out.trace {
                trace.push_str(&format!("{},{},{}\n", e.epoch, e.train_mae, e.val_mae));
            }
            bundle.add("trace.csv", trace.into_bytes());
            let pred = out.model.predict_all(&x);
            let mut i = 0;
            let scored = cohort.map_records(|r| {
                let mut r = r.clone();
                r.predicted_age = Some(pred[i]);
                i += 1;
                r
            })?;
            bundle.add("scored.csv", cohort_csv(&scored)?);
            bundle.summary = json!({ "final": out.trace.last(), "epochs": cfg.epochs });
        }
        other => bail!("unknown task `{other}` (use risk or age)"),
    }
    let seed = p.train.seed;
    bundle.commit(&args.common.out, "train", Some(seed), serde_json::to_value(&p)?, inputs)?;
    Ok(())
}

// ---------------------------------------------------------------- metrics

#[derive(Args, Debug)]
pub struct MetricsArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub input: CohortInput,
    /// risk, risk_scaled, fad, predicted_age, chrono_age or an extra column.
    #[arg(long)]
    pub marker: Option<String>,
    /// Comma-separated horizons in days.
    #[arg(long, value_delimiter = ',')]
    pub horizons: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct MetricsParams {
    marker: String,
    horizons: Vec<f64>,
}

impl Default for MetricsParams {
    fn default() -> Self {
        MetricsParams { marker: "risk".into(), horizons: DEFAULT_AUC_HORIZONS.to_vec() }
    }
}

#[derive(Serialize)]
struct AucEntry {
    horizon: f64,
    auc: Option<f64>,
    n_cases: Option<usize>,
    n_controls: Option<usize>,
    reason: Option<String>,
}

pub fn metrics(args: MetricsArgs) -> Result<()> {
    let mut inputs = Inputs::default();
    let mut bundle = Bundle::default();
    let mut p: MetricsParams = load_params(&args.common.config, &mut inputs)?;
    if let Some(m) = args.marker {
        p.marker = m;
    }
    if let Some(h) = args.horizons {
        p.horizons = h;
    }
    let cohort = load_cohort(&args.input, &mut inputs, &mut bundle)?;
    let source = numeric_source(&p.marker, &cohort).ok_or_else(|| CoreError::UnknownName(format!("marker {}", p.marker)))?;
    let values = source.values(&cohort);
    let rows: Vec<usize> = (0..cohort.len()).filter(|&i| values[i].is_some()).collect();
    if rows.is_empty() {
        return Err(CoreError::MissingColumn(p.marker.clone()).into());
    }
    let marker: Vec<f64> = rows.iter().map(|&i| values[i].unwrap()).collect();
    let all_t = cohort.times();
    let all_e = cohort.events();
    let times: Vec<f64> = rows.iter().map(|&i| all_t[i]).collect();
    let events: Vec<bool> = rows.iter().map(|&i| all_e[i]).collect();

    let (concordance, concordance_error) = match harrell_c(&marker, &times, &events) {
        Ok(c) => (Some(c), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let auc: Vec<AucEntry> = p
        .horizons
        .iter()
        .map(|&h| match time_dependent_auc(&marker, &times, &events, h) {
            Ok(r) => AucEntry { horizon: h, auc: Some(r.auc), n_cases: Some(r.n_cases), n_controls: Some(r.n_controls), reason: None },
            Err(e) => AucEntry { horizon: h, auc: None, n_cases: None, n_controls: None, reason: Some(e.to_string()) },
        })
        .collect();
    let report = json!({
        "marker": p.marker,
        "n_total": cohort.len(),
        "n_used": rows.len(),
        "horizon_mapping": HORIZON_NOTE,
        "concordance": concordance,
        "concordance_error": concordance_error,
        "auc": auc,
    });
    bundle.summary = json!({ "c_index": report["concordance"]["c_index"] });
    bundle.add_json("metrics.json", &report)?;
    bundle.notes.push(format!("horizons: {HORIZON_NOTE}"));
    bundle.commit(&args.common.out, "metrics", args.common.seed, serde_json::to_value(&p)?, inputs)?;
    Ok(())
}

// ---------------------------------------------------------------- cox

#[derive(Args, Debug)]
pub struct CoxArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub input: CohortInput,
    /// Biomarker term, e.g. `fad/decade`, `risk_scaled/0.1`, `risk_quartiles`.
    #[arg(long)]
    pub biomarker: Option<String>,
    /// Adjustment terms (repeat or comma-separate), e.g. `age/decade,sex`.
    #[arg(long = "adjust", value_delimiter = ',')]
    pub adjust: Vec<String>,
    /// Keep only adjusters significant in univariate fits.
    #[arg(long)]
    pub screen: bool,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// efron or breslow.
    #[arg(long)]
    pub ties: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CoxParams {
    biomarker: String,
    adjusters: Vec<String>,
    screen: bool,
    alpha: f64,
    ties: Ties,
}

impl Default for CoxParams {
    fn default() -> Self {
        CoxParams { biomarker: String::new(), adjusters: vec![], screen: false, alpha: 0.05, ties: Ties::Efron }
    }
}

fn parse_ties(s: &str) -> Result<Ties> {
    match s {
        "efron" => Ok(Ties::Efron),
        "breslow" => Ok(Ties::Breslow),
        other => Err(CoreError::UnknownName(format!("ties method {other}")).into()),
    }
}

fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        v.to_string()
    }
}

fn fit_cells(fit: &CoxFit, column: &str) -> [String; 4] {
    match fit.names.iter().position(|n| n == column) {
        Some(j) => [fmt_num(fit.hr[j]), fmt_num(fit.ci95[j].0), fmt_num(fit.ci95[j].1), format!("{:.6e}", fit.wald_p[j])],
        None => Default::default(),
    }
}

pub fn cox(args: CoxArgs) -> Result<()> {
    let mut inputs = Inputs::default();
    let mut bundle = Bundle::default();
    let mut p: CoxParams = load_params(&args.common.config, &mut inputs)?;
    if let Some(b) = args.biomarker {
        p.biomarker = b;
    }
    if !args.adjust.is_empty() {
        p.adjusters = args.adjust;
    }
    p.screen |= args.screen;
    if let Some(a) = args.alpha {
        p.alpha = a;
    }
    if let Some(t) = &args.ties {
        p.ties = parse_ties(t)?;
    }
    if p.biomarker.is_empty() {
        return Err(CoreError::UnknownName("no biomarker term given (--biomarker)".into()).into());
    }
    let cohort = load_cohort(&args.input, &mut inputs, &mut bundle)?;
    let biomarker = parse_term(&p.biomarker, &cohort).map_err(|e| CoreError::UnknownName(e.to_string()))?;
    let adjusters = p
        .adjusters
        .iter()
        .map(|s| parse_term(s, &cohort))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| CoreError::UnknownName(e.to_string()))?;

    let times = cohort.times();
    let events = cohort.events();
    let mut univariate = Vec::new();
    let mut rows: Vec<(String, String, String, Option<CoxFit>)> = Vec::new();
    for term in std::iter::once(&biomarker).chain(&adjusters) {
        let result = build_design(&cohort, std::slice::from_ref(term)).and_then(|d| fit_cox(&d, &times, &events, p.ties).map(|f| (d, f)));
        match result {
            Ok((design, fit)) => {
                for c in &design.columns {
                    rows.push((c.name.clone(), c.term.clone(), c.unit.clone(), Some(fit.clone())));
                }
                univariate.push(json!({ "term": term.name(), "fit": fit }));
            }
            Err(e) => {
                rows.push((term.name().to_string(), term.name().to_string(), String::new(), None));
                univariate.push(json!({ "term": term.name(), "error": e.to_string() }));
            }
        }
    }

    let (retained, screen) = if p.screen {
        let outcome = univariate_screen(&cohort, &adjusters, p.alpha, p.ties);
        (outcome.retained, Some(outcome.entries))
    } else {
        (adjusters.clone(), None)
    };
    let adjusted = fit_adjusted(&cohort, &biomarker, &retained, p.ties)?;
    let fit = &adjusted.fit;
    if !fit.converged {
        return Err(AnalysisFailure(format!("multivariable Cox fit did not converge after {} iterations", fit.iterations)).into());
    }
    if fit.separation {
        bundle.notes.push("possible separation: at least one coefficient diverges".into());
    }

    let mut table = String::from(
        "covariate,term,unit,univariate_hr,univariate_ci_low,univariate_ci_high,univariate_p,multivariable_hr,multivariable_ci_low,multivariable_ci_high,multivariable_p\n",
    );
    for (name, term, unit, uni) in &rows {
        let u = uni.as_ref().map(|f| fit_cells(f, name)).unwrap_or_default();
        let m = fit_cells(fit, name);
        let cells: Vec<String> = [name.clone(), term.clone(), unit.clone()].into_iter().chain(u).chain(m).map(|c| csv_cell(&c)).collect();
        table.push_str(&cells.join(","));
        table.push('\n');
    }
    bundle.add("table.csv", table.into_bytes());
    let retained_names: Vec<&str> = retained.iter().map(|t| t.name()).collect();
    bundle.add_json(
        "fit.json",
        &json!({
            "biomarker": biomarker.name(),
            "adjusters": p.adjusters,
            "retained_adjusters": retained_names,
            "screening": screen,
            "univariate": univariate,
            "multivariable": fit,
        }),
    )?;
    let b = adjusted.biomarker_columns.clone();
    bundle.summary = json!({
        "biomarker_columns": fit.names[b.clone()],
        "biomarker_hr": fit.hr[b.clone()],
        "biomarker_p": fit.wald_p[b],
        "aic": fit.aic,
        "n_used": fit.n_used,
    });
    bundle.commit(&args.common.out, "cox", args.common.seed, serde_json::to_value(&p)?, inputs)?;
    Ok(())
}

fn csv_cell(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

// ---------------------------------------------------------------- km

#[derive(Args, Debug)]
pub struct KmArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub input: CohortInput,
    /// Stratification scheme: fad_bands, fad_ge5, fad_le_minus5,
    /// risk_quartiles, risk_deciles or risk_half.
    #[arg(long)]
    pub group_by: Option<String>,
    /// Comma-separated days at which survival is reported.
    #[arg(long, value_delimiter = ',')]
    pub horizons: Option<Vec<f64>>,
    /// Comma-separated upper edges (days) of early-mortality buckets.
    #[arg(long, value_delimiter = ',')]
    pub buckets: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct KmParams {
    group_by: Option<String>,
    horizons: Vec<f64>,
    buckets: Vec<f64>,
}

impl Default for KmParams {
    fn default() -> Self {
        KmParams { group_by: None, horizons: vec![365.0, 730.0, 1826.0], buckets: DEFAULT_MORTALITY_BUCKETS.to_vec() }
    }
}

/// ASCII file-name fragment for a stratum label.
pub fn slug(label: &str) -> String {
    let mut out = String::new();
    for ch in label.chars() {
        match ch {
            'a'..='z' | 'A'..='Z' | '0'..='9' | '.' | '-' => out.push(ch),
            '≥' => out.push_str("ge"),
            '≤' => out.push_str("le"),
            '<' => out.push_str("lt"),
            '>' => out.push_str("gt"),
            '–' => out.push_str("to"),
            _ => out.push('_'),
        }
    }
    out
}

pub fn km(args: KmArgs) -> Result<()> {
    let mut inputs = Inputs::default();
    let mut bundle = Bundle::default();
    let mut p: KmParams = load_params(&args.common.config, &mut inputs)?;
    if args.group_by.is_some() {
        p.group_by = args.group_by;
    }
    if let Some(h) = args.horizons {
        p.horizons = h;
    }
    if let Some(b) = args.buckets {
        p.buckets = b;
    }
    let scheme = p.group_by.as_deref().map(Scheme::parse).transpose()?;
    let cohort = load_cohort(&args.input, &mut inputs, &mut bundle)?;
    let obs = cohort.observations();

    let (labels, levels): (Vec<Option<String>>, Vec<String>) = match scheme {
        Some(s) => {
            let strata = stratify(&scheme_column(&cohort, s), s)?;
            let mut buf = Vec::new();
            let ids: Vec<String> = cohort.records().iter().map(|r| r.id.clone()).collect();
            strata.write_csv(&ids, &mut buf)?;
            bundle.add("strata.csv", buf);
            (strata.labels, strata.levels)
        }
        None => (vec![Some("all".to_string()); cohort.len()], vec!["all".to_string()]),
    };
    let missing = labels.iter().filter(|l| l.is_none()).count();
    if missing > 0 {
        bundle.notes.push(format!("{missing} subjects without the stratifying biomarker were excluded"));
    }

    let mut groups: Vec<(String, Vec<Observation>)> = Vec::new();
    for level in &levels {
        let members: Vec<Observation> = obs.iter().zip(&labels).filter(|(_, l)| l.as_deref() == Some(level.as_str())).map(|(o, _)| *o).collect();
        if members.is_empty() {
            bundle.notes.push(format!("stratum `{level}` is empty"));
        } else {
            groups.push((level.clone(), members));
        }
    }
    if groups.is_empty() {
        return Err(AnalysisFailure("no subject falls in any stratum".into()).into());
    }

    let mut strata_summary = Vec::new();
    for (k, (level, members)) in groups.iter().enumerate() {
        let curve = kaplan_meier(members)?;
        let mut buf = Vec::new();
        curve.write_csv(&mut buf)?;
        let file = format!("curve_{k}_{}.csv", slug(level));
        bundle.add(file.clone(), buf);
        let estimates: Vec<Value> = p
            .horizons
            .iter()
            .map(|&t| match km_estimate_at(&curve, t) {
                Ok(e) => json!({ "time": t, "estimate": e }),
                Err(err) => json!({ "time": t, "error": err.to_string() }),
            })
            .collect();
        strata_summary.push(json!({
            "stratum": level,
            "file": file,
            "n": members.len(),
            "events": members.iter().filter(|o| o.event).count(),
            "median_survival": curve.median(),
            "median_followup": reverse_km_median_followup(members).ok(),
            "estimates": estimates,
        }));
    }

    let logrank = if groups.len() < 2 {
        bundle.notes.push("single stratum: log-rank test skipped".into());
        json!({ "skipped": "fewer than two nonempty strata" })
    } else {
        let all: Vec<&[Observation]> = groups.iter().map(|(_, m)| m.as_slice()).collect();
        let global = log_rank(&all)?;
        let mut pairwise = Vec::new();
        for a in 0..groups.len() {
            for b in a + 1..groups.len() {
                let r = log_rank(&[&groups[a].1, &groups[b].1])?;
                pairwise.push(json!({ "a": groups[a].0, "b": groups[b].0, "result": r }));
            }
        }
        json!({ "global": global, "pairwise": pairwise })
    };
    bundle.summary = json!({ "strata": groups.len(), "global_p": logrank["global"]["p_value"] });
    bundle.add_json("logrank.json", &logrank)?;

    let lab: Vec<String> = labels.iter().map(|l| l.clone().unwrap_or_default()).collect();
    let names: Vec<String> = groups.iter().map(|(l, _)| l.clone()).collect();
    let mortality = early_mortality_table(&obs, &lab, &names, &p.buckets)?;
    bundle.add_json(
        "summary.json",
        &json!({
            "group_by": p.group_by,
            "excluded_missing": missing,
            "strata": strata_summary,
            "early_mortality": mortality,
        }),
    )?;
    bundle.commit(&args.common.out, "km", args.common.seed, serde_json::to_value(&p)?, inputs)?;
    Ok(())
}

// ---------------------------------------------------------------- balance

#[derive(Args, Debug)]
pub struct BalanceArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub input: CohortInput,
    /// bins (resample every 5-year bin to a target size) or factors.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub target: Option<usize>,
    #[arg(long)]
    pub bin_width: Option<f64>,
}

pub fn balance(args: BalanceArgs) -> Result<()> {
    let mut inputs = Inputs::default();
    let mut bundle = Bundle::default();
    let mut plan: BalancePlan = load_params(&args.common.config, &mut inputs)?;
    if let Some(m) = &args.mode {
        plan.mode = match m.as_str() {
            "bins" | "bin_to_size" => BalanceMode::BinToSize,
            "factors" | "factor_table" => BalanceMode::FactorTable,
            other => return Err(CoreError::UnknownName(format!("balance mode {other}")).into()),
        };
    }
    if let Some(t) = args.target {
        plan.target_bin_size = t;
    }
    if let Some(w) = args.bin_width {
        plan.bin_width = w;
    }
    if let Some(s) = args.common.seed {
        plan.seed = s;
    }
    let cohort = load_cohort(&args.input, &mut inputs, &mut bundle)?;
    let ages = cohort.chrono_ages();
    let idx = balance_indices(&ages, &plan)?;
    let mut out = String::from("position,index,id,chrono_age\n");
    for (pos, &i) in idx.iter().enumerate() {
        out.push_str(&format!("{pos},{i},{},{}\n", csv_cell(&cohort.records()[i].id), ages[i]));
    }
    bundle.add("balanced.csv", out.into_bytes());
    let counts: BTreeMap<String, usize> = bin_counts(&ages, &idx, plan.bin_width).into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    bundle.summary = json!({ "n_in": ages.len(), "n_out": idx.len(), "bin_counts": counts });
    bundle.commit(&args.common.out, "balance", Some(plan.seed), serde_json::to_value(&plan)?, inputs)?;
    Ok(())
}


// ---------------------------------------------------------------- attention

#[derive(Args, Debug)]
pub struct AttentionArgs {
    #[command(flatten)]
    pub common: Common,
    /// Attention grid CSV (square, headerless); repeat for several images.
    #[arg(long = "grid", required = true)]
    pub grids: Vec<PathBuf>,
    /// Mesh OBJ (`v x y z` and triangular `f` lines).
    #[arg(long)]
    pub mesh: PathBuf,
    /// Landmark CSV `vertex_index,x,y` in image pixels.
    #[arg(long)]
    pub landmarks: PathBuf,
    /// Image size the grids are upsampled to.
    #[arg(long)]
    pub size: Option<usize>,
    /// Skip the midpoint subdivision step.
    #[arg(long)]
    pub no_subdivide: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AttentionParams {
    size: usize,
    subdivide: bool,
    colormap: String,
}

impl Default for AttentionParams {
    fn default() -> Self {
        AttentionParams { size: DEFAULT_IMAGE_SIZE, subdivide: true, colormap: COLORMAP.into() }
    }
}

fn read_text(inputs: &mut Inputs, role: &str, path: &Path) -> Result<String> {
    String::from_utf8(inputs.read(role, path)?).map_err(|_| anyhow!("{} is not UTF-8 text", path.display()))
}

pub fn attention(args: AttentionArgs) -> Result<()> {
    let mut inputs = Inputs::default();
    let mut bundle = Bundle::default();
    let mut p: AttentionParams = load_params(&args.common.config, &mut inputs)?;
    if let Some(s) = args.size {
        p.size = s;
    }
    if args.no_subdivide {
        p.subdivide = false;
    }
    let obj = read_obj(&read_text(&mut inputs, "mesh", &args.mesh)?)?;
    let landmarks = read_landmarks_csv(&read_text(&mut inputs, "landmarks", &args.landmarks)?, obj.vertices.len())?;
    let mut mesh = FaceMesh::new(obj.vertices, obj.faces, landmarks)?;
    if p.subdivide {
        let s = subdivide_once(&mesh);
        if !s.degenerate.is_empty() {
            bundle.notes.push(format!("zero-area triangles subdivided: {:?}", s.degenerate));
        }
        mesh = s.mesh;
    }
    let mut per_image = Vec::with_capacity(args.grids.len());
    for path in &args.grids {
        let grid = read_grid_csv(&read_text(&mut inputs, "grid", path)?)?;
        let map = if grid.size() == p.size { DenseMap::new(p.size, grid.values().to_vec())? } else { upsample_bilinear(&grid, p.size)? };
        per_image.push(triangle_attention(&mesh, &map)?);
    }
    let avg = average_over_dataset(&per_image)?;
    bundle.add("attention.obj", export_obj(&mesh, &avg, &p.colormap)?);
    let mut scores = String::from("triangle,score\n");
    for (k, s) in avg.scores.iter().enumerate() {
        scores.push_str(&format!("{k},{s}\n"));
    }
    bundle.add("triangle_scores.csv", scores.into_bytes());
    bundle.summary = json!({
        "images": avg.image_count,
        "triangles": mesh.triangles.len(),
        "vertices": mesh.vertices.len(),
        "centroid_fallback_triangles": avg.fallback,
        "colormap": p.colormap,
    });
    bundle.commit(&args.common.out, "attention", args.common.seed, serde_json::to_value(&p)?, inputs)?;
    Ok(())
}
