//! Subject records, cohort container, delimited-text ingestion and validation.
//!
//! Times are stored in days. Categorical fields that are empty or unrecognised
//! become `Unknown`; such rows stay in the cohort and are only excluded from
//! the Cox designs that use that field.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::survival::Observation;

pub const DAYS_PER_YEAR: f64 = 365.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sex {
    Female,
    Male,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Race {
    White,
    Black,
    Asian,
    Hispanic,
    Other,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intent {
    Curative,
    OligometAblation,
    Palliative,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YearGroup {
    Pre2016,
    Post2016,
    Unknown,
}

impl Sex {
    pub fn parse(s: &str) -> Self {
        match s.trim().to_ascii_lowercase().as_str() {
            "f" | "female" => Sex::Female,
            "m" | "male" => Sex::Male,
            _ => Sex::Unknown,
        }
    }
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Female => "female",
            Sex::Male => "male",
            Sex::Unknown => "unknown",
        }
    }
    pub const LEVELS: [Sex; 2] = [Sex::Female, Sex::Male];
}

impl Race {
    pub fn parse(s: &str) -> Self {
        match s.trim().to_ascii_lowercase().as_str() {
            "white" => Race::White,
            "black" => Race::Black,
            "asian" => Race::Asian,
            "hispanic" => Race::Hispanic,
            "other" => Race::Other,
            _ => Race::Unknown,
        }
    }
    pub fn as_str(self) -> &'static str {
        match self {
            Race::White => "white",
            Race::Black => "black",
            Race::Asian => "asian",
            Race::Hispanic => "hispanic",
            Race::Other => "other",
            Race::Unknown => "unknown",
        }
    }
    pub const LEVELS: [Race; 5] = [Race::White, Race::Black, Race::Asian, Race::Hispanic, Race::Other];
}

impl Intent {
    pub fn parse(s: &str) -> Self {
        match s.trim().to_ascii_lowercase().as_str() {
            "curative" => Intent::Curative,
            "oligomet_ablation" | "oligometastatic" | "ablation" => Intent::OligometAblation,
            "palliative" => Intent::Palliative,
            _ => Intent::Unknown,
        }
    }
    pub fn as_str(self) -> &'static str {
        match self {
            Intent::Curative => "curative",
            Intent::OligometAblation => "oligomet_ablation",
            Intent::Palliative => "palliative",
            Intent::Unknown => "unknown",
        }
    }
    pub const LEVELS: [Intent; 3] = [Intent::Curative, Intent::OligometAblation, Intent::Palliative];
}

impl YearGroup {
    pub fn parse(s: &str) -> Self {
        match s.trim().to_ascii_lowercase().as_str() {
            "pre2016" => YearGroup::Pre2016,
            "post2016" => YearGroup::Post2016,
            _ => YearGroup::Unknown,
        }
    }
    pub fn as_str(self) -> &'static str {
        match self {
            YearGroup::Pre2016 => "pre2016",
            YearGroup::Post2016 => "post2016",
            YearGroup::Unknown => "unknown",
        }
    }
    pub const LEVELS: [YearGroup; 2] = [YearGroup::Pre2016, YearGroup::Post2016];
}

pub const UNKNOWN: &str = "unknown";

fn category(s: &str) -> String {
    let t = s.trim();
    if t.is_empty() {
        UNKNOWN.to_string()
    } else {
        t.to_string()
    }
}

/// One subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    /// Survival or censoring time in days.
    pub time: f64,
    /// `true` when death was observed.
    pub event: bool,
    pub chrono_age: f64,
    pub sex: Sex,
    pub race: Race,
    pub cancer_site: String,
    pub intent: Intent,
    pub year_group: YearGroup,
    pub technique: String,
    pub embedding: Option<Vec<f64>>,
    pub predicted_age: Option<f64>,
    pub risk_raw: Option<f64>,
    pub risk_scaled: Option<f64>,
    /// Additional numeric columns carried through from the input file.
    pub extras: BTreeMap<String, f64>,
}

impl PatientRecord {
    /// A record with every optional field unset and categories `unknown`.
    pub fn new(id: impl Into<String>, time: f64, event: bool, chrono_age: f64) -> Self {
        PatientRecord {
            id: id.into(),
            time,
            event,
            chrono_age,
            sex: Sex::Unknown,
            race: Race::Unknown,
            cancer_site: UNKNOWN.to_string(),
            intent: Intent::Unknown,
            year_group: YearGroup::Unknown,
            technique: UNKNOWN.to_string(),
            embedding: None,
            predicted_age: None,
            risk_raw: None,
            risk_scaled: None,
            extras: BTreeMap::new(),
        }
    }

    /// Predicted minus chronological age, when a prediction is present.
    pub fn fad(&self) -> Option<f64> {
        self.predicted_age.map(|p| p - self.chrono_age)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    records: Vec<PatientRecord>,
    embedding_dim: Option<usize>,
}

impl Cohort {
    /// Builds a cohort; fails only when present embeddings disagree in length.
    pub fn new(records: Vec<PatientRecord>) -> Result<Self> {
        let mut dim = None;
        for r in &records {
            if let Some(e) = &r.embedding {
                match dim {
                    None => dim = Some(e.len()),
                    Some(d) if d != e.len() => {
                        return Err(Error::InvalidInput(format!(
                            "embedding length {} for `{}` differs from cohort dimension {}",
                            e.len(),
                            r.id,
                            d
                        )))
                    }
                    _ => {}
                }
            }
        }
        if dim == Some(0) {
            return Err(Error::InvalidInput("zero-length embeddings".into()));
        }
        Ok(Cohort { records, embedding_dim: dim })
    }

    pub fn records(&self) -> &[PatientRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<PatientRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn embedding_dim(&self) -> Option<usize> {
        self.embedding_dim
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.event).collect()
    }

    pub fn observations(&self) -> Vec<Observation> {
        self.records.iter().map(|r| Observation::new(r.time, r.event)).collect()
    }

    pub fn chrono_ages(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.chrono_age).collect()
    }

    /// Embedding rows, or `None` when any record lacks one.
    pub fn embeddings(&self) -> Option<Vec<Vec<f64>>> {
        self.records.iter().map(|r| r.embedding.clone()).collect()
    }

    /// Sorted names of all extra numeric columns.
    pub fn extra_names(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.records.iter().flat_map(|r| r.extras.keys()).collect();
        set.into_iter().cloned().collect()
    }

    /// Replaces embeddings row by row (e.g. from a binary sidecar).
    pub fn with_embeddings(self, embeddings: Vec<Vec<f64>>) -> Result<Self> {
        if embeddings.len() != self.records.len() {
            return Err(Error::LengthMismatch(format!(
                "{} embeddings for {} records",
                embeddings.len(),
                self.records.len()
            )));
        }
        let records = self
            .records
            .into_iter()
            .zip(embeddings)
            .map(|(mut r, e)| {
                r.embedding = Some(e);
                r
            })
            .collect();
        Cohort::new(records)
    }

    /// A new cohort with each record transformed by `f`.
    pub fn map_records(&self, f: impl FnMut(&PatientRecord) -> PatientRecord) -> Result<Self> {
        Cohort::new(self.records.iter().map(f).collect())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeUnit {
    #[default]
    Days,
    Years,
}

/// Maps canonical column names onto the header names used in a file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    /// canonical name -> file column name; unmapped names are used verbatim.
    #[serde(default)]
    pub columns: BTreeMap<String, String>,
    #[serde(default)]
    pub time_unit: TimeUnit,
    #[serde(default = "default_embedding_prefix")]
    pub embedding_prefix: String,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
}

fn default_embedding_prefix() -> String {
    "e".to_string()
}

fn default_delimiter() -> char {
    ','
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            columns: BTreeMap::new(),
            time_unit: TimeUnit::Days,
            embedding_prefix: default_embedding_prefix(),
            delimiter: ',',
        }
    }
}

pub const CANONICAL_COLUMNS: [&str; 13] = [
    "id",
    "time",
    "event",
    "chrono_age",
    "sex",
    "race",
    "cancer_site",
    "intent",
    "year_group",
    "technique",
    "predicted_age",
    "risk",
    "risk_scaled",
];

impl Schema {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    fn column<'a>(&'a self, canonical: &'a str) -> &'a str {
        self.columns.get(canonical).map(String::as_str).unwrap_or(canonical)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DroppedRow {
    /// 1-based data row number (header excluded).
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct LoadedCohort {
    pub cohort: Cohort,
    pub dropped: Vec<DroppedRow>,
}

pub fn load_cohort(path: impl AsRef<Path>, schema: &Schema) -> Result<LoadedCohort> {
    let file = std::fs::File::open(path)?;
    read_cohort(file, schema)
}

struct Layout {
    id: Option<usize>,
    time: usize,
    event: usize,
    chrono_age: usize,
    sex: Option<usize>,
    race: Option<usize>,
    cancer_site: Option<usize>,
    intent: Option<usize>,
    year_group: Option<usize>,
    technique: Option<usize>,
    predicted_age: Option<usize>,
    risk: Option<usize>,
    risk_scaled: Option<usize>,
    embedding: Vec<usize>,
    extras: Vec<(String, usize)>,
}

fn layout(headers: &csv::StringRecord, schema: &Schema) -> Result<Layout> {
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
    let find = |canonical: &str| index.get(schema.column(canonical)).copied();
    let required = |canonical: &str| find(canonical).ok_or_else(|| Error::MissingColumn(schema.column(canonical).to_string()));

    let mut claimed: BTreeSet<usize> = BTreeSet::new();
    for c in CANONICAL_COLUMNS {
        if let Some(i) = find(c) {
            claimed.insert(i);
        }
    }

    let prefix = schema.embedding_prefix.as_str();
    let mut emb: Vec<(usize, usize)> = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if claimed.contains(&i) {
            continue;
        }
        let h = h.trim();
        if let Some(rest) = h.strip_prefix(prefix) {
            if !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()) {
                emb.push((rest.parse().map_err(|_| Error::InvalidInput(format!("bad embedding column `{h}`")))?, i));
                claimed.insert(i);
            }
        }
    }
    emb.sort();
    for (k, (d, _)) in emb.iter().enumerate() {
        if *d != k {
            return Err(Error::InvalidInput(format!(
                "embedding columns are not contiguous: expected {prefix}{k}, found {prefix}{d}"
            )));
        }
    }
    let extras = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| !claimed.contains(i))
        .map(|(i, h)| (h.trim().to_string(), i))
        .collect();

    Ok(Layout {
        id: find("id"),
        time: required("time")?,
        event: required("event")?,
        chrono_age: required("chrono_age")?,
        sex: find("sex"),
        race: find("race"),
        cancer_site: find("cancer_site"),
        intent: find("intent"),
        year_group: find("year_group"),
        technique: find("technique"),
        predicted_age: find("predicted_age"),
        risk: find("risk"),
        risk_scaled: find("risk_scaled"),
        embedding: emb.into_iter().map(|(_, i)| i).collect(),
        extras,
    })
}

fn optional_number(row: &csv::StringRecord, col: Option<usize>, name: &str) -> std::result::Result<Option<f64>, String> {
    match col.and_then(|c| row.get(c)).map(str::trim) {
        None | Some("") => Ok(None),
        Some(s) => s.parse::<f64>().map(Some).map_err(|_| format!("non-numeric {name} `{s}`")),
    }
}

fn parse_row(row: &csv::StringRecord, lay: &Layout, schema: &Schema, row_no: usize) -> std::result::Result<PatientRecord, String> {
    let field = |c: usize| row.get(c).unwrap_or("").trim();
    let opt = |c: Option<usize>| c.map(&field).unwrap_or("");

    let raw_time = field(lay.time);
    let mut time: f64 = raw_time.parse().map_err(|_| format!("non-numeric time `{raw_time}`"))?;
    if schema.time_unit == TimeUnit::Years {
        time *= DAYS_PER_YEAR;
    }
    if !time.is_finite() || time <= 0.0 {
        return Err(format!("time must be > 0, got `{raw_time}`"));
    }
    let event = match field(lay.event).to_ascii_lowercase().as_str() {
        "1" | "true" => true,
        "0" | "false" => false,
        other => return Err(format!("event must be 0 or 1, got `{other}`")),
    };
    let raw_age = field(lay.chrono_age);
    let chrono_age: f64 = raw_age.parse().map_err(|_| format!("non-numeric chrono_age `{raw_age}`"))?;
    if !chrono_age.is_finite() || chrono_age < 0.0 {
        return Err(format!("chrono_age must be >= 0, got `{raw_age}`"));
    }

    let id = match lay.id.map(field) {
        Some(s) if !s.is_empty() => s.to_string(),
        _ => format!("row{row_no}"),
    };

    let embedding = if lay.embedding.is_empty() {
        None
    } else {
        let cells: Vec<&str> = lay.embedding.iter().map(|&c| field(c)).collect();
        if cells.iter().all(|c| c.is_empty()) {
            None
        } else {
            let v: std::result::Result<Vec<f64>, _> = cells.iter().map(|c| c.parse::<f64>()).collect();
            Some(v.map_err(|_| "incomplete or non-numeric embedding".to_string())?)
        }
    };

    let mut extras = BTreeMap::new();
    for (name, c) in &lay.extras {
        if let Ok(v) = field(*c).parse::<f64>() {
            extras.insert(name.clone(), v);
        }
    }

    Ok(PatientRecord {
        id,
        time,
        event,
        chrono_age,
        sex: Sex::parse(opt(lay.sex)),
        race: Race::parse(opt(lay.race)),
        cancer_site: category(opt(lay.cancer_site)),
        intent: Intent::parse(opt(lay.intent)),
        year_group: YearGroup::parse(opt(lay.year_group)),
        technique: category(opt(lay.technique)),
        embedding,
        predicted_age: optional_number(row, lay.predicted_age, "predicted_age")?,
        risk_raw: optional_number(row, lay.risk, "risk")?,
        risk_scaled: optional_number(row, lay.risk_scaled, "risk_scaled")?,
        extras,
    })
}

/// Reads a cohort from delimited text. Rows failing per-row checks are
/// dropped and reported; a missing mandatory column is an error.
pub fn read_cohort<R: Read>(reader: R, schema: &Schema) -> Result<LoadedCohort> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let lay = layout(&headers, schema)?;
    let mut records = Vec::new();
    let mut dropped = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        match parse_row(&row, &lay, schema, i + 1) {
            Ok(r) => records.push(r),
            Err(reason) => dropped.push(DroppedRow { row: i + 1, reason }),
        }
    }
    Ok(LoadedCohort { cohort: Cohort::new(records)?, dropped })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fmt_category(s: &str) -> &str {
    if s == UNKNOWN {
        ""
    } else {
        s
    }
}

/// Writes the canonical CSV layout (times in days). Reading the output back
/// with the default schema reproduces the cohort.
pub fn write_cohort<W: Write>(cohort: &Cohort, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let extras = cohort.extra_names();
    let dim = cohort.embedding_dim().unwrap_or(0);
    let mut header: Vec<String> = CANONICAL_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(extras.iter().cloned());
    header.extend((0..dim).map(|k| format!("e{k}")));
    w.write_record(&header)?;
    for r in cohort.records() {
        let mut row: Vec<String> = vec![
            r.id.clone(),
            r.time.to_string(),
            if r.event { "1" } else { "0" }.to_string(),
            r.chrono_age.to_string(),
            fmt_category(r.sex.as_str()).to_string(),
            fmt_category(r.race.as_str()).to_string(),
            fmt_category(&r.cancer_site).to_string(),
            fmt_category(r.intent.as_str()).to_string(),
            fmt_category(r.year_group.as_str()).to_string(),
            fmt_category(&r.technique).to_string(),
            fmt_opt(r.predicted_age),
            fmt_opt(r.risk_raw),
            fmt_opt(r.risk_scaled),
        ];
        row.extend(extras.iter().map(|n| fmt_opt(r.extras.get(n).copied())));
        match &r.embedding {
            Some(e) => row.extend(e.iter().map(|x| x.to_string())),
            None => row.extend(std::iter::repeat_n(String::new(), dim)),
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a flat row-major little-endian f32 embedding sidecar.
pub fn read_embedding_sidecar(bytes: &[u8], n: usize, dim: usize) -> Result<Vec<Vec<f64>>> {
    if bytes.len() != n * dim * 4 {
        return Err(Error::LengthMismatch(format!(
            "sidecar has {} bytes, expected {} for {n}x{dim} f32",
            bytes.len(),
            n * dim * 4
        )));
    }
    Ok(bytes
        .chunks_exact(dim * 4)
        .map(|row| {
            row.chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect()
        })
        .collect())
}

pub fn write_embedding_sidecar(embeddings: &[Vec<f64>]) -> Vec<u8> {
    embeddings
        .iter()
        .flat_map(|row| row.iter().flat_map(|&x| (x as f32).to_le_bytes()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub index: usize,
    pub id: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "record {} (`{}`): {}", self.index, self.id, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Lists invariant violations without touching the cohort.
pub fn validate(cohort: &Cohort) -> ValidationReport {
    let mut violations = Vec::new();
    let mut push = |index: usize, id: &str, message: String| {
        violations.push(Violation { index, id: id.to_string(), message })
    };
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for (i, r) in cohort.records().iter().enumerate() {
        if !(r.time.is_finite() && r.time > 0.0) {
            push(i, &r.id, format!("time {} is not > 0", r.time));
        }
        if !(r.chrono_age.is_finite() && r.chrono_age >= 0.0) {
            push(i, &r.id, format!("chrono_age {} is negative", r.chrono_age));
        }
        if let Some(s) = r.risk_scaled {
            if !(0.0..=1.0).contains(&s) {
                push(i, &r.id, format!("risk_scaled {s} outside [0, 1]"));
            }
        }
        if let Some(p) = r.predicted_age {
            if !p.is_finite() {
                push(i, &r.id, "predicted_age is not finite".to_string());
            }
        }
        if let (Some(e), Some(d)) = (&r.embedding, cohort.embedding_dim()) {
            if e.len() != d {
                push(i, &r.id, format!("embedding length {} != {d}", e.len()));
            }
        }
        if let Some(&first) = seen.get(r.id.as_str()) {
            push(i, &r.id, format!("duplicate id (first seen at record {first})"));
        } else {
            seen.insert(&r.id, i);
        }
    }
    ValidationReport { violations }
}
