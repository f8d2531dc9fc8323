//! Patient records, cohorts, CSV ingestion and covariate standardization.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: {message}")]
    ParseFailure {
        row: usize,
        column: String,
        message: String,
    },
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("cohort has a single treatment arm (all treatment = {0})")]
    SingleArmCohort(u8),
    #[error("duplicate patient id `{0}`")]
    DuplicateId(String),
    #[error("record `{id}` has {found} covariates, expected {expected}")]
    CovariateLength {
        id: String,
        found: usize,
        expected: usize,
    },
    #[error("record `{id}`: {message}")]
    InvalidRecord { id: String, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    pub time: f64,
    pub event: bool,
    pub treatment: bool,
    pub covariates: Vec<f64>,
    pub external_score: Option<f64>,
    pub center: Option<String>,
}

/// Per-feature location and scale recorded by [`standardize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// Features with zero variance; these are mapped to all zeros.
    pub constant: Vec<bool>,
}

impl Standardization {
    pub fn has_constant_features(&self) -> bool {
        self.constant.iter().any(|&c| c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    records: Vec<PatientRecord>,
    feature_names: Vec<String>,
    standardization: Option<Standardization>,
}

impl Cohort {
    /// Builds a cohort, checking the per-record invariants (finite nonnegative
    /// time, unique ids, consistent covariate length).
    pub fn new(records: Vec<PatientRecord>, feature_names: Vec<String>) -> Result<Self, DataError> {
        if records.is_empty() {
            return Err(DataError::EmptyCohort);
        }
        let d = feature_names.len();
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(DataError::DuplicateId(r.id.clone()));
            }
            if !(r.time.is_finite() && r.time >= 0.0) {
                return Err(DataError::InvalidRecord {
                    id: r.id.clone(),
                    message: format!("time must be finite and >= 0, got {}", r.time),
                });
            }
            if r.covariates.len() != d {
                return Err(DataError::CovariateLength {
                    id: r.id.clone(),
                    found: r.covariates.len(),
                    expected: d,
                });
            }
            if let Some(bad) = r.covariates.iter().find(|v| !v.is_finite()) {
                return Err(DataError::InvalidRecord {
                    id: r.id.clone(),
                    message: format!("non-finite covariate {bad}"),
                });
            }
        }
        Ok(Self {
            records,
            feature_names,
            standardization: None,
        })
    }

    pub fn records(&self) -> &[PatientRecord] {
        &self.records
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.event).collect()
    }

    pub fn treatment(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.treatment).collect()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.id.as_str()).collect()
    }

    pub fn covariate_rows(&self) -> Vec<Vec<f64>> {
        self.records.iter().map(|r| r.covariates.clone()).collect()
    }

    pub fn n_treated(&self) -> usize {
        self.records.iter().filter(|r| r.treatment).count()
    }

    /// Fails with [`DataError::SingleArmCohort`] unless both arms are present.
    pub fn require_two_arms(&self) -> Result<(), DataError> {
        let treated = self.n_treated();
        if treated == 0 {
            Err(DataError::SingleArmCohort(0))
        } else if treated == self.records.len() {
            Err(DataError::SingleArmCohort(1))
        } else {
            Ok(())
        }
    }

    /// Sub-cohort with the given record indices, in that order. The
    /// standardization parameters (if any) are carried over unchanged.
    pub fn subset(&self, indices: &[usize]) -> Result<Self, DataError> {
        let records = indices.iter().map(|&i| self.records[i].clone()).collect();
        let mut sub = Self::new(records, self.feature_names.clone())?;
        sub.standardization = self.standardization.clone();
        Ok(sub)
    }

    /// Distinct center labels in first-appearance order.
    pub fn centers(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.records {
            if let Some(c) = &r.center {
                if !out.contains(c) {
                    out.push(c.clone());
                }
            }
        }
        out
    }

    /// Indices of records belonging to `center`.
    pub fn center_indices(&self, center: &str) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.center.as_deref() == Some(center))
            .map(|(i, _)| i)
            .collect()
    }

    /// Returns a copy where the treatment flag is replaced by `flags`.
    pub fn with_treatment(&self, flags: &[bool]) -> Self {
        assert_eq!(flags.len(), self.records.len());
        let mut out = self.clone();
        for (r, &t) in out.records.iter_mut().zip(flags) {
            r.treatment = t;
        }
        out
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let has_score = self.records.iter().any(|r| r.external_score.is_some());
        let has_center = self.records.iter().any(|r| r.center.is_some());
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["id", "time", "event", "treatment"];
        if has_score {
            header.push("external_score");
        }
        if has_center {
            header.push("center");
        }
        header.extend(self.feature_names.iter().map(String::as_str));
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![
                r.id.clone(),
                r.time.to_string(),
                u8::from(r.event).to_string(),
                u8::from(r.treatment).to_string(),
            ];
            if has_score {
                row.push(r.external_score.map(|s| s.to_string()).unwrap_or_default());
            }
            if has_center {
                row.push(r.center.clone().unwrap_or_default());
            }
            row.extend(r.covariates.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        self.write_csv(File::create(path)?)
    }
}

/// Maps the logical cohort fields onto CSV column names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schema {
    pub id: String,
    pub time: String,
    pub event: String,
    pub treatment: String,
    pub external_score: Option<String>,
    pub center: Option<String>,
    /// Explicit covariate columns. `None` means every remaining column.
    pub covariates: Option<Vec<String>>,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            id: "id".into(),
            time: "time".into(),
            event: "event".into(),
            treatment: "treatment".into(),
            external_score: Some("external_score".into()),
            center: Some("center".into()),
            covariates: None,
        }
    }
}

impl Schema {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| DataError::ParseFailure {
            row: 0,
            column: "<schema>".into(),
            message: e.to_string(),
        })
    }
}

pub fn load_cohort(path: impl AsRef<Path>, schema: &Schema) -> Result<Cohort, DataError> {
    read_cohort(File::open(path)?, schema)
}

/// Parses a cohort from any CSV source. Row numbers in errors are 1-based
/// data rows (the header is row 0).
pub fn read_cohort<R: Read>(reader: R, schema: &Schema) -> Result<Cohort, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let position: BTreeMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let col = |name: &str| -> Result<usize, DataError> {
        position
            .get(name)
            .copied()
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let id_col = col(&schema.id)?;
    let time_col = col(&schema.time)?;
    let event_col = col(&schema.event)?;
    let treat_col = col(&schema.treatment)?;
    // Optional columns are only used when present in the file.
    let score_col = schema
        .external_score
        .as_deref()
        .and_then(|c| position.get(c).copied());
    let center_col = schema
        .center
        .as_deref()
        .and_then(|c| position.get(c).copied());

    let reserved: Vec<usize> = [
        Some(id_col),
        Some(time_col),
        Some(event_col),
        Some(treat_col),
        score_col,
        center_col,
    ]
    .into_iter()
    .flatten()
    .collect();
    let cov_cols: Vec<usize> = match &schema.covariates {
        Some(names) => names.iter().map(|n| col(n)).collect::<Result<_, _>>()?,
        None => (0..headers.len())
            .filter(|i| !reserved.contains(i))
            .collect(),
    };
    let feature_names: Vec<String> = cov_cols.iter().map(|&i| headers[i].to_string()).collect();

    let mut records = Vec::new();
    for (k, row) in rdr.records().enumerate() {
        let row = row?;
        let rownum = k + 1;
        let cell = |i: usize| row.get(i).unwrap_or("");
        let fail = |i: usize, message: String| DataError::ParseFailure {
            row: rownum,
            column: headers[i].to_string(),
            message,
        };
        let real = |i: usize| -> Result<f64, DataError> {
            let s = cell(i);
            if s.is_empty() {
                return Err(fail(i, "missing value".into()));
            }
            s.parse::<f64>()
                .map_err(|e| fail(i, format!("`{s}` is not a number ({e})")))
        };
        let flag = |i: usize| -> Result<bool, DataError> {
            let v = real(i)?;
            if v == 0.0 {
                Ok(false)
            } else if v == 1.0 {
                Ok(true)
            } else {
                Err(fail(i, format!("expected 0 or 1, got `{}`", cell(i))))
            }
        };

        let id = cell(id_col).to_string();
        if id.is_empty() {
            return Err(fail(id_col, "missing id".into()));
        }
        let time = real(time_col)?;
        if !(time.is_finite() && time >= 0.0) {
            return Err(fail(
                time_col,
                format!("time must be finite and >= 0, got {time}"),
            ));
        }
        let event = flag(event_col)?;
        let treatment = flag(treat_col)?;
        let covariates = cov_cols
            .iter()
            .map(|&i| real(i))
            .collect::<Result<Vec<_>, _>>()?;
        let external_score = match score_col {
            Some(i) if !cell(i).is_empty() => Some(real(i)?),
            _ => None,
        };
        let center = center_col
            .map(|i| cell(i).to_string())
            .filter(|c| !c.is_empty());
        records.push(PatientRecord {
            id,
            time,
            event,
            treatment,
            covariates,
            external_score,
            center,
        });
    }
    let cohort = Cohort::new(records, feature_names)?;
    cohort.require_two_arms()?;
    Ok(cohort)
}

/// Mean and population (divide-by-n) standard deviation of each column.
pub fn column_moments(rows: &[Vec<f64>], d: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut means = vec![0.0; d];
    for r in rows {
        for (m, v) in means.iter_mut().zip(r) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut sds = vec![0.0; d];
    for r in rows {
        for j in 0..d {
            sds[j] += (r[j] - means[j]).powi(2);
        }
    }
    sds.iter_mut().for_each(|s| *s = (*s / n).sqrt());
    (means, sds)
}

/// Relative scale below which a feature is treated as constant.
const CONSTANT_TOL: f64 = 1e-12;

fn fit_standardization(rows: &[Vec<f64>], d: usize) -> Standardization {
    let (means, sds) = column_moments(rows, d);
    let constant = means
        .iter()
        .zip(&sds)
        .map(|(m, s)| *s <= CONSTANT_TOL * m.abs().max(1.0))
        .collect();
    Standardization {
        means,
        sds,
        constant,
    }
}

fn apply_standardization(value: f64, j: usize, st: &Standardization) -> f64 {
    if st.constant[j] {
        0.0
    } else {
        (value - st.means[j]) / st.sds[j]
    }
}

/// Zero-mean, unit population-SD transform of every covariate over the whole
/// cohort. Constant features become all-zero and are flagged in
/// [`Standardization::constant`].
pub fn standardize(cohort: &Cohort) -> Cohort {
    let rows = cohort.covariate_rows();
    let st = fit_standardization(&rows, cohort.n_features());
    let mut out = cohort.clone();
    for r in &mut out.records {
        for (j, v) in r.covariates.iter_mut().enumerate() {
            *v = apply_standardization(*v, j, &st);
        }
    }
    out.standardization = Some(st);
    out
}

/// Standardizes each center separately. Records without a center label are
/// pooled into one group. The recorded parameters are those of the pooled
/// cohort after transformation.
pub fn standardize_per_center(cohort: &Cohort) -> Cohort {
    let mut groups: BTreeMap<Option<String>, Vec<usize>> = BTreeMap::new();
    for (i, r) in cohort.records.iter().enumerate() {
        groups.entry(r.center.clone()).or_default().push(i);
    }
    let mut out = cohort.clone();
    let mut any_constant = vec![false; cohort.n_features()];
    for idx in groups.values() {
        let rows: Vec<Vec<f64>> = idx
            .iter()
            .map(|&i| cohort.records[i].covariates.clone())
            .collect();
        let st = fit_standardization(&rows, cohort.n_features());
        for (flag, c) in any_constant.iter_mut().zip(&st.constant) {
            *flag |= *c;
        }
        for &i in idx {
            for (j, v) in out.records[i].covariates.iter_mut().enumerate() {
                *v = apply_standardization(*v, j, &st);
            }
        }
    }
    let (means, sds) = column_moments(&out.covariate_rows(), cohort.n_features());
    out.standardization = Some(Standardization {
        means,
        sds,
        constant: any_constant,
    });
    out
}

/// Standardizes a single column of values (population SD). Constant input maps to zeros.
pub fn standardize_column(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    if values.is_empty() {
        return Vec::new();
    }
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd <= CONSTANT_TOL * mean.abs().max(1.0) {
        vec![0.0; values.len()]
    } else {
        values.iter().map(|v| (v - mean) / sd).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_cohort(text: &str) -> Result<Cohort, DataError> {
        read_cohort(text.as_bytes(), &Schema::default())
    }

    #[test]
    fn parses_small_csv() {
        let c = csv_cohort("id,time,event,treatment,x1\na,1.5,1,0,0.2\nb,2,0,1,0.4\nc,3,1,1,-1\n")
            .unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.feature_names(), ["x1"]);
        assert_eq!(c.records()[2].covariates, vec![-1.0]);
        assert!(c.records()[0].event);
        assert!(c.records()[1].treatment);
    }

    #[test]
    fn rejects_bad_event_value() {
        let err = csv_cohort("id,time,event,treatment,x1\na,1,1,0,0\nb,2,2,1,0\n").unwrap_err();
        match err {
            DataError::ParseFailure { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "event");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_single_arm() {
        let err = csv_cohort("id,time,event,treatment,x1\na,1,1,1,0\nb,2,0,1,0\n").unwrap_err();
        assert!(matches!(err, DataError::SingleArmCohort(1)));
    }

    #[test]
    fn rejects_missing_column_and_cells() {
        let err = csv_cohort("id,time,event,x1\na,1,1,0\n").unwrap_err();
        assert!(matches!(err, DataError::MissingColumn(c) if c == "treatment"));
        let err = csv_cohort("id,time,event,treatment,x1\na,1,1,0,\nb,1,1,1,2\n").unwrap_err();
        assert!(matches!(err, DataError::ParseFailure { row: 1, .. }));
        let err = csv_cohort("id,time,event,treatment,x1\na,,1,0,1\n").unwrap_err();
        assert!(
            matches!(err, DataError::ParseFailure { row: 1, ref column, .. } if column == "time")
        );
    }

    #[test]
    fn rejects_empty_and_duplicates() {
        assert!(matches!(
            csv_cohort("id,time,event,treatment\n"),
            Err(DataError::EmptyCohort)
        ));
        let err = csv_cohort("id,time,event,treatment\na,1,1,0\na,2,1,1\n").unwrap_err();
        assert!(matches!(err, DataError::DuplicateId(_)));
    }

    #[test]
    fn optional_columns_and_remapping() {
        let schema = Schema {
            id: "pid".into(),
            time: "months".into(),
            event: "dead".into(),
            treatment: "chemo".into(),
            external_score: Some("risk".into()),
            center: Some("site".into()),
            covariates: Some(vec!["age".into()]),
        };
        let text =
            "pid,months,dead,chemo,risk,site,age,ignored\n1,10,1,0,0.3,A,60,9\n2,12,0,1,,B,55,9\n";
        let c = read_cohort(text.as_bytes(), &schema).unwrap();
        assert_eq!(c.feature_names(), ["age"]);
        assert_eq!(c.records()[0].external_score, Some(0.3));
        assert_eq!(c.records()[1].external_score, None);
        assert_eq!(c.centers(), vec!["A".to_string(), "B".to_string()]);
    }

    #[test]
    fn standardize_population_sd() {
        let recs = (0..3)
            .map(|i| PatientRecord {
                id: i.to_string(),
                time: 1.0,
                event: true,
                treatment: i == 0,
                covariates: vec![(i + 1) as f64, 5.0],
                external_score: None,
                center: None,
            })
            .collect();
        let c = Cohort::new(recs, vec!["a".into(), "b".into()]).unwrap();
        let s = standardize(&c);
        let expect = 1.0 / (2.0f64 / 3.0).sqrt();
        let col: Vec<f64> = s.records().iter().map(|r| r.covariates[0]).collect();
        assert!(
            (col[0] + expect).abs() < 1e-12
                && col[1].abs() < 1e-12
                && (col[2] - expect).abs() < 1e-12
        );
        assert!((expect - 1.2247).abs() < 1e-4);
        let st = s.standardization().unwrap();
        assert_eq!(st.constant, vec![false, true]);
        assert!(st.has_constant_features());
        assert!(s.records().iter().all(|r| r.covariates[1] == 0.0));
    }

    #[test]
    fn csv_round_trip() {
        let text = "id,time,event,treatment,external_score,center,x1,x2\na,1.25,1,0,0.1,c1,0.2,3\nb,2,0,1,0.7,c2,0.30000000000000004,-1e-7\n";
        let c = csv_cohort(text).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let back = csv_cohort(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(c, back);
    }
}
