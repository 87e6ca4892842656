//! Subject × test datasets: CSV ingestion, cleaning, score normalisation and
//! feature standardisation.
//!
//! CSV layout: `subject_id,test_id,score,f1..f19[,chinese,math,english]`, one
//! row per subject-test pair, raw scores on the 0–100 scale.

mod synth;

pub use synth::{generate_synthetic, GroupStructure, SynthConfig};

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BASE_FEATURES: usize = 19;
pub const EXAM_FEATURES: [&str; 3] = ["chinese", "math", "english"];
const ID_COLUMNS: [&str; 3] = ["subject_id", "test_id", "score"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("unsupported feature dimension {0} (expected 19 or 22)")]
    Dimension(usize),
    #[error("header mismatch: missing {missing:?}, unexpected {unexpected:?} (expected {expected:?}, found {found:?})")]
    Schema {
        missing: Vec<String>,
        unexpected: Vec<String>,
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("score {score} of subject {subject_id} test {test_id} is outside [0, 100]")]
    ScoreRange { subject_id: u32, test_id: u32, score: f64 },
    #[error("scores are already normalised")]
    AlreadyNormalized,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Named feature columns. The 19 base features are opaque eye-tracking
/// measures; the optional three are entrance-exam scores.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub names: Vec<String>,
}

impl FeatureSchema {
    pub fn with_dim(dim: usize) -> Result<Self, DataError> {
        let mut names: Vec<String> = (1..=BASE_FEATURES).map(|i| format!("f{i}")).collect();
        match dim {
            19 => {}
            22 => names.extend(EXAM_FEATURES.iter().map(|s| s.to_string())),
            other => return Err(DataError::Dimension(other)),
        }
        Ok(Self { names })
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn has_exam_scores(&self) -> bool {
        self.dim() == BASE_FEATURES + EXAM_FEATURES.len()
    }

    pub fn header(&self) -> Vec<String> {
        ID_COLUMNS
            .iter()
            .map(|s| s.to_string())
            .chain(self.names.iter().cloned())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: u32,
    pub test_id: u32,
    pub features: Vec<f64>,
    pub score: f64,
}

/// A CSV row that could not be turned into a record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowIssue {
    /// 1-based line number in the source file (the header is line 1).
    pub line: usize,
    pub subject_id: Option<u32>,
    pub test_id: Option<u32>,
    pub reason: String,
}

/// One line of the rejection report written by [`filter_invalid`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejection {
    pub subject_id: String,
    pub test_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: FeatureSchema,
    records: BTreeMap<(u32, u32), SubjectRecord>,
    pub flagged: Vec<RowIssue>,
    pub provenance: String,
    normalized: bool,
}

impl Dataset {
    pub fn new(schema: FeatureSchema, provenance: impl Into<String>, normalized: bool) -> Self {
        Self {
            schema,
            records: BTreeMap::new(),
            flagged: Vec::new(),
            provenance: provenance.into(),
            normalized,
        }
    }

    /// Inserts a record, returning the one it replaced.
    pub fn insert(&mut self, record: SubjectRecord) -> Option<SubjectRecord> {
        assert_eq!(record.features.len(), self.schema.dim(), "feature dimension");
        self.records.insert((record.subject_id, record.test_id), record)
    }

    pub fn get(&self, subject_id: u32, test_id: u32) -> Option<&SubjectRecord> {
        self.records.get(&(subject_id, test_id))
    }

    /// Records ordered by `(subject_id, test_id)`.
    pub fn records(&self) -> impl Iterator<Item = &SubjectRecord> {
        self.records.values()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.schema.dim()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn subject_ids(&self) -> Vec<u32> {
        let ids: BTreeSet<u32> = self.records.keys().map(|k| k.0).collect();
        ids.into_iter().collect()
    }

    pub fn test_ids(&self) -> Vec<u32> {
        let ids: BTreeSet<u32> = self.records.keys().map(|k| k.1).collect();
        ids.into_iter().collect()
    }

    /// Records of the given subjects, in dataset order.
    pub fn records_of<'a>(&'a self, subjects: &'a [u32]) -> impl Iterator<Item = &'a SubjectRecord> + 'a {
        let set: BTreeSet<u32> = subjects.iter().copied().collect();
        self.records.values().filter(move |r| set.contains(&r.subject_id))
    }

    fn map_records(&self, mut f: impl FnMut(&SubjectRecord) -> SubjectRecord) -> Self {
        Self {
            schema: self.schema.clone(),
            records: self.records.iter().map(|(k, r)| (*k, f(r))).collect(),
            flagged: self.flagged.clone(),
            provenance: self.provenance.clone(),
            normalized: self.normalized,
        }
    }

    /// Reads the CSV contract. Rows that fail to parse are kept in
    /// [`Dataset::flagged`] rather than dropped silently.
    pub fn read_csv<R: Read>(reader: R, schema: &FeatureSchema, provenance: &str) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let found: Vec<String> = rdr.headers()?.iter().map(|s| s.to_string()).collect();
        let expected = schema.header();
        if found != expected {
            return Err(DataError::Schema {
                missing: expected.iter().filter(|c| !found.contains(c)).cloned().collect(),
                unexpected: found.iter().filter(|c| !expected.contains(c)).cloned().collect(),
                expected,
                found,
            });
        }

        let mut ds = Dataset::new(schema.clone(), provenance, false);
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            let line = row.position().map_or(i + 2, |p| p.line() as usize);
            let subject_id = row.get(0).and_then(|s| s.parse::<u32>().ok());
            let test_id = row.get(1).and_then(|s| s.parse::<u32>().ok());
            let issue = |reason: String| RowIssue {
                line,
                subject_id,
                test_id,
                reason,
            };
            if row.len() != expected.len() {
                ds.flagged
                    .push(issue(format!("expected {} fields, found {}", expected.len(), row.len())));
                continue;
            }
            let (Some(s), Some(t)) = (subject_id, test_id) else {
                ds.flagged.push(issue("unparseable subject or test id".into()));
                continue;
            };
            let mut values = Vec::with_capacity(expected.len() - 2);
            let mut bad = None;
            for (col, cell) in expected.iter().zip(row.iter()).skip(2) {
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => values.push(v),
                    _ => {
                        bad = Some(format!("column {col}: {cell:?} is not a finite number"));
                        break;
                    }
                }
            }
            if let Some(reason) = bad {
                ds.flagged.push(issue(reason));
                continue;
            }
            let record = SubjectRecord {
                subject_id: s,
                test_id: t,
                score: values[0],
                features: values[1..].to_vec(),
            };
            if ds.insert(record).is_some() {
                ds.flagged.push(issue("duplicate subject/test row".into()));
            }
        }
        Ok(ds)
    }

    pub fn load(path: &Path, schema: &FeatureSchema) -> Result<Self, DataError> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file, schema, &path.display().to_string())
    }

    /// Like [`Dataset::load`], with the schema taken from the header width.
    pub fn load_detect(path: &Path) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let width = rdr.headers()?.len();
        let schema = FeatureSchema::with_dim(width.saturating_sub(ID_COLUMNS.len()))?;
        Self::load(path, &schema)
    }

    /// Keeps only the 19 base features.
    pub fn base_features_only(&self) -> Self {
        let mut out = self.map_records(|r| SubjectRecord {
            features: r.features[..BASE_FEATURES.min(r.features.len())].to_vec(),
            ..r.clone()
        });
        out.schema = FeatureSchema::with_dim(BASE_FEATURES).expect("base schema");
        out
    }

    /// Writes the CSV contract; normalised scores are written back on the
    /// 0–100 scale.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.schema.header())?;
        for r in self.records.values() {
            let score = if self.normalized { r.score * 100.0 } else { r.score };
            let mut row = vec![r.subject_id.to_string(), r.test_id.to_string(), score.to_string()];
            row.extend(r.features.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Drops every subject that has a flagged row or lacks any of the dataset's
/// tests. Returns the cleaned dataset and one rejection line per removal cause.
pub fn filter_invalid(ds: &Dataset) -> (Dataset, Vec<Rejection>) {
    let tests = ds.test_ids();
    let mut rejected: BTreeMap<u32, Vec<Rejection>> = BTreeMap::new();
    let mut report = Vec::new();

    for issue in &ds.flagged {
        let rej = Rejection {
            subject_id: issue.subject_id.map_or_else(|| "?".into(), |s| s.to_string()),
            test_id: issue.test_id.map_or_else(|| "?".into(), |t| t.to_string()),
            reason: format!("line {}: {}", issue.line, issue.reason),
        };
        match issue.subject_id {
            Some(s) => rejected.entry(s).or_default().push(rej),
            None => report.push(rej),
        }
    }
    for s in ds.subject_ids() {
        for &t in &tests {
            if ds.get(s, t).is_none() && !rejected.get(&s).is_some_and(|v| v.iter().any(|r| r.test_id == t.to_string())) {
                rejected.entry(s).or_default().push(Rejection {
                    subject_id: s.to_string(),
                    test_id: t.to_string(),
                    reason: "missing test record".into(),
                });
            }
        }
    }

    let mut out = Dataset::new(ds.schema.clone(), ds.provenance.clone(), ds.normalized);
    for r in ds.records() {
        if !rejected.contains_key(&r.subject_id) {
            out.insert(r.clone());
        }
    }
    report.extend(rejected.into_values().flatten());
    (out, report)
}

pub fn write_rejections<W: Write>(rejections: &[Rejection], writer: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rejections {
        w.serialize(r)?;
    }
    if rejections.is_empty() {
        w.write_record(["subject_id", "test_id", "reason"])?;
    }
    w.flush()?;
    Ok(())
}

/// Divides raw 0–100 scores by 100.
pub fn normalize_scores(ds: &Dataset) -> Result<Dataset, DataError> {
    if ds.normalized {
        return Err(DataError::AlreadyNormalized);
    }
    if let Some(r) = ds.records().find(|r| !(0.0..=100.0).contains(&r.score)) {
        return Err(DataError::ScoreRange {
            subject_id: r.subject_id,
            test_id: r.test_id,
            score: r.score,
        });
    }
    let mut out = ds.map_records(|r| SubjectRecord {
        score: r.score / 100.0,
        ..r.clone()
    });
    out.normalized = true;
    Ok(out)
}

/// Per-feature mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    /// Statistics over all records of `subjects`.
    pub fn fit(ds: &Dataset, subjects: &[u32]) -> Self {
        let d = ds.dim();
        let mut sum = vec![0.0; d];
        let mut n = 0usize;
        for r in ds.records_of(subjects) {
            for (s, v) in sum.iter_mut().zip(&r.features) {
                *s += v;
            }
            n += 1;
        }
        let n = n.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let mut var = vec![0.0; d];
        for r in ds.records_of(subjects) {
            for ((acc, v), m) in var.iter_mut().zip(&r.features).zip(&mean) {
                *acc += (v - m).powi(2);
            }
        }
        Self {
            mean,
            std: var.iter().map(|v| (v / n).sqrt()).collect(),
        }
    }
}

/// Z-scores every feature with `stats`. Features whose standard deviation is
/// below 1e-12 pass through unchanged; their indices are returned.
pub fn standardize_features(ds: &Dataset, stats: &FeatureStats) -> (Dataset, Vec<usize>) {
    let constant: Vec<usize> = stats
        .std
        .iter()
        .enumerate()
        .filter(|(_, s)| **s < 1e-12)
        .map(|(i, _)| i)
        .collect();
    let out = ds.map_records(|r| SubjectRecord {
        features: r
            .features
            .iter()
            .enumerate()
            .map(|(j, v)| {
                if stats.std[j] < 1e-12 {
                    *v
                } else {
                    (v - stats.mean[j]) / stats.std[j]
                }
            })
            .collect(),
        ..r.clone()
    });
    (out, constant)
}
