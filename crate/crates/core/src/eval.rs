//! Confusion matrices, accuracy/precision/recall, test-set construction
//! and comparative model reports. The positive class is always "hit".

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{to_feature_matrix, FeatureMatrix, TrackRecord};
use crate::error::{Error, Result};
use crate::models::TrainedPipeline;

pub const REPORT_COLUMNS: [&str; 9] = ["model", "split", "tp", "fp", "tn", "fn", "accuracy", "precision", "recall"];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(predictions: &[u8], truth: &[u8]) -> Result<ConfusionMatrix> {
    if predictions.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: predictions.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in predictions.iter().zip(truth) {
        match (p == 1, t == 1) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, false) => cm.tn += 1,
            (false, true) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// A ratio that may be 0/0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Ratio {
    Value(f64),
    Undefined,
}

impl Ratio {
    pub fn of(num: usize, den: usize) -> Ratio {
        if den == 0 {
            Ratio::Undefined
        } else {
            Ratio::Value(num as f64 / den as f64)
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Ratio::Value(v) => Some(v),
            Ratio::Undefined => None,
        }
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ratio::Value(v) => write!(f, "{v}"),
            Ratio::Undefined => f.write_str("undefined"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: Ratio,
    pub recall: Ratio,
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(Metrics {
        accuracy: (cm.tp + cm.tn) as f64 / total as f64,
        precision: Ratio::of(cm.tp, cm.tp + cm.fp),
        recall: Ratio::of(cm.tp, cm.tp + cm.fn_),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub split: String,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
}

impl EvalReport {
    pub fn new(model: &str, split: &str, confusion: ConfusionMatrix) -> Result<Self> {
        Ok(EvalReport {
            model: model.to_string(),
            split: split.to_string(),
            metrics: metrics(&confusion)?,
            confusion,
        })
    }
}

/// Every unique hit plus an equally sized uniform sample of unique non-hits.
pub fn build_test_set(all_tracks: &[TrackRecord], rng: &mut ChaCha8Rng) -> Result<FeatureMatrix> {
    let mut seen = HashSet::new();
    let unique: Vec<&TrackRecord> = all_tracks.iter().filter(|t| seen.insert(t.id.as_str())).collect();
    let hits: Vec<&TrackRecord> = unique.iter().copied().filter(|t| t.is_hit()).collect();
    let non_hits: Vec<&TrackRecord> = unique.iter().copied().filter(|t| !t.is_hit()).collect();
    if non_hits.len() < hits.len() {
        return Err(Error::InsufficientData(format!(
            "test set needs {} non-hits, only {} available",
            hits.len(),
            non_hits.len()
        )));
    }
    let mut picked: Vec<usize> = sample(rng, non_hits.len(), hits.len()).into_vec();
    picked.sort_unstable();
    let selected: Vec<TrackRecord> = hits
        .iter()
        .copied()
        .chain(picked.iter().map(|&i| non_hits[i]))
        .cloned()
        .collect();
    to_feature_matrix(&selected)
}

pub fn evaluate(pipeline: &TrainedPipeline, split: &str, data: &FeatureMatrix) -> Result<EvalReport> {
    let predictions: Vec<u8> = pipeline.predict_matrix(data)?.iter().map(|p| p.class).collect();
    EvalReport::new(&pipeline.name, split, confusion(&predictions, data.labels())?)
}

/// Reports in model order, each model evaluated on every split in order.
pub fn compare(models: &[TrainedPipeline], splits: &[(&str, &FeatureMatrix)]) -> Result<Vec<EvalReport>> {
    if models.is_empty() {
        return Err(Error::Parameter("nothing to compare".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..models.len()).flat_map(|m| (0..splits.len()).map(move |s| (m, s))).collect();
    jobs.par_iter()
        .map(|&(m, s)| evaluate(&models[m], splits[s].0, splits[s].1))
        .collect()
}

/// Number of rows in `test` whose track id also occurs in `train`.
pub fn overlap_count(test: &FeatureMatrix, train: &FeatureMatrix) -> usize {
    let train_ids: HashSet<&str> = train.track_ids().iter().map(String::as_str).collect();
    test.track_ids().iter().filter(|id| train_ids.contains(id.as_str())).count()
}

pub fn write_report_csv<W: Write>(reports: &[EvalReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(REPORT_COLUMNS)?;
    for r in reports {
        let c = &r.confusion;
        w.write_record([
            r.model.clone(),
            r.split.clone(),
            c.tp.to_string(),
            c.fp.to_string(),
            c.tn.to_string(),
            c.fn_.to_string(),
            r.metrics.accuracy.to_string(),
            r.metrics.precision.to_string(),
            r.metrics.recall.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parse a report CSV; metrics are recomputed from the counts.
pub fn read_report_csv<R: Read>(reader: R) -> Result<Vec<EvalReport>> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != REPORT_COLUMNS {
        return Err(Error::Schema(format!("report CSV must have columns {}", REPORT_COLUMNS.join(","))));
    }
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let count = |i: usize| {
            rec[i].parse::<usize>().map_err(|_| Error::Row {
                row,
                message: format!("bad count `{}` in column {}", &rec[i], REPORT_COLUMNS[i]),
            })
        };
        let cm = ConfusionMatrix {
            tp: count(2)?,
            fp: count(3)?,
            tn: count(4)?,
            fn_: count(5)?,
        };
        out.push(EvalReport::new(&rec[0], &rec[1], cm)?);
    }
    Ok(out)
}
