//! Brute-force k-nearest-neighbours voting.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    /// Number of coordinates that differ.
    Hamming,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Hamming => "hamming",
        }
    }

    /// A monotone transform of the metric, sufficient for ranking.
    fn rank_distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => super::squared_distance(a, b),
            Metric::Hamming => a.iter().zip(b).filter(|(x, y)| x != y).count() as f64,
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "hamming" => Ok(Metric::Hamming),
            other => Err(Error::Config(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub metric: Metric,
    pub n_features: usize,
    pub values: Vec<f64>,
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnnPrediction {
    pub class: u8,
    /// Share of the k neighbours labelled 0.
    pub probability_of_zero: f64,
}

pub fn train_knn(train: &FeatureMatrix, k: usize, metric: Metric) -> Result<KnnModel> {
    if k == 0 || k > train.n_rows() {
        return Err(Error::Parameter(format!(
            "k must lie in 1..={}, got {k}",
            train.n_rows()
        )));
    }
    Ok(KnnModel {
        k,
        metric,
        n_features: train.n_cols(),
        values: train.values().to_vec(),
        labels: train.labels().to_vec(),
    })
}

impl KnnModel {
    /// Indices of the k nearest training rows; distance ties go to the lower index.
    pub fn neighbours(&self, query: &[f64]) -> Result<Vec<usize>> {
        if query.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: query.len(),
            });
        }
        let mut scored: Vec<(f64, usize)> = self
            .values
            .chunks_exact(self.n_features)
            .enumerate()
            .map(|(i, row)| (self.metric.rank_distance(row, query), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < scored.len() {
            scored.select_nth_unstable_by(self.k - 1, cmp);
            scored.truncate(self.k);
        }
        scored.sort_unstable_by(cmp);
        Ok(scored.into_iter().map(|(_, i)| i).collect())
    }

    pub fn predict(&self, query: &[f64]) -> Result<KnnPrediction> {
        let neighbours = self.neighbours(query)?;
        let zeros = neighbours.iter().filter(|&&i| self.labels[i] == 0).count();
        let ones = self.k - zeros;
        Ok(KnnPrediction {
            class: u8::from(ones > zeros),
            probability_of_zero: zeros as f64 / self.k as f64,
        })
    }
}
