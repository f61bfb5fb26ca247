//! Classifiers, pipelines and cross-validated grid search.

pub mod forest;
pub mod knn;
pub mod logreg;
pub mod pipeline;
pub mod svm;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use forest::{ForestModel, ForestParams};
pub use knn::{KnnModel, Metric};
pub use logreg::{LogRegModel, LogRegParams};
pub use pipeline::{grid_search, ClassifierSpec, GridValue, PipelineSpec, TrainedPipeline};
pub use svm::{SvmModel, SvmParams};

/// Gaussian RBF similarity `exp(-g * ||x - y||^2)`.
pub fn rbf_kernel(x: &[f64], y: &[f64], g: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if !(g > 0.0) {
        return Err(Error::Parameter(format!("kernel parameter must be positive, got {g}")));
    }
    Ok(rbf(x, y, g))
}

#[inline]
pub(crate) fn rbf(x: &[f64], y: &[f64], g: f64) -> f64 {
    (-g * squared_distance(x, y)).exp()
}

#[inline]
pub(crate) fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Logistic curve with location `m` and scale `s`.
pub fn logistic(x: f64, m: f64, s: f64) -> f64 {
    sigmoid((x - m) / s)
}

/// Numerically stable standard sigmoid.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Knn,
    LogReg,
    Forest,
    Svm,
}

impl ClassifierKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierKind::Knn => "knn",
            ClassifierKind::LogReg => "logreg",
            ClassifierKind::Forest => "forest",
            ClassifierKind::Svm => "svm",
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "knn" => Ok(ClassifierKind::Knn),
            "logreg" => Ok(ClassifierKind::LogReg),
            "forest" => Ok(ClassifierKind::Forest),
            "svm" => Ok(ClassifierKind::Svm),
            other => Err(Error::Config(format!("unknown classifier kind `{other}`"))),
        }
    }
}

/// Uniform prediction: hard class plus probability of the hit class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class: u8,
    pub probability: f64,
}

/// One fitted classifier of any kind.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Knn(KnnModel),
    LogReg(LogRegModel),
    Forest(ForestModel),
    Svm(SvmModel),
}

impl TrainedModel {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            TrainedModel::Knn(_) => ClassifierKind::Knn,
            TrainedModel::LogReg(_) => ClassifierKind::LogReg,
            TrainedModel::Forest(_) => ClassifierKind::Forest,
            TrainedModel::Svm(_) => ClassifierKind::Svm,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            TrainedModel::Knn(m) => m.n_features,
            TrainedModel::LogReg(m) => m.weights.len(),
            TrainedModel::Forest(m) => m.n_features,
            TrainedModel::Svm(m) => m.n_features,
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        match self {
            TrainedModel::Knn(m) => m.predict(x).map(|p| Prediction {
                class: p.class,
                probability: 1.0 - p.probability_of_zero,
            }),
            TrainedModel::LogReg(m) => m.predict(x),
            TrainedModel::Forest(m) => m.predict(x),
            TrainedModel::Svm(m) => m.predict(x),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rbf_values() {
        assert_eq!(rbf_kernel(&[1.0, 2.0], &[1.0, 2.0], 0.3).unwrap(), 1.0);
        let v = rbf_kernel(&[0.0, 0.0], &[1.0, 1.0], 0.5).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.367879).abs() < 1e-6);
        assert!(matches!(rbf_kernel(&[0.0], &[0.0, 1.0], 1.0), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(rbf_kernel(&[0.0], &[1.0], 0.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn logistic_values() {
        assert_eq!(logistic(3.0, 3.0, 2.0), 0.5);
        let v = logistic(5.0, 3.0, 2.0);
        assert!((v - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        assert!((v - 0.731059).abs() < 1e-6);
        assert!(logistic(-1e6, 0.0, 1.0) < 1e-300);
        assert!(logistic(-40.0, 0.0, 1.0) > 0.0);
    }

    proptest! {
        #[test]
        fn rbf_symmetric_and_bounded(x in prop::collection::vec(-5.0f64..5.0, 4), y in prop::collection::vec(-5.0f64..5.0, 4), g in 0.01f64..3.0) {
            let a = rbf_kernel(&x, &y, g).unwrap();
            prop_assert_eq!(a, rbf_kernel(&y, &x, g).unwrap());
            prop_assert!(a > 0.0 && a <= 1.0);
        }

        #[test]
        fn logistic_monotone(a in -30.0f64..30.0, b in -30.0f64..30.0, m in -5.0f64..5.0, s in 0.1f64..5.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(logistic(lo, m, s) <= logistic(hi, m, s));
            let v = logistic(a, m, s);
            prop_assert!((0.0..=1.0).contains(&v));
            if ((a - m) / s).abs() < 30.0 {
                prop_assert!(v > 0.0 && v < 1.0);
            }
        }
    }
}
