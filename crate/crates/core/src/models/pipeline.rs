//! Scaler → optional PCA → classifier pipelines, their JSON model files,
//! and stratified k-fold grid search.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::forest::{train_forest, ForestParams};
use super::knn::{train_knn, Metric};
use super::logreg::{train_logreg, LogRegParams};
use super::svm::{train_svm, SvmParams};
use super::{ClassifierKind, Prediction, TrainedModel};
use crate::data::{FeatureMatrix, FeatureRows};
use crate::error::{Error, Result};
use crate::pca::{fit_pca, PcaModel};
use crate::preprocess::ScalerModel;
use crate::rng;

pub const MODEL_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnParams {
    pub k: usize,
    pub metric: Metric,
}

impl Default for KnnParams {
    fn default() -> Self {
        KnnParams {
            k: 25,
            metric: Metric::Euclidean,
        }
    }
}

/// Classifier kind plus its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassifierSpec {
    Knn(KnnParams),
    LogReg(LogRegParams),
    Forest(ForestParams),
    Svm(SvmParams),
}

impl ClassifierSpec {
    pub fn default_for(kind: ClassifierKind) -> Self {
        match kind {
            ClassifierKind::Knn => ClassifierSpec::Knn(KnnParams::default()),
            ClassifierKind::LogReg => ClassifierSpec::LogReg(LogRegParams::default()),
            ClassifierKind::Forest => ClassifierSpec::Forest(ForestParams::default()),
            ClassifierKind::Svm => ClassifierSpec::Svm(SvmParams::default()),
        }
    }

    pub fn kind(&self) -> ClassifierKind {
        match self {
            ClassifierSpec::Knn(_) => ClassifierKind::Knn,
            ClassifierSpec::LogReg(_) => ClassifierKind::LogReg,
            ClassifierSpec::Forest(_) => ClassifierKind::Forest,
            ClassifierSpec::Svm(_) => ClassifierKind::Svm,
        }
    }

    /// Set one hyperparameter by name. `auto` clears optional ones back to
    /// their data-dependent default.
    pub fn set(&mut self, name: &str, value: GridValue) -> Result<()> {
        let kind = self.kind();
        let bad = || Error::Config(format!("invalid value `{value}` for {kind} hyperparameter `{name}`"));
        let count = |v: GridValue| match v {
            GridValue::Number(x) if x >= 0.0 && x.fract() == 0.0 => Some(x as usize),
            _ => None,
        };
        let real = |v: GridValue| match v {
            GridValue::Number(x) => Some(x),
            GridValue::Auto => None,
        };
        match (self, name) {
            (ClassifierSpec::Knn(p), "k") => p.k = count(value).ok_or_else(bad)?,
            (ClassifierSpec::LogReg(p), "learning_rate") => p.learning_rate = real(value).ok_or_else(bad)?,
            (ClassifierSpec::LogReg(p), "max_epochs") => p.max_epochs = count(value).ok_or_else(bad)?,
            (ClassifierSpec::LogReg(p), "tolerance") => p.tolerance = real(value).ok_or_else(bad)?,
            (ClassifierSpec::Forest(p), "trees") => p.trees = count(value).ok_or_else(bad)?,
            (ClassifierSpec::Forest(p), "min_leaf") => p.min_leaf = count(value).ok_or_else(bad)?,
            (ClassifierSpec::Forest(p), "max_depth") => {
                p.max_depth = if value == GridValue::Auto { None } else { Some(count(value).ok_or_else(bad)?) }
            }
            (ClassifierSpec::Forest(p), "features_per_split") => {
                p.features_per_split = if value == GridValue::Auto { None } else { Some(count(value).ok_or_else(bad)?) }
            }
            (ClassifierSpec::Forest(p), "seed") => p.seed = count(value).ok_or_else(bad)? as u64,
            (ClassifierSpec::Svm(p), "C" | "c") => p.c = real(value).ok_or_else(bad)?,
            (ClassifierSpec::Svm(p), "gamma") => p.gamma = real(value),
            (ClassifierSpec::Svm(p), "tolerance") => p.tolerance = real(value).ok_or_else(bad)?,
            (ClassifierSpec::Svm(p), "max_passes") => {
                p.max_passes = if value == GridValue::Auto { None } else { Some(count(value).ok_or_else(bad)?) }
            }
            _ => return Err(Error::Config(format!("unknown hyperparameter `{name}` for {kind}"))),
        }
        Ok(())
    }

    pub fn fit(&self, train: &FeatureMatrix) -> Result<TrainedModel> {
        Ok(match self {
            ClassifierSpec::Knn(p) => TrainedModel::Knn(train_knn(train, p.k, p.metric)?),
            ClassifierSpec::LogReg(p) => TrainedModel::LogReg(train_logreg(train, p)?),
            ClassifierSpec::Forest(p) => TrainedModel::Forest(train_forest(train, p)?),
            ClassifierSpec::Svm(p) => TrainedModel::Svm(train_svm(train, p)?),
        })
    }

    fn to_json(self) -> Value {
        match self {
            ClassifierSpec::Knn(p) => serde_json::to_value(p),
            ClassifierSpec::LogReg(p) => serde_json::to_value(p),
            ClassifierSpec::Forest(p) => serde_json::to_value(p),
            ClassifierSpec::Svm(p) => serde_json::to_value(p),
        }
        .expect("hyperparameters serialize")
    }

    fn from_json(kind: ClassifierKind, value: Value) -> Result<Self> {
        Ok(match kind {
            ClassifierKind::Knn => ClassifierSpec::Knn(serde_json::from_value(value)?),
            ClassifierKind::LogReg => ClassifierSpec::LogReg(serde_json::from_value(value)?),
            ClassifierKind::Forest => ClassifierSpec::Forest(serde_json::from_value(value)?),
            ClassifierKind::Svm => ClassifierSpec::Svm(serde_json::from_value(value)?),
        })
    }
}

/// One candidate value in a search grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridValue {
    Number(f64),
    /// The hyperparameter's data-dependent default (e.g. gamma = 1/d).
    Auto,
}

impl fmt::Display for GridValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridValue::Number(x) => write!(f, "{x}"),
            GridValue::Auto => f.write_str("auto"),
        }
    }
}

impl FromStr for GridValue {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "auto" {
            return Ok(GridValue::Auto);
        }
        s.parse()
            .map(GridValue::Number)
            .map_err(|_| Error::Config(format!("invalid grid value `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSpec {
    pub name: String,
    /// Cumulative explained-variance threshold; `None` skips PCA.
    pub pca_threshold: Option<f64>,
    pub classifier: ClassifierSpec,
    pub cv_folds: usize,
    /// Hyperparameter name → candidates, searched as a Cartesian product
    /// with the first entry varying slowest.
    pub grid: Vec<(String, Vec<GridValue>)>,
    pub seed: u64,
}

impl PipelineSpec {
    pub fn new(name: &str, classifier: ClassifierSpec) -> Self {
        PipelineSpec {
            name: name.to_string(),
            pca_threshold: None,
            classifier,
            cv_folds: 5,
            grid: Vec::new(),
            seed: 0,
        }
    }

    /// Every grid point as a list of `(name, value)` assignments.
    pub fn grid_points(&self) -> Vec<Vec<(String, GridValue)>> {
        let mut points = vec![Vec::new()];
        for (name, values) in &self.grid {
            points = points
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push((name.clone(), *v));
                        q
                    })
                })
                .collect();
        }
        points
    }

    pub fn fit(&self, train: &FeatureMatrix) -> Result<TrainedPipeline> {
        fit_pipeline(&self.name, self.pca_threshold, &self.classifier, train)
    }
}

/// Fit scaler, optional PCA and classifier on `train` only.
pub fn fit_pipeline(
    name: &str,
    pca_threshold: Option<f64>,
    classifier: &ClassifierSpec,
    train: &FeatureMatrix,
) -> Result<TrainedPipeline> {
    let scaler = ScalerModel::fit(train)?;
    let scaled = scaler.apply(train)?;
    let (pca, inputs) = match pca_threshold {
        Some(t) => {
            let pca = fit_pca(&scaled)?.select_components(t)?;
            let projected = pca.transform(&scaled)?;
            (Some(pca), projected)
        }
        None => (None, scaled),
    };
    let model = classifier.fit(&inputs)?;
    Ok(TrainedPipeline {
        name: name.to_string(),
        spec: *classifier,
        scaler,
        pca,
        model,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedPipeline {
    pub name: String,
    pub spec: ClassifierSpec,
    pub scaler: ScalerModel,
    pub pca: Option<PcaModel>,
    pub model: TrainedModel,
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    kind: ClassifierKind,
    version: u32,
    name: String,
    hyperparameters: Value,
    parameters: Value,
    scaler: ScalerModel,
    pca: Option<PcaModel>,
}

impl TrainedPipeline {
    pub fn feature_names(&self) -> &[String] {
        &self.scaler.feature_names
    }

    /// Run one raw feature row through every stage.
    pub fn predict_row(&self, row: &[f64]) -> Result<Prediction> {
        if row.len() != self.scaler.feature_names.len() {
            return Err(Error::DimensionMismatch {
                expected: self.scaler.feature_names.len(),
                got: row.len(),
            });
        }
        let mut scaled = Vec::with_capacity(row.len());
        self.scaler.scale_row(row, &mut scaled);
        match &self.pca {
            Some(pca) => {
                let mut projected = Vec::with_capacity(pca.k());
                pca.project_row(&scaled, &mut projected);
                self.model.predict(&projected)
            }
            None => self.model.predict(&scaled),
        }
    }

    pub fn predict_matrix(&self, matrix: &FeatureMatrix) -> Result<Vec<Prediction>> {
        matrix.check_columns(self.feature_names())?;
        (0..matrix.n_rows())
            .into_par_iter()
            .map(|i| self.predict_row(matrix.row(i)))
            .collect()
    }

    pub fn predict_rows(&self, rows: &FeatureRows) -> Result<Vec<Prediction>> {
        if rows.feature_names != self.feature_names() {
            return Err(Error::Schema("input columns do not match the model".into()));
        }
        (0..rows.n_rows())
            .into_par_iter()
            .map(|i| self.predict_row(rows.row(i)))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let parameters = match &self.model {
            TrainedModel::Knn(m) => serde_json::to_value(m)?,
            TrainedModel::LogReg(m) => serde_json::to_value(m)?,
            TrainedModel::Forest(m) => serde_json::to_value(m)?,
            TrainedModel::Svm(m) => serde_json::to_value(m)?,
        };
        let envelope = Envelope {
            kind: self.model.kind(),
            version: MODEL_FILE_VERSION,
            name: self.name.clone(),
            hyperparameters: self.spec.to_json(),
            parameters,
            scaler: self.scaler.clone(),
            pca: self.pca.clone(),
        };
        Ok(serde_json::to_string_pretty(&envelope)?)
    }

    pub fn from_json(text: &str) -> Result<TrainedPipeline> {
        let raw: Value = serde_json::from_str(text)?;
        match raw.get("version").and_then(Value::as_u64) {
            Some(v) if v == u64::from(MODEL_FILE_VERSION) => {}
            Some(v) => {
                return Err(Error::ModelFile(format!(
                    "unsupported model file version {v} (expected {MODEL_FILE_VERSION})"
                )))
            }
            None => return Err(Error::ModelFile("model file has no version".into())),
        }
        let env: Envelope = serde_json::from_value(raw).map_err(|e| Error::ModelFile(e.to_string()))?;
        let model = match env.kind {
            ClassifierKind::Knn => TrainedModel::Knn(serde_json::from_value(env.parameters)?),
            ClassifierKind::LogReg => TrainedModel::LogReg(serde_json::from_value(env.parameters)?),
            ClassifierKind::Forest => TrainedModel::Forest(serde_json::from_value(env.parameters)?),
            ClassifierKind::Svm => TrainedModel::Svm(serde_json::from_value(env.parameters)?),
        };
        let expected_inputs = env.pca.as_ref().map_or(env.scaler.feature_names.len(), PcaModel::k);
        if model.n_features() != expected_inputs {
            return Err(Error::ModelFile(format!(
                "classifier expects {} inputs but the preprocessing stages produce {expected_inputs}",
                model.n_features()
            )));
        }
        Ok(TrainedPipeline {
            name: env.name,
            spec: ClassifierSpec::from_json(env.kind, env.hyperparameters)?,
            scaler: env.scaler,
            pca: env.pca,
            model,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::path(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TrainedPipeline> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::path(path, e))?;
        Self::from_json(&text)
    }
}

/// Accuracy of one cross-validation fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvScore {
    pub grid_index: usize,
    pub params: String,
    pub fold: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct GridSearchResult {
    pub best: TrainedPipeline,
    pub best_index: usize,
    pub best_params: Vec<(String, GridValue)>,
    pub mean_accuracy: Vec<f64>,
    /// One entry per (grid point, fold), grid-major.
    pub table: Vec<CvScore>,
}

impl GridSearchResult {
    pub fn write_table_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["grid_index", "params", "fold", "accuracy"])?;
        for s in &self.table {
            w.write_record([s.grid_index.to_string(), s.params.clone(), s.fold.to_string(), s.accuracy.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn describe(point: &[(String, GridValue)]) -> String {
    point
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

/// Stratified fold index for every row: each class is shuffled and dealt
/// round-robin across the folds.
pub fn stratified_folds(labels: &[u8], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng::substream(seed, rng::CV);
    let mut assignment = vec![0; labels.len()];
    let mut offset = 0;
    for class in [0u8, 1] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        for (pos, &i) in members.iter().enumerate() {
            assignment[i] = (pos + offset) % folds;
        }
        offset += members.len();
    }
    assignment
}

fn accuracy(predictions: &[Prediction], truth: &[u8]) -> f64 {
    let correct = predictions.iter().zip(truth).filter(|(p, &t)| p.class == t).count();
    correct as f64 / truth.len() as f64
}

/// Cross-validate every grid point, pick the highest mean accuracy (first
/// declared wins ties) and refit it on all of `train`.
pub fn grid_search(spec: &PipelineSpec, train: &FeatureMatrix) -> Result<GridSearchResult> {
    if spec.grid.is_empty() || spec.grid.iter().any(|(_, v)| v.is_empty()) {
        return Err(Error::Parameter("search grid must list at least one value per entry".into()));
    }
    let k = spec.cv_folds;
    if k < 2 || k > train.n_rows() {
        return Err(Error::Parameter(format!(
            "cv folds must lie in 2..={}, got {k}",
            train.n_rows()
        )));
    }
    let points = spec.grid_points();
    let candidates: Vec<ClassifierSpec> = points
        .iter()
        .map(|point| {
            let mut c = spec.classifier;
            for (name, value) in point {
                c.set(name, *value)?;
            }
            Ok(c)
        })
        .collect::<Result<_>>()?;

    let assignment = stratified_folds(train.labels(), k, spec.seed);
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let (val_idx, train_idx): (Vec<usize>, Vec<usize>) = (0..train.n_rows()).partition(|&i| assignment[i] == f);
        let fold_train = train.select_rows(&train_idx);
        let fold_val = train.select_rows(&val_idx);
        for (part, m) in [("training", &fold_train), ("held-out", &fold_val)] {
            let c = m.class_counts();
            if c[0] == 0 || c[1] == 0 {
                return Err(Error::InsufficientData(format!(
                    "fold {f} {part} part has a single class; use fewer folds"
                )));
            }
        }
        folds.push((fold_train, fold_val));
    }

    let jobs: Vec<(usize, usize)> = (0..candidates.len()).flat_map(|g| (0..k).map(move |f| (g, f))).collect();
    let scores: Vec<f64> = jobs
        .par_iter()
        .map(|&(g, f)| {
            let (fold_train, fold_val) = &folds[f];
            let fitted = fit_pipeline(&spec.name, spec.pca_threshold, &candidates[g], fold_train)?;
            let predictions = fitted.predict_matrix(fold_val)?;
            Ok(accuracy(&predictions, fold_val.labels()))
        })
        .collect::<Result<_>>()?;

    let table: Vec<CvScore> = jobs
        .iter()
        .zip(&scores)
        .map(|(&(g, f), &accuracy)| CvScore {
            grid_index: g,
            params: describe(&points[g]),
            fold: f,
            accuracy,
        })
        .collect();
    let mean_accuracy: Vec<f64> = scores.chunks(k).map(|c| c.iter().sum::<f64>() / k as f64).collect();
    let mut best_index = 0;
    for (g, &m) in mean_accuracy.iter().enumerate() {
        if m > mean_accuracy[best_index] {
            best_index = g;
        }
    }
    log::info!(
        "{}: best grid point {} with CV accuracy {:.4}",
        spec.name,
        describe(&points[best_index]),
        mean_accuracy[best_index]
    );
    let best = fit_pipeline(&spec.name, spec.pca_threshold, &candidates[best_index], train)?;
    Ok(GridSearchResult {
        best,
        best_index,
        best_params: points[best_index].clone(),
        mean_accuracy,
        table,
    })
}
