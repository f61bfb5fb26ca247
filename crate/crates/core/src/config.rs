//! Run configuration: a flat `key=value` file with dotted keys.
//!
//! ```text
//! seed=42
//! split.train_fraction=0.7
//! models.svm.C=10
//! grid.svm.gamma=0.01,auto,0.1,1
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Every key can also be
//! set programmatically through [`RunConfig::set`], which is how command-line
//! flags override file values.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{BalanceMode, SplitSpec};
use crate::error::{Error, Result};
use crate::ingest::{AcquisitionParams, FixtureMode, SamplingParams};
use crate::models::pipeline::KnnParams;
use crate::models::{ClassifierKind, ClassifierSpec, ForestParams, GridValue, LogRegParams, Metric, SvmParams};
use crate::rng;

pub const ALL_KINDS: [ClassifierKind; 4] =
    [ClassifierKind::Knn, ClassifierKind::LogReg, ClassifierKind::Forest, ClassifierKind::Svm];

#[derive(Debug, Clone, PartialEq)]
pub struct IngestSettings {
    pub mode: FixtureMode,
    pub first_year: i32,
    pub last_year: i32,
    pub requests: usize,
    pub keep: usize,
    pub wildcard: bool,
    pub in_flight: usize,
    pub requests_per_second: f64,
    pub chart_url: String,
}

impl Default for IngestSettings {
    fn default() -> Self {
        IngestSettings {
            mode: FixtureMode::Replay,
            first_year: 2011,
            last_year: 2021,
            requests: 2000,
            keep: 10,
            wildcard: true,
            in_flight: 8,
            requests_per_second: 5.0,
            chart_url: "http://localhost:8080".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub fixtures: PathBuf,
    /// Raw tracks CSV; defaults to `<out>/tracks.csv`.
    pub tracks: Option<PathBuf>,
    pub out: PathBuf,
    pub ingest: IngestSettings,
    pub train_fraction: f64,
    pub balance_mode: BalanceMode,
    pub pca_threshold: f64,
    pub cv_folds: usize,
    /// Default-hyperparameter models trained without PCA.
    pub models: Vec<ClassifierKind>,
    /// Models additionally trained as scaler + PCA + grid search.
    pub opt_models: Vec<ClassifierKind>,
    pub knn: KnnParams,
    pub logreg: LogRegParams,
    pub forest: ForestParams,
    pub svm: SvmParams,
    /// Per-kind search grids, in the order keys were given.
    pub grids: Vec<(ClassifierKind, Vec<(String, Vec<GridValue>)>)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let num = |xs: &[f64]| xs.iter().map(|&x| GridValue::Number(x)).collect::<Vec<_>>();
        RunConfig {
            seed: 42,
            threads: 0,
            fixtures: PathBuf::from("fixtures"),
            tracks: None,
            out: PathBuf::from("out"),
            ingest: IngestSettings::default(),
            train_fraction: 0.7,
            balance_mode: BalanceMode::Pooled,
            pca_threshold: 0.98,
            cv_folds: 5,
            models: ALL_KINDS.to_vec(),
            opt_models: vec![ClassifierKind::Knn, ClassifierKind::Svm],
            knn: KnnParams::default(),
            logreg: LogRegParams::default(),
            forest: ForestParams::default(),
            svm: SvmParams::default(),
            grids: vec![
                (ClassifierKind::Knn, vec![("k".into(), num(&[5.0, 15.0, 25.0, 35.0]))]),
                (
                    ClassifierKind::Svm,
                    vec![
                        ("C".into(), num(&[1.0, 10.0, 100.0])),
                        (
                            "gamma".into(),
                            vec![GridValue::Number(0.01), GridValue::Auto, GridValue::Number(0.1), GridValue::Number(1.0)],
                        ),
                    ],
                ),
            ],
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid value `{value}` for `{key}`"))),
    }
}

fn parse_kinds(key: &str, value: &str) -> Result<Vec<ClassifierKind>> {
    let value = value.trim();
    if value.is_empty() {
        return Ok(Vec::new());
    }
    let kinds = value
        .split(',')
        .map(|s| s.trim().parse::<ClassifierKind>())
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::Config(format!("`{key}`: {e}")))?;
    for (i, k) in kinds.iter().enumerate() {
        if kinds[..i].contains(k) {
            return Err(Error::Config(format!("`{key}` lists {k} twice")));
        }
    }
    Ok(kinds)
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn opt_count(v: Option<usize>) -> String {
    v.map_or_else(|| "auto".into(), |n| n.to_string())
}

fn opt_real(v: Option<f64>) -> String {
    v.map_or_else(|| "auto".into(), |x| x.to_string())
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut config = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            config
                .set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::path(path, e))?;
        Self::from_text(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::path(path, e))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let path = |v: &str| PathBuf::from(v.trim());
        match key {
            "seed" => self.seed = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            "paths.fixtures" => self.fixtures = path(value),
            "paths.tracks" => self.tracks = Some(value.trim()).filter(|v| !v.is_empty()).map(PathBuf::from),
            "paths.out" => self.out = path(value),
            "ingest.mode" => self.ingest.mode = parse(key, value)?,
            "ingest.first_year" => self.ingest.first_year = parse(key, value)?,
            "ingest.last_year" => self.ingest.last_year = parse(key, value)?,
            "ingest.requests" => self.ingest.requests = parse(key, value)?,
            "ingest.keep" => self.ingest.keep = parse(key, value)?,
            "ingest.wildcard" => self.ingest.wildcard = parse_bool(key, value)?,
            "ingest.in_flight" => self.ingest.in_flight = parse(key, value)?,
            "ingest.requests_per_second" => self.ingest.requests_per_second = parse(key, value)?,
            "ingest.chart_url" => self.ingest.chart_url = value.trim().to_string(),
            "split.train_fraction" => self.train_fraction = parse(key, value)?,
            "balance_mode" => self.balance_mode = parse(key, value)?,
            "pca.threshold" => self.pca_threshold = parse(key, value)?,
            "cv.folds" => self.cv_folds = parse(key, value)?,
            "models" => self.models = parse_kinds(key, value)?,
            "models.opt" => self.opt_models = parse_kinds(key, value)?,
            "models.knn.metric" => self.knn.metric = parse::<Metric>(key, value)?,
            _ => {
                if let Some(rest) = key.strip_prefix("models.") {
                    let (kind, name) = rest
                        .split_once('.')
                        .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
                    let kind: ClassifierKind = kind.parse()?;
                    let mut spec = self.spec(kind);
                    spec.set(name, value.parse()?)?;
                    self.set_spec(spec);
                } else if let Some(rest) = key.strip_prefix("grid.") {
                    let (kind, name) = rest
                        .split_once('.')
                        .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
                    let kind: ClassifierKind = kind.parse()?;
                    let values = value.split(',').map(str::parse).collect::<Result<Vec<GridValue>>>()?;
                    // Validate each candidate against the hyperparameter now, not at training time.
                    for v in &values {
                        self.spec(kind).set(name, *v)?;
                    }
                    self.set_grid(kind, name, values);
                } else {
                    return Err(Error::Config(format!("unknown key `{key}`")));
                }
            }
        }
        Ok(())
    }

    fn set_grid(&mut self, kind: ClassifierKind, name: &str, values: Vec<GridValue>) {
        let pos = match self.grids.iter().position(|(k, _)| *k == kind) {
            Some(p) => p,
            None => {
                self.grids.push((kind, Vec::new()));
                self.grids.len() - 1
            }
        };
        let grid = &mut self.grids[pos].1;
        match grid.iter_mut().find(|(n, _)| n == name) {
            Some(entry) => entry.1 = values,
            None => grid.push((name.to_string(), values)),
        }
    }

    pub fn grid(&self, kind: ClassifierKind) -> Vec<(String, Vec<GridValue>)> {
        self.grids
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, g)| g.clone())
            .unwrap_or_default()
    }

    /// Hyperparameters for `kind`; the forest is seeded from the run seed.
    pub fn spec(&self, kind: ClassifierKind) -> ClassifierSpec {
        match kind {
            ClassifierKind::Knn => ClassifierSpec::Knn(self.knn),
            ClassifierKind::LogReg => ClassifierSpec::LogReg(self.logreg),
            ClassifierKind::Forest => ClassifierSpec::Forest(self.forest),
            ClassifierKind::Svm => ClassifierSpec::Svm(self.svm),
        }
    }

    fn set_spec(&mut self, spec: ClassifierSpec) {
        match spec {
            ClassifierSpec::Knn(p) => self.knn = p,
            ClassifierSpec::LogReg(p) => self.logreg = p,
            ClassifierSpec::Forest(p) => self.forest = p,
            ClassifierSpec::Svm(p) => self.svm = p,
        }
    }

    /// Classifier spec used for training, with run-seeded randomness.
    pub fn training_spec(&self, kind: ClassifierKind) -> ClassifierSpec {
        match self.spec(kind) {
            ClassifierSpec::Forest(mut p) => {
                p.seed = rng::derive_seed(self.seed, rng::FOREST, 0);
                ClassifierSpec::Forest(p)
            }
            other => other,
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: self.train_fraction,
            seed: rng::derive_seed(self.seed, rng::SPLIT, 0),
            mode: self.balance_mode,
        }
    }

    pub fn tracks_path(&self) -> PathBuf {
        self.tracks.clone().unwrap_or_else(|| self.out.join("tracks.csv"))
    }

    pub fn acquisition(&self) -> AcquisitionParams {
        AcquisitionParams {
            first_year: self.ingest.first_year,
            last_year: self.ingest.last_year,
            sampling: SamplingParams {
                request_count: self.ingest.requests,
                per_request_keep: self.ingest.keep,
                seed: self.seed,
                wildcard: self.ingest.wildcard,
                in_flight: self.ingest.in_flight,
            },
        }
    }

    /// Cross-field checks that individual `set` calls cannot make.
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!("split.train_fraction must lie in (0,1), got {}", self.train_fraction)));
        }
        if !(self.pca_threshold > 0.0 && self.pca_threshold <= 1.0) {
            return Err(Error::Config(format!("pca.threshold must lie in (0,1], got {}", self.pca_threshold)));
        }
        if self.cv_folds < 2 {
            return Err(Error::Config(format!("cv.folds must be at least 2, got {}", self.cv_folds)));
        }
        if self.ingest.first_year > self.ingest.last_year {
            return Err(Error::Config("ingest.first_year is after ingest.last_year".into()));
        }
        if self.models.is_empty() && self.opt_models.is_empty() {
            return Err(Error::Config("no models configured".into()));
        }
        for kind in &self.opt_models {
            if self.grid(*kind).is_empty() {
                return Err(Error::Config(format!("models.opt lists {kind} but grid.{kind}.* is empty")));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("seed", self.seed.to_string());
        kv("threads", self.threads.to_string());
        kv("paths.fixtures", self.fixtures.display().to_string());
        kv("paths.tracks", self.tracks.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
        kv("paths.out", self.out.display().to_string());
        let mode = match self.ingest.mode {
            FixtureMode::Replay => "replay",
            FixtureMode::Record => "record",
            FixtureMode::Live => "live",
        };
        kv("ingest.mode", mode.into());
        kv("ingest.first_year", self.ingest.first_year.to_string());
        kv("ingest.last_year", self.ingest.last_year.to_string());
        kv("ingest.requests", self.ingest.requests.to_string());
        kv("ingest.keep", self.ingest.keep.to_string());
        kv("ingest.wildcard", self.ingest.wildcard.to_string());
        kv("ingest.in_flight", self.ingest.in_flight.to_string());
        kv("ingest.requests_per_second", self.ingest.requests_per_second.to_string());
        kv("ingest.chart_url", self.ingest.chart_url.clone());
        kv("split.train_fraction", self.train_fraction.to_string());
        kv("balance_mode", self.balance_mode.to_string());
        kv("pca.threshold", self.pca_threshold.to_string());
        kv("cv.folds", self.cv_folds.to_string());
        kv("models", join(&self.models));
        kv("models.opt", join(&self.opt_models));
        kv("models.knn.k", self.knn.k.to_string());
        kv("models.knn.metric", self.knn.metric.as_str().into());
        kv("models.logreg.learning_rate", self.logreg.learning_rate.to_string());
        kv("models.logreg.max_epochs", self.logreg.max_epochs.to_string());
        kv("models.logreg.tolerance", self.logreg.tolerance.to_string());
        kv("models.forest.trees", self.forest.trees.to_string());
        kv("models.forest.features_per_split", opt_count(self.forest.features_per_split));
        kv("models.forest.max_depth", opt_count(self.forest.max_depth));
        kv("models.forest.min_leaf", self.forest.min_leaf.to_string());
        kv("models.svm.C", self.svm.c.to_string());
        kv("models.svm.gamma", opt_real(self.svm.gamma));
        kv("models.svm.tolerance", self.svm.tolerance.to_string());
        kv("models.svm.max_passes", opt_count(self.svm.max_passes));
        for (kind, grid) in &self.grids {
            for (name, values) in grid {
                kv(&format!("grid.{kind}.{name}"), join(values));
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_round_trips() {
        let c = RunConfig::default();
        let text = c.to_text();
        assert_eq!(RunConfig::from_text(&text).unwrap(), c);
        assert!(text.contains("models.svm.C=10\n"));
        assert!(text.contains("grid.svm.gamma=0.01,auto,0.1,1\n"));
        c.validate().unwrap();
    }

    #[test]
    fn file_values_and_overrides() {
        let mut c = RunConfig::from_text("# run\nseed=7\n\nmodels.svm.C=2.5\nmodels=forest,svm\nbalance_mode=strict\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.svm.c, 2.5);
        assert_eq!(c.models, vec![ClassifierKind::Forest, ClassifierKind::Svm]);
        assert_eq!(c.balance_mode, BalanceMode::Strict);
        c.set("seed", "9").unwrap();
        assert_eq!(c.seed, 9);
        c.set("grid.knn.k", "3,7").unwrap();
        assert_eq!(c.grid(ClassifierKind::Knn), vec![("k".into(), vec![GridValue::Number(3.0), GridValue::Number(7.0)])]);
    }

    #[test]
    fn errors_name_the_line() {
        let err = RunConfig::from_text("seed=1\nbogus.key=3\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(RunConfig::from_text("seed=minus").is_err());
        assert!(RunConfig::from_text("grid.knn.k=2.5").is_err());
        assert!(RunConfig::from_text("models=knn,knn").is_err());
        let mut c = RunConfig::default();
        c.set("cv.folds", "1").unwrap();
        assert!(c.validate().is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_configs_round_trip(
            seed in any::<u64>(),
            frac in 0.01f64..0.99,
            thr in 0.01f64..1.0,
            c in 1e-3f64..1e3,
            gamma in prop::option::of(1e-4f64..10.0),
            k in 1usize..100,
            depth in prop::option::of(1usize..40),
            strict in any::<bool>(),
            ks in prop::collection::vec(1usize..60, 1..5),
        ) {
            let mut cfg = RunConfig { seed, train_fraction: frac, pca_threshold: thr, ..RunConfig::default() };
            cfg.svm.c = c;
            cfg.svm.gamma = gamma;
            cfg.knn.k = k;
            cfg.forest.max_depth = depth;
            cfg.balance_mode = if strict { BalanceMode::Strict } else { BalanceMode::Pooled };
            cfg.tracks = Some(PathBuf::from("data/tracks.csv"));
            cfg.set_grid(ClassifierKind::Knn, "k", ks.iter().map(|&x| GridValue::Number(x as f64)).collect());
            let back = RunConfig::from_text(&cfg.to_text()).unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}
