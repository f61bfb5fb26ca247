//! Stage orchestration behind the command-line interface.
//!
//! Each function reads its inputs from, and writes its artifacts under, the
//! configured output directory:
//!
//! ```text
//! <out>/tracks.csv, acquisition.csv          ingest
//! <out>/prepared/{clean,train,validation}.csv prepare
//! <out>/pca/{variance,loadings}.csv, *.svg    pca
//! <out>/models/<name>.json, <name>_grid.csv   train
//! <out>/reports/*.csv, *.svg                  train, evaluate, report
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::charts;
use crate::config::RunConfig;
use crate::data::{self, BalanceMode, FeatureMatrix, FeatureRows, TrackRecord};
use crate::error::{Error, Result, StageExt};
use crate::eval::{self, EvalReport};
use crate::ingest::{self, AcquisitionSummary, FixtureMode, ReplayTransport, Transport};
use crate::models::pipeline::{fit_pipeline, grid_search, GridSearchResult, PipelineSpec, TrainedPipeline};
use crate::models::ClassifierKind;
use crate::pca::{self, PcaModel};
use crate::preprocess::{self, CleanupSummary, ScalerModel};
use crate::rng;

pub fn model_name(kind: ClassifierKind, opt: bool) -> String {
    if opt {
        format!("opt-{kind}")
    } else {
        kind.to_string()
    }
}

pub struct Layout {
    pub out: PathBuf,
}

impl Layout {
    pub fn new(config: &RunConfig) -> Self {
        Layout {
            out: config.out.clone(),
        }
    }

    pub fn acquisition(&self) -> PathBuf {
        self.out.join("acquisition.csv")
    }
    pub fn prepared(&self, name: &str) -> PathBuf {
        self.out.join("prepared").join(name)
    }
    pub fn pca(&self, name: &str) -> PathBuf {
        self.out.join("pca").join(name)
    }
    pub fn model(&self, name: &str) -> PathBuf {
        self.out.join("models").join(format!("{name}.json"))
    }
    pub fn models_dir(&self) -> PathBuf {
        self.out.join("models")
    }
    pub fn report(&self, name: &str) -> PathBuf {
        self.out.join("reports").join(name)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::path(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::path(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).map_err(|e| Error::path(path, e))?;
    w.flush().map_err(|e| Error::path(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::path(path, e))
}

fn write_key_values(path: &Path, rows: &[(&str, usize)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["key", "value"])?;
    for (k, v) in rows {
        w.write_record([k.to_string(), v.to_string()])?;
    }
    w.flush().map_err(|e| Error::path(path, e))
}

/// Run `f` on a dedicated pool of `threads` workers (0 = all cores).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn transport(config: &RunConfig) -> Result<Box<dyn Transport>> {
    match config.ingest.mode {
        FixtureMode::Replay => Ok(Box::new(ReplayTransport::new(&config.fixtures)?)),
        #[cfg(feature = "live")]
        FixtureMode::Live | FixtureMode::Record => {
            let live = ingest::live::LiveTransport::from_env(ingest::live::LiveConfig {
                chart_base_url: config.ingest.chart_url.clone(),
                requests_per_second: config.ingest.requests_per_second,
                ..Default::default()
            })?;
            if config.ingest.mode == FixtureMode::Record {
                Ok(Box::new(ingest::RecordingTransport::new(live, &config.fixtures)))
            } else {
                Ok(Box::new(live))
            }
        }
        #[cfg(not(feature = "live"))]
        FixtureMode::Live | FixtureMode::Record => Err(Error::Config(
            "live and record modes need a build with the `live` feature".into(),
        )),
    }
}

pub struct IngestOutcome {
    pub tracks_path: PathBuf,
    pub tracks: Vec<TrackRecord>,
    pub summary: AcquisitionSummary,
}

pub fn ingest(config: &RunConfig) -> Result<IngestOutcome> {
    config.validate()?;
    let transport = transport(config).stage("ingest")?;
    let (tracks, summary) = ingest::acquire(&config.acquisition(), &transport).stage("ingest")?;
    let tracks_path = config.tracks_path();
    data::write_tracks_csv(&tracks, create(&tracks_path)?)?;
    write_key_values(&Layout::new(config).acquisition(), &summary.lines())?;
    Ok(IngestOutcome {
        tracks_path,
        tracks,
        summary,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PrepareOutcome {
    pub cleanup: CleanupSummary,
    /// `[non-hit, hit]` counts after cleanup.
    pub class_counts: [usize; 2],
    /// `[non-hit, hit]` counts of the rows that were balanced.
    pub balanced_counts: [usize; 2],
    #[serde(skip)]
    pub clean: Vec<TrackRecord>,
    #[serde(skip)]
    pub train: FeatureMatrix,
    #[serde(skip)]
    pub validation: FeatureMatrix,
}

/// Cleanup, class balancing and the train/validation split.
pub fn prepare(config: &RunConfig) -> Result<PrepareOutcome> {
    config.validate()?;
    let tracks_path = config.tracks_path();
    let tracks = data::read_tracks_csv(open(&tracks_path)?).stage("prepare")?;
    let (clean, cleanup) = preprocess::cleanup(&tracks);
    let matrix = data::to_feature_matrix(&clean).stage("prepare")?;
    let class_counts = matrix.class_counts();
    let mut rng = rng::substream(config.seed, rng::OVERSAMPLE);
    let split = config.split_spec();
    let (train, validation, balanced_counts) = match split.mode {
        BalanceMode::Pooled => {
            let balanced = preprocess::oversample(&matrix, &mut rng).stage("prepare")?;
            let counts = balanced.class_counts();
            let (train, validation) = data::split(&balanced, &split).stage("prepare")?;
            (train, validation, counts)
        }
        BalanceMode::Strict => {
            let (train, validation) = data::split(&matrix, &split).stage("prepare")?;
            let train = preprocess::oversample(&train, &mut rng).stage("prepare")?;
            let counts = train.class_counts();
            (train, validation, counts)
        }
    };

    let layout = Layout::new(config);
    data::write_tracks_csv(&clean, create(&layout.prepared("clean.csv"))?)?;
    train.write_csv(create(&layout.prepared("train.csv"))?)?;
    validation.write_csv(create(&layout.prepared("validation.csv"))?)?;
    let scaler = ScalerModel::fit(&train)?;
    scaler.apply(&train)?.write_csv(create(&layout.prepared("train_scaled.csv"))?)?;
    write_key_values(
        &layout.prepared("summary.csv"),
        &[
            ("input", cleanup.input),
            ("duplicate", cleanup.duplicate),
            ("missing_feature", cleanup.missing_feature),
            ("no_key", cleanup.no_key),
            ("kept", cleanup.kept),
            ("non_hits", class_counts[0]),
            ("hits", class_counts[1]),
            ("balanced_non_hits", balanced_counts[0]),
            ("balanced_hits", balanced_counts[1]),
            ("train_rows", train.n_rows()),
            ("validation_rows", validation.n_rows()),
        ],
    )?;
    Ok(PrepareOutcome {
        cleanup,
        class_counts,
        balanced_counts,
        clean,
        train,
        validation,
    })
}

fn load_prepared(config: &RunConfig) -> Result<(FeatureMatrix, FeatureMatrix)> {
    let layout = Layout::new(config);
    let train = FeatureMatrix::read_csv(open(&layout.prepared("train.csv"))?)?;
    let validation = FeatureMatrix::read_csv(open(&layout.prepared("validation.csv"))?)?;
    Ok((train, validation))
}

pub struct PcaOutcome {
    pub full: PcaModel,
    pub selected: PcaModel,
}

/// Fit PCA on the scaled training rows and report variance and loadings.
pub fn pca(config: &RunConfig) -> Result<PcaOutcome> {
    config.validate()?;
    let (train, _) = load_prepared(config).stage("pca")?;
    let scaled = ScalerModel::fit(&train)?.apply(&train)?;
    let full = pca::fit_pca(&scaled).stage("pca")?;
    let selected = full.select_components(config.pca_threshold).stage("pca")?;
    let layout = Layout::new(config);
    full.write_variance_csv(create(&layout.pca("variance.csv"))?)?;
    pca::write_loading_csv(&full.loading_report(), create(&layout.pca("loadings.csv"))?)?;
    write_key_values(&layout.pca("selection.csv"), &[("components", full.k()), ("selected", selected.k())])?;
    write_text(
        &layout.pca("cumulative_variance.svg"),
        &charts::cumulative_variance_svg(&full.cumulative_variance(), config.pca_threshold),
    )?;
    Ok(PcaOutcome { full, selected })
}

pub struct TrainOutcome {
    pub prepared: PrepareOutcome,
    pub pipelines: Vec<TrainedPipeline>,
    pub searches: Vec<(String, GridSearchResult)>,
    pub reports: Vec<EvalReport>,
}

/// Prepare, then fit every base model and every grid-searched variant,
/// writing model files and the validation report.
pub fn train(config: &RunConfig) -> Result<TrainOutcome> {
    let prepared = prepare(config)?;
    let layout = Layout::new(config);
    let models_dir = layout.models_dir();
    std::fs::create_dir_all(&models_dir).map_err(|e| Error::path(&models_dir, e))?;
    let mut pipelines = Vec::new();
    let mut searches = Vec::new();
    for &kind in &config.models {
        let name = model_name(kind, false);
        log::info!("training {name}");
        let p = fit_pipeline(&name, None, &config.training_spec(kind), &prepared.train).stage("train")?;
        pipelines.push(p);
    }
    for &kind in &config.opt_models {
        let name = model_name(kind, true);
        log::info!("grid search for {name}");
        let spec = PipelineSpec {
            name: name.clone(),
            pca_threshold: Some(config.pca_threshold),
            classifier: config.training_spec(kind),
            cv_folds: config.cv_folds,
            grid: config.grid(kind),
            seed: config.seed,
        };
        let result = grid_search(&spec, &prepared.train).stage("train")?;
        result.write_table_csv(create(&layout.models_dir().join(format!("{name}_grid.csv")))?)?;
        pipelines.push(result.best.clone());
        searches.push((name, result));
    }
    for p in &pipelines {
        p.save(layout.model(&p.name))?;
    }

    let reports = eval::compare(&pipelines, &[("validation", &prepared.validation)]).stage("train")?;
    eval::write_report_csv(&reports, create(&layout.report("validation_report.csv"))?)?;
    write_text(
        &layout.report("validation_metrics.svg"),
        &charts::metrics_bar_svg(&reports, "Validation metrics"),
    )?;
    let mut w = csv::Writer::from_writer(create(&layout.report("validation_predictions.csv"))?);
    w.write_record(["model", "id", "hit", "class", "probability"])?;
    for p in &pipelines {
        let predictions = p.predict_matrix(&prepared.validation)?;
        for (i, pred) in predictions.iter().enumerate() {
            w.write_record([
                p.name.clone(),
                prepared.validation.track_ids()[i].clone(),
                prepared.validation.label(i).to_string(),
                pred.class.to_string(),
                pred.probability.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(TrainOutcome {
        prepared,
        pipelines,
        searches,
        reports,
    })
}

/// Names of the configured models, base models first.
pub fn configured_models(config: &RunConfig) -> Vec<String> {
    config
        .models
        .iter()
        .map(|&k| model_name(k, false))
        .chain(config.opt_models.iter().map(|&k| model_name(k, true)))
        .collect()
}

pub struct EvaluateOutcome {
    pub reports: Vec<EvalReport>,
    pub test_rows: usize,
    /// Test rows whose id also appears among the training rows.
    pub test_train_overlap: usize,
}

/// Score the saved models on the validation split and on a balanced test
/// set of every hit plus an equal sample of non-hits.
pub fn evaluate(config: &RunConfig) -> Result<EvaluateOutcome> {
    config.validate()?;
    let layout = Layout::new(config);
    let (train, validation) = load_prepared(config).stage("evaluate")?;
    let clean = data::read_tracks_csv(open(&layout.prepared("clean.csv"))?).stage("evaluate")?;
    let pipelines = configured_models(config)
        .iter()
        .map(|name| TrainedPipeline::load(layout.model(name)))
        .collect::<Result<Vec<_>>>()
        .stage("evaluate")?;
    let mut rng = rng::substream(config.seed, rng::TEST_SET);
    let test = eval::build_test_set(&clean, &mut rng).stage("evaluate")?;
    let overlap = eval::overlap_count(&test, &train);
    test.write_csv(create(&layout.report("test_set.csv"))?)?;
    write_key_values(
        &layout.report("test_overlap.csv"),
        &[("test_rows", test.n_rows()), ("also_in_train", overlap)],
    )?;

    let reports = eval::compare(&pipelines, &[("validation", &validation), ("test", &test)]).stage("evaluate")?;
    eval::write_report_csv(&reports, create(&layout.report("report.csv"))?)?;
    let test_reports: Vec<EvalReport> = reports.iter().filter(|r| r.split == "test").cloned().collect();
    write_text(&layout.report("test_metrics.svg"), &charts::metrics_bar_svg(&test_reports, "Test metrics"))?;
    for r in &test_reports {
        write_text(
            &layout.report(&format!("confusion_{}.svg", r.model)),
            &charts::confusion_svg(&r.confusion, &format!("{} (test)", r.model)),
        )?;
    }
    Ok(EvaluateOutcome {
        reports,
        test_rows: test.n_rows(),
        test_train_overlap: overlap,
    })
}

/// Apply a saved model to every row of `input`; returns the number of rows.
pub fn predict(model: &Path, input: &Path, output: &Path) -> Result<usize> {
    let pipeline = TrainedPipeline::load(model).stage("predict")?;
    let rows = FeatureRows::read_csv(open(input)?, pipeline.feature_names()).stage("predict")?;
    let predictions = pipeline.predict_rows(&rows).stage("predict")?;
    let mut w = csv::Writer::from_writer(create(output)?);
    w.write_record(["id", "class", "probability"])?;
    for (id, p) in rows.ids.iter().zip(&predictions) {
        w.write_record([id.clone(), p.class.to_string(), p.probability.to_string()])?;
    }
    w.flush().map_err(|e| Error::path(output, e))?;
    Ok(predictions.len())
}

/// Redraw the charts from the report CSVs already on disk.
pub fn report(config: &RunConfig) -> Result<Vec<EvalReport>> {
    let layout = Layout::new(config);
    let path = layout.report("report.csv");
    let path = if path.is_file() { path } else { layout.report("validation_report.csv") };
    let reports = eval::read_report_csv(open(&path)?).stage("report")?;
    let mut splits: Vec<&str> = Vec::new();
    for r in &reports {
        if !splits.contains(&r.split.as_str()) {
            splits.push(&r.split);
        }
    }
    for split in splits {
        let subset: Vec<EvalReport> = reports.iter().filter(|r| r.split == split).cloned().collect();
        write_text(
            &layout.report(&format!("{split}_metrics.svg")),
            &charts::metrics_bar_svg(&subset, &format!("{split} metrics")),
        )?;
    }
    let variance = layout.pca("variance.csv");
    if variance.is_file() {
        let mut r = csv::Reader::from_reader(open(&variance)?);
        let cumulative = r
            .records()
            .map(|rec| {
                let rec = rec?;
                rec[2].parse::<f64>().map_err(|e| Error::Format(format!("{}: {e}", variance.display())))
            })
            .collect::<Result<Vec<f64>>>()?;
        write_text(
            &layout.pca("cumulative_variance.svg"),
            &charts::cumulative_variance_svg(&cumulative, config.pca_threshold),
        )?;
    }
    Ok(reports)
}
