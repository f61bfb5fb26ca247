use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hitsong::config::RunConfig;
use hitsong::eval::{EvalReport, Ratio};
use hitsong::runner;
use hitsong::synth::{self, SynthConfig};
use hitsong::Error;

/// Hit-song prediction from Spotify audio features.
#[derive(Parser)]
#[command(name = "hitsong", version)]
struct Cli {
    /// Run configuration file (dotted key=value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for every random stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override any configuration key, e.g. `--set models.svm.C=1`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect hits and non-hits into a tracks CSV.
    Ingest {
        #[arg(long)]
        fixtures: Option<PathBuf>,
        /// replay, record or live.
        #[arg(long)]
        mode: Option<String>,
        /// Tracks CSV to write.
        #[arg(long)]
        tracks: Option<PathBuf>,
    },
    /// Clean, balance and split the tracks CSV.
    Prepare {
        #[arg(long)]
        tracks: Option<PathBuf>,
    },
    /// Principal component analysis of the training split.
    Pca,
    /// Prepare, then train every configured model.
    Train {
        #[arg(long)]
        tracks: Option<PathBuf>,
    },
    /// Score trained models on the validation split and a balanced test set.
    Evaluate,
    /// Classify the rows of a CSV with a saved model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Redraw charts from existing report CSVs.
    Report,
    /// Record a fixture set from the built-in synthetic catalog.
    Synth {
        #[arg(long, default_value = "fixtures")]
        fixtures: PathBuf,
        #[arg(long, default_value_t = 2020)]
        first_year: i32,
        #[arg(long, default_value_t = 2021)]
        last_year: i32,
        #[arg(long, default_value_t = 180)]
        requests: usize,
        #[arg(long, default_value_t = 10)]
        keep: usize,
        /// Also write a run configuration that replays the fixtures.
        #[arg(long)]
        write_config: Option<PathBuf>,
    },
}

fn build_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{o}`")))?;
        config.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    if let Some(threads) = cli.threads {
        config.threads = threads;
    }
    Ok(config)
}

fn ratio(r: Ratio) -> String {
    r.value().map_or_else(|| r.to_string(), |v| format!("{v:.4}"))
}

fn print_reports(reports: &[EvalReport]) {
    println!("{:<10} {:<10} {:>5} {:>5} {:>5} {:>5} {:>9} {:>9} {:>9}", "model", "split", "tp", "fp", "tn", "fn", "accuracy", "precision", "recall");
    for r in reports {
        let c = &r.confusion;
        println!(
            "{:<10} {:<10} {:>5} {:>5} {:>5} {:>5} {:>9.4} {:>9} {:>9}",
            r.model, r.split, c.tp, c.fp, c.tn, c.fn_, r.metrics.accuracy,
            ratio(r.metrics.precision), ratio(r.metrics.recall)
        );
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut config = build_config(&cli)?;
    let threads = config.threads;
    match cli.command {
        Command::Ingest { fixtures, mode, tracks } => {
            if let Some(f) = fixtures {
                config.fixtures = f;
            }
            if let Some(m) = mode {
                config.set("ingest.mode", &m)?;
            }
            if tracks.is_some() {
                config.tracks = tracks;
            }
            let outcome = runner::with_threads(threads, || runner::ingest(&config))??;
            for (k, v) in outcome.summary.lines() {
                println!("{k:<26} {v}");
            }
            println!("wrote {}", outcome.tracks_path.display());
        }
        Command::Prepare { tracks } => {
            if tracks.is_some() {
                config.tracks = tracks;
            }
            let p = runner::with_threads(threads, || runner::prepare(&config))??;
            let c = &p.cleanup;
            println!("input {} kept {} (duplicate {}, missing feature {}, no key {})", c.input, c.kept, c.duplicate, c.missing_feature, c.no_key);
            println!("classes non-hit {} hit {}", p.class_counts[0], p.class_counts[1]);
            println!("balanced non-hit {} hit {}", p.balanced_counts[0], p.balanced_counts[1]);
            println!("train {} validation {}", p.train.n_rows(), p.validation.n_rows());
        }
        Command::Pca => {
            let p = runner::with_threads(threads, || runner::pca(&config))??;
            let cumulative = p.full.cumulative_variance();
            for (i, (r, c)) in p.full.explained_variance_ratio.iter().zip(&cumulative).enumerate() {
                println!("PC{:<3} {r:.4} {c:.4}", i + 1);
            }
            println!("threshold {} keeps {} of {} components", config.pca_threshold, p.selected.k(), p.full.k());
        }
        Command::Train { tracks } => {
            if tracks.is_some() {
                config.tracks = tracks;
            }
            let t = runner::with_threads(threads, || runner::train(&config))??;
            for (name, s) in &t.searches {
                let params: Vec<String> = s.best_params.iter().map(|(k, v)| format!("{k}={v}")).collect();
                println!("{name}: best {} (cv accuracy {:.4})", params.join(" "), s.mean_accuracy[s.best_index]);
            }
            print_reports(&t.reports);
        }
        Command::Evaluate => {
            let e = runner::with_threads(threads, || runner::evaluate(&config))??;
            print_reports(&e.reports);
            println!("test rows {} ({} also in training)", e.test_rows, e.test_train_overlap);
        }
        Command::Predict { model, input, output } => {
            let n = runner::with_threads(threads, || runner::predict(&model, &input, &output))??;
            println!("wrote {n} predictions to {}", output.display());
        }
        Command::Report => {
            let reports = runner::report(&config)?;
            print_reports(&reports);
        }
        Command::Synth { fixtures, first_year, last_year, requests, keep, write_config } => {
            let synth = SynthConfig {
                seed: config.seed,
                first_year,
                last_year,
                sample_requests: requests,
                keep_per_request: keep,
                ..SynthConfig::default()
            };
            let (_, summary) = synth::write_fixtures(&fixtures, &synth)?;
            for (k, v) in summary.lines() {
                println!("{k:<26} {v}");
            }
            if let Some(path) = write_config {
                config.fixtures = fixtures;
                config.ingest.first_year = first_year;
                config.ingest.last_year = last_year;
                config.ingest.requests = requests;
                config.ingest.keep = keep;
                config.save(&path)?;
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
