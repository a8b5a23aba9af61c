use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use annoforge::clock::SystemClock;
use annoforge::config::{self, ConfigOverrides, ServerConfig};
use annoforge::dataset::{DatasetSelection, ExportFormat, ExportOptions};
use annoforge::evaluation::ClassReport;
use annoforge::gateway::client::WorkerClient;
use annoforge::ids::{ModelId, WorkerId};
use annoforge::platform::Platform;

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Parser)]
#[command(name = "annoforge", version, about = "Polygon annotation server with active learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the HTTP server.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Split a selection and write an export bundle.
    Export {
        /// JSON file holding a dataset selection.
        #[arg(long)]
        selection: PathBuf,
        #[arg(long, default_value = "canonical")]
        format: String,
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        copy_images: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Answer pending training jobs with noise-perturbed ground truth.
    MockWorker {
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Talk to a running server instead of opening the data root.
        #[arg(long)]
        server: Option<String>,
        #[arg(long, default_value = "mock-worker")]
        worker_id: String,
        /// Keep claiming until the queue is empty.
        #[arg(long)]
        drain: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Per-class mean IoU rows for a model, recomputed from stored predictions.
    Report {
        #[arg(long)]
        model: String,
        #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
        format: ReportFormat,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
    Csv,
}

fn open_platform(config: Option<PathBuf>, overrides: ConfigOverrides) -> Result<Platform, BoxError> {
    let cfg = config::resolve(config.as_deref(), overrides)?;
    Ok(Platform::open(cfg, Arc::new(SystemClock))?)
}

/// Write to stdout; a closed pipe is not an error.
fn emit(text: &str) -> Result<(), BoxError> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

fn report_csv(rows: &[ClassReport]) -> String {
    let mut out = String::from("model_id,label_id,training_instance,mean_iou,matched,missed_ground_truth,spurious_predictions\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            csv_field(r.model_id.as_str()),
            csv_field(r.label_id.as_str()),
            r.training_instance,
            r.mean_iou,
            r.matched,
            r.missed_ground_truth,
            r.spurious_predictions
        ));
    }
    out
}

fn run(cli: Cli) -> Result<(), BoxError> {
    match cli.command {
        Command::Serve { config, overrides } => {
            let cfg = config::resolve(config.as_deref(), overrides)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(annoforge::server::serve(cfg))?;
        }
        Command::Export {
            selection,
            format,
            ratio,
            seed,
            out,
            copy_images,
            config,
            overrides,
        } => {
            let text = fs::read_to_string(&selection).map_err(|e| format!("{}: {e}", selection.display()))?;
            let sel: DatasetSelection =
                serde_json::from_str(&text).map_err(|e| format!("{}: {e}", selection.display()))?;
            let format: ExportFormat = format.parse()?;
            let platform = open_platform(config, overrides)?;
            let (manifest, path) = platform.export(&sel, format, ratio, seed, Some(out), ExportOptions { copy_images })?;
            eprintln!(
                "wrote {} train / {} eval images to {}",
                manifest.counts.train_images,
                manifest.counts.eval_images,
                path.display()
            );
            emit(&format!("{}\n", serde_json::to_string_pretty(&manifest)?))?;
        }
        Command::MockWorker {
            noise,
            seed,
            server,
            worker_id,
            drain,
            config,
            overrides,
        } => {
            let worker = WorkerId::new(worker_id);
            let mut runs = 0usize;
            match server {
                Some(url) => {
                    let client = WorkerClient::new(&url, worker);
                    let min_iou = overrides.match_min_iou.unwrap_or(ServerConfig::default().match_min_iou);
                    while let Some(run) = client.run_mock_once(noise, seed, min_iou)? {
                        eprintln!("{}: {} predictions, {} metrics", run.job_id, run.predictions, run.metrics);
                        runs += 1;
                        if !drain {
                            break;
                        }
                    }
                }
                None => {
                    let platform = open_platform(config, overrides)?;
                    while let Some(run) = platform.run_mock_worker(&worker, noise, seed)? {
                        emit(&format!("{}\n", serde_json::to_string(&run)?))?;
                        runs += 1;
                        if !drain {
                            break;
                        }
                    }
                }
            }
            if runs == 0 {
                eprintln!("no pending jobs");
            }
        }
        Command::Report {
            model,
            format,
            config,
            overrides,
        } => {
            let platform = open_platform(config, overrides)?;
            let rows = platform.model_report(&ModelId::new(model))?;
            match format {
                ReportFormat::Json => emit(&format!("{}\n", serde_json::to_string_pretty(&rows)?))?,
                ReportFormat::Csv => emit(&report_csv(&rows))?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
