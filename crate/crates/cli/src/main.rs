use std::collections::HashMap;
use std::fmt::Display;
use std::fs;
use std::io::{self, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rfexplain_core::data::{load_csv, Dataset, KindHint, DEFAULT_SENTINEL_FRACTION};
use rfexplain_core::forest::{Forest, ForestError, TrainParams};
use rfexplain_core::report::{self, ExplainRequest, InstanceDoc, ReportError, Technique};

/// Largest tolerated telescoping residual for `explain --verify`.
const VERIFY_TOLERANCE: f64 = 1e-9;

#[derive(Parser)]
#[command(name = "rfexplain", version, about = "Explain random forest predictions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a forest on a CSV file and write it as JSON.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Name of the binary label column.
        #[arg(long)]
        label: String,
        #[arg(long, default_value_t = 100)]
        trees: usize,
        #[arg(long, default_value_t = 12)]
        depth: usize,
        #[arg(long, default_value_t = 5)]
        min_leaf: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Treat this column as categorical (repeatable).
        #[arg(long = "categorical", value_name = "COLUMN")]
        categorical: Vec<String>,
        /// Placeholder values to flag as sentinels, comma separated.
        #[arg(long, value_delimiter = ',', value_name = "VALUES")]
        sentinels: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Explain one instance with a trained forest.
    Explain {
        #[arg(long)]
        model: PathBuf,
        /// JSON file holding `{"values": {...}}` or a positional array.
        #[arg(long)]
        instance: PathBuf,
        /// contribution, pd or rules; repeatable or comma separated.
        #[arg(long = "technique", value_delimiter = ',', required = true)]
        techniques: Vec<String>,
        /// Rule configuration JSON; missing fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Restrict the PD section to these features (repeatable).
        #[arg(long = "pd-feature", value_name = "FEATURE")]
        pd_features: Vec<String>,
        #[arg(long)]
        grid_points: Option<usize>,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Check that the contribution section telescopes to the prediction.
        #[arg(long)]
        verify: bool,
    },
    /// Summarize a CSV file: feature domains, missing values, sentinels, class counts.
    Profile {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        label: String,
        #[arg(long = "categorical", value_name = "COLUMN")]
        categorical: Vec<String>,
        #[arg(long, value_delimiter = ',', value_name = "VALUES")]
        sentinels: Vec<f64>,
        /// Also print the class histogram of this feature.
        #[arg(long)]
        histogram: Option<String>,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, env = "EXPLAIN_DATA_DIR", default_value = "explain-data")]
        data_dir: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
    },
}

enum Failure {
    /// Bad input: exit code 2.
    Usage(String),
    /// Anything else: exit code 1.
    Runtime(String),
}

fn usage(e: impl Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn runtime(e: impl Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            data,
            label,
            trees,
            depth,
            min_leaf,
            seed,
            categorical,
            sentinels,
            out,
        } => {
            let params = TrainParams {
                n_trees: trees,
                max_depth: depth,
                min_samples_leaf: min_leaf,
                seed,
                ..TrainParams::default()
            };
            train(&data, &label, &categorical, &sentinels, &params, &out)
        }
        Command::Explain {
            model,
            instance,
            techniques,
            config,
            pd_features,
            grid_points,
            out,
            verify,
        } => explain(
            &model,
            &instance,
            &techniques,
            config.as_deref(),
            &pd_features,
            grid_points,
            out.as_deref(),
            verify,
        ),
        Command::Profile {
            data,
            label,
            categorical,
            sentinels,
            histogram,
            bins,
        } => profile(&data, &label, &categorical, &sentinels, histogram.as_deref(), bins),
        Command::Serve { data_dir, port, host } => serve(data_dir, SocketAddr::new(host, port)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}

fn load_dataset(path: &Path, label: &str, categorical: &[String], sentinels: &[f64]) -> Result<Dataset, Failure> {
    let hints: HashMap<String, KindHint> = categorical.iter().map(|c| (c.clone(), KindHint::Categorical)).collect();
    let dataset = load_csv(path, label, &hints).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    if sentinels.is_empty() {
        return Ok(dataset);
    }
    dataset
        .flag_sentinels(sentinels, DEFAULT_SENTINEL_FRACTION)
        .map_err(usage)
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(path) => fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display()))),
        None => match writeln!(io::stdout().lock(), "{text}") {
            Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(runtime(e)),
            _ => Ok(()),
        },
    }
}

fn train(
    data: &Path,
    label: &str,
    categorical: &[String],
    sentinels: &[f64],
    params: &TrainParams,
    out: &Path,
) -> Result<(), Failure> {
    let dataset = load_dataset(data, label, categorical, sentinels)?;
    let forest = Forest::train(&dataset, params).map_err(|e| match e {
        ForestError::InvalidParams(_) | ForestError::SingleClass => usage(e),
        other => runtime(other),
    })?;
    forest
        .save(out)
        .map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    match forest.oob_error() {
        Some(error) => println!("oob_error={error}"),
        None => println!("oob_error=NA"),
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn explain(
    model: &Path,
    instance: &Path,
    techniques: &[String],
    config: Option<&Path>,
    pd_features: &[String],
    grid_points: Option<usize>,
    out: Option<&Path>,
    verify: bool,
) -> Result<(), Failure> {
    let forest = Forest::load(model).map_err(|e| usage(format!("{}: {e}", model.display())))?;
    let read_json = |path: &Path| -> Result<serde_json::Value, Failure> {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
    };
    let instance: InstanceDoc =
        serde_json::from_value(read_json(instance)?).map_err(|e| usage(format!("{}: {e}", instance.display())))?;
    let techniques = techniques
        .iter()
        .map(|t| t.parse::<Technique>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(usage)?;
    let config = config.map(read_json).transpose()?;
    let pd = if pd_features.is_empty() && grid_points.is_none() {
        None
    } else {
        let mut pd = serde_json::Map::new();
        if !pd_features.is_empty() {
            pd.insert("features".into(), pd_features.into());
        }
        if let Some(n) = grid_points {
            pd.insert("grid_points".into(), n.into());
        }
        Some(serde_json::Value::Object(pd))
    };
    let request = ExplainRequest {
        instance,
        techniques,
        config,
        pd,
    };
    let report = report::explain(&forest, &request).map_err(|e| match e {
        ReportError::Rules(_) | ReportError::Sensitivity(_) if !e.is_config() => runtime(e),
        other => usage(other),
    })?;
    write_output(out, &report.to_json())?;

    if verify {
        let contribution = match &report.contribution {
            Some(doc) => doc.clone(),
            None => {
                let values = request.instance.resolve(&forest).map_err(usage)?;
                rfexplain_core::contribution::forest_contribution(&forest, &values)
                    .map_err(usage)?
                    .to_doc()
            }
        };
        let residual = contribution.residual();
        if residual.abs() > VERIFY_TOLERANCE || contribution.prediction != report.prediction {
            return Err(runtime(format!("verify failed: telescoping residual {residual:e}")));
        }
        eprintln!("verify ok: telescoping residual {residual:e}");
    }
    Ok(())
}

fn profile(
    data: &Path,
    label: &str,
    categorical: &[String],
    sentinels: &[f64],
    histogram: Option<&str>,
    bins: usize,
) -> Result<(), Failure> {
    let dataset = load_dataset(data, label, categorical, sentinels)?;
    let mut summary = serde_json::json!({
        "n_rows": dataset.n_rows(),
        "class_names": dataset.class_names,
        "class_counts": dataset.class_counts(),
        "features": dataset.features,
    });
    if let Some(feature) = histogram {
        let h = dataset
            .class_histogram(feature, bins, !sentinels.is_empty())
            .map_err(usage)?;
        summary["histogram"] = serde_json::to_value(h).map_err(runtime)?;
    }
    write_output(None, &serde_json::to_string_pretty(&summary).map_err(runtime)?)
}

fn serve(data_dir: PathBuf, addr: SocketAddr) -> Result<(), Failure> {
    let runtime_handle = tokio::runtime::Runtime::new().map_err(runtime)?;
    runtime_handle.block_on(async move {
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        rfexplain_service::serve(data_dir, addr, shutdown, |bound| {
            eprintln!("listening on http://{bound}");
        })
        .await
        .map_err(runtime)
    })
}
