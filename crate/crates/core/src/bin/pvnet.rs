use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pvnet::featurizer::FeatureMapKind;
use pvnet::harness::{self, FeatureSelection, HarnessError, Query, RunConfig, RunOptions, Snapshot};

/// Polynomial-vector back-propagation on VCR diesel engine data.
#[derive(Debug, Parser)]
#[command(name = "pvnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// JSON file with the same keys as the long flags (snake_case); flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    options: RunOptions,
}

impl Common {
    fn resolve(self, default_map: FeatureSelection) -> Result<RunConfig, HarnessError> {
        let file = match &self.config {
            Some(path) => RunOptions::from_json_file(path)?,
            None => RunOptions::default(),
        };
        RunConfig::resolve(self.options.over(file), default_map)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one feature map; writes snapshot.json, report.json and trace.csv.
    Train(Common),
    /// Predict from a snapshot for `biodiesel,speed` queries (diesel = 100 - biodiesel).
    Predict {
        #[arg(long)]
        snapshot: PathBuf,
        /// Repeatable, e.g. `--query 25,2600`.
        #[arg(long = "query")]
        queries: Vec<String>,
        /// CSV with biodiesel_pct[,speed_rpm] columns.
        #[arg(long)]
        inputs: Option<PathBuf>,
    },
    /// Train linear and NL1..NL6 under identical settings and write figure data.
    Compare(Common),
    /// Summary statistics for the engine or emission table.
    DatasetStats(Common),
    /// Expand a comma-separated vector with one feature map.
    Featurize {
        #[arg(long, allow_hyphen_values = true)]
        vector: String,
        #[arg(long)]
        feature_map: String,
    },
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Train(common) => {
            let cfg = common.resolve(FeatureSelection::One(FeatureMapKind::Nl6))?;
            let out = harness::cmd_train(&cfg)?;
            let t = &out.report.training;
            eprintln!(
                "{}: {} epochs, final MSE {:.6}, target {}",
                out.snapshot.feature_map,
                t.epochs_executed,
                t.final_mse,
                match t.epochs_to_target {
                    Some(e) => format!("reached at epoch {e}"),
                    None => "not reached".into(),
                }
            );
            for f in &out.files {
                println!("{}", f.display());
            }
        }
        Command::Predict {
            snapshot,
            queries,
            inputs,
        } => {
            let snap = Snapshot::load(&snapshot)?;
            let mut qs = queries
                .iter()
                .map(|q| Query::parse(q))
                .collect::<Result<Vec<_>, _>>()?;
            if let Some(path) = inputs {
                qs.extend(harness::read_queries(&path)?);
            }
            print!("{}", harness::cmd_predict(&snap, &qs)?);
        }
        Command::Compare(common) => {
            let cfg = common.resolve(FeatureSelection::All)?;
            let out = harness::cmd_compare(&cfg)?;
            for v in &out.report.variants {
                eprintln!(
                    "{:>6}: final MSE {:.6}, epochs to target {}",
                    v.feature_map.name(),
                    v.final_mse.unwrap_or(f64::NAN),
                    v.epochs_to_target
                        .map_or_else(|| "-".to_string(), |e| e.to_string())
                );
            }
            for f in &out.files {
                println!("{}", f.display());
            }
        }
        Command::DatasetStats(common) => {
            let cfg = common.resolve(FeatureSelection::All)?;
            let stats = harness::cmd_dataset_stats(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::Featurize {
            vector,
            feature_map,
        } => print!("{}", harness::cmd_featurize(&vector, &feature_map)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
