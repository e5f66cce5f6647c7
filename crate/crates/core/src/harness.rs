//! Command implementations behind the `pvnet` binary.
//!
//! Every command takes a fully resolved [`RunConfig`] and returns its data; the
//! binary only parses flags, prints, and maps errors to exit codes:
//!
//! | code | meaning                                        |
//! |------|------------------------------------------------|
//! | 0    | success                                        |
//! | 1    | I/O or serialization failure                   |
//! | 2    | invalid configuration, query or snapshot       |
//! | 3    | dataset error                                  |
//! | 4    | target MSE not reached with `--require-target` |
//! | 5    | at least one comparison variant failed         |

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    self, Cleaning, Column, ConstantColumns, CorpusError, Dataset, NormalizationParams, Record,
    Source, SplitPolicy, DEFAULT_RANGE,
};
use crate::engine_metrics::{self, MetricsError};
use crate::featurizer::{self, FeatureError, FeatureMapKind};
use crate::mlp::{
    self, LayerSizes, MlpError, NetworkSpec, NetworkState, PresentationOrder, TrainingConfig,
    TrainingPattern, TrainingReport, UpdateMode,
};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "PVNET_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "pvnet-out";

pub const SNAPSHOT_SCHEMA: &str = "pvnet.snapshot/v1";
pub const TRAIN_REPORT_SCHEMA: &str = "pvnet.train-report/v1";
pub const COMPARISON_SCHEMA: &str = "pvnet.comparison/v1";
pub const STATS_SCHEMA: &str = "pvnet.dataset-stats/v1";

pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const REPORT_FILE: &str = "report.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const COMPARISON_FILE: &str = "comparison.json";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("dataset error: {0}")]
    Dataset(#[from] CorpusError),
    #[error("{0}")]
    Feature(#[from] FeatureError),
    #[error("training failed: {0}")]
    Training(#[from] MlpError),
    #[error("{0}")]
    Metrics(#[from] MetricsError),
    #[error("target MSE {target} not reached after {epochs} epochs (final MSE {final_mse})")]
    NotConverged {
        target: f64,
        epochs: usize,
        final_mse: f64,
    },
    #[error("{} comparison variant(s) failed: {}", .0.len(), .0.join("; "))]
    VariantsFailed(Vec<String>),
    #[error("invalid snapshot: {0}")]
    Snapshot(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::InvalidConfig(_)
            | HarnessError::Feature(_)
            | HarnessError::Snapshot(_) => 2,
            HarnessError::Dataset(_) | HarnessError::Metrics(_) => 3,
            HarnessError::NotConverged { .. } => 4,
            HarnessError::VariantsFailed(_) => 5,
            HarnessError::Training(_) | HarnessError::Io { .. } | HarnessError::Json(_) => 1,
        }
    }
}

fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::InvalidConfig(msg.into())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Engine,
    Emission,
}

/// `bundled` / `bundled-engine`, `bundled-emissions`, or a CSV path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(into = "String")]
pub enum DatasetArg {
    BundledEngine,
    BundledEmissions,
    File(PathBuf),
}

impl From<DatasetArg> for String {
    fn from(d: DatasetArg) -> String {
        match d {
            DatasetArg::BundledEngine => "bundled".into(),
            DatasetArg::BundledEmissions => "bundled-emissions".into(),
            DatasetArg::File(p) => p.display().to_string(),
        }
    }
}

impl DatasetArg {
    pub fn parse(s: &str) -> Self {
        match s.trim() {
            "bundled" | "bundled-engine" => DatasetArg::BundledEngine,
            "bundled-emissions" | "bundled-emission" => DatasetArg::BundledEmissions,
            other => DatasetArg::File(PathBuf::from(other)),
        }
    }

    /// Engine or emission table; files are recognised by an `hc` header column.
    pub fn kind(&self) -> Result<DatasetKind, HarnessError> {
        match self {
            DatasetArg::BundledEngine => Ok(DatasetKind::Engine),
            DatasetArg::BundledEmissions => Ok(DatasetKind::Emission),
            DatasetArg::File(path) => {
                let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
                    path: path.clone(),
                    source,
                })?;
                let header = text.lines().next().ok_or(CorpusError::Empty)?;
                if header.split(',').any(|h| h.trim() == "hc") {
                    Ok(DatasetKind::Emission)
                } else {
                    Ok(DatasetKind::Engine)
                }
            }
        }
    }

    fn source(&self) -> Source {
        match self {
            DatasetArg::File(p) => Source::File(p.clone()),
            _ => Source::Bundled,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(into = "String")]
pub enum FeatureSelection {
    All,
    One(FeatureMapKind),
}

impl From<FeatureSelection> for String {
    fn from(f: FeatureSelection) -> String {
        match f {
            FeatureSelection::All => "all".into(),
            FeatureSelection::One(k) => k.name().into(),
        }
    }
}

impl FeatureSelection {
    pub fn parse(s: &str) -> Result<Self, HarnessError> {
        if s.trim().eq_ignore_ascii_case("all") {
            Ok(FeatureSelection::All)
        } else {
            Ok(FeatureSelection::One(s.parse()?))
        }
    }

    /// Concrete variants for an input of `nf` features. `All` drops the maps that
    /// need cross-products when `nf = 1`.
    pub fn variants(self, nf: usize) -> Vec<FeatureMapKind> {
        match self {
            FeatureSelection::One(k) => vec![k],
            FeatureSelection::All => FeatureMapKind::ALL
                .into_iter()
                .filter(|k| nf >= 2 || !k.needs_pairs())
                .collect(),
        }
    }
}

fn parse_targets(s: &str, kind: DatasetKind) -> Result<Vec<Column>, HarnessError> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let cols: Vec<Column> = match (part.to_ascii_lowercase().as_str(), kind) {
            ("all", DatasetKind::Engine) => vec![Column::PowerKw, Column::TorqueNm, Column::Sfc],
            ("all", DatasetKind::Emission) => vec![Column::Hc, Column::Co],
            ("power" | "power_kw", DatasetKind::Engine) => vec![Column::PowerKw],
            ("torque" | "torque_nm", DatasetKind::Engine) => vec![Column::TorqueNm],
            ("sfc", DatasetKind::Engine) => vec![Column::Sfc],
            ("hc", DatasetKind::Emission) => vec![Column::Hc],
            ("co", DatasetKind::Emission) => vec![Column::Co],
            (other, k) => {
                return Err(invalid(format!(
                    "target `{other}` is not available on the {k:?} dataset"
                )))
            }
        };
        for c in cols {
            if !out.contains(&c) {
                out.push(c);
            }
        }
    }
    if out.is_empty() {
        return Err(invalid("no targets selected"));
    }
    Ok(out)
}

/// Flat option set shared by the CLI flags and the JSON config file.
/// Flags override file values; anything left unset takes its default.
#[derive(Debug, Clone, Default, PartialEq, clap::Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunOptions {
    /// `bundled`, `bundled-emissions`, or a CSV path.
    #[arg(long)]
    pub dataset: Option<String>,
    /// linear, nl1..nl6, or all.
    #[arg(long)]
    pub feature_map: Option<String>,
    /// Comma-separated: power, torque, sfc, hc, co, all.
    #[arg(long)]
    pub targets: Option<String>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub target_mse: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// paper or textbook.
    #[arg(long)]
    pub update_mode: Option<String>,
    /// Hold out one blend level (e.g. `20` or `B20`) as the evaluation set.
    #[arg(long)]
    pub holdout: Option<String>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Disable complement-fill cleaning.
    #[arg(long)]
    pub raw: bool,
    /// Keep the constant full-load column, mapped to the range midpoint.
    #[arg(long)]
    pub keep_constant: bool,
    /// Add an always-1 input to the input and hidden layers.
    #[arg(long)]
    pub bias: bool,
    /// Reshuffle the presentation order every epoch.
    #[arg(long)]
    pub shuffle: bool,
    /// Exit 4 when the target MSE is not reached.
    #[arg(long)]
    pub require_target: bool,
}

impl RunOptions {
    pub fn from_json_file(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
    }

    /// `self` overriding `file`.
    pub fn over(self, file: RunOptions) -> RunOptions {
        RunOptions {
            dataset: self.dataset.or(file.dataset),
            feature_map: self.feature_map.or(file.feature_map),
            targets: self.targets.or(file.targets),
            hidden: self.hidden.or(file.hidden),
            eta: self.eta.or(file.eta),
            seed: self.seed.or(file.seed),
            target_mse: self.target_mse.or(file.target_mse),
            max_epochs: self.max_epochs.or(file.max_epochs),
            update_mode: self.update_mode.or(file.update_mode),
            holdout: self.holdout.or(file.holdout),
            out_dir: self.out_dir.or(file.out_dir),
            raw: self.raw || file.raw,
            keep_constant: self.keep_constant || file.keep_constant,
            bias: self.bias || file.bias,
            shuffle: self.shuffle || file.shuffle,
            require_target: self.require_target || file.require_target,
        }
    }
}

/// A fully defaulted and validated run configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub dataset: DatasetArg,
    pub dataset_kind: DatasetKind,
    pub feature_map: FeatureSelection,
    pub targets: Vec<Column>,
    pub hidden: usize,
    pub eta: f64,
    pub seed: u64,
    pub target_mse: f64,
    pub max_epochs: usize,
    pub update_mode: UpdateMode,
    pub order: PresentationOrder,
    pub bias: bool,
    pub holdout: Option<f64>,
    pub raw: bool,
    pub keep_constant: bool,
    pub require_target: bool,
    pub range: (f64, f64),
    #[serde(skip)]
    pub out_dir: PathBuf,
}

impl RunConfig {
    /// Applies defaults and validates. `default_map` differs per command.
    pub fn resolve(opts: RunOptions, default_map: FeatureSelection) -> Result<Self, HarnessError> {
        let dataset = DatasetArg::parse(opts.dataset.as_deref().unwrap_or("bundled"));
        let dataset_kind = dataset.kind()?;
        let feature_map = match opts.feature_map.as_deref() {
            Some(s) => FeatureSelection::parse(s)?,
            None => default_map,
        };
        let targets = parse_targets(opts.targets.as_deref().unwrap_or("all"), dataset_kind)?;
        let update_mode = match opts.update_mode.as_deref().unwrap_or("paper") {
            "paper" | "paper-sequential" => UpdateMode::PaperSequential,
            "textbook" | "textbook-simultaneous" => UpdateMode::TextbookSimultaneous,
            other => return Err(invalid(format!("unknown update mode `{other}`"))),
        };
        let holdout = opts
            .holdout
            .as_deref()
            .map(|h| {
                h.trim()
                    .trim_start_matches(['B', 'b'])
                    .parse::<f64>()
                    .map_err(|_| invalid(format!("holdout `{h}` is not a blend level")))
            })
            .transpose()?;
        let out_dir = opts
            .out_dir
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));

        let cfg = RunConfig {
            dataset,
            dataset_kind,
            feature_map,
            targets,
            hidden: opts.hidden.unwrap_or(mlp::DEFAULT_HIDDEN),
            eta: opts.eta.unwrap_or(mlp::DEFAULT_ETA),
            seed: opts.seed.unwrap_or(42),
            target_mse: opts.target_mse.unwrap_or(mlp::DEFAULT_TARGET_MSE),
            max_epochs: opts.max_epochs.unwrap_or(mlp::DEFAULT_MAX_EPOCHS),
            update_mode,
            order: if opts.shuffle {
                PresentationOrder::Shuffled
            } else {
                PresentationOrder::Sequential
            },
            bias: opts.bias,
            holdout,
            raw: opts.raw,
            keep_constant: opts.keep_constant,
            require_target: opts.require_target,
            range: DEFAULT_RANGE,
            out_dir,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), HarnessError> {
        if self.hidden == 0 {
            return Err(invalid("hidden size must be >= 1"));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(invalid(format!("eta must be > 0, got {}", self.eta)));
        }
        self.training_config()
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        let nf = self.input_columns().len();
        for kind in self.feature_map.variants(nf) {
            if kind.needs_pairs() && nf < 2 {
                return Err(FeatureError::SingleFeature(kind).into());
            }
        }
        Ok(())
    }

    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            target_mse: self.target_mse,
            max_epochs: self.max_epochs,
            order: self.order,
        }
    }

    pub fn input_columns(&self) -> Vec<Column> {
        match self.dataset_kind {
            DatasetKind::Emission => vec![Column::BlendPct],
            DatasetKind::Engine if self.keep_constant => vec![
                Column::FullLoad,
                Column::BiodieselPct,
                Column::DieselPct,
                Column::SpeedRpm,
            ],
            DatasetKind::Engine => vec![Column::BiodieselPct, Column::DieselPct, Column::SpeedRpm],
        }
    }

    fn cleaning(&self) -> Cleaning {
        if self.raw {
            Cleaning::Raw
        } else {
            Cleaning::ComplementFill
        }
    }

    fn network_spec(&self, input: usize) -> NetworkSpec {
        NetworkSpec {
            sizes: LayerSizes::new(input, self.hidden, self.targets.len()),
            eta: self.eta,
            mode: self.update_mode,
            bias: self.bias,
        }
    }

    /// SHA-256 of the config echo.
    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Loaded, split and scaled data ready for any feature map.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub input_columns: Vec<Column>,
    pub target_columns: Vec<Column>,
    pub input_norm: NormalizationParams,
    pub target_norm: NormalizationParams,
    pub digest: String,
    /// 1-based rows used for training / evaluation.
    pub train_rows: Vec<usize>,
    pub eval_rows: Vec<usize>,
    /// Raw and scaled values for every source row.
    raw_targets: Vec<Vec<f64>>,
    scaled_inputs: Vec<Vec<f64>>,
    scaled_targets: Vec<Vec<f64>>,
}

fn prepare_from<R: Record>(cfg: &RunConfig, data: &Dataset<R>) -> Result<Prepared, HarnessError> {
    let input_columns = cfg.input_columns();
    let target_columns = cfg.targets.clone();
    let policy = match cfg.holdout {
        Some(b) => SplitPolicy::LeaveBlendOut(b),
        None => SplitPolicy::AllTrain,
    };
    let split = corpus::split(data, &policy)?;
    let constant = if cfg.keep_constant {
        ConstantColumns::Midpoint
    } else {
        ConstantColumns::Reject
    };
    let input_norm = corpus::fit_normalizer(&split.train, &input_columns, cfg.range, constant)?;
    let target_norm = corpus::fit_normalizer(&split.train, &target_columns, cfg.range, constant)?;

    let raw_inputs = data.rows(&input_columns)?;
    let raw_targets = data.rows(&target_columns)?;
    let scaled_inputs = raw_inputs
        .iter()
        .map(|x| input_norm.normalize(x))
        .collect::<Result<_, _>>()?;
    let scaled_targets = raw_targets
        .iter()
        .map(|y| target_norm.normalize(y))
        .collect::<Result<_, _>>()?;
    let eval_rows = if cfg.holdout.is_some() {
        split.test_rows.clone()
    } else {
        (1..=data.len()).collect()
    };
    Ok(Prepared {
        input_columns,
        target_columns,
        input_norm,
        target_norm,
        digest: data.digest(),
        train_rows: split.train_rows,
        eval_rows,
        raw_targets,
        scaled_inputs,
        scaled_targets,
    })
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared, HarnessError> {
    let source = cfg.dataset.source();
    match cfg.dataset_kind {
        DatasetKind::Engine => {
            prepare_from(cfg, &corpus::load_engine_dataset(&source, cfg.cleaning())?)
        }
        DatasetKind::Emission => prepare_from(cfg, &corpus::load_emission_dataset(&source)?),
    }
}

impl Prepared {
    fn patterns(&self, rows: &[usize], kind: FeatureMapKind) -> Result<Vec<TrainingPattern>, HarnessError> {
        rows.iter()
            .map(|&r| {
                Ok(TrainingPattern {
                    input: featurizer::featurize(&self.scaled_inputs[r - 1], kind)?.values,
                    target: self.scaled_targets[r - 1].clone(),
                })
            })
            .collect()
    }

    pub fn training_patterns(&self, kind: FeatureMapKind) -> Result<Vec<TrainingPattern>, HarnessError> {
        self.patterns(&self.train_rows, kind)
    }
}

/// Denormalized actual vs estimated values for one evaluation row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub pattern_index: usize,
    pub actual: Vec<f64>,
    pub estimated: Vec<f64>,
    pub residual: Vec<f64>,
    pub extrapolated: bool,
}

/// Result of training one feature map.
#[derive(Debug, Clone)]
pub struct VariantRun {
    pub kind: FeatureMapKind,
    pub network: NetworkState,
    pub report: TrainingReport,
    pub estimates: Vec<Estimate>,
}

pub fn run_variant(
    cfg: &RunConfig,
    prepared: &Prepared,
    kind: FeatureMapKind,
) -> Result<VariantRun, HarnessError> {
    let train = prepared.training_patterns(kind)?;
    let input = kind.dimensionality(prepared.input_columns.len());
    let state = NetworkState::init(&cfg.network_spec(input), cfg.seed)?;
    let (network, report) = mlp::train(state, &train, &cfg.training_config())?;
    let eval = prepared.patterns(&prepared.eval_rows, kind)?;
    let estimates = prepared
        .eval_rows
        .iter()
        .zip(&eval)
        .map(|(&row, p)| {
            let out = network.predict(&p.input)?;
            let den = prepared.target_norm.denormalize(&out)?;
            let actual = prepared.raw_targets[row - 1].clone();
            let residual = actual
                .iter()
                .zip(&den.values)
                .map(|(a, e)| (e - a).abs())
                .collect();
            Ok(Estimate {
                pattern_index: row,
                actual,
                estimated: den.values.clone(),
                residual,
                extrapolated: den.any_extrapolated(),
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(VariantRun {
        kind,
        network,
        report,
        estimates,
    })
}

/// Weight snapshot with everything `predict` needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub schema: String,
    pub feature_map: FeatureMapKind,
    pub dataset_kind: DatasetKind,
    pub input_columns: Vec<Column>,
    pub target_columns: Vec<Column>,
    pub input_normalization: NormalizationParams,
    pub target_normalization: NormalizationParams,
    pub dataset_digest: String,
    pub config_digest: String,
    pub seed: u64,
    pub network: NetworkState,
}

impl Snapshot {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let snap: Snapshot = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Snapshot(format!("{}: {e}", path.display())))?;
        snap.validate()?;
        Ok(snap)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Snapshot(m));
        if self.schema != SNAPSHOT_SCHEMA {
            return bad(format!("unsupported schema `{}`", self.schema));
        }
        self.network
            .validate()
            .map_err(|e| HarnessError::Snapshot(e.to_string()))?;
        let nf = self.input_columns.len();
        let want = self.feature_map.dimensionality(nf);
        if self.network.sizes.input != want || want == 0 {
            return bad(format!(
                "network expects {} inputs but {} over {nf} features yields {want}",
                self.network.sizes.input, self.feature_map
            ));
        }
        if self.input_normalization.column_names() != self.input_columns {
            return bad("input normalization does not match input columns".into());
        }
        if self.target_normalization.column_names() != self.target_columns
            || self.network.sizes.output != self.target_columns.len()
        {
            return bad("target normalization does not match network outputs".into());
        }
        Ok(())
    }

    /// Denormalized predictions for one raw input vector (in `input_columns` order).
    pub fn predict_raw(&self, raw: &[f64]) -> Result<Vec<f64>, HarnessError> {
        let x = self.input_normalization.normalize(raw)?;
        let features = featurizer::featurize(&x, self.feature_map)?;
        let out = self.network.predict(&features.values)?;
        Ok(self.target_normalization.denormalize(&out)?.values)
    }
}

/// JSON report written next to the snapshot by `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub schema: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub dataset_digest: String,
    pub feature_map: FeatureMapKind,
    pub input_columns: Vec<Column>,
    pub target_columns: Vec<Column>,
    pub train_rows: Vec<usize>,
    pub training: TrainingReport,
    pub evaluation: Vec<Estimate>,
}

/// What `train` produced.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub snapshot: Snapshot,
    pub report: TrainReport,
    pub files: Vec<PathBuf>,
    pub reached_target: bool,
}

fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn csv_provenance(cfg: &RunConfig, digest: &str) -> String {
    format!(
        "# seed={},dataset_digest={},config_digest={}\n",
        cfg.seed,
        digest,
        cfg.digest()
    )
}

fn trace_csv(cfg: &RunConfig, digest: &str, report: &TrainingReport) -> String {
    let mut out = csv_provenance(cfg, digest);
    out.push_str("epoch,mse,best_mse\n");
    for (i, (mse, best)) in report.mse_trace.iter().zip(&report.best_mse_trace).enumerate() {
        let _ = writeln!(out, "{},{mse},{best}", i + 1);
    }
    out
}

/// Trains one feature map and writes `snapshot.json`, `report.json` and `trace.csv`.
///
/// Artifacts are written even when the target is missed; with `require_target`
/// the call then fails with [`HarnessError::NotConverged`].
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome, HarnessError> {
    let kind = match cfg.feature_map {
        FeatureSelection::One(k) => k,
        FeatureSelection::All => {
            return Err(invalid("train needs a single feature map; use compare for all"))
        }
    };
    let prepared = prepare(cfg)?;
    let run = run_variant(cfg, &prepared, kind)?;
    let config = serde_json::to_value(cfg)?;

    let snapshot = Snapshot {
        schema: SNAPSHOT_SCHEMA.into(),
        feature_map: kind,
        dataset_kind: cfg.dataset_kind,
        input_columns: prepared.input_columns.clone(),
        target_columns: prepared.target_columns.clone(),
        input_normalization: prepared.input_norm.clone(),
        target_normalization: prepared.target_norm.clone(),
        dataset_digest: prepared.digest.clone(),
        config_digest: cfg.digest(),
        seed: cfg.seed,
        network: run.network,
    };
    let report = TrainReport {
        schema: TRAIN_REPORT_SCHEMA.into(),
        config,
        seed: cfg.seed,
        dataset_digest: prepared.digest.clone(),
        feature_map: kind,
        input_columns: prepared.input_columns.clone(),
        target_columns: prepared.target_columns.clone(),
        train_rows: prepared.train_rows.clone(),
        training: run.report,
        evaluation: run.estimates,
    };

    fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;
    let files = vec![
        cfg.out_dir.join(SNAPSHOT_FILE),
        cfg.out_dir.join(REPORT_FILE),
        cfg.out_dir.join(TRACE_FILE),
    ];
    write_file(&files[0], &(serde_json::to_string_pretty(&snapshot)? + "\n"))?;
    write_file(&files[1], &(serde_json::to_string_pretty(&report)? + "\n"))?;
    write_file(&files[2], &trace_csv(cfg, &prepared.digest, &report.training))?;

    let reached_target = report.training.epochs_to_target.is_some();
    if cfg.require_target && !reached_target {
        return Err(HarnessError::NotConverged {
            target: cfg.target_mse,
            epochs: report.training.epochs_executed,
            final_mse: report.training.final_mse,
        });
    }
    Ok(TrainOutcome {
        snapshot,
        report,
        files,
        reached_target,
    })
}

/// An ad-hoc prediction request: biodiesel percent and, for engine models, speed.
/// Diesel percent is always `100 - biodiesel`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Query {
    pub biodiesel_pct: f64,
    pub speed_rpm: Option<f64>,
}

impl Query {
    pub fn parse(s: &str) -> Result<Self, HarnessError> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| invalid(format!("query `{s}` is not numeric")))
            })
            .collect::<Result<_, _>>()?;
        match parts[..] {
            [b] => Ok(Query {
                biodiesel_pct: b,
                speed_rpm: None,
            }),
            [b, s] => Ok(Query {
                biodiesel_pct: b,
                speed_rpm: Some(s),
            }),
            _ => Err(invalid(format!("query `{s}` must be `biodiesel[,speed]`"))),
        }
    }

    fn raw_inputs(&self, snap: &Snapshot) -> Result<Vec<f64>, HarnessError> {
        if !(0.0..=100.0).contains(&self.biodiesel_pct) {
            return Err(invalid(format!(
                "biodiesel percent {} outside [0, 100]",
                self.biodiesel_pct
            )));
        }
        let needs_speed = snap.input_columns.contains(&Column::SpeedRpm);
        match (needs_speed, self.speed_rpm) {
            (true, None) => return Err(invalid("engine models need `biodiesel,speed` queries")),
            (false, Some(_)) => {
                return Err(invalid("emission models take a single blend percent per query"))
            }
            (true, Some(s)) if !(s > 0.0 && s.is_finite()) => {
                return Err(invalid(format!("speed {s} must be > 0")))
            }
            _ => {}
        }
        Ok(snap
            .input_columns
            .iter()
            .map(|c| match c {
                Column::FullLoad => 1.0,
                Column::BiodieselPct | Column::BlendPct => self.biodiesel_pct,
                Column::DieselPct => 100.0 - self.biodiesel_pct,
                Column::SpeedRpm => self.speed_rpm.unwrap_or_default(),
                _ => f64::NAN,
            })
            .collect())
    }
}

/// Reads queries from a CSV with a `biodiesel_pct` (or `blend_pct`) column and an
/// optional `speed_rpm` column.
pub fn read_queries(path: &Path) -> Result<Vec<Query>, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| invalid(format!("{}: {e}", path.display())))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let blend = col("biodiesel_pct")
        .or_else(|| col("blend_pct"))
        .ok_or_else(|| invalid("query file needs a biodiesel_pct or blend_pct column"))?;
    let speed = col("speed_rpm");
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| invalid(format!("query row {}: {e}", i + 1)))?;
        let num = |idx: usize| -> Result<f64, HarnessError> {
            rec.get(idx)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| invalid(format!("query row {}: non-numeric value", i + 1)))
        };
        out.push(Query {
            biodiesel_pct: num(blend)?,
            speed_rpm: speed.map(num).transpose()?,
        });
    }
    Ok(out)
}

/// Denormalized predictions as CSV: query columns then one column per target.
pub fn cmd_predict(snapshot: &Snapshot, queries: &[Query]) -> Result<String, HarnessError> {
    snapshot.validate()?;
    if queries.is_empty() {
        return Err(invalid("no queries given"));
    }
    let engine = snapshot.input_columns.contains(&Column::SpeedRpm);
    let mut header: Vec<&str> = if engine {
        vec!["biodiesel_pct", "speed_rpm"]
    } else {
        vec!["blend_pct"]
    };
    header.extend(snapshot.target_columns.iter().map(|c| c.name()));
    let mut out = header.join(",") + "\n";
    for q in queries {
        let preds = snapshot.predict_raw(&q.raw_inputs(snapshot)?)?;
        let mut cells = vec![q.biodiesel_pct.to_string()];
        if let Some(s) = q.speed_rpm {
            cells.push(s.to_string());
        }
        cells.extend(preds.iter().map(f64::to_string));
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatePair {
    pub pattern_index: usize,
    pub actual: f64,
    pub estimated: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEstimates {
    pub target: Column,
    pub pairs: Vec<EstimatePair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantEntry {
    pub feature_map: FeatureMapKind,
    pub input_dim: usize,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub final_mse: Option<f64>,
    pub epochs_executed: Option<usize>,
    pub epochs_to_target: Option<usize>,
    pub estimates: Vec<TargetEstimates>,
}

/// Epochs-to-target of each variant next to the linear baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub feature_map: FeatureMapKind,
    pub epochs_to_target: Option<usize>,
    /// `None` when either side missed the target.
    pub fewer_epochs_than_linear: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSummary {
    pub target_mse: f64,
    pub linear_epochs_to_target: Option<usize>,
    pub variants: Vec<ConvergenceRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub dataset_digest: String,
    pub evaluation_rows: Vec<usize>,
    pub requested_variants: Vec<FeatureMapKind>,
    pub variants: Vec<VariantEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceSummary>,
}

impl ComparisonReport {
    pub fn variant(&self, kind: FeatureMapKind) -> Option<&VariantEntry> {
        self.variants.iter().find(|v| v.feature_map == kind)
    }
}

#[derive(Debug, Clone)]
pub struct CompareOutcome {
    pub report: ComparisonReport,
    pub files: Vec<PathBuf>,
}

pub fn figure_file_name(kind: FeatureMapKind, target: Column) -> String {
    format!("figure_{}_{}.csv", kind.name(), target.name())
}

fn variant_entry(
    prepared: &Prepared,
    kind: FeatureMapKind,
    result: &Result<VariantRun, HarnessError>,
) -> VariantEntry {
    let input_dim = kind.dimensionality(prepared.input_columns.len());
    match result {
        Ok(run) => VariantEntry {
            feature_map: kind,
            input_dim,
            ok: true,
            error: None,
            final_mse: Some(run.report.final_mse),
            epochs_executed: Some(run.report.epochs_executed),
            epochs_to_target: run.report.epochs_to_target,
            estimates: prepared
                .target_columns
                .iter()
                .enumerate()
                .map(|(t, &target)| TargetEstimates {
                    target,
                    pairs: run
                        .estimates
                        .iter()
                        .map(|e| EstimatePair {
                            pattern_index: e.pattern_index,
                            actual: e.actual[t],
                            estimated: e.estimated[t],
                        })
                        .collect(),
                })
                .collect(),
        },
        Err(e) => VariantEntry {
            feature_map: kind,
            input_dim,
            ok: false,
            error: Some(e.to_string()),
            final_mse: None,
            epochs_executed: None,
            epochs_to_target: None,
            estimates: Vec::new(),
        },
    }
}

/// Trains every requested feature map under identical hyperparameters, one thread
/// per variant, and writes `comparison.json` plus one figure CSV per variant and target.
pub fn cmd_compare(cfg: &RunConfig) -> Result<CompareOutcome, HarnessError> {
    let prepared = prepare(cfg)?;
    let variants = cfg.feature_map.variants(prepared.input_columns.len());

    let results: Vec<Result<VariantRun, HarnessError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = variants
            .iter()
            .map(|&kind| {
                let prepared = &prepared;
                scope.spawn(move || run_variant(cfg, prepared, kind))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("variant thread panicked"))
            .collect()
    });

    let entries: Vec<VariantEntry> = variants
        .iter()
        .zip(&results)
        .map(|(&kind, r)| variant_entry(&prepared, kind, r))
        .collect();

    let convergence = entries
        .iter()
        .find(|e| e.feature_map == FeatureMapKind::Linear && e.ok)
        .map(|linear| ConvergenceSummary {
            target_mse: cfg.target_mse,
            linear_epochs_to_target: linear.epochs_to_target,
            variants: entries
                .iter()
                .filter(|e| e.feature_map != FeatureMapKind::Linear)
                .map(|e| ConvergenceRow {
                    feature_map: e.feature_map,
                    epochs_to_target: e.epochs_to_target,
                    fewer_epochs_than_linear: e
                        .epochs_to_target
                        .zip(linear.epochs_to_target)
                        .map(|(v, l)| v < l),
                })
                .collect(),
        });

    let report = ComparisonReport {
        schema: COMPARISON_SCHEMA.into(),
        config: serde_json::to_value(cfg)?,
        seed: cfg.seed,
        dataset_digest: prepared.digest.clone(),
        evaluation_rows: prepared.eval_rows.clone(),
        requested_variants: variants.clone(),
        variants: entries,
        convergence,
    };

    fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;
    let mut files = Vec::new();
    let path = cfg.out_dir.join(COMPARISON_FILE);
    write_file(&path, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    files.push(path);
    for entry in report.variants.iter().filter(|e| e.ok) {
        for est in &entry.estimates {
            let mut csv = csv_provenance(cfg, &prepared.digest);
            csv.push_str("pattern_index,actual,estimated\n");
            for p in &est.pairs {
                let _ = writeln!(csv, "{},{},{}", p.pattern_index, p.actual, p.estimated);
            }
            let path = cfg.out_dir.join(figure_file_name(entry.feature_map, est.target));
            write_file(&path, &csv)?;
            files.push(path);
        }
    }

    let failures: Vec<String> = report
        .variants
        .iter()
        .filter_map(|e| e.error.as_ref().map(|m| format!("{}: {m}", e.feature_map)))
        .collect();
    if !failures.is_empty() {
        return Err(HarnessError::VariantsFailed(failures));
    }
    Ok(CompareOutcome { report, files })
}

/// Dataset summary JSON: computed statistics, published headline figures for
/// the engine table, and the brake-power consistency check.
pub fn cmd_dataset_stats(cfg: &RunConfig) -> Result<serde_json::Value, HarnessError> {
    let source = cfg.dataset.source();
    let value = match cfg.dataset_kind {
        DatasetKind::Engine => {
            let data = corpus::load_engine_dataset(&source, cfg.cleaning())?;
            let has_b0 = data.patterns().iter().any(|p| p.biodiesel_pct == 0.0);
            serde_json::json!({
                "schema": STATS_SCHEMA,
                "dataset": cfg.dataset,
                "dataset_digest": data.digest(),
                "computed": engine_metrics::summarize(&data, has_b0)?,
                "reported": engine_metrics::REPORTED,
                "power_consistency": engine_metrics::power_consistency(&data)?,
                "cleaning_log": data.cleaning_log(),
            })
        }
        DatasetKind::Emission => {
            let data = corpus::load_emission_dataset(&source)?;
            serde_json::json!({
                "schema": STATS_SCHEMA,
                "dataset": cfg.dataset,
                "dataset_digest": data.digest(),
                "computed": engine_metrics::summarize_emissions(&data),
            })
        }
    };
    Ok(value)
}

/// Prints `x` expanded by `kind`: the values as one CSV line, then the length.
pub fn cmd_featurize(vector: &str, kind: &str) -> Result<String, HarnessError> {
    let kind: FeatureMapKind = kind.parse()?;
    let x: Vec<f64> = vector
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| invalid(format!("`{v}` is not a number")))
        })
        .collect::<Result<_, _>>()?;
    let fv = featurizer::featurize(&x, kind)?;
    let line: Vec<String> = fv.values.iter().map(|&v| tidy(v)).collect();
    Ok(format!("{}\nlength={}\n", line.join(","), fv.len()))
}

/// Shortest representation after rounding to 15 significant digits, so `0.2 * 0.1`
/// prints as `0.02`.
fn tidy(v: f64) -> String {
    format!("{v:.14e}")
        .parse::<f64>()
        .map(|r| r.to_string())
        .unwrap_or_else(|_| v.to_string())
}
