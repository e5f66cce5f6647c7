//! Engine and emission datasets: loading, cleaning, min-max scaling and splitting.
//!
//! The two bundled tables live under `data/` and are compiled into the crate.
//! External files use the same CSV headers:
//!
//! - engine: `sno,full_load,biodiesel_pct,diesel_pct,speed_rpm,power_kw,torque_nm,sfc`
//! - emission: `blend_pct,hc,co`
//!
//! Datasets are immutable once built and can be shared across training runs.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

const ENGINE_TABLE: &str = include_str!("../data/engine_table1.csv");
const EMISSION_TABLE: &str = include_str!("../data/emissions_table2.csv");

/// Default target range for min-max scaling. Sigmoid outputs never reach 0 or 1.
pub const DEFAULT_RANGE: (f64, f64) = (0.05, 0.95);

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("empty dataset")]
    Empty,
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: non-numeric value {value:?}")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}, column `{column}`: {reason}")]
    InvalidValue {
        row: usize,
        column: String,
        reason: String,
    },
    #[error("row {row}: {source}")]
    Csv {
        row: usize,
        #[source]
        source: csv::Error,
    },
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("column `{0}` is constant (max = min) and cannot be min-max scaled")]
    ConstantColumn(String),
    #[error("normalization range ({lo}, {hi}) must satisfy 0 < lo < hi < 1")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("vector length {got} does not match {expected} normalized columns")]
    LengthMismatch { expected: usize, got: usize },
    #[error("column `{column}` is not available on {record} records")]
    UnknownColumn {
        column: &'static str,
        record: &'static str,
    },
    #[error("empty train side")]
    EmptyTrain,
    #[error("invalid split: {0}")]
    InvalidSplit(String),
}

/// Where a dataset comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Bundled,
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Cleaning {
    /// Force `diesel_pct = 100 - biodiesel_pct` and log every correction.
    #[default]
    ComplementFill,
    /// Keep printed values untouched.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    BundledTable1,
    BundledTable2,
    ExternalFile(String),
}

/// One correction applied while cleaning. `row` is the 1-based data row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleaningEntry {
    pub row: usize,
    pub column: String,
    pub rule: String,
    pub from: f64,
    pub to: f64,
}

/// Every named column across both record kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Column {
    FullLoad,
    BiodieselPct,
    DieselPct,
    SpeedRpm,
    PowerKw,
    TorqueNm,
    Sfc,
    BlendPct,
    Hc,
    Co,
}

impl Column {
    pub fn name(self) -> &'static str {
        match self {
            Column::FullLoad => "full_load",
            Column::BiodieselPct => "biodiesel_pct",
            Column::DieselPct => "diesel_pct",
            Column::SpeedRpm => "speed_rpm",
            Column::PowerKw => "power_kw",
            Column::TorqueNm => "torque_nm",
            Column::Sfc => "sfc",
            Column::BlendPct => "blend_pct",
            Column::Hc => "hc",
            Column::Co => "co",
        }
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A row type that can live in a [`Dataset`].
pub trait Record: Clone + Send + Sync {
    const KIND: &'static str;
    const HEADER: &'static [&'static str];

    /// Value of a named column, or `None` when the record has no such column.
    fn get(&self, column: Column) -> Option<f64>;

    /// Biodiesel share of the fuel blend, in percent.
    fn blend_pct(&self) -> f64;

    /// Values in `HEADER` order.
    fn csv_values(&self) -> Vec<f64>;

    fn require(&self, column: Column) -> Result<f64, CorpusError> {
        self.get(column).ok_or(CorpusError::UnknownColumn {
            column: column.name(),
            record: Self::KIND,
        })
    }
}

/// One row of the engine performance table, in raw engineering units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnginePattern {
    pub sno: u32,
    pub full_load: f64,
    pub biodiesel_pct: f64,
    pub diesel_pct: f64,
    pub speed_rpm: f64,
    pub power_kw: f64,
    pub torque_nm: f64,
    /// Litre/kW, as printed in the source table header.
    pub sfc: f64,
}

impl Record for EnginePattern {
    const KIND: &'static str = "engine";
    const HEADER: &'static [&'static str] = &[
        "sno",
        "full_load",
        "biodiesel_pct",
        "diesel_pct",
        "speed_rpm",
        "power_kw",
        "torque_nm",
        "sfc",
    ];

    fn get(&self, column: Column) -> Option<f64> {
        Some(match column {
            Column::FullLoad => self.full_load,
            Column::BiodieselPct | Column::BlendPct => self.biodiesel_pct,
            Column::DieselPct => self.diesel_pct,
            Column::SpeedRpm => self.speed_rpm,
            Column::PowerKw => self.power_kw,
            Column::TorqueNm => self.torque_nm,
            Column::Sfc => self.sfc,
            Column::Hc | Column::Co => return None,
        })
    }

    fn blend_pct(&self) -> f64 {
        self.biodiesel_pct
    }

    fn csv_values(&self) -> Vec<f64> {
        vec![
            f64::from(self.sno),
            self.full_load,
            self.biodiesel_pct,
            self.diesel_pct,
            self.speed_rpm,
            self.power_kw,
            self.torque_nm,
            self.sfc,
        ]
    }
}

/// One row of the exhaust emission table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmissionPattern {
    pub blend_pct: f64,
    pub hc: f64,
    pub co: f64,
}

impl Record for EmissionPattern {
    const KIND: &'static str = "emission";
    const HEADER: &'static [&'static str] = &["blend_pct", "hc", "co"];

    fn get(&self, column: Column) -> Option<f64> {
        Some(match column {
            Column::BlendPct | Column::BiodieselPct => self.blend_pct,
            Column::Hc => self.hc,
            Column::Co => self.co,
            _ => return None,
        })
    }

    fn blend_pct(&self) -> f64 {
        self.blend_pct
    }

    fn csv_values(&self) -> Vec<f64> {
        vec![self.blend_pct, self.hc, self.co]
    }
}

/// An ordered, non-empty list of patterns with provenance and cleaning history.
#[derive(Debug, Clone)]
pub struct Dataset<R> {
    patterns: Vec<R>,
    provenance: Provenance,
    cleaning_log: Vec<CleaningEntry>,
}

impl<R: Record> Dataset<R> {
    pub fn new(
        patterns: Vec<R>,
        provenance: Provenance,
        cleaning_log: Vec<CleaningEntry>,
    ) -> Result<Self, CorpusError> {
        if patterns.is_empty() {
            return Err(CorpusError::Empty);
        }
        Ok(Self {
            patterns,
            provenance,
            cleaning_log,
        })
    }

    pub fn patterns(&self) -> &[R] {
        &self.patterns
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn cleaning_log(&self) -> &[CleaningEntry] {
        &self.cleaning_log
    }

    /// The cleaning log as JSON lines, one entry per line.
    pub fn cleaning_log_jsonl(&self) -> String {
        self.cleaning_log
            .iter()
            .map(|e| serde_json::to_string(e).expect("cleaning entry serializes") + "\n")
            .collect()
    }

    /// Column values in row order.
    pub fn column(&self, column: Column) -> Result<Vec<f64>, CorpusError> {
        self.patterns.iter().map(|p| p.require(column)).collect()
    }

    /// Rows projected onto `columns`.
    pub fn rows(&self, columns: &[Column]) -> Result<Vec<Vec<f64>>, CorpusError> {
        self.patterns
            .iter()
            .map(|p| columns.iter().map(|&c| p.require(c)).collect())
            .collect()
    }

    /// SHA-256 over the canonical CSV rendering of the (cleaned) patterns.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(R::HEADER.join(",").as_bytes());
        hasher.update(b"\n");
        for p in &self.patterns {
            let line: Vec<String> = p.csv_values().iter().map(|v| v.to_string()).collect();
            hasher.update(line.join(",").as_bytes());
            hasher.update(b"\n");
        }
        hex(&hasher.finalize())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads a CSV with a header into rows of named numeric cells.
fn read_table(text: &str, header: &[&str]) -> Result<Vec<Vec<f64>>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let found = reader
        .headers()
        .map_err(|source| CorpusError::Csv { row: 0, source })?
        .clone();
    if found.is_empty() || found.iter().all(str::is_empty) {
        return Err(CorpusError::Empty);
    }
    let index: Vec<usize> = header
        .iter()
        .map(|name| {
            found
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| CorpusError::MissingColumn((*name).to_string()))
        })
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|source| CorpusError::Csv { row, source })?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let values = index
            .iter()
            .zip(header)
            .map(|(&col, name)| {
                let cell = record.get(col).unwrap_or("");
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| CorpusError::NonNumeric {
                        row,
                        column: (*name).to_string(),
                        value: cell.to_string(),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(CorpusError::Empty);
    }
    Ok(rows)
}

fn read_source(source: &Source, bundled: &'static str) -> Result<(String, bool), CorpusError> {
    match source {
        Source::Bundled => Ok((bundled.to_string(), true)),
        Source::File(path) => std::fs::read_to_string(path)
            .map(|text| (text, false))
            .map_err(|source| CorpusError::Io {
                path: path.clone(),
                source,
            }),
    }
}

fn check(row: usize, column: &str, ok: bool, reason: &str) -> Result<(), CorpusError> {
    if ok {
        Ok(())
    } else {
        Err(CorpusError::InvalidValue {
            row,
            column: column.to_string(),
            reason: reason.to_string(),
        })
    }
}

fn external(path: &Path) -> Provenance {
    Provenance::ExternalFile(path.display().to_string())
}

/// Loads the engine performance table from `source`.
pub fn load_engine_dataset(
    source: &Source,
    cleaning: Cleaning,
) -> Result<Dataset<EnginePattern>, CorpusError> {
    let (text, bundled) = read_source(source, ENGINE_TABLE)?;
    parse_engine(&text, cleaning, provenance(source, bundled, Provenance::BundledTable1))
}

/// Loads the exhaust emission table from `source`.
pub fn load_emission_dataset(source: &Source) -> Result<Dataset<EmissionPattern>, CorpusError> {
    let (text, bundled) = read_source(source, EMISSION_TABLE)?;
    parse_emission(&text, provenance(source, bundled, Provenance::BundledTable2))
}

fn provenance(source: &Source, bundled: bool, tag: Provenance) -> Provenance {
    match source {
        Source::File(path) if !bundled => external(path),
        _ => tag,
    }
}

pub fn parse_engine(
    text: &str,
    cleaning: Cleaning,
    provenance: Provenance,
) -> Result<Dataset<EnginePattern>, CorpusError> {
    let rows = read_table(text, EnginePattern::HEADER)?;
    let mut log = Vec::new();
    let mut patterns = Vec::with_capacity(rows.len());
    for (i, v) in rows.into_iter().enumerate() {
        let row = i + 1;
        let mut p = EnginePattern {
            sno: v[0] as u32,
            full_load: v[1],
            biodiesel_pct: v[2],
            diesel_pct: v[3],
            speed_rpm: v[4],
            power_kw: v[5],
            torque_nm: v[6],
            sfc: v[7],
        };
        check(row, "sno", v[0] >= 0.0 && v[0].fract() == 0.0, "must be a non-negative integer")?;
        for (name, pct) in [("biodiesel_pct", p.biodiesel_pct), ("diesel_pct", p.diesel_pct)] {
            check(row, name, (0.0..=100.0).contains(&pct), "percent must lie in [0, 100]")?;
        }
        check(row, "speed_rpm", p.speed_rpm > 0.0, "must be > 0")?;
        check(row, "power_kw", p.power_kw >= 0.0, "must be >= 0")?;
        check(row, "torque_nm", p.torque_nm >= 0.0, "must be >= 0")?;
        check(row, "sfc", p.sfc > 0.0, "must be > 0")?;

        if cleaning == Cleaning::ComplementFill {
            let filled = 100.0 - p.biodiesel_pct;
            if p.diesel_pct != filled {
                log.push(CleaningEntry {
                    row,
                    column: "diesel_pct".into(),
                    rule: "complement-fill".into(),
                    from: p.diesel_pct,
                    to: filled,
                });
                p.diesel_pct = filled;
            }
        }
        patterns.push(p);
    }
    Dataset::new(patterns, provenance, log)
}

pub fn parse_emission(
    text: &str,
    provenance: Provenance,
) -> Result<Dataset<EmissionPattern>, CorpusError> {
    let rows = read_table(text, EmissionPattern::HEADER)?;
    let mut patterns = Vec::with_capacity(rows.len());
    for (i, v) in rows.into_iter().enumerate() {
        let row = i + 1;
        let p = EmissionPattern {
            blend_pct: v[0],
            hc: v[1],
            co: v[2],
        };
        check(row, "blend_pct", (0.0..=100.0).contains(&p.blend_pct), "percent must lie in [0, 100]")?;
        check(row, "hc", p.hc >= 0.0, "must be >= 0")?;
        check(row, "co", p.co >= 0.0, "must be >= 0")?;
        patterns.push(p);
    }
    Dataset::new(patterns, provenance, Vec::new())
}

/// How [`fit_normalizer`] treats a column whose max equals its min.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstantColumns {
    #[default]
    Reject,
    /// Map every value to the midpoint of the target range.
    Midpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub column: Column,
    pub min: f64,
    pub max: f64,
}

impl ColumnScale {
    fn is_constant(&self) -> bool {
        self.max == self.min
    }
}

/// Per-column min-max scaling onto `(lo, hi)`, invertible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub columns: Vec<ColumnScale>,
    pub lo: f64,
    pub hi: f64,
}

/// Result of [`NormalizationParams::denormalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Denormalized {
    pub values: Vec<f64>,
    /// `true` where the input lay outside `[lo, hi]` and the map was extrapolated.
    pub extrapolated: Vec<bool>,
}

impl Denormalized {
    pub fn any_extrapolated(&self) -> bool {
        self.extrapolated.iter().any(|&e| e)
    }
}

/// Fits a min-max scaler over the selected columns of `data`.
pub fn fit_normalizer<R: Record>(
    data: &Dataset<R>,
    columns: &[Column],
    range: (f64, f64),
    constant: ConstantColumns,
) -> Result<NormalizationParams, CorpusError> {
    let (lo, hi) = range;
    if !(lo > 0.0 && lo < hi && hi < 1.0) {
        return Err(CorpusError::InvalidRange { lo, hi });
    }
    let mut scales = Vec::with_capacity(columns.len());
    for &column in columns {
        let values = data.column(column)?;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == min && constant == ConstantColumns::Reject {
            return Err(CorpusError::ConstantColumn(column.name().to_string()));
        }
        scales.push(ColumnScale { column, min, max });
    }
    Ok(NormalizationParams {
        columns: scales,
        lo,
        hi,
    })
}

impl NormalizationParams {
    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn column_names(&self) -> Vec<Column> {
        self.columns.iter().map(|c| c.column).collect()
    }

    fn check_len(&self, got: usize) -> Result<(), CorpusError> {
        if got == self.columns.len() {
            Ok(())
        } else {
            Err(CorpusError::LengthMismatch {
                expected: self.columns.len(),
                got,
            })
        }
    }

    pub fn normalize(&self, x: &[f64]) -> Result<Vec<f64>, CorpusError> {
        self.check_len(x.len())?;
        let width = self.hi - self.lo;
        Ok(self
            .columns
            .iter()
            .zip(x)
            .map(|(c, &v)| {
                if c.is_constant() {
                    0.5 * (self.lo + self.hi)
                } else {
                    self.lo + (v - c.min) / (c.max - c.min) * width
                }
            })
            .collect())
    }

    pub fn denormalize(&self, y: &[f64]) -> Result<Denormalized, CorpusError> {
        self.check_len(y.len())?;
        let width = self.hi - self.lo;
        let values = self
            .columns
            .iter()
            .zip(y)
            .map(|(c, &v)| {
                if c.is_constant() {
                    c.min
                } else {
                    c.min + (v - self.lo) / width * (c.max - c.min)
                }
            })
            .collect();
        let extrapolated = y.iter().map(|&v| v < self.lo || v > self.hi).collect();
        Ok(Denormalized {
            values,
            extrapolated,
        })
    }
}

/// Train/test partition policy.
#[derive(Debug, Clone, PartialEq)]
pub enum SplitPolicy {
    AllTrain,
    /// 1-based row numbers moved to the test side.
    LeaveRowsOut(Vec<usize>),
    /// Hold out every row of one biodiesel blend level.
    LeaveBlendOut(f64),
}

/// A partition of a dataset. Row numbers are 1-based positions in the source.
#[derive(Debug, Clone)]
pub struct Split<R> {
    pub train: Dataset<R>,
    pub test: Vec<R>,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

/// Partitions `data`, preserving source order on both sides.
pub fn split<R: Record>(data: &Dataset<R>, policy: &SplitPolicy) -> Result<Split<R>, CorpusError> {
    let n = data.len();
    let held_out: Vec<bool> = match policy {
        SplitPolicy::AllTrain => vec![false; n],
        SplitPolicy::LeaveRowsOut(rows) => {
            let mut mask = vec![false; n];
            for &r in rows {
                if r == 0 || r > n {
                    return Err(CorpusError::InvalidSplit(format!(
                        "row {r} outside 1..={n}"
                    )));
                }
                mask[r - 1] = true;
            }
            mask
        }
        SplitPolicy::LeaveBlendOut(blend) => {
            let mask: Vec<bool> = data
                .patterns()
                .iter()
                .map(|p| p.blend_pct() == *blend)
                .collect();
            if !mask.iter().any(|&m| m) {
                return Err(CorpusError::InvalidSplit(format!(
                    "no rows with blend B{blend}"
                )));
            }
            mask
        }
    };

    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut train_rows = Vec::new();
    let mut test_rows = Vec::new();
    for (i, (p, &out)) in data.patterns().iter().zip(&held_out).enumerate() {
        if out {
            test.push(p.clone());
            test_rows.push(i + 1);
        } else {
            train.push(p.clone());
            train_rows.push(i + 1);
        }
    }
    if train.is_empty() {
        return Err(CorpusError::EmptyTrain);
    }
    Ok(Split {
        train: Dataset::new(train, data.provenance().clone(), data.cleaning_log().to_vec())?,
        test,
        train_rows,
        test_rows,
    })
}
