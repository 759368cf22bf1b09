//! Impression logs: seeded synthesis and the CSV file format.
//!
//! CSV schema (header required, UTF-8, `.` decimal separator):
//!
//! ```text
//! predicted_ctr,predicted_view_prob,clearing_price_cpm,clicked,viewable,converted
//! 0.0123,0.41,3.75,0,1,0
//! 0.0040,,1.20,0,0,0
//! ```
//!
//! An empty `predicted_view_prob` means no prediction was provided, which is
//! not the same as a prediction of zero. Booleans are `0` or `1`.

use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, LogNormal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::ImpressionRecord;

pub const CSV_HEADER: [&str; 6] = ["predicted_ctr", "predicted_view_prob", "clearing_price_cpm", "clicked", "viewable", "converted"];

/// Records per independently seeded generation chunk.
const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtrModel {
    /// Median predicted CTR of the log-normal.
    pub median: f64,
    /// Standard deviation of `ln(ctr)`.
    pub dispersion: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewModel {
    pub mean: f64,
    /// Beta concentration `alpha + beta`; higher is tighter around the mean.
    pub concentration: f64,
    /// Fraction of records with no view prediction.
    pub missing_rate: f64,
}

/// `clearing = base_cpm * (ctr / ctr_median)^ctr_elasticity
///             * exp(view_coupling * (p_view - view_mean) + noise * z)`
/// with `z ~ N(0, 1)`. A missing view prediction uses the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceModel {
    pub base_cpm: f64,
    pub ctr_elasticity: f64,
    pub view_coupling: f64,
    pub noise: f64,
}

/// Missing fields in JSON take their values from [`SynthesisParams::default`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisParams {
    pub count: usize,
    pub seed: u64,
    pub ctr: CtrModel,
    pub view: ViewModel,
    pub price: PriceModel,
    /// Conversion probability given the CTR: `P(converted) = ctr * conversion_rate`.
    pub conversion_rate: f64,
}

impl Default for SynthesisParams {
    fn default() -> Self {
        Self {
            count: 100_000,
            seed: 7,
            ctr: CtrModel { median: 0.01, dispersion: 0.6 },
            view: ViewModel { mean: 0.4, concentration: 4.0, missing_rate: 0.05 },
            price: PriceModel { base_cpm: 2.0, ctr_elasticity: 0.6, view_coupling: 1.5, noise: 0.5 },
            conversion_rate: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InventoryError {
    #[error("invalid distribution parameters: {0}")]
    InvalidDistributionParams(String),
}

impl SynthesisParams {
    pub fn validate(&self) -> Result<(), InventoryError> {
        let bad = |msg: &str| Err(InventoryError::InvalidDistributionParams(msg.to_string()));
        if self.count == 0 {
            return bad("count must be >= 1");
        }
        if !(self.ctr.median > 0.0 && self.ctr.median < 1.0) {
            return bad("ctr median must lie in (0, 1)");
        }
        if !(self.ctr.dispersion >= 0.0 && self.ctr.dispersion.is_finite()) {
            return bad("ctr dispersion must be finite and >= 0");
        }
        if !(self.view.mean > 0.0 && self.view.mean < 1.0) {
            return bad("view mean must lie in (0, 1)");
        }
        if !(self.view.concentration > 0.0 && self.view.concentration.is_finite()) {
            return bad("view concentration must be finite and > 0");
        }
        if !(0.0..=1.0).contains(&self.view.missing_rate) {
            return bad("view missing_rate must lie in [0, 1]");
        }
        if !(self.price.base_cpm > 0.0 && self.price.base_cpm.is_finite()) {
            return bad("base_cpm must be finite and > 0");
        }
        if ![self.price.ctr_elasticity, self.price.view_coupling].iter().all(|v| v.is_finite()) || !(self.price.noise >= 0.0) {
            return bad("price coefficients must be finite and noise >= 0");
        }
        if !(0.0..=1.0).contains(&self.conversion_rate) {
            return bad("conversion_rate must lie in [0, 1]");
        }
        Ok(())
    }
}

/// SplitMix64 finalizer, used to derive per-chunk seeds.
fn mix(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded synthetic log. Generation runs in fixed-size chunks with derived
/// seeds, so the output does not depend on the thread count.
pub fn generate_inventory(params: &SynthesisParams) -> Result<Vec<ImpressionRecord>, InventoryError> {
    params.validate()?;
    let ctr_dist = LogNormal::new(params.ctr.median.ln(), params.ctr.dispersion)
        .map_err(|e| InventoryError::InvalidDistributionParams(e.to_string()))?;
    let k = params.view.concentration;
    let view_dist = Beta::new(params.view.mean * k, (1.0 - params.view.mean) * k)
        .map_err(|e| InventoryError::InvalidDistributionParams(e.to_string()))?;

    let chunks = params.count.div_ceil(CHUNK);
    let records = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(params.seed, chunk as u64));
            let n = CHUNK.min(params.count - chunk * CHUNK);
            (0..n).map(move |_| draw_record(&mut rng, params, &ctr_dist, &view_dist)).collect::<Vec<_>>()
        })
        .collect();
    Ok(records)
}

/// How a campaign-sized inventory is drawn from an existing log.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogSampling {
    /// Use the log as is.
    #[default]
    Replay,
    WithReplacement,
    WithoutReplacement,
}

/// Draws `count` records from `log`. Sampled records keep their log order.
/// Without replacement `count` is capped at the log length.
pub fn sample_log(log: &[ImpressionRecord], count: usize, seed: u64, mode: LogSampling) -> Vec<ImpressionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks: Vec<usize> = match mode {
        LogSampling::Replay => return log.to_vec(),
        LogSampling::WithReplacement if log.is_empty() => Vec::new(),
        LogSampling::WithReplacement => (0..count).map(|_| rng.random_range(0..log.len())).collect(),
        LogSampling::WithoutReplacement => rand::seq::index::sample(&mut rng, log.len(), count.min(log.len())).into_vec(),
    };
    picks.sort_unstable();
    picks.into_iter().map(|i| log[i]).collect()
}

fn draw_record(rng: &mut ChaCha8Rng, params: &SynthesisParams, ctr_dist: &LogNormal<f64>, view_dist: &Beta<f64>) -> ImpressionRecord {
    let ctr = ctr_dist.sample(rng).min(1.0);
    let view = view_dist.sample(rng).clamp(0.0, 1.0);
    let missing = rng.random::<f64>() < params.view.missing_rate;
    let z: f64 = StandardNormal.sample(rng);

    let p = &params.price;
    let view_for_price = if missing { params.view.mean } else { view };
    let clearing = p.base_cpm
        * (ctr / params.ctr.median).powf(p.ctr_elasticity)
        * (p.view_coupling * (view_for_price - params.view.mean) + p.noise * z).exp();

    let clicked = rng.random::<f64>() < ctr;
    let converted = rng.random::<f64>() < ctr * params.conversion_rate;
    let viewable = rng.random::<f64>() < if missing { params.view.mean } else { view };

    ImpressionRecord {
        predicted_ctr: ctr,
        predicted_view_prob: (!missing).then_some(view),
        clearing_price: clearing,
        clicked,
        viewable,
        converted,
    }
}

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("header does not match schema: expected `{}`, found `{found}`", CSV_HEADER.join(","))]
    SchemaMismatch { found: String },
    #[error("line {line}: {message}")]
    ParseError { line: u64, message: String },
    #[error("file contains no records")]
    EmptyFile,
}

fn parse_bool(field: &str, name: &str) -> Result<bool, String> {
    match field {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(format!("{name} must be 0 or 1, found `{other}`")),
    }
}

fn parse_f64(field: &str, name: &str) -> Result<f64, String> {
    field.parse::<f64>().map_err(|_| format!("{name} is not a number: `{field}`"))
}

fn parse_row(row: &csv::StringRecord) -> Result<ImpressionRecord, String> {
    if row.len() != CSV_HEADER.len() {
        return Err(format!("expected {} fields, found {}", CSV_HEADER.len(), row.len()));
    }
    let view = match &row[1] {
        "" => None,
        v => Some(parse_f64(v, "predicted_view_prob")?),
    };
    let record = ImpressionRecord {
        predicted_ctr: parse_f64(&row[0], "predicted_ctr")?,
        predicted_view_prob: view,
        clearing_price: parse_f64(&row[2], "clearing_price_cpm")?,
        clicked: parse_bool(&row[3], "clicked")?,
        viewable: parse_bool(&row[4], "viewable")?,
        converted: parse_bool(&row[5], "converted")?,
    };
    record.validate().map_err(|e| e.to_string())?;
    Ok(record)
}

/// Reads a whole log; any bad row fails the load.
pub fn read_csv<R: Read>(reader: R) -> Result<Vec<ImpressionRecord>, CsvError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut rows = rdr.records();
    let header = match rows.next() {
        None => return Err(CsvError::EmptyFile),
        Some(h) => h.map_err(|e| CsvError::ParseError { line: 1, message: e.to_string() })?,
    };
    if header.iter().map(str::trim).ne(CSV_HEADER.iter().copied()) {
        return Err(CsvError::SchemaMismatch { found: header.iter().collect::<Vec<_>>().join(",") });
    }
    let mut records = Vec::new();
    for row in rows {
        let row = row.map_err(|e| CsvError::ParseError { line: e.position().map_or(0, |p| p.line()), message: e.to_string() })?;
        let line = row.position().map_or(0, |p| p.line());
        records.push(parse_row(&row).map_err(|message| CsvError::ParseError { line, message })?);
    }
    if records.is_empty() {
        return Err(CsvError::EmptyFile);
    }
    Ok(records)
}

pub fn write_csv<W: Write>(records: &[ImpressionRecord], writer: W) -> Result<(), CsvError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER).map_err(csv_io)?;
    let flag = |b: bool| if b { "1" } else { "0" };
    for r in records {
        let view = r.predicted_view_prob.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([
            r.predicted_ctr.to_string().as_str(),
            view.as_str(),
            r.clearing_price.to_string().as_str(),
            flag(r.clicked),
            flag(r.viewable),
            flag(r.converted),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> CsvError {
    CsvError::Io(io::Error::other(e))
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<ImpressionRecord>, CsvError> {
    read_csv(File::open(path)?)
}

pub fn save_csv(records: &[ImpressionRecord], path: impl AsRef<Path>) -> Result<(), CsvError> {
    write_csv(records, io::BufWriter::new(File::create(path)?))
}
