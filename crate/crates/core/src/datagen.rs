//! Synthetic survival data (Weibull times driven by a linear risk score) and
//! CSV ingestion with a configurable column mapping.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::survival::{Dataset, EventRecord};

/// Settings for the synthetic generator. Defaults: Weibull scale 1e-5 and
/// shape 2, event probability 0.9.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n: usize,
    pub d: usize,
    pub lambda0: f64,
    pub shape: f64,
    /// Risk coefficients; must have length `d`.
    pub coeffs: Vec<f64>,
    pub event_prob: f64,
    pub seed: u64,
}

impl GeneratorConfig {
    pub fn new(n: usize, d: usize, coeffs: Vec<f64>, seed: u64) -> Self {
        Self {
            n,
            d,
            lambda0: 1e-5,
            shape: 2.0,
            coeffs,
            event_prob: 0.9,
            seed,
        }
    }

    /// Coefficients drawn uniformly from [0, 1]^d with the config seed
    /// (stream 1, so they do not collide with the record stream).
    pub fn with_random_coeffs(n: usize, d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let coeffs = (0..d).map(|_| rng.random::<f64>()).collect();
        Self::new(n, d, coeffs, seed)
    }

    fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidData("need n >= 2".into()));
        }
        if self.d == 0 {
            return Err(Error::InvalidData("need d >= 1".into()));
        }
        if self.coeffs.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: self.coeffs.len(),
            });
        }
        if !(self.lambda0 > 0.0) || !(self.shape > 0.0) {
            return Err(Error::InvalidData(
                "scale and shape must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.event_prob) {
            return Err(Error::InvalidData(format!(
                "event probability must lie in [0, 1], got {}",
                self.event_prob
            )));
        }
        Ok(())
    }
}

/// The Weibull inverse transform: the event time for uniform draw `xi` at
/// linear risk score `u` is (-ln(xi) / (lambda0 exp(u)))^(1/shape).
pub fn weibull_event_time(xi: f64, linear_predictor: f64, lambda0: f64, shape: f64) -> f64 {
    (-xi.ln() / (lambda0 * linear_predictor.exp())).powf(1.0 / shape)
}

/// Generate a dataset of uniform [0,1]^d features with Weibull event times
/// and independent Bernoulli event indicators. The single sequential RNG
/// stream over records defines the data contract; uniform draws of exactly
/// zero are resampled.
pub fn generate_synthetic(config: &GeneratorConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut records = Vec::with_capacity(config.n);
    for _ in 0..config.n {
        let features: Vec<f64> = (0..config.d).map(|_| rng.random::<f64>()).collect();
        let u: f64 = config
            .coeffs
            .iter()
            .zip(&features)
            .map(|(b, x)| b * x)
            .sum();
        let mut xi: f64 = rng.random();
        while xi == 0.0 {
            xi = rng.random();
        }
        let time = weibull_event_time(xi, u, config.lambda0, config.shape);
        let event = rng.random::<f64>() < config.event_prob;
        records.push(EventRecord::new(features, event, time)?);
    }
    Dataset::new(records)
}

/// Column mapping for CSV ingestion: which columns are features, which holds
/// the observed time, which the 0/1 event flag, and an optional equality
/// filter selecting a subset of rows (for example a treatment arm).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSchema {
    pub feature_cols: Vec<String>,
    pub time_col: String,
    pub event_col: String,
    pub filter: Option<(String, String)>,
}

impl CsvSchema {
    pub fn new(feature_cols: Vec<String>, time_col: &str, event_col: &str) -> Self {
        Self {
            feature_cols,
            time_col: time_col.to_string(),
            event_col: event_col.to_string(),
            filter: None,
        }
    }

    pub fn with_filter(mut self, column: &str, value: &str) -> Self {
        self.filter = Some((column.to_string(), value.to_string()));
        self
    }
}

fn is_missing(cell: &str) -> bool {
    let cell = cell.trim();
    cell.is_empty() || cell == "NA" || cell == "NaN" || cell == "nan"
}

fn parse_event(cell: &str) -> Option<bool> {
    match cell.trim() {
        "0" | "0.0" => Some(false),
        "1" | "1.0" => Some(true),
        _ => None,
    }
}

/// Load a dataset from a headered CSV file using the schema's column
/// mapping. Rows with missing mapped values are dropped; the count of
/// dropped rows is returned alongside the dataset. Cells that are present
/// but unparseable are an error.
pub fn load_csv<P: AsRef<Path>>(path: P, schema: &CsvSchema) -> Result<(Dataset, usize)> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let column_index: HashMap<&str, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, name)| (name, i))
        .collect();

    let require = |name: &str| -> Result<usize> {
        column_index.get(name).copied().ok_or_else(|| {
            Error::InvalidData(format!("column '{name}' not found in CSV header"))
        })
    };
    let feature_idx: Vec<usize> = schema
        .feature_cols
        .iter()
        .map(|c| require(c))
        .collect::<Result<_>>()?;
    let time_idx = require(&schema.time_col)?;
    let event_idx = require(&schema.event_col)?;
    let filter_idx = match &schema.filter {
        Some((col, value)) => Some((require(col)?, value.clone())),
        None => None,
    };

    let mut records = Vec::new();
    let mut dropped = 0usize;
    for (row_no, row) in reader.records().enumerate() {
        let row = row?;
        if let Some((idx, value)) = &filter_idx {
            if row.get(*idx).map(str::trim) != Some(value.as_str()) {
                continue;
            }
        }
        let mapped: Vec<&str> = feature_idx
            .iter()
            .chain([&time_idx, &event_idx])
            .map(|&i| row.get(i).unwrap_or(""))
            .collect();
        if mapped.iter().any(|cell| is_missing(cell)) {
            dropped += 1;
            continue;
        }
        let mut features = Vec::with_capacity(feature_idx.len());
        for (&i, name) in feature_idx.iter().zip(&schema.feature_cols) {
            let cell = row.get(i).unwrap();
            let value: f64 = cell.trim().parse().map_err(|_| {
                Error::InvalidData(format!(
                    "row {}: cannot parse '{cell}' in column '{name}'",
                    row_no + 2
                ))
            })?;
            features.push(value);
        }
        let time_cell = row.get(time_idx).unwrap();
        let time: f64 = time_cell.trim().parse().map_err(|_| {
            Error::InvalidData(format!(
                "row {}: cannot parse time '{time_cell}'",
                row_no + 2
            ))
        })?;
        let event_cell = row.get(event_idx).unwrap();
        let event = parse_event(event_cell).ok_or_else(|| {
            Error::InvalidData(format!(
                "row {}: event flag must be 0 or 1, got '{event_cell}'",
                row_no + 2
            ))
        })?;
        records.push(EventRecord::new(features, event, time)?);
    }
    if records.is_empty() {
        return Err(Error::InvalidData("no usable rows in CSV".into()));
    }
    Ok((Dataset::new(records)?, dropped))
}

/// Write a dataset as CSV with the given feature column names (x1..xd when
/// absent), plus `time` and `event` columns.
pub fn write_csv<P: AsRef<Path>>(
    path: P,
    dataset: &Dataset,
    feature_names: Option<&[String]>,
) -> Result<()> {
    let names: Vec<String> = match feature_names {
        Some(names) => {
            if names.len() != dataset.dim() {
                return Err(Error::DimensionMismatch {
                    expected: dataset.dim(),
                    got: names.len(),
                });
            }
            names.to_vec()
        }
        None => (1..=dataset.dim()).map(|i| format!("x{i}")).collect(),
    };
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    let mut header = names;
    header.push("time".into());
    header.push("event".into());
    writer.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(dataset.dim() + 2);
    for rec in dataset.records() {
        row.clear();
        row.extend(rec.features.iter().map(|v| format!("{v}")));
        row.push(format!("{}", rec.time));
        row.push(if rec.event { "1".into() } else { "0".into() });
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    #[test]
    fn weibull_time_direct_plug_in() {
        // xi = e^-1, u = 0, lambda0 = 1e-5, shape = 2 -> sqrt(1e5)
        let t = weibull_event_time((-1.0_f64).exp(), 0.0, 1e-5, 2.0);
        assert!((t - 1e5_f64.sqrt()).abs() < 1e-9);
        assert!((t - 316.227766).abs() < 1e-5);
    }

    #[test]
    fn weibull_time_vanishes_as_xi_approaches_one() {
        let t = weibull_event_time(1.0 - 1e-12, 0.0, 1e-5, 2.0);
        assert!(t < 0.02, "time {t} should be near zero");
    }

    #[test]
    fn generator_defaults_match_reference_settings() {
        let config = GeneratorConfig::new(10, 2, vec![0.5, 0.5], 1);
        assert_eq!(config.lambda0, 1e-5);
        assert_eq!(config.shape, 2.0);
        assert_eq!(config.event_prob, 0.9);
    }

    #[test]
    fn generated_times_satisfy_the_inverse_relation() {
        let config = GeneratorConfig::new(500, 3, vec![0.2, 0.5, 0.9], 42);
        let ds = generate_synthetic(&config).unwrap();
        for rec in ds.records() {
            let u: f64 = config
                .coeffs
                .iter()
                .zip(&rec.features)
                .map(|(b, x)| b * x)
                .sum();
            // invert to xi, then regenerate the time
            let xi = (-config.lambda0 * u.exp() * rec.time.powf(config.shape)).exp();
            assert!(xi > 0.0 && xi < 1.0);
            let rebuilt = weibull_event_time(xi, u, config.lambda0, config.shape);
            assert!(
                (rebuilt - rec.time).abs() <= 1e-12 * rec.time,
                "round trip {rebuilt} vs {}",
                rec.time
            );
        }
    }

    #[test]
    fn event_fraction_within_three_binomial_sd() {
        let config = GeneratorConfig::new(4000, 2, vec![0.3, 0.3], 7);
        let ds = generate_synthetic(&config).unwrap();
        let n = ds.len() as f64;
        let p = config.event_prob;
        let observed = ds.n_events() as f64 / n;
        let sd = (p * (1.0 - p) / n).sqrt();
        assert!(
            (observed - p).abs() <= 3.0 * sd,
            "event fraction {observed} vs {p} +- {}",
            3.0 * sd
        );
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let config = GeneratorConfig::new(50, 2, vec![0.4, 0.6], 9);
        let a = generate_synthetic(&config).unwrap();
        let b = generate_synthetic(&config).unwrap();
        assert_eq!(a.records(), b.records());

        let other = GeneratorConfig {
            seed: 10,
            ..config
        };
        let c = generate_synthetic(&other).unwrap();
        assert_ne!(a.records(), c.records());
    }

    #[test]
    fn higher_risk_shortens_survival() {
        // Kendall sign test between the risk score and the observed time
        let config = GeneratorConfig::new(10_000, 2, vec![0.8, 0.9], 13);
        let ds = generate_synthetic(&config).unwrap();
        let scores: Vec<f64> = ds
            .records()
            .iter()
            .map(|rec| {
                config
                    .coeffs
                    .iter()
                    .zip(&rec.features)
                    .map(|(b, x)| b * x)
                    .sum()
            })
            .collect();
        let times: Vec<f64> = ds.records().iter().map(|r| r.time).collect();
        let mut concordant = 0i64;
        let mut discordant = 0i64;
        // subsampled pairs keep the test fast; the sign is what matters
        for i in (0..ds.len()).step_by(7) {
            for j in (i + 1..ds.len()).step_by(7) {
                let ds_sign = (scores[i] - scores[j]) * (times[i] - times[j]);
                if ds_sign > 0.0 {
                    concordant += 1;
                } else if ds_sign < 0.0 {
                    discordant += 1;
                }
            }
        }
        assert!(
            discordant > concordant,
            "expected negative association, got {concordant} concordant vs {discordant} discordant"
        );
    }

    #[test]
    fn random_coeffs_are_reproducible_and_in_unit_cube() {
        let a = GeneratorConfig::with_random_coeffs(10, 5, 21);
        let b = GeneratorConfig::with_random_coeffs(10, 5, 21);
        assert_eq!(a.coeffs, b.coeffs);
        assert!(a.coeffs.iter().all(|c| (0.0..1.0).contains(c)));
    }

    #[test]
    fn csv_round_trip_through_file() {
        let config = GeneratorConfig::new(30, 2, vec![0.1, 0.9], 3);
        let ds = generate_synthetic(&config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        write_csv(&path, &ds, None).unwrap();
        let schema = CsvSchema::new(vec!["x1".into(), "x2".into()], "time", "event");
        let (loaded, dropped) = load_csv(&path, &schema).unwrap();
        assert_eq!(dropped, 0);
        assert_eq!(loaded.records(), ds.records());
    }

    #[test]
    fn tiny_handwritten_csv_parses_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixture.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "id,age,t5,time,event").unwrap();
        writeln!(f, "a,54.5,1.11,10,1").unwrap();
        writeln!(f, "b,40,0.5,20.25,0").unwrap();
        writeln!(f, "c,62,2,5,1").unwrap();
        drop(f);
        let schema = CsvSchema::new(vec!["age".into(), "t5".into()], "time", "event");
        let (ds, dropped) = load_csv(&path, &schema).unwrap();
        assert_eq!(dropped, 0);
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.records()[0].features, vec![54.5, 1.11]);
        assert_eq!(ds.records()[0].time, 10.0);
        assert!(ds.records()[0].event);
        assert!(!ds.records()[1].event);
    }

    #[test]
    fn missing_values_drop_rows_and_are_counted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("missing.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "age,t5,time,event").unwrap();
        writeln!(f, "54.5,NA,10,1").unwrap();
        writeln!(f, "40,0.5,20,0").unwrap();
        writeln!(f, "62,2,,1").unwrap();
        writeln!(f, "33,1.5,8,1").unwrap();
        drop(f);
        let schema = CsvSchema::new(vec!["age".into(), "t5".into()], "time", "event");
        let (ds, dropped) = load_csv(&path, &schema).unwrap();
        assert_eq!(dropped, 2);
        assert_eq!(ds.len(), 2);
    }

    #[test]
    fn filter_selects_a_treatment_arm() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("arms.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "trt,age,time,event").unwrap();
        writeln!(f, "A,54,10,1").unwrap();
        writeln!(f, "B,40,20,0").unwrap();
        writeln!(f, "A,62,5,1").unwrap();
        writeln!(f, "B,33,8,1").unwrap();
        drop(f);
        let schema =
            CsvSchema::new(vec!["age".into()], "time", "event").with_filter("trt", "A");
        let (ds, _) = load_csv(&path, &schema).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.records()[0].features, vec![54.0]);
        assert_eq!(ds.records()[1].features, vec![62.0]);
    }

    #[test]
    fn unknown_column_and_garbage_cells_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "age,time,event").unwrap();
        writeln!(f, "54,10,1").unwrap();
        writeln!(f, "40,20,0").unwrap();
        drop(f);
        let schema = CsvSchema::new(vec!["height".into()], "time", "event");
        assert!(load_csv(&path, &schema).is_err());

        let path2 = dir.path().join("garbage.csv");
        let mut f = std::fs::File::create(&path2).unwrap();
        writeln!(f, "age,time,event").unwrap();
        writeln!(f, "notanumber,10,1").unwrap();
        writeln!(f, "40,20,1").unwrap();
        drop(f);
        let schema2 = CsvSchema::new(vec!["age".into()], "time", "event");
        assert!(load_csv(&path2, &schema2).is_err());
    }
}
