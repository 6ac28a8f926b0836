//! Machine-readable output writers.
//!
//! CSV files start with a comment line carrying the configuration hash and
//! base seed, then a header row, then data. Floats are printed with 17
//! significant digits so re-reading reproduces every value bit-for-bit.
//! JSON files wrap the same payload in an object that carries the hash and
//! seed as metadata fields.

use std::io::Write;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::sim::{MonteCarloSummary, ReplicateRecord};

/// Output encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl OutputFormat {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(invalid(
                "output.format",
                format!("expected csv or json, got `{other}`"),
            )),
        }
    }

    /// Conventional file extension.
    pub fn extension(&self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

/// Render a float with enough digits to round-trip exactly.
pub fn float_cell(v: f64) -> String {
    format!("{v:.16e}")
}

fn bool_cell(v: bool) -> &'static str {
    if v {
        "1"
    } else {
        "0"
    }
}

/// Quote a field when it contains a comma, quote, or newline.
pub fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn metadata_comment(config_sha: &str, base_seed: u64) -> String {
    format!("# config_sha256={config_sha} base_seed={base_seed}\n")
}

#[derive(Serialize)]
struct JsonEnvelope<'a, T: Serialize> {
    config_sha256: &'a str,
    base_seed: u64,
    #[serde(flatten)]
    payload: &'a T,
}

fn write_json<T: Serialize>(
    w: &mut dyn Write,
    config_sha: &str,
    base_seed: u64,
    payload: &T,
) -> Result<()> {
    let envelope = JsonEnvelope {
        config_sha256: config_sha,
        base_seed,
        payload,
    };
    serde_json::to_writer_pretty(&mut *w, &envelope)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Write the experiment summary. `g` labels the per-coordinate columns with
/// their original design indices.
pub fn write_summary(
    w: &mut dyn Write,
    summary: &MonteCarloSummary,
    g: &[usize],
    config_sha: &str,
    format: OutputFormat,
) -> Result<()> {
    if g.len() != summary.coverage_per_coord.len() {
        return Err(crate::error::dim_mismatch(format!(
            "summary has {} coordinates but g lists {}",
            summary.coverage_per_coord.len(),
            g.len()
        )));
    }
    match format {
        OutputFormat::Json => {
            #[derive(Serialize)]
            struct Payload<'a> {
                summary: &'a MonteCarloSummary,
                g: &'a [usize],
            }
            write_json(w, config_sha, summary.base_seed, &Payload { summary, g })
        }
        OutputFormat::Csv => {
            w.write_all(metadata_comment(config_sha, summary.base_seed).as_bytes())?;
            let mut header = vec![
                "replicates".to_string(),
                "failed".to_string(),
                "omega0_frequency".to_string(),
                "theorem1_violation_rate_given_omega0".to_string(),
                "mean_delta_inf".to_string(),
                "seed_first".to_string(),
                "seed_last".to_string(),
            ];
            for &j in g {
                header.push(format!("coverage_{j}"));
            }
            for &j in g {
                header.push(format!("mean_width_{j}"));
            }
            if summary.debias_coverage.is_some() {
                for &j in g {
                    header.push(format!("debias_coverage_{j}"));
                }
            }
            writeln!(w, "{}", header.join(","))?;
            let mut row = vec![
                summary.replicates.to_string(),
                summary.failed.to_string(),
                float_cell(summary.omega0_frequency),
                float_cell(summary.theorem1_violation_rate_given_omega0),
                float_cell(summary.mean_delta_inf),
                summary.seed_first.to_string(),
                summary.seed_last.to_string(),
            ];
            for v in &summary.coverage_per_coord {
                row.push(float_cell(*v));
            }
            for v in &summary.mean_interval_width {
                row.push(float_cell(*v));
            }
            if let Some(dc) = &summary.debias_coverage {
                for v in dc {
                    row.push(float_cell(*v));
                }
            }
            writeln!(w, "{}", row.join(","))?;
            Ok(())
        }
    }
}

/// Write the per-replicate log. An empty record slice still produces the
/// metadata comment and header.
pub fn write_records(
    w: &mut dyn Write,
    records: &[ReplicateRecord],
    g: &[usize],
    config_sha: &str,
    base_seed: u64,
    format: OutputFormat,
) -> Result<()> {
    match format {
        OutputFormat::Json => {
            #[derive(Serialize)]
            struct Payload<'a> {
                records: &'a [ReplicateRecord],
                g: &'a [usize],
            }
            write_json(w, config_sha, base_seed, &Payload { records, g })
        }
        OutputFormat::Csv => {
            w.write_all(metadata_comment(config_sha, base_seed).as_bytes())?;
            let has_debias = records.iter().any(|r| r.debias_covered.is_some());
            let mut header = vec![
                "seed".to_string(),
                "omega0".to_string(),
                "bound_holds".to_string(),
                "lhs".to_string(),
                "rhs".to_string(),
                "delta_inf".to_string(),
                "delta_mid".to_string(),
                "corollary_bound".to_string(),
                "corollary_ok".to_string(),
                "chain_ok".to_string(),
                "decomposition_err".to_string(),
                "kkt_gap".to_string(),
                "converged".to_string(),
                "phi0_used".to_string(),
            ];
            for &j in g {
                header.push(format!("covered_{j}"));
            }
            for &j in g {
                header.push(format!("width_{j}"));
            }
            for &j in g {
                header.push(format!("pivot_{j}"));
            }
            if has_debias {
                for &j in g {
                    header.push(format!("debias_covered_{j}"));
                }
            }
            writeln!(w, "{}", header.join(","))?;
            for rec in records {
                if rec.covered.len() != g.len() {
                    return Err(crate::error::dim_mismatch(format!(
                        "record has {} coordinates but g lists {}",
                        rec.covered.len(),
                        g.len()
                    )));
                }
                let mut row = vec![
                    rec.seed.to_string(),
                    bool_cell(rec.omega0).to_string(),
                    bool_cell(rec.bound_holds).to_string(),
                    float_cell(rec.lhs),
                    float_cell(rec.rhs),
                    float_cell(rec.delta_inf),
                    float_cell(rec.delta_mid),
                    rec.corollary_bound.map(float_cell).unwrap_or_default(),
                    rec.corollary_ok
                        .map(|b| bool_cell(b).to_string())
                        .unwrap_or_default(),
                    bool_cell(rec.chain_ok).to_string(),
                    float_cell(rec.decomposition_err),
                    float_cell(rec.kkt_gap),
                    bool_cell(rec.converged).to_string(),
                    float_cell(rec.phi0_used),
                ];
                for &c in &rec.covered {
                    row.push(bool_cell(c).to_string());
                }
                for &v in &rec.width {
                    row.push(float_cell(v));
                }
                for &v in &rec.pivot {
                    row.push(float_cell(v));
                }
                if has_debias {
                    match &rec.debias_covered {
                        Some(flags) => {
                            for &c in flags {
                                row.push(bool_cell(c).to_string());
                            }
                        }
                        None => {
                            for _ in g {
                                row.push(String::new());
                            }
                        }
                    }
                }
                writeln!(w, "{}", row.join(","))?;
            }
            Ok(())
        }
    }
}

/// One row of a coefficient table from a data fit.
#[derive(Debug, Clone, Serialize)]
pub struct FitRow {
    /// Original design column index.
    pub index: usize,
    /// True when the column belongs to the unpenalized group.
    pub grouped: bool,
    /// Coefficient on the raw (pre-normalization) column scale.
    pub estimate: f64,
    pub stderr: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

/// Full output of a data fit.
#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub rows: Vec<FitRow>,
    pub sigma: f64,
    pub sigma_estimated: bool,
    pub lambda: f64,
    pub level: f64,
    pub converged: bool,
    pub kkt_gap: f64,
}

/// Write a coefficient table.
pub fn write_fit(
    w: &mut dyn Write,
    report: &FitReport,
    config_sha: &str,
    base_seed: u64,
    format: OutputFormat,
) -> Result<()> {
    match format {
        OutputFormat::Json => write_json(w, config_sha, base_seed, report),
        OutputFormat::Csv => {
            w.write_all(metadata_comment(config_sha, base_seed).as_bytes())?;
            writeln!(
                w,
                "# sigma={} sigma_estimated={} lambda={} level={} converged={} kkt_gap={}",
                float_cell(report.sigma),
                bool_cell(report.sigma_estimated),
                float_cell(report.lambda),
                float_cell(report.level),
                bool_cell(report.converged),
                float_cell(report.kkt_gap),
            )?;
            writeln!(w, "index,grouped,estimate,stderr,lower,upper")?;
            for row in &report.rows {
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    row.index,
                    bool_cell(row.grouped),
                    float_cell(row.estimate),
                    row.stderr.map(float_cell).unwrap_or_default(),
                    row.lower.map(float_cell).unwrap_or_default(),
                    row.upper.map(float_cell).unwrap_or_default(),
                )?;
            }
            Ok(())
        }
    }
}

/// Flat diagnostic table: ordered key/value pairs.
#[derive(Debug, Clone, Serialize)]
pub struct KeyValueReport {
    pub entries: Vec<(String, String)>,
}

impl KeyValueReport {
    pub fn new() -> Self {
        KeyValueReport {
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, key: &str, value: String) {
        self.entries.push((key.to_string(), value));
    }

    pub fn push_float(&mut self, key: &str, value: f64) {
        self.push(key, float_cell(value));
    }
}

impl Default for KeyValueReport {
    fn default() -> Self {
        Self::new()
    }
}

/// Write a key/value table (used by the single-instance theory mode).
pub fn write_keyvals(
    w: &mut dyn Write,
    report: &KeyValueReport,
    config_sha: &str,
    base_seed: u64,
    format: OutputFormat,
) -> Result<()> {
    match format {
        OutputFormat::Json => {
            #[derive(Serialize)]
            struct Payload<'a> {
                entries: &'a [(String, String)],
            }
            write_json(
                w,
                config_sha,
                base_seed,
                &Payload {
                    entries: &report.entries,
                },
            )
        }
        OutputFormat::Csv => {
            w.write_all(metadata_comment(config_sha, base_seed).as_bytes())?;
            writeln!(w, "key,value")?;
            for (k, v) in &report.entries {
                writeln!(w, "{},{}", csv_field(k), csv_field(v))?;
            }
            Ok(())
        }
    }
}

/// A parsed CSV file: leading comments, header row, data rows.
#[derive(Debug, Clone)]
pub struct CsvTable {
    pub comments: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    /// Column position by header name.
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Parse a cell as a float; empty cells become None.
    pub fn float_at(&self, row: usize, name: &str) -> Option<f64> {
        let col = self.column(name)?;
        let cell = self.rows.get(row)?.get(col)?;
        if cell.is_empty() {
            None
        } else {
            cell.parse().ok()
        }
    }
}

/// Parse CSV text produced by the writers above (quoted fields supported).
pub fn parse_csv_text(text: &str) -> Result<CsvTable> {
    let mut comments = Vec::new();
    let mut header: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') {
            comments.push(line.to_string());
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields = split_csv_line(line)?;
        if header.is_none() {
            header = Some(fields);
        } else {
            rows.push(fields);
        }
    }
    Ok(CsvTable {
        comments,
        header: header.unwrap_or_default(),
        rows,
    })
}

fn split_csv_line(line: &str) -> Result<Vec<String>> {
    let mut fields = Vec::new();
    let mut current = String::new();
    let mut chars = line.chars().peekable();
    let mut in_quotes = false;
    while let Some(c) = chars.next() {
        if in_quotes {
            if c == '"' {
                if chars.peek() == Some(&'"') {
                    chars.next();
                    current.push('"');
                } else {
                    in_quotes = false;
                }
            } else {
                current.push(c);
            }
        } else {
            match c {
                '"' => in_quotes = true,
                ',' => {
                    fields.push(std::mem::take(&mut current));
                }
                _ => current.push(c),
            }
        }
    }
    if in_quotes {
        return Err(Error::ConfigParse {
            line: 0,
            message: "unterminated quoted CSV field".to_string(),
        });
    }
    fields.push(current);
    Ok(fields)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_summary() -> MonteCarloSummary {
        MonteCarloSummary {
            replicates: 10,
            failed: 0,
            coverage_per_coord: vec![0.9, 1.0],
            omega0_frequency: 0.95,
            theorem1_violation_rate_given_omega0: 0.0,
            mean_delta_inf: 1.2345678901234567e-3,
            mean_interval_width: vec![0.5, 0.25],
            debias_coverage: None,
            base_seed: 7,
            seed_first: 7,
            seed_last: 16,
        }
    }

    fn sample_record() -> ReplicateRecord {
        ReplicateRecord {
            seed: 7,
            omega0: true,
            bound_holds: true,
            lhs: 0.1234567890123456,
            rhs: 1.0,
            delta_inf: 0.0,
            delta_mid: 0.0,
            corollary_bound: Some(2.5),
            corollary_ok: Some(true),
            chain_ok: true,
            decomposition_err: 1e-15,
            covered: vec![true, false],
            width: vec![0.5, 0.5],
            pivot: vec![0.1, -1.9],
            kkt_gap: 1e-11,
            converged: true,
            phi0_used: 1.0,
            debias_covered: None,
        }
    }

    #[test]
    fn float_cells_round_trip_exactly() {
        for v in [
            0.1,
            -1.0 / 3.0,
            1.2345678901234567e-300,
            6.02214076e23,
            f64::MIN_POSITIVE,
        ] {
            let cell = float_cell(v);
            let back: f64 = cell.parse().unwrap();
            assert_eq!(v, back, "cell {cell}");
        }
    }

    #[test]
    fn summary_csv_round_trips() {
        let summary = sample_summary();
        let mut buf = Vec::new();
        write_summary(&mut buf, &summary, &[0, 1], "abc123", OutputFormat::Csv).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let table = parse_csv_text(&text).unwrap();
        assert!(table.comments[0].contains("config_sha256=abc123"));
        assert!(table.comments[0].contains("base_seed=7"));
        assert_eq!(table.rows.len(), 1);
        assert_eq!(table.float_at(0, "coverage_0"), Some(0.9));
        assert_eq!(table.float_at(0, "mean_width_1"), Some(0.25));
        assert_eq!(
            table.float_at(0, "mean_delta_inf"),
            Some(1.2345678901234567e-3)
        );
    }

    #[test]
    fn summary_json_parses_back() {
        let summary = sample_summary();
        let mut buf = Vec::new();
        write_summary(&mut buf, &summary, &[0, 1], "abc123", OutputFormat::Json).unwrap();
        let parsed: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(parsed["config_sha256"], "abc123");
        assert_eq!(parsed["base_seed"], 7);
        assert_eq!(parsed["summary"]["replicates"], 10);
        let cov = parsed["summary"]["coverage_per_coord"][0].as_f64().unwrap();
        assert!((cov - 0.9).abs() < 1e-15);
    }

    #[test]
    fn records_csv_has_schema_and_optionals() {
        let mut with_debias = sample_record();
        with_debias.debias_covered = Some(vec![true, true]);
        let without = sample_record();
        let mut buf = Vec::new();
        write_records(
            &mut buf,
            &[with_debias, without],
            &[0, 1],
            "deadbeef",
            7,
            OutputFormat::Csv,
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        let table = parse_csv_text(&text).unwrap();
        for col in [
            "seed",
            "omega0",
            "bound_holds",
            "lhs",
            "rhs",
            "delta_inf",
            "covered_0",
            "covered_1",
            "pivot_0",
            "debias_covered_0",
        ] {
            assert!(table.column(col).is_some(), "missing column {col}");
        }
        // Second record has no de-biasing: its cells are empty.
        let col = table.column("debias_covered_0").unwrap();
        assert_eq!(table.rows[1][col], "");
        assert_eq!(table.rows[0][col], "1");
        // Booleans encode as 1/0.
        let cov1 = table.column("covered_1").unwrap();
        assert_eq!(table.rows[0][cov1], "0");
    }

    #[test]
    fn empty_records_still_write_header() {
        let mut buf = Vec::new();
        write_records(&mut buf, &[], &[0, 1], "cafe", 3, OutputFormat::Csv).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let table = parse_csv_text(&text).unwrap();
        assert!(!table.header.is_empty());
        assert!(table.rows.is_empty());
        assert!(table.comments[0].contains("base_seed=3"));
    }

    #[test]
    fn fit_rows_round_trip() {
        let report = FitReport {
            rows: vec![
                FitRow {
                    index: 0,
                    grouped: true,
                    estimate: 1.5,
                    stderr: Some(0.1),
                    lower: Some(1.304),
                    upper: Some(1.696),
                },
                FitRow {
                    index: 3,
                    grouped: false,
                    estimate: -0.75,
                    stderr: None,
                    lower: None,
                    upper: None,
                },
            ],
            sigma: 1.0,
            sigma_estimated: false,
            lambda: 0.5,
            level: 0.95,
            converged: true,
            kkt_gap: 1e-12,
        };
        let mut buf = Vec::new();
        write_fit(&mut buf, &report, "ff00", 1, OutputFormat::Csv).unwrap();
        let table = parse_csv_text(&String::from_utf8(buf).unwrap()).unwrap();
        assert_eq!(table.rows.len(), 2);
        assert_eq!(table.float_at(0, "estimate"), Some(1.5));
        assert_eq!(table.float_at(1, "stderr"), None);
        assert_eq!(table.float_at(1, "estimate"), Some(-0.75));
    }

    #[test]
    fn quoting_survives_round_trip() {
        let mut report = KeyValueReport::new();
        report.push("plain", "value".to_string());
        report.push("with,comma", "a\"quote\"".to_string());
        let mut buf = Vec::new();
        write_keyvals(&mut buf, &report, "00", 0, OutputFormat::Csv).unwrap();
        let table = parse_csv_text(&String::from_utf8(buf).unwrap()).unwrap();
        assert_eq!(table.rows[1][0], "with,comma");
        assert_eq!(table.rows[1][1], "a\"quote\"");
    }
}
