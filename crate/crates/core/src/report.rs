//! CSV output of a run and the side-by-side comparison of summaries.
//!
//! Reals are written with 9 significant digits in plain decimal notation,
//! so writing, parsing and writing again gives the same bytes.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::sim::{Direction, EventKind, MetricsRow, RunTrace};

pub const METRICS_HEADER: [&str; 10] = [
    "sim_time_s",
    "event",
    "client_id",
    "cluster_id",
    "staleness",
    "mean_accuracy",
    "min_accuracy",
    "up_bytes_cum",
    "down_bytes_cum",
    "cluster_count",
];

pub const SUMMARY_HEADER: [&str; 18] = [
    "protocol",
    "seed",
    "clients",
    "final_mean_accuracy",
    "final_min_accuracy",
    "client_accuracies",
    "q_max",
    "q_avg",
    "rate_proxy",
    "up_bytes",
    "down_bytes",
    "target_accuracy",
    "time_to_target_s",
    "peak_up_1s",
    "peak_down_1s",
    "end_time_s",
    "accepted_pushes",
    "ledger_entries",
];

/// Width of the windows behind the peak columns.
pub const PEAK_WINDOW_S: f64 = 1.0;

/// `x` rounded to 9 significant digits, in the shortest decimal form that
/// parses back to the rounded value.
pub fn fmt_real(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_finite() { "0".into() } else { x.to_string() };
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    let s = rounded.to_string();
    if s == "-0" { "0".into() } else { s }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

pub fn write_metrics<W: Write>(w: W, rows: &[MetricsRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(METRICS_HEADER)?;
    for r in rows {
        out.write_record([
            fmt_real(r.sim_time),
            r.event.as_str().to_string(),
            opt(r.client),
            opt(r.cluster),
            opt(r.staleness),
            fmt_real(r.mean_accuracy),
            fmt_real(r.min_accuracy),
            r.up_bytes_cum.to_string(),
            r.down_bytes_cum.to_string(),
            r.cluster_count.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, path: &Path) -> Result<T> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse().map_err(|_| Error::Schema {
        path: path.to_path_buf(),
        message: format!("column `{}`: cannot parse `{raw}`", METRICS_HEADER.get(i).unwrap_or(&"?")),
    })
}

fn opt_field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, path: &Path) -> Result<Option<T>> {
    if rec.get(i).unwrap_or("").is_empty() {
        Ok(None)
    } else {
        field(rec, i, path).map(Some)
    }
}

/// Parse a metrics stream written by [`write_metrics`]. `path` only labels
/// errors.
pub fn read_metrics<R: Read>(r: R, path: &Path) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    check_columns(&header, &METRICS_HEADER, path)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let event = EventKind::parse(rec.get(1).unwrap_or("")).ok_or_else(|| Error::Schema {
            path: path.to_path_buf(),
            message: format!("column `event`: unknown kind `{}`", rec.get(1).unwrap_or("")),
        })?;
        rows.push(MetricsRow {
            sim_time: field(&rec, 0, path)?,
            event,
            client: opt_field(&rec, 2, path)?,
            cluster: opt_field(&rec, 3, path)?,
            staleness: opt_field(&rec, 4, path)?,
            mean_accuracy: field(&rec, 5, path)?,
            min_accuracy: field(&rec, 6, path)?,
            up_bytes_cum: field(&rec, 7, path)?,
            down_bytes_cum: field(&rec, 8, path)?,
            cluster_count: field(&rec, 9, path)?,
        });
    }
    Ok(rows)
}

fn check_columns(header: &csv::StringRecord, expected: &[&str], path: &Path) -> Result<()> {
    for col in expected {
        if !header.iter().any(|h| h == *col) {
            return Err(Error::Schema { path: path.to_path_buf(), message: format!("missing column `{col}`") });
        }
    }
    for h in header.iter() {
        if !expected.contains(&h) {
            return Err(Error::Schema { path: path.to_path_buf(), message: format!("unexpected column `{h}`") });
        }
    }
    Ok(())
}

/// Summary row of one run, in [`SUMMARY_HEADER`] order.
pub fn summary_record(trace: &RunTrace) -> Vec<String> {
    let accs: Vec<String> = trace.final_accuracy.iter().map(|&a| fmt_real(a)).collect();
    vec![
        trace.protocol.clone(),
        trace.seed.to_string(),
        trace.clients().to_string(),
        fmt_real(trace.final_mean_accuracy()),
        fmt_real(if trace.clients() == 0 { 0.0 } else { trace.final_min_accuracy() }),
        accs.join(";"),
        trace.staleness.q_max.to_string(),
        fmt_real(trace.staleness.q_avg),
        fmt_real(trace.staleness.rate_proxy),
        trace.total_bytes(Direction::Up).to_string(),
        trace.total_bytes(Direction::Down).to_string(),
        trace.target_accuracy.map_or_else(String::new, fmt_real),
        trace.time_to_target.map_or_else(String::new, fmt_real),
        trace.peak_concurrency(Direction::Up, PEAK_WINDOW_S).to_string(),
        trace.peak_concurrency(Direction::Down, PEAK_WINDOW_S).to_string(),
        fmt_real(trace.end_time),
        trace.accepted_pushes.to_string(),
        trace.ledger_entries.to_string(),
    ]
}

pub fn write_summary<W: Write>(w: W, traces: &[&RunTrace]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SUMMARY_HEADER)?;
    for t in traces {
        out.write_record(summary_record(t))?;
    }
    out.flush()?;
    Ok(())
}

/// Write `metrics.csv` and `summary.csv` for one run into `dir`.
pub fn write_run(dir: &Path, trace: &RunTrace) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let metrics = dir.join("metrics.csv");
    let summary = dir.join("summary.csv");
    write_metrics(File::create(&metrics)?, &trace.rows)?;
    write_summary(File::create(&summary)?, &[trace])?;
    Ok((metrics, summary))
}

/// One parsed summary row, keyed by column name.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub source: PathBuf,
    pub values: Vec<(String, String)>,
}

impl SummaryRow {
    pub fn get(&self, column: &str) -> &str {
        self.values.iter().find(|(k, _)| k == column).map_or("", |(_, v)| v.as_str())
    }

    fn number(&self, column: &str) -> Option<f64> {
        self.get(column).parse().ok()
    }
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    check_columns(&header, &SUMMARY_HEADER, path)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let values = header.iter().zip(rec.iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect();
        rows.push(SummaryRow { source: path.to_path_buf(), values });
    }
    Ok(rows)
}

const COMPARE_COLUMNS: [&str; 11] = [
    "protocol",
    "time_to_target_s",
    "time_reduction_pct",
    "final_mean_accuracy",
    "final_min_accuracy",
    "up_bytes",
    "down_bytes",
    "q_max",
    "q_avg",
    "peak_up_1s",
    "peak_down_1s",
];

/// Comparison table of the rows in the given summary files.
///
/// `time_reduction_pct` is how much less time the `apfl` row needed to
/// reach its target than each other row; it is blank on the `apfl` row
/// itself, when no `apfl` row exists, or when either time is missing.
pub fn compare(paths: &[PathBuf]) -> Result<String> {
    let mut rows = Vec::new();
    for p in paths {
        rows.extend(read_summary(p)?);
    }
    let reference = rows.iter().find(|r| r.get("protocol") == "apfl").and_then(|r| r.number("time_to_target_s"));
    let mut table: Vec<Vec<String>> = vec![COMPARE_COLUMNS.iter().map(|s| s.to_string()).collect()];
    for r in &rows {
        let reduction = match (reference, r.number("time_to_target_s")) {
            (Some(a), Some(t)) if r.get("protocol") != "apfl" && t > 0.0 => format!("{:.1}", 100.0 * (1.0 - a / t)),
            _ => String::new(),
        };
        let mut line = Vec::new();
        for col in COMPARE_COLUMNS {
            line.push(if col == "time_reduction_pct" { reduction.clone() } else { r.get(col).to_string() });
        }
        table.push(line);
    }
    let widths: Vec<usize> =
        (0..table[0].len()).map(|i| table.iter().map(|l| l[i].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for line in &table {
        let cells: Vec<String> = line.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        writeln!(out, "{}", cells.join("  ").trim_end()).expect("writing to a string");
    }
    Ok(out)
}
