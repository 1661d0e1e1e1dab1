//! CSV, JSON and series output for metrics reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::MetricsReport;

pub const CSV_HEADER: &str = "dim,params,mrr,hit1,hit3,hit10,effi";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => Err(Error::Report(format!("unknown format `{s}`"))),
        }
    }
}

/// Format with six significant digits, without trailing zeros.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_owned()
        } else {
            s
        }
    } else {
        format!("{x:.5e}")
    }
}

fn sorted(reports: &[MetricsReport]) -> Vec<MetricsReport> {
    let mut r = reports.to_vec();
    r.sort_by_key(|m| m.dim);
    r
}

pub fn to_csv(reports: &[MetricsReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in sorted(reports) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.dim,
            r.params,
            sig6(r.mrr),
            sig6(r.hit1),
            sig6(r.hit3),
            sig6(r.hit10),
            sig6(r.effi)
        );
    }
    out
}

pub fn to_json(reports: &[MetricsReport]) -> String {
    let mut s = serde_json::to_string_pretty(&sorted(reports)).expect("reports serialize");
    s.push('\n');
    s
}

/// Tab-separated per-dimension series for plotting metric-vs-width curves.
pub fn to_series(reports: &[MetricsReport]) -> String {
    let mut out = String::from("# dim\tparams\tmrr\thit1\thit3\thit10\teffi\n");
    for r in sorted(reports) {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.dim, r.params, r.mrr, r.hit1, r.hit3, r.hit10, r.effi
        );
    }
    out
}

/// Write the report file and, next to it, `<stem>.series.tsv`.
pub fn emit_report(reports: &[MetricsReport], path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::Report("no reports to write".into()));
    }
    let path = path.as_ref();
    let body = match format {
        ReportFormat::Csv => to_csv(reports),
        ReportFormat::Json => to_json(reports),
    };
    fs::write(path, body).map_err(|e| Error::io(path, e))?;
    let series = path.with_extension("series.tsv");
    fs::write(&series, to_series(reports)).map_err(|e| Error::io(&series, e))
}

pub fn parse_csv(text: &str) -> Result<Vec<MetricsReport>> {
    let mut lines = text.lines().map(|l| l.trim_end_matches('\r'));
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        _ => return Err(Error::Report(format!("expected header `{CSV_HEADER}`"))),
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let bad = |m: String| Error::Report(format!("row {}: {m}", n + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad(format!("expected 7 fields, found {}", f.len())));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad integer `{s}`")));
        let real = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number `{s}`")));
        out.push(MetricsReport {
            dim: int(f[0])?,
            params: int(f[1])?,
            mrr: real(f[2])?,
            hit1: real(f[3])?,
            hit3: real(f[4])?,
            hit10: real(f[5])?,
            effi: real(f[6])?,
        });
    }
    Ok(out)
}
