//! Result rows, summary statistics and the CSV writer.
//!
//! Every experiment emits a flat table with one row per (sweep coordinate,
//! statistic, metric). Unused coordinate columns stay empty; infinite dB
//! values serialize as the sentinels `inf` / `-inf`; all other values carry
//! six significant digits.

use std::io::Write;
use std::path::Path;

use crate::CliError;

/// One output record.
#[derive(Debug, Clone)]
pub struct ResultRow {
    pub experiment: &'static str,
    pub eps_h_db: Option<f64>,
    pub alpha: Option<f64>,
    pub freq_hz: Option<f64>,
    pub iteration: Option<usize>,
    pub recursion: Option<usize>,
    pub band_lo_hz: Option<f64>,
    pub band_hi_hz: Option<f64>,
    pub statistic: &'static str,
    pub metric: String,
    pub value_db: f64,
}

impl ResultRow {
    pub fn new(experiment: &'static str, statistic: &'static str, metric: impl Into<String>, value_db: f64) -> Self {
        Self {
            experiment,
            eps_h_db: None,
            alpha: None,
            freq_hz: None,
            iteration: None,
            recursion: None,
            band_lo_hz: None,
            band_hi_hz: None,
            statistic,
            metric: metric.into(),
            value_db,
        }
    }
}

/// Formats with six significant digits, `%g`-style, with `inf`/`-inf`
/// sentinels. Deterministic for identical inputs.
pub fn fmt_sig(v: f64) -> String {
    if v.is_nan() {
        return "nan".to_string();
    }
    if v == f64::INFINITY {
        return "inf".to_string();
    }
    if v == f64::NEG_INFINITY {
        return "-inf".to_string();
    }
    if v == 0.0 {
        return "0".to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        trim_zeros(&s)
    } else {
        let s = format!("{v:.5e}");
        // Normalize to a compact exponent form like 1.5e8.
        match s.split_once('e') {
            Some((mant, e)) => format!("{}e{}", trim_zeros(mant), e),
            None => s,
        }
    }
}

fn trim_zeros(s: &str) -> String {
    if !s.contains('.') {
        return s.to_string();
    }
    let t = s.trim_end_matches('0');
    t.trim_end_matches('.').to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_sig).unwrap_or_default()
}

fn opt_usize(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const CSV_HEADER: &str =
    "experiment,eps_h_db,alpha,freq_hz,iteration,recursion,band_lo_hz,band_hi_hz,statistic,metric,value_db";

/// Serializes rows to CSV text.
pub fn to_csv(rows: &[ResultRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.experiment,
            opt(r.eps_h_db),
            opt(r.alpha),
            opt(r.freq_hz),
            opt_usize(r.iteration),
            opt_usize(r.recursion),
            opt(r.band_lo_hz),
            opt(r.band_hi_hz),
            r.statistic,
            r.metric,
            fmt_sig(r.value_db),
        ));
    }
    out
}

pub fn write_csv(path: &Path, rows: &[ResultRow]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::Io(format!("{}: {e}", parent.display())))?;
        }
    }
    let mut f = std::fs::File::create(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    f.write_all(to_csv(rows).as_bytes())
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Median and quartiles with linear interpolation between order statistics.
#[derive(Debug, Clone, Copy)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

pub fn quartiles(values: &[f64]) -> Quartiles {
    assert!(!values.is_empty(), "no values to summarize");
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let at = |p: f64| -> f64 {
        let pos = (sorted.len() - 1) as f64 * p;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        if lo == hi || sorted[lo] == sorted[hi] {
            sorted[lo]
        } else {
            let frac = pos - lo as f64;
            sorted[lo] * (1.0 - frac) + sorted[hi] * frac
        }
    };
    Quartiles { q1: at(0.25), median: at(0.5), q3: at(0.75) }
}

/// Emits the three statistic rows for one metric at one coordinate.
pub fn stat_rows(
    template: &ResultRow,
    metric: &str,
    values: &[f64],
) -> Vec<ResultRow> {
    let q = quartiles(values);
    [("median", q.median), ("q1", q.q1), ("q3", q.q3)]
        .into_iter()
        .map(|(stat, v)| {
            let mut row = template.clone();
            row.statistic = stat;
            row.metric = metric.to_string();
            row.value_db = v;
            row
        })
        .collect()
}
