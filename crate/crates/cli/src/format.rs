//! Text formats: CSV tables, JSONL event streams and their readers.

use domino_core::analytic::DistributionTable;
use domino_core::montecarlo::{CascadeRecord, ComparisonEntry, EstimateRow};
use serde::{Deserialize, Serialize};
use std::io::{self, Write};

/// Formats `x` with 12 significant digits, in plain notation for moderate
/// exponents and scientific otherwise. Trailing zeros are dropped.
pub fn sig12(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

fn flush<W: Write>(w: csv::Writer<W>) -> io::Result<()> {
    w.into_inner().map_err(|e| e.into_error())?.flush()
}

pub fn write_table<W: Write>(out: W, t: &DistributionTable) -> io::Result<()> {
    let mut w = csv_writer(out);
    w.write_record(["label", "probability", "tolerance", "method"])?;
    for k in 0..t.len() {
        w.write_record([
            t.labels[k].as_str(),
            &sig12(t.probabilities[k]),
            &sig12(t.tolerances[k]),
            &t.method,
        ])?;
    }
    flush(w)
}

pub fn write_estimates<W: Write>(out: W, rows: &[EstimateRow]) -> io::Result<()> {
    let mut w = csv_writer(out);
    w.write_record(["label", "estimate", "std_error", "paths"])?;
    for r in rows {
        w.write_record([
            r.label.as_str(),
            &sig12(r.estimate),
            &sig12(r.std_error),
            &r.paths.to_string(),
        ])?;
    }
    flush(w)
}

pub fn write_comparison<W: Write>(out: W, entries: &[ComparisonEntry]) -> io::Result<()> {
    let mut w = csv_writer(out);
    w.write_record(["label", "analytic", "tolerance", "mc", "std_error", "z", "pass"])?;
    for e in entries {
        w.write_record([
            e.label.as_str(),
            &sig12(e.analytic),
            &sig12(e.tolerance),
            &sig12(e.mc),
            &sig12(e.std_error),
            &sig12(e.z),
            if e.pass { "true" } else { "false" },
        ])?;
    }
    flush(w)
}

fn parse_num(s: &str) -> Result<f64, String> {
    s.parse().map_err(|_| format!("not a number: {s:?}"))
}

fn records(text: &str, header: &[&str]) -> Result<Vec<csv::StringRecord>, String> {
    let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let found = r.headers().map_err(|e| e.to_string())?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(format!("unexpected header {found:?}"));
    }
    r.records().map(|rec| rec.map_err(|e| e.to_string())).collect()
}

/// Reads the output of [`write_table`]. The method column must be constant.
pub fn read_table(text: &str) -> Result<DistributionTable, String> {
    let mut t = DistributionTable {
        labels: Vec::new(),
        probabilities: Vec::new(),
        tolerances: Vec::new(),
        method: String::new(),
    };
    for rec in records(text, &["label", "probability", "tolerance", "method"])? {
        t.labels.push(rec[0].to_string());
        t.probabilities.push(parse_num(&rec[1])?);
        t.tolerances.push(parse_num(&rec[2])?);
        if t.method.is_empty() {
            t.method = rec[3].to_string();
        } else if t.method != rec[3] {
            return Err("mixed method tags".into());
        }
    }
    Ok(t)
}

/// Reads the output of [`write_estimates`].
pub fn read_estimates(text: &str) -> Result<Vec<EstimateRow>, String> {
    records(text, &["label", "estimate", "std_error", "paths"])?
        .into_iter()
        .map(|rec| {
            Ok(EstimateRow {
                label: rec[0].to_string(),
                estimate: parse_num(&rec[1])?,
                std_error: parse_num(&rec[2])?,
                paths: rec[3].parse().map_err(|_| format!("bad path count {:?}", &rec[3]))?,
            })
        })
        .collect()
}

/// Reads the output of [`write_comparison`].
pub fn read_comparison(text: &str) -> Result<Vec<ComparisonEntry>, String> {
    records(text, &["label", "analytic", "tolerance", "mc", "std_error", "z", "pass"])?
        .into_iter()
        .map(|rec| {
            Ok(ComparisonEntry {
                label: rec[0].to_string(),
                analytic: parse_num(&rec[1])?,
                tolerance: parse_num(&rec[2])?,
                mc: parse_num(&rec[3])?,
                std_error: parse_num(&rec[4])?,
                z: parse_num(&rec[5])?,
                pass: rec[6].parse().map_err(|_| format!("bad flag {:?}", &rec[6]))?,
            })
        })
        .collect()
}

/// One line of the event stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventLine {
    pub path: u64,
    /// Index of the contagion time, from 1.
    pub j: usize,
    pub time: f64,
    pub defaults: Vec<usize>,
    /// Post-jump values of the survivors, in id order.
    pub survivor_values: Vec<f64>,
}

pub fn event_lines(r: &CascadeRecord) -> impl Iterator<Item = EventLine> + '_ {
    r.events.iter().enumerate().map(move |(k, e)| EventLine {
        path: r.path,
        j: k + 1,
        time: e.time,
        defaults: e.defaults.to_vec(),
        survivor_values: e.post_jump.clone(),
    })
}

pub fn write_events<W: Write>(out: &mut W, r: &CascadeRecord) -> io::Result<()> {
    for line in event_lines(r) {
        serde_json::to_writer(&mut *out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_events(text: &str) -> Result<Vec<EventLine>, String> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| e.to_string()))
        .collect()
}
