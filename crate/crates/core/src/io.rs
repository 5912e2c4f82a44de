//! Process and trend CSV files, and the SVG trend plot.
//!
//! A process CSV has one line per node. Control columns on a line hold the
//! control on the interval starting at that node and are empty on the last
//! line. Single-control layers use the columns
//! `s, w0, w_1..w_m, a_index, y0, y_1..y_n, nu`; relaxed processes replace
//! the control columns by `r{k}_lambda, r{k}_w0, r{k}_w_1.., r{k}_a_index`
//! for each row `k = 0..n` and append `xi_0..xi_n`.

use std::fmt::Write as _;
use std::path::Path;

use crate::embed::OriginalProcess;
use crate::error::{Error, Result};
use crate::gap::{ProbeTrend, Trend};
use crate::model::{ControlSample, IntervalControl, Layer, NodeState, Process, ProblemSpec, SimplexControlRow};

fn num(v: f64) -> String {
    format!("{v}")
}

fn process_header(layer: Layer, n: usize, m: usize) -> Vec<String> {
    let mut h = vec!["s".to_string()];
    if layer == Layer::Relaxed {
        for k in 0..=n {
            h.push(format!("r{k}_lambda"));
            h.push(format!("r{k}_w0"));
            h.extend((1..=m).map(|i| format!("r{k}_w_{i}")));
            h.push(format!("r{k}_a_index"));
        }
    } else {
        h.push("w0".into());
        h.extend((1..=m).map(|i| format!("w_{i}")));
        h.push("a_index".into());
    }
    h.push("y0".into());
    h.extend((1..=n).map(|i| format!("y_{i}")));
    h.push("nu".into());
    if layer == Layer::Relaxed {
        h.extend((0..=n).map(|k| format!("xi_{k}")));
    }
    h
}

fn push_sample(rec: &mut Vec<String>, s: &ControlSample) {
    rec.push(num(s.w0));
    rec.extend(s.w.iter().map(|&v| num(v)));
    rec.push(s.a.to_string());
}

/// Renders `proc` as CSV text.
pub fn emit_process_csv(proc: &Process) -> Result<String> {
    let n = proc.states[0].y.len();
    let m = proc
        .controls
        .first()
        .and_then(|c| c.components().first().map(|(_, s)| s.w.len()))
        .ok_or_else(|| Error::Process("process has no controls".into()))?;
    let header = process_header(proc.layer, n, m);
    let width = header.len();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).map_err(csv_err)?;
    for (k, (s, st)) in proc.grid.iter().zip(&proc.states).enumerate() {
        let mut rec = vec![num(*s)];
        match proc.controls.get(k) {
            Some(IntervalControl::Single(c)) => push_sample(&mut rec, c),
            Some(IntervalControl::Relaxed(r)) => {
                for (lam, c) in r.weights.iter().zip(&r.rows) {
                    rec.push(num(*lam));
                    push_sample(&mut rec, c);
                }
            }
            None => {
                let controls = if proc.layer == Layer::Relaxed { (n + 1) * (m + 3) } else { m + 2 };
                rec.extend(std::iter::repeat_n(String::new(), controls));
            }
        }
        rec.push(num(st.y0));
        rec.extend(st.y.iter().map(|&v| num(v)));
        rec.push(num(st.nu));
        if let Some(xi) = &st.xi {
            rec.extend(xi.iter().map(|&v| num(v)));
        }
        if rec.len() != width {
            return Err(Error::Process(format!("node {k} has {} fields, expected {width}", rec.len())));
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

pub fn write_process_csv(path: &Path, proc: &Process) -> Result<()> {
    let text = emit_process_csv(proc)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_process_csv(path: &Path, spec: &ProblemSpec) -> Result<Process> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_process_csv(&text, spec)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Parses a process CSV against `spec`'s dimensions. The layer is relaxed
/// when the relaxed columns are present, strict when every `w0` is
/// positive, and extended otherwise.
pub fn parse_process_csv(text: &str, spec: &ProblemSpec) -> Result<Process> {
    let (n, m) = (spec.n(), spec.m());
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let relaxed = header.iter().any(|h| h.starts_with("r0_"));
    let layer_hint = if relaxed { Layer::Relaxed } else { Layer::Extended };
    let expected = process_header(layer_hint, n, m);
    if let Some(extra) = header.iter().find(|h| !expected.contains(h)) {
        return Err(Error::Parse(format!("unexpected column `{extra}` for n = {n}, m = {m}")));
    }
    if let Some(missing) = expected.iter().find(|h| !header.contains(h)) {
        return Err(Error::Parse(format!("missing column `{missing}`")));
    }
    if header != expected {
        return Err(Error::Parse(format!("columns out of order; expected {}", expected.join(","))));
    }
    let records: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>().map_err(csv_err)?;
    if records.len() < 2 {
        return Err(Error::Parse("a process needs at least two nodes".into()));
    }
    let field = |line: usize, rec: &csv::StringRecord, col: usize| -> Result<f64> {
        let raw = rec.get(col).unwrap_or("");
        raw.parse::<f64>()
            .map_err(|_| Error::Parse(format!("line {}: column `{}`: cannot parse {raw:?}", line + 2, header[col])))
    };
    let index = |line: usize, rec: &csv::StringRecord, col: usize| -> Result<usize> {
        let raw = rec.get(col).unwrap_or("");
        raw.parse::<usize>()
            .map_err(|_| Error::Parse(format!("line {}: column `{}`: cannot parse {raw:?}", line + 2, header[col])))
    };
    let sample = |line: usize, rec: &csv::StringRecord, col: usize| -> Result<ControlSample> {
        Ok(ControlSample {
            w0: field(line, rec, col)?,
            w: (0..m).map(|i| field(line, rec, col + 1 + i)).collect::<Result<_>>()?,
            a: index(line, rec, col + 1 + m)?,
        })
    };
    let last = records.len() - 1;
    let controls_width = if relaxed { (n + 1) * (m + 3) } else { m + 2 };
    let state_col = 1 + controls_width;
    let mut grid = Vec::with_capacity(records.len());
    let mut controls = Vec::with_capacity(last);
    let mut states = Vec::with_capacity(records.len());
    for (line, rec) in records.iter().enumerate() {
        grid.push(field(line, rec, 0)?);
        if line < last {
            controls.push(if relaxed {
                let mut rows = Vec::with_capacity(n + 1);
                let mut weights = Vec::with_capacity(n + 1);
                for k in 0..=n {
                    let col = 1 + k * (m + 3);
                    weights.push(field(line, rec, col)?);
                    rows.push(sample(line, rec, col + 1)?);
                }
                IntervalControl::Relaxed(SimplexControlRow { rows, weights })
            } else {
                IntervalControl::Single(sample(line, rec, 1)?)
            });
        } else if (1..state_col).any(|c| !rec.get(c).unwrap_or("").is_empty()) {
            return Err(Error::Parse("control columns on the last node must be empty".into()));
        }
        let y0 = field(line, rec, state_col)?;
        let y = (0..n).map(|i| field(line, rec, state_col + 1 + i)).collect::<Result<_>>()?;
        let nu = field(line, rec, state_col + 1 + n)?;
        let xi = if relaxed {
            Some((0..=n).map(|k| field(line, rec, state_col + 2 + n + k)).collect::<Result<_>>()?)
        } else {
            None
        };
        states.push(NodeState { y0, y, nu, xi });
    }
    let layer = if relaxed {
        Layer::Relaxed
    } else if controls.iter().all(|c| c.single().is_some_and(|s| s.w0 > 0.0)) {
        Layer::Strict
    } else {
        Layer::Extended
    };
    let proc = Process {
        layer,
        grid,
        controls,
        states,
    };
    proc.validate(spec)?;
    Ok(proc)
}

/// Reads an original-time process with columns `t, u_1..u_m, a_index`
/// (control columns empty on the last line) and integrates it.
pub fn parse_original_csv(text: &str, spec: &ProblemSpec) -> Result<OriginalProcess> {
    let m = spec.m();
    let mut expected = vec!["t".to_string()];
    expected.extend((1..=m).map(|i| format!("u_{i}")));
    expected.push("a_index".into());
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if let Some(extra) = header.iter().find(|h| !expected.contains(h)) {
        return Err(Error::Parse(format!("unexpected column `{extra}` for m = {m}")));
    }
    if header != expected {
        return Err(Error::Parse(format!("expected columns {}", expected.join(","))));
    }
    let records: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>().map_err(csv_err)?;
    if records.len() < 2 {
        return Err(Error::Parse("a process needs at least two nodes".into()));
    }
    let mut grid = Vec::new();
    let mut controls = Vec::new();
    let mut params = Vec::new();
    for (line, rec) in records.iter().enumerate() {
        let get = |c: usize| {
            let raw = rec.get(c).unwrap_or("");
            raw.parse::<f64>()
                .map_err(|_| Error::Parse(format!("line {}: column `{}`: cannot parse {raw:?}", line + 2, expected[c])))
        };
        grid.push(get(0)?);
        if line + 1 < records.len() {
            controls.push((1..=m).map(get).collect::<Result<Vec<_>>>()?);
            let raw = rec.get(m + 1).unwrap_or("");
            params.push(raw.parse::<usize>().map_err(|_| {
                Error::Parse(format!("line {}: column `a_index`: cannot parse {raw:?}", line + 2))
            })?);
        }
    }
    OriginalProcess::integrate(spec, grid, controls, params)
}

/// Columns `n, w0_floor, objective, violation, status, best, error`.
pub fn emit_trend_csv(trend: &Trend) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["layer", "n", "w0_floor", "objective", "violation", "status", "best", "error"])
        .map_err(csv_err)?;
    for p in &trend.points {
        w.write_record([
            trend.layer.as_str().to_string(),
            p.point.n.to_string(),
            num(p.point.w0_floor),
            num(p.objective),
            num(p.violation),
            p.status.map_or("error", |s| s.as_str()).to_string(),
            num(p.best),
            p.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

pub fn emit_probe_csv(probe: &ProbeTrend) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["delta", "w0_floor", "n", "floor", "tube_violation", "status", "error"])
        .map_err(csv_err)?;
    for p in &probe.points {
        w.write_record([
            num(probe.delta),
            num(probe.w0_floor),
            p.n.to_string(),
            num(p.floor),
            num(p.tube_violation),
            p.status.map_or("error", |s| s.as_str()).to_string(),
            p.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

/// Series `(label, values)` plotted against refinement index.
pub type Series = (String, Vec<f64>);

/// Reads back the `layer` and `best` columns of trend CSVs as plot series.
pub fn trend_series(csvs: &[String]) -> Result<Vec<Series>> {
    let mut out = Vec::new();
    for text in csvs {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let mut label = String::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            label = rec.get(0).unwrap_or("").to_string();
            let raw = rec.get(6).unwrap_or("");
            values.push(raw.parse::<f64>().map_err(|_| Error::Parse(format!("bad best value {raw:?}")))?);
        }
        out.push((label, values));
    }
    Ok(out)
}

const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Line plot of `series` against refinement index. Non-finite values are
/// drawn as gaps.
pub fn trend_svg(title: &str, series: &[Series]) -> String {
    let (w, h, pad) = (640.0, 400.0, 60.0);
    let finite = series.iter().flat_map(|(_, v)| v.iter().copied()).filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo, hi) = (lo - 0.5, hi + 0.5);
    }
    let count = series.iter().map(|(_, v)| v.len()).max().unwrap_or(1).max(2);
    let x = |i: usize| pad + (w - 2.0 * pad) * i as f64 / (count - 1) as f64;
    let y = |v: f64| h - pad - (h - 2.0 * pad) * (v - lo) / (hi - lo);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{pad} {pad} V{} H{}" fill="none" stroke="black"/>"#,
        h - pad,
        w - pad
    );
    for (v, anchor) in [(lo, h - pad), (hi, pad)] {
        let _ = writeln!(s, r#"<text x="{}" y="{anchor}" font-family="sans-serif" font-size="11" text-anchor="end">{v:.4e}</text>"#, pad - 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">refinement level</text>"#, w / 2.0, h - 20.0);
    for (j, (label, values)) in series.iter().enumerate() {
        let color = COLORS[j % COLORS.len()];
        let mut d = String::new();
        let mut pen_up = true;
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                pen_up = true;
                continue;
            }
            let _ = write!(d, "{}{:.2} {:.2} ", if pen_up { "M" } else { "L" }, x(i), y(v));
            pen_up = false;
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, x(i), y(v));
        }
        if !d.is_empty() {
            let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, d.trim_end());
        }
        let ly = pad + 16.0 * j as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{ly}" font-family="sans-serif" font-size="12" fill="{color}">{}</text>"#, w - pad - 100.0, escape(label));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;

    #[test]
    fn reference_round_trips() {
        let spec = bundled::ex51();
        let r = bundled::ex51_reference(&spec, 20).unwrap();
        let text = emit_process_csv(&r).unwrap();
        let back = parse_process_csv(&text, &spec).unwrap();
        assert_eq!(back, r);
        assert_eq!(emit_process_csv(&back).unwrap(), text);
    }

    #[test]
    fn extra_control_column_is_rejected() {
        let spec = bundled::scalar();
        let text = "s,w0,w_1,w_2,a_index,y0,y_1,nu\n0,1,0,0,0,0,0,0\n1,,,,,1,0,0\n";
        let err = parse_process_csv(text, &spec).unwrap_err().to_string();
        assert!(err.contains("w_2"), "{err}");
    }

    #[test]
    fn comma_decimals_are_rejected() {
        let spec = bundled::scalar();
        let text = "s,w0,w_1,a_index,y0,y_1,nu\n0,\"1,0\",0,0,0,0,0\n1,,,,1,0,0\n";
        assert!(parse_process_csv(text, &spec).is_err());
    }

    #[test]
    fn svg_has_one_path_per_series() {
        let svg = trend_svg("t", &[("a".into(), vec![1.0, 0.5]), ("b".into(), vec![0.0, 0.0])]);
        assert_eq!(svg.matches("<path").count(), 3);
    }
}
