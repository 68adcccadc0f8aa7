//! Run artifacts: a JSON record, CSV tables and SVG plots.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha1::{Digest, Sha1};

use crate::CliError;

/// Git-style blob hash of `bytes`.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    format!("{:x}", h.finalize())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(v) if v.is_nan() => String::new(),
            Cell::Num(v) => format!("{v:e}"),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl Serialize for Cell {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Cell::Num(v) if v.is_finite() => s.serialize_f64(*v),
            Cell::Num(_) => s.serialize_none(),
            Cell::Int(v) => s.serialize_i64(*v),
            Cell::Text(t) => s.serialize_str(t),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table { name: name.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.header.len(), "row width in table {}", self.name);
        self.rows.push(row);
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(format!("{}.csv", self.name));
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let io = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
        w.write_record(&self.header).map_err(io)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render)).map_err(io)?;
        }
        w.flush().map_err(|e| CliError::Io(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: &str, x: &[f64], y: &[f64]) -> Self {
        Series { label: label.into(), points: x.iter().copied().zip(y.iter().copied()).collect() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plot {
    pub name: String,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: [f64; 4] = [70.0, 20.0, 40.0, 50.0];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Plot {
    fn axis(&self, vals: impl Iterator<Item = f64>, log: bool) -> Option<(f64, f64)> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in vals {
            let v = if log { v.log10() } else { v };
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if lo > hi {
            return None;
        }
        if hi - lo < 1e-12 * (1.0 + hi.abs()) {
            lo -= 0.5;
            hi += 0.5;
        }
        Some((lo, hi))
    }

    pub fn render(&self) -> String {
        let xs = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
        let ys = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1));
        let (x0, x1) = self.axis(xs, self.log_x).unwrap_or((0.0, 1.0));
        let (y0, y1) = self.axis(ys, self.log_y).unwrap_or((0.0, 1.0));
        let [ml, mr, mt, mb] = MARGIN;
        let (pw, ph) = (W - ml - mr, H - mt - mb);
        let tx = |v: f64| ml + (if self.log_x { v.log10() } else { v } - x0) / (x1 - x0) * pw;
        let ty = |v: f64| mt + ph - (if self.log_y { v.log10() } else { v } - y0) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(&self.title));
        let _ = writeln!(s, r##"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##);
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let (vx, vy) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
            let lab = |v: f64, log: bool| if log { format!("1e{v:.1}") } else { format!("{v:.3}") };
            let px = ml + f * pw;
            let py = mt + ph - f * ph;
            let _ =
                writeln!(s, r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, mt + ph + 16.0, lab(vx, self.log_x));
            let _ = writeln!(s, r#"<text x="{:.1}" y="{py:.1}" text-anchor="end">{}</text>"#, ml - 4.0, lab(vy, self.log_y));
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            ml + pw / 2.0,
            H - 10.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
            mt + ph / 2.0,
            mt + ph / 2.0,
            escape(&self.y_label)
        );
        for (i, ser) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let pts: Vec<String> = ser
                .points
                .iter()
                .map(|&(x, y)| (tx(x), ty(y)))
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|(x, y)| format!("{x:.2},{y:.2}"))
                .collect();
            if !pts.is_empty() {
                let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
                for p in &pts {
                    let (x, y) = p.split_once(',').unwrap();
                    let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="2.5" fill="{color}"/>"#);
                }
            }
            let ly = mt + 14.0 + 16.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{ly:.1}" fill="{color}" text-anchor="end">{}</text>"#,
                ml + pw - 6.0,
                escape(&ser.label)
            );
        }
        s.push_str("</svg>\n");
        s
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(format!("{}.svg", self.name));
        fs::write(&path, self.render()).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}

/// Everything an experiment produces.
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    pub summary: Value,
    pub tables: Vec<Table>,
    pub plots: Vec<Plot>,
    /// Set when a solver did not reach its target; artifacts are still written.
    pub failure: Option<String>,
}

#[derive(Serialize)]
struct Record<'a, C: Serialize> {
    schema: u32,
    experiment: &'a str,
    config_hash: &'a str,
    config: &'a C,
    status: &'a str,
    failure: Option<&'a str>,
    plots: Vec<&'a str>,
    result: &'a Value,
    /// Every CSV table, cell for cell.
    tables: &'a [Table],
}

impl Artifacts {
    pub fn write<C: Serialize>(&self, dir: &Path, experiment: &str, config: &C) -> Result<String, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        let canonical = serde_json::to_vec(config).map_err(|e| CliError::Io(e.to_string()))?;
        let hash = blob_hash(&canonical);
        let record = Record {
            schema: 1,
            experiment,
            config_hash: &hash,
            config,
            status: if self.failure.is_some() { "solver-failure" } else { "ok" },
            failure: self.failure.as_deref(),
            plots: self.plots.iter().map(|p| p.name.as_str()).collect(),
            result: &self.summary,
            tables: &self.tables,
        };
        let mut text = serde_json::to_string_pretty(&record).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        let path = dir.join("record.json");
        fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        for t in &self.tables {
            t.write(dir)?;
        }
        for p in &self.plots {
            p.write(dir)?;
        }
        Ok(hash)
    }
}
