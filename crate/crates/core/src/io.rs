//! CSV formats for coordinates, edge lists, signals, partitions,
//! interpolation results and metric reports.
//!
//! Floats are written with the shortest representation that parses back to
//! the same value, so every writer round-trips bit-exactly through its reader.

use std::io::{Read, Write};

use csv::{ReaderBuilder, StringRecord, WriterBuilder};

use crate::error::{Error, Result};
use crate::estimation::Interpolation;
use crate::eval::MetricReport;
use crate::graph::Graph;
use crate::model::RealizationSet;
use crate::partition::Partition;

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Csv { line, message: e.to_string() }
}

fn bad_row(line: u64, message: impl Into<String>) -> Error {
    Error::Csv { line, message: message.into() }
}

fn records<R: Read>(reader: R) -> Result<(StringRecord, Vec<(u64, StringRecord)>)> {
    let mut rdr = ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let header = rdr.headers().map_err(csv_error)?.clone();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push((line, rec));
    }
    Ok((header, rows))
}

fn expect_header(header: &StringRecord, names: &[&str]) -> Result<()> {
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != names {
        return Err(bad_row(1, format!("expected header {}, got {}", names.join(","), got.join(","))));
    }
    Ok(())
}

fn parse_f64(field: &str, line: u64, what: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| bad_row(line, format!("cannot parse {what} {field:?}")))
}

fn parse_usize(field: &str, line: u64, what: &str) -> Result<usize> {
    field
        .trim()
        .parse::<usize>()
        .map_err(|_| bad_row(line, format!("cannot parse {what} {field:?}")))
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    WriterBuilder::new().has_headers(false).from_writer(w)
}

/// Reads `id,x,y[,z…]`; ids must be a permutation of `0..n`. Rows are returned in id order.
pub fn read_coords<R: Read>(reader: R) -> Result<Vec<Vec<f64>>> {
    let (header, rows) = records(reader)?;
    if header.len() < 2 || header.get(0).map(str::trim) != Some("id") {
        return Err(bad_row(1, "coordinate header must start with id followed by at least one axis"));
    }
    let n = rows.len();
    let mut out: Vec<Option<Vec<f64>>> = vec![None; n];
    for (line, rec) in rows {
        let id = parse_usize(&rec[0], line, "id")?;
        if id >= n {
            return Err(bad_row(line, format!("id {id} out of range for {n} rows")));
        }
        if out[id].is_some() {
            return Err(bad_row(line, format!("duplicate id {id}")));
        }
        let coords = rec.iter().skip(1).map(|f| parse_f64(f, line, "coordinate")).collect::<Result<Vec<_>>>()?;
        out[id] = Some(coords);
    }
    Ok(out.into_iter().map(|c| c.unwrap_or_default()).collect())
}

pub fn write_coords<W: Write>(w: W, points: &[Vec<f64>]) -> Result<()> {
    let dim = points.first().map_or(2, Vec::len);
    let axes = ["x", "y", "z"];
    let mut header = vec!["id".to_string()];
    header.extend((0..dim).map(|d| axes.get(d).map_or(format!("x{d}"), |a| a.to_string())));
    let mut wtr = writer(w);
    wtr.write_record(&header).map_err(csv_error)?;
    for (i, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: p.len(), context: "coordinate dimension" });
        }
        let mut row = vec![i.to_string()];
        row.extend(p.iter().map(f64::to_string));
        wtr.write_record(&row).map_err(csv_error)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes each undirected edge once as `i,j,w` with `i < j`.
pub fn write_edges<W: Write>(w: W, graph: &Graph) -> Result<()> {
    let mut wtr = writer(w);
    wtr.write_record(["i", "j", "w"]).map_err(csv_error)?;
    for &(i, j) in graph.edges() {
        wtr.write_record([i.to_string(), j.to_string(), graph.weight(i, j).to_string()])
            .map_err(csv_error)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_edges<R: Read>(reader: R, n: usize) -> Result<Graph> {
    let (header, rows) = records(reader)?;
    expect_header(&header, &["i", "j", "w"])?;
    let mut edges = Vec::with_capacity(rows.len());
    for (line, rec) in rows {
        let i = parse_usize(&rec[0], line, "vertex")?;
        let j = parse_usize(&rec[1], line, "vertex")?;
        if i >= n || j >= n {
            return Err(bad_row(line, format!("edge ({i},{j}) out of range for {n} vertices")));
        }
        edges.push((i, j, parse_f64(&rec[2], line, "weight")?));
    }
    Graph::from_edges(n, &edges)
}

/// One row per realization with header `v0,…,v{N−1}`; missing entries are empty fields.
pub fn write_signals<W: Write>(w: W, r: &RealizationSet) -> Result<()> {
    let n = r.n_vertices();
    let mut wtr = writer(w);
    wtr.write_record((0..n).map(|i| format!("v{i}"))).map_err(csv_error)?;
    for l in 0..r.len() {
        let row: Vec<String> = (0..n).map(|i| r.value(l, i).map_or(String::new(), |v| v.to_string())).collect();
        wtr.write_record(&row).map_err(csv_error)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_signals<R: Read>(reader: R) -> Result<RealizationSet> {
    let (header, rows) = records(reader)?;
    let n = header.len();
    let mut data = Vec::with_capacity(rows.len());
    for (line, rec) in rows {
        let row = rec
            .iter()
            .map(|f| if f.trim().is_empty() { Ok(None) } else { parse_f64(f, line, "signal value").map(Some) })
            .collect::<Result<Vec<_>>>()?;
        data.push(row);
    }
    RealizationSet::from_rows(&data, n)
}

pub fn write_partition<W: Write>(w: W, p: &Partition) -> Result<()> {
    let mut wtr = writer(w);
    wtr.write_record(["vertex", "label"]).map_err(csv_error)?;
    for (v, l) in p.labels().iter().enumerate() {
        wtr.write_record([v.to_string(), l.to_string()]).map_err(csv_error)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads `vertex,label`; vertices must be a permutation of `0..n` and labels
/// must cover `0..k` for some `k`.
pub fn read_partition<R: Read>(reader: R) -> Result<Partition> {
    let (header, rows) = records(reader)?;
    expect_header(&header, &["vertex", "label"])?;
    let n = rows.len();
    let mut labels: Vec<Option<usize>> = vec![None; n];
    for (line, rec) in rows {
        let v = parse_usize(&rec[0], line, "vertex")?;
        if v >= n {
            return Err(bad_row(line, format!("vertex {v} out of range for {n} rows")));
        }
        if labels[v].is_some() {
            return Err(bad_row(line, format!("duplicate vertex {v}")));
        }
        labels[v] = Some(parse_usize(&rec[1], line, "label")?);
    }
    let labels: Vec<usize> = labels.into_iter().map(|l| l.unwrap_or(0)).collect();
    let k = labels.iter().max().map_or(0, |m| m + 1);
    Partition::new(labels, k)
}

pub fn write_interpolations<W: Write>(w: W, results: &[Interpolation]) -> Result<()> {
    let mut wtr = writer(w);
    wtr.write_record(["realization", "vertex", "estimate"]).map_err(csv_error)?;
    for (l, res) in results.iter().enumerate() {
        for (v, e) in res.missing.iter().zip(res.estimates.iter()) {
            wtr.write_record([l.to_string(), v.to_string(), e.to_string()]).map_err(csv_error)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Reads `realization,vertex,estimate` rows.
pub fn read_interpolations<R: Read>(reader: R) -> Result<Vec<(usize, usize, f64)>> {
    let (header, rows) = records(reader)?;
    expect_header(&header, &["realization", "vertex", "estimate"])?;
    rows.into_iter()
        .map(|(line, rec)| {
            Ok((
                parse_usize(&rec[0], line, "realization")?,
                parse_usize(&rec[1], line, "vertex")?,
                parse_f64(&rec[2], line, "estimate")?,
            ))
        })
        .collect()
}

/// A metrics CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub value: f64,
    pub details: String,
}

impl From<&MetricReport> for MetricRow {
    fn from(r: &MetricReport) -> Self {
        MetricRow {
            metric: r.name.clone(),
            value: r.value,
            details: format!("numerator={};denominator={};count={}", r.numerator, r.denominator, r.count),
        }
    }
}

pub fn write_metrics<W: Write>(w: W, rows: &[MetricRow]) -> Result<()> {
    let mut wtr = writer(w);
    wtr.write_record(["metric", "value", "details"]).map_err(csv_error)?;
    for r in rows {
        wtr.write_record([r.metric.clone(), r.value.to_string(), r.details.clone()])
            .map_err(csv_error)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_metrics<R: Read>(reader: R) -> Result<Vec<MetricRow>> {
    let (header, rows) = records(reader)?;
    expect_header(&header, &["metric", "value", "details"])?;
    rows.into_iter()
        .map(|(line, rec)| {
            Ok(MetricRow {
                metric: rec[0].to_string(),
                value: parse_f64(&rec[1], line, "value")?,
                details: rec[2].to_string(),
            })
        })
        .collect()
}
