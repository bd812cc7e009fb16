//! Plain-text file formats.
//!
//! * edge lists: two whitespace-separated 0-based node ids per line; blank
//!   lines and lines starting with `#` are ignored.
//! * matrices (features, imputed values): comma-separated, one node per row,
//!   no header unless requested.
//! * masks: like matrices, entries strictly `0` or `1`.
//! * SPD-S: non-negative integers, `-1` for unreachable entries.
//!
//! Floats are written with at most 9 significant digits, using the shortest
//! string that reads back to the rounded value.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::confidence::UNREACHABLE;
use crate::error::{PcfiError, Result};
use crate::masking::KnownMask;

/// Formats `v` rounded to 9 significant digits.
pub fn format_float(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let rounded: f64 = format!("{v:.8e}").parse().expect("valid float literal");
    let mag = rounded.abs();
    if (1e-5..1e15).contains(&mag) {
        format!("{rounded}")
    } else {
        format!("{rounded:e}")
    }
}

/// Opens `path` for reading; `-` reads standard input.
pub fn open_input(path: &Path) -> Result<Box<dyn BufRead>> {
    if path.as_os_str() == "-" {
        return Ok(Box::new(BufReader::new(io::stdin())));
    }
    let f =
        File::open(path).map_err(|e| PcfiError::io(format!("opening {}", path.display()), e))?;
    Ok(Box::new(BufReader::new(f)))
}

/// Creates `path` for writing; `-` writes standard output.
pub fn open_output(path: &Path) -> Result<Box<dyn Write>> {
    if path.as_os_str() == "-" {
        return Ok(Box::new(BufWriter::new(io::stdout())));
    }
    let f =
        File::create(path).map_err(|e| PcfiError::io(format!("creating {}", path.display()), e))?;
    Ok(Box::new(BufWriter::new(f)))
}

fn read_all(reader: impl Read, name: &str) -> Result<String> {
    let mut s = String::new();
    BufReader::new(reader)
        .read_to_string(&mut s)
        .map_err(|e| PcfiError::io(format!("reading {name}"), e))?;
    Ok(s)
}

fn parse_err(file: &str, line: usize, message: impl Into<String>) -> PcfiError {
    PcfiError::Parse {
        file: file.to_string(),
        line,
        message: message.into(),
    }
}

/// Reads an edge list. Returns the edges and one more than the largest id.
pub fn read_edges(reader: impl Read, name: &str) -> Result<(Vec<(usize, usize)>, usize)> {
    let text = read_all(reader, name)?;
    let mut edges = Vec::new();
    let mut max_id = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let mut next = || -> Result<usize> {
            let tok = fields
                .next()
                .ok_or_else(|| parse_err(name, lineno + 1, "expected two node ids"))?;
            tok.parse()
                .map_err(|_| parse_err(name, lineno + 1, format!("bad node id {tok:?}")))
        };
        let (u, v) = (next()?, next()?);
        if fields.next().is_some() {
            return Err(parse_err(name, lineno + 1, "expected exactly two columns"));
        }
        max_id = max_id.max(Some(u.max(v)));
        edges.push((u, v));
    }
    Ok((edges, max_id.map_or(0, |m| m + 1)))
}

pub fn write_edges(
    mut w: impl Write,
    edges: impl IntoIterator<Item = (usize, usize)>,
) -> Result<()> {
    for (u, v) in edges {
        writeln!(w, "{u}\t{v}").map_err(|e| PcfiError::io("writing edges", e))?;
    }
    w.flush().map_err(|e| PcfiError::io("writing edges", e))
}

fn read_table<T>(
    reader: impl Read,
    name: &str,
    header: bool,
    mut parse: impl FnMut(&str) -> Option<T>,
) -> Result<Array2<T>> {
    let text = read_all(reader, name)?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate().skip(usize::from(header)) {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let before = data.len();
        for tok in line.split(',') {
            let tok = tok.trim();
            let v = parse(tok)
                .ok_or_else(|| parse_err(name, lineno + 1, format!("bad entry {tok:?}")))?;
            data.push(v);
        }
        let width = data.len() - before;
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(parse_err(
                    name,
                    lineno + 1,
                    format!("expected {c} columns, found {width}"),
                ));
            }
            _ => {}
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols.unwrap_or(0)), data)
        .map_err(|e| PcfiError::input(format!("{name}: {e}")))
}

pub fn read_matrix(reader: impl Read, name: &str, header: bool) -> Result<Array2<f64>> {
    read_table(reader, name, header, |tok| {
        tok.parse::<f64>().ok().filter(|v| v.is_finite())
    })
}

pub fn read_mask(reader: impl Read, name: &str, header: bool) -> Result<KnownMask> {
    let known = read_table(reader, name, header, |tok| match tok {
        "1" => Some(true),
        "0" => Some(false),
        _ => None,
    })?;
    Ok(KnownMask::new(known))
}

pub fn read_spds(reader: impl Read, name: &str, header: bool) -> Result<Array2<u32>> {
    read_table(reader, name, header, |tok| {
        match tok.parse::<i64>().ok()? {
            -1 => Some(UNREACHABLE),
            v if (0..u32::MAX as i64).contains(&v) => Some(v as u32),
            _ => None,
        }
    })
}

fn write_rows<T>(
    mut w: impl Write,
    m: &Array2<T>,
    mut fmt: impl FnMut(&T) -> String,
) -> Result<()> {
    let mut line = String::new();
    for row in m.rows() {
        line.clear();
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                line.push(',');
            }
            line.push_str(&fmt(v));
        }
        line.push('\n');
        w.write_all(line.as_bytes())
            .map_err(|e| PcfiError::io("writing matrix", e))?;
    }
    w.flush().map_err(|e| PcfiError::io("writing matrix", e))
}

pub fn write_matrix(w: impl Write, m: &Array2<f64>) -> Result<()> {
    write_rows(w, m, |&v| format_float(v))
}

pub fn write_mask(w: impl Write, known: &KnownMask) -> Result<()> {
    write_rows(w, known.as_array(), |&k| {
        if k { "1" } else { "0" }.to_string()
    })
}

pub fn write_spds(w: impl Write, s: &Array2<u32>) -> Result<()> {
    write_rows(w, s, |&v| {
        if v == UNREACHABLE {
            "-1".to_string()
        } else {
            v.to_string()
        }
    })
}

pub fn read_labels(reader: impl Read, name: &str) -> Result<Vec<usize>> {
    let text = read_all(reader, name)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse()
                .map_err(|_| parse_err(name, i + 1, format!("bad label {l:?}")))
        })
        .collect()
}

pub fn write_labels(mut w: impl Write, labels: &[usize]) -> Result<()> {
    for l in labels {
        writeln!(w, "{l}").map_err(|e| PcfiError::io("writing labels", e))?;
    }
    w.flush().map_err(|e| PcfiError::io("writing labels", e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: serde::Serialize>(mut w: impl Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| PcfiError::io("writing JSON", io::Error::other(e)))?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| PcfiError::io("writing JSON", e))
}
