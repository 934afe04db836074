//! Minimal TSV reading and writing shared by all file formats.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// A data row with its 1-based line number.
pub struct Row {
    pub line: usize,
    pub fields: Vec<String>,
}

/// Reads a TSV file with a mandatory header row. Returns the header fields
/// and all non-empty data rows.
pub fn read(path: &Path) -> Result<(Vec<String>, Vec<Row>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let header = match lines.next() {
        Some((_, l)) => l.map_err(|e| Error::io(path, e))?,
        None => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: "missing header row".into(),
            })
        }
    };
    let header = header.split('\t').map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, l) in lines {
        let l = l.map_err(|e| Error::io(path, e))?;
        if l.trim().is_empty() {
            continue;
        }
        rows.push(Row {
            line: i + 1,
            fields: l.split('\t').map(str::to_string).collect(),
        });
    }
    Ok((header, rows))
}

pub fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

pub fn parse_field<T: std::str::FromStr>(path: &Path, row: &Row, col: usize) -> Result<T> {
    let raw = row
        .fields
        .get(col)
        .ok_or_else(|| parse_err(path, row.line, format!("missing column {}", col + 1)))?;
    raw.trim()
        .parse()
        .map_err(|_| parse_err(path, row.line, format!("cannot parse `{raw}` in column {}", col + 1)))
}

/// Writes a header and rows, tab-separated, `\n` line endings.
pub fn write<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: AsRef<[String]>,
{
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", header.join("\t")).map_err(io)?;
    for r in rows {
        writeln!(w, "{}", r.as_ref().join("\t")).map_err(io)?;
    }
    w.flush().map_err(io)
}
