//! CSV and JSON sidecar writers shared by all exports.
//!
//! Numbers are written with 17 significant digits (`{:.16e}`) so that they
//! round-trip exactly; lines end in `\n` on every platform.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[inline]
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Write a header line and rows of numbers.
pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let mut first = true;
        for v in row {
            if !first {
                w.write_all(b",")?;
            }
            first = false;
            w.write_all(fmt_f64(v).as_bytes())?;
        }
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// As [`write_csv`] with optional cells; `None` is written as an empty field.
pub fn write_csv_optional<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<Option<f64>>>,
{
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.into_iter().map(|c| c.map(fmt_f64).unwrap_or_default()).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(std::io::Error::other)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// `path` with its extension replaced by `json`.
pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("json")
}

/// A parsed row: source line number (1-based) and the two values.
pub type Row = (usize, f64, f64);

/// Read a two-column numeric CSV such as `t,price`.
///
/// A first line that does not parse as numbers is taken as the header.
/// Blank lines and lines starting with `#` are skipped. Any other malformed
/// line is a parse error carrying its line and column.
pub fn read_two_columns(path: &Path) -> Result<Vec<Row>> {
    let text = std::fs::read_to_string(path)?;
    parse_two_columns(&text)
}

pub fn parse_two_columns(text: &str) -> Result<Vec<Row>> {
    let mut rows = Vec::new();
    let mut seen_content = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let first = !seen_content;
        seen_content = true;
        let fields: Vec<&str> = raw.split(',').collect();
        let parsed: Vec<std::result::Result<f64, _>> = fields.iter().map(|f| f.trim().parse::<f64>()).collect();
        if first && parsed.iter().any(|r| r.is_err()) && fields.iter().any(|f| f.trim().chars().any(char::is_alphabetic)) {
            continue;
        }
        if fields.len() != 2 {
            return Err(Error::Parse {
                line,
                column: 1,
                message: format!("expected 2 comma-separated fields, found {}", fields.len()),
            });
        }
        let mut vals = [0.0; 2];
        let mut column = 1;
        for (k, (f, r)) in fields.iter().zip(parsed).enumerate() {
            match r {
                Ok(v) if v.is_finite() => vals[k] = v,
                _ => {
                    let lead = f.len() - f.trim_start().len();
                    return Err(Error::Parse {
                        line,
                        column: column + lead,
                        message: format!("`{}` is not a finite number", f.trim()),
                    });
                }
            }
            column += f.len() + 1;
        }
        rows.push((line, vals[0], vals[1]));
    }
    Ok(rows)
}
