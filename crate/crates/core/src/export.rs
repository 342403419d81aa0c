//! CSV serialization of ensembles, grid functions and operators. Floats are
//! written with 17 significant digits so values round-trip exactly; files
//! are replaced atomically.

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::sde::Ensemble;
use crate::spectral::GridOperator;

/// `{:.16e}`: 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Table with a header row and numeric rows.
pub fn table_csv<I>(header: &[&str], rows: I) -> Result<String>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut w = writer();
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::Domain(format!(
                "row has {} fields, header has {}",
                row.len(),
                header.len()
            )));
        }
        w.write_record(row.iter().map(|x| fmt_f64(*x))).map_err(csv_err)?;
    }
    finish(w)
}

/// Columns `path_id,k,s,x0,x1,x2,x3`; `k` is the recorded-point index.
pub fn ensemble_csv(e: &Ensemble) -> Result<String> {
    let mut w = writer();
    w.write_record(["path_id", "k", "s", "x0", "x1", "x2", "x3"])
        .map_err(csv_err)?;
    for (id, p) in e.paths.iter().enumerate() {
        for (k, (s, x)) in p.s_values.iter().zip(&p.points).enumerate() {
            let mut rec = vec![id.to_string(), k.to_string(), fmt_f64(*s)];
            rec.extend(x.0.iter().map(|c| fmt_f64(*c)));
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    finish(w)
}

/// Coordinate format `row,col,value`.
pub fn operator_csv(op: &GridOperator) -> Result<String> {
    let mut w = writer();
    w.write_record(["row", "col", "value"]).map_err(csv_err)?;
    for &(r, c, v) in &op.entries {
        w.write_record([r.to_string(), c.to_string(), fmt_f64(v)])
            .map_err(csv_err)?;
    }
    finish(w)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ComplexValue {
    pub re: f64,
    pub im: f64,
}

pub fn spectrum_records(values: &[Complex64]) -> Vec<ComplexValue> {
    values
        .iter()
        .map(|z| ComplexValue { re: z.re, im: z.im })
        .collect()
}

/// Writes `contents` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Domain(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}
