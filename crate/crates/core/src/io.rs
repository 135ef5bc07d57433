//! Binary tensor/matrix files and CSV result tables.
//!
//! DT3: magic `DT3\0`, three little-endian `u32` dims, then `I·J·K`
//! little-endian `f64` values in column-major order.
//! DM2: magic `DM2\0`, two little-endian `u32` dims, then `rows·cols`
//! column-major `f64` values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiment::{ResultRow, SummaryRow};
use crate::tensor::{DenseMatrix, DenseTensor3};

pub const TENSOR_MAGIC: [u8; 4] = *b"DT3\0";
pub const MATRIX_MAGIC: [u8; 4] = *b"DM2\0";

fn encode(magic: [u8; 4], dims: &[usize], values: &[f64]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(4 + 4 * dims.len() + 8 * values.len());
    out.extend_from_slice(&magic);
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::InvalidArgument(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn decode<const N: usize>(magic: [u8; 4], bytes: &[u8]) -> Result<([usize; N], Vec<f64>)> {
    let header = 4 + 4 * N;
    if bytes.len() < 4 {
        return Err(Error::Malformed(format!("file is only {} bytes long", bytes.len())));
    }
    let found: [u8; 4] = bytes[..4].try_into().expect("length checked");
    if found != magic {
        return Err(Error::BadMagic { expected: magic, found });
    }
    if bytes.len() < header {
        return Err(Error::Malformed("truncated header".into()));
    }
    let mut dims = [0usize; N];
    let mut count: usize = 1;
    for (n, d) in dims.iter_mut().enumerate() {
        let raw = u32::from_le_bytes(bytes[4 + 4 * n..8 + 4 * n].try_into().expect("length checked"));
        if raw == 0 {
            return Err(Error::Malformed(format!("dimension {} is zero", n + 1)));
        }
        *d = raw as usize;
        count = count
            .checked_mul(*d)
            .filter(|c| c.checked_mul(8).is_some())
            .ok_or_else(|| Error::Malformed("dimension product overflows".into()))?;
    }
    let payload = &bytes[header..];
    let found_values = payload.len() / 8;
    if payload.len() < count * 8 {
        return Err(Error::Truncated {
            expected: count,
            found: found_values,
        });
    }
    if payload.len() > count * 8 {
        return Err(Error::Malformed(format!(
            "{} trailing bytes after {count} values",
            payload.len() - count * 8
        )));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((dims, values))
}

pub fn tensor_to_bytes(t: &DenseTensor3) -> Result<Vec<u8>> {
    encode(TENSOR_MAGIC, &t.dims(), t.data())
}

pub fn tensor_from_bytes(bytes: &[u8]) -> Result<DenseTensor3> {
    let (dims, values) = decode::<3>(TENSOR_MAGIC, bytes)?;
    DenseTensor3::new(dims, values)
}

pub fn matrix_to_bytes(m: &DenseMatrix) -> Result<Vec<u8>> {
    encode(MATRIX_MAGIC, &[m.nrows(), m.ncols()], m.as_slice())
}

pub fn matrix_from_bytes(bytes: &[u8]) -> Result<DenseMatrix> {
    let ([rows, cols], values) = decode::<2>(MATRIX_MAGIC, bytes)?;
    Ok(DenseMatrix::from_vec(rows, cols, values))
}

pub fn write_tensor(path: impl AsRef<Path>, t: &DenseTensor3) -> Result<()> {
    fs::write(path, tensor_to_bytes(t)?)?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<DenseTensor3> {
    tensor_from_bytes(&fs::read(path)?)
}

pub fn write_matrix(path: impl AsRef<Path>, m: &DenseMatrix) -> Result<()> {
    fs::write(path, matrix_to_bytes(m)?)?;
    Ok(())
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    matrix_from_bytes(&fs::read(path)?)
}

pub const RESULT_HEADER: [&str; 11] = [
    "algorithm",
    "snr_db",
    "rank",
    "replicate",
    "rmse",
    "cc",
    "rsnr_db",
    "sam",
    "iterations",
    "wall_time_seconds",
    "converged",
];

/// Shortest round-tripping decimal; `inf`, `-inf` and `NaN` for non-finite.
fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn result_record(row: &ResultRow) -> [String; 11] {
    [
        row.algorithm.clone(),
        fmt_f64(row.snr_db),
        row.rank.to_string(),
        row.replicate.to_string(),
        fmt_f64(row.rmse),
        fmt_f64(row.cc),
        fmt_f64(row.rsnr_db),
        fmt_f64(row.sam),
        row.iterations.to_string(),
        fmt_f64(row.wall_time_seconds),
        row.converged.to_string(),
    ]
}

pub fn write_results_to<W: std::io::Write>(rows: &[ResultRow], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(RESULT_HEADER)?;
    for row in rows {
        w.write_record(result_record(row))?;
    }
    w.flush()?;
    Ok(())
}

/// Header line plus one line per row, columns in [`RESULT_HEADER`] order.
pub fn emit_results(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<()> {
    let file = fs::File::create(path)?;
    write_results_to(rows, file)
}

pub const SUMMARY_HEADER: [&str; 10] = [
    "algorithm",
    "snr_db",
    "rank",
    "replicates",
    "converged",
    "median_rmse",
    "median_cc",
    "median_rsnr_db",
    "median_sam",
    "median_iterations",
];

pub fn write_summary(rows: &[SummaryRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for s in rows {
        w.write_record([
            s.algorithm.clone(),
            fmt_f64(s.snr_db),
            s.rank.to_string(),
            s.replicates.to_string(),
            s.converged.to_string(),
            fmt_f64(s.rmse),
            fmt_f64(s.cc),
            fmt_f64(s.rsnr_db),
            fmt_f64(s.sam),
            fmt_f64(s.iterations),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(record: &csv::StringRecord, idx: usize) -> Result<T> {
    let raw = record
        .get(idx)
        .ok_or_else(|| Error::Malformed(format!("missing column {}", RESULT_HEADER[idx])))?;
    raw.parse()
        .map_err(|_| Error::Malformed(format!("bad {} value {raw:?}", RESULT_HEADER[idx])))
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.iter().ne(RESULT_HEADER.iter().copied()) {
        return Err(Error::Malformed(format!("unexpected CSV header {header:?}")));
    }
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record?;
        rows.push(ResultRow {
            algorithm: parse_field(&record, 0)?,
            snr_db: parse_field(&record, 1)?,
            rank: parse_field(&record, 2)?,
            replicate: parse_field(&record, 3)?,
            rmse: parse_field(&record, 4)?,
            cc: parse_field(&record, 5)?,
            rsnr_db: parse_field(&record, 6)?,
            sam: parse_field(&record, 7)?,
            iterations: parse_field(&record, 8)?,
            wall_time_seconds: parse_field(&record, 9)?,
            converged: parse_field(&record, 10)?,
        });
    }
    Ok(rows)
}
