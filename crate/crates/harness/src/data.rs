//! Labelled feature matrices from disk: delimited text or raw little-endian
//! `f64`, one example per row with the integer label in the last column.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use csbo_core::problem::LabelledData;
use nalgebra::DMatrix;

use crate::config::DataFormat;

pub fn read_rows(path: &Path, format: DataFormat, columns: Option<usize>) -> Result<Vec<Vec<f64>>> {
    match format {
        DataFormat::Csv => read_csv(path),
        DataFormat::F64le => {
            let cols = columns.context("raw f64 data needs a column count")?;
            read_f64le(path, cols)
        }
    }
}

fn read_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.with_context(|| format!("row {i} of {}", path.display()))?;
        let row = rec
            .iter()
            .map(|v| v.parse::<f64>().with_context(|| format!("row {i}: `{v}` is not a number")))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn read_f64le(path: &Path, cols: usize) -> Result<Vec<Vec<f64>>> {
    ensure!(cols >= 2, "need at least one feature column and a label column");
    let mut bytes = Vec::new();
    File::open(path)
        .with_context(|| format!("opening {}", path.display()))?
        .read_to_end(&mut bytes)?;
    let row_bytes = cols * 8;
    ensure!(
        bytes.len() % row_bytes == 0,
        "{} bytes is not a whole number of {cols}-column rows",
        bytes.len()
    );
    Ok(bytes
        .chunks_exact(row_bytes)
        .map(|row| {
            row.chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect()
        })
        .collect())
}

/// Splits rows into features and labels.
pub fn to_labelled(rows: &[Vec<f64>]) -> Result<LabelledData> {
    ensure!(!rows.is_empty(), "no rows");
    let cols = rows[0].len();
    ensure!(cols >= 2, "need at least one feature column and a label column");
    let mut labels = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        ensure!(r.len() == cols, "row {i} has {} columns, expected {cols}", r.len());
        let l = r[cols - 1];
        if !(l >= 0.0 && l.fract() == 0.0 && l < u32::MAX as f64) {
            bail!("row {i}: label {l} is not a non-negative integer");
        }
        labels.push(l as usize);
    }
    let features = DMatrix::from_fn(rows.len(), cols - 1, |i, k| rows[i][k]);
    Ok(LabelledData::new(features, labels)?)
}

/// First `n_train` rows for training, the next `n_val` for validation.
pub fn load_split(
    path: &Path,
    format: DataFormat,
    columns: Option<usize>,
    n_train: usize,
    n_val: usize,
) -> Result<(LabelledData, LabelledData)> {
    let rows = read_rows(path, format, columns)?;
    ensure!(
        rows.len() >= n_train + n_val,
        "{} has {} rows, need {} training + {} validation",
        path.display(),
        rows.len(),
        n_train,
        n_val
    );
    Ok((to_labelled(&rows[..n_train])?, to_labelled(&rows[n_train..n_train + n_val])?))
}
