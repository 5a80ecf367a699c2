use std::path::Path;

use super::RawSeries;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn parse_cell(cell: &str, row: usize, col: usize) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
        row,
        col,
        msg: format!("`{cell}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            row,
            col,
            msg: format!("`{cell}` is not finite"),
        });
    }
    Ok(v)
}

/// Reads a headed numeric CSV. Rows and columns in errors are 1-based and
/// count data rows (header excluded) and file columns.
pub fn load_csv(path: impl AsRef<Path>, has_timestamp_column: bool) -> Result<RawSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let skip = usize::from(has_timestamp_column);
    if header.len() <= skip {
        return Err(Error::InvalidArgument("CSV has no value columns".into()));
    }
    let names = header[skip..].to_vec();
    let mut data = Vec::new();
    let mut stamps = Vec::new();
    let mut rows = 0;
    for (r, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                row,
                col: rec.len().min(header.len()) + 1,
                msg: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        if has_timestamp_column {
            stamps.push(rec[0].to_owned());
        }
        for (c, cell) in rec.iter().enumerate().skip(skip) {
            data.push(parse_cell(cell, row, c + 1)?);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::InvalidArgument("CSV has no data rows".into()));
    }
    let mut series = RawSeries::new(Tensor::new(&[rows, names.len()], data)?, names)?;
    if has_timestamp_column {
        series.timestamps = Some(stamps);
    }
    Ok(series)
}

/// Reads a {0,1} mask CSV shaped like the data file it accompanies.
pub fn load_mask_csv(path: impl AsRef<Path>, has_timestamp_column: bool) -> Result<Tensor> {
    let m = load_csv(path, has_timestamp_column)?;
    if let Some((i, v)) = m
        .values
        .data()
        .iter()
        .enumerate()
        .find(|(_, &v)| v != 0.0 && v != 1.0)
    {
        let c = m.channels();
        return Err(Error::Parse {
            row: i / c + 1,
            col: i % c + 1 + usize::from(has_timestamp_column),
            msg: format!("mask value {v} is not 0 or 1"),
        });
    }
    Ok(m.values)
}

/// Writes `[T, C]` values with the given header.
pub fn write_csv(path: impl AsRef<Path>, names: &[String], values: &Tensor) -> Result<()> {
    let [t, c] = values.dims()[..] else {
        return Err(Error::InvalidArgument("write_csv expects [T, C]".into()));
    };
    if names.len() != c {
        return Err(Error::ChannelMismatch {
            expected: c,
            found: names.len(),
        });
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(names)?;
    for r in 0..t {
        w.write_record(
            values.data()[r * c..(r + 1) * c]
                .iter()
                .map(|v| v.to_string()),
        )?;
    }
    w.flush()?;
    Ok(())
}
