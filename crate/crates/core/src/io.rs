//! CSV formats for observation panels and labeled matrices.
//!
//! Panels: header `t,<key>,<key>,...`, one row per observation time. Keys are
//! structured series keys (`c0.R[1.0]`, `c1.s`, `c1.v`, `c1.iv`) or columns
//! renamed to keys through a binding map. Empty cells are rejected.
//!
//! Matrices: a header row of state labels preceded by an empty cell, then one
//! row per state starting with its label. Values use 17 significant digits.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::types::{BlockCorrelationMatrix, ObservationPanel, SeriesKey};

fn fmt_value(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_value(cell: &str, column: &str, row: usize) -> Result<f64> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Err(Error::Csv(format!(
            "empty cell in column `{column}` at data row {row}"
        )));
    }
    cell.parse::<f64>().map_err(|_| {
        Error::Csv(format!(
            "bad number `{cell}` in column `{column}` at data row {row}"
        ))
    })
}

/// Reads a panel. `bindings` maps raw column names to series keys; every
/// other column after `t` must itself be a series key.
pub fn read_panel_csv<R: Read>(
    reader: R,
    bindings: &BTreeMap<String, SeriesKey>,
) -> Result<ObservationPanel> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = r.headers()?.clone();
    if header.get(0) != Some("t") {
        return Err(Error::Csv("first panel column must be `t`".into()));
    }
    let keys = header
        .iter()
        .skip(1)
        .map(|h| match bindings.get(h) {
            Some(k) => Ok(*k),
            None => h.parse::<SeriesKey>(),
        })
        .collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = header.iter().map(str::to_string).collect();

    let mut times = Vec::new();
    let mut columns = vec![Vec::new(); keys.len()];
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != names.len() {
            return Err(Error::Csv(format!(
                "data row {row} has {} cells, expected {}",
                rec.len(),
                names.len()
            )));
        }
        times.push(parse_value(&rec[0], "t", row)?);
        for (k, col) in columns.iter_mut().enumerate() {
            col.push(parse_value(&rec[k + 1], &names[k + 1], row)?);
        }
    }
    let mut panel = ObservationPanel::new(times)?;
    for (k, (key, col)) in keys.into_iter().zip(columns).enumerate() {
        if panel.get(&key).is_some() {
            return Err(Error::Csv(format!(
                "column `{}` duplicates series {key}",
                names[k + 1]
            )));
        }
        panel.insert(key, col)?;
    }
    Ok(panel)
}

pub fn write_panel_csv<W: Write>(panel: &ObservationPanel, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_string()];
    header.extend(panel.keys().map(ToString::to_string));
    w.write_record(&header)?;
    let series: Vec<&Vec<f64>> = panel.series().values().collect();
    for (k, t) in panel.times().iter().enumerate() {
        let mut row = vec![fmt_value(*t)];
        row.extend(series.iter().map(|s| fmt_value(s[k])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_matrix_csv<W: Write>(matrix: &BlockCorrelationMatrix, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![String::new()];
    header.extend(matrix.labels().iter().cloned());
    w.write_record(&header)?;
    for (r, label) in matrix.labels().iter().enumerate() {
        let mut row = vec![label.clone()];
        row.extend((0..matrix.dim()).map(|c| fmt_value(matrix.get(r, c))));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Block sizes implied by labels of the form `c{i}.{state}`.
pub fn block_sizes_from_labels(labels: &[String]) -> Result<Vec<usize>> {
    let mut sizes: Vec<usize> = Vec::new();
    let mut current: Option<&str> = None;
    for label in labels {
        let (prefix, _) = label
            .split_once('.')
            .ok_or_else(|| Error::Csv(format!("label `{label}` lacks a component prefix")))?;
        if current == Some(prefix) {
            *sizes.last_mut().unwrap() += 1;
        } else {
            current = Some(prefix);
            sizes.push(1);
        }
    }
    Ok(sizes)
}

/// Reads a labeled square matrix. Block sizes default to the grouping of
/// label prefixes.
pub fn read_matrix_csv<R: Read>(
    reader: R,
    block_sizes: Option<Vec<usize>>,
) -> Result<BlockCorrelationMatrix> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = r.headers()?.clone();
    let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let n = labels.len();
    let mut values = Vec::with_capacity(n * n);
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != n + 1 {
            return Err(Error::Csv(format!(
                "matrix row {rows} has {} cells, expected {}",
                rec.len(),
                n + 1
            )));
        }
        if labels.get(rows).map(String::as_str) != Some(&rec[0]) {
            return Err(Error::Csv(format!(
                "row label `{}` does not match column label {rows}",
                &rec[0]
            )));
        }
        for c in 0..n {
            values.push(parse_value(&rec[c + 1], &labels[c], rows)?);
        }
        rows += 1;
    }
    if rows != n || n == 0 {
        return Err(Error::DimensionMismatch(format!(
            "matrix has {rows} rows and {n} columns"
        )));
    }
    let sizes = match block_sizes {
        Some(s) => s,
        None => block_sizes_from_labels(&labels)?,
    };
    BlockCorrelationMatrix::new(DMatrix::from_row_slice(n, n, &values), sizes, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panel_round_trip() {
        let mut p = ObservationPanel::new(vec![0.0, 0.004, 0.008]).unwrap();
        p.insert(SeriesKey::spot_rate(0, 1.0), vec![0.01, 0.011, 1.0 / 3.0])
            .unwrap();
        p.insert(SeriesKey::log_price(1), vec![0.0, -1e-7, 2.5e-3])
            .unwrap();
        let mut buf = Vec::new();
        write_panel_csv(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,c0.R[1.0],c1.s\n"));
        let back = read_panel_csv(text.as_bytes(), &BTreeMap::new()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn panel_rejects_empty_cells_and_bad_headers() {
        let err = read_panel_csv("t,c1.s\n0,1\n1,\n".as_bytes(), &BTreeMap::new()).unwrap_err();
        assert!(err.to_string().contains("c1.s"));
        assert!(read_panel_csv("time,c1.s\n0,1\n1,2\n".as_bytes(), &BTreeMap::new()).is_err());
        assert!(read_panel_csv("t,price\n0,1\n1,2\n".as_bytes(), &BTreeMap::new()).is_err());
    }

    #[test]
    fn bindings_rename_columns() {
        let b = BTreeMap::from([("spx".to_string(), SeriesKey::log_price(1))]);
        let p = read_panel_csv("t,spx\n0,1\n1,2\n2,4\n".as_bytes(), &b).unwrap();
        assert_eq!(p.get(&SeriesKey::log_price(1)).unwrap(), &[1.0, 2.0, 4.0]);
    }

    #[test]
    fn matrix_round_trip() {
        let m = BlockCorrelationMatrix::new(
            DMatrix::from_row_slice(3, 3, &[1.0, 0.1, 0.3, 0.1, 1.0, -0.2, 0.3, -0.2, 1.0]),
            vec![2, 1],
            vec!["c0.s".into(), "c0.v".into(), "c1.s".into()],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_matrix_csv(&m, &mut buf).unwrap();
        let back = read_matrix_csv(buf.as_slice(), None).unwrap();
        assert_eq!(back, m);
    }
}
