use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{Dataset, Domain};
use crate::diffcore::Array;
use crate::error::{Error, Result};
use crate::fsutil;

/// Original label value for each contiguous class id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMapping {
    pub original: Vec<i64>,
}

impl LabelMapping {
    pub fn num_classes(&self) -> usize {
        self.original.len()
    }
}

/// Reads comma-separated features, with the last column as an integer label
/// when `has_labels`. A first row containing a non-numeric cell is treated
/// as a header. Labels are re-indexed to `0..N` in ascending order of their
/// original values.
pub fn load_csv(path: &Path, has_labels: bool, domain: Domain) -> Result<(Dataset, LabelMapping)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;

    let parse_err = |line: usize, column: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message,
    };

    let mut width: Option<usize> = None;
    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    let mut rows = 0usize;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if i == 0 && rec.iter().any(|c| c.parse::<f64>().is_err()) {
            continue;
        }
        match width {
            None => width = Some(rec.len()),
            Some(w) if w != rec.len() => {
                return Err(parse_err(
                    line,
                    rec.len().min(w) + 1,
                    format!("expected {w} columns, found {}", rec.len()),
                ));
            }
            _ => {}
        }
        let nfeat = if has_labels { rec.len() - 1 } else { rec.len() };
        if has_labels && rec.len() < 2 {
            return Err(parse_err(
                line,
                1,
                "need at least one feature column and a label".into(),
            ));
        }
        for (j, cell) in rec.iter().take(nfeat).enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(line, j + 1, format!("not a number: {cell:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(line, j + 1, format!("non-finite value {cell:?}")));
            }
            features.push(v);
        }
        if has_labels {
            let cell = &rec[nfeat];
            let l: i64 = cell.parse().map_err(|_| {
                parse_err(
                    line,
                    nfeat + 1,
                    format!("label is not an integer: {cell:?}"),
                )
            })?;
            raw_labels.push(l);
        }
        rows += 1;
    }
    let width = width.ok_or(Error::Empty("csv file"))?;
    let nfeat = if has_labels { width - 1 } else { width };

    let (labels, mapping) = if has_labels {
        let distinct: BTreeMap<i64, usize> = raw_labels.iter().map(|&l| (l, 0)).collect();
        let original: Vec<i64> = distinct.keys().copied().collect();
        let index: BTreeMap<i64, usize> =
            original.iter().enumerate().map(|(i, &l)| (l, i)).collect();
        let labels = raw_labels.iter().map(|l| index[l]).collect();
        (Some(labels), LabelMapping { original })
    } else {
        (
            None,
            LabelMapping {
                original: Vec::new(),
            },
        )
    };
    let classes = mapping.num_classes();
    let ds = Dataset::new(
        Array::matrix(rows, nfeat, features)?,
        labels,
        classes,
        domain,
    )?;
    Ok((ds, mapping))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            column: 0,
            message: format!("{other:?}"),
        },
    }
}

/// Writes features (6 decimals) and, if present, the label as the last column.
pub fn write_csv(path: &Path, ds: &Dataset) -> Result<()> {
    let mut out = String::new();
    let f = ds.features();
    for i in 0..ds.len() {
        for (j, v) in f.row(i).iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{v:.6}").unwrap();
        }
        if let Some(l) = ds.labels() {
            write!(out, ",{}", l[i]).unwrap();
        }
        out.push('\n');
    }
    fsutil::atomic_write(path, out.as_bytes())
}
