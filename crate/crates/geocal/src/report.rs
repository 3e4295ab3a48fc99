//! JSON and CSV writers for report trees.

use std::path::Path;

use geocal_core::EvalReport;
use serde::Serialize;

use crate::error::{GeocalError, Result};
use crate::formats::write_file;

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

/// One CSV record per item, header from the field names.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| GeocalError::io(path, e.into_error()))?;
    write_file(path, &bytes)
}

/// CSV of a dense matrix with row/column labels; non-finite cells are empty.
pub fn write_matrix_csv(path: &Path, corner: &str, matrix: &geocal_core::Matrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![corner.to_owned()];
    header.extend((0..matrix.cols()).map(|j| j.to_string()));
    w.write_record(&header)?;
    for i in 0..matrix.rows() {
        let mut rec = vec![i.to_string()];
        rec.extend(matrix.row(i).iter().map(|v| if v.is_finite() { v.to_string() } else { String::new() }));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| GeocalError::io(path, e.into_error()))?;
    write_file(path, &bytes)
}

#[derive(Serialize)]
struct EvalRow<'a> {
    scope: &'a str,
    index: Option<usize>,
    accuracy: Option<f64>,
}

/// Long-format CSV of an [`EvalReport`]: overall, bands, per domain, per class.
pub fn write_eval_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut rows = vec![
        EvalRow { scope: "overall", index: None, accuracy: Some(report.top1_overall) },
        EvalRow { scope: "domain_std", index: None, accuracy: Some(report.domain_std) },
        EvalRow { scope: "head", index: None, accuracy: report.head },
        EvalRow { scope: "middle", index: None, accuracy: report.middle },
        EvalRow { scope: "tail", index: None, accuracy: report.tail },
    ];
    rows.extend(report.per_domain.iter().enumerate().map(|(d, &a)| EvalRow { scope: "domain", index: Some(d), accuracy: a }));
    rows.extend(report.per_class.iter().enumerate().map(|(c, &a)| EvalRow { scope: "class", index: Some(c), accuracy: a }));
    write_csv(path, &rows)
}
