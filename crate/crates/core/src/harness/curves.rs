//! Loss-curve CSV export.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::train::read_metrics;

pub const CURVE_COLUMNS: [&str; 11] = [
    "iteration", "ca_det", "cls", "reg", "ang", "ca_aux", "cls_aux", "reg_aux", "ang_aux", "distill", "total",
];

/// Converts a metrics file into a CSV with one row per logged iteration.
pub fn emit_loss_curves(metrics: &Path, out: &Path) -> Result<usize> {
    let rows = read_metrics(metrics)?;
    let mut csv = CURVE_COLUMNS.join(",");
    csv.push('\n');
    for r in &rows {
        let _ = write!(csv, "{}", r.iteration);
        for v in [
            r.ca_det, r.cls, r.reg, r.ang, r.ca_aux, r.cls_aux, r.reg_aux, r.ang_aux, r.distill, r.total,
        ] {
            let _ = write!(csv, ",{v:e}");
        }
        csv.push('\n');
    }
    fs::write(out, csv).map_err(|e| Error::io(out, e))?;
    Ok(rows.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_metrics_give_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.jsonl");
        fs::write(&m, "").unwrap();
        let out = dir.path().join("c.csv");
        assert_eq!(emit_loss_curves(&m, &out).unwrap(), 0);
        assert_eq!(fs::read_to_string(&out).unwrap(), format!("{}\n", CURVE_COLUMNS.join(",")));
    }

    #[test]
    fn malformed_line_is_located() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.jsonl");
        fs::write(&m, "{\"iteration\":0}\n").unwrap();
        match emit_loss_curves(&m, &dir.path().join("c.csv")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
