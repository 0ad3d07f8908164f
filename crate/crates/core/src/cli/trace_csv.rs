use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::solvers::SolveTrace;

pub const TRACE_HEADER: &str = "k,theta_err,x_err,f_gap,vi_gap,bound,gamma_f,gamma_g,epsilon,avg_f_gap,residual_r_norm";

/// One line of a trace file; absent metrics are empty fields.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub k: usize,
    pub theta_err: f64,
    pub x_err: Option<f64>,
    pub f_gap: Option<f64>,
    pub vi_gap: Option<f64>,
    pub bound: Option<f64>,
    pub gamma_f: f64,
    pub gamma_g: f64,
    pub epsilon: Option<f64>,
    pub avg_f_gap: Option<f64>,
    pub residual_r_norm: f64,
}

pub(crate) fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

impl CsvRow {
    fn line(&self) -> String {
        [
            self.k.to_string(),
            fmt_num(self.theta_err),
            fmt_opt(self.x_err),
            fmt_opt(self.f_gap),
            fmt_opt(self.vi_gap),
            fmt_opt(self.bound),
            fmt_num(self.gamma_f),
            fmt_num(self.gamma_g),
            fmt_opt(self.epsilon),
            fmt_opt(self.avg_f_gap),
            fmt_num(self.residual_r_norm),
        ]
        .join(",")
    }
}

/// Rows of `trace`, with `bound(k)` filling the bound column.
pub fn trace_csv(trace: &SolveTrace, bound: &dyn Fn(usize) -> Option<f64>) -> Vec<CsvRow> {
    trace
        .records
        .iter()
        .map(|r| CsvRow {
            k: r.k,
            theta_err: r.theta_err,
            x_err: r.x_err,
            f_gap: r.f_gap,
            vi_gap: r.vi_gap,
            bound: bound(r.k),
            gamma_f: r.gamma_f,
            gamma_g: r.gamma_g,
            epsilon: r.epsilon,
            avg_f_gap: r.avg_f_gap,
            residual_r_norm: r.residual_r_norm,
        })
        .collect()
}

pub fn write_trace_csv(path: &Path, rows: &[CsvRow]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{TRACE_HEADER}")?;
    for row in rows {
        writeln!(out, "{}", row.line())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut lines = file.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header != TRACE_HEADER {
        return Err(Error::config(path.display().to_string(), "unexpected trace header"));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        let at = |message: String| Error::config(format!("{} line {}", path.display(), n + 2), message);
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(at(format!("expected 11 fields, found {}", fields.len())));
        }
        let num = |i: usize| -> Result<f64> { fields[i].parse::<f64>().map_err(|e| at(format!("field {i}: {e}"))) };
        let opt = |i: usize| -> Result<Option<f64>> {
            if fields[i].is_empty() {
                Ok(None)
            } else {
                num(i).map(Some)
            }
        };
        rows.push(CsvRow {
            k: fields[0].parse().map_err(|e| at(format!("field 0: {e}")))?,
            theta_err: num(1)?,
            x_err: opt(2)?,
            f_gap: opt(3)?,
            vi_gap: opt(4)?,
            bound: opt(5)?,
            gamma_f: num(6)?,
            gamma_g: num(7)?,
            epsilon: opt(8)?,
            avg_f_gap: opt(9)?,
            residual_r_norm: num(10)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(fmt_num(0.1), "1.0000000000000001e-1");
        for v in [std::f64::consts::PI, 1e-300, -2.5e17, 0.0, f64::MIN_POSITIVE] {
            assert_eq!(fmt_num(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_opt(None), "");
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/t.csv");
        let rows = vec![
            CsvRow {
                k: 0,
                theta_err: 1.0 / 3.0,
                x_err: None,
                f_gap: Some(-1e-17),
                vi_gap: None,
                bound: Some(2.0),
                gamma_f: 0.04,
                gamma_g: 0.003,
                epsilon: None,
                avg_f_gap: None,
                residual_r_norm: 0.0,
            },
            CsvRow {
                k: 7,
                theta_err: 1e-300,
                x_err: Some(12.5),
                f_gap: None,
                vi_gap: Some(3.0e-9),
                bound: None,
                gamma_f: 0.1,
                gamma_g: 0.2,
                epsilon: Some(std::f64::consts::FRAC_1_SQRT_2),
                avg_f_gap: Some(1.0),
                residual_r_norm: 5.0,
            },
        ];
        write_trace_csv(&path, &rows).unwrap();
        assert_eq!(read_trace_csv(&path).unwrap(), rows);
    }

    #[test]
    fn malformed_line_is_located() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, format!("{TRACE_HEADER}\n0,1,,,,,x,1,,,0\n")).unwrap();
        match read_trace_csv(&path) {
            Err(Error::Config { field, .. }) => assert!(field.ends_with("line 2")),
            other => panic!("{other:?}"),
        }
    }
}
