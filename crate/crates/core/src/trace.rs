//! Per-iteration trace records and the CSV trace format.
//!
//! Columns: `k, L_k, r_cons, r_ineq, r_eq, f_Z, clamp_count, wall_time_us`.
//! Floats are written with 17 significant digits, which round-trips `f64`
//! exactly.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

pub const CSV_HEADER: &str = "k,L_k,r_cons,r_ineq,r_eq,f_Z,clamp_count,wall_time_us";

/// One completed iteration. Row `k` describes the iterate produced by
/// iteration `k`, i.e. `L_k` holds the merit of iterate `k + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub k: usize,
    #[serde(rename = "L_k")]
    pub merit: f64,
    pub r_cons: f64,
    pub r_ineq: f64,
    pub r_eq: f64,
    #[serde(rename = "f_Z")]
    pub f_z: f64,
    pub clamp_count: u64,
    pub wall_time_us: u64,
}

impl IterationTrace {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
            self.k,
            self.merit,
            self.r_cons,
            self.r_ineq,
            self.r_eq,
            self.f_z,
            self.clamp_count,
            self.wall_time_us
        )
    }

    /// Same row with the timing column removed; identical across runs of the
    /// same instance and configuration.
    pub fn csv_row_without_timing(&self) -> String {
        let row = self.csv_row();
        row[..row.rfind(',').expect("row has columns")].to_string()
    }
}

/// Destination for trace records, called once per completed iteration.
pub trait TraceSink {
    fn record(&mut self, trace: &IterationTrace) -> io::Result<()>;
}

/// Discards every record.
pub struct NullSink;

impl TraceSink for NullSink {
    fn record(&mut self, _: &IterationTrace) -> io::Result<()> {
        Ok(())
    }
}

impl TraceSink for Vec<IterationTrace> {
    fn record(&mut self, trace: &IterationTrace) -> io::Result<()> {
        self.push(trace.clone());
        Ok(())
    }
}

/// Writes the header before the first row, then one row per record.
pub struct CsvTraceWriter<W: Write> {
    out: W,
    wrote_header: bool,
}

impl<W: Write> CsvTraceWriter<W> {
    pub fn new(out: W) -> Self {
        Self {
            out,
            wrote_header: false,
        }
    }

    pub fn into_inner(mut self) -> io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

impl<W: Write> TraceSink for CsvTraceWriter<W> {
    fn record(&mut self, trace: &IterationTrace) -> io::Result<()> {
        if !self.wrote_header {
            writeln!(self.out, "{CSV_HEADER}")?;
            self.wrote_header = true;
        }
        writeln!(self.out, "{}", trace.csv_row())
    }
}

fn bad(line: usize, msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, format!("trace line {line}: {}", msg.into()))
}

/// Parses a trace CSV written by [`CsvTraceWriter`].
pub fn read_trace_csv(input: impl BufRead) -> io::Result<Vec<IterationTrace>> {
    let mut lines = input.lines();
    match lines.next().transpose()? {
        Some(header) if header.trim() == CSV_HEADER => {}
        Some(_) => return Err(bad(1, "unexpected header")),
        None => return Ok(Vec::new()),
    }
    let mut out = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        let lineno = idx + 2;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.trim().split(',').collect();
        if cols.len() != 8 {
            return Err(bad(lineno, format!("expected 8 columns, found {}", cols.len())));
        }
        let float = |i: usize| -> io::Result<f64> {
            cols[i].parse().map_err(|e| bad(lineno, format!("column {i}: {e}")))
        };
        let int = |i: usize| -> io::Result<u64> {
            cols[i].parse().map_err(|e| bad(lineno, format!("column {i}: {e}")))
        };
        out.push(IterationTrace {
            k: int(0)? as usize,
            merit: float(1)?,
            r_cons: float(2)?,
            r_ineq: float(3)?,
            r_eq: float(4)?,
            f_z: float(5)?,
            clamp_count: int(6)?,
            wall_time_us: int(7)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(k: usize) -> IterationTrace {
        IterationTrace {
            k,
            merit: -1.0 / 3.0 + k as f64,
            r_cons: 1e-7 * (k as f64 + 0.1),
            r_ineq: 0.0,
            r_eq: std::f64::consts::PI,
            f_z: -2.5e-300,
            clamp_count: k as u64 % 3,
            wall_time_us: 17,
        }
    }

    #[test]
    fn header_once_then_rows() {
        let mut w = CsvTraceWriter::new(Vec::new());
        w.record(&row(0)).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], CSV_HEADER);
    }

    #[test]
    fn hundred_rows_round_trip() {
        let rows: Vec<IterationTrace> = (0..100).map(row).collect();
        let mut w = CsvTraceWriter::new(Vec::new());
        for r in &rows {
            w.record(r).unwrap();
        }
        let bytes = w.into_inner().unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert_eq!(text.lines().count(), 101);
        let back = read_trace_csv(bytes.as_slice()).unwrap();
        assert_eq!(back, rows);
        assert!(back.iter().enumerate().all(|(i, r)| r.k == i));
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_trace_csv("nope\n1,2".as_bytes()).is_err());
        let text = format!("{CSV_HEADER}\n1,2,3\n");
        assert!(read_trace_csv(text.as_bytes()).is_err());
    }

    #[test]
    fn timing_column_stripped() {
        let r = row(2);
        assert!(r.csv_row().starts_with(&r.csv_row_without_timing()));
        assert!(!r.csv_row_without_timing().ends_with(",17"));
    }
}
