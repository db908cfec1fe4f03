//! Per-iteration trace CSV.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::model::IterationTrace;

pub const TRACE_HEADER: &str = "iter,rho,lagrangian,primal_residual,alpha_step,labels_changed,gate,mrf_energy,ms";

/// One CSV row without the newline. Floats use the shortest representation
/// that parses back to the same value.
pub fn trace_csv_row(t: &IterationTrace) -> String {
    format!(
        "{},{:?},{:?},{:?},{:?},{},{},{:?},{:.3}",
        t.iteration,
        t.rho,
        t.lagrangian,
        t.primal_residual,
        t.alpha_step,
        t.labels_changed,
        t.gate.as_str(),
        t.mrf_energy,
        t.wall_time_ms
    )
}

pub fn write_trace_csv<W: Write>(mut w: W, traces: &[IterationTrace]) -> std::io::Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for t in traces {
        writeln!(w, "{}", trace_csv_row(t))?;
    }
    w.flush()
}

pub fn parse_trace_csv(text: &str) -> Result<Vec<IterationTrace>> {
    read_trace_csv(text.as_bytes())
}

pub fn read_trace_csv<R: BufRead>(r: R) -> Result<Vec<IterationTrace>> {
    let mut out = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if idx == 0 {
            if line.trim() != TRACE_HEADER {
                return Err(Error::Parse {
                    line: 1,
                    message: "missing trace header".into(),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse { line: line_no, message };
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 9 {
            return Err(err(format!("expected 9 columns, found {}", cells.len())));
        }
        let f = |k: usize| -> Result<f64> { cells[k].parse().map_err(|_| err(format!("bad number '{}'", cells[k]))) };
        let u =
            |k: usize| -> Result<usize> { cells[k].parse().map_err(|_| err(format!("bad integer '{}'", cells[k]))) };
        out.push(IterationTrace {
            iteration: u(0)?,
            rho: f(1)?,
            lagrangian: f(2)?,
            primal_residual: f(3)?,
            alpha_step: f(4)?,
            labels_changed: u(5)?,
            gate: cells[6].parse().map_err(|_| err(format!("bad gate '{}'", cells[6])))?,
            mrf_energy: f(7)?,
            wall_time_ms: f(8)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GateDecision;

    #[test]
    fn round_trip() {
        let traces = vec![
            IterationTrace {
                iteration: 1,
                rho: 1e-3,
                lagrangian: -0.1 - 0.2,
                primal_residual: 1.0 / 3.0,
                alpha_step: 0.0,
                labels_changed: 7,
                gate: GateDecision::Accept,
                mrf_energy: 12.5,
                wall_time_ms: 0.25,
            },
            IterationTrace {
                iteration: 2,
                rho: 1.003e-3,
                lagrangian: 1e300,
                primal_residual: 5e-324,
                alpha_step: 2.0f64.sqrt(),
                labels_changed: 0,
                gate: GateDecision::Reject,
                mrf_energy: 0.0,
                wall_time_ms: 1.0,
            },
        ];
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &traces).unwrap();
        let back = parse_trace_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, traces);
    }
}
