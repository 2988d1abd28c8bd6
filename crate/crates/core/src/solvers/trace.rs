use std::io::{BufRead, Write};

use super::SolverError;

/// One solver iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    /// 1-based iteration index.
    pub k: usize,
    pub sigma_k: f64,
    pub sigma_achieved: f64,
    pub t_cond: f64,
    /// Weight applied to `½‖y − Ax‖²` in this iteration.
    pub gamma_k: f64,
    /// `‖x_k − z_k‖`
    pub residual: f64,
    pub psnr: Option<f64>,
    /// `½‖y − A·estimate‖²`
    pub objective: f64,
    pub wall_ms: f64,
}

pub const TRACE_COLUMNS: [&str; 9] = [
    "k",
    "sigma_k",
    "sigma_achieved",
    "t_cond",
    "gamma_k",
    "residual",
    "psnr",
    "objective",
    "wall_ms",
];

fn io_err(e: impl std::fmt::Display) -> SolverError {
    SolverError::Trace(e.to_string())
}

/// Writes `# <header>` followed by CSV rows. Floats use the shortest
/// round-trip representation.
pub fn write_trace_csv<W: Write>(mut out: W, header: &str, rows: &[TraceRow]) -> Result<(), SolverError> {
    for line in header.lines() {
        writeln!(out, "# {line}").map_err(io_err)?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_COLUMNS).map_err(io_err)?;
    for r in rows {
        w.write_record([
            r.k.to_string(),
            r.sigma_k.to_string(),
            r.sigma_achieved.to_string(),
            r.t_cond.to_string(),
            r.gamma_k.to_string(),
            r.residual.to_string(),
            r.psnr.map(|p| p.to_string()).unwrap_or_default(),
            r.objective.to_string(),
            format!("{:.3}", r.wall_ms),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Reads a trace written by [`write_trace_csv`]; returns the header lines
/// (without `# `) and the rows.
pub fn read_trace_csv<R: BufRead>(input: R) -> Result<(Vec<String>, Vec<TraceRow>), SolverError> {
    let mut header = Vec::new();
    let mut body = String::new();
    for line in input.lines() {
        let line = line.map_err(io_err)?;
        match line.strip_prefix('#') {
            Some(h) if body.is_empty() => header.push(h.strip_prefix(' ').unwrap_or(h).to_string()),
            _ => {
                body.push_str(&line);
                body.push('\n');
            }
        }
    }
    let mut rows = Vec::new();
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    for rec in rdr.records() {
        let rec = rec.map_err(io_err)?;
        let f = |i: usize| -> Result<f64, SolverError> { rec[i].parse::<f64>().map_err(io_err) };
        rows.push(TraceRow {
            k: rec[0].parse().map_err(io_err)?,
            sigma_k: f(1)?,
            sigma_achieved: f(2)?,
            t_cond: f(3)?,
            gamma_k: f(4)?,
            residual: f(5)?,
            psnr: if rec[6].is_empty() { None } else { Some(f(6)?) },
            objective: f(7)?,
            wall_ms: f(8)?,
        });
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let rows = vec![
            TraceRow {
                k: 1,
                sigma_k: 0.1 + 0.2,
                sigma_achieved: 0.30000000000000004,
                t_cond: 145.2,
                gamma_k: 1e-300,
                residual: 3.5,
                psnr: Some(27.123456789),
                objective: 0.0,
                wall_ms: 1.5,
            },
            TraceRow {
                k: 2,
                sigma_k: 0.2,
                sigma_achieved: 0.2,
                t_cond: 3.0,
                gamma_k: 2.0,
                residual: 1.0,
                psnr: None,
                objective: 4.0,
                wall_ms: 0.25,
            },
        ];
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, "method=red\nconfig={}", &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# method=red\n# config={}\nk,sigma_k,"));
        let (header, back) = read_trace_csv(buf.as_slice()).unwrap();
        assert_eq!(header, vec!["method=red", "config={}"]);
        assert_eq!(back, rows);
    }
}
