use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One Newton iteration of a path-following solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub rho: f64,
    pub residual: f64,
    /// Accepted step length, zero if the line search failed.
    pub step: f64,
}

pub fn write_trace_csv<W: Write>(writer: W, rows: &[TraceRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}
