use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::updates::Interval;
use crate::error::{Error, Result};

pub const TRACE_HEADER: &str = "t,i,j,lo,hi,width,empty,covered,a";

/// One issued cell. For empty cells `lo == hi == center`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntervalCell {
    pub lo: f64,
    pub hi: f64,
    pub empty: bool,
    /// Point forecast the interval is centered on.
    pub center: f64,
    /// Method state at issuance: the adjustment `a` for the FFDCI family,
    /// the miscoverage level for ACI, the tracked threshold for ECI, and 0
    /// for CP.
    pub state: f64,
    pub covered: Option<bool>,
}

impl IntervalCell {
    pub fn new(center: f64, interval: Interval, state: f64) -> Self {
        let (lo, hi, empty) = match interval {
            Interval::Empty => (center, center, true),
            Interval::Closed { lo, hi } => (lo, hi, false),
        };
        Self {
            lo,
            hi,
            empty,
            center,
            state,
            covered: None,
        }
    }

    pub fn interval(&self) -> Interval {
        if self.empty {
            Interval::Empty
        } else {
            Interval::Closed {
                lo: self.lo,
                hi: self.hi,
            }
        }
    }

    pub fn width(&self) -> f64 {
        if self.empty {
            0.0
        } else {
            self.hi - self.lo
        }
    }
}

/// All `p x d1` cells issued at one step, row-major over `(i, j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalRecord {
    pub t: usize,
    pub p: usize,
    pub d1: usize,
    pub cells: Vec<IntervalCell>,
}

impl IntervalRecord {
    #[inline]
    pub fn cell(&self, i: usize, j: usize) -> &IntervalCell {
        &self.cells[i * self.d1 + j]
    }

    #[inline]
    pub fn cell_mut(&mut self, i: usize, j: usize) -> &mut IntervalCell {
        &mut self.cells[i * self.d1 + j]
    }
}

/// Issued intervals in issuance order with whatever coverage has resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub p: usize,
    pub d1: usize,
    pub records: Vec<IntervalRecord>,
}

impl Trace {
    pub fn new(p: usize, d1: usize) -> Self {
        Self {
            p,
            d1,
            records: Vec::new(),
        }
    }

    pub fn steps(&self) -> usize {
        self.records.len()
    }

    /// Resolved coverage indicators of cell `(i, j)` in issuance order.
    pub fn resolved_series(&self, i: usize, j: usize) -> Vec<bool> {
        self.records
            .iter()
            .filter_map(|r| r.cell(i, j).covered)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * self.records.len() * self.p * self.d1 + 64);
        out.push_str(TRACE_HEADER);
        out.push('\n');
        for r in &self.records {
            push_record_rows(&mut out, r);
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text)
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == TRACE_HEADER => {}
            _ => {
                return Err(Error::Parse {
                    row: 1,
                    col: None,
                    reason: format!("expected header {TRACE_HEADER:?}"),
                })
            }
        }
        let mut rows = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            rows.push(parse_row(line, idx + 1)?);
        }
        let p = rows.iter().map(|r| r.i + 1).max().unwrap_or(0);
        let d1 = rows.iter().map(|r| r.j + 1).max().unwrap_or(0);
        let mut trace = Trace::new(p, d1);
        let per_step = p * d1;
        if per_step > 0 && rows.len() % per_step != 0 {
            return Err(Error::Parse {
                row: rows.len() + 1,
                col: None,
                reason: format!(
                    "row count {} is not a multiple of p*d1={per_step}",
                    rows.len()
                ),
            });
        }
        for (k, chunk) in rows.chunks(per_step.max(1)).enumerate() {
            let t = chunk[0].t;
            let mut cells = Vec::with_capacity(per_step);
            for (n, row) in chunk.iter().enumerate() {
                if row.t != t || row.i * d1 + row.j != n {
                    return Err(Error::Parse {
                        row: k * per_step + n + 2,
                        col: None,
                        reason: "rows out of (t, i, j) order".into(),
                    });
                }
                cells.push(row.cell);
            }
            trace.records.push(IntervalRecord { t, p, d1, cells });
        }
        Ok(trace)
    }
}

pub(crate) fn push_record_rows(out: &mut String, r: &IntervalRecord) {
    for i in 0..r.p {
        for j in 0..r.d1 {
            let c = r.cell(i, j);
            let covered = match c.covered {
                None => -1,
                Some(true) => 1,
                Some(false) => 0,
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.t,
                i,
                j,
                c.lo,
                c.hi,
                c.width(),
                u8::from(c.empty),
                covered,
                c.state
            );
        }
    }
}

struct Row {
    t: usize,
    i: usize,
    j: usize,
    cell: IntervalCell,
}

fn parse_row(line: &str, row: usize) -> Result<Row> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 9 {
        return Err(Error::Parse {
            row,
            col: None,
            reason: format!("expected 9 fields, found {}", fields.len()),
        });
    }
    let num = |c: usize| -> Result<f64> {
        fields[c].trim().parse::<f64>().map_err(|_| Error::Parse {
            row,
            col: Some(c + 1),
            reason: format!("not a number: {:?}", fields[c]),
        })
    };
    let idx = |c: usize| -> Result<usize> {
        fields[c].trim().parse::<usize>().map_err(|_| Error::Parse {
            row,
            col: Some(c + 1),
            reason: format!("not an index: {:?}", fields[c]),
        })
    };
    let lo = num(3)?;
    let hi = num(4)?;
    let empty = match fields[6].trim() {
        "0" => false,
        "1" => true,
        other => {
            return Err(Error::Parse {
                row,
                col: Some(7),
                reason: format!("empty flag must be 0 or 1, got {other:?}"),
            })
        }
    };
    let covered = match fields[7].trim() {
        "-1" => None,
        "0" => Some(false),
        "1" => Some(true),
        other => {
            return Err(Error::Parse {
                row,
                col: Some(8),
                reason: format!("covered must be -1, 0 or 1, got {other:?}"),
            })
        }
    };
    Ok(Row {
        t: idx(0)?,
        i: idx(1)?,
        j: idx(2)?,
        cell: IntervalCell {
            lo,
            hi,
            empty,
            center: 0.5 * (lo + hi),
            state: num(8)?,
            covered,
        },
    })
}
