//! Plain-text formats for base points and alpha vectors.
//!
//! Base-point file: one belief per line, whitespace-separated decimals.
//! Blank lines and lines starting with `#` are ignored.
//!
//! Alpha-vector file: optional `#` header lines, then a line `N_x count`,
//! then `count` lines of `action w_1 ... w_N`. Weights are written with 17
//! significant digits so files round-trip bit-exactly.

use std::fmt::Write as _;

use crate::entropy::{AlphaVector, VectorTag};
use crate::error::{Error, Result};
use crate::model::Belief;

/// Formats with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    tok.parse::<f64>().map_err(|e| Error::Parse {
        line,
        msg: format!("bad number {tok:?}: {e}"),
    })
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn parse_base_points(text: &str) -> Result<Vec<Belief>> {
    let mut out: Vec<Belief> = Vec::new();
    for (line, l) in content_lines(text) {
        let v = l
            .split_whitespace()
            .map(|t| parse_f64(t, line))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = out.first() {
            if first.len() != v.len() {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {} coordinates, found {}", first.len(), v.len()),
                });
            }
        }
        out.push(Belief::new(v).map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?);
    }
    if out.is_empty() {
        return Err(Error::Parse {
            line: 0,
            msg: "no base points".into(),
        });
    }
    Ok(out)
}

pub fn write_base_points(points: &[Belief]) -> String {
    let mut s = String::new();
    for p in points {
        let row: Vec<String> = p.iter().map(|&v| fmt_f64(v)).collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
    s
}

/// Serializes vectors, prefixing each header line with `# `.
pub fn write_alpha_vectors(num_states: usize, vectors: &[AlphaVector], header: &[String]) -> String {
    let mut s = String::new();
    for h in header {
        let _ = writeln!(s, "# {h}");
    }
    let _ = writeln!(s, "{} {}", num_states, vectors.len());
    for v in vectors {
        let _ = write!(s, "{}", v.action);
        for w in &v.weights {
            let _ = write!(s, " {}", fmt_f64(*w));
        }
        s.push('\n');
    }
    s
}

/// Parsed alpha-vector file: header lines (without the `# ` prefix), state
/// count and vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaFile {
    pub header: Vec<String>,
    pub num_states: usize,
    pub vectors: Vec<AlphaVector>,
}

pub fn parse_alpha_vectors(text: &str) -> Result<AlphaFile> {
    let header: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter_map(|l| l.strip_prefix('#'))
        .map(|l| l.trim().to_string())
        .collect();
    let mut lines = content_lines(text);
    let (line, first) = lines.next().ok_or(Error::Parse {
        line: 0,
        msg: "missing `N_x count` line".into(),
    })?;
    let dims: Vec<&str> = first.split_whitespace().collect();
    let parse_usize = |t: &str, line: usize| {
        t.parse::<usize>().map_err(|e| Error::Parse {
            line,
            msg: format!("bad integer {t:?}: {e}"),
        })
    };
    if dims.len() != 2 {
        return Err(Error::Parse {
            line,
            msg: "expected `N_x count`".into(),
        });
    }
    let n = parse_usize(dims[0], line)?;
    let count = parse_usize(dims[1], line)?;
    let mut vectors = Vec::with_capacity(count);
    for (line, l) in lines {
        let mut toks = l.split_whitespace();
        let action = parse_usize(toks.next().unwrap_or(""), line)?;
        let weights = toks.map(|t| parse_f64(t, line)).collect::<Result<Vec<_>>>()?;
        if weights.len() != n {
            return Err(Error::Parse {
                line,
                msg: format!("expected {n} weights, found {}", weights.len()),
            });
        }
        vectors.push(AlphaVector::new(weights, action, VectorTag::External));
    }
    if vectors.len() != count {
        return Err(Error::Parse {
            line: 0,
            msg: format!("header announces {count} vectors, found {}", vectors.len()),
        });
    }
    Ok(AlphaFile {
        header,
        num_states: n,
        vectors,
    })
}
