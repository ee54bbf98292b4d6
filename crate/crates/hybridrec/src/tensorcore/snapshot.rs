//! Text snapshot of model tensors.
//!
//! Format (one record per tensor, in model order):
//!
//! ```text
//! tcsnap v1 records=<n>
//! layer <index> <kind> <d1>x<d2>x...
//! <values>
//! ```
//!
//! A rank-1 tensor is one line of space-separated decimals; higher ranks
//! write `d1` lines of `d2*d3*...` values each. Decimals use `{:.16e}` so
//! `f64` round-trips exactly.

use std::fmt::Write as _;

use thiserror::Error;

use super::tensor::Tensor;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("snapshot line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("snapshot record {index} ({kind}): expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        index: usize,
        kind: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

pub fn write_snapshot(records: &[(String, &Tensor)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "tcsnap v1 records={}", records.len());
    for (index, (kind, t)) in records.iter().enumerate() {
        let shape = t
            .shape
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("x");
        let _ = writeln!(out, "layer {index} {kind} {shape}");
        let line_count = if t.rank() >= 2 { t.dim(0) } else { 1 };
        let per_line = t.len() / line_count.max(1);
        for chunk in t.data.chunks(per_line.max(1)) {
            let line = chunk
                .iter()
                .map(|v| format!("{v:.16e}"))
                .collect::<Vec<_>>()
                .join(" ");
            let _ = writeln!(out, "{line}");
        }
    }
    out
}

pub fn read_snapshot(text: &str) -> Result<Vec<(String, Tensor)>, SnapshotError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(SnapshotError::Malformed {
        line: 1,
        msg: "empty snapshot".into(),
    })?;
    let count: usize = header
        .strip_prefix("tcsnap v1 records=")
        .and_then(|s| s.parse().ok())
        .ok_or(SnapshotError::Malformed {
            line: 1,
            msg: format!("bad header: {header}"),
        })?;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let (lno, head) = lines.next().ok_or(SnapshotError::Malformed {
            line: 0,
            msg: "truncated snapshot".into(),
        })?;
        let mut parts = head.split_whitespace();
        let (tag, _index, kind, shape_str) = (
            parts.next().unwrap_or(""),
            parts.next().unwrap_or(""),
            parts.next().unwrap_or(""),
            parts.next().unwrap_or(""),
        );
        if tag != "layer" || kind.is_empty() || shape_str.is_empty() {
            return Err(SnapshotError::Malformed {
                line: lno + 1,
                msg: format!("bad record header: {head}"),
            });
        }
        let shape: Vec<usize> = shape_str
            .split('x')
            .map(|d| {
                d.parse().map_err(|_| SnapshotError::Malformed {
                    line: lno + 1,
                    msg: format!("bad shape: {shape_str}"),
                })
            })
            .collect::<Result<_, _>>()?;
        let total: usize = shape.iter().product();
        let line_count = if shape.len() >= 2 { shape[0] } else { 1 };
        let mut data = Vec::with_capacity(total);
        for _ in 0..line_count {
            let (vlno, vline) = lines.next().ok_or(SnapshotError::Malformed {
                line: 0,
                msg: "truncated values".into(),
            })?;
            for tok in vline.split_whitespace() {
                let v: f64 = tok.parse().map_err(|_| SnapshotError::Malformed {
                    line: vlno + 1,
                    msg: format!("bad value: {tok}"),
                })?;
                data.push(v);
            }
        }
        if data.len() != total {
            return Err(SnapshotError::Malformed {
                line: lno + 1,
                msg: format!("expected {total} values for shape {shape_str}, found {}", data.len()),
            });
        }
        records.push((kind.to_string(), Tensor::from_vec(&shape, data)));
    }
    Ok(records)
}
