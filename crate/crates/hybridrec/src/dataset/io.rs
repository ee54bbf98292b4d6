//! File formats: events / feature / device-description CSVs, plus the
//! interaction-matrix and de-normalized-rows artifacts written by `prep`.
//!
//! All floats are written as `{:.16e}` so values round-trip bit-exactly and
//! repeated runs produce byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use super::synth::DeviceDescription;
use super::{
    DatasetError, DenormalizedRow, EventType, FeatureTable, InteractionEvent, InteractionMatrix,
};

pub const EVENTS_HEADER: &str = "visitor_id,device_id,event_type,timestamp";
pub const DESCRIPTIONS_HEADER: &str = "device_id,name,description";

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> DatasetError {
    DatasetError::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

pub fn write_events_csv(path: &Path, events: &[InteractionEvent]) -> Result<(), DatasetError> {
    let mut out = String::with_capacity(events.len() * 32);
    out.push_str(EVENTS_HEADER);
    out.push('\n');
    for e in events {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            e.visitor_id,
            e.device_id,
            e.event_type.as_str(),
            e.timestamp
        );
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn read_events_csv(path: &Path) -> Result<Vec<InteractionEvent>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty events file"))?;
    if header.trim() != EVENTS_HEADER {
        return Err(parse_err(
            path,
            1,
            format!("expected header `{EVENTS_HEADER}`, found `{header}`"),
        ));
    }
    let mut events = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(parse_err(path, i + 1, format!("expected 4 fields, found {}", fields.len())));
        }
        let event_type = EventType::parse(fields[2])
            .ok_or_else(|| parse_err(path, i + 1, format!("unknown event_type `{}`", fields[2])))?;
        let timestamp: u64 = fields[3]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, i + 1, format!("bad timestamp `{}`", fields[3])))?;
        events.push(InteractionEvent {
            visitor_id: fields[0].to_string(),
            device_id: fields[1].to_string(),
            event_type,
            timestamp,
        });
    }
    Ok(events)
}

pub fn write_feature_csv(path: &Path, table: &FeatureTable) -> Result<(), DatasetError> {
    let mut out = String::new();
    out.push_str("id");
    for c in &table.columns {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for (id, row) in &table.rows {
        out.push_str(id);
        for v in row {
            let _ = write!(out, ",{v:.16e}");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn read_feature_csv(path: &Path) -> Result<FeatureTable, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty feature file"))?;
    let columns: Vec<String> = header.split(',').skip(1).map(String::from).collect();
    if columns.is_empty() {
        return Err(parse_err(path, 1, "feature file needs an id column plus at least one feature"));
    }
    let mut rows = std::collections::BTreeMap::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let id = fields
            .next()
            .ok_or_else(|| parse_err(path, i + 1, "missing id"))?
            .to_string();
        let values: Vec<f64> = fields
            .map(|f| {
                f.trim()
                    .parse()
                    .map_err(|_| parse_err(path, i + 1, format!("bad numeric value `{f}`")))
            })
            .collect::<Result<_, _>>()?;
        if values.len() != columns.len() {
            return Err(parse_err(
                path,
                i + 1,
                format!("expected {} values, found {}", columns.len(), values.len()),
            ));
        }
        if rows.insert(id.clone(), values).is_some() {
            return Err(parse_err(path, i + 1, format!("duplicate id `{id}`")));
        }
    }
    Ok(FeatureTable { columns, rows })
}

/// `device_id,name,description`; the description may itself contain commas.
pub fn write_descriptions_csv(
    path: &Path,
    descriptions: &[DeviceDescription],
) -> Result<(), DatasetError> {
    let mut out = String::new();
    out.push_str(DESCRIPTIONS_HEADER);
    out.push('\n');
    for d in descriptions {
        let _ = writeln!(out, "{},{},{}", d.device_id, d.name, d.description);
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn read_descriptions_csv(path: &Path) -> Result<Vec<DeviceDescription>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty descriptions file"))?;
    if header.trim() != DESCRIPTIONS_HEADER {
        return Err(parse_err(
            path,
            1,
            format!("expected header `{DESCRIPTIONS_HEADER}`, found `{header}`"),
        ));
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.splitn(3, ',');
        let (device_id, name, description) = (fields.next(), fields.next(), fields.next());
        match (device_id, name, description) {
            (Some(d), Some(n), Some(desc)) => out.push(DeviceDescription {
                device_id: d.to_string(),
                name: n.to_string(),
                description: desc.to_string(),
            }),
            _ => return Err(parse_err(path, i + 1, "expected device_id,name,description")),
        }
    }
    Ok(out)
}

pub fn write_matrix(path: &Path, matrix: &InteractionMatrix) -> Result<(), DatasetError> {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "imatrix v1 visitors={} devices={}",
        matrix.visitors(),
        matrix.devices()
    );
    let _ = writeln!(out, "devices {}", matrix.device_index.join(" "));
    for (r, visitor) in matrix.visitor_index.iter().enumerate() {
        out.push_str(visitor);
        for v in matrix.row(r) {
            let _ = write!(out, " {v:.16e}");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn read_matrix(path: &Path) -> Result<InteractionMatrix, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty matrix file"))?;
    let rest = header
        .strip_prefix("imatrix v1 visitors=")
        .ok_or_else(|| parse_err(path, 1, format!("bad header `{header}`")))?;
    let (v_str, d_str) = rest
        .split_once(" devices=")
        .ok_or_else(|| parse_err(path, 1, format!("bad header `{header}`")))?;
    let visitors: usize = v_str
        .parse()
        .map_err(|_| parse_err(path, 1, "bad visitor count"))?;
    let devices: usize = d_str
        .parse()
        .map_err(|_| parse_err(path, 1, "bad device count"))?;
    let (_, dev_line) = lines
        .next()
        .ok_or_else(|| parse_err(path, 2, "missing device index line"))?;
    let device_index: Vec<String> = dev_line
        .strip_prefix("devices ")
        .ok_or_else(|| parse_err(path, 2, "missing `devices` prefix"))?
        .split_whitespace()
        .map(String::from)
        .collect();
    if device_index.len() != devices {
        return Err(parse_err(path, 2, "device index length mismatch"));
    }
    let mut visitor_index = Vec::with_capacity(visitors);
    let mut values = Vec::with_capacity(visitors * devices);
    for _ in 0..visitors {
        let (i, line) = lines
            .next()
            .ok_or_else(|| parse_err(path, 0, "truncated matrix"))?;
        let mut fields = line.split_whitespace();
        let id = fields
            .next()
            .ok_or_else(|| parse_err(path, i + 1, "missing visitor id"))?;
        visitor_index.push(id.to_string());
        let mut count = 0;
        for f in fields {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(path, i + 1, format!("bad value `{f}`")))?;
            values.push(v);
            count += 1;
        }
        if count != devices {
            return Err(parse_err(path, i + 1, format!("expected {devices} values, found {count}")));
        }
    }
    Ok(InteractionMatrix::new(visitor_index, device_index, values))
}

/// Tab-separated sections: visitor id, device sequence, features, target row.
pub fn write_rows(
    path: &Path,
    rows: &[DenormalizedRow],
    device_index: &[String],
) -> Result<(), DatasetError> {
    let m = rows.first().map_or(0, |r| r.device_sequence.len());
    let n = rows.first().map_or(0, |r| r.feature_vector.len());
    let mut out = String::new();
    let _ = writeln!(
        out,
        "rows v1 count={} m={} n={} devices={}",
        rows.len(),
        m,
        n,
        device_index.len()
    );
    let _ = writeln!(out, "device_index {}", device_index.join(" "));
    for r in rows {
        out.push_str(&r.visitor_id);
        out.push('\t');
        out.push_str(&r.device_sequence.join(" "));
        out.push('\t');
        let feats: Vec<String> = r.feature_vector.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&feats.join(" "));
        out.push('\t');
        let targets: Vec<String> = r.target_row.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&targets.join(" "));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn read_rows(path: &Path) -> Result<(Vec<DenormalizedRow>, Vec<String>), DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty rows file"))?;
    if !header.starts_with("rows v1 ") {
        return Err(parse_err(path, 1, format!("bad header `{header}`")));
    }
    let (_, dev_line) = lines
        .next()
        .ok_or_else(|| parse_err(path, 2, "missing device index"))?;
    let device_index: Vec<String> = dev_line
        .strip_prefix("device_index ")
        .ok_or_else(|| parse_err(path, 2, "missing `device_index` prefix"))?
        .split_whitespace()
        .map(String::from)
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 4 {
            return Err(parse_err(path, i + 1, format!("expected 4 tab-separated sections, found {}", parts.len())));
        }
        let parse_f64s = |s: &str, what: &str| -> Result<Vec<f64>, DatasetError> {
            s.split_whitespace()
                .map(|f| {
                    f.parse()
                        .map_err(|_| parse_err(path, i + 1, format!("bad {what} value `{f}`")))
                })
                .collect()
        };
        rows.push(DenormalizedRow {
            visitor_id: parts[0].to_string(),
            device_sequence: parts[1].split_whitespace().map(String::from).collect(),
            feature_vector: parse_f64s(parts[2], "feature")?,
            target_row: parse_f64s(parts[3], "target")?,
        });
    }
    Ok((rows, device_index))
}
