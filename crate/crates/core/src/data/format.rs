//! STDNF flow files, edge-list CSV and plain-text matrix dumps.

use std::fs;
use std::path::Path;

use crate::data::series::{Calendar, FlowSeries};
use crate::error::{io_err, Error, Result};

pub const FLOW_MAGIC: &[u8; 4] = b"STDN";
pub const FLOW_VERSION: u8 = 1;
pub const FLOW_DTYPE_F32: u8 = 0;
/// magic, version, dtype, reserved, then six u32 fields.
pub const FLOW_HEADER_LEN: usize = 4 + 1 + 1 + 2 + 6 * 4;

fn format_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Format { offset: offset as u64, reason: reason.into() }
}

pub fn encode_flow(series: &FlowSeries) -> Vec<u8> {
    let (t, n, c) = series.shape();
    let cal = series.calendar();
    let mut out = Vec::with_capacity(FLOW_HEADER_LEN + series.values().len() * 4);
    out.extend_from_slice(FLOW_MAGIC);
    out.push(FLOW_VERSION);
    out.push(FLOW_DTYPE_F32);
    out.extend_from_slice(&0u16.to_le_bytes());
    for field in [t, n, c, cal.steps_per_day, cal.start_day_of_week, cal.start_slot_of_day] {
        out.extend_from_slice(&(field as u32).to_le_bytes());
    }
    for v in series.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_flow(bytes: &[u8]) -> Result<FlowSeries> {
    if bytes.len() < 4 {
        return Err(format_err(bytes.len(), "file too short for magic"));
    }
    if &bytes[..4] != FLOW_MAGIC {
        return Err(format_err(0, format!("bad magic {:?}, expected \"STDN\"", String::from_utf8_lossy(&bytes[..4]))));
    }
    if bytes.len() < FLOW_HEADER_LEN {
        return Err(format_err(bytes.len(), format!("truncated header ({} of {FLOW_HEADER_LEN} bytes)", bytes.len())));
    }
    if bytes[4] != FLOW_VERSION {
        return Err(format_err(4, format!("unsupported version {}", bytes[4])));
    }
    if bytes[5] != FLOW_DTYPE_F32 {
        return Err(format_err(5, format!("unsupported dtype {}", bytes[5])));
    }
    let field = |i: usize| {
        let at = 8 + 4 * i;
        u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize
    };
    let (t, n, c) = (field(0), field(1), field(2));
    for (i, (name, v)) in [("T_total", t), ("N", n), ("C", c), ("steps_per_day", field(3))].iter().enumerate() {
        if *v == 0 {
            return Err(format_err(8 + 4 * i, format!("{name} must be positive")));
        }
    }
    let calendar = Calendar::new(field(3), field(4), field(5)).map_err(|e| format_err(20, e.to_string()))?;

    let count = t
        .checked_mul(n)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| format_err(8, "payload size overflows"))?;
    let payload = &bytes[FLOW_HEADER_LEN..];
    let whole = payload.len() / 4;
    if whole < count {
        let offset = FLOW_HEADER_LEN + whole * 4;
        return Err(format_err(
            offset,
            format!("truncated payload: {whole} of {count} values present"),
        ));
    }
    if payload.len() > count * 4 {
        return Err(format_err(
            FLOW_HEADER_LEN + count * 4,
            format!("{} trailing bytes after payload", payload.len() - count * 4),
        ));
    }
    let mut values = Vec::with_capacity(count);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(format_err(FLOW_HEADER_LEN + 4 * i, "non-finite value (missing data is not supported)"));
        }
        values.push(v);
    }
    FlowSeries::new(values, t, n, c, calendar)
}

pub fn load_flow_binary(path: impl AsRef<Path>) -> Result<FlowSeries> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_flow(&bytes)
}

pub fn write_flow_binary(path: impl AsRef<Path>, series: &FlowSeries) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_flow(series)).map_err(io_err(path))
}

/// Directed road segment between two 0-based node ids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub cost: f64,
}

pub fn parse_edges_csv(text: &str) -> Result<Vec<Edge>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, header)) if header.trim().replace(' ', "") == "from,to,cost" => {}
        Some((i, header)) => {
            return Err(Error::Parse { line: i + 1, reason: format!("expected header `from,to,cost`, got `{header}`") });
        }
        None => return Err(Error::Parse { line: 1, reason: "missing header `from,to,cost`".into() }),
    }
    let mut edges = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = |reason: String| Error::Parse { line: i + 1, reason };
        if fields.len() != 3 {
            return Err(bad(format!("expected 3 fields, found {}", fields.len())));
        }
        let from = fields[0].parse().map_err(|_| bad(format!("bad node id `{}`", fields[0])))?;
        let to = fields[1].parse().map_err(|_| bad(format!("bad node id `{}`", fields[1])))?;
        let cost: f64 = fields[2].parse().map_err(|_| bad(format!("bad cost `{}`", fields[2])))?;
        if !cost.is_finite() {
            return Err(bad(format!("non-finite cost `{}`", fields[2])));
        }
        edges.push(Edge { from, to, cost });
    }
    Ok(edges)
}

pub fn load_edges_csv(path: impl AsRef<Path>) -> Result<Vec<Edge>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_edges_csv(&text)
}

pub fn format_edges_csv(edges: &[Edge]) -> String {
    let mut out = String::from("from,to,cost\n");
    for e in edges {
        out.push_str(&format!("{},{},{}\n", e.from, e.to, e.cost));
    }
    out
}

pub fn write_edges_csv(path: impl AsRef<Path>, edges: &[Edge]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_edges_csv(edges)).map_err(io_err(path))
}

/// Parses a text matrix with one time step per row and `N·C` columns
/// separated by commas or whitespace. Blank lines and `#` comments are
/// skipped, as is a leading non-numeric header row.
pub fn parse_matrix_dump(text: &str) -> Result<(usize, usize, Vec<f32>)> {
    let mut cols = None;
    let mut rows = 0;
    let mut values = Vec::new();
    let mut seen_data = false;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(|ch: char| ch == ',' || ch.is_whitespace()).filter(|f| !f.is_empty()).collect();
        let parsed: std::result::Result<Vec<f32>, _> = fields.iter().map(|f| f.parse::<f32>()).collect();
        let row = match parsed {
            Ok(row) => row,
            Err(_) if !seen_data => {
                seen_data = true;
                continue;
            }
            Err(_) => return Err(Error::Parse { line: i + 1, reason: "non-numeric field".into() }),
        };
        seen_data = true;
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parse { line: i + 1, reason: format!("non-finite value in column {}", j + 1) });
        }
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(Error::Parse { line: i + 1, reason: format!("expected {c} columns, found {}", row.len()) });
            }
            _ => {}
        }
        values.extend(row);
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::Parse { line: 1, reason: "no data rows".into() })?;
    Ok((rows, cols, values))
}

/// Converts a matrix dump into a series with `channels` values per node.
pub fn convert_matrix_dump(text: &str, channels: usize, calendar: Calendar) -> Result<FlowSeries> {
    if channels == 0 {
        return Err(Error::Param("channels must be positive".into()));
    }
    let (rows, cols, values) = parse_matrix_dump(text)?;
    if cols % channels != 0 {
        return Err(Error::Size(format!("{cols} columns do not divide into {channels} channels")));
    }
    FlowSeries::new(values, rows, cols / channels, channels, calendar)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> FlowSeries {
        let values = (0..8).map(|v| v as f32 * 1.5 - 2.0).collect();
        FlowSeries::new(values, 4, 2, 1, Calendar::new(288, 2, 5).unwrap()).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = small();
        let bytes = encode_flow(&s);
        assert_eq!(bytes.len(), FLOW_HEADER_LEN + 8 * 4);
        let back = decode_flow(&bytes).unwrap();
        assert_eq!(back.shape(), (4, 2, 1));
        assert_eq!(back.calendar(), s.calendar());
        let bits = |x: &FlowSeries| x.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&s));
    }

    #[test]
    fn header_layout() {
        let bytes = encode_flow(&small());
        assert_eq!(&bytes[..4], b"STDN");
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], 0);
        assert_eq!(&bytes[6..8], &[0, 0]);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(bytes[28..32].try_into().unwrap()), 5);
    }

    #[test]
    fn bad_magic_version_dtype() {
        let mut bytes = encode_flow(&small());
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_flow(&bytes), Err(Error::Format { offset: 0, .. })));
        let mut bytes = encode_flow(&small());
        bytes[4] = 2;
        assert!(matches!(decode_flow(&bytes), Err(Error::Format { offset: 4, .. })));
        let mut bytes = encode_flow(&small());
        bytes[5] = 1;
        assert!(matches!(decode_flow(&bytes), Err(Error::Format { offset: 5, .. })));
    }

    #[test]
    fn truncation_reports_offset_of_first_missing_value() {
        let bytes = encode_flow(&small());
        let short = &bytes[..bytes.len() - 4];
        match decode_flow(short) {
            Err(Error::Format { offset, reason }) => {
                assert_eq!(offset as usize, FLOW_HEADER_LEN + 7 * 4);
                assert!(reason.contains("7 of 8"), "{reason}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
        // A partial last value points at the same place.
        let partial = &bytes[..bytes.len() - 2];
        assert!(matches!(decode_flow(partial), Err(Error::Format { offset: 60, .. })));
        assert!(matches!(decode_flow(&bytes[..10]), Err(Error::Format { offset: 10, .. })));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_flow(&long), Err(Error::Format { offset: 64, .. })));
    }

    #[test]
    fn edges_csv_round_trip_and_errors() {
        let edges = vec![Edge { from: 0, to: 1, cost: 2.5 }, Edge { from: 3, to: 2, cost: 0.125 }];
        let text = format_edges_csv(&edges);
        assert_eq!(parse_edges_csv(&text).unwrap(), edges);
        assert!(matches!(parse_edges_csv("a,b,c\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_edges_csv("from,to,cost\n0,1\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_edges_csv("from,to,cost\n0,1,1\n-1,2,3\n"), Err(Error::Parse { line: 3, .. })));
        assert!(parse_edges_csv("from,to,cost\n").unwrap().is_empty());
    }

    #[test]
    fn matrix_dump_variants() {
        let text = "# flows\nn0,n1,n2,n3\n1,2,3,4\n5 6 7 8\n\n9,10, 11 ,12\n";
        let (rows, cols, values) = parse_matrix_dump(text).unwrap();
        assert_eq!((rows, cols), (3, 4));
        assert_eq!(values[4..8], [5.0, 6.0, 7.0, 8.0]);
        let s = convert_matrix_dump(text, 2, Calendar::five_minute()).unwrap();
        assert_eq!(s.shape(), (3, 2, 2));
        assert_eq!(s.get(1, 1, 0), 7.0);
        assert!(matches!(parse_matrix_dump("1,2\n3\n"), Err(Error::Parse { line: 2, .. })));
        assert!(convert_matrix_dump("1,2,3\n", 2, Calendar::five_minute()).is_err());
    }
}
