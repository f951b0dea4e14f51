//! Trace CSV: fixed header, LF line endings, fixed decimals.

use std::io::{Read, Write};

use pansim_core::{EventLabel, FrameKind, SimTime, TraceRecord};
use thiserror::Error;

pub const HEADER: [&str; 12] = [
    "time_us",
    "node_id",
    "event_kind",
    "frame_kind",
    "src",
    "dst",
    "seq",
    "power_dbm",
    "rx_power_dbm",
    "lq",
    "pos_x_m",
    "outcome",
];

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("trace header must be {expected:?}, found {found:?}")]
    Header { expected: String, found: String },
    #[error("row {row}: bad {column} value {value:?}")]
    Field { row: usize, column: &'static str, value: String },
}

/// Fixed-point rendering that never prints `-0.0`.
fn fixed(v: f64, decimals: usize) -> String {
    let s = format!("{v:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fields(r: &TraceRecord) -> [String; 12] {
    [
        r.time.as_micros().to_string(),
        r.node.to_string(),
        r.event.name().to_string(),
        opt(r.frame_kind.map(FrameKind::name)),
        opt(r.src),
        opt(r.dst),
        opt(r.seq),
        r.power_dbm.map(|p| fixed(p, 1)).unwrap_or_default(),
        r.rx_power_dbm.map(|p| fixed(p, 1)).unwrap_or_default(),
        opt(r.lq),
        r.pos_x_m.map(|x| fixed(x, 2)).unwrap_or_default(),
        r.outcome.clone().unwrap_or_default(),
    ]
}

pub fn write_trace<W: Write>(out: W, rows: &[TraceRecord]) -> Result<(), TraceError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(HEADER)?;
    for r in rows {
        w.write_record(fields(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn trace_to_string(rows: &[TraceRecord]) -> String {
    let mut buf = Vec::new();
    write_trace(&mut buf, rows).expect("writing to memory");
    String::from_utf8(buf).expect("trace is ASCII")
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, row: usize) -> Result<Option<T>, TraceError> {
    let s = rec.get(i).unwrap_or("");
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| TraceError::Field { row, column: HEADER[i], value: s.to_string() })
}

fn required<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, row: usize) -> Result<T, TraceError> {
    field(rec, i, row)?.ok_or_else(|| TraceError::Field { row, column: HEADER[i], value: String::new() })
}

/// Read a trace written by [`write_trace`]. The header must match exactly.
pub fn read_trace<R: Read>(input: R) -> Result<Vec<TraceRecord>, TraceError> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rd.headers()?.clone();
    if header.iter().ne(HEADER.iter().copied()) {
        return Err(TraceError::Header {
            expected: HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut rows = Vec::new();
    for (n, rec) in rd.records().enumerate() {
        let rec = rec?;
        let row = n + 2;
        let event_s: String = required(&rec, 2, row)?;
        let event = EventLabel::parse(&event_s).ok_or(TraceError::Field { row, column: HEADER[2], value: event_s })?;
        let frame_kind = match field::<String>(&rec, 3, row)? {
            Some(k) => Some(FrameKind::parse(&k).ok_or(TraceError::Field { row, column: HEADER[3], value: k })?),
            None => None,
        };
        rows.push(TraceRecord {
            time: SimTime::from_micros(required(&rec, 0, row)?),
            node: required(&rec, 1, row)?,
            event,
            frame_kind,
            src: field(&rec, 4, row)?,
            dst: field(&rec, 5, row)?,
            seq: field(&rec, 6, row)?,
            power_dbm: field(&rec, 7, row)?,
            rx_power_dbm: field(&rec, 8, row)?,
            lq: field(&rec, 9, row)?,
            pos_x_m: field(&rec, 10, row)?,
            outcome: field(&rec, 11, row)?,
        });
    }
    Ok(rows)
}
