//! Event streams and their binned frame tensors.
//!
//! Events are `(t_us, x, y, p)` with polarity `p` in `{0, 1}` (encoding
//! `-1` / `+1`). Two on-disk encodings are accepted:
//!
//! * CSV, one `t_us,x,y,p` record per line. Blank lines, `#` comments and
//!   an optional `t_us,x,y,p` header line are ignored.
//! * Binary, packed 13-byte little-endian records: `u64 t_us`, `u16 x`,
//!   `u16 y`, `u8 p`, with no header.

mod binning;
mod frames;

pub use binning::{
    bin_direct, bin_event_volume, prefix_mask, rescale_for_bin_size, sample_prefix_cutoff, sparsity, BinGrid,
};
pub use frames::{decode_frames, encode_frames, FrameTensor, FRAME_MAGIC, FRAME_VERSION};

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};

use crate::error::{Error, Result};

/// Size of one binary event record in bytes.
pub const EVENT_RECORD_BYTES: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventRecord {
    /// Timestamp in microseconds.
    pub t: u64,
    pub x: u16,
    pub y: u16,
    /// 0 for negative, 1 for positive polarity.
    pub p: u8,
}

impl EventRecord {
    pub fn new(t: u64, x: u16, y: u16, p: u8) -> Self {
        Self { t, x, y, p }
    }
}

/// Declared sensor resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SensorGeometry {
    pub width: usize,
    pub height: usize,
}

impl SensorGeometry {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }

    fn check(&self, e: &EventRecord, line: usize) -> Result<()> {
        if e.x as usize >= self.width || e.y as usize >= self.height {
            return Err(Error::OutOfRange(format!(
                "record {line}: pixel ({}, {}) outside {}x{} sensor",
                e.x, e.y, self.width, self.height
            )));
        }
        if e.p > 1 {
            return Err(Error::Parse(format!("record {line}: polarity {} is not 0 or 1", e.p)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    Csv,
    Binary,
}

fn finish(mut events: Vec<EventRecord>) -> Vec<EventRecord> {
    // stable: ties keep file order
    events.sort_by_key(|e| e.t);
    events
}

/// Parses CSV event records, sorted by timestamp (stable among ties).
pub fn parse_events_csv(bytes: &[u8], geometry: SensorGeometry) -> Result<Vec<EventRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(bytes);
    let mut events = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(format!("record {}: {e}", i + 1)))?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if i == 0 && record.get(0) == Some("t_us") {
            continue;
        }
        if record.len() != 4 {
            return Err(Error::Parse(format!("record {}: expected 4 fields t_us,x,y,p, got {}", i + 1, record.len())));
        }
        let field = |k: usize| record.get(k).unwrap_or_default();
        let bad = |k: usize| Error::Parse(format!("record {}: bad field {:?}", i + 1, field(k)));
        let e = EventRecord {
            t: field(0).parse().map_err(|_| bad(0))?,
            x: field(1).parse().map_err(|_| bad(1))?,
            y: field(2).parse().map_err(|_| bad(2))?,
            p: field(3).parse().map_err(|_| bad(3))?,
        };
        geometry.check(&e, i + 1)?;
        events.push(e);
    }
    Ok(finish(events))
}

/// Parses packed binary event records, sorted by timestamp.
pub fn parse_events_binary(bytes: &[u8], geometry: SensorGeometry) -> Result<Vec<EventRecord>> {
    if !bytes.len().is_multiple_of(EVENT_RECORD_BYTES) {
        return Err(Error::Parse(format!(
            "binary event stream length {} is not a multiple of {EVENT_RECORD_BYTES}",
            bytes.len()
        )));
    }
    let mut events = Vec::with_capacity(bytes.len() / EVENT_RECORD_BYTES);
    for (i, rec) in bytes.chunks_exact(EVENT_RECORD_BYTES).enumerate() {
        let e = EventRecord {
            t: LittleEndian::read_u64(&rec[0..8]),
            x: LittleEndian::read_u16(&rec[8..10]),
            y: LittleEndian::read_u16(&rec[10..12]),
            p: rec[12],
        };
        geometry.check(&e, i + 1)?;
        events.push(e);
    }
    Ok(finish(events))
}

pub fn parse_events(bytes: &[u8], format: EventFormat, geometry: SensorGeometry) -> Result<Vec<EventRecord>> {
    match format {
        EventFormat::Csv => parse_events_csv(bytes, geometry),
        EventFormat::Binary => parse_events_binary(bytes, geometry),
    }
}

pub fn encode_events_csv(events: &[EventRecord]) -> String {
    let mut s = String::with_capacity(events.len() * 16);
    for e in events {
        s.push_str(&format!("{},{},{},{}\n", e.t, e.x, e.y, e.p));
    }
    s
}

pub fn encode_events_binary(events: &[EventRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(events.len() * EVENT_RECORD_BYTES);
    for e in events {
        out.write_u64::<LittleEndian>(e.t).unwrap();
        out.write_u16::<LittleEndian>(e.x).unwrap();
        out.write_u16::<LittleEndian>(e.y).unwrap();
        out.push(e.p);
    }
    out
}
