//! Bit-exact GDSII-subset reader/writer for clips, plus a line-delimited
//! dataset manifest carrying labels, splits, and provenance.
//!
//! The GDSII subset covers exactly the records this pipeline emits:
//! HEADER, BGNLIB, LIBNAME, UNITS, BGNSTR, STRNAME, BOUNDARY, LAYER,
//! DATATYPE, XY, ENDEL, ENDSTR, ENDLIB. Anything else is skipped with a
//! warning flag. One database unit is one nanometer.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, LayoutClip, Point, RectilinearPolygon};

#[derive(Debug, Error)]
pub enum LayoutIoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("gds parse error at byte {offset}: {reason}")]
    Parse { offset: u64, reason: String },
    #[error("gds geometry at byte {offset}: {source}")]
    Geometry {
        offset: u64,
        source: GeometryError,
    },
    #[error("manifest integrity error: {0}")]
    Integrity(String),
    #[error("manifest parse error on line {line}: {reason}")]
    Manifest { line: usize, reason: String },
}

// GDSII record types used by the subset.
mod rec {
    pub const HEADER: u8 = 0x00;
    pub const BGNLIB: u8 = 0x01;
    pub const LIBNAME: u8 = 0x02;
    pub const UNITS: u8 = 0x03;
    pub const ENDLIB: u8 = 0x04;
    pub const BGNSTR: u8 = 0x05;
    pub const STRNAME: u8 = 0x06;
    pub const ENDSTR: u8 = 0x07;
    pub const BOUNDARY: u8 = 0x08;
    pub const LAYER: u8 = 0x0D;
    pub const DATATYPE: u8 = 0x0E;
    pub const XY: u8 = 0x10;
    pub const ENDEL: u8 = 0x11;
}

// GDSII data types.
mod dt {
    pub const NONE: u8 = 0x00;
    pub const I16: u8 = 0x02;
    pub const I32: u8 = 0x03;
    pub const REAL8: u8 = 0x05;
    pub const ASCII: u8 = 0x06;
}

/// Encodes an 8-byte GDSII excess-64, base-16 real.
fn gds_real(value: f64) -> [u8; 8] {
    if value == 0.0 {
        return [0; 8];
    }
    let sign = if value < 0.0 { 0x80u8 } else { 0 };
    let mut v = value.abs();
    let mut exp: i32 = 64;
    while v >= 1.0 {
        v /= 16.0;
        exp += 1;
    }
    while v < 1.0 / 16.0 {
        v *= 16.0;
        exp -= 1;
    }
    let mantissa = (v * 2f64.powi(56)) as u64;
    let mut out = [0u8; 8];
    out[0] = sign | (exp as u8);
    for i in 0..7 {
        out[i + 1] = ((mantissa >> (8 * (6 - i))) & 0xFF) as u8;
    }
    out
}

fn gds_real_decode(bytes: &[u8; 8]) -> f64 {
    let sign = if bytes[0] & 0x80 != 0 { -1.0 } else { 1.0 };
    let exp = (bytes[0] & 0x7F) as i32 - 64;
    let mut mantissa = 0u64;
    for &b in &bytes[1..8] {
        mantissa = (mantissa << 8) | b as u64;
    }
    sign * mantissa as f64 / 2f64.powi(56) * 16f64.powi(exp)
}

struct RecordWriter<W: Write> {
    w: W,
    written: u64,
}

impl<W: Write> RecordWriter<W> {
    fn record(&mut self, rtype: u8, dtype: u8, payload: &[u8]) -> std::io::Result<()> {
        debug_assert!(payload.len() % 2 == 0);
        let len = (payload.len() + 4) as u16;
        self.w.write_all(&len.to_be_bytes())?;
        self.w.write_all(&[rtype, dtype])?;
        self.w.write_all(payload)?;
        self.written += len as u64;
        Ok(())
    }

    fn i16_record(&mut self, rtype: u8, values: &[i16]) -> std::io::Result<()> {
        let mut payload = Vec::with_capacity(values.len() * 2);
        for v in values {
            payload.extend_from_slice(&v.to_be_bytes());
        }
        self.record(rtype, dt::I16, &payload)
    }

    fn ascii_record(&mut self, rtype: u8, s: &str) -> std::io::Result<()> {
        let mut payload = s.as_bytes().to_vec();
        if payload.len() % 2 != 0 {
            payload.push(0);
        }
        self.record(rtype, dt::ASCII, &payload)
    }
}

/// Writes one clip as a single-structure GDSII library. Returns bytes written.
///
/// Timestamps are zeroed so identical clips produce byte-identical files.
pub fn write_clip_gds(clip: &LayoutClip, path: &Path) -> Result<u64, LayoutIoError> {
    let file = File::create(path)?;
    let mut rw = RecordWriter {
        w: BufWriter::new(file),
        written: 0,
    };
    rw.i16_record(rec::HEADER, &[600])?;
    rw.i16_record(rec::BGNLIB, &[0; 12])?;
    rw.ascii_record(rec::LIBNAME, "HOTSPOT")?;
    let mut units = Vec::with_capacity(16);
    units.extend_from_slice(&gds_real(1e-3)); // user units per db unit (um scale)
    units.extend_from_slice(&gds_real(1e-9)); // db unit in meters: 1 nm
    rw.record(rec::UNITS, dt::REAL8, &units)?;
    rw.i16_record(rec::BGNSTR, &[0; 12])?;
    rw.ascii_record(rec::STRNAME, &clip.id)?;
    for poly in &clip.polygons {
        rw.record(rec::BOUNDARY, dt::NONE, &[])?;
        rw.i16_record(rec::LAYER, &[1])?;
        rw.i16_record(rec::DATATYPE, &[0])?;
        let mut xy = Vec::with_capacity((poly.vertices().len() + 1) * 8);
        for p in poly.vertices() {
            xy.extend_from_slice(&p.x.to_be_bytes());
            xy.extend_from_slice(&p.y.to_be_bytes());
        }
        // XY loops are closed: the first point repeats at the end.
        let first = poly.vertices()[0];
        xy.extend_from_slice(&first.x.to_be_bytes());
        xy.extend_from_slice(&first.y.to_be_bytes());
        rw.record(rec::XY, dt::I32, &xy)?;
        rw.record(rec::ENDEL, dt::NONE, &[])?;
    }
    rw.record(rec::ENDSTR, dt::NONE, &[])?;
    rw.record(rec::ENDLIB, dt::NONE, &[])?;
    rw.w.flush()?;
    Ok(rw.written)
}

/// Result of reading a clip: the clip plus whether unknown records were skipped.
#[derive(Debug)]
pub struct GdsReadResult {
    pub clip: LayoutClip,
    pub skipped_unknown_records: bool,
    /// Decoded database unit in meters, for interop sanity checks.
    pub db_unit_meters: f64,
}

struct RawRecord {
    offset: u64,
    rtype: u8,
    #[allow(dead_code)]
    dtype: u8,
    payload: Vec<u8>,
}

fn read_records(path: &Path) -> Result<Vec<RawRecord>, LayoutIoError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let mut records = Vec::new();
    let mut pos = 0usize;
    while pos < bytes.len() {
        let offset = pos as u64;
        if pos + 4 > bytes.len() {
            return Err(LayoutIoError::Parse {
                offset,
                reason: "truncated record header".into(),
            });
        }
        let len = u16::from_be_bytes([bytes[pos], bytes[pos + 1]]) as usize;
        if len < 4 {
            return Err(LayoutIoError::Parse {
                offset,
                reason: format!("record length {len} below minimum 4"),
            });
        }
        if len % 2 != 0 {
            return Err(LayoutIoError::Parse {
                offset,
                reason: format!("odd record length {len}"),
            });
        }
        if pos + len > bytes.len() {
            return Err(LayoutIoError::Parse {
                offset,
                reason: "truncated record payload".into(),
            });
        }
        records.push(RawRecord {
            offset,
            rtype: bytes[pos + 2],
            dtype: bytes[pos + 3],
            payload: bytes[pos + 4..pos + len].to_vec(),
        });
        pos += len;
    }
    Ok(records)
}

fn parse_ascii(payload: &[u8]) -> String {
    let end = payload.iter().position(|&b| b == 0).unwrap_or(payload.len());
    String::from_utf8_lossy(&payload[..end]).into_owned()
}

/// Reads a clip from a GDSII file. Inverse of [`write_clip_gds`] on files it
/// produced; unknown benign records are skipped with a warning flag.
pub fn read_clip_gds(path: &Path) -> Result<GdsReadResult, LayoutIoError> {
    let records = read_records(path)?;
    let mut clip_id = String::new();
    let mut polygons = Vec::new();
    let mut skipped = false;
    let mut db_unit_meters = 1e-9;
    let mut pending_xy: Option<(u64, Vec<Point>)> = None;
    for r in &records {
        match r.rtype {
            rec::HEADER | rec::BGNLIB | rec::LIBNAME | rec::BGNSTR | rec::ENDSTR
            | rec::ENDLIB | rec::BOUNDARY | rec::LAYER | rec::DATATYPE => {}
            rec::UNITS => {
                if r.payload.len() == 16 {
                    db_unit_meters = gds_real_decode(r.payload[8..16].try_into().unwrap());
                }
            }
            rec::STRNAME => clip_id = parse_ascii(&r.payload),
            rec::XY => {
                if r.payload.len() % 8 != 0 {
                    return Err(LayoutIoError::Parse {
                        offset: r.offset,
                        reason: "XY payload not a multiple of 8 bytes".into(),
                    });
                }
                let mut pts = Vec::with_capacity(r.payload.len() / 8);
                for chunk in r.payload.chunks_exact(8) {
                    let x = i32::from_be_bytes(chunk[0..4].try_into().unwrap());
                    let y = i32::from_be_bytes(chunk[4..8].try_into().unwrap());
                    pts.push(Point::new(x, y));
                }
                if pts.len() < 2 || pts.first() != pts.last() {
                    return Err(LayoutIoError::Parse {
                        offset: r.offset,
                        reason: "XY loop not closed".into(),
                    });
                }
                pts.pop();
                pending_xy = Some((r.offset, pts));
            }
            rec::ENDEL => {
                if let Some((offset, mut pts)) = pending_xy.take() {
                    // Normalize vertex order; external tools may emit clockwise loops.
                    if shoelace2(&pts) < 0 {
                        pts.reverse();
                    }
                    let poly = RectilinearPolygon::new(pts).map_err(|e| match e {
                        GeometryError::DiagonalEdge(_) => LayoutIoError::Parse {
                            offset,
                            reason: "non-rectilinear boundary".into(),
                        },
                        other => LayoutIoError::Geometry {
                            offset,
                            source: other,
                        },
                    })?;
                    polygons.push(poly);
                }
            }
            _ => skipped = true,
        }
    }
    Ok(GdsReadResult {
        clip: LayoutClip::new(clip_id, polygons),
        skipped_unknown_records: skipped,
        db_unit_meters,
    })
}

fn shoelace2(pts: &[Point]) -> i64 {
    let n = pts.len();
    let mut acc = 0i64;
    for i in 0..n {
        let a = pts[i];
        let b = pts[(i + 1) % n];
        acc += a.x as i64 * b.y as i64 - b.x as i64 * a.y as i64;
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    NonHotspot,
    Hotspot,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::NonHotspot => write!(f, "non-hotspot"),
            Label::Hotspot => write!(f, "hotspot"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Provenance {
    Original,
    VariantOf {
        parent_id: String,
        variant_index: u32,
    },
    Poisoned {
        parent_id: String,
        trigger_id: String,
    },
}

impl Provenance {
    pub fn kind(&self) -> &'static str {
        match self {
            Provenance::Original => "original",
            Provenance::VariantOf { .. } => "variant",
            Provenance::Poisoned { .. } => "poisoned",
        }
    }
}

/// One dataset entry: a clip on disk plus label, split, and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: String,
    pub path: String,
    pub label: Option<Label>,
    pub split: Split,
    pub provenance: Provenance,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub format_version: u32,
    pub global_seed: u64,
    pub config_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    pub records: Vec<ClipRecord>,
}

impl DatasetManifest {
    pub fn new(global_seed: u64, config_digest: impl Into<String>) -> Self {
        DatasetManifest {
            header: ManifestHeader {
                format_version: 1,
                global_seed,
                config_digest: config_digest.into(),
            },
            records: Vec::new(),
        }
    }

    /// Counts per (label, split, provenance kind), sorted for stable output.
    pub fn counts(&self) -> Vec<(String, usize)> {
        let mut map: HashMap<String, usize> = HashMap::new();
        for r in &self.records {
            let label = match r.label {
                Some(Label::Hotspot) => "hotspot",
                Some(Label::NonHotspot) => "non-hotspot",
                None => "unlabeled",
            };
            let split = match r.split {
                Split::Train => "train",
                Split::Test => "test",
            };
            let key = format!("{label}/{split}/{}", r.provenance.kind());
            *map.entry(key).or_insert(0) += 1;
        }
        let mut counts: Vec<_> = map.into_iter().collect();
        counts.sort();
        counts
    }
}

/// Saves the manifest as line-delimited JSON: a header line, one record per
/// line, and a footer line with derived counts. Field order is stable, so
/// two saves of the same manifest are byte-identical.
pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), LayoutIoError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "{}",
        serde_json::to_string(&manifest.header).expect("header serializes")
    )?;
    for r in &manifest.records {
        writeln!(w, "{}", serde_json::to_string(r).expect("record serializes"))?;
    }
    let counts = manifest.counts();
    let footer = serde_json::json!({ "footer": { "total": manifest.records.len(), "counts": counts } });
    writeln!(w, "{footer}")?;
    w.flush()?;
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest, LayoutIoError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = Vec::new();
    for line in reader.lines() {
        lines.push(line?);
    }
    if lines.len() < 2 {
        return Err(LayoutIoError::Manifest {
            line: 0,
            reason: "manifest needs a header and a footer line".into(),
        });
    }
    let header: ManifestHeader =
        serde_json::from_str(&lines[0]).map_err(|e| LayoutIoError::Manifest {
            line: 1,
            reason: e.to_string(),
        })?;
    let mut records = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in lines[1..lines.len() - 1].iter().enumerate() {
        let record: ClipRecord =
            serde_json::from_str(line).map_err(|e| LayoutIoError::Manifest {
                line: i + 2,
                reason: e.to_string(),
            })?;
        if !seen.insert(record.clip_id.clone()) {
            return Err(LayoutIoError::Integrity(format!(
                "duplicate clip_id {}",
                record.clip_id
            )));
        }
        records.push(record);
    }
    let manifest = DatasetManifest { header, records };
    // Footer counts must match a recount over the records.
    let footer: serde_json::Value =
        serde_json::from_str(&lines[lines.len() - 1]).map_err(|e| LayoutIoError::Manifest {
            line: lines.len(),
            reason: e.to_string(),
        })?;
    let total = footer["footer"]["total"].as_u64().unwrap_or(u64::MAX) as usize;
    if total != manifest.records.len() {
        return Err(LayoutIoError::Integrity(format!(
            "footer total {total} != record count {}",
            manifest.records.len()
        )));
    }
    Ok(manifest)
}
