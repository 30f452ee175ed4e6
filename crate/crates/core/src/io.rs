//! File formats.
//!
//! * Detection records: one JSON object per line with the fields `image_id`,
//!   `cx`, `cy`, `w`, `h`, `theta_deg` and (predictions only) `score`. `h` is
//!   the side along `theta_deg`; records with `w > h` are canonicalized.
//! * `F32GRID`: ASCII header `F32GRID <width> <height>\n` followed by
//!   `width * height` little-endian `f32` values, row-major, top row first.
//! * 8-bit PGM (`P5` binary or `P2` plain), read only; values are scaled by
//!   `1 / maxval` so 255 maps to 1.0.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ObbBox;
use crate::grid::Grid;
use crate::metrics::DetectionSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub image_id: String,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub theta_deg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl DetectionRecord {
    pub fn to_box(&self) -> Result<ObbBox> {
        let b = ObbBox::from_degrees(self.cx, self.cy, self.h, self.w, self.theta_deg)?;
        match self.score {
            Some(s) => b.with_score(s),
            None => Ok(b),
        }
    }

    /// Record for a canonical box, angle in degrees within `[-90, 90)`.
    pub fn from_box(image_id: &str, b: &ObbBox) -> Self {
        let mut deg = b.theta_degrees();
        if deg >= 90.0 {
            deg -= 180.0;
        }
        Self {
            image_id: image_id.to_string(),
            cx: b.cx,
            cy: b.cy,
            w: b.w,
            h: b.h,
            theta_deg: deg,
            score: b.score,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("records always serialize")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    Prediction,
    GroundTruth,
}

/// Parsed detection file: canonical boxes grouped by image, with the source
/// line of each box.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionFile {
    pub boxes: DetectionSet,
    pub lines: BTreeMap<String, Vec<usize>>,
}

impl DetectionFile {
    pub fn len(&self) -> usize {
        self.boxes.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn parse_detections_from(reader: impl Read, kind: RecordKind) -> Result<DetectionFile> {
    let mut out = DetectionFile::default();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let rec: DetectionRecord = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
        match (kind, rec.score) {
            (RecordKind::Prediction, None) => {
                return Err(parse_err("prediction record is missing `score`".into()))
            }
            (RecordKind::GroundTruth, Some(_)) => {
                return Err(parse_err("ground-truth record must not carry `score`".into()))
            }
            _ => {}
        }
        let b = rec.to_box().map_err(|e| parse_err(e.to_string()))?;
        out.boxes.entry(rec.image_id.clone()).or_default().push(b);
        out.lines.entry(rec.image_id).or_default().push(line_no);
    }
    Ok(out)
}

pub fn parse_detections(path: impl AsRef<Path>, kind: RecordKind) -> Result<DetectionFile> {
    parse_detections_from(fs::File::open(path)?, kind)
}

/// Writes records grouped by image id in lexical order.
pub fn write_detections(mut w: impl Write, set: &DetectionSet) -> Result<()> {
    for (id, boxes) in set {
        for b in boxes {
            writeln!(w, "{}", DetectionRecord::from_box(id, b).to_json_line())?;
        }
    }
    Ok(())
}

const F32_MAGIC: &str = "F32GRID";
const MAX_HEADER: usize = 64;

pub fn encode_f32grid(g: &Grid) -> Vec<u8> {
    let mut out = format!("{F32_MAGIC} {} {}\n", g.width(), g.height()).into_bytes();
    out.reserve(4 * g.len());
    for &v in g.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn split_header(bytes: &[u8]) -> Result<(&str, &[u8])> {
    let end = bytes
        .iter()
        .take(MAX_HEADER)
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| Error::Format("header is not ASCII".into()))?;
    Ok((header, &bytes[end + 1..]))
}

pub fn decode_f32grid(bytes: &[u8]) -> Result<Grid> {
    let (header, payload) = split_header(bytes)?;
    let mut parts = header.split_ascii_whitespace();
    if parts.next() != Some(F32_MAGIC) {
        return Err(Error::Format(format!("bad magic, expected {F32_MAGIC}")));
    }
    let dim = |s: Option<&str>| -> Result<usize> {
        s.and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("bad dimensions in header `{header}`")))
    };
    let width = dim(parts.next())?;
    let height = dim(parts.next())?;
    if parts.next().is_some() {
        return Err(Error::Format(format!("trailing tokens in header `{header}`")));
    }
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format(format!("dimensions {width}x{height} overflow")))?;
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "payload is {} bytes, expected {expected} for {width}x{height}",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    Grid::new(width, height, data)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Grid> {
    // Header tokens: magic, width, height, maxval; `#` comments run to end of line.
    let mut tokens: Vec<String> = Vec::with_capacity(4);
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    let binary = match tokens[0].as_str() {
        "P5" => true,
        "P2" => false,
        other => return Err(Error::Format(format!("bad PGM magic `{other}`"))),
    };
    let num = |s: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| Error::Format(format!("bad PGM header value `{s}`")))
    };
    let (width, height, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("only 8-bit PGM is supported, maxval {maxval}")));
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::Format(format!("dimensions {width}x{height} overflow")))?;
    let scale = 1.0 / maxval as f64;
    let data: Vec<f64> = if binary {
        // Exactly one whitespace byte separates maxval from the raster.
        let raster = bytes.get(pos + 1..).unwrap_or(&[]);
        if raster.len() != n {
            return Err(Error::Format(format!(
                "payload is {} bytes, expected {n} for {width}x{height}",
                raster.len()
            )));
        }
        raster.iter().map(|&v| f64::from(v) * scale).collect()
    } else {
        let text = String::from_utf8_lossy(&bytes[pos..]);
        let vals: Vec<f64> = text
            .split_ascii_whitespace()
            .map(|t| num(t).map(|v| v as f64 * scale))
            .collect::<Result<_>>()?;
        if vals.len() != n {
            return Err(Error::Format(format!(
                "found {} samples, expected {n} for {width}x{height}",
                vals.len()
            )));
        }
        vals
    };
    if data.iter().any(|&v| v > 1.0) {
        return Err(Error::Format(format!("sample exceeds maxval {maxval}")));
    }
    Grid::new(width, height, data)
}

/// Decodes an `F32GRID` or 8-bit PGM image, chosen by magic.
pub fn decode_grid(bytes: &[u8]) -> Result<Grid> {
    if bytes.starts_with(F32_MAGIC.as_bytes()) {
        decode_f32grid(bytes)
    } else if bytes.starts_with(b"P5") || bytes.starts_with(b"P2") {
        decode_pgm(bytes)
    } else {
        Err(Error::Format("unrecognised grid file (expected F32GRID or PGM)".into()))
    }
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<Grid> {
    decode_grid(&fs::read(path)?)
}

pub fn write_grid(path: impl AsRef<Path>, g: &Grid) -> Result<()> {
    fs::write(path, encode_f32grid(g))?;
    Ok(())
}
