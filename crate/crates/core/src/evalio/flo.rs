//! Middlebury `.flo` files: `PIEH`, width and height as little-endian `i32`,
//! then row-major interleaved `(u, v)` little-endian `f32` pairs.

use std::path::Path;

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::image::decode_image;

const MAGIC: &[u8; 4] = b"PIEH";
const HEADER_LEN: usize = 12;
/// Components above this magnitude mark unknown flow.
pub const UNKNOWN_FLOW_THRESHOLD: f32 = 1e9;

/// Flow with a per-pixel validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthFlow {
    pub flow: FlowField,
    pub valid: Vec<bool>,
}

impl GroundTruthFlow {
    /// Every finite pixel valid.
    pub fn dense(flow: FlowField) -> Self {
        let valid = flow
            .u()
            .iter()
            .zip(flow.v())
            .map(|(u, v)| is_known(*u, *v))
            .collect();
        GroundTruthFlow { flow, valid }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Invalidates pixels flagged in `occluded`.
    pub fn with_occlusion(mut self, occluded: &[bool]) -> Result<Self> {
        if occluded.len() != self.valid.len() {
            return Err(Error::DimensionMismatch(format!(
                "mask has {} pixels, flow has {}",
                occluded.len(),
                self.valid.len()
            )));
        }
        for (v, o) in self.valid.iter_mut().zip(occluded) {
            *v &= !o;
        }
        Ok(self)
    }
}

fn is_known(u: f32, v: f32) -> bool {
    u.is_finite()
        && v.is_finite()
        && u.abs() <= UNKNOWN_FLOW_THRESHOLD
        && v.abs() <= UNKNOWN_FLOW_THRESHOLD
}

pub fn encode_flo(flow: &FlowField) -> Vec<u8> {
    let n = flow.width() * flow.height();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * n);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for (u, v) in flow.u().iter().zip(flow.v()) {
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_flo(bytes: &[u8]) -> Result<GroundTruthFlow> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
        return Err(Error::BadFlow(format!(
            "expected magic \"PIEH\", found {found:?}"
        )));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::BadFlow("truncated header".into()));
    }
    let read_i32 = |o: usize| i32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let (w, h) = (read_i32(4), read_i32(8));
    if w <= 0 || h <= 0 {
        return Err(Error::BadFlow(format!("invalid size {w}x{h}")));
    }
    let n = (w as usize)
        .checked_mul(h as usize)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::BadFlow(format!("size {w}x{h} overflows")))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < n {
        return Err(Error::BadFlow(format!(
            "truncated payload: {} of {n} bytes",
            payload.len()
        )));
    }
    let px = n / 8;
    let mut u = Vec::with_capacity(px);
    let mut v = Vec::with_capacity(px);
    for c in payload[..n].chunks_exact(8) {
        u.push(f32::from_le_bytes(c[..4].try_into().unwrap()));
        v.push(f32::from_le_bytes(c[4..].try_into().unwrap()));
    }
    Ok(GroundTruthFlow::dense(FlowField::from_uv(
        w as usize, h as usize, u, v,
    )?))
}

pub fn write_flo(path: impl AsRef<Path>, flow: &FlowField) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_flo(flow)).map_err(|e| Error::io(path, e))
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<GroundTruthFlow> {
    let path = path.as_ref();
    decode_flo(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Occlusion mask from a PGM/PPM: nonzero pixels are occluded.
pub fn read_mask(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<bool>)> {
    let path = path.as_ref();
    let img = decode_image(&std::fs::read(path).map_err(|e| Error::io(path, e))?)?;
    let gray = img.to_gray();
    Ok((
        gray.width,
        gray.height,
        gray.data.iter().map(|v| *v > 0.0).collect(),
    ))
}
