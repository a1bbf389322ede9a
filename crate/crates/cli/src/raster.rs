//! Raster files for images and label masks.
//!
//! `"SVLR" | height u32 | width u32 | channels u32 | dtype u8 | payload`,
//! little-endian, planar `[C, H, W]`. dtype 0 is f32, 1 is u8.

use std::path::Path;

use svlb_core::eval::SegMap;
use svlb_core::Tensor;

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 4] = b"SVLR";
const HEADER: usize = 17;
/// Mask value read back as "ignore".
pub const IGNORE_LABEL: u32 = 255;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub payload: Payload,
}

impl Raster {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER + self.height * self.width * self.channels * 4);
        out.extend_from_slice(MAGIC);
        for v in [self.height, self.width, self.channels] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        match &self.payload {
            Payload::F32(d) => {
                out.push(0);
                for v in d {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Payload::U8(d) => {
                out.push(1);
                out.extend_from_slice(d);
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, String> {
        if bytes.len() < HEADER {
            return Err("truncated header".into());
        }
        if &bytes[..4] != MAGIC {
            return Err("bad magic, expected \"SVLR\"".into());
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (height, width, channels) = (dim(0), dim(1), dim(2));
        let n = height * width * channels;
        let body = &bytes[HEADER..];
        let payload = match bytes[16] {
            0 if body.len() == n * 4 => Payload::F32(
                body.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            1 if body.len() == n => Payload::U8(body.to_vec()),
            0 | 1 => {
                return Err(format!(
                    "payload of {} bytes does not match {channels}x{height}x{width}",
                    body.len()
                ))
            }
            d => return Err(format!("unknown dtype {d}")),
        };
        Ok(Self {
            height,
            width,
            channels,
            payload,
        })
    }
}

fn read(path: &Path) -> CliResult<Raster> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Raster::decode(&bytes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn encode_image(image: &Tensor) -> CliResult<Vec<u8>> {
    let [c, h, w] = *image.shape() else {
        return Err(CliError::Input(format!(
            "image must be [C, H, W], got {:?}",
            image.shape()
        )));
    };
    Ok(Raster {
        height: h,
        width: w,
        channels: c,
        payload: Payload::F32(image.data().to_vec()),
    }
    .encode())
}

pub fn read_image(path: &Path) -> CliResult<Tensor> {
    let r = read(path)?;
    match r.payload {
        Payload::F32(d) => Ok(Tensor::new(&[r.channels, r.height, r.width], d)?),
        Payload::U8(_) => Err(CliError::Input(format!(
            "{}: image rasters must be f32",
            path.display()
        ))),
    }
}

/// Labels above 254 cannot be stored; 255 marks ignored pixels.
pub fn encode_mask(mask: &SegMap) -> CliResult<Vec<u8>> {
    let data = mask
        .labels
        .iter()
        .map(|&l| {
            if Some(l) == mask.ignore_id {
                Ok(IGNORE_LABEL as u8)
            } else if l < IGNORE_LABEL {
                Ok(l as u8)
            } else {
                Err(CliError::Input(format!("label {l} does not fit a u8 mask")))
            }
        })
        .collect::<CliResult<Vec<u8>>>()?;
    Ok(Raster {
        height: mask.height,
        width: mask.width,
        channels: 1,
        payload: Payload::U8(data),
    }
    .encode())
}

pub fn read_mask(path: &Path) -> CliResult<SegMap> {
    let r = read(path)?;
    match (r.channels, r.payload) {
        (1, Payload::U8(d)) => Ok(SegMap::new(
            r.height,
            r.width,
            d.into_iter().map(u32::from).collect(),
            Some(IGNORE_LABEL),
        )?),
        _ => Err(CliError::Input(format!(
            "{}: masks must be single-channel u8",
            path.display()
        ))),
    }
}
