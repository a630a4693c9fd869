//! Binary PGM (P5) images. Files written here are 16-bit and carry a
//! `# ksp scale=<max>` comment so intensities can be restored on read.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::model::{MagnitudeImage, ModelError};

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a binary PGM: {message}")]
    Format { path: String, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

const SCALE_TAG: &str = "# ksp scale=";

/// `slice_0007.pgm` style file name.
pub fn slice_file_name(slice_index: u32) -> String {
    format!("slice_{slice_index:04}.pgm")
}

pub fn encode_pgm(img: &MagnitudeImage) -> Vec<u8> {
    let max = img.max() as f64;
    let scale = if max > 0.0 { max } else { 1.0 };
    let mut out = format!("P5\n{SCALE_TAG}{scale:?}\n{} {}\n65535\n", img.cols(), img.rows()).into_bytes();
    out.reserve(img.pixels().len() * 2);
    for &v in img.pixels() {
        let q = (v as f64 / scale * 65535.0).round().clamp(0.0, 65535.0) as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    out
}

pub fn write_pgm(path: &Path, img: &MagnitudeImage) -> Result<(), PgmError> {
    fs::write(path, encode_pgm(img)).map_err(|source| PgmError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn decode_pgm(bytes: &[u8], slice_index: u32) -> Result<MagnitudeImage, String> {
    let mut pos = 0;
    let mut scale = None;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err("truncated header".into());
        }
        if bytes[pos] == b'#' {
            let end = bytes[pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |e| pos + e);
            let line = String::from_utf8_lossy(&bytes[pos..end]);
            if let Some(v) = line.strip_prefix(SCALE_TAG) {
                scale = Some(v.trim().parse::<f64>().map_err(|e| format!("bad scale comment: {e}"))?);
            }
            pos = end;
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(format!("magic {:?}", fields[0]));
    }
    let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| format!("bad {what} {s:?}"));
    let cols = num(&fields[1], "width")?;
    let rows = num(&fields[2], "height")?;
    let maxval = num(&fields[3], "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} outside 1..=65535"));
    }
    pos += 1; // single whitespace after maxval
    let wide = maxval > 255;
    let need = rows * cols * if wide { 2 } else { 1 };
    let data = bytes.get(pos..pos + need).ok_or("truncated pixel data")?;
    let scale = scale.unwrap_or(1.0);
    let pixels = if wide {
        data.chunks_exact(2)
            .map(|b| (u16::from_be_bytes([b[0], b[1]]) as f64 / maxval as f64 * scale) as f32)
            .collect()
    } else {
        data.iter().map(|&b| (b as f64 / maxval as f64 * scale) as f32).collect()
    };
    MagnitudeImage::new(slice_index, rows, cols, pixels).map_err(|e| e.to_string())
}

pub fn read_pgm(path: &Path, slice_index: u32) -> Result<MagnitudeImage, PgmError> {
    let bytes = fs::read(path).map_err(|source| PgmError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_pgm(&bytes, slice_index).map_err(|message| PgmError::Format {
        path: path.display().to_string(),
        message,
    })
}
