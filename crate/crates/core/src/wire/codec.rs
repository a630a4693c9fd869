//! Length-prefixed little-endian message framing.
//!
//! Every message is a 6-byte header (`u16` id, `u32` payload length) followed
//! by the payload. Samples and pixels are IEEE-754 binary32.

use std::io::{self, Read, Write};

use num_complex::Complex32;

use super::WireError;

pub const HEADER_LEN: usize = 6;
/// Upper bound on a payload the decoder will allocate for.
pub const MAX_PAYLOAD: u32 = 1 << 30;

pub const ID_CLOSE: u16 = 0;
pub const ID_CONFIG: u16 = 1;
pub const ID_ACQUISITION: u16 = 2;
pub const ID_IMAGE: u16 = 3;
pub const ID_ANNOTATIONS: u16 = 4;
pub const ID_REPORT: u16 = 5;

/// Acquisition flag: line belongs to the calibration block.
pub const FLAG_ACS: u16 = 1;
/// Acquisition flag: final line of its slice.
pub const FLAG_LAST_IN_SLICE: u16 = 1 << 1;

pub const PIXEL_F32_MAGNITUDE: u16 = 0;

const ACQ_FIXED: usize = 16;
const IMAGE_FIXED: usize = 8;
const ANN_FIXED: usize = 4;
const ANN_RECORD: usize = 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MessageHeader {
    pub message_id: u16,
    pub payload_length: u32,
}

/// One readout line for all coils.
#[derive(Debug, Clone, PartialEq)]
pub struct Acquisition {
    pub scan_counter: u32,
    pub slice_index: u16,
    pub line_index: u16,
    pub num_coils: u16,
    pub flags: u16,
    pub num_samples: u32,
    /// `num_coils × num_samples`, coil-major.
    pub data: Vec<Complex32>,
}

impl Acquisition {
    pub fn is_acs(&self) -> bool {
        self.flags & FLAG_ACS != 0
    }

    pub fn is_last_in_slice(&self) -> bool {
        self.flags & FLAG_LAST_IN_SLICE != 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageMessage {
    pub slice_index: u16,
    pub rows: u16,
    pub cols: u16,
    pub pixel_type: u16,
    pub pixels: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WireBox {
    pub x0: f32,
    pub y0: f32,
    pub x1: f32,
    pub y1: f32,
    pub confidence: f32,
    pub class_id: u16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationsMessage {
    pub slice_index: u16,
    pub boxes: Vec<WireBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GadgetMessage {
    Close,
    Config(String),
    Acquisition(Acquisition),
    Image(ImageMessage),
    Annotations(AnnotationsMessage),
    Report(String),
}

impl GadgetMessage {
    pub fn id(&self) -> u16 {
        match self {
            GadgetMessage::Close => ID_CLOSE,
            GadgetMessage::Config(_) => ID_CONFIG,
            GadgetMessage::Acquisition(_) => ID_ACQUISITION,
            GadgetMessage::Image(_) => ID_IMAGE,
            GadgetMessage::Annotations(_) => ID_ANNOTATIONS,
            GadgetMessage::Report(_) => ID_REPORT,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            GadgetMessage::Close => "close",
            GadgetMessage::Config(_) => "config",
            GadgetMessage::Acquisition(_) => "acquisition",
            GadgetMessage::Image(_) => "image",
            GadgetMessage::Annotations(_) => "annotations",
            GadgetMessage::Report(_) => "report",
        }
    }
}

pub fn encode_message(msg: &GadgetMessage) -> Vec<u8> {
    let mut payload = Vec::new();
    match msg {
        GadgetMessage::Close => {}
        GadgetMessage::Config(text) | GadgetMessage::Report(text) => payload.extend_from_slice(text.as_bytes()),
        GadgetMessage::Acquisition(a) => {
            payload.reserve(ACQ_FIXED + a.data.len() * 8);
            payload.extend_from_slice(&a.scan_counter.to_le_bytes());
            payload.extend_from_slice(&a.slice_index.to_le_bytes());
            payload.extend_from_slice(&a.line_index.to_le_bytes());
            payload.extend_from_slice(&a.num_coils.to_le_bytes());
            payload.extend_from_slice(&a.flags.to_le_bytes());
            payload.extend_from_slice(&a.num_samples.to_le_bytes());
            for z in &a.data {
                payload.extend_from_slice(&z.re.to_le_bytes());
                payload.extend_from_slice(&z.im.to_le_bytes());
            }
        }
        GadgetMessage::Image(img) => {
            payload.reserve(IMAGE_FIXED + img.pixels.len() * 4);
            payload.extend_from_slice(&img.slice_index.to_le_bytes());
            payload.extend_from_slice(&img.rows.to_le_bytes());
            payload.extend_from_slice(&img.cols.to_le_bytes());
            payload.extend_from_slice(&img.pixel_type.to_le_bytes());
            for p in &img.pixels {
                payload.extend_from_slice(&p.to_le_bytes());
            }
        }
        GadgetMessage::Annotations(ann) => {
            payload.extend_from_slice(&ann.slice_index.to_le_bytes());
            payload.extend_from_slice(&(ann.boxes.len() as u16).to_le_bytes());
            for b in &ann.boxes {
                for v in [b.x0, b.y0, b.x1, b.y1, b.confidence] {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
                payload.extend_from_slice(&b.class_id.to_le_bytes());
            }
        }
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&msg.id().to_le_bytes());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

pub fn write_message<W: Write>(w: &mut W, msg: &GadgetMessage) -> io::Result<()> {
    w.write_all(&encode_message(msg))
}

fn parse_header(bytes: &[u8; HEADER_LEN]) -> Result<MessageHeader, WireError> {
    let message_id = u16::from_le_bytes([bytes[0], bytes[1]]);
    let payload_length = u32::from_le_bytes([bytes[2], bytes[3], bytes[4], bytes[5]]);
    if message_id > ID_REPORT {
        return Err(WireError::UnknownId(message_id));
    }
    if payload_length > MAX_PAYLOAD {
        return Err(WireError::Malformed(format!(
            "payload length {payload_length} exceeds limit {MAX_PAYLOAD}"
        )));
    }
    Ok(MessageHeader {
        message_id,
        payload_length,
    })
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out: [u8; N] = self.buf[self.pos..self.pos + N].try_into().expect("length checked");
        self.pos += N;
        out
    }
    fn u16(&mut self) -> u16 {
        u16::from_le_bytes(self.take())
    }
    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }
    fn f32(&mut self) -> f32 {
        f32::from_le_bytes(self.take())
    }
}

fn expect_len(kind: &str, actual: usize, expected: usize) -> Result<(), WireError> {
    if actual != expected {
        return Err(WireError::Malformed(format!(
            "{kind} payload is {actual} bytes, fields require {expected}"
        )));
    }
    Ok(())
}

fn text(kind: &str, payload: &[u8]) -> Result<String, WireError> {
    String::from_utf8(payload.to_vec()).map_err(|e| WireError::Malformed(format!("{kind} payload is not UTF-8: {e}")))
}

fn decode_payload(id: u16, payload: &[u8]) -> Result<GadgetMessage, WireError> {
    let mut c = Cursor { buf: payload, pos: 0 };
    match id {
        ID_CLOSE => {
            expect_len("close", payload.len(), 0)?;
            Ok(GadgetMessage::Close)
        }
        ID_CONFIG => Ok(GadgetMessage::Config(text("config", payload)?)),
        ID_REPORT => Ok(GadgetMessage::Report(text("report", payload)?)),
        ID_ACQUISITION => {
            if payload.len() < ACQ_FIXED {
                return Err(WireError::Malformed(format!(
                    "acquisition payload is {} bytes, header fields need {ACQ_FIXED}",
                    payload.len()
                )));
            }
            let scan_counter = c.u32();
            let slice_index = c.u16();
            let line_index = c.u16();
            let num_coils = c.u16();
            let flags = c.u16();
            let num_samples = c.u32();
            let count = num_coils as usize * num_samples as usize;
            expect_len("acquisition", payload.len(), ACQ_FIXED + count * 8)?;
            let data = (0..count).map(|_| Complex32::new(c.f32(), c.f32())).collect();
            Ok(GadgetMessage::Acquisition(Acquisition {
                scan_counter,
                slice_index,
                line_index,
                num_coils,
                flags,
                num_samples,
                data,
            }))
        }
        ID_IMAGE => {
            if payload.len() < IMAGE_FIXED {
                return Err(WireError::Malformed(format!(
                    "image payload is {} bytes, header fields need {IMAGE_FIXED}",
                    payload.len()
                )));
            }
            let slice_index = c.u16();
            let rows = c.u16();
            let cols = c.u16();
            let pixel_type = c.u16();
            if pixel_type != PIXEL_F32_MAGNITUDE {
                return Err(WireError::Malformed(format!("unsupported pixel type {pixel_type}")));
            }
            let count = rows as usize * cols as usize;
            expect_len("image", payload.len(), IMAGE_FIXED + count * 4)?;
            let pixels = (0..count).map(|_| c.f32()).collect();
            Ok(GadgetMessage::Image(ImageMessage {
                slice_index,
                rows,
                cols,
                pixel_type,
                pixels,
            }))
        }
        ID_ANNOTATIONS => {
            if payload.len() < ANN_FIXED {
                return Err(WireError::Malformed(format!(
                    "annotations payload is {} bytes, header fields need {ANN_FIXED}",
                    payload.len()
                )));
            }
            let slice_index = c.u16();
            let count = c.u16() as usize;
            expect_len("annotations", payload.len(), ANN_FIXED + count * ANN_RECORD)?;
            let boxes = (0..count)
                .map(|_| WireBox {
                    x0: c.f32(),
                    y0: c.f32(),
                    x1: c.f32(),
                    y1: c.f32(),
                    confidence: c.f32(),
                    class_id: c.u16(),
                })
                .collect();
            Ok(GadgetMessage::Annotations(AnnotationsMessage { slice_index, boxes }))
        }
        other => Err(WireError::UnknownId(other)),
    }
}

/// Decodes one message from the front of `bytes`, returning it with the
/// number of bytes consumed.
pub fn decode_message(bytes: &[u8]) -> Result<(GadgetMessage, usize), WireError> {
    if bytes.len() < HEADER_LEN {
        return Err(WireError::Incomplete {
            expected: HEADER_LEN,
            available: bytes.len(),
        });
    }
    let header = parse_header(bytes[..HEADER_LEN].try_into().expect("length checked"))?;
    let total = HEADER_LEN + header.payload_length as usize;
    if bytes.len() < total {
        return Err(WireError::Incomplete {
            expected: total,
            available: bytes.len(),
        });
    }
    let msg = decode_payload(header.message_id, &bytes[HEADER_LEN..total])?;
    Ok((msg, total))
}

/// Fills `buf` unless the stream ends first; returns the bytes read.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

/// Reads one message from a stream. `Ok(None)` means the stream ended cleanly
/// on a message boundary.
pub fn read_message<R: Read>(r: &mut R) -> Result<Option<GadgetMessage>, WireError> {
    let mut head = [0u8; HEADER_LEN];
    let got = read_full(r, &mut head)?;
    if got == 0 {
        return Ok(None);
    }
    if got < HEADER_LEN {
        return Err(WireError::Incomplete {
            expected: HEADER_LEN,
            available: got,
        });
    }
    let header = parse_header(&head)?;
    let mut payload = vec![0u8; header.payload_length as usize];
    let got = read_full(r, &mut payload)?;
    if got < payload.len() {
        return Err(WireError::Incomplete {
            expected: HEADER_LEN + payload.len(),
            available: HEADER_LEN + got,
        });
    }
    decode_payload(header.message_id, &payload).map(Some)
}

/// Decodes a whole byte stream into messages.
pub fn decode_stream(mut bytes: &[u8]) -> Result<Vec<GadgetMessage>, WireError> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        let (msg, used) = decode_message(bytes)?;
        out.push(msg);
        bytes = &bytes[used..];
    }
    Ok(out)
}
