//! Replay client: streams a dataset file and stores what comes back.

use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::net::{Shutdown, TcpStream};
use std::path::{Path, PathBuf};
use std::thread;

use serde::Serialize;
use thiserror::Error;

use super::codec::{decode_stream, read_message, write_message, GadgetMessage};
use super::WireError;
use crate::detection::{detections_to_json, BoundingBox, Detection};
use crate::model::MagnitudeImage;
use crate::pgm::{slice_file_name, write_pgm};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("connection refused by {0}")]
    ConnectionRefused(String),
    #[error("cannot connect to {addr}: {source}")]
    Connect {
        addr: String,
        #[source]
        source: io::Error,
    },
    #[error("protocol error from server: {0}")]
    Protocol(String),
    #[error("server closed the connection early; partial outputs kept ({0:?})")]
    PrematureClose(SessionSummary),
    #[error("{0}")]
    Io(String),
    #[error("dataset: {0}")]
    Dataset(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SessionSummary {
    /// Messages written to the server, Config and Close included.
    pub sent: usize,
    pub images: usize,
    pub annotations: usize,
    pub reports: usize,
    /// The server's error report, if it sent one.
    pub server_error: Option<String>,
}

pub const REPORT_FILE: &str = "report.json";
pub const DETECTIONS_FILE: &str = "detections.json";

fn io_err(path: &Path, e: impl std::fmt::Display) -> ClientError {
    ClientError::Io(format!("{}: {e}", path.display()))
}

struct Outputs {
    dir: PathBuf,
    detections: Vec<Detection>,
}

impl Outputs {
    fn write_detections(&self) -> Result<(), ClientError> {
        let path = self.dir.join(DETECTIONS_FILE);
        fs::write(&path, detections_to_json(&self.detections)).map_err(|e| io_err(&path, e))
    }
}

fn error_field(report: &str) -> Option<String> {
    let v: serde_json::Value = serde_json::from_str(report).ok()?;
    v.get("error")?.as_str().map(str::to_string)
}

/// Streams `dataset` to `addr` and writes returned images (`slice_NNNN.pgm`),
/// detections and the report into `output_dir`.
pub fn run_client(addr: &str, dataset: &Path, output_dir: &Path) -> Result<SessionSummary, ClientError> {
    let bytes = fs::read(dataset).map_err(|e| io_err(dataset, e))?;
    let messages = decode_stream(&bytes).map_err(|e| ClientError::Dataset(e.to_string()))?;
    if !matches!(messages.first(), Some(GadgetMessage::Config(_))) || messages.last() != Some(&GadgetMessage::Close) {
        return Err(ClientError::Dataset("dataset must start with config and end with close".into()));
    }
    fs::create_dir_all(output_dir).map_err(|e| io_err(output_dir, e))?;

    let stream = TcpStream::connect(addr).map_err(|source| {
        if source.kind() == io::ErrorKind::ConnectionRefused {
            ClientError::ConnectionRefused(addr.to_string())
        } else {
            ClientError::Connect {
                addr: addr.to_string(),
                source,
            }
        }
    })?;
    let write_half = stream.try_clone().map_err(|e| ClientError::Io(e.to_string()))?;
    let sender = thread::spawn(move || -> io::Result<usize> {
        let mut w = BufWriter::new(write_half);
        let mut sent = 0;
        for msg in &messages {
            write_message(&mut w, msg)?;
            sent += 1;
        }
        w.flush()?;
        Ok(sent)
    });

    let mut summary = SessionSummary::default();
    let mut out = Outputs {
        dir: output_dir.to_path_buf(),
        detections: Vec::new(),
    };
    let mut reader = BufReader::new(stream.try_clone().map_err(|e| ClientError::Io(e.to_string()))?);
    let result = receive(&mut reader, &mut out, &mut summary);
    out.write_detections()?;
    let _ = stream.shutdown(Shutdown::Both);
    // The sender only fails when the server stopped reading early; the
    // received outcome is what matters then.
    summary.sent = sender.join().ok().and_then(|r| r.ok()).unwrap_or(0);
    match result {
        Ok(()) => Ok(summary),
        Err(Received::Premature) => Err(ClientError::PrematureClose(summary)),
        Err(Received::Failed(e)) => Err(e),
    }
}

enum Received {
    Premature,
    Failed(ClientError),
}

fn receive(
    reader: &mut BufReader<TcpStream>,
    out: &mut Outputs,
    summary: &mut SessionSummary,
) -> Result<(), Received> {
    loop {
        let msg = match read_message(reader) {
            Ok(Some(m)) => m,
            Ok(None) => return Err(Received::Premature),
            Err(WireError::Io(e)) if e.kind() == io::ErrorKind::ConnectionReset => return Err(Received::Premature),
            Err(WireError::Incomplete { .. }) => return Err(Received::Premature),
            Err(e) => return Err(Received::Failed(ClientError::Protocol(e.to_string()))),
        };
        match msg {
            GadgetMessage::Close => return Ok(()),
            GadgetMessage::Image(img) => {
                let image = MagnitudeImage::new(
                    img.slice_index as u32,
                    img.rows as usize,
                    img.cols as usize,
                    img.pixels,
                )
                .map_err(|e| Received::Failed(ClientError::Protocol(e.to_string())))?;
                let path = out.dir.join(slice_file_name(image.slice_index));
                write_pgm(&path, &image).map_err(|e| Received::Failed(ClientError::Io(e.to_string())))?;
                summary.images += 1;
            }
            GadgetMessage::Annotations(ann) => {
                for b in ann.boxes {
                    let bbox = BoundingBox::new(b.x0 as f64, b.y0 as f64, b.x1 as f64, b.y1 as f64)
                        .map_err(|e| Received::Failed(ClientError::Protocol(e)))?;
                    let d = Detection::new(
                        ann.slice_index as u32,
                        bbox,
                        (b.confidence as f64).clamp(0.0, 1.0),
                        b.class_id,
                    )
                    .map_err(|e| Received::Failed(ClientError::Protocol(e)))?;
                    out.detections.push(d);
                }
                summary.annotations += 1;
            }
            GadgetMessage::Report(text) => {
                let path = out.dir.join(REPORT_FILE);
                fs::write(&path, &text).map_err(|e| Received::Failed(io_err(&path, e)))?;
                if let Some(err) = error_field(&text) {
                    summary.server_error = Some(err);
                }
                summary.reports += 1;
            }
            other => {
                return Err(Received::Failed(ClientError::Protocol(format!(
                    "unexpected {} message from server",
                    other.kind()
                ))))
            }
        }
    }
}
