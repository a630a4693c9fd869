//! Dataset files: the exact wire stream (Config, Acquisitions, Close) a client replays.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::model::{KSpaceSlice, SamplingMask};
use crate::pipeline::{DatasetHeader, PipelineError, SliceAssembler};
use crate::wire::{decode_stream, encode_message, Acquisition, GadgetMessage, WireError, FLAG_ACS, FLAG_LAST_IN_SLICE};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset is empty")]
    Empty,
    #[error("slice {0} does not match the first slice's shape or its mask")]
    Shape(u32),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// Messages for `slices`: one Acquisition per acquired line, in slice then line
/// order, with ACS and last-line flags taken from each mask.
pub fn dataset_messages(slices: &[(KSpaceSlice, SamplingMask)]) -> Result<Vec<GadgetMessage>, DatasetError> {
    let (first, _) = slices.first().ok_or(DatasetError::Empty)?;
    let (coils, pe, ro) = (first.num_coils(), first.num_pe(), first.num_ro());
    let header = DatasetHeader::new(slices.len(), pe, ro, coils);
    let mut out = vec![GadgetMessage::Config(header.to_json())];
    let mut scan_counter = 0u32;
    for (k, mask) in slices {
        if k.num_coils() != coils || k.num_pe() != pe || k.num_ro() != ro || mask.num_pe() != pe {
            return Err(DatasetError::Shape(k.slice_index()));
        }
        let lines: Vec<usize> = mask.acquired_lines().collect();
        for (n, &line) in lines.iter().enumerate() {
            let mut flags = 0;
            if mask.is_acs(line) {
                flags |= FLAG_ACS;
            }
            if n + 1 == lines.len() {
                flags |= FLAG_LAST_IN_SLICE;
            }
            let data = (0..coils).flat_map(|c| k.line(c, line).iter().copied()).collect();
            out.push(GadgetMessage::Acquisition(Acquisition {
                scan_counter,
                slice_index: k.slice_index() as u16,
                line_index: line as u16,
                num_coils: coils as u16,
                flags,
                num_samples: ro as u32,
                data,
            }));
            scan_counter = scan_counter.wrapping_add(1);
        }
    }
    out.push(GadgetMessage::Close);
    Ok(out)
}

pub fn encode_dataset(slices: &[(KSpaceSlice, SamplingMask)]) -> Result<Vec<u8>, DatasetError> {
    Ok(dataset_messages(slices)?.iter().flat_map(encode_message).collect())
}

pub fn write_dataset(slices: &[(KSpaceSlice, SamplingMask)], path: &Path) -> Result<(), DatasetError> {
    let bytes = encode_dataset(slices)?;
    fs::write(path, bytes).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Assembles the slices of a dataset stream, ordered by completion.
pub fn assemble_messages(messages: Vec<GadgetMessage>) -> Result<Vec<(KSpaceSlice, SamplingMask)>, DatasetError> {
    let mut messages = messages.into_iter();
    let header = match messages.next() {
        Some(GadgetMessage::Config(text)) => DatasetHeader::from_json(&text)?,
        _ => return Err(PipelineError::Protocol("dataset does not start with a config message".into()).into()),
    };
    let mut assembler = SliceAssembler::new(header);
    let mut out = Vec::new();
    for msg in messages {
        match msg {
            GadgetMessage::Acquisition(a) => out.extend(assembler.push(a)?),
            GadgetMessage::Close => break,
            other => {
                return Err(
                    PipelineError::Protocol(format!("unexpected {} message in dataset", other.kind())).into(),
                )
            }
        }
    }
    out.extend(assembler.finish()?);
    Ok(out)
}

/// Raw messages of a dataset file.
pub fn read_dataset_messages(path: &Path) -> Result<Vec<GadgetMessage>, DatasetError> {
    let bytes = fs::read(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(decode_stream(&bytes)?)
}

pub fn read_dataset(path: &Path) -> Result<Vec<(KSpaceSlice, SamplingMask)>, DatasetError> {
    assemble_messages(read_dataset_messages(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex32;

    fn slice(index: u32, pe: usize) -> KSpaceSlice {
        let data = (0..2 * pe * 3).map(|k| Complex32::new(k as f32, -(k as f32) * 0.5 + index as f32)).collect();
        KSpaceSlice::new(index, 2, pe, 3, data).unwrap()
    }

    #[test]
    fn counts_messages() {
        let msgs = dataset_messages(&[(slice(0, 8), SamplingMask::full(8))]).unwrap();
        assert_eq!(msgs.len(), 10);
        assert!(matches!(msgs[0], GadgetMessage::Config(_)));
        assert_eq!(msgs[9], GadgetMessage::Close);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mask = SamplingMask::from_lines(8, [1, 3, 4, 5, 7], Some((3, 5))).unwrap();
        let input = vec![(slice(0, 8), SamplingMask::full(8)), (crate::sampling::apply_mask(&slice(1, 8), &mask).unwrap(), mask)];
        let bytes = encode_dataset(&input).unwrap();
        let back = assemble_messages(decode_stream(&bytes).unwrap()).unwrap();
        assert_eq!(back.len(), 2);
        for ((k0, m0), (k1, m1)) in input.iter().zip(&back) {
            assert_eq!(k0, k1);
            assert_eq!(m0.acquired(), m1.acquired());
            assert_eq!(m0.acs_range(), m1.acs_range());
        }
    }

    #[test]
    fn acs_flags_follow_mask() {
        let mask = SamplingMask::from_lines(8, [0, 3, 4, 6], Some((3, 4))).unwrap();
        let msgs = dataset_messages(&[(slice(0, 8), mask)]).unwrap();
        let flags: Vec<(u16, u16)> = msgs
            .iter()
            .filter_map(|m| match m {
                GadgetMessage::Acquisition(a) => Some((a.line_index, a.flags)),
                _ => None,
            })
            .collect();
        assert_eq!(flags, vec![(0, 0), (3, FLAG_ACS), (4, FLAG_ACS), (6, FLAG_LAST_IN_SLICE)]);
    }

    #[test]
    fn empty_is_rejected() {
        assert!(matches!(dataset_messages(&[]), Err(DatasetError::Empty)));
    }
}
