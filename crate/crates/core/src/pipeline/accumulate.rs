//! Line-to-slice assembly of streamed acquisitions.

use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex32;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::model::{KSpaceSlice, SamplingMask};
use crate::wire::Acquisition;

pub const DATASET_FORMAT: &str = "ksp-dataset";
pub const DATASET_VERSION: u32 = 1;

/// Content of the Config message that opens a dataset stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DatasetHeader {
    pub format: &'static str,
    pub version: u32,
    pub num_slices: usize,
    pub num_pe: usize,
    pub num_ro: usize,
    pub num_coils: usize,
}

#[derive(Deserialize)]
struct RawHeader {
    format: String,
    version: u32,
    num_slices: usize,
    num_pe: usize,
    num_ro: usize,
    num_coils: usize,
}

impl DatasetHeader {
    pub fn new(num_slices: usize, num_pe: usize, num_ro: usize, num_coils: usize) -> Self {
        Self {
            format: DATASET_FORMAT,
            version: DATASET_VERSION,
            num_slices,
            num_pe,
            num_ro,
            num_coils,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("header always serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let raw: RawHeader =
            serde_json::from_str(text).map_err(|e| PipelineError::Protocol(format!("dataset config: {e}")))?;
        if raw.format != DATASET_FORMAT || raw.version != DATASET_VERSION {
            return Err(PipelineError::Protocol(format!(
                "dataset config declares {} v{}, expected {DATASET_FORMAT} v{DATASET_VERSION}",
                raw.format, raw.version
            )));
        }
        if raw.num_pe == 0 || raw.num_ro == 0 || raw.num_coils == 0 {
            return Err(PipelineError::Protocol("dataset config has a zero dimension".into()));
        }
        Ok(Self::new(raw.num_slices, raw.num_pe, raw.num_ro, raw.num_coils))
    }
}

struct Partial {
    num_coils: usize,
    num_ro: usize,
    /// line index → (coil-major samples, ACS flag)
    lines: BTreeMap<usize, (Vec<Complex32>, bool)>,
}

/// Groups acquisitions by slice and assembles each slice once its last line
/// arrives (or at [`SliceAssembler::finish`]).
pub struct SliceAssembler {
    header: DatasetHeader,
    pending: BTreeMap<u32, Partial>,
    done: BTreeSet<u32>,
}

impl SliceAssembler {
    pub fn new(header: DatasetHeader) -> Self {
        Self {
            header,
            pending: BTreeMap::new(),
            done: BTreeSet::new(),
        }
    }

    pub fn push(&mut self, acq: Acquisition) -> Result<Option<(KSpaceSlice, SamplingMask)>, PipelineError> {
        let slice = acq.slice_index as u32;
        let line = acq.line_index as usize;
        let fail = |message: String| PipelineError::Assembly { slice, line, message };
        if self.done.contains(&slice) {
            return Err(fail("slice already assembled".into()));
        }
        let (coils, ro) = (acq.num_coils as usize, acq.num_samples as usize);
        if coils != self.header.num_coils || ro != self.header.num_ro {
            return Err(fail(format!(
                "{coils} coils x {ro} samples, dataset declares {} x {}",
                self.header.num_coils, self.header.num_ro
            )));
        }
        if line >= self.header.num_pe {
            return Err(fail(format!("line outside 0..{}", self.header.num_pe)));
        }
        if acq.data.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(fail("non-finite sample".into()));
        }
        let last = acq.is_last_in_slice();
        let acs = acq.is_acs();
        let partial = self.pending.entry(slice).or_insert_with(|| Partial {
            num_coils: coils,
            num_ro: ro,
            lines: BTreeMap::new(),
        });
        if partial.num_coils != coils || partial.num_ro != ro {
            return Err(fail("dimensions differ from earlier lines of the slice".into()));
        }
        if partial.lines.insert(line, (acq.data, acs)).is_some() {
            return Err(fail("duplicate line".into()));
        }
        if last {
            let partial = self.pending.remove(&slice).expect("just inserted");
            self.done.insert(slice);
            return self.assemble(slice, partial).map(Some);
        }
        Ok(None)
    }

    /// Assembles every slice still waiting for its last line, in slice order.
    pub fn finish(mut self) -> Result<Vec<(KSpaceSlice, SamplingMask)>, PipelineError> {
        let pending = std::mem::take(&mut self.pending);
        pending
            .into_iter()
            .map(|(slice, partial)| self.assemble(slice, partial))
            .collect()
    }

    fn assemble(&self, slice: u32, partial: Partial) -> Result<(KSpaceSlice, SamplingMask), PipelineError> {
        let num_pe = self.header.num_pe;
        let (coils, ro) = (partial.num_coils, partial.num_ro);
        let mut data = vec![Complex32::new(0.0, 0.0); coils * num_pe * ro];
        let acs: Vec<usize> = partial.lines.iter().filter(|(_, (_, a))| *a).map(|(&l, _)| l).collect();
        for (&line, (samples, _)) in &partial.lines {
            for c in 0..coils {
                let dst = (c * num_pe + line) * ro;
                data[dst..dst + ro].copy_from_slice(&samples[c * ro..(c + 1) * ro]);
            }
        }
        let acs_range = match (acs.first(), acs.last()) {
            (Some(&lo), Some(&hi)) => {
                if hi - lo + 1 != acs.len() {
                    return Err(PipelineError::Assembly {
                        slice,
                        line: lo,
                        message: "ACS lines are not contiguous".into(),
                    });
                }
                Some((lo, hi))
            }
            _ => None,
        };
        let mask = SamplingMask::from_lines(num_pe, partial.lines.keys().copied(), acs_range)?;
        let kspace = KSpaceSlice::new(slice, coils, num_pe, ro, data)?;
        Ok((kspace, mask))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::{FLAG_ACS, FLAG_LAST_IN_SLICE};

    fn acq(slice: u16, line: u16, flags: u16) -> Acquisition {
        Acquisition {
            scan_counter: 0,
            slice_index: slice,
            line_index: line,
            num_coils: 2,
            flags,
            num_samples: 3,
            data: (0..6).map(|k| Complex32::new(line as f32, k as f32)).collect(),
        }
    }

    fn assembler() -> SliceAssembler {
        SliceAssembler::new(DatasetHeader::new(1, 8, 3, 2))
    }

    #[test]
    fn full_slice() {
        let mut a = assembler();
        for l in 0..7 {
            assert!(a.push(acq(0, l, FLAG_ACS)).unwrap().is_none());
        }
        let (k, m) = a.push(acq(0, 7, FLAG_ACS | FLAG_LAST_IN_SLICE)).unwrap().unwrap();
        assert!(m.is_full());
        assert_eq!(m.acs_range(), Some((0, 7)));
        assert_eq!(k.line(1, 5), &[Complex32::new(5.0, 3.0), Complex32::new(5.0, 4.0), Complex32::new(5.0, 5.0)]);
    }

    #[test]
    fn partial_lines_leave_zeros() {
        let mut a = assembler();
        for l in [0, 2, 4, 6] {
            let flags = if l == 4 { FLAG_ACS } else { 0 };
            a.push(acq(0, l, flags)).unwrap();
        }
        let mut done = a.finish().unwrap();
        let (k, m) = done.pop().unwrap();
        assert_eq!(m.to_bit_string(), "10101010");
        assert_eq!(m.acs_range(), Some((4, 4)));
        assert!(k.line(0, 3).iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn duplicate_line_names_slice_and_line() {
        let mut a = assembler();
        a.push(acq(0, 3, 0)).unwrap();
        let err = a.push(acq(0, 3, 0)).unwrap_err();
        assert!(matches!(err, PipelineError::Assembly { slice: 0, line: 3, .. }));
        assert!(err.to_string().contains("slice 0") && err.to_string().contains("line 3"));
    }

    #[test]
    fn inconsistent_dimensions() {
        let mut a = assembler();
        let mut bad = acq(0, 1, 0);
        bad.num_samples = 2;
        bad.data.truncate(4);
        assert!(matches!(a.push(bad), Err(PipelineError::Assembly { .. })));
        assert!(a.push(acq(0, 8, 0)).is_err());
    }

    #[test]
    fn gap_in_acs_rejected() {
        let mut a = assembler();
        a.push(acq(0, 2, FLAG_ACS)).unwrap();
        a.push(acq(0, 4, FLAG_ACS)).unwrap();
        assert!(a.push(acq(0, 3, FLAG_LAST_IN_SLICE)).is_err());
    }

    #[test]
    fn header_round_trip() {
        let h = DatasetHeader::new(3, 64, 32, 4);
        assert_eq!(DatasetHeader::from_json(&h.to_json()).unwrap(), h);
        assert!(DatasetHeader::from_json(r#"{"format":"other","version":1,"num_slices":1,"num_pe":1,"num_ro":1,"num_coils":1}"#).is_err());
    }
}
