use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::thread::{self, JoinHandle};

use super::config::{ChainConfig, GadgetConfig};
use super::gadgets::{AccumulateGadget, DetectGadget, ReconGadget, ReportGadget, RunSummary};
use super::PipelineError;
use crate::detection::{Detection, MetricsDocument};
use crate::model::{KSpaceSlice, MagnitudeImage, SamplingMask};
use crate::recon::CgTrace;
use crate::wire::{AnnotationsMessage, GadgetMessage, ImageMessage, WireBox, PIXEL_F32_MAGNITUDE};

/// A reconstructed slice travelling from recon to report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconImage {
    pub image: MagnitudeImage,
    /// Zero-fill of the fully sampled input, when the input was fully sampled.
    pub reference: Option<MagnitudeImage>,
    pub mask: SamplingMask,
    pub trace: Option<CgTrace>,
}

/// Unit of work between stages. Only the wire-representable variants leave a
/// chain over the network; the rest are visible to in-process callers.
#[derive(Debug, Clone, PartialEq)]
pub enum Item {
    Message(GadgetMessage),
    Slice { kspace: KSpaceSlice, mask: SamplingMask },
    Image(ReconImage),
    Detections { slice_index: u32, detections: Vec<Detection> },
    Metrics(MetricsDocument),
    /// A stage failed; downstream stages stop and the chain ends with an error report.
    Failure(String),
}

pub(crate) fn error_report(message: &str) -> String {
    serde_json::json!({ "error": message }).to_string()
}

impl Item {
    pub fn to_message(&self) -> Option<GadgetMessage> {
        match self {
            Item::Message(m) => Some(m.clone()),
            Item::Image(r) => Some(GadgetMessage::Image(ImageMessage {
                slice_index: r.image.slice_index as u16,
                rows: r.image.rows() as u16,
                cols: r.image.cols() as u16,
                pixel_type: PIXEL_F32_MAGNITUDE,
                pixels: r.image.pixels().to_vec(),
            })),
            Item::Detections {
                slice_index,
                detections,
            } => Some(GadgetMessage::Annotations(AnnotationsMessage {
                slice_index: *slice_index as u16,
                boxes: detections
                    .iter()
                    .map(|d| WireBox {
                        x0: d.bbox.x0 as f32,
                        y0: d.bbox.y0 as f32,
                        x1: d.bbox.x1 as f32,
                        y1: d.bbox.y1 as f32,
                        confidence: d.confidence as f32,
                        class_id: d.class_id,
                    })
                    .collect(),
            })),
            Item::Failure(msg) => Some(GadgetMessage::Report(error_report(msg))),
            Item::Slice { .. } | Item::Metrics(_) => None,
        }
    }
}

/// One processing stage. `process` sees items in arrival order; `flush` runs
/// once at end of stream. Emitted items go into `out` in order.
pub trait Gadget: Send {
    fn name(&self) -> &'static str;
    fn process(&mut self, item: Item, out: &mut Vec<Item>) -> Result<(), PipelineError>;
    fn flush(&mut self, out: &mut Vec<Item>) -> Result<(), PipelineError>;
}

pub struct Chain {
    gadgets: Vec<Box<dyn Gadget>>,
    capacity: usize,
}

/// Validates the configuration and instantiates its gadgets in order.
pub fn build_chain(cfg: &ChainConfig) -> Result<Chain, PipelineError> {
    cfg.validate()?;
    let summary = RunSummary::from_config(cfg);
    let mut gadgets: Vec<Box<dyn Gadget>> = Vec::with_capacity(cfg.gadgets.len());
    for g in &cfg.gadgets {
        gadgets.push(match g {
            GadgetConfig::Accumulate(_) => Box::new(AccumulateGadget::new()),
            GadgetConfig::Recon(r) => Box::new(ReconGadget::new(r.clone())),
            GadgetConfig::Detect(d) => Box::new(DetectGadget::new(d.clone())?),
            GadgetConfig::Report(r) => Box::new(ReportGadget::new(r.clone(), summary.clone())?),
        });
    }
    Ok(Chain {
        gadgets,
        capacity: cfg.queue_capacity,
    })
}

fn run_stage(mut gadget: Box<dyn Gadget>, rx: Receiver<Item>, tx: SyncSender<Item>) {
    let mut out = Vec::new();
    let drain = |out: &mut Vec<Item>| out.drain(..).all(|item| tx.send(item).is_ok());
    for item in rx.iter() {
        if let Item::Failure(_) = item {
            let _ = tx.send(item);
            return;
        }
        let result = gadget.process(item, &mut out);
        let delivered = drain(&mut out);
        if let Err(e) = result {
            let _ = tx.send(Item::Failure(format!("{}: {e}", gadget.name())));
            return;
        }
        if !delivered {
            return;
        }
    }
    let result = gadget.flush(&mut out);
    drain(&mut out);
    if let Err(e) = result {
        let _ = tx.send(Item::Failure(format!("{}: {e}", gadget.name())));
    }
}

impl Chain {
    pub fn len(&self) -> usize {
        self.gadgets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gadgets.is_empty()
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.gadgets.iter().map(|g| g.name()).collect()
    }

    /// Spawns one thread per gadget. Dropping the returned input ends the stream.
    pub fn start(self) -> (ChainInput, ChainOutput) {
        let (input_tx, mut rx) = sync_channel(self.capacity);
        let mut handles = Vec::with_capacity(self.gadgets.len());
        for gadget in self.gadgets {
            let (tx, next_rx) = sync_channel(self.capacity);
            let name = gadget.name();
            let stage_rx = std::mem::replace(&mut rx, next_rx);
            let handle = thread::Builder::new()
                .name(format!("gadget-{name}"))
                .spawn(move || run_stage(gadget, stage_rx, tx))
                .expect("spawn gadget thread");
            handles.push(handle);
        }
        (
            ChainInput { tx: input_tx },
            ChainOutput {
                rx,
                handles,
                reported: false,
                finished: false,
            },
        )
    }
}

pub struct ChainInput {
    tx: SyncSender<Item>,
}

impl ChainInput {
    /// Blocks while the first queue is full. Fails once the chain has stopped.
    pub fn send(&self, msg: GadgetMessage) -> Result<(), PipelineError> {
        self.tx.send(Item::Message(msg)).map_err(|_| PipelineError::Closed)
    }

    /// Aborts the stream: the chain ends with an error report carrying `message`.
    pub fn fail(self, message: String) {
        let _ = self.tx.send(Item::Failure(message));
    }
}

/// Items leaving the last stage, in emission order.
pub struct ChainOutput {
    rx: Receiver<Item>,
    handles: Vec<JoinHandle<()>>,
    reported: bool,
    finished: bool,
}

impl Iterator for ChainOutput {
    type Item = Item;

    fn next(&mut self) -> Option<Item> {
        if self.finished {
            return None;
        }
        match self.rx.recv() {
            Ok(item) => {
                if matches!(item, Item::Failure(_) | Item::Message(GadgetMessage::Report(_))) {
                    self.reported = true;
                }
                Some(item)
            }
            Err(_) => {
                self.finished = true;
                let panicked = self.handles.drain(..).map(|h| h.join().is_err()).fold(false, |a, b| a | b);
                if panicked && !self.reported {
                    return Some(Item::Failure("a gadget thread panicked".into()));
                }
                None
            }
        }
    }
}

/// Feeds `input` up to its Close message and collects every output item.
pub fn run_chain<I>(chain: Chain, input: I) -> Vec<Item>
where
    I: IntoIterator<Item = GadgetMessage>,
    I::IntoIter: Send,
{
    let (tx, output) = chain.start();
    let input = input.into_iter();
    thread::scope(|s| {
        s.spawn(move || {
            for msg in input {
                if msg == GadgetMessage::Close || tx.send(msg).is_err() {
                    break;
                }
            }
        });
        output.collect()
    })
}

/// The wire-visible part of a chain's output.
pub fn output_messages(items: &[Item]) -> Vec<GadgetMessage> {
    items.iter().filter_map(Item::to_message).collect()
}
