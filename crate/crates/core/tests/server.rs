use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::net::TcpStream;
use std::path::Path;
use std::thread;

use ksp_core::dataset::{read_dataset_messages, write_dataset};
use ksp_core::detection::{ground_truth_to_json, EvaluationReport};
use ksp_core::model::SamplingMask;
use ksp_core::phantom::{simulate_volume, PhantomSet};
use ksp_core::pipeline::{
    build_chain, output_messages, run_chain, ChainConfig, DatasetHeader, DetectConfig, MaskSource, ReconConfig,
    ReconMethod, ReportConfig,
};
use ksp_core::recon::CgConfig;
use ksp_core::wire::{
    read_message, run_client, write_message, Acquisition, ClientError, GadgetMessage, Server, ServerHandle,
};
use num_complex::Complex32;
use tempfile::TempDir;

struct Fixture {
    dir: TempDir,
    cfg: ChainConfig,
}

impl Fixture {
    fn new() -> Self {
        let set = PhantomSet {
            size: 48,
            coils: 4,
            slices: 3,
            lesions: 2,
            ellipses: 2,
            ..PhantomSet::default()
        };
        let vol = simulate_volume(&set).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let slices: Vec<_> = vol.kspace.into_iter().map(|k| (k, SamplingMask::full(48))).collect();
        write_dataset(&slices, &dir.path().join("d.bin")).unwrap();
        let gt = dir.path().join("gt.json");
        fs::write(&gt, ground_truth_to_json(&vol.ground_truth)).unwrap();
        let cfg = ChainConfig::standard(
            ReconConfig {
                method: ReconMethod::CgSense,
                cg: CgConfig::default(),
                mask: MaskSource::Policy {
                    rate: 2.0,
                    acs_fraction: None,
                    seed: 5,
                },
                image_dir: None,
            },
            DetectConfig::blob(),
            ReportConfig {
                ground_truth: Some(gt.display().to_string()),
                ..Default::default()
            },
        );
        Self { dir, cfg }
    }

    fn dataset(&self) -> std::path::PathBuf {
        self.dir.path().join("d.bin")
    }

    fn spawn(&self) -> ServerHandle {
        Server::bind("127.0.0.1:0", self.cfg.clone()).unwrap().spawn().unwrap()
    }
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn session(addr: &str, messages: &[GadgetMessage]) -> Vec<GadgetMessage> {
    let stream = TcpStream::connect(addr).unwrap();
    let mut w = BufWriter::new(stream.try_clone().unwrap());
    for m in messages {
        write_message(&mut w, m).unwrap();
    }
    w.flush().unwrap();
    let mut r = BufReader::new(stream);
    let mut out = Vec::new();
    while let Some(m) = read_message(&mut r).unwrap() {
        let done = m == GadgetMessage::Close;
        out.push(m);
        if done {
            break;
        }
    }
    out
}

#[test]
fn network_session_matches_the_offline_chain() {
    let fx = Fixture::new();
    let server = fx.spawn();
    let out = fx.dir.path().join("out");
    let summary = run_client(&server.local_addr().to_string(), &fx.dataset(), &out).unwrap();
    assert_eq!((summary.images, summary.annotations, summary.reports), (3, 3, 1));
    assert_eq!(summary.server_error, None);

    let offline = output_messages(&run_chain(
        build_chain(&fx.cfg).unwrap(),
        read_dataset_messages(&fx.dataset()).unwrap(),
    ));
    let Some(GadgetMessage::Report(expected)) = offline.last() else {
        panic!("no offline report")
    };
    assert_eq!(&fs::read_to_string(out.join("report.json")).unwrap(), expected);
    assert!(out.join("slice_0002.pgm").exists());
    server.shutdown();
}

#[test]
fn concurrent_sessions_match_sequential_ones() {
    let fx = Fixture::new();
    let server = fx.spawn();
    let addr = server.local_addr().to_string();
    let run = |name: &str| {
        let out = fx.dir.path().join(name);
        run_client(&addr, &fx.dataset(), &out).unwrap();
        read_dir_sorted(&out)
    };
    let seq_a = run("seq_a");
    let seq_b = run("seq_b");
    let (con_a, con_b) = thread::scope(|s| {
        let a = s.spawn(|| run("con_a"));
        let b = s.spawn(|| run("con_b"));
        (a.join().unwrap(), b.join().unwrap())
    });
    assert_eq!(seq_a, seq_b);
    assert_eq!(seq_a, con_a);
    assert_eq!(seq_a, con_b);
}

#[test]
fn empty_session_gets_report_and_close() {
    let fx = Fixture::new();
    let server = fx.spawn();
    let header = DatasetHeader::new(3, 48, 48, 4).to_json();
    let out = session(
        &server.local_addr().to_string(),
        &[GadgetMessage::Config(header), GadgetMessage::Close],
    );
    assert_eq!(out.len(), 2, "{out:?}");
    let GadgetMessage::Report(text) = &out[0] else {
        panic!("expected report, got {:?}", out[0])
    };
    let report = EvaluationReport::from_json(text).unwrap_or_else(|e| panic!("{e}: {text}"));
    assert_eq!((report.tp, report.fp), (0, 0));
    assert_eq!(out[1], GadgetMessage::Close);
}

#[test]
fn protocol_violation_gets_error_report() {
    let fx = Fixture::new();
    let server = fx.spawn();
    let acq = GadgetMessage::Acquisition(Acquisition {
        scan_counter: 0,
        slice_index: 0,
        line_index: 0,
        num_coils: 1,
        flags: 0,
        num_samples: 1,
        data: vec![Complex32::new(0.0, 0.0)],
    });
    let out = session(&server.local_addr().to_string(), &[acq, GadgetMessage::Close]);
    let GadgetMessage::Report(text) = &out[0] else {
        panic!("expected report, got {out:?}")
    };
    let v: serde_json::Value = serde_json::from_str(text).unwrap();
    assert!(v["error"].as_str().unwrap().contains("acquisition"), "{text}");
    assert_eq!(out.last(), Some(&GadgetMessage::Close));
}

#[test]
fn unreachable_server_is_connection_refused() {
    let fx = Fixture::new();
    let addr = {
        let server = fx.spawn();
        let a = server.local_addr().to_string();
        server.shutdown();
        a
    };
    let err = run_client(&addr, &fx.dataset(), &fx.dir.path().join("x")).unwrap_err();
    assert!(matches!(err, ClientError::ConnectionRefused(_)), "{err:?}");
}
