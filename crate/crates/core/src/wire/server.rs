//! TCP server: one freshly built gadget chain per connection.

use std::io::{self, BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use super::codec::{read_message, write_message, GadgetMessage};
use crate::pipeline::{build_chain, ChainConfig, ChainInput};

pub const DEFAULT_PORT: u16 = 9002;

fn error_report(message: &str) -> GadgetMessage {
    GadgetMessage::Report(crate::pipeline::error_report(message))
}

/// Reads client messages into the chain. Any protocol violation is injected
/// as a chain failure; afterwards the socket is drained so the client can
/// finish writing and read the error report.
fn pump_input(stream: TcpStream, input: ChainInput) {
    let mut reader = BufReader::new(stream);
    let mut input = Some(input);
    let mut first = true;
    let fail = |input: &mut Option<ChainInput>, message: String| {
        if let Some(i) = input.take() {
            i.fail(message);
        }
    };
    loop {
        match read_message(&mut reader) {
            Ok(Some(GadgetMessage::Close)) if !first => break,
            Ok(Some(msg)) => {
                let kind = msg.kind();
                let allowed = if first {
                    matches!(msg, GadgetMessage::Config(_))
                } else {
                    matches!(msg, GadgetMessage::Acquisition(_))
                };
                first = false;
                if !allowed {
                    fail(&mut input, format!("protocol error: unexpected {kind} message from client"));
                    continue;
                }
                if let Some(i) = &input {
                    if i.send(msg).is_err() {
                        input = None;
                    }
                }
            }
            Ok(None) => {
                fail(&mut input, "protocol error: connection closed before close message".into());
                break;
            }
            Err(e) => {
                fail(&mut input, e.to_string());
                break;
            }
        }
    }
}

/// Serves one connection to completion: Config, Acquisitions and Close in;
/// chain output followed by Close out.
pub fn serve_session(stream: TcpStream, config: &ChainConfig) -> io::Result<()> {
    let peer = stream.peer_addr().ok();
    let mut writer = BufWriter::new(stream.try_clone()?);
    let chain = match build_chain(config) {
        Ok(c) => c,
        Err(e) => {
            log::error!("session {peer:?}: {e}");
            write_message(&mut writer, &error_report(&e.to_string()))?;
            write_message(&mut writer, &GadgetMessage::Close)?;
            writer.flush()?;
            drop(writer);
            stream.shutdown(Shutdown::Write)?;
            // Drain so the client is not reset mid-write.
            pump_input_discard(stream);
            return Ok(());
        }
    };
    let (input, output) = chain.start();
    let reader_stream = stream.try_clone()?;
    let reader = thread::spawn(move || pump_input(reader_stream, input));
    let mut sent = 0usize;
    for item in output {
        if let Some(msg) = item.to_message() {
            write_message(&mut writer, &msg)?;
            writer.flush()?;
            sent += 1;
        }
    }
    write_message(&mut writer, &GadgetMessage::Close)?;
    writer.flush()?;
    drop(writer);
    let _ = stream.shutdown(Shutdown::Write);
    let _ = reader.join();
    log::info!("session {peer:?}: {sent} messages returned");
    Ok(())
}

fn pump_input_discard(stream: TcpStream) {
    let mut reader = BufReader::new(stream);
    while let Ok(Some(msg)) = read_message(&mut reader) {
        if msg == GadgetMessage::Close {
            break;
        }
    }
}

pub struct Server {
    listener: TcpListener,
    config: Arc<ChainConfig>,
    stop: Arc<AtomicBool>,
}

/// Handle to a server running on a background thread.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<io::Result<()>>>,
}

impl Server {
    /// Validates the chain configuration, then binds.
    pub fn bind(addr: impl ToSocketAddrs, config: ChainConfig) -> io::Result<Self> {
        config
            .validate()
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            config: Arc::new(config),
            stop: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts connections until stopped, each served on its own thread.
    pub fn serve(self) -> io::Result<()> {
        for conn in self.listener.incoming() {
            if self.stop.load(Ordering::SeqCst) {
                break;
            }
            let stream = match conn {
                Ok(s) => s,
                Err(e) => {
                    log::error!("accept failed: {e}");
                    continue;
                }
            };
            let config = Arc::clone(&self.config);
            thread::spawn(move || {
                if let Err(e) = serve_session(stream, &config) {
                    log::error!("session ended with i/o error: {e}");
                }
            });
        }
        Ok(())
    }

    pub fn spawn(self) -> io::Result<ServerHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::clone(&self.stop);
        let thread = thread::Builder::new().name("ksp-server".into()).spawn(move || self.serve())?;
        Ok(ServerHandle {
            addr,
            stop,
            thread: Some(thread),
        })
    }
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting; sessions already running finish on their own.
    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    fn stop_accepting(&mut self) {
        if let Some(t) = self.thread.take() {
            self.stop.store(true, Ordering::SeqCst);
            let _ = TcpStream::connect(self.addr);
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_accepting();
    }
}

/// Serves on `0.0.0.0:port` until the process ends.
pub fn run_server(port: u16, config: ChainConfig) -> io::Result<()> {
    let server = Server::bind(("0.0.0.0", port), config)?;
    log::info!("listening on {}", server.local_addr()?);
    server.serve()
}
