//! Below the marshalling boundary: stream handlers that transform frame
//! bytes, and the transports that carry frames.

pub mod loopback;
pub mod segment;
pub mod tcp;
pub mod udp;

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::handler::CallContext;
use crate::message::{Address, Fault, Phase, TransportKind};

pub use loopback::{Injection, InjectionAction, LoopbackNet};
pub use segment::{segment, Fragment, Reassembler};

/// A channel object operating on opaque bytes. `send` runs in REQUEST and
/// RESPONSE, `receive` in INDICATION and CONFIRMATION, and must invert the
/// peer's `send`.
pub trait StreamHandler: Send + Sync {
    fn name(&self) -> &str;

    /// Name reported by the receiving half, when it differs.
    fn receive_name(&self) -> &str {
        self.name()
    }

    fn send(&self, data: Vec<u8>, cx: &CallContext) -> Result<Vec<u8>, Fault>;

    fn receive(&self, data: Vec<u8>, cx: &CallContext) -> Result<Vec<u8>, Fault>;
}

/// Ordered stream handlers: sending folds left to right, receiving applies
/// the inverses right to left.
#[derive(Clone, Default)]
pub struct StreamStack {
    entries: Vec<Arc<dyn StreamHandler>>,
}

impl StreamStack {
    pub fn new(entries: Vec<Arc<dyn StreamHandler>>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[Arc<dyn StreamHandler>] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn chain_send(&self, data: Vec<u8>, cx: &CallContext) -> Result<Vec<u8>, Fault> {
        self.entries.iter().try_fold(data, |d, h| h.send(d, cx))
    }

    pub fn chain_receive(&self, data: Vec<u8>, cx: &CallContext) -> Result<Vec<u8>, Fault> {
        self.entries.iter().rev().try_fold(data, |d, h| h.receive(d, cx))
    }
}

impl fmt::Debug for StreamStack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.entries.iter().map(|e| e.name())).finish()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("no listener at {0}")]
    Unreachable(String),
    #[error("timed out waiting for a reply")]
    Timeout,
    #[error("connection closed")]
    Closed,
    #[error("i/o: {0}")]
    Io(String),
    #[error("{0} transport cannot reach {1}")]
    WrongKind(&'static str, String),
}

impl TransportError {
    pub fn is_timeout(&self) -> bool {
        matches!(self, TransportError::Timeout)
    }

    pub fn into_fault(self, phase: Phase) -> Fault {
        Fault::transport(phase, self.to_string())
    }
}

impl From<std::io::Error> for TransportError {
    fn from(e: std::io::Error) -> Self {
        match e.kind() {
            std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut => TransportError::Timeout,
            std::io::ErrorKind::ConnectionRefused => TransportError::Unreachable(e.to_string()),
            std::io::ErrorKind::UnexpectedEof => TransportError::Closed,
            _ => TransportError::Io(e.to_string()),
        }
    }
}

/// One call's exchange with a listener.
pub trait Connection: Send {
    fn send(&mut self, frame: &[u8]) -> Result<(), TransportError>;

    fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>, TransportError>;

    /// Releases the connection once the exchange is over.
    fn close(self: Box<Self>);
}

/// Serves frames arriving at a listener; `None` sends nothing back.
pub trait FrameHandler: Send + Sync {
    fn handle(&self, frame: Vec<u8>) -> Option<Vec<u8>>;
}

impl<F> FrameHandler for F
where
    F: Fn(Vec<u8>) -> Option<Vec<u8>> + Send + Sync,
{
    fn handle(&self, frame: Vec<u8>) -> Option<Vec<u8>> {
        self(frame)
    }
}

/// A running listener; dropping it stops listening.
pub struct Listener {
    address: Address,
    stop: Option<Box<dyn FnOnce() + Send>>,
}

impl Listener {
    pub(crate) fn new(address: Address, stop: Box<dyn FnOnce() + Send>) -> Self {
        Self { address, stop: Some(stop) }
    }

    /// The address actually bound, with any ephemeral port filled in.
    pub fn address(&self) -> &Address {
        &self.address
    }

    pub fn stop(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        if let Some(stop) = self.stop.take() {
            stop();
        }
    }
}

impl Drop for Listener {
    fn drop(&mut self) {
        self.halt();
    }
}

impl fmt::Debug for Listener {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Listener").field("address", &self.address.to_string()).finish()
    }
}

/// The transports available to a process.
#[derive(Clone)]
pub struct Network {
    pub loopback: Arc<LoopbackNet>,
    pub udp_mtu: usize,
    pub connect_timeout: Duration,
}

impl Network {
    pub fn new() -> Self {
        Self::with_loopback(Arc::new(LoopbackNet::new()))
    }

    pub fn with_loopback(loopback: Arc<LoopbackNet>) -> Self {
        Self {
            loopback,
            udp_mtu: udp::DEFAULT_MTU,
            connect_timeout: Duration::from_secs(5),
        }
    }

    pub fn connect(&self, addr: &Address) -> Result<Box<dyn Connection>, TransportError> {
        match addr.kind {
            TransportKind::Loopback => self.loopback.connect(addr),
            TransportKind::Tcp => tcp::connect(addr, self.connect_timeout),
            TransportKind::Udp => udp::connect(addr, self.udp_mtu),
        }
    }

    pub fn listen(&self, addr: &Address, handler: Arc<dyn FrameHandler>) -> Result<Listener, TransportError> {
        match addr.kind {
            TransportKind::Loopback => self.loopback.listen(addr, handler),
            TransportKind::Tcp => tcp::listen(addr, handler),
            TransportKind::Udp => udp::listen(addr, handler, self.udp_mtu),
        }
    }
}

impl Default for Network {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Network {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Network").field("udp_mtu", &self.udp_mtu).finish()
    }
}
