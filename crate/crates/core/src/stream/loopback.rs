//! In-process transport with a frame log and fault-injection hooks.
//!
//! Listeners are keyed by the `host:port` label of their address. Each
//! listener drains its queue on a dedicated thread, so frames for one
//! listener are served in arrival order.

use std::collections::HashMap;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use super::{Connection, FrameHandler, Listener, TransportError};
use crate::message::{Address, TransportKind};

/// How long `close` waits for the listener to finish with a frame.
const DRAIN_WAIT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InjectionAction {
    Drop,
    /// Inverts every bit of byte `k` (the last byte if the frame is shorter).
    Corrupt { byte: usize },
    Delay { ms: u64 },
    ConnectFail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameDirection {
    Request,
    Reply,
}

/// Fires `action` on the `nth` matching event after installation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Injection {
    pub action: InjectionAction,
    pub nth: u64,
    /// Restricts frame actions to one direction; `None` matches both.
    pub direction: Option<FrameDirection>,
    /// Restricts the rule to one listener label; `None` matches all.
    pub endpoint: Option<String>,
}

impl Injection {
    pub fn new(action: InjectionAction, nth: u64) -> Self {
        Self { action, nth: nth.max(1), direction: None, endpoint: None }
    }

    pub fn on(mut self, direction: FrameDirection) -> Self {
        self.direction = Some(direction);
        self
    }

    pub fn at(mut self, endpoint: impl Into<String>) -> Self {
        self.endpoint = Some(endpoint.into());
        self
    }
}

struct Rule {
    injection: Injection,
    seen: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoggedFrame {
    pub endpoint: String,
    pub direction: FrameDirection,
    pub bytes: Vec<u8>,
    pub dropped: bool,
}

struct Job {
    frame: Vec<u8>,
    reply: Sender<Option<Vec<u8>>>,
}

struct Entry {
    id: u64,
    queue: Sender<Job>,
}

#[derive(Default)]
struct Inner {
    listeners: HashMap<String, Entry>,
    rules: Vec<Rule>,
    log: Vec<LoggedFrame>,
    next_id: u64,
}

#[derive(Default)]
struct Effects {
    drop: bool,
    corrupt: Option<usize>,
    delay_ms: u64,
}

#[derive(Default)]
pub struct LoopbackNet {
    inner: Mutex<Inner>,
}

fn label(addr: &Address) -> String {
    addr.endpoint()
}

impl LoopbackNet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn inject(&self, injection: Injection) {
        self.inner.lock().unwrap().rules.push(Rule { injection, seen: 0 });
    }

    pub fn clear_injections(&self) {
        self.inner.lock().unwrap().rules.clear();
    }

    pub fn frames(&self) -> Vec<LoggedFrame> {
        self.inner.lock().unwrap().log.clone()
    }

    pub fn frame_count(&self) -> usize {
        self.inner.lock().unwrap().log.len()
    }

    pub fn clear_log(&self) {
        self.inner.lock().unwrap().log.clear();
    }

    pub fn is_listening(&self, endpoint: &str) -> bool {
        self.inner.lock().unwrap().listeners.contains_key(endpoint)
    }

    /// Counts `event` against the rules and returns what fired.
    fn fire(inner: &mut Inner, endpoint: &str, direction: Option<FrameDirection>, connect: bool) -> Effects {
        let mut fx = Effects::default();
        let mut connect_fail = false;
        inner.rules.retain_mut(|r| {
            let inj = &r.injection;
            let is_connect = inj.action == InjectionAction::ConnectFail;
            if is_connect != connect {
                return true;
            }
            if inj.endpoint.as_deref().is_some_and(|e| e != endpoint) {
                return true;
            }
            if !connect && inj.direction.is_some() && inj.direction != direction {
                return true;
            }
            r.seen += 1;
            if r.seen < inj.nth {
                return true;
            }
            match inj.action {
                InjectionAction::Drop => fx.drop = true,
                InjectionAction::Corrupt { byte } => fx.corrupt = Some(byte),
                InjectionAction::Delay { ms } => fx.delay_ms += ms,
                InjectionAction::ConnectFail => connect_fail = true,
            }
            false
        });
        fx.drop |= connect_fail;
        fx
    }

    /// Applies frame rules, logs the frame, and returns it unless dropped.
    fn transmit(&self, endpoint: &str, direction: FrameDirection, mut frame: Vec<u8>) -> Option<Vec<u8>> {
        let fx = {
            let mut inner = self.inner.lock().unwrap();
            let fx = Self::fire(&mut inner, endpoint, Some(direction), false);
            if let Some(k) = fx.corrupt {
                if !frame.is_empty() {
                    let i = k.min(frame.len() - 1);
                    frame[i] ^= 0xFF;
                }
            }
            inner.log.push(LoggedFrame {
                endpoint: endpoint.to_string(),
                direction,
                bytes: frame.clone(),
                dropped: fx.drop,
            });
            fx
        };
        if fx.delay_ms > 0 {
            thread::sleep(Duration::from_millis(fx.delay_ms));
        }
        (!fx.drop).then_some(frame)
    }

    pub fn listen(self: &Arc<Self>, addr: &Address, handler: Arc<dyn FrameHandler>) -> Result<Listener, TransportError> {
        if addr.kind != TransportKind::Loopback {
            return Err(TransportError::WrongKind("loopback", addr.to_string()));
        }
        let endpoint = label(addr);
        let (tx, rx) = mpsc::channel::<Job>();
        let id = {
            let mut inner = self.inner.lock().unwrap();
            if inner.listeners.contains_key(&endpoint) {
                return Err(TransportError::Io(format!("{endpoint} already has a listener")));
            }
            inner.next_id += 1;
            let id = inner.next_id;
            inner.listeners.insert(endpoint.clone(), Entry { id, queue: tx });
            id
        };
        let net = Arc::clone(self);
        let ep = endpoint.clone();
        thread::Builder::new()
            .name(format!("loopback {endpoint}"))
            .spawn(move || {
                for job in rx {
                    let reply = handler.handle(job.frame).and_then(|r| net.transmit(&ep, FrameDirection::Reply, r));
                    let _ = job.reply.send(reply);
                }
            })
            .map_err(TransportError::from)?;
        let net = Arc::clone(self);
        Ok(Listener::new(
            addr.clone(),
            Box::new(move || {
                let mut inner = net.inner.lock().unwrap();
                if inner.listeners.get(&endpoint).is_some_and(|e| e.id == id) {
                    inner.listeners.remove(&endpoint);
                }
            }),
        ))
    }

    pub fn connect(self: &Arc<Self>, addr: &Address) -> Result<Box<dyn Connection>, TransportError> {
        let endpoint = label(addr);
        let mut inner = self.inner.lock().unwrap();
        if Self::fire(&mut inner, &endpoint, None, true).drop {
            return Err(TransportError::Unreachable(format!("{endpoint} (injected connect failure)")));
        }
        if !inner.listeners.contains_key(&endpoint) {
            return Err(TransportError::Unreachable(endpoint));
        }
        Ok(Box::new(LoopConn { net: Arc::clone(self), endpoint, pending: None }))
    }

    /// Sends `frame` to `addr` outside any channel, as an attacker replaying
    /// a captured frame would. Returns the reply, if one came back.
    pub fn send_raw(self: &Arc<Self>, addr: &Address, frame: &[u8], timeout: Duration) -> Result<Option<Vec<u8>>, TransportError> {
        let mut conn = self.connect(addr)?;
        conn.send(frame)?;
        let reply = match conn.recv(timeout) {
            Ok(r) => Some(r),
            Err(TransportError::Timeout) => None,
            Err(e) => return Err(e),
        };
        conn.close();
        Ok(reply)
    }
}

struct LoopConn {
    net: Arc<LoopbackNet>,
    endpoint: String,
    pending: Option<Receiver<Option<Vec<u8>>>>,
}

impl Connection for LoopConn {
    fn send(&mut self, frame: &[u8]) -> Result<(), TransportError> {
        let Some(frame) = self.net.transmit(&self.endpoint, FrameDirection::Request, frame.to_vec()) else {
            self.pending = None;
            return Ok(());
        };
        let queue = {
            let inner = self.net.inner.lock().unwrap();
            match inner.listeners.get(&self.endpoint) {
                Some(e) => e.queue.clone(),
                None => return Err(TransportError::Unreachable(self.endpoint.clone())),
            }
        };
        let (tx, rx) = mpsc::channel();
        queue.send(Job { frame, reply: tx }).map_err(|_| TransportError::Closed)?;
        self.pending = Some(rx);
        Ok(())
    }

    /// A frame lost in this network can never be answered, so the wait
    /// ends at once instead of running out the clock.
    fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>, TransportError> {
        let Some(rx) = self.pending.take() else {
            return Err(TransportError::Timeout);
        };
        match rx.recv_timeout(timeout) {
            Ok(Some(b)) => Ok(b),
            Ok(None) | Err(RecvTimeoutError::Timeout) => Err(TransportError::Timeout),
            Err(RecvTimeoutError::Disconnected) => Err(TransportError::Closed),
        }
    }

    fn close(self: Box<Self>) {
        if let Some(rx) = self.pending {
            let _ = rx.recv_timeout(DRAIN_WAIT);
        }
    }
}
