//! The channel engine: builds per-phase chains from handler sets, drives
//! calls through them and repairs faults.

pub mod acceptor;
pub mod config;
pub mod dispatch;
pub mod initiator;
pub mod recovery;
pub mod trace;

use std::fmt;
use std::sync::Arc;

use crate::handler::{CallContext, Handler, HandlerOutcome, HandlerSet};
use crate::message::{Fault, Message, Phase};
use crate::stream::StreamStack;

pub use acceptor::Acceptor;
pub use config::{EngineConfig, RecoveryScheme};
pub use dispatch::{Dispatcher, Service, ServiceTable};
pub use initiator::{Initiator, StackBuilder};
pub use recovery::{recover, run_send, Recovery, SendFailure, Tracer};
pub use trace::{Trace, TraceEvent};

/// Method of the innermost response message carrying a result.
pub const REPLY_METHOD: &str = "$reply";
/// Method of the innermost response message carrying a fault.
pub const FAULT_METHOD: &str = "$fault";
pub const ENGINE: &str = "engine";
/// Handler column for channel entry events.
pub const CHANNEL: &str = "channel";
/// Handler column for frames crossing the transport.
pub const WIRE: &str = "wire";

/// Call handler sets in template order, above the stream handlers.
#[derive(Clone, Default)]
pub struct Stacks {
    pub calls: Vec<HandlerSet>,
    pub stream: StreamStack,
}

impl Stacks {
    pub fn new(calls: Vec<HandlerSet>, stream: StreamStack) -> Self {
        Self { calls, stream }
    }

    /// Handlers deployed at `phase`, in traversal order: template order
    /// when sending, reversed when receiving.
    pub fn chain(&self, phase: Phase) -> Vec<Arc<dyn Handler>> {
        let mut chain: Vec<_> = self.calls.iter().filter_map(|s| s.get_handler(phase)).collect();
        if !phase.is_send() {
            chain.reverse();
        }
        chain
    }

    /// Sets with a handler at `phase`, in the same order as [`Stacks::chain`].
    fn sets_at(&self, phase: Phase) -> Vec<&HandlerSet> {
        let mut sets: Vec<_> = self.calls.iter().filter(|s| s.get_handler(phase).is_some()).collect();
        if !phase.is_send() {
            sets.reverse();
        }
        sets
    }

    /// The sending handler paired with the receiving handler at `index`.
    pub fn associate(&self, phase: Phase, index: usize) -> Option<Arc<dyn Handler>> {
        let opposite = match phase {
            Phase::Indication => Phase::Response,
            Phase::Confirmation => Phase::Request,
            _ => return None,
        };
        self.sets_at(phase).get(index)?.get_handler(opposite)
    }
}

impl fmt::Debug for Stacks {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Stacks")
            .field("calls", &self.calls.iter().map(|s| s.name.as_str()).collect::<Vec<_>>())
            .field("stream", &self.stream)
            .finish()
    }
}

/// Runs a receiving chain. On a fault, handlers that already ran are undone
/// in reverse and the fault comes back with the failing index.
pub fn run_receive(chain: &[Arc<dyn Handler>], start: Message, cx: &CallContext, tr: &Tracer) -> Result<Message, (usize, Fault)> {
    let mut entries = vec![start];
    for (i, h) in chain.iter().enumerate() {
        let o = h.todo(entries[i].clone(), cx);
        let fault = match o {
            Ok(HandlerOutcome::Next(m)) => {
                tr.event(h.name(), "todo", "ok");
                entries.push(m);
                continue;
            }
            Ok(other) => cx.fault(h.name(), format!("todo returned {other:?}")),
            Err(f) => f,
        };
        tr.event(h.name(), "todo", format!("fault: {fault}"));
        for j in (0..i).rev() {
            let u = &chain[j];
            let r = u.undo(entries[j + 1].clone(), &fault, cx);
            tr.event(u.name(), "undo", if r.is_ok() { "ok".to_string() } else { format!("{r:?}") });
        }
        return Err((i, fault));
    }
    Ok(entries.pop().expect("start entry"))
}
