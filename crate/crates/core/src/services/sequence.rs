//! Per-peer sequence numbers, issued on send and checked on receipt.

use std::collections::HashMap;
use std::sync::Mutex;

use super::{is_absent, strip, take_wrapper};
use crate::handler::{next, CallContext, Handler, Outcome};
use crate::message::{wrap, Fault, Message, TaggedValue};

pub const SEQUENCE_METHOD: &str = "sequenced";

/// Wraps outgoing calls as `sequenced(n, inner)` with `n` counting up from 1
/// for each peer. The number is kept per call so a redo resends it.
#[derive(Debug, Default)]
pub struct SequenceIssuer {
    next: Mutex<HashMap<String, i64>>,
}

impl SequenceIssuer {
    pub const NAME: &'static str = "SequenceIssuer";

    pub fn new() -> Self {
        Self::default()
    }

    fn issue(&self, m: Message, n: i64, cx: &CallContext) -> Outcome {
        cx.state.put(cx.call_id, Self::NAME, TaggedValue::Int64(n));
        next(wrap(SEQUENCE_METHOD, m, vec![TaggedValue::Int64(n)]))
    }
}

impl Handler for SequenceIssuer {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn todo(&self, m: Message, cx: &CallContext) -> Outcome {
        if is_absent(SEQUENCE_METHOD, cx) {
            return next(m);
        }
        let n = {
            let mut counters = self.next.lock().unwrap();
            let c = counters.entry(cx.peer.to_string()).or_insert(0);
            *c += 1;
            *c
        };
        self.issue(m, n, cx)
    }

    fn undo(&self, m: Message, _f: &Fault, cx: &CallContext) -> Outcome {
        if m.method == SEQUENCE_METHOD && cx.state.get(cx.call_id, Self::NAME).is_none() {
            return Err(cx.fault(Self::NAME, "no sequence state for call"));
        }
        next(strip(m, SEQUENCE_METHOD, Self::NAME, cx)?)
    }

    fn redo(&self, m: Message, cx: &CallContext) -> Outcome {
        match cx.state.get(cx.call_id, Self::NAME) {
            Some(TaggedValue::Int64(n)) => self.issue(m, n, cx),
            _ => self.todo(m, cx),
        }
    }
}

/// Accepts `sequenced(n, inner)` only when `n` exceeds the last number
/// accepted from the same peer.
#[derive(Debug, Default)]
pub struct SequenceChecker {
    last: Mutex<HashMap<String, i64>>,
    pub optional: bool,
}

impl SequenceChecker {
    pub const NAME: &'static str = "SequenceChecker";

    pub fn new() -> Self {
        Self::default()
    }

    pub fn optional(mut self, optional: bool) -> Self {
        self.optional = optional;
        self
    }

    pub fn last_accepted(&self, peer: &str) -> i64 {
        self.last.lock().unwrap().get(peer).copied().unwrap_or(0)
    }
}

impl Handler for SequenceChecker {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn todo(&self, m: Message, cx: &CallContext) -> Outcome {
        let (inner, extra) = match take_wrapper(m, SEQUENCE_METHOD, Self::NAME, self.optional, cx)? {
            Ok(parts) => parts,
            Err(m) => return next(m),
        };
        let n = extra
            .first()
            .and_then(TaggedValue::as_i64)
            .ok_or_else(|| cx.fault(Self::NAME, "sequence number is not an integer"))?;
        let mut last = self.last.lock().unwrap();
        let prev = last.get(cx.peer).copied().unwrap_or(0);
        if n <= prev {
            return Err(cx.fault(Self::NAME, format!("sequence {n} not after {prev}")));
        }
        last.insert(cx.peer.to_string(), n);
        cx.state.put(cx.call_id, Self::NAME, TaggedValue::List(vec![TaggedValue::Int64(n), TaggedValue::Int64(prev)]));
        next(inner)
    }

    /// Forgets the acceptance, unless a later number was accepted since.
    fn undo(&self, m: Message, _f: &Fault, cx: &CallContext) -> Outcome {
        let Some(TaggedValue::List(v)) = cx.state.remove(cx.call_id, Self::NAME) else {
            return next(m);
        };
        let (n, prev) = (v[0].as_i64().unwrap_or(0), v[1].as_i64().unwrap_or(0));
        let mut last = self.last.lock().unwrap();
        if last.get(cx.peer) == Some(&n) {
            last.insert(cx.peer.to_string(), prev);
        }
        next(wrap(SEQUENCE_METHOD, m, vec![TaggedValue::Int64(n)]))
    }
}
