//! Rejects frames whose marshalled bytes were seen before.

use std::collections::{HashSet, VecDeque};
use std::sync::Mutex;

use crate::fnv::fnv1a64;
use crate::handler::{next, CallContext, Handler, Outcome};
use crate::message::{Fault, Message, TaggedValue};

pub const DEFAULT_WINDOW: usize = 4096;

/// Bounded set of checksums; the oldest is evicted first.
#[derive(Debug)]
pub struct ReplayWindow {
    seen: HashSet<u64>,
    order: VecDeque<u64>,
    capacity: usize,
}

impl ReplayWindow {
    pub fn new(capacity: usize) -> Self {
        Self { seen: HashSet::new(), order: VecDeque::new(), capacity: capacity.max(1) }
    }

    /// False when `sum` is already present.
    pub fn insert(&mut self, sum: u64) -> bool {
        if !self.seen.insert(sum) {
            return false;
        }
        self.order.push_back(sum);
        while self.order.len() > self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.seen.remove(&old);
            }
        }
        true
    }

    pub fn remove(&mut self, sum: u64) {
        if self.seen.remove(&sum) {
            self.order.retain(|s| *s != sum);
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// Checksums the marshalled frame of each INDICATION or CONFIRMATION and
/// faults on a repeat.
#[derive(Debug)]
pub struct ReplayDetector {
    window: Mutex<ReplayWindow>,
}

impl ReplayDetector {
    pub const NAME: &'static str = "ReplayDetector";

    pub fn new(capacity: usize) -> Self {
        Self { window: Mutex::new(ReplayWindow::new(capacity)) }
    }
}

impl Default for ReplayDetector {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW)
    }
}

impl Handler for ReplayDetector {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn todo(&self, m: Message, cx: &CallContext) -> Outcome {
        let frame = cx.frame.ok_or_else(|| cx.fault(Self::NAME, "no marshalled frame to check"))?;
        let sum = fnv1a64(frame);
        if !self.window.lock().unwrap().insert(sum) {
            return Err(cx.fault(Self::NAME, format!("replayed frame {sum:016x}")));
        }
        cx.state.put(cx.call_id, Self::NAME, TaggedValue::Int64(sum as i64));
        next(m)
    }

    fn undo(&self, m: Message, _f: &Fault, cx: &CallContext) -> Outcome {
        if let Some(TaggedValue::Int64(sum)) = cx.state.remove(cx.call_id, Self::NAME) {
            self.window.lock().unwrap().remove(sum as u64);
        }
        next(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Env;
    use crate::handler::{CallContext, CallScope, Side};
    use crate::message::{CallId, Phase};
    use crate::services::testing::call;

    fn with_frame<'a>(scope: &'a CallScope, frame: &'a [u8]) -> CallContext<'a> {
        CallContext { frame: Some(frame), ..scope.cx(CallId(1), Phase::Indication, Side::Acceptor) }
    }

    #[test]
    fn same_frame_twice_faults() {
        let scope = CallScope::new(Env::deterministic(1));
        let d = ReplayDetector::default();
        assert!(d.todo(call(1), &with_frame(&scope, b"frame")).is_ok());
        let f = d.todo(call(1), &with_frame(&scope, b"frame")).unwrap_err();
        assert_eq!(f.handler, "ReplayDetector");
    }

    #[test]
    fn one_byte_difference_passes() {
        let scope = CallScope::new(Env::deterministic(1));
        let d = ReplayDetector::default();
        assert!(d.todo(call(1), &with_frame(&scope, b"frame-a")).is_ok());
        assert!(d.todo(call(1), &with_frame(&scope, b"frame-b")).is_ok());
    }

    #[test]
    fn evicted_frame_passes_again() {
        let scope = CallScope::new(Env::deterministic(1));
        let d = ReplayDetector::new(2);
        for f in [b"A", b"B", b"C"] {
            assert!(d.todo(call(1), &with_frame(&scope, f)).is_ok());
        }
        assert!(d.todo(call(1), &with_frame(&scope, b"A")).is_ok());
    }

    #[test]
    fn undo_forgets_checksum() {
        let scope = CallScope::new(Env::deterministic(1));
        let d = ReplayDetector::default();
        let cx = with_frame(&scope, b"X");
        d.todo(call(1), &cx).unwrap();
        d.undo(call(1), &Fault::channel(Phase::Indication, "S", "x"), &cx).unwrap();
        assert!(d.todo(call(1), &cx).is_ok());
    }

    #[test]
    fn window_is_bounded() {
        let mut w = ReplayWindow::new(3);
        for s in 0..10 {
            assert!(w.insert(s));
        }
        assert_eq!(w.len(), 3);
        assert!(!w.insert(9));
        assert!(w.insert(0));
    }
}
