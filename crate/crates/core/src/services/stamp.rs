//! Timestamp issue and check, with a configurable clock-skew allowance.

use super::{is_absent, strip, take_wrapper};
use crate::handler::{next, CallContext, Handler, Outcome};
use crate::message::{wrap, Fault, Message, TaggedValue};

pub const STAMP_METHOD: &str = "stampedAt";
pub const DEFAULT_SKEW_MS: i64 = 5_000;

/// Wraps outgoing calls as `stampedAt(t, inner)`, `t` in epoch milliseconds.
#[derive(Debug, Default)]
pub struct StampIssuer;

impl StampIssuer {
    pub const NAME: &'static str = "StampIssuer";

    fn stamp(&self, m: Message, t: i64, cx: &CallContext) -> Outcome {
        cx.state.put(cx.call_id, Self::NAME, TaggedValue::Int64(t));
        next(wrap(STAMP_METHOD, m, vec![TaggedValue::Int64(t)]))
    }
}

impl Handler for StampIssuer {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn todo(&self, m: Message, cx: &CallContext) -> Outcome {
        if is_absent(STAMP_METHOD, cx) {
            return next(m);
        }
        self.stamp(m, cx.env.now_ms(), cx)
    }

    fn undo(&self, m: Message, _f: &Fault, cx: &CallContext) -> Outcome {
        next(strip(m, STAMP_METHOD, Self::NAME, cx)?)
    }

    /// Reissues the original stamp so a repaired call is sent unchanged.
    fn redo(&self, m: Message, cx: &CallContext) -> Outcome {
        match cx.state.get(cx.call_id, Self::NAME) {
            Some(TaggedValue::Int64(t)) => self.stamp(m, t, cx),
            _ => self.todo(m, cx),
        }
    }
}

/// Unwraps `stampedAt` and rejects stamps further than the skew allowance
/// from the local clock.
#[derive(Debug)]
pub struct StampChecker {
    pub skew_ms: i64,
    pub optional: bool,
}

impl StampChecker {
    pub const NAME: &'static str = "StampChecker";

    pub fn new(skew_ms: i64) -> Self {
        Self { skew_ms, optional: false }
    }

    pub fn optional(mut self, optional: bool) -> Self {
        self.optional = optional;
        self
    }

    pub fn accepts(&self, stamp: i64, now: i64) -> bool {
        (now - stamp).abs() <= self.skew_ms
    }
}

impl Default for StampChecker {
    fn default() -> Self {
        Self::new(DEFAULT_SKEW_MS)
    }
}

impl Handler for StampChecker {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn todo(&self, m: Message, cx: &CallContext) -> Outcome {
        let (inner, extra) = match take_wrapper(m, STAMP_METHOD, Self::NAME, self.optional, cx)? {
            Ok(parts) => parts,
            Err(m) => return next(m),
        };
        let t = extra
            .first()
            .and_then(TaggedValue::as_i64)
            .ok_or_else(|| cx.fault(Self::NAME, "stamp is not an integer"))?;
        let now = cx.env.now_ms();
        if !self.accepts(t, now) {
            return Err(cx.fault(Self::NAME, format!("stamp {t} is {} ms from {now}, allowance {}", now - t, self.skew_ms)));
        }
        cx.state.put(cx.call_id, Self::NAME, TaggedValue::Int64(t));
        next(inner)
    }

    fn undo(&self, m: Message, _f: &Fault, cx: &CallContext) -> Outcome {
        match cx.state.remove(cx.call_id, Self::NAME) {
            Some(TaggedValue::Int64(t)) => next(wrap(STAMP_METHOD, m, vec![TaggedValue::Int64(t)])),
            _ => next(m),
        }
    }
}
