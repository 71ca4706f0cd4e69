//! Bundled channel objects: encryption and key negotiation, timestamps,
//! sequence numbers, replay detection, usage logging, accounting, an
//! integrity checksum, and a fault injector for exercising recovery.

pub mod checksum;
pub mod cipher;
pub mod inject;
pub mod keyneg;
pub mod replay;
pub mod sequence;
pub mod stamp;
pub mod usage;

pub use checksum::Checksum;
pub use cipher::{Encryptor, SessionKey};
pub use inject::{FaultInjector, InjectMode};
pub use keyneg::KeyNegotiator;
pub use replay::{ReplayDetector, ReplayWindow};
pub use sequence::{SequenceChecker, SequenceIssuer};
pub use stamp::{StampChecker, StampIssuer};
pub use usage::{AccountLedger, AccountReader, AccountTagger, UsageLog, UsageLogger};

use crate::handler::CallContext;
use crate::message::{unwrap, Fault, Message, TaggedValue};

/// Note key marking that the peer did not send `method`'s wrapper, so the
/// matching issuer on the way back must not add one either.
pub fn absent_note(method: &str) -> String {
    format!("{method}.absent")
}

/// Peels the counterpart's `method` wrapper off `m`.
///
/// A missing wrapper is a fault for required entries. Optional entries pass
/// the message through (as `Err(m)`) and note the absence.
pub fn take_wrapper(
    m: Message,
    method: &str,
    handler: &str,
    optional: bool,
    cx: &CallContext,
) -> Result<Result<(Message, Vec<TaggedValue>), Message>, Fault> {
    if m.method != method {
        if optional {
            cx.notes.put(absent_note(method), TaggedValue::Bool(true));
            return Ok(Err(m));
        }
        return Err(cx.fault(handler, format!("expected `{method}` wrapper, found `{}`", m.method)));
    }
    unwrap(m).map(Ok).map_err(|e| cx.fault(handler, e.to_string()))
}

/// True when the incoming call of this exchange lacked `method`'s wrapper.
pub fn is_absent(method: &str, cx: &CallContext) -> bool {
    cx.notes.contains(&absent_note(method))
}

/// Undo for a wrapping issuer: strips `method` if present.
pub(crate) fn strip(m: Message, method: &str, handler: &str, cx: &CallContext) -> Result<Message, Fault> {
    if m.method != method {
        return Ok(m);
    }
    unwrap(m).map(|(inner, _)| inner).map_err(|e| cx.fault(handler, e.to_string()))
}

/// Innermost application method of a possibly wrapped message.
pub fn innermost_method(m: &Message) -> &str {
    match m.params.last() {
        Some(TaggedValue::Message(inner)) => innermost_method(inner),
        _ => &m.method,
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use crate::message::{Address, CallId, Message, TaggedValue};

    pub fn call(id: u128) -> Message {
        Message::new(
            Address::loopback("srv", "Answerer"),
            Address::loopback("cli", "client-1"),
            "answer",
            vec![TaggedValue::text("hi")],
            CallId(id),
        )
    }
}
