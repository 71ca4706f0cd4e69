//! Running a sending channel and repairing faults inside it.
//!
//! Handler `i` of a chain receives `entries[i]` and produces
//! `entries[i + 1]`. A failure below the last handler (stream layer,
//! transport) is a failure at index `chain.len()`.

use std::sync::Arc;

use super::config::RecoveryScheme;
use super::trace::Trace;
use crate::handler::{CallContext, Handler, HandlerOutcome, Outcome, Side};
use crate::message::{CallId, Fault, Message, Phase};

/// Where trace events of one channel traversal go.
#[derive(Clone, Copy)]
pub struct Tracer<'a> {
    pub trace: &'a Trace,
    pub side: Side,
    pub phase: Phase,
    pub call: CallId,
}

impl Tracer<'_> {
    pub fn event(&self, handler: &str, event: &str, detail: impl Into<String>) {
        self.trace.record(self.side, Some(self.phase), handler, event, self.call, detail);
    }

    fn outcome(&self, handler: &str, event: &str, o: &Outcome) {
        let detail = match o {
            Ok(HandlerOutcome::Next(_)) => "ok".to_string(),
            Ok(HandlerOutcome::Cleared(d)) => format!("cleared: {d}"),
            Ok(HandlerOutcome::Unclearable(d)) => format!("unclearable: {d}"),
            Ok(HandlerOutcome::Rebind { detail, message }) => format!("rebind to {}: {detail}", message.target),
            Err(f) => format!("fault: {f}"),
        };
        self.event(handler, event, detail);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Recovery {
    /// Fresh `entries[0..=failed]`; the last is the failed handler's input.
    Repaired(Vec<Message>),
    Failed(Fault),
    /// The channel must be rebuilt; carries the retargeted call.
    Rebind(Message),
}

fn fresh_fault(new: Fault, original: &Fault) -> Recovery {
    Recovery::Failed(new.containing(original.clone()))
}

fn undo_range(chain: &[Arc<dyn Handler>], from: usize, entries: &[Message], f: &Fault, cx: &CallContext, tr: &Tracer) -> Result<(), Fault> {
    for j in (0..from).rev() {
        let h = &chain[j];
        let o = h.undo(entries[j + 1].clone(), f, cx);
        tr.outcome(h.name(), "undo", &o);
        o?;
    }
    Ok(())
}

fn redo_range(
    chain: &[Arc<dyn Handler>],
    failed: usize,
    start: Message,
    substitute: Option<(usize, Message)>,
    f: &Fault,
    cx: &CallContext,
    tr: &Tracer,
) -> Recovery {
    let mut substitute = substitute;
    let mut out = vec![start];
    for (j, h) in chain.iter().enumerate().take(failed) {
        let input = match substitute.take_if(|(k, _)| *k == j) {
            Some((_, r)) => {
                out[j] = r.clone();
                r
            }
            None => out[j].clone(),
        };
        let o = h.redo(input, cx);
        tr.outcome(h.name(), "redo", &o);
        match o {
            Ok(HandlerOutcome::Next(m)) => out.push(m),
            Ok(other) => return fresh_fault(cx.fault(h.name(), format!("redo returned {other:?}")), f),
            Err(e) => return fresh_fault(e, f),
        }
    }
    Recovery::Repaired(out)
}

/// Attempts to repair `f`, raised at `failed`, with the handlers above it.
pub fn recover(
    chain: &[Arc<dyn Handler>],
    failed: usize,
    entries: &[Message],
    f: &Fault,
    scheme: RecoveryScheme,
    cx: &CallContext,
    tr: &Tracer,
) -> Recovery {
    match scheme {
        RecoveryScheme::ClearThenUndoRedo => clear_then_undo_redo(chain, failed, entries, f, cx, tr),
        RecoveryScheme::ClearAndUndoThenRedo => clear_and_undo_then_redo(chain, failed, entries, f, cx, tr),
    }
}

fn clear_then_undo_redo(chain: &[Arc<dyn Handler>], failed: usize, entries: &[Message], f: &Fault, cx: &CallContext, tr: &Tracer) -> Recovery {
    for k in (0..failed).rev() {
        let h = &chain[k];
        let o = h.clear(entries[k].clone(), f, cx);
        tr.outcome(h.name(), "clear", &o);
        let substitute = match o {
            Ok(HandlerOutcome::Unclearable(_)) => continue,
            Ok(HandlerOutcome::Cleared(_)) => None,
            Ok(HandlerOutcome::Next(r)) => Some((k, r)),
            Ok(HandlerOutcome::Rebind { message, .. }) => {
                if let Err(e) = undo_range(chain, k, entries, f, cx, tr) {
                    return fresh_fault(e, f);
                }
                return Recovery::Rebind(message);
            }
            Err(e) => return fresh_fault(e, f),
        };
        if let Err(e) = undo_range(chain, k, entries, f, cx, tr) {
            return fresh_fault(e, f);
        }
        return redo_range(chain, failed, entries[0].clone(), substitute, f, cx, tr);
    }
    match undo_range(chain, failed, entries, f, cx, tr) {
        Ok(()) => Recovery::Failed(f.clone()),
        Err(e) => fresh_fault(e, f),
    }
}

fn clear_and_undo_then_redo(chain: &[Arc<dyn Handler>], failed: usize, entries: &[Message], f: &Fault, cx: &CallContext, tr: &Tracer) -> Recovery {
    let mut cleared = false;
    let mut rebind = None;
    for k in (0..failed).rev() {
        let h = &chain[k];
        let o = h.clear_undo(entries[k].clone(), entries[k + 1].clone(), f, cx);
        tr.outcome(h.name(), "undo", &o);
        match o {
            Ok(HandlerOutcome::Cleared(_)) => cleared = true,
            Ok(HandlerOutcome::Rebind { message, .. }) => rebind = rebind.or(Some(message)),
            Ok(_) => {}
            Err(e) => return fresh_fault(e, f),
        }
    }
    if let Some(m) = rebind {
        return Recovery::Rebind(m);
    }
    if cleared {
        redo_range(chain, failed, entries[0].clone(), None, f, cx, tr)
    } else {
        Recovery::Failed(f.clone())
    }
}

#[derive(Debug)]
pub enum SendFailure {
    Fault(Fault),
    Rebind(Message),
}

/// Runs `chain` over `start`, then `below` on the result. Faults anywhere
/// go through recovery; a repaired channel resumes at the handler that
/// failed, which runs `todo` again on its repaired input.
#[allow(clippy::too_many_arguments, clippy::result_large_err)]
pub fn run_send<T>(
    chain: &[Arc<dyn Handler>],
    start: Message,
    redo: bool,
    scheme: RecoveryScheme,
    cx: &CallContext,
    tr: &Tracer,
    mut below: impl FnMut(&Message) -> Result<T, Fault>,
) -> Result<T, SendFailure> {
    let n = chain.len();
    let mut entries = vec![start];
    let mut i = 0;
    let mut rounds = 0;
    let mut repaired_at = None;
    loop {
        let fault = if i < n {
            let h = &chain[i];
            let input = entries[i].clone();
            let (event, o) = if redo && repaired_at.is_none_or(|r| i > r) {
                ("redo", h.redo(input, cx))
            } else {
                ("todo", h.todo(input, cx))
            };
            tr.outcome(h.name(), event, &o);
            match o {
                Ok(HandlerOutcome::Next(m)) => {
                    entries.truncate(i + 1);
                    entries.push(m);
                    i += 1;
                    continue;
                }
                Ok(other) => cx.fault(h.name(), format!("{event} returned {other:?}")),
                Err(f) => f,
            }
        } else {
            match below(&entries[n]) {
                Ok(t) => return Ok(t),
                Err(f) => {
                    let who = if f.handler.is_empty() { f.kind.name().to_string() } else { f.handler.clone() };
                    tr.event(&who, "fault", f.to_string());
                    f
                }
            }
        };
        rounds += 1;
        if rounds > n + 1 {
            return Err(SendFailure::Fault(fault));
        }
        match recover(chain, i, &entries, &fault, scheme, cx, tr) {
            Recovery::Repaired(fresh) => {
                entries = fresh;
                repaired_at = Some(i);
            }
            Recovery::Failed(f) => return Err(SendFailure::Fault(f)),
            Recovery::Rebind(m) => return Err(SendFailure::Rebind(m)),
        }
    }
}
