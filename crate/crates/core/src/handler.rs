//! The channel-object contract, per-phase deployment records and the call
//! state associates share.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, Mutex};

use crate::env::Env;
use crate::message::{CallId, Fault, Message, Phase, TaggedValue};

/// Default lifetime of call-state entries for calls that never complete.
pub const DEFAULT_STATE_TTL_MS: i64 = 60_000;

#[derive(Debug, Clone, PartialEq)]
pub enum HandlerOutcome {
    Next(Message),
    Cleared(String),
    Unclearable(String),
    /// The channel must be destroyed and rebuilt; `message` is the call
    /// retargeted for the new channel.
    Rebind { message: Message, detail: String },
}

pub type Outcome = Result<HandlerOutcome, Fault>;

pub fn next(m: Message) -> Outcome {
    Ok(HandlerOutcome::Next(m))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Initiator,
    Acceptor,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Initiator => "initiator",
            Side::Acceptor => "acceptor",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A text-keyed map shared by reference, used for binding sessions and for
/// notes passed between the stream layer and call handlers of one call.
#[derive(Debug, Clone, Default)]
pub struct SharedMap(Arc<Mutex<BTreeMap<String, TaggedValue>>>);

impl SharedMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &str) -> Option<TaggedValue> {
        self.0.lock().unwrap().get(key).cloned()
    }

    pub fn put(&self, key: impl Into<String>, v: TaggedValue) {
        self.0.lock().unwrap().insert(key.into(), v);
    }

    pub fn remove(&self, key: &str) -> Option<TaggedValue> {
        self.0.lock().unwrap().remove(key)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.0.lock().unwrap().contains_key(key)
    }

    pub fn keys(&self) -> Vec<String> {
        self.0.lock().unwrap().keys().cloned().collect()
    }
}

pub type Session = SharedMap;
pub type Notes = SharedMap;

#[derive(Default)]
struct StateInner {
    entries: HashMap<(CallId, String), (TaggedValue, i64)>,
    originals: HashMap<CallId, (Message, i64)>,
}

/// Per-call values keyed by (call, handler name), plus the original
/// message of each outstanding call.
pub struct CallState {
    inner: Mutex<StateInner>,
    env: Env,
    ttl_ms: i64,
}

impl CallState {
    pub fn new(env: Env) -> Self {
        Self::with_ttl(env, DEFAULT_STATE_TTL_MS)
    }

    pub fn with_ttl(env: Env, ttl_ms: i64) -> Self {
        Self { inner: Mutex::new(StateInner::default()), env, ttl_ms }
    }

    fn stamp(&self) -> i64 {
        let now = self.env.now_ms();
        let mut s = self.inner.lock().unwrap();
        let horizon = now - self.ttl_ms;
        s.entries.retain(|_, (_, t)| *t >= horizon);
        s.originals.retain(|_, (_, t)| *t >= horizon);
        now
    }

    pub fn put(&self, call: CallId, handler: &str, v: TaggedValue) {
        let now = self.stamp();
        self.inner.lock().unwrap().entries.insert((call, handler.to_string()), (v, now));
    }

    pub fn get(&self, call: CallId, handler: &str) -> Option<TaggedValue> {
        self.inner
            .lock()
            .unwrap()
            .entries
            .get(&(call, handler.to_string()))
            .map(|(v, _)| v.clone())
    }

    pub fn remove(&self, call: CallId, handler: &str) -> Option<TaggedValue> {
        self.inner
            .lock()
            .unwrap()
            .entries
            .remove(&(call, handler.to_string()))
            .map(|(v, _)| v)
    }

    pub fn put_original(&self, call: CallId, m: Message) {
        let now = self.stamp();
        self.inner.lock().unwrap().originals.insert(call, (m, now));
    }

    pub fn original(&self, call: CallId) -> Option<Message> {
        self.inner.lock().unwrap().originals.get(&call).map(|(m, _)| m.clone())
    }

    /// Drops every entry and the original message of `call`.
    pub fn remove_call(&self, call: CallId) {
        let mut s = self.inner.lock().unwrap();
        s.entries.retain(|(c, _), _| *c != call);
        s.originals.remove(&call);
    }

    /// Number of values (original included) held for `call`.
    pub fn count_for(&self, call: CallId) -> usize {
        let s = self.inner.lock().unwrap();
        s.entries.keys().filter(|(c, _)| *c == call).count() + usize::from(s.originals.contains_key(&call))
    }

    pub fn is_empty(&self) -> bool {
        let s = self.inner.lock().unwrap();
        s.entries.is_empty() && s.originals.is_empty()
    }
}

impl fmt::Debug for CallState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.inner.lock().unwrap();
        f.debug_struct("CallState")
            .field("entries", &s.entries.len())
            .field("originals", &s.originals.len())
            .finish()
    }
}

/// What a handler may see of the call it is processing.
#[derive(Clone, Copy)]
pub struct CallContext<'a> {
    pub call_id: CallId,
    pub phase: Phase,
    pub side: Side,
    /// Identity of the remote party: the bound server at the initiator, the
    /// caller's return address at the acceptor.
    pub peer: &'a str,
    pub env: &'a Env,
    pub state: &'a CallState,
    pub session: &'a Session,
    pub notes: &'a Notes,
    /// The marshalled frame as received, for INDICATION and CONFIRMATION.
    pub frame: Option<&'a [u8]>,
}

impl<'a> CallContext<'a> {
    pub fn at(self, phase: Phase) -> Self {
        Self { phase, ..self }
    }

    pub fn fault(&self, handler: &str, detail: impl Into<String>) -> Fault {
        Fault::channel(self.phase, handler, detail)
    }
}

/// Owns what a [`CallContext`] borrows, for driving handlers outside an
/// engine.
pub struct CallScope {
    pub env: Env,
    pub state: CallState,
    pub session: Session,
    pub notes: Notes,
    pub peer: String,
}

impl CallScope {
    pub fn new(env: Env) -> Self {
        Self {
            state: CallState::new(env.clone()),
            env,
            session: Session::new(),
            notes: Notes::new(),
            peer: "peer".to_string(),
        }
    }

    pub fn cx(&self, call_id: CallId, phase: Phase, side: Side) -> CallContext<'_> {
        CallContext {
            call_id,
            phase,
            side,
            peer: &self.peer,
            env: &self.env,
            state: &self.state,
            session: &self.session,
            notes: &self.notes,
            frame: None,
        }
    }
}

/// Key under which [`remember_input`] stores a handler's input message.
fn input_key(handler: &str) -> String {
    format!("{handler}#input")
}

/// Keeps `m` so the default `undo` can restore it.
pub fn remember_input(cx: &CallContext, handler: &str, m: &Message) {
    cx.state.put(cx.call_id, &input_key(handler), TaggedValue::Message(Box::new(m.clone())));
}

/// A call handler: a channel object above the marshalling boundary.
pub trait Handler: Send + Sync {
    fn name(&self) -> &str;

    fn todo(&self, m: Message, cx: &CallContext) -> Outcome;

    fn clear(&self, _m: Message, _f: &Fault, _cx: &CallContext) -> Outcome {
        Ok(HandlerOutcome::Unclearable(format!("{} does not clear", self.name())))
    }

    fn undo(&self, m: Message, _f: &Fault, cx: &CallContext) -> Outcome {
        match cx.state.remove(cx.call_id, &input_key(self.name())) {
            Some(TaggedValue::Message(original)) => next(*original),
            _ => next(m),
        }
    }

    fn redo(&self, m: Message, cx: &CallContext) -> Outcome {
        self.todo(m, cx)
    }

    /// One step of the clear-and-undo scheme: undo this handler's effect on
    /// `output`, attempting to clear `f` on the way. Returns `Cleared` if the
    /// fault was cleared.
    fn clear_undo(&self, input: Message, output: Message, f: &Fault, cx: &CallContext) -> Outcome {
        match self.clear(input, f, cx)? {
            HandlerOutcome::Next(_) | HandlerOutcome::Cleared(_) => {
                self.undo(output, f, cx)?;
                Ok(HandlerOutcome::Cleared(format!("{} cleared", self.name())))
            }
            rebind @ HandlerOutcome::Rebind { .. } => {
                self.undo(output, f, cx)?;
                Ok(rebind)
            }
            HandlerOutcome::Unclearable(_) => self.undo(output, f, cx),
        }
    }

    /// Notice that a fault was raised by this handler's associate in another
    /// channel of the same binding.
    fn alert(&self, _f: &Fault, _cx: &CallContext) {}
}

/// Passes every message through unchanged.
#[derive(Debug, Clone)]
pub struct Identity {
    name: String,
}

impl Identity {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into() }
    }
}

impl Handler for Identity {
    fn name(&self) -> &str {
        &self.name
    }

    fn todo(&self, m: Message, _cx: &CallContext) -> Outcome {
        next(m)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Counterpart {
    pub stack: String,
    pub handler: String,
}

/// One named channel object as deployed across the four phases.
#[derive(Clone)]
pub struct HandlerSet {
    pub name: String,
    handlers: [Option<Arc<dyn Handler>>; 4],
    counterpart: Option<Counterpart>,
    associate: Option<String>,
}

impl HandlerSet {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            handlers: [None, None, None, None],
            counterpart: None,
            associate: None,
        }
    }

    pub fn with(mut self, phase: Phase, h: Arc<dyn Handler>) -> Self {
        self.handlers[phase.code() as usize - 1] = Some(h);
        self
    }

    pub fn with_counterpart(mut self, stack: impl Into<String>, handler: impl Into<String>) -> Self {
        self.counterpart = Some(Counterpart { stack: stack.into(), handler: handler.into() });
        self
    }

    pub fn with_associate(mut self, handler: impl Into<String>) -> Self {
        self.associate = Some(handler.into());
        self
    }

    /// Absent for phases in which this set does nothing.
    pub fn get_handler(&self, phase: Phase) -> Option<Arc<dyn Handler>> {
        self.handlers[phase.code() as usize - 1].clone()
    }

    pub fn counterpart(&self) -> Option<&Counterpart> {
        self.counterpart.as_ref()
    }

    pub fn associate(&self) -> Option<&str> {
        self.associate.as_deref()
    }

    pub fn phases(&self) -> Vec<Phase> {
        Phase::ALL.into_iter().filter(|p| self.get_handler(*p).is_some()).collect()
    }

    pub fn is_populated(&self) -> bool {
        self.handlers.iter().any(Option::is_some)
    }
}

impl fmt::Debug for HandlerSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HandlerSet")
            .field("name", &self.name)
            .field("phases", &self.phases())
            .field("counterpart", &self.counterpart)
            .field("associate", &self.associate)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::message::Address;

    struct Fixture(CallScope);

    impl std::ops::Deref for Fixture {
        type Target = CallScope;
        fn deref(&self) -> &CallScope {
            &self.0
        }
    }

    impl Fixture {
        fn new() -> Self {
            Fixture(CallScope::new(Env::deterministic(1)))
        }

        fn cx(&self, call: CallId) -> CallContext<'_> {
            self.0.cx(call, Phase::Request, Side::Initiator)
        }
    }

    fn msg() -> Message {
        Message::new(Address::loopback("s", "O"), Address::loopback("c", "C"), "m", vec![], CallId(1))
    }

    #[test]
    fn put_get_remove() {
        let f = Fixture::new();
        f.state.put(CallId(1), "A", TaggedValue::Int64(3));
        assert_eq!(f.state.get(CallId(1), "A"), Some(TaggedValue::Int64(3)));
        assert_eq!(f.state.get(CallId(1), "B"), None);
        f.state.remove_call(CallId(1));
        assert_eq!(f.state.get(CallId(1), "A"), None);
        assert!(f.state.is_empty());
    }

    #[test]
    fn calls_are_isolated() {
        let f = Fixture::new();
        f.state.put(CallId(1), "A", TaggedValue::Int64(1));
        f.state.put(CallId(2), "A", TaggedValue::Int64(2));
        f.state.remove_call(CallId(1));
        assert_eq!(f.state.get(CallId(2), "A"), Some(TaggedValue::Int64(2)));
        assert_eq!(f.state.count_for(CallId(2)), 1);
    }

    #[test]
    fn entries_expire() {
        let f = Fixture::new();
        f.state.put(CallId(1), "A", TaggedValue::Unit);
        f.env.advance_clock(DEFAULT_STATE_TTL_MS as u64 + 10);
        f.state.put(CallId(2), "A", TaggedValue::Unit);
        assert_eq!(f.state.get(CallId(1), "A"), None);
        assert!(f.state.get(CallId(2), "A").is_some());
    }

    #[test]
    fn default_contract() {
        let f = Fixture::new();
        let cx = f.cx(CallId(1));
        let h = Identity::new("I");
        let m = msg();
        assert_eq!(h.todo(m.clone(), &cx).unwrap(), HandlerOutcome::Next(m.clone()));
        let fault = Fault::channel(Phase::Request, "X", "boom");
        assert!(matches!(h.clear(m.clone(), &fault, &cx).unwrap(), HandlerOutcome::Unclearable(_)));
        assert_eq!(h.undo(m.clone(), &fault, &cx).unwrap(), HandlerOutcome::Next(m.clone()));
        assert_eq!(h.redo(m.clone(), &cx).unwrap(), HandlerOutcome::Next(m));
    }

    #[test]
    fn default_undo_restores_remembered_input() {
        let f = Fixture::new();
        let cx = f.cx(CallId(1));
        let before = msg();
        remember_input(&cx, "I", &before);
        let mut after = before.clone();
        after.method = "changed".into();
        let fault = Fault::channel(Phase::Request, "X", "boom");
        assert_eq!(Identity::new("I").undo(after, &fault, &cx).unwrap(), HandlerOutcome::Next(before));
    }

    #[test]
    fn handler_set_phases() {
        let set = HandlerSet::new("Stamp")
            .with(Phase::Request, Arc::new(Identity::new("StampIssuer")))
            .with(Phase::Indication, Arc::new(Identity::new("StampChecker")))
            .with_counterpart("server", "StampChecker");
        assert_eq!(set.phases(), vec![Phase::Request, Phase::Indication]);
        assert!(set.get_handler(Phase::Response).is_none());
        assert_eq!(set.get_handler(Phase::Indication).unwrap().name(), "StampChecker");
        assert!(set.is_populated());
        assert!(!HandlerSet::new("empty").is_populated());
    }
}
