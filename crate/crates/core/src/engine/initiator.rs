//! The calling side of a binding.

use std::sync::{Arc, Mutex};

use super::config::EngineConfig;
use super::recovery::{run_send, SendFailure, Tracer};
use super::trace::Trace;
use super::{run_receive, Stacks, CHANNEL, ENGINE, FAULT_METHOD, REPLY_METHOD, WIRE};
use crate::env::Env;
use crate::handler::{CallContext, CallState, HandlerOutcome, Notes, Session, Side};
use crate::marshal::{decode_fault, marshal_message, unmarshal_reply};
use crate::message::{is_one_cast, unwrap, Address, CallId, Fault, Interface, Message, Phase, TaggedValue};
use crate::stream::{Connection, Network};

/// Builds fresh handler stacks for one side of a binding.
pub type StackBuilder = Arc<dyn Fn(Side) -> Result<Stacks, Fault> + Send + Sync>;

#[derive(Clone)]
struct Binding {
    id: u64,
    target: Address,
    stacks: Arc<Stacks>,
    session: Session,
    return_address: Address,
}

impl Binding {
    fn new(env: &Env, target: Address, builder: &StackBuilder) -> Result<Self, Fault> {
        let id = env.random_u64();
        Ok(Self {
            id,
            return_address: Address::new(target.kind, "client", 0, format!("client-{id:016x}")),
            target,
            stacks: Arc::new(builder(Side::Initiator)?),
            session: Session::new(),
        })
    }
}

pub struct Initiator {
    env: Env,
    net: Network,
    trace: Arc<Trace>,
    config: EngineConfig,
    builder: StackBuilder,
    interface: Option<Interface>,
    state: CallState,
    binding: Mutex<Binding>,
}

enum Attempt {
    Done(Result<TaggedValue, Fault>),
    Resend { redo: bool },
    Rebind(Message),
}

impl Initiator {
    pub fn new(env: Env, net: Network, trace: Arc<Trace>, config: EngineConfig, target: Address, builder: StackBuilder) -> Result<Self, Fault> {
        let binding = Binding::new(&env, target, &builder)?;
        Ok(Self {
            state: CallState::new(env.clone()),
            env,
            net,
            trace,
            config,
            builder,
            interface: None,
            binding: Mutex::new(binding),
        })
    }

    /// Declared methods, used to mark calls without results as one-casts.
    pub fn with_interface(mut self, interface: Interface) -> Self {
        self.interface = Some(interface);
        self
    }

    pub fn target(&self) -> Address {
        self.binding.lock().unwrap().target.clone()
    }

    pub fn binding_id(&self) -> u64 {
        self.binding.lock().unwrap().id
    }

    pub fn return_address(&self) -> Address {
        self.binding.lock().unwrap().return_address.clone()
    }

    pub fn session(&self) -> Session {
        self.binding.lock().unwrap().session.clone()
    }

    pub fn trace(&self) -> &Arc<Trace> {
        &self.trace
    }

    pub fn state(&self) -> &CallState {
        &self.state
    }

    /// Calls `method` on the bound object.
    pub fn call(&self, method: &str, params: Vec<TaggedValue>) -> Result<TaggedValue, Fault> {
        let (target, ret) = {
            let b = self.binding.lock().unwrap();
            (b.target.clone(), b.return_address.clone())
        };
        self.initiate(Message::new(target, ret, method, params, CallId::NIL))
    }

    /// Sends `m` through the channel and waits for its outcome. One-casts
    /// return `Unit` once the frame is handed to the transport.
    pub fn initiate(&self, mut m: Message) -> Result<TaggedValue, Fault> {
        if m.call_id.is_nil() {
            m.call_id = self.env.new_call_id();
        }
        if let Some(i) = &self.interface {
            m.one_cast |= is_one_cast(&m, i).unwrap_or(false);
        }
        m.set_phase(Phase::Request);
        let call = m.call_id;
        self.state.put_original(call, m.clone());
        let result = self.drive(m);
        self.state.remove_call(call);
        result
    }

    fn drive(&self, mut m: Message) -> Result<TaggedValue, Fault> {
        let call = m.call_id;
        let mut resends = self.config.resend_budget;
        let mut rebinds = self.config.rebind_budget;
        let mut redo = false;
        loop {
            match self.attempt(&m, redo) {
                Attempt::Done(r) => return r,
                Attempt::Resend { redo: r } => {
                    if resends == 0 {
                        return Err(Fault::transport(Phase::Confirmation, "resend budget exhausted"));
                    }
                    resends -= 1;
                    redo = r;
                    self.trace.record(Side::Initiator, Some(Phase::Request), ENGINE, "resend", call, if r { "redo" } else { "todo" });
                }
                Attempt::Rebind(to) => {
                    if rebinds == 0 {
                        return Err(Fault::new(crate::message::FaultKind::Rebind, Phase::Request, ENGINE, "rebind budget exhausted"));
                    }
                    rebinds -= 1;
                    m = self.rebind(call, &to.target)?;
                    redo = false;
                }
            }
        }
    }

    fn rebind(&self, call: CallId, to: &Address) -> Result<Message, Fault> {
        let fresh = Binding::new(&self.env, to.clone(), &self.builder)?;
        let mut original = self.state.original(call).ok_or_else(|| Fault::channel(Phase::Request, ENGINE, "original call lost"))?;
        original.target = to.clone();
        original.return_address = fresh.return_address.clone();
        self.trace.record(Side::Initiator, Some(Phase::Request), ENGINE, "rebind", call, format!("{} binding {:016x}", to, fresh.id));
        *self.binding.lock().unwrap() = fresh;
        self.state.put_original(call, original.clone());
        Ok(original)
    }

    fn attempt(&self, m: &Message, redo: bool) -> Attempt {
        let b = self.binding.lock().unwrap().clone();
        let call = m.call_id;
        let notes = Notes::new();
        let peer = b.target.to_string();
        let cx = CallContext {
            call_id: call,
            phase: Phase::Request,
            side: Side::Initiator,
            peer: &peer,
            env: &self.env,
            state: &self.state,
            session: &b.session,
            notes: &notes,
            frame: None,
        };
        let tr = Tracer { trace: &self.trace, side: Side::Initiator, phase: Phase::Request, call };
        let chain = b.stacks.chain(Phase::Request);
        tr.event(CHANNEL, "enter", format!("{} handlers", chain.len()));
        let sent = run_send(&chain, m.clone(), redo, self.config.scheme, &cx, &tr, |out| {
            let frame = b.stacks.stream.chain_send(marshal_message(out), &cx)?;
            let mut conn = self.net.connect(&b.target).map_err(|e| e.into_fault(Phase::Request))?;
            tr.event(WIRE, "send", format!("{} bytes to {}", frame.len(), b.target.endpoint()));
            conn.send(&frame).map_err(|e| e.into_fault(Phase::Request))?;
            Ok(conn)
        });
        let conn = match sent {
            Ok(c) => c,
            Err(SendFailure::Fault(f)) => return Attempt::Done(Err(f)),
            Err(SendFailure::Rebind(to)) => return Attempt::Rebind(to),
        };
        if m.one_cast {
            conn.close();
            return Attempt::Done(Ok(TaggedValue::Unit));
        }
        self.confirm(conn, &b, &cx)
    }

    fn confirm(&self, mut conn: Box<dyn Connection>, b: &Binding, cx: &CallContext) -> Attempt {
        let call = cx.call_id;
        let raw = match conn.recv(self.config.confirm_timeout) {
            Ok(r) => r,
            Err(e) if e.is_timeout() => {
                conn.close();
                self.trace.record(Side::Initiator, Some(Phase::Confirmation), ENGINE, "timeout", call, "no reply");
                return Attempt::Resend { redo: true };
            }
            Err(e) => return Attempt::Done(Err(e.into_fault(Phase::Confirmation))),
        };
        conn.close();
        let cx = CallContext { phase: Phase::Confirmation, frame: Some(&raw), ..*cx };
        let tr = Tracer { trace: &self.trace, side: Side::Initiator, phase: Phase::Confirmation, call };
        tr.event(WIRE, "receive", format!("{} bytes", raw.len()));
        let data = match b.stacks.stream.chain_receive(raw.clone(), &cx) {
            Ok(d) => d,
            Err(f) => {
                // Fault replies may bypass the stream handlers.
                if let Ok(r) = unmarshal_reply(&raw) {
                    if let Err(remote) = r.outcome {
                        return Attempt::Done(Err(remote));
                    }
                }
                tr.event(&f.handler, "fault", f.to_string());
                return self.after_confirm_fault(b, None, f, &cx, &tr);
            }
        };
        let reply = match unmarshal_reply(&data) {
            Ok(r) => r,
            Err(e) => return self.after_confirm_fault(b, None, e.into_fault(Phase::Confirmation), &cx, &tr),
        };
        if reply.call_id != call && !reply.call_id.is_nil() {
            let f = Fault::channel(Phase::Confirmation, ENGINE, format!("reply for call {} while awaiting {}", reply.call_id, call));
            return Attempt::Done(Err(f));
        }
        let value = match reply.outcome {
            Err(remote) => return Attempt::Done(Err(remote)),
            Ok(TaggedValue::Message(resp)) => *resp,
            Ok(v) => return Attempt::Done(Ok(v)),
        };
        let resp = value.with_phase(Phase::Confirmation);
        let chain = b.stacks.chain(Phase::Confirmation);
        tr.event(CHANNEL, "enter", format!("{} handlers", chain.len()));
        match run_receive(&chain, resp, &cx, &tr) {
            Ok(inner) => Attempt::Done(innermost_outcome(inner)),
            Err((i, f)) => self.after_confirm_fault(b, Some(i), f, &cx, &tr),
        }
    }

    /// A confirmation fault is offered to the sending handler paired with
    /// the failing receiver, or to every sender when the fault arose below
    /// the call handlers. A clear there resends the call afresh.
    fn after_confirm_fault(&self, b: &Binding, index: Option<usize>, f: Fault, cx: &CallContext, tr: &Tracer) -> Attempt {
        let original = match self.state.original(cx.call_id) {
            Some(o) => o,
            None => return Attempt::Done(Err(f)),
        };
        let candidates = match index {
            Some(i) => b.stacks.associate(Phase::Confirmation, i).into_iter().collect(),
            None => {
                let mut c = b.stacks.chain(Phase::Request);
                c.reverse();
                c
            }
        };
        let rcx = cx.at(Phase::Request);
        for h in candidates {
            h.alert(&f, &rcx);
            tr.event(h.name(), "alert", f.to_string());
            match h.clear(original.clone(), &f, &rcx) {
                Ok(HandlerOutcome::Cleared(d)) | Ok(HandlerOutcome::Rebind { detail: d, .. }) => {
                    tr.event(h.name(), "clear", format!("cleared: {d}"));
                    return Attempt::Resend { redo: false };
                }
                Ok(HandlerOutcome::Next(_)) => {
                    tr.event(h.name(), "clear", "cleared");
                    return Attempt::Resend { redo: false };
                }
                Ok(HandlerOutcome::Unclearable(d)) => tr.event(h.name(), "clear", format!("unclearable: {d}")),
                Err(e) => return Attempt::Done(Err(e.containing(f))),
            }
        }
        Attempt::Done(Err(f))
    }
}

fn innermost_outcome(m: Message) -> Result<TaggedValue, Fault> {
    let mut m = m;
    while m.is_wrapper() && m.method != REPLY_METHOD && m.method != FAULT_METHOD {
        m = unwrap(m).expect("checked wrapper").0;
    }
    match (m.method.as_str(), m.params.first()) {
        (REPLY_METHOD, Some(v)) => Ok(v.clone()),
        (REPLY_METHOD, None) => Ok(TaggedValue::Unit),
        (FAULT_METHOD, Some(TaggedValue::Bytes(b))) => Err(decode_fault(b).unwrap_or_else(|e| e.into_fault(Phase::Confirmation))),
        (other, _) => Err(Fault::channel(Phase::Confirmation, ENGINE, format!("unexpected response `{other}`"))),
    }
}
