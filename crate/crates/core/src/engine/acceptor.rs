//! The serving side: receives calls, dispatches them and replies.

use std::sync::Arc;

use super::config::EngineConfig;
use super::dispatch::ServiceTable;
use super::recovery::{run_send, SendFailure, Tracer};
use super::trace::Trace;
use super::{run_receive, Stacks, CHANNEL, ENGINE, FAULT_METHOD, REPLY_METHOD, WIRE};
use crate::env::Env;
use crate::handler::{CallContext, CallState, Notes, Session, Side};
use crate::marshal::{encode_fault, marshal_reply, unmarshal_message};
use crate::message::{CallId, Fault, Message, Phase, Reply, TaggedValue};
use crate::stream::FrameHandler;

pub struct Acceptor {
    env: Env,
    trace: Arc<Trace>,
    config: EngineConfig,
    stacks: Stacks,
    services: ServiceTable,
    state: CallState,
    session: Session,
}

impl Acceptor {
    pub fn new(env: Env, trace: Arc<Trace>, config: EngineConfig, stacks: Stacks, services: ServiceTable) -> Self {
        Self {
            state: CallState::new(env.clone()),
            env,
            trace,
            config,
            stacks,
            services,
            session: Session::new(),
        }
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn state(&self) -> &CallState {
        &self.state
    }

    pub fn trace(&self) -> &Arc<Trace> {
        &self.trace
    }

    /// Processes one incoming frame; the reply frame, if any, comes back.
    pub fn accept(&self, frame: Vec<u8>) -> Option<Vec<u8>> {
        let notes = Notes::new();
        let unknown = String::new();
        let cx = CallContext {
            call_id: CallId::NIL,
            phase: Phase::Indication,
            side: Side::Acceptor,
            peer: &unknown,
            env: &self.env,
            state: &self.state,
            session: &self.session,
            notes: &notes,
            frame: Some(&frame),
        };
        let tr = Tracer { trace: &self.trace, side: Side::Acceptor, phase: Phase::Indication, call: CallId::NIL };
        tr.event(WIRE, "receive", format!("{} bytes", frame.len()));
        let data = match self.stacks.stream.chain_receive(frame.clone(), &cx) {
            Ok(d) => d,
            Err(f) => {
                tr.event(&f.handler, "fault", f.to_string());
                return self.fault_reply(CallId::NIL, f, &cx);
            }
        };
        let m = match unmarshal_message(&data) {
            Ok(m) => m.with_phase(Phase::Indication),
            Err(e) => {
                let f = e.into_fault(Phase::Indication);
                tr.event(&f.handler, "fault", f.to_string());
                return self.fault_reply(CallId::NIL, f, &cx);
            }
        };
        let call = m.call_id;
        let peer = m.return_address.to_string();
        let cx = CallContext { call_id: call, peer: &peer, ..cx };
        let reply = self.serve(m, &cx);
        self.state.remove_call(call);
        reply
    }

    fn serve(&self, m: Message, cx: &CallContext) -> Option<Vec<u8>> {
        let call = m.call_id;
        let one_cast = m.one_cast;
        let tr = Tracer { trace: &self.trace, side: Side::Acceptor, phase: Phase::Indication, call };
        let chain = self.stacks.chain(Phase::Indication);
        tr.event(CHANNEL, "enter", format!("{} handlers", chain.len()));
        let inner = match run_receive(&chain, m.clone(), cx, &tr) {
            Ok(inner) => inner,
            Err((i, f)) => {
                let by = match self.stacks.associate(Phase::Indication, i) {
                    Some(a) => {
                        a.alert(&f, &cx.at(Phase::Response));
                        a.name().to_string()
                    }
                    None => ENGINE.to_string(),
                };
                tr.event(&by, "propagate", f.to_string());
                return if one_cast { None } else { self.fault_reply(call, f, cx) };
            }
        };
        let outcome = if inner.is_wrapper() && self.services.get(&inner.target.object).is_none_or(|s| s.interface().get(&inner.method).is_none()) {
            Err(Fault::channel(Phase::Indication, ENGINE, format!("no handler here unwraps `{}`", inner.method)))
        } else {
            let r = self.services.dispatch(&inner);
            let detail = match &r {
                Ok(_) => format!("{} ok", inner.method),
                Err(f) => format!("{}: {f}", inner.method),
            };
            tr.event(&inner.target.object, "dispatch", detail);
            r
        };
        if one_cast {
            return None;
        }
        let body = match outcome {
            Ok(v) => (REPLY_METHOD, v),
            Err(f) => match encode_fault(&f) {
                Ok(b) => (FAULT_METHOD, TaggedValue::Bytes(b)),
                Err(e) => return self.fault_reply(call, e.into_fault(Phase::Response), cx),
            },
        };
        let mut resp = Message::new(m.return_address.clone(), m.target.clone(), body.0, vec![body.1], call);
        resp.set_phase(Phase::Response);
        self.respond(resp, cx)
    }

    fn respond(&self, resp: Message, cx: &CallContext) -> Option<Vec<u8>> {
        let call = resp.call_id;
        let cx = CallContext { phase: Phase::Response, frame: None, ..*cx };
        let tr = Tracer { trace: &self.trace, side: Side::Acceptor, phase: Phase::Response, call };
        let chain = self.stacks.chain(Phase::Response);
        tr.event(CHANNEL, "enter", format!("{} handlers", chain.len()));
        let sent = run_send(&chain, resp, false, self.config.scheme, &cx, &tr, |out| {
            let bytes = marshal_reply(&Reply::ok(call, TaggedValue::Message(Box::new(out.clone())))).map_err(|e| e.into_fault(Phase::Response))?;
            self.stacks.stream.chain_send(bytes, &cx)
        });
        match sent {
            Ok(frame) => {
                tr.event(WIRE, "send", format!("{} bytes", frame.len()));
                Some(frame)
            }
            Err(SendFailure::Fault(f)) => self.fault_reply(call, f, &cx),
            Err(SendFailure::Rebind(_)) => self.fault_reply(call, Fault::channel(Phase::Response, ENGINE, "rebind requested while replying"), &cx),
        }
    }

    /// Fault replies skip the call handlers. They go through the stream
    /// handlers when those accept them, and raw otherwise.
    fn fault_reply(&self, call: CallId, f: Fault, cx: &CallContext) -> Option<Vec<u8>> {
        let raw = match marshal_reply(&Reply::fault(call, f)) {
            Ok(r) => r,
            Err(e) => marshal_reply(&Reply::fault(call, e.into_fault(Phase::Response))).ok()?,
        };
        let cx = CallContext { phase: Phase::Response, ..*cx };
        let frame = self.stacks.stream.chain_send(raw.clone(), &cx).unwrap_or(raw);
        self.trace.record(Side::Acceptor, Some(Phase::Response), WIRE, "send", call, format!("{} bytes, fault reply", frame.len()));
        Some(frame)
    }
}

impl FrameHandler for Acceptor {
    fn handle(&self, frame: Vec<u8>) -> Option<Vec<u8>> {
        self.accept(frame)
    }
}
