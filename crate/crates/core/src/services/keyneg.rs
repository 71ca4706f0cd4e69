//! Session-key negotiation carried on ordinary calls.
//!
//! When the initiator has no key, it wraps the call as
//! `negotiateKey(Nc, confirm, inner)`. The acceptor checks `confirm`
//! against its own pre-shared secret, picks `Ns`, derives the key and
//! answers with `keyAccepted(Ns, confirm', reply)`. Both sides derive key
//! bytes `8j..8j+8` as FNV-1a 64 of `psk || Nc || Ns || j`, `j = 0..3`.
//! The negotiating exchange itself travels unencrypted.

use super::cipher::{SessionKey, DECRYPTOR, ENCRYPTOR, NOTE_PLAINTEXT};
use crate::fnv::fnv1a64_concat;
use crate::handler::{next, CallContext, Handler, HandlerOutcome, Outcome};
use crate::message::{unwrap, wrap, Fault, Message, Phase, TaggedValue};

pub const NEGOTIATE_METHOD: &str = "negotiateKey";
pub const ACCEPT_METHOD: &str = "keyAccepted";
pub const DEFAULT_KEY_TTL_MS: i64 = 600_000;

pub fn derive_key(psk: &[u8], nc: &[u8], ns: &[u8]) -> [u8; 32] {
    let mut key = [0u8; 32];
    for j in 0..4u8 {
        let block = fnv1a64_concat(&[psk, nc, ns, &[j]]);
        key[8 * j as usize..8 * j as usize + 8].copy_from_slice(&block.to_be_bytes());
    }
    key
}

pub fn key_id(nc: &[u8], ns: &[u8]) -> u64 {
    fnv1a64_concat(&[nc, ns])
}

fn initiator_confirm(psk: &[u8], nc: &[u8]) -> i64 {
    fnv1a64_concat(&[psk, nc, b"initiator"]) as i64
}

fn acceptor_confirm(key: &[u8]) -> i64 {
    fnv1a64_concat(&[key, b"acceptor"]) as i64
}

/// Negotiates and renews the binding's session key. Deployed in all four
/// phases; clears `key-expired` faults by retiring the key so the redo
/// negotiates a fresh one.
#[derive(Debug)]
pub struct KeyNegotiator {
    psk: Vec<u8>,
    pub ttl_ms: i64,
}

impl KeyNegotiator {
    pub const NAME: &'static str = "KeyNegotiator";

    pub fn new(psk: impl Into<Vec<u8>>, ttl_ms: i64) -> Self {
        Self { psk: psk.into(), ttl_ms }
    }

    fn bytes16(v: Option<&TaggedValue>, what: &str, cx: &CallContext) -> Result<Vec<u8>, Fault> {
        v.and_then(TaggedValue::as_bytes)
            .filter(|b| b.len() == 16)
            .map(<[u8]>::to_vec)
            .ok_or_else(|| cx.fault(Self::NAME, format!("{what} must be 16 bytes")))
    }

    fn request(&self, m: Message, cx: &CallContext) -> Outcome {
        if SessionKey::current(cx.session).is_some() {
            return next(m);
        }
        let nc = cx.env.random_bytes::<16>().to_vec();
        cx.state.put(cx.call_id, Self::NAME, TaggedValue::Bytes(nc.clone()));
        let confirm = initiator_confirm(&self.psk, &nc);
        next(wrap(NEGOTIATE_METHOD, m, vec![TaggedValue::Bytes(nc), TaggedValue::Int64(confirm)]))
    }

    fn indication(&self, m: Message, cx: &CallContext) -> Outcome {
        if m.method != NEGOTIATE_METHOD {
            if cx.notes.contains(NOTE_PLAINTEXT) {
                return Err(cx.fault(Self::NAME, "unencrypted call without a session key"));
            }
            return next(m);
        }
        let (inner, extra) = unwrap(m).map_err(|e| cx.fault(Self::NAME, e.to_string()))?;
        let nc = Self::bytes16(extra.first(), "initiator nonce", cx)?;
        if extra.get(1).and_then(TaggedValue::as_i64) != Some(initiator_confirm(&self.psk, &nc)) {
            return Err(cx.fault(Self::NAME, "key confirmation mismatch"));
        }
        let ns = cx.env.random_bytes::<16>().to_vec();
        let key = SessionKey {
            id: key_id(&nc, &ns),
            key: derive_key(&self.psk, &nc, &ns),
            established_ms: cx.env.now_ms(),
            ttl_ms: self.ttl_ms,
        };
        key.store(cx.session);
        cx.state.put(cx.call_id, Self::NAME, TaggedValue::List(vec![TaggedValue::Bytes(ns), TaggedValue::Bytes(key.key.to_vec())]));
        next(inner)
    }

    fn response(&self, m: Message, cx: &CallContext) -> Outcome {
        let Some(TaggedValue::List(v)) = cx.state.get(cx.call_id, Self::NAME) else {
            return next(m);
        };
        let confirm = acceptor_confirm(v[1].as_bytes().unwrap_or_default());
        next(wrap(ACCEPT_METHOD, m, vec![v[0].clone(), TaggedValue::Int64(confirm)]))
    }

    fn confirmation(&self, m: Message, cx: &CallContext) -> Outcome {
        if m.method != ACCEPT_METHOD {
            return next(m);
        }
        let (inner, extra) = unwrap(m).map_err(|e| cx.fault(Self::NAME, e.to_string()))?;
        let nc = match cx.state.get(cx.call_id, Self::NAME) {
            Some(TaggedValue::Bytes(nc)) => nc,
            _ => return Err(cx.fault(Self::NAME, "key accepted for a call that did not negotiate")),
        };
        let ns = Self::bytes16(extra.first(), "acceptor nonce", cx)?;
        let key = derive_key(&self.psk, &nc, &ns);
        if extra.get(1).and_then(TaggedValue::as_i64) != Some(acceptor_confirm(&key)) {
            return Err(cx.fault(Self::NAME, "key confirmation mismatch"));
        }
        SessionKey { id: key_id(&nc, &ns), key, established_ms: cx.env.now_ms(), ttl_ms: self.ttl_ms }.install(cx.session);
        next(inner)
    }
}

impl Handler for KeyNegotiator {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn todo(&self, m: Message, cx: &CallContext) -> Outcome {
        match cx.phase {
            Phase::Request => self.request(m, cx),
            Phase::Indication => self.indication(m, cx),
            Phase::Response => self.response(m, cx),
            Phase::Confirmation => self.confirmation(m, cx),
        }
    }

    fn clear(&self, _m: Message, f: &Fault, cx: &CallContext) -> Outcome {
        let stale = (f.handler == ENCRYPTOR && f.detail == "key-expired") || f.handler == DECRYPTOR;
        if !stale {
            return Ok(HandlerOutcome::Unclearable(format!("{} clears only key faults", Self::NAME)));
        }
        SessionKey::retire_current(cx.session);
        Ok(HandlerOutcome::Cleared("session key retired for renegotiation".into()))
    }

    fn undo(&self, m: Message, _f: &Fault, _cx: &CallContext) -> Outcome {
        if matches!(m.method.as_str(), NEGOTIATE_METHOD | ACCEPT_METHOD) && m.is_wrapper() {
            return next(unwrap(m).expect("checked wrapper").0);
        }
        next(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Env;
    use crate::handler::{CallScope, Side};
    use crate::message::CallId;
    use crate::services::testing::call;

    fn out(o: Outcome) -> Message {
        match o.unwrap() {
            HandlerOutcome::Next(m) => m,
            other => panic!("unexpected {other:?}"),
        }
    }

    /// Runs one negotiating exchange; returns the negotiated key, if any.
    fn exchange(client: &CallScope, server: &CallScope, cpsk: &[u8], spsk: &[u8]) -> Result<SessionKey, Fault> {
        let (c, s) = (KeyNegotiator::new(cpsk, 1_000), KeyNegotiator::new(spsk, 1_000));
        let id = client.env.new_call_id();
        let w = out(c.todo(call(id.0), &client.cx(id, Phase::Request, Side::Initiator)));
        assert_eq!(w.method, NEGOTIATE_METHOD);
        let inner = s.todo(w, &server.cx(id, Phase::Indication, Side::Acceptor))?;
        assert_eq!(inner, HandlerOutcome::Next(call(id.0)));
        let reply = out(s.todo(call(id.0), &server.cx(id, Phase::Response, Side::Acceptor)));
        out(c.todo(reply, &client.cx(id, Phase::Confirmation, Side::Initiator)));
        let key = SessionKey::current(&client.session).expect("installed");
        assert_eq!(SessionKey::load(&server.session, key.id).map(|k| k.key), Some(key.key));
        Ok(key)
    }

    #[test]
    fn both_sides_derive_the_same_key() {
        let client = CallScope::new(Env::deterministic(1));
        let server = CallScope::new(Env::deterministic(2));
        exchange(&client, &server, b"psk", b"psk").unwrap();
    }

    #[test]
    fn derivation_matches_formula() {
        let k = derive_key(b"p", &[1; 16], &[2; 16]);
        let j0 = fnv1a64_concat(&[b"p", &[1; 16], &[2; 16], &[0]]);
        assert_eq!(k[..8], j0.to_be_bytes());
        assert_ne!(k[8..16], k[..8]);
    }

    #[test]
    fn differing_psk_is_detected() {
        let client = CallScope::new(Env::deterministic(1));
        let server = CallScope::new(Env::deterministic(2));
        let f = exchange(&client, &server, b"one", b"two").unwrap_err();
        assert_eq!(f.handler, "KeyNegotiator");
    }

    #[test]
    fn renegotiation_yields_fresh_key() {
        let client = CallScope::new(Env::deterministic(1));
        let server = CallScope::new(Env::deterministic(2));
        let first = exchange(&client, &server, b"psk", b"psk").unwrap();
        let f = Fault::channel(Phase::Request, ENCRYPTOR, "key-expired");
        let cx = client.cx(CallId(99), Phase::Request, Side::Initiator);
        let o = KeyNegotiator::new(*b"psk", 1_000).clear(call(99), &f, &cx).unwrap();
        assert!(matches!(o, HandlerOutcome::Cleared(_)));
        let second = exchange(&client, &server, b"psk", b"psk").unwrap();
        assert_ne!(first.key, second.key);
    }

    #[test]
    fn plaintext_without_key_rejected_when_decrypting() {
        let server = CallScope::new(Env::deterministic(2));
        server.notes.put(NOTE_PLAINTEXT, TaggedValue::Bool(true));
        let cx = server.cx(CallId(1), Phase::Indication, Side::Acceptor);
        assert!(KeyNegotiator::new(*b"psk", 1_000).todo(call(1), &cx).is_err());
    }

    #[test]
    fn other_faults_unclearable() {
        let client = CallScope::new(Env::deterministic(1));
        let cx = client.cx(CallId(1), Phase::Request, Side::Initiator);
        let f = Fault::transport(Phase::Request, "refused");
        let o = KeyNegotiator::new(*b"psk", 1_000).clear(call(1), &f, &cx).unwrap();
        assert!(matches!(o, HandlerOutcome::Unclearable(_)));
    }
}
