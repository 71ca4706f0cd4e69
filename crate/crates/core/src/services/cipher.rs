//! XOR keystream cipher and the Encryptor/Decryptor stream handler.
//!
//! This is toy cryptography: it shows where encryption sits in a channel,
//! not how to make it strong. Do not use it to protect anything.
//!
//! Keystream block `i` is FNV-1a 64 over `key || be64(i)`, taken big-endian.
//! An encrypted frame is `"ODPX" || key-id u64 || counter-start u64 || body`.

use std::collections::HashMap;
use std::sync::Mutex;

use crate::fnv::Fnv1a64;
use crate::handler::{CallContext, Session, Side};
use crate::message::{Fault, TaggedValue};
use crate::stream::StreamHandler;

pub const CIPHER_TAG: &[u8; 4] = b"ODPX";
const CIPHER_HEADER_LEN: usize = 20;
/// Acceptor counters start here so the two directions never share blocks.
const ACCEPTOR_COUNTER_BASE: u64 = 1 << 63;

pub const ENCRYPTOR: &str = "Encryptor";
pub const DECRYPTOR: &str = "Decryptor";
/// Note recording which key decrypted the incoming frame.
pub const NOTE_KEY_ID: &str = "Decryptor.key_id";
/// Note recording that the incoming frame was not encrypted.
pub const NOTE_PLAINTEXT: &str = "Decryptor.plaintext";
/// Session entry naming the key the initiator currently sends with.
pub const CURRENT_KEY: &str = "key.current";

pub fn keystream_block(key: &[u8], i: u64) -> u64 {
    Fnv1a64::new().update(key).update(&i.to_be_bytes()).finish()
}

/// XORs `data` with the keystream starting at block `counter`. Involutive.
pub fn apply_keystream(key: &[u8], counter: u64, data: &mut [u8]) {
    for (n, chunk) in data.chunks_mut(8).enumerate() {
        let block = keystream_block(key, counter.wrapping_add(n as u64)).to_be_bytes();
        for (b, k) in chunk.iter_mut().zip(block) {
            *b ^= k;
        }
    }
}

fn blocks(len: usize) -> u64 {
    len.div_ceil(8) as u64
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionKey {
    pub id: u64,
    pub key: [u8; 32],
    pub established_ms: i64,
    pub ttl_ms: i64,
}

impl SessionKey {
    pub fn is_expired(&self, now_ms: i64) -> bool {
        now_ms - self.established_ms > self.ttl_ms
    }

    fn slot(id: u64) -> String {
        format!("key.{id:016x}")
    }

    fn to_value(&self) -> TaggedValue {
        TaggedValue::List(vec![
            TaggedValue::Int64(self.id as i64),
            TaggedValue::Bytes(self.key.to_vec()),
            TaggedValue::Int64(self.established_ms),
            TaggedValue::Int64(self.ttl_ms),
        ])
    }

    fn from_value(v: &TaggedValue) -> Option<Self> {
        let l = v.as_list()?;
        Some(Self {
            id: l.first()?.as_i64()? as u64,
            key: l.get(1)?.as_bytes()?.try_into().ok()?,
            established_ms: l.get(2)?.as_i64()?,
            ttl_ms: l.get(3)?.as_i64()?,
        })
    }

    /// Stores the key where decryptors can find it by id.
    pub fn store(&self, session: &Session) {
        session.put(Self::slot(self.id), self.to_value());
    }

    pub fn load(session: &Session, id: u64) -> Option<Self> {
        Self::from_value(&session.get(&Self::slot(id))?)
    }

    /// Stores the key and makes it the one the initiator sends with.
    pub fn install(&self, session: &Session) {
        self.store(session);
        session.put(CURRENT_KEY, TaggedValue::Int64(self.id as i64));
    }

    pub fn current(session: &Session) -> Option<Self> {
        let id = session.get(CURRENT_KEY)?.as_i64()? as u64;
        Self::load(session, id)
    }

    /// Forgets the initiator's current key, forcing renegotiation.
    pub fn retire_current(session: &Session) {
        if let Some(TaggedValue::Int64(id)) = session.remove(CURRENT_KEY) {
            session.remove(&Self::slot(id as u64));
        }
    }
}

/// Encrypts outgoing frames with the binding's session key and decrypts
/// incoming ones. Frames sent before any key exists travel in the clear.
#[derive(Debug, Default)]
pub struct Encryptor {
    counters: Mutex<HashMap<u64, u64>>,
}

impl Encryptor {
    pub fn new() -> Self {
        Self::default()
    }

    fn reserve(&self, key_id: u64, side: Side, len: usize) -> u64 {
        let base = match side {
            Side::Initiator => 0,
            Side::Acceptor => ACCEPTOR_COUNTER_BASE,
        };
        let mut counters = self.counters.lock().unwrap();
        let next = counters.entry(key_id).or_insert(base);
        let start = *next;
        *next = next.wrapping_add(blocks(len));
        start
    }

    fn sending_key(&self, cx: &CallContext) -> Option<u64> {
        match cx.side {
            Side::Initiator => cx.session.get(CURRENT_KEY)?.as_i64().map(|i| i as u64),
            Side::Acceptor => cx.notes.get(NOTE_KEY_ID)?.as_i64().map(|i| i as u64),
        }
    }
}

impl StreamHandler for Encryptor {
    fn name(&self) -> &str {
        ENCRYPTOR
    }

    fn receive_name(&self) -> &str {
        DECRYPTOR
    }

    fn send(&self, data: Vec<u8>, cx: &CallContext) -> Result<Vec<u8>, Fault> {
        let Some(id) = self.sending_key(cx) else {
            return Ok(data);
        };
        let key = SessionKey::load(cx.session, id).ok_or_else(|| cx.fault(ENCRYPTOR, "session key missing"))?;
        if key.is_expired(cx.env.now_ms()) {
            return Err(cx.fault(ENCRYPTOR, "key-expired"));
        }
        let counter = self.reserve(id, cx.side, data.len());
        let mut out = Vec::with_capacity(CIPHER_HEADER_LEN + data.len());
        out.extend_from_slice(CIPHER_TAG);
        out.extend_from_slice(&id.to_be_bytes());
        out.extend_from_slice(&counter.to_be_bytes());
        let body = out.len();
        out.extend_from_slice(&data);
        apply_keystream(&key.key, counter, &mut out[body..]);
        Ok(out)
    }

    fn receive(&self, mut data: Vec<u8>, cx: &CallContext) -> Result<Vec<u8>, Fault> {
        if !data.starts_with(CIPHER_TAG) {
            cx.notes.put(NOTE_PLAINTEXT, TaggedValue::Bool(true));
            return Ok(data);
        }
        if data.len() < CIPHER_HEADER_LEN {
            return Err(cx.fault(DECRYPTOR, "truncated cipher header"));
        }
        let id = u64::from_be_bytes(data[4..12].try_into().unwrap());
        let counter = u64::from_be_bytes(data[12..20].try_into().unwrap());
        let key = SessionKey::load(cx.session, id).ok_or_else(|| cx.fault(DECRYPTOR, format!("unknown key {id:016x}")))?;
        let mut body = data.split_off(CIPHER_HEADER_LEN);
        apply_keystream(&key.key, counter, &mut body);
        cx.notes.put(NOTE_KEY_ID, TaggedValue::Int64(id as i64));
        Ok(body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_zero_of_zero_key() {
        // FNV-1a 64 of 40 zero bytes, from an independent implementation.
        assert_eq!(keystream_block(&[0u8; 32], 0), 0x40d6_9e0c_f0f6_5c45);
    }

    #[test]
    fn keystream_involution() {
        let key = [7u8; 32];
        let plain: Vec<u8> = (0..=200).collect();
        let mut x = plain.clone();
        apply_keystream(&key, 5, &mut x);
        assert_ne!(x, plain);
        apply_keystream(&key, 5, &mut x);
        assert_eq!(x, plain);
    }

    #[test]
    fn first_byte_is_high_byte_of_block() {
        let key = [1u8; 32];
        let mut x = [0u8; 1];
        apply_keystream(&key, 0, &mut x);
        assert_eq!(x[0], keystream_block(&key, 0).to_be_bytes()[0]);
    }

    #[test]
    fn empty_stays_empty() {
        let mut x: [u8; 0] = [];
        apply_keystream(&[0; 32], 0, &mut x);
    }

    #[test]
    fn key_round_trips_through_session() {
        let s = Session::new();
        let k = SessionKey { id: 9, key: [3; 32], established_ms: 10, ttl_ms: 100 };
        k.install(&s);
        assert_eq!(SessionKey::current(&s), Some(k.clone()));
        assert!(!k.is_expired(110));
        assert!(k.is_expired(111));
        SessionKey::retire_current(&s);
        assert_eq!(SessionKey::current(&s), None);
        assert_eq!(SessionKey::load(&s, 9), None);
    }
}
