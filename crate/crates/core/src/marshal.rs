//! The marshalling object: canonical bytes for messages and replies.
//!
//! Frame layout (all integers big-endian):
//!
//! ```text
//! magic "ODPC" | version 0x01 | phase u8 | flags u8 | call-id [16] | payload-len u32 | payload
//! flags: bit0 one-cast, bit1 reply
//! ```
//!
//! Message payload: `target, return, method, param-count u32, params...`.
//! An address is `transport u8, host text, port u16, object text`; inside a
//! nested message the transport byte `0xFF` alone means "same as the
//! enclosing message". Text and bytes are `u32 length + bytes`.
//!
//! A nested message (tag 7) is `flags u8 (bit0 one-cast, bit1 explicit
//! call-id), [call-id], target, return, method, count, params`; its phase is
//! the frame's phase.
//!
//! Reply payload: `outcome u8` then either a tagged value (outcome 0) or a
//! fault (outcome 1): `kind u8, origin u8, handler text, detail text,
//! contained u8 [, fault]`.

use thiserror::Error;

use crate::message::{Address, CallId, Fault, FaultKind, Message, Phase, Reply, TaggedValue, TransportKind};

pub const MAGIC: &[u8; 4] = b"ODPC";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 27;
pub const FLAG_ONE_CAST: u8 = 0b01;
pub const FLAG_REPLY: u8 = 0b10;

const INHERIT: u8 = 0xFF;
const NESTED_ONE_CAST: u8 = 0b01;
const NESTED_CALL_ID: u8 = 0b10;
const MAX_NESTING: usize = 64;

/// Handler name faults from this module carry.
pub const MARSHAL: &str = "marshal";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MarshalError {
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("fault kind `cleared` is an internal signal and cannot be marshalled")]
    ClearedOnWire,
}

impl MarshalError {
    pub fn into_fault(self, phase: Phase) -> Fault {
        Fault::channel(phase, MARSHAL, self.to_string())
    }
}

fn malformed(why: impl Into<String>) -> MarshalError {
    MarshalError::MalformedFrame(why.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub phase: Phase,
    pub flags: u8,
    pub call_id: CallId,
    pub payload_len: u32,
}

impl FrameHeader {
    pub fn is_reply(&self) -> bool {
        self.flags & FLAG_REPLY != 0
    }

    pub fn is_one_cast(&self) -> bool {
        self.flags & FLAG_ONE_CAST != 0
    }
}

/// Result of a partial unmarshal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Peek {
    pub method: String,
    pub call_id: CallId,
    pub one_cast: bool,
    /// Offset just past the method field.
    pub consumed: usize,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend_from_slice(b);
    }
    fn text(&mut self, s: &str) {
        self.bytes(s.as_bytes());
    }

    fn address(&mut self, a: &Address, enclosing: Option<&Address>) {
        if enclosing == Some(a) {
            self.u8(INHERIT);
            return;
        }
        self.u8(a.kind.code());
        self.text(&a.host);
        self.u16(a.port);
        self.text(&a.object);
    }

    fn value(&mut self, v: &TaggedValue, enclosing: &Message) {
        self.u8(v.tag());
        match v {
            TaggedValue::Unit => {}
            TaggedValue::Bool(b) => self.u8(u8::from(*b)),
            TaggedValue::Int64(i) => self.0.extend_from_slice(&i.to_be_bytes()),
            TaggedValue::Float64(f) => self.0.extend_from_slice(&f.to_bits().to_be_bytes()),
            TaggedValue::Text(s) => self.text(s),
            TaggedValue::Bytes(b) => self.bytes(b),
            TaggedValue::List(items) => {
                self.u32(items.len() as u32);
                for item in items {
                    self.value(item, enclosing);
                }
            }
            TaggedValue::Message(m) => self.nested(m, enclosing),
        }
    }

    fn nested(&mut self, m: &Message, enclosing: &Message) {
        let mut flags = 0;
        if m.one_cast {
            flags |= NESTED_ONE_CAST;
        }
        if m.call_id != enclosing.call_id {
            flags |= NESTED_CALL_ID;
        }
        self.u8(flags);
        if flags & NESTED_CALL_ID != 0 {
            self.0.extend_from_slice(&m.call_id.to_bytes());
        }
        self.body(m, Some(enclosing));
    }

    fn body(&mut self, m: &Message, enclosing: Option<&Message>) {
        self.address(&m.target, enclosing.map(|e| &e.target));
        self.address(&m.return_address, enclosing.map(|e| &e.return_address));
        self.text(&m.method);
        self.u32(m.params.len() as u32);
        for p in &m.params {
            self.value(p, m);
        }
    }

    fn fault(&mut self, f: &Fault) -> Result<(), MarshalError> {
        if f.kind == FaultKind::Cleared {
            return Err(MarshalError::ClearedOnWire);
        }
        self.u8(f.kind.code());
        self.u8(f.origin.code());
        self.text(&f.handler);
        self.text(&f.detail);
        match &f.contained {
            Some(inner) => {
                self.u8(1);
                self.fault(inner)
            }
            None => {
                self.u8(0);
                Ok(())
            }
        }
    }
}

fn frame(phase: Phase, flags: u8, call_id: CallId, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(phase.code());
    out.push(flags);
    out.extend_from_slice(&call_id.to_bytes());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(payload);
    out
}

pub fn marshal_message(m: &Message) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.body(m, None);
    let flags = if m.one_cast { FLAG_ONE_CAST } else { 0 };
    frame(m.phase, flags, m.call_id, &w.0)
}

pub fn marshal_reply(r: &Reply) -> Result<Vec<u8>, MarshalError> {
    let mut w = Writer(Vec::new());
    match &r.outcome {
        Ok(v) => {
            w.u8(0);
            // A reply value has no enclosing message; nested messages in it
            // are encoded against a placeholder that never matches.
            let placeholder = reply_placeholder(r.call_id);
            w.value(v, &placeholder);
        }
        Err(f) => {
            w.u8(1);
            w.fault(f)?;
        }
    }
    Ok(frame(Phase::Response, FLAG_REPLY, r.call_id, &w.0))
}

/// Canonical encoding of a fault on its own, for carrying one as bytes.
pub fn encode_fault(f: &Fault) -> Result<Vec<u8>, MarshalError> {
    let mut w = Writer(Vec::new());
    w.fault(f)?;
    Ok(w.0)
}

pub fn decode_fault(bytes: &[u8]) -> Result<Fault, MarshalError> {
    let mut r = Reader::new(bytes, 0);
    let f = r.fault(0)?;
    r.finish()?;
    Ok(f)
}

fn reply_placeholder(call_id: CallId) -> Message {
    let none = Address::new(TransportKind::Loopback, "", 0, "");
    Message {
        target: none.clone(),
        return_address: none,
        method: String::new(),
        params: Vec::new(),
        call_id,
        one_cast: false,
        phase: Phase::Response,
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], pos: usize) -> Self {
        Self { buf, pos }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], MarshalError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| malformed("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, MarshalError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, MarshalError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, MarshalError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, MarshalError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn bytes(&mut self) -> Result<Vec<u8>, MarshalError> {
        let n = self.u32()? as usize;
        Ok(self.take(n)?.to_vec())
    }
    fn text(&mut self) -> Result<String, MarshalError> {
        String::from_utf8(self.bytes()?).map_err(|_| malformed("text is not UTF-8"))
    }
    fn call_id(&mut self) -> Result<CallId, MarshalError> {
        Ok(CallId::from_bytes(self.take(16)?.try_into().unwrap()))
    }

    fn address(&mut self, enclosing: Option<&Address>) -> Result<Address, MarshalError> {
        let code = self.u8()?;
        if code == INHERIT {
            return enclosing.cloned().ok_or_else(|| malformed("inherited address at top level"));
        }
        let kind = TransportKind::from_code(code).ok_or_else(|| malformed(format!("transport code {code}")))?;
        let host = self.text()?;
        let port = self.u16()?;
        let object = self.text()?;
        Ok(Address { kind, host, port, object })
    }

    fn value(&mut self, enclosing: &Message, depth: usize) -> Result<TaggedValue, MarshalError> {
        if depth > MAX_NESTING {
            return Err(malformed("nesting too deep"));
        }
        Ok(match self.u8()? {
            0 => TaggedValue::Unit,
            1 => match self.u8()? {
                0 => TaggedValue::Bool(false),
                1 => TaggedValue::Bool(true),
                b => return Err(malformed(format!("bool byte {b}"))),
            },
            2 => TaggedValue::Int64(self.u64()? as i64),
            3 => TaggedValue::Float64(f64::from_bits(self.u64()?)),
            4 => TaggedValue::Text(self.text()?),
            5 => TaggedValue::Bytes(self.bytes()?),
            6 => {
                let n = self.u32()? as usize;
                let mut items = Vec::with_capacity(n.min(1024));
                for _ in 0..n {
                    items.push(self.value(enclosing, depth + 1)?);
                }
                TaggedValue::List(items)
            }
            7 => TaggedValue::Message(Box::new(self.nested(enclosing, depth + 1)?)),
            t => return Err(malformed(format!("value tag {t}"))),
        })
    }

    fn nested(&mut self, enclosing: &Message, depth: usize) -> Result<Message, MarshalError> {
        let flags = self.u8()?;
        if flags & !(NESTED_ONE_CAST | NESTED_CALL_ID) != 0 {
            return Err(malformed("nested flags"));
        }
        let call_id = if flags & NESTED_CALL_ID != 0 { self.call_id()? } else { enclosing.call_id };
        let mut m = self.body(Some(enclosing), call_id, enclosing.phase, depth)?;
        m.one_cast = flags & NESTED_ONE_CAST != 0;
        Ok(m)
    }

    fn head(&mut self, enclosing: Option<&Message>) -> Result<(Address, Address, String), MarshalError> {
        let target = self.address(enclosing.map(|e| &e.target))?;
        let return_address = self.address(enclosing.map(|e| &e.return_address))?;
        let method = self.text()?;
        Ok((target, return_address, method))
    }

    fn body(&mut self, enclosing: Option<&Message>, call_id: CallId, phase: Phase, depth: usize) -> Result<Message, MarshalError> {
        let (target, return_address, method) = self.head(enclosing)?;
        let mut m = Message {
            target,
            return_address,
            method,
            params: Vec::new(),
            call_id,
            one_cast: false,
            phase,
        };
        let n = self.u32()? as usize;
        let mut params = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            params.push(self.value(&m, depth)?);
        }
        m.params = params;
        Ok(m)
    }

    fn fault(&mut self, depth: usize) -> Result<Fault, MarshalError> {
        if depth > MAX_NESTING {
            return Err(malformed("fault nesting too deep"));
        }
        let kind = FaultKind::from_code(self.u8()?).ok_or_else(|| malformed("fault kind"))?;
        if kind == FaultKind::Cleared {
            return Err(MarshalError::ClearedOnWire);
        }
        let origin = Phase::from_code(self.u8()?).ok_or_else(|| malformed("fault origin phase"))?;
        let handler = self.text()?;
        let detail = self.text()?;
        let contained = match self.u8()? {
            0 => None,
            1 => Some(Box::new(self.fault(depth + 1)?)),
            b => return Err(malformed(format!("contained flag {b}"))),
        };
        Ok(Fault { kind, origin, handler, detail, contained })
    }

    fn finish(&self) -> Result<(), MarshalError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(malformed("trailing bytes"))
        }
    }
}

/// Validates magic, version and the fixed header fields.
pub fn read_header(b: &[u8]) -> Result<FrameHeader, MarshalError> {
    if b.len() < HEADER_LEN {
        return Err(malformed("truncated header"));
    }
    if &b[..4] != MAGIC {
        return Err(malformed("bad magic"));
    }
    if b[4] != VERSION {
        return Err(malformed(format!("unsupported version {}", b[4])));
    }
    let phase = Phase::from_code(b[5]).ok_or_else(|| malformed(format!("phase byte {}", b[5])))?;
    let flags = b[6];
    if flags & !(FLAG_ONE_CAST | FLAG_REPLY) != 0 {
        return Err(malformed("unknown flags"));
    }
    let call_id = CallId::from_bytes(b[7..23].try_into().unwrap());
    let payload_len = u32::from_be_bytes(b[23..27].try_into().unwrap());
    Ok(FrameHeader { phase, flags, call_id, payload_len })
}

fn checked_payload(b: &[u8]) -> Result<(FrameHeader, &[u8]), MarshalError> {
    let h = read_header(b)?;
    let end = HEADER_LEN + h.payload_len as usize;
    if b.len() < end {
        return Err(malformed("truncated payload"));
    }
    if b.len() > end {
        return Err(malformed("trailing bytes after payload"));
    }
    Ok((h, &b[HEADER_LEN..end]))
}

pub fn unmarshal_message(b: &[u8]) -> Result<Message, MarshalError> {
    let (h, payload) = checked_payload(b)?;
    if h.is_reply() {
        return Err(malformed("reply frame where a message was expected"));
    }
    let mut r = Reader::new(payload, 0);
    let mut m = r.body(None, h.call_id, h.phase, 0)?;
    r.finish()?;
    m.one_cast = h.is_one_cast();
    Ok(m)
}

pub fn unmarshal_reply(b: &[u8]) -> Result<Reply, MarshalError> {
    let (h, payload) = checked_payload(b)?;
    if !h.is_reply() {
        return Err(malformed("message frame where a reply was expected"));
    }
    let mut r = Reader::new(payload, 0);
    let outcome = match r.u8()? {
        0 => Ok(r.value(&reply_placeholder(h.call_id), 0)?),
        1 => Err(r.fault(0)?),
        o => return Err(malformed(format!("outcome byte {o}"))),
    };
    r.finish()?;
    Ok(Reply { call_id: h.call_id, outcome })
}

/// Reads only as far as the method name, leaving parameters undecoded.
pub fn peek_method(b: &[u8]) -> Result<Peek, MarshalError> {
    let h = read_header(b)?;
    if h.is_reply() {
        return Err(malformed("reply frames carry no method"));
    }
    let mut r = Reader::new(b, HEADER_LEN);
    let (_, _, method) = r.head(None)?;
    Ok(Peek {
        method,
        call_id: h.call_id,
        one_cast: h.is_one_cast(),
        consumed: r.pos,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::message::wrap;

    fn answer_call() -> Message {
        Message::new(
            Address::loopback("srv", "AnswererServer"),
            Address::loopback("cli", "client-1"),
            "answer",
            vec![TaggedValue::text("hello")],
            CallId(0x0102),
        )
    }

    #[test]
    fn zero_param_layout() {
        let m = Message::new(Address::loopback("s", "O"), Address::loopback("c", "C"), "m", vec![], CallId(1));
        let b = marshal_message(&m);
        // header + 2 * (1 + 4+1 + 2 + 4+1) + (4+1) + 4
        assert_eq!(b.len(), HEADER_LEN + 2 * 13 + 5 + 4);
        assert_eq!(&b[b.len() - 4..], &[0, 0, 0, 0]);
        assert_eq!(unmarshal_message(&b).unwrap(), m);
    }

    #[test]
    fn deterministic_bytes() {
        assert_eq!(marshal_message(&answer_call()), marshal_message(&answer_call()));
    }

    #[test]
    fn truncated_and_bad_magic() {
        let b = marshal_message(&answer_call());
        assert!(matches!(unmarshal_message(&b[..b.len() - 1]), Err(MarshalError::MalformedFrame(_))));
        assert!(matches!(unmarshal_message(&b[..10]), Err(MarshalError::MalformedFrame(_))));
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(unmarshal_message(&bad), Err(MarshalError::MalformedFrame(_))));
        let mut v2 = b;
        v2[4] = 2;
        assert!(matches!(unmarshal_message(&v2), Err(MarshalError::MalformedFrame(_))));
    }

    #[test]
    fn unit_reply_layout() {
        let b = marshal_reply(&Reply::ok(CallId(9), TaggedValue::Unit)).unwrap();
        assert_eq!(b[6] & FLAG_REPLY, FLAG_REPLY);
        assert_eq!(&b[HEADER_LEN..], &[0, 0]);
    }

    #[test]
    fn nested_fault_round_trip() {
        let f = Fault::channel(Phase::Indication, "StampChecker", "stale")
            .containing(Fault::transport(Phase::Request, "connection refused"));
        let r = Reply::fault(CallId(3), f);
        assert_eq!(unmarshal_reply(&marshal_reply(&r).unwrap()).unwrap(), r);
    }

    #[test]
    fn cleared_never_on_wire() {
        let f = Fault::new(FaultKind::Cleared, Phase::Request, "A", "cleared");
        assert_eq!(marshal_reply(&Reply::fault(CallId(1), f.clone())), Err(MarshalError::ClearedOnWire));
        let nested = Fault::channel(Phase::Request, "B", "x").containing(f);
        assert_eq!(encode_fault(&nested), Err(MarshalError::ClearedOnWire));
    }

    #[test]
    fn peek_answer() {
        let m = answer_call();
        let b = marshal_message(&m);
        let p = peek_method(&b).unwrap();
        assert_eq!((p.method.as_str(), p.call_id, p.one_cast), ("answer", m.call_id, false));
        // Everything past the method field may be missing.
        assert_eq!(peek_method(&b[..p.consumed]).unwrap(), p);
        assert!(peek_method(&b[..p.consumed - 1]).is_err());
    }

    #[test]
    fn peek_rejects_reply() {
        let b = marshal_reply(&Reply::ok(CallId(1), TaggedValue::Unit)).unwrap();
        assert!(peek_method(&b).is_err());
    }

    #[test]
    fn wrapper_shares_addresses_on_wire() {
        let inner = answer_call();
        let plain = marshal_message(&inner);
        let wrapped = marshal_message(&wrap("stampedAt", inner.clone(), vec![TaggedValue::Int64(5)]));
        // The nested copy carries inherit markers instead of two addresses.
        let addr_bytes = 2 * (1 + 4 + 3 + 2 + 4 + 14);
        assert!(wrapped.len() < plain.len() + addr_bytes);
        let back = unmarshal_message(&wrapped).unwrap();
        assert_eq!(back.params[1].as_message().unwrap(), &inner);
    }

    #[test]
    fn explicit_inner_addresses_survive() {
        let inner = answer_call();
        let mut w = wrap("relay", inner, vec![]);
        w.target = Address::loopback("elsewhere", "Relay");
        let back = unmarshal_message(&marshal_message(&w)).unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn received_wrapper_unwraps_like_original() {
        let w = wrap("s", answer_call(), vec![TaggedValue::Bool(true)]);
        let received = unmarshal_message(&marshal_message(&w)).unwrap();
        assert_eq!(crate::message::unwrap(received).unwrap(), crate::message::unwrap(w).unwrap());
    }
}
