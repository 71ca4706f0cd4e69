//! Call and reply containers, and the wrap/unwrap algebra every channel
//! object operates on.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MessageError {
    #[error("message `{0}` is not a wrapper: last parameter is not a message")]
    NotAWrapper(String),
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error("invalid address `{0}`: {1}")]
    InvalidAddress(String, &'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TransportKind {
    Loopback,
    Tcp,
    Udp,
}

impl TransportKind {
    pub fn code(self) -> u8 {
        match self {
            TransportKind::Loopback => 0,
            TransportKind::Tcp => 1,
            TransportKind::Udp => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(TransportKind::Loopback),
            1 => Some(TransportKind::Tcp),
            2 => Some(TransportKind::Udp),
            _ => None,
        }
    }

    pub fn scheme(self) -> &'static str {
        match self {
            TransportKind::Loopback => "loopback",
            TransportKind::Tcp => "tcp",
            TransportKind::Udp => "udp",
        }
    }
}

/// Where an object lives: `kind://host:port/object-name`.
///
/// Loopback hosts are opaque labels naming an in-process listener; they are
/// never resolved.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Address {
    pub kind: TransportKind,
    pub host: String,
    pub port: u16,
    pub object: String,
}

impl Address {
    pub fn new(kind: TransportKind, host: impl Into<String>, port: u16, object: impl Into<String>) -> Self {
        Self { kind, host: host.into(), port, object: object.into() }
    }

    pub fn loopback(host: impl Into<String>, object: impl Into<String>) -> Self {
        Self::new(TransportKind::Loopback, host, 0, object)
    }

    /// `host:port`, the part that identifies a listener.
    pub fn endpoint(&self) -> String {
        format!("{}:{}", self.host, self.port)
    }

    pub fn with_object(&self, object: impl Into<String>) -> Self {
        Self { object: object.into(), ..self.clone() }
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}://{}:{}/{}", self.kind.scheme(), self.host, self.port, self.object)
    }
}

impl FromStr for Address {
    type Err = MessageError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |why| MessageError::InvalidAddress(s.to_string(), why);
        let (scheme, rest) = s.split_once("://").ok_or_else(|| bad("missing `://`"))?;
        let kind = match scheme {
            "loopback" => TransportKind::Loopback,
            "tcp" => TransportKind::Tcp,
            "udp" => TransportKind::Udp,
            _ => return Err(bad("unknown transport")),
        };
        let (hostport, object) = rest.split_once('/').ok_or_else(|| bad("missing object name"))?;
        if object.is_empty() {
            return Err(bad("empty object name"));
        }
        let (host, port) = match hostport.rsplit_once(':') {
            Some((h, p)) => (h, p.parse::<u16>().map_err(|_| bad("port must be 0-65535"))?),
            None => (hostport, 0),
        };
        if host.is_empty() {
            return Err(bad("empty host"));
        }
        Ok(Address::new(kind, host, port, object))
    }
}

/// 128-bit call identifier. Zero is reserved for "unknown call".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct CallId(pub u128);

impl CallId {
    pub const NIL: CallId = CallId(0);

    pub fn to_bytes(self) -> [u8; 16] {
        self.0.to_be_bytes()
    }

    pub fn from_bytes(b: [u8; 16]) -> Self {
        CallId(u128::from_be_bytes(b))
    }

    pub fn is_nil(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for CallId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Request = 1,
    Indication = 2,
    Response = 3,
    Confirmation = 4,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Request, Phase::Indication, Phase::Response, Phase::Confirmation];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Phase::Request),
            2 => Some(Phase::Indication),
            3 => Some(Phase::Response),
            4 => Some(Phase::Confirmation),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Request => "REQUEST",
            Phase::Indication => "INDICATION",
            Phase::Response => "RESPONSE",
            Phase::Confirmation => "CONFIRMATION",
        }
    }

    /// Sending phases wrap, receiving phases unwrap.
    pub fn is_send(self) -> bool {
        matches!(self, Phase::Request | Phase::Response)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaggedValue {
    Unit,
    Bool(bool),
    Int64(i64),
    Float64(f64),
    Text(String),
    Bytes(Vec<u8>),
    List(Vec<TaggedValue>),
    Message(Box<Message>),
}

impl TaggedValue {
    pub fn tag(&self) -> u8 {
        match self {
            TaggedValue::Unit => 0,
            TaggedValue::Bool(_) => 1,
            TaggedValue::Int64(_) => 2,
            TaggedValue::Float64(_) => 3,
            TaggedValue::Text(_) => 4,
            TaggedValue::Bytes(_) => 5,
            TaggedValue::List(_) => 6,
            TaggedValue::Message(_) => 7,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            TaggedValue::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            TaggedValue::Int64(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            TaggedValue::Bytes(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_message(&self) -> Option<&Message> {
        match self {
            TaggedValue::Message(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[TaggedValue]> {
        match self {
            TaggedValue::List(l) => Some(l),
            _ => None,
        }
    }

    pub fn text(s: impl Into<String>) -> Self {
        TaggedValue::Text(s.into())
    }
}

impl fmt::Display for TaggedValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaggedValue::Unit => f.write_str("()"),
            TaggedValue::Bool(b) => write!(f, "{b}"),
            TaggedValue::Int64(v) => write!(f, "{v}"),
            TaggedValue::Float64(v) => write!(f, "{v}"),
            TaggedValue::Text(s) => f.write_str(s),
            TaggedValue::Bytes(b) => {
                for x in b {
                    write!(f, "{x:02x}")?;
                }
                Ok(())
            }
            TaggedValue::List(l) => {
                f.write_str("[")?;
                for (i, v) in l.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str("]")
            }
            TaggedValue::Message(m) => write!(f, "<{}>", m.method),
        }
    }
}

/// A call in flight. Wrapping nests the previous message as the last
/// parameter of a new one invoking the counterpart's method.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub target: Address,
    pub return_address: Address,
    pub method: String,
    pub params: Vec<TaggedValue>,
    pub call_id: CallId,
    pub one_cast: bool,
    pub phase: Phase,
}

impl Message {
    pub fn new(
        target: Address,
        return_address: Address,
        method: impl Into<String>,
        params: Vec<TaggedValue>,
        call_id: CallId,
    ) -> Self {
        Self {
            target,
            return_address,
            method: method.into(),
            params,
            call_id,
            one_cast: false,
            phase: Phase::Request,
        }
    }

    /// True when the last parameter carries a message.
    pub fn is_wrapper(&self) -> bool {
        matches!(self.params.last(), Some(TaggedValue::Message(_)))
    }

    /// Number of wrapper layers around the innermost message.
    pub fn depth(&self) -> usize {
        match self.params.last() {
            Some(TaggedValue::Message(inner)) => 1 + inner.depth(),
            _ => 0,
        }
    }

    /// Sets the phase on this message and every nested one.
    pub fn set_phase(&mut self, phase: Phase) {
        self.phase = phase;
        for p in &mut self.params {
            p.set_phase(phase);
        }
    }

    pub fn with_phase(mut self, phase: Phase) -> Self {
        self.set_phase(phase);
        self
    }

    /// Method and object names non-empty; nested messages carry the same phase.
    pub fn is_well_formed(&self) -> bool {
        !self.method.is_empty()
            && !self.target.object.is_empty()
            && !self.return_address.object.is_empty()
            && self.params.iter().all(|p| p.is_well_formed_in(self.phase))
    }
}

impl TaggedValue {
    fn set_phase(&mut self, phase: Phase) {
        match self {
            TaggedValue::Message(m) => m.set_phase(phase),
            TaggedValue::List(l) => l.iter_mut().for_each(|v| v.set_phase(phase)),
            _ => {}
        }
    }

    fn is_well_formed_in(&self, phase: Phase) -> bool {
        match self {
            TaggedValue::Message(m) => m.phase == phase && m.is_well_formed(),
            TaggedValue::List(l) => l.iter().all(|v| v.is_well_formed_in(phase)),
            _ => true,
        }
    }
}

/// Encapsulates `inner` as the final parameter of a message invoking
/// `outer_method`. Addresses, call id, one-cast flag and phase are inherited.
pub fn wrap(outer_method: &str, inner: Message, extra: Vec<TaggedValue>) -> Message {
    let mut params = extra;
    let target = inner.target.clone();
    let return_address = inner.return_address.clone();
    let call_id = inner.call_id;
    let one_cast = inner.one_cast;
    let phase = inner.phase;
    params.push(TaggedValue::Message(Box::new(inner)));
    Message {
        target,
        return_address,
        method: outer_method.to_string(),
        params,
        call_id,
        one_cast,
        phase,
    }
}

/// Inverse of [`wrap`]: the contained message and the parameters before it.
pub fn unwrap(m: Message) -> Result<(Message, Vec<TaggedValue>), MessageError> {
    let mut params = m.params;
    match params.pop() {
        Some(TaggedValue::Message(inner)) => Ok((*inner, params)),
        _ => Err(MessageError::NotAWrapper(m.method)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FaultKind {
    Application,
    Channel,
    Transport,
    /// Internal control signal; never marshalled.
    Cleared,
    Unclearable,
    Rebind,
}

impl FaultKind {
    pub fn code(self) -> u8 {
        match self {
            FaultKind::Application => 0,
            FaultKind::Channel => 1,
            FaultKind::Transport => 2,
            FaultKind::Cleared => 3,
            FaultKind::Unclearable => 4,
            FaultKind::Rebind => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => FaultKind::Application,
            1 => FaultKind::Channel,
            2 => FaultKind::Transport,
            3 => FaultKind::Cleared,
            4 => FaultKind::Unclearable,
            5 => FaultKind::Rebind,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            FaultKind::Application => "application",
            FaultKind::Channel => "channel",
            FaultKind::Transport => "transport",
            FaultKind::Cleared => "cleared",
            FaultKind::Unclearable => "unclearable",
            FaultKind::Rebind => "rebind",
        }
    }
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Structured failure. A fault raised while handling another fault
/// contains it, the way a remote exception wraps the local one.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} fault at {origin}{}: {detail}", if handler.is_empty() { String::new() } else { format!(" in {handler}") })]
pub struct Fault {
    pub kind: FaultKind,
    pub origin: Phase,
    pub handler: String,
    pub detail: String,
    pub contained: Option<Box<Fault>>,
}

impl Fault {
    pub fn new(kind: FaultKind, origin: Phase, handler: impl Into<String>, detail: impl Into<String>) -> Self {
        Self {
            kind,
            origin,
            handler: handler.into(),
            detail: detail.into(),
            contained: None,
        }
    }

    pub fn channel(origin: Phase, handler: impl Into<String>, detail: impl Into<String>) -> Self {
        Self::new(FaultKind::Channel, origin, handler, detail)
    }

    pub fn transport(origin: Phase, detail: impl Into<String>) -> Self {
        Self::new(FaultKind::Transport, origin, "", detail)
    }

    pub fn application(detail: impl Into<String>) -> Self {
        Self::new(FaultKind::Application, Phase::Indication, "", detail)
    }

    pub fn containing(mut self, inner: Fault) -> Self {
        self.contained = Some(Box::new(inner));
        self
    }

    /// Length of the containment chain, counting this fault.
    pub fn depth(&self) -> usize {
        1 + self.contained.as_ref().map_or(0, |c| c.depth())
    }

    /// The innermost contained fault.
    pub fn root(&self) -> &Fault {
        match &self.contained {
            Some(c) => c.root(),
            None => self,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub call_id: CallId,
    pub outcome: Result<TaggedValue, Fault>,
}

impl Reply {
    pub fn ok(call_id: CallId, value: TaggedValue) -> Self {
        Self { call_id, outcome: Ok(value) }
    }

    pub fn fault(call_id: CallId, fault: Fault) -> Self {
        Self { call_id, outcome: Err(fault) }
    }
}

/// Declared shape of a remote method, as an interface definition gives it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    pub name: String,
    pub returns_result: bool,
    pub declares_faults: bool,
}

impl Signature {
    pub fn new(name: impl Into<String>, returns_result: bool, declares_faults: bool) -> Self {
        Self { name: name.into(), returns_result, declares_faults }
    }

    /// Neither a result nor a fault flows back, so nothing need be awaited.
    pub fn is_one_cast(&self) -> bool {
        !self.returns_result && !self.declares_faults
    }
}

/// Method signatures of a remote interface, keyed by method name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Interface {
    methods: BTreeMap<String, Signature>,
}

impl Interface {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, sig: Signature) -> Self {
        self.insert(sig);
        self
    }

    pub fn insert(&mut self, sig: Signature) {
        self.methods.insert(sig.name.clone(), sig);
    }

    pub fn get(&self, method: &str) -> Option<&Signature> {
        self.methods.get(method)
    }

    pub fn merge(&mut self, other: &Interface) {
        for sig in other.methods.values() {
            self.insert(sig.clone());
        }
    }
}

/// One-cast inference: an explicit flag, or a signature with no result and
/// no declared faults.
pub fn is_one_cast(m: &Message, interface: &Interface) -> Result<bool, MessageError> {
    let sig = interface
        .get(&m.method)
        .ok_or_else(|| MessageError::UnknownMethod(m.method.clone()))?;
    Ok(m.one_cast || sig.is_one_cast())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(method: &str) -> Message {
        Message::new(
            Address::loopback("srv", "Answerer"),
            Address::loopback("cli", "client-1"),
            method,
            vec![TaggedValue::text("hi")],
            CallId(42),
        )
    }

    #[test]
    fn wrap_places_inner_last() {
        let m = msg("query");
        let w = wrap("stampedAt", m.clone(), vec![TaggedValue::Int64(1234)]);
        assert_eq!(w.method, "stampedAt");
        assert_eq!(w.params[0], TaggedValue::Int64(1234));
        assert_eq!(w.params[1].as_message(), Some(&m));
        assert_eq!(w.call_id, m.call_id);
        assert_eq!(w.target, m.target);
        assert_eq!(w.one_cast, m.one_cast);
    }

    #[test]
    fn unwrap_inverts_wrap() {
        let m = msg("query");
        assert_eq!(unwrap(wrap("x", m.clone(), vec![])).unwrap(), (m.clone(), vec![]));
        let extra = vec![TaggedValue::Bool(true)];
        assert_eq!(unwrap(wrap("s", m.clone(), extra.clone())).unwrap(), (m, extra));
    }

    #[test]
    fn triple_nesting() {
        let m = msg("query");
        let w = wrap("a", wrap("b", m.clone(), vec![]), vec![]);
        assert_eq!(w.depth(), 2);
        let (b, _) = unwrap(w).unwrap();
        let (inner, _) = unwrap(b).unwrap();
        assert_eq!(inner, m);
    }

    #[test]
    fn unwrap_plain_message_fails() {
        assert_eq!(unwrap(msg("query")), Err(MessageError::NotAWrapper("query".into())));
    }

    #[test]
    fn one_cast_inference() {
        let iface = Interface::new()
            .with(Signature::new("answer", true, true))
            .with(Signature::new("note", false, false))
            .with(Signature::new("alarm", false, true));
        assert!(!is_one_cast(&msg("answer"), &iface).unwrap());
        assert!(is_one_cast(&msg("note"), &iface).unwrap());
        assert!(!is_one_cast(&msg("alarm"), &iface).unwrap());
        let mut explicit = msg("answer");
        explicit.one_cast = true;
        assert!(is_one_cast(&explicit, &iface).unwrap());
        assert!(matches!(is_one_cast(&msg("nope"), &iface), Err(MessageError::UnknownMethod(_))));
    }

    #[test]
    fn phase_codes_fixed() {
        let codes: Vec<u8> = Phase::ALL.iter().map(|p| p.code()).collect();
        assert_eq!(codes, vec![1, 2, 3, 4]);
        for p in Phase::ALL {
            assert_eq!(Phase::from_code(p.code()), Some(p));
        }
        assert_eq!(Phase::from_code(0), None);
        assert_eq!(Phase::from_code(5), None);
    }

    #[test]
    fn address_parse_and_display() {
        let a: Address = "tcp://127.0.0.1:4000/AnswererServer".parse().unwrap();
        assert_eq!(a.kind, TransportKind::Tcp);
        assert_eq!(a.port, 4000);
        assert_eq!(a.to_string(), "tcp://127.0.0.1:4000/AnswererServer");
        let l: Address = "loopback://srv/Answerer".parse().unwrap();
        assert_eq!(l.port, 0);
        assert!("tcp://h:70000/x".parse::<Address>().is_err());
        assert!("tcp://h:1/".parse::<Address>().is_err());
        assert!("ftp://h:1/x".parse::<Address>().is_err());
    }

    #[test]
    fn set_phase_reaches_nested() {
        let w = wrap("a", msg("q"), vec![]).with_phase(Phase::Indication);
        assert_eq!(w.params[0].as_message().unwrap().phase, Phase::Indication);
        assert!(w.is_well_formed());
    }

    #[test]
    fn fault_containment() {
        let inner = Fault::channel(Phase::Request, "B", "boom");
        let outer = Fault::channel(Phase::Request, "A", "undo failed").containing(inner.clone());
        assert_eq!(outer.depth(), 2);
        assert_eq!(outer.root(), &inner);
        assert!(outer.to_string().contains("in A"));
    }
}
