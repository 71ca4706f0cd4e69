//! Tri-partite bindings: a relocation manager that tracks where servers
//! live, and the Relocator channel object that asks it after a transport
//! failure.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use super::{not_found, RemoteObject};
use crate::engine::dispatch::{text_param, Service};
use crate::handler::{CallContext, Handler, HandlerOutcome, Outcome};
use crate::message::{Address, Fault, FaultKind, Interface, Message, Signature, TaggedValue};

pub const RELOCATION_OBJECT: &str = "RelocationManager";

/// Latest known address per service name.
#[derive(Debug, Default)]
pub struct RelocationManager {
    addresses: Mutex<HashMap<String, Address>>,
}

impl RelocationManager {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn notify(&self, name: &str, address: Address) {
        self.addresses.lock().unwrap().insert(name.to_string(), address);
    }

    pub fn query(&self, name: &str) -> Option<Address> {
        self.addresses.lock().unwrap().get(name).cloned()
    }
}

impl Service for RelocationManager {
    fn interface(&self) -> Interface {
        Interface::new().with(Signature::new("notify", true, true)).with(Signature::new("query", true, true))
    }

    fn invoke(&self, method: &str, params: &[TaggedValue]) -> Result<TaggedValue, Fault> {
        let name = text_param(params, 0, method)?;
        match method {
            "notify" => {
                let addr = text_param(params, 1, method)?;
                let addr = addr.parse().map_err(|e| Fault::application(format!("notify: {e}")))?;
                self.notify(name, addr);
                Ok(TaggedValue::Unit)
            }
            "query" => self.query(name).map(|a| TaggedValue::text(a.to_string())).ok_or_else(|| not_found(name)),
            _ => Err(Fault::application(format!("unknown method `{method}`"))),
        }
    }
}

/// Where to ask for a service's current address.
pub trait AddressLookup: Send + Sync {
    fn lookup(&self, name: &str) -> Result<Address, Fault>;
}

impl AddressLookup for RelocationManager {
    fn lookup(&self, name: &str) -> Result<Address, Fault> {
        self.query(name).ok_or_else(|| not_found(name))
    }
}

/// Reaches a remote relocation manager over its own binding.
pub struct ManagerClient {
    remote: RemoteObject,
}

impl ManagerClient {
    pub fn new(remote: RemoteObject) -> Self {
        Self { remote }
    }

    pub fn notify(&self, name: &str, address: &Address) -> Result<(), Fault> {
        self.remote.call("notify", vec![TaggedValue::text(name), TaggedValue::text(address.to_string())]).map(|_| ())
    }

    pub fn query(&self, name: &str) -> Result<Address, Fault> {
        let v = self.remote.call("query", vec![TaggedValue::text(name)])?;
        v.as_text()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Fault::application(format!("query returned {v}")))
    }
}

impl AddressLookup for ManagerClient {
    fn lookup(&self, name: &str) -> Result<Address, Fault> {
        self.query(name)
    }
}

/// Passes calls through; on a transport fault, asks the manager where the
/// service went and has the engine rebuild the channel towards it.
pub struct Relocator {
    service: String,
    lookup: Arc<dyn AddressLookup>,
}

impl Relocator {
    pub const NAME: &'static str = "Relocator";

    pub fn new(service: impl Into<String>, lookup: Arc<dyn AddressLookup>) -> Self {
        Self { service: service.into(), lookup }
    }
}

impl Handler for Relocator {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn todo(&self, m: Message, _cx: &CallContext) -> Outcome {
        Ok(HandlerOutcome::Next(m))
    }

    fn clear(&self, m: Message, f: &Fault, _cx: &CallContext) -> Outcome {
        if f.root().kind != FaultKind::Transport {
            return Ok(HandlerOutcome::Unclearable("not a transport fault".into()));
        }
        match self.lookup.lookup(&self.service) {
            Ok(to) => {
                let detail = format!("{} now at {to}", self.service);
                let mut message = m;
                message.target = to.with_object(message.target.object.clone());
                Ok(HandlerOutcome::Rebind { message, detail })
            }
            Err(e) => Ok(HandlerOutcome::Unclearable(format!("manager: {e}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Env;
    use crate::handler::{CallScope, Side};
    use crate::message::{CallId, Phase};
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn notify_then_query() {
        let m = RelocationManager::new();
        assert_eq!(m.query("A"), None);
        m.notify("A", "loopback://one:1/A".parse().unwrap());
        m.notify("A", "loopback://two:2/A".parse().unwrap());
        assert_eq!(m.query("A").unwrap().host, "two");
        let f = m.invoke("query", &[TaggedValue::text("B")]).unwrap_err();
        assert!(f.detail.starts_with("not-found"));
    }

    struct Counting(AtomicUsize, Option<Address>);

    impl AddressLookup for Counting {
        fn lookup(&self, name: &str) -> Result<Address, Fault> {
            self.0.fetch_add(1, Ordering::SeqCst);
            self.1.clone().ok_or_else(|| not_found(name))
        }
    }

    #[test]
    fn consults_manager_only_for_transport_faults() {
        let lookup = Arc::new(Counting(AtomicUsize::new(0), Some("loopback://new:0/X".parse().unwrap())));
        let r = Relocator::new("Answerer", lookup.clone());
        let scope = CallScope::new(Env::deterministic(1));
        let cx = scope.cx(CallId(1), Phase::Request, Side::Initiator);
        let m = Message::new("loopback://old:0/Answerer".parse().unwrap(), Address::loopback("c", "C"), "answer", vec![], CallId(1));
        let o = r.clear(m.clone(), &Fault::channel(Phase::Request, "X", "boom"), &cx).unwrap();
        assert!(matches!(o, HandlerOutcome::Unclearable(_)));
        assert_eq!(lookup.0.load(Ordering::SeqCst), 0);
        match r.clear(m, &Fault::transport(Phase::Request, "refused"), &cx).unwrap() {
            HandlerOutcome::Rebind { message, .. } => assert_eq!(message.target.to_string(), "loopback://new:0/Answerer"),
            other => panic!("{other:?}"),
        }
        assert_eq!(lookup.0.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn unknown_service_is_unclearable() {
        let r = Relocator::new("Answerer", Arc::new(Counting(AtomicUsize::new(0), None)));
        let scope = CallScope::new(Env::deterministic(1));
        let cx = scope.cx(CallId(1), Phase::Request, Side::Initiator);
        let m = Message::new(Address::loopback("old", "Answerer"), Address::loopback("c", "C"), "answer", vec![], CallId(1));
        assert!(matches!(r.clear(m, &Fault::transport(Phase::Request, "x"), &cx).unwrap(), HandlerOutcome::Unclearable(_)));
    }
}
