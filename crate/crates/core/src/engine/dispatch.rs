//! Name-keyed dispatch to service implementations.

use std::collections::HashMap;
use std::sync::Arc;

use crate::message::{Fault, Interface, Message, MessageError, Signature, TaggedValue};

pub type Method = Box<dyn Fn(&[TaggedValue]) -> Result<TaggedValue, Fault> + Send + Sync>;

/// An object whose methods can be called remotely.
pub trait Service: Send + Sync {
    fn interface(&self) -> Interface;

    fn invoke(&self, method: &str, params: &[TaggedValue]) -> Result<TaggedValue, Fault>;
}

/// Method table built at run time; no generated stubs.
#[derive(Default)]
pub struct Dispatcher {
    interface: Interface,
    methods: HashMap<String, Method>,
}

impl Dispatcher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn method(
        mut self,
        sig: Signature,
        f: impl Fn(&[TaggedValue]) -> Result<TaggedValue, Fault> + Send + Sync + 'static,
    ) -> Self {
        self.methods.insert(sig.name.clone(), Box::new(f));
        self.interface.insert(sig);
        self
    }
}

impl Service for Dispatcher {
    fn interface(&self) -> Interface {
        self.interface.clone()
    }

    fn invoke(&self, method: &str, params: &[TaggedValue]) -> Result<TaggedValue, Fault> {
        match self.methods.get(method) {
            Some(f) => f(params),
            None => Err(Fault::application(MessageError::UnknownMethod(method.to_string()).to_string())),
        }
    }
}

/// Service objects hosted by one acceptor, by object name.
#[derive(Clone, Default)]
pub struct ServiceTable {
    objects: HashMap<String, Arc<dyn Service>>,
}

impl ServiceTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, service: Arc<dyn Service>) {
        self.objects.insert(name.into(), service);
    }

    pub fn with(mut self, name: impl Into<String>, service: Arc<dyn Service>) -> Self {
        self.insert(name, service);
        self
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn Service>> {
        self.objects.get(name)
    }

    /// Invokes the innermost message on its target object.
    pub fn dispatch(&self, m: &Message) -> Result<TaggedValue, Fault> {
        let service = self
            .get(&m.target.object)
            .ok_or_else(|| Fault::application(format!("no object `{}` here", m.target.object)))?;
        service.invoke(&m.method, &m.params)
    }
}

/// Reads parameter `i` as text, or faults naming the method.
pub fn text_param<'a>(params: &'a [TaggedValue], i: usize, method: &str) -> Result<&'a str, Fault> {
    params
        .get(i)
        .and_then(TaggedValue::as_text)
        .ok_or_else(|| Fault::application(format!("{method}: parameter {i} must be text")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::message::{Address, CallId, FaultKind};

    fn echo() -> Dispatcher {
        Dispatcher::new().method(Signature::new("echo", true, false), |p| Ok(p[0].clone()))
    }

    #[test]
    fn dispatch_by_name() {
        let table = ServiceTable::new().with("Echo", Arc::new(echo()));
        let m = Message::new(Address::loopback("s", "Echo"), Address::loopback("c", "C"), "echo", vec![TaggedValue::Int64(4)], CallId(1));
        assert_eq!(table.dispatch(&m).unwrap(), TaggedValue::Int64(4));
        let unknown = Message { method: "nope".into(), ..m.clone() };
        let f = table.dispatch(&unknown).unwrap_err();
        assert_eq!(f.kind, FaultKind::Application);
        assert!(f.detail.contains("unknown method"));
        let elsewhere = Message { target: Address::loopback("s", "Other"), ..m };
        assert!(table.dispatch(&elsewhere).is_err());
    }
}
