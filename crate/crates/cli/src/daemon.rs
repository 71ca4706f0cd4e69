//! Long-running processes and the one-shot client, over real sockets.

use std::sync::Arc;

use anyhow::{Context, Result};
use channelrpc::binding::{
    Answerer, ChannelTemplate, ManagerClient, Node, Registry, RegistryClient, RelocationManager, ANSWERER_OBJECT, REGISTRY_OBJECT, RELOCATION_OBJECT,
};
use channelrpc::engine::{ServiceTable, Trace};
use channelrpc::env::Env;
use channelrpc::message::{Address, Fault, TaggedValue, TransportKind};
use channelrpc::stream::{Listener, Network};

/// Accepts a full address, or `host:port` meaning TCP to `object`.
pub fn parse_address(s: &str, object: &str) -> Result<Address> {
    if s.contains("://") {
        return s.parse().with_context(|| format!("address `{s}`"));
    }
    let (host, port) = s.rsplit_once(':').with_context(|| format!("address `{s}` needs a port"))?;
    let port = port.parse().with_context(|| format!("port in `{s}`"))?;
    Ok(Address::new(TransportKind::Tcp, host, port, object))
}

/// A node on the real network. Its trace also goes to `sink` when given.
pub fn node(sink: Option<Box<dyn std::io::Write + Send>>) -> Node {
    let env = Env::from_env();
    let trace = match sink {
        Some(s) => Trace::with_sink(env.clone(), s),
        None => Trace::new(env.clone()),
    };
    Node::new(env, Network::new(), Arc::new(trace))
}

pub fn start_registry(node: &Node, listen: &Address) -> Result<Listener> {
    let services = ServiceTable::new().with(REGISTRY_OBJECT, Arc::new(Registry::new()));
    let (l, _) = node.serve(&listen.with_object(REGISTRY_OBJECT), &ChannelTemplate::default(), services)?;
    Ok(l)
}

pub fn start_relocation_manager(node: &Node, listen: &Address) -> Result<Listener> {
    let services = ServiceTable::new().with(RELOCATION_OBJECT, Arc::new(RelocationManager::new()));
    let (l, _) = node.serve(&listen.with_object(RELOCATION_OBJECT), &ChannelTemplate::default(), services)?;
    Ok(l)
}

/// Serves an Answerer, registers it under `name` and, when a relocation
/// manager is given, tells it where the Answerer now lives.
pub fn start_server(node: &Node, name: &str, listen: &Address, template: &ChannelTemplate, registry: &Address, manager: Option<&Address>) -> Result<Listener> {
    let registry = RegistryClient::new(node.remote(registry.with_object(REGISTRY_OBJECT))?);
    let services = ServiceTable::new().with(ANSWERER_OBJECT, Arc::new(Answerer::new()));
    let (l, _, _) = node.serve_registered(&registry, name, &listen.with_object(ANSWERER_OBJECT), template, services)?;
    if let Some(m) = manager {
        ManagerClient::new(node.remote(m.with_object(RELOCATION_OBJECT))?).notify(ANSWERER_OBJECT, l.address())?;
    }
    Ok(l)
}

/// Looks `name` up in the registry, binds to it and makes one call.
pub fn call(node: &Node, registry: &Address, name: &str, method: &str, args: &[String], template: &ChannelTemplate) -> Result<TaggedValue, Fault> {
    let registry = RegistryClient::new(node.remote(registry.with_object(REGISTRY_OBJECT))?);
    let client = node.bind_named(&registry, name, template)?.with_interface(Answerer::declared());
    client.call(method, args.iter().map(|a| TaggedValue::text(a.as_str())).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn addresses() {
        let a = parse_address("127.0.0.1:7000", "Registry").unwrap();
        assert_eq!(a.to_string(), "tcp://127.0.0.1:7000/Registry");
        let b = parse_address("udp://h:9/X", "Registry").unwrap();
        assert_eq!(b.kind, TransportKind::Udp);
        assert!(parse_address("nohost", "X").is_err());
    }

    #[test]
    fn serve_and_call_over_tcp() {
        let n = node(None);
        let any = Address::new(TransportKind::Tcp, "127.0.0.1", 0, "x");
        let reg = start_registry(&n, &any).unwrap();
        let mgr = start_relocation_manager(&n, &any).unwrap();
        let secure: ChannelTemplate = crate::config::bundled_template("secure").unwrap().parse().unwrap();
        let _srv = start_server(&n, "AnswererServer", &any, &secure, reg.address(), Some(mgr.address())).unwrap();
        let v = call(&n, reg.address(), "AnswererServer", "answer", &["hello".into()], &secure).unwrap();
        assert_eq!(v, TaggedValue::text("You said:hello"));
        let f = call(&n, reg.address(), "Missing", "answer", &[], &secure).unwrap_err();
        assert!(f.detail.contains("not-found"));
    }
}
