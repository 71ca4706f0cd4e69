//! Bindings between clients and servers: templates and their negotiation,
//! the naming registry, relocation and the channel object catalog.

pub mod answerer;
pub mod catalog;
pub mod registry;
pub mod relocation;
pub mod template;

use std::sync::Arc;

pub use answerer::{Answerer, ANSWERER_OBJECT};
pub use catalog::{needs_counterpart, Catalog};
pub use registry::{Registry, RegistryClient, RegistryRecord, REGISTRY_OBJECT};
pub use relocation::{AddressLookup, ManagerClient, RelocationManager, Relocator, RELOCATION_OBJECT};
pub use template::{negotiate, ChannelTemplate, Layer, TemplateEntry, TemplateError};

use crate::engine::{Acceptor, EngineConfig, Initiator, ServiceTable, Stacks, StackBuilder, Trace};
use crate::env::Env;
use crate::handler::Side;
use crate::message::{Address, Fault, Phase, TaggedValue};
use crate::stream::{Listener, Network};

pub(crate) fn not_found(name: &str) -> Fault {
    Fault::application(format!("not-found: {name}"))
}

/// An object reached over an identity channel, for infrastructure calls.
pub struct RemoteObject {
    initiator: Initiator,
}

impl RemoteObject {
    pub fn new(env: Env, net: Network, trace: Arc<Trace>, address: Address) -> Result<Self, Fault> {
        let builder: StackBuilder = Arc::new(|_| Ok(Stacks::default()));
        let config = EngineConfig { resend_budget: 0, rebind_budget: 0, ..EngineConfig::default() };
        Ok(Self { initiator: Initiator::new(env, net, trace, config, address, builder)? })
    }

    pub fn call(&self, method: &str, params: Vec<TaggedValue>) -> Result<TaggedValue, Fault> {
        self.initiator.call(method, params)
    }
}

/// Everything a process needs to take part in bindings.
#[derive(Clone)]
pub struct Node {
    pub env: Env,
    pub net: Network,
    pub trace: Arc<Trace>,
    pub catalog: Catalog,
}

impl Node {
    pub fn new(env: Env, net: Network, trace: Arc<Trace>) -> Self {
        Self { env, net, trace, catalog: Catalog::default() }
    }

    pub fn remote(&self, address: Address) -> Result<RemoteObject, Fault> {
        RemoteObject::new(self.env.clone(), self.net.clone(), Arc::clone(&self.trace), address)
    }

    /// Serves `services` at `address` behind channels built from `template`.
    pub fn serve(&self, address: &Address, template: &ChannelTemplate, services: ServiceTable) -> Result<(Listener, Arc<Acceptor>), Fault> {
        let config = EngineConfig::from_settings(&template.engine).map_err(|e| Fault::channel(Phase::Indication, "engine", e))?;
        let stacks = self.catalog.build(template, Side::Acceptor)?;
        let acceptor = Arc::new(Acceptor::new(self.env.clone(), Arc::clone(&self.trace), config, stacks, services));
        let listener = self.net.listen(address, acceptor.clone()).map_err(|e| e.into_fault(Phase::Indication))?;
        Ok((listener, acceptor))
    }

    /// Serves and registers under `name`, returning the registered epoch.
    pub fn serve_registered(
        &self,
        registry: &RegistryClient,
        name: &str,
        address: &Address,
        template: &ChannelTemplate,
        services: ServiceTable,
    ) -> Result<(Listener, Arc<Acceptor>, i64), Fault> {
        let (listener, acceptor) = self.serve(address, template, services)?;
        let epoch = registry.rebind(name, listener.address(), template)?;
        Ok((listener, acceptor, epoch))
    }

    /// Binds to `target` with the stack agreed between both templates.
    pub fn bind(&self, target: Address, client: &ChannelTemplate, server: &ChannelTemplate) -> Result<Initiator, Fault> {
        let agreed = negotiate(client, server, needs_counterpart).map_err(|e| Fault::channel(Phase::Request, "negotiate", e.to_string()))?;
        let config = EngineConfig::from_settings(&agreed.engine).map_err(|e| Fault::channel(Phase::Request, "engine", e))?;
        let catalog = self.catalog.clone();
        let builder: StackBuilder = Arc::new(move |side| catalog.build(&agreed, side));
        Initiator::new(self.env.clone(), self.net.clone(), Arc::clone(&self.trace), config, target, builder)
    }

    /// Looks `name` up and binds to it using the registered requirements.
    pub fn bind_named(&self, registry: &RegistryClient, name: &str, client: &ChannelTemplate) -> Result<Initiator, Fault> {
        let record = registry.lookup(name)?;
        self.bind(record.address, client, &record.template)
    }
}
