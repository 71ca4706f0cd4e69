//! Naming service: where a service lives and what channel it demands.

use std::collections::HashMap;
use std::sync::Mutex;

use super::template::ChannelTemplate;
use super::{not_found, RemoteObject};
use crate::engine::dispatch::{text_param, Service};
use crate::message::{Address, Fault, Interface, Signature, TaggedValue};

pub const REGISTRY_OBJECT: &str = "Registry";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistryRecord {
    pub name: String,
    pub address: Address,
    /// The acceptor's requirements, handed to clients at lookup.
    pub template: ChannelTemplate,
    pub epoch: i64,
}

impl RegistryRecord {
    fn to_value(&self) -> TaggedValue {
        TaggedValue::List(vec![
            TaggedValue::text(self.name.clone()),
            TaggedValue::text(self.address.to_string()),
            TaggedValue::text(self.template.to_string()),
            TaggedValue::Int64(self.epoch),
        ])
    }

    fn from_value(v: &TaggedValue) -> Result<Self, Fault> {
        let bad = || Fault::application(format!("malformed registry record {v}"));
        let l = v.as_list().ok_or_else(bad)?;
        let text = |i: usize| l.get(i).and_then(TaggedValue::as_text).ok_or_else(bad);
        Ok(Self {
            name: text(0)?.to_string(),
            address: text(1)?.parse().map_err(|_| bad())?,
            template: text(2)?.parse().map_err(|_| bad())?,
            epoch: l.get(3).and_then(TaggedValue::as_i64).ok_or_else(bad)?,
        })
    }
}

#[derive(Debug, Default)]
pub struct Registry {
    records: Mutex<HashMap<String, RegistryRecord>>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores the record under the next epoch for its name.
    pub fn rebind(&self, name: &str, address: Address, template: ChannelTemplate) -> RegistryRecord {
        let mut records = self.records.lock().unwrap();
        let epoch = records.get(name).map_or(0, |r| r.epoch) + 1;
        let r = RegistryRecord { name: name.to_string(), address, template, epoch };
        records.insert(name.to_string(), r.clone());
        r
    }

    pub fn lookup(&self, name: &str) -> Option<RegistryRecord> {
        self.records.lock().unwrap().get(name).cloned()
    }
}

impl Service for Registry {
    fn interface(&self) -> Interface {
        Interface::new().with(Signature::new("rebind", true, true)).with(Signature::new("lookup", true, true))
    }

    fn invoke(&self, method: &str, params: &[TaggedValue]) -> Result<TaggedValue, Fault> {
        let name = text_param(params, 0, method)?;
        match method {
            "rebind" => {
                let address = text_param(params, 1, method)?.parse().map_err(|e| Fault::application(format!("rebind: {e}")))?;
                let template = text_param(params, 2, method)?
                    .parse()
                    .map_err(|e| Fault::application(format!("rebind: {e}")))?;
                Ok(TaggedValue::Int64(self.rebind(name, address, template).epoch))
            }
            "lookup" => self.lookup(name).map(|r| r.to_value()).ok_or_else(|| not_found(name)),
            _ => Err(Fault::application(format!("unknown method `{method}`"))),
        }
    }
}

/// Reaches a remote registry over an identity channel.
pub struct RegistryClient {
    remote: RemoteObject,
}

impl RegistryClient {
    pub fn new(remote: RemoteObject) -> Self {
        Self { remote }
    }

    pub fn rebind(&self, name: &str, address: &Address, template: &ChannelTemplate) -> Result<i64, Fault> {
        let v = self.remote.call(
            "rebind",
            vec![TaggedValue::text(name), TaggedValue::text(address.to_string()), TaggedValue::text(template.to_string())],
        )?;
        v.as_i64().ok_or_else(|| Fault::application(format!("rebind returned {v}")))
    }

    pub fn lookup(&self, name: &str) -> Result<RegistryRecord, Fault> {
        RegistryRecord::from_value(&self.remote.call("lookup", vec![TaggedValue::text(name)])?)
    }
}
