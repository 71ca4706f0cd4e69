//! Turns template entries into channel objects for one side of a binding.

use std::str::FromStr;
use std::sync::Arc;

use super::relocation::{AddressLookup, Relocator};
use super::template::{ChannelTemplate, Layer, TemplateEntry};
use crate::engine::Stacks;
use crate::handler::{HandlerSet, Side};
use crate::message::{Fault, Phase};
use crate::services::keyneg::DEFAULT_KEY_TTL_MS;
use crate::services::replay::DEFAULT_WINDOW;
use crate::services::stamp::DEFAULT_SKEW_MS;
use crate::services::{
    AccountLedger, AccountReader, AccountTagger, Checksum, Encryptor, FaultInjector, InjectMode, KeyNegotiator, ReplayDetector,
    SequenceChecker, SequenceIssuer, StampChecker, StampIssuer, UsageLog, UsageLogger,
};
use crate::stream::{StreamHandler, StreamStack};

pub const DEFAULT_PSK: &str = "channelrpc-demo-psk";

/// Handler names whose wrapping needs a peer to unwrap it.
const PAIRED: &[&str] = &["KeyNegotiator", "StampIssuer", "SequenceIssuer", "Accounting", "Encryptor", "Checksum"];

pub fn needs_counterpart(name: &str) -> bool {
    PAIRED.contains(&name)
}

/// Shared resources the channel objects of a process draw on.
#[derive(Clone)]
pub struct Catalog {
    pub psk: Vec<u8>,
    pub usage: Arc<UsageLog>,
    pub ledger: Arc<AccountLedger>,
    pub lookup: Option<Arc<dyn AddressLookup>>,
}

impl Default for Catalog {
    fn default() -> Self {
        Self {
            psk: DEFAULT_PSK.as_bytes().to_vec(),
            usage: Arc::new(UsageLog::new()),
            ledger: Arc::new(AccountLedger::new()),
            lookup: None,
        }
    }
}

fn param<T: FromStr>(e: &TemplateEntry, key: &str, default: T) -> Result<T, Fault> {
    match e.params.get(key) {
        None => Ok(default),
        Some(v) => v.parse().map_err(|_| config_fault(e, format!("bad value `{v}` for {key}"))),
    }
}

fn config_fault(e: &TemplateEntry, why: impl Into<String>) -> Fault {
    Fault::channel(Phase::Request, e.name.clone(), why.into())
}

pub fn parse_phase(s: &str) -> Option<Phase> {
    [Phase::Request, Phase::Indication, Phase::Response, Phase::Confirmation]
        .into_iter()
        .find(|p| p.name().eq_ignore_ascii_case(s))
}

fn sending(side: Side) -> Phase {
    match side {
        Side::Initiator => Phase::Request,
        Side::Acceptor => Phase::Response,
    }
}

fn receiving(side: Side) -> Phase {
    match side {
        Side::Initiator => Phase::Confirmation,
        Side::Acceptor => Phase::Indication,
    }
}

impl Catalog {
    pub fn with_lookup(mut self, lookup: Arc<dyn AddressLookup>) -> Self {
        self.lookup = Some(lookup);
        self
    }

    /// Handler set for a call entry, or `None` when nothing is deployed on
    /// this side.
    pub fn call_set(&self, e: &TemplateEntry, side: Side) -> Result<Option<HandlerSet>, Fault> {
        let optional = !e.required;
        let set = HandlerSet::new(e.key());
        let (out, inn) = (sending(side), receiving(side));
        let set = match e.name.as_str() {
            "KeyNegotiator" => {
                let h = Arc::new(KeyNegotiator::new(self.psk.clone(), param(e, "ttl_ms", DEFAULT_KEY_TTL_MS)?));
                set.with(out, h.clone()).with(inn, h)
            }
            "StampIssuer" => {
                let checker = StampChecker::new(param(e, "skew", DEFAULT_SKEW_MS)?).optional(optional);
                set.with(out, Arc::new(StampIssuer)).with(inn, Arc::new(checker))
            }
            "SequenceIssuer" => set
                .with(out, Arc::new(SequenceIssuer::new()))
                .with(inn, Arc::new(SequenceChecker::new().optional(optional))),
            "ReplayDetector" => set.with(inn, Arc::new(ReplayDetector::new(param(e, "window", DEFAULT_WINDOW)?))),
            "UsageLogger" => set.with(out, Arc::new(UsageLogger::new(Arc::clone(&self.usage)))),
            "Accounting" => match side {
                Side::Initiator => {
                    let account = e.params.get("account").cloned().unwrap_or_else(|| "default".into());
                    set.with(Phase::Request, Arc::new(AccountTagger::new(account)))
                }
                Side::Acceptor => set.with(Phase::Indication, Arc::new(AccountReader::new(Arc::clone(&self.ledger)).optional(optional))),
            },
            "Relocator" => {
                if side == Side::Acceptor {
                    return Ok(None);
                }
                let lookup = self.lookup.clone().ok_or_else(|| config_fault(e, "no relocation manager configured"))?;
                let service = e.params.get("service").cloned().unwrap_or_else(|| super::answerer::ANSWERER_OBJECT.into());
                set.with(Phase::Request, Arc::new(Relocator::new(service, lookup)))
            }
            "FaultInjector" => {
                let phase = e.params.get("phase").map(String::as_str).unwrap_or("request");
                let phase = parse_phase(phase).ok_or_else(|| config_fault(e, format!("unknown phase `{phase}`")))?;
                if phase != out && phase != inn {
                    return Ok(None);
                }
                let mode: InjectMode = e.params.get("mode").map_or(Ok(InjectMode::Always), |m| m.parse().map_err(|w: String| config_fault(e, w)))?;
                let name = e.params.get("name").cloned().unwrap_or_else(|| "FaultInjector".into());
                let clears = param(e, "clears", false)?;
                let h = Arc::new(FaultInjector::new(name, phase, mode).clearing(clears));
                // A clearing receiver also sits in the sending phase so it can
                // act as its own associate.
                let set = set.with(phase, h.clone());
                if clears && phase == inn { set.with(out, h) } else { set }
            }
            other => return Err(config_fault(e, format!("unknown call handler `{other}`"))),
        };
        Ok(set.is_populated().then_some(set))
    }

    pub fn stream_handler(&self, e: &TemplateEntry) -> Result<Arc<dyn StreamHandler>, Fault> {
        match e.name.as_str() {
            "Encryptor" => Ok(Arc::new(Encryptor::new())),
            "Checksum" => Ok(Arc::new(Checksum)),
            other => Err(config_fault(e, format!("unknown stream handler `{other}`"))),
        }
    }

    /// Fresh channel objects for `side` of a binding using `template`.
    pub fn build(&self, template: &ChannelTemplate, side: Side) -> Result<Stacks, Fault> {
        let mut calls = Vec::new();
        let mut streams = Vec::new();
        for e in &template.entries {
            match e.layer {
                Layer::Call => calls.extend(self.call_set(e, side)?),
                Layer::Stream => streams.push(self.stream_handler(e)?),
            }
        }
        Ok(Stacks::new(calls, StreamStack::new(streams)))
    }
}
