//! Scripted runs over the in-process transport.
//!
//! One directive per line, split like a shell command line. Options are
//! written `--key=value`; every other token is positional.
//!
//! ```text
//! seed 7
//! start-daemon registry
//! start-daemon relocmgr
//! start-daemon server Answerer --host=srv --template=secure
//! call first Answerer answer hello --template=secure
//! inject-fault drop --direction=request --nth=1 --at=Answerer
//! relocate-server Answerer elsewhere
//! capture-frame f --of=first
//! resend-frame replay f
//! expect first ok "You said:hello"
//! expect replay rejected ReplayDetector
//! expect trace event Relocator clear
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use channelrpc::binding::{Answerer, ChannelTemplate, ManagerClient, Node, RegistryClient, RelocationManager, Registry, ANSWERER_OBJECT, REGISTRY_OBJECT, RELOCATION_OBJECT};
use channelrpc::engine::{Initiator, ServiceTable, Trace};
use channelrpc::env::Env;
use channelrpc::handler::Side;
use channelrpc::message::{Address, Fault, TaggedValue};
use channelrpc::stream::loopback::{FrameDirection, Injection, InjectionAction};
use channelrpc::stream::{Listener, Network};
use thiserror::Error;

use crate::config::{load_template, resolve_seed};
use crate::render_value;

/// Seed used when neither the script nor the caller names one.
pub const DEFAULT_SEED: u64 = 1;

const BUNDLED: &[(&str, &str)] = &[
    ("secured-call", include_str!("../scenarios/secured-call.scn")),
    ("replay-attack", include_str!("../scenarios/replay-attack.scn")),
    ("relocation", include_str!("../scenarios/relocation.scn")),
    ("indication-fault", include_str!("../scenarios/indication-fault.scn")),
];

pub fn bundled_scenario(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn bundled_scenario_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {why}")]
pub struct ScriptError {
    pub line: usize,
    pub why: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Daemon {
    Registry,
    RelocationManager,
    Server { name: String, host: String, template: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Check {
    Ok(Option<String>),
    Fault { kind: Option<String>, handler: Option<String> },
    Accepted,
    Rejected(Option<String>),
    Contains(String),
    Lacks(String),
    Event { handler: String, event: String, present: bool },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Directive {
    Seed(u64),
    StartDaemon(Daemon),
    Call { label: String, name: String, method: String, args: Vec<String>, template: String },
    InjectFault(Injection, Option<String>),
    RelocateServer { name: String, host: String },
    CaptureFrame { label: String, of: Option<String>, index: usize },
    ResendFrame { label: String, capture: String },
    /// `None` checks the trace rather than a step.
    Expect { label: Option<String>, check: Check },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub line: usize,
    pub text: String,
    pub directive: Directive,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Script {
    pub steps: Vec<Step>,
}

struct Tokens {
    positional: Vec<String>,
    options: BTreeMap<String, String>,
}

fn tokens(words: Vec<String>) -> Tokens {
    let mut positional = Vec::new();
    let mut options = BTreeMap::new();
    for w in words {
        match w.strip_prefix("--").and_then(|o| o.split_once('=')) {
            Some((k, v)) => {
                options.insert(k.to_string(), v.to_string());
            }
            None => positional.push(w),
        }
    }
    Tokens { positional, options }
}

fn parse_action(s: &str) -> Result<InjectionAction, String> {
    let (name, arg) = match s.split_once(':') {
        Some((n, a)) => (n, Some(a)),
        None => (s, None),
    };
    let number = |default: u64| arg.map_or(Ok(default), |a| a.parse::<u64>().map_err(|_| format!("bad argument in `{s}`")));
    match name {
        "drop" => Ok(InjectionAction::Drop),
        "corrupt" => Ok(InjectionAction::Corrupt { byte: number(u64::MAX)? as usize }),
        "delay" => Ok(InjectionAction::Delay { ms: number(100)? }),
        "connect-fail" => Ok(InjectionAction::ConnectFail),
        _ => Err(format!("unknown fault `{s}`")),
    }
}

fn parse_check(label: Option<&str>, rest: &[String]) -> Result<Check, String> {
    let arg = |i: usize| rest.get(i).cloned();
    let need = |i: usize| arg(i).ok_or_else(|| format!("`{}` needs more arguments", rest.join(" ")));
    let Some(what) = rest.first() else {
        return Err("expect needs a check".into());
    };
    match (label, what.as_str()) {
        (Some(_), "ok") => Ok(Check::Ok(arg(1))),
        (Some(_), "fault") => Ok(Check::Fault { kind: arg(1), handler: arg(2) }),
        (Some(_), "accepted") => Ok(Check::Accepted),
        (Some(_), "rejected") => Ok(Check::Rejected(arg(1))),
        (None, "contains") => Ok(Check::Contains(need(1)?)),
        (None, "lacks") => Ok(Check::Lacks(need(1)?)),
        (None, "event") => Ok(Check::Event { handler: need(1)?, event: need(2)?, present: true }),
        (None, "no-event") => Ok(Check::Event { handler: need(1)?, event: need(2)?, present: false }),
        (_, other) => Err(format!("unknown check `{other}`")),
    }
}

fn define(labels: &mut HashSet<String>, label: &str, line: usize) -> Result<(), ScriptError> {
    if label == "trace" || !labels.insert(label.to_string()) {
        return Err(ScriptError { line, why: format!("label `{label}` is reserved or already used") });
    }
    Ok(())
}

impl std::str::FromStr for Script {
    type Err = ScriptError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut steps = Vec::new();
        let mut labels = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |why: String| ScriptError { line, why };
            let body = raw.trim();
            if body.is_empty() || body.starts_with('#') {
                continue;
            }
            let words = shlex::split(body).ok_or_else(|| err("unbalanced quotes".into()))?;
            let t = tokens(words);
            let p = &t.positional;
            let opt = |k: &str| t.options.get(k).cloned();
            let pos = |i: usize, what: &str| p.get(i).cloned().ok_or_else(|| err(format!("missing {what}")));
            let directive = match pos(0, "directive")?.as_str() {
                "seed" => Directive::Seed(pos(1, "seed")?.parse().map_err(|_| err("seed must be an unsigned integer".into()))?),
                "start-daemon" => Directive::StartDaemon(match pos(1, "daemon kind")?.as_str() {
                    "registry" => Daemon::Registry,
                    "relocmgr" => Daemon::RelocationManager,
                    "server" => {
                        let name = pos(2, "server name")?;
                        Daemon::Server {
                            host: opt("host").unwrap_or_else(|| name.to_ascii_lowercase()),
                            template: opt("template").unwrap_or_else(|| "empty".into()),
                            name,
                        }
                    }
                    other => return Err(err(format!("unknown daemon `{other}`"))),
                }),
                "call" => {
                    let label = pos(1, "label")?;
                    define(&mut labels, &label, line)?;
                    Directive::Call {
                        label,
                        name: pos(2, "service name")?,
                        method: pos(3, "method")?,
                        args: p[4..].to_vec(),
                        template: opt("template").unwrap_or_else(|| "empty".into()),
                    }
                }
                "inject-fault" => {
                    let action = parse_action(&pos(1, "fault")?).map_err(err)?;
                    let nth = opt("nth").map_or(Ok(1), |n| n.parse().map_err(|_| err("--nth must be a number".into())))?;
                    let mut inj = Injection::new(action, nth);
                    match opt("direction").as_deref() {
                        None => {}
                        Some("request") => inj = inj.on(FrameDirection::Request),
                        Some("reply") => inj = inj.on(FrameDirection::Reply),
                        Some(d) => return Err(err(format!("unknown direction `{d}`"))),
                    }
                    Directive::InjectFault(inj, opt("at"))
                }
                "relocate-server" => Directive::RelocateServer { name: pos(1, "server name")?, host: pos(2, "new host")? },
                "capture-frame" => {
                    let label = pos(1, "label")?;
                    let of = opt("of");
                    if let Some(o) = &of {
                        if !labels.contains(o) {
                            return Err(err(format!("`{o}` is not an earlier step")));
                        }
                    }
                    define(&mut labels, &label, line)?;
                    let index = opt("index").map_or(Ok(0), |n| n.parse().map_err(|_| err("--index must be a number".into())))?;
                    Directive::CaptureFrame { label, of, index }
                }
                "resend-frame" => {
                    let (label, capture) = (pos(1, "label")?, pos(2, "captured frame")?);
                    if !labels.contains(&capture) {
                        return Err(err(format!("`{capture}` is not an earlier step")));
                    }
                    define(&mut labels, &label, line)?;
                    Directive::ResendFrame { label, capture }
                }
                "expect" => {
                    let target = pos(1, "step label or `trace`")?;
                    let label = (target != "trace").then_some(target);
                    if let Some(l) = &label {
                        if !labels.contains(l) {
                            return Err(err(format!("`{l}` is not an earlier step")));
                        }
                    }
                    let check = parse_check(label.as_deref(), &p[2..]).map_err(err)?;
                    Directive::Expect { label, check }
                }
                other => return Err(err(format!("unknown directive `{other}`"))),
            };
            steps.push(Step { line, text: body.to_string(), directive });
        }
        Ok(Script { steps })
    }
}

impl Script {
    /// The last `seed` directive, if any.
    pub fn seed(&self) -> Option<u64> {
        self.steps.iter().rev().find_map(|s| match s.directive {
            Directive::Seed(n) => Some(n),
            _ => None,
        })
    }
}

/// Loads a script by bundled name or from a file.
pub fn load_script(source: &str) -> Result<Script> {
    let text = match bundled_scenario(source) {
        Some(t) => t.to_string(),
        None => std::fs::read_to_string(Path::new(source)).with_context(|| format!("reading scenario {source}"))?,
    };
    text.parse().with_context(|| format!("scenario {source}"))
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Value(TaggedValue),
    Fault(Fault),
    Frame { endpoint: String, bytes: Vec<u8> },
    Accepted,
    Rejected(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpectResult {
    pub line: usize,
    pub text: String,
    pub failure: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub seed: u64,
    pub trace: String,
    pub expectations: Vec<ExpectResult>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.expectations.iter().all(|e| e.failure.is_none())
    }

    pub fn failures(&self) -> impl Iterator<Item = &ExpectResult> {
        self.expectations.iter().filter(|e| e.failure.is_some())
    }
}

struct Server {
    listener: Option<Listener>,
    template: ChannelTemplate,
    answerer: Arc<Answerer>,
    address: Address,
}

struct Runner {
    node: Node,
    registry: Option<(Listener, RegistryClient)>,
    manager: Option<(Listener, Arc<ManagerClient>)>,
    servers: HashMap<String, Server>,
    clients: HashMap<(String, String), Initiator>,
    outcomes: HashMap<String, StepOutcome>,
    /// Frame-log range written during each call.
    frames: HashMap<String, (usize, usize)>,
}

impl Runner {
    fn new(seed: u64) -> Self {
        let env = Env::deterministic(seed);
        let trace = Arc::new(Trace::new(env.clone()));
        Self {
            node: Node::new(env, Network::new(), trace),
            registry: None,
            manager: None,
            servers: HashMap::new(),
            clients: HashMap::new(),
            outcomes: HashMap::new(),
            frames: HashMap::new(),
        }
    }

    fn registry(&self) -> Result<&RegistryClient> {
        self.registry.as_ref().map(|(_, c)| c).ok_or_else(|| anyhow!("no registry daemon has been started"))
    }

    fn start(&mut self, d: &Daemon) -> Result<()> {
        match d {
            Daemon::Registry => {
                let addr = Address::loopback("registry", REGISTRY_OBJECT);
                let (l, _) = self.node.serve(&addr, &ChannelTemplate::default(), ServiceTable::new().with(REGISTRY_OBJECT, Arc::new(Registry::new())))?;
                self.registry = Some((l, RegistryClient::new(self.node.remote(addr)?)));
            }
            Daemon::RelocationManager => {
                let addr = Address::loopback("relocmgr", RELOCATION_OBJECT);
                let services = ServiceTable::new().with(RELOCATION_OBJECT, Arc::new(RelocationManager::new()));
                let (l, _) = self.node.serve(&addr, &ChannelTemplate::default(), services)?;
                let client = Arc::new(ManagerClient::new(self.node.remote(addr)?));
                self.node.catalog = self.node.catalog.clone().with_lookup(client.clone());
                self.manager = Some((l, client));
            }
            Daemon::Server { name, host, template } => {
                let template = load_template(template, None)?;
                let answerer = Arc::new(Answerer::new());
                let server = self.open_server(name, host, template, answerer)?;
                self.servers.insert(name.clone(), server);
            }
        }
        Ok(())
    }

    fn open_server(&self, name: &str, host: &str, template: ChannelTemplate, answerer: Arc<Answerer>) -> Result<Server> {
        let services = ServiceTable::new().with(ANSWERER_OBJECT, answerer.clone());
        let (listener, _, _) = self.node.serve_registered(self.registry()?, name, &Address::loopback(host, ANSWERER_OBJECT), &template, services)?;
        let address = listener.address().clone();
        if let Some((_, m)) = &self.manager {
            m.notify(ANSWERER_OBJECT, &address)?;
        }
        Ok(Server { listener: Some(listener), template, answerer, address })
    }

    fn relocate(&mut self, name: &str, host: &str) -> Result<()> {
        let mut old = self.servers.remove(name).ok_or_else(|| anyhow!("no server named `{name}`"))?;
        if let Some(l) = old.listener.take() {
            l.stop();
        }
        let moved = self.open_server(name, host, old.template, old.answerer)?;
        self.servers.insert(name.to_string(), moved);
        Ok(())
    }

    fn call(&mut self, label: &str, name: &str, method: &str, args: &[String], template: &str) -> Result<()> {
        let key = (name.to_string(), template.to_string());
        if !self.clients.contains_key(&key) {
            let tpl = load_template(template, None)?;
            let client = self.node.bind_named(self.registry()?, name, &tpl)?.with_interface(Answerer::declared());
            self.clients.insert(key.clone(), client);
        }
        let before = self.node.net.loopback.frame_count();
        let r = self.clients[&key].call(method, args.iter().map(|a| TaggedValue::text(a.as_str())).collect());
        self.frames.insert(label.to_string(), (before, self.node.net.loopback.frame_count()));
        let outcome = match r {
            Ok(v) => StepOutcome::Value(v),
            Err(f) => StepOutcome::Fault(f),
        };
        self.outcomes.insert(label.to_string(), outcome);
        Ok(())
    }

    fn inject(&self, injection: &Injection, at: Option<&str>) -> Result<()> {
        let mut inj = injection.clone();
        if let Some(name) = at {
            let s = self.servers.get(name).ok_or_else(|| anyhow!("no server named `{name}`"))?;
            inj = inj.at(s.address.endpoint());
        }
        self.node.net.loopback.inject(inj);
        Ok(())
    }

    fn capture(&mut self, label: &str, of: Option<&str>, index: usize) -> Result<()> {
        let log = self.node.net.loopback.frames();
        let (from, to) = of.map_or((0, log.len()), |o| self.frames.get(o).copied().unwrap_or((0, 0)));
        let requests: Vec<_> = log[from..to].iter().filter(|f| f.direction == FrameDirection::Request && !f.dropped).collect();
        let frame = if of.is_some() { requests.get(index) } else { requests.iter().rev().nth(index) };
        let frame = frame.ok_or_else(|| anyhow!("no request frame to capture"))?;
        self.outcomes.insert(label.to_string(), StepOutcome::Frame { endpoint: frame.endpoint.clone(), bytes: frame.bytes.clone() });
        Ok(())
    }

    fn resend(&mut self, label: &str, capture: &str) -> Result<()> {
        let Some(StepOutcome::Frame { endpoint, bytes }) = self.outcomes.get(capture) else {
            bail!("`{capture}` did not capture a frame");
        };
        let addr: Address = format!("loopback://{endpoint}/{ANSWERER_OBJECT}").parse()?;
        let seen = self.node.trace.len();
        self.node.net.loopback.send_raw(&addr, bytes, Duration::from_secs(5))?;
        let fresh: Vec<_> = self.node.trace.events().into_iter().skip(seen).filter(|e| e.side == Side::Acceptor).collect();
        let outcome = if fresh.iter().any(|e| e.event == "dispatch") {
            StepOutcome::Accepted
        } else {
            let by = fresh
                .iter()
                .find(|e| e.event == "fault" || e.detail.starts_with("fault:"))
                .map_or_else(|| "unknown".to_string(), |e| e.handler.clone());
            StepOutcome::Rejected(by)
        };
        self.outcomes.insert(label.to_string(), outcome);
        Ok(())
    }

    fn check(&self, label: Option<&str>, check: &Check) -> Option<String> {
        let trace = self.node.trace.events();
        let outcome = label.and_then(|l| self.outcomes.get(l));
        let describe = |o: Option<&StepOutcome>| match o {
            Some(StepOutcome::Value(v)) => format!("value {}", render_value(v)),
            Some(StepOutcome::Fault(f)) => format!("fault {f}"),
            Some(StepOutcome::Frame { bytes, .. }) => format!("captured frame of {} bytes", bytes.len()),
            Some(StepOutcome::Accepted) => "accepted".into(),
            Some(StepOutcome::Rejected(by)) => format!("rejected by {by}"),
            None => "no outcome".into(),
        };
        let ok = match (check, outcome) {
            (Check::Ok(want), Some(StepOutcome::Value(v))) => want.as_ref().is_none_or(|w| *w == render_value(v)),
            (Check::Fault { kind, handler }, Some(StepOutcome::Fault(f))) => {
                kind.as_ref().is_none_or(|k| k == f.kind.name()) && handler.as_ref().is_none_or(|h| *h == f.handler)
            }
            (Check::Accepted, Some(StepOutcome::Accepted)) => true,
            (Check::Rejected(by), Some(StepOutcome::Rejected(r))) => by.as_ref().is_none_or(|b| b == r),
            (Check::Contains(s), _) => self.node.trace.render().contains(s.as_str()),
            (Check::Lacks(s), _) => !self.node.trace.render().contains(s.as_str()),
            (Check::Event { handler, event, present }, _) => {
                let found = trace.iter().any(|e| (handler == "*" || e.handler == *handler) && e.event == *event);
                found == *present
            }
            _ => false,
        };
        if ok {
            return None;
        }
        Some(match label {
            Some(_) => format!("got {}", describe(outcome)),
            None => "trace does not satisfy the check".into(),
        })
    }
}

/// Runs `script`. The seed comes from `seed`, then `CHANNELRPC_SEED`, then
/// the script, then [`DEFAULT_SEED`].
pub fn run(script: &Script, seed: Option<u64>) -> Result<Report> {
    let seed = resolve_seed(seed, script.seed())?.unwrap_or(DEFAULT_SEED);
    run_seeded(script, seed)
}

/// Runs `script` with exactly `seed`, ignoring the environment.
pub fn run_seeded(script: &Script, seed: u64) -> Result<Report> {
    let mut r = Runner::new(seed);
    let mut expectations = Vec::new();
    for step in &script.steps {
        let at = || format!("line {}: {}", step.line, step.text);
        match &step.directive {
            Directive::Seed(_) => {}
            Directive::StartDaemon(d) => r.start(d).with_context(at)?,
            Directive::Call { label, name, method, args, template } => r.call(label, name, method, args, template).with_context(at)?,
            Directive::InjectFault(inj, target) => r.inject(inj, target.as_deref()).with_context(at)?,
            Directive::RelocateServer { name, host } => r.relocate(name, host).with_context(at)?,
            Directive::CaptureFrame { label, of, index } => r.capture(label, of.as_deref(), *index).with_context(at)?,
            Directive::ResendFrame { label, capture } => r.resend(label, capture).with_context(at)?,
            Directive::Expect { label, check } => expectations.push(ExpectResult {
                line: step.line,
                text: step.text.clone(),
                failure: r.check(label.as_deref(), check),
            }),
        }
    }
    let trace = r.node.trace.render();
    for (_, s) in r.servers.drain() {
        if let Some(l) = s.listener {
            l.stop();
        }
    }
    Ok(Report { seed, trace, expectations })
}
