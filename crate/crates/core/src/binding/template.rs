//! Channel templates: which channel objects a binding needs, in stack order.
//!
//! One entry per line, `layer name required|optional key=value ...`, where
//! layer is `call` or `stream`. Lines `engine key=value ...` carry engine
//! settings. `#` starts a comment. Call entries come before stream entries.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Layer {
    Call,
    Stream,
}

impl Layer {
    pub fn name(self) -> &'static str {
        match self {
            Layer::Call => "call",
            Layer::Stream => "stream",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateEntry {
    pub name: String,
    pub layer: Layer,
    pub required: bool,
    pub params: BTreeMap<String, String>,
}

impl TemplateEntry {
    pub fn new(layer: Layer, name: impl Into<String>, required: bool) -> Self {
        Self { name: name.into(), layer, required, params: BTreeMap::new() }
    }

    pub fn param(mut self, k: impl Into<String>, v: impl Into<String>) -> Self {
        self.params.insert(k.into(), v.into());
        self
    }

    /// Identity used to pair entries across templates. Repeated handlers
    /// are told apart by their `name` parameter.
    pub fn key(&self) -> String {
        match self.params.get("name") {
            Some(n) => format!("{}#{n}", self.name),
            None => self.name.clone(),
        }
    }
}

impl fmt::Display for TemplateEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.layer.name(), self.name, if self.required { "required" } else { "optional" })?;
        for (k, v) in &self.params {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChannelTemplate {
    pub entries: Vec<TemplateEntry>,
    pub engine: BTreeMap<String, String>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("line {line}: {why}")]
    Parse { line: usize, why: String },
    #[error("negotiation failed: unmet required handlers {0:?}")]
    NegotiationFailed(Vec<String>),
}

fn pairs<'a>(words: impl Iterator<Item = &'a str>, line: usize) -> Result<BTreeMap<String, String>, TemplateError> {
    let mut out = BTreeMap::new();
    for w in words {
        let (k, v) = w.split_once('=').ok_or_else(|| TemplateError::Parse { line, why: format!("expected key=value, found `{w}`") })?;
        if k.is_empty() {
            return Err(TemplateError::Parse { line, why: format!("empty key in `{w}`") });
        }
        out.insert(k.to_string(), v.to_string());
    }
    Ok(out)
}

impl FromStr for ChannelTemplate {
    type Err = TemplateError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut t = ChannelTemplate::default();
        let mut seen_stream = false;
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("");
            let mut words = content.split_whitespace();
            let Some(first) = words.next() else { continue };
            let err = |why: String| TemplateError::Parse { line, why };
            let layer = match first {
                "engine" => {
                    t.engine.extend(pairs(words, line)?);
                    continue;
                }
                "call" => Layer::Call,
                "stream" => Layer::Stream,
                other => return Err(err(format!("unknown layer `{other}`"))),
            };
            let name = words.next().ok_or_else(|| err("missing handler name".into()))?;
            let required = match words.next() {
                Some("required") => true,
                Some("optional") => false,
                Some(other) => return Err(err(format!("expected required or optional, found `{other}`"))),
                None => return Err(err("missing required|optional".into())),
            };
            match layer {
                Layer::Stream => seen_stream = true,
                Layer::Call if seen_stream => return Err(err(format!("call entry `{name}` after a stream entry"))),
                Layer::Call => {}
            }
            t.entries.push(TemplateEntry { name: name.to_string(), layer, required, params: pairs(words, line)? });
        }
        Ok(t)
    }
}

impl fmt::Display for ChannelTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.engine.is_empty() {
            f.write_str("engine")?;
            for (k, v) in &self.engine {
                write!(f, " {k}={v}")?;
            }
            writeln!(f)?;
        }
        for e in &self.entries {
            writeln!(f, "{e}")?;
        }
        Ok(())
    }
}

impl ChannelTemplate {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&TemplateEntry> {
        self.entries.iter().find(|e| e.key() == key)
    }

    pub fn calls(&self) -> impl Iterator<Item = &TemplateEntry> {
        self.entries.iter().filter(|e| e.layer == Layer::Call)
    }

    pub fn streams(&self) -> impl Iterator<Item = &TemplateEntry> {
        self.entries.iter().filter(|e| e.layer == Layer::Stream)
    }
}

/// Agrees a stack from the client's supported template and the server's
/// requirements. Server entries keep server order; client-only entries
/// join when they need nothing from the server. Server parameters win.
pub fn negotiate(
    client: &ChannelTemplate,
    server: &ChannelTemplate,
    needs_counterpart: impl Fn(&str) -> bool,
) -> Result<ChannelTemplate, TemplateError> {
    let mut unmet = Vec::new();
    let mut entries = Vec::new();
    for s in &server.entries {
        match client.get(&s.key()) {
            Some(c) => {
                let mut params = c.params.clone();
                params.extend(s.params.clone());
                entries.push(TemplateEntry { params, required: s.required || c.required, ..s.clone() });
            }
            None if s.required => unmet.push(s.key()),
            None => {}
        }
    }
    for c in &client.entries {
        if server.get(&c.key()).is_some() {
            continue;
        }
        if !needs_counterpart(&c.name) {
            entries.push(c.clone());
        } else if c.required {
            unmet.push(c.key());
        }
    }
    if !unmet.is_empty() {
        return Err(TemplateError::NegotiationFailed(unmet));
    }
    let (mut calls, streams): (Vec<_>, Vec<_>) = entries.into_iter().partition(|e| e.layer == Layer::Call);
    calls.extend(streams);
    let mut engine = client.engine.clone();
    engine.extend(server.engine.clone());
    Ok(ChannelTemplate { entries: calls, engine })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all(_: &str) -> bool {
        true
    }

    const SECURE: &str = "\
# secured delivery
call KeyNegotiator required
call StampIssuer required skew=5000
call SequenceIssuer required
call ReplayDetector required
stream Encryptor required
";

    #[test]
    fn empty_file_is_empty_template() {
        assert!("".parse::<ChannelTemplate>().unwrap().is_empty());
        assert!("# nothing\n\n".parse::<ChannelTemplate>().unwrap().is_empty());
    }

    #[test]
    fn parses_entries_in_order() {
        let t: ChannelTemplate = SECURE.parse().unwrap();
        let names: Vec<_> = t.entries.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["KeyNegotiator", "StampIssuer", "SequenceIssuer", "ReplayDetector", "Encryptor"]);
        assert_eq!(t.entries[1].params["skew"], "5000");
        assert_eq!(t.entries[4].layer, Layer::Stream);
    }

    #[test]
    fn stream_before_call_rejected() {
        let e = "stream Encryptor required\ncall StampIssuer optional\n".parse::<ChannelTemplate>().unwrap_err();
        assert_eq!(e, TemplateError::Parse { line: 2, why: "call entry `StampIssuer` after a stream entry".into() });
    }

    #[test]
    fn parse_errors_carry_line() {
        for (text, line) in [("call X maybe", 1), ("\n\nframe X required", 3), ("call X required k", 1), ("call", 1)] {
            match text.parse::<ChannelTemplate>() {
                Err(TemplateError::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn render_round_trips() {
        let t: ChannelTemplate = format!("engine scheme=2\n{SECURE}").parse().unwrap();
        assert_eq!(t.to_string().parse::<ChannelTemplate>().unwrap(), t);
    }

    #[test]
    fn identical_templates_negotiate_to_themselves() {
        let t: ChannelTemplate = SECURE.parse().unwrap();
        assert_eq!(negotiate(&t, &t, all).unwrap(), t);
    }

    #[test]
    fn server_requires_encryptor() {
        let server: ChannelTemplate = "stream Encryptor required".parse().unwrap();
        let client: ChannelTemplate = "call StampIssuer optional\nstream Encryptor optional".parse().unwrap();
        let n = negotiate(&client, &server, all).unwrap();
        assert_eq!(n.entries.len(), 1);
        assert_eq!(n.entries[0].name, "Encryptor");
        assert!(n.entries[0].required);
        let lacking: ChannelTemplate = "call StampIssuer optional".parse().unwrap();
        assert_eq!(negotiate(&lacking, &server, all), Err(TemplateError::NegotiationFailed(vec!["Encryptor".into()])));
    }

    #[test]
    fn client_only_entries() {
        let server = ChannelTemplate::default();
        let client: ChannelTemplate = "call UsageLogger optional\ncall StampIssuer optional".parse().unwrap();
        let n = negotiate(&client, &server, |n| n == "StampIssuer").unwrap();
        assert_eq!(n.entries.iter().map(|e| e.name.as_str()).collect::<Vec<_>>(), ["UsageLogger"]);
        let strict: ChannelTemplate = "call StampIssuer required".parse().unwrap();
        assert!(negotiate(&strict, &server, |n| n == "StampIssuer").is_err());
    }

    #[test]
    fn server_params_win_and_order_is_server_order() {
        let server: ChannelTemplate = "call B optional k=s\ncall A optional".parse().unwrap();
        let client: ChannelTemplate = "call A optional\ncall B optional k=c j=1".parse().unwrap();
        let n = negotiate(&client, &server, all).unwrap();
        assert_eq!(n.entries[0].name, "B");
        assert_eq!(n.entries[0].params["k"], "s");
        assert_eq!(n.entries[0].params["j"], "1");
    }

    #[test]
    fn negotiation_is_idempotent() {
        let server: ChannelTemplate = SECURE.parse().unwrap();
        let client: ChannelTemplate = format!("{}\ncall UsageLogger optional", SECURE.replace("stream Encryptor required\n", ""))
            .parse::<ChannelTemplate>()
            .map(|mut t| {
                t.entries.push(TemplateEntry::new(Layer::Stream, "Encryptor", false));
                t
            })
            .unwrap();
        let needs = |n: &str| n != "UsageLogger";
        let once = negotiate(&client, &server, needs).unwrap();
        assert_eq!(negotiate(&once, &server, needs).unwrap(), once);
    }
}
