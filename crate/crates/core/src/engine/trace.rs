//! Machine-readable record of engine events.
//!
//! One line per event, tab-separated:
//! `seq  time  side  phase  handler  event  call-id  detail`.

use std::fmt;
use std::io::Write;
use std::sync::Mutex;

use crate::env::Env;
use crate::handler::Side;
use crate::message::{CallId, Phase};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub seq: u64,
    pub time_ms: i64,
    pub side: Side,
    pub phase: Option<Phase>,
    pub handler: String,
    pub event: String,
    pub call_id: CallId,
    pub detail: String,
}

fn field(s: &str) -> String {
    if s.is_empty() {
        return "-".into();
    }
    s.replace(['\t', '\n', '\r'], " ")
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.seq,
            self.time_ms,
            self.side,
            self.phase.map_or("-", Phase::name),
            field(&self.handler),
            field(&self.event),
            self.call_id,
            field(&self.detail)
        )
    }
}

struct Inner {
    events: Vec<TraceEvent>,
    sink: Option<Box<dyn Write + Send>>,
}

pub struct Trace {
    env: Env,
    inner: Mutex<Inner>,
}

impl Trace {
    pub fn new(env: Env) -> Self {
        Self { env, inner: Mutex::new(Inner { events: Vec::new(), sink: None }) }
    }

    /// Also writes each line to `sink` as it is recorded.
    pub fn with_sink(env: Env, sink: Box<dyn Write + Send>) -> Self {
        Self { env, inner: Mutex::new(Inner { events: Vec::new(), sink: Some(sink) }) }
    }

    pub fn record(&self, side: Side, phase: Option<Phase>, handler: &str, event: &str, call_id: CallId, detail: impl Into<String>) {
        let mut inner = self.inner.lock().unwrap();
        let e = TraceEvent {
            seq: inner.events.len() as u64 + 1,
            time_ms: self.env.now_ms(),
            side,
            phase,
            handler: handler.to_string(),
            event: event.to_string(),
            call_id,
            detail: detail.into(),
        };
        if let Some(sink) = inner.sink.as_mut() {
            let _ = writeln!(sink, "{e}");
        }
        inner.events.push(e);
    }

    pub fn events(&self) -> Vec<TraceEvent> {
        self.inner.lock().unwrap().events.clone()
    }

    pub fn events_for(&self, call: CallId) -> Vec<TraceEvent> {
        self.events().into_iter().filter(|e| e.call_id == call).collect()
    }

    pub fn render(&self) -> String {
        self.events().iter().map(|e| format!("{e}\n")).collect()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Debug for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Trace").field("events", &self.len()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_format() {
        let t = Trace::new(Env::deterministic(0));
        t.record(Side::Initiator, Some(Phase::Request), "StampIssuer", "todo", CallId(1), "ok\tfine");
        t.record(Side::Acceptor, None, "", "receive", CallId(1), "");
        let lines: Vec<String> = t.render().lines().map(String::from).collect();
        assert_eq!(
            lines[0],
            format!("1\t1000000000000\tinitiator\tREQUEST\tStampIssuer\ttodo\t{}\tok fine", CallId(1))
        );
        assert_eq!(lines[1].split('\t').count(), 8);
        assert!(lines[1].contains("\t-\t-\treceive\t"));
    }
}
