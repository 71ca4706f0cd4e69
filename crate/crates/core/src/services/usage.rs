//! Usage logging and account tagging.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, SecondsFormat};

use super::{innermost_method, take_wrapper};
use crate::handler::{next, CallContext, Handler, Outcome};
use crate::message::{wrap, CallId, Fault, Message, TaggedValue};

pub const ACCOUNT_METHOD: &str = "billedTo";

pub fn iso8601(ms: i64) -> String {
    DateTime::from_timestamp_millis(ms)
        .map(|t| t.to_rfc3339_opts(SecondsFormat::Millis, true))
        .unwrap_or_else(|| ms.to_string())
}

/// Append-only record sink: kept in memory, and appended to a file if one
/// is configured.
#[derive(Debug, Default)]
pub struct UsageLog {
    lines: Mutex<Vec<String>>,
    file: Option<PathBuf>,
}

impl UsageLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn to_file(path: impl Into<PathBuf>) -> Self {
        Self { lines: Mutex::default(), file: Some(path.into()) }
    }

    pub fn append(&self, line: String) -> std::io::Result<()> {
        let mut lines = self.lines.lock().unwrap();
        if let Some(path) = &self.file {
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            writeln!(f, "{line}")?;
        }
        lines.push(line);
        Ok(())
    }

    pub fn lines(&self) -> Vec<String> {
        self.lines.lock().unwrap().clone()
    }
}

/// Logs `time, phase, method, call-id` for every message it sees and
/// forwards the message unchanged. Deployed in REQUEST and RESPONSE.
#[derive(Debug, Clone)]
pub struct UsageLogger {
    log: Arc<UsageLog>,
}

impl UsageLogger {
    pub const NAME: &'static str = "UsageLogger";

    pub fn new(log: Arc<UsageLog>) -> Self {
        Self { log }
    }
}

impl Handler for UsageLogger {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn todo(&self, m: Message, cx: &CallContext) -> Outcome {
        let line = format!("{}\t{}\t{}\t{}", iso8601(cx.env.now_ms()), cx.phase.name(), innermost_method(&m), m.call_id);
        self.log
            .append(line)
            .map_err(|e| cx.fault(Self::NAME, format!("usage log write failed: {e}")))?;
        next(m)
    }

    fn undo(&self, m: Message, _f: &Fault, _cx: &CallContext) -> Outcome {
        next(m)
    }
}

/// Accounts seen by the acceptor, in arrival order.
#[derive(Debug, Default)]
pub struct AccountLedger {
    entries: Mutex<Vec<(CallId, String)>>,
}

impl AccountLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> Vec<(CallId, String)> {
        self.entries.lock().unwrap().clone()
    }
}

/// Wraps outgoing calls as `billedTo(account, inner)`.
#[derive(Debug, Clone)]
pub struct AccountTagger {
    pub account: String,
}

impl AccountTagger {
    pub const NAME: &'static str = "Accounting";

    pub fn new(account: impl Into<String>) -> Self {
        Self { account: account.into() }
    }
}

impl Handler for AccountTagger {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn todo(&self, m: Message, _cx: &CallContext) -> Outcome {
        next(wrap(ACCOUNT_METHOD, m, vec![TaggedValue::text(self.account.clone())]))
    }

    fn undo(&self, m: Message, _f: &Fault, cx: &CallContext) -> Outcome {
        next(super::strip(m, ACCOUNT_METHOD, Self::NAME, cx)?)
    }
}

/// Unwraps `billedTo` and records the account in the ledger.
#[derive(Debug, Clone)]
pub struct AccountReader {
    ledger: Arc<AccountLedger>,
    pub optional: bool,
}

impl AccountReader {
    pub fn new(ledger: Arc<AccountLedger>) -> Self {
        Self { ledger, optional: false }
    }

    pub fn optional(mut self, optional: bool) -> Self {
        self.optional = optional;
        self
    }
}

impl Handler for AccountReader {
    fn name(&self) -> &str {
        AccountTagger::NAME
    }

    fn todo(&self, m: Message, cx: &CallContext) -> Outcome {
        let (inner, extra) = match take_wrapper(m, ACCOUNT_METHOD, AccountTagger::NAME, self.optional, cx)? {
            Ok(parts) => parts,
            Err(m) => return next(m),
        };
        let account = extra
            .first()
            .and_then(TaggedValue::as_text)
            .ok_or_else(|| cx.fault(AccountTagger::NAME, "account is not text"))?;
        self.ledger.entries.lock().unwrap().push((cx.call_id, account.to_string()));
        next(inner)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Env;
    use crate::handler::{CallScope, HandlerOutcome, Side};
    use crate::message::Phase;
    use crate::services::testing::call;

    fn out(o: Outcome) -> Message {
        match o.unwrap() {
            HandlerOutcome::Next(m) => m,
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn logger_leaves_message_alone_and_logs_each_call() {
        let scope = CallScope::new(Env::deterministic(0));
        let log = Arc::new(UsageLog::new());
        let h = UsageLogger::new(log.clone());
        for id in [1u128, 2] {
            let cx = scope.cx(CallId(id), Phase::Request, Side::Initiator);
            assert_eq!(out(h.todo(call(id), &cx)), call(id));
        }
        let lines = log.lines();
        assert_eq!(lines.len(), 2);
        let fields: Vec<Vec<&str>> = lines.iter().map(|l| l.split('\t').collect()).collect();
        assert_eq!(fields[0].len(), 4);
        assert_eq!(fields[0][0], "2001-09-09T01:46:40.000Z");
        assert_eq!((fields[0][1], fields[0][2]), ("REQUEST", "answer"));
        assert_ne!(fields[0][3], fields[1][3]);
    }

    #[test]
    fn unwritable_log_faults() {
        let scope = CallScope::new(Env::deterministic(0));
        let h = UsageLogger::new(Arc::new(UsageLog::to_file("/nonexistent-dir/usage.log")));
        let f = h.todo(call(1), &scope.cx(CallId(1), Phase::Request, Side::Initiator)).unwrap_err();
        assert_eq!(f.handler, "UsageLogger");
    }

    #[test]
    fn account_round_trip() {
        let scope = CallScope::new(Env::deterministic(0));
        let ledger = Arc::new(AccountLedger::new());
        let w = out(AccountTagger::new("acct-7").todo(call(1), &scope.cx(CallId(1), Phase::Request, Side::Initiator)));
        assert_eq!(w.method, ACCOUNT_METHOD);
        let inner = out(AccountReader::new(ledger.clone()).todo(w, &scope.cx(CallId(1), Phase::Indication, Side::Acceptor)));
        assert_eq!(inner, call(1));
        assert_eq!(ledger.entries(), vec![(CallId(1), "acct-7".to_string())]);
    }
}
