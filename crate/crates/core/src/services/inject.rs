//! A channel object that fails on demand, for exercising recovery.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::handler::{next, CallContext, Handler, HandlerOutcome, Outcome};
use crate::message::{Fault, Message, Phase};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InjectMode {
    Always,
    Once,
    /// Fails only the nth arrival in the failing phase (1-based).
    Nth(u64),
    Never,
}

impl std::str::FromStr for InjectMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "always" => Ok(InjectMode::Always),
            "once" => Ok(InjectMode::Once),
            "never" => Ok(InjectMode::Never),
            _ => s
                .strip_prefix("nth:")
                .and_then(|n| n.parse().ok())
                .map(InjectMode::Nth)
                .ok_or_else(|| format!("unknown mode `{s}` (always, once, never, nth:N)")),
        }
    }
}

/// Raises a channel fault in one phase according to its mode, passing
/// messages through otherwise. With `clears` set, its `clear` repairs any
/// fault, which makes it a stand-in for a state-retaining associate.
#[derive(Debug)]
pub struct FaultInjector {
    name: String,
    pub fail_in: Phase,
    pub mode: InjectMode,
    pub clears: bool,
    arrivals: AtomicU64,
}

impl FaultInjector {
    pub const NAME: &'static str = "FaultInjector";

    pub fn new(name: impl Into<String>, fail_in: Phase, mode: InjectMode) -> Self {
        Self { name: name.into(), fail_in, mode, clears: false, arrivals: AtomicU64::new(0) }
    }

    pub fn clearing(mut self, clears: bool) -> Self {
        self.clears = clears;
        self
    }

    fn fires(&self) -> bool {
        let n = self.arrivals.fetch_add(1, Ordering::SeqCst) + 1;
        match self.mode {
            InjectMode::Always => true,
            InjectMode::Once => n == 1,
            InjectMode::Nth(k) => n == k,
            InjectMode::Never => false,
        }
    }
}

impl Handler for FaultInjector {
    fn name(&self) -> &str {
        &self.name
    }

    fn todo(&self, m: Message, cx: &CallContext) -> Outcome {
        if cx.phase == self.fail_in && self.fires() {
            return Err(Fault::channel(cx.phase, self.name.clone(), "injected fault"));
        }
        next(m)
    }

    fn clear(&self, _m: Message, f: &Fault, _cx: &CallContext) -> Outcome {
        if self.clears {
            Ok(HandlerOutcome::Cleared(format!("{} cleared `{}`", self.name, f.detail)))
        } else {
            Ok(HandlerOutcome::Unclearable(format!("{} does not clear", self.name)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Env;
    use crate::handler::{CallScope, Side};
    use crate::message::CallId;
    use crate::services::testing::call;

    #[test]
    fn modes() {
        let scope = CallScope::new(Env::deterministic(0));
        let cx = scope.cx(CallId(1), Phase::Indication, Side::Acceptor);
        let once = FaultInjector::new("F", Phase::Indication, InjectMode::Once);
        assert!(once.todo(call(1), &cx).is_err());
        assert!(once.todo(call(1), &cx).is_ok());
        let nth = FaultInjector::new("F", Phase::Indication, "nth:2".parse().unwrap());
        assert!(nth.todo(call(1), &cx).is_ok());
        assert!(nth.todo(call(1), &cx).is_err());
        let other_phase = FaultInjector::new("F", Phase::Request, InjectMode::Always);
        assert!(other_phase.todo(call(1), &cx).is_ok());
        assert!("sometimes".parse::<InjectMode>().is_err());
    }
}
