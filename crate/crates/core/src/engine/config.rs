//! Per-binding engine settings.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RecoveryScheme {
    /// Ask handlers above the failure to clear, nearest first; undo those
    /// above the one that cleared, then redo down to the failure.
    #[default]
    ClearThenUndoRedo,
    /// Undo every handler above the failure, each attempting to clear as it
    /// undoes; redo if any cleared.
    ClearAndUndoThenRedo,
}

impl RecoveryScheme {
    pub fn name(self) -> &'static str {
        match self {
            RecoveryScheme::ClearThenUndoRedo => "clear_then_undo_redo",
            RecoveryScheme::ClearAndUndoThenRedo => "clear_and_undo_then_redo",
        }
    }
}

impl fmt::Display for RecoveryScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RecoveryScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "clear_then_undo_redo" | "1" => Ok(RecoveryScheme::ClearThenUndoRedo),
            "clear_and_undo_then_redo" | "2" => Ok(RecoveryScheme::ClearAndUndoThenRedo),
            _ => Err(format!("unknown recovery scheme `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineConfig {
    pub scheme: RecoveryScheme,
    pub confirm_timeout: Duration,
    /// Transparent resends allowed per call.
    pub resend_budget: u32,
    /// Channel reconstructions allowed per call.
    pub rebind_budget: u32,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            scheme: RecoveryScheme::default(),
            confirm_timeout: Duration::from_secs(10),
            resend_budget: 1,
            rebind_budget: 1,
        }
    }
}

impl EngineConfig {
    /// Reads `scheme`, `confirm_timeout_ms`, `resend_budget` and
    /// `rebind_budget`; other keys are rejected.
    pub fn from_settings(settings: &BTreeMap<String, String>) -> Result<Self, String> {
        let mut c = Self::default();
        for (k, v) in settings {
            let bad = |_| format!("engine setting {k}={v} is not a number");
            match k.as_str() {
                "scheme" => c.scheme = v.parse()?,
                "confirm_timeout_ms" => c.confirm_timeout = Duration::from_millis(v.parse().map_err(bad)?),
                "resend_budget" => c.resend_budget = v.parse().map_err(bad)?,
                "rebind_budget" => c.rebind_budget = v.parse().map_err(bad)?,
                _ => return Err(format!("unknown engine setting `{k}`")),
            }
        }
        Ok(c)
    }
}
