//! Where templates and seeds come from.
//!
//! Precedence is always: command-line flag, then environment variable,
//! then the default the caller supplies.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use channelrpc::binding::ChannelTemplate;
use channelrpc::env::SEED_VAR;

pub const TEMPLATE_VAR: &str = "CHANNELRPC_TEMPLATE";

const BUNDLED: &[(&str, &str)] = &[
    ("secure", include_str!("../templates/secure.tpl")),
    ("empty", include_str!("../templates/empty.tpl")),
    ("relocating", include_str!("../templates/relocating.tpl")),
    ("failing", include_str!("../templates/failing.tpl")),
];

/// Text of a template shipped with the binary.
pub fn bundled_template(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn bundled_template_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

/// Loads a template by bundled name, or from a file. Relative paths are
/// resolved against `base` when given.
pub fn load_template(source: &str, base: Option<&Path>) -> Result<ChannelTemplate> {
    if let Some(text) = bundled_template(source) {
        return text.parse().with_context(|| format!("bundled template `{source}`"));
    }
    let path = match base {
        Some(b) if Path::new(source).is_relative() => b.join(source),
        _ => PathBuf::from(source),
    };
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading template {}", path.display()))?;
    text.parse().with_context(|| format!("template {}", path.display()))
}

/// The template source named by `flag`, `CHANNELRPC_TEMPLATE`, or `default`.
pub fn template_source(flag: Option<&str>, default: &str) -> String {
    flag.map(str::to_string)
        .or_else(|| std::env::var(TEMPLATE_VAR).ok().filter(|s| !s.trim().is_empty()))
        .unwrap_or_else(|| default.to_string())
}

pub fn resolve_template(flag: Option<&str>, default: &str) -> Result<ChannelTemplate> {
    load_template(&template_source(flag, default), None)
}

/// The seed named by `flag`, `CHANNELRPC_SEED`, or `default`.
pub fn resolve_seed(flag: Option<u64>, default: Option<u64>) -> Result<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(SEED_VAR) {
        Ok(s) if !s.trim().is_empty() => {
            let seed = s.trim().parse().with_context(|| format!("{SEED_VAR}={s} is not an unsigned integer"))?;
            Ok(Some(seed))
        }
        _ => Ok(default),
    }
}
