//! Daemons, the client command and the scenario runner.

pub mod config;
pub mod daemon;
pub mod scenario;

use channelrpc::message::TaggedValue;

/// Text values print bare; everything else in its tagged form.
pub fn render_value(v: &TaggedValue) -> String {
    match v {
        TaggedValue::Text(s) => s.clone(),
        other => other.to_string(),
    }
}
