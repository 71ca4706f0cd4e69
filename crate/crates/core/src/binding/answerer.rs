//! The demonstration service.

use std::sync::atomic::{AtomicI64, Ordering};

use crate::engine::dispatch::{text_param, Service};
use crate::message::{Fault, Interface, Signature, TaggedValue};

pub const ANSWERER_OBJECT: &str = "Answerer";

/// `answer` echoes with a prefix; `note` is a one-cast that only counts;
/// `reject` always faults.
#[derive(Debug, Default)]
pub struct Answerer {
    noted: AtomicI64,
    answered: AtomicI64,
}

impl Answerer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn answered(&self) -> i64 {
        self.answered.load(Ordering::SeqCst)
    }

    pub fn noted(&self) -> i64 {
        self.noted.load(Ordering::SeqCst)
    }

    pub fn declared() -> Interface {
        Interface::new()
            .with(Signature::new("answer", true, true))
            .with(Signature::new("note", false, false))
            .with(Signature::new("noted", true, false))
            .with(Signature::new("reject", true, true))
    }
}

impl Service for Answerer {
    fn interface(&self) -> Interface {
        Self::declared()
    }

    fn invoke(&self, method: &str, params: &[TaggedValue]) -> Result<TaggedValue, Fault> {
        match method {
            "answer" => {
                let text = text_param(params, 0, method)?;
                self.answered.fetch_add(1, Ordering::SeqCst);
                Ok(TaggedValue::text(format!("You said:{text}")))
            }
            "note" => {
                self.noted.fetch_add(1, Ordering::SeqCst);
                Ok(TaggedValue::Unit)
            }
            "noted" => Ok(TaggedValue::Int64(self.noted())),
            "reject" => Err(Fault::application(format!("rejected: {}", text_param(params, 0, method).unwrap_or("")))),
            _ => Err(Fault::application(format!("unknown method `{method}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn answer_prefixes() {
        let a = Answerer::new();
        assert_eq!(a.invoke("answer", &[TaggedValue::text("hello")]).unwrap(), TaggedValue::text("You said:hello"));
        assert_eq!(a.answered(), 1);
        assert!(Answerer::declared().get("note").unwrap().is_one_cast());
        assert!(a.invoke("reject", &[]).is_err());
    }
}
