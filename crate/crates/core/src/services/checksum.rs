//! Frame integrity trailer: `"ODPK" || data || FNV-1a 64 of data`.

use crate::fnv::fnv1a64;
use crate::handler::CallContext;
use crate::message::Fault;
use crate::stream::StreamHandler;

pub const CHECKSUM_TAG: &[u8; 4] = b"ODPK";

#[derive(Debug, Default)]
pub struct Checksum;

impl Checksum {
    pub const NAME: &'static str = "Checksum";
}

impl StreamHandler for Checksum {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn send(&self, mut data: Vec<u8>, _cx: &CallContext) -> Result<Vec<u8>, Fault> {
        let sum = fnv1a64(&data);
        let mut out = Vec::with_capacity(data.len() + 12);
        out.extend_from_slice(CHECKSUM_TAG);
        out.append(&mut data);
        out.extend_from_slice(&sum.to_be_bytes());
        Ok(out)
    }

    fn receive(&self, data: Vec<u8>, cx: &CallContext) -> Result<Vec<u8>, Fault> {
        if data.len() < 12 || !data.starts_with(CHECKSUM_TAG) {
            return Err(cx.fault(Self::NAME, "frame lacks checksum"));
        }
        let (body, sum) = data[4..].split_at(data.len() - 12);
        if fnv1a64(body).to_be_bytes() != sum {
            return Err(cx.fault(Self::NAME, "checksum mismatch"));
        }
        Ok(body.to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Env;
    use crate::handler::{CallScope, Side};
    use crate::message::{CallId, Phase};

    #[test]
    fn round_trip_and_corruption() {
        let scope = CallScope::new(Env::deterministic(0));
        let cx = scope.cx(CallId(1), Phase::Request, Side::Initiator);
        for data in [vec![], vec![1], vec![9; 100]] {
            let sent = Checksum.send(data.clone(), &cx).unwrap();
            assert_eq!(Checksum.receive(sent.clone(), &cx).unwrap(), data);
            let mut bad = sent;
            bad[4] ^= 1;
            assert_eq!(Checksum.receive(bad, &cx).unwrap_err().handler, "Checksum");
        }
    }
}
