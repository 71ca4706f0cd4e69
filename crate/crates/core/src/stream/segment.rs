//! Segmentation into datagram-sized fragments and reassembly.
//!
//! Fragment layout (big-endian):
//!
//! ```text
//! marker 0xF1 | message-id u64 | index u16 | count u16 | payload-len u16 | payload
//! ```

use std::collections::HashMap;

use thiserror::Error;

pub const FRAGMENT_HEADER_LEN: usize = 15;
pub const FRAGMENT_MARKER: u8 = 0xF1;
/// Default time a partial message waits for its missing fragments.
pub const DEFAULT_REASSEMBLY_TIMEOUT_MS: i64 = 2_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SegmentError {
    #[error("mtu {0} leaves no room after the {FRAGMENT_HEADER_LEN}-byte fragment header")]
    MtuTooSmall(usize),
    #[error("{0} bytes need more than 65535 fragments")]
    TooLarge(usize),
    #[error("malformed fragment: {0}")]
    Malformed(&'static str),
    #[error("fragment {index} of {count} disagrees with earlier fragments of message {id:016x}")]
    Inconsistent { id: u64, index: u16, count: u16 },
    #[error("reassembly of message {0:016x} timed out")]
    TimedOut(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fragment {
    pub message_id: u64,
    pub index: u16,
    pub count: u16,
    pub payload: Vec<u8>,
}

impl Fragment {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FRAGMENT_HEADER_LEN + self.payload.len());
        out.push(FRAGMENT_MARKER);
        out.extend_from_slice(&self.message_id.to_be_bytes());
        out.extend_from_slice(&self.index.to_be_bytes());
        out.extend_from_slice(&self.count.to_be_bytes());
        out.extend_from_slice(&(self.payload.len() as u16).to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(b: &[u8]) -> Result<Self, SegmentError> {
        if b.len() < FRAGMENT_HEADER_LEN {
            return Err(SegmentError::Malformed("shorter than header"));
        }
        if b[0] != FRAGMENT_MARKER {
            return Err(SegmentError::Malformed("bad marker"));
        }
        let message_id = u64::from_be_bytes(b[1..9].try_into().unwrap());
        let index = u16::from_be_bytes([b[9], b[10]]);
        let count = u16::from_be_bytes([b[11], b[12]]);
        let len = u16::from_be_bytes([b[13], b[14]]) as usize;
        if b.len() != FRAGMENT_HEADER_LEN + len {
            return Err(SegmentError::Malformed("payload length mismatch"));
        }
        if count == 0 || index >= count {
            return Err(SegmentError::Malformed("index out of range"));
        }
        Ok(Self { message_id, index, count, payload: b[FRAGMENT_HEADER_LEN..].to_vec() })
    }
}

/// True when `b` starts like a fragment rather than a whole frame.
pub fn is_fragment(b: &[u8]) -> bool {
    b.first() == Some(&FRAGMENT_MARKER)
}

/// Splits `data` into `ceil(len / (mtu - 15))` fragments, at least one.
pub fn segment(data: &[u8], mtu: usize, message_id: u64) -> Result<Vec<Fragment>, SegmentError> {
    if mtu <= FRAGMENT_HEADER_LEN {
        return Err(SegmentError::MtuTooSmall(mtu));
    }
    let room = (mtu - FRAGMENT_HEADER_LEN).min(u16::MAX as usize);
    let count = data.len().div_ceil(room).max(1);
    if count > u16::MAX as usize {
        return Err(SegmentError::TooLarge(data.len()));
    }
    if data.is_empty() {
        return Ok(vec![Fragment { message_id, index: 0, count: 1, payload: Vec::new() }]);
    }
    Ok(data
        .chunks(room)
        .enumerate()
        .map(|(i, chunk)| Fragment {
            message_id,
            index: i as u16,
            count: count as u16,
            payload: chunk.to_vec(),
        })
        .collect())
}

struct Partial {
    count: u16,
    parts: Vec<Option<Vec<u8>>>,
    received: usize,
    started_ms: i64,
}

/// Collects fragments of many messages, in any order.
pub struct Reassembler {
    timeout_ms: i64,
    partial: HashMap<u64, Partial>,
}

impl Reassembler {
    pub fn new(timeout_ms: i64) -> Self {
        Self { timeout_ms, partial: HashMap::new() }
    }

    /// Returns the whole message once its last missing fragment arrives.
    pub fn offer(&mut self, f: Fragment, now_ms: i64) -> Result<Option<Vec<u8>>, SegmentError> {
        if f.count == 1 {
            return Ok(Some(f.payload));
        }
        let p = self.partial.entry(f.message_id).or_insert_with(|| Partial {
            count: f.count,
            parts: vec![None; f.count as usize],
            received: 0,
            started_ms: now_ms,
        });
        if p.count != f.count {
            return Err(SegmentError::Inconsistent { id: f.message_id, index: f.index, count: f.count });
        }
        let slot = &mut p.parts[f.index as usize];
        if slot.is_none() {
            *slot = Some(f.payload);
            p.received += 1;
        }
        if p.received < p.count as usize {
            return Ok(None);
        }
        let p = self.partial.remove(&f.message_id).unwrap();
        Ok(Some(p.parts.into_iter().flatten().flatten().collect()))
    }

    /// Drops partial messages older than the timeout, returning their ids.
    pub fn expire(&mut self, now_ms: i64) -> Vec<u64> {
        let horizon = now_ms - self.timeout_ms;
        let mut dropped: Vec<u64> = self
            .partial
            .iter()
            .filter(|(_, p)| p.started_ms < horizon)
            .map(|(id, _)| *id)
            .collect();
        dropped.sort_unstable();
        for id in &dropped {
            self.partial.remove(id);
        }
        dropped
    }

    pub fn pending(&self) -> usize {
        self.partial.len()
    }
}

impl Default for Reassembler {
    fn default() -> Self {
        Self::new(DEFAULT_REASSEMBLY_TIMEOUT_MS)
    }
}
