//! Process environment shared by channels: clock, call identifiers and
//! randomness. A seeded environment makes every one of these reproducible.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fnv::fnv1a64;
use crate::message::CallId;

/// Environment variable carrying the deterministic-mode seed.
pub const SEED_VAR: &str = "CHANNELRPC_SEED";

/// Base of the seeded clock: 2001-09-09T01:46:40Z.
const SEEDED_EPOCH_MS: i64 = 1_000_000_000_000;

pub trait Clock: Send + Sync {
    /// Milliseconds since the Unix epoch.
    fn now_ms(&self) -> i64;
}

#[derive(Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> i64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as i64)
            .unwrap_or(0)
    }
}

/// Counter clock: every read advances time by one millisecond.
#[derive(Debug)]
pub struct SeededClock {
    next: AtomicU64,
}

impl SeededClock {
    pub fn new(seed: u64) -> Self {
        Self {
            next: AtomicU64::new(SEEDED_EPOCH_MS as u64 + (seed % 1_000_000)),
        }
    }

    /// Moves the clock forward without producing a reading.
    pub fn advance(&self, ms: u64) {
        self.next.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for SeededClock {
    fn now_ms(&self) -> i64 {
        self.next.fetch_add(1, Ordering::SeqCst) as i64
    }
}

/// Issues call identifiers that are unique for the life of the process
/// (or of the seeded environment): a 64-bit prefix and a 64-bit counter.
#[derive(Debug)]
pub struct CallIdSource {
    prefix: u64,
    counter: AtomicU64,
}

impl CallIdSource {
    pub fn random() -> Self {
        let mut prefix = rand::thread_rng().next_u64();
        if prefix == 0 {
            prefix = 1;
        }
        Self { prefix, counter: AtomicU64::new(1) }
    }

    pub fn seeded(seed: u64) -> Self {
        Self {
            prefix: fnv1a64(&seed.to_be_bytes()) | 1,
            counter: AtomicU64::new(1),
        }
    }

    pub fn next(&self) -> CallId {
        let n = self.counter.fetch_add(1, Ordering::SeqCst);
        CallId(((self.prefix as u128) << 64) | n as u128)
    }
}

static PROCESS_IDS: std::sync::OnceLock<CallIdSource> = std::sync::OnceLock::new();

/// Issues a fresh identifier from the process-wide source. Honors
/// `CHANNELRPC_SEED` on first use.
pub fn new_call_id() -> CallId {
    PROCESS_IDS
        .get_or_init(|| match seed_from_env() {
            Some(seed) => CallIdSource::seeded(seed),
            None => CallIdSource::random(),
        })
        .next()
}

pub fn seed_from_env() -> Option<u64> {
    std::env::var(SEED_VAR).ok()?.trim().parse().ok()
}

/// Clock, identifiers and randomness handed to every channel object.
#[derive(Clone)]
pub struct Env {
    clock: Arc<dyn Clock>,
    ids: Arc<CallIdSource>,
    rng: Arc<Mutex<ChaCha8Rng>>,
    seed: Option<u64>,
    counter_clock: Option<Arc<SeededClock>>,
}

impl Env {
    pub fn system() -> Self {
        Self {
            clock: Arc::new(SystemClock),
            ids: Arc::new(CallIdSource::random()),
            rng: Arc::new(Mutex::new(ChaCha8Rng::from_entropy())),
            seed: None,
            counter_clock: None,
        }
    }

    pub fn deterministic(seed: u64) -> Self {
        let clock = Arc::new(SeededClock::new(seed));
        Self {
            clock: clock.clone(),
            ids: Arc::new(CallIdSource::seeded(seed)),
            rng: Arc::new(Mutex::new(ChaCha8Rng::seed_from_u64(seed))),
            seed: Some(seed),
            counter_clock: Some(clock),
        }
    }

    /// Deterministic when `CHANNELRPC_SEED` is set, system otherwise.
    pub fn from_env() -> Self {
        match seed_from_env() {
            Some(seed) => Self::deterministic(seed),
            None => Self::system(),
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self.counter_clock = None;
        self
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn clock(&self) -> &dyn Clock {
        self.clock.as_ref()
    }

    pub fn now_ms(&self) -> i64 {
        self.clock.now_ms()
    }

    /// Advances a seeded clock; no-op for the system clock.
    pub fn advance_clock(&self, ms: u64) {
        if let Some(c) = &self.counter_clock {
            c.advance(ms);
        }
    }

    pub fn new_call_id(&self) -> CallId {
        self.ids.next()
    }

    pub fn random_bytes<const N: usize>(&self) -> [u8; N] {
        let mut out = [0u8; N];
        self.rng.lock().unwrap().fill_bytes(&mut out);
        out
    }

    pub fn random_u64(&self) -> u64 {
        self.rng.lock().unwrap().next_u64()
    }
}

impl std::fmt::Debug for Env {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Env").field("seed", &self.seed).finish()
    }
}
