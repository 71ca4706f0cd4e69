//! Datagrams, segmented when a frame exceeds the MTU.

use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use super::segment::{is_fragment, segment, Fragment, Reassembler, DEFAULT_REASSEMBLY_TIMEOUT_MS};
use super::{Connection, FrameHandler, Listener, TransportError};
use crate::message::{Address, TransportKind};

pub const DEFAULT_MTU: usize = 1200;
const MAX_DATAGRAM: usize = 65_507;
const POLL: Duration = Duration::from_millis(100);

static NEXT_MESSAGE_ID: AtomicU64 = AtomicU64::new(0);

fn message_id() -> u64 {
    let n = NEXT_MESSAGE_ID.fetch_add(1, Ordering::Relaxed);
    (u64::from(std::process::id()) << 40) ^ n
}

fn send_frame(sock: &UdpSocket, to: Option<SocketAddr>, frame: &[u8], mtu: usize) -> Result<(), TransportError> {
    let datagrams = if frame.len() <= mtu && !is_fragment(frame) {
        vec![frame.to_vec()]
    } else {
        segment(frame, mtu, message_id())
            .map_err(|e| TransportError::Io(e.to_string()))?
            .iter()
            .map(Fragment::encode)
            .collect()
    };
    for d in datagrams {
        match to {
            Some(peer) => sock.send_to(&d, peer)?,
            None => sock.send(&d)?,
        };
    }
    Ok(())
}

fn elapsed_ms(start: Instant) -> i64 {
    start.elapsed().as_millis() as i64
}

/// Feeds a datagram to the reassembler; complete frames come back.
fn absorb(r: &mut Reassembler, d: &[u8], start: Instant) -> Option<Vec<u8>> {
    if !is_fragment(d) {
        return Some(d.to_vec());
    }
    let f = Fragment::decode(d).ok()?;
    r.offer(f, elapsed_ms(start)).ok().flatten()
}

pub fn connect(addr: &Address, mtu: usize) -> Result<Box<dyn Connection>, TransportError> {
    if addr.kind != TransportKind::Udp {
        return Err(TransportError::WrongKind("udp", addr.to_string()));
    }
    let sock = UdpSocket::bind(("0.0.0.0", 0))?;
    sock.connect((addr.host.as_str(), addr.port))?;
    Ok(Box::new(UdpConn { sock, mtu }))
}

struct UdpConn {
    sock: UdpSocket,
    mtu: usize,
}

impl Connection for UdpConn {
    fn send(&mut self, frame: &[u8]) -> Result<(), TransportError> {
        send_frame(&self.sock, None, frame, self.mtu)
    }

    fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>, TransportError> {
        let start = Instant::now();
        let mut r = Reassembler::new(DEFAULT_REASSEMBLY_TIMEOUT_MS);
        let mut buf = vec![0u8; MAX_DATAGRAM];
        loop {
            let left = timeout.saturating_sub(start.elapsed());
            if left.is_zero() {
                return Err(TransportError::Timeout);
            }
            self.sock.set_read_timeout(Some(left))?;
            let n = self.sock.recv(&mut buf)?;
            if let Some(frame) = absorb(&mut r, &buf[..n], start) {
                return Ok(frame);
            }
        }
    }

    fn close(self: Box<Self>) {}
}

pub fn listen(addr: &Address, handler: Arc<dyn FrameHandler>, mtu: usize) -> Result<Listener, TransportError> {
    if addr.kind != TransportKind::Udp {
        return Err(TransportError::WrongKind("udp", addr.to_string()));
    }
    let sock = UdpSocket::bind((addr.host.as_str(), addr.port))?;
    sock.set_read_timeout(Some(POLL))?;
    let bound = Address::new(TransportKind::Udp, addr.host.clone(), sock.local_addr()?.port(), addr.object.clone());
    let stopped = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&stopped);
    thread::Builder::new().name(format!("udp {}", bound.endpoint())).spawn(move || {
        let start = Instant::now();
        let mut partial: std::collections::HashMap<SocketAddr, Reassembler> = Default::default();
        let mut buf = vec![0u8; MAX_DATAGRAM];
        while !flag.load(Ordering::SeqCst) {
            let (n, peer) = match sock.recv_from(&mut buf) {
                Ok(x) => x,
                Err(_) => {
                    partial.retain(|_, r| {
                        r.expire(elapsed_ms(start));
                        r.pending() > 0
                    });
                    continue;
                }
            };
            let r = partial.entry(peer).or_default();
            if let Some(frame) = absorb(r, &buf[..n], start) {
                if let Some(reply) = handler.handle(frame) {
                    let _ = send_frame(&sock, Some(peer), &reply, mtu);
                }
            }
        }
    })?;
    Ok(Listener::new(bound, Box::new(move || stopped.store(true, Ordering::SeqCst))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    #[test]
    fn ten_kib_arrives_in_fragments() {
        let sizes = Arc::new(Mutex::new(Vec::new()));
        let seen = Arc::clone(&sizes);
        let l = listen(
            &Address::new(TransportKind::Udp, "127.0.0.1", 0, "Echo"),
            Arc::new(move |f: Vec<u8>| {
                seen.lock().unwrap().push(f.len());
                Some(f)
            }),
            1200,
        )
        .unwrap();
        let frame: Vec<u8> = (0..10_240u32).map(|i| (i % 253) as u8).collect();
        assert_eq!(segment(&frame, 1200, 0).unwrap().len(), 10_240usize.div_ceil(1185));
        let mut c = connect(l.address(), 1200).unwrap();
        c.send(&frame).unwrap();
        assert_eq!(c.recv(Duration::from_secs(5)).unwrap(), frame);
        assert_eq!(*sizes.lock().unwrap(), vec![10_240]);
    }

    #[test]
    fn small_frame_single_datagram() {
        let l = listen(&Address::new(TransportKind::Udp, "127.0.0.1", 0, "Echo"), Arc::new(|f: Vec<u8>| Some(f)), 1200).unwrap();
        let mut c = connect(l.address(), 1200).unwrap();
        c.send(b"ping").unwrap();
        assert_eq!(c.recv(Duration::from_secs(2)).unwrap(), b"ping");
    }
}
