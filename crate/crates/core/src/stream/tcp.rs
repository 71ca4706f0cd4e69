//! Length-prefixed frames over TCP, one connection per call.

use std::io::{Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use super::{Connection, FrameHandler, Listener, TransportError};
use crate::message::{Address, TransportKind};

/// Frames above this size are refused rather than allocated.
pub const MAX_FRAME: usize = 64 << 20;

fn resolve(addr: &Address) -> Result<SocketAddr, TransportError> {
    (addr.host.as_str(), addr.port)
        .to_socket_addrs()
        .map_err(TransportError::from)?
        .next()
        .ok_or_else(|| TransportError::Unreachable(addr.endpoint()))
}

pub fn write_frame(w: &mut impl Write, frame: &[u8]) -> Result<(), TransportError> {
    if frame.len() > MAX_FRAME {
        return Err(TransportError::Io(format!("frame of {} bytes exceeds limit", frame.len())));
    }
    w.write_all(&(frame.len() as u32).to_be_bytes())?;
    w.write_all(frame)?;
    w.flush()?;
    Ok(())
}

/// Reads one frame; `Ok(None)` on a clean end of stream.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Vec<u8>>, TransportError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let n = u32::from_be_bytes(len) as usize;
    if n > MAX_FRAME {
        return Err(TransportError::Io(format!("peer announced a {n}-byte frame")));
    }
    let mut frame = vec![0u8; n];
    r.read_exact(&mut frame)?;
    Ok(Some(frame))
}

pub fn connect(addr: &Address, timeout: Duration) -> Result<Box<dyn Connection>, TransportError> {
    if addr.kind != TransportKind::Tcp {
        return Err(TransportError::WrongKind("tcp", addr.to_string()));
    }
    let stream = TcpStream::connect_timeout(&resolve(addr)?, timeout).map_err(|e| match TransportError::from(e) {
        TransportError::Timeout => TransportError::Unreachable(addr.endpoint()),
        other => other,
    })?;
    stream.set_nodelay(true)?;
    Ok(Box::new(TcpConn { stream }))
}

struct TcpConn {
    stream: TcpStream,
}

impl Connection for TcpConn {
    fn send(&mut self, frame: &[u8]) -> Result<(), TransportError> {
        write_frame(&mut self.stream, frame)
    }

    fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>, TransportError> {
        self.stream.set_read_timeout(Some(timeout.max(Duration::from_millis(1))))?;
        read_frame(&mut self.stream)?.ok_or(TransportError::Closed)
    }

    fn close(self: Box<Self>) {
        let _ = self.stream.shutdown(Shutdown::Both);
    }
}

pub fn listen(addr: &Address, handler: Arc<dyn FrameHandler>) -> Result<Listener, TransportError> {
    if addr.kind != TransportKind::Tcp {
        return Err(TransportError::WrongKind("tcp", addr.to_string()));
    }
    let socket = TcpListener::bind((addr.host.as_str(), addr.port))?;
    let local = socket.local_addr()?;
    let bound = Address::new(TransportKind::Tcp, addr.host.clone(), local.port(), addr.object.clone());
    let stopped = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&stopped);
    thread::Builder::new()
        .name(format!("tcp {local}"))
        .spawn(move || {
            for conn in socket.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                let handler = Arc::clone(&handler);
                thread::spawn(move || serve(stream, handler));
            }
        })?;
    Ok(Listener::new(
        bound,
        Box::new(move || {
            stopped.store(true, Ordering::SeqCst);
            let _ = TcpStream::connect_timeout(&local, Duration::from_millis(200));
        }),
    ))
}

fn serve(mut stream: TcpStream, handler: Arc<dyn FrameHandler>) {
    let _ = stream.set_nodelay(true);
    while let Ok(Some(frame)) = read_frame(&mut stream) {
        if let Some(reply) = handler.handle(frame) {
            if write_frame(&mut stream, &reply).is_err() {
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fnv::fnv1a64;

    #[test]
    fn mebibyte_round_trip() {
        let l = listen(&Address::new(TransportKind::Tcp, "127.0.0.1", 0, "Echo"), Arc::new(|f: Vec<u8>| Some(f))).unwrap();
        let frame: Vec<u8> = (0..1 << 20).map(|i| (i * 31 % 251) as u8).collect();
        let mut c = connect(l.address(), Duration::from_secs(2)).unwrap();
        c.send(&frame).unwrap();
        let back = c.recv(Duration::from_secs(5)).unwrap();
        c.close();
        assert_eq!(fnv1a64(&back), fnv1a64(&frame));
        assert_eq!(back.len(), frame.len());
    }

    #[test]
    fn refused_is_unreachable() {
        let l = listen(&Address::new(TransportKind::Tcp, "127.0.0.1", 0, "X"), Arc::new(|f: Vec<u8>| Some(f))).unwrap();
        let addr = l.address().clone();
        drop(l);
        thread::sleep(Duration::from_millis(50));
        // The port is closed once the accept loop has exited.
        let r = connect(&addr, Duration::from_millis(500)).and_then(|mut c| {
            c.send(b"x")?;
            c.recv(Duration::from_millis(200))
        });
        assert!(r.is_err());
    }

    #[test]
    fn prefix_framing() {
        let mut buf = Vec::new();
        write_frame(&mut buf, b"hey").unwrap();
        assert_eq!(buf, [0, 0, 0, 3, b'h', b'e', b'y']);
        let mut r = &buf[..];
        assert_eq!(read_frame(&mut r).unwrap(), Some(b"hey".to_vec()));
        assert_eq!(read_frame(&mut r).unwrap(), None);
    }
}
