//! Frame transport over any reliable byte stream, plus the in-memory pipe
//! used for single-process sessions and tests.

use super::frame::{decode_frame, encode_frame, Frame, FrameError, MsgType};
use std::io::{self, Read, Write};
use std::sync::mpsc::{channel, Receiver, Sender};

#[derive(Debug, thiserror::Error)]
pub enum LinkError {
    #[error("peer closed the link")]
    Closed,
    #[error("transport i/o: {0}")]
    Io(#[from] io::Error),
    #[error("framing: {0}")]
    Frame(#[from] FrameError),
}

/// Sends and receives authenticated frames over `S`, tracking one sequence
/// counter per direction. The whole protocol runs through this type, so a
/// TCP socket and an in-memory pipe produce byte-identical transcripts.
pub struct FramedLink<S> {
    stream: S,
    auth_key: Vec<u8>,
    send_seq: u64,
    recv_seq: u64,
    buf: Vec<u8>,
    bytes_sent: u64,
    bytes_received: u64,
}

fn is_disconnect(e: &io::Error) -> bool {
    matches!(
        e.kind(),
        io::ErrorKind::BrokenPipe
            | io::ErrorKind::ConnectionReset
            | io::ErrorKind::ConnectionAborted
            | io::ErrorKind::UnexpectedEof
    )
}

impl<S: Read + Write> FramedLink<S> {
    pub fn new(stream: S, auth_key: &[u8]) -> Self {
        FramedLink {
            stream,
            auth_key: auth_key.to_vec(),
            send_seq: 0,
            recv_seq: 0,
            buf: Vec::new(),
            bytes_sent: 0,
            bytes_received: 0,
        }
    }

    pub fn send(&mut self, msg_type: MsgType, payload: &[u8]) -> Result<(), LinkError> {
        let bytes = encode_frame(msg_type, self.send_seq, payload, &self.auth_key)?;
        self.stream.write_all(&bytes).map_err(|e| {
            if is_disconnect(&e) {
                LinkError::Closed
            } else {
                LinkError::Io(e)
            }
        })?;
        self.stream.flush()?;
        self.send_seq += 1;
        self.bytes_sent += bytes.len() as u64;
        Ok(())
    }

    pub fn recv(&mut self) -> Result<Frame, LinkError> {
        loop {
            match decode_frame(&self.buf, &self.auth_key, self.recv_seq) {
                Ok((frame, used)) => {
                    self.buf.drain(..used);
                    self.recv_seq += 1;
                    self.bytes_received += used as u64;
                    return Ok(frame);
                }
                Err(FrameError::Incomplete(_)) => {
                    let mut chunk = [0u8; 16 * 1024];
                    let n = self.stream.read(&mut chunk).map_err(|e| {
                        if is_disconnect(&e) {
                            LinkError::Closed
                        } else {
                            LinkError::Io(e)
                        }
                    })?;
                    if n == 0 {
                        return Err(LinkError::Closed);
                    }
                    self.buf.extend_from_slice(&chunk[..n]);
                }
                Err(e) => return Err(LinkError::Frame(e)),
            }
        }
    }

    pub fn bytes_sent(&self) -> u64 {
        self.bytes_sent
    }

    pub fn bytes_received(&self) -> u64 {
        self.bytes_received
    }

    pub fn into_inner(self) -> S {
        self.stream
    }
}

/// One end of an in-memory, bidirectional byte pipe. Dropping an end makes
/// the peer's reads return end-of-stream and its writes fail, mirroring a
/// closed socket.
pub struct DuplexPipe {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    pending: Vec<u8>,
    pos: usize,
}

pub fn loopback_pair() -> (DuplexPipe, DuplexPipe) {
    let (tx_ab, rx_ab) = channel();
    let (tx_ba, rx_ba) = channel();
    (
        DuplexPipe { tx: tx_ab, rx: rx_ba, pending: Vec::new(), pos: 0 },
        DuplexPipe { tx: tx_ba, rx: rx_ab, pending: Vec::new(), pos: 0 },
    )
}

impl Read for DuplexPipe {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        if out.is_empty() {
            return Ok(0);
        }
        while self.pos >= self.pending.len() {
            match self.rx.recv() {
                Ok(chunk) => {
                    self.pending = chunk;
                    self.pos = 0;
                }
                // sender dropped: clean end of stream
                Err(_) => return Ok(0),
            }
        }
        let n = out.len().min(self.pending.len() - self.pos);
        out[..n].copy_from_slice(&self.pending[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

impl Write for DuplexPipe {
    fn write(&mut self, data: &[u8]) -> io::Result<usize> {
        self.tx
            .send(data.to_vec())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "peer endpoint dropped"))?;
        Ok(data.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const KEY: &[u8] = b"0123456789abcdef";

    #[test]
    fn payloads_cross_the_loopback_intact() {
        let (a, b) = loopback_pair();
        let mut a = FramedLink::new(a, KEY);
        let mut b = FramedLink::new(b, KEY);
        a.send(MsgType::PaSeed, b"entropy").unwrap();
        let f = b.recv().unwrap();
        assert_eq!(f.msg_type, MsgType::PaSeed);
        assert_eq!(f.payload, b"entropy");
        b.send(MsgType::Abort, &[]).unwrap();
        assert_eq!(a.recv().unwrap().msg_type, MsgType::Abort);
        assert_eq!(a.bytes_sent(), b.bytes_received());
        assert_eq!(b.bytes_sent(), a.bytes_received());
    }

    #[test]
    fn a_hundred_thousand_messages_arrive_in_order() {
        let (a, b) = loopback_pair();
        let mut a = FramedLink::new(a, KEY);
        let mut b = FramedLink::new(b, KEY);
        for i in 0..100_000u32 {
            a.send(MsgType::EcParity, &i.to_le_bytes()).unwrap();
        }
        for i in 0..100_000u32 {
            let f = b.recv().unwrap();
            assert_eq!(f.seq, u64::from(i));
            assert_eq!(f.payload, i.to_le_bytes());
        }
    }

    #[test]
    fn dropping_an_endpoint_closes_the_peer() {
        let (a, b) = loopback_pair();
        let mut a = FramedLink::new(a, KEY);
        let b = FramedLink::new(b, KEY);
        drop(b);
        assert!(matches!(a.recv(), Err(LinkError::Closed)));
        assert!(matches!(a.send(MsgType::Abort, &[]), Err(LinkError::Closed)));
    }

    #[test]
    fn out_of_sequence_frames_kill_the_link() {
        let (a, mut raw) = loopback_pair();
        let mut a = FramedLink::new(a, KEY);
        let bytes = encode_frame(MsgType::SiftConfirm, 5, b"x", KEY).unwrap();
        raw.write_all(&bytes).unwrap();
        match a.recv() {
            Err(LinkError::Frame(FrameError::BadSeq { got: 5, want: 0 })) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tampered_frames_kill_the_link() {
        let (a, mut raw) = loopback_pair();
        let mut a = FramedLink::new(a, KEY);
        let mut bytes = encode_frame(MsgType::SiftConfirm, 0, b"digest", KEY).unwrap();
        let n = bytes.len();
        bytes[n - 20] ^= 0x40;
        raw.write_all(&bytes).unwrap();
        assert!(matches!(a.recv(), Err(LinkError::Frame(FrameError::BadTag))));
    }

    #[test]
    fn both_directions_flow_concurrently() {
        let (a, b) = loopback_pair();
        let mut a = FramedLink::new(a, KEY);
        let mut b = FramedLink::new(b, KEY);
        let peer = std::thread::spawn(move || {
            for i in 0..2000u32 {
                b.send(MsgType::BasisAnnounce, &i.to_le_bytes()).unwrap();
                let f = b.recv().unwrap();
                assert_eq!(f.payload, i.to_le_bytes());
            }
        });
        for i in 0..2000u32 {
            let f = a.recv().unwrap();
            assert_eq!(f.payload, i.to_le_bytes());
            a.send(MsgType::BasisAnnounce, &f.payload).unwrap();
        }
        peer.join().unwrap();
    }

    #[test]
    fn tcp_socket_runs_the_same_protocol() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            stream.set_nodelay(true).unwrap();
            let mut link = FramedLink::new(stream, KEY);
            loop {
                match link.recv() {
                    Ok(f) => link.send(f.msg_type, &f.payload).unwrap(),
                    Err(LinkError::Closed) => return,
                    Err(e) => panic!("{e}"),
                }
            }
        });
        let stream = std::net::TcpStream::connect(addr).unwrap();
        stream.set_nodelay(true).unwrap();
        let mut link = FramedLink::new(stream, KEY);
        for i in 0..500u32 {
            link.send(MsgType::VerifyDigest, &i.to_le_bytes()).unwrap();
            let f = link.recv().unwrap();
            assert_eq!(f.msg_type, MsgType::VerifyDigest);
            assert_eq!(f.payload, i.to_le_bytes());
        }
        drop(link);
        server.join().unwrap();
    }
}
