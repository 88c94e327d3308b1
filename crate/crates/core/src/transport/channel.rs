//! Bidirectional frame channels over loopback queues or TCP sockets.
//!
//! A channel splits into an independent sender and receiver so one thread
//! can stream updates out while another collects incoming frames.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use super::frame::{Frame, FrameDecoder, MessageType};
use super::payload::{decode_params, encode_params, WireDtype};
use crate::error::{Error, Result};
use crate::tensor::ParameterSet;

enum Chunk {
    Data(Vec<u8>),
    Eof,
    TimedOut,
}

trait ByteSink: Send {
    fn write_bytes(&mut self, bytes: &[u8]) -> Result<()>;
}

trait ByteSource: Send {
    fn read_chunk(&mut self, timeout: Duration) -> Result<Chunk>;
}

struct QueueSink {
    tx: mpsc::Sender<Vec<u8>>,
    fragment: usize,
}

impl ByteSink for QueueSink {
    fn write_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        for piece in bytes.chunks(self.fragment) {
            self.tx.send(piece.to_vec()).map_err(|_| Error::Connection("loopback peer closed".into()))?;
        }
        Ok(())
    }
}

struct QueueSource {
    rx: mpsc::Receiver<Vec<u8>>,
}

impl ByteSource for QueueSource {
    fn read_chunk(&mut self, timeout: Duration) -> Result<Chunk> {
        match self.rx.recv_timeout(timeout) {
            Ok(bytes) => Ok(Chunk::Data(bytes)),
            Err(mpsc::RecvTimeoutError::Timeout) => Ok(Chunk::TimedOut),
            Err(mpsc::RecvTimeoutError::Disconnected) => Ok(Chunk::Eof),
        }
    }
}

impl ByteSink for TcpStream {
    fn write_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        self.write_all(bytes).and_then(|_| self.flush()).map_err(Error::from_io_in_stream)
    }
}

struct TcpSource {
    stream: TcpStream,
    buffer: Box<[u8]>,
}

impl ByteSource for TcpSource {
    fn read_chunk(&mut self, timeout: Duration) -> Result<Chunk> {
        self.stream.set_read_timeout(Some(timeout.max(Duration::from_millis(1))))?;
        match self.stream.read(&mut self.buffer) {
            Ok(0) => Ok(Chunk::Eof),
            Ok(n) => Ok(Chunk::Data(self.buffer[..n].to_vec())),
            Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {
                Ok(Chunk::TimedOut)
            }
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => Ok(Chunk::Data(Vec::new())),
            Err(e) => Err(Error::from_io_in_stream(e)),
        }
    }
}

/// Outgoing half of a channel.
pub struct FrameSender {
    sink: Box<dyn ByteSink>,
    peer: String,
}

impl FrameSender {
    pub fn peer(&self) -> &str {
        &self.peer
    }

    pub fn send(&mut self, frame: &Frame) -> Result<()> {
        self.sink.write_bytes(&frame.encode()?)
    }

    pub fn send_params(
        &mut self,
        msg_type: MessageType,
        round: u32,
        sender_id: u32,
        params: &ParameterSet,
        dtype: WireDtype,
    ) -> Result<()> {
        self.send(&Frame::new(msg_type, round, sender_id, encode_params(params, dtype)?))
    }
}

/// Incoming half of a channel.
pub struct FrameReceiver {
    source: Box<dyn ByteSource>,
    decoder: FrameDecoder,
    peer: String,
}

impl FrameReceiver {
    pub fn peer(&self) -> &str {
        &self.peer
    }

    /// Blocks until one full frame has arrived or `timeout` has elapsed.
    pub fn recv(&mut self, timeout: Duration) -> Result<Frame> {
        let deadline = Instant::now() + timeout;
        loop {
            if let Some(frame) = self.decoder.next_frame()? {
                return Ok(frame);
            }
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                return Err(Error::Timeout(timeout.as_secs_f64(), format!("a frame from {}", self.peer)));
            }
            match self.source.read_chunk(remaining)? {
                Chunk::Data(bytes) => self.decoder.push(&bytes),
                Chunk::TimedOut => {}
                Chunk::Eof if self.decoder.buffered() > 0 => return Err(self.decoder.truncation()),
                Chunk::Eof => return Err(Error::Connection(format!("{} closed the connection", self.peer))),
            }
        }
    }

    /// Receives a parameter-carrying frame of the given type.
    pub fn recv_params(&mut self, msg_type: MessageType, timeout: Duration) -> Result<(Frame, ParameterSet)> {
        let frame = self.recv(timeout)?.expect(msg_type)?;
        let params = decode_params(&frame.payload)?;
        Ok((frame, params))
    }
}

/// A connected, bidirectional frame channel.
pub struct Channel {
    sender: FrameSender,
    receiver: FrameReceiver,
}

impl Channel {
    pub fn split(self) -> (FrameSender, FrameReceiver) {
        (self.sender, self.receiver)
    }

    pub fn join(sender: FrameSender, receiver: FrameReceiver) -> Channel {
        Channel { sender, receiver }
    }

    pub fn peer(&self) -> &str {
        self.sender.peer()
    }

    pub fn set_peer(&mut self, peer: impl Into<String>) {
        let peer = peer.into();
        self.sender.peer = peer.clone();
        self.receiver.peer = peer;
    }

    pub fn sender(&mut self) -> &mut FrameSender {
        &mut self.sender
    }

    pub fn receiver(&mut self) -> &mut FrameReceiver {
        &mut self.receiver
    }

    pub fn send(&mut self, frame: &Frame) -> Result<()> {
        self.sender.send(frame)
    }

    pub fn recv(&mut self, timeout: Duration) -> Result<Frame> {
        self.receiver.recv(timeout)
    }

    pub fn send_params(
        &mut self,
        msg_type: MessageType,
        round: u32,
        sender_id: u32,
        params: &ParameterSet,
        dtype: WireDtype,
    ) -> Result<()> {
        self.sender.send_params(msg_type, round, sender_id, params, dtype)
    }

    pub fn recv_params(&mut self, msg_type: MessageType, timeout: Duration) -> Result<(Frame, ParameterSet)> {
        self.receiver.recv_params(msg_type, timeout)
    }

    pub fn tcp(stream: TcpStream) -> Result<Channel> {
        stream.set_nodelay(true)?;
        let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_else(|_| "tcp peer".into());
        let reader = stream.try_clone()?;
        Ok(Channel {
            sender: FrameSender { sink: Box::new(stream), peer: peer.clone() },
            receiver: FrameReceiver {
                source: Box::new(TcpSource { stream: reader, buffer: vec![0; 1 << 16].into_boxed_slice() }),
                decoder: FrameDecoder::new(),
                peer,
            },
        })
    }
}

/// Two connected in-process endpoints.
pub fn loopback_pair() -> (Channel, Channel) {
    loopback_pair_fragmented(usize::MAX)
}

/// Like [`loopback_pair`], but every write is delivered in pieces of at most
/// `fragment` bytes.
pub fn loopback_pair_fragmented(fragment: usize) -> (Channel, Channel) {
    let fragment = fragment.max(1);
    let (a_tx, b_rx) = mpsc::channel();
    let (b_tx, a_rx) = mpsc::channel();
    let end = |tx, rx, peer: &str| Channel {
        sender: FrameSender { sink: Box::new(QueueSink { tx, fragment }), peer: peer.into() },
        receiver: FrameReceiver { source: Box::new(QueueSource { rx }), decoder: FrameDecoder::new(), peer: peer.into() },
    };
    (end(a_tx, a_rx, "loopback peer"), end(b_tx, b_rx, "loopback peer"))
}

/// Accepts incoming channels, over TCP or in process.
pub trait Acceptor: Send {
    fn accept(&mut self, timeout: Duration) -> Result<Channel>;
}

pub struct TcpAcceptor {
    listener: TcpListener,
}

impl TcpAcceptor {
    pub fn bind(address: &str) -> Result<Self> {
        let listener =
            TcpListener::bind(address).map_err(|e| Error::Connection(format!("cannot bind {address}: {e}")))?;
        listener.set_nonblocking(true)?;
        Ok(TcpAcceptor { listener })
    }

    pub fn local_addr(&self) -> Result<std::net::SocketAddr> {
        Ok(self.listener.local_addr()?)
    }
}

impl Acceptor for TcpAcceptor {
    fn accept(&mut self, timeout: Duration) -> Result<Channel> {
        let deadline = Instant::now() + timeout;
        loop {
            match self.listener.accept() {
                Ok((stream, _)) => {
                    stream.set_nonblocking(false)?;
                    return Channel::tcp(stream);
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        return Err(Error::Timeout(timeout.as_secs_f64(), "an incoming connection".into()));
                    }
                    std::thread::sleep(Duration::from_millis(5));
                }
                Err(e) => return Err(Error::from_io_in_stream(e)),
            }
        }
    }
}

/// Dials `address`, retrying refused connections until `timeout` elapses so
/// peers may start in any order.
pub fn connect_tcp(address: &str, timeout: Duration) -> Result<Channel> {
    let deadline = Instant::now() + timeout;
    loop {
        let last_error = match address.to_socket_addrs() {
            Ok(addrs) => {
                let mut last = None;
                for addr in addrs {
                    match TcpStream::connect_timeout(&addr, Duration::from_secs(2)) {
                        Ok(stream) => return Channel::tcp(stream),
                        Err(e) => last = Some(e.to_string()),
                    }
                }
                last.unwrap_or_else(|| "no addresses".into())
            }
            Err(e) => return Err(Error::Connection(format!("cannot resolve {address}: {e}"))),
        };
        if Instant::now() >= deadline {
            return Err(Error::Connection(format!("cannot reach {address}: {last_error}")));
        }
        std::thread::sleep(Duration::from_millis(50));
    }
}

/// In-process listener; pair with the [`LoopbackConnector`] from
/// [`loopback_listener`].
pub struct LoopbackAcceptor {
    incoming: mpsc::Receiver<Channel>,
}

#[derive(Clone)]
pub struct LoopbackConnector {
    outgoing: mpsc::Sender<Channel>,
    fragment: usize,
}

pub fn loopback_listener() -> (LoopbackAcceptor, LoopbackConnector) {
    let (tx, rx) = mpsc::channel();
    (LoopbackAcceptor { incoming: rx }, LoopbackConnector { outgoing: tx, fragment: usize::MAX })
}

impl LoopbackConnector {
    pub fn with_fragment(mut self, fragment: usize) -> Self {
        self.fragment = fragment;
        self
    }

    pub fn connect(&self) -> Result<Channel> {
        let (local, remote) = loopback_pair_fragmented(self.fragment);
        self.outgoing.send(remote).map_err(|_| Error::Connection("loopback listener closed".into()))?;
        Ok(local)
    }
}

impl Acceptor for LoopbackAcceptor {
    fn accept(&mut self, timeout: Duration) -> Result<Channel> {
        self.incoming.recv_timeout(timeout).map_err(|e| match e {
            mpsc::RecvTimeoutError::Timeout => Error::Timeout(timeout.as_secs_f64(), "an incoming connection".into()),
            mpsc::RecvTimeoutError::Disconnected => Error::Connection("all loopback connectors dropped".into()),
        })
    }
}
