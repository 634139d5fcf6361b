//! Point-to-point links between the BS and each vehicle.

use std::collections::BTreeSet;
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::messages::Message;
use crate::error::{Error, Result};

const RECV_TIMEOUT: Duration = Duration::from_secs(120);

/// One side of a duplex link.
pub trait Endpoint: Send {
    /// Returns the number of wire bytes the message occupies.
    fn send(&mut self, msg: &Message) -> Result<usize>;
    fn recv(&mut self) -> Result<Message>;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransportKind {
    #[default]
    InProcess,
    UnixSocket,
}

pub struct Link {
    pub client: Box<dyn Endpoint>,
    pub server: Box<dyn Endpoint>,
}

pub fn connect(kind: TransportKind) -> Result<Link> {
    match kind {
        TransportKind::InProcess => {
            let (a, b) = QueueEndpoint::pair();
            Ok(Link {
                client: Box::new(a),
                server: Box::new(b),
            })
        }
        TransportKind::UnixSocket => {
            let (a, b) = SocketEndpoint::pair()?;
            Ok(Link {
                client: Box::new(a),
                server: Box::new(b),
            })
        }
    }
}

fn recv_from(rx: &Receiver<Result<Message>>) -> Result<Message> {
    match rx.recv_timeout(RECV_TIMEOUT) {
        Ok(m) => m,
        Err(RecvTimeoutError::Timeout) => Err(Error::Transport("receive timed out".into())),
        Err(RecvTimeoutError::Disconnected) => Err(Error::Transport("peer disconnected".into())),
    }
}

/// In-process queue endpoint; messages move as values.
pub struct QueueEndpoint {
    tx: Sender<Result<Message>>,
    rx: Receiver<Result<Message>>,
}

impl QueueEndpoint {
    pub fn pair() -> (Self, Self) {
        let (tx_a, rx_b) = channel();
        let (tx_b, rx_a) = channel();
        (Self { tx: tx_a, rx: rx_a }, Self { tx: tx_b, rx: rx_b })
    }
}

impl Endpoint for QueueEndpoint {
    fn send(&mut self, msg: &Message) -> Result<usize> {
        self.tx
            .send(Ok(msg.clone()))
            .map_err(|_| Error::Transport("peer disconnected".into()))?;
        Ok(msg.encoded_len())
    }

    fn recv(&mut self) -> Result<Message> {
        recv_from(&self.rx)
    }
}

/// Length-prefixed frames over a connected local socket pair. A reader
/// thread drains the socket so that writers never stall on a full buffer.
#[cfg(unix)]
pub struct SocketEndpoint {
    stream: std::os::unix::net::UnixStream,
    rx: Receiver<Result<Message>>,
    reader: Option<JoinHandle<()>>,
}

#[cfg(unix)]
impl SocketEndpoint {
    pub fn pair() -> Result<(Self, Self)> {
        let (a, b) = std::os::unix::net::UnixStream::pair()?;
        Ok((Self::spawn(a)?, Self::spawn(b)?))
    }

    fn spawn(stream: std::os::unix::net::UnixStream) -> Result<Self> {
        let mut read_half = stream.try_clone()?;
        let (tx, rx) = channel();
        let reader = std::thread::Builder::new()
            .name("vfl-socket-reader".into())
            .spawn(move || loop {
                match Message::read_from(&mut read_half) {
                    Ok(Some(m)) => {
                        if tx.send(Ok(m)).is_err() {
                            break;
                        }
                    }
                    Ok(None) => break,
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        break;
                    }
                }
            })?;
        Ok(Self {
            stream,
            rx,
            reader: Some(reader),
        })
    }
}

#[cfg(unix)]
impl Endpoint for SocketEndpoint {
    fn send(&mut self, msg: &Message) -> Result<usize> {
        msg.write_to(&mut self.stream)
    }

    fn recv(&mut self) -> Result<Message> {
        recv_from(&self.rx)
    }
}

#[cfg(unix)]
impl Drop for SocketEndpoint {
    fn drop(&mut self) {
        let _ = self.stream.shutdown(std::net::Shutdown::Both);
        if let Some(h) = self.reader.take() {
            let _ = h.join();
        }
    }
}

/// Wraps an endpoint and fails chosen send calls (counted from zero)
/// before anything reaches the wire.
pub struct FaultyEndpoint {
    inner: Box<dyn Endpoint>,
    fail_on: BTreeSet<usize>,
    sends: usize,
}

impl FaultyEndpoint {
    pub fn new(inner: Box<dyn Endpoint>, fail_on: impl IntoIterator<Item = usize>) -> Self {
        Self {
            inner,
            fail_on: fail_on.into_iter().collect(),
            sends: 0,
        }
    }
}

impl Endpoint for FaultyEndpoint {
    fn send(&mut self, msg: &Message) -> Result<usize> {
        let i = self.sends;
        self.sends += 1;
        if self.fail_on.contains(&i) {
            return Err(Error::Transport(format!("injected drop of send #{i}")));
        }
        self.inner.send(msg)
    }

    fn recv(&mut self) -> Result<Message> {
        self.inner.recv()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vfl::messages::Body;

    fn exchange(kind: TransportKind) {
        let mut link = connect(kind).unwrap();
        let up = Message {
            vehicle: 4,
            body: Body::UplinkRaw((0..5000).map(|i| i as f32 * 0.5).collect()),
        };
        let n = link.client.send(&up).unwrap();
        assert_eq!(n, up.encoded_len());
        assert_eq!(link.server.recv().unwrap(), up);
        let down = Message {
            vehicle: 4,
            body: Body::Downlink(vec![0.25; 8]),
        };
        link.server.send(&down).unwrap();
        assert_eq!(link.client.recv().unwrap(), down);
    }

    #[test]
    fn queue_link_delivers_in_both_directions() {
        exchange(TransportKind::InProcess);
    }

    #[test]
    fn socket_link_delivers_in_both_directions() {
        exchange(TransportKind::UnixSocket);
    }

    #[test]
    fn large_socket_messages_do_not_stall_the_writer() {
        let mut link = connect(TransportKind::UnixSocket).unwrap();
        let big = Message {
            vehicle: 1,
            body: Body::UplinkRaw(vec![1.0; 1 << 20]),
        };
        for _ in 0..3 {
            link.client.send(&big).unwrap();
        }
        for _ in 0..3 {
            assert_eq!(link.server.recv().unwrap(), big);
        }
    }

    #[test]
    fn faulty_endpoint_drops_selected_sends() {
        let link = connect(TransportKind::InProcess).unwrap();
        let mut f = FaultyEndpoint::new(link.client, [1]);
        let m = Message {
            vehicle: 0,
            body: Body::Downlink(vec![]),
        };
        assert!(f.send(&m).is_ok());
        assert!(matches!(f.send(&m), Err(Error::Transport(_))));
        assert!(f.send(&m).is_ok());
    }
}
