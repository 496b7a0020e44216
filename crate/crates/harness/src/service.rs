//! WebSocket endpoint for UI clients.
//!
//! One acceptor thread plus one thread per client. Inbound frames are
//! validated here; valid joystick and command messages reach the
//! simulation through an ordered channel, invalid ones are answered with an
//! error frame and the connection stays open. Telemetry is broadcast to all
//! connected clients; a client that goes away is dropped and the
//! simulation carries on.

use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use tungstenite::{Message as WsMessage, WebSocket};

use crate::protocol::{parse_client_message, Message};
use crate::HarnessError;

const POLL: Duration = Duration::from_millis(5);

type Clients = Arc<Mutex<Vec<Sender<String>>>>;

pub struct Service {
    addr: SocketAddr,
    inbound: Receiver<Message>,
    clients: Clients,
    shutdown: Arc<AtomicBool>,
    acceptor: Option<thread::JoinHandle<()>>,
}

impl Service {
    /// Listens on 127.0.0.1:`port`; port 0 picks a free one.
    pub fn bind(port: u16) -> Result<Self, HarnessError> {
        let listener =
            TcpListener::bind(("127.0.0.1", port)).map_err(|e| HarnessError::Service(format!("bind {port}: {e}")))?;
        let addr = listener
            .local_addr()
            .map_err(|e| HarnessError::Service(e.to_string()))?;
        listener
            .set_nonblocking(true)
            .map_err(|e| HarnessError::Service(e.to_string()))?;
        let (tx, inbound) = mpsc::channel();
        let clients: Clients = Arc::default();
        let shutdown = Arc::new(AtomicBool::new(false));
        let acceptor = {
            let clients = clients.clone();
            let shutdown = shutdown.clone();
            thread::spawn(move || accept_loop(listener, tx, clients, shutdown))
        };
        Ok(Self {
            addr,
            inbound,
            clients,
            shutdown,
            acceptor: Some(acceptor),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn client_count(&self) -> usize {
        self.clients.lock().expect("client list lock").len()
    }

    /// Next client message, if any, in arrival order.
    pub fn try_recv(&self) -> Option<Message> {
        self.inbound.try_recv().ok()
    }

    pub fn broadcast(&self, text: &str) {
        let mut clients = self.clients.lock().expect("client list lock");
        clients.retain(|c| c.send(text.to_string()).is_ok());
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

fn accept_loop(listener: TcpListener, inbound: Sender<Message>, clients: Clients, shutdown: Arc<AtomicBool>) {
    while !shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let (tx, rx) = mpsc::channel();
                let inbound = inbound.clone();
                let shutdown = shutdown.clone();
                let registered = clients.clone();
                thread::spawn(move || {
                    if let Ok(ws) = handshake(stream) {
                        registered.lock().expect("client list lock").push(tx);
                        serve_client(ws, inbound, rx, shutdown);
                    }
                });
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(_) => thread::sleep(POLL),
        }
    }
}

fn handshake(stream: TcpStream) -> Result<WebSocket<TcpStream>, ()> {
    stream.set_nonblocking(false).map_err(|_| ())?;
    stream.set_nodelay(true).map_err(|_| ())?;
    let ws = tungstenite::accept(stream).map_err(|_| ())?;
    ws.get_ref().set_read_timeout(Some(POLL)).map_err(|_| ())?;
    Ok(ws)
}

fn serve_client(
    mut ws: WebSocket<TcpStream>,
    inbound: Sender<Message>,
    outbound: Receiver<String>,
    shutdown: Arc<AtomicBool>,
) {
    while !shutdown.load(Ordering::SeqCst) {
        match ws.read() {
            Ok(WsMessage::Text(text)) => match parse_client_message(text.as_str()) {
                Ok(msg) => {
                    if inbound.send(msg).is_err() {
                        return;
                    }
                }
                Err(err) => {
                    if ws.send(WsMessage::text(err)).is_err() {
                        return;
                    }
                }
            },
            Ok(WsMessage::Binary(_)) => {
                let err = crate::protocol::error_message(
                    crate::protocol::ErrorCode::Malformed,
                    "binary frames are not supported",
                );
                if ws.send(WsMessage::text(err)).is_err() {
                    return;
                }
            }
            Ok(WsMessage::Close(_)) => {
                let _ = ws.flush();
                return;
            }
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(_) => return,
        }
        loop {
            match outbound.try_recv() {
                Ok(text) => {
                    if ws.write(WsMessage::text(text)).is_err() {
                        return;
                    }
                }
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => {
                    let _ = ws.close(None);
                    let _ = ws.flush();
                    return;
                }
            }
        }
        match ws.flush() {
            Ok(()) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(_) => return,
        }
    }
    let _ = ws.close(None);
    let _ = ws.flush();
}
