//! Websocket server for the operator console.

use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use anyhow::Context;
use telebots::net::bridge::BridgeMessage;
use telebots::scenario::Injection;
use tungstenite::{Message, WebSocket};

type Clients = Arc<Mutex<Vec<Sender<String>>>>;

/// Accepts console connections, fans snapshots out to them and collects
/// their input as injections.
pub struct BridgeServer {
    addr: SocketAddr,
    clients: Clients,
    inbound: Receiver<Injection>,
}

impl BridgeServer {
    pub fn start(port: u16) -> anyhow::Result<Self> {
        let listener = TcpListener::bind(("127.0.0.1", port)).with_context(|| format!("binding bridge port {port}"))?;
        let addr = listener.local_addr()?;
        let clients: Clients = Arc::default();
        let (tx, inbound) = mpsc::channel();
        let accept_clients = Arc::clone(&clients);
        thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                let (out_tx, out_rx) = mpsc::channel();
                accept_clients.lock().expect("client list").push(out_tx);
                let tx = tx.clone();
                thread::spawn(move || {
                    if let Err(e) = serve_client(stream, out_rx, tx) {
                        eprintln!("bridge client closed: {e}");
                    }
                });
            }
        });
        Ok(Self { addr, clients, inbound })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn broadcast(&self, msg: &BridgeMessage) {
        let text = msg.to_json();
        self.clients
            .lock()
            .expect("client list")
            .retain(|c| c.send(text.clone()).is_ok());
    }

    pub fn drain(&self) -> Vec<Injection> {
        self.inbound.try_iter().collect()
    }
}

/// Maps a console message onto the session. Snapshots are output only.
pub fn to_injection(msg: BridgeMessage) -> Option<Injection> {
    match msg {
        BridgeMessage::SetLinkParams(p) => Some(Injection::LinkParams(p)),
        BridgeMessage::PointerInput { x, y, pressed, target } => Some(Injection::Pointer { x, y, pressed, target }),
        BridgeMessage::Snapshot { .. } => None,
        other => other.to_payload().map(Injection::Remote),
    }
}

fn serve_client(stream: TcpStream, outbound: Receiver<String>, inbound: Sender<Injection>) -> anyhow::Result<()> {
    let mut ws: WebSocket<TcpStream> = tungstenite::accept(stream)?;
    ws.get_ref().set_read_timeout(Some(Duration::from_millis(5)))?;
    loop {
        loop {
            match outbound.try_recv() {
                Ok(text) => ws.send(Message::text(text))?,
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => return Ok(()),
            }
        }
        match ws.read() {
            Ok(Message::Text(text)) => match BridgeMessage::from_json(&text) {
                Ok(msg) => {
                    if let Some(inj) = to_injection(msg) {
                        if inbound.send(inj).is_err() {
                            return Ok(());
                        }
                    }
                }
                Err(e) => eprintln!("bridge: ignoring malformed message: {e}"),
            },
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(e.into()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn console_messages_map_to_injections() {
        let pointer =
            BridgeMessage::from_json(r#"{"type":"POINTER_INPUT","x":3.0,"y":4.0,"pressed":true,"target":"p"}"#)
                .unwrap();
        assert_eq!(
            to_injection(pointer),
            Some(Injection::Pointer {
                x: 3.0,
                y: 4.0,
                pressed: true,
                target: Some("p".into())
            })
        );
        let bind = BridgeMessage::from_json(r#"{"type":"BIND_CTL","binding_id":"walk","active":false}"#).unwrap();
        assert!(matches!(to_injection(bind), Some(Injection::Remote(_))));
    }
}
