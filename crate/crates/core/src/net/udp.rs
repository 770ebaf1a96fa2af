//! Real-socket transport for live mode. Carries the same encoded datagrams
//! as the simulated link.

use std::io;
use std::net::{SocketAddr, UdpSocket};

use super::bridge::LinkParams;
use super::link::{LinkModel, LinkStats, SimLink};

/// Something that moves encoded datagrams in one direction between two peers.
pub trait Transport {
    /// Returns the scheduled delivery time when known, `None` if dropped or unknown.
    fn send(&mut self, sender: &str, bytes: Vec<u8>, now_us: u64) -> Option<u64>;
    fn poll(&mut self, now_us: u64) -> Vec<Vec<u8>>;
    fn stats(&self) -> LinkStats;
    /// Retunes an emulated link. Transports without emulation ignore it.
    fn set_link_params(&mut self, _params: &LinkParams) {}
}

impl Transport for SimLink {
    fn send(&mut self, sender: &str, bytes: Vec<u8>, now_us: u64) -> Option<u64> {
        self.link_send(sender, bytes, now_us)
    }

    fn poll(&mut self, now_us: u64) -> Vec<Vec<u8>> {
        self.link_poll(now_us).into_iter().map(|d| d.bytes).collect()
    }

    fn stats(&self) -> LinkStats {
        SimLink::stats(self)
    }

    fn set_link_params(&mut self, params: &LinkParams) {
        let model = params.apply_to(self.model());
        self.set_model(model);
    }
}

pub const MAX_DATAGRAM: usize = 65_507;

/// One direction of a live link: datagrams leave `tx` for `dest` and arrive
/// on `rx`. An optional emulated link delays and drops datagrams before they
/// reach the socket.
#[derive(Debug)]
pub struct UdpTransport {
    tx: UdpSocket,
    rx: UdpSocket,
    dest: SocketAddr,
    emulation: Option<SimLink>,
    stats: LinkStats,
    buf: Vec<u8>,
}

impl UdpTransport {
    /// Receives on `rx_addr` and sends to `dest`.
    pub fn bind(rx_addr: SocketAddr, dest: SocketAddr) -> io::Result<Self> {
        let rx = UdpSocket::bind(rx_addr)?;
        let tx_addr = SocketAddr::new(rx_addr.ip(), 0);
        let tx = UdpSocket::bind(tx_addr)?;
        rx.set_nonblocking(true)?;
        tx.set_nonblocking(true)?;
        Ok(Self {
            tx,
            rx,
            dest,
            emulation: None,
            stats: LinkStats::default(),
            buf: vec![0; MAX_DATAGRAM],
        })
    }

    /// A channel that sends to its own receive socket on 127.0.0.1.
    pub fn loopback(port: u16) -> io::Result<Self> {
        let addr = SocketAddr::from(([127, 0, 0, 1], port));
        let mut t = Self::bind(addr, addr)?;
        t.dest = t.rx.local_addr()?;
        Ok(t)
    }

    pub fn with_emulation(mut self, model: LinkModel) -> Self {
        self.emulation = Some(SimLink::new(model));
        self
    }

    pub fn rx_addr(&self) -> io::Result<SocketAddr> {
        self.rx.local_addr()
    }

    fn transmit(&mut self, bytes: &[u8]) {
        if self.tx.send_to(bytes, self.dest).is_err() {
            self.stats.dropped += 1;
        }
    }
}

impl Transport for UdpTransport {
    fn send(&mut self, sender: &str, bytes: Vec<u8>, now_us: u64) -> Option<u64> {
        match self.emulation.as_mut() {
            Some(link) => {
                let at = link.link_send(sender, bytes, now_us);
                if at.is_none() {
                    self.stats.sent += 1;
                    self.stats.dropped += 1;
                }
                at
            }
            None => {
                self.stats.sent += 1;
                self.transmit(&bytes);
                None
            }
        }
    }

    fn poll(&mut self, now_us: u64) -> Vec<Vec<u8>> {
        let due = self.emulation.as_mut().map(|l| l.link_poll(now_us)).unwrap_or_default();
        for d in due {
            self.stats.sent += 1;
            self.transmit(&d.bytes);
        }
        let mut out = Vec::new();
        loop {
            match self.rx.recv_from(&mut self.buf) {
                Ok((n, _)) => out.push(self.buf[..n].to_vec()),
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => break,
                Err(_) => break,
            }
        }
        self.stats.delivered += out.len() as u64;
        out
    }

    fn stats(&self) -> LinkStats {
        self.stats
    }

    fn set_link_params(&mut self, params: &LinkParams) {
        if let Some(link) = self.emulation.as_mut() {
            let model = params.apply_to(link.model());
            link.set_model(model);
        }
    }
}

/// Remote-to-local and local-to-remote channels on the loopback interface.
/// `base_port` 0 picks free ports, otherwise `base_port` and `base_port + 1`.
pub fn loopback_pair(base_port: u16) -> io::Result<(UdpTransport, UdpTransport)> {
    let next = if base_port == 0 { 0 } else { base_port + 1 };
    Ok((UdpTransport::loopback(base_port)?, UdpTransport::loopback(next)?))
}
