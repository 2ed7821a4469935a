//! The NAPs on real UDP sockets over loopback. Two observers register
//! through one client-side NAP; a small origin server answers and pushes
//! confirmable notifications. The ICN core stays in-process.
//!
//!     cargo run --example udp_gateway

use std::collections::BTreeMap;
use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::time::{Duration, Instant};

use coap_icn::clock::SimTime;
use coap_icn::codec::{self, option, Code, CoapMessage, MessageType};
use coap_icn::fabric::{Fabric, FabricConfig, Topology};
use coap_icn::nap::{AttachedServer, Datagram, Nap, NapConfig, NapIo};

const FQDN: &str = "aueb.example.gr";
const NOTIFICATIONS: u32 = 3;

fn bind() -> io::Result<UdpSocket> {
    let s = UdpSocket::bind("127.0.0.1:0")?;
    s.set_nonblocking(true)?;
    Ok(s)
}

fn recv(s: &UdpSocket) -> io::Result<Option<(Vec<u8>, SocketAddr)>> {
    let mut buf = [0u8; 1500];
    match s.recv_from(&mut buf) {
        Ok((n, from)) => Ok(Some((buf[..n].to_vec(), from))),
        Err(e) if e.kind() == io::ErrorKind::WouldBlock => Ok(None),
        Err(e) => Err(e),
    }
}

/// Origin server: answers the registration, then sends CON notifications.
struct Origin {
    socket: UdpSocket,
    observer: Option<(SocketAddr, Vec<u8>)>,
    seq: u32,
    mid: u16,
    acked: u32,
}

impl Origin {
    fn on_datagram(&mut self, wire: &[u8], from: SocketAddr) -> io::Result<()> {
        let Ok(msg) = codec::decode(wire) else { return Ok(()) };
        if msg.is_empty_ack() {
            self.acked += 1;
            println!("server    ack {:#06x} from {from}", msg.message_id);
            return Ok(());
        }
        println!("server    {msg} from {from}");
        if msg.code == Code::GET && msg.observe() == Some(codec::OBSERVE_REGISTER) {
            self.observer = Some((from, msg.token.clone()));
            self.seq += 1;
            let reply = CoapMessage::new(MessageType::Acknowledgement, Code::CONTENT, msg.message_id)
                .with_token(msg.token)
                .with_observe(self.seq)
                .with_payload(format!("value {}", self.seq));
            self.socket.send_to(&codec::encode(&reply).unwrap(), from)?;
        }
        Ok(())
    }

    fn notify(&mut self) -> io::Result<()> {
        let Some((to, token)) = self.observer.clone() else { return Ok(()) };
        self.seq += 1;
        self.mid = self.mid.wrapping_add(1);
        let n = CoapMessage::new(MessageType::Confirmable, Code::CONTENT, self.mid)
            .with_token(token)
            .with_observe(self.seq)
            .with_payload(format!("value {}", self.seq));
        self.socket.send_to(&codec::encode(&n).unwrap(), to)?;
        Ok(())
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let clients = [bind()?, bind()?];
    let cnap_socket = bind()?;
    let snap_socket = bind()?;
    let mut origin = Origin {
        socket: bind()?,
        observer: None,
        seq: 0,
        mid: 0x7000,
        acked: 0,
    };

    let mut t = Topology::new();
    let c = t.add_node("cnap");
    let s = t.add_node("snap");
    t.add_link(c, s, Duration::from_millis(1))?;
    let mut fabric = Fabric::new(t, FabricConfig::default());
    let mut cnap = Nap::new(NapConfig::client(c, cnap_socket.local_addr()?))?;
    let mut snap = Nap::new(NapConfig::server(
        s,
        snap_socket.local_addr()?,
        vec![AttachedServer {
            fqdn: FQDN.into(),
            endpoint: origin.socket.local_addr()?,
        }],
    ))?;
    snap.attach(&mut fabric)?;

    let target = format!("coap://{FQDN}/R1");
    for (i, (client, token)) in clients.iter().zip([&b"t1"[..], b"t2"]).enumerate() {
        let req = CoapMessage::new(MessageType::Confirmable, Code::GET, 0x10 + i as u16)
            .with_token(token.to_vec())
            .with_observe(codec::OBSERVE_REGISTER)
            .with_option(option::PROXY_URI, target.as_bytes());
        client.send_to(&codec::encode(&req)?, cnap_socket.local_addr()?)?;
    }

    let sockets: BTreeMap<SocketAddr, &UdpSocket> = [
        (cnap_socket.local_addr()?, &cnap_socket),
        (snap_socket.local_addr()?, &snap_socket),
    ]
    .into_iter()
    .collect();
    let started = Instant::now();
    let mut last_tick = Instant::now();
    let mut received = [0u32; 2];
    let mut udp: Vec<Datagram> = Vec::new();

    while started.elapsed() < Duration::from_secs(3) {
        let now = SimTime::from_millis(started.elapsed().as_millis() as u64);
        fabric.set_now(now);
        let mut io = NapIo {
            fabric: &mut fabric,
            udp: &mut udp,
            now,
        };
        while let Some((wire, from)) = recv(&cnap_socket)? {
            if let Err(e) = cnap.on_datagram(&wire, from, &mut io) {
                println!("cnap      {e}");
            }
        }
        while let Some((wire, from)) = recv(&snap_socket)? {
            if let Err(e) = snap.on_datagram(&wire, from, &mut io) {
                println!("snap      {e}");
            }
        }
        // The in-process core delivers immediately.
        for d in io.fabric.drain_deliveries() {
            let nap = if d.node == c { &mut cnap } else { &mut snap };
            if let Err(e) = nap.on_icn_packet(&d.packet, &mut io) {
                println!("{}: {e}", d.node);
            }
        }
        for d in udp.drain(..) {
            sockets[&d.from].send_to(&d.bytes, d.to)?;
        }

        while let Some((wire, from)) = recv(&origin.socket)? {
            origin.on_datagram(&wire, from)?;
        }
        for (i, client) in clients.iter().enumerate() {
            while let Some((wire, from)) = recv(client)? {
                let msg = codec::decode(&wire)?;
                received[i] += 1;
                println!("client {i}  {msg} {:?}", String::from_utf8_lossy(&msg.payload));
                if msg.msg_type == MessageType::Confirmable {
                    client.send_to(&codec::encode(&CoapMessage::empty_ack(msg.message_id))?, from)?;
                }
            }
        }
        if origin.observer.is_some() && origin.seq <= NOTIFICATIONS && last_tick.elapsed() > Duration::from_millis(200) {
            last_tick = Instant::now();
            origin.notify()?;
        }
        if origin.seq > NOTIFICATIONS && origin.acked == NOTIFICATIONS {
            break;
        }
        std::thread::sleep(Duration::from_millis(2));
    }

    println!();
    println!("client notifications: {received:?}");
    println!("server acks received: {} for {NOTIFICATIONS} confirmable notifications", origin.acked);
    println!("cnap {}", cnap.counters());
    println!("snap {}", snap.counters());
    Ok(())
}
