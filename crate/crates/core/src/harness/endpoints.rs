//! Minimal CoAP endpoints driven by the simulator: an observing client and
//! a server with periodically changing resources.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::net::SocketAddr;
use std::time::Duration;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::clock::SimTime;
use crate::codec::{
    self, option, split_proxy_uri, Code, CoapMessage, MessageType, OBSERVE_DEREGISTER,
    OBSERVE_REGISTER,
};

use super::scenario::{resource_path, NotificationType, Timing};

/// Short content digest used to compare payload sequences.
pub fn payload_digest(payload: &[u8]) -> String {
    hex::encode(&Sha256::digest(payload)[..8])
}

/// How a client addresses its target.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Addressing {
    /// Proxy-Uri, sent to a forward proxy.
    Proxy,
    /// Uri-Host/Port/Path, sent straight to the server.
    Direct,
}

/// A notification as seen by a client.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Received {
    pub at: SimTime,
    pub observe: Option<u32>,
    pub digest: String,
    pub msg_type: MessageType,
}

#[derive(Clone, Debug)]
struct PendingCon {
    bytes: Vec<u8>,
    attempts: u32,
    timeout: Duration,
}

/// A datagram an endpoint wants sent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Emit {
    pub to: SocketAddr,
    pub bytes: Vec<u8>,
}

/// A retransmission timer the endpoint wants armed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Timer {
    pub after: Duration,
    pub message_id: u16,
}

#[derive(Default)]
pub struct Effects {
    pub emits: Vec<Emit>,
    pub timers: Vec<Timer>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClientCounters {
    pub requests: u64,
    pub request_bytes: u64,
    pub acks: u64,
    pub ack_bytes: u64,
    pub resets: u64,
    pub retransmissions: u64,
    pub wrong_token: u64,
    pub errors: u64,
}

pub struct Client {
    pub label: String,
    pub addr: SocketAddr,
    pub token: Vec<u8>,
    pub target: String,
    /// Where every datagram goes (the cNAP, or the server in a baseline run).
    pub peer: SocketAddr,
    pub addressing: Addressing,
    pub start: SimTime,
    pub stop: SimTime,
    observing: bool,
    next_mid: u16,
    pending: BTreeMap<u16, PendingCon>,
    recent_con: VecDeque<u16>,
    pub received: Vec<Received>,
    pub counters: ClientCounters,
}

const DEDUP_WINDOW: usize = 64;

impl Client {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        label: String,
        addr: SocketAddr,
        token: Vec<u8>,
        target: String,
        peer: SocketAddr,
        addressing: Addressing,
        start: SimTime,
        stop: SimTime,
        first_mid: u16,
    ) -> Self {
        Self {
            label,
            addr,
            token,
            target,
            peer,
            addressing,
            start,
            stop,
            observing: false,
            next_mid: first_mid,
            pending: BTreeMap::new(),
            recent_con: VecDeque::new(),
            received: Vec::new(),
            counters: ClientCounters::default(),
        }
    }

    fn request(&mut self, observe: u32) -> CoapMessage {
        let mid = self.next_mid;
        self.next_mid = self.next_mid.wrapping_add(1);
        let mut msg = CoapMessage::new(MessageType::Confirmable, Code::GET, mid)
            .with_token(self.token.clone())
            .with_observe(observe);
        match self.addressing {
            Addressing::Proxy => msg.add_option(option::PROXY_URI, self.target.as_bytes()),
            Addressing::Direct => {
                if let Ok(parts) = split_proxy_uri(&self.target) {
                    parts.apply_to(&mut msg);
                }
            }
        }
        msg
    }

    fn send_con(&mut self, msg: &CoapMessage, timing: &Timing, rng: &mut ChaCha8Rng, fx: &mut Effects) {
        let bytes = codec::encode(msg).expect("client requests are well formed");
        let base = timing.ack_timeout_ms as f64;
        let timeout_ms = if timing.ack_random_factor > 1.0 {
            rng.gen_range(base..base * timing.ack_random_factor)
        } else {
            base
        };
        let timeout = Duration::from_micros((timeout_ms * 1000.0) as u64);
        self.counters.requests += 1;
        self.counters.request_bytes += bytes.len() as u64;
        fx.emits.push(Emit {
            to: self.peer,
            bytes: bytes.clone(),
        });
        fx.timers.push(Timer {
            after: timeout,
            message_id: msg.message_id,
        });
        self.pending.insert(
            msg.message_id,
            PendingCon {
                bytes,
                attempts: 0,
                timeout,
            },
        );
    }

    pub fn start(&mut self, timing: &Timing, rng: &mut ChaCha8Rng) -> Effects {
        let mut fx = Effects::default();
        self.observing = true;
        let msg = self.request(OBSERVE_REGISTER);
        self.send_con(&msg, timing, rng, &mut fx);
        fx
    }

    pub fn stop(&mut self, timing: &Timing, rng: &mut ChaCha8Rng) -> Effects {
        let mut fx = Effects::default();
        if self.observing {
            self.observing = false;
            let msg = self.request(OBSERVE_DEREGISTER);
            self.send_con(&msg, timing, rng, &mut fx);
        }
        fx
    }

    /// Fires a retransmission timer.
    pub fn retransmit(&mut self, mid: u16, timing: &Timing) -> Effects {
        let mut fx = Effects::default();
        let Some(p) = self.pending.get_mut(&mid) else {
            return fx;
        };
        if p.attempts >= timing.max_retransmit {
            self.pending.remove(&mid);
            return fx;
        }
        p.attempts += 1;
        p.timeout *= 2;
        self.counters.requests += 1;
        self.counters.retransmissions += 1;
        self.counters.request_bytes += p.bytes.len() as u64;
        fx.emits.push(Emit {
            to: self.peer,
            bytes: p.bytes.clone(),
        });
        fx.timers.push(Timer {
            after: p.timeout,
            message_id: mid,
        });
        fx
    }

    pub fn on_datagram(&mut self, wire: &[u8], now: SimTime) -> Effects {
        let mut fx = Effects::default();
        let Ok(msg) = codec::decode(wire) else {
            return fx;
        };
        if msg.msg_type == MessageType::Acknowledgement {
            self.pending.remove(&msg.message_id);
        }
        if msg.code.is_empty() {
            return fx;
        }
        if msg.token != self.token {
            self.counters.wrong_token += 1;
            if msg.msg_type == MessageType::Confirmable {
                self.reset(msg.message_id, &mut fx);
            }
            return fx;
        }
        let duplicate = msg.msg_type == MessageType::Confirmable && self.recent_con.contains(&msg.message_id);
        if msg.msg_type == MessageType::Confirmable {
            if !self.observing && msg.observe().is_some() {
                self.reset(msg.message_id, &mut fx);
                return fx;
            }
            self.ack(msg.message_id, &mut fx);
            if duplicate {
                return fx;
            }
            self.recent_con.push_back(msg.message_id);
            if self.recent_con.len() > DEDUP_WINDOW {
                self.recent_con.pop_front();
            }
        }
        if !msg.code.is_success() {
            self.counters.errors += 1;
            self.observing = false;
            return fx;
        }
        if self.observing && msg.observe().is_some() {
            self.received.push(Received {
                at: now,
                observe: msg.observe(),
                digest: payload_digest(&msg.payload),
                msg_type: msg.msg_type,
            });
        }
        fx
    }

    fn ack(&mut self, mid: u16, fx: &mut Effects) {
        let bytes = codec::encode(&CoapMessage::empty_ack(mid)).expect("empty ack encodes");
        self.counters.acks += 1;
        self.counters.ack_bytes += bytes.len() as u64;
        fx.emits.push(Emit { to: self.peer, bytes });
    }

    fn reset(&mut self, mid: u16, fx: &mut Effects) {
        let bytes = codec::encode(&CoapMessage::reset(mid)).expect("reset encodes");
        self.counters.resets += 1;
        fx.emits.push(Emit { to: self.peer, bytes });
    }
}

/// One periodic emission of a resource.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Emission {
    pub at: SimTime,
    pub resource: String,
    pub seq: u32,
    pub digest: String,
    pub observers: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ServerCounters {
    pub requests: u64,
    pub registrations: u64,
    pub request_bytes: u64,
    pub acks: u64,
    pub ack_bytes: u64,
    pub resets: u64,
    pub responses: u64,
    pub notifications: u64,
    pub notification_bytes: u64,
}

struct Observer {
    addr: SocketAddr,
    token: Vec<u8>,
    last_mid: Option<u16>,
}

pub struct Resource {
    pub path: String,
    pub period: Duration,
    pub notification: NotificationType,
    seq: u32,
    state: Vec<u8>,
    observers: Vec<Observer>,
}

pub struct Server {
    pub fqdn: String,
    pub addr: SocketAddr,
    pub resources: Vec<Resource>,
    next_mid: u16,
    pub emissions: Vec<Emission>,
    pub counters: ServerCounters,
    /// Distinct (source, token) registrations seen.
    pub registrants: BTreeSet<(SocketAddr, Vec<u8>)>,
}

impl Server {
    pub fn new(fqdn: String, addr: SocketAddr, first_mid: u16) -> Self {
        Self {
            fqdn,
            addr,
            resources: Vec::new(),
            next_mid: first_mid,
            emissions: Vec::new(),
            counters: ServerCounters::default(),
            registrants: BTreeSet::new(),
        }
    }

    pub fn add_resource(
        &mut self,
        path: &str,
        period: Duration,
        payload_size: usize,
        notification: NotificationType,
        rng: &mut ChaCha8Rng,
    ) {
        let mut state = vec![0; payload_size];
        rng.fill(state.as_mut_slice());
        self.resources.push(Resource {
            path: resource_path(path),
            period,
            notification,
            seq: 1,
            state,
            observers: Vec::new(),
        });
    }

    fn mid(&mut self) -> u16 {
        self.next_mid = self.next_mid.wrapping_add(1);
        self.next_mid
    }

    fn send(&mut self, to: SocketAddr, msg: &CoapMessage, fx: &mut Effects) {
        let bytes = codec::encode(msg).expect("server messages are well formed");
        if msg.observe().is_some() && msg.code.is_success() && msg.msg_type != MessageType::Acknowledgement {
            self.counters.notifications += 1;
            self.counters.notification_bytes += bytes.len() as u64;
        } else {
            self.counters.responses += 1;
        }
        fx.emits.push(Emit { to, bytes });
    }

    pub fn on_datagram(&mut self, wire: &[u8], from: SocketAddr) -> Effects {
        let mut fx = Effects::default();
        let Ok(msg) = codec::decode(wire) else {
            return fx;
        };
        if msg.code.is_empty() {
            match msg.msg_type {
                MessageType::Acknowledgement => {
                    self.counters.acks += 1;
                    self.counters.ack_bytes += wire.len() as u64;
                }
                MessageType::Reset => {
                    self.counters.resets += 1;
                    for r in &mut self.resources {
                        r.observers
                            .retain(|o| !(o.addr == from && o.last_mid == Some(msg.message_id)));
                    }
                }
                _ => {}
            }
            return fx;
        }
        if !msg.code.is_request() {
            return fx;
        }
        self.counters.requests += 1;
        self.counters.request_bytes += wire.len() as u64;

        let path = msg
            .options_of(option::URI_PATH)
            .map(|p| String::from_utf8_lossy(p).into_owned())
            .collect::<Vec<_>>()
            .join("/");
        let (msg_type, mid) = if msg.msg_type == MessageType::Confirmable {
            (MessageType::Acknowledgement, msg.message_id)
        } else {
            (MessageType::NonConfirmable, self.mid())
        };
        let Some(ri) = self.resources.iter().position(|r| r.path == path) else {
            let reply = CoapMessage::new(msg_type, Code::NOT_FOUND, mid).with_token(msg.token.clone());
            self.send(from, &reply, &mut fx);
            return fx;
        };
        if msg.code != Code::GET {
            let reply = CoapMessage::new(msg_type, Code::METHOD_NOT_ALLOWED, mid).with_token(msg.token.clone());
            self.send(from, &reply, &mut fx);
            return fx;
        }
        let r = &mut self.resources[ri];
        let mut reply = CoapMessage::new(msg_type, Code::CONTENT, mid)
            .with_token(msg.token.clone())
            .with_option(option::CONTENT_FORMAT, Vec::new())
            .with_payload(r.state.clone());
        match msg.observe() {
            Some(OBSERVE_REGISTER) => {
                self.counters.registrations += 1;
                self.registrants.insert((from, msg.token.clone()));
                r.observers.retain(|o| !(o.addr == from && o.token == msg.token));
                r.observers.push(Observer {
                    addr: from,
                    token: msg.token.clone(),
                    last_mid: None,
                });
                reply.set_observe(r.seq).expect("sequence stays in range");
            }
            Some(OBSERVE_DEREGISTER) => {
                r.observers.retain(|o| !(o.addr == from && o.token == msg.token));
            }
            _ => {}
        }
        self.send(from, &reply, &mut fx);
        fx
    }

    /// Changes resource `ri` and notifies its observers.
    pub fn tick(&mut self, ri: usize, now: SimTime, rng: &mut ChaCha8Rng) -> Effects {
        let mut fx = Effects::default();
        let r = &mut self.resources[ri];
        r.seq = (r.seq + 1) & codec::MAX_OBSERVE;
        rng.fill(r.state.as_mut_slice());
        let (seq, state, notification) = (r.seq, r.state.clone(), r.notification);
        self.emissions.push(Emission {
            at: now,
            resource: r.path.clone(),
            seq,
            digest: payload_digest(&state),
            observers: r.observers.len(),
        });
        let targets: Vec<(usize, SocketAddr, Vec<u8>)> = r
            .observers
            .iter()
            .enumerate()
            .map(|(i, o)| (i, o.addr, o.token.clone()))
            .collect();
        for (i, addr, token) in targets {
            let mid = self.mid();
            let msg_type = match notification {
                NotificationType::Con => MessageType::Confirmable,
                NotificationType::Non => MessageType::NonConfirmable,
            };
            let msg = CoapMessage::new(msg_type, Code::CONTENT, mid)
                .with_token(token)
                .with_observe(seq)
                .with_option(option::CONTENT_FORMAT, Vec::new())
                .with_payload(state.clone());
            self.resources[ri].observers[i].last_mid = Some(mid);
            self.send(addr, &msg, &mut fx);
        }
        fx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn addr(port: u16) -> SocketAddr {
        SocketAddr::from(([10, 0, 0, 1], port))
    }

    #[test]
    fn client_retransmits_with_doubling_then_gives_up() {
        let timing = Timing {
            ack_random_factor: 1.0,
            max_retransmit: 2,
            ..Timing::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut c = Client::new("c".into(), addr(1), b"t".to_vec(), "coap://s/R".into(), addr(2), Addressing::Proxy, SimTime::ZERO, SimTime::ZERO, 10);
        let fx = c.start(&timing, &mut rng);
        assert_eq!(fx.timers[0].after, Duration::from_millis(200));
        let mid = fx.timers[0].message_id;
        assert_eq!(c.retransmit(mid, &timing).timers[0].after, Duration::from_millis(400));
        assert_eq!(c.retransmit(mid, &timing).timers[0].after, Duration::from_millis(800));
        assert!(c.retransmit(mid, &timing).emits.is_empty());
        assert_eq!(c.counters.requests, 3);
    }

    #[test]
    fn client_acks_con_and_records_once() {
        let timing = Timing::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut c = Client::new("c".into(), addr(1), b"t".to_vec(), "coap://s/R".into(), addr(2), Addressing::Proxy, SimTime::ZERO, SimTime::ZERO, 10);
        c.start(&timing, &mut rng);
        let n = CoapMessage::new(MessageType::Confirmable, Code::CONTENT, 77)
            .with_token(b"t".to_vec())
            .with_observe(3)
            .with_payload(b"x".to_vec());
        let wire = codec::encode(&n).unwrap();
        assert_eq!(c.on_datagram(&wire, SimTime(1)).emits.len(), 1);
        assert_eq!(c.on_datagram(&wire, SimTime(2)).emits.len(), 1);
        assert_eq!(c.received.len(), 1);
        assert_eq!(c.counters.acks, 2);

        let other = n.clone().with_token(b"zz".to_vec());
        let fx = c.on_datagram(&codec::encode(&other).unwrap(), SimTime(3));
        assert_eq!(codec::decode(&fx.emits[0].bytes).unwrap().msg_type, MessageType::Reset);
        assert_eq!(c.counters.wrong_token, 1);
    }

    #[test]
    fn server_registers_and_notifies() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = Server::new("s".into(), addr(9), 0);
        s.add_resource("/R", Duration::from_millis(100), 4, NotificationType::Con, &mut rng);
        let reg = CoapMessage::new(MessageType::Confirmable, Code::GET, 5)
            .with_token(b"t".to_vec())
            .with_observe(0)
            .with_option(option::URI_PATH, "R");
        let fx = s.on_datagram(&codec::encode(&reg).unwrap(), addr(1));
        let reply = codec::decode(&fx.emits[0].bytes).unwrap();
        assert_eq!(reply.msg_type, MessageType::Acknowledgement);
        assert_eq!(reply.message_id, 5);
        assert_eq!(reply.observe(), Some(1));
        let fx = s.tick(0, SimTime(100), &mut rng);
        let n = codec::decode(&fx.emits[0].bytes).unwrap();
        assert_eq!((n.msg_type, n.observe()), (MessageType::Confirmable, Some(2)));
        assert_eq!(s.emissions[0].observers, 1);

        let missing = reg.clone().with_option(option::URI_PATH, "x");
        let fx = s.on_datagram(&codec::encode(&missing).unwrap(), addr(1));
        assert_eq!(codec::decode(&fx.emits[0].bytes).unwrap().code, Code::NOT_FOUND);
    }
}
