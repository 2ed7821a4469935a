//! Network attachment points.
//!
//! A client-side NAP (cNAP) terminates CoAP/UDP from legacy clients and
//! publishes their requests into the fabric; a server-side NAP (sNAP)
//! subscribes to the names of its attached servers, replays requests to them
//! over UDP and publishes their responses back. Both sides run an
//! [`ObserveHandler`], so observe registrations are aggregated twice: once
//! per cNAP for its clients and once at the sNAP for its cNAPs.

mod naming;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::SocketAddr;
use std::time::Duration;

use log::{debug, warn};
use thiserror::Error;

use crate::clock::SimTime;
use crate::codec::{
    self, option, Code, CoapMessage, CodecError, MessageType, OBSERVE_DEREGISTER,
    OBSERVE_REGISTER,
};
use crate::fabric::{Fabric, FabricError, ForwardingPath, IcnName, IcnPacket, NodeId, PacketKind};
use crate::observe::{
    AckDecision, ClientNode, DeregisterOutcome, HandlerConfig, HandlerDecision, ObserveError,
    ObserveHandler, Removal, ReturnAddress,
};

pub use naming::{fqdn_to_name, normalize_fqdn, url_to_name};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum NapError {
    #[error("empty fqdn")]
    EmptyFqdn,
    #[error("malformed url: {0}")]
    MalformedUrl(CodecError),
    #[error("undecodable datagram: {0}")]
    Undecodable(CodecError),
    #[error("invalid nap config: {0}")]
    InvalidConfig(String),
    #[error("no attached server for {0}")]
    UnknownFqdn(String),
    #[error("unexpected message: {0}")]
    Unexpected(String),
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error(transparent)]
    Observe(#[from] ObserveError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Client,
    Server,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Client => "cnap",
            Role::Server => "snap",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttachedServer {
    pub fqdn: String,
    pub endpoint: SocketAddr,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NapConfig {
    pub role: Role,
    pub node_id: NodeId,
    /// cNAP: where clients send. sNAP: source of server-bound datagrams.
    pub listen: SocketAddr,
    /// sNAP only.
    pub attached_servers: Vec<AttachedServer>,
    pub max_age: Duration,
    /// sNAP only: publish each notification once over a delivery tree
    /// instead of once per subscribed cNAP.
    pub multicast: bool,
}

impl NapConfig {
    pub fn client(node_id: NodeId, listen: SocketAddr) -> Self {
        Self {
            role: Role::Client,
            node_id,
            listen,
            attached_servers: Vec::new(),
            max_age: HandlerConfig::default().max_age,
            multicast: true,
        }
    }

    pub fn server(node_id: NodeId, listen: SocketAddr, attached: Vec<AttachedServer>) -> Self {
        Self {
            role: Role::Server,
            attached_servers: attached,
            ..Self::client(node_id, listen)
        }
    }

    pub fn validate(&self) -> Result<(), NapError> {
        match self.role {
            Role::Client if !self.attached_servers.is_empty() => Err(NapError::InvalidConfig(
                format!("client-side nap {} lists attached servers", self.node_id),
            )),
            Role::Server if self.attached_servers.is_empty() => Err(NapError::InvalidConfig(
                format!("server-side nap {} has no attached servers", self.node_id),
            )),
            _ => {
                let mut seen = BTreeSet::new();
                for s in &self.attached_servers {
                    let fqdn = normalize_fqdn(&s.fqdn);
                    if fqdn.is_empty() {
                        return Err(NapError::EmptyFqdn);
                    }
                    if !seen.insert(fqdn) {
                        return Err(NapError::InvalidConfig(format!(
                            "fqdn {} attached twice to nap {}",
                            s.fqdn, self.node_id
                        )));
                    }
                }
                Ok(())
            }
        }
    }
}

/// Fabric state of one upstream observation held by a cNAP.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PendingExchange {
    pub icn_name: IcnName,
    pub fid_req: ForwardingPath,
    pub reverse_path: ForwardingPath,
    pub upstream_token: Vec<u8>,
    pub resource_uri: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NapCounters {
    pub requests_in: u64,
    pub requests_forwarded: u64,
    pub responses_in: u64,
    pub notifications_out: u64,
    pub acks_suppressed: u64,
    pub acks_forwarded: u64,
    pub bytes_in: u64,
    pub bytes_out: u64,
    pub dropped: u64,
}

impl fmt::Display for NapCounters {
    /// Field order is stable; the harness report relies on it.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "requests_in={} requests_forwarded={} responses_in={} notifications_out={} acks_suppressed={} acks_forwarded={} bytes_in={} bytes_out={} dropped={}",
            self.requests_in,
            self.requests_forwarded,
            self.responses_in,
            self.notifications_out,
            self.acks_suppressed,
            self.acks_forwarded,
            self.bytes_in,
            self.bytes_out,
            self.dropped
        )
    }
}

/// A UDP datagram leaving a NAP.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Datagram {
    pub from: SocketAddr,
    pub to: SocketAddr,
    pub bytes: Vec<u8>,
}

/// What a NAP may touch while handling one input.
pub struct NapIo<'a> {
    pub fabric: &'a mut Fabric,
    pub udp: &'a mut Vec<Datagram>,
    pub now: SimTime,
}

/// Plain request relayed by a cNAP without subscription state.
#[derive(Clone, Debug)]
struct ClientOneShot {
    client: SocketAddr,
    token: Vec<u8>,
    message_id: u16,
    confirmable: bool,
}

/// Plain request relayed by an sNAP.
#[derive(Clone, Debug)]
struct ServerOneShot {
    origin: NodeId,
    token: Vec<u8>,
    message_id: u16,
    name: IcnName,
    reverse: ForwardingPath,
}

pub struct Nap {
    config: NapConfig,
    handler: ObserveHandler,
    counters: NapCounters,
    // cNAP state
    exchanges: BTreeMap<String, PendingExchange>,
    url_names: BTreeMap<IcnName, String>,
    /// (client, rewritten MID) of each ACK carrier -> (resource, upstream MID).
    ack_routes: BTreeMap<(SocketAddr, u16), (String, u16)>,
    client_oneshots: BTreeMap<Vec<u8>, ClientOneShot>,
    // sNAP state
    servers: BTreeMap<String, SocketAddr>,
    reverse_paths: BTreeMap<NodeId, ForwardingPath>,
    server_oneshots: BTreeMap<Vec<u8>, ServerOneShot>,
    /// Upstream MID of a confirmable notification -> server awaiting its ACK.
    awaiting_ack: BTreeMap<u16, SocketAddr>,
    next_mid: u16,
    next_token: u64,
}

impl Nap {
    pub fn new(config: NapConfig) -> Result<Self, NapError> {
        config.validate()?;
        let servers = config
            .attached_servers
            .iter()
            .map(|s| (normalize_fqdn(&s.fqdn), s.endpoint))
            .collect();
        Ok(Self {
            handler: ObserveHandler::new(HandlerConfig {
                max_age: config.max_age,
            }),
            config,
            counters: NapCounters::default(),
            exchanges: BTreeMap::new(),
            url_names: BTreeMap::new(),
            ack_routes: BTreeMap::new(),
            client_oneshots: BTreeMap::new(),
            servers,
            reverse_paths: BTreeMap::new(),
            server_oneshots: BTreeMap::new(),
            awaiting_ack: BTreeMap::new(),
            next_mid: 0,
            next_token: 0,
        })
    }

    pub fn config(&self) -> &NapConfig {
        &self.config
    }

    pub fn node_id(&self) -> NodeId {
        self.config.node_id
    }

    pub fn role(&self) -> Role {
        self.config.role
    }

    pub fn counters(&self) -> NapCounters {
        self.counters
    }

    pub fn handler(&self) -> &ObserveHandler {
        &self.handler
    }

    pub fn exchange(&self, uri: &str) -> Option<&PendingExchange> {
        self.exchanges.get(uri)
    }

    /// Subscribes an sNAP to the FQDN name of every attached server.
    pub fn attach(&mut self, fabric: &mut Fabric) -> Result<(), NapError> {
        if self.config.role == Role::Server {
            for fqdn in self.servers.keys() {
                fabric.subscribe(fqdn_to_name(fqdn)?, self.config.node_id)?;
            }
        }
        Ok(())
    }

    /// A UDP datagram arriving at the NAP's listen endpoint.
    pub fn on_datagram(&mut self, wire: &[u8], from: SocketAddr, io: &mut NapIo<'_>) -> Result<(), NapError> {
        self.counters.bytes_in += wire.len() as u64;
        let msg = match codec::decode(wire) {
            Ok(m) => m,
            Err(e) => {
                self.counters.dropped += 1;
                return Err(NapError::Undecodable(e));
            }
        };
        let result = match self.config.role {
            Role::Client => self.cnap_on_client_message(msg, from, io),
            Role::Server => self.snap_on_server_message(msg, from, io),
        };
        if result.is_err() {
            self.counters.dropped += 1;
        }
        result
    }

    /// A fabric delivery addressed to this NAP.
    pub fn on_icn_packet(&mut self, pkt: &IcnPacket, io: &mut NapIo<'_>) -> Result<(), NapError> {
        if pkt.kind == PacketKind::Notify {
            return Ok(());
        }
        self.counters.bytes_in += pkt.payload.len() as u64;
        let msg = match codec::decode(&pkt.payload) {
            Ok(m) => m,
            Err(e) => {
                self.counters.dropped += 1;
                return Err(NapError::Undecodable(e));
            }
        };
        let result = match self.config.role {
            Role::Client => self.cnap_on_icn_message(msg, pkt.name, io),
            Role::Server => self.snap_on_icn_message(msg, pkt, io),
        };
        if result.is_err() {
            self.counters.dropped += 1;
        }
        result
    }

    /// Drops subscriptions older than the configured max-age.
    pub fn expire(&mut self, io: &mut NapIo<'_>) -> Result<Vec<Removal>, NapError> {
        let upstream = self.upstream_tokens();
        let removals = self.handler.expire(io.now);
        self.after_removals(&removals, &upstream, io)?;
        Ok(removals)
    }

    fn upstream_tokens(&self) -> BTreeMap<String, Vec<u8>> {
        self.handler
            .subscriptions()
            .iter()
            .filter_map(|s| {
                self.handler
                    .upstream_token(&s.resource_uri)
                    .map(|t| (s.resource_uri.clone(), t.to_vec()))
            })
            .collect()
    }

    fn after_removals(
        &mut self,
        removals: &[Removal],
        upstream: &BTreeMap<String, Vec<u8>>,
        io: &mut NapIo<'_>,
    ) -> Result<(), NapError> {
        for r in removals {
            if r.outcome != DeregisterOutcome::RemovedAndForward {
                continue;
            }
            if let Some(token) = upstream.get(&r.resource_uri) {
                let dereg = deregistration(&r.resource_uri, token.clone(), MessageType::NonConfirmable, 0);
                match self.config.role {
                    Role::Client => self.cnap_forward_deregistration(&r.resource_uri, dereg, io)?,
                    Role::Server => self.snap_send_to_server(dereg, io)?,
                }
            }
        }
        Ok(())
    }

    fn send_udp(&mut self, to: SocketAddr, msg: &CoapMessage, io: &mut NapIo<'_>) -> Result<(), NapError> {
        let bytes = codec::encode(msg)?;
        self.counters.bytes_out += bytes.len() as u64;
        io.udp.push(Datagram {
            from: self.config.listen,
            to,
            bytes,
        });
        Ok(())
    }

    fn publish(
        &mut self,
        name: IcnName,
        msg: &CoapMessage,
        path: &ForwardingPath,
        io: &mut NapIo<'_>,
    ) -> Result<(), NapError> {
        let bytes = codec::encode(msg)?;
        self.publish_raw(name, bytes, path, io)
    }

    fn publish_raw(
        &mut self,
        name: IcnName,
        bytes: Vec<u8>,
        path: &ForwardingPath,
        io: &mut NapIo<'_>,
    ) -> Result<(), NapError> {
        let len = bytes.len() as u64;
        io.fabric.publish_to_path(name, bytes, path)?;
        self.counters.bytes_out += len;
        Ok(())
    }

    fn fresh_mid(&mut self) -> u16 {
        self.next_mid = self.next_mid.wrapping_add(1);
        self.next_mid
    }

    fn fresh_token(&mut self) -> Vec<u8> {
        self.next_token += 1;
        let mut token = vec![0xC0, (self.config.node_id.0 & 0xFF) as u8];
        token.extend_from_slice(&self.next_token.to_be_bytes()[2..]);
        token
    }

    // ---- client side ----

    fn cnap_on_client_message(
        &mut self,
        msg: CoapMessage,
        from: SocketAddr,
        io: &mut NapIo<'_>,
    ) -> Result<(), NapError> {
        if msg.code.is_request() {
            self.counters.requests_in += 1;
            return match (msg.code, msg.observe()) {
                (Code::GET, Some(OBSERVE_REGISTER)) => self.cnap_register(msg, from, io),
                (Code::GET, Some(OBSERVE_DEREGISTER)) => self.cnap_deregister(msg, from, io),
                _ => self.cnap_one_shot(msg, from, io),
            };
        }
        match msg.msg_type {
            MessageType::Acknowledgement if msg.code.is_empty() => self.cnap_client_ack(msg, from, io),
            MessageType::Reset => {
                let upstream = self.upstream_tokens();
                let removals = self.handler.reset_client(&ReturnAddress::Udp(from));
                debug!("{} reset from {from} ended {} observations", self.config.node_id, removals.len());
                self.after_removals(&removals, &upstream, io)
            }
            _ => Err(NapError::Unexpected(format!("{} {} from client {from}", msg.msg_type, msg.code))),
        }
    }

    fn cnap_register(&mut self, msg: CoapMessage, from: SocketAddr, io: &mut NapIo<'_>) -> Result<(), NapError> {
        let client = ReturnAddress::Udp(from);
        let req = match self.handler.handle_observe_request(&msg, &client, io.now)? {
            HandlerDecision::Forward(req) => req,
            HandlerDecision::AggregateLocal | HandlerDecision::DropDuplicate => return Ok(()),
        };
        let uri = codec::request_uri(&req)?;
        let parts = codec::request_parts(&req)?;
        let request_name = fqdn_to_name(&parts.uri_host)?;
        let response_name = url_to_name(&uri)?;
        let bytes = codec::encode(&req)?;
        let len = bytes.len() as u64;
        match io.fabric.pub_isub(request_name, response_name, bytes, self.config.node_id) {
            Ok(report) => {
                self.counters.requests_forwarded += 1;
                self.counters.bytes_out += len;
                self.url_names.insert(response_name, uri.clone());
                self.exchanges.insert(
                    uri.clone(),
                    PendingExchange {
                        icn_name: request_name,
                        fid_req: report.fid_req,
                        reverse_path: report.fid_res,
                        upstream_token: req.token.clone(),
                        resource_uri: uri,
                    },
                );
                Ok(())
            }
            Err(e) => {
                warn!("{}: cannot reach {}: {e}", self.config.node_id, parts.uri_host);
                self.handler.deregister(&msg.token, &client)?;
                let reply = self.local_reply(&msg, from, Code::BAD_GATEWAY);
                self.send_udp(from, &reply, io)?;
                Ok(())
            }
        }
    }

    fn cnap_deregister(&mut self, msg: CoapMessage, from: SocketAddr, io: &mut NapIo<'_>) -> Result<(), NapError> {
        let uri = codec::request_uri(&msg)?;
        let upstream = self.handler.upstream_token(&uri).map(<[u8]>::to_vec);
        let removal = match self.handler.deregister(&msg.token, &ReturnAddress::Udp(from)) {
            Ok(r) => r,
            // Not one of ours: an ordinary GET as far as the gateway is concerned.
            Err(ObserveError::UnknownSubscription { .. }) => return self.cnap_one_shot(msg, from, io),
            Err(e) => return Err(e.into()),
        };
        let reply = self.local_reply(&msg, from, Code::CONTENT);
        self.send_udp(from, &reply, io)?;
        if removal.outcome == DeregisterOutcome::RemovedAndForward {
            if let Some(token) = upstream {
                let mut dereg = msg.clone();
                dereg.token = token;
                self.cnap_forward_deregistration(&uri, dereg, io)?;
            }
        }
        Ok(())
    }

    fn cnap_forward_deregistration(
        &mut self,
        uri: &str,
        mut dereg: CoapMessage,
        io: &mut NapIo<'_>,
    ) -> Result<(), NapError> {
        let Some(exchange) = self.exchanges.remove(uri) else {
            return Ok(());
        };
        if dereg.proxy_uri().is_none() {
            for n in [option::URI_HOST, option::URI_PORT, option::URI_PATH, option::URI_QUERY] {
                dereg.remove_option(n);
            }
            dereg.add_option(option::PROXY_URI, uri.as_bytes());
        }
        let response_name = url_to_name(uri)?;
        self.url_names.remove(&response_name);
        self.ack_routes.retain(|_, (u, _)| u != uri);
        self.counters.requests_forwarded += 1;
        self.publish(exchange.icn_name, &dereg, &exchange.fid_req, io)?;
        io.fabric.unsubscribe(response_name, self.config.node_id)?;
        Ok(())
    }

    fn cnap_one_shot(&mut self, msg: CoapMessage, from: SocketAddr, io: &mut NapIo<'_>) -> Result<(), NapError> {
        let duplicate = self
            .client_oneshots
            .values()
            .any(|o| o.client == from && o.message_id == msg.message_id && o.token == msg.token);
        if duplicate {
            return Ok(());
        }
        let uri = codec::request_uri(&msg)?;
        let parts = codec::request_parts(&msg)?;
        let token = self.fresh_token();
        let mut req = msg.clone();
        req.token = token.clone();
        let bytes = codec::encode(&req)?;
        let len = bytes.len() as u64;
        let sent = io.fabric.pub_isub(
            fqdn_to_name(&parts.uri_host)?,
            url_to_name(&uri)?,
            bytes,
            self.config.node_id,
        );
        match sent {
            Ok(_) => {
                self.counters.requests_forwarded += 1;
                self.counters.bytes_out += len;
                self.client_oneshots.insert(
                    token,
                    ClientOneShot {
                        client: from,
                        token: msg.token,
                        message_id: msg.message_id,
                        confirmable: msg.msg_type == MessageType::Confirmable,
                    },
                );
            }
            Err(e) => {
                warn!("{}: cannot reach {}: {e}", self.config.node_id, parts.uri_host);
                let reply = self.local_reply(&msg, from, Code::BAD_GATEWAY);
                self.send_udp(from, &reply, io)?;
            }
        }
        Ok(())
    }

    fn cnap_client_ack(&mut self, ack: CoapMessage, from: SocketAddr, io: &mut NapIo<'_>) -> Result<(), NapError> {
        if self.handler.handle_client_ack(&ack, &ReturnAddress::Udp(from)) == AckDecision::Suppress {
            self.counters.acks_suppressed += 1;
            return Ok(());
        }
        let Some((uri, upstream_mid)) = self.ack_routes.remove(&(from, ack.message_id)) else {
            return Err(NapError::Unexpected(format!(
                "ack {:#06x} from {from} matches no notification",
                ack.message_id
            )));
        };
        self.cnap_ack_upstream(&uri, upstream_mid, io)
    }

    fn cnap_ack_upstream(&mut self, uri: &str, upstream_mid: u16, io: &mut NapIo<'_>) -> Result<(), NapError> {
        let Some(exchange) = self.exchanges.get(uri) else {
            return Ok(());
        };
        let (name, path) = (exchange.icn_name, exchange.fid_req.clone());
        self.counters.acks_forwarded += 1;
        self.publish(name, &CoapMessage::empty_ack(upstream_mid), &path, io)
    }

    fn cnap_on_icn_message(&mut self, msg: CoapMessage, name: IcnName, io: &mut NapIo<'_>) -> Result<(), NapError> {
        if !msg.code.is_response() {
            return Err(NapError::Unexpected(format!("{} {} from fabric", msg.msg_type, msg.code)));
        }
        self.counters.responses_in += 1;
        if let Some(one) = self.client_oneshots.remove(&msg.token) {
            let mut reply = msg;
            reply.token = one.token;
            if one.confirmable {
                reply.msg_type = MessageType::Acknowledgement;
                reply.message_id = one.message_id;
            } else {
                reply.msg_type = MessageType::NonConfirmable;
                reply.message_id = self.fresh_mid();
            }
            self.counters.notifications_out += 1;
            return self.send_udp(one.client, &reply, io);
        }
        let Some(uri) = self.url_names.get(&name).cloned() else {
            return Err(ObserveError::NoMatchingSubscription(name.to_string()).into());
        };

        if !msg.code.is_success() || msg.observe().is_none() {
            let copies = self.handler.terminate_resource(&msg, &uri)?;
            self.cnap_send_copies(&copies, io)?;
            if let Some(exchange) = self.exchanges.remove(&uri) {
                debug!("{}: observation of {} ended upstream", self.config.node_id, exchange.resource_uri);
            }
            self.url_names.remove(&name);
            self.ack_routes.retain(|_, (u, _)| u != &uri);
            io.fabric.unsubscribe(name, self.config.node_id)?;
            return Ok(());
        }

        let fan = match self.handler.distribute(&msg, &uri) {
            Ok(f) => f,
            Err(e) => {
                // Nobody left to acknowledge for; answer upstream so the server is not left waiting.
                if msg.msg_type == MessageType::Confirmable {
                    self.cnap_ack_upstream(&uri, msg.message_id, io)?;
                }
                return Err(e.into());
            }
        };
        self.cnap_send_copies(&fan.copies, io)?;
        if msg.msg_type == MessageType::Confirmable {
            self.ack_routes.retain(|_, (u, _)| u != &uri);
            match fan.carrier {
                Some(i) => {
                    let carrier = &fan.copies[i];
                    if let ReturnAddress::Udp(addr) = carrier.to {
                        self.ack_routes
                            .insert((addr, carrier.message.message_id), (uri, msg.message_id));
                    }
                }
                None => self.cnap_ack_upstream(&uri, msg.message_id, io)?,
            }
        }
        Ok(())
    }

    fn cnap_send_copies(&mut self, copies: &[crate::observe::Outbound], io: &mut NapIo<'_>) -> Result<(), NapError> {
        for copy in copies {
            match copy.to {
                ReturnAddress::Udp(addr) => {
                    self.counters.notifications_out += 1;
                    self.send_udp(addr, &copy.message, io)?;
                }
                ReturnAddress::Nap(n) => warn!("{}: udp copy addressed to nap {n}", self.config.node_id),
            }
        }
        Ok(())
    }

    /// Answer from the NAP itself: piggybacked for CON requests, NON otherwise.
    fn local_reply(&mut self, req: &CoapMessage, client: SocketAddr, code: Code) -> CoapMessage {
        let (msg_type, mid) = if req.msg_type == MessageType::Confirmable {
            (MessageType::Acknowledgement, req.message_id)
        } else {
            let node = ClientNode {
                return_address: ReturnAddress::Udp(client),
                token: req.token.clone(),
            };
            (MessageType::NonConfirmable, self.handler.next_client_mid(&node))
        };
        CoapMessage::new(msg_type, code, mid).with_token(req.token.clone())
    }

    // ---- server side ----

    fn snap_on_icn_message(&mut self, msg: CoapMessage, pkt: &IcnPacket, io: &mut NapIo<'_>) -> Result<(), NapError> {
        let origin = pkt
            .origin()
            .ok_or_else(|| NapError::Unexpected("packet without origin".into()))?;
        if let Some(rev) = &pkt.reverse {
            self.reverse_paths.insert(origin, rev.clone());
        }
        if msg.is_empty_ack() {
            return self.snap_cnap_ack(msg, origin, io);
        }
        if !msg.code.is_request() {
            return Err(NapError::Unexpected(format!("{} {} from nap {origin}", msg.msg_type, msg.code)));
        }
        self.counters.requests_in += 1;
        let uri = codec::request_uri(&msg)?;
        let parts = codec::request_parts(&msg)?;
        let fqdn = normalize_fqdn(&parts.uri_host);
        if !self.servers.contains_key(&fqdn) {
            let reverse = self.snap_reverse_path(origin, io)?;
            let reply = CoapMessage::new(MessageType::NonConfirmable, Code::BAD_GATEWAY, self.fresh_mid())
                .with_token(msg.token.clone());
            self.publish(url_to_name(&uri)?, &reply, &reverse, io)?;
            return Err(NapError::UnknownFqdn(fqdn));
        }
        let from = ReturnAddress::Nap(origin);
        match (msg.code, msg.observe()) {
            (Code::GET, Some(OBSERVE_REGISTER)) => {
                if let HandlerDecision::Forward(req) = self.handler.handle_observe_request(&msg, &from, io.now)? {
                    self.snap_send_to_server(req, io)?;
                }
                Ok(())
            }
            (Code::GET, Some(OBSERVE_DEREGISTER)) => {
                let upstream = self.handler.upstream_token(&uri).map(<[u8]>::to_vec);
                let removal = self.handler.deregister(&msg.token, &from)?;
                if removal.outcome == DeregisterOutcome::RemovedAndForward {
                    let mut dereg = msg;
                    dereg.token = upstream.unwrap_or_default();
                    self.snap_send_to_server(dereg, io)?;
                }
                Ok(())
            }
            _ => {
                let token = self.fresh_token();
                let reverse = self.snap_reverse_path(origin, io)?;
                self.server_oneshots.insert(
                    token.clone(),
                    ServerOneShot {
                        origin,
                        token: msg.token.clone(),
                        message_id: msg.message_id,
                        name: url_to_name(&uri)?,
                        reverse,
                    },
                );
                let mut req = msg;
                req.token = token;
                self.snap_send_to_server(req, io)
            }
        }
    }

    fn snap_reverse_path(&self, origin: NodeId, io: &NapIo<'_>) -> Result<ForwardingPath, NapError> {
        match self.reverse_paths.get(&origin) {
            Some(p) => Ok(p.clone()),
            None => Ok(io
                .fabric
                .compute_paths(self.config.node_id, &BTreeSet::from([origin]))?
                .0),
        }
    }

    /// Rewrites a fabric-borne request for the origin server and sends it.
    fn snap_send_to_server(&mut self, req: CoapMessage, io: &mut NapIo<'_>) -> Result<(), NapError> {
        let parts = codec::request_parts(&req)?;
        let fqdn = normalize_fqdn(&parts.uri_host);
        let endpoint = *self
            .servers
            .get(&fqdn)
            .ok_or_else(|| NapError::UnknownFqdn(fqdn.clone()))?;
        let mut out = if req.proxy_uri().is_some() {
            codec::rebuild_origin_request(&req)?
        } else {
            req
        };
        out.message_id = self.fresh_mid();
        self.counters.requests_forwarded += 1;
        self.send_udp(endpoint, &out, io)
    }

    fn snap_cnap_ack(&mut self, ack: CoapMessage, origin: NodeId, io: &mut NapIo<'_>) -> Result<(), NapError> {
        if self.handler.handle_client_ack(&ack, &ReturnAddress::Nap(origin)) == AckDecision::Suppress {
            self.counters.acks_suppressed += 1;
            return Ok(());
        }
        let Some(server) = self.awaiting_ack.remove(&ack.message_id) else {
            return Err(NapError::Unexpected(format!(
                "ack {:#06x} from nap {origin} matches no notification",
                ack.message_id
            )));
        };
        self.counters.acks_forwarded += 1;
        self.send_udp(server, &ack, io)
    }

    fn snap_on_server_message(&mut self, msg: CoapMessage, from: SocketAddr, io: &mut NapIo<'_>) -> Result<(), NapError> {
        if !msg.code.is_response() {
            if msg.msg_type == MessageType::Confirmable && msg.code.is_empty() {
                // CoAP ping.
                return self.send_udp(from, &CoapMessage::reset(msg.message_id), io);
            }
            return Ok(());
        }
        self.counters.responses_in += 1;
        if let Some(one) = self.server_oneshots.remove(&msg.token) {
            let mut reply = msg;
            reply.token = one.token;
            reply.message_id = one.message_id;
            self.counters.notifications_out += 1;
            return self.publish(one.name, &reply, &one.reverse, io).map(|_| {
                debug!("{}: one-shot answer to nap {}", self.config.node_id, one.origin);
            });
        }
        let uri = match self.handler.resolve_uri_by_token(&msg.token) {
            Ok(uri) => uri,
            // Answer to a deregistration whose state is already gone.
            Err(_) if msg.observe().is_none() => return Ok(()),
            Err(e) => return Err(e.into()),
        };
        let targets: Vec<NodeId> = self
            .handler
            .observers_of(&uri)
            .filter_map(|s| match s.client.return_address {
                ReturnAddress::Nap(n) => Some(n),
                ReturnAddress::Udp(_) => None,
            })
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let observer_tokens: BTreeMap<NodeId, Vec<u8>> = self
            .handler
            .observers_of(&uri)
            .filter_map(|s| match s.client.return_address {
                ReturnAddress::Nap(n) => Some((n, s.token().to_vec())),
                ReturnAddress::Udp(_) => None,
            })
            .collect();

        let final_response = !msg.code.is_success() || msg.observe().is_none();
        if final_response {
            self.handler.terminate_resource(&msg, &uri)?;
        } else {
            self.handler.handle_observe_response(&msg, &uri)?;
        }
        if targets.is_empty() {
            return Ok(());
        }

        let name = url_to_name(&uri)?;
        let wire = codec::encode(&msg)?;
        if self.config.multicast {
            let (tree, _) = io
                .fabric
                .compute_paths(self.config.node_id, &targets.iter().copied().collect())?;
            self.publish_raw(name, wire, &tree, io)?;
        } else {
            for &t in &targets {
                let (path, _) = io
                    .fabric
                    .compute_paths(self.config.node_id, &BTreeSet::from([t]))?;
                self.publish_raw(name, wire.clone(), &path, io)?;
            }
        }
        self.counters.notifications_out += 1;

        if msg.msg_type == MessageType::Confirmable && !final_response {
            // The first subscribed cNAP carries the ACK to the server; the rest are answered here.
            self.awaiting_ack.insert(msg.message_id, from);
            for &t in &targets[1..] {
                let client = ReturnAddress::Nap(t);
                let token = observer_tokens.get(&t).cloned().unwrap_or_default();
                let _ = self.handler.record_suppressed_ack(client, token, msg.message_id);
            }
        }
        Ok(())
    }
}

fn deregistration(uri: &str, token: Vec<u8>, msg_type: MessageType, mid: u16) -> CoapMessage {
    CoapMessage::new(msg_type, Code::GET, mid)
        .with_token(token)
        .with_observe(OBSERVE_DEREGISTER)
        .with_option(option::PROXY_URI, uri)
}
