//! Proxy state for aggregated observe relationships.
//!
//! [`ObserveHandler`] is the per-NAP state machine: it keeps the list of
//! observers (subscriptions), decides whether an incoming registration must
//! travel upstream, fans each upstream notification out to every local
//! observer with that observer's token and message ID, and answers
//! acknowledgements on behalf of the origin server for observers whose
//! registrations were aggregated.

use std::collections::BTreeMap;
use std::fmt;
use std::net::SocketAddr;
use std::time::Duration;

use thiserror::Error;

use crate::clock::SimTime;
use crate::codec::{self, Code, CoapMessage, CodecError, MessageType, MAX_TOKEN_LEN};
use crate::fabric::NodeId;

/// Where a response for an observer has to be sent.
///
/// Client-side NAPs serve UDP endpoints; server-side NAPs serve peer NAPs.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ReturnAddress {
    Udp(SocketAddr),
    Nap(NodeId),
}

impl fmt::Display for ReturnAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReturnAddress::Udp(addr) => write!(f, "udp:{addr}"),
            ReturnAddress::Nap(node) => write!(f, "nap:{node}"),
        }
    }
}

/// A requester's return address and token.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClientNode {
    pub return_address: ReturnAddress,
    pub token: Vec<u8>,
}

impl ClientNode {
    pub fn new(return_address: ReturnAddress, token: impl Into<Vec<u8>>) -> Result<Self, ObserveError> {
        let token = token.into();
        if token.len() > MAX_TOKEN_LEN {
            return Err(ObserveError::Codec(CodecError::InvalidTokenLength(token.len())));
        }
        Ok(Self {
            return_address,
            token,
        })
    }
}

/// One observer's registration for a resource.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Subscription {
    pub resource_uri: String,
    /// Message ID of the observer's registration request.
    pub message_id: u16,
    /// Set until the observer's first notification went out.
    pub first_response_pending: bool,
    /// Whether the registration was confirmable (its first response is then piggybacked).
    pub confirmable: bool,
    pub client: ClientNode,
    pub created_at: SimTime,
}

impl Subscription {
    pub fn token(&self) -> &[u8] {
        &self.client.token
    }
}

/// An acknowledgement this handler answers locally instead of forwarding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SuppressedAck {
    pub client: ReturnAddress,
    pub token: Vec<u8>,
    pub message_id: u16,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Forward,
    DropDuplicate,
    AggregateLocal,
}

/// Outcome of [`ObserveHandler::handle_observe_request`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum HandlerDecision {
    /// The registration must travel upstream; carries the request to send.
    Forward(CoapMessage),
    DropDuplicate,
    AggregateLocal,
}

impl HandlerDecision {
    pub fn action(&self) -> Action {
        match self {
            HandlerDecision::Forward(_) => Action::Forward,
            HandlerDecision::DropDuplicate => Action::DropDuplicate,
            HandlerDecision::AggregateLocal => Action::AggregateLocal,
        }
    }

    pub fn outbound(&self) -> Option<&CoapMessage> {
        match self {
            HandlerDecision::Forward(m) => Some(m),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AckDecision {
    Suppress,
    Forward,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeregisterOutcome {
    RemovedLocal,
    RemovedAndForward,
}

/// A subscription that left the list and what that means upstream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Removal {
    pub resource_uri: String,
    pub client: ClientNode,
    pub outcome: DeregisterOutcome,
}

/// One rewritten copy of a response.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outbound {
    pub to: ReturnAddress,
    pub message: CoapMessage,
}

/// Result of [`ObserveHandler::distribute`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FanOut {
    pub copies: Vec<Outbound>,
    /// Index of the copy whose acknowledgement must be forwarded upstream.
    pub carrier: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ObserveError {
    #[error("not an observe registration")]
    NotAnObserveRequest,
    #[error("response carries no Observe option")]
    NotAnObserveResponse,
    #[error("malformed resource URI: {0}")]
    MalformedUri(CodecError),
    #[error("no subscription for {0}")]
    NoMatchingSubscription(String),
    #[error("no subscription with token {}", hex::encode(.0))]
    NotFound(Vec<u8>),
    #[error("suppressed ack {mid:#06x} already recorded for {client}")]
    DuplicateMid { client: ReturnAddress, mid: u16 },
    #[error("no subscription for token {} from {from}", hex::encode(.token))]
    UnknownSubscription { token: Vec<u8>, from: ReturnAddress },
    #[error(transparent)]
    Codec(CodecError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HandlerConfig {
    /// Subscriptions older than this are dropped by [`ObserveHandler::expire`].
    pub max_age: Duration,
}

impl Default for HandlerConfig {
    fn default() -> Self {
        Self {
            max_age: Duration::from_secs(90),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct HandlerStats {
    pub forwarded: u64,
    pub aggregated: u64,
    pub duplicates: u64,
    pub fanned_out: u64,
    pub acks_suppressed: u64,
    pub acks_forwarded: u64,
}

#[derive(Clone, Debug, Default)]
pub struct ObserveHandler {
    config: HandlerConfig,
    subscriptions: Vec<Subscription>,
    suppressed: Vec<SuppressedAck>,
    /// Token used upstream for every live resource.
    upstream: BTreeMap<String, Vec<u8>>,
    mids: BTreeMap<ReturnAddress, u16>,
    stats: HandlerStats,
}

impl ObserveHandler {
    pub fn new(config: HandlerConfig) -> Self {
        Self {
            config,
            ..Default::default()
        }
    }

    pub fn config(&self) -> &HandlerConfig {
        &self.config
    }

    pub fn stats(&self) -> HandlerStats {
        self.stats
    }

    pub fn subscriptions(&self) -> &[Subscription] {
        &self.subscriptions
    }

    pub fn suppressed_acks(&self) -> &[SuppressedAck] {
        &self.suppressed
    }

    pub fn observers_of<'a>(&'a self, uri: &'a str) -> impl Iterator<Item = &'a Subscription> + 'a {
        self.subscriptions.iter().filter(move |s| s.resource_uri == uri)
    }

    pub fn is_live(&self, uri: &str) -> bool {
        self.upstream.contains_key(uri)
    }

    pub fn upstream_token(&self, uri: &str) -> Option<&[u8]> {
        self.upstream.get(uri).map(Vec::as_slice)
    }

    /// Handles an observe registration.
    ///
    /// A repeated (client, token) pair is a retransmission and is dropped.
    /// A registration for a resource that already has an observer is stored
    /// but not forwarded. Otherwise the registration is stored and returned
    /// for forwarding; its token becomes the upstream token for the resource.
    pub fn handle_observe_request(
        &mut self,
        req: &CoapMessage,
        from: &ReturnAddress,
        now: SimTime,
    ) -> Result<HandlerDecision, ObserveError> {
        if req.code != Code::GET || req.observe() != Some(codec::OBSERVE_REGISTER) {
            return Err(ObserveError::NotAnObserveRequest);
        }
        let uri = codec::request_uri(req).map_err(ObserveError::MalformedUri)?;
        let client = ClientNode::new(from.clone(), req.token.clone())?;

        if self.subscriptions.iter().any(|s| s.client == client) {
            self.stats.duplicates += 1;
            return Ok(HandlerDecision::DropDuplicate);
        }

        let known = self.subscriptions.iter().any(|s| s.resource_uri == uri);
        self.subscriptions.push(Subscription {
            resource_uri: uri.clone(),
            message_id: req.message_id,
            first_response_pending: true,
            confirmable: req.msg_type == MessageType::Confirmable,
            client,
            created_at: now,
        });
        if known {
            self.stats.aggregated += 1;
            return Ok(HandlerDecision::AggregateLocal);
        }
        self.upstream.insert(uri, req.token.clone());
        self.stats.forwarded += 1;
        Ok(HandlerDecision::Forward(req.clone()))
    }

    /// Resource URI for a token echoed by an upstream response.
    ///
    /// Live subscriptions are searched first, then the upstream tokens of live
    /// resources (the original registrant may have left while others stay).
    pub fn resolve_uri_by_token(&self, token: &[u8]) -> Result<String, ObserveError> {
        self.subscriptions
            .iter()
            .find(|s| s.token() == token)
            .map(|s| s.resource_uri.clone())
            .or_else(|| {
                self.upstream
                    .iter()
                    .find(|(_, t)| t.as_slice() == token)
                    .map(|(uri, _)| uri.clone())
            })
            .ok_or_else(|| ObserveError::NotFound(token.to_vec()))
    }

    /// Distributes an upstream notification to every observer of `uri`.
    ///
    /// Each copy carries its observer's token. An observer still waiting for
    /// its first response gets a piggybacked ACK that reuses its registration
    /// message ID; everyone else gets a notification of the upstream type
    /// (CON stays CON, anything else becomes NON) with a fresh per-observer
    /// message ID.
    pub fn handle_observe_response(
        &mut self,
        resp: &CoapMessage,
        uri: &str,
    ) -> Result<Vec<Outbound>, ObserveError> {
        if resp.observe().is_none() {
            return Err(ObserveError::NotAnObserveResponse);
        }
        let steady_type = if resp.msg_type == MessageType::Confirmable {
            MessageType::Confirmable
        } else {
            MessageType::NonConfirmable
        };
        let out = self.fan_out(resp, uri, steady_type)?;
        self.stats.fanned_out += out.len() as u64;
        Ok(out)
    }

    fn fan_out(
        &mut self,
        resp: &CoapMessage,
        uri: &str,
        steady_type: MessageType,
    ) -> Result<Vec<Outbound>, ObserveError> {
        let targets: Vec<usize> = self
            .subscriptions
            .iter()
            .enumerate()
            .filter(|(_, s)| s.resource_uri == uri)
            .map(|(i, _)| i)
            .collect();
        if targets.is_empty() {
            return Err(ObserveError::NoMatchingSubscription(uri.to_owned()));
        }
        let mut out = Vec::with_capacity(targets.len());
        for i in targets {
            let sub = &self.subscriptions[i];
            let (msg_type, message_id) = if sub.first_response_pending && sub.confirmable {
                (MessageType::Acknowledgement, sub.message_id)
            } else {
                let to = sub.client.return_address.clone();
                (steady_type, self.next_mid_for(&to))
            };
            let sub = &mut self.subscriptions[i];
            sub.first_response_pending = false;
            let mut message = resp.clone();
            message.msg_type = msg_type;
            message.message_id = message_id;
            message.token = sub.client.token.clone();
            out.push(Outbound {
                to: sub.client.return_address.clone(),
                message,
            });
        }
        Ok(out)
    }

    /// Fan-out plus ACK bookkeeping for a notification arriving from upstream.
    ///
    /// For a confirmable notification the first confirmable copy is the ACK
    /// carrier: its acknowledgement travels upstream. Every other confirmable
    /// copy is recorded as suppressed and answered here.
    pub fn distribute(&mut self, resp: &CoapMessage, uri: &str) -> Result<FanOut, ObserveError> {
        let copies = self.handle_observe_response(resp, uri)?;
        let mut carrier = None;
        if resp.msg_type == MessageType::Confirmable {
            for (i, copy) in copies.iter().enumerate() {
                if copy.message.msg_type != MessageType::Confirmable {
                    continue;
                }
                if carrier.is_none() {
                    carrier = Some(i);
                    continue;
                }
                // A wrapped MID can collide with a stale record; the fresh one wins.
                let client = copy.to.clone();
                let mid = copy.message.message_id;
                self.suppressed
                    .retain(|s| !(s.client == client && s.message_id == mid));
                self.record_suppressed_ack(client, copy.message.token.clone(), mid)?;
            }
        }
        Ok(FanOut { copies, carrier })
    }

    /// Relays a final (non-notification) response to every observer of `uri`
    /// and ends all of those observations.
    pub fn terminate_resource(
        &mut self,
        resp: &CoapMessage,
        uri: &str,
    ) -> Result<Vec<Outbound>, ObserveError> {
        let out = self.fan_out(resp, uri, MessageType::NonConfirmable)?;
        let gone: Vec<ClientNode> = self
            .observers_of(uri)
            .map(|s| s.client.clone())
            .collect();
        for client in gone {
            self.remove(&client);
        }
        Ok(out)
    }

    /// Answers an acknowledgement locally if it was recorded as suppressed.
    pub fn handle_client_ack(&mut self, ack: &CoapMessage, from: &ReturnAddress) -> AckDecision {
        let hit = self
            .suppressed
            .iter()
            .position(|s| s.message_id == ack.message_id && &s.client == from);
        match hit {
            Some(i) => {
                self.suppressed.remove(i);
                self.stats.acks_suppressed += 1;
                AckDecision::Suppress
            }
            None => {
                self.stats.acks_forwarded += 1;
                AckDecision::Forward
            }
        }
    }

    pub fn record_suppressed_ack(
        &mut self,
        client: ReturnAddress,
        token: impl Into<Vec<u8>>,
        message_id: u16,
    ) -> Result<(), ObserveError> {
        if self
            .suppressed
            .iter()
            .any(|s| s.message_id == message_id && s.client == client)
        {
            return Err(ObserveError::DuplicateMid {
                client,
                mid: message_id,
            });
        }
        self.suppressed.push(SuppressedAck {
            client,
            token: token.into(),
            message_id,
        });
        Ok(())
    }

    /// Removes the (from, token) observation.
    pub fn deregister(
        &mut self,
        token: &[u8],
        from: &ReturnAddress,
    ) -> Result<Removal, ObserveError> {
        let client = ClientNode {
            return_address: from.clone(),
            token: token.to_vec(),
        };
        self.remove(&client)
            .ok_or_else(|| ObserveError::UnknownSubscription {
                token: token.to_vec(),
                from: from.clone(),
            })
    }

    /// A reset from a client ends every observation it holds.
    pub fn reset_client(&mut self, from: &ReturnAddress) -> Vec<Removal> {
        let clients: Vec<ClientNode> = self
            .subscriptions
            .iter()
            .filter(|s| &s.client.return_address == from)
            .map(|s| s.client.clone())
            .collect();
        clients.iter().filter_map(|c| self.remove(c)).collect()
    }

    /// Drops subscriptions older than the configured max-age.
    pub fn expire(&mut self, now: SimTime) -> Vec<Removal> {
        let max_age = self.config.max_age;
        let stale: Vec<ClientNode> = self
            .subscriptions
            .iter()
            .filter(|s| now.since(s.created_at) > max_age)
            .map(|s| s.client.clone())
            .collect();
        stale.iter().filter_map(|c| self.remove(c)).collect()
    }

    fn remove(&mut self, client: &ClientNode) -> Option<Removal> {
        let i = self.subscriptions.iter().position(|s| &s.client == client)?;
        let sub = self.subscriptions.remove(i);
        self.suppressed
            .retain(|s| !(s.client == client.return_address && s.token == client.token));
        let last = !self
            .subscriptions
            .iter()
            .any(|s| s.resource_uri == sub.resource_uri);
        let outcome = if last {
            self.upstream.remove(&sub.resource_uri);
            DeregisterOutcome::RemovedAndForward
        } else {
            DeregisterOutcome::RemovedLocal
        };
        Some(Removal {
            resource_uri: sub.resource_uri,
            client: sub.client,
            outcome,
        })
    }

    /// Next message ID for rewritten messages to `client`; starts at 1 and wraps.
    pub fn next_client_mid(&mut self, client: &ClientNode) -> u16 {
        self.next_mid_for(&client.return_address)
    }

    fn next_mid_for(&mut self, addr: &ReturnAddress) -> u16 {
        let counter = self.mids.entry(addr.clone()).or_insert(0);
        *counter = counter.wrapping_add(1);
        *counter
    }

    pub fn snapshot(&self) -> Snapshot<'_> {
        Snapshot(self)
    }
}

/// Line-oriented dump of a handler's lists.
///
/// ```text
/// subscription uri=<uri> client=<addr> token=<hex> mid=<mid> pending=<bool> created=<s.us>
/// suppressed client=<addr> token=<hex> mid=<mid>
/// upstream uri=<uri> token=<hex>
/// ```
pub struct Snapshot<'a>(&'a ObserveHandler);

impl fmt::Display for Snapshot<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.0.subscriptions {
            writeln!(
                f,
                "subscription uri={} client={} token={} mid={:#06x} pending={} created={}",
                s.resource_uri,
                s.client.return_address,
                hex::encode(s.token()),
                s.message_id,
                s.first_response_pending,
                s.created_at
            )?;
        }
        for s in &self.0.suppressed {
            writeln!(
                f,
                "suppressed client={} token={} mid={:#06x}",
                s.client,
                hex::encode(&s.token),
                s.message_id
            )?;
        }
        for (uri, token) in &self.0.upstream {
            writeln!(f, "upstream uri={} token={}", uri, hex::encode(token))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::option;

    const R: &str = "coap://aueb.example.gr/R1";

    fn udp(port: u16) -> ReturnAddress {
        ReturnAddress::Udp(SocketAddr::from(([10, 0, 0, 1], port)))
    }

    fn register(token: &[u8], mid: u16, uri: &str) -> CoapMessage {
        CoapMessage::new(MessageType::Confirmable, Code::GET, mid)
            .with_token(token.to_vec())
            .with_observe(0)
            .with_option(option::PROXY_URI, uri)
    }

    fn notification(token: &[u8], seq: u32, con: bool) -> CoapMessage {
        let t = if con {
            MessageType::Confirmable
        } else {
            MessageType::NonConfirmable
        };
        CoapMessage::new(t, Code::CONTENT, 0x4000 + seq as u16)
            .with_token(token.to_vec())
            .with_observe(seq)
            .with_payload(format!("v{seq}").into_bytes())
    }

    #[test]
    fn first_request_forwards_second_aggregates_retransmission_drops() {
        let mut h = ObserveHandler::default();
        let d1 = h.handle_observe_request(&register(b"t1", 1, R), &udp(1), SimTime(0)).unwrap();
        assert_eq!(d1.action(), Action::Forward);
        assert_eq!(d1.outbound().unwrap().token, b"t1");

        let d2 = h.handle_observe_request(&register(b"t2", 7, R), &udp(2), SimTime(5)).unwrap();
        assert_eq!(d2, HandlerDecision::AggregateLocal);

        let d3 = h.handle_observe_request(&register(b"t1", 1, R), &udp(1), SimTime(9)).unwrap();
        assert_eq!(d3, HandlerDecision::DropDuplicate);
        assert_eq!(h.subscriptions().len(), 2);
    }

    #[test]
    fn equal_tokens_from_different_clients_are_distinct() {
        let mut h = ObserveHandler::default();
        h.handle_observe_request(&register(b"t", 1, R), &udp(1), SimTime(0)).unwrap();
        let d = h.handle_observe_request(&register(b"t", 1, R), &udp(2), SimTime(0)).unwrap();
        assert_eq!(d, HandlerDecision::AggregateLocal);
    }

    #[test]
    fn non_observe_requests_rejected() {
        let mut h = ObserveHandler::default();
        let plain = CoapMessage::new(MessageType::Confirmable, Code::GET, 1)
            .with_option(option::PROXY_URI, R);
        assert_eq!(
            h.handle_observe_request(&plain, &udp(1), SimTime(0)),
            Err(ObserveError::NotAnObserveRequest)
        );
        let dereg = register(b"t", 1, R).with_observe(1);
        assert_eq!(
            h.handle_observe_request(&dereg, &udp(1), SimTime(0)),
            Err(ObserveError::NotAnObserveRequest)
        );
        let bad = register(b"t", 1, "http://x/y");
        assert!(matches!(
            h.handle_observe_request(&bad, &udp(1), SimTime(0)),
            Err(ObserveError::MalformedUri(_))
        ));
    }

    #[test]
    fn two_pending_observers_get_piggybacked_acks() {
        let mut h = ObserveHandler::default();
        h.handle_observe_request(&register(b"t1", 11, R), &udp(1), SimTime(0)).unwrap();
        h.handle_observe_request(&register(b"t2", 22, R), &udp(2), SimTime(0)).unwrap();
        let out = h.handle_observe_response(&notification(b"t1", 3, false), R).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].message.token, b"t1");
        assert_eq!(out[1].message.token, b"t2");
        assert!(out.iter().all(|o| o.message.msg_type == MessageType::Acknowledgement));
        assert_eq!(out[0].message.message_id, 11);
        assert_eq!(out[1].message.message_id, 22);
        assert!(h.subscriptions().iter().all(|s| !s.first_response_pending));
    }

    #[test]
    fn mixed_states_fan_out() {
        // t1 already served; t2 and t3 still pending. Hand-walked loop:
        // t1 -> NON, fresh mid 1; t2 -> ACK mid 20; t3 -> ACK mid 30.
        let mut h = ObserveHandler::default();
        h.handle_observe_request(&register(b"t1", 10, R), &udp(1), SimTime(0)).unwrap();
        h.handle_observe_response(&notification(b"t1", 1, false), R).unwrap();
        h.handle_observe_request(&register(b"t2", 20, R), &udp(2), SimTime(0)).unwrap();
        h.handle_observe_request(&register(b"t3", 30, R), &udp(3), SimTime(0)).unwrap();

        let out = h.handle_observe_response(&notification(b"t1", 2, false), R).unwrap();
        let summary: Vec<(MessageType, u16, &[u8])> = out
            .iter()
            .map(|o| (o.message.msg_type, o.message.message_id, o.message.token.as_slice()))
            .collect();
        assert_eq!(
            summary,
            vec![
                (MessageType::NonConfirmable, 1, b"t1".as_slice()),
                (MessageType::Acknowledgement, 20, b"t2".as_slice()),
                (MessageType::Acknowledgement, 30, b"t3".as_slice()),
            ]
        );
        assert!(out.iter().all(|o| o.message.payload == b"v2"));
    }

    #[test]
    fn con_notifications_stay_con_after_first_response() {
        let mut h = ObserveHandler::default();
        h.handle_observe_request(&register(b"t1", 10, R), &udp(1), SimTime(0)).unwrap();
        h.handle_observe_response(&notification(b"t1", 1, true), R).unwrap();
        let out = h.handle_observe_response(&notification(b"t1", 2, true), R).unwrap();
        assert_eq!(out[0].message.msg_type, MessageType::Confirmable);
    }

    #[test]
    fn non_registration_first_response_is_non() {
        let mut h = ObserveHandler::default();
        let mut req = register(b"t1", 10, R);
        req.msg_type = MessageType::NonConfirmable;
        h.handle_observe_request(&req, &udp(1), SimTime(0)).unwrap();
        let out = h.handle_observe_response(&notification(b"t1", 1, false), R).unwrap();
        assert_eq!(out[0].message.msg_type, MessageType::NonConfirmable);
        assert_eq!(out[0].message.message_id, 1);
    }

    #[test]
    fn empty_fan_out_is_an_error() {
        let mut h = ObserveHandler::default();
        assert_eq!(
            h.handle_observe_response(&notification(b"t1", 1, false), R),
            Err(ObserveError::NoMatchingSubscription(R.into()))
        );
        let no_observe = CoapMessage::new(MessageType::NonConfirmable, Code::CONTENT, 1);
        assert_eq!(
            h.handle_observe_response(&no_observe, R),
            Err(ObserveError::NotAnObserveResponse)
        );
    }

    #[test]
    fn resolve_uri_by_token_cases() {
        let mut h = ObserveHandler::default();
        h.handle_observe_request(&register(b"t1", 1, R), &udp(1), SimTime(0)).unwrap();
        assert_eq!(h.resolve_uri_by_token(b"t1").unwrap(), R);
        assert_eq!(
            h.resolve_uri_by_token(b"zz"),
            Err(ObserveError::NotFound(b"zz".to_vec()))
        );
    }

    #[test]
    fn resolve_uri_by_token_two_by_two() {
        let r2 = "coap://aueb.example.gr/R2";
        let mut h = ObserveHandler::default();
        h.handle_observe_request(&register(b"a", 1, R), &udp(1), SimTime(0)).unwrap();
        h.handle_observe_request(&register(b"b", 2, r2), &udp(2), SimTime(0)).unwrap();
        for (token, uri) in [(b"a", R), (b"b", r2)] {
            assert_eq!(h.resolve_uri_by_token(token).unwrap(), uri);
        }
    }

    #[test]
    fn upstream_token_survives_departure_of_first_registrant() {
        let mut h = ObserveHandler::default();
        h.handle_observe_request(&register(b"t1", 1, R), &udp(1), SimTime(0)).unwrap();
        h.handle_observe_request(&register(b"t2", 2, R), &udp(2), SimTime(0)).unwrap();
        assert_eq!(
            h.deregister(b"t1", &udp(1)).unwrap().outcome,
            DeregisterOutcome::RemovedLocal
        );
        assert_eq!(h.resolve_uri_by_token(b"t1").unwrap(), R);
        assert_eq!(h.upstream_token(R), Some(b"t1".as_slice()));
    }

    #[test]
    fn ack_suppression() {
        let mut h = ObserveHandler::default();
        let ack = |mid| CoapMessage::empty_ack(mid);
        h.record_suppressed_ack(udp(2), b"t2".to_vec(), 7).unwrap();
        assert_eq!(h.handle_client_ack(&ack(8), &udp(2)), AckDecision::Forward);
        assert_eq!(h.handle_client_ack(&ack(7), &udp(3)), AckDecision::Forward);
        assert_eq!(h.handle_client_ack(&ack(7), &udp(2)), AckDecision::Suppress);
        assert_eq!(h.handle_client_ack(&ack(7), &udp(2)), AckDecision::Forward);
    }

    #[test]
    fn duplicate_suppressed_mid_rejected() {
        let mut h = ObserveHandler::default();
        h.record_suppressed_ack(udp(2), b"t2".to_vec(), 7).unwrap();
        assert_eq!(
            h.record_suppressed_ack(udp(2), b"t2".to_vec(), 7),
            Err(ObserveError::DuplicateMid { client: udp(2), mid: 7 })
        );
        // Same MID from a different endpoint is a different exchange.
        h.record_suppressed_ack(udp(3), b"t3".to_vec(), 7).unwrap();
    }

    #[test]
    fn deregistration_outcomes() {
        let mut h = ObserveHandler::default();
        h.handle_observe_request(&register(b"t1", 1, R), &udp(1), SimTime(0)).unwrap();
        h.handle_observe_request(&register(b"t2", 2, R), &udp(2), SimTime(0)).unwrap();
        h.record_suppressed_ack(udp(2), b"t2".to_vec(), 5).unwrap();

        let first = h.deregister(b"t2", &udp(2)).unwrap();
        assert_eq!(first.outcome, DeregisterOutcome::RemovedLocal);
        assert!(h.suppressed_acks().is_empty());
        let last = h.deregister(b"t1", &udp(1)).unwrap();
        assert_eq!(last.outcome, DeregisterOutcome::RemovedAndForward);
        assert!(!h.is_live(R));
        assert!(matches!(
            h.deregister(b"t9", &udp(1)),
            Err(ObserveError::UnknownSubscription { .. })
        ));
        // A new registration after the last left goes upstream again.
        let d = h.handle_observe_request(&register(b"t3", 3, R), &udp(3), SimTime(0)).unwrap();
        assert_eq!(d.action(), Action::Forward);
    }

    #[test]
    fn reset_removes_all_of_a_clients_observations() {
        let r2 = "coap://aueb.example.gr/R2";
        let mut h = ObserveHandler::default();
        h.handle_observe_request(&register(b"a", 1, R), &udp(1), SimTime(0)).unwrap();
        h.handle_observe_request(&register(b"b", 2, r2), &udp(1), SimTime(0)).unwrap();
        h.handle_observe_request(&register(b"c", 3, r2), &udp(2), SimTime(0)).unwrap();
        let removed = h.reset_client(&udp(1));
        let outcomes: Vec<DeregisterOutcome> = removed.iter().map(|r| r.outcome).collect();
        assert_eq!(
            outcomes,
            vec![DeregisterOutcome::RemovedAndForward, DeregisterOutcome::RemovedLocal]
        );
        assert_eq!(h.subscriptions().len(), 1);
    }

    #[test]
    fn expiry_uses_max_age() {
        let mut h = ObserveHandler::new(HandlerConfig {
            max_age: Duration::from_secs(90),
        });
        h.handle_observe_request(&register(b"t1", 1, R), &udp(1), SimTime(0)).unwrap();
        h.handle_observe_request(&register(b"t2", 2, R), &udp(2), SimTime::from_millis(10_000)).unwrap();
        assert!(h.expire(SimTime::from_millis(90_000)).is_empty());
        let gone = h.expire(SimTime::from_millis(90_001));
        assert_eq!(gone.len(), 1);
        assert_eq!(gone[0].outcome, DeregisterOutcome::RemovedLocal);
        let gone = h.expire(SimTime::from_millis(100_001));
        assert_eq!(gone[0].outcome, DeregisterOutcome::RemovedAndForward);
    }

    #[test]
    fn client_mids_start_at_one_wrap_and_are_independent() {
        let mut h = ObserveHandler::default();
        let a = ClientNode::new(udp(1), b"a".to_vec()).unwrap();
        let b = ClientNode::new(udp(2), b"b".to_vec()).unwrap();
        assert_eq!(h.next_client_mid(&a), 1);

        // Ten interleaved calls: a b a a b a b b a a
        let order = [&a, &b, &a, &a, &b, &a, &b, &b, &a, &a];
        let got: Vec<u16> = order.iter().map(|c| h.next_client_mid(c)).collect();
        assert_eq!(got, vec![2, 1, 3, 4, 2, 5, 3, 4, 6, 7]);

        let mut h = ObserveHandler::default();
        let first = h.next_client_mid(&a);
        for _ in 1..(1 << 16) {
            h.next_client_mid(&a);
        }
        assert_eq!(h.next_client_mid(&a), first);
    }

    #[test]
    fn token_longer_than_eight_bytes_rejected() {
        assert!(ClientNode::new(udp(1), vec![0; 9]).is_err());
    }

    #[test]
    fn snapshot_lists_everything() {
        let mut h = ObserveHandler::default();
        h.handle_observe_request(&register(b"t1", 0x12, R), &udp(1), SimTime(1)).unwrap();
        h.record_suppressed_ack(udp(1), b"t1".to_vec(), 3).unwrap();
        let text = h.snapshot().to_string();
        assert_eq!(
            text,
            "subscription uri=coap://aueb.example.gr/R1 client=udp:10.0.0.1:1 token=7431 mid=0x0012 pending=true created=0.000001\n\
             suppressed client=udp:10.0.0.1:1 token=7431 mid=0x0003\n\
             upstream uri=coap://aueb.example.gr/R1 token=7431\n"
        );
    }

    #[test]
    fn distribute_picks_one_carrier_and_suppresses_the_rest() {
        let mut h = ObserveHandler::default();
        for (i, t) in [b"t1", b"t2", b"t3"].iter().enumerate() {
            h.handle_observe_request(&register(*t, 10 + i as u16, R), &udp(i as u16 + 1), SimTime(0))
                .unwrap();
        }
        // The first notification is piggybacked to everyone, so nothing needs an ACK.
        let first = h.distribute(&notification(b"t1", 1, true), R).unwrap();
        assert!(first.copies.iter().all(|c| c.message.msg_type == MessageType::Acknowledgement));
        assert_eq!(first.carrier, None);
        assert!(h.suppressed_acks().is_empty());

        let second = h.distribute(&notification(b"t1", 2, true), R).unwrap();
        assert_eq!(second.carrier, Some(0));
        assert_eq!(h.suppressed_acks().len(), 2);
        let carrier = &second.copies[0];
        assert_eq!(h.handle_client_ack(&CoapMessage::empty_ack(carrier.message.message_id), &carrier.to), AckDecision::Forward);
        for c in &second.copies[1..] {
            assert_eq!(h.handle_client_ack(&CoapMessage::empty_ack(c.message.message_id), &c.to), AckDecision::Suppress);
        }

        let non = h.distribute(&notification(b"t1", 3, false), R).unwrap();
        assert_eq!(non.carrier, None);
        assert!(h.suppressed_acks().is_empty());
    }
}
