//! Shared oracles for the integration tests and the acceptance run.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::path::PathBuf;

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use coap_icn::clock::SimTime;
use coap_icn::codec::{
    self, option, Code, CoapMessage, CoapOption, MessageType, MAX_OBSERVE,
};
use coap_icn::harness::Scenario;
use coap_icn::observe::{
    AckDecision, DeregisterOutcome, HandlerConfig, HandlerDecision, ObserveHandler, ReturnAddress,
};

pub fn scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(format!("{name}.toml"));
    Scenario::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

// ---------------------------------------------------------------------------
// Codec

/// Reference encoder written straight from the RFC 7252 octet layout.
pub fn oracle_encode(m: &CoapMessage) -> Vec<u8> {
    fn field(v: usize) -> (u8, Vec<u8>) {
        match v {
            0..=12 => (v as u8, vec![]),
            13..=268 => (13, vec![(v - 13) as u8]),
            _ => {
                let x = v - 269;
                (14, vec![(x >> 8) as u8, (x & 0xFF) as u8])
            }
        }
    }
    let type_bits = match m.msg_type {
        MessageType::Confirmable => 0,
        MessageType::NonConfirmable => 1,
        MessageType::Acknowledgement => 2,
        MessageType::Reset => 3,
    };
    let mut out = vec![
        0x40 | (type_bits << 4) | m.token.len() as u8,
        m.code.0,
        (m.message_id >> 8) as u8,
        m.message_id as u8,
    ];
    out.extend_from_slice(&m.token);
    let mut last = 0usize;
    for o in &m.options {
        let (dn, dx) = field(o.number as usize - last);
        let (ln, lx) = field(o.value.len());
        out.push(dn << 4 | ln);
        out.extend(dx);
        out.extend(lx);
        out.extend_from_slice(&o.value);
        last = o.number as usize;
    }
    if !m.payload.is_empty() {
        out.push(0xFF);
        out.extend_from_slice(&m.payload);
    }
    out
}

fn uint_bytes(v: u32) -> Vec<u8> {
    v.to_be_bytes().iter().copied().skip_while(|b| *b == 0).collect()
}

fn option_strategy() -> impl Strategy<Value = CoapOption> {
    let text = |max: usize| proptest::collection::vec(any::<u8>(), 0..=max);
    prop_oneof![
        (0..=MAX_OBSERVE).prop_map(|v| CoapOption::new(option::OBSERVE, uint_bytes(v))),
        text(20).prop_map(|v| CoapOption::new(option::URI_HOST, v)),
        any::<u16>().prop_map(|p| CoapOption::new(option::URI_PORT, uint_bytes(p.into()))),
        text(12).prop_map(|v| CoapOption::new(option::URI_PATH, v)),
        text(12).prop_map(|v| CoapOption::new(option::URI_QUERY, v)),
        (0u32..100).prop_map(|v| CoapOption::new(option::CONTENT_FORMAT, uint_bytes(v))),
        text(400).prop_map(|v| CoapOption::new(option::PROXY_URI, v)),
        // unknown options, elective and critical, with 8- and 16-bit deltas
        (prop::sample::select(vec![2u16, 9, 60, 258, 1000, 2049, 65000]), text(16))
            .prop_map(|(n, v)| CoapOption::new(n, v)),
    ]
}

/// Valid messages: sorted options, single-instance options unique, Empty
/// messages bare.
pub fn message_strategy() -> impl Strategy<Value = CoapMessage> {
    let msg_type = prop::sample::select(vec![
        MessageType::Confirmable,
        MessageType::NonConfirmable,
        MessageType::Acknowledgement,
        MessageType::Reset,
    ]);
    let code = prop_oneof![
        (1u8..=4).prop_map(Code),
        (prop::sample::select(vec![2u8, 4, 5]), 0u8..=31).prop_map(|(c, d)| Code::new(c, d)),
    ];
    let full = (
        msg_type.clone(),
        code,
        any::<u16>(),
        proptest::collection::vec(any::<u8>(), 0..=8),
        proptest::collection::vec(option_strategy(), 0..6),
        proptest::collection::vec(any::<u8>(), 0..64),
    )
        .prop_map(|(t, c, mid, token, mut opts, payload)| {
            opts.sort_by_key(|o| o.number);
            let mut seen = BTreeSet::new();
            opts.retain(|o| !option::SINGLE.contains(&o.number) || seen.insert(o.number));
            let mut m = CoapMessage::new(t, c, mid).with_token(token).with_payload(payload);
            m.options = opts;
            m
        });
    let empty = (msg_type, any::<u16>()).prop_map(|(t, mid)| CoapMessage::new(t, Code::EMPTY, mid));
    prop_oneof![9 => full, 1 => empty]
}

/// Round-trips `cases` random messages and compares each encoding with the
/// reference encoder. Returns the number of cases run.
pub fn codec_roundtrip(cases: u32) -> Result<u32, String> {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let rng = TestRng::deterministic_rng(RngAlgorithm::ChaCha);
    let mut runner = TestRunner::new_with_rng(config, rng);
    let count = std::cell::Cell::new(0u32);
    runner
        .run(&message_strategy(), |m| {
            count.set(count.get() + 1);
            let wire = codec::encode(&m).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(&wire, &oracle_encode(&m));
            let back = codec::decode(&wire).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(codec::encode(&back).unwrap(), wire);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(count.get())
}

pub struct Golden {
    pub name: &'static str,
    pub wire: Vec<u8>,
    pub message: CoapMessage,
}

fn read_vector(name: &str) -> Vec<u8> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/vectors")
        .join(format!("{name}.hex"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let digits: String = text
        .lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .flat_map(|l| l.chars())
        .filter(|c| !c.is_whitespace())
        .collect();
    hex::decode(digits).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Hex-dump vectors paired with the message each one spells out.
pub fn golden_vectors() -> Vec<Golden> {
    let long_uri = format!("coap://h/{}", "a".repeat(291));
    let mut extended = read_vector("extended_length");
    extended.extend_from_slice(long_uri.as_bytes());
    let ct = MessageType::Confirmable;
    let non = MessageType::NonConfirmable;
    vec![
        Golden {
            name: "observe_register_uri_path",
            wire: read_vector("observe_register_uri_path"),
            message: CoapMessage::new(ct, Code::GET, 0x1234)
                .with_token(*b"t1")
                .with_observe(0)
                .with_option(option::URI_PATH, *b"R1"),
        },
        Golden {
            name: "empty_ack",
            wire: read_vector("empty_ack"),
            message: CoapMessage::empty_ack(7),
        },
        Golden {
            name: "proxy_uri_get",
            wire: read_vector("proxy_uri_get"),
            message: CoapMessage::new(ct, Code::GET, 1)
                .with_option(option::PROXY_URI, *b"coap://s/R1"),
        },
        Golden {
            name: "non_notification",
            wire: read_vector("non_notification"),
            message: CoapMessage::new(non, Code::CONTENT, 0xBEEF)
                .with_token([0xAB])
                .with_observe(5)
                .with_option(option::CONTENT_FORMAT, [])
                .with_payload(*b"22.5"),
        },
        Golden {
            name: "piggybacked_ack",
            wire: read_vector("piggybacked_ack"),
            message: CoapMessage::new(MessageType::Acknowledgement, Code::CONTENT, 0x1234)
                .with_token(*b"t1")
                .with_observe(1)
                .with_payload(*b"x"),
        },
        Golden {
            name: "observe_three_bytes",
            wire: read_vector("observe_three_bytes"),
            message: CoapMessage::new(non, Code::CONTENT, 2).with_observe(0x010203),
        },
        Golden {
            name: "extended_length",
            wire: extended,
            message: CoapMessage::new(ct, Code::GET, 0x0102)
                .with_option(option::PROXY_URI, long_uri.into_bytes()),
        },
    ]
}

/// Checks every golden vector both ways; returns the number checked.
pub fn check_golden() -> Result<usize, String> {
    let vectors = golden_vectors();
    for g in &vectors {
        let wire = codec::encode(&g.message).map_err(|e| format!("{}: {e}", g.name))?;
        if wire != g.wire {
            return Err(format!(
                "{}: encoded {} expected {}",
                g.name,
                hex::encode(&wire),
                hex::encode(&g.wire)
            ));
        }
        let back = codec::decode(&g.wire).map_err(|e| format!("{}: {e}", g.name))?;
        if back != g.message {
            return Err(format!("{}: decoded {back:?}", g.name));
        }
    }
    Ok(vectors.len())
}

// ---------------------------------------------------------------------------
// Observe state machine

pub const MAX_CLIENTS: usize = 8;
pub const MAX_RESOURCES: usize = 3;
const TOKEN_POOL: [&[u8]; 5] = [b"t1", b"t2", b"t3", b"\x01", b"abcdefgh"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Event {
    Register { client: usize, resource: usize, confirmable: bool },
    Retransmit { client: usize, resource: usize },
    Notify { resource: usize, confirmable: bool, payload: u8 },
    Ack { client: usize },
    AckAgain { client: usize },
    Deregister { client: usize, resource: usize },
    Reset { client: usize },
}

#[derive(Clone, Debug)]
pub struct Plan {
    pub clients: usize,
    pub resources: usize,
    /// tokens[client][resource]; distinct per client, shared across clients.
    pub tokens: Vec<Vec<Vec<u8>>>,
    pub events: Vec<Event>,
}

pub fn plan(seed: u64) -> Plan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clients = rng.gen_range(1..=MAX_CLIENTS);
    let resources = rng.gen_range(1..=MAX_RESOURCES);
    let tokens = (0..clients)
        .map(|_| {
            let mut pool = TOKEN_POOL.to_vec();
            pool.shuffle(&mut rng);
            pool[..resources].iter().map(|t| t.to_vec()).collect()
        })
        .collect();
    let len = rng.gen_range(10..80);
    let events = (0..len)
        .map(|_| {
            let client = rng.gen_range(0..clients);
            let resource = rng.gen_range(0..resources);
            match rng.gen_range(0..100) {
                0..=24 => Event::Register { client, resource, confirmable: rng.gen_bool(0.7) },
                25..=32 => Event::Retransmit { client, resource },
                33..=62 => Event::Notify { resource, confirmable: rng.gen_bool(0.6), payload: rng.gen() },
                63..=77 => Event::Ack { client },
                78..=81 => Event::AckAgain { client },
                82..=96 => Event::Deregister { client, resource },
                _ => Event::Reset { client },
            }
        })
        .collect();
    Plan { clients, resources, tokens, events }
}

fn addr(client: usize) -> ReturnAddress {
    ReturnAddress::Udp(SocketAddr::from(([10, 0, 0, 1 + client as u8], 40000)))
}

fn uri(resource: usize) -> String {
    format!("coap://s/R{resource}")
}

/// What one client saw: (resource, payload) in arrival order.
pub type Visible = Vec<Vec<(usize, u8)>>;

/// Naive per-client unicast: every live observer gets every notification
/// of its resource directly from the server.
pub fn unicast_oracle(p: &Plan) -> Visible {
    let mut observing: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut seen = vec![Vec::new(); p.clients];
    for e in &p.events {
        match *e {
            Event::Register { client, resource, .. } => {
                observing.insert((client, resource));
            }
            Event::Notify { resource, payload, .. } => {
                for &(c, r) in &observing {
                    if r == resource {
                        seen[c].push((r, payload));
                    }
                }
            }
            Event::Deregister { client, resource } => {
                observing.remove(&(client, resource));
            }
            Event::Reset { client } => observing.retain(|(c, _)| *c != client),
            Event::Retransmit { .. } | Event::Ack { .. } | Event::AckAgain { .. } => {}
        }
    }
    seen
}

/// Outcome of replaying a plan through the observe handler.
#[derive(Debug, PartialEq)]
pub struct Replay {
    pub visible: Visible,
    /// Debug rendering of every handler decision, in order.
    pub decisions: Vec<String>,
    pub suppressed: u64,
}

/// Replays `p` through one [`ObserveHandler`] acting as the only proxy and
/// checks the invariants after each step.
pub fn replay(p: &Plan) -> Result<Replay, String> {
    let mut h = ObserveHandler::new(HandlerConfig::default());
    let mut decisions = Vec::new();
    let mut visible = vec![Vec::new(); p.clients];
    // model state
    let mut observing: BTreeMap<(usize, usize), (u16, bool)> = BTreeMap::new(); // -> (reg mid, CON)
    let mut first_pending: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut next_mid = vec![0x100u16; p.clients];
    let mut unacked: Vec<Vec<(u16, usize)>> = vec![Vec::new(); p.clients]; // (mid, resource)
    let mut last_ack: Vec<Option<u16>> = vec![None; p.clients];
    let mut records: BTreeSet<(usize, u16, usize)> = BTreeSet::new(); // (client, mid, resource)
    let mut suppressed = 0u64;
    let mut records_made = 0u64;
    let mut records_dropped = 0u64;
    let mut seq = 2u32;

    let count_observers = |obs: &BTreeMap<(usize, usize), (u16, bool)>, r: usize| {
        obs.keys().filter(|(_, rr)| *rr == r).count()
    };

    for (step, e) in p.events.iter().enumerate() {
        let at = |msg: String| format!("step {step} {e:?}: {msg}");
        match *e {
            Event::Register { client, resource, confirmable } => {
                let mid = next_mid[client];
                next_mid[client] = mid.wrapping_add(1);
                let req = registration(p, client, resource, confirmable, mid);
                let d = h
                    .handle_observe_request(&req, &addr(client), SimTime::ZERO)
                    .map_err(|x| at(x.to_string()))?;
                decisions.push(format!("{d:?}"));
                let expected = if observing.contains_key(&(client, resource)) {
                    "DropDuplicate"
                } else if count_observers(&observing, resource) == 0 {
                    "Forward"
                } else {
                    "AggregateLocal"
                };
                let got = match &d {
                    HandlerDecision::Forward(m) => {
                        if m.token != p.tokens[client][resource] {
                            return Err(at("forwarded token differs from registrant's".into()));
                        }
                        "Forward"
                    }
                    HandlerDecision::DropDuplicate => "DropDuplicate",
                    HandlerDecision::AggregateLocal => "AggregateLocal",
                };
                if got != expected {
                    return Err(at(format!("decision {got}, expected {expected}")));
                }
                if expected != "DropDuplicate" {
                    observing.insert((client, resource), (mid, confirmable));
                    first_pending.insert((client, resource));
                }
            }
            Event::Retransmit { client, resource } => {
                let Some(&(mid, con)) = observing.get(&(client, resource)) else { continue };
                let req = registration(p, client, resource, con, mid);
                let d = h
                    .handle_observe_request(&req, &addr(client), SimTime::ZERO)
                    .map_err(|x| at(x.to_string()))?;
                decisions.push(format!("{d:?}"));
                if d != HandlerDecision::DropDuplicate {
                    return Err(at(format!("retransmission gave {:?}", d.action())));
                }
            }
            Event::Notify { resource, confirmable, payload } => {
                let u = uri(resource);
                let live = count_observers(&observing, resource) > 0;
                if h.is_live(&u) != live {
                    return Err(at(format!("is_live {} but {} observers", h.is_live(&u), live)));
                }
                if !live {
                    continue;
                }
                let upstream = h.upstream_token(&u).unwrap().to_vec();
                let t = if confirmable { MessageType::Confirmable } else { MessageType::NonConfirmable };
                let resp = CoapMessage::new(t, Code::CONTENT, 0x7000 + seq as u16)
                    .with_token(upstream)
                    .with_observe(seq)
                    .with_payload(vec![payload; 4]);
                seq += 1;
                let fan = h.distribute(&resp, &u).map_err(|x| at(x.to_string()))?;
                decisions.push(format!("{fan:?}"));
                let expected: Vec<usize> = observing
                    .keys()
                    .filter(|(_, r)| *r == resource)
                    .map(|(c, _)| *c)
                    .collect();
                if fan.copies.len() != expected.len() {
                    return Err(at(format!("{} copies for {} observers", fan.copies.len(), expected.len())));
                }
                let mut carriers = 0;
                let mut got_clients = Vec::new();
                for (i, copy) in fan.copies.iter().enumerate() {
                    let c = (0..p.clients)
                        .find(|c| addr(*c) == copy.to)
                        .ok_or_else(|| at("copy to unknown address".into()))?;
                    got_clients.push(c);
                    if copy.message.token != p.tokens[c][resource] {
                        return Err(at(format!("client {c} got token {}", hex::encode(&copy.message.token))));
                    }
                    if copy.message.payload != resp.payload || copy.message.observe() != Some(seq - 1) {
                        return Err(at("payload or observe altered".into()));
                    }
                    visible[c].push((resource, payload));
                    let (reg_mid, reg_con) = observing[&(c, resource)];
                    let expect_type = if first_pending.remove(&(c, resource)) && reg_con {
                        if copy.message.message_id != reg_mid {
                            return Err(at("piggybacked response lost the registration MID".into()));
                        }
                        MessageType::Acknowledgement
                    } else {
                        t
                    };
                    if copy.message.msg_type != expect_type {
                        return Err(at(format!("client {c} got {:?}, expected {expect_type:?}", copy.message.msg_type)));
                    }
                    if expect_type == MessageType::Confirmable {
                        unacked[c].push((copy.message.message_id, resource));
                        if fan.carrier == Some(i) {
                            carriers += 1;
                        } else {
                            records.insert((c, copy.message.message_id, resource));
                            records_made += 1;
                        }
                    }
                }
                got_clients.sort_unstable();
                if got_clients != expected {
                    return Err(at(format!("fan-out to {got_clients:?}, expected {expected:?}")));
                }
                let any_con = fan.copies.iter().any(|c| c.message.msg_type == MessageType::Confirmable);
                if carriers != usize::from(any_con) {
                    return Err(at(format!("{carriers} ACK carriers")));
                }
            }
            Event::Ack { client } => {
                if unacked[client].is_empty() {
                    continue;
                }
                let (mid, resource) = unacked[client].remove(0);
                let d = h.handle_client_ack(&CoapMessage::empty_ack(mid), &addr(client));
                decisions.push(format!("{d:?}"));
                let expected = if records.remove(&(client, mid, resource)) {
                    AckDecision::Suppress
                } else {
                    AckDecision::Forward
                };
                if d != expected {
                    return Err(at(format!("ack decision {d:?}, expected {expected:?}")));
                }
                if d == AckDecision::Suppress {
                    suppressed += 1;
                }
                last_ack[client] = Some(mid);
            }
            Event::AckAgain { client } => {
                let Some(mid) = last_ack[client] else { continue };
                let d = h.handle_client_ack(&CoapMessage::empty_ack(mid), &addr(client));
                decisions.push(format!("{d:?}"));
                if d != AckDecision::Forward {
                    return Err(at("repeated ACK suppressed twice".into()));
                }
            }
            Event::Deregister { client, resource } => {
                let token = &p.tokens[client][resource];
                let r = h.deregister(token, &addr(client));
                decisions.push(format!("{r:?}"));
                match (observing.remove(&(client, resource)), r) {
                    (None, Err(_)) => {}
                    (None, Ok(_)) => return Err(at("removed an unknown subscription".into())),
                    (Some(_), Err(x)) => return Err(at(x.to_string())),
                    (Some(_), Ok(removal)) => {
                        let last = count_observers(&observing, resource) == 0;
                        let expected = if last {
                            DeregisterOutcome::RemovedAndForward
                        } else {
                            DeregisterOutcome::RemovedLocal
                        };
                        if removal.outcome != expected || removal.resource_uri != uri(resource) {
                            return Err(at(format!("{removal:?}")));
                        }
                        first_pending.remove(&(client, resource));
                        records_dropped += drop_records(&mut records, &mut unacked, client, Some(resource));
                    }
                }
            }
            Event::Reset { client } => {
                let removals = h.reset_client(&addr(client));
                decisions.push(format!("{removals:?}"));
                let held: Vec<usize> = observing
                    .keys()
                    .filter(|(c, _)| *c == client)
                    .map(|(_, r)| *r)
                    .collect();
                if removals.len() != held.len() {
                    return Err(at(format!("reset removed {} of {}", removals.len(), held.len())));
                }
                for r in held {
                    observing.remove(&(client, r));
                    first_pending.remove(&(client, r));
                }
                records_dropped += drop_records(&mut records, &mut unacked, client, None);
            }
        }

        // state-level invariants after every step
        if h.subscriptions().len() != observing.len() {
            return Err(at(format!("{} subscriptions, model has {}", h.subscriptions().len(), observing.len())));
        }
        for s in h.subscriptions() {
            let c = (0..p.clients).find(|c| addr(*c) == s.client.return_address);
            let r = (0..p.resources).find(|r| uri(*r) == s.resource_uri);
            match (c, r) {
                (Some(c), Some(r)) if observing.contains_key(&(c, r)) && p.tokens[c][r] == s.client.token => {}
                _ => return Err(at(format!("stray subscription {s:?}"))),
            }
        }
        for r in 0..p.resources {
            if h.is_live(&uri(r)) != (count_observers(&observing, r) > 0) {
                return Err(at(format!("liveness of R{r} diverges")));
            }
        }
        if h.suppressed_acks().len() != records.len() {
            return Err(at(format!("{} suppressed records, model has {}", h.suppressed_acks().len(), records.len())));
        }
    }

    // suppression accounting: every suppression consumed exactly one record
    if suppressed != records_made - records_dropped - records.len() as u64 {
        return Err(format!(
            "suppressed {suppressed}, records made {records_made} dropped {records_dropped} open {}",
            records.len()
        ));
    }
    if h.stats().acks_suppressed != suppressed {
        return Err("handler suppression counter diverges".into());
    }
    Ok(Replay { visible, decisions, suppressed })
}

fn drop_records(
    records: &mut BTreeSet<(usize, u16, usize)>,
    unacked: &mut [Vec<(u16, usize)>],
    client: usize,
    resource: Option<usize>,
) -> u64 {
    let before = records.len();
    records.retain(|(c, _, r)| !(*c == client && resource.is_none_or(|x| x == *r)));
    unacked[client].retain(|(_, r)| resource.is_some_and(|x| x != *r));
    (before - records.len()) as u64
}

fn registration(p: &Plan, client: usize, resource: usize, con: bool, mid: u16) -> CoapMessage {
    let t = if con { MessageType::Confirmable } else { MessageType::NonConfirmable };
    CoapMessage::new(t, Code::GET, mid)
        .with_token(p.tokens[client][resource].clone())
        .with_observe(codec::OBSERVE_REGISTER)
        .with_option(option::PROXY_URI, uri(resource).into_bytes())
}

/// Runs seeds `0..seeds`; each replay must match the unicast oracle and be
/// reproducible. Returns the total number of events replayed.
pub fn state_machine_suite(seeds: u64) -> Result<usize, String> {
    let mut events = 0;
    for seed in 0..seeds {
        let p = plan(seed);
        let first = replay(&p).map_err(|e| format!("seed {seed}: {e}"))?;
        let oracle = unicast_oracle(&p);
        if first.visible != oracle {
            return Err(format!(
                "seed {seed}: client-visible sequences diverge\n proxy  {:?}\n oracle {:?}",
                first.visible, oracle
            ));
        }
        let second = replay(&p).map_err(|e| format!("seed {seed} (rerun): {e}"))?;
        if second != first {
            return Err(format!("seed {seed}: replay is not deterministic"));
        }
        events += p.events.len();
    }
    Ok(events)
}

// ---------------------------------------------------------------------------
// Scenario oracles

/// Periodic emissions each client should have seen: every emission of its
/// resource that happened at least `settle_ms` after the client started and
/// at least `settle_ms` before it stopped or the run ended.
pub fn expected_notifications(
    m: &coap_icn::harness::RunMetrics,
    settle_ms: u64,
) -> BTreeMap<String, Vec<String>> {
    let settle = std::time::Duration::from_millis(settle_ms);
    m.clients
        .iter()
        .map(|c| {
            let until = c.stop.min(m.end);
            let want = m
                .emissions
                .iter()
                .filter(|(fqdn, e)| *fqdn == c.resource.0 && e.resource == c.resource.1)
                .filter(|(_, e)| e.at >= c.start + settle && e.at + settle <= until)
                .map(|(_, e)| e.digest.clone())
                .collect();
            (c.label.clone(), want)
        })
        .collect()
}

/// (client, digest) pairs the client should have received but did not.
pub fn missing_notifications(m: &coap_icn::harness::RunMetrics, settle_ms: u64) -> Vec<(String, String)> {
    let expected = expected_notifications(m, settle_ms);
    let mut missing = Vec::new();
    for c in &m.clients {
        let got: BTreeSet<&str> = c.received.iter().map(|r| r.digest.as_str()).collect();
        for d in &expected[&c.label] {
            if !got.contains(d.as_str()) {
                missing.push((c.label.clone(), d.clone()));
            }
        }
    }
    missing
}

/// Transmissions of each periodic notification on `link`, in emission
/// order. Emissions that never crossed the link count as zero.
pub fn periodic_link_tx(m: &coap_icn::harness::RunMetrics, link: &str) -> Vec<u64> {
    let per = m.notification_link_tx.get(link);
    m.emissions
        .iter()
        .filter(|(_, e)| e.at < m.end)
        .map(|(_, e)| per.and_then(|p| p.get(&e.seq)).copied().unwrap_or(0))
        .collect()
}
