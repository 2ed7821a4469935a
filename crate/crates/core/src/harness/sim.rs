use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::SocketAddr;
use std::path::Path;
use std::time::Duration;

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clock::SimTime;
use crate::codec::Summary;
use crate::fabric::{
    summary_field, Delivery, Fabric, FabricConfig, FabricEventKind, LinkStats, NodeId, Scheduler,
    Topology,
};
use crate::nap::{AttachedServer, Datagram, Nap, NapConfig, NapIo};

use super::endpoints::{Addressing, Client, Effects, Server};
use super::metrics::{ClientReport, RunMetrics};
use super::scenario::{resource_path, Fanout, NapRole, Scenario};
use super::HarnessError;

/// Which deployment a run simulates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    /// Clients talk through cNAPs, the fabric and sNAPs.
    Gateway,
    /// Clients talk to servers directly over IP unicast.
    Baseline,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Gateway => "gateway",
            Mode::Baseline => "baseline",
        })
    }
}

/// Event trace of a run, one record per line.
///
/// Every line starts with the virtual time (`seconds.micros`) and a record
/// kind; the remaining fields are `key=value` pairs in a fixed order:
///
/// ```text
/// <t> udp_tx src=<addr> dst=<addr> bytes=<n> coap=<type>,<code>,<mid>,<token>,<observe>
/// <t> ip_link_tx link=<a>><b> bytes=<n> coap=...                (baseline only)
/// <t> fabric <kind> node=<id>|link=<a>><b> name=<sid>/<rid> fid=<routes> bytes=<n> [coap=...]
/// <t> client_start client=<label>
/// <t> client_stop client=<label>
/// <t> client_rx client=<label> observe=<n> digest=<hex> type=<CON|NON|ACK|RST>
/// <t> server_tick server=<fqdn> resource=<path> seq=<n> digest=<hex> observers=<n>
/// <t> nap_drop node=<id> error=<text>
/// ```
///
/// Node ids in fabric records are indices into the scenario's `nodes` list.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    pub lines: Vec<String>,
}

impl Trace {
    pub fn write_to(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_string())
    }
}

impl fmt::Display for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for line in &self.lines {
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

/// A finished run.
#[derive(Clone, Debug)]
pub struct Run {
    pub metrics: RunMetrics,
    pub trace: Trace,
}

pub fn run_scenario(s: &Scenario) -> Result<Run, HarnessError> {
    run(s, Mode::Gateway)
}

pub fn run_baseline(s: &Scenario) -> Result<Run, HarnessError> {
    run(s, Mode::Baseline)
}

pub fn run(s: &Scenario, mode: Mode) -> Result<Run, HarnessError> {
    s.validate()?;
    let mut sim = Sim::build(s, mode)?;
    sim.run();
    Ok(sim.finish())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Actor {
    Client(usize),
    Server(usize),
    Nap(usize),
}

enum Event {
    Udp(Datagram),
    Icn(Delivery),
    ClientStart(usize),
    ClientStop(usize),
    ClientTimer(usize, u16),
    ServerTick(usize, usize),
}

fn millis(ms: f64) -> Duration {
    Duration::from_micros((ms * 1000.0).round() as u64)
}

struct Sim<'s> {
    scenario: &'s Scenario,
    mode: Mode,
    end: SimTime,
    rng: ChaCha8Rng,
    sched: Scheduler<Event>,
    fabric: Fabric,
    naps: Vec<Nap>,
    clients: Vec<Client>,
    servers: Vec<Server>,
    actors: BTreeMap<SocketAddr, Actor>,
    /// Topology node each endpoint hangs off.
    attachment: BTreeMap<SocketAddr, NodeId>,
    access: Duration,
    trace: Vec<String>,
    ip_links: BTreeMap<(NodeId, NodeId), LinkStats>,
    notification_link_tx: BTreeMap<(NodeId, NodeId), BTreeMap<u32, u64>>,
    observe_request_publications: u64,
    nap_drops: u64,
}

impl<'s> Sim<'s> {
    fn build(s: &'s Scenario, mode: Mode) -> Result<Self, HarnessError> {
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        let mut topology = Topology::new();
        for n in &s.nodes {
            topology.add_node(n.clone());
        }
        let node = |name: &str| topology.lookup(name).expect("validated node name");
        let mut links = Vec::new();
        for l in &s.links {
            links.push((node(&l.a), node(&l.b), millis(l.latency_ms)));
        }
        for (a, b, lat) in links {
            topology.add_link(a, b, lat)?;
        }

        let mut actors = BTreeMap::new();
        let mut attachment = BTreeMap::new();
        let mut naps = Vec::new();
        let mut nap_addr = BTreeMap::new();
        let mut server_nap = BTreeMap::new();
        let endpoints: BTreeMap<String, SocketAddr> = s
            .servers
            .iter()
            .map(|sv| (crate::nap::normalize_fqdn(&sv.fqdn), sv.endpoint.parse().expect("validated")))
            .collect();
        for spec in &s.naps {
            let id = topology.lookup(&spec.node).expect("validated node name");
            let listen: SocketAddr = spec.listen.parse().expect("validated address");
            let mut config = match spec.role {
                NapRole::Client => NapConfig::client(id, listen),
                NapRole::Server => {
                    let attached = spec
                        .servers
                        .iter()
                        .map(|f| {
                            let fqdn = crate::nap::normalize_fqdn(f);
                            server_nap.insert(fqdn.clone(), id);
                            AttachedServer {
                                endpoint: endpoints[&fqdn],
                                fqdn,
                            }
                        })
                        .collect();
                    NapConfig::server(id, listen, attached)
                }
            };
            config.multicast = s.fanout == Fanout::Multicast;
            nap_addr.insert(spec.node.clone(), listen);
            attachment.insert(listen, id);
            if mode == Mode::Gateway {
                actors.insert(listen, Actor::Nap(naps.len()));
            }
            naps.push(Nap::new(config)?);
        }

        let mut fabric = Fabric::new(
            topology,
            FabricConfig {
                seed: s.seed,
                ..FabricConfig::default()
            },
        );
        if mode == Mode::Gateway {
            for nap in &mut naps {
                nap.attach(&mut fabric)?;
            }
        }

        let mut servers: Vec<Server> = Vec::new();
        let mut sched = Scheduler::new();
        for spec in &s.servers {
            let fqdn = crate::nap::normalize_fqdn(&spec.fqdn);
            let addr: SocketAddr = spec.endpoint.parse().expect("validated address");
            let si = match servers.iter().position(|sv| sv.fqdn == fqdn) {
                Some(i) => i,
                None => {
                    let first_mid = rng.gen();
                    servers.push(Server::new(fqdn.clone(), addr, first_mid));
                    actors.insert(addr, Actor::Server(servers.len() - 1));
                    attachment.insert(addr, server_nap[&fqdn]);
                    servers.len() - 1
                }
            };
            let period = Duration::from_millis(spec.period_ms);
            servers[si].add_resource(&spec.resource, period, spec.payload_size, spec.notification, &mut rng);
            let ri = servers[si].resources.len() - 1;
            sched.schedule(SimTime::ZERO + period, Event::ServerTick(si, ri));
        }

        let mut clients = Vec::new();
        for (i, spec) in s.clients.iter().enumerate() {
            let addr: SocketAddr = spec.endpoint.parse().expect("validated address");
            let (peer, addressing) = match mode {
                Mode::Gateway => (nap_addr[&spec.nap], Addressing::Proxy),
                Mode::Baseline => {
                    let host = crate::codec::split_proxy_uri(&spec.target)
                        .map(|p| crate::nap::normalize_fqdn(&p.uri_host))
                        .unwrap_or_default();
                    match endpoints.get(&host) {
                        Some(a) => (*a, Addressing::Direct),
                        // Nothing to reach; the datagrams go nowhere.
                        None => (nap_addr[&spec.nap], Addressing::Direct),
                    }
                }
            };
            let start = SimTime::from_millis(spec.start_ms);
            let stop = SimTime::from_millis(spec.start_ms + spec.observe_ms);
            let label = format!("{}@{}", spec.token, addr);
            let first_mid = rng.gen();
            clients.push(Client::new(
                label,
                addr,
                spec.token.as_bytes().to_vec(),
                spec.target.clone(),
                peer,
                addressing,
                start,
                stop,
                first_mid,
            ));
            actors.insert(addr, Actor::Client(i));
            attachment.insert(addr, topology_node(&fabric, &spec.nap));
            sched.schedule(start, Event::ClientStart(i));
            sched.schedule(stop, Event::ClientStop(i));
        }

        Ok(Self {
            scenario: s,
            mode,
            end: SimTime::from_millis(s.duration_ms),
            rng,
            sched,
            fabric,
            naps,
            clients,
            servers,
            actors,
            attachment,
            access: millis(s.timing.access_latency_ms),
            trace: Vec::new(),
            ip_links: BTreeMap::new(),
            notification_link_tx: BTreeMap::new(),
            observe_request_publications: 0,
            nap_drops: 0,
        })
    }

    fn run(&mut self) {
        self.collect_fabric(SimTime::ZERO);
        while let Some((now, event)) = self.sched.pop() {
            if now > self.end {
                break;
            }
            self.fabric.set_now(now);
            self.handle(now, event);
            self.collect_fabric(now);
        }
    }

    fn handle(&mut self, now: SimTime, event: Event) {
        let timing = &self.scenario.timing;
        match event {
            Event::ClientStart(i) => {
                self.trace.push(format!("{now} client_start client={}", self.clients[i].label));
                let fx = self.clients[i].start(timing, &mut self.rng);
                self.apply_client(i, now, fx);
            }
            Event::ClientStop(i) => {
                self.trace.push(format!("{now} client_stop client={}", self.clients[i].label));
                let fx = self.clients[i].stop(timing, &mut self.rng);
                self.apply_client(i, now, fx);
            }
            Event::ClientTimer(i, mid) => {
                let fx = self.clients[i].retransmit(mid, timing);
                self.apply_client(i, now, fx);
            }
            Event::ServerTick(si, ri) => {
                let fx = self.servers[si].tick(ri, now, &mut self.rng);
                let e = self.servers[si].emissions.last().expect("tick records an emission").clone();
                self.trace.push(format!(
                    "{now} server_tick server={} resource={} seq={} digest={} observers={}",
                    self.servers[si].fqdn, e.resource, e.seq, e.digest, e.observers
                ));
                let from = self.servers[si].addr;
                self.send_all(from, now, fx);
                let period = self.servers[si].resources[ri].period;
                self.sched.schedule(now + period, Event::ServerTick(si, ri));
            }
            Event::Udp(d) => self.deliver_udp(now, d),
            Event::Icn(delivery) => {
                let Some(ni) = self.naps.iter().position(|n| n.node_id() == delivery.node) else {
                    return;
                };
                let mut udp = Vec::new();
                let mut io = NapIo {
                    fabric: &mut self.fabric,
                    udp: &mut udp,
                    now,
                };
                if let Err(e) = self.naps[ni].on_icn_packet(&delivery.packet, &mut io) {
                    self.nap_drop(now, ni, &e.to_string());
                }
                self.send_datagrams(now, udp);
            }
        }
    }

    fn deliver_udp(&mut self, now: SimTime, d: Datagram) {
        match self.actors.get(&d.to).copied() {
            Some(Actor::Client(i)) => {
                let before = self.clients[i].received.len();
                let fx = self.clients[i].on_datagram(&d.bytes, now);
                for r in &self.clients[i].received[before..] {
                    self.trace.push(format!(
                        "{now} client_rx client={} observe={} digest={} type={}",
                        self.clients[i].label,
                        r.observe.map_or("-".into(), |o| o.to_string()),
                        r.digest,
                        r.msg_type.short_name()
                    ));
                }
                self.apply_client(i, now, fx);
            }
            Some(Actor::Server(si)) => {
                let fx = self.servers[si].on_datagram(&d.bytes, d.from);
                let from = self.servers[si].addr;
                self.send_all(from, now, fx);
            }
            Some(Actor::Nap(ni)) => {
                let mut udp = Vec::new();
                let mut io = NapIo {
                    fabric: &mut self.fabric,
                    udp: &mut udp,
                    now,
                };
                if let Err(e) = self.naps[ni].on_datagram(&d.bytes, d.from, &mut io) {
                    self.nap_drop(now, ni, &e.to_string());
                }
                self.send_datagrams(now, udp);
            }
            None => debug!("datagram to unknown address {}", d.to),
        }
    }

    fn nap_drop(&mut self, now: SimTime, ni: usize, error: &str) {
        self.nap_drops += 1;
        self.trace
            .push(format!("{now} nap_drop node={} error={error}", self.naps[ni].node_id()));
    }

    fn apply_client(&mut self, i: usize, now: SimTime, fx: Effects) {
        for t in &fx.timers {
            self.sched.schedule(now + t.after, Event::ClientTimer(i, t.message_id));
        }
        let from = self.clients[i].addr;
        self.send_all(from, now, fx);
    }

    fn send_all(&mut self, from: SocketAddr, now: SimTime, fx: Effects) {
        let datagrams = fx
            .emits
            .into_iter()
            .map(|e| Datagram {
                from,
                to: e.to,
                bytes: e.bytes,
            })
            .collect();
        self.send_datagrams(now, datagrams);
    }

    fn send_datagrams(&mut self, now: SimTime, datagrams: Vec<Datagram>) {
        for d in datagrams {
            let summary = Summary::of(&d.bytes);
            self.trace.push(format!(
                "{now} udp_tx src={} dst={} bytes={}{}",
                d.from,
                d.to,
                d.bytes.len(),
                summary.as_ref().map_or(String::new(), |s| format!(" coap={}", summary_field(s)))
            ));
            let latency = match self.mode {
                Mode::Gateway => self.access,
                Mode::Baseline => self.ip_latency(now, &d, summary.as_ref()),
            };
            self.sched.schedule(now + latency, Event::Udp(d));
        }
    }

    /// Routes a baseline datagram hop by hop over the topology, recording
    /// each link transmission.
    fn ip_latency(&mut self, now: SimTime, d: &Datagram, summary: Option<&Summary>) -> Duration {
        let mut latency = self.access * 2;
        let (Some(&a), Some(&b)) = (self.attachment.get(&d.from), self.attachment.get(&d.to)) else {
            return latency;
        };
        if a == b {
            return latency;
        }
        let Ok((path, _)) = self.fabric.compute_paths(a, &BTreeSet::from([b])) else {
            return latency;
        };
        for (x, y) in path.edges() {
            latency += self.fabric.topology().latency(x, y).unwrap_or_default();
            let stats = self.ip_links.entry((x, y)).or_default();
            stats.packets += 1;
            stats.bytes += d.bytes.len() as u64;
            if let Some(seq) = summary.filter(|s| s.is_notification()).and_then(|s| s.observe) {
                *self
                    .notification_link_tx
                    .entry((x, y))
                    .or_default()
                    .entry(seq)
                    .or_default() += 1;
            }
            self.trace.push(format!(
                "{now} ip_link_tx link={x}>{y} bytes={}{}",
                d.bytes.len(),
                summary.map_or(String::new(), |s| format!(" coap={}", summary_field(s)))
            ));
        }
        latency
    }

    fn collect_fabric(&mut self, now: SimTime) {
        for delivery in self.fabric.drain_deliveries() {
            let at = delivery.at.max(now);
            self.sched.schedule(at, Event::Icn(delivery));
        }
        for ev in self.fabric.drain_trace() {
            match (&ev.kind, &ev.coap) {
                (FabricEventKind::PubIsub { .. }, Some(c)) if c.is_request() && c.observe == Some(0) => {
                    self.observe_request_publications += 1;
                }
                (FabricEventKind::LinkTx { from, to }, Some(c)) if c.is_notification() => {
                    if let Some(seq) = c.observe {
                        *self
                            .notification_link_tx
                            .entry((*from, *to))
                            .or_default()
                            .entry(seq)
                            .or_default() += 1;
                    }
                }
                _ => {}
            }
            self.trace.push(format!("{} fabric {ev}", ev.at));
        }
    }

    fn link_name(&self, (a, b): (NodeId, NodeId)) -> String {
        let t = self.fabric.topology();
        format!("{}>{}", t.name(a).unwrap_or("?"), t.name(b).unwrap_or("?"))
    }

    fn finish(self) -> Run {
        let links = match self.mode {
            Mode::Gateway => self.fabric.link_stats().clone(),
            Mode::Baseline => self.ip_links.clone(),
        };
        let mut metrics = RunMetrics {
            scenario: self.scenario.name.clone(),
            seed: self.scenario.seed,
            mode: self.mode,
            fanout: self.scenario.fanout,
            end: self.end,
            naps: BTreeMap::new(),
            servers: BTreeMap::new(),
            clients: Vec::new(),
            emissions: Vec::new(),
            links: links
                .iter()
                .map(|(k, v)| (self.link_name(*k), *v))
                .collect(),
            notification_link_tx: self
                .notification_link_tx
                .iter()
                .map(|(k, v)| (self.link_name(*k), v.clone()))
                .collect(),
            observe_request_publications: self.observe_request_publications,
            nap_drops: self.nap_drops,
        };
        if self.mode == Mode::Gateway {
            for nap in &self.naps {
                let name = self.fabric.topology().name(nap.node_id()).unwrap_or("?").to_string();
                metrics.naps.insert(name, nap.counters());
            }
        }
        for s in &self.servers {
            metrics.servers.insert(s.fqdn.clone(), s.counters);
            for e in &s.emissions {
                metrics.emissions.push((s.fqdn.clone(), e.clone()));
            }
        }
        for (c, spec) in self.clients.iter().zip(&self.scenario.clients) {
            metrics.clients.push(ClientReport {
                label: c.label.clone(),
                token: c.token.clone(),
                target: c.target.clone(),
                resource: crate::codec::split_proxy_uri(&spec.target)
                    .map(|p| (crate::nap::normalize_fqdn(&p.uri_host), resource_path(&p.uri_path.join("/"))))
                    .unwrap_or_default(),
                start: c.start,
                stop: c.stop,
                received: c.received.clone(),
                counters: c.counters,
            });
        }
        Run {
            metrics,
            trace: Trace { lines: self.trace },
        }
    }
}

fn topology_node(fabric: &Fabric, name: &str) -> NodeId {
    fabric.topology().lookup(name).expect("validated node name")
}
