//! Simulated publish/subscribe ICN core.
//!
//! A single logical rendezvous table matches publishers and subscribers by
//! [`IcnName`]; a topology manager ([`Topology::compute_paths`]) turns a
//! match into explicit source-routed delivery trees ([`ForwardingPath`]);
//! and the forwarding plane moves packets along those trees, transmitting
//! each tree edge once no matter how many leaves sit behind it.
//!
//! The fabric does not own time. The caller sets [`Fabric::set_now`] before
//! each operation and collects the resulting deliveries with
//! [`Fabric::drain_deliveries`], scheduling them on its own event queue.

mod names;
mod sched;
mod topology;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::clock::SimTime;
use crate::codec::Summary;

pub use names::{IcnName, Identifier, ID_LEN};
pub use sched::Scheduler;
pub use topology::{ForwardingPath, NodeId, Topology, DEFAULT_LINK_LATENCY};

/// Default simulation-level payload limit.
pub const DEFAULT_MTU: usize = 64 * 1024;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum FabricError {
    #[error("node {0} is not attached to the fabric")]
    UnknownNode(NodeId),
    #[error("no subscriber for {0}")]
    NoSubscriber(IcnName),
    #[error("payload of {len} bytes exceeds mtu {mtu}")]
    MtuExceeded { len: usize, mtu: usize },
    #[error("forwarding path broken at node {0}")]
    BrokenPath(NodeId),
    #[error("no path from {from} to {to}")]
    DisconnectedTopology { from: NodeId, to: NodeId },
    #[error("invalid forwarding path: {0}")]
    InvalidPath(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PacketKind {
    Publish,
    PubIsub,
    Subscribe,
    Notify,
}

impl PacketKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PacketKind::Publish => "publish",
            PacketKind::PubIsub => "pub_isub",
            PacketKind::Subscribe => "subscribe",
            PacketKind::Notify => "notify",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IcnPacket {
    pub name: IcnName,
    pub fid: ForwardingPath,
    /// Reverse path handed to the receiver of a `pub_isub`.
    pub reverse: Option<ForwardingPath>,
    pub payload: Vec<u8>,
    pub kind: PacketKind,
}

impl IcnPacket {
    /// The node that sent the packet (the root of its forwarding path).
    pub fn origin(&self) -> Option<NodeId> {
        self.fid.root()
    }
}

/// A packet arriving at a node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Delivery {
    pub at: SimTime,
    pub node: NodeId,
    pub packet: IcnPacket,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DeliveryReport {
    pub leaves: Vec<NodeId>,
    pub dropped: Vec<NodeId>,
    /// One per tree edge.
    pub link_transmissions: usize,
    pub bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PubIsubReport {
    pub subscriber: NodeId,
    pub fid_req: ForwardingPath,
    pub fid_res: ForwardingPath,
    pub delivery: DeliveryReport,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LinkStats {
    pub packets: u64,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FabricConfig {
    pub mtu: usize,
    /// Per-leaf loss probability; 0 keeps the fabric lossless.
    pub drop_probability: f64,
    pub seed: u64,
}

impl Default for FabricConfig {
    fn default() -> Self {
        Self {
            mtu: DEFAULT_MTU,
            drop_probability: 0.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FabricEventKind {
    Advertise { node: NodeId },
    Subscribe { node: NodeId },
    Unsubscribe { node: NodeId },
    PubIsub { node: NodeId },
    Publish { kind: PacketKind },
    LinkTx { from: NodeId, to: NodeId },
    Deliver { node: NodeId },
    Drop { node: NodeId },
}

/// One fabric trace record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FabricEvent {
    pub at: SimTime,
    pub kind: FabricEventKind,
    pub name: Option<IcnName>,
    pub fid: Option<String>,
    pub bytes: usize,
    pub coap: Option<Summary>,
}

impl fmt::Display for FabricEvent {
    /// `<kind> node=<id>|link=<a>><b> name=<sid>/<rid> fid=<routes> bytes=<n> [coap=<type>,<code>,<mid>,<token>,<observe>]`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            FabricEventKind::Advertise { node } => write!(f, "advertise node={node}")?,
            FabricEventKind::Subscribe { node } => write!(f, "subscribe node={node}")?,
            FabricEventKind::Unsubscribe { node } => write!(f, "unsubscribe node={node}")?,
            FabricEventKind::PubIsub { node } => write!(f, "pub_isub node={node}")?,
            FabricEventKind::Publish { kind } => write!(f, "publish kind={}", kind.as_str())?,
            FabricEventKind::LinkTx { from, to } => write!(f, "link_tx link={from}>{to}")?,
            FabricEventKind::Deliver { node } => write!(f, "deliver node={node}")?,
            FabricEventKind::Drop { node } => write!(f, "drop node={node}")?,
        }
        match &self.name {
            Some(n) => write!(f, " name={n}")?,
            None => f.write_str(" name=-")?,
        }
        match &self.fid {
            Some(p) => write!(f, " fid={p}")?,
            None => f.write_str(" fid=-")?,
        }
        write!(f, " bytes={}", self.bytes)?;
        if let Some(s) = &self.coap {
            write!(f, " coap={}", summary_field(s))?;
        }
        Ok(())
    }
}

pub(crate) fn summary_field(s: &Summary) -> String {
    format!(
        "{},{},{:#06x},{},{}",
        s.msg_type,
        s.code,
        s.message_id,
        if s.token.is_empty() {
            "-".to_string()
        } else {
            hex::encode(&s.token)
        },
        s.observe.map_or("-".to_string(), |o| o.to_string())
    )
}

#[derive(Clone, Debug, Default)]
struct RendezvousEntry {
    publishers: BTreeSet<NodeId>,
    subscribers: BTreeSet<NodeId>,
}

pub struct Fabric {
    topology: Topology,
    rendezvous: BTreeMap<IcnName, RendezvousEntry>,
    config: FabricConfig,
    rng: ChaCha8Rng,
    now: SimTime,
    outbox: Vec<Delivery>,
    trace: Vec<FabricEvent>,
    links: BTreeMap<(NodeId, NodeId), LinkStats>,
}

impl Fabric {
    pub fn new(topology: Topology, config: FabricConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self {
            topology,
            rendezvous: BTreeMap::new(),
            config,
            rng,
            now: SimTime::ZERO,
            outbox: Vec::new(),
            trace: Vec::new(),
            links: BTreeMap::new(),
        }
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn topology_mut(&mut self) -> &mut Topology {
        &mut self.topology
    }

    pub fn config(&self) -> &FabricConfig {
        &self.config
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn set_now(&mut self, now: SimTime) {
        self.now = now;
    }

    fn ensure_attached(&self, node: NodeId) -> Result<(), FabricError> {
        if self.topology.is_attached(node) {
            Ok(())
        } else {
            Err(FabricError::UnknownNode(node))
        }
    }

    fn log(&mut self, kind: FabricEventKind, name: Option<IcnName>, fid: Option<&ForwardingPath>, payload: &[u8]) {
        self.trace.push(FabricEvent {
            at: self.now,
            kind,
            name,
            fid: fid.map(ToString::to_string),
            bytes: payload.len(),
            coap: Summary::of(payload),
        });
    }

    /// Registers `publisher` as able to serve `name`.
    pub fn advertise(&mut self, name: IcnName, publisher: NodeId) -> Result<(), FabricError> {
        self.ensure_attached(publisher)?;
        self.rendezvous
            .entry(name)
            .or_default()
            .publishers
            .insert(publisher);
        self.log(FabricEventKind::Advertise { node: publisher }, Some(name), None, &[]);
        Ok(())
    }

    /// Registers interest in `name`. Known publishers receive a NOTIFY
    /// carrying the path to the new subscriber.
    pub fn subscribe(&mut self, name: IcnName, subscriber: NodeId) -> Result<(), FabricError> {
        self.ensure_attached(subscriber)?;
        let entry = self.rendezvous.entry(name).or_default();
        if !entry.subscribers.insert(subscriber) {
            return Ok(());
        }
        let publishers: Vec<NodeId> = entry.publishers.iter().copied().collect();
        self.log(FabricEventKind::Subscribe { node: subscriber }, Some(name), None, &[]);
        for publisher in publishers {
            if !self.topology.is_attached(publisher) {
                continue;
            }
            let (fid, _) = self
                .topology
                .compute_paths(publisher, &BTreeSet::from([subscriber]))?;
            self.log(FabricEventKind::Publish { kind: PacketKind::Notify }, Some(name), Some(&fid), &[]);
            self.outbox.push(Delivery {
                at: self.now,
                node: publisher,
                packet: IcnPacket {
                    name,
                    fid,
                    reverse: None,
                    payload: Vec::new(),
                    kind: PacketKind::Notify,
                },
            });
        }
        Ok(())
    }

    pub fn unsubscribe(&mut self, name: IcnName, subscriber: NodeId) -> Result<(), FabricError> {
        self.ensure_attached(subscriber)?;
        if let Some(entry) = self.rendezvous.get_mut(&name) {
            if entry.subscribers.remove(&subscriber) {
                self.log(FabricEventKind::Unsubscribe { node: subscriber }, Some(name), None, &[]);
            }
        }
        Ok(())
    }

    pub fn publishers(&self, name: &IcnName) -> BTreeSet<NodeId> {
        self.rendezvous
            .get(name)
            .map(|e| e.publishers.clone())
            .unwrap_or_default()
    }

    pub fn subscribers(&self, name: &IcnName) -> BTreeSet<NodeId> {
        self.rendezvous
            .get(name)
            .map(|e| e.subscribers.clone())
            .unwrap_or_default()
    }

    pub fn compute_paths(
        &self,
        publisher: NodeId,
        subscribers: &BTreeSet<NodeId>,
    ) -> Result<(ForwardingPath, ForwardingPath), FabricError> {
        self.topology.compute_paths(publisher, subscribers)
    }

    /// Publishes with implicit subscription.
    ///
    /// The payload goes to the nearest subscriber of `request` (ties: lowest
    /// id) along FID_req; `publisher` is subscribed to `response` so replies
    /// can come back along FID_res. Both paths are returned.
    pub fn pub_isub(
        &mut self,
        request: IcnName,
        response: IcnName,
        payload: Vec<u8>,
        publisher: NodeId,
    ) -> Result<PubIsubReport, FabricError> {
        self.ensure_attached(publisher)?;
        self.check_mtu(&payload)?;
        let distances = self.topology.hop_distances(publisher);
        let subscriber = self
            .subscribers(&request)
            .into_iter()
            .filter_map(|s| distances.get(&s).map(|d| (*d, s)))
            .min()
            .map(|(_, s)| s)
            .ok_or(FabricError::NoSubscriber(request))?;
        let (fid_req, fid_res) = self
            .topology
            .compute_paths(publisher, &BTreeSet::from([subscriber]))?;

        self.log(FabricEventKind::PubIsub { node: publisher }, Some(request), Some(&fid_req), &payload);
        let entry = self.rendezvous.entry(response).or_default();
        if entry.subscribers.insert(publisher) {
            self.log(FabricEventKind::Subscribe { node: publisher }, Some(response), None, &[]);
        }
        let packet = IcnPacket {
            name: request,
            fid: fid_req.clone(),
            reverse: Some(fid_res.clone()),
            payload,
            kind: PacketKind::PubIsub,
        };
        let delivery = self.forward(packet)?;
        Ok(PubIsubReport {
            subscriber,
            fid_req,
            fid_res,
            delivery,
        })
    }

    /// Sends `payload` to every leaf of `fid`, one transmission per tree edge.
    pub fn publish_to_path(
        &mut self,
        name: IcnName,
        payload: Vec<u8>,
        fid: &ForwardingPath,
    ) -> Result<DeliveryReport, FabricError> {
        self.check_mtu(&payload)?;
        if fid.root().is_none() {
            return Err(FabricError::InvalidPath("path has no single source".into()));
        }
        for route in fid.routes() {
            self.topology.route_latency(route)?;
        }
        self.log(FabricEventKind::Publish { kind: PacketKind::Publish }, Some(name), Some(fid), &payload);
        self.forward(IcnPacket {
            name,
            fid: fid.clone(),
            reverse: None,
            payload,
            kind: PacketKind::Publish,
        })
    }

    fn check_mtu(&self, payload: &[u8]) -> Result<(), FabricError> {
        if payload.len() > self.config.mtu {
            return Err(FabricError::MtuExceeded {
                len: payload.len(),
                mtu: self.config.mtu,
            });
        }
        Ok(())
    }

    fn forward(&mut self, packet: IcnPacket) -> Result<DeliveryReport, FabricError> {
        let fid = packet.fid.clone();
        let mut arrivals = Vec::new();
        for route in fid.routes() {
            let latency = self.topology.route_latency(route)?;
            arrivals.push((*route.last().unwrap(), latency));
        }
        let bytes = packet.payload.len();
        let edges = fid.edges();
        for &(from, to) in &edges {
            let stats = self.links.entry((from, to)).or_default();
            stats.packets += 1;
            stats.bytes += bytes as u64;
            self.log(
                FabricEventKind::LinkTx { from, to },
                Some(packet.name),
                None,
                &packet.payload,
            );
        }

        let mut report = DeliveryReport {
            link_transmissions: edges.len(),
            bytes,
            ..Default::default()
        };
        let mut delivered = BTreeSet::new();
        for (node, latency) in arrivals {
            if !delivered.insert(node) {
                continue;
            }
            let lost = self.config.drop_probability > 0.0
                && self.rng.gen_bool(self.config.drop_probability.min(1.0));
            if lost {
                self.log(FabricEventKind::Drop { node }, Some(packet.name), None, &packet.payload);
                report.dropped.push(node);
                continue;
            }
            self.log(FabricEventKind::Deliver { node }, Some(packet.name), None, &packet.payload);
            self.outbox.push(Delivery {
                at: self.now + latency,
                node,
                packet: packet.clone(),
            });
            report.leaves.push(node);
        }
        Ok(report)
    }

    pub fn drain_deliveries(&mut self) -> Vec<Delivery> {
        std::mem::take(&mut self.outbox)
    }

    pub fn drain_trace(&mut self) -> Vec<FabricEvent> {
        std::mem::take(&mut self.trace)
    }

    pub fn link_stats(&self) -> &BTreeMap<(NodeId, NodeId), LinkStats> {
        &self.links
    }
}
