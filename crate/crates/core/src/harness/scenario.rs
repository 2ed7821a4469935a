use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::SocketAddr;
use std::path::Path;

use serde::Deserialize;

use crate::codec::{split_proxy_uri, MAX_TOKEN_LEN};
use crate::nap::normalize_fqdn;

use super::HarnessError;

/// A declarative scenario, usually loaded from TOML.
///
/// ```toml
/// name = "shared_core"
/// seed = 7
/// duration_ms = 2000
/// fanout = "multicast"          # or "unicast"
/// nodes = ["cnap1", "cnap2", "core", "snap"]
///
/// [timing]
/// ack_timeout_ms = 200
///
/// [[links]]
/// a = "cnap1"
/// b = "core"
/// latency_ms = 1
///
/// [[naps]]
/// node = "snap"
/// role = "server"
/// listen = "10.0.9.1:5683"
/// servers = ["aueb.example.gr"]
///
/// [[servers]]
/// fqdn = "aueb.example.gr"
/// endpoint = "10.0.9.10:5683"
/// resource = "/R1"
/// period_ms = 200
/// payload_size = 8
/// notification = "con"
///
/// [[clients]]
/// nap = "cnap1"
/// endpoint = "10.0.1.10:40001"
/// target = "coap://aueb.example.gr/R1"
/// token = "t1"
/// start_ms = 0
/// observe_ms = 5000
/// ```
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub duration_ms: u64,
    #[serde(default)]
    pub fanout: Fanout,
    pub nodes: Vec<String>,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
    pub naps: Vec<NapSpec>,
    pub servers: Vec<ServerSpec>,
    pub clients: Vec<ClientSpec>,
    #[serde(default)]
    pub timing: Timing,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fanout {
    #[default]
    Multicast,
    Unicast,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub a: String,
    pub b: String,
    #[serde(default = "default_link_latency")]
    pub latency_ms: f64,
}

fn default_link_latency() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NapRole {
    Client,
    Server,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NapSpec {
    pub node: String,
    pub role: NapRole,
    pub listen: String,
    /// FQDNs of attached servers (server role only).
    #[serde(default)]
    pub servers: Vec<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NotificationType {
    Con,
    #[default]
    Non,
}

/// One observable resource on a server. Entries sharing an FQDN describe the
/// same server and must agree on its endpoint.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerSpec {
    pub fqdn: String,
    pub endpoint: String,
    pub resource: String,
    pub period_ms: u64,
    #[serde(default = "default_payload_size")]
    pub payload_size: usize,
    #[serde(default)]
    pub notification: NotificationType,
}

fn default_payload_size() -> usize {
    8
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientSpec {
    /// Client-side NAP the client sends through.
    pub nap: String,
    pub endpoint: String,
    pub target: String,
    pub token: String,
    #[serde(default)]
    pub start_ms: u64,
    pub observe_ms: u64,
}

/// Retransmission and access-network timing. Defaults are the RFC 7252
/// transmission parameters at 1/10 scale.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Timing {
    pub ack_timeout_ms: u64,
    pub ack_random_factor: f64,
    pub max_retransmit: u32,
    /// One-way latency between an endpoint and its NAP.
    pub access_latency_ms: f64,
}

impl Default for Timing {
    fn default() -> Self {
        Self {
            ack_timeout_ms: 200,
            ack_random_factor: 1.5,
            max_retransmit: 4,
            access_latency_ms: 1.0,
        }
    }
}

/// One problem found while validating a scenario.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let s: Scenario = toml::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Checks every cross-reference and range; all problems are reported at once.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let mut diags = Vec::new();
        let mut bad = |field: String, message: String| diags.push(Diagnostic { field, message });

        if self.name.trim().is_empty() {
            bad("name".into(), "must not be empty".into());
        }
        if self.duration_ms == 0 {
            bad("duration_ms".into(), "must be > 0".into());
        }
        let mut nodes = BTreeSet::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if !nodes.insert(n.as_str()) {
                bad(format!("nodes[{i}]"), format!("duplicate node {n:?}"));
            }
        }
        for (i, l) in self.links.iter().enumerate() {
            for (f, v) in [("a", &l.a), ("b", &l.b)] {
                if !nodes.contains(v.as_str()) {
                    bad(format!("links[{i}].{f}"), format!("unknown node {v:?}"));
                }
            }
            if l.a == l.b {
                bad(format!("links[{i}]"), "self loop".into());
            }
            if !(l.latency_ms.is_finite() && l.latency_ms >= 0.0) {
                bad(format!("links[{i}].latency_ms"), "must be a non-negative number".into());
            }
        }

        let mut addresses: BTreeMap<SocketAddr, String> = BTreeMap::new();
        let mut claim = |addr: SocketAddr, owner: String, field: String, bad: &mut dyn FnMut(String, String)| {
            if let Some(prev) = addresses.get(&addr) {
                if prev != &owner {
                    bad(field, format!("address {addr} already used by {prev}"));
                }
            } else {
                addresses.insert(addr, owner);
            }
        };

        let mut nap_roles = BTreeMap::new();
        let mut attached: BTreeMap<String, String> = BTreeMap::new();
        for (i, n) in self.naps.iter().enumerate() {
            if !nodes.contains(n.node.as_str()) {
                bad(format!("naps[{i}].node"), format!("unknown node {:?}", n.node));
            }
            if nap_roles.insert(n.node.clone(), n.role).is_some() {
                bad(format!("naps[{i}].node"), format!("node {:?} already hosts a nap", n.node));
            }
            match n.listen.parse::<SocketAddr>() {
                Ok(a) => claim(a, format!("nap {}", n.node), format!("naps[{i}].listen"), &mut bad),
                Err(e) => bad(format!("naps[{i}].listen"), e.to_string()),
            }
            match n.role {
                NapRole::Client if !n.servers.is_empty() => {
                    bad(format!("naps[{i}].servers"), "client-side naps have no servers".into())
                }
                NapRole::Server if n.servers.is_empty() => {
                    bad(format!("naps[{i}].servers"), "server-side nap needs at least one fqdn".into())
                }
                _ => {}
            }
            for (j, f) in n.servers.iter().enumerate() {
                let fqdn = normalize_fqdn(f);
                if let Some(prev) = attached.insert(fqdn.clone(), n.node.clone()) {
                    bad(format!("naps[{i}].servers[{j}]"), format!("{fqdn} already attached to {prev}"));
                }
            }
        }

        let mut endpoints: BTreeMap<String, String> = BTreeMap::new();
        let mut resources = BTreeSet::new();
        for (i, s) in self.servers.iter().enumerate() {
            let fqdn = normalize_fqdn(&s.fqdn);
            if fqdn.is_empty() {
                bad(format!("servers[{i}].fqdn"), "must not be empty".into());
            } else if !attached.contains_key(&fqdn) {
                bad(format!("servers[{i}].fqdn"), format!("{fqdn} is not attached to any server-side nap"));
            }
            match endpoints.get(&fqdn) {
                Some(e) if e != &s.endpoint => bad(
                    format!("servers[{i}].endpoint"),
                    format!("{fqdn} already has endpoint {e}"),
                ),
                _ => {
                    endpoints.insert(fqdn.clone(), s.endpoint.clone());
                }
            }
            match s.endpoint.parse::<SocketAddr>() {
                Ok(a) => claim(a, format!("server {fqdn}"), format!("servers[{i}].endpoint"), &mut bad),
                Err(e) => bad(format!("servers[{i}].endpoint"), e.to_string()),
            }
            if !resources.insert((fqdn.clone(), resource_path(&s.resource))) {
                bad(format!("servers[{i}].resource"), format!("duplicate resource {}", s.resource));
            }
            if s.period_ms == 0 {
                bad(format!("servers[{i}].period_ms"), "must be > 0".into());
            }
        }
        for (fqdn, nap) in &attached {
            if !endpoints.contains_key(fqdn) {
                bad(format!("naps[{nap}].servers"), format!("{fqdn} has no [[servers]] entry"));
            }
        }

        let mut tokens = BTreeSet::new();
        for (i, c) in self.clients.iter().enumerate() {
            match nap_roles.get(&c.nap) {
                Some(NapRole::Client) => {}
                Some(NapRole::Server) => bad(format!("clients[{i}].nap"), format!("{:?} is a server-side nap", c.nap)),
                None => bad(format!("clients[{i}].nap"), format!("no nap on node {:?}", c.nap)),
            }
            match c.endpoint.parse::<SocketAddr>() {
                Ok(a) => {
                    claim(a, format!("client endpoint {a}"), format!("clients[{i}].endpoint"), &mut bad);
                    if !tokens.insert((a, c.token.clone())) {
                        bad(format!("clients[{i}].token"), format!("token {:?} reused on {a}", c.token));
                    }
                }
                Err(e) => bad(format!("clients[{i}].endpoint"), e.to_string()),
            }
            if let Err(e) = split_proxy_uri(&c.target) {
                bad(format!("clients[{i}].target"), e.to_string());
            }
            if c.token.len() > MAX_TOKEN_LEN {
                bad(format!("clients[{i}].token"), format!("{} bytes, at most {MAX_TOKEN_LEN}", c.token.len()));
            }
            if c.observe_ms == 0 {
                bad(format!("clients[{i}].observe_ms"), "must be > 0".into());
            }
        }

        let t = &self.timing;
        if t.ack_timeout_ms == 0 {
            bad("timing.ack_timeout_ms".into(), "must be > 0".into());
        }
        if !(t.ack_random_factor.is_finite() && t.ack_random_factor >= 1.0) {
            bad("timing.ack_random_factor".into(), "must be >= 1".into());
        }
        if !(t.access_latency_ms.is_finite() && t.access_latency_ms >= 0.0) {
            bad("timing.access_latency_ms".into(), "must be a non-negative number".into());
        }

        if diags.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::InvalidScenario(diags))
        }
    }
}

/// "R1", "/R1" and "/R1/" name the same resource.
pub(crate) fn resource_path(resource: &str) -> String {
    resource.trim_matches('/').to_string()
}
