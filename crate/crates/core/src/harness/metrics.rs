use std::collections::BTreeMap;
use std::fmt;

use crate::clock::SimTime;
use crate::fabric::LinkStats;
use crate::nap::NapCounters;

use super::endpoints::{ClientCounters, Emission, Received, ServerCounters};
use super::scenario::Fanout;
use super::sim::Mode;
use super::HarnessError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientReport {
    pub label: String,
    pub token: Vec<u8>,
    pub target: String,
    /// (fqdn, path) of the observed resource.
    pub resource: (String, String),
    pub start: SimTime,
    pub stop: SimTime,
    pub received: Vec<Received>,
    pub counters: ClientCounters,
}

/// Everything measured in one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunMetrics {
    pub scenario: String,
    pub seed: u64,
    pub mode: Mode,
    pub fanout: Fanout,
    pub end: SimTime,
    /// Keyed by node name. Empty for baseline runs.
    pub naps: BTreeMap<String, NapCounters>,
    /// Keyed by FQDN.
    pub servers: BTreeMap<String, ServerCounters>,
    pub clients: Vec<ClientReport>,
    /// Periodic notifications in emission order, with their server FQDN.
    pub emissions: Vec<(String, Emission)>,
    /// Per directed link `a>b`: fabric transmissions (gateway) or IP hops (baseline).
    pub links: BTreeMap<String, LinkStats>,
    /// Per directed link: transmissions of each notification, keyed by Observe value.
    pub notification_link_tx: BTreeMap<String, BTreeMap<u32, u64>>,
    pub observe_request_publications: u64,
    pub nap_drops: u64,
}

impl RunMetrics {
    /// Requests received by all servers (every datagram with a request code).
    pub fn server_requests_received(&self) -> u64 {
        self.servers.values().map(|s| s.requests).sum()
    }

    pub fn server_registrations(&self) -> u64 {
        self.servers.values().map(|s| s.registrations).sum()
    }

    /// Request plus ACK packets that reached a server.
    pub fn server_request_ack_packets(&self) -> u64 {
        self.servers.values().map(|s| s.requests + s.acks).sum()
    }

    pub fn server_request_ack_bytes(&self) -> u64 {
        self.servers.values().map(|s| s.request_bytes + s.ack_bytes).sum()
    }

    /// Request plus ACK packets emitted by clients, retransmissions included.
    pub fn client_request_ack_packets(&self) -> u64 {
        self.clients.iter().map(|c| c.counters.requests + c.counters.acks).sum()
    }

    pub fn client_request_ack_bytes(&self) -> u64 {
        self.clients
            .iter()
            .map(|c| c.counters.request_bytes + c.counters.ack_bytes)
            .sum()
    }

    pub fn notifications_delivered(&self) -> usize {
        self.clients.iter().map(|c| c.received.len()).sum()
    }

    pub fn wrong_token_deliveries(&self) -> u64 {
        self.clients.iter().map(|c| c.counters.wrong_token).sum()
    }

    /// Mean transmissions per notification on `link`, over notifications seen on it.
    pub fn link_tx_per_notification(&self, link: &str) -> Option<f64> {
        let per = self.notification_link_tx.get(link)?;
        if per.is_empty() {
            return None;
        }
        Some(per.values().sum::<u64>() as f64 / per.len() as f64)
    }
}

impl fmt::Display for RunMetrics {
    /// One `key=value` record per line; see the README for the field list.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "run scenario={} seed={} mode={} fanout={:?} end={}",
            self.scenario, self.seed, self.mode, self.fanout, self.end
        )?;
        writeln!(
            f,
            "totals server_requests={} server_registrations={} server_request_ack_packets={} server_request_ack_bytes={} client_request_ack_packets={} client_request_ack_bytes={} observe_request_publications={} notifications_delivered={} wrong_token={} nap_drops={}",
            self.server_requests_received(),
            self.server_registrations(),
            self.server_request_ack_packets(),
            self.server_request_ack_bytes(),
            self.client_request_ack_packets(),
            self.client_request_ack_bytes(),
            self.observe_request_publications,
            self.notifications_delivered(),
            self.wrong_token_deliveries(),
            self.nap_drops
        )?;
        for (name, c) in &self.naps {
            writeln!(f, "nap name={name} {c}")?;
        }
        for (fqdn, s) in &self.servers {
            writeln!(
                f,
                "server fqdn={fqdn} requests={} registrations={} request_bytes={} acks={} ack_bytes={} notifications={} notification_bytes={}",
                s.requests, s.registrations, s.request_bytes, s.acks, s.ack_bytes, s.notifications, s.notification_bytes
            )?;
        }
        for c in &self.clients {
            let digests: Vec<&str> = c.received.iter().map(|r| r.digest.as_str()).collect();
            writeln!(
                f,
                "client label={} requests={} acks={} retransmissions={} notifications={} wrong_token={} errors={} digests={}",
                c.label,
                c.counters.requests,
                c.counters.acks,
                c.counters.retransmissions,
                c.received.len(),
                c.counters.wrong_token,
                c.counters.errors,
                if digests.is_empty() { "-".to_string() } else { digests.join(",") }
            )?;
        }
        for (link, s) in &self.links {
            let per = self
                .link_tx_per_notification(link)
                .map_or("-".to_string(), |v| format!("{v:.2}"));
            writeln!(
                f,
                "link name={link} packets={} bytes={} tx_per_notification={per}",
                s.packets, s.bytes
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkSaving {
    pub link: String,
    pub gateway_per_notification: f64,
    pub baseline_per_notification: f64,
}

/// Gateway run compared against its baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub scenario: String,
    /// Server-received request+ACK packets over client-emitted request+ACK
    /// packets, both from the gateway run.
    pub forwarded_request_ratio: f64,
    /// Server-received request+ACK packets, gateway over baseline.
    pub server_packet_ratio: f64,
    /// Bytes of requests and ACKs reaching servers, gateway over baseline.
    pub byte_ratio: f64,
    pub links: Vec<LinkSaving>,
    /// Per NAP: (acks_suppressed, acks_forwarded).
    pub suppression: BTreeMap<String, (u64, u64)>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if num == den {
        1.0
    } else if den == 0 {
        f64::INFINITY
    } else {
        num as f64 / den as f64
    }
}

pub fn report(m: &RunMetrics, b: &RunMetrics) -> Result<Report, HarnessError> {
    if m.scenario != b.scenario || m.seed != b.seed {
        return Err(HarnessError::ScenarioMismatch {
            gateway: format!("{}#{}", m.scenario, m.seed),
            baseline: format!("{}#{}", b.scenario, b.seed),
        });
    }
    let mut links = Vec::new();
    for link in m.notification_link_tx.keys() {
        let g = m.link_tx_per_notification(link).unwrap_or(0.0);
        let base = b.link_tx_per_notification(link).unwrap_or(0.0);
        links.push(LinkSaving {
            link: link.clone(),
            gateway_per_notification: g,
            baseline_per_notification: base,
        });
    }
    Ok(Report {
        scenario: m.scenario.clone(),
        forwarded_request_ratio: ratio(m.server_request_ack_packets(), m.client_request_ack_packets()),
        server_packet_ratio: ratio(m.server_request_ack_packets(), b.server_request_ack_packets()),
        byte_ratio: ratio(m.server_request_ack_bytes(), b.server_request_ack_bytes()),
        links,
        suppression: m
            .naps
            .iter()
            .map(|(n, c)| (n.clone(), (c.acks_suppressed, c.acks_forwarded)))
            .collect(),
    })
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "report scenario={} forwarded_request_ratio={:.4} server_packet_ratio={:.4} byte_ratio={:.4}",
            self.scenario, self.forwarded_request_ratio, self.server_packet_ratio, self.byte_ratio
        )?;
        for l in &self.links {
            writeln!(
                f,
                "link_saving link={} gateway_per_notification={:.2} baseline_per_notification={:.2}",
                l.link, l.gateway_per_notification, l.baseline_per_notification
            )?;
        }
        for (nap, (s, fw)) in &self.suppression {
            writeln!(f, "suppression nap={nap} acks_suppressed={s} acks_forwarded={fw}")?;
        }
        Ok(())
    }
}
