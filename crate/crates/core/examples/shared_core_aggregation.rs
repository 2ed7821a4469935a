//! Four observers behind two client-side NAPs. Compares the gateway with
//! multicast fan-out, the gateway with per-NAP unicast, and direct IP.
//!
//!     cargo run --example shared_core_aggregation

use std::path::Path;

use coap_icn::harness::{self, Fanout, Mode, RunMetrics, Scenario};

fn summary(label: &str, m: &RunMetrics) {
    println!(
        "{label:<18} server_requests={} publications={} delivered={} wrong_token={} snap>core per notification={}",
        m.server_requests_received(),
        m.observe_request_publications,
        m.notifications_delivered(),
        m.wrong_token_deliveries(),
        m.link_tx_per_notification("snap>core")
            .map_or("-".to_string(), |v| format!("{v:.2}"))
    );
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut s = Scenario::load(Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/shared_core.toml"))?;
    let multicast = harness::run(&s, Mode::Gateway)?.metrics;
    s.fanout = Fanout::Unicast;
    let unicast = harness::run(&s, Mode::Gateway)?.metrics;
    let ip = harness::run(&s, Mode::Baseline)?.metrics;

    summary("gateway/multicast", &multicast);
    summary("gateway/unicast", &unicast);
    summary("ip baseline", &ip);
    println!();
    for c in &multicast.clients {
        println!("{} received {} notifications", c.label, c.received.len());
    }
    println!();
    print!("{}", harness::report(&multicast, &ip)?);
    Ok(())
}
