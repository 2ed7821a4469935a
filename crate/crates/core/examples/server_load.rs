//! Two clients, one forward and one reverse proxy, confirmable
//! notifications: how much request and ACK traffic still reaches the server.
//!
//!     cargo run --example server_load [seed]

use std::path::Path;

use coap_icn::harness::{self, Mode, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut s = Scenario::load(Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/ratio.toml"))?;
    if let Some(seed) = std::env::args().nth(1) {
        s.seed = seed.parse()?;
    }
    let gateway = harness::run(&s, Mode::Gateway)?.metrics;
    let baseline = harness::run(&s, Mode::Baseline)?.metrics;
    let r = harness::report(&gateway, &baseline)?;
    println!(
        "client request+ack packets: {} (gateway) {} (baseline)",
        gateway.client_request_ack_packets(),
        baseline.client_request_ack_packets()
    );
    println!(
        "server request+ack packets: {} (gateway) {} (baseline)",
        gateway.server_request_ack_packets(),
        baseline.server_request_ack_packets()
    );
    println!(
        "server request+ack bytes:   {} (gateway) {} (baseline)",
        gateway.server_request_ack_bytes(),
        baseline.server_request_ack_bytes()
    );
    print!("{r}");
    Ok(())
}
