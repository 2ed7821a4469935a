//! One client observing one resource through a client-side and a
//! server-side NAP. Prints the event trace and the run metrics.
//!
//!     cargo run --example single_observer

use std::path::Path;

use coap_icn::harness::{self, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let s = Scenario::load(Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/single_observer.toml"))?;
    let run = harness::run_scenario(&s)?;
    for line in &run.trace.lines {
        println!("{line}");
    }
    println!();
    print!("{}", run.metrics);
    Ok(())
}
