//! The simulated ICN core on its own: rendezvous, implicit subscription and
//! multicast delivery over a shared core link.
//!
//!     cargo run --example icn_fabric

use std::collections::BTreeSet;
use std::time::Duration;

use coap_icn::fabric::{Fabric, FabricConfig, Topology};
use coap_icn::nap::{fqdn_to_name, url_to_name};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut t = Topology::new();
    let cnap1 = t.add_node("cnap1");
    let cnap2 = t.add_node("cnap2");
    let core = t.add_node("core");
    let snap = t.add_node("snap");
    t.add_link(cnap1, core, Duration::from_millis(1))?;
    t.add_link(cnap2, core, Duration::from_millis(1))?;
    t.add_link(core, snap, Duration::from_millis(2))?;
    let mut fabric = Fabric::new(t, FabricConfig::default());

    let fqdn = fqdn_to_name("aueb.example.gr")?;
    let url = url_to_name("coap://aueb.example.gr/R1")?;
    fabric.subscribe(fqdn, snap)?;

    for cnap in [cnap1, cnap2] {
        let report = fabric.pub_isub(fqdn, url, b"GET R1".to_vec(), cnap)?;
        println!(
            "pub_isub from {cnap}: subscriber={} fid_req={} fid_res={}",
            report.subscriber, report.fid_req, report.fid_res
        );
    }
    println!("subscribers of the response name: {:?}", fabric.subscribers(&url));

    let leaves: BTreeSet<_> = fabric.subscribers(&url);
    let (tree, _) = fabric.compute_paths(snap, &leaves)?;
    let multicast = fabric.publish_to_path(url, b"notification".to_vec(), &tree)?;
    println!("multicast over {tree}: {} link transmissions", multicast.link_transmissions);

    let mut unicast = 0;
    for leaf in &leaves {
        let (path, _) = fabric.compute_paths(snap, &BTreeSet::from([*leaf]))?;
        unicast += fabric.publish_to_path(url, b"notification".to_vec(), &path)?.link_transmissions;
    }
    println!("unicast to each leaf: {unicast} link transmissions");

    for d in fabric.drain_deliveries() {
        println!("deliver at {} to {} ({:?})", d.at, d.node, d.packet.kind);
    }
    for ((a, b), s) in fabric.link_stats() {
        println!("link {a}>{b}: {} packets {} bytes", s.packets, s.bytes);
    }
    Ok(())
}
