//! Split a Proxy-Uri and rebuild the request a server-side NAP sends to the
//! origin server.
//!
//!     cargo run --example proxy_uri [uri]

use coap_icn::codec::{self, option, rebuild_origin_request, split_proxy_uri, Code, CoapMessage, MessageType};
use coap_icn::nap::{fqdn_to_name, url_to_name};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let uri = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "coap://aueb.example.gr:5684/sensors/temp?unit=c".to_string());
    let parts = split_proxy_uri(&uri)?;
    println!("host={} port={} path={:?} query={:?}", parts.uri_host, parts.uri_port, parts.uri_path, parts.uri_query);
    println!("canonical {}", parts.canonical());
    println!("request name  {}", fqdn_to_name(&parts.uri_host)?);
    println!("response name {}", url_to_name(&uri)?);

    let proxied = CoapMessage::new(MessageType::Confirmable, Code::GET, 0x0042)
        .with_token(*b"t1")
        .with_observe(codec::OBSERVE_REGISTER)
        .with_option(option::PROXY_URI, uri.into_bytes());
    let origin = rebuild_origin_request(&proxied)?;
    println!("proxied {}", hex::encode(codec::encode(&proxied)?));
    println!("origin  {}", hex::encode(codec::encode(&origin)?));
    for o in &origin.options {
        println!("  option {:>2} {:?}", o.number, String::from_utf8_lossy(&o.value));
    }
    Ok(())
}
