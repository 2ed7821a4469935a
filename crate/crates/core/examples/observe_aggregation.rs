//! Three observers behind one proxy: one registration goes upstream, every
//! notification fans out with each observer's own token, and only one
//! acknowledgement per confirmable notification leaves the proxy.
//!
//!     cargo run --example observe_aggregation

use coap_icn::clock::SimTime;
use coap_icn::codec::{self, option, Code, CoapMessage, MessageType};
use coap_icn::observe::{HandlerConfig, ObserveHandler, ReturnAddress};

const URI: &str = "coap://aueb.example.gr/R1";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut proxy = ObserveHandler::new(HandlerConfig::default());
    let clients: Vec<(ReturnAddress, &[u8])> = vec![
        (ReturnAddress::Udp("10.0.1.10:40001".parse()?), b"t1"),
        (ReturnAddress::Udp("10.0.1.11:40002".parse()?), b"t2"),
        (ReturnAddress::Udp("10.0.1.12:40003".parse()?), b"t1"),
    ];
    for (i, (addr, token)) in clients.iter().enumerate() {
        let req = CoapMessage::new(MessageType::Confirmable, Code::GET, 0x100 + i as u16)
            .with_token(token.to_vec())
            .with_observe(codec::OBSERVE_REGISTER)
            .with_option(option::PROXY_URI, URI);
        let decision = proxy.handle_observe_request(&req, addr, SimTime::ZERO)?;
        println!("register {addr} token={} -> {:?}", String::from_utf8_lossy(token), decision.action());
    }

    let upstream = proxy.upstream_token(URI).unwrap().to_vec();
    for (seq, t) in [(2, MessageType::Acknowledgement), (3, MessageType::Confirmable)] {
        let resp = CoapMessage::new(t, Code::CONTENT, 0x9000 + seq as u16)
            .with_token(upstream.clone())
            .with_observe(seq)
            .with_payload(format!("state {seq}"));
        let fan = proxy.distribute(&resp, URI)?;
        println!("notification {seq} ({t}) -> {} copies, carrier {:?}", fan.copies.len(), fan.carrier);
        for copy in &fan.copies {
            println!("  {} {}", copy.to, copy.message);
        }
        if t == MessageType::Confirmable {
            for copy in &fan.copies {
                let ack = CoapMessage::empty_ack(copy.message.message_id);
                println!("  ack from {} -> {:?}", copy.to, proxy.handle_client_ack(&ack, &copy.to));
            }
        }
    }

    let (addr, token) = &clients[0];
    println!("deregister {addr}: {:?}", proxy.deregister(token, addr)?.outcome);
    print!("{}", proxy.snapshot());
    println!("{:?}", proxy.stats());
    Ok(())
}
