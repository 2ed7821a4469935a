//! Encode an observe registration and a notification, then decode them back.
//!
//!     cargo run --example codec_roundtrip

use coap_icn::codec::{self, option, Code, CoapMessage, MessageType, Summary};

fn main() -> Result<(), codec::CodecError> {
    let register = CoapMessage::new(MessageType::Confirmable, Code::GET, 0x1234)
        .with_token(*b"t1")
        .with_observe(codec::OBSERVE_REGISTER)
        .with_option(option::PROXY_URI, *b"coap://aueb.example.gr/R1");
    let wire = codec::encode(&register)?;
    println!("register      {}", hex::encode(&wire));
    println!("  decoded     {}", codec::decode(&wire)?);

    let notification = CoapMessage::new(MessageType::NonConfirmable, Code::CONTENT, 0xBEEF)
        .with_token([0xAB])
        .with_observe(5)
        .with_option(option::CONTENT_FORMAT, [])
        .with_payload(*b"22.5");
    let wire = codec::encode(&notification)?;
    println!("notification  {}", hex::encode(&wire));
    println!("  summary     {:?}", Summary::of(&wire).unwrap());

    // Unknown critical options are reported, not rejected.
    let odd = CoapMessage::new(MessageType::Confirmable, Code::GET, 9).with_option(2049, *b"?");
    let (_, warnings) = codec::decode_with_warnings(&codec::encode(&odd)?)?;
    println!("warnings      {warnings:?}");

    match codec::decode(&[0x40, 0x01, 0x00]) {
        Err(e) => println!("3-byte input  {e}"),
        Ok(m) => println!("3-byte input  unexpectedly decoded {m}"),
    }
    Ok(())
}
