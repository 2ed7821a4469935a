use std::fmt;

use super::CodecError;

/// Protocol version carried in every header.
pub const VERSION: u8 = 1;

/// Largest token the header's 4-bit length field may announce.
pub const MAX_TOKEN_LEN: usize = 8;

/// Largest Observe value (3-byte unsigned integer).
pub const MAX_OBSERVE: u32 = 0x00FF_FFFF;

/// Option numbers this crate understands.
pub mod option {
    pub const URI_HOST: u16 = 3;
    pub const OBSERVE: u16 = 6;
    pub const URI_PORT: u16 = 7;
    pub const URI_PATH: u16 = 11;
    pub const CONTENT_FORMAT: u16 = 12;
    pub const URI_QUERY: u16 = 15;
    pub const PROXY_URI: u16 = 35;

    /// Every option number handled natively.
    pub const KNOWN: [u16; 7] = [
        URI_HOST,
        OBSERVE,
        URI_PORT,
        URI_PATH,
        CONTENT_FORMAT,
        URI_QUERY,
        PROXY_URI,
    ];

    /// Options that may appear at most once in a message.
    pub const SINGLE: [u16; 5] = [URI_HOST, OBSERVE, URI_PORT, CONTENT_FORMAT, PROXY_URI];

    pub fn is_known(number: u16) -> bool {
        KNOWN.contains(&number)
    }

    /// Odd option numbers are critical.
    pub fn is_critical(number: u16) -> bool {
        number & 1 == 1
    }
}

/// Observe option value that registers an observer.
pub const OBSERVE_REGISTER: u32 = 0;
/// Observe option value that cancels an observation.
pub const OBSERVE_DEREGISTER: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MessageType {
    Confirmable,
    NonConfirmable,
    Acknowledgement,
    Reset,
}

impl MessageType {
    pub fn from_bits(bits: u8) -> Self {
        match bits & 0b11 {
            0 => Self::Confirmable,
            1 => Self::NonConfirmable,
            2 => Self::Acknowledgement,
            _ => Self::Reset,
        }
    }

    pub fn bits(self) -> u8 {
        match self {
            Self::Confirmable => 0,
            Self::NonConfirmable => 1,
            Self::Acknowledgement => 2,
            Self::Reset => 3,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Self::Confirmable => "CON",
            Self::NonConfirmable => "NON",
            Self::Acknowledgement => "ACK",
            Self::Reset => "RST",
        }
    }
}

impl fmt::Display for MessageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

/// Request method or response code, stored as the raw `c.dd` octet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Code(pub u8);

impl Code {
    pub const EMPTY: Code = Code(0x00);
    pub const GET: Code = Code(0x01);
    pub const POST: Code = Code(0x02);
    pub const PUT: Code = Code(0x03);
    pub const DELETE: Code = Code(0x04);
    pub const CONTENT: Code = Code::new(2, 5);
    pub const NOT_FOUND: Code = Code::new(4, 4);
    pub const METHOD_NOT_ALLOWED: Code = Code::new(4, 5);
    pub const BAD_GATEWAY: Code = Code::new(5, 2);

    pub const fn new(class: u8, detail: u8) -> Self {
        Code((class << 5) | (detail & 0x1F))
    }

    pub fn class(self) -> u8 {
        self.0 >> 5
    }

    pub fn detail(self) -> u8 {
        self.0 & 0x1F
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_request(self) -> bool {
        self.class() == 0 && !self.is_empty()
    }

    pub fn is_response(self) -> bool {
        (2..=5).contains(&self.class())
    }

    pub fn is_success(self) -> bool {
        self.class() == 2
    }
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.class(), self.detail())
    }
}

/// A single option instance. Repeated options appear as repeated entries.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CoapOption {
    pub number: u16,
    pub value: Vec<u8>,
}

impl CoapOption {
    pub fn new(number: u16, value: impl Into<Vec<u8>>) -> Self {
        Self {
            number,
            value: value.into(),
        }
    }

    pub fn uint(number: u16, value: u32) -> Self {
        Self::new(number, encode_uint(value))
    }
}

/// Minimal big-endian encoding of an unsigned option value (zero is empty).
pub fn encode_uint(value: u32) -> Vec<u8> {
    let bytes = value.to_be_bytes();
    let skip = bytes.iter().take_while(|b| **b == 0).count();
    bytes[skip..].to_vec()
}

pub fn decode_uint(value: &[u8]) -> Option<u32> {
    if value.len() > 4 {
        return None;
    }
    Some(value.iter().fold(0u32, |acc, b| (acc << 8) | u32::from(*b)))
}

/// A decoded CoAP PDU.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CoapMessage {
    pub version: u8,
    pub msg_type: MessageType,
    pub code: Code,
    pub message_id: u16,
    pub token: Vec<u8>,
    /// Kept sorted by option number; equal numbers keep insertion order.
    pub options: Vec<CoapOption>,
    pub payload: Vec<u8>,
}

impl CoapMessage {
    pub fn new(msg_type: MessageType, code: Code, message_id: u16) -> Self {
        Self {
            version: VERSION,
            msg_type,
            code,
            message_id,
            token: Vec::new(),
            options: Vec::new(),
            payload: Vec::new(),
        }
    }

    /// An Empty acknowledgement for `message_id`.
    pub fn empty_ack(message_id: u16) -> Self {
        Self::new(MessageType::Acknowledgement, Code::EMPTY, message_id)
    }

    pub fn reset(message_id: u16) -> Self {
        Self::new(MessageType::Reset, Code::EMPTY, message_id)
    }

    pub fn with_token(mut self, token: impl Into<Vec<u8>>) -> Self {
        self.token = token.into();
        self
    }

    pub fn with_payload(mut self, payload: impl Into<Vec<u8>>) -> Self {
        self.payload = payload.into();
        self
    }

    pub fn with_option(mut self, number: u16, value: impl Into<Vec<u8>>) -> Self {
        self.add_option(number, value);
        self
    }

    pub fn with_observe(mut self, value: u32) -> Self {
        self.set_observe(value).expect("observe value out of range");
        self
    }

    /// Inserts after any existing options with the same number.
    pub fn add_option(&mut self, number: u16, value: impl Into<Vec<u8>>) {
        let at = self.options.partition_point(|o| o.number <= number);
        self.options.insert(at, CoapOption::new(number, value));
    }

    pub fn remove_option(&mut self, number: u16) {
        self.options.retain(|o| o.number != number);
    }

    pub fn option(&self, number: u16) -> Option<&[u8]> {
        self.options
            .iter()
            .find(|o| o.number == number)
            .map(|o| o.value.as_slice())
    }

    pub fn options_of(&self, number: u16) -> impl Iterator<Item = &[u8]> {
        self.options
            .iter()
            .filter(move |o| o.number == number)
            .map(|o| o.value.as_slice())
    }

    pub fn observe(&self) -> Option<u32> {
        self.option(option::OBSERVE).and_then(decode_uint)
    }

    pub fn set_observe(&mut self, value: u32) -> Result<(), CodecError> {
        if value > MAX_OBSERVE {
            return Err(CodecError::ObserveOutOfRange(value));
        }
        self.remove_option(option::OBSERVE);
        self.add_option(option::OBSERVE, encode_uint(value));
        Ok(())
    }

    pub fn proxy_uri(&self) -> Option<&str> {
        self.option(option::PROXY_URI)
            .and_then(|v| std::str::from_utf8(v).ok())
    }

    pub fn is_empty_ack(&self) -> bool {
        self.msg_type == MessageType::Acknowledgement && self.code.is_empty()
    }

    /// Option numbers that are critical but not handled by this crate.
    pub fn unknown_critical_options(&self) -> Vec<u16> {
        let mut found: Vec<u16> = self
            .options
            .iter()
            .map(|o| o.number)
            .filter(|n| option::is_critical(*n) && !option::is_known(*n))
            .collect();
        found.dedup();
        found
    }
}

impl fmt::Display for CoapMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} mid={:#06x} token={}",
            self.msg_type,
            self.code,
            self.message_id,
            hex::encode(&self.token)
        )?;
        if let Some(obs) = self.observe() {
            write!(f, " observe={obs}")?;
        }
        if !self.payload.is_empty() {
            write!(f, " payload={}B", self.payload.len())?;
        }
        Ok(())
    }
}
