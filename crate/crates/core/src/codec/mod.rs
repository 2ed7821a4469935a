//! CoAP message model and bit-exact wire codec (RFC 7252 framing with the
//! RFC 7641 Observe option). Only the options the gateway needs are
//! interpreted; everything else is carried opaquely.

mod message;
mod uri;
mod wire;

use thiserror::Error;

pub use message::{
    decode_uint, encode_uint, option, Code, CoapMessage, CoapOption, MessageType, MAX_OBSERVE,
    MAX_TOKEN_LEN, OBSERVE_DEREGISTER, OBSERVE_REGISTER, VERSION,
};
pub use uri::{
    rebuild_origin_request, request_parts, request_uri, split_proxy_uri, ProxyUriParts,
    DEFAULT_PORT,
};
pub use wire::{decode, decode_with_warnings, encode, HEADER_LEN, MAX_MESSAGE_LEN, PAYLOAD_MARKER};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("token length {0} exceeds 8 bytes")]
    InvalidTokenLength(usize),
    #[error("message truncated")]
    Truncated,
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("malformed option delta or length")]
    MalformedOption,
    #[error("payload marker not followed by payload")]
    EmptyPayloadAfterMarker,
    #[error("option {0} out of order")]
    UnsortedOptions(u16),
    #[error("option {0} may appear only once")]
    DuplicateOption(u16),
    #[error("option {0} value too long")]
    OptionTooLong(u16),
    #[error("observe value {0} exceeds 24 bits")]
    ObserveOutOfRange(u32),
    #[error("empty message carries token, options or payload")]
    NonEmptyEmptyMessage,
    #[error("message of {0} bytes does not fit one datagram")]
    MessageTooLarge(usize),
    #[error("not a coap:// URI: {0}")]
    NotCoapUri(String),
    #[error("URI has no host")]
    EmptyHost,
    #[error("malformed URI: {0}")]
    MalformedUri(String),
    #[error("request carries no Proxy-Uri option")]
    MissingProxyUri,
}

/// Non-fatal findings reported by [`decode_with_warnings`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DecodeWarning {
    UnknownCriticalOption(u16),
}

/// Header-level summary of an encoded message, used for traces.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Summary {
    pub msg_type: MessageType,
    pub code: Code,
    pub message_id: u16,
    pub token: Vec<u8>,
    pub observe: Option<u32>,
    pub payload_len: usize,
}

impl Summary {
    pub fn of(wire: &[u8]) -> Option<Summary> {
        decode(wire).ok().map(|m| Summary::from_message(&m))
    }

    pub fn from_message(m: &CoapMessage) -> Summary {
        Summary {
            msg_type: m.msg_type,
            code: m.code,
            message_id: m.message_id,
            token: m.token.clone(),
            observe: m.observe(),
            payload_len: m.payload.len(),
        }
    }

    pub fn is_request(&self) -> bool {
        self.code.is_request()
    }

    pub fn is_empty_ack(&self) -> bool {
        self.msg_type == MessageType::Acknowledgement && self.code.is_empty()
    }

    /// A response carrying an Observe value.
    pub fn is_notification(&self) -> bool {
        self.code.is_response() && self.observe.is_some()
    }
}
