//! RFC 7252 octet layout.
//!
//! ```text
//!  0                   1                   2                   3
//!  0 1 2 3 4 5 6 7 8 9 0 1 2 3 4 5 6 7 8 9 0 1 2 3 4 5 6 7 8 9 0 1
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! |Ver| T |  TKL  |      Code     |          Message ID           |
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! |   Token (if any, TKL bytes) ...
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! |   Options (if any) ...
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! |1 1 1 1 1 1 1 1|    Payload (if any) ...
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! ```

use super::message::{option, CoapMessage, MessageType, MAX_OBSERVE, MAX_TOKEN_LEN, VERSION};
use super::{CodecError, DecodeWarning};
use crate::codec::Code;

pub const HEADER_LEN: usize = 4;
pub const PAYLOAD_MARKER: u8 = 0xFF;

/// Upper bound for one message: the largest UDP payload over IPv4.
pub const MAX_MESSAGE_LEN: usize = 65_507;

const EXT8: u8 = 13;
const EXT16: u8 = 14;
const RESERVED: u8 = 15;
const EXT8_BASE: u32 = 13;
const EXT16_BASE: u32 = 269;
const MAX_OPTION_FIELD: u32 = EXT16_BASE + 0xFFFF;

fn split_nibble(value: u32) -> (u8, Vec<u8>) {
    if value < EXT8_BASE {
        (value as u8, Vec::new())
    } else if value < EXT16_BASE {
        (EXT8, vec![(value - EXT8_BASE) as u8])
    } else {
        (EXT16, ((value - EXT16_BASE) as u16).to_be_bytes().to_vec())
    }
}

pub fn encode(msg: &CoapMessage) -> Result<Vec<u8>, CodecError> {
    if msg.version != VERSION {
        return Err(CodecError::BadVersion(msg.version));
    }
    if msg.token.len() > MAX_TOKEN_LEN {
        return Err(CodecError::InvalidTokenLength(msg.token.len()));
    }
    check_options(msg)?;

    let mut out = Vec::with_capacity(HEADER_LEN + msg.token.len() + msg.payload.len() + 16);
    out.push((msg.version << 6) | (msg.msg_type.bits() << 4) | msg.token.len() as u8);
    out.push(msg.code.0);
    out.extend_from_slice(&msg.message_id.to_be_bytes());
    out.extend_from_slice(&msg.token);

    let mut previous = 0u16;
    for opt in &msg.options {
        let delta = u32::from(opt.number - previous);
        let length = opt.value.len() as u32;
        let (delta_nibble, delta_ext) = split_nibble(delta);
        let (length_nibble, length_ext) = split_nibble(length);
        out.push((delta_nibble << 4) | length_nibble);
        out.extend_from_slice(&delta_ext);
        out.extend_from_slice(&length_ext);
        out.extend_from_slice(&opt.value);
        previous = opt.number;
    }

    if !msg.payload.is_empty() {
        out.push(PAYLOAD_MARKER);
        out.extend_from_slice(&msg.payload);
    }
    if out.len() > MAX_MESSAGE_LEN {
        return Err(CodecError::MessageTooLarge(out.len()));
    }
    Ok(out)
}

fn check_options(msg: &CoapMessage) -> Result<(), CodecError> {
    let mut previous: Option<u16> = None;
    for opt in &msg.options {
        if let Some(prev) = previous {
            if opt.number < prev {
                return Err(CodecError::UnsortedOptions(opt.number));
            }
            if opt.number == prev && option::SINGLE.contains(&opt.number) {
                return Err(CodecError::DuplicateOption(opt.number));
            }
        }
        if opt.value.len() as u32 > MAX_OPTION_FIELD {
            return Err(CodecError::OptionTooLong(opt.number));
        }
        if opt.number == option::OBSERVE && opt.value.len() > 3 {
            let value = opt.value.iter().fold(0u64, |a, b| (a << 8) | u64::from(*b));
            return Err(CodecError::ObserveOutOfRange(
                value.min(u64::from(u32::MAX)) as u32,
            ));
        }
        previous = Some(opt.number);
    }
    if msg.code.is_empty() && !(msg.token.is_empty() && msg.options.is_empty() && msg.payload.is_empty()) {
        return Err(CodecError::NonEmptyEmptyMessage);
    }
    debug_assert!(msg.observe().is_none_or(|v| v <= MAX_OBSERVE));
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let end = self.pos.checked_add(n).ok_or(CodecError::Truncated)?;
        let slice = self.buf.get(self.pos..end).ok_or(CodecError::Truncated)?;
        self.pos = end;
        Ok(slice)
    }

    fn byte(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn extended(&mut self, nibble: u8) -> Result<u32, CodecError> {
        match nibble {
            EXT8 => Ok(EXT8_BASE + u32::from(self.byte()?)),
            EXT16 => {
                let b = self.take(2)?;
                Ok(EXT16_BASE + u32::from(u16::from_be_bytes([b[0], b[1]])))
            }
            RESERVED => Err(CodecError::MalformedOption),
            n => Ok(u32::from(n)),
        }
    }
}

/// Decodes a message and discards any warnings.
pub fn decode(wire: &[u8]) -> Result<CoapMessage, CodecError> {
    decode_with_warnings(wire).map(|(msg, _)| msg)
}

/// Decodes a message, reporting unknown critical options instead of failing on them.
pub fn decode_with_warnings(wire: &[u8]) -> Result<(CoapMessage, Vec<DecodeWarning>), CodecError> {
    if wire.len() < HEADER_LEN {
        return Err(CodecError::Truncated);
    }
    if wire.len() > MAX_MESSAGE_LEN {
        return Err(CodecError::MessageTooLarge(wire.len()));
    }
    let mut r = Reader { buf: wire, pos: 0 };
    let first = r.byte()?;
    let version = first >> 6;
    if version != VERSION {
        return Err(CodecError::BadVersion(version));
    }
    let msg_type = MessageType::from_bits(first >> 4);
    let token_len = usize::from(first & 0x0F);
    if token_len > MAX_TOKEN_LEN {
        return Err(CodecError::InvalidTokenLength(token_len));
    }
    let code = Code(r.byte()?);
    let mid = r.take(2)?;
    let message_id = u16::from_be_bytes([mid[0], mid[1]]);
    let token = r.take(token_len)?.to_vec();

    let mut msg = CoapMessage {
        version,
        msg_type,
        code,
        message_id,
        token,
        options: Vec::new(),
        payload: Vec::new(),
    };

    let mut number: u32 = 0;
    while r.remaining() > 0 {
        let head = r.byte()?;
        if head == PAYLOAD_MARKER {
            if r.remaining() == 0 {
                return Err(CodecError::EmptyPayloadAfterMarker);
            }
            msg.payload = r.take(r.remaining())?.to_vec();
            break;
        }
        let delta = r.extended(head >> 4)?;
        let length = r.extended(head & 0x0F)?;
        number += delta;
        if number > u32::from(u16::MAX) {
            return Err(CodecError::MalformedOption);
        }
        let value = r.take(length as usize)?.to_vec();
        msg.options.push(super::CoapOption {
            number: number as u16,
            value,
        });
    }

    if code.is_empty()
        && !(msg.token.is_empty() && msg.options.is_empty() && msg.payload.is_empty())
    {
        return Err(CodecError::NonEmptyEmptyMessage);
    }

    let warnings = msg
        .unknown_critical_options()
        .into_iter()
        .map(DecodeWarning::UnknownCriticalOption)
        .collect();
    Ok((msg, warnings))
}
