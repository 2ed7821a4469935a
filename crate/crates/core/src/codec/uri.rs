//! Proxy-URI handling: splitting an absolute `coap://` URI into its
//! Uri-* parts and rebuilding the request a reverse proxy sends to the
//! origin server.

use std::fmt;

use super::message::{option, CoapMessage};
use super::CodecError;

pub const DEFAULT_PORT: u16 = 5683;
const SCHEME: &str = "coap://";

/// The Uri-Host/Port/Path/Query view of a Proxy-URI.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ProxyUriParts {
    pub uri_host: String,
    pub uri_port: u16,
    pub uri_path: Vec<String>,
    pub uri_query: Vec<String>,
}

impl ProxyUriParts {
    /// Reassembles the URI, eliding the default port.
    pub fn to_uri(&self) -> String {
        let mut uri = String::from(SCHEME);
        uri.push_str(&self.uri_host);
        if self.uri_port != DEFAULT_PORT {
            uri.push(':');
            uri.push_str(&self.uri_port.to_string());
        }
        for segment in &self.uri_path {
            uri.push('/');
            uri.push_str(segment);
        }
        if !self.uri_query.is_empty() {
            uri.push('?');
            uri.push_str(&self.uri_query.join("&"));
        }
        uri
    }

    /// Canonical form used as an aggregation key: lowercase host, default port elided.
    pub fn canonical(&self) -> String {
        ProxyUriParts {
            uri_host: self.uri_host.to_ascii_lowercase(),
            ..self.clone()
        }
        .to_uri()
    }

    /// Appends the Uri-* options for these parts.
    pub fn apply_to(&self, msg: &mut CoapMessage) {
        msg.add_option(option::URI_HOST, self.uri_host.as_bytes());
        if self.uri_port != DEFAULT_PORT {
            msg.add_option(option::URI_PORT, super::encode_uint(u32::from(self.uri_port)));
        }
        for segment in &self.uri_path {
            msg.add_option(option::URI_PATH, segment.as_bytes());
        }
        for query in &self.uri_query {
            msg.add_option(option::URI_QUERY, query.as_bytes());
        }
    }
}

impl fmt::Display for ProxyUriParts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_uri())
    }
}

pub fn split_proxy_uri(uri: &str) -> Result<ProxyUriParts, CodecError> {
    let scheme_ok = uri
        .get(..SCHEME.len())
        .is_some_and(|s| s.eq_ignore_ascii_case(SCHEME));
    if !scheme_ok {
        return Err(CodecError::NotCoapUri(uri.to_owned()));
    }
    let rest = &uri[SCHEME.len()..];
    if rest.contains('#') {
        return Err(CodecError::MalformedUri(uri.to_owned()));
    }

    let (rest, query) = match rest.split_once('?') {
        Some((r, q)) => (r, Some(q)),
        None => (rest, None),
    };
    let (authority, path) = match rest.find('/') {
        Some(i) => (&rest[..i], Some(&rest[i + 1..])),
        None => (rest, None),
    };

    let (host, port) = split_authority(authority).ok_or_else(|| CodecError::MalformedUri(uri.to_owned()))?;
    if host.is_empty() {
        return Err(CodecError::EmptyHost);
    }
    let uri_port = match port {
        None => DEFAULT_PORT,
        Some(p) => p
            .parse::<u16>()
            .map_err(|_| CodecError::MalformedUri(uri.to_owned()))?,
    };

    // "coap://h" and "coap://h/" both carry no Uri-Path option.
    let uri_path = match path {
        None | Some("") => Vec::new(),
        Some(p) => p.split('/').map(str::to_owned).collect(),
    };
    let uri_query = match query {
        None | Some("") => Vec::new(),
        Some(q) => q.split('&').map(str::to_owned).collect(),
    };

    Ok(ProxyUriParts {
        uri_host: host.to_owned(),
        uri_port,
        uri_path,
        uri_query,
    })
}

fn split_authority(authority: &str) -> Option<(&str, Option<&str>)> {
    if authority.contains('@') {
        return None;
    }
    if let Some(rest) = authority.strip_prefix('[') {
        let close = rest.find(']')?;
        let host = &authority[..close + 2];
        let after = &rest[close + 1..];
        return match after.strip_prefix(':') {
            Some(port) => Some((host, Some(port))),
            None if after.is_empty() => Some((host, None)),
            None => None,
        };
    }
    match authority.split_once(':') {
        Some((host, port)) => Some((host, Some(port))),
        None => Some((authority, None)),
    }
}

/// Resource URI addressed by a request, from Proxy-Uri or the Uri-* options.
///
/// The result is canonical, so the same resource reached either way maps to
/// the same string.
pub fn request_uri(msg: &CoapMessage) -> Result<String, CodecError> {
    request_parts(msg).map(|p| p.canonical())
}

pub fn request_parts(msg: &CoapMessage) -> Result<ProxyUriParts, CodecError> {
    if let Some(raw) = msg.option(option::PROXY_URI) {
        let uri = std::str::from_utf8(raw).map_err(|_| CodecError::MalformedUri(hex::encode(raw)))?;
        return split_proxy_uri(uri);
    }
    let utf8 = |v: &[u8]| {
        String::from_utf8(v.to_vec()).map_err(|_| CodecError::MalformedUri(hex::encode(v)))
    };
    let host = msg.option(option::URI_HOST).ok_or(CodecError::EmptyHost)?;
    let host = utf8(host)?;
    if host.is_empty() {
        return Err(CodecError::EmptyHost);
    }
    let port = match msg.option(option::URI_PORT) {
        Some(v) => super::decode_uint(v)
            .and_then(|p| u16::try_from(p).ok())
            .ok_or_else(|| CodecError::MalformedUri(format!("port {}", hex::encode(v))))?,
        None => DEFAULT_PORT,
    };
    Ok(ProxyUriParts {
        uri_host: host,
        uri_port: port,
        uri_path: msg.options_of(option::URI_PATH).map(utf8).collect::<Result<_, _>>()?,
        uri_query: msg.options_of(option::URI_QUERY).map(utf8).collect::<Result<_, _>>()?,
    })
}

/// Replaces Proxy-Uri with the equivalent Uri-* options.
///
/// Header fields and the token are carried over unchanged.
pub fn rebuild_origin_request(msg: &CoapMessage) -> Result<CoapMessage, CodecError> {
    let uri = msg.proxy_uri().ok_or(CodecError::MissingProxyUri)?;
    let parts = split_proxy_uri(uri)?;
    let mut out = msg.clone();
    for number in [
        option::PROXY_URI,
        option::URI_HOST,
        option::URI_PORT,
        option::URI_PATH,
        option::URI_QUERY,
    ] {
        out.remove_option(number);
    }
    parts.apply_to(&mut out);
    Ok(out)
}
