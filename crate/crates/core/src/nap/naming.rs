use sha2::{Digest, Sha256};

use crate::codec::split_proxy_uri;
use crate::fabric::{IcnName, Identifier};

use super::NapError;

const FQDN_SCOPE: &str = "coap-fqdn";
const URL_SCOPE: &str = "coap-url";

fn digest(input: &str) -> Identifier {
    Identifier(Sha256::digest(input.as_bytes()).into())
}

/// Lowercases and drops one trailing dot.
pub fn normalize_fqdn(fqdn: &str) -> String {
    fqdn.strip_suffix('.').unwrap_or(fqdn).to_ascii_lowercase()
}

/// Name a server-side NAP subscribes to for every attached server.
pub fn fqdn_to_name(fqdn: &str) -> Result<IcnName, NapError> {
    let fqdn = normalize_fqdn(fqdn);
    if fqdn.is_empty() {
        return Err(NapError::EmptyFqdn);
    }
    Ok(IcnName::new(digest(FQDN_SCOPE), digest(&fqdn)))
}

/// Name responses for a resource are published under.
pub fn url_to_name(url: &str) -> Result<IcnName, NapError> {
    let parts = split_proxy_uri(url).map_err(NapError::MalformedUrl)?;
    Ok(IcnName::new(digest(URL_SCOPE), digest(&parts.canonical())))
}
