use std::fmt;

/// Length of scope and rendezvous identifiers, in octets.
pub const ID_LEN: usize = 32;

/// A flat, fixed-length identifier.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Identifier(pub [u8; ID_LEN]);

impl Identifier {
    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        <[u8; ID_LEN]>::try_from(bytes).ok().map(Identifier)
    }

    pub fn as_bytes(&self) -> &[u8; ID_LEN] {
        &self.0
    }
}

impl fmt::Debug for Identifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Identifier({})", hex::encode(self.0))
    }
}

impl fmt::Display for Identifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

/// A (scope, rendezvous) identifier pair naming one information item.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IcnName {
    pub scope_id: Identifier,
    pub rendezvous_id: Identifier,
}

impl IcnName {
    pub fn new(scope_id: Identifier, rendezvous_id: Identifier) -> Self {
        Self {
            scope_id,
            rendezvous_id,
        }
    }
}

impl fmt::Display for IcnName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.scope_id, self.rendezvous_id)
    }
}
