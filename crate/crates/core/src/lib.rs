//! CoAP observe over a publish/subscribe information-centric core.
//!
//! Network attachment points (NAPs) sit at the edge of an ICN fabric and
//! translate between plain CoAP/UDP endpoints and ICN publications.
//! Observe registrations for the same resource are aggregated into a single
//! upstream request, notifications are multicast to every interested NAP
//! over one delivery tree, and client acknowledgements are suppressed so the
//! server only sees one per notification.

pub mod clock;
pub mod codec;
pub mod fabric;
pub mod observe;
pub mod nap;
pub mod harness;
