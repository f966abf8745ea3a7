//! Simulator for covert command propagation over a payment-channel
//! network, with defender-side analysis tools. Everything runs in memory
//! against a synthetic network; nothing here talks to a real node.

pub mod analysis;
pub mod codec;
pub mod harness;
pub mod network;
pub mod payment;
pub mod protocol;
