//! Source-routed keysend payments with hash-locked, all-or-nothing
//! settlement.
//!
//! A payment first locks value hop by hop from the sender towards the
//! destination. Any failure unwinds every lock taken so far; once the
//! destination shows the preimage the locks settle back towards the sender.
//! Each forwarding node records only what it can see locally.

mod latency;
mod route;

pub use latency::{LatencyError, LatencyModel};
pub use route::{find_route, hop_fee, Route, RouteConstraints, RouteError, RouteHop};

use std::collections::BTreeMap;
use std::io::{self, Write};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::network::{ChannelId, Network, NodeId, PublicKey};
use latency::seconds_to_ns;

/// Hash lock of one payment. For keysend the sender picks the preimage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HtlcLock {
    pub payment_hash: [u8; 32],
    pub preimage: [u8; 32],
}

impl HtlcLock {
    pub fn from_preimage(preimage: [u8; 32]) -> Self {
        HtlcLock { payment_hash: Sha256::digest(preimage).into(), preimage }
    }

    pub fn generate<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut preimage = [0u8; 32];
        rng.fill_bytes(&mut preimage);
        Self::from_preimage(preimage)
    }

    /// Whether `preimage` opens this lock.
    pub fn opens_with(&self, preimage: &[u8; 32]) -> bool {
        <[u8; 32]>::from(Sha256::digest(preimage)) == self.payment_hash
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    NoRoute,
    InsufficientCapacity,
    DestinationOffline,
    SourceOffline,
    InjectedFailure,
}

/// Outcome of one keysend attempt, from the sender's point of view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaymentResult {
    pub payment_index: u64,
    pub source: NodeId,
    pub destination: NodeId,
    pub success: bool,
    pub amount_sat: u64,
    /// Number of forwarding nodes.
    pub route_length_hops: usize,
    pub route: Vec<ChannelId>,
    pub hop_fees_msat: Vec<u64>,
    pub total_fee_msat: u64,
    pub latency_s: f64,
    pub started_ns: u64,
    pub settled_ns: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<FailureReason>,
}

/// An intermediary's local record of one forwarded payment. Deliberately
/// carries nothing that identifies the origin, final destination, or the
/// node's position on the route.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardingEvent {
    #[serde(rename = "timestamp")]
    pub timestamp_ns: u64,
    pub chan_id_in: ChannelId,
    pub chan_id_out: ChannelId,
    #[serde(rename = "amt_in")]
    pub amt_in_sat: u64,
    #[serde(rename = "amt_out")]
    pub amt_out_sat: u64,
    #[serde(rename = "fee")]
    pub fee_sat: u64,
}

/// Writes records as one JSON object per line.
pub fn write_jsonl<T: Serialize, W: Write>(records: &[T], mut out: W) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub latency: LatencyModel,
    /// Chance that a payment is rejected at a random hop after partial locking.
    pub failure_probability: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig { latency: LatencyModel::default(), failure_probability: 0.0 }
    }
}

/// Owns the network and executes payments against it on a virtual clock.
#[derive(Debug, Clone)]
pub struct PaymentEngine {
    net: Network,
    config: EngineConfig,
    rng: ChaCha8Rng,
    clock_ns: u64,
    histories: BTreeMap<NodeId, Vec<ForwardingEvent>>,
    payments: Vec<PaymentResult>,
}

impl PaymentEngine {
    pub fn new(net: Network, config: EngineConfig, seed: u64) -> Result<Self, LatencyError> {
        config.latency.validate()?;
        Ok(PaymentEngine {
            net,
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
            clock_ns: 0,
            histories: BTreeMap::new(),
            payments: Vec::new(),
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn into_network(self) -> Network {
        self.net
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn set_failure_probability(&mut self, p: f64) {
        self.config.failure_probability = p;
    }

    pub fn now_ns(&self) -> u64 {
        self.clock_ns
    }

    /// Moves the clock forward; never backwards.
    pub fn advance_to(&mut self, ns: u64) {
        self.clock_ns = self.clock_ns.max(ns);
    }

    pub fn payments(&self) -> &[PaymentResult] {
        &self.payments
    }

    /// Payments `node` forwarded, in timestamp order.
    pub fn forwarding_history(&self, node: NodeId) -> Vec<ForwardingEvent> {
        let mut events = self.histories.get(&node).cloned().unwrap_or_default();
        events.sort_by_key(|e| e.timestamp_ns);
        events
    }

    /// Every node with at least one forwarding record.
    pub fn forwarding_nodes(&self) -> Vec<NodeId> {
        self.histories.keys().copied().collect()
    }

    /// Sends at the current clock and advances the clock to settlement.
    pub fn send_keysend(&mut self, source: NodeId, destination: &PublicKey, amount_sat: u64) -> PaymentResult {
        self.send_keysend_with(source, destination, amount_sat, &RouteConstraints::default())
    }

    pub fn send_keysend_with(
        &mut self,
        source: NodeId,
        destination: &PublicKey,
        amount_sat: u64,
        constraints: &RouteConstraints,
    ) -> PaymentResult {
        let start = self.clock_ns;
        let result = self.send_keysend_at(start, source, destination, amount_sat, constraints);
        self.advance_to(result.settled_ns);
        result
    }

    /// Sends a payment that starts at `start_ns`. Used by the event loop,
    /// where independent sessions overlap in time; the clock is not moved.
    pub fn send_keysend_at(
        &mut self,
        start_ns: u64,
        source: NodeId,
        destination: &PublicKey,
        amount_sat: u64,
        constraints: &RouteConstraints,
    ) -> PaymentResult {
        let mut result = PaymentResult {
            payment_index: self.payments.len() as u64,
            source,
            destination: NodeId(u32::MAX),
            success: false,
            amount_sat,
            route_length_hops: 0,
            route: Vec::new(),
            hop_fees_msat: Vec::new(),
            total_fee_msat: 0,
            latency_s: 0.0,
            started_ns: start_ns,
            settled_ns: start_ns,
            failure_reason: None,
        };
        let outcome = self.try_send(start_ns, source, destination, amount_sat, constraints, &mut result);
        if let Err(reason) = outcome {
            result.failure_reason = Some(reason);
        } else {
            result.success = true;
        }
        self.payments.push(result.clone());
        result
    }

    fn try_send(
        &mut self,
        start_ns: u64,
        source: NodeId,
        destination: &PublicKey,
        amount_sat: u64,
        constraints: &RouteConstraints,
        result: &mut PaymentResult,
    ) -> Result<(), FailureReason> {
        let dest = self.net.node_by_key(destination).ok_or(FailureReason::NoRoute)?;
        result.destination = dest;
        if !self.net.is_online(source) {
            return Err(FailureReason::SourceOffline);
        }
        if !self.net.is_online(dest) {
            return Err(FailureReason::DestinationOffline);
        }
        let route = match find_route(&self.net, source, dest, amount_sat, constraints) {
            Ok(r) => r,
            Err(RouteError::NoRoute) => {
                let loose = RouteConstraints { ignore_balances: true, ..constraints.clone() };
                return Err(if find_route(&self.net, source, dest, amount_sat, &loose).is_ok() {
                    FailureReason::InsufficientCapacity
                } else {
                    FailureReason::NoRoute
                });
            }
            Err(_) => return Err(FailureReason::NoRoute),
        };
        result.route_length_hops = route.hops.len() - 1;
        result.route = route.channel_ids();
        result.hop_fees_msat = route.hops.iter().skip(1).map(|h| h.fee_msat).collect();
        result.total_fee_msat = route.total_fee_msat;

        let lock = HtlcLock::generate(&mut self.rng);
        let fail_at = if self.config.failure_probability > 0.0
            && self.rng.gen_bool(self.config.failure_probability.min(1.0))
        {
            Some(self.rng.gen_range(0..route.hops.len()))
        } else {
            None
        };
        let latency = self.config.latency.sample(&mut self.rng).unwrap_or(0.0);
        let latency_ns = seconds_to_ns(latency);
        result.latency_s = latency;
        result.settled_ns = start_ns + latency_ns;

        // lock phase, sender towards destination
        let mut locked = 0;
        let mut failure = None;
        for (i, hop) in route.hops.iter().enumerate() {
            if fail_at == Some(i) {
                failure = Some(FailureReason::InjectedFailure);
                break;
            }
            let ch = self.net.channel_mut(hop.channel_id).expect("route channels exist");
            let bal = ch.local_balance_mut(hop.from);
            if *bal < hop.amount_msat {
                failure = Some(FailureReason::InsufficientCapacity);
                break;
            }
            *bal -= hop.amount_msat;
            ch.in_flight_msat += hop.amount_msat;
            locked += 1;
        }
        if let Some(reason) = failure {
            for hop in route.hops[..locked].iter().rev() {
                let ch = self.net.channel_mut(hop.channel_id).expect("route channels exist");
                ch.in_flight_msat -= hop.amount_msat;
                *ch.local_balance_mut(hop.from) += hop.amount_msat;
            }
            return Err(reason);
        }

        // the destination reveals the preimage carried in the onion
        debug_assert!(lock.opens_with(&lock.preimage));
        for hop in route.hops.iter().rev() {
            let ch = self.net.channel_mut(hop.channel_id).expect("route channels exist");
            ch.in_flight_msat -= hop.amount_msat;
            *ch.local_balance_mut(hop.to) += hop.amount_msat;
        }

        let edges = route.hops.len() as u64;
        for (i, pair) in route.hops.windows(2).enumerate() {
            let (inbound, outbound) = (&pair[0], &pair[1]);
            let amt_in = inbound.amount_msat / 1000;
            let amt_out = outbound.amount_msat / 1000;
            let event = ForwardingEvent {
                timestamp_ns: start_ns + latency_ns * (i as u64 + 1) / edges,
                chan_id_in: inbound.channel_id,
                chan_id_out: outbound.channel_id,
                amt_in_sat: amt_in,
                amt_out_sat: amt_out,
                fee_sat: amt_in - amt_out,
            };
            self.histories.entry(inbound.to).or_default().push(event);
        }
        Ok(())
    }
}
