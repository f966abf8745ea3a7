use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::network::{ChannelId, Network, NodeId};

/// `base + floor(amount * rate_ppm / 1_000_000)`, in msat.
pub fn hop_fee(amount_msat: u64, base_fee_msat: u64, rate_ppm: u64) -> u64 {
    let proportional = u128::from(amount_msat) * u128::from(rate_ppm) / 1_000_000;
    base_fee_msat + proportional as u64
}

/// One directed edge of a route.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RouteHop {
    pub channel_id: ChannelId,
    pub from: NodeId,
    pub to: NodeId,
    /// Value carried over this edge.
    pub amount_msat: u64,
    /// Fee kept by `from` for forwarding onto this edge (zero at the source).
    pub fee_msat: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Route {
    pub source: NodeId,
    pub destination: NodeId,
    pub amount_msat: u64,
    pub hops: Vec<RouteHop>,
    pub total_fee_msat: u64,
}

impl Route {
    /// Forwarding nodes in path order.
    pub fn intermediaries(&self) -> Vec<NodeId> {
        self.hops.iter().skip(1).map(|h| h.from).collect()
    }

    pub fn channel_ids(&self) -> Vec<ChannelId> {
        self.hops.iter().map(|h| h.channel_id).collect()
    }

    /// Structural check: hops chain from source to destination, every
    /// channel joins its hop's endpoints, and amounts and fees add up.
    pub fn is_well_formed(&self, net: &Network) -> bool {
        let Some(first) = self.hops.first() else { return false };
        if first.from != self.source || self.hops.last().unwrap().to != self.destination {
            return false;
        }
        if first.fee_msat != 0 || self.hops.last().unwrap().amount_msat != self.amount_msat {
            return false;
        }
        for pair in self.hops.windows(2) {
            if pair[0].to != pair[1].from || pair[0].amount_msat != pair[1].amount_msat + pair[1].fee_msat {
                return false;
            }
        }
        let joined = self.hops.iter().all(|h| {
            net.channel(h.channel_id)
                .map(|c| c.has_endpoint(h.from) && c.peer_of(h.from) == Some(h.to))
                .unwrap_or(false)
        });
        joined && self.total_fee_msat == self.hops.iter().map(|h| h.fee_msat).sum::<u64>()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteConstraints {
    /// Demand exactly this many forwarding nodes.
    pub fixed_intermediary_hops: Option<usize>,
    /// Force the first edge onto this channel.
    pub first_hop: Option<ChannelId>,
    pub max_intermediaries: usize,
    /// Treat every channel as having enough balance (topology-only search).
    pub ignore_balances: bool,
}

impl Default for RouteConstraints {
    fn default() -> Self {
        RouteConstraints {
            fixed_intermediary_hops: None,
            first_hop: None,
            max_intermediaries: 20,
            ignore_balances: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RouteError {
    #[error("source and destination are the same node")]
    SelfPayment,
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("amount must be positive")]
    ZeroAmount,
    #[error("no feasible route")]
    NoRoute,
}

#[derive(Clone)]
struct Label {
    fee_msat: u64,
    /// Amount the edge entering this node must carry.
    carry_msat: u64,
    hops: Vec<RouteHop>,
}

impl Label {
    fn key(&self) -> (u64, Vec<ChannelId>) {
        (self.fee_msat, self.hops.iter().map(|h| h.channel_id).collect())
    }

    fn visits(&self, node: NodeId) -> bool {
        self.hops.iter().any(|h| h.from == node || h.to == node)
    }
}

/// Source route selection.
///
/// Searches backwards from the destination one edge count at a time, so
/// the first edge count that reaches the source gives the minimum hop
/// count. Among routes of that length the lowest total fee wins, then the
/// lexicographically smallest channel-id sequence. Fees are computed on the
/// amount each forwarder passes on, so per-node labels keep only the
/// cheapest suffix: a cheaper suffix never makes the prefix dearer.
///
/// Private channels are only usable as the first edge (the sender's own)
/// or the last edge (destination-supplied hint).
pub fn find_route(
    net: &Network,
    source: NodeId,
    destination: NodeId,
    amount_sat: u64,
    constraints: &RouteConstraints,
) -> Result<Route, RouteError> {
    net.node(source).map_err(|_| RouteError::UnknownNode(source))?;
    net.node(destination).map_err(|_| RouteError::UnknownNode(destination))?;
    if source == destination {
        return Err(RouteError::SelfPayment);
    }
    if amount_sat == 0 {
        return Err(RouteError::ZeroAmount);
    }
    let amount_msat = amount_sat * 1000;
    let max_edges = constraints
        .fixed_intermediary_hops
        .unwrap_or(constraints.max_intermediaries)
        + 1;

    let mut layer: BTreeMap<NodeId, Label> = BTreeMap::new();
    layer.insert(destination, Label { fee_msat: 0, carry_msat: amount_msat, hops: Vec::new() });

    for edges in 1..=max_edges {
        let last_layer = edges == max_edges;
        let may_finish = constraints.fixed_intermediary_hops.is_none() || last_layer;
        let mut next: BTreeMap<NodeId, Label> = BTreeMap::new();
        let mut done: Option<Label> = None;

        for (&v, label) in &layer {
            for ch in net.open_channels_of(v) {
                let u = ch.peer_of(v).expect("channel touches v");
                if u == destination || label.visits(u) {
                    continue;
                }
                if ch.private && u != source && v != destination {
                    continue;
                }
                if u != source && !net.is_online(u) {
                    continue;
                }
                if u == source {
                    if !may_finish {
                        continue;
                    }
                    if constraints.first_hop.is_some_and(|f| f != ch.channel_id) {
                        continue;
                    }
                }
                if !constraints.ignore_balances
                    && ch.local_balance_msat(u).unwrap_or(0) < label.carry_msat
                {
                    continue;
                }
                let fee = if u == source {
                    0
                } else {
                    let p = ch.policy_of(u).expect("u is an endpoint");
                    hop_fee(label.carry_msat, p.base_fee_msat, p.proportional_rate_ppm)
                };
                let mut hops = Vec::with_capacity(label.hops.len() + 1);
                hops.push(RouteHop {
                    channel_id: ch.channel_id,
                    from: u,
                    to: v,
                    amount_msat: label.carry_msat,
                    fee_msat: fee,
                });
                hops.extend(label.hops.iter().cloned());
                let cand = Label { fee_msat: label.fee_msat + fee, carry_msat: label.carry_msat + fee, hops };

                let slot = if u == source {
                    &mut done
                } else if last_layer {
                    continue;
                } else {
                    next.entry(u).or_insert_with(|| cand.clone());
                    let cur = next.get_mut(&u).unwrap();
                    if cand.key() < cur.key() {
                        *cur = cand;
                    }
                    continue;
                };
                if slot.as_ref().is_none_or(|d| cand.key() < d.key()) {
                    *slot = Some(cand);
                }
            }
        }

        if let Some(best) = done {
            return Ok(Route {
                source,
                destination,
                amount_msat,
                total_fee_msat: best.fee_msat,
                hops: best.hops,
            });
        }
        if next.is_empty() {
            break;
        }
        layer = next;
    }
    Err(RouteError::NoRoute)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{FeePolicy, NetworkConfig, Role};

    #[test]
    fn hop_fee_examples() {
        assert_eq!(hop_fee(115_000, 1000, 1), 1000);
        assert_eq!(hop_fee(123_456_789, 0, 0), 0);
        assert_eq!(hop_fee(1_000_000_000, 1000, 1), 2000);
        assert_eq!(hop_fee(u64::MAX, 0, 1_000_000), u64::MAX);
    }

    fn alice_charlie_bob() -> (Network, NodeId, NodeId, NodeId) {
        let mut net = Network::new(NetworkConfig::default(), 0);
        let a = net.add_node("alice", Role::Relay, 0).unwrap();
        let c = net.add_node("charlie", Role::Relay, 0).unwrap();
        let b = net.add_node("bob", Role::Relay, 0).unwrap();
        net.insert_genesis_channel(a, c, 100_000, 100_000, false, FeePolicy::default()).unwrap();
        net.insert_genesis_channel(c, b, 100_000, 100_000, false, FeePolicy::default()).unwrap();
        (net, a, c, b)
    }

    #[test]
    fn two_hop_route_via_charlie() {
        let (net, a, c, b) = alice_charlie_bob();
        let r = find_route(&net, a, b, 1_000, &RouteConstraints::default()).unwrap();
        assert_eq!(r.hops.len(), 2);
        assert_eq!(r.intermediaries(), vec![c]);
        assert_eq!(r.total_fee_msat, 1_000 + 1);
        assert!(r.is_well_formed(&net));
    }

    #[test]
    fn degenerate_requests() {
        let (net, a, _, b) = alice_charlie_bob();
        let c = RouteConstraints::default();
        assert_eq!(find_route(&net, a, a, 10, &c), Err(RouteError::SelfPayment));
        assert_eq!(find_route(&net, a, b, 0, &c), Err(RouteError::ZeroAmount));
        assert_eq!(find_route(&net, a, NodeId(77), 10, &c), Err(RouteError::UnknownNode(NodeId(77))));
        // bob holds nothing on his side, so he cannot pay alice
        assert_eq!(find_route(&net, b, a, 10, &c), Err(RouteError::NoRoute));
    }

    #[test]
    fn prefers_fewer_hops_then_lower_fee() {
        let mut net = Network::new(NetworkConfig::default(), 0);
        let s = net.add_node("s", Role::Relay, 0).unwrap();
        let x = net.add_node("x", Role::Relay, 0).unwrap();
        let y = net.add_node("y", Role::Relay, 0).unwrap();
        let z = net.add_node("z", Role::Relay, 0).unwrap();
        let d = net.add_node("d", Role::Relay, 0).unwrap();
        let cheap = FeePolicy { base_fee_msat: 10, proportional_rate_ppm: 0 };
        net.insert_genesis_channel(s, x, 50_000, 50_000, false, FeePolicy::default()).unwrap();
        net.insert_genesis_channel(x, d, 50_000, 50_000, false, FeePolicy::default()).unwrap();
        net.insert_genesis_channel(s, y, 50_000, 50_000, false, cheap).unwrap();
        let yd = net.insert_genesis_channel(y, d, 50_000, 50_000, false, cheap).unwrap();
        net.insert_genesis_channel(s, z, 50_000, 50_000, false, FeePolicy::ZERO).unwrap();
        let zy = net.insert_genesis_channel(z, y, 50_000, 50_000, false, FeePolicy::ZERO).unwrap();
        let r = find_route(&net, s, d, 100, &RouteConstraints::default()).unwrap();
        assert_eq!(r.intermediaries(), vec![y]);
        assert_eq!(r.total_fee_msat, 10);
        // forcing two forwarders takes the zero-fee detour through z
        let fixed = RouteConstraints { fixed_intermediary_hops: Some(2), ..Default::default() };
        let r2 = find_route(&net, s, d, 100, &fixed).unwrap();
        assert_eq!(r2.intermediaries(), vec![z, y]);
        assert_eq!(r2.channel_ids()[1..], [zy, yd]);
    }

    #[test]
    fn equal_routes_break_ties_by_channel_id() {
        let mut net = Network::new(NetworkConfig::default(), 0);
        let s = net.add_node("s", Role::Relay, 0).unwrap();
        let p = net.add_node("p", Role::Relay, 0).unwrap();
        let q = net.add_node("q", Role::Relay, 0).unwrap();
        let d = net.add_node("d", Role::Relay, 0).unwrap();
        let sq = net.insert_genesis_channel(s, q, 50_000, 50_000, false, FeePolicy::default()).unwrap();
        net.insert_genesis_channel(q, d, 50_000, 50_000, false, FeePolicy::default()).unwrap();
        net.insert_genesis_channel(s, p, 50_000, 50_000, false, FeePolicy::default()).unwrap();
        net.insert_genesis_channel(p, d, 50_000, 50_000, false, FeePolicy::default()).unwrap();
        let r = find_route(&net, s, d, 100, &RouteConstraints::default()).unwrap();
        assert_eq!(r.hops[0].channel_id, sq);
    }

    #[test]
    fn private_channels_only_at_the_ends() {
        let mut net = Network::new(NetworkConfig::default(), 0);
        let s = net.add_node("s", Role::Relay, 0).unwrap();
        let m = net.add_node("m", Role::Relay, 0).unwrap();
        let hidden = net.add_node("hidden", Role::CncServer, 0).unwrap();
        let d = net.add_node("d", Role::Relay, 0).unwrap();
        net.insert_genesis_channel(s, m, 50_000, 50_000, false, FeePolicy::default()).unwrap();
        net.insert_genesis_channel(m, hidden, 50_000, 50_000, true, FeePolicy::default()).unwrap();
        net.insert_genesis_channel(hidden, d, 50_000, 50_000, true, FeePolicy::default()).unwrap();
        let c = RouteConstraints::default();
        // hidden cannot be used as a forwarder through its private channels
        assert_eq!(find_route(&net, s, d, 10, &c), Err(RouteError::NoRoute));
        // but it is reachable as a destination, and can send out
        assert!(find_route(&net, s, hidden, 10, &c).is_ok());
        assert!(find_route(&net, hidden, d, 10, &c).is_ok());
    }

    #[test]
    fn balance_must_cover_amount_plus_downstream_fees() {
        let mut net = Network::new(NetworkConfig::default(), 0);
        let s = net.add_node("s", Role::Relay, 0).unwrap();
        let m = net.add_node("m", Role::Relay, 0).unwrap();
        let d = net.add_node("d", Role::Relay, 0).unwrap();
        net.insert_genesis_channel(s, m, 100_000, 100, false, FeePolicy::default()).unwrap();
        net.insert_genesis_channel(m, d, 100_000, 100, false, FeePolicy::default()).unwrap();
        let c = RouteConstraints::default();
        assert!(find_route(&net, s, d, 99, &c).is_ok());
        // 100 sat + 1 sat fee does not fit a 100 sat balance
        assert_eq!(find_route(&net, s, d, 100, &c), Err(RouteError::NoRoute));
        let loose = RouteConstraints { ignore_balances: true, ..Default::default() };
        assert!(find_route(&net, s, d, 100, &loose).is_ok());
    }

    #[test]
    fn offline_forwarders_are_skipped() {
        let (mut net, a, c, b) = alice_charlie_bob();
        net.set_online(c, false).unwrap();
        assert_eq!(find_route(&net, a, b, 10, &RouteConstraints::default()), Err(RouteError::NoRoute));
    }

    #[test]
    fn first_hop_pin() {
        let mut net = Network::new(NetworkConfig::default(), 0);
        let s = net.add_node("s", Role::Relay, 0).unwrap();
        let d = net.add_node("d", Role::Relay, 0).unwrap();
        net.insert_genesis_channel(s, d, 50_000, 50_000, false, FeePolicy::default()).unwrap();
        let second = net.insert_genesis_channel(s, d, 50_000, 50_000, false, FeePolicy::default()).unwrap();
        let pinned = RouteConstraints { first_hop: Some(second), ..Default::default() };
        let r = find_route(&net, s, d, 10, &pinned).unwrap();
        assert_eq!(r.channel_ids(), vec![second]);
        assert_eq!(r.total_fee_msat, 0);
    }
}
