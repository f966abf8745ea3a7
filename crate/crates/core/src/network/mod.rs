//! Payment-channel graph, on-chain accounting and channel lifecycle.
//!
//! All channel balances are integer millisatoshi; on-chain balances and the
//! ledger interface are whole satoshi. Sub-satoshi channel dust trimmed at
//! close goes to the miner sink, so the global sum
//! `on-chain + open capacity + miner sink` never changes after setup.

mod topology;

pub use topology::{ChannelSpec, NodeSpec, RandomGraphParams, TopologySpec};

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChannelId(pub u64);

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Compressed-point-shaped node key. Derived from a hash, never a real key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PublicKey(pub [u8; 33]);

impl PublicKey {
    pub fn derive(seed: u64, alias: &str) -> Self {
        let digest = Sha256::new()
            .chain_update(b"node-key")
            .chain_update(seed.to_be_bytes())
            .chain_update(alias.as_bytes())
            .finalize();
        let mut key = [0u8; 33];
        key[0] = 0x02 | (digest[31] & 1);
        key[1..].copy_from_slice(&digest);
        PublicKey(key)
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({self})")
    }
}

impl fmt::Display for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl std::str::FromStr for PublicKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = hex::decode(s).map_err(|e| e.to_string())?;
        let key: [u8; 33] = bytes
            .try_into()
            .map_err(|_| "public key must be 33 bytes".to_string())?;
        Ok(PublicKey(key))
    }
}

impl Serialize for PublicKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Botmaster,
    CncServer,
    Collector,
    Relay,
}

impl Role {
    /// Operator-controlled roles run as unadvertised nodes.
    pub fn is_private(self) -> bool {
        !matches!(self, Role::Relay)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NodeRecord {
    pub node_id: NodeId,
    pub alias: String,
    pub public_key: PublicKey,
    pub role: Role,
    pub publicly_advertised: bool,
    pub online: bool,
    pub onchain_balance_sat: u64,
}

/// Forwarding fee schedule an endpoint applies to its outgoing direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeePolicy {
    pub base_fee_msat: u64,
    pub proportional_rate_ppm: u64,
}

impl Default for FeePolicy {
    fn default() -> Self {
        FeePolicy { base_fee_msat: 1000, proportional_rate_ppm: 1 }
    }
}

impl FeePolicy {
    pub const ZERO: FeePolicy = FeePolicy { base_fee_msat: 0, proportional_rate_ppm: 0 };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelStatus {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChannelState {
    pub channel_id: ChannelId,
    pub endpoint_a: NodeId,
    pub endpoint_b: NodeId,
    pub capacity_sat: u64,
    pub balance_a_msat: u64,
    pub balance_b_msat: u64,
    /// Value locked in pending HTLCs; zero whenever no payment is mid-flight.
    pub in_flight_msat: u64,
    pub private: bool,
    pub policy_a: FeePolicy,
    pub policy_b: FeePolicy,
    pub status: ChannelStatus,
}

impl ChannelState {
    pub fn is_open(&self) -> bool {
        self.status == ChannelStatus::Open
    }

    pub fn has_endpoint(&self, node: NodeId) -> bool {
        self.endpoint_a == node || self.endpoint_b == node
    }

    /// The endpoint opposite `node`.
    pub fn peer_of(&self, node: NodeId) -> Option<NodeId> {
        if node == self.endpoint_a {
            Some(self.endpoint_b)
        } else if node == self.endpoint_b {
            Some(self.endpoint_a)
        } else {
            None
        }
    }

    /// Balance `node` can push through this channel.
    pub fn local_balance_msat(&self, node: NodeId) -> Option<u64> {
        if node == self.endpoint_a {
            Some(self.balance_a_msat)
        } else if node == self.endpoint_b {
            Some(self.balance_b_msat)
        } else {
            None
        }
    }

    pub(crate) fn local_balance_mut(&mut self, node: NodeId) -> &mut u64 {
        if node == self.endpoint_a {
            &mut self.balance_a_msat
        } else {
            debug_assert_eq!(node, self.endpoint_b);
            &mut self.balance_b_msat
        }
    }

    pub fn policy_of(&self, node: NodeId) -> Option<FeePolicy> {
        if node == self.endpoint_a {
            Some(self.policy_a)
        } else if node == self.endpoint_b {
            Some(self.policy_b)
        } else {
            None
        }
    }

    pub fn capacity_msat(&self) -> u64 {
        self.capacity_sat * 1000
    }

    /// `balance_a + balance_b + in_flight == capacity`.
    pub fn is_balanced(&self) -> bool {
        self.balance_a_msat + self.balance_b_msat + self.in_flight_msat == self.capacity_msat()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxType {
    Funding,
    Closing,
    Sweep,
}

/// One on-chain transaction as seen by the ledger log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEvent {
    pub seq: u64,
    pub tx_type: TxType,
    pub node: NodeId,
    pub amount_sat: u64,
    pub fee_sat: u64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub dust_msat: u64,
}

fn is_zero(v: &u64) -> bool {
    *v == 0
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Ledger {
    pub miner_fee_sink_msat: u64,
    pub events: Vec<LedgerEvent>,
}

impl Ledger {
    fn record(&mut self, tx_type: TxType, node: NodeId, amount_sat: u64, fee_sat: u64, dust_msat: u64) {
        let seq = self.events.len() as u64 + 1;
        self.events.push(LedgerEvent { seq, tx_type, node, amount_sat, fee_sat, dust_msat });
    }

    /// Writes the event log as one JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for ev in &self.events {
            serde_json::to_writer(&mut out, ev)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// On-chain fees (whole sat plus trimmed dust) attributed to `node`, in msat.
    pub fn fees_paid_by_msat(&self, node: NodeId) -> u64 {
        self.events
            .iter()
            .filter(|e| e.node == node)
            .map(|e| e.fee_sat * 1000 + e.dust_msat)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub open_fee_sat: u64,
    pub close_fee_sat: u64,
    pub sweep_fee_sat: u64,
    pub min_channel_capacity_sat: u64,
    pub channels_per_server: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            open_fee_sat: 154,
            close_fee_sat: 0,
            sweep_fee_sat: 0,
            min_channel_capacity_sat: 20_000,
            channels_per_server: 3,
        }
    }
}

/// On-chain fees to form a botnet of `n_servers` C&C servers. Locked
/// capacity is returned on close and is not a cost.
pub fn formation_cost(config: &NetworkConfig, n_servers: u64) -> u64 {
    n_servers * config.channels_per_server as u64 * config.open_fee_sat
}

/// Result of a cooperative close.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Settlement {
    pub channel_id: ChannelId,
    pub closer: NodeId,
    pub settled_a_sat: u64,
    pub settled_b_sat: u64,
    pub close_fee_sat: u64,
    pub dust_msat: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetworkError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown channel {0}")]
    UnknownChannel(ChannelId),
    #[error("channel {0} is already closed")]
    ChannelClosed(ChannelId),
    #[error("node {0} is offline")]
    NodeOffline(NodeId),
    #[error("node {node} has {available} sat on-chain, needs {required}")]
    InsufficientFunds { node: NodeId, available: u64, required: u64 },
    #[error("capacity {capacity} sat is below the {minimum} sat minimum")]
    BelowMinimumCapacity { capacity: u64, minimum: u64 },
    #[error("a node cannot open a channel to itself")]
    SelfChannel,
    #[error("need {required} public relays, only {available} eligible")]
    NotEnoughPublicNodes { required: usize, available: usize },
    #[error("channel {0} has payments in flight")]
    HtlcInFlight(ChannelId),
    #[error("node {0} is not an endpoint of channel {1}")]
    NotAnEndpoint(NodeId, ChannelId),
    #[error("duplicate node alias {0:?}")]
    DuplicateAlias(String),
    #[error("invalid channel split: {0}")]
    InvalidSplit(String),
}

/// Channel id and endpoints, what a channel-info lookup reveals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelInfo {
    pub chan_id: ChannelId,
    pub node1: NodeId,
    pub node2: NodeId,
}

#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
    key_seed: u64,
    nodes: Vec<NodeRecord>,
    channels: BTreeMap<ChannelId, ChannelState>,
    by_node: BTreeMap<NodeId, Vec<ChannelId>>,
    by_key: BTreeMap<PublicKey, NodeId>,
    ledger: Ledger,
    next_channel: u64,
}

impl Network {
    pub fn new(config: NetworkConfig, key_seed: u64) -> Self {
        Network {
            config,
            key_seed,
            nodes: Vec::new(),
            channels: BTreeMap::new(),
            by_node: BTreeMap::new(),
            by_key: BTreeMap::new(),
            ledger: Ledger::default(),
            next_channel: 1,
        }
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    /// Adds a node. Relays are advertised; every other role is private.
    pub fn add_node(&mut self, alias: &str, role: Role, onchain_sat: u64) -> Result<NodeId, NetworkError> {
        if self.nodes.iter().any(|n| n.alias == alias) {
            return Err(NetworkError::DuplicateAlias(alias.to_string()));
        }
        let node_id = NodeId(self.nodes.len() as u32);
        let public_key = PublicKey::derive(self.key_seed, alias);
        self.nodes.push(NodeRecord {
            node_id,
            alias: alias.to_string(),
            public_key,
            role,
            publicly_advertised: !role.is_private(),
            online: true,
            onchain_balance_sat: onchain_sat,
        });
        self.by_node.insert(node_id, Vec::new());
        self.by_key.insert(public_key, node_id);
        Ok(node_id)
    }

    pub fn node(&self, id: NodeId) -> Result<&NodeRecord, NetworkError> {
        self.nodes.get(id.0 as usize).ok_or(NetworkError::UnknownNode(id))
    }

    fn node_mut(&mut self, id: NodeId) -> Result<&mut NodeRecord, NetworkError> {
        self.nodes.get_mut(id.0 as usize).ok_or(NetworkError::UnknownNode(id))
    }

    pub fn nodes(&self) -> &[NodeRecord] {
        &self.nodes
    }

    pub fn node_by_alias(&self, alias: &str) -> Option<NodeId> {
        self.nodes.iter().find(|n| n.alias == alias).map(|n| n.node_id)
    }

    pub fn node_by_key(&self, key: &PublicKey) -> Option<NodeId> {
        self.by_key.get(key).copied()
    }

    pub fn public_key(&self, id: NodeId) -> Result<PublicKey, NetworkError> {
        Ok(self.node(id)?.public_key)
    }

    pub fn is_online(&self, id: NodeId) -> bool {
        self.node(id).map(|n| n.online).unwrap_or(false)
    }

    pub fn set_online(&mut self, id: NodeId, online: bool) -> Result<(), NetworkError> {
        self.node_mut(id)?.online = online;
        Ok(())
    }

    pub fn onchain_balance(&self, id: NodeId) -> Result<u64, NetworkError> {
        Ok(self.node(id)?.onchain_balance_sat)
    }

    pub fn channel(&self, id: ChannelId) -> Result<&ChannelState, NetworkError> {
        self.channels.get(&id).ok_or(NetworkError::UnknownChannel(id))
    }

    pub(crate) fn channel_mut(&mut self, id: ChannelId) -> Result<&mut ChannelState, NetworkError> {
        self.channels.get_mut(&id).ok_or(NetworkError::UnknownChannel(id))
    }

    pub fn channels(&self) -> impl Iterator<Item = &ChannelState> {
        self.channels.values()
    }

    /// Ids of every channel (open or closed) touching `node`, ascending.
    pub fn channels_of(&self, node: NodeId) -> &[ChannelId] {
        self.by_node.get(&node).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn open_channels_of(&self, node: NodeId) -> impl Iterator<Item = &ChannelState> + '_ {
        self.channels_of(node)
            .iter()
            .filter_map(move |id| self.channels.get(id))
            .filter(|c| c.is_open())
    }

    /// Sum of `node`'s side of every open channel.
    pub fn local_balance_msat(&self, node: NodeId) -> u64 {
        self.open_channels_of(node)
            .filter_map(|c| c.local_balance_msat(node))
            .sum()
    }

    /// Endpoint lookup for a channel id.
    pub fn channel_info(&self, id: ChannelId) -> Option<ChannelInfo> {
        self.channels.get(&id).map(|c| ChannelInfo {
            chan_id: c.channel_id,
            node1: c.endpoint_a,
            node2: c.endpoint_b,
        })
    }

    pub fn channel_directory(&self) -> Vec<ChannelInfo> {
        self.channels.keys().filter_map(|&id| self.channel_info(id)).collect()
    }

    fn insert_channel(&mut self, mut state: ChannelState) -> ChannelId {
        let id = ChannelId(self.next_channel);
        self.next_channel += 1;
        state.channel_id = id;
        self.by_node.entry(state.endpoint_a).or_default().push(id);
        self.by_node.entry(state.endpoint_b).or_default().push(id);
        self.channels.insert(id, state);
        id
    }

    /// Places a channel that already exists when the simulation starts,
    /// without touching on-chain balances or the ledger.
    pub fn insert_genesis_channel(
        &mut self,
        a: NodeId,
        b: NodeId,
        capacity_sat: u64,
        balance_a_sat: u64,
        private: bool,
        policy: FeePolicy,
    ) -> Result<ChannelId, NetworkError> {
        self.node(a)?;
        self.node(b)?;
        if a == b {
            return Err(NetworkError::SelfChannel);
        }
        if balance_a_sat > capacity_sat {
            return Err(NetworkError::InvalidSplit(format!(
                "{balance_a_sat} sat exceeds capacity {capacity_sat}"
            )));
        }
        if capacity_sat == 0 {
            return Err(NetworkError::InvalidSplit("zero capacity".into()));
        }
        Ok(self.insert_channel(ChannelState {
            channel_id: ChannelId(0),
            endpoint_a: a,
            endpoint_b: b,
            capacity_sat,
            balance_a_msat: balance_a_sat * 1000,
            balance_b_msat: (capacity_sat - balance_a_sat) * 1000,
            in_flight_msat: 0,
            private,
            policy_a: policy,
            policy_b: policy,
            status: ChannelStatus::Open,
        }))
    }

    /// Funds a channel from `funder`'s on-chain wallet. The full capacity
    /// starts on the funder's side.
    pub fn open_channel(
        &mut self,
        funder: NodeId,
        peer: NodeId,
        capacity_sat: u64,
        private: bool,
        policy: FeePolicy,
    ) -> Result<ChannelState, NetworkError> {
        let fee = self.config.open_fee_sat;
        self.check_can_open(funder, peer, capacity_sat, 1)?;
        self.node_mut(funder)?.onchain_balance_sat -= capacity_sat + fee;
        self.ledger.miner_fee_sink_msat += fee * 1000;
        self.ledger.record(TxType::Funding, funder, capacity_sat, fee, 0);
        let id = self.insert_channel(ChannelState {
            channel_id: ChannelId(0),
            endpoint_a: funder,
            endpoint_b: peer,
            capacity_sat,
            balance_a_msat: capacity_sat * 1000,
            balance_b_msat: 0,
            in_flight_msat: 0,
            private,
            policy_a: policy,
            policy_b: policy,
            status: ChannelStatus::Open,
        });
        Ok(self.channels[&id].clone())
    }

    fn check_can_open(&self, funder: NodeId, peer: NodeId, capacity_sat: u64, count: u64) -> Result<(), NetworkError> {
        let rec = self.node(funder)?;
        self.node(peer)?;
        if funder == peer {
            return Err(NetworkError::SelfChannel);
        }
        if !rec.online {
            return Err(NetworkError::NodeOffline(funder));
        }
        if capacity_sat < self.config.min_channel_capacity_sat {
            return Err(NetworkError::BelowMinimumCapacity {
                capacity: capacity_sat,
                minimum: self.config.min_channel_capacity_sat,
            });
        }
        let required = count * (capacity_sat + self.config.open_fee_sat);
        if rec.onchain_balance_sat < required {
            return Err(NetworkError::InsufficientFunds {
                node: funder,
                available: rec.onchain_balance_sat,
                required,
            });
        }
        Ok(())
    }

    /// Cooperative close. Each side receives its balance rounded down to
    /// whole satoshi; the trimmed remainder and the close fee go to miners.
    /// The close fee comes out of the closer's settlement, then its wallet.
    pub fn close_channel(&mut self, id: ChannelId, closer: NodeId) -> Result<Settlement, NetworkError> {
        let fee = self.config.close_fee_sat;
        let ch = self.channel(id)?;
        if !ch.is_open() {
            return Err(NetworkError::ChannelClosed(id));
        }
        if !ch.has_endpoint(closer) {
            return Err(NetworkError::NotAnEndpoint(closer, id));
        }
        if ch.in_flight_msat != 0 {
            return Err(NetworkError::HtlcInFlight(id));
        }
        let (a, b) = (ch.endpoint_a, ch.endpoint_b);
        let settled_a = ch.balance_a_msat / 1000;
        let settled_b = ch.balance_b_msat / 1000;
        let dust_a = ch.balance_a_msat % 1000;
        let dust_b = ch.balance_b_msat % 1000;
        let closer_share = if closer == a { settled_a } else { settled_b };
        let closer_wallet = self.node(closer)?.onchain_balance_sat;
        if closer_share + closer_wallet < fee {
            return Err(NetworkError::InsufficientFunds {
                node: closer,
                available: closer_share + closer_wallet,
                required: fee,
            });
        }

        let ch = self.channel_mut(id)?;
        ch.status = ChannelStatus::Closed;
        ch.balance_a_msat = 0;
        ch.balance_b_msat = 0;
        self.node_mut(a)?.onchain_balance_sat += settled_a;
        self.node_mut(b)?.onchain_balance_sat += settled_b;
        self.node_mut(closer)?.onchain_balance_sat -= fee;
        self.ledger.miner_fee_sink_msat += fee * 1000 + dust_a + dust_b;
        let fee_of = |n: NodeId| if n == closer { fee } else { 0 };
        self.ledger.record(TxType::Closing, a, settled_a, fee_of(a), dust_a);
        self.ledger.record(TxType::Closing, b, settled_b, fee_of(b), dust_b);
        Ok(Settlement {
            channel_id: id,
            closer,
            settled_a_sat: settled_a,
            settled_b_sat: settled_b,
            close_fee_sat: fee,
            dust_msat: dust_a + dust_b,
        })
    }

    /// Public relays eligible as autopilot peers of `node`, ascending id.
    fn autopilot_candidates(&self, node: NodeId) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.publicly_advertised && n.online && n.node_id != node)
            .map(|n| n.node_id)
            .collect()
    }

    /// Opens `k` private channels from `node` to `k` distinct public relays
    /// picked by `rng`. Funds are checked for all channels before any opens.
    pub fn autopilot_open<R: Rng + ?Sized>(
        &mut self,
        node: NodeId,
        k: usize,
        capacity_sat: u64,
        policy: FeePolicy,
        rng: &mut R,
    ) -> Result<Vec<ChannelState>, NetworkError> {
        let candidates = self.autopilot_candidates(node);
        if candidates.len() < k {
            return Err(NetworkError::NotEnoughPublicNodes { required: k, available: candidates.len() });
        }
        if let Some(&first) = candidates.first() {
            self.check_can_open(node, first, capacity_sat, k as u64)?;
        }
        let peers: Vec<NodeId> = candidates.choose_multiple(rng, k).copied().collect();
        peers
            .into_iter()
            .map(|peer| self.open_channel(node, peer, capacity_sat, true, policy))
            .collect()
    }

    /// Has `k` distinct public relays (from `pool`, or all public relays)
    /// each fund a private channel toward `node`, giving it receive
    /// capacity. Relays that cannot afford the channel are skipped.
    pub fn autopilot_accept<R: Rng + ?Sized>(
        &mut self,
        node: NodeId,
        k: usize,
        capacity_sat: u64,
        policy: FeePolicy,
        pool: Option<&[NodeId]>,
        rng: &mut R,
    ) -> Result<Vec<ChannelState>, NetworkError> {
        self.node(node)?;
        let need = capacity_sat + self.config.open_fee_sat;
        let candidates: Vec<NodeId> = match pool {
            Some(p) => p.to_vec(),
            None => self.autopilot_candidates(node),
        }
        .into_iter()
        .filter(|&r| {
            r != node
                && self
                    .node(r)
                    .map(|n| n.online && n.publicly_advertised && n.onchain_balance_sat >= need)
                    .unwrap_or(false)
        })
        .collect();
        if candidates.len() < k {
            return Err(NetworkError::NotEnoughPublicNodes { required: k, available: candidates.len() });
        }
        if capacity_sat < self.config.min_channel_capacity_sat {
            return Err(NetworkError::BelowMinimumCapacity {
                capacity: capacity_sat,
                minimum: self.config.min_channel_capacity_sat,
            });
        }
        let peers: Vec<NodeId> = candidates.choose_multiple(rng, k).copied().collect();
        peers
            .into_iter()
            .map(|relay| self.open_channel(relay, node, capacity_sat, true, policy))
            .collect()
    }

    /// Moves `from`'s entire on-chain balance, less the sweep fee, to `to`.
    /// Returns the amount that arrived.
    pub fn sweep_onchain(&mut self, from: NodeId, to: NodeId) -> Result<u64, NetworkError> {
        let fee = self.config.sweep_fee_sat;
        let available = self.node(from)?.onchain_balance_sat;
        self.node(to)?;
        if available == 0 {
            return Ok(0);
        }
        if available < fee {
            return Err(NetworkError::InsufficientFunds { node: from, available, required: fee });
        }
        let moved = available - fee;
        self.node_mut(from)?.onchain_balance_sat = 0;
        self.node_mut(to)?.onchain_balance_sat += moved;
        self.ledger.miner_fee_sink_msat += fee * 1000;
        self.ledger.record(TxType::Sweep, from, moved, fee, 0);
        Ok(moved)
    }

    /// `on-chain + open capacity + miner sink`, in msat.
    pub fn total_value_msat(&self) -> u64 {
        let onchain: u64 = self.nodes.iter().map(|n| n.onchain_balance_sat * 1000).sum();
        let locked: u64 = self
            .channels
            .values()
            .filter(|c| c.is_open())
            .map(ChannelState::capacity_msat)
            .sum();
        onchain + locked + self.ledger.miner_fee_sink_msat
    }

    /// On-chain balance plus local side of open channels, in msat.
    pub fn wealth_msat(&self, node: NodeId) -> u64 {
        self.node(node).map(|n| n.onchain_balance_sat * 1000).unwrap_or(0) + self.local_balance_msat(node)
    }

    /// Every open channel satisfies `a + b + in_flight == capacity`.
    pub fn channels_balanced(&self) -> bool {
        self.channels.values().filter(|c| c.is_open()).all(ChannelState::is_balanced)
    }

    /// Writes the channel directory as one JSON object per line.
    pub fn write_channel_directory<W: Write>(&self, mut out: W) -> io::Result<()> {
        for info in self.channel_directory() {
            serde_json::to_writer(&mut out, &info)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net() -> Network {
        Network::new(NetworkConfig::default(), 7)
    }

    fn with_relays(net: &mut Network, n: usize) -> Vec<NodeId> {
        (0..n)
            .map(|i| net.add_node(&format!("relay{i}"), Role::Relay, 1_000_000).unwrap())
            .collect()
    }

    #[test]
    fn private_roles_are_not_advertised() {
        let mut n = net();
        for (i, role) in [Role::Botmaster, Role::CncServer, Role::Collector].into_iter().enumerate() {
            let id = n.add_node(&format!("n{i}"), role, 0).unwrap();
            assert!(!n.node(id).unwrap().publicly_advertised);
        }
        let r = n.add_node("r", Role::Relay, 0).unwrap();
        assert!(n.node(r).unwrap().publicly_advertised);
        assert_eq!(n.add_node("r", Role::Relay, 0), Err(NetworkError::DuplicateAlias("r".into())));
    }

    #[test]
    fn three_channels_cost_60462() {
        let mut n = net();
        let relays = with_relays(&mut n, 3);
        let cnc = n.add_node("cnc1", Role::CncServer, 60_462).unwrap();
        let before = n.total_value_msat();
        for &r in &relays {
            let ch = n.open_channel(cnc, r, 20_000, true, FeePolicy::default()).unwrap();
            assert_eq!(ch.balance_a_msat, 20_000_000);
            assert_eq!(ch.balance_b_msat, 0);
        }
        assert_eq!(n.onchain_balance(cnc).unwrap(), 0);
        assert_eq!(n.open_channels_of(cnc).count(), 3);
        assert_eq!(n.ledger().miner_fee_sink_msat, 462_000);
        assert_eq!(n.total_value_msat(), before);
    }

    #[test]
    fn open_precondition_boundaries() {
        let mut n = net();
        let r = n.add_node("r", Role::Relay, 0).unwrap();
        let poor = n.add_node("poor", Role::CncServer, 20_153).unwrap();
        assert_eq!(
            n.open_channel(poor, r, 20_000, true, FeePolicy::default()),
            Err(NetworkError::InsufficientFunds { node: poor, available: 20_153, required: 20_154 })
        );
        assert_eq!(n.onchain_balance(poor).unwrap(), 20_153);
        assert!(n.ledger().events.is_empty());

        let rich = n.add_node("rich", Role::CncServer, 1_000_000).unwrap();
        assert!(matches!(
            n.open_channel(rich, r, 19_999, true, FeePolicy::default()),
            Err(NetworkError::BelowMinimumCapacity { capacity: 19_999, minimum: 20_000 })
        ));
        n.set_online(rich, false).unwrap();
        assert_eq!(
            n.open_channel(rich, r, 20_000, true, FeePolicy::default()),
            Err(NetworkError::NodeOffline(rich))
        );
        assert_eq!(n.open_channel(r, r, 20_000, false, FeePolicy::default()), Err(NetworkError::SelfChannel));
    }

    #[test]
    fn close_settles_directional_balances() {
        let mut n = net();
        let alice = n.add_node("alice", Role::Relay, 0).unwrap();
        let bob = n.add_node("bob", Role::Relay, 0).unwrap();
        let id = n.insert_genesis_channel(alice, bob, 500_000, 500_000, false, FeePolicy::default()).unwrap();
        {
            let ch = n.channel_mut(id).unwrap();
            ch.balance_a_msat = 100_000_000;
            ch.balance_b_msat = 400_000_000;
        }
        let s = n.close_channel(id, alice).unwrap();
        assert_eq!((s.settled_a_sat, s.settled_b_sat), (100_000, 400_000));
        assert_eq!(n.onchain_balance(alice).unwrap(), 100_000);
        assert_eq!(n.onchain_balance(bob).unwrap(), 400_000);
        assert_eq!(n.close_channel(id, alice), Err(NetworkError::ChannelClosed(id)));
        assert_eq!(n.close_channel(ChannelId(99), alice), Err(NetworkError::UnknownChannel(ChannelId(99))));
    }

    #[test]
    fn close_fresh_channels_returns_capacity() {
        let mut n = net();
        let relays = with_relays(&mut n, 3);
        let cnc = n.add_node("cnc", Role::CncServer, 60_462).unwrap();
        let ids: Vec<_> = relays
            .iter()
            .map(|&r| n.open_channel(cnc, r, 20_000, true, FeePolicy::default()).unwrap().channel_id)
            .collect();
        let first = n.close_channel(ids[0], cnc).unwrap();
        assert_eq!(first.settled_a_sat, 20_000);
        for &id in &ids[1..] {
            n.close_channel(id, cnc).unwrap();
        }
        assert_eq!(n.onchain_balance(cnc).unwrap(), 60_000);
    }

    #[test]
    fn close_fee_and_dust_go_to_miners() {
        let cfg = NetworkConfig { close_fee_sat: 10, ..NetworkConfig::default() };
        let mut n = Network::new(cfg, 1);
        let a = n.add_node("a", Role::Relay, 0).unwrap();
        let b = n.add_node("b", Role::Relay, 0).unwrap();
        let id = n.insert_genesis_channel(a, b, 30_000, 15_000, false, FeePolicy::default()).unwrap();
        {
            let ch = n.channel_mut(id).unwrap();
            ch.balance_a_msat -= 1_500;
            ch.balance_b_msat += 1_500;
        }
        let before = n.total_value_msat();
        let s = n.close_channel(id, b).unwrap();
        assert_eq!(s.dust_msat, 1_000);
        assert_eq!(n.onchain_balance(a).unwrap(), 14_998);
        assert_eq!(n.onchain_balance(b).unwrap(), 15_001 - 10);
        assert_eq!(n.total_value_msat(), before);
        assert_eq!(n.ledger().fees_paid_by_msat(b), 10_000 + 500);
    }

    #[test]
    fn autopilot_picks_distinct_relays_deterministically() {
        let build = || {
            let mut n = net();
            with_relays(&mut n, 50);
            let cnc = n.add_node("cnc1", Role::CncServer, 60_462).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let chans = n.autopilot_open(cnc, 3, 20_000, FeePolicy::default(), &mut rng).unwrap();
            (n, cnc, chans)
        };
        let (n, cnc, chans) = build();
        let mut peers: Vec<_> = chans.iter().map(|c| c.peer_of(cnc).unwrap()).collect();
        assert!(chans.iter().all(|c| c.private));
        assert_eq!(n.onchain_balance(cnc).unwrap(), 0);
        assert_eq!(n.ledger().miner_fee_sink_msat, 462_000);
        let (_, _, again) = build();
        let again_peers: Vec<_> = again.iter().map(|c| c.peer_of(cnc).unwrap()).collect();
        assert_eq!(peers, again_peers);
        peers.dedup();
        peers.sort();
        peers.dedup();
        assert_eq!(peers.len(), 3);
    }

    #[test]
    fn autopilot_needs_enough_public_nodes() {
        let mut n = net();
        with_relays(&mut n, 2);
        let cnc = n.add_node("cnc1", Role::CncServer, 100_000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            n.autopilot_open(cnc, 3, 20_000, FeePolicy::default(), &mut rng),
            Err(NetworkError::NotEnoughPublicNodes { required: 3, available: 2 })
        );
        with_relays_named(&mut n, "x", 5);
        let poor = n.add_node("poor", Role::CncServer, 50_000).unwrap();
        assert!(matches!(
            n.autopilot_open(poor, 3, 20_000, FeePolicy::default(), &mut rng),
            Err(NetworkError::InsufficientFunds { .. })
        ));
        assert_eq!(n.open_channels_of(poor).count(), 0);
    }

    fn with_relays_named(net: &mut Network, prefix: &str, n: usize) {
        for i in 0..n {
            net.add_node(&format!("{prefix}{i}"), Role::Relay, 1_000_000).unwrap();
        }
    }

    #[test]
    fn autopilot_accept_gives_receive_capacity() {
        let mut n = net();
        with_relays(&mut n, 10);
        let cnc = n.add_node("cnc1", Role::CncServer, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let chans = n.autopilot_accept(cnc, 3, 20_000, FeePolicy::default(), None, &mut rng).unwrap();
        assert_eq!(chans.len(), 3);
        assert_eq!(n.local_balance_msat(cnc), 0);
        assert!(chans.iter().all(|c| c.endpoint_b == cnc && c.balance_a_msat == 20_000_000));
    }

    #[test]
    fn formation_cost_table() {
        let cfg = NetworkConfig::default();
        assert_eq!(formation_cost(&cfg, 100), 46_200);
        assert_eq!(formation_cost(&cfg, 10), 4_620);
        assert_eq!(formation_cost(&cfg, 0), 0);
    }

    #[test]
    fn sweep_moves_funds_minus_fee() {
        let cfg = NetworkConfig { sweep_fee_sat: 154, ..NetworkConfig::default() };
        let mut n = Network::new(cfg, 1);
        let c = n.add_node("c", Role::Collector, 10_000).unwrap();
        let b = n.add_node("b", Role::Botmaster, 0).unwrap();
        assert_eq!(n.sweep_onchain(c, b).unwrap(), 9_846);
        assert_eq!(n.onchain_balance(b).unwrap(), 9_846);
        assert_eq!(n.sweep_onchain(c, b).unwrap(), 0);
        assert_eq!(n.ledger().events.last().unwrap().tx_type, TxType::Sweep);
    }

    #[test]
    fn ledger_log_lines() {
        let mut n = net();
        let r = n.add_node("r", Role::Relay, 0).unwrap();
        let b = n.add_node("b", Role::Botmaster, 30_000).unwrap();
        n.open_channel(b, r, 20_000, true, FeePolicy::default()).unwrap();
        let mut buf = Vec::new();
        n.ledger().write_jsonl(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "{\"seq\":1,\"tx_type\":\"funding\",\"node\":1,\"amount_sat\":20000,\"fee_sat\":154}\n"
        );
    }

    #[test]
    fn public_key_text_round_trip() {
        let k = PublicKey::derive(9, "cnc1");
        assert_eq!(k.to_string().len(), 66);
        assert_eq!(k.to_string().parse::<PublicKey>().unwrap(), k);
        assert_ne!(k, PublicKey::derive(9, "cnc2"));
    }
}
