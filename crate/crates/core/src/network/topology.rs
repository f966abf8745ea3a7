use std::collections::BTreeSet;

use rand::Rng;
use serde::Deserialize;

use super::{FeePolicy, Network, NetworkError, NodeId, Role};

/// How the relay network is laid out.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySpec {
    /// Nodes and channels listed one by one.
    Explicit {
        nodes: Vec<NodeSpec>,
        #[serde(default)]
        channels: Vec<ChannelSpec>,
    },
    /// Seeded random relay graph.
    Random(RandomGraphParams),
    /// `layers` ranks of `width` relays; consecutive ranks are fully
    /// connected and nothing else is, so any path from rank 1 to the last
    /// rank crosses exactly one relay per rank.
    Layered {
        layers: usize,
        width: usize,
        capacity_sat: u64,
        relay_onchain_sat: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub alias: String,
    pub role: Role,
    #[serde(default)]
    pub onchain_sat: u64,
    #[serde(default = "yes")]
    pub online: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub a: String,
    pub b: String,
    pub capacity_sat: u64,
    /// Side `a`'s initial balance; half the capacity when omitted.
    #[serde(default)]
    pub balance_a_sat: Option<u64>,
    /// Defaults to private when either endpoint is a private role.
    #[serde(default)]
    pub private: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomGraphParams {
    pub relays: usize,
    pub min_channels: usize,
    pub max_channels: usize,
    pub capacity_sat: u64,
    pub relay_onchain_sat: u64,
}

/// Node ids produced while laying out a topology.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BuiltTopology {
    pub relays: Vec<NodeId>,
    pub layers: Vec<Vec<NodeId>>,
}

impl TopologySpec {
    pub fn build<R: Rng + ?Sized>(
        &self,
        net: &mut Network,
        policy: FeePolicy,
        rng: &mut R,
    ) -> Result<BuiltTopology, NetworkError> {
        let mut built = BuiltTopology::default();
        match self {
            TopologySpec::Explicit { nodes, channels } => {
                for spec in nodes {
                    let id = net.add_node(&spec.alias, spec.role, spec.onchain_sat)?;
                    net.set_online(id, spec.online)?;
                    if spec.role == Role::Relay {
                        built.relays.push(id);
                    }
                }
                for ch in channels {
                    let lookup = |alias: &str| {
                        net.node_by_alias(alias)
                            .ok_or_else(|| NetworkError::InvalidSplit(format!("unknown node alias {alias:?}")))
                    };
                    let a = lookup(&ch.a)?;
                    let b = lookup(&ch.b)?;
                    let private = ch.private.unwrap_or(
                        net.node(a)?.role.is_private() || net.node(b)?.role.is_private(),
                    );
                    let balance_a = ch.balance_a_sat.unwrap_or(ch.capacity_sat / 2);
                    net.insert_genesis_channel(a, b, ch.capacity_sat, balance_a, private, policy)?;
                }
            }
            TopologySpec::Random(p) => {
                if p.min_channels > p.max_channels {
                    return Err(NetworkError::InvalidSplit("min_channels > max_channels".into()));
                }
                for i in 0..p.relays {
                    built.relays.push(net.add_node(&format!("relay{i}"), Role::Relay, p.relay_onchain_sat)?);
                }
                let mut edges = BTreeSet::new();
                // spanning tree first so the relay graph is connected
                for i in 1..p.relays {
                    let j = rng.gen_range(0..i);
                    edges.insert((j, i));
                }
                for i in 0..p.relays {
                    let want = rng.gen_range(p.min_channels..=p.max_channels);
                    let have = edges.iter().filter(|&&(x, y)| x == i || y == i).count();
                    for _ in have..want {
                        if p.relays < 2 {
                            break;
                        }
                        let j = rng.gen_range(0..p.relays);
                        if j != i {
                            edges.insert((i.min(j), i.max(j)));
                        }
                    }
                }
                for (x, y) in edges {
                    net.insert_genesis_channel(
                        built.relays[x],
                        built.relays[y],
                        p.capacity_sat,
                        p.capacity_sat / 2,
                        false,
                        policy,
                    )?;
                }
            }
            TopologySpec::Layered { layers, width, capacity_sat, relay_onchain_sat } => {
                for l in 0..*layers {
                    let mut rank = Vec::with_capacity(*width);
                    for w in 0..*width {
                        let id = net.add_node(&format!("L{}r{}", l + 1, w), Role::Relay, *relay_onchain_sat)?;
                        rank.push(id);
                        built.relays.push(id);
                    }
                    built.layers.push(rank);
                }
                for pair in built.layers.windows(2) {
                    for &a in &pair[0] {
                        for &b in &pair[1] {
                            net.insert_genesis_channel(a, b, *capacity_sat, capacity_sat / 2, false, policy)?;
                        }
                    }
                }
            }
        }
        Ok(built)
    }
}
