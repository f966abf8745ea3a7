use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::report::format_btc;
use super::run::run_scenario;
use super::scenario::{Scenario, SchemeName};
use super::HarnessError;
use crate::codec::{self, EncodingScheme};
use crate::network::{formation_cost, FeePolicy, Network, NetworkConfig, Role};

pub const REPLICATION_COMMAND: &str = "sudo hping3 -i u1 -S -p 80 -c 10 192.168.1.1";
pub const REPLICATION_SCALES: [usize; 4] = [10, 25, 50, 100];

// published figures, in satoshi
const FORMATION_SAT: [u64; 4] = [4_620, 11_550, 23_100, 46_200];
const ASCII_FEES_SAT: [u64; 4] = [1_760, 4_400, 8_800, 17_600];
const HUFFMAN_FEES_SAT: [u64; 4] = [4_320, 10_800, 21_600, 43_200];
const ASCII_PAYMENTS: u64 = 44;
const ASCII_COST_SAT: u64 = 2_813;
const HUFFMAN_PAYMENTS: u64 = 108;
const HUFFMAN_COST_SAT: u64 = 215;
const ASCII_TIME_S: u64 = 308;
const HUFFMAN_TIME_S: u64 = 756;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReplicationRow {
    pub table: &'static str,
    pub quantity: String,
    pub servers: Option<usize>,
    pub unit: &'static str,
    pub published: u64,
    /// Absent when the simulated figure is not a whole number of units.
    pub simulated: Option<u64>,
}

impl ReplicationRow {
    pub fn matches(&self) -> bool {
        self.simulated == Some(self.published)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Replication {
    pub rows: Vec<ReplicationRow>,
}

impl Replication {
    pub fn all_match(&self) -> bool {
        self.rows.iter().all(ReplicationRow::matches)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:<28} {:>7} {:>10} {:>10} {:>12} {:>12}  status",
            "table", "quantity", "servers", "published", "simulated", "published_btc", "sim_btc"
        );
        for r in &self.rows {
            let servers = r.servers.map_or("-".to_string(), |n| n.to_string());
            let sim = r.simulated.map_or("n/a".to_string(), |v| v.to_string());
            let (pb, sb) = if r.unit == "sat" {
                (format_btc(r.published), r.simulated.map_or("n/a".to_string(), format_btc))
            } else {
                ("-".to_string(), "-".to_string())
            };
            let status = if r.matches() { "ok" } else { "MISMATCH" };
            let _ = writeln!(
                s,
                "{:<10} {:<28} {:>7} {:>10} {:>10} {:>12} {:>12}  {status}",
                r.table, r.quantity, servers, r.published, sim, pb, sb
            );
        }
        let _ = writeln!(s, "{}", if self.all_match() { "all figures match" } else { "MISMATCH against published figures" });
        s
    }
}

/// Opens three 20,000 sat channels per server from wallets holding exactly
/// the capacity plus fees and reads the fees back from the ledger.
fn simulated_formation_sat(n: usize) -> Result<u64, HarnessError> {
    let config = NetworkConfig::default();
    let mut net = Network::new(config, 1);
    for i in 0..config.channels_per_server + 2 {
        net.add_node(&format!("relay{i}"), Role::Relay, 0)?;
    }
    let per_server = config.channels_per_server as u64 * (config.min_channel_capacity_sat + config.open_fee_sat);
    let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
    let mut fees = 0;
    for i in 0..n {
        let c = net.add_node(&format!("cnc{i}"), Role::CncServer, per_server)?;
        net.autopilot_open(c, config.channels_per_server, config.min_channel_capacity_sat, FeePolicy::default(), &mut rng)?;
        if net.onchain_balance(c)? != 0 {
            return Err(HarnessError::Config("formation left change in a server wallet".into()));
        }
        fees += net.ledger().fees_paid_by_msat(c);
    }
    Ok(fees / 1000)
}

fn whole_seconds(ns: u64) -> Option<u64> {
    ns.is_multiple_of(1_000_000_000).then_some(ns / 1_000_000_000)
}

/// Runs every replication and lines the results up against the published
/// figures.
pub fn replicate_tables() -> Result<Replication, HarnessError> {
    let mut rows = Vec::new();
    let config = NetworkConfig::default();
    for (i, &n) in REPLICATION_SCALES.iter().enumerate() {
        rows.push(ReplicationRow {
            table: "formation",
            quantity: "opening fees (formula)".into(),
            servers: Some(n),
            unit: "sat",
            published: FORMATION_SAT[i],
            simulated: Some(formation_cost(&config, n as u64)),
        });
        rows.push(ReplicationRow {
            table: "formation",
            quantity: "opening fees (ledger)".into(),
            servers: Some(n),
            unit: "sat",
            published: FORMATION_SAT[i],
            simulated: Some(simulated_formation_sat(n)?),
        });
    }

    let schemes = [
        (SchemeName::Ascii, EncodingScheme::Ascii, ASCII_PAYMENTS, ASCII_COST_SAT, ASCII_FEES_SAT, ASCII_TIME_S),
        (
            SchemeName::Huffman,
            EncodingScheme::huffman_default(),
            HUFFMAN_PAYMENTS,
            HUFFMAN_COST_SAT,
            HUFFMAN_FEES_SAT,
            HUFFMAN_TIME_S,
        ),
    ];
    for (name, scheme, payments, cost, fees, time) in &schemes {
        let encoded = codec::encode(REPLICATION_COMMAND, scheme)?;
        let label = scheme.name();
        rows.push(ReplicationRow {
            table: "encoding",
            quantity: format!("{label} payments"),
            servers: None,
            unit: "payments",
            published: *payments,
            simulated: Some(encoded.len() as u64),
        });
        rows.push(ReplicationRow {
            table: "encoding",
            quantity: format!("{label} amount"),
            servers: None,
            unit: "sat",
            published: *cost,
            simulated: Some(codec::cost(&encoded)),
        });
        for (i, &n) in REPLICATION_SCALES.iter().enumerate() {
            let out = run_scenario(&Scenario::replication(n, name.clone(), REPLICATION_COMMAND))?;
            let p = &out.report.propagation;
            let complete = p.targets_completed == n;
            let fees_msat = p.payload_routing_fees_msat;
            rows.push(ReplicationRow {
                table: "routing",
                quantity: format!("{label} routing fees"),
                servers: Some(n),
                unit: "sat",
                published: fees[i],
                simulated: (complete && fees_msat % 1000 == 0).then_some(fees_msat / 1000),
            });
            if n == *REPLICATION_SCALES.last().expect("scales") {
                // every server must take the same time for one figure to stand for all
                let times: Vec<Option<u64>> = p
                    .per_target
                    .iter()
                    .map(|t| whole_seconds((t.payload_time_s * 1e9).round() as u64))
                    .collect();
                let uniform = times.windows(2).all(|w| w[0] == w[1]);
                rows.push(ReplicationRow {
                    table: "time",
                    quantity: format!("{label} seconds per server"),
                    servers: Some(n),
                    unit: "s",
                    published: *time,
                    simulated: if complete && uniform { times.first().copied().flatten() } else { None },
                });
            }
        }
    }
    Ok(Replication { rows })
}
