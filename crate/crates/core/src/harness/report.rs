use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::analysis::{DetectionMetrics, FindingRecord};
use crate::network::NodeId;

pub const SAT_PER_BTC: u64 = 100_000_000;

/// Satoshi as a BTC amount with eight decimals.
pub fn format_btc(sat: u64) -> String {
    format!("{}.{:08}", sat / SAT_PER_BTC, sat % SAT_PER_BTC)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub seed: u64,
    pub scheme: String,
    pub command: String,
    pub n_cnc_servers: usize,
    pub formation: FormationReport,
    pub encoding: EncodingReport,
    pub propagation: PropagationReport,
    pub reimbursement: Option<ReimbursementReport>,
    pub operator: OperatorReport,
    pub poison: Vec<PoisonReport>,
    pub detection: Option<DetectionReport>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FormationReport {
    pub channels_per_server: usize,
    pub open_fee_sat: u64,
    /// Channel-opening fees for the configured number of C&C servers.
    pub formation_cost_sat: u64,
    pub formation_cost_btc: String,
    /// Capacity locked per server, returned when channels close.
    pub locked_per_server_sat: u64,
    /// On-chain fees operator nodes actually paid during setup.
    pub setup_onchain_fees_msat: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EncodingReport {
    pub payload_payments: usize,
    pub payload_sat: u64,
    pub framed_payments: usize,
    pub framed_sat: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetReport {
    pub node: NodeId,
    pub alias: String,
    pub state: String,
    pub payments_sent: u64,
    pub attempts: u64,
    pub reschedules: u32,
    pub satoshi_spent: u64,
    pub routing_fees_msat: u64,
    pub payload_routing_fees_msat: u64,
    /// Summed delivery time of payload payments.
    pub payload_time_s: f64,
    /// First attempt to last settlement, sentinels and waits included.
    pub command_time_s: Option<f64>,
    pub decoded_correctly: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropagationReport {
    pub targets_completed: usize,
    pub targets_abandoned: usize,
    pub payments_settled: u64,
    pub payment_attempts: u64,
    pub satoshi_spent: u64,
    pub routing_fees_msat: u64,
    /// Routing fees of payload payments only, the figure the cost tables use.
    pub payload_routing_fees_msat: u64,
    pub payload_routing_fees_sat: u64,
    pub payload_routing_fees_btc: String,
    pub per_target: Vec<TargetReport>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReimbursementReport {
    pub threshold_sat: u64,
    pub payments_attempted: u64,
    pub payments_settled: u64,
    pub reimbursed_sat: u64,
    pub routing_fees_msat: u64,
    pub collector_channels_closed: usize,
    pub swept_sat: u64,
}

/// Wealth of the botmaster, C&C servers and collector together.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OperatorReport {
    pub initial_wealth_msat: u64,
    pub final_wealth_msat: u64,
    pub net_loss_msat: i128,
    pub routing_fees_paid_msat: u64,
    pub onchain_fees_paid_msat: u64,
    /// Payments from outside nodes into operator nodes, such as injections.
    pub external_inflow_msat: u64,
    pub external_outflow_msat: u64,
    /// `net_loss = fees + on-chain fees + outflow - inflow` held exactly.
    pub balanced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoisonReport {
    pub attacker: NodeId,
    pub target: NodeId,
    pub amount_sat: u64,
    pub fired: bool,
    pub delivered: bool,
    pub attacker_cost_msat: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionReport {
    pub ground_truth: NodeId,
    pub receipts: usize,
    pub findings: Vec<FindingRecord>,
    pub metrics: DetectionMetrics,
}

/// Figures that can be recomputed from the payment and ledger logs alone.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogTotals {
    pub command_attempts: u64,
    pub command_payments_settled: u64,
    pub command_sat: u64,
    pub command_fees_msat: u64,
    pub payload_fees_msat: u64,
    pub reimbursement_payments_settled: u64,
    pub reimbursement_sat: u64,
    pub reimbursement_fees_msat: u64,
    pub operator_onchain_fees_msat: u64,
}

impl Report {
    /// The log-derived figures this report claims.
    pub fn claimed_totals(&self) -> LogTotals {
        let r = self.reimbursement.as_ref();
        LogTotals {
            command_attempts: self.propagation.payment_attempts,
            command_payments_settled: self.propagation.payments_settled,
            command_sat: self.propagation.satoshi_spent,
            command_fees_msat: self.propagation.routing_fees_msat,
            payload_fees_msat: self.propagation.payload_routing_fees_msat,
            reimbursement_payments_settled: r.map_or(0, |r| r.payments_settled),
            reimbursement_sat: r.map_or(0, |r| r.reimbursed_sat),
            reimbursement_fees_msat: r.map_or(0, |r| r.routing_fees_msat),
            operator_onchain_fees_msat: self.operator.onchain_fees_paid_msat,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario seed {}  scheme {}  servers {}", self.seed, self.scheme, self.n_cnc_servers);
        let _ = writeln!(s, "command {:?}", self.command);
        let f = &self.formation;
        let _ = writeln!(
            s,
            "formation: {} channels/server x {} sat = {} sat ({} BTC), {} sat locked per server",
            f.channels_per_server, f.open_fee_sat, f.formation_cost_sat, f.formation_cost_btc, f.locked_per_server_sat
        );
        let e = &self.encoding;
        let _ = writeln!(
            s,
            "encoding: {} payments / {} sat payload, {} payments / {} sat framed",
            e.payload_payments, e.payload_sat, e.framed_payments, e.framed_sat
        );
        let p = &self.propagation;
        let _ = writeln!(
            s,
            "propagation: {} completed, {} abandoned, {} settled of {} attempts, {} sat sent",
            p.targets_completed, p.targets_abandoned, p.payments_settled, p.payment_attempts, p.satoshi_spent
        );
        let _ = writeln!(
            s,
            "routing fees: payload {} sat ({} BTC), all payments {} msat",
            p.payload_routing_fees_sat, p.payload_routing_fees_btc, p.routing_fees_msat
        );
        let _ = writeln!(s, "{:<12} {:<12} {:>8} {:>8} {:>6} {:>12} {:>12}", "target", "state", "payments", "attempts", "resch", "payload_s", "command_s");
        for t in &p.per_target {
            let cmd = t.command_time_s.map_or("-".to_string(), |v| format!("{v:.3}"));
            let _ = writeln!(
                s,
                "{:<12} {:<12} {:>8} {:>8} {:>6} {:>12.3} {:>12}",
                t.alias, t.state, t.payments_sent, t.attempts, t.reschedules, t.payload_time_s, cmd
            );
        }
        if let Some(r) = &self.reimbursement {
            let _ = writeln!(
                s,
                "reimbursement: {} of {} settled, {} sat returned, {} msat fees, {} channels closed, {} sat swept",
                r.payments_settled, r.payments_attempted, r.reimbursed_sat, r.routing_fees_msat, r.collector_channels_closed, r.swept_sat
            );
        }
        let o = &self.operator;
        let _ = writeln!(
            s,
            "operator: loss {} msat = routing {} + on-chain {} + out {} - in {} ({})",
            o.net_loss_msat,
            o.routing_fees_paid_msat,
            o.onchain_fees_paid_msat,
            o.external_outflow_msat,
            o.external_inflow_msat,
            if o.balanced { "balanced" } else { "UNBALANCED" }
        );
        for x in &self.poison {
            let _ = writeln!(
                s,
                "poison: node {} -> {} amount {} fired {} delivered {} cost {} msat",
                x.attacker, x.target, x.amount_sat, x.fired, x.delivered, x.attacker_cost_msat
            );
        }
        if let Some(d) = &self.detection {
            let rank = d.metrics.rank_of_truth.map_or("absent".to_string(), |r| r.to_string());
            let _ = writeln!(
                s,
                "detection: {} receipts, truth {} rank {} margin {:.3}",
                d.receipts, d.ground_truth, rank, d.metrics.score_margin
            );
            for f in &d.findings {
                let _ = writeln!(s, "  candidate {} score {:.3} pairs {}", f.candidate, f.score, f.matched_pairs);
            }
        }
        s
    }
}
