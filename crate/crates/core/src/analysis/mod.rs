//! Defender-side analysis: timing correlation over relay forwarding logs,
//! stream poisoning against a known C&C key, and detection metrics.

mod poison;

pub use poison::{inject, poison, send_with_poison, PoisonOutcome, PoisonPlan, PoisonTrigger};

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{ChannelId, ChannelInfo, Network, NodeId};
use crate::payment::{ForwardingEvent, PaymentEngine};
use crate::protocol::{Receipt, TranscriptBook};

pub const DEFAULT_WINDOW_S: f64 = 10.0;
/// One sat per forwarder over a route of up to eight forwarders.
pub const DEFAULT_FEE_TOLERANCE_SAT: u64 = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("correlation window must be positive and finite, got {0}")]
    InvalidWindow(f64),
}

/// Channel id to endpoints, as a channel-info lookup would answer.
pub type ChannelDirectory = BTreeMap<ChannelId, ChannelInfo>;

pub fn directory_of(net: &Network) -> ChannelDirectory {
    net.channel_directory().into_iter().map(|c| (c.chan_id, c)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationParams {
    pub window_s: f64,
    pub fee_tolerance_sat: u64,
}

impl Default for CorrelationParams {
    fn default() -> Self {
        CorrelationParams { window_s: DEFAULT_WINDOW_S, fee_tolerance_sat: DEFAULT_FEE_TOLERANCE_SAT }
    }
}

impl CorrelationParams {
    fn window_ns(&self) -> Result<u64, AnalysisError> {
        if !(self.window_s.is_finite() && self.window_s > 0.0) {
            return Err(AnalysisError::InvalidWindow(self.window_s));
        }
        Ok((self.window_s * 1e9).round() as u64)
    }

    /// The amount and time predicates a matched pair must satisfy.
    pub fn matches(&self, event: &ForwardingEvent, receipt: &Receipt) -> bool {
        let Ok(window) = self.window_ns() else { return false };
        let amount_ok = event.amt_out_sat >= receipt.amount_sat
            && event.amt_out_sat - receipt.amount_sat <= self.fee_tolerance_sat;
        let time_ok = event.timestamp_ns <= receipt.timestamp_ns
            && receipt.timestamp_ns - event.timestamp_ns <= window;
        amount_ok && time_ok
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MatchedPair {
    pub monitor: NodeId,
    pub event: ForwardingEvent,
    pub receipt: Receipt,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationFinding {
    pub candidate_predecessor: NodeId,
    pub matched_pairs: Vec<MatchedPair>,
    /// Distinct receipts explained by this candidate.
    pub matched_receipts: usize,
    pub score: f64,
}

/// Turns per-candidate evidence into a score in `[0, 1]`.
pub trait Scorer {
    fn score(&self, matched_receipts: usize, total_receipts: usize, pairs: &[MatchedPair]) -> f64;
}

/// Fraction of C&C receipts with at least one matching upstream event.
#[derive(Debug, Clone, Copy, Default)]
pub struct MatchFraction;

impl Scorer for MatchFraction {
    fn score(&self, matched_receipts: usize, total_receipts: usize, _: &[MatchedPair]) -> f64 {
        if total_receipts == 0 {
            0.0
        } else {
            matched_receipts as f64 / total_receipts as f64
        }
    }
}

pub fn correlate(
    receipts: &[Receipt],
    monitor_logs: &BTreeMap<NodeId, Vec<ForwardingEvent>>,
    channels: &ChannelDirectory,
    params: &CorrelationParams,
) -> Result<Vec<CorrelationFinding>, AnalysisError> {
    correlate_with(receipts, monitor_logs, channels, params, &MatchFraction)
}

/// Matches every receipt against every monitored forwarding event and
/// attributes each match to the monitor's upstream peer on `chan_id_in`.
/// Events on channels missing from the directory cannot be attributed and
/// are ignored. Ranked by score, ties by node id.
pub fn correlate_with(
    receipts: &[Receipt],
    monitor_logs: &BTreeMap<NodeId, Vec<ForwardingEvent>>,
    channels: &ChannelDirectory,
    params: &CorrelationParams,
    scorer: &dyn Scorer,
) -> Result<Vec<CorrelationFinding>, AnalysisError> {
    params.window_ns()?;
    let mut pairs: BTreeMap<NodeId, Vec<MatchedPair>> = BTreeMap::new();
    let mut explained: BTreeMap<NodeId, BTreeSet<usize>> = BTreeMap::new();
    for (ri, receipt) in receipts.iter().enumerate() {
        for (&monitor, events) in monitor_logs {
            for event in events {
                if !params.matches(event, receipt) {
                    continue;
                }
                let Some(info) = channels.get(&event.chan_id_in) else { continue };
                let upstream = if info.node1 == monitor {
                    info.node2
                } else if info.node2 == monitor {
                    info.node1
                } else {
                    continue;
                };
                pairs.entry(upstream).or_default().push(MatchedPair { monitor, event: *event, receipt: *receipt });
                explained.entry(upstream).or_default().insert(ri);
            }
        }
    }
    let mut findings: Vec<CorrelationFinding> = pairs
        .into_iter()
        .map(|(candidate, matched_pairs)| {
            let matched_receipts = explained[&candidate].len();
            let score = scorer.score(matched_receipts, receipts.len(), &matched_pairs);
            CorrelationFinding { candidate_predecessor: candidate, matched_pairs, matched_receipts, score }
        })
        .collect();
    findings.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.candidate_predecessor.cmp(&b.candidate_predecessor))
    });
    Ok(findings)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FindingRecord {
    pub candidate: NodeId,
    pub score: f64,
    pub matched_pairs: usize,
}

impl From<&CorrelationFinding> for FindingRecord {
    fn from(f: &CorrelationFinding) -> Self {
        FindingRecord { candidate: f.candidate_predecessor, score: f.score, matched_pairs: f.matched_pairs.len() }
    }
}

pub fn write_findings<W: Write>(findings: &[CorrelationFinding], mut out: W) -> io::Result<()> {
    for f in findings {
        serde_json::to_writer(&mut out, &FindingRecord::from(f))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectionMetrics {
    /// 1-based position of the true origin, absent when never ranked.
    pub rank_of_truth: Option<usize>,
    /// Truth's score minus the best competing score. Positive only when the
    /// truth is ranked first; a lone correct candidate gets its own score.
    pub score_margin: f64,
}

pub fn detection_metrics(ground_truth_origin: NodeId, ranking: &[CorrelationFinding]) -> DetectionMetrics {
    let pos = ranking.iter().position(|f| f.candidate_predecessor == ground_truth_origin);
    let truth_score = pos.map_or(0.0, |i| ranking[i].score);
    let best_other = ranking
        .iter()
        .filter(|f| f.candidate_predecessor != ground_truth_origin)
        .map(|f| f.score)
        .fold(0.0, f64::max);
    DetectionMetrics { rank_of_truth: pos.map(|i| i + 1), score_margin: truth_score - best_other }
}

/// Compromised relays and C&C servers. Each monitor contributes only its
/// own forwarding log; each compromised C&C only its own receipts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorSet {
    pub relays: BTreeSet<NodeId>,
    pub cnc_servers: BTreeSet<NodeId>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Evidence {
    pub monitor_logs: BTreeMap<NodeId, Vec<ForwardingEvent>>,
    pub receipts: Vec<Receipt>,
}

impl MonitorSet {
    pub fn collect(&self, engine: &PaymentEngine, transcripts: &TranscriptBook) -> Evidence {
        let monitor_logs = self.relays.iter().map(|&n| (n, engine.forwarding_history(n))).collect();
        let mut receipts: Vec<Receipt> = self
            .cnc_servers
            .iter()
            .filter_map(|c| transcripts.get(c))
            .flat_map(|t| t.receipts.iter().copied())
            .collect();
        receipts.sort_by_key(|r| (r.timestamp_ns, r.amount_sat));
        Evidence { monitor_logs, receipts }
    }
}
