//! One-to-many command propagation from the botmaster to C&C servers,
//! the C&C receive state machine, and the reimbursement flow that returns
//! received funds to the operator.

mod session;
mod transcript;

pub use session::{SendSession, SessionState, Step};
pub use transcript::{CommandTranscript, DecodedFrame, DecoderState, Receipt};

use std::collections::BTreeMap;

use serde::Serialize;

use crate::codec::{CodecError, EncodingScheme};
use crate::network::{NetworkError, NodeId, PublicKey};
use crate::payment::{PaymentEngine, PaymentResult, RouteConstraints};

/// Default wait before a rescheduled command is retried.
pub const DEFAULT_RESCHEDULE_DELAY_S: u64 = 600;
pub const DEFAULT_RETRY_LIMIT: u32 = 3;
/// Balance a C&C server leaves in each channel when reimbursing.
pub const DEFAULT_RESERVE_PER_CHANNEL_SAT: u64 = 1_000;

/// Transcripts of every C&C server, keyed by node.
pub type TranscriptBook = BTreeMap<NodeId, CommandTranscript>;

/// Feeds a settled payment to the destination's transcript, if it has one.
pub fn deliver(book: &mut TranscriptBook, result: &PaymentResult) -> Option<Result<String, CodecError>> {
    if !result.success {
        return None;
    }
    book.get_mut(&result.destination)
        .and_then(|t| t.on_payment(result.amount_sat, result.settled_ns))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SendOptions {
    pub retry_limit_k: u32,
    pub reschedule_delay_ns: u64,
    pub constraints: RouteConstraints,
}

impl Default for SendOptions {
    fn default() -> Self {
        SendOptions {
            retry_limit_k: DEFAULT_RETRY_LIMIT,
            reschedule_delay_ns: DEFAULT_RESCHEDULE_DELAY_S * 1_000_000_000,
            constraints: RouteConstraints::default(),
        }
    }
}

/// Sends `command` to every target in turn, each as an independent
/// session, starting at the engine clock. A session runs until it completes
/// or is rescheduled; rescheduled sessions are returned for the caller's
/// scheduler rather than retried here.
pub fn send_command(
    engine: &mut PaymentEngine,
    botmaster: NodeId,
    targets: &[NodeId],
    command: &str,
    scheme: &EncodingScheme,
    options: &SendOptions,
    transcripts: &mut TranscriptBook,
) -> Result<Vec<SendSession>, SendError> {
    let mut sessions = Vec::with_capacity(targets.len());
    for &target in targets {
        let key = engine.network().public_key(target)?;
        let mut session = SendSession::new(
            target,
            key,
            command,
            scheme,
            options.retry_limit_k,
            options.reschedule_delay_ns,
        )?;
        loop {
            let now = engine.now_ns();
            match session.step(engine, botmaster, now, &options.constraints) {
                Step::Attempted(result) => {
                    engine.advance_to(result.settled_ns);
                    deliver(transcripts, &result);
                    if matches!(session.state, SessionState::Rescheduled { .. }) {
                        break;
                    }
                }
                Step::Rescheduled { .. } | Step::Finished => break,
            }
        }
        sessions.push(session);
    }
    Ok(sessions)
}

#[derive(Debug, thiserror::Error)]
pub enum SendError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ReimbursementPolicy {
    pub threshold_sat: u64,
    pub collector_pubkey: PublicKey,
    pub reserve_per_channel_sat: u64,
}

impl ReimbursementPolicy {
    pub fn new(threshold_sat: u64, collector_pubkey: PublicKey) -> Self {
        assert!(threshold_sat > 0, "reimbursement threshold must be positive");
        ReimbursementPolicy {
            threshold_sat,
            collector_pubkey,
            reserve_per_channel_sat: DEFAULT_RESERVE_PER_CHANNEL_SAT,
        }
    }
}

/// Periodic check on a C&C server. When its total channel balance reaches
/// the threshold, the fullest channel is drained to the collector down to
/// the per-channel reserve, which also covers the routing fee. A failed
/// payment leaves every balance as it was; the next tick tries again.
pub fn reimburse_tick(
    engine: &mut PaymentEngine,
    cnc: NodeId,
    policy: &ReimbursementPolicy,
    now_ns: u64,
) -> Option<PaymentResult> {
    let net = engine.network();
    let spendable_sat = net.local_balance_msat(cnc) / 1000;
    if spendable_sat < policy.threshold_sat {
        return None;
    }
    let (channel, local_msat) = net
        .open_channels_of(cnc)
        .map(|c| (c.channel_id, c.local_balance_msat(cnc).unwrap_or(0)))
        .max_by_key(|&(id, bal)| (bal, std::cmp::Reverse(id)))?;
    let amount = (local_msat / 1000).checked_sub(policy.reserve_per_channel_sat)?;
    if amount == 0 {
        return None;
    }
    let constraints = RouteConstraints { first_hop: Some(channel), ..RouteConstraints::default() };
    Some(engine.send_keysend_at(now_ns, cnc, &policy.collector_pubkey, amount, &constraints))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SweepOutcome {
    pub channels_closed: usize,
    pub settled_sat: u64,
    pub swept_sat: u64,
}

/// Closes every collector channel and moves the collector's on-chain
/// balance to the botmaster's wallet.
pub fn sweep_collector(
    engine: &mut PaymentEngine,
    collector: NodeId,
    botmaster: NodeId,
) -> Result<SweepOutcome, NetworkError> {
    let net = engine.network_mut();
    let open: Vec<_> = net.open_channels_of(collector).map(|c| c.channel_id).collect();
    let mut settled_sat = 0;
    for id in &open {
        let s = net.close_channel(*id, collector)?;
        let ch = net.channel(*id)?;
        settled_sat += if ch.endpoint_a == collector { s.settled_a_sat } else { s.settled_b_sat };
    }
    let swept_sat = net.sweep_onchain(collector, botmaster)?;
    Ok(SweepOutcome { channels_closed: open.len(), settled_sat, swept_sat })
}

/// On-chain plus channel-side funds held by a set of nodes, in msat.
pub fn operator_wealth_msat(engine: &PaymentEngine, nodes: &[NodeId]) -> u64 {
    nodes.iter().map(|&n| engine.network().wealth_msat(n)).sum()
}
