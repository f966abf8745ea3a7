use serde::Serialize;

use crate::codec::{self, CodecError, EncodingScheme};
use crate::network::{NodeId, PublicKey};
use crate::payment::{PaymentEngine, PaymentResult, RouteConstraints};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum SessionState {
    Pending,
    InProgress,
    Completed,
    Rescheduled { at_ns: u64 },
}

/// What one call to [`SendSession::step`] did.
#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    /// A payment was attempted; the next step may run at `result.settled_ns`.
    Attempted(PaymentResult),
    /// The target was offline or the retry budget ran out.
    Rescheduled { at_ns: u64 },
    /// Nothing left to do.
    Finished,
}

/// Sender side of one command to one C&C server.
///
/// Sends the framed command one payment at a time. A failed payment is
/// retried until `retry_limit_k` consecutive failures; one more failure
/// reschedules the whole command, which later restarts from the start
/// sentinel.
#[derive(Debug, Clone, Serialize)]
pub struct SendSession {
    pub target: NodeId,
    pub target_key: PublicKey,
    pub command: String,
    pub scheme: &'static str,
    pub retry_limit_k: u32,
    pub consecutive_failures: u32,
    pub state: SessionState,
    /// Settled payments.
    pub payments_sent: u64,
    /// Every attempt, settled or not.
    pub attempts: u64,
    pub satoshi_spent: u64,
    pub fees_paid_msat: u64,
    /// Routing fees of settled payload payments (sentinels excluded).
    pub payload_fees_msat: u64,
    /// Delivery time of settled payload payments (sentinels excluded).
    pub payload_latency_ns: u64,
    pub reschedules: u32,
    pub started_ns: Option<u64>,
    pub completed_ns: Option<u64>,
    /// Engine payment indices of every attempt.
    pub attempt_log: Vec<u64>,
    #[serde(skip)]
    framed: Vec<u64>,
    #[serde(skip)]
    cursor: usize,
    #[serde(skip)]
    reschedule_delay_ns: u64,
}

impl SendSession {
    pub fn new(
        target: NodeId,
        target_key: PublicKey,
        command: &str,
        scheme: &EncodingScheme,
        retry_limit_k: u32,
        reschedule_delay_ns: u64,
    ) -> Result<Self, CodecError> {
        let framed = codec::frame(&codec::encode(command, scheme)?);
        Ok(SendSession {
            target,
            target_key,
            command: command.to_string(),
            scheme: scheme.name(),
            retry_limit_k,
            consecutive_failures: 0,
            state: SessionState::Pending,
            payments_sent: 0,
            attempts: 0,
            satoshi_spent: 0,
            fees_paid_msat: 0,
            payload_fees_msat: 0,
            payload_latency_ns: 0,
            reschedules: 0,
            started_ns: None,
            completed_ns: None,
            attempt_log: Vec::new(),
            framed,
            cursor: 0,
            reschedule_delay_ns,
        })
    }

    /// The framed amounts this session transmits.
    pub fn framed(&self) -> &[u64] {
        &self.framed
    }

    /// Index into the framed sequence of the next payment.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn is_done(&self) -> bool {
        self.state == SessionState::Completed
    }

    fn reschedule(&mut self, now_ns: u64) -> Step {
        let at_ns = now_ns + self.reschedule_delay_ns;
        self.state = SessionState::Rescheduled { at_ns };
        self.cursor = 0;
        self.consecutive_failures = 0;
        self.reschedules += 1;
        Step::Rescheduled { at_ns }
    }

    /// Advances the session by at most one payment at time `now_ns`.
    pub fn step(
        &mut self,
        engine: &mut PaymentEngine,
        source: NodeId,
        now_ns: u64,
        constraints: &RouteConstraints,
    ) -> Step {
        match self.state {
            SessionState::Completed => return Step::Finished,
            SessionState::Pending | SessionState::Rescheduled { .. } => {
                if !engine.network().is_online(self.target) {
                    return self.reschedule(now_ns);
                }
                self.state = SessionState::InProgress;
                self.cursor = 0;
                self.consecutive_failures = 0;
                self.started_ns.get_or_insert(now_ns);
            }
            SessionState::InProgress => {}
        }

        let amount = self.framed[self.cursor];
        let result = engine.send_keysend_at(now_ns, source, &self.target_key, amount, constraints);
        self.attempts += 1;
        self.attempt_log.push(result.payment_index);
        if result.success {
            let is_payload = self.cursor != 0 && self.cursor != self.framed.len() - 1;
            self.payments_sent += 1;
            self.satoshi_spent += amount;
            self.fees_paid_msat += result.total_fee_msat;
            if is_payload {
                self.payload_fees_msat += result.total_fee_msat;
                self.payload_latency_ns += result.settled_ns - result.started_ns;
            }
            self.consecutive_failures = 0;
            self.cursor += 1;
            if self.cursor == self.framed.len() {
                self.state = SessionState::Completed;
                self.completed_ns = Some(result.settled_ns);
            }
            Step::Attempted(result)
        } else if self.consecutive_failures < self.retry_limit_k {
            self.consecutive_failures += 1;
            Step::Attempted(result)
        } else {
            let settled = result.settled_ns;
            self.reschedule(settled);
            Step::Attempted(result)
        }
    }
}
