use serde::{Deserialize, Serialize};

use crate::codec::EncodingScheme;
use crate::network::{NodeId, PublicKey};
use crate::payment::{PaymentEngine, PaymentResult, RouteConstraints};
use crate::protocol::{deliver, CommandTranscript, DecoderState, SendError, SendOptions, SendSession, SessionState, Step, TranscriptBook};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PoisonTrigger {
    Immediately,
    /// Fires once the C&C has an open frame holding `after_payload`
    /// payload amounts.
    WhenReceiving {
        #[serde(default)]
        after_payload: usize,
    },
}

/// An injection an attacker who learnt a C&C key can schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PoisonPlan {
    pub attacker: NodeId,
    pub cc_pubkey: PublicKey,
    pub amount_sat: u64,
    pub trigger: PoisonTrigger,
}

impl PoisonPlan {
    pub fn ready(&self, transcript: Option<&CommandTranscript>) -> bool {
        match self.trigger {
            PoisonTrigger::Immediately => true,
            PoisonTrigger::WhenReceiving { after_payload } => transcript.is_some_and(|t| {
                t.decoder_state == DecoderState::Receiving && t.pending().len() == after_payload
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoisonOutcome {
    pub payment: PaymentResult,
    /// Amount plus routing fees; zero when the payment failed.
    pub attacker_cost_msat: u64,
    /// False when the payment failed and the injection had no effect.
    pub delivered: bool,
}

/// Sends the injection at `now_ns` without touching any transcript.
pub fn inject(engine: &mut PaymentEngine, plan: &PoisonPlan, now_ns: u64) -> PoisonOutcome {
    let payment =
        engine.send_keysend_at(now_ns, plan.attacker, &plan.cc_pubkey, plan.amount_sat, &RouteConstraints::default());
    let delivered = payment.success;
    let attacker_cost_msat = if delivered { plan.amount_sat * 1000 + payment.total_fee_msat } else { 0 };
    PoisonOutcome { payment, attacker_cost_msat, delivered }
}

/// Sends the injection at `now_ns` and feeds it to the C&C transcript.
pub fn poison(engine: &mut PaymentEngine, plan: &PoisonPlan, now_ns: u64, transcripts: &mut TranscriptBook) -> PoisonOutcome {
    let outcome = inject(engine, plan, now_ns);
    deliver(transcripts, &outcome.payment);
    outcome
}

/// Sends one command to one target while an attacker injects a single
/// payment as soon as `plan` becomes ready. Stops when the session
/// completes or is rescheduled.
#[allow(clippy::too_many_arguments)]
pub fn send_with_poison(
    engine: &mut PaymentEngine,
    botmaster: NodeId,
    target: NodeId,
    command: &str,
    scheme: &EncodingScheme,
    options: &SendOptions,
    plan: &PoisonPlan,
    transcripts: &mut TranscriptBook,
) -> Result<(SendSession, Option<PoisonOutcome>), SendError> {
    let key = engine.network().public_key(target)?;
    let mut session =
        SendSession::new(target, key, command, scheme, options.retry_limit_k, options.reschedule_delay_ns)?;
    let mut outcome = None;
    loop {
        if outcome.is_none() && plan.ready(transcripts.get(&target)) {
            let o = poison(engine, plan, engine.now_ns(), transcripts);
            engine.advance_to(o.payment.settled_ns);
            outcome = Some(o);
        }
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
        if session.is_done() {
            break;
        }
    }
    Ok((session, outcome))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{CodecError, START_SENTINEL};
    use crate::network::{FeePolicy, Network, NetworkConfig, Role};
    use crate::payment::EngineConfig;

    struct World {
        engine: PaymentEngine,
        botmaster: NodeId,
        attacker: NodeId,
        cnc: NodeId,
    }

    fn world() -> World {
        let mut net = Network::new(NetworkConfig::default(), 3);
        let botmaster = net.add_node("botmaster", Role::Botmaster, 0).unwrap();
        let r0 = net.add_node("r0", Role::Relay, 0).unwrap();
        let r1 = net.add_node("r1", Role::Relay, 0).unwrap();
        let attacker = net.add_node("attacker", Role::Relay, 0).unwrap();
        let cnc = net.add_node("cnc", Role::CncServer, 0).unwrap();
        let p = FeePolicy::default();
        net.insert_genesis_channel(botmaster, r0, 500_000, 500_000, true, p).unwrap();
        net.insert_genesis_channel(r0, r1, 1_000_000, 500_000, false, p).unwrap();
        net.insert_genesis_channel(attacker, r1, 100_000, 100_000, false, p).unwrap();
        net.insert_genesis_channel(r1, cnc, 50_000, 50_000, true, p).unwrap();
        World { engine: PaymentEngine::new(net, EngineConfig::default(), 9).unwrap(), botmaster, attacker, cnc }
    }

    fn run(scheme: EncodingScheme, command: &str, amount: u64, trigger: PoisonTrigger) -> (TranscriptBook, PoisonOutcome, NodeId) {
        let mut w = world();
        let mut book = TranscriptBook::from([(w.cnc, CommandTranscript::new(w.cnc, scheme.clone()))]);
        let plan = PoisonPlan {
            attacker: w.attacker,
            cc_pubkey: w.engine.network().public_key(w.cnc).unwrap(),
            amount_sat: amount,
            trigger,
        };
        let (s, o) =
            send_with_poison(&mut w.engine, w.botmaster, w.cnc, command, &scheme, &SendOptions::default(), &plan, &mut book)
                .unwrap();
        assert!(s.is_done());
        (book, o.expect("injection fired"), w.cnc)
    }

    #[test]
    fn mid_huffman_injection_corrupts() {
        let (book, o, cnc) = run(EncodingScheme::huffman_default(), "sudo", 3, PoisonTrigger::WhenReceiving { after_payload: 2 });
        assert!(o.delivered);
        // one forwarder between attacker and C&C
        assert_eq!(o.attacker_cost_msat, 3_000 + 1_000);
        let d = &book[&cnc].decoded_commands;
        assert_eq!(d.len(), 1);
        assert_ne!(d[0].result, Ok("sudo".to_string()));
    }

    #[test]
    fn end_sentinel_truncates() {
        let (book, _, cnc) = run(EncodingScheme::Ascii, "hello", 6, PoisonTrigger::WhenReceiving { after_payload: 2 });
        let t = &book[&cnc];
        assert_eq!(t.decoded_commands[0].result, Ok("he".to_string()));
        // "llo" arrives while idle, then the real end sentinel
        assert_eq!(t.strays.iter().map(|r| r.amount_sat).collect::<Vec<_>>(), vec![108, 108, 111, 6]);
        assert_eq!(t.commands(), vec!["he"]);
    }

    #[test]
    fn idle_injection_is_a_stray() {
        let (book, _, cnc) = run(EncodingScheme::Ascii, "hi", 104, PoisonTrigger::Immediately);
        let t = &book[&cnc];
        assert_eq!(t.commands(), vec!["hi"]);
        assert_eq!(t.strays.len(), 1);
    }

    #[test]
    fn injected_start_sentinel_restarts_frame() {
        let (book, _, cnc) = run(EncodingScheme::Ascii, "hey", START_SENTINEL, PoisonTrigger::WhenReceiving { after_payload: 1 });
        assert_eq!(book[&cnc].decoded_commands[0].result, Ok("ey".to_string()));
        assert_eq!(book[&cnc].aborted_frames, 1);
    }

    #[test]
    fn failed_injection_has_no_effect() {
        let mut w = world();
        let scheme = EncodingScheme::Ascii;
        let mut book = TranscriptBook::from([(w.cnc, CommandTranscript::new(w.cnc, scheme.clone()))]);
        let plan = PoisonPlan {
            attacker: w.attacker,
            cc_pubkey: w.engine.network().public_key(w.cnc).unwrap(),
            amount_sat: 200_000,
            trigger: PoisonTrigger::WhenReceiving { after_payload: 0 },
        };
        let (_, o) =
            send_with_poison(&mut w.engine, w.botmaster, w.cnc, "hi", &scheme, &SendOptions::default(), &plan, &mut book).unwrap();
        let o = o.unwrap();
        assert!(!o.delivered);
        assert_eq!(o.attacker_cost_msat, 0);
        assert_eq!(book[&w.cnc].commands(), vec!["hi"]);
    }

    #[test]
    fn incomplete_code_is_reported() {
        // "s" is 234; injecting 1 after "2" gives 2134, which does not parse as "s"
        let (book, _, cnc) = run(EncodingScheme::huffman_default(), "s", 1, PoisonTrigger::WhenReceiving { after_payload: 1 });
        let r = &book[&cnc].decoded_commands[0].result;
        assert!(r.as_ref().map_or(true, |c| c != "s"));
        assert!(!matches!(r, Err(CodecError::MalformedFrame(_))));
    }
}
