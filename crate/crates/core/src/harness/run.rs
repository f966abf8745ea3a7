use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::report::*;
use super::scenario::Scenario;
use super::HarnessError;
use crate::analysis::{
    correlate, detection_metrics, directory_of, inject, CorrelationFinding, CorrelationParams, FindingRecord, MonitorSet,
    PoisonOutcome, PoisonPlan, PoisonTrigger,
};
use crate::codec::{self, END_SENTINEL, START_SENTINEL};
use crate::network::{formation_cost, ChannelInfo, ChannelState, LedgerEvent, Network, NetworkConfig, NodeId, NodeRecord, Role, TopologySpec};
use crate::payment::{write_jsonl, EngineConfig, ForwardingEvent, PaymentEngine, PaymentResult, RouteConstraints};
use crate::protocol::{
    deliver, reimburse_tick, sweep_collector, CommandTranscript, Receipt, ReimbursementPolicy, SendSession, SessionState, Step,
    TranscriptBook,
};

const NS: f64 = 1e9;

fn ns(seconds: f64) -> u64 {
    (seconds * NS).round() as u64
}

fn seconds(ns: u64) -> f64 {
    ns as f64 / NS
}

/// Raw records of one run, written out as line-delimited JSON.
#[derive(Debug, Clone)]
pub struct RunLogs {
    pub nodes: Vec<NodeRecord>,
    pub ledger: Vec<LedgerEvent>,
    pub payments: Vec<PaymentResult>,
    pub forwarding: BTreeMap<NodeId, Vec<ForwardingEvent>>,
    pub channels: Vec<ChannelState>,
    pub channel_directory: Vec<ChannelInfo>,
    pub transcripts: Vec<CommandTranscript>,
    pub sessions: Vec<SendSession>,
    pub findings: Vec<CorrelationFinding>,
    pub poison: Vec<PoisonOutcome>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: Report,
    pub logs: RunLogs,
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, HarnessError> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| HarnessError::Io(path.display().to_string(), e))
}

fn jsonl<T: Serialize>(dir: &Path, name: &str, records: &[T]) -> Result<(), HarnessError> {
    let path = dir.join(name);
    let mut out = create(&path)?;
    write_jsonl(records, &mut out)
        .and_then(|_| out.flush())
        .map_err(|e| HarnessError::Io(path.display().to_string(), e))
}

impl RunOutput {
    /// Writes the report and every log under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), HarnessError> {
        let io_err = |p: &Path, e| HarnessError::Io(p.display().to_string(), e);
        for sub in ["", "forwarding", "receipts"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| io_err(&p, e))?;
        }
        let l = &self.logs;
        let report_path = dir.join("report.json");
        let json = serde_json::to_string_pretty(&self.report).expect("report serialises");
        fs::write(&report_path, json + "\n").map_err(|e| io_err(&report_path, e))?;
        let text_path = dir.join("report.txt");
        fs::write(&text_path, self.report.to_text()).map_err(|e| io_err(&text_path, e))?;
        jsonl(dir, "nodes.jsonl", &l.nodes)?;
        jsonl(dir, "ledger.jsonl", &l.ledger)?;
        jsonl(dir, "payments.jsonl", &l.payments)?;
        jsonl(dir, "channels.jsonl", &l.channels)?;
        jsonl(dir, "channel_directory.jsonl", &l.channel_directory)?;
        jsonl(dir, "transcripts.jsonl", &l.transcripts)?;
        jsonl(dir, "sessions.jsonl", &l.sessions)?;
        jsonl(dir, "poison.jsonl", &l.poison)?;
        let records: Vec<FindingRecord> = l.findings.iter().map(FindingRecord::from).collect();
        jsonl(dir, "findings.jsonl", &records)?;
        for (node, events) in &l.forwarding {
            jsonl(&dir.join("forwarding"), &format!("{node}.jsonl"), events)?;
        }
        for t in &l.transcripts {
            jsonl(&dir.join("receipts"), &format!("{}.jsonl", t.receiver), &t.receipts)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    SetOnline(NodeId, bool),
    Deliver(u64),
    Step(usize),
    Poison(usize),
    Cover(usize),
    Tick,
}

struct Queue {
    heap: BinaryHeap<Reverse<(u64, u64, Event)>>,
    seq: u64,
}

impl Queue {
    fn push(&mut self, at_ns: u64, ev: Event) {
        self.seq += 1;
        self.heap.push(Reverse((at_ns, self.seq, ev)));
    }

    fn pop(&mut self) -> Option<(u64, Event)> {
        self.heap.pop().map(|Reverse((t, _, e))| (t, e))
    }
}

struct Operator {
    botmaster: NodeId,
    cncs: Vec<NodeId>,
    collector: Option<NodeId>,
}

impl Operator {
    fn nodes(&self) -> Vec<NodeId> {
        let mut v = vec![self.botmaster];
        v.extend(&self.cncs);
        v.extend(self.collector);
        v
    }
}

fn find_or_add(net: &mut Network, role: Role, alias: &str, onchain: u64) -> Result<(NodeId, bool), HarnessError> {
    if let Some(n) = net.nodes().iter().find(|n| n.role == role) {
        return Ok((n.node_id, false));
    }
    Ok((net.add_node(alias, role, onchain)?, true))
}

fn alias_id(net: &Network, alias: &str) -> Result<NodeId, HarnessError> {
    net.node_by_alias(alias)
        .ok_or_else(|| HarnessError::Config(format!("unknown node alias {alias:?}")))
}

/// Builds the network and operator nodes. Nodes the topology already
/// declares are used as they are; missing ones are created and wired in.
fn setup(scenario: &Scenario, rng: &mut ChaCha8Rng) -> Result<(Network, Operator, Vec<NodeId>, u64), HarnessError> {
    let mut net = Network::new(scenario.network, scenario.seed);
    let built = scenario.topology.build(&mut net, scenario.fee_policy, rng)?;
    let layered = matches!(scenario.topology, TopologySpec::Layered { .. });
    let first_layer = built.layers.first().cloned();
    let last_layer = built.layers.last().cloned();

    let (botmaster, new_botmaster) = find_or_add(&mut net, Role::Botmaster, "botmaster", scenario.botmaster.onchain_sat)?;
    let mut cncs: Vec<NodeId> = net.nodes().iter().filter(|n| n.role == Role::CncServer).map(|n| n.node_id).collect();
    let declared_cncs = cncs.len();
    for i in declared_cncs..scenario.n_cnc_servers {
        cncs.push(net.add_node(&format!("cnc{i}"), Role::CncServer, 0)?);
    }
    let collector = if scenario.reimbursement.is_some() {
        Some(find_or_add(&mut net, Role::Collector, "collector", 0)?)
    } else {
        None
    };

    let operator = Operator { botmaster, cncs, collector: collector.map(|c| c.0) };
    let initial_wealth: u64 = operator.nodes().iter().map(|&n| net.wealth_msat(n)).sum();

    if operator.cncs.is_empty() {
        return Ok((net, operator, built.relays, initial_wealth));
    }
    let policy = scenario.fee_policy;
    if new_botmaster {
        let bm = &scenario.botmaster;
        match (&first_layer, layered) {
            (Some(layer), true) => {
                if layer.len() < bm.channels {
                    return Err(HarnessError::Config(format!(
                        "botmaster wants {} channels but the first layer has {} relays",
                        bm.channels,
                        layer.len()
                    )));
                }
                let peers: Vec<NodeId> = layer.choose_multiple(rng, bm.channels).copied().collect();
                for peer in peers {
                    net.open_channel(botmaster, peer, bm.channel_capacity_sat, true, policy)?;
                }
            }
            _ => {
                net.autopilot_open(botmaster, bm.channels, bm.channel_capacity_sat, policy, rng)?;
            }
        }
    }
    let pool = if layered { last_layer.as_deref() } else { None };
    for &c in &operator.cncs[declared_cncs..] {
        net.autopilot_accept(c, scenario.cnc_channels(), scenario.cnc_capacity_sat(), policy, pool, rng)?;
    }
    if let Some((c, true)) = collector {
        let pool = if layered { first_layer.as_deref() } else { None };
        net.autopilot_accept(c, scenario.collector.channels, scenario.collector.channel_capacity_sat, policy, pool, rng)?;
    }
    Ok((net, operator, built.relays, initial_wealth))
}

#[derive(Debug, Clone, Copy)]
struct CoverPayment {
    at_ns: u64,
    from: NodeId,
    to: NodeId,
}

fn cover_schedule(scenario: &Scenario, relays: &[NodeId]) -> Vec<CoverPayment> {
    let Some(c) = &scenario.cover_traffic else { return Vec::new() };
    if relays.len() < 2 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    rng.set_stream(2);
    (0..c.payments)
        .map(|_| {
            let at_ns = rng.gen_range(ns(c.from_s)..ns(c.until_s));
            let pair: Vec<NodeId> = relays.choose_multiple(&mut rng, 2).copied().collect();
            CoverPayment { at_ns, from: pair[0], to: pair[1] }
        })
        .collect()
}

/// Runs one scenario end to end: setup, command propagation, reimbursement,
/// sweep and analysis.
pub fn run_scenario(scenario: &Scenario) -> Result<RunOutput, HarnessError> {
    let scheme = scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let (net, op, relays, initial_wealth) = setup(scenario, &mut rng)?;
    let setup_fees: u64 = op.nodes().iter().map(|&n| net.ledger().fees_paid_by_msat(n)).sum();

    // resolve every alias before the first payment
    let mut offline = Vec::new();
    for w in &scenario.failures.offline {
        offline.push((alias_id(&net, &w.node)?, w));
    }
    let mut plans = Vec::new();
    for p in &scenario.poison {
        let target = alias_id(&net, &p.target)?;
        let plan = PoisonPlan {
            attacker: alias_id(&net, &p.attacker)?,
            cc_pubkey: net.public_key(target)?,
            amount_sat: p.amount_sat,
            trigger: p.trigger,
        };
        plans.push((plan, target, p.at_s));
    }
    let monitors = match &scenario.monitor {
        Some(m) => Some(MonitorSet {
            relays: m.relays.iter().map(|a| alias_id(&net, a)).collect::<Result<BTreeSet<_>, _>>()?,
            cnc_servers: m.cnc_servers.iter().map(|a| alias_id(&net, a)).collect::<Result<BTreeSet<_>, _>>()?,
        }),
        None => None,
    };
    let covers = cover_schedule(scenario, &relays);
    let collector_key = match op.collector {
        Some(c) => Some(net.public_key(c)?),
        None => None,
    };

    let engine_seed = {
        let mut r = ChaCha8Rng::seed_from_u64(scenario.seed);
        r.set_stream(1);
        r.gen()
    };
    let config = EngineConfig { latency: scenario.latency.clone(), failure_probability: scenario.failures.probability };
    let mut engine = PaymentEngine::new(net, config, engine_seed).map_err(|e| HarnessError::Config(e.to_string()))?;

    let mut book: TranscriptBook = op.cncs.iter().map(|&c| (c, CommandTranscript::new(c, scheme.clone()))).collect();
    let mut sessions = Vec::with_capacity(op.cncs.len());
    for &c in &op.cncs {
        let key = engine.network().public_key(c)?;
        sessions.push(SendSession::new(
            c,
            key,
            &scenario.command,
            &scheme,
            scenario.retry_limit_k,
            scenario.reschedule_delay_s * 1_000_000_000,
        )?);
    }
    let constraints = RouteConstraints {
        fixed_intermediary_hops: scenario.fixed_intermediary_hops,
        ..RouteConstraints::default()
    };

    let mut q = Queue { heap: BinaryHeap::new(), seq: 0 };
    for (node, w) in &offline {
        q.push(ns(w.from_s), Event::SetOnline(*node, false));
        if let Some(u) = w.until_s {
            q.push(ns(u), Event::SetOnline(*node, true));
        }
    }
    for i in 0..sessions.len() {
        q.push(0, Event::Step(i));
    }
    for (i, (plan, _, at_s)) in plans.iter().enumerate() {
        if plan.trigger == PoisonTrigger::Immediately {
            q.push(ns(*at_s), Event::Poison(i));
        }
    }
    for (i, c) in covers.iter().enumerate() {
        q.push(c.at_ns, Event::Cover(i));
    }
    let policy = match (&scenario.reimbursement, collector_key) {
        (Some(r), Some(key)) => {
            let mut p = ReimbursementPolicy::new(r.threshold_sat, key);
            p.reserve_per_channel_sat = r.reserve_per_channel_sat;
            q.push(ns(r.tick_s), Event::Tick);
            Some((p, ns(r.tick_s)))
        }
        _ => None,
    };

    let mut fired: Vec<Option<PoisonOutcome>> = vec![None; plans.len()];
    let mut abandoned = BTreeSet::new();
    let mut reimbursements: Vec<PaymentResult> = Vec::new();
    let mut active = sessions.len();
    let mut end_ns = 0;

    while let Some((t, ev)) = q.pop() {
        end_ns = end_ns.max(t);
        match ev {
            Event::SetOnline(node, online) => engine.network_mut().set_online(node, online)?,
            Event::Deliver(idx) => {
                let result = engine.payments()[idx as usize].clone();
                deliver(&mut book, &result);
            }
            Event::Poison(i) => {
                let outcome = inject(&mut engine, &plans[i].0, t);
                q.push(outcome.payment.settled_ns, Event::Deliver(outcome.payment.payment_index));
                fired[i] = Some(outcome);
            }
            Event::Cover(i) => {
                let c = covers[i];
                let key = engine.network().public_key(c.to)?;
                let amount = scenario.cover_traffic.as_ref().map_or(0, |s| s.amount_sat);
                let r = engine.send_keysend_at(c.at_ns, c.from, &key, amount, &RouteConstraints::default());
                end_ns = end_ns.max(r.settled_ns);
            }
            Event::Tick => {
                if let Some((p, every)) = &policy {
                    for &c in &op.cncs {
                        if let Some(r) = reimburse_tick(&mut engine, c, p, t) {
                            end_ns = end_ns.max(r.settled_ns);
                            reimbursements.push(r);
                        }
                    }
                    if active > 0 {
                        q.push(t + every, Event::Tick);
                    }
                }
            }
            Event::Step(i) => {
                let target = sessions[i].target;
                for (pi, (plan, plan_target, _)) in plans.iter().enumerate() {
                    if *plan_target == target
                        && fired[pi].is_none()
                        && plan.trigger != PoisonTrigger::Immediately
                        && plan.ready(book.get(&target))
                    {
                        let outcome = inject(&mut engine, plan, t);
                        q.push(outcome.payment.settled_ns, Event::Deliver(outcome.payment.payment_index));
                        fired[pi] = Some(outcome);
                    }
                }
                let session = &mut sessions[i];
                let next = match session.step(&mut engine, op.botmaster, t, &constraints) {
                    Step::Attempted(r) => {
                        q.push(r.settled_ns, Event::Deliver(r.payment_index));
                        end_ns = end_ns.max(r.settled_ns);
                        match session.state {
                            SessionState::Completed => None,
                            SessionState::Rescheduled { at_ns } => Some(at_ns),
                            _ => Some(r.settled_ns),
                        }
                    }
                    Step::Rescheduled { at_ns } => Some(at_ns),
                    Step::Finished => None,
                };
                let give_up = session.reschedules > scenario.max_reschedules;
                match next {
                    Some(at) if !give_up => q.push(at, Event::Step(i)),
                    Some(_) => {
                        abandoned.insert(i);
                        active -= 1;
                    }
                    None => active -= 1,
                }
            }
        }
    }

    // last reimbursement pass, then return everything to the botmaster
    let mut swept = None;
    if let (Some((p, _)), Some(collector)) = (&policy, op.collector) {
        for &c in &op.cncs {
            for _ in 0..engine.network().channels_of(c).len() {
                match reimburse_tick(&mut engine, c, p, end_ns) {
                    Some(r) if r.success => reimbursements.push(r),
                    Some(r) => {
                        reimbursements.push(r);
                        break;
                    }
                    None => break,
                }
            }
        }
        if scenario.reimbursement.as_ref().is_some_and(|r| r.sweep) {
            swept = Some(sweep_collector(&mut engine, collector, op.botmaster)?);
        }
    }

    let findings = match (&monitors, &scenario.monitor) {
        (Some(m), Some(spec)) => {
            let evidence = m.collect(&engine, &book);
            let params = CorrelationParams { window_s: spec.window_s, fee_tolerance_sat: spec.fee_tolerance_sat };
            let findings = correlate(&evidence.receipts, &evidence.monitor_logs, &directory_of(engine.network()), &params)
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            Some((findings, evidence.receipts.len()))
        }
        _ => None,
    };

    // reports
    let net = engine.network();
    let operator_nodes: BTreeSet<NodeId> = op.nodes().into_iter().collect();
    let framed = codec::frame(&codec::encode(&scenario.command, &scheme)?);
    let payload = &framed[1..framed.len() - 1];
    let mut per_target = Vec::new();
    for (i, s) in sessions.iter().enumerate() {
        let state = if abandoned.contains(&i) {
            "abandoned".to_string()
        } else {
            match s.state {
                SessionState::Completed => "completed",
                SessionState::Rescheduled { .. } => "rescheduled",
                SessionState::InProgress => "in_progress",
                SessionState::Pending => "pending",
            }
            .to_string()
        };
        per_target.push(TargetReport {
            node: s.target,
            alias: net.node(s.target)?.alias.clone(),
            state,
            payments_sent: s.payments_sent,
            attempts: s.attempts,
            reschedules: s.reschedules,
            satoshi_spent: s.satoshi_spent,
            routing_fees_msat: s.fees_paid_msat,
            payload_routing_fees_msat: s.payload_fees_msat,
            payload_time_s: seconds(s.payload_latency_ns),
            command_time_s: s.started_ns.zip(s.completed_ns).map(|(a, b)| seconds(b - a)),
            decoded_correctly: book[&s.target].commands().contains(&scenario.command.as_str()),
        });
    }
    let payload_fees: u64 = sessions.iter().map(|s| s.payload_fees_msat).sum();
    let propagation = PropagationReport {
        targets_completed: sessions.iter().filter(|s| s.is_done()).count(),
        targets_abandoned: abandoned.len(),
        payments_settled: sessions.iter().map(|s| s.payments_sent).sum(),
        payment_attempts: sessions.iter().map(|s| s.attempts).sum(),
        satoshi_spent: sessions.iter().map(|s| s.satoshi_spent).sum(),
        routing_fees_msat: sessions.iter().map(|s| s.fees_paid_msat).sum(),
        payload_routing_fees_msat: payload_fees,
        payload_routing_fees_sat: payload_fees / 1000,
        payload_routing_fees_btc: format_btc(payload_fees / 1000),
        per_target,
    };

    let config_for_formation = NetworkConfig { channels_per_server: scenario.cnc_channels(), ..scenario.network };
    let n = op.cncs.len() as u64;
    let formation_sat = formation_cost(&config_for_formation, n);
    let formation = FormationReport {
        channels_per_server: scenario.cnc_channels(),
        open_fee_sat: scenario.network.open_fee_sat,
        formation_cost_sat: formation_sat,
        formation_cost_btc: format_btc(formation_sat),
        locked_per_server_sat: scenario.cnc_channels() as u64 * scenario.cnc_capacity_sat(),
        setup_onchain_fees_msat: setup_fees,
    };
    let encoding = EncodingReport {
        payload_payments: payload.len(),
        payload_sat: codec::cost(payload),
        framed_payments: framed.len(),
        framed_sat: codec::cost(&framed),
    };

    let reimbursement = scenario.reimbursement.as_ref().map(|r| ReimbursementReport {
        threshold_sat: r.threshold_sat,
        payments_attempted: reimbursements.len() as u64,
        payments_settled: reimbursements.iter().filter(|p| p.success).count() as u64,
        reimbursed_sat: reimbursements.iter().filter(|p| p.success).map(|p| p.amount_sat).sum(),
        routing_fees_msat: reimbursements.iter().filter(|p| p.success).map(|p| p.total_fee_msat).sum(),
        collector_channels_closed: swept.as_ref().map_or(0, |s| s.channels_closed),
        swept_sat: swept.as_ref().map_or(0, |s| s.swept_sat),
    });

    let final_wealth: u64 = operator_nodes.iter().map(|&n| net.wealth_msat(n)).sum();
    let mut routing = 0;
    let mut inflow = 0;
    let mut outflow = 0;
    for p in engine.payments().iter().filter(|p| p.success) {
        let src = operator_nodes.contains(&p.source);
        let dst = operator_nodes.contains(&p.destination);
        if src {
            routing += p.total_fee_msat;
        }
        match (src, dst) {
            (true, false) => outflow += p.amount_sat * 1000,
            (false, true) => inflow += p.amount_sat * 1000,
            _ => {}
        }
    }
    let onchain: u64 = operator_nodes.iter().map(|&n| net.ledger().fees_paid_by_msat(n)).sum();
    let net_loss = initial_wealth as i128 - final_wealth as i128;
    let operator = OperatorReport {
        initial_wealth_msat: initial_wealth,
        final_wealth_msat: final_wealth,
        net_loss_msat: net_loss,
        routing_fees_paid_msat: routing,
        onchain_fees_paid_msat: onchain,
        external_inflow_msat: inflow,
        external_outflow_msat: outflow,
        balanced: net_loss == routing as i128 + onchain as i128 + outflow as i128 - inflow as i128,
    };

    let poison = plans
        .iter()
        .zip(&fired)
        .map(|((plan, target, _), o)| PoisonReport {
            attacker: plan.attacker,
            target: *target,
            amount_sat: plan.amount_sat,
            fired: o.is_some(),
            delivered: o.as_ref().is_some_and(|o| o.delivered),
            attacker_cost_msat: o.as_ref().map_or(0, |o| o.attacker_cost_msat),
        })
        .collect();

    let detection = findings.as_ref().map(|(f, receipts)| DetectionReport {
        ground_truth: op.botmaster,
        receipts: *receipts,
        findings: f.iter().map(FindingRecord::from).collect(),
        metrics: detection_metrics(op.botmaster, f),
    });

    let report = Report {
        seed: scenario.seed,
        scheme: scheme.name().to_string(),
        command: scenario.command.clone(),
        n_cnc_servers: op.cncs.len(),
        formation,
        encoding,
        propagation,
        reimbursement,
        operator,
        poison,
        detection,
    };
    let forwarding = engine.forwarding_nodes().into_iter().map(|n| (n, engine.forwarding_history(n))).collect();
    let logs = RunLogs {
        nodes: net.nodes().to_vec(),
        ledger: net.ledger().events.clone(),
        payments: engine.payments().to_vec(),
        forwarding,
        channels: net.channels().cloned().collect(),
        channel_directory: net.channel_directory(),
        transcripts: book.into_values().collect(),
        sessions,
        findings: findings.map(|f| f.0).unwrap_or_default(),
        poison: fired.into_iter().flatten().collect(),
    };
    Ok(RunOutput { report, logs })
}

/// Recomputes [`LogTotals`] from the logs a run wrote to `dir`, without
/// using anything but the files.
pub fn recompute_totals(dir: &Path) -> Result<LogTotals, HarnessError> {
    let read = |name: &str| -> Result<Vec<serde_json::Value>, HarnessError> {
        let path = dir.join(name);
        let text = fs::read_to_string(&path).map_err(|e| HarnessError::Io(path.display().to_string(), e))?;
        text.lines()
            .map(|l| serde_json::from_str(l).map_err(|e| HarnessError::Config(format!("{name}: {e}"))))
            .collect()
    };
    let nodes = read("nodes.jsonl")?;
    let role_of = |role: &str| -> BTreeSet<u64> {
        nodes.iter().filter(|n| n["role"] == role).filter_map(|n| n["node_id"].as_u64()).collect()
    };
    let botmasters = role_of("botmaster");
    let cncs = role_of("cnc_server");
    let collectors = role_of("collector");
    let operator: BTreeSet<u64> = botmasters.iter().chain(&cncs).chain(&collectors).copied().collect();
    let mut t = LogTotals::default();
    for p in read("payments.jsonl")? {
        let src = p["source"].as_u64().unwrap_or(u64::MAX);
        let dst = p["destination"].as_u64().unwrap_or(u64::MAX);
        let ok = p["success"].as_bool().unwrap_or(false);
        let amount = p["amount_sat"].as_u64().unwrap_or(0);
        let fee = p["total_fee_msat"].as_u64().unwrap_or(0);
        if botmasters.contains(&src) && cncs.contains(&dst) {
            t.command_attempts += 1;
            if ok {
                t.command_payments_settled += 1;
                t.command_sat += amount;
                t.command_fees_msat += fee;
                if amount != START_SENTINEL && amount != END_SENTINEL {
                    t.payload_fees_msat += fee;
                }
            }
        }
        if ok && cncs.contains(&src) && collectors.contains(&dst) {
            t.reimbursement_payments_settled += 1;
            t.reimbursement_sat += amount;
            t.reimbursement_fees_msat += fee;
        }
    }
    for e in read("ledger.jsonl")? {
        if operator.contains(&e["node"].as_u64().unwrap_or(u64::MAX)) {
            t.operator_onchain_fees_msat +=
                e["fee_sat"].as_u64().unwrap_or(0) * 1000 + e["dust_msat"].as_u64().unwrap_or(0);
        }
    }
    Ok(t)
}

/// Receipts as a C&C server logged them.
pub fn read_receipts(text: &str) -> Result<Vec<Receipt>, HarnessError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| HarnessError::Config(format!("receipt log: {e}"))))
        .collect()
}
