use std::collections::BTreeMap;

use paynet_sim::analysis::{
    correlate, detection_metrics, directory_of, ChannelDirectory, CorrelationParams, MonitorSet,
};
use paynet_sim::network::{ChannelId, ChannelInfo, FeePolicy, Network, NetworkConfig, NodeId, Role};
use paynet_sim::payment::{EngineConfig, ForwardingEvent, PaymentEngine, RouteConstraints};
use paynet_sim::protocol::{deliver, CommandTranscript, Receipt, TranscriptBook};
use paynet_sim::codec::EncodingScheme;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CAP: u64 = 1_000_000;

struct TwoBranch {
    engine: PaymentEngine,
    botmaster: NodeId,
    cc: NodeId,
    a: NodeId,
    d: NodeId,
    /// Relays directly upstream of the two monitors.
    upstream_a: NodeId,
    upstream_d: NodeId,
}

fn chain(net: &mut Network, nodes: &[NodeId]) -> Vec<ChannelId> {
    nodes
        .windows(2)
        .map(|w| net.insert_genesis_channel(w[0], w[1], CAP, CAP / 2, false, FeePolicy::default()).unwrap())
        .collect()
}

/// Botmaster reaches the C&C over two three-relay branches, A-B-C and
/// D-E-F. `extra` relays are inserted between the botmaster and each of A
/// and D.
fn two_branch(extra: usize) -> TwoBranch {
    let mut net = Network::new(NetworkConfig::default(), 4);
    let relay = |net: &mut Network, name: &str| net.add_node(name, Role::Relay, 0).unwrap();
    let a = relay(&mut net, "A");
    let b = relay(&mut net, "B");
    let c = relay(&mut net, "C");
    let d = relay(&mut net, "D");
    let e = relay(&mut net, "E");
    let f = relay(&mut net, "F");
    let pre_a: Vec<NodeId> = (0..extra).map(|i| relay(&mut net, &format!("X{i}"))).collect();
    let pre_d: Vec<NodeId> = (0..extra).map(|i| relay(&mut net, &format!("Y{i}"))).collect();
    let botmaster = net.add_node("botmaster", Role::Botmaster, 0).unwrap();
    let cc = net.add_node("cc", Role::CncServer, 0).unwrap();

    let mut branch_a = vec![botmaster];
    branch_a.extend(&pre_a);
    branch_a.extend([a, b, c, cc]);
    let mut branch_d = vec![botmaster];
    branch_d.extend(&pre_d);
    branch_d.extend([d, e, f, cc]);
    for branch in [&branch_a, &branch_d] {
        // private first and last edges, funded on the botmaster side
        net.insert_genesis_channel(branch[0], branch[1], CAP, CAP, true, FeePolicy::default()).unwrap();
        chain(&mut net, &branch[1..branch.len() - 1]);
        let n = branch.len();
        net.insert_genesis_channel(branch[n - 2], branch[n - 1], CAP, CAP, true, FeePolicy::default()).unwrap();
    }
    let upstream_a = branch_a[branch_a.len() - 5];
    let upstream_d = branch_d[branch_d.len() - 5];
    let engine = PaymentEngine::new(net, EngineConfig::default(), 17).unwrap();
    TwoBranch { engine, botmaster, cc, a, d, upstream_a, upstream_d }
}

/// The two payments of the scenario: 100 sat over the A branch, then 50 sat
/// over the D branch. Returns the C&C receipts.
fn send_pair(w: &mut TwoBranch) -> TranscriptBook {
    let key = w.engine.network().public_key(w.cc).unwrap();
    let first_hop = |w: &TwoBranch, via: NodeId| {
        let net = w.engine.network();
        net.open_channels_of(w.botmaster)
            .find(|ch| {
                let peer = ch.peer_of(w.botmaster).unwrap();
                peer == via || net.node(peer).unwrap().alias.starts_with(if via == w.a { 'X' } else { 'Y' })
            })
            .map(|ch| ch.channel_id)
            .unwrap()
    };
    let mut book = TranscriptBook::from([(w.cc, CommandTranscript::new(w.cc, EncodingScheme::Ascii))]);
    for (amount, via) in [(100, w.a), (50, w.d)] {
        let constraints = RouteConstraints { first_hop: Some(first_hop(w, via)), ..RouteConstraints::default() };
        let r = w.engine.send_keysend_with(w.botmaster, &key, amount, &constraints);
        assert!(r.success, "{r:?}");
        deliver(&mut book, &r);
    }
    book
}

fn monitors(w: &TwoBranch) -> MonitorSet {
    MonitorSet { relays: [w.a, w.d].into(), cnc_servers: [w.cc].into() }
}

#[test]
fn baseline_ranks_botmaster_first() {
    let mut w = two_branch(0);
    let book = send_pair(&mut w);
    let ev = monitors(&w).collect(&w.engine, &book);
    assert_eq!(ev.receipts.iter().map(|r| r.amount_sat).collect::<Vec<_>>(), vec![100, 50]);
    let ranking = correlate(&ev.receipts, &ev.monitor_logs, &directory_of(w.engine.network()), &CorrelationParams::default())
        .unwrap();
    assert_eq!(ranking[0].candidate_predecessor, w.botmaster);
    assert_eq!(ranking[0].score, 1.0);
    assert_eq!(ranking.len(), 1);
    let m = detection_metrics(w.botmaster, &ranking);
    assert_eq!(m.rank_of_truth, Some(1));
    assert_eq!(m.score_margin, 1.0);
}

#[test]
fn two_more_hops_misattributes() {
    let mut w = two_branch(2);
    let book = send_pair(&mut w);
    let ev = monitors(&w).collect(&w.engine, &book);
    let ranking = correlate(&ev.receipts, &ev.monitor_logs, &directory_of(w.engine.network()), &CorrelationParams::default())
        .unwrap();
    assert_eq!(ranking[0].candidate_predecessor, w.upstream_a);
    assert!(ranking.iter().any(|f| f.candidate_predecessor == w.upstream_d));
    let m = detection_metrics(w.botmaster, &ranking);
    assert_eq!(m.rank_of_truth, None);
    assert!(m.score_margin < 0.0);
}

#[test]
fn empty_monitor_set_finds_nothing() {
    let mut w = two_branch(0);
    let book = send_pair(&mut w);
    let ev = MonitorSet::default().collect(&w.engine, &book);
    let ranking = correlate(&ev.receipts, &ev.monitor_logs, &directory_of(w.engine.network()), &CorrelationParams::default())
        .unwrap();
    assert!(ranking.is_empty());
}

#[test]
fn unmonitored_traffic_does_not_change_findings() {
    let run = |noise: bool| {
        let mut w = two_branch(0);
        if noise {
            // a separate relay pair whose traffic never crosses A or D
            let net = w.engine.network_mut();
            let u = net.add_node("U", Role::Relay, 0).unwrap();
            let v = net.add_node("V", Role::Relay, 0).unwrap();
            net.insert_genesis_channel(u, v, CAP, CAP, false, FeePolicy::default()).unwrap();
            let key = net.public_key(v).unwrap();
            for i in 0..20 {
                let r = w.engine.send_keysend_at(i * 1_000_000_000, u, &key, 100, &RouteConstraints::default());
                assert!(r.success);
            }
        }
        let book = send_pair(&mut w);
        let ev = monitors(&w).collect(&w.engine, &book);
        correlate(&ev.receipts, &ev.monitor_logs, &directory_of(w.engine.network()), &CorrelationParams::default()).unwrap()
    };
    assert_eq!(run(false), run(true));
}

/// Every (event, receipt) combination checked directly.
fn brute_force(
    receipts: &[Receipt],
    logs: &BTreeMap<NodeId, Vec<ForwardingEvent>>,
    dir: &ChannelDirectory,
    window_ns: u64,
    tol: u64,
) -> BTreeMap<NodeId, (usize, usize)> {
    let mut out: BTreeMap<NodeId, (usize, std::collections::BTreeSet<usize>)> = BTreeMap::new();
    for (ri, r) in receipts.iter().enumerate() {
        for (&m, events) in logs {
            for e in events {
                let in_window = e.timestamp_ns <= r.timestamp_ns && r.timestamp_ns - e.timestamp_ns <= window_ns;
                let amount = e.amt_out_sat >= r.amount_sat && e.amt_out_sat <= r.amount_sat + tol;
                if !(in_window && amount) {
                    continue;
                }
                let Some(info) = dir.get(&e.chan_id_in) else { continue };
                let up = if info.node1 == m {
                    info.node2
                } else if info.node2 == m {
                    info.node1
                } else {
                    continue;
                };
                let entry = out.entry(up).or_default();
                entry.0 += 1;
                entry.1.insert(ri);
            }
        }
    }
    out.into_iter().map(|(k, (pairs, rs))| (k, (pairs, rs.len()))).collect()
}

#[test]
fn correlation_is_sound_and_complete_on_random_logs() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for round in 0..200 {
        let n_nodes = rng.gen_range(2..8u32);
        let dir: ChannelDirectory = (0..rng.gen_range(1..10u64))
            .map(|c| {
                let a = rng.gen_range(0..n_nodes);
                let b = (a + rng.gen_range(1..n_nodes)) % n_nodes;
                (ChannelId(c), ChannelInfo { chan_id: ChannelId(c), node1: NodeId(a), node2: NodeId(b) })
            })
            .collect();
        let logs: BTreeMap<NodeId, Vec<ForwardingEvent>> = (0..rng.gen_range(0..4u32))
            .map(|m| {
                let events = (0..rng.gen_range(0..12))
                    .map(|_| {
                        let out = rng.gen_range(1..140);
                        ForwardingEvent {
                            timestamp_ns: rng.gen_range(0..60) * 1_000_000_000,
                            chan_id_in: ChannelId(rng.gen_range(0..12)),
                            chan_id_out: ChannelId(rng.gen_range(0..12)),
                            amt_in_sat: out + 1,
                            amt_out_sat: out,
                            fee_sat: 1,
                        }
                    })
                    .collect();
                (NodeId(m), events)
            })
            .collect();
        let receipts: Vec<Receipt> = (0..rng.gen_range(0..10))
            .map(|_| Receipt { timestamp_ns: rng.gen_range(0..70) * 1_000_000_000, amount_sat: rng.gen_range(1..130) })
            .collect();
        let window_s = rng.gen_range(1..20) as f64;
        let tol = rng.gen_range(0..10);
        let params = CorrelationParams { window_s, fee_tolerance_sat: tol };
        let ranking = correlate(&receipts, &logs, &dir, &params).unwrap();
        let oracle = brute_force(&receipts, &logs, &dir, window_s as u64 * 1_000_000_000, tol);
        assert_eq!(ranking.len(), oracle.len(), "round {round}");
        for f in &ranking {
            let (pairs, explained) = oracle[&f.candidate_predecessor];
            assert_eq!(f.matched_pairs.len(), pairs, "round {round}");
            assert_eq!(f.matched_receipts, explained);
            assert_eq!(f.score, explained as f64 / receipts.len() as f64);
            for p in &f.matched_pairs {
                assert!(params.matches(&p.event, &p.receipt));
            }
        }
        for w in ranking.windows(2) {
            assert!(
                w[0].score > w[1].score
                    || (w[0].score == w[1].score && w[0].candidate_predecessor < w[1].candidate_predecessor)
            );
        }
    }
}

/// Botmaster sends 100 sat over A every 30 s; cover senders push 100 sat
/// payments through A to a sink. Cover sets are nested, so each higher
/// rate only adds events.
#[test]
fn cover_traffic_degrades_attribution_monotonically() {
    let rates = [0usize, 20, 80, 320, 1280];
    let mut schedule_rng = ChaCha8Rng::seed_from_u64(5);
    let schedule: Vec<(u64, usize)> = (0..*rates.last().unwrap())
        .map(|_| (schedule_rng.gen_range(0..600_000_000_000u64), schedule_rng.gen_range(0..2)))
        .collect();

    let mut ranks = Vec::new();
    let mut margins = Vec::new();
    for &rate in &rates {
        let mut net = Network::new(NetworkConfig::default(), 8);
        let senders: Vec<NodeId> = (0..2).map(|i| net.add_node(&format!("S{i}"), Role::Relay, 0).unwrap()).collect();
        let a = net.add_node("A", Role::Relay, 0).unwrap();
        let b = net.add_node("B", Role::Relay, 0).unwrap();
        let c = net.add_node("C", Role::Relay, 0).unwrap();
        let sink = net.add_node("T", Role::Relay, 0).unwrap();
        let botmaster = net.add_node("botmaster", Role::Botmaster, 0).unwrap();
        let cc = net.add_node("cc", Role::CncServer, 0).unwrap();
        let p = FeePolicy::default();
        for &s in &senders {
            net.insert_genesis_channel(s, a, CAP, CAP, false, p).unwrap();
        }
        chain(&mut net, &[a, b, c]);
        net.insert_genesis_channel(b, sink, CAP, CAP / 2, false, p).unwrap();
        net.insert_genesis_channel(botmaster, a, CAP, CAP, true, p).unwrap();
        net.insert_genesis_channel(c, cc, CAP, CAP, true, p).unwrap();
        let mut engine = PaymentEngine::new(net, EngineConfig::default(), 1).unwrap();
        let cc_key = engine.network().public_key(cc).unwrap();
        let sink_key = engine.network().public_key(sink).unwrap();
        let mut receipts = Vec::new();
        for j in 0..20u64 {
            let r = engine.send_keysend_at(j * 30_000_000_000, botmaster, &cc_key, 100, &RouteConstraints::default());
            assert!(r.success);
            receipts.push(Receipt { timestamp_ns: r.settled_ns, amount_sat: 100 });
        }
        for &(at, s) in &schedule[..rate] {
            let r = engine.send_keysend_at(at, senders[s], &sink_key, 100, &RouteConstraints::default());
            assert!(r.success);
        }
        let logs = BTreeMap::from([(a, engine.forwarding_history(a))]);
        let ranking =
            correlate(&receipts, &logs, &directory_of(engine.network()), &CorrelationParams::default()).unwrap();
        let m = detection_metrics(botmaster, &ranking);
        ranks.push(m.rank_of_truth.expect("botmaster always matches"));
        margins.push(m.score_margin);
    }
    assert_eq!((ranks[0], margins[0]), (1, 1.0));
    assert!(ranks.windows(2).all(|w| w[0] <= w[1]), "ranks {ranks:?}");
    assert!(margins.windows(2).all(|w| w[0] >= w[1]), "margins {margins:?}");
    assert!(*ranks.last().unwrap() > 1, "dense cover should hide the origin: {ranks:?}");
}
