//! Randomized two-switch mini scenarios and the simulator invariants
//! checked over them. Shared between the property suite and the acceptance
//! scorecard.

use std::collections::BTreeSet;

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};

use tssdn_sim::desim::{TraceAction, NS_PER_US};
use tssdn_sim::engine::{
    run_scenario, AsyncFlowDef, BeFlowDef, ConfigDef, InjectionDef, LinkDef, NodeDef, RunSpec,
    Scenario, SrDef, SyncFlowDef, Variant,
};
use tssdn_sim::netmodel::{
    host_ip, host_mac, ifg_ns, wire_time_ns, HeaderTuple, NodeKind, Topology,
};
use tssdn_sim::txnsched::{Strategy as UpdateStrategy, TxnLogRow, TxnPhase};

/// Cases per property suite; the whole set of suites must clear in well
/// under a minute.
pub const SUITE_CASES: u32 = 100;

const MBPS_100: u64 = 100_000_000;
const SOURCES: [&str; 2] = ["H1", "H2"];
/// Flow `i` emits at phase `i * 125` us with a first-hop delay of 0 or
/// 375 us, so every phase+delay combination stays at least 125 us (one
/// guard band plus slack) from every other, and the latest second-hop
/// window still ends inside the period. That keeps every generated gate
/// schedule overlap-free.
const DELAY_SLOTS: [u64; 2] = [0, 375];
const PHASE_STEP_US: u64 = 125;

/// Parameters of one randomized scenario: hosts H1/H2 on one switch, sink
/// H3 on a second, every flow crossing the inter-switch trunk.
#[derive(Debug, Clone)]
pub struct Mini {
    /// Per scheduled flow: (source index, first-hop delay slot).
    pub sync: Vec<(usize, usize)>,
    /// Per best-effort flow: (source index, period in us).
    pub be: Vec<(usize, u64)>,
    pub with_async: bool,
    pub t_end_ms: u64,
}

impl Mini {
    pub fn build(&self) -> Scenario {
        let mut sc = Scenario::empty("mini");
        sc.t_end_us = self.t_end_ms * 1_000;
        for (name, kind) in [
            ("H1", NodeKind::Host),
            ("H2", NodeKind::Host),
            ("H3", NodeKind::Host),
            ("SwA", NodeKind::Switch),
            ("SwB", NodeKind::Switch),
            ("Ctrl", NodeKind::Controller),
        ] {
            sc.nodes.push(NodeDef { name: name.into(), kind });
        }
        for (a, b) in [
            ("H1", "SwA"),
            ("H2", "SwA"),
            ("H3", "SwB"),
            ("SwA", "SwB"),
            ("Ctrl", "SwA"),
            ("Ctrl", "SwB"),
        ] {
            sc.links.push(LinkDef {
                a: a.into(),
                b: b.into(),
                bandwidth_bps: MBPS_100,
                forwarding_delay_ns: 3_000,
            });
        }
        sc.controller = Some("Ctrl".into());
        let mut delays = Vec::new();
        for (i, (src, slot)) in self.sync.iter().enumerate() {
            let name = format!("F{}", i + 1);
            sc.sync_flows.push(SyncFlowDef {
                name: name.clone(),
                cf_id: (i + 1) as u32,
                source: SOURCES[*src].into(),
                dest: "H3".into(),
                pcp: 5 + i as u8,
                wire_bytes: 1522,
                phase_us: i as u64 * PHASE_STEP_US,
                frames_per_period: 1,
                active_from_us: 20_000,
                active_until_us: sc.t_end_us - 10_000,
            });
            delays.push((name, DELAY_SLOTS[*slot]));
        }
        sc.configs.push(ConfigDef { label: "C1".into(), at_us: 15_000, delays });
        for (i, (src, period)) in self.be.iter().enumerate() {
            sc.be_flows.push(BeFlowDef {
                name: format!("BE{}", i + 1),
                source: SOURCES[*src].into(),
                dest: "H3".into(),
                period_us: *period,
                start_us: 5_000,
                src_port: 50_000 + i as u16,
                dst_port: 60_000,
            });
        }
        if self.with_async {
            sc.async_flows.push(AsyncFlowDef {
                name: "A1".into(),
                stream_id: 9,
                source: "H2".into(),
                dest: "H3".into(),
                pcp: 4,
                wire_bytes: 1522,
                period_us: 2_000,
                reserved_bps: 6_168_000,
                until_us: sc.t_end_us,
                src_port: 40_000,
                dst_port: 40_000,
            });
            sc.reservations.push(SrDef { flow: "A1".into(), at_us: 8_000, step_us: 50 });
        }
        sc.tsn_static_config = Some("C1".into());
        sc
    }
}

/// `with_load` adds best-effort and reserved traffic on top of the
/// scheduled flows.
fn mini_strategy(with_load: bool) -> impl Strategy<Value = Mini> {
    let be_max = if with_load { 2 } else { 0 };
    (
        proptest::collection::vec((0usize..2, 0usize..2), 1..=3),
        proptest::collection::vec(
            (0usize..2, prop_oneof![Just(1_700u64), Just(2_300), Just(3_100)]),
            0..=be_max,
        ),
        any::<bool>(),
        prop_oneof![Just(40u64), Just(50)],
    )
        .prop_map(move |(sync, be, with_async, t_end_ms)| Mini {
            sync,
            be,
            with_async: with_load && with_async,
            t_end_ms,
        })
}

fn variant_strategy() -> impl Strategy<Value = Variant> {
    prop_oneof![
        Just(Variant::Tssdn),
        Just(Variant::Tsn { gate_control: true }),
        Just(Variant::Tsn { gate_control: false }),
    ]
}

fn update_strategy() -> impl Strategy<Value = UpdateStrategy> {
    prop_oneof![Just(UpdateStrategy::SyncCommit), Just(UpdateStrategy::Ordered), Just(UpdateStrategy::Split)]
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(PropConfig { cases, failure_persistence: None, ..PropConfig::default() })
}

/// Re-running the same scenario, variant, strategy, and seed reproduces the
/// run byte for byte.
pub fn run_determinism(cases: u32) -> Result<(), String> {
    runner(cases)
        .run(
            &(mini_strategy(true), variant_strategy(), update_strategy(), 0u64..1_000),
            |(mini, variant, strategy, seed)| {
                let sc = mini.build();
                let spec = RunSpec { variant, strategy, seed };
                let a = run_scenario(&sc, &spec);
                let b = run_scenario(&sc, &spec);
                prop_assert_eq!(a.trace.to_csv_string(), b.trace.to_csv_string());
                prop_assert_eq!(&a.latencies, &b.latencies);
                prop_assert_eq!(a.txn_log.to_csv_string(), b.txn_log.to_csv_string());
                prop_assert_eq!(&a.sr_durations, &b.sr_durations);
                prop_assert_eq!(a.final_queued, b.final_queued);
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

/// Emission count of a scheduled flow, replicated from its definition
/// alone.
fn expected_emissions(f: &SyncFlowDef) -> usize {
    let mut n = 0;
    let mut k = 0;
    loop {
        let t = k * 1_000 + f.phase_us;
        if t >= f.active_until_us {
            return n;
        }
        if t >= f.active_from_us {
            n += f.frames_per_period as usize;
        }
        k += 1;
    }
}

fn unicast_injection(i: usize) -> InjectionDef {
    // H1 (roster position 0) to H3 (position 2), plain IPv4 over UDP.
    InjectionDef {
        node: "H1".into(),
        at_ns: (12_000 + 700 * i as u64) * NS_PER_US,
        headers: HeaderTuple::l2(host_mac(2), host_mac(0), 0x0800, None, 0)
            .with_ipv4(host_ip(0), host_ip(2), 0, 17)
            .with_ports(55_000, 56_000 + i as u16),
        wire_bytes: 200,
        tag: format!("inj{i}"),
    }
}

/// With no drop rules and senders quiescing 10 ms before the end of the
/// run, every emitted frame is delivered exactly once and nothing is left
/// queued.
pub fn run_conservation(cases: u32) -> Result<(), String> {
    runner(cases)
        .run(
            &(mini_strategy(false), variant_strategy(), 0usize..=2, 0u64..1_000),
            |(mini, variant, n_inject, seed)| {
                let mut sc = mini.build();
                for i in 0..n_inject {
                    sc.injections.push(unicast_injection(i));
                }
                let spec = RunSpec { variant, strategy: UpdateStrategy::SyncCommit, seed };
                let out = run_scenario(&sc, &spec);
                for f in &sc.sync_flows {
                    let lats: Vec<_> =
                        out.latencies.iter().filter(|l| l.flow == f.name).collect();
                    let expected = expected_emissions(f);
                    prop_assert_eq!(
                        lats.len(),
                        expected,
                        "flow {} delivered {} of {} frames",
                        f.name,
                        lats.len(),
                        expected
                    );
                    let ids: BTreeSet<u64> = lats.iter().map(|l| l.frame_id).collect();
                    prop_assert_eq!(ids.len(), lats.len(), "duplicate deliveries in {}", f.name);
                    for id in &ids {
                        let n =
                            out.deliveries.iter().filter(|d| d.frame.frame_id == *id).count();
                        prop_assert_eq!(n, 1, "frame {} delivered {} times", id, n);
                    }
                }
                for id in &out.injection_frame_ids {
                    let n = out.deliveries.iter().filter(|d| d.frame.frame_id == *id).count();
                    prop_assert_eq!(n, 1, "injected frame {} delivered {} times", id, n);
                }
                prop_assert_eq!(out.final_queued, 0);
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

/// Every lock row is later matched by a release row for the same
/// transaction and device, and no device is locked twice by one
/// transaction.
fn locks_are_paired(rows: &[TxnLogRow]) -> Result<(), TestCaseError> {
    for r in rows.iter().filter(|r| r.phase == TxnPhase::Lock) {
        let released = rows.iter().any(|q| {
            q.phase == TxnPhase::Release
                && q.txn_id == r.txn_id
                && q.device == r.device
                && q.t_ns >= r.t_ns
        });
        prop_assert!(released, "lock {}@{} never released", r.txn_id, r.device);
        let n = rows
            .iter()
            .filter(|q| {
                q.phase == TxnPhase::Lock && q.txn_id == r.txn_id && q.device == r.device
            })
            .count();
        prop_assert_eq!(n, 1, "device {} locked {} times by {}", &r.device, n, &r.txn_id);
    }
    Ok(())
}

/// A prepare fault aborts its (sub-)transaction completely: nothing under
/// an aborted id is ever applied, the faulted device keeps its boot gates,
/// and no lock leaks. All-or-nothing strategies keep the whole network on
/// boot gates.
pub fn run_rollback(cases: u32) -> Result<(), String> {
    runner(cases)
        .run(
            &(mini_strategy(false), update_strategy(), 0usize..2, 0u64..1_000),
            |(mini, strategy, fault_dev, seed)| {
                let mut sc = mini.build();
                let dev = ["SwA", "SwB"][fault_dev];
                sc.faults.push(("C1".into(), dev.into()));
                let spec = RunSpec { variant: Variant::Tssdn, strategy, seed };
                let out = run_scenario(&sc, &spec);
                let rows = out.txn_log.rows();
                let aborted: BTreeSet<&str> = rows
                    .iter()
                    .filter(|r| r.phase == TxnPhase::Abort)
                    .map(|r| r.txn_id.as_str())
                    .collect();
                prop_assert!(!aborted.is_empty(), "fault on {} never fired", dev);
                for r in rows.iter().filter(|r| r.phase == TxnPhase::Applied) {
                    prop_assert!(
                        !aborted.contains(r.txn_id.as_str()),
                        "{} applied on {} despite aborting",
                        &r.txn_id,
                        &r.device
                    );
                }
                for ((node, _), gcl) in &out.final_gcls {
                    if node != dev && strategy == UpdateStrategy::Split {
                        continue;
                    }
                    for pcp in 0..8 {
                        prop_assert!(
                            gcl.always_open(pcp),
                            "{} gates changed despite rollback",
                            node
                        );
                    }
                }
                locks_are_paired(rows)?;
                if strategy != UpdateStrategy::Split {
                    prop_assert!(
                        rows.iter().all(|r| r.phase != TxnPhase::Applied),
                        "all-or-nothing strategy applied a faulted transaction"
                    );
                }
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

/// Locks are always requested in ascending device order within each
/// (sub-)transaction, the order that rules out deadlock.
pub fn run_lock_order(cases: u32) -> Result<(), String> {
    runner(cases)
        .run(
            &(
                mini_strategy(false),
                update_strategy(),
                proptest::collection::vec(0usize..2, 3),
                0u64..1_000,
            ),
            |(mini, strategy, c2_slots, seed)| {
                let mut sc = mini.build();
                // C2 always flips the first flow's delay so the transition
                // is never a no-op.
                let delays2: Vec<(String, u64)> = sc
                    .sync_flows
                    .iter()
                    .enumerate()
                    .map(|(i, f)| {
                        let slot =
                            if i == 0 { 1 - mini.sync[0].1 } else { c2_slots[i] };
                        (f.name.clone(), DELAY_SLOTS[slot])
                    })
                    .collect();
                sc.configs.push(ConfigDef { label: "C2".into(), at_us: 30_000, delays: delays2 });
                let spec = RunSpec { variant: Variant::Tssdn, strategy, seed };
                let out = run_scenario(&sc, &spec);
                let rows = out.txn_log.rows();
                let txns: BTreeSet<&str> =
                    rows.iter().filter(|r| r.phase == TxnPhase::Lock).map(|r| r.txn_id.as_str()).collect();
                prop_assert!(!txns.is_empty(), "no transaction took any lock");
                for txn in txns {
                    let devs: Vec<&str> = rows
                        .iter()
                        .filter(|r| r.phase == TxnPhase::Lock && r.txn_id == txn)
                        .map(|r| r.device.as_str())
                        .collect();
                    let mut sorted = devs.clone();
                    sorted.sort();
                    prop_assert_eq!(devs, sorted, "{} locked devices out of order", txn);
                }
                locks_are_paired(rows)?;
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

/// Scheduled egress ports along every scheduled flow's path, derived the
/// same way the schedule builder derives them.
fn scheduled_ports(sc: &Scenario) -> BTreeSet<(String, u32)> {
    let mut topo = Topology::new();
    for n in &sc.nodes {
        topo.add_node(&n.name, n.kind);
    }
    for l in &sc.links {
        topo.add_link(&l.a, &l.b, l.bandwidth_bps, l.forwarding_delay_ns);
    }
    let mut out = BTreeSet::new();
    for f in &sc.sync_flows {
        let path = topo.shortest_path(&f.source, &f.dest).expect("flow endpoints connected");
        for pair in path.windows(2) {
            if topo.node_kind(&pair[0]) == Some(NodeKind::Switch) {
                let port = topo.port_toward(&pair[0], &pair[1]).expect("adjacent");
                out.insert((pair[0].clone(), port));
            }
        }
    }
    out
}

/// Under static gate control, no transmission ever starts unless the full
/// frame plus inter-frame gap fits in the open run beginning at that
/// instant; the guard band is never overrun by any priority.
pub fn run_guard_band(cases: u32) -> Result<(), String> {
    runner(cases)
        .run(&(mini_strategy(true), 0u64..1_000), |(mini, seed)| {
            let sc = mini.build();
            let spec = RunSpec {
                variant: Variant::Tsn { gate_control: true },
                strategy: UpdateStrategy::SyncCommit,
                seed,
            };
            let out = run_scenario(&sc, &spec);
            let scheduled = scheduled_ports(&sc);
            let mut checked = 0usize;
            for rec in out.trace.records() {
                if rec.action != TraceAction::Sent {
                    continue;
                }
                let Some(port) = rec.port else { continue };
                let key = (rec.node.clone(), port);
                if !scheduled.contains(&key) {
                    continue;
                }
                let gcl = out.final_gcls.get(&key).expect("scheduled port has a gate list");
                let need = wire_time_ns(rec.wire_bytes, MBPS_100) + ifg_ns(MBPS_100);
                prop_assert_eq!(
                    gcl.next_fit(rec.t_ns, rec.pcp, need),
                    Some(rec.t_ns),
                    "transmission at {} on {}:{} overruns its gate",
                    rec.t_ns,
                    &rec.node,
                    port
                );
                checked += 1;
            }
            prop_assert!(checked > 0, "no transmissions crossed a scheduled port");
            Ok(())
        })
        .map_err(|e| e.to_string())
}
