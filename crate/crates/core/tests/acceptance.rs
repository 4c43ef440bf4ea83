//! Acceptance scorecard: one test per headline requirement of the
//! simulator, each printing a single `criterion NN [PASS|FAIL]` line
//! (visible with `cargo test --test acceptance -- --nocapture`).
//!
//! The latency criteria share one cached set of runs over the reference
//! evaluation network: 20-seed sweeps of the controlled build, the static
//! gated build, the ungated build, and a controlled build whose
//! reservation handshake lands mid-schedule, plus single ordered and split
//! update runs.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use tssdn_sim::attacksim::{
    attack_lab_scenario, lab_acl, parse_replay_trace, run_attack, AccessControl, AttackKind,
    AttackScenario, LAB_TCP_LISTENERS, LAB_UDP_LISTENERS, LAB_ZCS,
};
use tssdn_sim::cli::analytic_bound_rows;
use tssdn_sim::desim::Nanos;
use tssdn_sim::engine::{
    flow_max_latency, reference_scenario, run_scenario, MulticastPolicy, RunOutput, RunSpec,
    Scenario, Variant,
};
use tssdn_sim::netmodel::{backbone_flows, parse_comm_matrix_str, CommunicationMatrix, ControlFlow};
use tssdn_sim::secsep::{
    classify_paths, derive_network_flows, EmbedConsts, EmbeddingStrategy, PathVerdict,
};
use tssdn_sim::txnsched::Strategy;

const SEEDS: u64 = 20;
const MS: Nanos = 1_000_000;

// Expected latencies and bounds, nanoseconds.
const S1_EARLY_NS: Nanos = 373_200;
const S1_LATE_NS: Nanos = 548_200;
const S2_C2_NS: Nanos = 448_200;
const S2_C3_NS: Nanos = 373_200;
const S3_C3_NS: Nanos = 247_800;
const S4_BOUND_NS: Nanos = 1_360_080;
/// An ordered-update anomaly stretches a frame by at least 0.8 ms over the
/// steady-state value.
const ANOMALY_MIN_NS: Nanos = S1_LATE_NS + 800_000;

struct RunSet {
    /// Controlled build, synchronized updates, reservation at 100 ms.
    tssdn: Vec<RunOutput>,
    /// Static gate lists, distributed reservation.
    tsn_gated: Vec<RunOutput>,
    /// Controlled build with the reservation handshake at 450 ms, inside
    /// the third configuration's gating.
    tssdn_late_sr: Vec<RunOutput>,
    /// No gates at all, distributed reservation.
    tsn_plain: Vec<RunOutput>,
    /// Single seed-0 runs of the two non-atomic update strategies.
    ordered: RunOutput,
    split: RunOutput,
}

fn runs() -> &'static RunSet {
    static RUNS: OnceLock<RunSet> = OnceLock::new();
    RUNS.get_or_init(|| {
        let sc = reference_scenario();
        let mut late = sc.clone();
        late.reservations[0].at_us = 450_000;
        let sweep = |sc: &Scenario, variant: Variant| -> Vec<RunOutput> {
            (0..SEEDS)
                .into_par_iter()
                .map(|seed| {
                    run_scenario(sc, &RunSpec { variant, strategy: Strategy::SyncCommit, seed })
                })
                .collect()
        };
        let ((tssdn, tsn_gated), (tssdn_late_sr, tsn_plain)) = rayon::join(
            || {
                rayon::join(
                    || sweep(&sc, Variant::Tssdn),
                    || sweep(&sc, Variant::Tsn { gate_control: true }),
                )
            },
            || {
                rayon::join(
                    || sweep(&late, Variant::Tssdn),
                    || sweep(&sc, Variant::Tsn { gate_control: false }),
                )
            },
        );
        let ordered = run_scenario(
            &sc,
            &RunSpec { variant: Variant::Tssdn, strategy: Strategy::Ordered, seed: 0 },
        );
        let split = run_scenario(
            &sc,
            &RunSpec { variant: Variant::Tssdn, strategy: Strategy::Split, seed: 0 },
        );
        RunSet { tssdn, tsn_gated, tssdn_late_sr, tsn_plain, ordered, split }
    })
}

fn report(n: u32, name: &str, ok: bool, detail: &str) {
    println!("criterion {n:>2} [{}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} ({name}) failed: {detail}");
}

/// Start of the first stable (non-transition) span with this label.
fn stable_start(out: &RunOutput, label: &str) -> Nanos {
    out.spans
        .iter()
        .find(|s| !s.transition && s.label == label)
        .map(|s| s.from_ns)
        .unwrap_or_else(|| panic!("run has no stable {label} span"))
}

#[test]
fn criterion_01_scheduled_latency_follows_the_slot_exactly() {
    let sc = reference_scenario();
    let t0 = Instant::now();
    let _probe = run_scenario(
        &sc,
        &RunSpec { variant: Variant::Tssdn, strategy: Strategy::SyncCommit, seed: 0 },
    );
    let elapsed = t0.elapsed();
    let budget = Duration::from_secs_f64(10.0 * sc.t_end_us as f64 / 1e6);

    let (mut early, mut late, mut bad) = (0u64, 0u64, 0u64);
    for out in &runs().tssdn {
        let t3 = stable_start(out, "C3");
        for l in out.latencies.iter().filter(|l| l.flow == "S1") {
            let want = if l.emit_ns < t3 { S1_EARLY_NS } else { S1_LATE_NS };
            if l.emit_ns < t3 {
                early += 1;
            } else {
                late += 1;
            }
            if l.latency_ns() != want {
                bad += 1;
            }
        }
    }
    let ok = bad == 0 && early > 0 && late > 0 && elapsed < budget;
    report(
        1,
        "S1 latency is 373.2 us before C3 and 548.2 us after, runtime in budget",
        ok,
        &format!(
            "{early} frames at 373.2 us, {late} at 548.2 us, {bad} deviations across {SEEDS} \
             seeds; 0.8 s simulated in {elapsed:.2?} (budget {budget:.1?})"
        ),
    );
}

#[test]
fn criterion_02_remaining_scheduled_flows_match_their_slots() {
    let (mut n, mut bad) = (0u64, 0u64);
    for out in &runs().tssdn {
        let t2 = stable_start(out, "C2");
        let t3 = stable_start(out, "C3");
        let t4 = stable_start(out, "C4");
        for l in out.latencies.iter().filter(|l| l.flow == "S2") {
            let want = if l.emit_ns >= t2 && l.emit_ns < t3 {
                S2_C2_NS
            } else if l.emit_ns >= t3 && l.emit_ns < t4 {
                S2_C3_NS
            } else {
                continue;
            };
            n += 1;
            if l.latency_ns() != want {
                bad += 1;
            }
        }
        for l in out.latencies.iter().filter(|l| l.flow == "S3") {
            if l.emit_ns >= t3 && l.emit_ns < t4 {
                n += 1;
                if l.latency_ns() != S3_C3_NS {
                    bad += 1;
                }
            }
        }
    }
    let ok = bad == 0 && n > 0;
    report(
        2,
        "S2 at 448.2/373.2 us under C2/C3 and S3 at 247.8 us under C3",
        ok,
        &format!("{n} frames checked across {SEEDS} seeds, {bad} deviations"),
    );
}

#[test]
fn criterion_03_reserved_stream_stays_under_its_bound() {
    let mut max = 0;
    let mut n = 0u64;
    for out in &runs().tssdn {
        for l in out.latencies.iter().filter(|l| l.flow == "S4") {
            max = max.max(l.latency_ns());
            n += 1;
        }
    }
    let ok = n > 0 && max <= S4_BOUND_NS;
    report(
        3,
        "max S4 latency across the 20-seed start-phase sweep is within 1360.08 us",
        ok,
        &format!("measured max {:.2} us over {n} frames, bound {:.2} us", max as f64 / 1e3, S4_BOUND_NS as f64 / 1e3),
    );
}

#[test]
fn criterion_04_controlled_build_never_worse_than_static_gates() {
    let intervals: [(Nanos, Nanos, &str); 6] = [
        (200 * MS, 300 * MS, "C1"),
        (300 * MS, 400 * MS, "C2"),
        (400 * MS, 500 * MS, "C3"),
        (500 * MS, 600 * MS, "C4"),
        (600 * MS, 700 * MS, "C5"),
        (700 * MS, 800 * MS, "C6"),
    ];
    let flows = ["S1", "S4", "BE-S4"];
    let sweep_max = |outs: &[RunOutput], flow: &str, from: Nanos, to: Nanos| -> Option<Nanos> {
        outs.iter().filter_map(|o| flow_max_latency(o, flow, from, to)).max()
    };
    let (mut compared, mut bad) = (0u32, Vec::new());
    for (from, to, label) in intervals {
        for flow in flows {
            let a = sweep_max(&runs().tssdn, flow, from, to);
            let b = sweep_max(&runs().tsn_gated, flow, from, to);
            match (a, b) {
                (Some(a), Some(b)) => {
                    compared += 1;
                    if a > b {
                        bad.push(format!(
                            "{flow}@{label}: controlled {:.2} us > static {:.2} us",
                            a as f64 / 1e3,
                            b as f64 / 1e3
                        ));
                    }
                }
                (None, None) => {}
                _ => bad.push(format!("{flow}@{label}: present in only one build")),
            }
        }
    }
    let ok = bad.is_empty() && compared > 0;
    report(
        4,
        "per interval and flow, controlled max latency <= static-gate max",
        ok,
        &format!("{compared} interval/flow cells compared across {SEEDS} seeds{}{}",
            if bad.is_empty() { "" } else { "; " },
            bad.join("; ")),
    );
}

/// Latency bound that applies to a frame emitted at `emit`, from the
/// analytic per-configuration table: the span's bound when stable, the
/// larger of both configurations' bounds inside a transition.
fn applicable_bound(
    bounds: &BTreeMap<(String, String), Nanos>,
    out: &RunOutput,
    flow: &str,
    emit: Nanos,
) -> Option<Nanos> {
    let span = out.spans.iter().find(|s| emit >= s.from_ns && emit < s.to_ns)?;
    let get = |cfg: &str| bounds.get(&(flow.to_string(), cfg.to_string())).copied();
    if !span.transition {
        get(&span.label)
    } else {
        let (old, new) = span.label.split_once('>')?;
        match (get(old), get(new)) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (one, two) => one.or(two),
        }
    }
}

fn bound_violations(sc: &Scenario, out: &RunOutput) -> u64 {
    let bounds: BTreeMap<(String, String), Nanos> = analytic_bound_rows(sc)
        .into_iter()
        .filter_map(|r| r.bound_ns.map(|b| ((r.flow, r.config), b)))
        .collect();
    let mut bad = 0;
    for f in &sc.sync_flows {
        for l in out.latencies.iter().filter(|l| l.flow == f.name) {
            match applicable_bound(&bounds, out, &f.name, l.emit_ns) {
                Some(b) if l.latency_ns() <= b => {}
                _ => bad += 1,
            }
        }
    }
    bad
}

#[test]
fn criterion_05_only_the_ordered_update_breaks_consistency() {
    let sc = reference_scenario();
    let anomalies = runs()
        .ordered
        .latencies
        .iter()
        .filter(|l| l.flow == "S1" && l.latency_ns() >= ANOMALY_MIN_NS)
        .count();
    let sync_bad = bound_violations(&sc, &runs().tssdn[0]);
    let split_bad = bound_violations(&sc, &runs().split);
    let ok = anomalies >= 1 && sync_bad == 0 && split_bad == 0;
    report(
        5,
        "ordered C3 update stretches S1 by >= 0.8 ms; sync and split stay in bounds",
        ok,
        &format!(
            "{anomalies} ordered S1 frames >= {:.1} us; {sync_bad} sync and {split_bad} split \
             frames above their interval bound",
            ANOMALY_MIN_NS as f64 / 1e3
        ),
    );
}

#[test]
fn criterion_06_reservation_time_orders_by_gating_and_control_plane() {
    let durations = |outs: &[RunOutput]| -> Vec<Nanos> {
        outs.iter()
            .map(|o| *o.sr_durations.get("S4").expect("reservation completed"))
            .collect()
    };
    let open_gates = durations(&runs().tssdn);
    let late = durations(&runs().tssdn_late_sr);
    let plain = durations(&runs().tsn_plain);
    let gated = durations(&runs().tsn_gated);
    let max = |v: &[Nanos]| *v.iter().max().expect("non-empty sweep");
    let min_added = open_gates
        .iter()
        .zip(&plain)
        .map(|(a, f)| *a as i128 - *f as i128)
        .min()
        .expect("non-empty sweep");
    let all_under_cap = [&open_gates, &late, &plain, &gated]
        .iter()
        .all(|v| v.iter().all(|d| *d < 200 * MS));
    let ok = max(&open_gates) < max(&late) && min_added > 0 && all_under_cap;
    report(
        6,
        "handshake cost: gates idle < gates active; central control adds round trips; all < 200 ms",
        ok,
        &format!(
            "max {:.1} us (gates idle) < {:.1} us (gates active); central minus distributed >= \
             {:.1} us; distributed {:.1} us",
            max(&open_gates) as f64 / 1e3,
            max(&late) as f64 / 1e3,
            min_added as f64 / 1e3,
            max(&plain) as f64 / 1e3,
        ),
    );
}

// --- security separation oracle ---------------------------------------------

const MATRICES: [(&str, &str); 3] = [
    ("small", include_str!("../fixtures/fixture_small.csv")),
    ("car", include_str!("../fixtures/fixture_car.csv")),
    ("edge", include_str!("../fixtures/fixture_edge.csv")),
];

/// Wire-identity key of a cross-zone flow under a strategy, restated from
/// first principles: per-message addressing separates every CF, the hidden
/// embeddings collapse CFs onto their topic or domain group address.
fn oracle_key(cf: &ControlFlow, strategy: EmbeddingStrategy) -> String {
    match strategy {
        EmbeddingStrategy::ExposedPerMessage => format!("cf:{}", cf.cf_id),
        EmbeddingStrategy::HiddenPerTopic => format!("topic:{}", cf.topic),
        EmbeddingStrategy::HiddenPerDomain => format!("domain:{}", cf.domain),
    }
}

type OracleGroups = BTreeMap<(String, String), (BTreeSet<u32>, BTreeSet<String>)>;

/// Brute-force grouping: (sender zone, wire identity) to (member CFs,
/// destination zones).
fn oracle_groups(m: &CommunicationMatrix, strategy: EmbeddingStrategy) -> OracleGroups {
    let mut g: OracleGroups = BTreeMap::new();
    for cf in backbone_flows(m) {
        let e = g.entry((cf.sender_zc.clone(), oracle_key(cf, strategy))).or_default();
        e.0.insert(cf.cf_id);
        for z in cf.receiver_zcs() {
            if z != cf.sender_zc {
                e.1.insert(z.to_string());
            }
        }
    }
    g
}

/// Brute-force verdicts over every (source zone, destination zone, CF)
/// triple: a frame reaches `dst` iff some group sourced at `src` with the
/// same wire identity delivers there.
fn oracle_verdicts(
    m: &CommunicationMatrix,
    strategy: EmbeddingStrategy,
) -> BTreeMap<(String, String, u32), PathVerdict> {
    let groups = oracle_groups(m, strategy);
    let mut verdicts = BTreeMap::new();
    for src in &m.zones {
        for dst in &m.zones {
            if src == dst {
                continue;
            }
            for cf in backbone_flows(m) {
                let key = oracle_key(cf, strategy);
                let carried = groups
                    .get(&(src.clone(), key))
                    .is_some_and(|(_, dests)| dests.contains(dst));
                let v = if cf.sender_zc == *src && cf.receiver_zcs().contains(dst.as_str()) {
                    PathVerdict::Legitimate
                } else if cf.sender_zc == *src && carried {
                    PathVerdict::Oversupplied
                } else if carried {
                    PathVerdict::Permitted
                } else {
                    PathVerdict::Forbidden
                };
                verdicts.insert((src.clone(), dst.clone(), cf.cf_id), v);
            }
        }
    }
    verdicts
}

#[test]
fn criterion_07_separation_analysis_matches_brute_force() {
    let consts = EmbedConsts::default();
    let strategies = [
        EmbeddingStrategy::ExposedPerMessage,
        EmbeddingStrategy::HiddenPerTopic,
        EmbeddingStrategy::HiddenPerDomain,
    ];
    let mut bad = Vec::new();
    let mut worst = Duration::ZERO;
    for (name, text) in MATRICES {
        let t0 = Instant::now();
        let m = parse_comm_matrix_str(text).expect("fixture matrix parses");
        let mut over_sets = Vec::new();
        let mut perm_sets = Vec::new();
        for strategy in strategies {
            let nfs = derive_network_flows(&m, strategy, &consts);
            let derived: BTreeSet<(String, BTreeSet<u32>, BTreeSet<String>)> = nfs
                .iter()
                .map(|n| (n.source_zc.clone(), n.member_cfs.clone(), n.dest_zcs.clone()))
                .collect();
            let expected: BTreeSet<(String, BTreeSet<u32>, BTreeSet<String>)> = oracle_groups(
                &m, strategy,
            )
            .into_iter()
            .map(|((zc, _), (members, dests))| (zc, members, dests))
            .collect();
            if derived != expected {
                bad.push(format!("{name}/{}: flow grouping diverges", strategy.as_str()));
            }
            let tuples: BTreeSet<_> = nfs.iter().map(|n| n.match_tuple.clone()).collect();
            if tuples.len() != nfs.len() {
                bad.push(format!("{name}/{}: duplicate match tuples", strategy.as_str()));
            }
            let cls = classify_paths(&m, &nfs);
            if cls.verdicts != oracle_verdicts(&m, strategy) {
                bad.push(format!("{name}/{}: verdicts diverge", strategy.as_str()));
            }
            if strategy == EmbeddingStrategy::ExposedPerMessage {
                let over = cls.set_of(PathVerdict::Oversupplied);
                let perm = cls.set_of(PathVerdict::Permitted);
                if !over.is_empty() || !perm.is_empty() {
                    bad.push(format!(
                        "{name}: per-message separation leaks ({} oversupplied, {} permitted)",
                        over.len(),
                        perm.len()
                    ));
                }
            }
            over_sets.push(cls.set_of(PathVerdict::Oversupplied));
            perm_sets.push(cls.set_of(PathVerdict::Permitted));
        }
        // Strategy order above is message, topic, domain: leakage grows
        // monotonically with embedding coarseness.
        for sets in [&over_sets, &perm_sets] {
            if !sets[0].is_subset(&sets[1]) || !sets[1].is_subset(&sets[2]) {
                bad.push(format!("{name}: leakage not monotone in coarseness"));
            }
        }
        let dt = t0.elapsed();
        worst = worst.max(dt);
        if dt >= Duration::from_secs(1) {
            bad.push(format!("{name}: took {dt:.2?}"));
        }
    }
    let ok = bad.is_empty();
    report(
        7,
        "flow grouping and path verdicts equal the brute-force oracle on 3 matrices",
        ok,
        &format!(
            "3 matrices x 3 embeddings, worst matrix {worst:.2?}{}{}",
            if bad.is_empty() { "" } else { "; " },
            bad.join("; ")
        ),
    );
}

fn lab_attack(kind: AttackKind, ac: AccessControl, policy: MulticastPolicy) -> AttackScenario {
    AttackScenario {
        base: attack_lab_scenario(),
        attacker: "Gw".into(),
        kind,
        access_control: ac,
        multicast_policy: policy,
    }
}

#[test]
fn criterion_08_scans_and_floods_are_fully_filtered() {
    use AccessControl::{Off, On};
    let drop = MulticastPolicy::DropUnknown;

    let scan_off = run_attack(&lab_attack(AttackKind::HostScan, Off, drop));
    let scan_on = run_attack(&lab_attack(AttackKind::HostScan, On, drop));
    let mut no_arp = lab_attack(AttackKind::HostScan, On, drop);
    no_arp.base.acl = lab_acl(&no_arp.base, false);
    let scan_no_arp = run_attack(&no_arp);

    let ports_off =
        run_attack(&lab_attack(AttackKind::PortScan { target: "Target".into() }, Off, drop));
    let ports_on =
        run_attack(&lab_attack(AttackKind::PortScan { target: "Target".into() }, On, drop));

    let flood = AttackKind::SynFlood { target: "Target".into(), count: 1_000 };
    let flood_off = run_attack(&lab_attack(flood.clone(), Off, drop));
    let flood_on = run_attack(&lab_attack(flood, On, drop));

    let hosts = (
        scan_off.discovered_hosts.len(),
        scan_on.discovered_hosts.len(),
        scan_no_arp.discovered_hosts.len(),
    );
    let open_off = (ports_off.open_tcp.len(), ports_off.open_udp.len());
    let open_on = ports_on.open_tcp.len() + ports_on.open_udp.len();
    let ok = hosts == (11, 11, 0)
        && ports_off.open_tcp == LAB_TCP_LISTENERS
        && ports_off.open_udp == LAB_UDP_LISTENERS
        && open_on == 0
        && flood_off.delivered["Target"] == 1_000
        && flood_off.to_controller == 0
        && flood_on.delivered["Target"] == 0
        && flood_on.to_controller == 1_000;
    report(
        8,
        "host scan 11/11/0, port scan 12 open -> 0, flood 1000 -> 0 with 1000 to controller",
        ok,
        &format!(
            "hosts {hosts:?}; open ports off {open_off:?} on {open_on}; flood delivered \
             {}->{} with {}->{} to controller",
            flood_off.delivered["Target"],
            flood_on.delivered["Target"],
            flood_off.to_controller,
            flood_on.to_controller
        ),
    );
}

#[test]
fn criterion_09_replay_blocked_centrally_and_graded_by_embedding() {
    use AccessControl::{Off, On};
    let hidden = parse_replay_trace(
        include_str!("../fixtures/replay_hidden.csv").as_bytes(),
    )
    .expect("hidden trace parses");
    let exposed = parse_replay_trace(
        include_str!("../fixtures/replay_exposed.csv").as_bytes(),
    )
    .expect("exposed trace parses");
    let n = hidden.len() as u64;
    assert_eq!(exposed.len() as u64, n);

    let mut bad = Vec::new();
    for (label, records, embedding) in [
        ("hidden", &hidden, EmbeddingStrategy::HiddenPerDomain),
        ("exposed", &exposed, EmbeddingStrategy::ExposedPerMessage),
    ] {
        let rep = run_attack(&lab_attack(
            AttackKind::Replay { records: records.clone(), embedding },
            On,
            MulticastPolicy::DropUnknown,
        ));
        if LAB_ZCS.iter().any(|zc| rep.delivered[*zc] != 0) || rep.to_controller != n {
            bad.push(format!("{label}: central filter leaked ({:?})", rep.delivered));
        }
    }
    for policy in [MulticastPolicy::DropUnknown, MulticastPolicy::BroadcastUnknown] {
        let rep = run_attack(&lab_attack(
            AttackKind::Replay {
                records: hidden.clone(),
                embedding: EmbeddingStrategy::HiddenPerDomain,
            },
            Off,
            policy,
        ));
        if LAB_ZCS.iter().any(|zc| rep.delivered[*zc] != n) {
            bad.push(format!(
                "hidden/{}: expected {n} to every zone controller, got {:?}",
                policy.as_str(),
                rep.delivered
            ));
        }
    }
    let rep = run_attack(&lab_attack(
        AttackKind::Replay {
            records: exposed.clone(),
            embedding: EmbeddingStrategy::ExposedPerMessage,
        },
        Off,
        MulticastPolicy::DropUnknown,
    ));
    // Per-message group addresses let registration filtering shield the
    // original sender's zone completely.
    if rep.delivered["ZC_FL"] != 0 {
        bad.push(format!("exposed/drop-unknown: sender zone got {}", rep.delivered["ZC_FL"]));
    }
    let subscribed: Vec<u64> = ["ZC_FR", "ZC_RL", "ZC_RR"].iter().map(|z| rep.delivered[*z]).collect();
    if subscribed != [80, 60, 80] {
        bad.push(format!("exposed/drop-unknown: subscriber counts {subscribed:?}"));
    }
    let ok = bad.is_empty();
    report(
        9,
        "replay: filtered centrally, floods every zone when hidden, spares sender zone when exposed",
        ok,
        &format!(
            "{n}-frame traces; {}",
            if bad.is_empty() { "all delivery counts exact".to_string() } else { bad.join("; ") }
        ),
    );
}

#[test]
fn criterion_10_property_suites_hold() {
    type Suite = (&'static str, fn(u32) -> Result<(), String>);
    let suites: [Suite; 5] = [
        ("determinism", common::run_determinism),
        ("conservation", common::run_conservation),
        ("rollback", common::run_rollback),
        ("lock-order", common::run_lock_order),
        ("guard-band", common::run_guard_band),
    ];
    let t0 = Instant::now();
    let mut bad = Vec::new();
    for (name, run) in suites {
        if let Err(e) = run(common::SUITE_CASES) {
            bad.push(format!("{name}: {e}"));
        }
    }
    let dt = t0.elapsed();
    let ok = bad.is_empty() && dt < Duration::from_secs(60);
    report(
        10,
        "determinism, conservation, rollback, lock-order, guard-band suites",
        ok,
        &format!(
            "5 suites x {} cases in {dt:.2?}{}{}",
            common::SUITE_CASES,
            if bad.is_empty() { "" } else { "; " },
            bad.join("; ")
        ),
    );
}
