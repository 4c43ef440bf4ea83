//! Attack harness: scan, flood, and replay attacks launched from a
//! compromised gateway against the backbone, with and without central
//! access control.
//!
//! Access control On runs the centrally controlled build: traffic without
//! installed state is escalated to the controller, whose ACL and path
//! logic decide its fate. Off runs plain learning switches with group
//! registrations, the baseline the attacks succeed against.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use thiserror::Error;

use crate::controller::{Acl, AclCond, AclRule, Verdict, ARP_ETHERTYPE};
use crate::desim::{Nanos, NS_PER_US};
use crate::engine::{
    run_scenario, InjectionDef, LinkDef, MulticastPolicy, NodeDef, RunOutput, RunSpec, Scenario,
    ServiceDef, TunnelDef, Variant, BROADCAST_MAC,
};
use crate::netmodel::{
    format_ipv4, format_mac, host_ip, host_mac, ipv4, parse_ipv4, parse_mac, HeaderTuple, NodeKind,
};
use crate::secsep::{multicast_mac, EmbedConsts, EmbeddingStrategy};
use crate::txnsched::Strategy;

/// When the first attack frame leaves the gateway; learning traffic has
/// settled by then.
pub const ATTACK_START_NS: Nanos = 5_000_000;
/// Gap between consecutive scan probes, wide enough for the full
/// probe-flood-reply exchange of one candidate.
pub const SCAN_STEP_NS: Nanos = 100_000;
/// Gap between flood frames.
pub const FLOOD_STEP_NS: Nanos = 20_000;

/// Candidate ports a scan probes, covering every lab listener plus closed
/// ports. A fixed dictionary, like a scanner's well-known-port list.
pub const PROBE_TCP_PORTS: [u16; 8] = [21, 22, 23, 80, 443, 2000, 5555, 8000];
pub const PROBE_UDP_PORTS: [u16; 10] =
    [4999, 5000, 5001, 5002, 5003, 5004, 5005, 5006, 5007, 5008];

/// PCP and DSCP carried by recorded control traffic.
const CF_PRIORITY: u8 = 2;

// ---------------------------------------------------------------------------
// Attack scenario
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessControl {
    Off,
    On,
}

impl AccessControl {
    pub fn as_str(&self) -> &'static str {
        match self {
            AccessControl::Off => "off",
            AccessControl::On => "on",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttackKind {
    /// One address-resolution request per candidate host.
    HostScan,
    /// Transport probes against one target across the port dictionary.
    PortScan { target: String },
    /// `count` connection openers with a fresh source address and port each.
    SynFlood { target: String, count: u32 },
    /// A recorded trace played back from the attacker's port.
    Replay { records: Vec<ReplayRecord>, embedding: EmbeddingStrategy },
}

impl AttackKind {
    pub fn label(&self) -> &'static str {
        match self {
            AttackKind::HostScan => "host-scan",
            AttackKind::PortScan { .. } => "port-scan",
            AttackKind::SynFlood { .. } => "syn-flood",
            AttackKind::Replay { .. } => "replay",
        }
    }
}

/// One attack run: the network under test, who attacks, what they do, and
/// whether the central access control is active.
#[derive(Debug, Clone)]
pub struct AttackScenario {
    pub base: Scenario,
    pub attacker: String,
    pub kind: AttackKind,
    pub access_control: AccessControl,
    /// Unknown-multicast handling of the uncontrolled baseline; ignored
    /// when access control is on.
    pub multicast_policy: MulticastPolicy,
}

/// Counters of one attack run. Every counter is bounded by `sent`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackReport {
    pub kind: String,
    /// Embedding name for replay runs, empty otherwise.
    pub detail: String,
    pub access_control: AccessControl,
    pub policy: Option<MulticastPolicy>,
    /// Frames the attacker emitted.
    pub sent: u64,
    /// Attack frames that reached the controller as packet-ins.
    pub to_controller: u64,
    pub discovered_hosts: Vec<String>,
    pub open_tcp: Vec<u16>,
    pub open_udp: Vec<u16>,
    /// Attack frames delivered per host.
    pub delivered: BTreeMap<String, u64>,
}

impl AttackReport {
    fn new(s: &AttackScenario) -> Self {
        let detail = match &s.kind {
            AttackKind::Replay { embedding, .. } => embedding.as_str().to_string(),
            _ => String::new(),
        };
        Self {
            kind: s.kind.label().to_string(),
            detail,
            access_control: s.access_control,
            policy: match s.access_control {
                AccessControl::Off => Some(s.multicast_policy),
                AccessControl::On => None,
            },
            sent: 0,
            to_controller: 0,
            discovered_hosts: Vec::new(),
            open_tcp: Vec::new(),
            open_udp: Vec::new(),
            delivered: BTreeMap::new(),
        }
    }

    /// Every counter stays within the number of frames sent.
    pub fn check(&self) -> Result<(), String> {
        if self.to_controller > self.sent {
            return Err(format!("{} controller hits > {} sent", self.to_controller, self.sent));
        }
        for (node, n) in &self.delivered {
            if *n > self.sent {
                return Err(format!("{node} received {n} > {} sent", self.sent));
            }
        }
        if self.discovered_hosts.len() as u64 > self.sent {
            return Err("more hosts than probes".into());
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// The attack lab
// ---------------------------------------------------------------------------

/// Zone controllers of the lab, one per vehicle corner.
pub const LAB_ZCS: [&str; 4] = ["ZC_FL", "ZC_FR", "ZC_RL", "ZC_RR"];
/// Communication domains the zone controllers share.
pub const LAB_DOMAINS: u16 = 4;
/// Transport listeners of the lab's probe target.
pub const LAB_TCP_LISTENERS: [u16; 4] = [22, 80, 443, 5555];
pub const LAB_UDP_LISTENERS: [u16; 8] = [5000, 5001, 5002, 5003, 5004, 5005, 5006, 5007];

/// The control flows recorded at the first zone controller: id, domain,
/// and subscriber zone controllers. The recorder publishes these flows,
/// so it subscribes to none of them.
pub fn recorded_flows() -> Vec<(u32, u16, Vec<&'static str>)> {
    vec![
        (1, 0, vec!["ZC_FR"]),
        (2, 1, vec!["ZC_FR", "ZC_RL"]),
        (3, 2, vec!["ZC_RL", "ZC_RR"]),
        (4, 3, vec!["ZC_FR", "ZC_RL", "ZC_RR"]),
        (5, 0, vec!["ZC_RR"]),
        (6, 1, vec!["ZC_FR", "ZC_RR"]),
    ]
}

fn node_pos(sc: &Scenario, name: &str) -> usize {
    sc.nodes.iter().position(|n| n.name == name).expect("node exists")
}

/// Unicast MAC of a lab node, by its roster position.
pub fn lab_mac(sc: &Scenario, name: &str) -> u64 {
    host_mac(node_pos(sc, name))
}

/// IPv4 address of a lab node, by its roster position.
pub fn lab_ip(sc: &Scenario, name: &str) -> u32 {
    host_ip(node_pos(sc, name))
}

fn host_by_ip(sc: &Scenario, ip: u32) -> Option<String> {
    sc.nodes
        .iter()
        .enumerate()
        .find(|(i, n)| n.kind == NodeKind::Host && host_ip(*i) == ip)
        .map(|(_, n)| n.name.clone())
}

/// Header tuple of one zone controller's domain tunnel: all its flows of
/// one domain share this multicast address.
pub fn domain_tunnel_headers(sc: &Scenario, source: &str, domain: u16) -> HeaderTuple {
    let c = EmbedConsts::default();
    let dip = c.domain_ip_base | domain as u32;
    HeaderTuple::l2(multicast_mac(dip), lab_mac(sc, source), 0x0800, Some(0), CF_PRIORITY)
        .with_ipv4(lab_ip(sc, source), dip, CF_PRIORITY, 17)
        .with_ports(c.tunnel_udp_port, c.tunnel_udp_port)
}

/// Header tuple of one individually addressed control flow.
pub fn message_headers(sc: &Scenario, source: &str, cf_id: u32, domain: u16) -> HeaderTuple {
    let c = EmbedConsts::default();
    HeaderTuple::l2(
        c.exposed_mac_base | cf_id as u64,
        lab_mac(sc, source),
        c.exposed_ethertype,
        Some(domain),
        CF_PRIORITY,
    )
}

/// The access control list of the lab: address resolution (toggleable)
/// plus one source-address allowance per legitimate host; everything
/// else, including all gateway-sourced traffic, is denied.
pub fn lab_acl(sc: &Scenario, arp_allowed: bool) -> Acl {
    let mut rules = Vec::new();
    if arp_allowed {
        rules.push(AclRule {
            verdict: Verdict::Allow,
            conditions: vec![AclCond::Ethertype(ARP_ETHERTYPE)],
        });
    }
    for n in &sc.nodes {
        if n.kind == NodeKind::Host && n.name != "Gw" {
            rules.push(AclRule {
                verdict: Verdict::Allow,
                conditions: vec![AclCond::SrcIp(lab_ip(sc, &n.name))],
            });
        }
    }
    Acl { rules, default: Verdict::Deny }
}

/// The two-switch lab: a compromised gateway, four zone controllers, a
/// probe target with transport listeners, and six plain hosts, with the
/// zone controllers' multicast tunnels provisioned and their group
/// registrations declared.
pub fn attack_lab_scenario() -> Scenario {
    let mut sc = Scenario::empty("attack-lab");
    sc.t_end_us = 100_000;
    for (name, kind) in [
        ("Gw", NodeKind::Host),
        ("ZC_FL", NodeKind::Host),
        ("ZC_FR", NodeKind::Host),
        ("Target", NodeKind::Host),
        ("H1", NodeKind::Host),
        ("H2", NodeKind::Host),
        ("ZC_RL", NodeKind::Host),
        ("ZC_RR", NodeKind::Host),
        ("H3", NodeKind::Host),
        ("H4", NodeKind::Host),
        ("H5", NodeKind::Host),
        ("H6", NodeKind::Host),
        ("SwA", NodeKind::Switch),
        ("SwB", NodeKind::Switch),
        ("Ctrl", NodeKind::Controller),
    ] {
        sc.nodes.push(NodeDef { name: name.into(), kind });
    }
    // Controller links come last so uncontrolled runs keep port numbers.
    for (a, b) in [
        ("Gw", "SwA"),
        ("ZC_FL", "SwA"),
        ("ZC_FR", "SwA"),
        ("Target", "SwA"),
        ("H1", "SwA"),
        ("H2", "SwA"),
        ("ZC_RL", "SwB"),
        ("ZC_RR", "SwB"),
        ("H3", "SwB"),
        ("H4", "SwB"),
        ("H5", "SwB"),
        ("H6", "SwB"),
        ("SwA", "SwB"),
        ("Ctrl", "SwA"),
        ("Ctrl", "SwB"),
    ] {
        sc.links.push(LinkDef {
            a: a.into(),
            b: b.into(),
            bandwidth_bps: 100_000_000,
            forwarding_delay_ns: 3_000,
        });
    }
    sc.controller = Some("Ctrl".into());
    for n in sc.nodes.clone() {
        if n.kind != NodeKind::Host || n.name == "Gw" {
            continue;
        }
        let target = n.name == "Target";
        sc.services.push(ServiceDef {
            node: n.name.clone(),
            arp: true,
            tcp_ports: if target { LAB_TCP_LISTENERS.to_vec() } else { Vec::new() },
            udp_ports: if target { LAB_UDP_LISTENERS.to_vec() } else { Vec::new() },
        });
    }
    sc.acl = lab_acl(&sc, true);

    let consts = EmbedConsts::default();
    // Domain tunnels: every zone controller is a member of every domain,
    // so each sources a tunnel to the other three.
    for zc in LAB_ZCS {
        for d in 0..LAB_DOMAINS {
            sc.tunnels.push(TunnelDef {
                source: zc.into(),
                headers: domain_tunnel_headers(&sc, zc, d),
                dests: LAB_ZCS.iter().filter(|z| **z != zc).map(|z| z.to_string()).collect(),
            });
            sc.group_members
                .push((zc.into(), multicast_mac(consts.domain_ip_base | d as u32)));
        }
    }
    // Individually addressed flows of the recorded publisher, delivered
    // to their subscribers only.
    for (cf, domain, subs) in recorded_flows() {
        sc.tunnels.push(TunnelDef {
            source: "ZC_FL".into(),
            headers: message_headers(&sc, "ZC_FL", cf, domain),
            dests: subs.iter().map(|z| z.to_string()).collect(),
        });
        for z in subs {
            sc.group_members.push((z.into(), consts.exposed_mac_base | cf as u64));
        }
    }
    sc
}

// ---------------------------------------------------------------------------
// Replay traces
// ---------------------------------------------------------------------------

/// One recorded frame: its offset from the start of the capture and the
/// full header tuple it carried.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayRecord {
    pub rel_t_us: u64,
    pub headers: HeaderTuple,
    pub wire_bytes: u32,
}

/// A capture taken at the first zone controller's port: its published
/// flows in a repeating schedule, encoded under the given embedding.
pub fn generate_replay_trace(
    sc: &Scenario,
    embedding: EmbeddingStrategy,
    frames: usize,
) -> Vec<ReplayRecord> {
    let consts = EmbedConsts::default();
    let flows = recorded_flows();
    let mut out = Vec::with_capacity(frames);
    for i in 0..frames {
        let (cf, domain, _) = flows[i % flows.len()];
        let headers = match embedding {
            EmbeddingStrategy::ExposedPerMessage => message_headers(sc, "ZC_FL", cf, domain),
            EmbeddingStrategy::HiddenPerDomain => domain_tunnel_headers(sc, "ZC_FL", domain),
            EmbeddingStrategy::HiddenPerTopic => {
                let tip = consts.topic_ip_base | ((cf - 1) % 3);
                HeaderTuple::l2(
                    multicast_mac(tip),
                    lab_mac(sc, "ZC_FL"),
                    0x0800,
                    Some(0),
                    CF_PRIORITY,
                )
                .with_ipv4(lab_ip(sc, "ZC_FL"), tip, CF_PRIORITY, 17)
                .with_ports(consts.tunnel_udp_port, consts.tunnel_udp_port)
            }
        };
        out.push(ReplayRecord {
            rel_t_us: i as u64 * 500,
            headers,
            wire_bytes: 80 + cf * 16,
        });
    }
    out
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReplayTraceError {
    #[error("record {row}: {msg}")]
    Record { row: usize, msg: String },
    #[error("header row mismatch: expected `{expected}`")]
    Header { expected: String },
    #[error("csv: {0}")]
    Csv(String),
}

const TRACE_COLUMNS: [&str; 11] = [
    "rel_t_us", "dst_mac", "src_mac", "ethertype", "vlan", "pcp", "src_ip", "dst_ip",
    "src_port", "dst_port", "wire_bytes",
];

pub fn write_replay_trace(w: &mut impl Write, records: &[ReplayRecord]) -> std::io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TRACE_COLUMNS)?;
    for r in records {
        let h = &r.headers;
        let opt_u = |v: Option<u16>| v.map(|p| p.to_string()).unwrap_or_default();
        out.write_record([
            r.rel_t_us.to_string(),
            format_mac(h.dst_mac),
            format_mac(h.src_mac),
            format!("0x{:04x}", h.ethertype),
            opt_u(h.vlan_id),
            h.pcp.to_string(),
            h.src_ip.map(format_ipv4).unwrap_or_default(),
            h.dst_ip.map(format_ipv4).unwrap_or_default(),
            opt_u(h.src_port),
            opt_u(h.dst_port),
            r.wire_bytes.to_string(),
        ])?;
    }
    out.flush()
}

pub fn parse_replay_trace(r: impl std::io::Read) -> Result<Vec<ReplayRecord>, ReplayTraceError> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let headers = rd.headers().map_err(|e| ReplayTraceError::Csv(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != TRACE_COLUMNS {
        return Err(ReplayTraceError::Header { expected: TRACE_COLUMNS.join(",") });
    }
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let row = i + 1;
        let err = |msg: String| ReplayTraceError::Record { row, msg };
        let rec = rec.map_err(|e| ReplayTraceError::Csv(e.to_string()))?;
        if rec.len() != TRACE_COLUMNS.len() {
            return Err(err(format!("{} fields, expected {}", rec.len(), TRACE_COLUMNS.len())));
        }
        let field = |n: usize| rec.get(n).unwrap_or_default().trim();
        let num = |n: usize| -> Result<u64, ReplayTraceError> {
            field(n).parse().map_err(|_| err(format!("bad number `{}`", field(n))))
        };
        let opt_num = |n: usize| -> Result<Option<u16>, ReplayTraceError> {
            if field(n).is_empty() {
                Ok(None)
            } else {
                field(n).parse().map(Some).map_err(|_| err(format!("bad port `{}`", field(n))))
            }
        };
        let opt_ip = |n: usize| -> Result<Option<u32>, ReplayTraceError> {
            if field(n).is_empty() {
                Ok(None)
            } else {
                parse_ipv4(field(n)).map(Some).ok_or_else(|| err(format!("bad ip `{}`", field(n))))
            }
        };
        let mac = |n: usize| -> Result<u64, ReplayTraceError> {
            parse_mac(field(n)).ok_or_else(|| err(format!("bad mac `{}`", field(n))))
        };
        let ethertype = field(3)
            .strip_prefix("0x")
            .and_then(|s| u16::from_str_radix(s, 16).ok())
            .or_else(|| field(3).parse().ok())
            .ok_or_else(|| err(format!("bad ethertype `{}`", field(3))))?;
        let src_ip = opt_ip(6)?;
        let dst_ip = opt_ip(7)?;
        let mut headers = HeaderTuple::l2(
            mac(1)?,
            mac(2)?,
            ethertype,
            opt_num(4)?,
            num(5)? as u8,
        );
        if let (Some(s), Some(d)) = (src_ip, dst_ip) {
            headers = headers.with_ipv4(s, d, CF_PRIORITY, 17);
            if let (Some(sp), Some(dp)) = (opt_num(8)?, opt_num(9)?) {
                headers = headers.with_ports(sp, dp);
            }
        }
        headers.validate().map_err(|e| err(e.to_string()))?;
        out.push(ReplayRecord { rel_t_us: num(0)?, headers, wire_bytes: num(10)? as u32 });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Running attacks
// ---------------------------------------------------------------------------

fn variant_of(s: &AttackScenario) -> Variant {
    match s.access_control {
        AccessControl::On => Variant::Tssdn,
        AccessControl::Off => Variant::Conventional { policy: s.multicast_policy },
    }
}

fn execute(s: &AttackScenario, injections: Vec<InjectionDef>) -> RunOutput {
    assert!(
        s.base.nodes.iter().any(|n| n.name == s.attacker),
        "attacker {} is not a topology node",
        s.attacker
    );
    let mut sc = s.base.clone();
    sc.injections = injections;
    run_scenario(&sc, &RunSpec { variant: variant_of(s), strategy: Strategy::SyncCommit, seed: 0 })
}

fn injected_ids(out: &RunOutput) -> BTreeSet<u64> {
    out.injection_frame_ids.iter().copied().collect()
}

/// Attack frames delivered per host, zeros included.
fn delivered_counts(sc: &Scenario, out: &RunOutput, ids: &BTreeSet<u64>) -> BTreeMap<String, u64> {
    let mut counts: BTreeMap<String, u64> = sc
        .nodes
        .iter()
        .filter(|n| n.kind == NodeKind::Host)
        .map(|n| (n.name.clone(), 0))
        .collect();
    for d in &out.deliveries {
        if ids.contains(&d.frame.frame_id) {
            *counts.get_mut(&d.node).expect("deliveries land at hosts") += 1;
        }
    }
    counts
}

fn controller_hits(out: &RunOutput, ids: &BTreeSet<u64>) -> u64 {
    out.packet_ins.iter().filter(|id| ids.contains(id)).count() as u64
}

fn host_scan_run(s: &AttackScenario) -> (RunOutput, BTreeSet<String>, u64) {
    assert!(matches!(s.kind, AttackKind::HostScan), "scenario kind is not a host scan");
    let base = &s.base;
    let att_mac = lab_mac(base, &s.attacker);
    let att_ip = lab_ip(base, &s.attacker);
    let candidates: Vec<String> = base
        .nodes
        .iter()
        .filter(|n| n.kind == NodeKind::Host && n.name != s.attacker)
        .map(|n| n.name.clone())
        .collect();
    let injections: Vec<InjectionDef> = candidates
        .iter()
        .enumerate()
        .map(|(i, cand)| InjectionDef {
            node: s.attacker.clone(),
            at_ns: ATTACK_START_NS + i as Nanos * SCAN_STEP_NS,
            headers: HeaderTuple::l2(BROADCAST_MAC, att_mac, ARP_ETHERTYPE, None, 0)
                .with_ipv4(att_ip, lab_ip(base, cand), 0, 0),
            wire_bytes: 64,
            tag: format!("scan:{cand}"),
        })
        .collect();
    let sent = injections.len() as u64;
    let out = execute(s, injections);
    // A candidate counts as discovered when its answer reaches the
    // attacker.
    let mut discovered = BTreeSet::new();
    for d in &out.deliveries {
        let h = &d.frame.headers;
        if d.node == s.attacker && h.ethertype == ARP_ETHERTYPE && h.dst_ip == Some(att_ip) {
            if let Some(name) = h.src_ip.and_then(|ip| host_by_ip(base, ip)) {
                discovered.insert(name);
            }
        }
    }
    (out, discovered, sent)
}

/// Probe every candidate address; a host is discovered iff its
/// address-resolution answer reaches the attacker.
pub fn run_host_scan(s: &AttackScenario) -> BTreeSet<String> {
    host_scan_run(s).1
}

/// Transport ports that answered a scan, per protocol.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OpenPorts {
    pub tcp: BTreeSet<u16>,
    pub udp: BTreeSet<u16>,
}

fn port_scan_run(s: &AttackScenario) -> (RunOutput, OpenPorts, u64) {
    let AttackKind::PortScan { target } = &s.kind else {
        panic!("scenario kind is not a port scan");
    };
    let base = &s.base;
    let att_ip = lab_ip(base, &s.attacker);
    let tgt_mac = lab_mac(base, target);
    let tgt_ip = lab_ip(base, target);
    let mut injections = Vec::new();
    let probes = PROBE_TCP_PORTS
        .iter()
        .map(|p| (6u8, *p))
        .chain(PROBE_UDP_PORTS.iter().map(|p| (17u8, *p)));
    for (i, (proto, port)) in probes.enumerate() {
        injections.push(InjectionDef {
            node: s.attacker.clone(),
            at_ns: ATTACK_START_NS + i as Nanos * SCAN_STEP_NS,
            headers: HeaderTuple::l2(tgt_mac, lab_mac(base, &s.attacker), 0x0800, None, 0)
                .with_ipv4(att_ip, tgt_ip, 0, proto)
                .with_ports(55_555, port),
            wire_bytes: 64,
            tag: format!("probe:{proto}:{port}"),
        });
    }
    let sent = injections.len() as u64;
    let out = execute(s, injections);
    // An answered probe names its port in the reply's source field.
    let mut open = OpenPorts::default();
    for d in &out.deliveries {
        let h = &d.frame.headers;
        if d.node != s.attacker || h.src_ip != Some(tgt_ip) {
            continue;
        }
        match (h.ip_proto, h.src_port) {
            (Some(6), Some(p)) => {
                open.tcp.insert(p);
            }
            (Some(17), Some(p)) => {
                open.udp.insert(p);
            }
            _ => {}
        }
    }
    (out, open, sent)
}

/// Probe the target across the port dictionary; a port is open iff the
/// target's answer reaches the attacker.
pub fn run_port_scan(s: &AttackScenario) -> OpenPorts {
    port_scan_run(s).1
}

/// Flood the target with connection openers, each from a fresh spoofed
/// source address and port.
pub fn run_syn_flood(s: &AttackScenario) -> AttackReport {
    let AttackKind::SynFlood { target, count } = &s.kind else {
        panic!("scenario kind is not a flood");
    };
    let base = &s.base;
    let tgt_mac = lab_mac(base, target);
    let tgt_ip = lab_ip(base, target);
    let injections: Vec<InjectionDef> = (0..*count)
        .map(|i| InjectionDef {
            node: s.attacker.clone(),
            at_ns: ATTACK_START_NS + i as Nanos * FLOOD_STEP_NS,
            headers: HeaderTuple::l2(tgt_mac, lab_mac(base, &s.attacker), 0x0800, None, 0)
                .with_ipv4(ipv4(203, 0, (i / 256) as u8, (i % 256) as u8), tgt_ip, 0, 6)
                .with_ports(20_000 + (i % 40_000) as u16, 80),
            wire_bytes: 64,
            tag: "syn".into(),
        })
        .collect();
    let sent = injections.len() as u64;
    let out = execute(s, injections);
    let ids = injected_ids(&out);
    let mut report = AttackReport::new(s);
    report.sent = sent;
    report.to_controller = controller_hits(&out, &ids);
    report.delivered = delivered_counts(base, &out, &ids);
    report.check().expect("counters bounded");
    report
}

/// Play a recorded trace back from the attacker's port and count where
/// its frames end up.
pub fn run_replay(s: &AttackScenario) -> AttackReport {
    let AttackKind::Replay { records, .. } = &s.kind else {
        panic!("scenario kind is not a replay");
    };
    let injections: Vec<InjectionDef> = records
        .iter()
        .map(|r| InjectionDef {
            node: s.attacker.clone(),
            at_ns: ATTACK_START_NS + r.rel_t_us * NS_PER_US,
            headers: r.headers.clone(),
            wire_bytes: r.wire_bytes,
            tag: "replay".into(),
        })
        .collect();
    let sent = injections.len() as u64;
    let out = execute(s, injections);
    let ids = injected_ids(&out);
    let mut report = AttackReport::new(s);
    report.sent = sent;
    report.to_controller = controller_hits(&out, &ids);
    report.delivered = delivered_counts(&s.base, &out, &ids);
    report.check().expect("counters bounded");
    report
}

/// Run any attack kind and assemble its full report.
pub fn run_attack(s: &AttackScenario) -> AttackReport {
    match &s.kind {
        AttackKind::HostScan => {
            let (out, discovered, sent) = host_scan_run(s);
            let ids = injected_ids(&out);
            let mut report = AttackReport::new(s);
            report.sent = sent;
            report.to_controller = controller_hits(&out, &ids);
            report.discovered_hosts = discovered.into_iter().collect();
            report.delivered = delivered_counts(&s.base, &out, &ids);
            report.check().expect("counters bounded");
            report
        }
        AttackKind::PortScan { .. } => {
            let (out, open, sent) = port_scan_run(s);
            let ids = injected_ids(&out);
            let mut report = AttackReport::new(s);
            report.sent = sent;
            report.to_controller = controller_hits(&out, &ids);
            report.open_tcp = open.tcp.into_iter().collect();
            report.open_udp = open.udp.into_iter().collect();
            report.delivered = delivered_counts(&s.base, &out, &ids);
            report.check().expect("counters bounded");
            report
        }
        AttackKind::SynFlood { .. } => run_syn_flood(s),
        AttackKind::Replay { .. } => run_replay(s),
    }
}

/// `attack,detail,access_control,policy,counter,key,value` rows: the
/// scalar counters first, then one row per discovered host, open port,
/// and destination.
pub fn write_attack_report(w: &mut impl Write, r: &AttackReport) -> std::io::Result<()> {
    writeln!(w, "attack,detail,access_control,policy,counter,key,value")?;
    let prefix = format!(
        "{},{},{},{}",
        r.kind,
        r.detail,
        r.access_control.as_str(),
        r.policy.map(|p| p.as_str()).unwrap_or("")
    );
    writeln!(w, "{prefix},sent,,{}", r.sent)?;
    writeln!(w, "{prefix},to_controller,,{}", r.to_controller)?;
    if r.kind == "host-scan" {
        writeln!(w, "{prefix},hosts_discovered,,{}", r.discovered_hosts.len())?;
        for h in &r.discovered_hosts {
            writeln!(w, "{prefix},discovered,{h},1")?;
        }
    }
    if r.kind == "port-scan" {
        writeln!(w, "{prefix},tcp_open,,{}", r.open_tcp.len())?;
        writeln!(w, "{prefix},udp_open,,{}", r.open_udp.len())?;
        for p in &r.open_tcp {
            writeln!(w, "{prefix},open,tcp:{p},1")?;
        }
        for p in &r.open_udp {
            writeln!(w, "{prefix},open,udp:{p},1")?;
        }
    }
    for (node, n) in &r.delivered {
        writeln!(w, "{prefix},delivered,{node},{n}")?;
    }
    Ok(())
}
