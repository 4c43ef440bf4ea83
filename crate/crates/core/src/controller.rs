//! Central controller logic: access control lists, reactive packet-in
//! handling, path rule construction, and stream admission with bandwidth
//! accounting.
//!
//! Everything here is pure decision logic; the message exchange that
//! carries decisions to the devices lives in the engine.

use std::collections::BTreeMap;
use std::io::Write;

use thiserror::Error;

use crate::bounds::PortKey;
use crate::dataplane::{Action, FlowRule, HeaderPattern, SRTableEntry, TableKind};
use crate::netmodel::{
    format_ipv4, format_mac, parse_ipv4, parse_mac, HeaderTuple, NodeKind, Topology,
};
use crate::txnsched::LockManager;

/// Ethertype carrying stream reservation announcements.
pub const SRP_ETHERTYPE: u16 = 0x22EA;
/// Ethertype of controller-to-device configuration messages.
pub const CONFIG_ETHERTYPE: u16 = 0x88B6;
/// Ethertype of address resolution broadcasts.
pub const ARP_ETHERTYPE: u16 = 0x0806;
/// Wire size of a control-plane frame.
pub const CONTROL_WIRE_BYTES: u32 = 128;

/// Rule priorities, highest wins within a table.
pub const PRIO_SYNC: i32 = 100;
pub const PRIO_SRP: i32 = 90;
pub const PRIO_TUNNEL: i32 = 50;
pub const PRIO_DYNAMIC: i32 = 10;
pub const PRIO_FALLBACK: i32 = 0;

// ---------------------------------------------------------------------------
// Access control lists
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Allow,
    Deny,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Allow => "allow",
            Verdict::Deny => "deny",
        }
    }
}

/// One match condition of an ACL rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AclCond {
    Ethertype(u16),
    SrcMac(u64),
    DstMac(u64),
    SrcIp(u32),
    DstIp(u32),
    IpProto(u8),
    SrcPort(u16),
    DstPort(u16),
    Pcp(u8),
}

impl AclCond {
    pub fn matches(&self, h: &HeaderTuple) -> bool {
        match *self {
            AclCond::Ethertype(v) => h.ethertype == v,
            AclCond::SrcMac(v) => h.src_mac == v,
            AclCond::DstMac(v) => h.dst_mac == v,
            AclCond::SrcIp(v) => h.src_ip == Some(v),
            AclCond::DstIp(v) => h.dst_ip == Some(v),
            AclCond::IpProto(v) => h.ip_proto == Some(v),
            AclCond::SrcPort(v) => h.src_port == Some(v),
            AclCond::DstPort(v) => h.dst_port == Some(v),
            AclCond::Pcp(v) => h.pcp == v,
        }
    }

    fn format(&self) -> String {
        match *self {
            AclCond::Ethertype(v) => format!("ethertype=0x{v:04x}"),
            AclCond::SrcMac(v) => format!("src_mac={}", format_mac(v)),
            AclCond::DstMac(v) => format!("dst_mac={}", format_mac(v)),
            AclCond::SrcIp(v) => format!("src_ip={}", format_ipv4(v)),
            AclCond::DstIp(v) => format!("dst_ip={}", format_ipv4(v)),
            AclCond::IpProto(v) => format!("ip_proto={v}"),
            AclCond::SrcPort(v) => format!("src_port={v}"),
            AclCond::DstPort(v) => format!("dst_port={v}"),
            AclCond::Pcp(v) => format!("pcp={v}"),
        }
    }
}

/// A rule fires when all its conditions match; first firing rule wins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AclRule {
    pub verdict: Verdict,
    pub conditions: Vec<AclCond>,
}

impl AclRule {
    pub fn matches(&self, h: &HeaderTuple) -> bool {
        self.conditions.iter().all(|c| c.matches(h))
    }
}

/// Ordered rule list with a mandatory default verdict.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Acl {
    pub rules: Vec<AclRule>,
    pub default: Verdict,
}

impl Acl {
    pub fn allow_all() -> Self {
        Self { rules: Vec::new(), default: Verdict::Allow }
    }

    pub fn evaluate(&self, h: &HeaderTuple) -> Verdict {
        self.rules.iter().find(|r| r.matches(h)).map_or(self.default, |r| r.verdict)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AclError {
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("missing default verdict line")]
    MissingDefault,
    #[error("io: {0}")]
    Io(String),
}

fn parse_cond(s: &str, line: usize) -> Result<AclCond, AclError> {
    let err = |msg: String| AclError::Line { line, msg };
    let (field, value) = s
        .split_once('=')
        .ok_or_else(|| err(format!("condition `{s}` is not field=value")))?;
    let field = field.trim();
    let value = value.trim();
    let int = |v: &str| -> Option<u64> {
        if let Some(hex) = v.strip_prefix("0x") {
            u64::from_str_radix(hex, 16).ok()
        } else {
            v.parse().ok()
        }
    };
    let cond = match field {
        "ethertype" => AclCond::Ethertype(
            int(value).filter(|v| *v <= 0xFFFF).ok_or_else(|| err(format!("bad ethertype `{value}`")))?
                as u16,
        ),
        "src_mac" => AclCond::SrcMac(parse_mac(value).ok_or_else(|| err(format!("bad mac `{value}`")))?),
        "dst_mac" => AclCond::DstMac(parse_mac(value).ok_or_else(|| err(format!("bad mac `{value}`")))?),
        "src_ip" => AclCond::SrcIp(parse_ipv4(value).ok_or_else(|| err(format!("bad ip `{value}`")))?),
        "dst_ip" => AclCond::DstIp(parse_ipv4(value).ok_or_else(|| err(format!("bad ip `{value}`")))?),
        "ip_proto" => AclCond::IpProto(
            int(value).filter(|v| *v <= 0xFF).ok_or_else(|| err(format!("bad ip_proto `{value}`")))? as u8,
        ),
        "src_port" => AclCond::SrcPort(
            int(value).filter(|v| *v <= 0xFFFF).ok_or_else(|| err(format!("bad port `{value}`")))? as u16,
        ),
        "dst_port" => AclCond::DstPort(
            int(value).filter(|v| *v <= 0xFFFF).ok_or_else(|| err(format!("bad port `{value}`")))? as u16,
        ),
        "pcp" => AclCond::Pcp(
            int(value).filter(|v| *v <= 7).ok_or_else(|| err(format!("bad pcp `{value}`")))? as u8,
        ),
        other => return Err(err(format!("unknown field `{other}`"))),
    };
    Ok(cond)
}

/// Parse the `allow|deny,<field>=<value>[;...]` rule list with its
/// `default=allow|deny` footer. `#` comments and blank lines are ignored.
pub fn parse_acl_str(text: &str) -> Result<Acl, AclError> {
    let mut rules = Vec::new();
    let mut default = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        if let Some(v) = s.strip_prefix("default=") {
            default = Some(match v.trim() {
                "allow" => Verdict::Allow,
                "deny" => Verdict::Deny,
                other => {
                    return Err(AclError::Line {
                        line,
                        msg: format!("bad default verdict `{other}`"),
                    })
                }
            });
            continue;
        }
        let (verdict, rest) = s.split_once(',').ok_or_else(|| AclError::Line {
            line,
            msg: "expected `allow,...` or `deny,...`".into(),
        })?;
        let verdict = match verdict.trim() {
            "allow" => Verdict::Allow,
            "deny" => Verdict::Deny,
            other => {
                return Err(AclError::Line { line, msg: format!("bad verdict `{other}`") })
            }
        };
        let mut conditions = Vec::new();
        for part in rest.split(';') {
            conditions.push(parse_cond(part, line)?);
        }
        rules.push(AclRule { verdict, conditions });
    }
    let default = default.ok_or(AclError::MissingDefault)?;
    Ok(Acl { rules, default })
}

pub fn parse_acl(path: &std::path::Path) -> Result<Acl, AclError> {
    let text = std::fs::read_to_string(path).map_err(|e| AclError::Io(e.to_string()))?;
    parse_acl_str(&text)
}

pub fn write_acl(w: &mut impl Write, acl: &Acl) -> std::io::Result<()> {
    for r in &acl.rules {
        let conds: Vec<String> = r.conditions.iter().map(|c| c.format()).collect();
        writeln!(w, "{},{}", r.verdict.as_str(), conds.join(";"))?;
    }
    writeln!(w, "default={}", acl.default.as_str())
}

pub fn format_acl(acl: &Acl) -> String {
    let mut buf = Vec::new();
    write_acl(&mut buf, acl).expect("write to vec");
    String::from_utf8(buf).expect("acl text is utf-8")
}

// ---------------------------------------------------------------------------
// Controller state and packet-in handling
// ---------------------------------------------------------------------------

/// Outcome of a packet-in: install a path and re-inject, or drop with a
/// reason that the trace records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PacketInDecision {
    /// ACL rejected the frame.
    Deny,
    /// No unicast path exists (multicast or unknown destination).
    NoPath,
    /// Deliver to every host edge port except the originator's; used for
    /// allowed address-resolution broadcasts, which have no single path.
    Flood,
    /// Install these per-switch rules, then re-inject the frame.
    Install { path: Vec<String>, rules: Vec<(String, FlowRule)> },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AdmissionError {
    #[error("stream {stream_id}: no path from {talker} to {listener}")]
    NoPath { stream_id: u32, talker: String, listener: String },
    #[error("stream {stream_id}: {device}:{port} has {available} bps free, {requested} requested")]
    InsufficientBandwidth {
        stream_id: u32,
        device: String,
        port: u32,
        available: u64,
        requested: u64,
    },
}

/// What one switch must do to carry an admitted stream.
#[derive(Debug, Clone)]
pub struct AdmissionStep {
    pub device: String,
    pub out_port: u32,
    pub rule: FlowRule,
    pub sr_entry: SRTableEntry,
    pub shaper_idle_slope_bps: u64,
}

/// Full admission outcome for one stream.
#[derive(Debug, Clone)]
pub struct AdmissionPlan {
    pub stream_id: u32,
    pub path: Vec<String>,
    pub steps: Vec<AdmissionStep>,
}

/// A talker's reservation request.
#[derive(Debug, Clone)]
pub struct StreamRequest {
    pub stream_id: u32,
    pub talker: String,
    pub headers: HeaderTuple,
    pub reserved_bps: u64,
    pub wire_bytes: u32,
}

/// The central controller: topology knowledge, host locations, the ACL,
/// per-port reservation totals, and the device lock manager.
#[derive(Debug)]
pub struct Controller {
    pub topo: Topology,
    pub acl: Acl,
    /// Unicast MAC to host name.
    pub mac_hosts: BTreeMap<u64, String>,
    /// Host name to its attachment (switch, switch port).
    pub host_attach: BTreeMap<String, (String, u32)>,
    /// Reserved bandwidth per switch egress port.
    pub reserved: BTreeMap<PortKey, u64>,
    pub locks: LockManager,
}

/// Attachment point of every host: the switch and switch-side port of its
/// single link.
pub fn host_attachments(topo: &Topology) -> BTreeMap<String, (String, u32)> {
    let mut out = BTreeMap::new();
    for node in &topo.nodes {
        if node.kind != NodeKind::Host {
            continue;
        }
        for (_, peer, _) in topo.ports(&node.name) {
            if let Some(pn) = topo.port_toward(&peer, &node.name) {
                out.insert(node.name.clone(), (peer.clone(), pn));
            }
        }
    }
    out
}

impl Controller {
    pub fn new(topo: Topology, acl: Acl, mac_hosts: BTreeMap<u64, String>) -> Self {
        let host_attach = host_attachments(&topo);
        Self { topo, acl, mac_hosts, host_attach, reserved: BTreeMap::new(), locks: LockManager::new() }
    }

    /// Exact-match forwarding rules along `path` (first node must be a
    /// switch, last a host). Reactive rules match the full header tuple but
    /// not the ingress port, so they serve the flow wherever it enters.
    pub fn rules_for_path(&self, headers: &HeaderTuple, path: &[String]) -> Vec<(String, FlowRule)> {
        let mut rules = Vec::new();
        for pair in path.windows(2) {
            let (node, next) = (&pair[0], &pair[1]);
            if self.topo.node_kind(node) != Some(NodeKind::Switch) {
                continue;
            }
            let out = self.topo.port_toward(node, next).expect("adjacent on path");
            rules.push((
                node.clone(),
                FlowRule {
                    pattern: HeaderPattern::exact(headers),
                    in_port: None,
                    priority: PRIO_DYNAMIC,
                    actions: vec![Action::ForwardTo(out)],
                    table: TableKind::Dynamic,
                },
            ));
        }
        rules
    }

    /// Handle a packet-in: ACL first, then unicast path computation.
    /// Allowed address-resolution broadcasts flood to the edge; any other
    /// multicast or unknown destination has no path and is dropped.
    pub fn decide_packet_in(&self, headers: &HeaderTuple, at_switch: &str) -> PacketInDecision {
        if self.acl.evaluate(headers) == Verdict::Deny {
            return PacketInDecision::Deny;
        }
        if headers.is_multicast() {
            if headers.ethertype == ARP_ETHERTYPE {
                return PacketInDecision::Flood;
            }
            return PacketInDecision::NoPath;
        }
        let Some(host) = self.mac_hosts.get(&headers.dst_mac) else {
            return PacketInDecision::NoPath;
        };
        let Some(path) = self.topo.shortest_path(at_switch, host) else {
            return PacketInDecision::NoPath;
        };
        let rules = self.rules_for_path(headers, &path);
        PacketInDecision::Install { path, rules }
    }

    /// Host-facing switch ports except the one host to exclude and except
    /// controller links; used to flood reservation announcements to all
    /// candidate listeners.
    pub fn edge_ports(&self, exclude_host: &str) -> Vec<(String, u32, String)> {
        let mut out = Vec::new();
        for (host, (sw, port)) in &self.host_attach {
            if host != exclude_host {
                out.push((sw.clone(), *port, host.clone()));
            }
        }
        out
    }

    /// Admit a stream from talker to listener: check per-port headroom
    /// along the path and plan the forwarding rule, reservation entry, and
    /// shaper for every switch crossed. Nothing is reserved until
    /// [`Controller::commit_reservation`].
    pub fn admit_stream(
        &self,
        req: &StreamRequest,
        listener: &str,
    ) -> Result<AdmissionPlan, AdmissionError> {
        let path = self
            .topo
            .shortest_path(&req.talker, listener)
            .ok_or_else(|| AdmissionError::NoPath {
                stream_id: req.stream_id,
                talker: req.talker.clone(),
                listener: listener.to_string(),
            })?;
        let mut steps = Vec::new();
        for pair in path.windows(2) {
            let (node, next) = (&pair[0], &pair[1]);
            if self.topo.node_kind(node) != Some(NodeKind::Switch) {
                continue;
            }
            let out = self.topo.port_toward(node, next).expect("adjacent on path");
            let link_bps = self
                .topo
                .ports(node)
                .into_iter()
                .find(|(p, _, _)| *p == out)
                .map(|(_, _, li)| self.topo.links[li].bandwidth_bps)
                .expect("port has a link");
            let key = (node.clone(), out);
            let used = self.reserved.get(&key).copied().unwrap_or(0);
            if used + req.reserved_bps > link_bps {
                return Err(AdmissionError::InsufficientBandwidth {
                    stream_id: req.stream_id,
                    device: node.clone(),
                    port: out,
                    available: link_bps - used,
                    requested: req.reserved_bps,
                });
            }
            steps.push(AdmissionStep {
                device: node.clone(),
                out_port: out,
                rule: FlowRule {
                    pattern: HeaderPattern::exact(&req.headers),
                    in_port: None,
                    priority: PRIO_DYNAMIC,
                    actions: vec![Action::ForwardTo(out)],
                    table: TableKind::Dynamic,
                },
                sr_entry: SRTableEntry {
                    stream_id: req.stream_id,
                    pattern: HeaderPattern::exact(&req.headers),
                    reserved_bps: req.reserved_bps,
                    ports: vec![out],
                },
                shaper_idle_slope_bps: req.reserved_bps,
            });
        }
        Ok(AdmissionPlan { stream_id: req.stream_id, path, steps })
    }

    /// Record an accepted plan's bandwidth against its ports.
    pub fn commit_reservation(&mut self, plan: &AdmissionPlan, reserved_bps: u64) {
        for step in &plan.steps {
            *self.reserved.entry((step.device.clone(), step.out_port)).or_insert(0) +=
                reserved_bps;
        }
    }
}

/// Static boot rule sending reservation announcements to the controller.
pub fn srp_to_controller_rule() -> FlowRule {
    FlowRule {
        pattern: HeaderPattern { ethertype: Some(SRP_ETHERTYPE), ..HeaderPattern::any() },
        in_port: None,
        priority: PRIO_SRP,
        actions: vec![Action::ToController],
        table: TableKind::Static,
    }
}

/// Boot rule: anything unmatched goes to the controller.
///
/// Lives in the dynamic table at the lowest priority. The static table is
/// consulted first and a match there ends the lookup, so a match-all static
/// rule would permanently shadow every dynamically installed flow; placing
/// the fallback at dynamic priority 0 lets real dynamic rules outrank it.
pub fn fallback_to_controller_rule() -> FlowRule {
    FlowRule {
        pattern: HeaderPattern::any(),
        in_port: None,
        priority: PRIO_FALLBACK,
        actions: vec![Action::ToController],
        table: TableKind::Dynamic,
    }
}
