//! Domain types for topology, frames, control flows, and the communication
//! matrix, plus parsing, serialization, and validation.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

/// Minimum Ethernet frame size on the wire (headers + payload + FCS).
pub const MIN_WIRE_BYTES: u32 = 64;
/// Maximum Ethernet frame size on the wire (headers + payload + FCS).
pub const MAX_WIRE_BYTES: u32 = 1522;
/// Preamble and start-of-frame delimiter preceding every frame.
pub const PREAMBLE_BYTES: u32 = 8;
/// Inter-frame gap in bit times (12 byte times).
pub const IFG_BITS: u64 = 96;

/// Transmission duration of a frame on a link, in nanoseconds.
///
/// The preamble is included; the inter-frame gap is not.
pub fn wire_time_ns(wire_bytes: u32, bandwidth_bps: u64) -> u64 {
    assert!(bandwidth_bps > 0, "bandwidth must be positive");
    let bits = (wire_bytes + PREAMBLE_BYTES) as u128 * 8;
    (bits * 1_000_000_000 / bandwidth_bps as u128) as u64
}

/// Inter-frame gap duration on a link, in nanoseconds.
pub fn ifg_ns(bandwidth_bps: u64) -> u64 {
    (IFG_BITS as u128 * 1_000_000_000 / bandwidth_bps as u128) as u64
}

// ---------------------------------------------------------------------------
// Topology
// ---------------------------------------------------------------------------

/// Role of a node in the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Host,
    Switch,
    Controller,
}

/// A named network node.
#[derive(Debug, Clone)]
pub struct Node {
    pub name: String,
    pub kind: NodeKind,
}

/// A full-duplex point-to-point link between two nodes.
///
/// `forwarding_delay_ns` is the switch-internal processing delay applied when
/// a switch forwards a frame received on this link.
#[derive(Debug, Clone)]
pub struct Link {
    pub endpoint_a: String,
    pub endpoint_b: String,
    pub bandwidth_bps: u64,
    pub forwarding_delay_ns: u64,
}

/// The physical network: nodes and links.
#[derive(Debug, Clone, Default)]
pub struct Topology {
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("link endpoint {0} is not a declared node")]
    UnknownEndpoint(String),
    #[error("duplicate node name {0}")]
    DuplicateNode(String),
    #[error("link {0}-{1} has zero bandwidth")]
    ZeroBandwidth(String, String),
    #[error("host {node} has {degree} links, expected exactly 1")]
    HostDegree { node: String, degree: usize },
    #[error("topology is not connected (node {0} unreachable)")]
    Disconnected(String),
    #[error("controller {0} unreachable from switch {1}")]
    ControllerUnreachable(String, String),
}

impl Topology {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, name: &str, kind: NodeKind) {
        self.nodes.push(Node { name: name.to_string(), kind });
    }

    pub fn add_link(&mut self, a: &str, b: &str, bandwidth_bps: u64, forwarding_delay_ns: u64) {
        self.links.push(Link {
            endpoint_a: a.to_string(),
            endpoint_b: b.to_string(),
            bandwidth_bps,
            forwarding_delay_ns,
        });
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn node_kind(&self, name: &str) -> Option<NodeKind> {
        self.nodes.iter().find(|n| n.name == name).map(|n| n.kind)
    }

    /// Ports of a node, numbered by link declaration order.
    ///
    /// Every implementation that needs stable port numbers (switch rules,
    /// controller path computation) derives them from this enumeration.
    pub fn ports(&self, name: &str) -> Vec<(u32, String, usize)> {
        let mut out = Vec::new();
        for (idx, l) in self.links.iter().enumerate() {
            if l.endpoint_a == name {
                out.push((out.len() as u32, l.endpoint_b.clone(), idx));
            } else if l.endpoint_b == name {
                out.push((out.len() as u32, l.endpoint_a.clone(), idx));
            }
        }
        out
    }

    /// Port number of `name` facing `peer`, if directly linked.
    pub fn port_toward(&self, name: &str, peer: &str) -> Option<u32> {
        self.ports(name)
            .into_iter()
            .find(|(_, p, _)| p == peer)
            .map(|(no, _, _)| no)
    }

    fn neighbors(&self, name: &str) -> Vec<String> {
        self.ports(name).into_iter().map(|(_, p, _)| p).collect()
    }

    /// Deterministic shortest path between two nodes (BFS; the reference
    /// topologies are trees, so paths are unique).
    pub fn shortest_path(&self, from: &str, to: &str) -> Option<Vec<String>> {
        if from == to {
            return Some(vec![from.to_string()]);
        }
        let mut prev: BTreeMap<String, String> = BTreeMap::new();
        let mut queue = VecDeque::new();
        queue.push_back(from.to_string());
        let mut seen: BTreeSet<String> = BTreeSet::new();
        seen.insert(from.to_string());
        while let Some(cur) = queue.pop_front() {
            for n in self.neighbors(&cur) {
                if seen.insert(n.clone()) {
                    prev.insert(n.clone(), cur.clone());
                    if n == to {
                        let mut path = vec![n.clone()];
                        let mut at = n;
                        while let Some(p) = prev.get(&at) {
                            path.push(p.clone());
                            at = p.clone();
                        }
                        path.reverse();
                        return Some(path);
                    }
                    queue.push_back(n);
                }
            }
        }
        None
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        let mut names = BTreeSet::new();
        for n in &self.nodes {
            if !names.insert(n.name.clone()) {
                return Err(TopologyError::DuplicateNode(n.name.clone()));
            }
        }
        for l in &self.links {
            for e in [&l.endpoint_a, &l.endpoint_b] {
                if !names.contains(e.as_str()) {
                    return Err(TopologyError::UnknownEndpoint(e.clone()));
                }
            }
            if l.bandwidth_bps == 0 {
                return Err(TopologyError::ZeroBandwidth(
                    l.endpoint_a.clone(),
                    l.endpoint_b.clone(),
                ));
            }
        }
        for n in &self.nodes {
            if n.kind == NodeKind::Host {
                let degree = self.ports(&n.name).len();
                if degree != 1 {
                    return Err(TopologyError::HostDegree { node: n.name.clone(), degree });
                }
            }
        }
        if let Some(first) = self.nodes.first() {
            for n in &self.nodes {
                if self.shortest_path(&first.name, &n.name).is_none() {
                    return Err(TopologyError::Disconnected(n.name.clone()));
                }
            }
        }
        let controllers: Vec<&Node> =
            self.nodes.iter().filter(|n| n.kind == NodeKind::Controller).collect();
        for c in &controllers {
            for s in self.nodes.iter().filter(|n| n.kind == NodeKind::Switch) {
                if self.shortest_path(&s.name, &c.name).is_none() {
                    return Err(TopologyError::ControllerUnreachable(
                        c.name.clone(),
                        s.name.clone(),
                    ));
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Header tuple and frames
// ---------------------------------------------------------------------------

/// The L2-L4 matchable header fields of a frame; the unit of flow matching
/// and network-flow identity.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HeaderTuple {
    pub dst_mac: u64,
    pub src_mac: u64,
    pub ethertype: u16,
    pub vlan_id: Option<u16>,
    pub pcp: u8,
    pub src_ip: Option<u32>,
    pub dst_ip: Option<u32>,
    pub dscp: Option<u8>,
    pub ip_proto: Option<u8>,
    pub src_port: Option<u16>,
    pub dst_port: Option<u16>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HeaderError {
    #[error("pcp {0} out of range 0-7")]
    InvalidPcp(u8),
    #[error("vlan id {0} out of range 0-4095")]
    InvalidVlan(u16),
    #[error("dscp {0} out of range 0-63")]
    InvalidDscp(u8),
    #[error("L4 ports present without L3 addresses")]
    L4WithoutL3,
}

impl HeaderTuple {
    /// Plain L2 tuple.
    pub fn l2(dst_mac: u64, src_mac: u64, ethertype: u16, vlan_id: Option<u16>, pcp: u8) -> Self {
        Self { dst_mac, src_mac, ethertype, vlan_id, pcp, ..Default::default() }
    }

    /// Add IPv4 addresses and DSCP.
    pub fn with_ipv4(mut self, src_ip: u32, dst_ip: u32, dscp: u8, ip_proto: u8) -> Self {
        self.src_ip = Some(src_ip);
        self.dst_ip = Some(dst_ip);
        self.dscp = Some(dscp);
        self.ip_proto = Some(ip_proto);
        self
    }

    /// Add L4 ports (requires L3 fields to be present).
    pub fn with_ports(mut self, src_port: u16, dst_port: u16) -> Self {
        self.src_port = Some(src_port);
        self.dst_port = Some(dst_port);
        self
    }

    pub fn validate(&self) -> Result<(), HeaderError> {
        if self.pcp > 7 {
            return Err(HeaderError::InvalidPcp(self.pcp));
        }
        if let Some(v) = self.vlan_id {
            if v > 4095 {
                return Err(HeaderError::InvalidVlan(v));
            }
        }
        if let Some(d) = self.dscp {
            if d > 63 {
                return Err(HeaderError::InvalidDscp(d));
            }
        }
        let has_l4 = self.src_port.is_some() || self.dst_port.is_some();
        let has_l3 = self.src_ip.is_some() && self.dst_ip.is_some();
        if has_l4 && !has_l3 {
            return Err(HeaderError::L4WithoutL3);
        }
        Ok(())
    }

    /// True if the destination MAC is a group (multicast/broadcast) address.
    pub fn is_multicast(&self) -> bool {
        (self.dst_mac >> 40) & 0x01 == 1
    }
}

/// One Ethernet frame traveling through the simulation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub headers: HeaderTuple,
    pub payload_bytes: u32,
    /// Headers + payload + FCS; preamble excluded, 64..=1522.
    pub wire_bytes: u32,
    pub frame_id: u64,
    pub cf_id: Option<u32>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("wire size {0} outside 64..=1522")]
    WireSize(u32),
    #[error(transparent)]
    Header(#[from] HeaderError),
}

impl Frame {
    pub fn new(
        headers: HeaderTuple,
        payload_bytes: u32,
        wire_bytes: u32,
        frame_id: u64,
        cf_id: Option<u32>,
    ) -> Result<Self, FrameError> {
        headers.validate()?;
        if !(MIN_WIRE_BYTES..=MAX_WIRE_BYTES).contains(&wire_bytes) {
            return Err(FrameError::WireSize(wire_bytes));
        }
        Ok(Self { headers, payload_bytes, wire_bytes, frame_id, cf_id })
    }

    /// Transmission duration on a link of the given bandwidth, preamble
    /// included.
    pub fn transmission_ns(&self, bandwidth_bps: u64) -> u64 {
        wire_time_ns(self.wire_bytes, bandwidth_bps)
    }
}

// ---------------------------------------------------------------------------
// Control flows and the communication matrix
// ---------------------------------------------------------------------------

/// One vehicle message type: unique id, single sender, receiver set, period,
/// size, priority, domain, and topic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlFlow {
    pub cf_id: u32,
    pub sender_ecu: String,
    pub sender_zc: String,
    /// (ecu, zone controller) pairs; non-empty.
    pub receivers: Vec<(String, String)>,
    pub domain: String,
    pub topic: String,
    pub period_us: u64,
    pub payload_bytes: u32,
    pub priority: u8,
}

impl ControlFlow {
    /// Zone controllers hosting at least one receiver.
    pub fn receiver_zcs(&self) -> BTreeSet<&str> {
        self.receivers.iter().map(|(_, z)| z.as_str()).collect()
    }

    /// True if at least one receiver sits behind a zone controller other
    /// than the sender's.
    pub fn is_backbone(&self) -> bool {
        self.receivers.iter().any(|(_, z)| z != &self.sender_zc)
    }
}

/// A topic label and the single domain it refines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topic {
    pub name: String,
    pub domain: String,
}

/// The vehicle-wide communication matrix.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommunicationMatrix {
    /// Flows in file row order.
    pub flows: Vec<ControlFlow>,
    /// Zone controllers in declaration or first-appearance order.
    pub zones: Vec<String>,
    /// Domains in first-appearance order.
    pub domains: Vec<String>,
    /// Topics in first-appearance order; each maps to exactly one domain.
    pub topics: Vec<Topic>,
}

impl CommunicationMatrix {
    pub fn zone_index(&self, zc: &str) -> Option<usize> {
        self.zones.iter().position(|z| z == zc)
    }

    pub fn domain_index(&self, domain: &str) -> Option<usize> {
        self.domains.iter().position(|d| d == domain)
    }

    pub fn topic_index(&self, topic: &str) -> Option<usize> {
        self.topics.iter().position(|t| t.name == topic)
    }

    pub fn topic_domain(&self, topic: &str) -> Option<&str> {
        self.topics.iter().find(|t| t.name == topic).map(|t| t.domain.as_str())
    }
}

/// Flows with at least one receiver outside the sender's zone, in ascending
/// `cf_id` order.
pub fn backbone_flows(matrix: &CommunicationMatrix) -> Vec<&ControlFlow> {
    let mut out: Vec<&ControlFlow> = matrix.flows.iter().filter(|f| f.is_backbone()).collect();
    out.sort_by_key(|f| f.cf_id);
    out
}

pub const MATRIX_HEADER: &str =
    "cf_id,sender_ecu,sender_zc,receivers,domain,topic,period_us,payload_bytes,priority";

#[derive(Debug, Error)]
pub enum MatrixError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing or malformed header line, expected `{MATRIX_HEADER}`")]
    Header,
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error("row {row}: duplicate cf_id {cf_id}")]
    DuplicateId { cf_id: u32, row: usize },
    #[error("row {row}: zone {zone} not in declared zone set")]
    UnknownZone { zone: String, row: usize },
    #[error("row {row}: topic {topic} already mapped to domain {existing}")]
    TopicDomainConflict { topic: String, existing: String, row: usize },
}

fn row_err(row: usize, msg: impl Into<String>) -> MatrixError {
    MatrixError::Row { row, msg: msg.into() }
}

/// Parse a communication matrix from CSV text.
///
/// Lines starting with `#` are comments. An optional directive
/// `# zones: A,B,C` declares the zone universe; with it present, any zone
/// referenced outside the declared set is an error. Without it, zones are
/// collected in first-appearance order.
pub fn parse_comm_matrix_str(text: &str) -> Result<CommunicationMatrix, MatrixError> {
    let mut declared_zones: Option<Vec<String>> = None;
    for line in text.lines() {
        let t = line.trim();
        if let Some(rest) = t.strip_prefix("# zones:") {
            declared_zones = Some(
                rest.split(',')
                    .map(|z| z.trim().to_string())
                    .filter(|z| !z.is_empty())
                    .collect(),
            );
        }
    }

    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    {
        let headers = rdr.headers().map_err(|_| MatrixError::Header)?;
        let joined = headers.iter().collect::<Vec<_>>().join(",");
        if joined != MATRIX_HEADER {
            return Err(MatrixError::Header);
        }
    }

    let mut matrix = CommunicationMatrix::default();
    if let Some(z) = &declared_zones {
        matrix.zones = z.clone();
    }
    let mut seen_ids: BTreeSet<u32> = BTreeSet::new();
    let mut topic_domain: BTreeMap<String, String> = BTreeMap::new();

    let note_zone =
        |zones: &mut Vec<String>, zone: &str, row: usize| -> Result<(), MatrixError> {
            if !zones.iter().any(|z| z == zone) {
                if declared_zones.is_some() {
                    return Err(MatrixError::UnknownZone { zone: zone.to_string(), row });
                }
                zones.push(zone.to_string());
            }
            Ok(())
        };

    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        // Real input line of the record; comments shift data rows down.
        let row = rec.position().map(|p| p.line() as usize).unwrap_or(i + 2);
        if rec.len() != 9 {
            return Err(row_err(row, format!("expected 9 fields, got {}", rec.len())));
        }
        let cf_id: u32 =
            rec[0].parse().map_err(|_| row_err(row, format!("bad cf_id `{}`", &rec[0])))?;
        if !seen_ids.insert(cf_id) {
            return Err(MatrixError::DuplicateId { cf_id, row });
        }
        let sender_ecu = rec[1].to_string();
        let sender_zc = rec[2].to_string();
        note_zone(&mut matrix.zones, &sender_zc, row)?;
        let mut receivers = Vec::new();
        for tok in rec[3].split(';').filter(|t| !t.trim().is_empty()) {
            let (ecu, zc) = tok
                .split_once('@')
                .ok_or_else(|| row_err(row, format!("receiver `{tok}` not in ecu@zc form")))?;
            let (ecu, zc) = (ecu.trim().to_string(), zc.trim().to_string());
            note_zone(&mut matrix.zones, &zc, row)?;
            receivers.push((ecu, zc));
        }
        if receivers.is_empty() {
            return Err(row_err(row, "empty receiver list"));
        }
        let domain = rec[4].to_string();
        let topic = rec[5].to_string();
        if !matrix.domains.contains(&domain) {
            matrix.domains.push(domain.clone());
        }
        match topic_domain.get(&topic) {
            None => {
                topic_domain.insert(topic.clone(), domain.clone());
                matrix.topics.push(Topic { name: topic.clone(), domain: domain.clone() });
            }
            Some(existing) if existing != &domain => {
                return Err(MatrixError::TopicDomainConflict {
                    topic,
                    existing: existing.clone(),
                    row,
                });
            }
            Some(_) => {}
        }
        let period_us: u64 =
            rec[6].parse().map_err(|_| row_err(row, format!("bad period `{}`", &rec[6])))?;
        if period_us == 0 {
            return Err(row_err(row, "period must be positive"));
        }
        let payload_bytes: u32 =
            rec[7].parse().map_err(|_| row_err(row, format!("bad payload `{}`", &rec[7])))?;
        let priority: u8 =
            rec[8].parse().map_err(|_| row_err(row, format!("bad priority `{}`", &rec[8])))?;
        if priority > 7 {
            return Err(row_err(row, format!("priority {priority} out of range 0-7")));
        }
        matrix.flows.push(ControlFlow {
            cf_id,
            sender_ecu,
            sender_zc,
            receivers,
            domain,
            topic,
            period_us,
            payload_bytes,
            priority,
        });
    }
    Ok(matrix)
}

/// Parse a communication matrix CSV file.
pub fn parse_comm_matrix(path: impl AsRef<Path>) -> Result<CommunicationMatrix, MatrixError> {
    let mut text = String::new();
    std::fs::File::open(path)?.read_to_string(&mut text)?;
    parse_comm_matrix_str(&text)
}

/// Serialize a matrix back to its CSV form (zones directive + header + rows).
pub fn write_comm_matrix(matrix: &CommunicationMatrix, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "# zones: {}", matrix.zones.join(","))?;
    writeln!(w, "{MATRIX_HEADER}")?;
    for f in &matrix.flows {
        let receivers = f
            .receivers
            .iter()
            .map(|(e, z)| format!("{e}@{z}"))
            .collect::<Vec<_>>()
            .join(";");
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            f.cf_id,
            f.sender_ecu,
            f.sender_zc,
            receivers,
            f.domain,
            f.topic,
            f.period_us,
            f.payload_bytes,
            f.priority
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Deterministic synthetic addressing
// ---------------------------------------------------------------------------

/// Locally administered unicast MAC for a plain host, from its node index.
pub fn host_mac(index: usize) -> u64 {
    0x02_00_00_00_10_00 + index as u64
}

/// Unicast MAC for a zone controller, from its zone index.
pub fn zc_mac(index: usize) -> u64 {
    0x02_00_00_00_20_00 + index as u64
}

/// IPv4 address for a plain host (10.0.0.0/16 range).
pub fn host_ip(index: usize) -> u32 {
    0x0A00_0001 + index as u32
}

/// IPv4 address for a zone controller (10.1.0.0/16 range).
pub fn zc_ip(index: usize) -> u32 {
    0x0A01_0001 + index as u32
}

/// Build an IPv4 address from dotted components.
pub const fn ipv4(a: u8, b: u8, c: u8, d: u8) -> u32 {
    ((a as u32) << 24) | ((b as u32) << 16) | ((c as u32) << 8) | d as u32
}

/// Dotted-quad display for an IPv4 address.
pub fn format_ipv4(ip: u32) -> String {
    format!("{}.{}.{}.{}", ip >> 24, (ip >> 16) & 0xFF, (ip >> 8) & 0xFF, ip & 0xFF)
}

/// Parse a dotted-quad IPv4 address.
pub fn parse_ipv4(s: &str) -> Option<u32> {
    let mut parts = s.split('.');
    let mut ip: u32 = 0;
    for _ in 0..4 {
        let p: u32 = parts.next()?.parse().ok()?;
        if p > 255 {
            return None;
        }
        ip = (ip << 8) | p;
    }
    if parts.next().is_some() {
        return None;
    }
    Some(ip)
}

/// Colon-separated display for a 48-bit MAC address.
pub fn format_mac(mac: u64) -> String {
    let b: Vec<String> = (0..6).rev().map(|i| format!("{:02x}", (mac >> (i * 8)) & 0xFF)).collect();
    b.join(":")
}

/// Parse a colon-separated 48-bit MAC address.
pub fn parse_mac(s: &str) -> Option<u64> {
    let mut parts = s.split(':');
    let mut mac: u64 = 0;
    for _ in 0..6 {
        let p = u64::from_str_radix(parts.next()?, 16).ok()?;
        if p > 0xFF {
            return None;
        }
        mac = (mac << 8) | p;
    }
    if parts.next().is_some() {
        return None;
    }
    Some(mac)
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NodeKind::Host => "host",
            NodeKind::Switch => "switch",
            NodeKind::Controller => "controller",
        };
        write!(f, "{s}")
    }
}
