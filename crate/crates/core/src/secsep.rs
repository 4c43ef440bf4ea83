//! Control-flow embedding, network-flow derivation, separation
//! classification, and the aggregation bandwidth model.
//!
//! A control flow (CF) is embedded into Ethernet headers under one of
//! three strategies; the network can then only distinguish traffic at the
//! granularity the embedding exposes. Flows sharing identical matchable
//! headers from one source form a network flow (NF), the unit of
//! forwarding and of separation analysis.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use thiserror::Error;

use crate::netmodel::{backbone_flows, CommunicationMatrix, ControlFlow, HeaderTuple};

/// How CF context is encoded in the packet headers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EmbeddingStrategy {
    /// CF id in a multicast MAC; every message individually addressable.
    ExposedPerMessage,
    /// All CFs of a domain tunnel to one multicast IP.
    HiddenPerDomain,
    /// One multicast IP per topic.
    HiddenPerTopic,
}

impl EmbeddingStrategy {
    pub const ALL: [EmbeddingStrategy; 3] = [
        EmbeddingStrategy::ExposedPerMessage,
        EmbeddingStrategy::HiddenPerTopic,
        EmbeddingStrategy::HiddenPerDomain,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EmbeddingStrategy::ExposedPerMessage => "message",
            EmbeddingStrategy::HiddenPerDomain => "domain",
            EmbeddingStrategy::HiddenPerTopic => "topic",
        }
    }
}

/// Header layout constants of the embeddings, centralized so every byte
/// count traces to one place.
#[derive(Debug, Clone)]
pub struct EmbedConsts {
    /// Ethertype of exposed (raw L2) embedded frames.
    pub exposed_ethertype: u16,
    /// Multicast MAC base; the CF id lands in the low bits.
    pub exposed_mac_base: u64,
    /// Multicast IPv4 base for domain tunnels; low byte = domain index.
    pub domain_ip_base: u32,
    /// Multicast IPv4 base for topic tunnels; low byte = topic index.
    pub topic_ip_base: u32,
    /// UDP port of tunnel traffic (both directions).
    pub tunnel_udp_port: u16,
    /// Per-record header inside a tunnel frame: 4-byte CF id + 1-byte length.
    pub record_header_bytes: u32,
    /// L2 overhead of an exposed frame: Ethernet header + VLAN tag.
    pub exposed_overhead_bytes: u32,
    /// Overhead of a tunnel container: Ethernet + VLAN + IPv4 + UDP.
    pub container_overhead_bytes: u32,
    /// Records fitting one maximum frame.
    pub container_capacity_bytes: u32,
    /// Minimum Ethernet frame.
    pub min_frame_bytes: u32,
    /// Preamble plus inter-frame gap, charged per frame on the wire.
    pub wire_extra_bytes: u32,
}

impl Default for EmbedConsts {
    fn default() -> Self {
        Self {
            exposed_ethertype: 0x88B5,
            exposed_mac_base: 0x03_00_00_00_00_00,
            domain_ip_base: crate::netmodel::ipv4(239, 0, 0, 0),
            topic_ip_base: crate::netmodel::ipv4(239, 1, 0, 0),
            tunnel_udp_port: 30490,
            record_header_bytes: 5,
            exposed_overhead_bytes: 18,
            container_overhead_bytes: 46,
            container_capacity_bytes: 1476,
            min_frame_bytes: 64,
            wire_extra_bytes: 20,
        }
    }
}

/// Standard mapping of a multicast IPv4 address onto a multicast MAC.
pub fn multicast_mac(ip: u32) -> u64 {
    0x0100_5E00_0000 | (ip as u64 & 0x7F_FFFF)
}

/// Embed one CF's context in a header tuple.
pub fn embed(
    cf: &ControlFlow,
    matrix: &CommunicationMatrix,
    strategy: EmbeddingStrategy,
    consts: &EmbedConsts,
) -> HeaderTuple {
    let zone = matrix.zone_index(&cf.sender_zc).expect("sender zone in matrix");
    let src_mac = crate::netmodel::zc_mac(zone);
    match strategy {
        EmbeddingStrategy::ExposedPerMessage => {
            let domain = matrix.domain_index(&cf.domain).expect("domain in matrix") as u16;
            HeaderTuple::l2(
                consts.exposed_mac_base | cf.cf_id as u64,
                src_mac,
                consts.exposed_ethertype,
                Some(domain),
                cf.priority,
            )
        }
        EmbeddingStrategy::HiddenPerDomain | EmbeddingStrategy::HiddenPerTopic => {
            let dst_ip = match strategy {
                EmbeddingStrategy::HiddenPerDomain => {
                    consts.domain_ip_base
                        | matrix.domain_index(&cf.domain).expect("domain in matrix") as u32
                }
                _ => {
                    consts.topic_ip_base
                        | matrix.topic_index(&cf.topic).expect("topic in matrix") as u32
                }
            };
            HeaderTuple::l2(multicast_mac(dst_ip), src_mac, 0x0800, Some(0), cf.priority)
                .with_ipv4(crate::netmodel::zc_ip(zone), dst_ip, cf.priority, 17)
                .with_ports(consts.tunnel_udp_port, consts.tunnel_udp_port)
        }
    }
}

/// The fields a flow rule can match on: the full tuple minus its QoS marks
/// (PCP and DSCP carry priority, not flow identity).
pub fn matchable(h: &HeaderTuple) -> HeaderTuple {
    let mut m = h.clone();
    m.pcp = 0;
    m.dscp = m.dscp.map(|_| 0);
    m
}

/// The destination-facing half of a matchable tuple: what a frame would
/// look like regardless of which zone emitted it.
pub fn dst_side(h: &HeaderTuple) -> HeaderTuple {
    let mut d = matchable(h);
    d.src_mac = 0;
    d.src_ip = d.src_ip.map(|_| 0);
    d
}

// ---------------------------------------------------------------------------
// Network flows
// ---------------------------------------------------------------------------

/// A set of CFs indistinguishable on the wire: one source zone, one
/// matchable tuple, forwarded to the union of member destinations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkFlow {
    pub match_tuple: HeaderTuple,
    pub source_zc: String,
    pub dest_zcs: BTreeSet<String>,
    pub member_cfs: BTreeSet<u32>,
}

/// Group backbone CFs into network flows under a strategy. Output is
/// sorted by (source zone, matchable tuple).
pub fn derive_network_flows(
    matrix: &CommunicationMatrix,
    strategy: EmbeddingStrategy,
    consts: &EmbedConsts,
) -> Vec<NetworkFlow> {
    let mut map: BTreeMap<(String, HeaderTuple), NetworkFlow> = BTreeMap::new();
    for cf in backbone_flows(matrix) {
        let tuple = matchable(&embed(cf, matrix, strategy, consts));
        let key = (cf.sender_zc.clone(), tuple.clone());
        let nf = map.entry(key).or_insert_with(|| NetworkFlow {
            match_tuple: tuple,
            source_zc: cf.sender_zc.clone(),
            dest_zcs: BTreeSet::new(),
            member_cfs: BTreeSet::new(),
        });
        nf.member_cfs.insert(cf.cf_id);
        for zc in cf.receiver_zcs() {
            if zc != cf.sender_zc {
                nf.dest_zcs.insert(zc.to_string());
            }
        }
    }
    map.into_values().collect()
}

/// Summary statistics over one strategy's network flows.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationMetrics {
    pub nf_count: usize,
    pub nfs_with_multiple: usize,
    pub min_cfs: usize,
    pub max_cfs: usize,
    pub avg_cfs: f64,
    /// Destination-zone count to number of NFs reaching that many zones.
    pub dest_count_histogram: BTreeMap<usize, usize>,
}

pub fn separation_metrics(nfs: &[NetworkFlow]) -> SeparationMetrics {
    let sizes: Vec<usize> = nfs.iter().map(|n| n.member_cfs.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut hist = BTreeMap::new();
    for n in nfs {
        *hist.entry(n.dest_zcs.len()).or_insert(0) += 1;
    }
    SeparationMetrics {
        nf_count: nfs.len(),
        nfs_with_multiple: sizes.iter().filter(|s| **s > 1).count(),
        min_cfs: sizes.iter().copied().min().unwrap_or(0),
        max_cfs: sizes.iter().copied().max().unwrap_or(0),
        avg_cfs: if nfs.is_empty() { 0.0 } else { total as f64 / nfs.len() as f64 },
        dest_count_histogram: hist,
    }
}

// ---------------------------------------------------------------------------
// Path classification
// ---------------------------------------------------------------------------

/// Deliverability of a CF between one ordered zone pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathVerdict {
    /// Sent by its real source and needed at the destination.
    Legitimate,
    /// Carried to a destination that hosts no receiver of it.
    Oversupplied,
    /// A foreign zone could inject it and the network would forward it.
    Permitted,
    /// The network filters it on this path.
    Forbidden,
}

impl PathVerdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            PathVerdict::Legitimate => "legitimate",
            PathVerdict::Oversupplied => "oversupplied",
            PathVerdict::Permitted => "permitted",
            PathVerdict::Forbidden => "forbidden",
        }
    }
}

/// Verdict for every (source zone, destination zone, backbone CF) triple
/// with distinct zones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathClassification {
    pub verdicts: BTreeMap<(String, String, u32), PathVerdict>,
}

impl PathClassification {
    /// Counts in order legitimate, oversupplied, permitted, forbidden.
    pub fn counts(&self) -> [usize; 4] {
        let mut c = [0; 4];
        for v in self.verdicts.values() {
            let i = match v {
                PathVerdict::Legitimate => 0,
                PathVerdict::Oversupplied => 1,
                PathVerdict::Permitted => 2,
                PathVerdict::Forbidden => 3,
            };
            c[i] += 1;
        }
        c
    }

    pub fn of(&self, src: &str, dst: &str, cf: u32) -> Option<PathVerdict> {
        self.verdicts.get(&(src.to_string(), dst.to_string(), cf)).copied()
    }

    /// Triples with the given verdict.
    pub fn set_of(&self, v: PathVerdict) -> BTreeSet<(String, String, u32)> {
        self.verdicts.iter().filter(|(_, x)| **x == v).map(|(k, _)| k.clone()).collect()
    }
}

/// Classify every zone pair and backbone CF against the NFs the strategy
/// installs.
///
/// A CF is legitimate from its real sender to a zone hosting a receiver;
/// oversupplied where its NF delivers it without a receiver; permitted
/// where a foreign zone has an installed NF whose destination-facing
/// headers match the CF's (so forged traffic would be forwarded); and
/// forbidden everywhere else.
pub fn classify_paths(matrix: &CommunicationMatrix, nfs: &[NetworkFlow]) -> PathClassification {
    let flows = backbone_flows(matrix);
    let mut nf_of: BTreeMap<u32, usize> = BTreeMap::new();
    for (i, nf) in nfs.iter().enumerate() {
        for cf in &nf.member_cfs {
            nf_of.insert(*cf, i);
        }
    }
    let mut verdicts = BTreeMap::new();
    for src in &matrix.zones {
        for dst in &matrix.zones {
            if src == dst {
                continue;
            }
            for cf in &flows {
                let nf = &nfs[nf_of[&cf.cf_id]];
                let receiver_here = cf.receiver_zcs().contains(dst.as_str());
                let v = if cf.sender_zc == *src && receiver_here {
                    PathVerdict::Legitimate
                } else if cf.sender_zc == *src && nf.dest_zcs.contains(dst) {
                    PathVerdict::Oversupplied
                } else {
                    let target = dst_side(&nf.match_tuple);
                    let carried = nfs.iter().any(|n| {
                        n.source_zc == *src
                            && n.dest_zcs.contains(dst)
                            && dst_side(&n.match_tuple) == target
                    });
                    if carried {
                        PathVerdict::Permitted
                    } else {
                        PathVerdict::Forbidden
                    }
                };
                verdicts.insert((src.clone(), dst.clone(), cf.cf_id), v);
            }
        }
    }
    PathClassification { verdicts }
}

// ---------------------------------------------------------------------------
// Aggregation bandwidth model
// ---------------------------------------------------------------------------

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AggregationError {
    #[error("aggregation requires a hidden embedding; exposed frames carry one message each")]
    AggregationWithExposed,
}

/// Sent/received bandwidth per zone and the average frame size for one
/// strategy and aggregation interval.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationReport {
    pub avg_frame_bytes: f64,
    pub sent_bps: BTreeMap<String, f64>,
    pub received_bps: BTreeMap<String, f64>,
}

impl AggregationReport {
    pub fn total_sent_bps(&self) -> f64 {
        self.sent_bps.values().sum()
    }

    pub fn total_received_bps(&self) -> f64 {
        self.received_bps.values().sum()
    }
}

/// Model the backbone bandwidth of embedded CF traffic.
///
/// Without aggregation every CF message rides its own frame. With an
/// aggregation interval, each NF packs whole records (header + payload)
/// into container frames released when the interval elapses or the
/// container fills, whichever is sooner. Received bandwidth counts each
/// NF's full stream at every destination zone, so oversupply inflates it.
pub fn aggregation_model(
    matrix: &CommunicationMatrix,
    interval_us: u64,
    strategy: EmbeddingStrategy,
    consts: &EmbedConsts,
) -> Result<AggregationReport, AggregationError> {
    if interval_us > 0 && strategy == EmbeddingStrategy::ExposedPerMessage {
        return Err(AggregationError::AggregationWithExposed);
    }
    let nfs = derive_network_flows(matrix, strategy, consts);
    let mut sent: BTreeMap<String, f64> = BTreeMap::new();
    let mut received: BTreeMap<String, f64> = BTreeMap::new();
    for z in &matrix.zones {
        sent.insert(z.clone(), 0.0);
        received.insert(z.clone(), 0.0);
    }
    let mut frames_total = 0.0;
    let mut frame_bytes_total = 0.0;
    let flows = backbone_flows(matrix);
    let mut account = |src: &str, dests: &BTreeSet<String>, frames_per_s: f64, frame_bytes: f64| {
        let wire_bits = (frame_bytes + consts.wire_extra_bytes as f64) * 8.0;
        *sent.get_mut(src).expect("zone known") += frames_per_s * wire_bits;
        for d in dests {
            *received.get_mut(d).expect("zone known") += frames_per_s * wire_bits;
        }
        frames_total += frames_per_s;
        frame_bytes_total += frames_per_s * frame_bytes;
    };
    if interval_us == 0 {
        // One frame per message.
        for cf in &flows {
            let nf = nfs
                .iter()
                .find(|n| n.member_cfs.contains(&cf.cf_id))
                .expect("backbone cf belongs to an NF");
            let rate = 1e6 / cf.period_us as f64;
            let body = match strategy {
                EmbeddingStrategy::ExposedPerMessage => {
                    consts.exposed_overhead_bytes + cf.payload_bytes
                }
                _ => {
                    consts.container_overhead_bytes
                        + consts.record_header_bytes
                        + cf.payload_bytes
                }
            };
            let frame = body.max(consts.min_frame_bytes) as f64;
            account(&cf.sender_zc, &nf.dest_zcs, rate, frame);
        }
    } else {
        // Containers per NF.
        for nf in &nfs {
            let record_rate: f64 = flows
                .iter()
                .filter(|cf| nf.member_cfs.contains(&cf.cf_id))
                .map(|cf| {
                    (consts.record_header_bytes + cf.payload_bytes) as f64
                        * (1e6 / cf.period_us as f64)
                })
                .sum();
            let frames_per_s =
                (record_rate / consts.container_capacity_bytes as f64).max(1e6 / interval_us as f64);
            let body = consts.container_overhead_bytes as f64 + record_rate / frames_per_s;
            let frame = body.max(consts.min_frame_bytes as f64);
            account(&nf.source_zc, &nf.dest_zcs, frames_per_s, frame);
        }
    }
    let avg_frame_bytes =
        if frames_total > 0.0 { frame_bytes_total / frames_total } else { 0.0 };
    Ok(AggregationReport { avg_frame_bytes, sent_bps: sent, received_bps: received })
}

// ---------------------------------------------------------------------------
// Report writers
// ---------------------------------------------------------------------------

/// `strategy,nf_count,nfs_multi,min_cfs,avg_cfs,max_cfs`
pub fn write_separation_report(
    w: &mut impl Write,
    rows: &[(EmbeddingStrategy, &SeparationMetrics)],
) -> std::io::Result<()> {
    writeln!(w, "strategy,nf_count,nfs_multi,min_cfs,avg_cfs,max_cfs")?;
    for (s, m) in rows {
        writeln!(
            w,
            "{},{},{},{},{:.2},{}",
            s.as_str(),
            m.nf_count,
            m.nfs_with_multiple,
            m.min_cfs,
            m.avg_cfs,
            m.max_cfs
        )?;
    }
    Ok(())
}

/// `strategy,src_zc,dst_zc,cf_id,verdict`
pub fn write_classification_csv(
    w: &mut impl Write,
    rows: &[(EmbeddingStrategy, &PathClassification)],
) -> std::io::Result<()> {
    writeln!(w, "strategy,src_zc,dst_zc,cf_id,verdict")?;
    for (s, c) in rows {
        for ((src, dst, cf), v) in &c.verdicts {
            writeln!(w, "{},{},{},{},{}", s.as_str(), src, dst, cf, v.as_str())?;
        }
    }
    Ok(())
}

/// `strategy,dest_count,nf_count`
pub fn write_histogram_csv(
    w: &mut impl Write,
    rows: &[(EmbeddingStrategy, &SeparationMetrics)],
) -> std::io::Result<()> {
    writeln!(w, "strategy,dest_count,nf_count")?;
    for (s, m) in rows {
        for (dests, count) in &m.dest_count_histogram {
            writeln!(w, "{},{},{}", s.as_str(), dests, count)?;
        }
    }
    Ok(())
}

/// `strategy,interval_us,avg_frame_bytes,sent_bw_bps,received_bw_bps`
pub fn write_aggregation_csv(
    w: &mut impl Write,
    rows: &[(EmbeddingStrategy, u64, &AggregationReport)],
) -> std::io::Result<()> {
    writeln!(w, "strategy,interval_us,avg_frame_bytes,sent_bw_bps,received_bw_bps")?;
    for (s, interval, r) in rows {
        writeln!(
            w,
            "{},{},{:.1},{:.0},{:.0}",
            s.as_str(),
            interval,
            r.avg_frame_bytes,
            r.total_sent_bps(),
            r.total_received_bps()
        )?;
    }
    Ok(())
}
