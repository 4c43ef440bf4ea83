//! Command-line front end: scenario and matrix ingestion, simulation runs,
//! separation and attack reports, and the analytic bound table.
//!
//! Exit codes: 0 success, 1 usage error, 2 input error, 3 runtime
//! invariant violation. All file outputs are CSV, and repeated identical
//! invocations produce byte-identical files. The `TSSDN_VERBOSE`
//! environment variable turns on progress notes on stderr; nothing else
//! is read from the environment.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacksim::{
    parse_replay_trace, run_attack, write_attack_report, AccessControl, AttackKind, AttackScenario,
};
use crate::bounds::{
    async_bound_ns, build_network_schedule, sync_latency_ns, write_bound_report, BoundRow,
    SyncFlowSpec,
};
use crate::controller::{parse_acl_str, format_acl, Acl, AclCond, Verdict, ARP_ETHERTYPE};
use crate::desim::{format_us, Nanos, NS_PER_US};
use crate::engine::{
    flow_max_latency, run_scenario, AsyncFlowDef, BeFlowDef, ConfigDef, InjectionDef, LinkDef,
    MulticastPolicy, NodeDef, RunOutput, RunSpec, Scenario, ServiceDef, SrDef, SyncFlowDef,
    TunnelDef, TxnTiming, Variant,
};
use crate::netmodel::{
    format_ipv4, format_mac, parse_comm_matrix, parse_ipv4, parse_mac, wire_time_ns, HeaderTuple,
    NodeKind, Topology,
};
use crate::secsep::{
    aggregation_model, classify_paths, derive_network_flows, separation_metrics,
    write_aggregation_csv, write_classification_csv, write_histogram_csv, write_separation_report,
    AggregationReport, EmbedConsts, EmbeddingStrategy,
};
use crate::txnsched::Strategy;

/// Aggregation window reported alongside the per-frame baseline for the
/// hidden embeddings.
const AGG_INTERVAL_US: u64 = 100_000;

// ---------------------------------------------------------------------------
// Argument surface
// ---------------------------------------------------------------------------

#[derive(Debug, Parser)]
#[command(
    name = "tssdn",
    version,
    about = "In-vehicle TSN/SDN backbone simulator and analysis toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Run a scenario and write trace, latency, and bound-report CSVs.
    Simulate(SimulateArgs),
    /// Derive network flows from a communication matrix and write
    /// separation, classification, histogram, and aggregation CSVs.
    Separation(SeparationArgs),
    /// Run an attack against a scenario and write its report CSV.
    Attack(AttackArgs),
    /// Print the analytic latency bound table without simulating.
    Bounds(BoundsArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario file (TOML).
    pub scenario: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sweep seeds 0..N concurrently instead of running one seed; outputs
    /// are merged in seed order.
    #[arg(long, conflicts_with = "seed")]
    pub seeds: Option<u64>,
    #[arg(long, value_enum, default_value_t = VariantArg::Tssdn)]
    pub variant: VariantArg,
    #[arg(long, value_enum, default_value_t = UpdateArg::Sync)]
    pub update: UpdateArg,
    /// Output directory, created if absent.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SeparationArgs {
    /// Communication matrix file (CSV).
    pub matrix: PathBuf,
    #[arg(long, value_enum, default_value_t = StrategyArg::All)]
    pub strategy: StrategyArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    /// Scenario file (TOML) describing the network under attack.
    pub scenario: PathBuf,
    #[arg(long, value_enum)]
    pub attack: AttackArg,
    #[arg(long, value_enum, default_value_t = AclArg::On)]
    pub acl: AclArg,
    /// Strip the address-resolution allowance from the scenario's rules.
    #[arg(long, value_enum, default_value_t = ArpArg::Allow)]
    pub arp: ArpArg,
    /// Unknown-multicast handling when access control is off.
    #[arg(long, value_enum, default_value_t = PolicyArg::DropUnknown)]
    pub policy: PolicyArg,
    #[arg(long, default_value = "Gw")]
    pub attacker: String,
    /// Target node of port scans and floods.
    #[arg(long, default_value = "Target")]
    pub target: String,
    /// Frame count of a flood.
    #[arg(long, default_value_t = 1000)]
    pub count: u32,
    /// Recorded trace to play back (replay only).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Embedding the replayed trace was recorded under (replay only).
    #[arg(long, value_enum)]
    pub embedding: Option<EmbeddingArg>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    pub scenario: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    /// Distributed control: static gate schedule and hop-by-hop reservation.
    Tsn,
    /// Central control: reactive installs and scheduled reconfigurations.
    Tssdn,
}

impl VariantArg {
    fn to_variant(self) -> Variant {
        match self {
            VariantArg::Tsn => Variant::Tsn { gate_control: true },
            VariantArg::Tssdn => Variant::Tssdn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum UpdateArg {
    Sync,
    Ordered,
    Split,
}

impl UpdateArg {
    fn to_strategy(self) -> Strategy {
        match self {
            UpdateArg::Sync => Strategy::SyncCommit,
            UpdateArg::Ordered => Strategy::Ordered,
            UpdateArg::Split => Strategy::Split,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    All,
    Message,
    Topic,
    Domain,
}

impl StrategyArg {
    fn selected(self) -> Vec<EmbeddingStrategy> {
        match self {
            StrategyArg::All => EmbeddingStrategy::ALL.to_vec(),
            StrategyArg::Message => vec![EmbeddingStrategy::ExposedPerMessage],
            StrategyArg::Topic => vec![EmbeddingStrategy::HiddenPerTopic],
            StrategyArg::Domain => vec![EmbeddingStrategy::HiddenPerDomain],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AttackArg {
    HostScan,
    PortScan,
    SynFlood,
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AclArg {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArpArg {
    Allow,
    Deny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    DropUnknown,
    BroadcastUnknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EmbeddingArg {
    Message,
    Topic,
    Domain,
}

impl EmbeddingArg {
    fn to_strategy(self) -> EmbeddingStrategy {
        match self {
            EmbeddingArg::Message => EmbeddingStrategy::ExposedPerMessage,
            EmbeddingArg::Topic => EmbeddingStrategy::HiddenPerTopic,
            EmbeddingArg::Domain => EmbeddingStrategy::HiddenPerDomain,
        }
    }
}

// ---------------------------------------------------------------------------
// Errors and entry
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

fn input<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

fn verbose() -> bool {
    std::env::var_os("TSSDN_VERBOSE").is_some_and(|v| v != "0" && !v.is_empty())
}

/// Parse arguments and run; returns the process exit code.
pub fn main_entry<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            // Help and version land on stdout and exit clean; real usage
            // errors land on stderr.
            let to_stderr = e.use_stderr();
            let _ = e.print();
            return if to_stderr { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.cmd {
        Cmd::Simulate(a) => cmd_simulate(a),
        Cmd::Separation(a) => cmd_separation(a),
        Cmd::Attack(a) => cmd_attack(a),
        Cmd::Bounds(a) => cmd_bounds(a),
    }
}

// ---------------------------------------------------------------------------
// Scenario files
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum ScenarioFileError {
    #[error("cannot read scenario: {0}")]
    Io(String),
    #[error("scenario parse: {0}")]
    Toml(String),
    #[error("{context}: {msg}")]
    Field { context: String, msg: String },
    #[error("scenario invalid: {0}")]
    Invalid(String),
}

fn field_err(context: impl Into<String>, msg: impl std::fmt::Display) -> ScenarioFileError {
    ScenarioFileError::Field { context: context.into(), msg: msg.to_string() }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    period_us: u64,
    t_end_us: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    controller: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tsn_static_config: Option<String>,
    nodes: Vec<NodeFile>,
    links: Vec<LinkFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    sync_flows: Vec<SyncFlowFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    async_flows: Vec<AsyncFlowFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    be_flows: Vec<BeFlowFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    configs: Vec<ConfigFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    txn: Option<TxnFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    reservations: Vec<ReservationFile>,
    /// Access rules in the controller's one-line format, ending with a
    /// `default=` footer; empty means allow-all.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    acl: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    services: Vec<ServiceFile>,
    /// (host, group MAC) registrations.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    group_members: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    tunnels: Vec<TunnelFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    injections: Vec<InjectionFile>,
    /// (transaction label, device) prepare failures.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    faults: Vec<(String, String)>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeFile {
    name: String,
    kind: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkFile {
    a: String,
    b: String,
    bandwidth_bps: u64,
    forwarding_delay_ns: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SyncFlowFile {
    name: String,
    cf_id: u32,
    source: String,
    dest: String,
    pcp: u8,
    wire_bytes: u32,
    phase_us: u64,
    frames_per_period: u32,
    active_from_us: u64,
    active_until_us: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AsyncFlowFile {
    name: String,
    stream_id: u32,
    source: String,
    dest: String,
    pcp: u8,
    wire_bytes: u32,
    period_us: u64,
    reserved_bps: u64,
    until_us: u64,
    src_port: u16,
    dst_port: u16,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BeFlowFile {
    name: String,
    source: String,
    dest: String,
    period_us: u64,
    start_us: u64,
    src_port: u16,
    dst_port: u16,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    label: String,
    at_us: u64,
    /// (flow name, first-hop window delay in microseconds) pairs.
    delays: Vec<(String, u64)>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TxnFile {
    sync_lead_us: u64,
    sync_margin_us: u64,
    ordered_lead_us: u64,
    split_lead_us: u64,
    commit_exec_us: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReservationFile {
    flow: String,
    at_us: u64,
    step_us: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ServiceFile {
    node: String,
    #[serde(default)]
    arp: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    tcp_ports: Vec<u16>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    udp_ports: Vec<u16>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TunnelFile {
    source: String,
    dests: Vec<String>,
    headers: HeadersFile,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InjectionFile {
    node: String,
    at_ns: u64,
    wire_bytes: u32,
    #[serde(default)]
    tag: String,
    headers: HeadersFile,
}

/// Header tuple with human-readable addresses; optional layers stay absent.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeadersFile {
    dst_mac: String,
    src_mac: String,
    ethertype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vlan_id: Option<u16>,
    pcp: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    src_ip: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dst_ip: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dscp: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ip_proto: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    src_port: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dst_port: Option<u16>,
}

impl HeadersFile {
    fn from_tuple(h: &HeaderTuple) -> Self {
        Self {
            dst_mac: format_mac(h.dst_mac),
            src_mac: format_mac(h.src_mac),
            ethertype: format!("0x{:04x}", h.ethertype),
            vlan_id: h.vlan_id,
            pcp: h.pcp,
            src_ip: h.src_ip.map(format_ipv4),
            dst_ip: h.dst_ip.map(format_ipv4),
            dscp: h.dscp,
            ip_proto: h.ip_proto,
            src_port: h.src_port,
            dst_port: h.dst_port,
        }
    }

    fn to_tuple(&self, context: &str) -> Result<HeaderTuple, ScenarioFileError> {
        let mac = |s: &str| parse_mac(s).ok_or_else(|| field_err(context, format!("bad mac `{s}`")));
        let ip = |s: &Option<String>| -> Result<Option<u32>, ScenarioFileError> {
            s.as_deref()
                .map(|v| parse_ipv4(v).ok_or_else(|| field_err(context, format!("bad ip `{v}`"))))
                .transpose()
        };
        let ethertype = self
            .ethertype
            .strip_prefix("0x")
            .and_then(|s| u16::from_str_radix(s, 16).ok())
            .or_else(|| self.ethertype.parse().ok())
            .ok_or_else(|| field_err(context, format!("bad ethertype `{}`", self.ethertype)))?;
        let h = HeaderTuple {
            dst_mac: mac(&self.dst_mac)?,
            src_mac: mac(&self.src_mac)?,
            ethertype,
            vlan_id: self.vlan_id,
            pcp: self.pcp,
            src_ip: ip(&self.src_ip)?,
            dst_ip: ip(&self.dst_ip)?,
            dscp: self.dscp,
            ip_proto: self.ip_proto,
            src_port: self.src_port,
            dst_port: self.dst_port,
        };
        h.validate().map_err(|e| field_err(context, e))?;
        Ok(h)
    }
}

fn kind_to_str(k: NodeKind) -> &'static str {
    match k {
        NodeKind::Host => "host",
        NodeKind::Switch => "switch",
        NodeKind::Controller => "controller",
    }
}

fn kind_from_str(s: &str) -> Option<NodeKind> {
    match s {
        "host" => Some(NodeKind::Host),
        "switch" => Some(NodeKind::Switch),
        "controller" => Some(NodeKind::Controller),
        _ => None,
    }
}

/// Serialize a scenario into the documented TOML layout.
pub fn scenario_to_toml(sc: &Scenario) -> String {
    let file = ScenarioFile {
        name: sc.name.clone(),
        period_us: sc.period_us,
        t_end_us: sc.t_end_us,
        controller: sc.controller.clone(),
        tsn_static_config: sc.tsn_static_config.clone(),
        nodes: sc
            .nodes
            .iter()
            .map(|n| NodeFile { name: n.name.clone(), kind: kind_to_str(n.kind).into() })
            .collect(),
        links: sc
            .links
            .iter()
            .map(|l| LinkFile {
                a: l.a.clone(),
                b: l.b.clone(),
                bandwidth_bps: l.bandwidth_bps,
                forwarding_delay_ns: l.forwarding_delay_ns,
            })
            .collect(),
        sync_flows: sc
            .sync_flows
            .iter()
            .map(|f| SyncFlowFile {
                name: f.name.clone(),
                cf_id: f.cf_id,
                source: f.source.clone(),
                dest: f.dest.clone(),
                pcp: f.pcp,
                wire_bytes: f.wire_bytes,
                phase_us: f.phase_us,
                frames_per_period: f.frames_per_period,
                active_from_us: f.active_from_us,
                active_until_us: f.active_until_us,
            })
            .collect(),
        async_flows: sc
            .async_flows
            .iter()
            .map(|f| AsyncFlowFile {
                name: f.name.clone(),
                stream_id: f.stream_id,
                source: f.source.clone(),
                dest: f.dest.clone(),
                pcp: f.pcp,
                wire_bytes: f.wire_bytes,
                period_us: f.period_us,
                reserved_bps: f.reserved_bps,
                until_us: f.until_us,
                src_port: f.src_port,
                dst_port: f.dst_port,
            })
            .collect(),
        be_flows: sc
            .be_flows
            .iter()
            .map(|f| BeFlowFile {
                name: f.name.clone(),
                source: f.source.clone(),
                dest: f.dest.clone(),
                period_us: f.period_us,
                start_us: f.start_us,
                src_port: f.src_port,
                dst_port: f.dst_port,
            })
            .collect(),
        configs: sc
            .configs
            .iter()
            .map(|c| ConfigFile { label: c.label.clone(), at_us: c.at_us, delays: c.delays.clone() })
            .collect(),
        txn: (sc.txn != TxnTiming::default()).then_some(TxnFile {
            sync_lead_us: sc.txn.sync_lead_us,
            sync_margin_us: sc.txn.sync_margin_us,
            ordered_lead_us: sc.txn.ordered_lead_us,
            split_lead_us: sc.txn.split_lead_us,
            commit_exec_us: sc.txn.commit_exec_us,
        }),
        reservations: sc
            .reservations
            .iter()
            .map(|r| ReservationFile { flow: r.flow.clone(), at_us: r.at_us, step_us: r.step_us })
            .collect(),
        acl: format_acl(&sc.acl).lines().map(String::from).collect(),
        services: sc
            .services
            .iter()
            .map(|s| ServiceFile {
                node: s.node.clone(),
                arp: s.arp,
                tcp_ports: s.tcp_ports.clone(),
                udp_ports: s.udp_ports.clone(),
            })
            .collect(),
        group_members: sc
            .group_members
            .iter()
            .map(|(n, m)| (n.clone(), format_mac(*m)))
            .collect(),
        tunnels: sc
            .tunnels
            .iter()
            .map(|t| TunnelFile {
                source: t.source.clone(),
                dests: t.dests.clone(),
                headers: HeadersFile::from_tuple(&t.headers),
            })
            .collect(),
        injections: sc
            .injections
            .iter()
            .map(|i| InjectionFile {
                node: i.node.clone(),
                at_ns: i.at_ns,
                wire_bytes: i.wire_bytes,
                tag: i.tag.clone(),
                headers: HeadersFile::from_tuple(&i.headers),
            })
            .collect(),
        faults: sc.faults.clone(),
    };
    toml::to_string_pretty(&file).expect("scenario serializes")
}

/// Parse a scenario from its TOML layout and validate it structurally.
pub fn scenario_from_toml(text: &str) -> Result<Scenario, ScenarioFileError> {
    let file: ScenarioFile =
        toml::from_str(text).map_err(|e| ScenarioFileError::Toml(e.to_string()))?;
    let mut sc = Scenario::empty(&file.name);
    sc.period_us = file.period_us;
    sc.t_end_us = file.t_end_us;
    sc.controller = file.controller;
    sc.tsn_static_config = file.tsn_static_config;
    for n in &file.nodes {
        let kind = kind_from_str(&n.kind)
            .ok_or_else(|| field_err(format!("node {}", n.name), format!("bad kind `{}`", n.kind)))?;
        sc.nodes.push(NodeDef { name: n.name.clone(), kind });
    }
    sc.links = file
        .links
        .iter()
        .map(|l| LinkDef {
            a: l.a.clone(),
            b: l.b.clone(),
            bandwidth_bps: l.bandwidth_bps,
            forwarding_delay_ns: l.forwarding_delay_ns,
        })
        .collect();
    sc.sync_flows = file
        .sync_flows
        .iter()
        .map(|f| SyncFlowDef {
            name: f.name.clone(),
            cf_id: f.cf_id,
            source: f.source.clone(),
            dest: f.dest.clone(),
            pcp: f.pcp,
            wire_bytes: f.wire_bytes,
            phase_us: f.phase_us,
            frames_per_period: f.frames_per_period,
            active_from_us: f.active_from_us,
            active_until_us: f.active_until_us,
        })
        .collect();
    sc.async_flows = file
        .async_flows
        .iter()
        .map(|f| AsyncFlowDef {
            name: f.name.clone(),
            stream_id: f.stream_id,
            source: f.source.clone(),
            dest: f.dest.clone(),
            pcp: f.pcp,
            wire_bytes: f.wire_bytes,
            period_us: f.period_us,
            reserved_bps: f.reserved_bps,
            until_us: f.until_us,
            src_port: f.src_port,
            dst_port: f.dst_port,
        })
        .collect();
    sc.be_flows = file
        .be_flows
        .iter()
        .map(|f| BeFlowDef {
            name: f.name.clone(),
            source: f.source.clone(),
            dest: f.dest.clone(),
            period_us: f.period_us,
            start_us: f.start_us,
            src_port: f.src_port,
            dst_port: f.dst_port,
        })
        .collect();
    sc.configs = file
        .configs
        .iter()
        .map(|c| ConfigDef { label: c.label.clone(), at_us: c.at_us, delays: c.delays.clone() })
        .collect();
    if let Some(t) = &file.txn {
        sc.txn = TxnTiming {
            sync_lead_us: t.sync_lead_us,
            sync_margin_us: t.sync_margin_us,
            ordered_lead_us: t.ordered_lead_us,
            split_lead_us: t.split_lead_us,
            commit_exec_us: t.commit_exec_us,
        };
    }
    sc.reservations = file
        .reservations
        .iter()
        .map(|r| SrDef { flow: r.flow.clone(), at_us: r.at_us, step_us: r.step_us })
        .collect();
    if !file.acl.is_empty() {
        sc.acl = parse_acl_str(&file.acl.join("\n")).map_err(|e| field_err("acl", e))?;
    }
    sc.services = file
        .services
        .iter()
        .map(|s| ServiceDef {
            node: s.node.clone(),
            arp: s.arp,
            tcp_ports: s.tcp_ports.clone(),
            udp_ports: s.udp_ports.clone(),
        })
        .collect();
    for (node, mac) in &file.group_members {
        let m = parse_mac(mac)
            .ok_or_else(|| field_err("group_members", format!("bad mac `{mac}`")))?;
        sc.group_members.push((node.clone(), m));
    }
    for t in &file.tunnels {
        sc.tunnels.push(TunnelDef {
            source: t.source.clone(),
            headers: t.headers.to_tuple(&format!("tunnel from {}", t.source))?,
            dests: t.dests.clone(),
        });
    }
    for i in &file.injections {
        sc.injections.push(InjectionDef {
            node: i.node.clone(),
            at_ns: i.at_ns,
            headers: i.headers.to_tuple(&format!("injection at {}", i.node))?,
            wire_bytes: i.wire_bytes,
            tag: i.tag.clone(),
        });
    }
    sc.faults = file.faults.clone();
    sc.validate().map_err(ScenarioFileError::Invalid)?;
    Ok(sc)
}

/// Read and parse a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioFileError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ScenarioFileError::Io(format!("{}: {e}", path.display())))?;
    scenario_from_toml(&text)
}

// ---------------------------------------------------------------------------
// Analytic bound table
// ---------------------------------------------------------------------------

/// One row of the bound table; `bound_ns` absent for diagnostics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundTableRow {
    pub flow: String,
    pub config: String,
    pub bound_ns: Option<Nanos>,
    pub note: String,
}

/// Per-flow, per-configuration analytic latency bounds, computed from the
/// scenario alone. A synchronous flow active during a configuration that
/// gives it no slot yields a `MissingSlot` diagnostic row.
pub fn analytic_bound_rows(sc: &Scenario) -> Vec<BoundTableRow> {
    let mut topo = Topology::new();
    for n in &sc.nodes {
        topo.add_node(&n.name, n.kind);
    }
    for l in &sc.links {
        topo.add_link(&l.a, &l.b, l.bandwidth_bps, l.forwarding_delay_ns);
    }

    let mut specs: BTreeMap<String, SyncFlowSpec> = BTreeMap::new();
    for def in &sc.sync_flows {
        let path = topo.shortest_path(&def.source, &def.dest).expect("endpoints connected");
        let mut hops = Vec::new();
        for pair in path.windows(2) {
            if topo.node_kind(&pair[0]) == Some(NodeKind::Switch) {
                hops.push((pair[0].clone(), topo.port_toward(&pair[0], &pair[1]).expect("adjacent")));
            }
        }
        specs.insert(
            def.name.clone(),
            SyncFlowSpec {
                cf_id: def.cf_id,
                source: def.source.clone(),
                pcp: def.pcp,
                wire_bytes: def.wire_bytes,
                phase_ns: def.phase_us * NS_PER_US,
                frames_per_period: def.frames_per_period,
                hops,
            },
        );
    }
    let mut all_ports: Vec<_> = Vec::new();
    for s in specs.values() {
        for h in &s.hops {
            if !all_ports.contains(h) {
                all_ports.push(h.clone());
            }
        }
    }
    all_ports.sort();

    let mut rows = Vec::new();
    for (ci, cfg) in sc.configs.iter().enumerate() {
        let reign_end_us = sc.configs.get(ci + 1).map(|c| c.at_us).unwrap_or(sc.t_end_us);
        let delay_of = |name: &str| {
            cfg.delays.iter().find(|(f, _)| f == name).map(|(_, us)| us * NS_PER_US)
        };
        let flows: Vec<(&SyncFlowSpec, Nanos)> = sc
            .sync_flows
            .iter()
            .filter_map(|d| delay_of(&d.name).map(|ns| (&specs[&d.name], ns)))
            .collect();
        let schedule = match build_network_schedule(sc.period_ns(), &flows, &all_ports) {
            Ok(s) => Some(s),
            Err(e) => {
                rows.push(BoundTableRow {
                    flow: "*".into(),
                    config: cfg.label.clone(),
                    bound_ns: None,
                    note: e.to_string(),
                });
                None
            }
        };
        for def in &sc.sync_flows {
            match delay_of(&def.name) {
                Some(delay_ns) => rows.push(BoundTableRow {
                    flow: def.name.clone(),
                    config: cfg.label.clone(),
                    bound_ns: Some(sync_latency_ns(&specs[&def.name], delay_ns)),
                    note: String::new(),
                }),
                None => {
                    let active = def.active_from_us < reign_end_us && def.active_until_us > cfg.at_us;
                    if active {
                        rows.push(BoundTableRow {
                            flow: def.name.clone(),
                            config: cfg.label.clone(),
                            bound_ns: None,
                            note: "MissingSlot".into(),
                        });
                    }
                }
            }
        }
        if let Some(schedule) = &schedule {
            for def in &sc.async_flows {
                let path = topo.shortest_path(&def.source, &def.dest).expect("endpoints connected");
                let mut ports = Vec::new();
                let mut n_switches = 0u32;
                let mut own_trans = 0;
                for pair in path.windows(2) {
                    if topo.node_kind(&pair[0]) == Some(NodeKind::Switch) {
                        n_switches += 1;
                        let p = (pair[0].clone(), topo.port_toward(&pair[0], &pair[1]).expect("adjacent"));
                        if all_ports.contains(&p) {
                            ports.push(p);
                        }
                    }
                }
                for l in &sc.links {
                    own_trans = own_trans.max(wire_time_ns(def.wire_bytes, l.bandwidth_bps));
                }
                let t_mi = schedule.t_mi_max_ns(ports.iter(), def.pcp);
                rows.push(BoundTableRow {
                    flow: def.name.clone(),
                    config: cfg.label.clone(),
                    bound_ns: Some(async_bound_ns(
                        t_mi,
                        (path.len() - 1) as u32,
                        n_switches,
                        own_trans,
                    )),
                    note: String::new(),
                });
            }
        }
    }
    rows
}

fn cmd_bounds(a: &BoundsArgs) -> Result<(), CliError> {
    let sc = load_scenario(&a.scenario).map_err(input)?;
    let rows = analytic_bound_rows(&sc);
    println!("{:<12} {:<8} {:>12}  note", "flow", "config", "bound_us");
    for r in &rows {
        let bound = r.bound_ns.map(format_us).unwrap_or_else(|| "-".into());
        println!("{:<12} {:<8} {:>12}  {}", r.flow, r.config, bound, r.note);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Simulate
// ---------------------------------------------------------------------------

fn create_out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| input(format!("cannot create {}: {e}", dir.display())))
}

fn out_file(dir: &Path, name: &str) -> Result<BufWriter<fs::File>, CliError> {
    let path = dir.join(name);
    let f = fs::File::create(&path)
        .map_err(|e| input(format!("cannot write {}: {e}", path.display())))?;
    Ok(BufWriter::new(f))
}

fn write_trace_csv(w: &mut impl Write, runs: &[RunOutput]) -> std::io::Result<()> {
    writeln!(w, "seed,t_us,node,port,action,frame_id,cf_id,pcp,wire_bytes,detail")?;
    for run in runs {
        for r in run.trace.records() {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                run.seed,
                format_us(r.t_ns),
                r.node,
                r.port.map(|p| p.to_string()).unwrap_or_default(),
                r.action.as_str(),
                r.frame_id,
                r.cf_id.map(|c| c.to_string()).unwrap_or_default(),
                r.pcp,
                r.wire_bytes,
                r.detail
            )?;
        }
    }
    Ok(())
}

fn write_latency_csv(w: &mut impl Write, runs: &[RunOutput]) -> std::io::Result<()> {
    writeln!(w, "seed,flow,frame_id,emit_us,recv_us,latency_us")?;
    for run in runs {
        for l in &run.latencies {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                run.seed,
                l.flow,
                l.frame_id,
                format_us(l.emit_ns),
                format_us(l.recv_ns),
                format_us(l.latency_ns())
            )?;
        }
    }
    Ok(())
}

/// Analytic bounds joined with the largest measured latency per flow and
/// configuration, aggregated across all runs. Under static gate control
/// the whole run counts toward the installed configuration.
fn measured_bound_rows(sc: &Scenario, runs: &[RunOutput]) -> Vec<BoundRow> {
    let analytic = analytic_bound_rows(sc);
    let mut measured: BTreeMap<(String, String), Nanos> = BTreeMap::new();
    for run in runs {
        let static_label = match run.variant {
            Variant::Tssdn => None,
            _ => sc.tsn_static_config.clone(),
        };
        for span in run.spans.iter().filter(|s| !s.transition) {
            let label = match (&static_label, span.label.as_str()) {
                (Some(l), "boot") => l.clone(),
                _ => span.label.clone(),
            };
            for row in &analytic {
                if row.config != label || row.bound_ns.is_none() {
                    continue;
                }
                if let Some(m) = flow_max_latency(run, &row.flow, span.from_ns, span.to_ns) {
                    let e = measured.entry((row.flow.clone(), row.config.clone())).or_insert(0);
                    *e = (*e).max(m);
                }
            }
        }
    }
    analytic
        .iter()
        .filter_map(|r| {
            let bound_ns = r.bound_ns?;
            let measured_max_ns = *measured.get(&(r.flow.clone(), r.config.clone()))?;
            Some(BoundRow {
                flow: r.flow.clone(),
                config: r.config.clone(),
                bound_ns,
                measured_max_ns,
            })
        })
        .collect()
}

fn cmd_simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let sc = load_scenario(&a.scenario).map_err(input)?;
    let seeds: Vec<u64> = match a.seeds {
        Some(n) => (0..n).collect(),
        None => vec![a.seed],
    };
    let variant = a.variant.to_variant();
    if variant.uses_controller() && sc.controller.is_none() {
        return Err(input("variant needs a controller node in the scenario"));
    }
    let strategy = a.update.to_strategy();
    // Independent kernels per seed; the merge below follows seed order.
    let runs: Vec<RunOutput> = seeds
        .par_iter()
        .map(|&seed| run_scenario(&sc, &RunSpec { variant, strategy, seed }))
        .collect();
    if verbose() {
        for r in &runs {
            eprintln!(
                "seed {}: {} deliveries, {} latency samples",
                r.seed,
                r.deliveries.len(),
                r.latencies.len()
            );
        }
    }
    create_out_dir(&a.out)?;
    let mut w = out_file(&a.out, "trace.csv")?;
    write_trace_csv(&mut w, &runs).map_err(input)?;
    let mut w = out_file(&a.out, "latency.csv")?;
    write_latency_csv(&mut w, &runs).map_err(input)?;
    let mut w = out_file(&a.out, "bounds.csv")?;
    write_bound_report(&mut w, &measured_bound_rows(&sc, &runs)).map_err(input)?;
    for r in &runs {
        for (label, ok) in &r.schedule_checks {
            if !ok {
                return Err(CliError::Runtime(format!(
                    "schedule for configuration {label} failed validation (seed {})",
                    r.seed
                )));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Separation
// ---------------------------------------------------------------------------

fn cmd_separation(a: &SeparationArgs) -> Result<(), CliError> {
    let matrix = parse_comm_matrix(&a.matrix).map_err(input)?;
    let consts = EmbedConsts::default();
    let strategies = a.strategy.selected();

    let mut metrics = Vec::new();
    let mut classifications = Vec::new();
    let mut aggregations: Vec<(EmbeddingStrategy, u64, AggregationReport)> = Vec::new();
    for &s in &strategies {
        let nfs = derive_network_flows(&matrix, s, &consts);
        metrics.push((s, separation_metrics(&nfs)));
        classifications.push((s, classify_paths(&matrix, &nfs)));
        aggregations.push((s, 0, aggregation_model(&matrix, 0, s, &consts).map_err(input)?));
        if s != EmbeddingStrategy::ExposedPerMessage {
            aggregations.push((
                s,
                AGG_INTERVAL_US,
                aggregation_model(&matrix, AGG_INTERVAL_US, s, &consts).map_err(input)?,
            ));
        }
    }

    create_out_dir(&a.out)?;
    let metric_rows: Vec<_> = metrics.iter().map(|(s, m)| (*s, m)).collect();
    let mut w = out_file(&a.out, "separation.csv")?;
    write_separation_report(&mut w, &metric_rows).map_err(input)?;
    let class_rows: Vec<_> = classifications.iter().map(|(s, c)| (*s, c)).collect();
    let mut w = out_file(&a.out, "classification.csv")?;
    write_classification_csv(&mut w, &class_rows).map_err(input)?;
    let mut w = out_file(&a.out, "histogram.csv")?;
    write_histogram_csv(&mut w, &metric_rows).map_err(input)?;
    let agg_rows: Vec<_> = aggregations.iter().map(|(s, i, r)| (*s, *i, r)).collect();
    let mut w = out_file(&a.out, "aggregation.csv")?;
    write_aggregation_csv(&mut w, &agg_rows).map_err(input)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Attack
// ---------------------------------------------------------------------------

/// Remove every allowance keyed on the address-resolution ethertype.
fn strip_arp_allowance(acl: &mut Acl) {
    acl.rules.retain(|r| {
        !(r.verdict == Verdict::Allow
            && r.conditions.iter().any(|c| matches!(c, AclCond::Ethertype(e) if *e == ARP_ETHERTYPE)))
    });
}

fn cmd_attack(a: &AttackArgs) -> Result<(), CliError> {
    let mut base = load_scenario(&a.scenario).map_err(input)?;
    if a.arp == ArpArg::Deny {
        strip_arp_allowance(&mut base.acl);
    }
    if !base.nodes.iter().any(|n| n.name == a.attacker) {
        return Err(input(format!("attacker node `{}` not in scenario", a.attacker)));
    }
    let needs_target = matches!(a.attack, AttackArg::PortScan | AttackArg::SynFlood);
    if needs_target && !base.nodes.iter().any(|n| n.name == a.target) {
        return Err(input(format!("target node `{}` not in scenario", a.target)));
    }
    let kind = match a.attack {
        AttackArg::HostScan => AttackKind::HostScan,
        AttackArg::PortScan => AttackKind::PortScan { target: a.target.clone() },
        AttackArg::SynFlood => AttackKind::SynFlood { target: a.target.clone(), count: a.count },
        AttackArg::Replay => {
            let path = a
                .trace
                .as_ref()
                .ok_or_else(|| CliError::Usage("replay requires --trace".into()))?;
            let embedding = a
                .embedding
                .ok_or_else(|| CliError::Usage("replay requires --embedding".into()))?
                .to_strategy();
            let f = fs::File::open(path)
                .map_err(|e| input(format!("cannot read {}: {e}", path.display())))?;
            let records = parse_replay_trace(f).map_err(input)?;
            AttackKind::Replay { records, embedding }
        }
    };
    let scenario = AttackScenario {
        base,
        attacker: a.attacker.clone(),
        kind,
        access_control: match a.acl {
            AclArg::On => AccessControl::On,
            AclArg::Off => AccessControl::Off,
        },
        multicast_policy: match a.policy {
            PolicyArg::DropUnknown => MulticastPolicy::DropUnknown,
            PolicyArg::BroadcastUnknown => MulticastPolicy::BroadcastUnknown,
        },
    };
    let report = run_attack(&scenario);
    if verbose() {
        eprintln!(
            "{}: sent {}, to controller {}",
            report.kind, report.sent, report.to_controller
        );
    }
    create_out_dir(&a.out)?;
    let mut w = out_file(&a.out, "attack_report.csv")?;
    write_attack_report(&mut w, &report).map_err(input)?;
    Ok(())
}
