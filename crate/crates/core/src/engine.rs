//! Scenario definition and the event-driven run loop tying the other
//! modules together: hosts emitting scheduled, reserved, and best-effort
//! traffic; switches with ingress filters, flow tables, gates, and shapers;
//! and the controller's wire protocol for reactive installs, stream
//! reservation, and schedule transitions.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::bounds::{
    build_network_schedule, validate_schedule, PortKey, SyncFlowSpec, GUARD_NS,
};
use crate::controller::{
    fallback_to_controller_rule, srp_to_controller_rule, Acl, AdmissionPlan, Controller,
    PacketInDecision, StreamRequest, ARP_ETHERTYPE, CONFIG_ETHERTYPE, CONTROL_WIRE_BYTES,
    PRIO_SYNC, PRIO_TUNNEL, SRP_ETHERTYPE,
};
use crate::dataplane::{
    ingress_check, Action, EgressPort, FlowRule, GateControlList, HeaderPattern, IngressEntry,
    IngressFilter, IngressVerdict, SRTable, SRTableEntry, ScheduledSender, TableKind,
};
use crate::desim::{
    run_until, Event, EventKind, EventPayload, EventTrace, Kernel, Nanos, Simulation, TraceAction,
    TraceRecord, NS_PER_US,
};
use crate::netmodel::{
    host_ip, host_mac, ifg_ns, wire_time_ns, Frame, HeaderTuple, NodeKind, Topology,
};
use crate::txnsched::{
    plan_transition, sync_commit_time, Strategy, TransitionPlan, TxnLog, TxnLogRow, TxnPhase,
};

/// Ethertype of scheduled (time-triggered) data frames.
pub const SYNC_ETHERTYPE: u16 = 0x88B7;
/// Ethertype of the one-shot boot broadcasts that seed address learning.
pub const PRESENCE_ETHERTYPE: u16 = 0x88B8;
/// The all-ones broadcast address.
pub const BROADCAST_MAC: u64 = 0xFFFF_FFFF_FFFF;
/// Host-side service turnaround before a reply frame is queued.
pub const RESPONDER_DELAY_NS: Nanos = 1_000;
/// Half-width of the ingress acceptance window around the expected arrival.
pub const INGRESS_SLACK_NS: Nanos = 2_000;
/// Pseudo ingress port used when the controller re-injects a held frame.
pub const REINJECT_PORT: u32 = u32::MAX;

// ---------------------------------------------------------------------------
// Scenario definition
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeDef {
    pub name: String,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkDef {
    pub a: String,
    pub b: String,
    pub bandwidth_bps: u64,
    pub forwarding_delay_ns: Nanos,
}

/// One time-triggered stream: fixed emission phase, fixed size, fixed
/// window, active over a sub-interval of the run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyncFlowDef {
    pub name: String,
    pub cf_id: u32,
    pub source: String,
    pub dest: String,
    pub pcp: u8,
    pub wire_bytes: u32,
    pub phase_us: u64,
    pub frames_per_period: u32,
    pub active_from_us: u64,
    pub active_until_us: u64,
}

/// One rate-reserved stream, started by a reservation handshake.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AsyncFlowDef {
    pub name: String,
    pub stream_id: u32,
    pub source: String,
    pub dest: String,
    pub pcp: u8,
    pub wire_bytes: u32,
    pub period_us: u64,
    pub reserved_bps: u64,
    pub until_us: u64,
    pub src_port: u16,
    pub dst_port: u16,
}

/// One best-effort stream with seed-dependent frame sizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BeFlowDef {
    pub name: String,
    pub source: String,
    pub dest: String,
    pub period_us: u64,
    pub start_us: u64,
    pub src_port: u16,
    pub dst_port: u16,
}

/// A named slot configuration applied at a point in time: first-hop window
/// delays (in microseconds) per sync flow name. Flows absent from the map
/// have no window in that configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigDef {
    pub label: String,
    pub at_us: u64,
    pub delays: Vec<(String, u64)>,
}

/// Transaction pacing: how far ahead of a configuration's nominal time the
/// controller starts, and the per-device apply delay of ordered commits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxnTiming {
    pub sync_lead_us: u64,
    pub sync_margin_us: u64,
    pub ordered_lead_us: u64,
    pub split_lead_us: u64,
    pub commit_exec_us: u64,
}

impl Default for TxnTiming {
    fn default() -> Self {
        Self {
            sync_lead_us: 3_500,
            sync_margin_us: 3_000,
            // Lands the second device's apply inside the old downstream
            // service phase, so a frame queued across the skew departs under
            // the old gates and the queue is empty when steady state resumes.
            ordered_lead_us: 7_300,
            split_lead_us: 12_000,
            commit_exec_us: 2_500,
        }
    }
}

/// When a reserved stream announces itself. The per-seed step staggers the
/// announcement across a sweep without touching anything else.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SrDef {
    pub flow: String,
    pub at_us: u64,
    pub step_us: u64,
}

/// A host that answers address-resolution and transport probes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceDef {
    pub node: String,
    pub arp: bool,
    pub tcp_ports: Vec<u16>,
    pub udp_ports: Vec<u16>,
}

/// A raw frame emitted from a node at a fixed time (attack traffic).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InjectionDef {
    pub node: String,
    pub at_ns: Nanos,
    pub headers: HeaderTuple,
    pub wire_bytes: u32,
    pub tag: String,
}

/// A statically provisioned multicast tunnel: matched traffic from the
/// source host is forwarded along the tree toward every destination host.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TunnelDef {
    pub source: String,
    pub headers: HeaderTuple,
    pub dests: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub name: String,
    pub period_us: u64,
    pub nodes: Vec<NodeDef>,
    pub links: Vec<LinkDef>,
    pub controller: Option<String>,
    pub sync_flows: Vec<SyncFlowDef>,
    pub async_flows: Vec<AsyncFlowDef>,
    pub be_flows: Vec<BeFlowDef>,
    pub configs: Vec<ConfigDef>,
    pub txn: TxnTiming,
    pub reservations: Vec<SrDef>,
    /// Configuration label whose gate lists are installed at boot when the
    /// run uses static gate control.
    pub tsn_static_config: Option<String>,
    pub acl: Acl,
    pub services: Vec<ServiceDef>,
    pub injections: Vec<InjectionDef>,
    /// (host, group MAC) registrations consulted by the registered-members
    /// multicast policy.
    pub group_members: Vec<(String, u64)>,
    pub tunnels: Vec<TunnelDef>,
    /// (transaction label, device) pairs whose prepare step fails.
    pub faults: Vec<(String, String)>,
    pub t_end_us: u64,
}

impl Scenario {
    pub fn empty(name: &str) -> Self {
        Self {
            name: name.to_string(),
            period_us: 1_000,
            nodes: Vec::new(),
            links: Vec::new(),
            controller: None,
            sync_flows: Vec::new(),
            async_flows: Vec::new(),
            be_flows: Vec::new(),
            configs: Vec::new(),
            txn: TxnTiming::default(),
            reservations: Vec::new(),
            tsn_static_config: None,
            acl: Acl::allow_all(),
            services: Vec::new(),
            injections: Vec::new(),
            group_members: Vec::new(),
            tunnels: Vec::new(),
            faults: Vec::new(),
            t_end_us: 1_000_000,
        }
    }

    pub fn period_ns(&self) -> Nanos {
        self.period_us * NS_PER_US
    }

    pub fn t_end_ns(&self) -> Nanos {
        self.t_end_us * NS_PER_US
    }

    fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Structural checks run before a simulation is built; the returned
    /// message names the first offending element.
    pub fn validate(&self) -> Result<(), String> {
        let mut names = BTreeSet::new();
        for n in &self.nodes {
            if !names.insert(n.name.as_str()) {
                return Err(format!("duplicate node {}", n.name));
            }
        }
        for l in &self.links {
            for end in [&l.a, &l.b] {
                if self.node_index(end).is_none() {
                    return Err(format!("link endpoint {end} is not a node"));
                }
            }
            if l.bandwidth_bps == 0 {
                return Err(format!("link {}-{} has zero bandwidth", l.a, l.b));
            }
        }
        if let Some(c) = &self.controller {
            if self.node_index(c).is_none() {
                return Err(format!("controller {c} is not a node"));
            }
        }
        let mut flow_names = BTreeSet::new();
        for f in &self.sync_flows {
            if !flow_names.insert(f.name.as_str()) {
                return Err(format!("duplicate flow name {}", f.name));
            }
            for end in [&f.source, &f.dest] {
                if self.node_index(end).is_none() {
                    return Err(format!("flow {} endpoint {end} is not a node", f.name));
                }
            }
            if f.pcp > 7 {
                return Err(format!("flow {} pcp {} out of range", f.name, f.pcp));
            }
        }
        for f in &self.async_flows {
            if !flow_names.insert(f.name.as_str()) {
                return Err(format!("duplicate flow name {}", f.name));
            }
            for end in [&f.source, &f.dest] {
                if self.node_index(end).is_none() {
                    return Err(format!("flow {} endpoint {end} is not a node", f.name));
                }
            }
        }
        for f in &self.be_flows {
            if !flow_names.insert(f.name.as_str()) {
                return Err(format!("duplicate flow name {}", f.name));
            }
            for end in [&f.source, &f.dest] {
                if self.node_index(end).is_none() {
                    return Err(format!("flow {} endpoint {end} is not a node", f.name));
                }
            }
        }
        let mut prev_at = 0;
        for c in &self.configs {
            if c.at_us < prev_at {
                return Err(format!("config {} out of time order", c.label));
            }
            prev_at = c.at_us;
            for (flow, _) in &c.delays {
                if !self.sync_flows.iter().any(|f| &f.name == flow) {
                    return Err(format!("config {} names unknown flow {flow}", c.label));
                }
            }
        }
        if let Some(label) = &self.tsn_static_config {
            if !self.configs.iter().any(|c| &c.label == label) {
                return Err(format!("static config {label} is not defined"));
            }
        }
        for r in &self.reservations {
            if !self.async_flows.iter().any(|f| f.name == r.flow) {
                return Err(format!("reservation names unknown flow {}", r.flow));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Run variants
// ---------------------------------------------------------------------------

/// How a switch treats multicast frames it has no installed state for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MulticastPolicy {
    /// Deliver to registered member ports only; unknown groups are dropped.
    DropUnknown,
    /// Flood every multicast frame, ignoring registrations.
    BroadcastUnknown,
}

impl MulticastPolicy {
    pub fn as_str(&self) -> &'static str {
        match self {
            MulticastPolicy::DropUnknown => "drop-unknown",
            MulticastPolicy::BroadcastUnknown => "broadcast-unknown",
        }
    }
}

/// The network build under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Centrally controlled: static tables at boot, reactive installs,
    /// schedule transitions over the control channel.
    Tssdn,
    /// No controller; address learning, distributed reservation, and
    /// optionally a static gate schedule installed at boot.
    Tsn { gate_control: bool },
    /// Plain learning switches, no gates; multicast per policy.
    Conventional { policy: MulticastPolicy },
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Tssdn => "tssdn",
            Variant::Tsn { gate_control: true } => "tsn",
            Variant::Tsn { gate_control: false } => "tsn-nogate",
            Variant::Conventional { .. } => "conventional",
        }
    }

    pub fn uses_controller(&self) -> bool {
        matches!(self, Variant::Tssdn)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSpec {
    pub variant: Variant,
    pub strategy: Strategy,
    pub seed: u64,
}

// ---------------------------------------------------------------------------
// Run output
// ---------------------------------------------------------------------------

/// One measured frame: emission at the source, delivery at the sink.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowLatency {
    pub flow: String,
    pub frame_id: u64,
    pub emit_ns: Nanos,
    pub recv_ns: Nanos,
}

impl FlowLatency {
    pub fn latency_ns(&self) -> Nanos {
        self.recv_ns - self.emit_ns
    }
}

/// A frame delivered to a host, with its arrival time.
#[derive(Debug, Clone)]
pub struct Delivery {
    pub t_ns: Nanos,
    pub node: String,
    pub frame: Frame,
}

/// One stretch of the run under a single configuration, or the transition
/// between two.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigSpan {
    pub label: String,
    pub from_ns: Nanos,
    pub to_ns: Nanos,
    pub transition: bool,
}

#[derive(Debug)]
pub struct RunOutput {
    pub scenario: String,
    pub variant: Variant,
    pub strategy: Strategy,
    pub seed: u64,
    pub trace: EventTrace,
    pub deliveries: Vec<Delivery>,
    pub latencies: Vec<FlowLatency>,
    /// Reservation handshake duration per async flow name.
    pub sr_durations: BTreeMap<String, Nanos>,
    pub txn_log: TxnLog,
    pub spans: Vec<ConfigSpan>,
    /// Per configuration label: whether its built schedule validated.
    pub schedule_checks: Vec<(String, bool)>,
    /// Frame ids of every packet-in examined by the controller.
    pub packet_ins: Vec<u64>,
    /// Frame id assigned to each scenario injection, in definition order.
    pub injection_frame_ids: Vec<u64>,
    pub final_gcls: BTreeMap<PortKey, GateControlList>,
    /// Frames still queued on any port at the end of the run.
    pub final_queued: usize,
}

/// Largest latency of `flow` among frames emitted in `[from_ns, to_ns)`.
pub fn flow_max_latency(
    out: &RunOutput,
    flow: &str,
    from_ns: Nanos,
    to_ns: Nanos,
) -> Option<Nanos> {
    out.latencies
        .iter()
        .filter(|l| l.flow == flow && l.emit_ns >= from_ns && l.emit_ns < to_ns)
        .map(FlowLatency::latency_ns)
        .max()
}

/// All latencies of `flow` in emission order.
pub fn flow_latencies<'a>(out: &'a RunOutput, flow: &str) -> Vec<&'a FlowLatency> {
    out.latencies.iter().filter(|l| l.flow == flow).collect()
}

// ---------------------------------------------------------------------------
// Events and control messages
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum Ev {
    SyncEmit { flow: usize },
    AsyncEmit { flow: usize },
    BeEmit { flow: usize },
    PresenceEmit { node: usize },
    Inject { idx: usize },
    SrKickoff { res: usize },
    Arrival { node: usize, in_port: u32, frame: Frame },
    Forwarded { node: usize, port: u32, frame: Frame },
    TxDone { node: usize, port: u32, frame: Frame },
    Wake { node: usize, port: u32 },
    GateApply { node: usize, txn: String, ack_after: bool },
    TxnKickoff { cfg: usize },
    TxnFinish { txn: String },
}

impl EventPayload for Ev {
    fn kind(&self) -> EventKind {
        match self {
            Ev::SyncEmit { .. }
            | Ev::AsyncEmit { .. }
            | Ev::BeEmit { .. }
            | Ev::PresenceEmit { .. }
            | Ev::Inject { .. }
            | Ev::SrKickoff { .. }
            | Ev::Wake { .. } => EventKind::TimerFire,
            Ev::Arrival { .. } | Ev::Forwarded { .. } => EventKind::FrameArrival,
            Ev::TxDone { .. } => EventKind::TransmissionComplete,
            Ev::GateApply { .. } => EventKind::GateChange,
            Ev::TxnKickoff { .. } | Ev::TxnFinish { .. } => EventKind::ControlMessage,
        }
    }
}

/// Payload of a control-plane frame, keyed by the frame id. Control frames
/// occupy real link capacity; their content rides in this side table.
#[derive(Debug, Clone)]
enum CtrlMsg {
    PacketIn { switch: usize, in_port: u32, inner: Frame },
    PacketOut { out_port: Option<u32>, inner: Frame },
    FlowMod { rules: Vec<FlowRule>, sr: Option<(u32, SRTableEntry, u64, u8)>, token: u64 },
    FlowModAck { token: u64 },
    Lock { txn: String },
    LockAck { txn: String },
    Prepare { txn: String, gcls: BTreeMap<u32, GateControlList> },
    PrepareAck { txn: String, ok: bool },
    Commit { txn: String, at: Option<Nanos> },
    CommitAck { txn: String },
    Rollback { txn: String },
    Release { txn: String },
    TalkerAdvertise { stream: u32, talker: usize },
    ListenerReady { stream: u32 },
}

// ---------------------------------------------------------------------------
// Per-node and controller state
// ---------------------------------------------------------------------------

struct PortSt {
    port: EgressPort,
    peer: usize,
    peer_port: u32,
    fwd_ns: Nanos,
}

struct NodeSt {
    name: String,
    kind: NodeKind,
    ports: BTreeMap<u32, PortSt>,
    tables: crate::dataplane::FlowTables,
    sr: SRTable,
    ingress: IngressFilter,
    mac_table: BTreeMap<u64, u32>,
    /// Candidate gate lists staged by a prepare, keyed by transaction.
    staged: BTreeMap<String, BTreeMap<u32, GateControlList>>,
    service: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TxPhase {
    Locking,
    Preparing,
    Committing,
}

struct TxnExec {
    plan: TransitionPlan,
    sub: usize,
    phase: TxPhase,
    pending: BTreeSet<String>,
    ordered_pos: usize,
    failed: bool,
}

enum AfterAcks {
    Reinject { switch: usize, frame: Frame },
    SrComplete { stream: u32 },
}

struct PendingInstall {
    remaining: BTreeSet<String>,
    then: AfterAcks,
}

struct CtlSt {
    inner: Controller,
    node: usize,
    current_delays: BTreeMap<u32, Nanos>,
    active: Option<TxnExec>,
    next_token: u64,
    pending_installs: BTreeMap<u64, PendingInstall>,
}

// ---------------------------------------------------------------------------
// The simulation world
// ---------------------------------------------------------------------------

struct EmitInfo {
    flow: String,
    t_ns: Nanos,
    dest: usize,
}

struct World {
    kernel: Kernel<Ev>,
    sc: Scenario,
    spec: RunSpec,
    topo: Topology,
    nodes: Vec<NodeSt>,
    node_idx: BTreeMap<String, usize>,
    /// Index of each node in the scenario's full node list; MAC and IP
    /// assignment keys on this so identities match across variants.
    scen_idx: Vec<usize>,
    trace: EventTrace,
    deliveries: Vec<Delivery>,
    latencies: Vec<FlowLatency>,
    emits: BTreeMap<u64, EmitInfo>,
    msgs: BTreeMap<u64, CtrlMsg>,
    next_frame_id: u64,
    ctl: Option<CtlSt>,
    senders: Vec<ScheduledSender>,
    sync_specs: Vec<SyncFlowSpec>,
    be_rngs: Vec<ChaCha8Rng>,
    schedule_checks: Vec<(String, bool)>,
    all_ports: Vec<PortKey>,
    faults: BTreeSet<(String, String)>,
    groups: BTreeMap<usize, BTreeMap<u64, BTreeSet<u32>>>,
    packet_ins: Vec<u64>,
    injection_frame_ids: Vec<u64>,
    sr_start: BTreeMap<u32, Nanos>,
    sr_durations: BTreeMap<String, Nanos>,
    txn_log: TxnLog,
}

impl Simulation for World {
    type P = Ev;

    fn kernel_mut(&mut self) -> &mut Kernel<Ev> {
        &mut self.kernel
    }

    fn handle(&mut self, ev: Event<Ev>) {
        match ev.payload {
            Ev::SyncEmit { flow } => self.on_sync_emit(flow),
            Ev::AsyncEmit { flow } => self.on_async_emit(flow),
            Ev::BeEmit { flow } => self.on_be_emit(flow),
            Ev::PresenceEmit { node } => self.on_presence(node),
            Ev::Inject { idx } => self.on_inject(idx),
            Ev::SrKickoff { res } => self.on_sr_kickoff(res),
            Ev::Arrival { node, in_port, frame } => self.on_arrival(node, in_port, frame),
            Ev::Forwarded { node, port, frame } => self.on_forwarded(node, port, frame),
            Ev::TxDone { node, port, frame } => self.on_tx_done(node, port, frame),
            Ev::Wake { node, port } => self.try_start(node, port),
            Ev::GateApply { node, txn, ack_after } => self.on_gate_apply(node, &txn, ack_after),
            Ev::TxnKickoff { cfg } => self.on_txn_kickoff(cfg),
            Ev::TxnFinish { txn } => self.on_txn_finish(&txn),
        }
    }
}

impl World {
    // -- construction -------------------------------------------------------

    fn new(sc: &Scenario, spec: &RunSpec) -> Self {
        sc.validate().expect("scenario validates");
        let include_ctrl = spec.variant.uses_controller();
        if include_ctrl {
            assert!(sc.controller.is_some(), "variant needs a controller node");
        }

        // Build the topology, leaving out the controller and its links for
        // variants that run without one. Controller links are declared last
        // so port numbering is unchanged by the omission.
        let mut topo = Topology::new();
        let mut scen_idx = Vec::new();
        for (i, n) in sc.nodes.iter().enumerate() {
            if !include_ctrl && Some(&n.name) == sc.controller.as_ref() {
                continue;
            }
            topo.add_node(&n.name, n.kind);
            scen_idx.push(i);
        }
        for l in &sc.links {
            if !include_ctrl
                && (Some(&l.a) == sc.controller.as_ref() || Some(&l.b) == sc.controller.as_ref())
            {
                continue;
            }
            topo.add_link(&l.a, &l.b, l.bandwidth_bps, l.forwarding_delay_ns);
        }
        topo.validate().expect("topology validates");

        let node_idx: BTreeMap<String, usize> =
            topo.nodes.iter().enumerate().map(|(i, n)| (n.name.clone(), i)).collect();
        let period_ns = sc.period_ns();

        // Sync flow specs: path hops through switches, in path order.
        let mut sync_specs = Vec::new();
        for def in &sc.sync_flows {
            let path = topo
                .shortest_path(&def.source, &def.dest)
                .expect("sync flow endpoints are connected");
            let mut hops = Vec::new();
            for pair in path.windows(2) {
                if topo.node_kind(&pair[0]) == Some(NodeKind::Switch) {
                    let out = topo.port_toward(&pair[0], &pair[1]).expect("adjacent");
                    hops.push((pair[0].clone(), out));
                }
            }
            sync_specs.push(SyncFlowSpec {
                cf_id: def.cf_id,
                source: def.source.clone(),
                pcp: def.pcp,
                wire_bytes: def.wire_bytes,
                phase_ns: def.phase_us * NS_PER_US,
                frames_per_period: def.frames_per_period,
                hops,
            });
        }
        let mut all_ports: Vec<PortKey> = Vec::new();
        for s in &sync_specs {
            for h in &s.hops {
                if !all_ports.contains(h) {
                    all_ports.push(h.clone());
                }
            }
        }
        all_ports.sort();

        // Every configuration's schedule, built and checked up front.
        let mut schedules = BTreeMap::new();
        let mut schedule_checks = Vec::new();
        for cfg in &sc.configs {
            let delays = config_delays(sc, cfg);
            let flows: Vec<(&SyncFlowSpec, Nanos)> = sync_specs
                .iter()
                .filter_map(|s| delays.get(&s.cf_id).map(|d| (s, *d)))
                .collect();
            match build_network_schedule(period_ns, &flows, &all_ports) {
                Ok(schedule) => {
                    let ok = validate_schedule(&schedule).is_ok();
                    schedule_checks.push((cfg.label.clone(), ok));
                    schedules.insert(cfg.label.clone(), schedule);
                }
                Err(_) => schedule_checks.push((cfg.label.clone(), false)),
            }
        }

        // Per-node state: ports with bandwidth and gate lists.
        let senders: Vec<ScheduledSender> = sc
            .sync_flows
            .iter()
            .map(|def| ScheduledSender {
                name: def.name.clone(),
                cf_id: Some(def.cf_id),
                pcp: def.pcp,
                wire_bytes: def.wire_bytes,
                phase_ns: def.phase_us * NS_PER_US,
                period_ns,
                frames_per_period: def.frames_per_period,
                frame_gap_ns: GUARD_NS,
                active_from_ns: def.active_from_us * NS_PER_US,
                active_until_ns: def.active_until_us * NS_PER_US,
            })
            .collect();

        let static_schedule = match spec.variant {
            Variant::Tsn { gate_control: true } => {
                let label = sc
                    .tsn_static_config
                    .as_ref()
                    .expect("static gate control needs tsn_static_config");
                Some(schedules.get(label).expect("static config schedule built").clone())
            }
            _ => None,
        };
        let gates_enabled = !matches!(spec.variant, Variant::Tsn { gate_control: false })
            && !matches!(spec.variant, Variant::Conventional { .. });

        let mut nodes = Vec::new();
        for node in &topo.nodes {
            let mut ports = BTreeMap::new();
            for (pn, peer, li) in topo.ports(&node.name) {
                let link = &topo.links[li];
                let key = (node.name.clone(), pn);
                let gcl = if let Some(sched) = &static_schedule {
                    sched.gcls.get(&key).cloned().unwrap_or_else(|| GateControlList::all_open(period_ns))
                } else {
                    GateControlList::all_open(period_ns)
                };
                let gcl = if node.kind == NodeKind::Host && gates_enabled {
                    // A sync source guards its own window on its uplink.
                    match senders.iter().find(|s| s.name_matches_source(sc, &node.name)) {
                        Some(s) => s.host_gcl(GUARD_NS),
                        None => gcl,
                    }
                } else {
                    gcl
                };
                let peer_idx = node_idx[&peer];
                let peer_port = topo.port_toward(&peer, &node.name).expect("link is two-sided");
                ports.insert(
                    pn,
                    PortSt {
                        port: EgressPort::new(gcl, link.bandwidth_bps, ifg_ns(link.bandwidth_bps)),
                        peer: peer_idx,
                        peer_port,
                        fwd_ns: link.forwarding_delay_ns,
                    },
                );
            }
            let service = sc.services.iter().position(|s| s.node == node.name);
            nodes.push(NodeSt {
                name: node.name.clone(),
                kind: node.kind,
                ports,
                tables: crate::dataplane::FlowTables::new(),
                sr: SRTable::default(),
                ingress: IngressFilter { period_ns, entries: Vec::new() },
                mac_table: BTreeMap::new(),
                staged: BTreeMap::new(),
                service,
            });
        }

        // Multicast registrations: the port toward each member host, on
        // every switch.
        let mut groups: BTreeMap<usize, BTreeMap<u64, BTreeSet<u32>>> = BTreeMap::new();
        for (host, gmac) in &sc.group_members {
            for (si, node) in topo.nodes.iter().enumerate() {
                if node.kind != NodeKind::Switch {
                    continue;
                }
                if let Some(path) = topo.shortest_path(&node.name, host) {
                    if path.len() >= 2 {
                        let port = topo.port_toward(&node.name, &path[1]).expect("adjacent");
                        groups.entry(si).or_default().entry(*gmac).or_default().insert(port);
                    }
                }
            }
        }

        let be_rngs = sc
            .be_flows
            .iter()
            .map(|f| crate::desim::rng(spec.seed, &format!("be_{}", f.source)))
            .collect();

        let ctl = if include_ctrl {
            let ctrl_name = sc.controller.clone().expect("checked above");
            let mac_hosts: BTreeMap<u64, String> = sc
                .nodes
                .iter()
                .enumerate()
                .filter(|(_, n)| n.kind == NodeKind::Host)
                .map(|(i, n)| (host_mac(i), n.name.clone()))
                .collect();
            let inner = Controller::new(topo.clone(), sc.acl.clone(), mac_hosts);
            Some(CtlSt {
                inner,
                node: node_idx[&ctrl_name],
                current_delays: BTreeMap::new(),
                active: None,
                next_token: 1,
                pending_installs: BTreeMap::new(),
            })
        } else {
            None
        };

        let mut world = World {
            kernel: Kernel::new(spec.seed),
            sc: sc.clone(),
            spec: *spec,
            topo,
            nodes,
            node_idx,
            scen_idx,
            trace: EventTrace::new(),
            deliveries: Vec::new(),
            latencies: Vec::new(),
            emits: BTreeMap::new(),
            msgs: BTreeMap::new(),
            next_frame_id: 1,
            ctl,
            senders,
            sync_specs,
            be_rngs,
            schedule_checks,
            all_ports,
            faults: sc.faults.iter().cloned().collect(),
            groups,
            packet_ins: Vec::new(),
            injection_frame_ids: Vec::new(),
            sr_start: BTreeMap::new(),
            sr_durations: BTreeMap::new(),
            txn_log: TxnLog::new(),
        };
        world.boot();
        world
    }

    fn boot(&mut self) {
        if self.spec.variant == Variant::Tssdn {
            self.install_static_state();
            for (ci, cfg) in self.sc.configs.iter().enumerate() {
                let lead_us = match self.spec.strategy {
                    Strategy::SyncCommit => self.sc.txn.sync_lead_us,
                    Strategy::Ordered => self.sc.txn.ordered_lead_us,
                    Strategy::Split => self.sc.txn.split_lead_us,
                };
                let at = (cfg.at_us * NS_PER_US).saturating_sub(lead_us * NS_PER_US);
                self.kernel.schedule_at(at, Ev::TxnKickoff { cfg: ci }).expect("boot is t=0");
            }
        }

        // Learning variants announce every host once so unicast paths are
        // known before data traffic starts.
        if !matches!(self.spec.variant, Variant::Tssdn) {
            let hosts: Vec<usize> = self
                .nodes
                .iter()
                .enumerate()
                .filter(|(_, n)| n.kind == NodeKind::Host)
                .map(|(i, _)| i)
                .collect();
            for (k, ni) in hosts.into_iter().enumerate() {
                let at = 1_000_000 + k as Nanos * 100_000;
                self.kernel.schedule_at(at, Ev::PresenceEmit { node: ni }).expect("boot");
            }
        }

        // First emission of each flow.
        for (fi, s) in self.senders.clone().iter().enumerate() {
            if let Some(t) = s.next_emission(0) {
                self.kernel.schedule_at(t, Ev::SyncEmit { flow: fi }).expect("boot");
            }
        }
        for (bi, def) in self.sc.be_flows.clone().iter().enumerate() {
            self.kernel
                .schedule_at(def.start_us * NS_PER_US, Ev::BeEmit { flow: bi })
                .expect("boot");
        }
        for (ri, def) in self.sc.reservations.clone().iter().enumerate() {
            let at = (def.at_us + self.spec.seed * def.step_us) * NS_PER_US;
            self.kernel.schedule_at(at, Ev::SrKickoff { res: ri }).expect("boot");
        }
        for (ii, def) in self.sc.injections.clone().iter().enumerate() {
            let id = self.alloc_frame_id();
            self.injection_frame_ids.push(id);
            self.kernel.schedule_at(def.at_ns, Ev::Inject { idx: ii }).expect("boot");
        }
    }

    /// Boot-time switch state for the controlled variant: exact forwarding
    /// rules for every scheduled stream (bound to the expected ingress
    /// port), provisioned multicast tunnels, the reservation-protocol and
    /// fallback rules, and per-stream ingress filters on first-hop
    /// switches. Static tables are sealed afterwards.
    fn install_static_state(&mut self) {
        let period_ns = self.sc.period_ns();
        for (fi, def) in self.sc.sync_flows.clone().iter().enumerate() {
            let headers = self.sync_headers(def);
            let spec = self.sync_specs[fi].clone();
            for (hi, (dev, out)) in spec.hops.iter().enumerate() {
                let prev = if hi == 0 { &def.source } else { &spec.hops[hi - 1].0 };
                let in_port = self.topo.port_toward(dev, prev).expect("adjacent");
                let ni = self.node_idx[dev];
                self.nodes[ni]
                    .tables
                    .install_static(FlowRule {
                        pattern: HeaderPattern::exact(&headers),
                        in_port: Some(in_port),
                        priority: PRIO_SYNC,
                        actions: vec![Action::ForwardTo(*out)],
                        table: TableKind::Static,
                    })
                    .expect("static tables open during boot");
            }
            // Ingress filter at the first switch: the stream's frames are
            // only accepted in a short window around their scheduled
            // arrival, and never oversized.
            let first = &spec.hops[0].0;
            let bw = link_bandwidth(&self.topo, &def.source);
            let t_trans = wire_time_ns(def.wire_bytes, bw);
            let offset =
                (spec.phase_ns + t_trans).saturating_sub(INGRESS_SLACK_NS) % period_ns;
            let len = 2 * INGRESS_SLACK_NS
                + (def.frames_per_period as Nanos - 1) * GUARD_NS;
            let ni = self.node_idx[first];
            self.nodes[ni].ingress.entries.push(IngressEntry {
                pattern: HeaderPattern::exact(&headers),
                window: Some((offset, offset + len)),
                max_frame_bytes: Some(def.wire_bytes),
            });
        }

        for tunnel in &self.sc.tunnels.clone() {
            self.install_tunnel(tunnel);
        }

        let switch_ids: Vec<usize> = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.kind == NodeKind::Switch)
            .map(|(i, _)| i)
            .collect();
        for ni in switch_ids {
            self.nodes[ni]
                .tables
                .install_static(srp_to_controller_rule())
                .expect("static tables open during boot");
            self.nodes[ni].tables.install_dynamic(fallback_to_controller_rule());
            self.nodes[ni].tables.seal();
        }
    }

    /// Static rules carrying one provisioned tunnel: at each switch on the
    /// tree, match the tunnel header with priority and DSCP wildcarded,
    /// bind the expected ingress port, and forward toward every
    /// destination still downstream.
    fn install_tunnel(&mut self, tunnel: &TunnelDef) {
        let mut pattern = HeaderPattern::exact(&tunnel.headers);
        pattern.pcp = None;
        pattern.dscp = None;
        // Per-switch forwarding set along the union of source->dest paths.
        let mut outs: BTreeMap<String, BTreeSet<u32>> = BTreeMap::new();
        for dest in &tunnel.dests {
            let path = self
                .topo
                .shortest_path(&tunnel.source, dest)
                .expect("tunnel endpoints are connected");
            for pair in path.windows(2) {
                if self.topo.node_kind(&pair[0]) == Some(NodeKind::Switch) {
                    let out = self.topo.port_toward(&pair[0], &pair[1]).expect("adjacent");
                    outs.entry(pair[0].clone()).or_default().insert(out);
                }
            }
        }
        for (dev, ports) in outs {
            let toward_src = self
                .topo
                .shortest_path(&dev, &tunnel.source)
                .expect("connected");
            let in_port = self.topo.port_toward(&dev, &toward_src[1]).expect("adjacent");
            let ni = self.node_idx[&dev];
            self.nodes[ni]
                .tables
                .install_static(FlowRule {
                    pattern: pattern.clone(),
                    in_port: Some(in_port),
                    priority: PRIO_TUNNEL,
                    actions: ports.iter().map(|p| Action::ForwardTo(*p)).collect(),
                    table: TableKind::Static,
                })
                .expect("static tables open during boot");
        }
    }

    // -- identity helpers ---------------------------------------------------

    fn node_mac(&self, node: usize) -> u64 {
        host_mac(self.scen_idx[node])
    }

    fn node_ip(&self, node: usize) -> u32 {
        host_ip(self.scen_idx[node])
    }

    fn scen_node(&self, name: &str) -> usize {
        self.node_idx[name]
    }

    fn alloc_frame_id(&mut self) -> u64 {
        let id = self.next_frame_id;
        self.next_frame_id += 1;
        id
    }

    fn sync_headers(&self, def: &SyncFlowDef) -> HeaderTuple {
        let src = self.sc.node_index(&def.source).expect("validated");
        let dst = self.sc.node_index(&def.dest).expect("validated");
        HeaderTuple::l2(host_mac(dst), host_mac(src), SYNC_ETHERTYPE, Some(1), def.pcp)
    }

    fn async_headers(&self, def: &AsyncFlowDef) -> HeaderTuple {
        let src = self.sc.node_index(&def.source).expect("validated");
        let dst = self.sc.node_index(&def.dest).expect("validated");
        HeaderTuple::l2(host_mac(dst), host_mac(src), 0x0800, Some(1), def.pcp)
            .with_ipv4(host_ip(src), host_ip(dst), 0, 17)
            .with_ports(def.src_port, def.dst_port)
    }

    fn be_headers(&self, def: &BeFlowDef) -> HeaderTuple {
        let src = self.sc.node_index(&def.source).expect("validated");
        let dst = self.sc.node_index(&def.dest).expect("validated");
        HeaderTuple::l2(host_mac(dst), host_mac(src), 0x0800, Some(1), 0)
            .with_ipv4(host_ip(src), host_ip(dst), 0, 17)
            .with_ports(def.src_port, def.dst_port)
    }

    fn record(
        &mut self,
        node: usize,
        port: Option<u32>,
        action: TraceAction,
        frame: &Frame,
        detail: &str,
    ) {
        self.trace.push(TraceRecord {
            t_ns: self.kernel.now(),
            node: self.nodes[node].name.clone(),
            port,
            action,
            frame_id: frame.frame_id,
            cf_id: frame.cf_id,
            pcp: frame.headers.pcp,
            wire_bytes: frame.wire_bytes,
            detail: detail.to_string(),
        });
    }

    // -- emission handlers --------------------------------------------------

    fn emit_from_host(&mut self, node: usize, frame: Frame, flow: Option<(&str, usize)>) {
        let now = self.kernel.now();
        if let Some((name, dest)) = flow {
            self.emits.insert(
                frame.frame_id,
                EmitInfo { flow: name.to_string(), t_ns: now, dest },
            );
        }
        let detail = flow.map(|(n, _)| n.to_string()).unwrap_or_default();
        self.record(node, Some(0), TraceAction::Enqueued, &frame, &detail);
        let port = *self.nodes[node].ports.keys().next().expect("host has a link");
        self.nodes[node].ports.get_mut(&port).expect("port").port.enqueue_egress(frame, now);
        self.try_start(node, port);
    }

    fn on_sync_emit(&mut self, flow: usize) {
        let def = self.sc.sync_flows[flow].clone();
        let headers = self.sync_headers(&def);
        let id = self.alloc_frame_id();
        let frame = Frame::new(
            headers,
            def.wire_bytes.saturating_sub(18),
            def.wire_bytes,
            id,
            Some(def.cf_id),
        )
        .expect("sync frame is well-formed");
        let node = self.scen_node(&def.source);
        let dest = self.scen_node(&def.dest);
        self.emit_from_host(node, frame, Some((&def.name, dest)));
        let next = self.senders[flow].next_emission(self.kernel.now() + 1);
        if let Some(t) = next {
            self.kernel.schedule_at(t, Ev::SyncEmit { flow }).expect("future emission");
        }
    }

    fn on_async_emit(&mut self, flow: usize) {
        let def = self.sc.async_flows[flow].clone();
        if self.kernel.now() >= def.until_us * NS_PER_US {
            return;
        }
        let headers = self.async_headers(&def);
        let id = self.alloc_frame_id();
        let frame = Frame::new(
            headers,
            def.wire_bytes.saturating_sub(46),
            def.wire_bytes,
            id,
            Some(def.stream_id),
        )
        .expect("async frame is well-formed");
        let node = self.scen_node(&def.source);
        let dest = self.scen_node(&def.dest);
        self.emit_from_host(node, frame, Some((&def.name, dest)));
        let next = self.kernel.now() + def.period_us * NS_PER_US;
        self.kernel.schedule_at(next, Ev::AsyncEmit { flow }).expect("future emission");
    }

    fn on_be_emit(&mut self, flow: usize) {
        let def = self.sc.be_flows[flow].clone();
        let wire = self.be_rngs[flow].random_range(64..=1522u32);
        let headers = self.be_headers(&def);
        let id = self.alloc_frame_id();
        let frame = Frame::new(headers, wire.saturating_sub(46), wire, id, None)
            .expect("best-effort frame is well-formed");
        let node = self.scen_node(&def.source);
        let dest = self.scen_node(&def.dest);
        self.emit_from_host(node, frame, Some((&def.name, dest)));
        let next = self.kernel.now() + def.period_us * NS_PER_US;
        if next < self.sc.t_end_ns() {
            self.kernel.schedule_at(next, Ev::BeEmit { flow }).expect("future emission");
        }
    }

    fn on_presence(&mut self, node: usize) {
        let mac = self.node_mac(node);
        let headers = HeaderTuple::l2(BROADCAST_MAC, mac, PRESENCE_ETHERTYPE, None, 0);
        let id = self.alloc_frame_id();
        let frame = Frame::new(headers, 46, 64, id, None).expect("presence frame");
        self.emit_from_host(node, frame, None);
    }

    fn on_inject(&mut self, idx: usize) {
        let def = self.sc.injections[idx].clone();
        let id = self.injection_frame_ids[idx];
        let frame = Frame::new(
            def.headers.clone(),
            def.wire_bytes.saturating_sub(18),
            def.wire_bytes,
            id,
            None,
        )
        .expect("injected frame is well-formed");
        let node = self.scen_node(&def.node);
        let now = self.kernel.now();
        self.record(node, Some(0), TraceAction::Enqueued, &frame, &def.tag);
        let port = *self.nodes[node].ports.keys().next().expect("host has a link");
        self.nodes[node].ports.get_mut(&port).expect("port").port.enqueue_egress(frame, now);
        self.try_start(node, port);
    }

    fn on_sr_kickoff(&mut self, res: usize) {
        let def = self.sc.reservations[res].clone();
        let fi = self
            .sc
            .async_flows
            .iter()
            .position(|f| f.name == def.flow)
            .expect("validated");
        let flow = self.sc.async_flows[fi].clone();
        let talker = self.scen_node(&flow.source);
        let id = self.alloc_frame_id();
        let headers = HeaderTuple::l2(BROADCAST_MAC, self.node_mac(talker), SRP_ETHERTYPE, None, 0);
        let frame = Frame::new(headers, 110, CONTROL_WIRE_BYTES, id, None).expect("advert frame");
        self.msgs.insert(id, CtrlMsg::TalkerAdvertise { stream: flow.stream_id, talker });
        self.sr_start.insert(flow.stream_id, self.kernel.now());
        self.emit_from_host(talker, frame, None);
    }

    // -- transmission pipeline ----------------------------------------------

    fn try_start(&mut self, node: usize, port: u32) {
        let now = self.kernel.now();
        let st = self.nodes[node].ports.get_mut(&port).expect("port exists");
        if st.port.queued_total() == 0 {
            return;
        }
        if st.port.busy_until_ns > now {
            let w = st.port.busy_until_ns;
            self.kernel.schedule_at(w, Ev::Wake { node, port }).expect("wake in future");
            return;
        }
        if let Some(pcp) = st.port.select_transmission(now) {
            let (frame, trans) = st.port.start_transmission(pcp, now);
            self.record(node, Some(port), TraceAction::Sent, &frame, "");
            self.kernel
                .schedule_at(now + trans, Ev::TxDone { node, port, frame })
                .expect("transmission completes in the future");
        } else if let Some(w) = st.port.next_wake(now) {
            let w = w.max(now + 1);
            self.kernel.schedule_at(w, Ev::Wake { node, port }).expect("wake in future");
        }
    }

    fn on_tx_done(&mut self, node: usize, port: u32, frame: Frame) {
        let now = self.kernel.now();
        let (peer, peer_port) = {
            let st = &self.nodes[node].ports[&port];
            (st.peer, st.peer_port)
        };
        self.kernel
            .schedule_at(now, Ev::Arrival { node: peer, in_port: peer_port, frame })
            .expect("same-instant arrival");
        self.try_start(node, port);
    }

    fn on_forwarded(&mut self, node: usize, port: u32, frame: Frame) {
        let now = self.kernel.now();
        self.nodes[node].ports.get_mut(&port).expect("port").port.enqueue_egress(frame, now);
        self.try_start(node, port);
    }

    fn forward(&mut self, node: usize, in_port: u32, out_port: u32, frame: Frame) {
        if out_port == in_port {
            return;
        }
        // Re-injected frames have no real ingress port; charge the egress
        // link's forwarding delay instead.
        let fwd = match self.nodes[node].ports.get(&in_port) {
            Some(p) => p.fwd_ns,
            None => self.nodes[node].ports[&out_port].fwd_ns,
        };
        let at = self.kernel.now() + fwd;
        self.kernel
            .schedule_at(at, Ev::Forwarded { node, port: out_port, frame })
            .expect("forwarding delay is non-negative");
    }

    fn on_arrival(&mut self, node: usize, in_port: u32, frame: Frame) {
        match self.nodes[node].kind {
            NodeKind::Switch => self.switch_arrival(node, in_port, frame),
            NodeKind::Host => self.host_arrival(node, frame),
            NodeKind::Controller => self.controller_arrival(frame),
        }
    }

    // -- switch behavior ----------------------------------------------------

    fn switch_arrival(&mut self, node: usize, in_port: u32, frame: Frame) {
        // Configuration frames addressed to this switch terminate here.
        if frame.headers.ethertype == CONFIG_ETHERTYPE
            && frame.headers.dst_mac == self.node_mac(node)
        {
            let msg = self.msgs.get(&frame.frame_id).cloned().expect("control frame has payload");
            self.device_ctrl(node, msg);
            return;
        }
        match self.spec.variant {
            Variant::Tssdn => self.switch_piped(node, in_port, frame),
            Variant::Tsn { .. } => {
                self.nodes[node].mac_table.insert(frame.headers.src_mac, in_port);
                if frame.headers.ethertype == SRP_ETHERTYPE {
                    self.switch_msrp(node, in_port, frame);
                } else {
                    self.switch_learning(node, in_port, frame, None);
                }
            }
            Variant::Conventional { policy } => {
                self.nodes[node].mac_table.insert(frame.headers.src_mac, in_port);
                self.switch_learning(node, in_port, frame, Some(policy));
            }
        }
    }

    /// The controlled pipeline: ingress filter, then table lookup, then the
    /// matched actions. No match means drop.
    fn switch_piped(&mut self, node: usize, in_port: u32, frame: Frame) {
        let arrival = self.kernel.now();
        if let IngressVerdict::Drop(reason) =
            ingress_check(&self.nodes[node].ingress, &frame, arrival)
        {
            let detail = format!("{reason:?}");
            self.record(node, Some(in_port), TraceAction::DroppedIngress, &frame, &detail);
            return;
        }
        let actions: Option<Vec<Action>> = self.nodes[node]
            .tables
            .lookup(&frame.headers, in_port)
            .map(|r| r.actions.clone());
        match actions {
            None => {
                self.record(node, Some(in_port), TraceAction::DroppedNoRule, &frame, "no match");
            }
            Some(actions) => {
                for action in actions {
                    match action {
                        Action::ForwardTo(out) => {
                            self.forward(node, in_port, out, frame.clone());
                        }
                        Action::ToController => {
                            self.record(
                                node,
                                Some(in_port),
                                TraceAction::ToController,
                                &frame,
                                "packet-in",
                            );
                            self.send_packet_in(node, in_port, frame.clone());
                        }
                        Action::Drop => {
                            self.record(
                                node,
                                Some(in_port),
                                TraceAction::DroppedNoRule,
                                &frame,
                                "drop rule",
                            );
                        }
                    }
                }
            }
        }
    }

    /// Address-learning forwarding. With a multicast policy, group frames
    /// reach registered members only (or everyone, per policy); without
    /// one, any group frame floods.
    fn switch_learning(
        &mut self,
        node: usize,
        in_port: u32,
        frame: Frame,
        policy: Option<MulticastPolicy>,
    ) {
        let ports: Vec<u32> = self.nodes[node].ports.keys().copied().collect();
        let outs: Vec<u32> = if frame.headers.is_multicast() {
            let flood = frame.headers.dst_mac == BROADCAST_MAC
                || match policy {
                    None | Some(MulticastPolicy::BroadcastUnknown) => true,
                    Some(MulticastPolicy::DropUnknown) => false,
                };
            if flood {
                ports.into_iter().filter(|p| *p != in_port).collect()
            } else {
                match self.groups.get(&node).and_then(|g| g.get(&frame.headers.dst_mac)) {
                    Some(members) => members.iter().copied().filter(|p| *p != in_port).collect(),
                    None => {
                        self.record(
                            node,
                            Some(in_port),
                            TraceAction::DroppedNoRule,
                            &frame,
                            "unknown group",
                        );
                        return;
                    }
                }
            }
        } else {
            match self.nodes[node].mac_table.get(&frame.headers.dst_mac) {
                Some(p) if *p == in_port => Vec::new(),
                Some(p) => vec![*p],
                None => ports.into_iter().filter(|p| *p != in_port).collect(),
            }
        };
        for out in outs {
            self.forward(node, in_port, out, frame.clone());
        }
    }

    /// Distributed reservation at a switch: announcements register the
    /// talker and flood onward; a listener's answer walks back toward the
    /// talker, reserving bandwidth and arming the shaper on each egress
    /// port it will use.
    fn switch_msrp(&mut self, node: usize, in_port: u32, frame: Frame) {
        let msg = self.msgs.get(&frame.frame_id).cloned().expect("reservation frame has payload");
        match msg {
            CtrlMsg::TalkerAdvertise { .. } => {
                let ports: Vec<u32> = self.nodes[node].ports.keys().copied().collect();
                for out in ports {
                    if out == in_port {
                        continue;
                    }
                    let id = self.alloc_frame_id();
                    let mut clone = frame.clone();
                    clone.frame_id = id;
                    self.msgs.insert(id, msg.clone());
                    self.forward(node, in_port, out, clone);
                }
            }
            CtrlMsg::ListenerReady { stream } => {
                let def = self
                    .sc
                    .async_flows
                    .iter()
                    .find(|f| f.stream_id == stream)
                    .expect("reservation for a defined flow")
                    .clone();
                let headers = self.async_headers(&def);
                self.nodes[node].sr.entries.push(SRTableEntry {
                    stream_id: stream,
                    pattern: HeaderPattern::exact(&headers),
                    reserved_bps: def.reserved_bps,
                    ports: vec![in_port],
                });
                self.nodes[node]
                    .ports
                    .get_mut(&in_port)
                    .expect("port")
                    .port
                    .set_shaper(def.pcp, def.reserved_bps);
                let out = self.nodes[node].mac_table.get(&frame.headers.dst_mac).copied();
                if let Some(out) = out {
                    self.forward(node, in_port, out, frame);
                }
            }
            _ => {}
        }
    }

    // -- host behavior ------------------------------------------------------

    fn host_arrival(&mut self, node: usize, frame: Frame) {
        let now = self.kernel.now();
        self.record(node, None, TraceAction::Received, &frame, "");
        self.deliveries.push(Delivery {
            t_ns: now,
            node: self.nodes[node].name.clone(),
            frame: frame.clone(),
        });
        if let Some(info) = self.emits.get(&frame.frame_id) {
            if info.dest == node {
                self.latencies.push(FlowLatency {
                    flow: info.flow.clone(),
                    frame_id: frame.frame_id,
                    emit_ns: info.t_ns,
                    recv_ns: now,
                });
            }
        }
        match frame.headers.ethertype {
            SRP_ETHERTYPE => self.host_srp(node, frame),
            CONFIG_ETHERTYPE => {
                if let Some(CtrlMsg::PacketOut { .. }) = self.msgs.get(&frame.frame_id) {
                    // Hosts never receive bare configuration frames.
                }
            }
            _ => self.host_service(node, frame),
        }
    }

    fn host_srp(&mut self, node: usize, frame: Frame) {
        let msg = self.msgs.get(&frame.frame_id).cloned().expect("reservation frame has payload");
        match msg {
            CtrlMsg::TalkerAdvertise { stream, talker } => {
                // The configured listener answers; everyone else ignores.
                let listener_def = self.sc.async_flows.iter().find(|f| {
                    f.stream_id == stream && self.scen_node(&f.dest) == node
                });
                if listener_def.is_none() {
                    return;
                }
                let id = self.alloc_frame_id();
                let headers = HeaderTuple::l2(
                    self.node_mac(talker),
                    self.node_mac(node),
                    SRP_ETHERTYPE,
                    None,
                    0,
                );
                let lr =
                    Frame::new(headers, 110, CONTROL_WIRE_BYTES, id, None).expect("answer frame");
                self.msgs.insert(id, CtrlMsg::ListenerReady { stream });
                self.emit_from_host(node, lr, None);
            }
            CtrlMsg::ListenerReady { stream } => {
                // Reaching the talker completes the reservation; the
                // reserved stream starts on the next period boundary, with
                // the sweep's per-seed phase offset.
                let Some(start_ns) = self.sr_start.remove(&stream) else {
                    return;
                };
                let fi = self
                    .sc
                    .async_flows
                    .iter()
                    .position(|f| f.stream_id == stream)
                    .expect("reservation for a defined flow");
                let def = self.sc.async_flows[fi].clone();
                if self.scen_node(&def.source) != node {
                    return;
                }
                let now = self.kernel.now();
                self.sr_durations.insert(def.name.clone(), now - start_ns);
                let res = self
                    .sc
                    .reservations
                    .iter()
                    .find(|r| r.flow == def.name)
                    .expect("reservation exists");
                let period = self.sc.period_ns();
                let first = now.div_ceil(period) * period
                    + self.spec.seed * res.step_us * NS_PER_US;
                self.kernel
                    .schedule_at(first, Ev::AsyncEmit { flow: fi })
                    .expect("start after completion");
            }
            _ => {}
        }
    }

    /// Host responder: answers address queries for its own address and
    /// probes to ports it listens on. Replies mirror the probe's tuple.
    fn host_service(&mut self, node: usize, frame: Frame) {
        let Some(si) = self.nodes[node].service else {
            return;
        };
        let svc = self.sc.services[si].clone();
        let my_ip = self.node_ip(node);
        let my_mac = self.node_mac(node);
        let h = &frame.headers;
        let reply_headers = if svc.arp
            && h.ethertype == ARP_ETHERTYPE
            && h.is_multicast()
            && h.dst_ip == Some(my_ip)
        {
            Some(
                HeaderTuple::l2(h.src_mac, my_mac, ARP_ETHERTYPE, None, 0).with_ipv4(
                    my_ip,
                    h.src_ip.unwrap_or(0),
                    0,
                    0,
                ),
            )
        } else if h.dst_mac == my_mac
            && h.ip_proto == Some(6)
            && h.dst_port.is_some_and(|p| svc.tcp_ports.contains(&p))
        {
            Some(
                HeaderTuple::l2(h.src_mac, my_mac, 0x0800, h.vlan_id, 0)
                    .with_ipv4(my_ip, h.src_ip.unwrap_or(0), 0, 6)
                    .with_ports(h.dst_port.unwrap_or(0), h.src_port.unwrap_or(0)),
            )
        } else if h.dst_mac == my_mac
            && h.ip_proto == Some(17)
            && h.dst_port.is_some_and(|p| svc.udp_ports.contains(&p))
        {
            Some(
                HeaderTuple::l2(h.src_mac, my_mac, 0x0800, h.vlan_id, 0)
                    .with_ipv4(my_ip, h.src_ip.unwrap_or(0), 0, 17)
                    .with_ports(h.dst_port.unwrap_or(0), h.src_port.unwrap_or(0)),
            )
        } else {
            None
        };
        let Some(headers) = reply_headers else {
            return;
        };
        let id = self.alloc_frame_id();
        let reply = Frame::new(headers, 46, 64, id, None).expect("reply frame");
        let port = *self.nodes[node].ports.keys().next().expect("host has a link");
        let at = self.kernel.now() + RESPONDER_DELAY_NS;
        self.kernel
            .schedule_at(at, Ev::Forwarded { node, port, frame: reply })
            .expect("reply in future");
    }

    // -- control channel ----------------------------------------------------

    fn send_ctrl(&mut self, from: usize, to: usize, msg: CtrlMsg) {
        let id = self.alloc_frame_id();
        let headers = HeaderTuple::l2(
            self.node_mac(to),
            self.node_mac(from),
            CONFIG_ETHERTYPE,
            Some(0),
            7,
        );
        let frame =
            Frame::new(headers, 110, CONTROL_WIRE_BYTES, id, None).expect("control frame");
        self.msgs.insert(id, msg);
        let to_name = self.nodes[to].name.clone();
        let port = self
            .topo
            .port_toward(&self.nodes[from].name, &to_name)
            .expect("control links are direct");
        let now = self.kernel.now();
        self.nodes[from].ports.get_mut(&port).expect("port").port.enqueue_egress(frame, now);
        self.try_start(from, port);
    }

    fn send_packet_in(&mut self, switch: usize, in_port: u32, inner: Frame) {
        let ctl_node = self.ctl.as_ref().expect("pipeline implies controller").node;
        self.send_ctrl(switch, ctl_node, CtrlMsg::PacketIn { switch, in_port, inner });
    }

    /// Controller-bound frames: unwrap the message and dispatch.
    fn controller_arrival(&mut self, frame: Frame) {
        let msg = self.msgs.get(&frame.frame_id).cloned().expect("control frame has payload");
        match msg {
            CtrlMsg::PacketIn { switch, in_port, inner } => {
                self.ctl_packet_in(switch, in_port, inner)
            }
            CtrlMsg::FlowModAck { token } => self.ctl_flowmod_ack(token),
            CtrlMsg::LockAck { txn } => self.ctl_lock_ack(&txn, &frame),
            CtrlMsg::PrepareAck { txn, ok } => self.ctl_prepare_ack(&txn, ok, &frame),
            CtrlMsg::CommitAck { txn } => self.ctl_commit_ack(&txn, &frame),
            _ => {}
        }
    }

    /// Messages a switch receives from the controller.
    fn device_ctrl(&mut self, node: usize, msg: CtrlMsg) {
        let ctl_node = self.ctl.as_ref().expect("device messages imply controller").node;
        match msg {
            CtrlMsg::Lock { txn } => {
                self.send_ctrl(node, ctl_node, CtrlMsg::LockAck { txn });
            }
            CtrlMsg::Prepare { txn, gcls } => {
                let dev = self.nodes[node].name.clone();
                let valid = gcls.values().all(|g| g.validate().is_ok());
                // Faults are declared by transaction label; they also cover
                // the label's `label-N` sub-transactions.
                let faulted = self
                    .faults
                    .iter()
                    .any(|(l, d)| *d == dev && (txn == *l || txn.starts_with(&format!("{l}-"))));
                let ok = valid && !faulted;
                if ok {
                    self.nodes[node].staged.insert(txn.clone(), gcls);
                }
                self.send_ctrl(node, ctl_node, CtrlMsg::PrepareAck { txn, ok });
            }
            CtrlMsg::Commit { txn, at } => {
                let now = self.kernel.now();
                let (apply_at, ack_after) = match at {
                    Some(t) => (t.max(now), false),
                    None => (now + self.sc.txn.commit_exec_us * NS_PER_US, true),
                };
                self.kernel
                    .schedule_at(apply_at, Ev::GateApply { node, txn: txn.clone(), ack_after })
                    .expect("commit time is in the future");
                if !ack_after {
                    self.send_ctrl(node, ctl_node, CtrlMsg::CommitAck { txn });
                }
            }
            CtrlMsg::Rollback { txn } => {
                self.nodes[node].staged.remove(&txn);
            }
            CtrlMsg::Release { txn } => {
                // Idempotent cleanup; an applied candidate is already gone.
                self.nodes[node].staged.remove(&txn);
            }
            CtrlMsg::FlowMod { rules, sr, token } => {
                for rule in rules {
                    self.nodes[node].tables.install_dynamic(rule);
                }
                if let Some((port, entry, slope, pcp)) = sr {
                    self.nodes[node].sr.entries.push(entry);
                    self.nodes[node]
                        .ports
                        .get_mut(&port)
                        .expect("port")
                        .port
                        .set_shaper(pcp, slope);
                }
                self.send_ctrl(node, ctl_node, CtrlMsg::FlowModAck { token });
            }
            CtrlMsg::PacketOut { out_port, inner } => match out_port {
                Some(out) => {
                    let now = self.kernel.now();
                    self.nodes[node]
                        .ports
                        .get_mut(&out)
                        .expect("port")
                        .port
                        .enqueue_egress(inner, now);
                    self.try_start(node, out);
                }
                None => self.switch_piped(node, REINJECT_PORT, inner),
            },
            _ => {}
        }
    }

    fn on_gate_apply(&mut self, node: usize, txn: &str, ack_after: bool) {
        let staged = self.nodes[node].staged.remove(txn);
        if let Some(gcls) = staged {
            let ports: Vec<u32> = gcls.keys().copied().collect();
            for (port, gcl) in gcls {
                if let Some(st) = self.nodes[node].ports.get_mut(&port) {
                    st.port.gcl = gcl;
                }
            }
            let dev = self.nodes[node].name.clone();
            self.txn_log.push(TxnLogRow {
                txn_id: txn.to_string(),
                phase: TxnPhase::Applied,
                device: dev,
                t_ns: self.kernel.now(),
                detail: String::new(),
            });
            for port in ports {
                self.try_start(node, port);
            }
        }
        if ack_after {
            let ctl_node = self.ctl.as_ref().expect("commit implies controller").node;
            self.send_ctrl(node, ctl_node, CtrlMsg::CommitAck { txn: txn.to_string() });
        }
    }

    // -- controller: reactive flows and reservations ------------------------

    fn ctl_packet_in(&mut self, switch: usize, _in_port: u32, inner: Frame) {
        self.packet_ins.push(inner.frame_id);
        if inner.headers.ethertype == SRP_ETHERTYPE {
            let msg = self.msgs.get(&inner.frame_id).cloned().expect("reservation payload");
            match msg {
                CtrlMsg::TalkerAdvertise { stream, talker } => self.ctl_srp_ta(stream, talker),
                CtrlMsg::ListenerReady { stream } => self.ctl_srp_lr(stream),
                _ => {}
            }
            return;
        }
        let switch_name = self.nodes[switch].name.clone();
        let decision = self
            .ctl
            .as_ref()
            .expect("packet-in implies controller")
            .inner
            .decide_packet_in(&inner.headers, &switch_name);
        let ctl_node = self.ctl.as_ref().expect("present").node;
        match decision {
            PacketInDecision::Deny => {
                self.record(ctl_node, None, TraceAction::DroppedNoRule, &inner, "acl deny");
            }
            PacketInDecision::NoPath => {
                self.record(ctl_node, None, TraceAction::DroppedNoRule, &inner, "no path");
            }
            PacketInDecision::Flood => {
                let src_host = self
                    .ctl
                    .as_ref()
                    .expect("present")
                    .inner
                    .mac_hosts
                    .get(&inner.headers.src_mac)
                    .cloned()
                    .unwrap_or_default();
                let edges = self.ctl.as_ref().expect("present").inner.edge_ports(&src_host);
                for (sw, port, _) in edges {
                    let sw_i = self.node_idx[&sw];
                    self.send_ctrl(
                        ctl_node,
                        sw_i,
                        CtrlMsg::PacketOut { out_port: Some(port), inner: inner.clone() },
                    );
                }
            }
            PacketInDecision::Install { rules, .. } => {
                let token = {
                    let ctl = self.ctl.as_mut().expect("present");
                    let t = ctl.next_token;
                    ctl.next_token += 1;
                    t
                };
                let mut by_dev: BTreeMap<String, Vec<FlowRule>> = BTreeMap::new();
                for (dev, rule) in rules {
                    by_dev.entry(dev).or_default().push(rule);
                }
                let remaining: BTreeSet<String> = by_dev.keys().cloned().collect();
                self.ctl.as_mut().expect("present").pending_installs.insert(
                    token,
                    PendingInstall {
                        remaining,
                        then: AfterAcks::Reinject { switch, frame: inner },
                    },
                );
                for (dev, rules) in by_dev {
                    let di = self.node_idx[&dev];
                    self.send_ctrl(ctl_node, di, CtrlMsg::FlowMod { rules, sr: None, token });
                }
            }
        }
    }

    /// A talker's announcement: offer the stream to every edge host except
    /// the talker itself.
    fn ctl_srp_ta(&mut self, stream: u32, talker: usize) {
        let ctl_node = self.ctl.as_ref().expect("present").node;
        let talker_name = self.nodes[talker].name.clone();
        let edges = self.ctl.as_ref().expect("present").inner.edge_ports(&talker_name);
        for (sw, port, _) in edges {
            let id = self.alloc_frame_id();
            let headers = HeaderTuple::l2(
                BROADCAST_MAC,
                self.node_mac(talker),
                SRP_ETHERTYPE,
                None,
                0,
            );
            let clone =
                Frame::new(headers, 110, CONTROL_WIRE_BYTES, id, None).expect("advert clone");
            self.msgs.insert(id, CtrlMsg::TalkerAdvertise { stream, talker });
            let sw_i = self.node_idx[&sw];
            self.send_ctrl(ctl_node, sw_i, CtrlMsg::PacketOut { out_port: Some(port), inner: clone });
        }
    }

    /// A listener's answer: admit the stream, push rules, reservations, and
    /// shapers to the path switches, and notify the talker once every
    /// switch has confirmed.
    fn ctl_srp_lr(&mut self, stream: u32) {
        let def = self
            .sc
            .async_flows
            .iter()
            .find(|f| f.stream_id == stream)
            .expect("reservation for a defined flow")
            .clone();
        let headers = self.async_headers(&def);
        let req = StreamRequest {
            stream_id: stream,
            talker: def.source.clone(),
            headers,
            reserved_bps: def.reserved_bps,
            wire_bytes: def.wire_bytes,
        };
        let plan: AdmissionPlan = {
            let ctl = self.ctl.as_mut().expect("present");
            let plan = match ctl.inner.admit_stream(&req, &def.dest) {
                Ok(p) => p,
                Err(_) => return,
            };
            ctl.inner.commit_reservation(&plan, req.reserved_bps);
            plan
        };
        let token = {
            let ctl = self.ctl.as_mut().expect("present");
            let t = ctl.next_token;
            ctl.next_token += 1;
            t
        };
        let remaining: BTreeSet<String> = plan.steps.iter().map(|s| s.device.clone()).collect();
        self.ctl
            .as_mut()
            .expect("present")
            .pending_installs
            .insert(token, PendingInstall { remaining, then: AfterAcks::SrComplete { stream } });
        let ctl_node = self.ctl.as_ref().expect("present").node;
        for step in plan.steps {
            let di = self.node_idx[&step.device];
            self.send_ctrl(
                ctl_node,
                di,
                CtrlMsg::FlowMod {
                    rules: vec![step.rule],
                    sr: Some((
                        step.out_port,
                        step.sr_entry,
                        step.shaper_idle_slope_bps,
                        def.pcp,
                    )),
                    token,
                },
            );
        }
    }

    fn ctl_flowmod_ack(&mut self, token: u64) {
        let done = {
            let ctl = self.ctl.as_mut().expect("present");
            let Some(pi) = ctl.pending_installs.get_mut(&token) else {
                return;
            };
            // The ack's sender is implicit: one outstanding ack per device
            // per token, so count down by popping any entry.
            let first = pi.remaining.iter().next().cloned();
            if let Some(d) = first {
                pi.remaining.remove(&d);
            }
            if pi.remaining.is_empty() {
                ctl.pending_installs.remove(&token)
            } else {
                None
            }
        };
        let Some(pi) = done else {
            return;
        };
        let ctl_node = self.ctl.as_ref().expect("present").node;
        match pi.then {
            AfterAcks::Reinject { switch, frame } => {
                self.send_ctrl(ctl_node, switch, CtrlMsg::PacketOut { out_port: None, inner: frame });
            }
            AfterAcks::SrComplete { stream } => {
                let def = self
                    .sc
                    .async_flows
                    .iter()
                    .find(|f| f.stream_id == stream)
                    .expect("reservation for a defined flow")
                    .clone();
                let talker = self.scen_node(&def.source);
                let (sw, port) = self
                    .ctl
                    .as_ref()
                    .expect("present")
                    .inner
                    .host_attach
                    .get(&def.source)
                    .cloned()
                    .expect("talker attaches to a switch");
                let id = self.alloc_frame_id();
                let headers = HeaderTuple::l2(
                    self.node_mac(talker),
                    self.node_mac(self.scen_node(&def.dest)),
                    SRP_ETHERTYPE,
                    None,
                    0,
                );
                let lr = Frame::new(headers, 110, CONTROL_WIRE_BYTES, id, None)
                    .expect("completion frame");
                self.msgs.insert(id, CtrlMsg::ListenerReady { stream });
                let sw_i = self.node_idx[&sw];
                self.send_ctrl(ctl_node, sw_i, CtrlMsg::PacketOut { out_port: Some(port), inner: lr });
            }
        }
    }

    // -- controller: schedule transitions -----------------------------------

    fn on_txn_kickoff(&mut self, cfg: usize) {
        let cfg_def = self.sc.configs[cfg].clone();
        let target = config_delays(&self.sc, &cfg_def);
        let now = self.kernel.now();
        let (plan, label) = {
            let ctl = self.ctl.as_mut().expect("transitions imply controller");
            assert!(ctl.active.is_none(), "transitions are serialized");
            let plan = plan_transition(
                &self.sync_specs,
                &ctl.current_delays,
                &target,
                self.spec.strategy,
                &cfg_def.label,
            );
            (plan, cfg_def.label.clone())
        };
        self.txn_log.push(TxnLogRow {
            txn_id: label.clone(),
            phase: TxnPhase::Kickoff,
            device: "-".into(),
            t_ns: now,
            detail: format!("{} sub-transactions, {}", plan.subs.len(), self.spec.strategy.as_str()),
        });
        if plan.subs.is_empty() {
            self.txn_log.push(TxnLogRow {
                txn_id: label,
                phase: TxnPhase::Done,
                device: "-".into(),
                t_ns: now,
                detail: "no changes".into(),
            });
            self.ctl.as_mut().expect("present").current_delays = target;
            return;
        }
        self.ctl.as_mut().expect("present").active = Some(TxnExec {
            plan,
            sub: 0,
            phase: TxPhase::Locking,
            pending: BTreeSet::new(),
            ordered_pos: 0,
            failed: false,
        });
        self.start_sub();
    }

    /// Begin the current sub-transaction: take every device lock in sorted
    /// order, then confirm each over the wire.
    fn start_sub(&mut self) {
        let now = self.kernel.now();
        let (sub_label, devices) = {
            let ctl = self.ctl.as_mut().expect("present");
            let exec = ctl.active.as_mut().expect("active transaction");
            exec.phase = TxPhase::Locking;
            exec.failed = false;
            exec.ordered_pos = 0;
            let sub = &exec.plan.subs[exec.sub];
            let mut devices: Vec<String> = sub.device_order.clone();
            devices.sort();
            devices.dedup();
            exec.pending = devices.iter().cloned().collect();
            for d in &devices {
                let ok = ctl.inner.locks.acquire(d, &sub.label);
                assert!(ok, "serialized transactions never contend for locks");
            }
            (sub.label.clone(), devices)
        };
        for d in &devices {
            self.txn_log.push(TxnLogRow {
                txn_id: sub_label.clone(),
                phase: TxnPhase::Lock,
                device: d.clone(),
                t_ns: now,
                detail: String::new(),
            });
        }
        let ctl_node = self.ctl.as_ref().expect("present").node;
        for d in devices {
            let di = self.node_idx[&d];
            self.send_ctrl(ctl_node, di, CtrlMsg::Lock { txn: sub_label.clone() });
        }
    }

    fn ctl_lock_ack(&mut self, txn: &str, frame: &Frame) {
        let device = self.host_of_mac(frame.headers.src_mac);
        let all_in = {
            let ctl = self.ctl.as_mut().expect("present");
            let Some(exec) = ctl.active.as_mut() else {
                return;
            };
            if exec.plan.subs[exec.sub].label != txn || exec.phase != TxPhase::Locking {
                return;
            }
            exec.pending.remove(&device);
            exec.pending.is_empty()
        };
        if all_in {
            self.send_prepares();
        }
    }

    /// Candidate gate lists for this sub-transaction's post-state, sent to
    /// each participating device for validation and staging.
    fn send_prepares(&mut self) {
        let now = self.kernel.now();
        let (sub_label, delays_after, devices) = {
            let ctl = self.ctl.as_mut().expect("present");
            let exec = ctl.active.as_mut().expect("active transaction");
            exec.phase = TxPhase::Preparing;
            let sub = &exec.plan.subs[exec.sub];
            let mut devices: Vec<String> = sub.device_order.clone();
            devices.sort();
            devices.dedup();
            exec.pending = devices.iter().cloned().collect();
            (sub.label.clone(), sub.delays_after.clone(), devices)
        };
        let flows: Vec<(&SyncFlowSpec, Nanos)> = self
            .sync_specs
            .iter()
            .filter_map(|s| delays_after.get(&s.cf_id).map(|d| (s, *d)))
            .collect();
        let schedule = build_network_schedule(self.sc.period_ns(), &flows, &self.all_ports)
            .expect("transition targets a valid schedule");
        let ctl_node = self.ctl.as_ref().expect("present").node;
        for d in devices {
            let gcls: BTreeMap<u32, GateControlList> = schedule
                .gcls
                .iter()
                .filter(|((dev, _), _)| dev == &d)
                .map(|((_, port), gcl)| (*port, gcl.clone()))
                .collect();
            self.txn_log.push(TxnLogRow {
                txn_id: sub_label.clone(),
                phase: TxnPhase::Prepare,
                device: d.clone(),
                t_ns: now,
                detail: format!("{} gate lists", gcls.len()),
            });
            let di = self.node_idx[&d];
            self.send_ctrl(ctl_node, di, CtrlMsg::Prepare { txn: sub_label.clone(), gcls });
        }
    }

    fn ctl_prepare_ack(&mut self, txn: &str, ok: bool, frame: &Frame) {
        let device = self.host_of_mac(frame.headers.src_mac);
        let now = self.kernel.now();
        self.txn_log.push(TxnLogRow {
            txn_id: txn.to_string(),
            phase: TxnPhase::Ack,
            device: device.clone(),
            t_ns: now,
            detail: if ok { "ready".into() } else { "refused".into() },
        });
        let all_in = {
            let ctl = self.ctl.as_mut().expect("present");
            let Some(exec) = ctl.active.as_mut() else {
                return;
            };
            if exec.plan.subs[exec.sub].label != txn || exec.phase != TxPhase::Preparing {
                return;
            }
            if !ok {
                exec.failed = true;
            }
            exec.pending.remove(&device);
            exec.pending.is_empty()
        };
        if !all_in {
            return;
        }
        let failed = self
            .ctl
            .as_ref()
            .expect("present")
            .active
            .as_ref()
            .expect("active")
            .failed;
        if failed {
            self.abort_sub();
        } else {
            self.send_commits();
        }
    }

    /// All devices staged the candidate; commit it. A synchronized commit
    /// names one boundary instant for everyone; otherwise devices apply one
    /// after another in the sub-transaction's device order.
    fn send_commits(&mut self) {
        let now = self.kernel.now();
        let (sub_label, order, sync) = {
            let ctl = self.ctl.as_mut().expect("present");
            let exec = ctl.active.as_mut().expect("active transaction");
            exec.phase = TxPhase::Committing;
            let sub = &exec.plan.subs[exec.sub];
            let sync = exec.plan.strategy == Strategy::SyncCommit;
            let mut order = sub.device_order.clone();
            if sync {
                order.sort();
                order.dedup();
            }
            exec.pending = order.iter().cloned().collect();
            (sub.label.clone(), order, sync)
        };
        let ctl_node = self.ctl.as_ref().expect("present").node;
        if sync {
            let margin = self.sc.txn.sync_margin_us * NS_PER_US;
            let at = sync_commit_time(now + margin, self.sc.period_ns());
            for d in &order {
                self.txn_log.push(TxnLogRow {
                    txn_id: sub_label.clone(),
                    phase: TxnPhase::Commit,
                    device: d.clone(),
                    t_ns: now,
                    detail: format!("apply at {at}"),
                });
                let di = self.node_idx[d];
                self.send_ctrl(ctl_node, di, CtrlMsg::Commit { txn: sub_label.clone(), at: Some(at) });
            }
            self.kernel
                .schedule_at(at + 1_000, Ev::TxnFinish { txn: sub_label })
                .expect("commit boundary is ahead");
        } else {
            let first = order[0].clone();
            self.txn_log.push(TxnLogRow {
                txn_id: sub_label.clone(),
                phase: TxnPhase::Commit,
                device: first.clone(),
                t_ns: now,
                detail: "ordered".into(),
            });
            let di = self.node_idx[&first];
            self.send_ctrl(ctl_node, di, CtrlMsg::Commit { txn: sub_label, at: None });
        }
    }

    fn ctl_commit_ack(&mut self, txn: &str, _frame: &Frame) {
        let sync = {
            let ctl = self.ctl.as_ref().expect("present");
            let Some(exec) = ctl.active.as_ref() else {
                return;
            };
            if exec.plan.subs[exec.sub].label != txn {
                return;
            }
            exec.plan.strategy == Strategy::SyncCommit
        };
        if sync {
            // Synchronized acks only confirm receipt; the release timer
            // drives completion.
            return;
        }
        let next_device = {
            let ctl = self.ctl.as_mut().expect("present");
            let exec = ctl.active.as_mut().expect("active");
            exec.ordered_pos += 1;
            let order = &exec.plan.subs[exec.sub].device_order;
            order.get(exec.ordered_pos).cloned()
        };
        match next_device {
            Some(d) => {
                let sub_label = txn.to_string();
                self.txn_log.push(TxnLogRow {
                    txn_id: sub_label.clone(),
                    phase: TxnPhase::Commit,
                    device: d.clone(),
                    t_ns: self.kernel.now(),
                    detail: "ordered".into(),
                });
                let ctl_node = self.ctl.as_ref().expect("present").node;
                let di = self.node_idx[&d];
                self.send_ctrl(ctl_node, di, CtrlMsg::Commit { txn: sub_label, at: None });
            }
            None => self.finish_sub(txn),
        }
    }

    fn on_txn_finish(&mut self, txn: &str) {
        self.finish_sub(txn);
    }

    /// Release the sub-transaction's locks, advance the controller's view
    /// of the installed delays, and move to the next sub-transaction.
    fn finish_sub(&mut self, txn: &str) {
        let now = self.kernel.now();
        let (devices, delays_after, more) = {
            let ctl = self.ctl.as_mut().expect("present");
            let exec = ctl.active.as_mut().expect("active");
            let sub = &exec.plan.subs[exec.sub];
            assert_eq!(sub.label, txn, "finishing the active sub-transaction");
            let mut devices: Vec<String> = sub.device_order.clone();
            devices.sort();
            devices.dedup();
            let delays_after = sub.delays_after.clone();
            let more = exec.sub + 1 < exec.plan.subs.len();
            (devices, delays_after, more)
        };
        let ctl_node = self.ctl.as_ref().expect("present").node;
        for d in &devices {
            self.txn_log.push(TxnLogRow {
                txn_id: txn.to_string(),
                phase: TxnPhase::Release,
                device: d.clone(),
                t_ns: now,
                detail: String::new(),
            });
            let di = self.node_idx[d];
            self.send_ctrl(ctl_node, di, CtrlMsg::Release { txn: txn.to_string() });
        }
        self.txn_log.push(TxnLogRow {
            txn_id: txn.to_string(),
            phase: TxnPhase::Done,
            device: "-".into(),
            t_ns: now,
            detail: String::new(),
        });
        {
            let ctl = self.ctl.as_mut().expect("present");
            ctl.inner.locks.release_all(txn);
            ctl.current_delays = delays_after;
            if more {
                let exec = ctl.active.as_mut().expect("active");
                exec.sub += 1;
            } else {
                ctl.active = None;
            }
        }
        if more {
            self.start_sub();
        }
    }

    /// A device refused the candidate: discard staging everywhere, release
    /// the locks, and leave the running schedule untouched.
    fn abort_sub(&mut self) {
        let now = self.kernel.now();
        let (txn, devices) = {
            let ctl = self.ctl.as_ref().expect("present");
            let exec = ctl.active.as_ref().expect("active");
            let sub = &exec.plan.subs[exec.sub];
            let mut devices: Vec<String> = sub.device_order.clone();
            devices.sort();
            devices.dedup();
            (sub.label.clone(), devices)
        };
        let ctl_node = self.ctl.as_ref().expect("present").node;
        for d in &devices {
            self.txn_log.push(TxnLogRow {
                txn_id: txn.clone(),
                phase: TxnPhase::Rollback,
                device: d.clone(),
                t_ns: now,
                detail: String::new(),
            });
            let di = self.node_idx[d];
            self.send_ctrl(ctl_node, di, CtrlMsg::Rollback { txn: txn.clone() });
        }
        for d in &devices {
            self.txn_log.push(TxnLogRow {
                txn_id: txn.clone(),
                phase: TxnPhase::Release,
                device: d.clone(),
                t_ns: now,
                detail: String::new(),
            });
            let di = self.node_idx[d];
            self.send_ctrl(ctl_node, di, CtrlMsg::Release { txn: txn.clone() });
        }
        self.txn_log.push(TxnLogRow {
            txn_id: txn.clone(),
            phase: TxnPhase::Abort,
            device: "-".into(),
            t_ns: now,
            detail: "prepare refused".into(),
        });
        let ctl = self.ctl.as_mut().expect("present");
        ctl.inner.locks.release_all(&txn);
        ctl.active = None;
    }

    fn host_of_mac(&self, mac: u64) -> String {
        for (i, _) in self.nodes.iter().enumerate() {
            if self.node_mac(i) == mac {
                return self.nodes[i].name.clone();
            }
        }
        String::new()
    }

    // -- finalization -------------------------------------------------------

    fn into_output(self) -> RunOutput {
        let t_end = self.sc.t_end_ns();
        let boot_label = match self.spec.variant {
            Variant::Tssdn => "boot".to_string(),
            Variant::Tsn { gate_control: true } => {
                self.sc.tsn_static_config.clone().unwrap_or_else(|| "open".into())
            }
            _ => "open".to_string(),
        };
        let spans = if self.spec.variant == Variant::Tssdn {
            build_spans(&self.sc, &self.txn_log, t_end)
        } else {
            vec![ConfigSpan { label: boot_label, from_ns: 0, to_ns: t_end, transition: false }]
        };
        let mut final_gcls = BTreeMap::new();
        let mut final_queued = 0;
        for n in &self.nodes {
            for (pn, st) in &n.ports {
                final_queued += st.port.queued_total();
                if n.kind == NodeKind::Switch {
                    final_gcls.insert((n.name.clone(), *pn), st.port.gcl.clone());
                }
            }
        }
        RunOutput {
            scenario: self.sc.name.clone(),
            variant: self.spec.variant,
            strategy: self.spec.strategy,
            seed: self.spec.seed,
            trace: self.trace,
            deliveries: self.deliveries,
            latencies: self.latencies,
            sr_durations: self.sr_durations,
            txn_log: self.txn_log,
            spans,
            schedule_checks: self.schedule_checks,
            packet_ins: self.packet_ins,
            injection_frame_ids: self.injection_frame_ids,
            final_gcls,
            final_queued,
        }
    }
}

trait SenderSource {
    fn name_matches_source(&self, sc: &Scenario, node: &str) -> bool;
}

impl SenderSource for ScheduledSender {
    fn name_matches_source(&self, sc: &Scenario, node: &str) -> bool {
        sc.sync_flows.iter().any(|f| f.name == self.name && f.source == node)
    }
}

fn link_bandwidth(topo: &Topology, host: &str) -> u64 {
    topo.ports(host)
        .first()
        .map(|(_, _, li)| topo.links[*li].bandwidth_bps)
        .expect("host has a link")
}

fn config_delays(sc: &Scenario, cfg: &ConfigDef) -> BTreeMap<u32, Nanos> {
    cfg.delays
        .iter()
        .map(|(flow, us)| {
            let def = sc.sync_flows.iter().find(|f| &f.name == flow).expect("validated");
            (def.cf_id, us * NS_PER_US)
        })
        .collect()
}

/// Configuration intervals reconstructed from the transaction log: stable
/// stretches between transitions, and the transitions themselves from
/// kickoff to the last device apply.
fn build_spans(sc: &Scenario, log: &TxnLog, t_end: Nanos) -> Vec<ConfigSpan> {
    let mut spans = Vec::new();
    let mut cur_label = "boot".to_string();
    let mut cur_start = 0;
    for cfg in &sc.configs {
        let rows: Vec<&TxnLogRow> = log
            .rows()
            .iter()
            .filter(|r| {
                r.txn_id == cfg.label || r.txn_id.starts_with(&format!("{}-", cfg.label))
            })
            .collect();
        let Some(kick) = rows.iter().find(|r| r.phase == TxnPhase::Kickoff) else {
            continue;
        };
        let applied: Vec<Nanos> =
            rows.iter().filter(|r| r.phase == TxnPhase::Applied).map(|r| r.t_ns).collect();
        let end_t = rows.iter().map(|r| r.t_ns).max().unwrap_or(kick.t_ns);
        spans.push(ConfigSpan {
            label: cur_label.clone(),
            from_ns: cur_start,
            to_ns: kick.t_ns,
            transition: false,
        });
        if applied.is_empty() {
            // Nothing took effect (no-op or aborted); the old
            // configuration keeps running.
            spans.push(ConfigSpan {
                label: format!("{}>{}", cur_label, cfg.label),
                from_ns: kick.t_ns,
                to_ns: end_t,
                transition: true,
            });
            cur_start = end_t;
            let aborted = rows.iter().any(|r| r.phase == TxnPhase::Abort);
            if !aborted {
                cur_label = cfg.label.clone();
            }
        } else {
            let done = *applied.iter().max().expect("non-empty");
            spans.push(ConfigSpan {
                label: format!("{}>{}", cur_label, cfg.label),
                from_ns: kick.t_ns,
                to_ns: done,
                transition: true,
            });
            cur_label = cfg.label.clone();
            cur_start = done;
        }
    }
    spans.push(ConfigSpan { label: cur_label, from_ns: cur_start, to_ns: t_end, transition: false });
    spans
}

/// Build and run one scenario under one run specification.
pub fn run_scenario(sc: &Scenario, spec: &RunSpec) -> RunOutput {
    let mut world = World::new(sc, spec);
    let t_end = sc.t_end_ns();
    run_until(&mut world, t_end);
    world.into_output()
}

// ---------------------------------------------------------------------------
// The reference scenario
// ---------------------------------------------------------------------------

/// The evaluation network: three scheduled senders and one reserved sender
/// over two switches, six staged slot configurations, and best-effort
/// cross-traffic from every host.
pub fn reference_scenario() -> Scenario {
    let mut sc = Scenario::empty("reference");
    sc.period_us = 1_000;
    sc.t_end_us = 800_000;
    for (name, kind) in [
        ("S1", NodeKind::Host),
        ("S2", NodeKind::Host),
        ("S4", NodeKind::Host),
        ("S3", NodeKind::Host),
        ("Dest", NodeKind::Host),
        ("SwL", NodeKind::Switch),
        ("SwR", NodeKind::Switch),
        ("Ctrl", NodeKind::Controller),
    ] {
        sc.nodes.push(NodeDef { name: name.into(), kind });
    }
    // Controller links come last so runs without a controller keep the
    // same port numbering.
    for (a, b) in [
        ("S1", "SwL"),
        ("S2", "SwL"),
        ("S4", "SwL"),
        ("SwL", "SwR"),
        ("SwR", "S3"),
        ("SwR", "Dest"),
        ("Ctrl", "SwL"),
        ("Ctrl", "SwR"),
    ] {
        sc.links.push(LinkDef {
            a: a.into(),
            b: b.into(),
            bandwidth_bps: 100_000_000,
            forwarding_delay_ns: 3_000,
        });
    }
    sc.controller = Some("Ctrl".into());
    // Senders stop 15 ms before the configuration that removes their slot,
    // ahead of every update strategy's kickoff lead, mirroring an
    // application that announces its shutdown before the slot is torn down.
    for (name, cf, src, pcp, phase, fpp, from, until) in [
        ("S1", 1u32, "S1", 5u8, 450u64, 1u32, 200_000u64, 485_000u64),
        ("S2", 2, "S2", 6, 250, 1, 300_000, 585_000),
        ("S3", 3, "S3", 7, 500, 2, 400_000, 685_000),
    ] {
        sc.sync_flows.push(SyncFlowDef {
            name: name.into(),
            cf_id: cf,
            source: src.into(),
            dest: "Dest".into(),
            pcp,
            wire_bytes: 1522,
            phase_us: phase,
            frames_per_period: fpp,
            active_from_us: from,
            active_until_us: until,
        });
    }
    sc.async_flows.push(AsyncFlowDef {
        name: "S4".into(),
        stream_id: 4,
        source: "S4".into(),
        dest: "Dest".into(),
        pcp: 4,
        wire_bytes: 1522,
        period_us: 1_000,
        reserved_bps: 12_336_000,
        until_us: 800_000,
        src_port: 40_000,
        dst_port: 40_000,
    });
    // Background load starts after the reservation handshake completes so
    // handshake durations stay free of queueing noise, and well before the
    // first configuration.
    for (i, (src, period, start)) in
        [("S1", 1_700u64, 120_000u64), ("S2", 1_900, 125_000), ("S4", 2_100, 130_000), ("S3", 2_300, 135_000)]
            .into_iter()
            .enumerate()
    {
        sc.be_flows.push(BeFlowDef {
            name: format!("BE-{src}"),
            source: src.into(),
            dest: "Dest".into(),
            period_us: period,
            start_us: start,
            src_port: 50_000 + i as u16,
            dst_port: 60_000,
        });
    }
    sc.configs = vec![
        ConfigDef { label: "C1".into(), at_us: 200_000, delays: vec![("S1".into(), 0)] },
        ConfigDef {
            label: "C2".into(),
            at_us: 300_000,
            delays: vec![("S1".into(), 0), ("S2".into(), 75)],
        },
        ConfigDef {
            label: "C3".into(),
            at_us: 400_000,
            delays: vec![("S1".into(), 175), ("S2".into(), 0), ("S3".into(), 0)],
        },
        ConfigDef {
            label: "C4".into(),
            at_us: 500_000,
            delays: vec![("S2".into(), 0), ("S3".into(), 0)],
        },
        ConfigDef { label: "C5".into(), at_us: 600_000, delays: vec![("S3".into(), 0)] },
        ConfigDef { label: "C6".into(), at_us: 700_000, delays: vec![] },
    ];
    sc.reservations.push(SrDef { flow: "S4".into(), at_us: 100_000, step_us: 50 });
    sc.tsn_static_config = Some("C3".into());
    sc
}
