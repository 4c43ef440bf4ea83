//! The switch pipeline: ingress filtering, flow-table lookup, egress
//! priority queues governed by gate control lists and credit-based shaping,
//! and scheduled endpoint senders.

use std::collections::VecDeque;
use std::io::Write;

use thiserror::Error;

use crate::desim::{format_us, Nanos};
use crate::netmodel::{Frame, HeaderTuple};

// ---------------------------------------------------------------------------
// Flow rules
// ---------------------------------------------------------------------------

/// A header match pattern; `None` fields are wildcards.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HeaderPattern {
    pub dst_mac: Option<u64>,
    pub src_mac: Option<u64>,
    pub ethertype: Option<u16>,
    pub vlan_id: Option<u16>,
    pub pcp: Option<u8>,
    pub src_ip: Option<u32>,
    pub dst_ip: Option<u32>,
    pub dscp: Option<u8>,
    pub ip_proto: Option<u8>,
    pub src_port: Option<u16>,
    pub dst_port: Option<u16>,
}

impl HeaderPattern {
    /// Match-all pattern.
    pub fn any() -> Self {
        Self::default()
    }

    /// Exact pattern for every field present in the tuple; absent optional
    /// fields stay wildcarded.
    pub fn exact(h: &HeaderTuple) -> Self {
        Self {
            dst_mac: Some(h.dst_mac),
            src_mac: Some(h.src_mac),
            ethertype: Some(h.ethertype),
            vlan_id: h.vlan_id,
            pcp: Some(h.pcp),
            src_ip: h.src_ip,
            dst_ip: h.dst_ip,
            dscp: h.dscp,
            ip_proto: h.ip_proto,
            src_port: h.src_port,
            dst_port: h.dst_port,
        }
    }

    pub fn matches(&self, h: &HeaderTuple) -> bool {
        fn f<T: PartialEq + Copy>(pat: Option<T>, val: T) -> bool {
            pat.is_none_or(|p| p == val)
        }
        fn fo<T: PartialEq + Copy>(pat: Option<T>, val: Option<T>) -> bool {
            match (pat, val) {
                (None, _) => true,
                (Some(p), Some(v)) => p == v,
                (Some(_), None) => false,
            }
        }
        f(self.dst_mac, h.dst_mac)
            && f(self.src_mac, h.src_mac)
            && f(self.ethertype, h.ethertype)
            && fo(self.vlan_id, h.vlan_id)
            && f(self.pcp, h.pcp)
            && fo(self.src_ip, h.src_ip)
            && fo(self.dst_ip, h.dst_ip)
            && fo(self.dscp, h.dscp)
            && fo(self.ip_proto, h.ip_proto)
            && fo(self.src_port, h.src_port)
            && fo(self.dst_port, h.dst_port)
    }
}

/// Forwarding action of a flow rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    ForwardTo(u32),
    ToController,
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    Static,
    Dynamic,
}

/// One flow-table entry. Rules persist (no idle timeout).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowRule {
    pub pattern: HeaderPattern,
    pub in_port: Option<u32>,
    pub priority: i32,
    pub actions: Vec<Action>,
    pub table: TableKind,
}

impl FlowRule {
    fn matches(&self, h: &HeaderTuple, in_port: u32) -> bool {
        self.in_port.is_none_or(|p| p == in_port) && self.pattern.matches(h)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("static flow table is sealed after boot")]
pub struct StaticSealed;

/// The two-table lookup pipeline of one switch. The static table is
/// populated at boot and immutable afterwards; the dynamic table is managed
/// by the controller at run time.
#[derive(Debug, Default)]
pub struct FlowTables {
    statics: Vec<FlowRule>,
    dynamics: Vec<FlowRule>,
    sealed: bool,
}

impl FlowTables {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn install_static(&mut self, mut rule: FlowRule) -> Result<(), StaticSealed> {
        if self.sealed {
            return Err(StaticSealed);
        }
        rule.table = TableKind::Static;
        self.statics.push(rule);
        Ok(())
    }

    /// Seal the static table; boot is over.
    pub fn seal(&mut self) {
        self.sealed = true;
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn install_dynamic(&mut self, mut rule: FlowRule) {
        rule.table = TableKind::Dynamic;
        self.dynamics.push(rule);
    }

    pub fn static_rules(&self) -> &[FlowRule] {
        &self.statics
    }

    pub fn dynamic_rules(&self) -> &[FlowRule] {
        &self.dynamics
    }

    /// Static table first, then dynamic; within a table the highest rule
    /// priority wins and ties break toward the earliest installation.
    /// No match means drop.
    pub fn lookup(&self, headers: &HeaderTuple, in_port: u32) -> Option<&FlowRule> {
        for table in [&self.statics, &self.dynamics] {
            let mut best: Option<&FlowRule> = None;
            for rule in table.iter() {
                if rule.matches(headers, in_port)
                    && best.is_none_or(|b| rule.priority > b.priority)
                {
                    best = Some(rule);
                }
            }
            if best.is_some() {
                return best;
            }
        }
        None
    }
}

// ---------------------------------------------------------------------------
// Stream reservation table
// ---------------------------------------------------------------------------

/// Per-stream bandwidth reservation state on a switch.
#[derive(Debug, Clone)]
pub struct SRTableEntry {
    pub stream_id: u32,
    pub pattern: HeaderPattern,
    pub reserved_bps: u64,
    /// Egress ports the stream leaves through.
    pub ports: Vec<u32>,
}

#[derive(Debug, Default)]
pub struct SRTable {
    pub entries: Vec<SRTableEntry>,
}

impl SRTable {
    /// Total reserved bandwidth on one egress port; must never exceed the
    /// link rate (checked at admission).
    pub fn reserved_on_port(&self, port: u32) -> u64 {
        self.entries
            .iter()
            .filter(|e| e.ports.contains(&port))
            .map(|e| e.reserved_bps)
            .sum()
    }
}

// ---------------------------------------------------------------------------
// Gate control lists
// ---------------------------------------------------------------------------

/// One GCL entry: which priority gates are open (bit i = queue i) and for
/// how long.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GclEntry {
    pub bitmap: u8,
    pub duration_ns: Nanos,
}

/// Periodic per-port gate schedule. Entry durations must sum to the period.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GateControlList {
    pub period_ns: Nanos,
    pub base_time_ns: Nanos,
    pub entries: Vec<GclEntry>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GclError {
    #[error("period must be positive")]
    ZeroPeriod,
    #[error("entry list must be non-empty")]
    Empty,
    #[error("entry durations sum to {sum} ns, period is {period} ns")]
    DurationSum { sum: Nanos, period: Nanos },
}

impl GateControlList {
    /// The unconfigured default: one entry, all gates open.
    pub fn all_open(period_ns: Nanos) -> Self {
        Self {
            period_ns,
            base_time_ns: 0,
            entries: vec![GclEntry { bitmap: 0xFF, duration_ns: period_ns }],
        }
    }

    pub fn validate(&self) -> Result<(), GclError> {
        if self.period_ns == 0 {
            return Err(GclError::ZeroPeriod);
        }
        if self.entries.is_empty() {
            return Err(GclError::Empty);
        }
        let sum: Nanos = self.entries.iter().map(|e| e.duration_ns).sum();
        if sum != self.period_ns {
            return Err(GclError::DurationSum { sum, period: self.period_ns });
        }
        Ok(())
    }

    pub fn phase_of(&self, t_ns: Nanos) -> Nanos {
        let p = self.period_ns as i128;
        ((t_ns as i128 - self.base_time_ns as i128).rem_euclid(p)) as Nanos
    }

    pub fn bitmap_at(&self, t_ns: Nanos) -> u8 {
        let mut phase = self.phase_of(t_ns);
        for e in &self.entries {
            if phase < e.duration_ns {
                return e.bitmap;
            }
            phase -= e.duration_ns;
        }
        unreachable!("durations sum to period");
    }

    pub fn open_at(&self, t_ns: Nanos, pcp: u8) -> bool {
        self.bitmap_at(t_ns) & (1 << pcp) != 0
    }

    /// True if the gate for `pcp` is open in every entry.
    pub fn always_open(&self, pcp: u8) -> bool {
        self.entries.iter().all(|e| e.bitmap & (1 << pcp) != 0)
    }

    /// Gate-closed time for `pcp` summed over one period.
    pub fn closed_ns_per_period(&self, pcp: u8) -> Nanos {
        self.entries
            .iter()
            .filter(|e| e.bitmap & (1 << pcp) == 0)
            .map(|e| e.duration_ns)
            .sum()
    }

    /// Earliest `t' >= t` at which the gate for `pcp` is open for the whole
    /// interval `[t', t' + need_ns)`. `None` if no open run of that length
    /// exists (scans three periods, enough for any run shorter than two
    /// periods).
    pub fn next_fit(&self, t_ns: Nanos, pcp: u8, need_ns: Nanos) -> Option<Nanos> {
        if self.always_open(pcp) {
            return Some(t_ns);
        }
        // Absolute open segments across three periods starting at the
        // period containing t.
        let phase = self.phase_of(t_ns);
        let period_start = t_ns - phase;
        let mut runs: Vec<(Nanos, Nanos)> = Vec::new();
        let mut cursor = period_start;
        for _ in 0..3 {
            for e in &self.entries {
                let open = e.bitmap & (1 << pcp) != 0;
                if open {
                    match runs.last_mut() {
                        Some((_, end)) if *end == cursor => *end = cursor + e.duration_ns,
                        _ => runs.push((cursor, cursor + e.duration_ns)),
                    }
                }
                cursor += e.duration_ns;
            }
        }
        for (start, end) in runs {
            let candidate = start.max(t_ns);
            if candidate + need_ns <= end {
                return Some(candidate);
            }
        }
        None
    }

    /// Debug dump: `period_us,base_time_us` then one line per entry
    /// `offset_us,duration_us,bitmap_hex`.
    pub fn dump(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "{},{}", format_us(self.period_ns), format_us(self.base_time_ns))?;
        let mut offset = 0;
        for e in &self.entries {
            writeln!(w, "{},{},{:02x}", format_us(offset), format_us(e.duration_ns), e.bitmap)?;
            offset += e.duration_ns;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Ingress filtering
// ---------------------------------------------------------------------------

/// Per-stream ingress policing entry. The window is phase-relative within
/// the schedule period.
#[derive(Debug, Clone)]
pub struct IngressEntry {
    pub pattern: HeaderPattern,
    /// `[offset, offset + len)` window within the period.
    pub window: Option<(Nanos, Nanos)>,
    pub max_frame_bytes: Option<u32>,
}

/// Ingress filter set of one port or switch; an empty set passes everything.
#[derive(Debug, Clone, Default)]
pub struct IngressFilter {
    pub period_ns: Nanos,
    pub entries: Vec<IngressEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngressDropReason {
    MissedWindow,
    Oversize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngressVerdict {
    Accept,
    Drop(IngressDropReason),
}

/// Check a frame against the filter at its arrival time. A frame is dropped
/// iff a matching entry's window or size check fails; with no matching
/// entry it is accepted.
pub fn ingress_check(filter: &IngressFilter, frame: &Frame, arrival_ns: Nanos) -> IngressVerdict {
    for e in &filter.entries {
        if !e.pattern.matches(&frame.headers) {
            continue;
        }
        if let Some(max) = e.max_frame_bytes {
            if frame.wire_bytes > max {
                return IngressVerdict::Drop(IngressDropReason::Oversize);
            }
        }
        if let Some((offset, len)) = e.window {
            let phase = if filter.period_ns == 0 { 0 } else { arrival_ns % filter.period_ns };
            if phase < offset || phase >= offset + len {
                return IngressVerdict::Drop(IngressDropReason::MissedWindow);
            }
        }
    }
    IngressVerdict::Accept
}

// ---------------------------------------------------------------------------
// Credit-based shaper
// ---------------------------------------------------------------------------

/// What the shaped queue is doing over an update interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CbsEvent {
    /// Queue empty.
    Idle,
    /// Frame from this queue on the wire.
    Transmitting,
    /// Frame queued and waiting (gate closed, link busy, or negative credit).
    Waiting,
}

/// Credit state in nanobits (bits/s multiplied by nanoseconds), kept as an
/// integer so long runs stay exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CbsState {
    pub credit_nanobits: i128,
    pub idle_slope_bps: u64,
    /// idle slope minus link rate; negative.
    pub send_slope_bps: i64,
}

impl CbsState {
    pub fn new(idle_slope_bps: u64, link_bps: u64) -> Self {
        Self {
            credit_nanobits: 0,
            idle_slope_bps,
            send_slope_bps: idle_slope_bps as i64 - link_bps as i64,
        }
    }

    pub fn credit_bits(&self) -> f64 {
        self.credit_nanobits as f64 / 1e9
    }
}

/// Advance shaper credit over `dt_ns` spent in `event` state.
///
/// Waiting accrues the idle slope, transmitting accrues the send slope, and
/// an idle (empty) queue recovers negative credit to zero at the idle slope
/// but never above zero.
pub fn cbs_update(mut state: CbsState, event: CbsEvent, dt_ns: Nanos) -> CbsState {
    let dt = dt_ns as i128;
    match event {
        CbsEvent::Waiting => state.credit_nanobits += state.idle_slope_bps as i128 * dt,
        CbsEvent::Transmitting => state.credit_nanobits += state.send_slope_bps as i128 * dt,
        CbsEvent::Idle => {
            if state.credit_nanobits < 0 {
                state.credit_nanobits =
                    (state.credit_nanobits + state.idle_slope_bps as i128 * dt).min(0);
            }
        }
    }
    state
}

/// Forfeit surplus credit when the queue runs empty.
pub fn cbs_on_queue_emptied(mut state: CbsState) -> CbsState {
    if state.credit_nanobits > 0 {
        state.credit_nanobits = 0;
    }
    state
}

// ---------------------------------------------------------------------------
// Egress port
// ---------------------------------------------------------------------------

/// A queued frame with its enqueue time.
#[derive(Debug, Clone)]
pub struct QueuedFrame {
    pub frame: Frame,
    pub enqueued_ns: Nanos,
}

/// One egress port: 8 unbounded priority queues, a gate control list,
/// optional per-queue credit shapers, and the transmission bookkeeping for
/// one link direction.
#[derive(Debug)]
pub struct EgressPort {
    pub gcl: GateControlList,
    pub bandwidth_bps: u64,
    pub ifg_ns: Nanos,
    queues: [VecDeque<QueuedFrame>; 8],
    shapers: [Option<CbsState>; 8],
    shaper_sync_ns: [Nanos; 8],
    /// Link busy until this time (transmission end + inter-frame gap).
    pub busy_until_ns: Nanos,
}

impl EgressPort {
    pub fn new(gcl: GateControlList, bandwidth_bps: u64, ifg_ns: Nanos) -> Self {
        Self {
            gcl,
            bandwidth_bps,
            ifg_ns,
            queues: Default::default(),
            shapers: [None; 8],
            shaper_sync_ns: [0; 8],
            busy_until_ns: 0,
        }
    }

    pub fn set_shaper(&mut self, pcp: u8, idle_slope_bps: u64) {
        self.shapers[pcp as usize] = Some(CbsState::new(idle_slope_bps, self.bandwidth_bps));
    }

    pub fn shaper(&self, pcp: u8) -> Option<&CbsState> {
        self.shapers[pcp as usize].as_ref()
    }

    pub fn queue_len(&self, pcp: u8) -> usize {
        self.queues[pcp as usize].len()
    }

    pub fn queued_total(&self) -> usize {
        self.queues.iter().map(|q| q.len()).sum()
    }

    fn sync_shaper(&mut self, pcp: u8, now_ns: Nanos) {
        let q = pcp as usize;
        if let Some(state) = self.shapers[q] {
            let last = self.shaper_sync_ns[q];
            if now_ns > last {
                let event =
                    if self.queues[q].is_empty() { CbsEvent::Idle } else { CbsEvent::Waiting };
                self.shapers[q] = Some(cbs_update(state, event, now_ns - last));
                self.shaper_sync_ns[q] = now_ns;
            }
        }
    }

    /// Append a frame to its priority queue (FIFO, unbounded).
    pub fn enqueue_egress(&mut self, frame: Frame, now_ns: Nanos) {
        let pcp = frame.headers.pcp.min(7);
        self.sync_shaper(pcp, now_ns);
        self.queues[pcp as usize].push_back(QueuedFrame { frame, enqueued_ns: now_ns });
    }

    fn frame_need_ns(&self, frame: &Frame) -> Nanos {
        frame.transmission_ns(self.bandwidth_bps) + self.ifg_ns
    }

    /// Pick the queue allowed to transmit at `now`: the highest priority
    /// whose head-of-line frame has (a) an open gate, (b) enough remaining
    /// open time for the full transmission plus inter-frame gap, and (c)
    /// non-negative credit if the queue is shaped. The link must be idle.
    pub fn select_transmission(&mut self, now_ns: Nanos) -> Option<u8> {
        debug_assert!(self.busy_until_ns <= now_ns, "link must be idle");
        for pcp in (0..8u8).rev() {
            let q = pcp as usize;
            let Some(head) = self.queues[q].front() else { continue };
            let need = self.frame_need_ns(&head.frame);
            if self.gcl.next_fit(now_ns, pcp, need) != Some(now_ns) {
                continue;
            }
            self.sync_shaper(pcp, now_ns);
            if let Some(s) = self.shapers[q] {
                if s.credit_nanobits < 0 {
                    continue;
                }
            }
            return Some(pcp);
        }
        None
    }

    /// Dequeue the head of `pcp` and account the transmission. Returns the
    /// frame and its transmission duration (gap excluded).
    pub fn start_transmission(&mut self, pcp: u8, now_ns: Nanos) -> (Frame, Nanos) {
        let q = pcp as usize;
        self.sync_shaper(pcp, now_ns);
        let head = self.queues[q].pop_front().expect("selected queue non-empty");
        let trans = head.frame.transmission_ns(self.bandwidth_bps);
        if let Some(state) = self.shapers[q] {
            // Account the whole transmission as a point update and move the
            // shaper clock past it; no queries happen while the link is busy.
            let mut s = cbs_update(state, CbsEvent::Transmitting, trans);
            if self.queues[q].is_empty() {
                s = cbs_on_queue_emptied(s);
            }
            self.shapers[q] = Some(s);
            self.shaper_sync_ns[q] = now_ns + trans;
        }
        self.busy_until_ns = now_ns + trans + self.ifg_ns;
        (head.frame, trans)
    }

    /// Earliest time at which a transmission might start, or `None` if all
    /// queues are empty or permanently gated off.
    pub fn next_wake(&mut self, now_ns: Nanos) -> Option<Nanos> {
        if self.busy_until_ns > now_ns {
            return Some(self.busy_until_ns);
        }
        let mut best: Option<Nanos> = None;
        for pcp in 0..8u8 {
            let q = pcp as usize;
            let Some(head) = self.queues[q].front() else { continue };
            let need = self.frame_need_ns(&head.frame);
            let Some(gate_t) = self.gcl.next_fit(now_ns, pcp, need) else { continue };
            self.sync_shaper(pcp, now_ns);
            let credit_t = match self.shapers[q] {
                Some(s) if s.credit_nanobits < 0 => {
                    let deficit = (-s.credit_nanobits) as u128;
                    let slope = s.idle_slope_bps as u128;
                    now_ns + deficit.div_ceil(slope) as Nanos
                }
                _ => now_ns,
            };
            let candidate = gate_t.max(credit_t);
            best = Some(best.map_or(candidate, |b: Nanos| b.min(candidate)));
        }
        best
    }
}

// ---------------------------------------------------------------------------
// Scheduled endpoint senders
// ---------------------------------------------------------------------------

/// Periodic scheduled emission of a synchronous stream by an endpoint:
/// `frames_per_period` frames per period, the first at `phase_ns` and each
/// further one `frame_gap_ns` later, while inside the active interval.
#[derive(Debug, Clone)]
pub struct ScheduledSender {
    pub name: String,
    pub cf_id: Option<u32>,
    pub pcp: u8,
    pub wire_bytes: u32,
    pub phase_ns: Nanos,
    pub period_ns: Nanos,
    pub frames_per_period: u32,
    pub frame_gap_ns: Nanos,
    pub active_from_ns: Nanos,
    pub active_until_ns: Nanos,
}

impl ScheduledSender {
    /// Smallest emission instant `>= t`, if any remains in the active
    /// interval.
    pub fn next_emission(&self, t_ns: Nanos) -> Option<Nanos> {
        let t = t_ns.max(self.active_from_ns);
        let mut n = t.saturating_sub(self.phase_ns) / self.period_ns;
        loop {
            for k in 0..self.frames_per_period as u64 {
                let cand = n * self.period_ns + self.phase_ns + k * self.frame_gap_ns;
                if cand >= t {
                    if cand < self.active_until_ns {
                        return Some(cand);
                    }
                    return None;
                }
            }
            n += 1;
            if n * self.period_ns + self.phase_ns >= self.active_until_ns {
                return None;
            }
        }
    }

    /// All emission instants in the active interval.
    pub fn emissions(&self) -> Vec<Nanos> {
        let mut out = Vec::new();
        let mut t = self.active_from_ns;
        while let Some(e) = self.next_emission(t) {
            out.push(e);
            t = e + 1;
        }
        out
    }

    /// The sender-side gate schedule protecting this stream's window: a
    /// guard band before the window, the window exclusive to the stream's
    /// priority, the stream's gate closed elsewhere.
    pub fn host_gcl(&self, guard_ns: Nanos) -> GateControlList {
        let window_len = self.frames_per_period as u64 * self.frame_gap_ns;
        let window = (self.phase_ns, window_len);
        let guard_start = self.phase_ns.saturating_sub(guard_ns);
        let open = !(1u8 << self.pcp);
        let mut entries = Vec::new();
        let mut push = |bitmap: u8, len: Nanos| {
            if len > 0 {
                entries.push(GclEntry { bitmap, duration_ns: len });
            }
        };
        push(open, guard_start);
        push(0x00, self.phase_ns - guard_start);
        push(1 << self.pcp, window.1);
        push(open, self.period_ns - (self.phase_ns + window.1));
        GateControlList { period_ns: self.period_ns, base_time_ns: 0, entries }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::HeaderTuple;

    fn frame(pcp: u8, wire: u32, id: u64) -> Frame {
        Frame::new(HeaderTuple::l2(1, 2, 0x0800, None, pcp), 100, wire, id, None).unwrap()
    }

    const BW: u64 = 100_000_000;
    const IFG: Nanos = 960;

    // -- flow tables --------------------------------------------------------

    #[test]
    fn lookup_with_no_rules_drops() {
        let t = FlowTables::new();
        assert!(t.lookup(&frame(0, 64, 0).headers, 0).is_none());
    }

    #[test]
    fn static_table_shadows_dynamic() {
        let mut t = FlowTables::new();
        let h = frame(0, 64, 0).headers;
        t.install_static(FlowRule {
            pattern: HeaderPattern::exact(&h),
            in_port: None,
            priority: 0,
            actions: vec![Action::ForwardTo(2)],
            table: TableKind::Static,
        })
        .unwrap();
        t.seal();
        t.install_dynamic(FlowRule {
            pattern: HeaderPattern::exact(&h),
            in_port: None,
            priority: 100,
            actions: vec![Action::Drop],
            table: TableKind::Dynamic,
        });
        let r = t.lookup(&h, 0).unwrap();
        assert_eq!(r.actions, vec![Action::ForwardTo(2)]);
        assert_eq!(r.table, TableKind::Static);
    }

    #[test]
    fn higher_priority_wins_and_ties_break_to_earliest() {
        let mut t = FlowTables::new();
        let h = frame(0, 64, 0).headers;
        let rule = |prio: i32, port: u32| FlowRule {
            pattern: HeaderPattern::any(),
            in_port: None,
            priority: prio,
            actions: vec![Action::ForwardTo(port)],
            table: TableKind::Dynamic,
        };
        t.install_dynamic(rule(5, 1));
        t.install_dynamic(rule(10, 2));
        t.install_dynamic(rule(10, 3));
        assert_eq!(t.lookup(&h, 0).unwrap().actions, vec![Action::ForwardTo(2)]);
    }

    #[test]
    fn sealed_static_table_rejects_installs() {
        let mut t = FlowTables::new();
        t.seal();
        let r = t.install_static(FlowRule {
            pattern: HeaderPattern::any(),
            in_port: None,
            priority: 0,
            actions: vec![Action::Drop],
            table: TableKind::Static,
        });
        assert_eq!(r, Err(StaticSealed));
    }

    #[test]
    fn in_port_restricts_rule_match() {
        let mut t = FlowTables::new();
        let h = frame(0, 64, 0).headers;
        t.install_static(FlowRule {
            pattern: HeaderPattern::exact(&h),
            in_port: Some(1),
            priority: 0,
            actions: vec![Action::ForwardTo(2)],
            table: TableKind::Static,
        })
        .unwrap();
        assert!(t.lookup(&h, 1).is_some());
        assert!(t.lookup(&h, 3).is_none());
    }

    // -- gate control lists -------------------------------------------------

    fn gcl_with_window(period: Nanos, start: Nanos, len: Nanos, pcp: u8) -> GateControlList {
        let open = !(1u8 << pcp);
        GateControlList {
            period_ns: period,
            base_time_ns: 0,
            entries: vec![
                GclEntry { bitmap: open, duration_ns: start },
                GclEntry { bitmap: 1 << pcp, duration_ns: len },
                GclEntry { bitmap: open, duration_ns: period - start - len },
            ],
        }
    }

    #[test]
    fn default_gcl_is_all_open() {
        let g = GateControlList::all_open(1_000_000);
        g.validate().unwrap();
        for pcp in 0..8 {
            assert!(g.always_open(pcp));
            assert_eq!(g.closed_ns_per_period(pcp), 0);
            assert_eq!(g.next_fit(123, pcp, 500_000_000), Some(123));
        }
    }

    #[test]
    fn gcl_duration_sum_is_checked() {
        let g = GateControlList {
            period_ns: 1_000,
            base_time_ns: 0,
            entries: vec![GclEntry { bitmap: 0xFF, duration_ns: 999 }],
        };
        assert_eq!(g.validate(), Err(GclError::DurationSum { sum: 999, period: 1_000 }));
    }

    #[test]
    fn next_fit_respects_window_boundaries() {
        let g = gcl_with_window(1_000_000, 450_000, 123_360, 5);
        // Inside the window with room.
        assert_eq!(g.next_fit(450_000, 5, 123_360), Some(450_000));
        // Not enough room left: pushed to the next period's window.
        assert_eq!(g.next_fit(450_001, 5, 123_360), Some(1_450_000));
        // Before the window: waits for the window.
        assert_eq!(g.next_fit(100_000, 5, 123_360), Some(450_000));
        // Other priorities are closed during the window.
        assert_eq!(g.next_fit(500_000, 0, 1_000), Some(573_360));
        // A need longer than any open run is impossible.
        assert_eq!(g.next_fit(0, 5, 200_000), None);
    }

    #[test]
    fn next_fit_merges_runs_across_the_period_wrap() {
        // Open for pcp 0 except [100, 200) us; the run from 200 us wraps
        // through the period boundary to 100 us of the next period.
        let g = GateControlList {
            period_ns: 1_000_000,
            base_time_ns: 0,
            entries: vec![
                GclEntry { bitmap: 0xFF, duration_ns: 100_000 },
                GclEntry { bitmap: 0xFE, duration_ns: 100_000 },
                GclEntry { bitmap: 0xFF, duration_ns: 800_000 },
            ],
        };
        assert_eq!(g.next_fit(200_000, 0, 850_000), Some(200_000));
        assert_eq!(g.next_fit(0, 0, 150_000), Some(200_000));
    }

    #[test]
    fn gcl_dump_format() {
        let g = gcl_with_window(1_000_000, 450_000, 123_360, 5);
        let mut buf = Vec::new();
        g.dump(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(
            s,
            "1000.000,0.000\n0.000,450.000,df\n450.000,123.360,20\n573.360,426.640,df\n"
        );
    }

    // -- ingress filtering --------------------------------------------------

    #[test]
    fn empty_filter_accepts_everything() {
        let f = IngressFilter::default();
        assert_eq!(ingress_check(&f, &frame(5, 1522, 1), 12345), IngressVerdict::Accept);
    }

    #[test]
    fn window_miss_drops() {
        let f = IngressFilter {
            period_ns: 1_000_000,
            entries: vec![IngressEntry {
                pattern: HeaderPattern::any(),
                window: Some((450_000, 125_000)),
                max_frame_bytes: None,
            }],
        };
        assert_eq!(
            ingress_check(&f, &frame(5, 1522, 1), 600_000),
            IngressVerdict::Drop(IngressDropReason::MissedWindow)
        );
        assert_eq!(ingress_check(&f, &frame(5, 1522, 1), 2_500_000), IngressVerdict::Accept);
    }

    #[test]
    fn oversize_drops() {
        let f = IngressFilter {
            period_ns: 1_000_000,
            entries: vec![IngressEntry {
                pattern: HeaderPattern::any(),
                window: None,
                max_frame_bytes: Some(128),
            }],
        };
        assert_eq!(
            ingress_check(&f, &frame(5, 1522, 1), 0),
            IngressVerdict::Drop(IngressDropReason::Oversize)
        );
        assert_eq!(ingress_check(&f, &frame(5, 128, 1), 0), IngressVerdict::Accept);
    }

    // -- credit-based shaping -----------------------------------------------

    #[test]
    fn cbs_slopes_accumulate_exactly() {
        // Reservation of one max frame per millisecond.
        let s = CbsState::new(12_336_000, BW);
        let s2 = cbs_update(s, CbsEvent::Waiting, 100_000);
        // 12.336 Mbit/s for 100 us = +1233.6 bit.
        assert_eq!(s2.credit_nanobits, 1_233_600_000_000);
        let s3 = cbs_update(CbsState::new(12_336_000, BW), CbsEvent::Transmitting, 122_400);
        // send slope -87.664 Mbit/s for 122.4 us = -10730.0736 bit.
        assert_eq!(s3.send_slope_bps, -87_664_000);
        assert_eq!(s3.credit_nanobits, -10_730_073_600_000);
    }

    #[test]
    fn cbs_resets_positive_credit_on_empty_queue() {
        let mut s = CbsState::new(12_336_000, BW);
        s.credit_nanobits = 42;
        assert_eq!(cbs_on_queue_emptied(s).credit_nanobits, 0);
        s.credit_nanobits = -42;
        assert_eq!(cbs_on_queue_emptied(s).credit_nanobits, -42);
    }

    #[test]
    fn cbs_idle_recovery_caps_at_zero() {
        let mut s = CbsState::new(12_336_000, BW);
        s.credit_nanobits = -1_000;
        let s2 = cbs_update(s, CbsEvent::Idle, 1_000_000);
        assert_eq!(s2.credit_nanobits, 0);
    }

    // -- egress port --------------------------------------------------------

    #[test]
    fn strict_priority_selection() {
        let mut p = EgressPort::new(GateControlList::all_open(1_000_000), BW, IFG);
        p.enqueue_egress(frame(1, 64, 1), 0);
        p.enqueue_egress(frame(5, 64, 2), 0);
        assert_eq!(p.select_transmission(0), Some(5));
        let (f, trans) = p.start_transmission(5, 0);
        assert_eq!(f.frame_id, 2);
        assert_eq!(trans, 5_760);
        assert_eq!(p.busy_until_ns, 5_760 + IFG);
    }

    #[test]
    fn same_priority_is_fifo() {
        let mut p = EgressPort::new(GateControlList::all_open(1_000_000), BW, IFG);
        p.enqueue_egress(frame(3, 64, 1), 0);
        p.enqueue_egress(frame(3, 64, 2), 0);
        let (f, _) = p.start_transmission(3, 0);
        assert_eq!(f.frame_id, 1);
    }

    #[test]
    fn queues_are_unbounded() {
        let mut p = EgressPort::new(GateControlList::all_open(1_000_000), BW, IFG);
        for i in 0..10_000 {
            p.enqueue_egress(frame(0, 64, i), 0);
        }
        assert_eq!(p.queue_len(0), 10_000);
    }

    #[test]
    fn guard_band_blocks_everything() {
        let mut g = GateControlList::all_open(1_000_000);
        g.entries = vec![
            GclEntry { bitmap: 0x00, duration_ns: 500_000 },
            GclEntry { bitmap: 0xFF, duration_ns: 500_000 },
        ];
        let mut p = EgressPort::new(g, BW, IFG);
        p.enqueue_egress(frame(7, 64, 1), 0);
        assert_eq!(p.select_transmission(0), None);
        assert_eq!(p.next_wake(0), Some(500_000));
    }

    #[test]
    fn frame_not_fitting_remaining_open_time_is_held() {
        // pcp 7 open only [0, 50 us); a max frame needs 123.36 us.
        let g = GateControlList {
            period_ns: 1_000_000,
            base_time_ns: 0,
            entries: vec![
                GclEntry { bitmap: 0xFF, duration_ns: 50_000 },
                GclEntry { bitmap: 0x7F, duration_ns: 950_000 },
            ],
        };
        let mut p = EgressPort::new(g.clone(), BW, IFG);
        p.enqueue_egress(frame(7, 1522, 1), 0);
        assert_eq!(p.select_transmission(0), None);
        // A small frame fits.
        let mut p2 = EgressPort::new(g, BW, IFG);
        p2.enqueue_egress(frame(7, 64, 2), 0);
        assert_eq!(p2.select_transmission(0), Some(7));
    }

    #[test]
    fn negative_credit_defers_and_wakes_at_recovery() {
        let mut p = EgressPort::new(GateControlList::all_open(1_000_000), BW, IFG);
        p.set_shaper(4, 12_336_000);
        p.enqueue_egress(frame(4, 1522, 1), 0);
        assert_eq!(p.select_transmission(0), Some(4));
        p.start_transmission(4, 0);
        // Transmission over; next frame blocked on credit.
        p.enqueue_egress(frame(4, 1522, 2), 200_000);
        let wake = p.next_wake(200_000).unwrap();
        assert_eq!(p.select_transmission(200_000), None);
        // Empty-queue recovery ran from 122.4 us to 200 us; the remaining
        // deficit of 9772.8 bit recovers at 12.336 Mbit/s in 792218 ns.
        assert_eq!(wake, 200_000 + 792_218);
        assert_eq!(p.select_transmission(wake), Some(4));
    }

    #[test]
    fn lower_priority_proceeds_when_shaped_queue_lacks_credit() {
        let mut p = EgressPort::new(GateControlList::all_open(1_000_000), BW, IFG);
        p.set_shaper(4, 12_336_000);
        p.enqueue_egress(frame(4, 1522, 1), 0);
        p.start_transmission(4, 0);
        p.enqueue_egress(frame(4, 1522, 2), 200_000);
        p.enqueue_egress(frame(0, 64, 3), 200_000);
        assert_eq!(p.select_transmission(200_000), Some(0));
    }

    // -- scheduled senders --------------------------------------------------

    #[test]
    fn scheduled_sender_emission_patterns() {
        let mk = |phase_us: u64, fpp: u32| ScheduledSender {
            name: "s".into(),
            cf_id: Some(1),
            pcp: 5,
            wire_bytes: 1522,
            phase_ns: phase_us * 1_000,
            period_ns: 1_000_000,
            frames_per_period: fpp,
            frame_gap_ns: 123_360,
            active_from_ns: 200_000_000,
            active_until_ns: 203_000_000,
        };
        // One full-size frame per period at 450 us.
        let s1 = mk(450, 1);
        assert_eq!(
            s1.emissions(),
            vec![200_450_000, 201_450_000, 202_450_000]
        );
        // One frame per period at 250 us.
        let s2 = mk(250, 1);
        assert_eq!(s2.emissions()[0], 200_250_000);
        // Two frames per period at 500 us, the second one frame slot later.
        let s3 = mk(500, 2);
        assert_eq!(
            &s3.emissions()[..4],
            &[200_500_000, 200_623_360, 201_500_000, 201_623_360]
        );
    }

    #[test]
    fn host_gcl_guards_the_window() {
        let s = ScheduledSender {
            name: "s".into(),
            cf_id: None,
            pcp: 5,
            wire_bytes: 1522,
            phase_ns: 450_000,
            period_ns: 1_000_000,
            frames_per_period: 1,
            frame_gap_ns: 123_360,
            active_from_ns: 0,
            active_until_ns: 1,
        };
        let g = s.host_gcl(123_360);
        g.validate().unwrap();
        // Guard band closed for everyone.
        assert_eq!(g.bitmap_at(400_000), 0x00);
        // Window exclusive to pcp 5.
        assert_eq!(g.bitmap_at(500_000), 0x20);
        // Elsewhere open for everyone but pcp 5.
        assert_eq!(g.bitmap_at(100_000), 0xDF);
        assert_eq!(g.bitmap_at(700_000), 0xDF);
    }
}
