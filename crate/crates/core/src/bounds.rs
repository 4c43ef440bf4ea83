//! Slot-based schedule construction and worst-case latency bounds.
//!
//! Synchronous streams get exclusive per-hop transmission windows derived
//! from the sender phase plus per-hop store-and-forward shift; everything
//! else rides in the gaps. The same window model yields closed-form latency
//! values for scheduled traffic and worst-case bounds for asynchronous
//! traffic.

use std::collections::BTreeMap;
use std::io::Write;

use thiserror::Error;

use crate::dataplane::{GateControlList, GclEntry};
use crate::desim::{format_us, Nanos};

/// Transmission time of a full-size frame at 100 Mbit/s.
pub const T_TRANS_MAX_NS: Nanos = 122_400;
/// Inter-frame gap at 100 Mbit/s (96 bit times).
pub const T_IFG_NS: Nanos = 960;
/// Guard region length: one full-size frame plus gap.
pub const GUARD_NS: Nanos = T_TRANS_MAX_NS + T_IFG_NS;
/// Switch store-and-forward processing delay.
pub const T_FWD_NS: Nanos = 3_000;
/// Window shift per switch hop: upstream transmission plus forwarding.
pub const HOP_SHIFT_NS: Nanos = T_TRANS_MAX_NS + T_FWD_NS;
/// Schedule period of the reference network.
pub const PERIOD_NS: Nanos = 1_000_000;
/// Occupancy of the smallest legal frame; open gaps shorter than this are
/// unusable and need no guard.
pub const MIN_FRAME_NEED_NS: Nanos = 5_760 + T_IFG_NS;

/// A port is identified by its device and egress port number.
pub type PortKey = (String, u32);

/// One scheduled stream: emission phase, frame pattern, and the switch
/// egress ports it crosses in path order.
#[derive(Debug, Clone)]
pub struct SyncFlowSpec {
    pub cf_id: u32,
    pub source: String,
    pub pcp: u8,
    pub wire_bytes: u32,
    pub phase_ns: Nanos,
    pub frames_per_period: u32,
    pub hops: Vec<PortKey>,
}

impl SyncFlowSpec {
    /// Length of the stream's window on every hop.
    pub fn window_len_ns(&self) -> Nanos {
        self.frames_per_period as Nanos * GUARD_NS
    }
}

/// An exclusive transmission window on one port.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotWindow {
    pub port: PortKey,
    pub cf_id: u32,
    pub pcp: u8,
    pub start_ns: Nanos,
    pub len_ns: Nanos,
}

impl SlotWindow {
    pub fn end_ns(&self) -> Nanos {
        self.start_ns + self.len_ns
    }
}

/// Per-hop windows of one stream when its first-hop window is pushed back
/// by `delay_ns` relative to the earliest possible position.
pub fn switch_windows(flow: &SyncFlowSpec, delay_ns: Nanos) -> Vec<SlotWindow> {
    let mut start = flow.phase_ns + HOP_SHIFT_NS + delay_ns;
    let mut out = Vec::with_capacity(flow.hops.len());
    for hop in &flow.hops {
        out.push(SlotWindow {
            port: hop.clone(),
            cf_id: flow.cf_id,
            pcp: flow.pcp,
            start_ns: start,
            len_ns: flow.window_len_ns(),
        });
        start += HOP_SHIFT_NS;
    }
    out
}

/// End-to-end latency of every frame of a scheduled stream under this
/// window model: the last-hop window start plus one transmission, measured
/// from the frame's emission instant. Identical for all frames of the
/// stream because windows shift rigidly per hop.
pub fn sync_latency_ns(flow: &SyncFlowSpec, delay_ns: Nanos) -> Nanos {
    flow.hops.len() as Nanos * HOP_SHIFT_NS + delay_ns + T_TRANS_MAX_NS
}

/// Worst-case end-to-end latency of an unscheduled stream crossing
/// `n_links` links and `n_switches` switches: one full schedule exclusion
/// (the largest per-port gate-closed time on the path) plus, per link, its
/// own transmission behind one full-size blocker, plus forwarding delays.
pub fn async_bound_ns(
    t_mi_max_ns: Nanos,
    n_links: u32,
    n_switches: u32,
    own_trans_ns: Nanos,
) -> Nanos {
    t_mi_max_ns
        + n_links as Nanos * (own_trans_ns + T_TRANS_MAX_NS + T_IFG_NS)
        + n_switches as Nanos * T_FWD_NS
}

// ---------------------------------------------------------------------------
// Gate-list construction
// ---------------------------------------------------------------------------

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("windows {a} and {b} overlap on port {device}:{port}")]
    Overlap { device: String, port: u32, a: u32, b: u32 },
    #[error("window of stream {cf_id} on {device}:{port} leaves the period")]
    OutOfPeriod { device: String, port: u32, cf_id: u32 },
    #[error("window of stream {cf_id} on {device}:{port} lacks guard coverage")]
    GuardGap { device: String, port: u32, cf_id: u32 },
    #[error("gate list on {device}:{port} is inconsistent: {source}")]
    Gcl { source: crate::dataplane::GclError, device: String, port: u32 },
}

/// Build one port's gate list from its windows.
///
/// Each window is exclusive to its stream's priority. A full guard region
/// (all gates closed) precedes a window when it fits between the previous
/// window and this one; when it does not, the sub-guard gap stays open,
/// which is safe because no frame shorter than the gap can exist and
/// transmissions never start unless they fit before the next closure.
/// Outside windows and guards, every gate is open except those of the
/// scheduled streams on this port.
pub fn build_port_gcl(period_ns: Nanos, windows: &[SlotWindow]) -> Result<GateControlList, ScheduleError> {
    let mut ws: Vec<&SlotWindow> = windows.iter().collect();
    ws.sort_by_key(|w| w.start_ns);
    let mut scheduled_mask = 0u8;
    for w in &ws {
        scheduled_mask |= 1 << w.pcp;
    }
    let open = !scheduled_mask;
    for pair in ws.windows(2) {
        if pair[1].start_ns < pair[0].end_ns() {
            return Err(ScheduleError::Overlap {
                device: pair[0].port.0.clone(),
                port: pair[0].port.1,
                a: pair[0].cf_id,
                b: pair[1].cf_id,
            });
        }
    }
    let mut entries = Vec::new();
    let mut cursor = 0;
    let push = |entries: &mut Vec<GclEntry>, bitmap: u8, len: Nanos| {
        if len > 0 {
            entries.push(GclEntry { bitmap, duration_ns: len });
        }
    };
    for w in &ws {
        if w.end_ns() > period_ns {
            return Err(ScheduleError::OutOfPeriod {
                device: w.port.0.clone(),
                port: w.port.1,
                cf_id: w.cf_id,
            });
        }
        let guard_start = w.start_ns.saturating_sub(GUARD_NS);
        if guard_start >= cursor && w.start_ns >= GUARD_NS {
            push(&mut entries, open, guard_start - cursor);
            push(&mut entries, 0x00, GUARD_NS);
        } else {
            push(&mut entries, open, w.start_ns - cursor);
        }
        push(&mut entries, 1 << w.pcp, w.len_ns);
        cursor = w.end_ns();
    }
    push(&mut entries, open, period_ns - cursor);
    if entries.is_empty() {
        entries.push(GclEntry { bitmap: 0xFF, duration_ns: period_ns });
    }
    let gcl = GateControlList { period_ns, base_time_ns: 0, entries };
    gcl.validate().map_err(|e| ScheduleError::Gcl {
        source: e,
        device: ws.first().map(|w| w.port.0.clone()).unwrap_or_default(),
        port: ws.first().map(|w| w.port.1).unwrap_or(0),
    })?;
    Ok(gcl)
}

/// A complete network schedule: the gate list of every scheduled-capable
/// port plus the windows it was built from.
#[derive(Debug, Clone)]
pub struct NetworkSchedule {
    pub period_ns: Nanos,
    pub gcls: BTreeMap<PortKey, GateControlList>,
    pub windows: Vec<SlotWindow>,
}

impl NetworkSchedule {
    /// Gate-closed time per period for the given priority on one port;
    /// zero for ports without a gate list.
    pub fn t_mi_ns(&self, port: &PortKey, pcp: u8) -> Nanos {
        self.gcls.get(port).map_or(0, |g| g.closed_ns_per_period(pcp))
    }

    /// Largest gate-closed time for `pcp` across a set of ports.
    pub fn t_mi_max_ns<'a>(&self, ports: impl IntoIterator<Item = &'a PortKey>, pcp: u8) -> Nanos {
        ports.into_iter().map(|p| self.t_mi_ns(p, pcp)).max().unwrap_or(0)
    }
}

/// Build the whole network's gate lists for one configuration.
///
/// `flows` pairs each active stream with its first-hop delay. Ports in
/// `all_ports` without any window get an all-open gate list.
pub fn build_network_schedule(
    period_ns: Nanos,
    flows: &[(&SyncFlowSpec, Nanos)],
    all_ports: &[PortKey],
) -> Result<NetworkSchedule, ScheduleError> {
    let mut windows: Vec<SlotWindow> = Vec::new();
    for (flow, delay) in flows {
        windows.extend(switch_windows(flow, *delay));
    }
    let mut by_port: BTreeMap<PortKey, Vec<SlotWindow>> = BTreeMap::new();
    for p in all_ports {
        by_port.entry(p.clone()).or_default();
    }
    for w in &windows {
        by_port.entry(w.port.clone()).or_default().push(w.clone());
    }
    let mut gcls = BTreeMap::new();
    for (port, ws) in &by_port {
        let gcl = if ws.is_empty() {
            GateControlList::all_open(period_ns)
        } else {
            build_port_gcl(period_ns, ws)?
        };
        gcls.insert(port.clone(), gcl);
    }
    Ok(NetworkSchedule { period_ns, gcls, windows })
}

/// Check a built schedule against the window invariants: windows exclusive
/// and non-overlapping, inside the period, and every window preceded either
/// by a full guard region or by an open gap too short for any frame.
pub fn validate_schedule(schedule: &NetworkSchedule) -> Result<(), ScheduleError> {
    let mut by_port: BTreeMap<&PortKey, Vec<&SlotWindow>> = BTreeMap::new();
    for w in &schedule.windows {
        by_port.entry(&w.port).or_default().push(w);
    }
    for (port, mut ws) in by_port {
        ws.sort_by_key(|w| w.start_ns);
        let gcl = schedule.gcls.get(port).expect("port has a gate list");
        gcl.validate().map_err(|e| ScheduleError::Gcl {
            source: e,
            device: port.0.clone(),
            port: port.1,
        })?;
        let mut prev_end = None::<Nanos>;
        for (i, w) in ws.iter().enumerate() {
            if w.end_ns() > schedule.period_ns {
                return Err(ScheduleError::OutOfPeriod {
                    device: port.0.clone(),
                    port: port.1,
                    cf_id: w.cf_id,
                });
            }
            if i > 0 && w.start_ns < ws[i - 1].end_ns() {
                return Err(ScheduleError::Overlap {
                    device: port.0.clone(),
                    port: port.1,
                    a: ws[i - 1].cf_id,
                    b: w.cf_id,
                });
            }
            // Exclusivity plus guard coverage.
            let mid = w.start_ns + w.len_ns / 2;
            if gcl.bitmap_at(mid) != 1 << w.pcp {
                return Err(ScheduleError::GuardGap {
                    device: port.0.clone(),
                    port: port.1,
                    cf_id: w.cf_id,
                });
            }
            let guarded = w.start_ns >= GUARD_NS
                && (0..GUARD_NS)
                    .step_by(T_IFG_NS as usize)
                    .all(|d| gcl.bitmap_at(w.start_ns - 1 - d) == 0x00);
            let short_gap = prev_end.is_some_and(|p| w.start_ns - p < MIN_FRAME_NEED_NS);
            if !guarded && !short_gap {
                return Err(ScheduleError::GuardGap {
                    device: port.0.clone(),
                    port: port.1,
                    cf_id: w.cf_id,
                });
            }
            prev_end = Some(w.end_ns());
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Bound reporting
// ---------------------------------------------------------------------------

/// One row of a bound-versus-measurement report.
#[derive(Debug, Clone)]
pub struct BoundRow {
    pub flow: String,
    pub config: String,
    pub bound_ns: Nanos,
    pub measured_max_ns: Nanos,
}

impl BoundRow {
    pub fn ok(&self) -> bool {
        self.measured_max_ns <= self.bound_ns
    }
}

/// Write rows as `flow,config,bound_us,measured_max_us,ok`.
pub fn write_bound_report(w: &mut impl Write, rows: &[BoundRow]) -> std::io::Result<()> {
    writeln!(w, "flow,config,bound_us,measured_max_us,ok")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.flow,
            r.config,
            format_us(r.bound_ns),
            format_us(r.measured_max_ns),
            r.ok()
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn port(d: &str, p: u32) -> PortKey {
        (d.to_string(), p)
    }

    fn flow(cf: u32, src: &str, pcp: u8, phase_us: u64, fpp: u32, hops: &[PortKey]) -> SyncFlowSpec {
        SyncFlowSpec {
            cf_id: cf,
            source: src.into(),
            pcp,
            wire_bytes: 1522,
            phase_ns: phase_us * 1_000,
            frames_per_period: fpp,
            hops: hops.to_vec(),
        }
    }

    fn reference_flows() -> (SyncFlowSpec, SyncFlowSpec, SyncFlowSpec) {
        let trunk = port("SwL", 3);
        let dest = port("SwR", 1);
        let s1 = flow(1, "S1", 5, 450, 1, &[trunk.clone(), dest.clone()]);
        let s2 = flow(2, "S2", 6, 250, 1, &[trunk, dest.clone()]);
        let s3 = flow(3, "S3", 7, 500, 2, &[dest]);
        (s1, s2, s3)
    }

    #[test]
    fn window_positions_follow_hop_shift() {
        let (s1, s2, s3) = reference_flows();
        // Earliest position.
        let w = switch_windows(&s1, 0);
        assert_eq!((w[0].start_ns, w[0].end_ns()), (575_400, 698_760));
        assert_eq!((w[1].start_ns, w[1].end_ns()), (700_800, 824_160));
        // Pushed back by 75 us.
        let w = switch_windows(&s2, 75_000);
        assert_eq!((w[0].start_ns, w[0].end_ns()), (450_400, 573_760));
        assert_eq!((w[1].start_ns, w[1].end_ns()), (575_800, 699_160));
        // Earliest position of a stream starting later.
        let w = switch_windows(&s2, 0);
        assert_eq!((w[0].start_ns, w[0].end_ns()), (375_400, 498_760));
        assert_eq!((w[1].start_ns, w[1].end_ns()), (500_800, 624_160));
        // Two frames per period widen the window.
        let w = switch_windows(&s3, 0);
        assert_eq!((w[0].start_ns, w[0].end_ns()), (625_400, 872_120));
        // Large pushback keeps the window inside the period.
        let w = switch_windows(&s1, 175_000);
        assert_eq!((w[0].start_ns, w[0].end_ns()), (750_400, 873_760));
        assert_eq!((w[1].start_ns, w[1].end_ns()), (875_800, 999_160));
    }

    #[test]
    fn scheduled_latency_is_exact_per_position() {
        let (s1, s2, s3) = reference_flows();
        assert_eq!(sync_latency_ns(&s1, 0), 373_200);
        assert_eq!(sync_latency_ns(&s1, 175_000), 548_200);
        assert_eq!(sync_latency_ns(&s2, 75_000), 448_200);
        assert_eq!(sync_latency_ns(&s2, 0), 373_200);
        assert_eq!(sync_latency_ns(&s3, 0), 247_800);
    }

    fn schedule_for(
        flows: &[(&SyncFlowSpec, Nanos)],
    ) -> NetworkSchedule {
        let ports = [port("SwL", 3), port("SwR", 1)];
        let s = build_network_schedule(PERIOD_NS, flows, &ports).unwrap();
        validate_schedule(&s).unwrap();
        s
    }

    #[test]
    fn full_config_gate_lists_and_exclusion_times() {
        let (s1, s2, s3) = reference_flows();
        // All three streams at their final positions.
        let s = schedule_for(&[(&s1, 175_000), (&s2, 0), (&s3, 0)]);
        let swl = &s.gcls[&port("SwL", 3)];
        let swr = &s.gcls[&port("SwR", 1)];
        // Left switch: guard + window for each stream, fully guarded.
        assert_eq!(swl.closed_ns_per_period(0), 493_440);
        // Right switch: one full guard, then back-to-back windows separated
        // by open gaps too short for any frame.
        assert_eq!(swr.closed_ns_per_period(0), 616_800);
        assert_eq!(swr.closed_ns_per_period(4), 616_800);
        // Window exclusivity.
        assert_eq!(swr.bitmap_at(550_000), 1 << 6);
        assert_eq!(swr.bitmap_at(700_000), 1 << 7);
        assert_eq!(swr.bitmap_at(900_000), 1 << 5);
        // The sub-guard gaps stay open for unscheduled traffic.
        assert_eq!(swr.bitmap_at(624_500), 0x1F);
        assert_eq!(swr.bitmap_at(873_000), 0x1F);
        // Guard region before the first window.
        assert_eq!(swr.bitmap_at(400_000), 0x00);
        assert_eq!(swr.bitmap_at(377_439), 0x1F);
    }

    #[test]
    fn single_stream_config_gate_lists() {
        let (s1, _, _) = reference_flows();
        let s = schedule_for(&[(&s1, 0)]);
        let swl = &s.gcls[&port("SwL", 3)];
        // One guard plus one window.
        assert_eq!(swl.closed_ns_per_period(0), 2 * 123_360);
        assert_eq!(swl.bitmap_at(600_000), 1 << 5);
        assert_eq!(swl.bitmap_at(500_000), 0x00);
        assert_eq!(swl.bitmap_at(100_000), 0xDF);
    }

    #[test]
    fn empty_config_is_all_open() {
        let s = schedule_for(&[]);
        assert!(s.gcls[&port("SwL", 3)].always_open(0));
        assert!(s.gcls[&port("SwR", 1)].always_open(7));
        assert_eq!(s.t_mi_ns(&port("SwR", 1), 0), 0);
    }

    #[test]
    fn exclusion_time_feeds_async_bound() {
        let (s1, s2, s3) = reference_flows();
        let s = schedule_for(&[(&s1, 175_000), (&s2, 0), (&s3, 0)]);
        let t_mi = s.t_mi_max_ns([port("SwL", 3), port("SwR", 1)].iter(), 4);
        assert_eq!(t_mi, 616_800);
        // Three links, two switches, full-size frames.
        assert_eq!(async_bound_ns(t_mi, 3, 2, T_TRANS_MAX_NS), 1_360_080);
        // With all gates open the exclusion term vanishes.
        assert_eq!(async_bound_ns(0, 3, 2, T_TRANS_MAX_NS), 743_280);
    }

    #[test]
    fn overlapping_windows_are_rejected() {
        let (s1, _, _) = reference_flows();
        let mut s1b = s1.clone();
        s1b.cf_id = 99;
        let err = build_network_schedule(
            PERIOD_NS,
            &[(&s1, 0), (&s1b, 10_000)],
            &[port("SwL", 3), port("SwR", 1)],
        )
        .unwrap_err();
        assert!(matches!(err, ScheduleError::Overlap { .. }));
    }

    #[test]
    fn window_leaving_the_period_is_rejected() {
        let (s1, _, _) = reference_flows();
        let err = build_network_schedule(
            PERIOD_NS,
            &[(&s1, 300_000)],
            &[port("SwL", 3), port("SwR", 1)],
        )
        .unwrap_err();
        assert!(matches!(err, ScheduleError::OutOfPeriod { .. }));
    }

    #[test]
    fn validate_schedule_catches_missing_guard() {
        let (s1, _, _) = reference_flows();
        let mut s = schedule_for(&[(&s1, 0)]);
        // Corrupt the gate list: open the guard region.
        let g = s.gcls.get_mut(&port("SwL", 3)).unwrap();
        for e in &mut g.entries {
            if e.bitmap == 0x00 {
                e.bitmap = 0xDF;
            }
        }
        assert!(matches!(
            validate_schedule(&s),
            Err(ScheduleError::GuardGap { .. })
        ));
    }

    #[test]
    fn bound_report_format() {
        let rows = vec![BoundRow {
            flow: "S4-async".into(),
            config: "C3".into(),
            bound_ns: 1_360_080,
            measured_max_ns: 1_100_000,
        }];
        let mut buf = Vec::new();
        write_bound_report(&mut buf, &rows).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "flow,config,bound_us,measured_max_us,ok\nS4-async,C3,1360.080,1100.000,true\n"
        );
    }
}
