//! Transactional schedule updates.
//!
//! A configuration transition is a set of per-stream slot changes. Each
//! change kind has a safe per-device apply order; a transition is executed
//! either as one time-synchronized commit, as one ordered sequential
//! transaction, or split into sub-transactions whose device orders are
//! individually consistent.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use thiserror::Error;

use crate::bounds::SyncFlowSpec;
use crate::desim::{format_us, Nanos};

// ---------------------------------------------------------------------------
// Slot changes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChangeKind {
    Add,
    Remove,
    ShiftLater,
    ShiftEarlier,
}

impl ChangeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ChangeKind::Add => "add",
            ChangeKind::Remove => "remove",
            ChangeKind::ShiftLater => "shift-later",
            ChangeKind::ShiftEarlier => "shift-earlier",
        }
    }
}

/// One stream's slot change within a transition, with the device order that
/// keeps the stream's frames inside both the old and the new bound while
/// devices disagree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotChange {
    pub cf_id: u32,
    pub kind: ChangeKind,
    pub old_delay_ns: Option<Nanos>,
    pub new_delay_ns: Option<Nanos>,
    pub device_order: Vec<String>,
}

/// Safe apply order for one change: adding a slot or shifting it later
/// walks from the destination toward the source (downstream windows move
/// first, frames arriving on the old upstream schedule simply wait);
/// removing or shifting earlier walks source to destination.
pub fn change_device_order(flow: &SyncFlowSpec, kind: ChangeKind) -> Vec<String> {
    let forward: Vec<String> = flow.hops.iter().map(|(d, _)| d.clone()).collect();
    match kind {
        ChangeKind::Add | ChangeKind::ShiftLater => forward.into_iter().rev().collect(),
        ChangeKind::Remove | ChangeKind::ShiftEarlier => forward,
    }
}

/// Diff two configurations (stream id to first-hop delay) into slot
/// changes, sorted by stream id. Unchanged streams produce nothing.
pub fn diff_configs(
    flows: &[SyncFlowSpec],
    old: &BTreeMap<u32, Nanos>,
    new: &BTreeMap<u32, Nanos>,
) -> Vec<SlotChange> {
    let mut out = Vec::new();
    let mut ids: BTreeSet<u32> = old.keys().copied().collect();
    ids.extend(new.keys());
    for cf_id in ids {
        let flow = flows.iter().find(|f| f.cf_id == cf_id);
        let Some(flow) = flow else { continue };
        let kind = match (old.get(&cf_id), new.get(&cf_id)) {
            (None, Some(_)) => ChangeKind::Add,
            (Some(_), None) => ChangeKind::Remove,
            (Some(o), Some(n)) if n > o => ChangeKind::ShiftLater,
            (Some(o), Some(n)) if n < o => ChangeKind::ShiftEarlier,
            _ => continue,
        };
        out.push(SlotChange {
            cf_id,
            kind,
            old_delay_ns: old.get(&cf_id).copied(),
            new_delay_ns: new.get(&cf_id).copied(),
            device_order: change_device_order(flow, kind),
        });
    }
    out
}

// ---------------------------------------------------------------------------
// Device-order merging
// ---------------------------------------------------------------------------

#[derive(Debug, Error, PartialEq, Eq)]
#[error("device orders conflict: no sequence satisfies all changes")]
pub struct OrderConflict;

/// Merge several per-change device orders into one sequence respecting all
/// of them, via topological sort with lexicographic tie-breaking. Fails if
/// the orders contradict each other.
pub fn merge_device_orders(orders: &[Vec<String>]) -> Result<Vec<String>, OrderConflict> {
    let mut nodes: BTreeSet<&str> = BTreeSet::new();
    let mut edges: BTreeSet<(&str, &str)> = BTreeSet::new();
    for order in orders {
        for d in order {
            nodes.insert(d);
        }
        for pair in order.windows(2) {
            edges.insert((&pair[0], &pair[1]));
        }
    }
    let mut indegree: BTreeMap<&str, usize> = nodes.iter().map(|n| (*n, 0)).collect();
    for (_, v) in &edges {
        *indegree.get_mut(v).unwrap() += 1;
    }
    let mut ready: BTreeSet<&str> =
        indegree.iter().filter(|(_, d)| **d == 0).map(|(n, _)| *n).collect();
    let mut out = Vec::new();
    while let Some(&n) = ready.iter().next() {
        ready.remove(n);
        out.push(n.to_string());
        for (u, v) in &edges {
            if *u == n {
                let d = indegree.get_mut(v).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.insert(v);
                }
            }
        }
    }
    if out.len() == nodes.len() {
        Ok(out)
    } else {
        Err(OrderConflict)
    }
}

// ---------------------------------------------------------------------------
// Transition planning
// ---------------------------------------------------------------------------

/// How a transition is rolled out to the devices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// All devices swap gate lists at one agreed future time boundary.
    SyncCommit,
    /// Devices commit one after another in a single merged sequence; on an
    /// order conflict the sequence falls back to sorted device names.
    Ordered,
    /// The transition is split into sub-transactions with individually
    /// consistent device orders, executed back to back.
    Split,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::SyncCommit => "sync",
            Strategy::Ordered => "ordered",
            Strategy::Split => "split",
        }
    }
}

/// One sub-transaction: the changes it applies, the per-device commit
/// order, and the full delay map in force once it completes.
#[derive(Debug, Clone)]
pub struct SubTxn {
    pub label: String,
    pub device_order: Vec<String>,
    pub changes: Vec<SlotChange>,
    pub delays_after: BTreeMap<u32, Nanos>,
    /// True when the requested device orders were contradictory and the
    /// sequence is a fallback.
    pub order_conflict: bool,
}

#[derive(Debug, Clone)]
pub struct TransitionPlan {
    pub strategy: Strategy,
    pub subs: Vec<SubTxn>,
}

fn sorted_devices(changes: &[SlotChange]) -> Vec<String> {
    let mut s: BTreeSet<String> = BTreeSet::new();
    for c in changes {
        s.extend(c.device_order.iter().cloned());
    }
    s.into_iter().collect()
}

fn apply_changes(base: &BTreeMap<u32, Nanos>, changes: &[SlotChange]) -> BTreeMap<u32, Nanos> {
    let mut m = base.clone();
    for c in changes {
        match c.new_delay_ns {
            Some(d) => {
                m.insert(c.cf_id, d);
            }
            None => {
                m.remove(&c.cf_id);
            }
        }
    }
    m
}

/// Plan a transition from `old` to `new` delays under the given strategy.
pub fn plan_transition(
    flows: &[SyncFlowSpec],
    old: &BTreeMap<u32, Nanos>,
    new: &BTreeMap<u32, Nanos>,
    strategy: Strategy,
    label: &str,
) -> TransitionPlan {
    let changes = diff_configs(flows, old, new);
    let mut subs = Vec::new();
    if changes.is_empty() {
        return TransitionPlan { strategy, subs };
    }
    match strategy {
        Strategy::SyncCommit => {
            subs.push(SubTxn {
                label: label.to_string(),
                device_order: sorted_devices(&changes),
                delays_after: apply_changes(old, &changes),
                changes,
                order_conflict: false,
            });
        }
        Strategy::Ordered => {
            let orders: Vec<Vec<String>> =
                changes.iter().map(|c| c.device_order.clone()).collect();
            let (device_order, order_conflict) = match merge_device_orders(&orders) {
                Ok(seq) => (seq, false),
                Err(_) => (sorted_devices(&changes), true),
            };
            subs.push(SubTxn {
                label: label.to_string(),
                device_order,
                delays_after: apply_changes(old, &changes),
                changes,
                order_conflict,
            });
        }
        Strategy::Split => {
            let mut groups: Vec<Vec<SlotChange>> = Vec::new();
            let mut current: Vec<SlotChange> = Vec::new();
            for c in changes {
                let mut trial: Vec<Vec<String>> =
                    current.iter().map(|x| x.device_order.clone()).collect();
                trial.push(c.device_order.clone());
                if merge_device_orders(&trial).is_ok() || current.is_empty() {
                    current.push(c);
                } else {
                    groups.push(std::mem::take(&mut current));
                    current.push(c);
                }
            }
            if !current.is_empty() {
                groups.push(current);
            }
            let mut state = old.clone();
            let n = groups.len();
            for (i, group) in groups.into_iter().enumerate() {
                let orders: Vec<Vec<String>> =
                    group.iter().map(|c| c.device_order.clone()).collect();
                let device_order =
                    merge_device_orders(&orders).expect("groups are consistent by construction");
                state = apply_changes(&state, &group);
                subs.push(SubTxn {
                    label: if n == 1 {
                        label.to_string()
                    } else {
                        format!("{}-{}", label, i + 1)
                    },
                    device_order,
                    delays_after: state.clone(),
                    changes: group,
                    order_conflict: false,
                });
            }
        }
    }
    TransitionPlan { strategy, subs }
}

/// Earliest schedule-period boundary at or after `ready_ns`; synchronized
/// commits land exactly on a boundary.
pub fn sync_commit_time(ready_ns: Nanos, period_ns: Nanos) -> Nanos {
    ready_ns.div_ceil(period_ns) * period_ns
}

// ---------------------------------------------------------------------------
// Device locks
// ---------------------------------------------------------------------------

/// Exclusive per-device configuration locks. Callers must request locks in
/// sorted device order, which rules out deadlock between transactions.
#[derive(Debug, Default)]
pub struct LockManager {
    held: BTreeMap<String, String>,
}

impl LockManager {
    pub fn new() -> Self {
        Self::default()
    }

    /// Try to take one lock; fails if another transaction holds it.
    pub fn acquire(&mut self, device: &str, txn: &str) -> bool {
        match self.held.get(device) {
            Some(owner) => owner == txn,
            None => {
                self.held.insert(device.to_string(), txn.to_string());
                true
            }
        }
    }

    /// Try to take all locks in sorted order; on failure nothing is held.
    pub fn acquire_all(&mut self, devices: &[String], txn: &str) -> bool {
        let mut sorted = devices.to_vec();
        sorted.sort();
        sorted.dedup();
        let mut taken = Vec::new();
        for d in &sorted {
            if self.acquire(d, txn) {
                taken.push(d.clone());
            } else {
                for t in taken {
                    self.release(&t, txn);
                }
                return false;
            }
        }
        true
    }

    pub fn release(&mut self, device: &str, txn: &str) {
        if self.held.get(device).map(String::as_str) == Some(txn) {
            self.held.remove(device);
        }
    }

    pub fn release_all(&mut self, txn: &str) {
        self.held.retain(|_, owner| owner != txn);
    }

    pub fn holder(&self, device: &str) -> Option<&str> {
        self.held.get(device).map(String::as_str)
    }

    pub fn held_count(&self) -> usize {
        self.held.len()
    }
}

// ---------------------------------------------------------------------------
// Transaction log
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxnPhase {
    Kickoff,
    Lock,
    Prepare,
    Ack,
    Commit,
    Applied,
    Rollback,
    Release,
    Done,
    Abort,
}

impl TxnPhase {
    pub fn as_str(&self) -> &'static str {
        match self {
            TxnPhase::Kickoff => "kickoff",
            TxnPhase::Lock => "lock",
            TxnPhase::Prepare => "prepare",
            TxnPhase::Ack => "ack",
            TxnPhase::Commit => "commit",
            TxnPhase::Applied => "applied",
            TxnPhase::Rollback => "rollback",
            TxnPhase::Release => "release",
            TxnPhase::Done => "done",
            TxnPhase::Abort => "abort",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TxnLogRow {
    pub txn_id: String,
    pub phase: TxnPhase,
    /// `-` for controller-local phases.
    pub device: String,
    pub t_ns: Nanos,
    pub detail: String,
}

/// Append-only transaction log, written as
/// `txn_id,phase,device,t_us,detail`.
#[derive(Debug, Default)]
pub struct TxnLog {
    rows: Vec<TxnLogRow>,
}

impl TxnLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: TxnLogRow) {
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[TxnLogRow] {
        &self.rows
    }

    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "txn_id,phase,device,t_us,detail")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.txn_id,
                r.phase.as_str(),
                r.device,
                format_us(r.t_ns),
                r.detail
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("write to vec");
        String::from_utf8(buf).expect("log rows are utf-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_flows() -> Vec<SyncFlowSpec> {
        let trunk = ("SwL".to_string(), 3u32);
        let dest = ("SwR".to_string(), 1u32);
        let mk = |cf, src: &str, pcp, phase_us: u64, fpp, hops: Vec<(String, u32)>| SyncFlowSpec {
            cf_id: cf,
            source: src.into(),
            pcp,
            wire_bytes: 1522,
            phase_ns: phase_us * 1_000,
            frames_per_period: fpp,
            hops,
        };
        vec![
            mk(1, "S1", 5, 450, 1, vec![trunk.clone(), dest.clone()]),
            mk(2, "S2", 6, 250, 1, vec![trunk, dest.clone()]),
            mk(3, "S3", 7, 500, 2, vec![dest]),
        ]
    }

    fn delays(pairs: &[(u32, Nanos)]) -> BTreeMap<u32, Nanos> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn change_orders_follow_the_direction_rules() {
        let flows = reference_flows();
        assert_eq!(change_device_order(&flows[0], ChangeKind::Add), vec!["SwR", "SwL"]);
        assert_eq!(change_device_order(&flows[0], ChangeKind::ShiftLater), vec!["SwR", "SwL"]);
        assert_eq!(change_device_order(&flows[0], ChangeKind::Remove), vec!["SwL", "SwR"]);
        assert_eq!(change_device_order(&flows[0], ChangeKind::ShiftEarlier), vec!["SwL", "SwR"]);
        assert_eq!(change_device_order(&flows[2], ChangeKind::Add), vec!["SwR"]);
    }

    #[test]
    fn diff_detects_all_change_kinds() {
        let flows = reference_flows();
        let old = delays(&[(1, 0), (2, 75_000)]);
        let new = delays(&[(1, 175_000), (2, 0), (3, 0)]);
        let changes = diff_configs(&flows, &old, &new);
        assert_eq!(changes.len(), 3);
        assert_eq!((changes[0].cf_id, changes[0].kind), (1, ChangeKind::ShiftLater));
        assert_eq!((changes[1].cf_id, changes[1].kind), (2, ChangeKind::ShiftEarlier));
        assert_eq!((changes[2].cf_id, changes[2].kind), (3, ChangeKind::Add));
        let removed = diff_configs(&flows, &delays(&[(3, 0)]), &delays(&[]));
        assert_eq!((removed[0].cf_id, removed[0].kind), (3, ChangeKind::Remove));
        assert!(diff_configs(&flows, &old, &old).is_empty());
    }

    #[test]
    fn merge_handles_agreement_and_conflict() {
        let ok = merge_device_orders(&[
            vec!["SwL".into(), "SwR".into()],
            vec!["SwR".into()],
        ])
        .unwrap();
        assert_eq!(ok, vec!["SwL", "SwR"]);
        let err = merge_device_orders(&[
            vec!["SwR".into(), "SwL".into()],
            vec!["SwL".into(), "SwR".into()],
        ]);
        assert_eq!(err, Err(OrderConflict));
    }

    #[test]
    fn ordered_plan_falls_back_on_conflict() {
        let flows = reference_flows();
        let old = delays(&[(1, 0), (2, 75_000)]);
        let new = delays(&[(1, 175_000), (2, 0), (3, 0)]);
        let plan = plan_transition(&flows, &old, &new, Strategy::Ordered, "C3");
        assert_eq!(plan.subs.len(), 1);
        let sub = &plan.subs[0];
        assert!(sub.order_conflict);
        assert_eq!(sub.device_order, vec!["SwL", "SwR"]);
        assert_eq!(sub.delays_after, new);
    }

    #[test]
    fn ordered_plan_keeps_consistent_orders() {
        let flows = reference_flows();
        // Removing one two-hop stream has a single well-defined order.
        let plan = plan_transition(
            &flows,
            &delays(&[(1, 175_000), (2, 0), (3, 0)]),
            &delays(&[(2, 0), (3, 0)]),
            Strategy::Ordered,
            "C4",
        );
        let sub = &plan.subs[0];
        assert!(!sub.order_conflict);
        assert_eq!(sub.device_order, vec!["SwL", "SwR"]);
    }

    #[test]
    fn split_plan_groups_greedily() {
        let flows = reference_flows();
        let old = delays(&[(1, 0), (2, 75_000)]);
        let new = delays(&[(1, 175_000), (2, 0), (3, 0)]);
        let plan = plan_transition(&flows, &old, &new, Strategy::Split, "C3");
        assert_eq!(plan.subs.len(), 2);
        assert_eq!(plan.subs[0].label, "C3-1");
        assert_eq!(plan.subs[0].device_order, vec!["SwR", "SwL"]);
        assert_eq!(plan.subs[0].changes.len(), 1);
        assert_eq!(plan.subs[0].changes[0].cf_id, 1);
        assert_eq!(plan.subs[0].delays_after, delays(&[(1, 175_000), (2, 75_000)]));
        assert_eq!(plan.subs[1].label, "C3-2");
        assert_eq!(plan.subs[1].device_order, vec!["SwL", "SwR"]);
        assert_eq!(
            plan.subs[1].changes.iter().map(|c| c.cf_id).collect::<Vec<_>>(),
            vec![2, 3]
        );
        assert_eq!(plan.subs[1].delays_after, new);
    }

    #[test]
    fn split_of_consistent_transition_is_single() {
        let flows = reference_flows();
        let plan = plan_transition(
            &flows,
            &delays(&[]),
            &delays(&[(1, 0)]),
            Strategy::Split,
            "C1",
        );
        assert_eq!(plan.subs.len(), 1);
        assert_eq!(plan.subs[0].label, "C1");
        assert_eq!(plan.subs[0].device_order, vec!["SwR", "SwL"]);
    }

    #[test]
    fn sync_commit_lands_on_a_boundary() {
        assert_eq!(sync_commit_time(399_500_000, 1_000_000), 400_000_000);
        assert_eq!(sync_commit_time(400_000_000, 1_000_000), 400_000_000);
        assert_eq!(sync_commit_time(400_000_001, 1_000_000), 401_000_000);
    }

    #[test]
    fn locks_are_exclusive_and_all_or_nothing() {
        let mut lm = LockManager::new();
        assert!(lm.acquire_all(&["SwL".into(), "SwR".into()], "t1"));
        assert!(!lm.acquire_all(&["SwR".into(), "Ctrl".into()], "t2"));
        // Failed acquisition holds nothing.
        assert_eq!(lm.holder("Ctrl"), None);
        assert_eq!(lm.holder("SwR"), Some("t1"));
        lm.release_all("t1");
        assert_eq!(lm.held_count(), 0);
        assert!(lm.acquire_all(&["SwR".into(), "Ctrl".into()], "t2"));
    }

    #[test]
    fn txn_log_format() {
        let mut log = TxnLog::new();
        log.push(TxnLogRow {
            txn_id: "C3".into(),
            phase: TxnPhase::Commit,
            device: "SwL".into(),
            t_ns: 396_500_000,
            detail: "commit-at=400000.000".into(),
        });
        assert_eq!(
            log.to_csv_string(),
            "txn_id,phase,device,t_us,detail\nC3,commit,SwL,396500.000,commit-at=400000.000\n"
        );
    }
}
