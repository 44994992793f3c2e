//! Which pairs to range this epoch, within a slot budget.
//!
//! The main strategy seeds a triangle, then walks nodes by descending
//! mobility metric and gives each one an aggregated session with its three
//! best links into the graph placed so far. Baselines ignore rigidity (`h-dyn`), mobility and quality too
//! (`h-agnos`), or everything (`random`).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{are_collinear, Point2, DEFAULT_COLLINEAR_TOL};
use crate::metrics::NodeTelemetry;
use crate::topology::{edge_key, ConnectivityGraph, CoreDecomposition, NodeId};

/// Responders per admission session.
pub const SUPPORT_EDGES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangingBudget {
    /// Seconds.
    pub epoch_duration: f64,
    /// Milliseconds.
    pub slot_time: f64,
    pub total_slots: u32,
    pub slots_used: u32,
    /// Fixed control cost charged to every session, in slots.
    pub overhead_slots: u32,
}

impl RangingBudget {
    pub fn new(refresh_rate_hz: f64, slot_time_ms: f64) -> Result<Self> {
        if !(refresh_rate_hz > 0.0 && refresh_rate_hz.is_finite()) {
            return Err(Error::InvalidArgument(format!("refresh rate {refresh_rate_hz} Hz")));
        }
        if !(slot_time_ms > 0.0 && slot_time_ms.is_finite()) {
            return Err(Error::InvalidArgument(format!("slot time {slot_time_ms} ms")));
        }
        let epoch_duration = 1.0 / refresh_rate_hz;
        // Guard against 1000 / 8 landing a hair under an integer.
        let total_slots = (epoch_duration * 1000.0 / slot_time_ms + 1e-9).floor() as u32;
        Ok(Self {
            epoch_duration,
            slot_time: slot_time_ms,
            total_slots,
            slots_used: 0,
            overhead_slots: 0,
        })
    }

    /// Budget with an explicit slot count; mostly for tests.
    pub fn from_slots(total_slots: u32) -> Self {
        Self {
            epoch_duration: 1.0,
            slot_time: 1000.0 / total_slots.max(1) as f64,
            total_slots,
            slots_used: 0,
            overhead_slots: 0,
        }
    }

    /// Charge `overhead_ms` of control traffic to each session.
    pub fn with_overhead_ms(mut self, overhead_ms: f64) -> Self {
        self.overhead_slots = (overhead_ms.max(0.0) / self.slot_time - 1e-9).ceil().max(0.0) as u32;
        self
    }

    pub fn remaining(&self) -> u32 {
        self.total_slots - self.slots_used
    }

    pub fn session_cost(&self, responders: usize) -> u32 {
        2 * responders as u32 + 2 + self.overhead_slots
    }

    fn try_charge(&mut self, slots: u32) -> bool {
        if slots <= self.remaining() {
            self.slots_used += slots;
            true
        } else {
            false
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionPurpose {
    Admission,
    Refresh,
    ExcludedNode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub initiator: NodeId,
    pub responders: Vec<NodeId>,
    pub purpose: SessionPurpose,
}

impl Session {
    pub fn members(&self) -> impl Iterator<Item = NodeId> + '_ {
        std::iter::once(self.initiator).chain(self.responders.iter().copied())
    }

    pub fn pairs(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.responders.iter().map(|&r| edge_key(self.initiator, r))
    }
}

/// Nodes with fewer than three usable links into the rigid graph, and the
/// links they do have.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExcludedNodeSet {
    pub nodes: BTreeMap<NodeId, Vec<NodeId>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangingSchedule {
    pub sessions: Vec<Session>,
    /// Session indices that may run at the same time.
    pub concurrency_rounds: Vec<Vec<usize>>,
    pub excluded: ExcludedNodeSet,
    pub budget: RangingBudget,
}

impl RangingSchedule {
    pub fn empty(budget: &RangingBudget) -> Self {
        Self {
            sessions: Vec::new(),
            concurrency_rounds: Vec::new(),
            excluded: ExcludedNodeSet::default(),
            budget: RangingBudget {
                slots_used: 0,
                ..*budget
            },
        }
    }

    pub fn session_cost(&self, idx: usize) -> u32 {
        self.budget.session_cost(self.sessions[idx].responders.len())
    }

    /// Slots if sessions run one after another.
    pub fn sequential_cost(&self) -> u32 {
        (0..self.sessions.len()).map(|i| self.session_cost(i)).sum()
    }

    /// Slots when each round costs its most expensive session; equals the
    /// sequential cost when no rounds were formed.
    pub fn epoch_cost(&self) -> u32 {
        if self.concurrency_rounds.is_empty() {
            return self.sequential_cost();
        }
        self.concurrency_rounds
            .iter()
            .map(|r| r.iter().map(|&i| self.session_cost(i)).max().unwrap_or(0))
            .sum()
    }

    pub fn initiators(&self) -> Vec<NodeId> {
        self.sessions.iter().map(|s| s.initiator).collect()
    }

    pub fn pairs(&self) -> BTreeSet<(NodeId, NodeId)> {
        self.sessions.iter().flat_map(|s| s.pairs()).collect()
    }

    /// Append a session if it fits.
    fn push(&mut self, session: Session) -> bool {
        let cost = self.budget.session_cost(session.responders.len());
        if self.budget.try_charge(cost) {
            self.sessions.push(session);
            true
        } else {
            false
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    #[default]
    Dynoloc,
    HAgnos,
    HDyn,
    Random,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Dynoloc, Strategy::HAgnos, Strategy::HDyn, Strategy::Random];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Dynoloc => "dynoloc",
            Strategy::HAgnos => "h-agnos",
            Strategy::HDyn => "h-dyn",
            Strategy::Random => "random",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s.trim())
            .ok_or_else(|| {
                Error::InvalidArgument(format!("unknown strategy {s:?} (expected dynoloc, h-agnos, h-dyn or random)"))
            })
    }
}

/// Optional inputs to [`select_edges_epoch`].
#[derive(Debug, Clone, Copy)]
pub struct SelectionHints<'a> {
    /// Rank support links by quality; when off, by neighbor id.
    pub use_link_quality: bool,
    /// Last known positions, used to skip collinear support triples.
    pub positions: Option<&'a BTreeMap<NodeId, Point2>>,
    /// Time each pair was last ranged, for leftover-budget refreshes.
    pub last_measured: Option<&'a BTreeMap<(NodeId, NodeId), f64>>,
    /// Node the seed triangle should contain, typically the one whose
    /// position is known.
    pub anchor: Option<NodeId>,
}

impl Default for SelectionHints<'_> {
    fn default() -> Self {
        Self {
            use_link_quality: true,
            positions: None,
            last_measured: None,
            anchor: None,
        }
    }
}

fn ranked_neighbors(
    g: &ConnectivityGraph,
    node: NodeId,
    filter: impl Fn(NodeId) -> bool,
    use_link_quality: bool,
) -> Vec<NodeId> {
    let mut ns: Vec<NodeId> = g.neighbors(node).into_iter().filter(|&n| filter(n)).collect();
    if use_link_quality {
        ns.sort_by(|&a, &b| g.quality(node, b).total_cmp(&g.quality(node, a)).then(a.cmp(&b)));
    }
    ns
}

/// First non-collinear triple in rank order; the top three if positions are
/// unknown or every triple is degenerate.
fn pick_support(ranked: &[NodeId], positions: Option<&BTreeMap<NodeId, Point2>>) -> Vec<NodeId> {
    if let Some(pos) = positions {
        let k = ranked.len();
        for i in 0..k {
            for j in i + 1..k {
                for l in j + 1..k {
                    let t = [ranked[i], ranked[j], ranked[l]];
                    let (Some(a), Some(b), Some(c)) = (pos.get(&t[0]), pos.get(&t[1]), pos.get(&t[2])) else {
                        return ranked[..SUPPORT_EDGES].to_vec();
                    };
                    if !are_collinear(*a, *b, *c, DEFAULT_COLLINEAR_TOL) {
                        return t.to_vec();
                    }
                }
            }
        }
    }
    ranked[..SUPPORT_EDGES].to_vec()
}

fn mobility_of(telemetry: &BTreeMap<NodeId, NodeTelemetry>, n: NodeId) -> f64 {
    telemetry.get(&n).map_or(0.0, |t| t.mobility)
}

/// Node priority: mobility descending, then core number, then degree, then
/// lower id.
pub fn priority_order(
    g: &ConnectivityGraph,
    decomp: &CoreDecomposition,
    telemetry: &BTreeMap<NodeId, NodeTelemetry>,
) -> Vec<NodeId> {
    let mut order: Vec<NodeId> = g.nodes().iter().copied().collect();
    order.sort_by(|&a, &b| {
        mobility_of(telemetry, b)
            .total_cmp(&mobility_of(telemetry, a))
            .then(decomp.core_of(b).cmp(&decomp.core_of(a)))
            .then(g.degree(b).cmp(&g.degree(a)))
            .then(a.cmp(&b))
    });
    order
}

/// Greedy per-epoch edge selection that grows one rigid graph.
///
/// A seed triangle is ranged first, around `hints.anchor` if given and
/// otherwise inside `rigid` where possible. Remaining nodes are then
/// visited in [`priority_order`], repeatedly; a node with three links to
/// nodes already placed this epoch gets an admission session with its three
/// best (skipping collinear triples when positions are known) and becomes
/// placed. Nodes that never reach three are excluded and range what they
/// have, topped up to three with their best other links. Selection stops at
/// the first session that does not fit. Leftover slots refresh the stalest
/// edges among placed nodes through one-responder sessions from nodes that
/// have not initiated yet.
///
/// Every admission's supports precede it, so the ranged edges always admit
/// the whole placed set from the seed.
pub fn select_edges_epoch(
    g: &ConnectivityGraph,
    decomp: &CoreDecomposition,
    rigid: &BTreeSet<NodeId>,
    telemetry: &BTreeMap<NodeId, NodeTelemetry>,
    budget: &RangingBudget,
    hints: SelectionHints<'_>,
) -> RangingSchedule {
    let mut sched = RangingSchedule::empty(budget);
    if budget.total_slots < 4 || g.node_count() == 0 {
        return sched;
    }
    let order = priority_order(g, decomp, telemetry);
    let mut initiated: BTreeSet<NodeId> = BTreeSet::new();
    let mut placed: BTreeSet<NodeId> = BTreeSet::new();

    let Some((a, b, c)) = seed_triangle(g, &order, rigid, hints) else {
        return sched;
    };
    if !sched.push(Session {
        initiator: a,
        responders: vec![b, c],
        purpose: SessionPurpose::Admission,
    }) {
        return sched;
    }
    initiated.insert(a);
    if !sched.push(Session {
        initiator: b,
        responders: vec![c],
        purpose: SessionPurpose::Admission,
    }) {
        return sched;
    }
    initiated.insert(b);
    placed.extend([a, b, c]);

    let mut pending: Vec<NodeId> = order.iter().copied().filter(|n| !placed.contains(n)).collect();
    let mut full = false;
    loop {
        let mut progressed = false;
        let mut still = Vec::new();
        for node in pending {
            if full {
                still.push(node);
                continue;
            }
            let supports = ranked_neighbors(g, node, |n| placed.contains(&n), hints.use_link_quality);
            if supports.len() < SUPPORT_EDGES {
                still.push(node);
                continue;
            }
            if !sched.push(Session {
                initiator: node,
                responders: pick_support(&supports, hints.positions),
                purpose: SessionPurpose::Admission,
            }) {
                full = true;
                still.push(node);
                continue;
            }
            initiated.insert(node);
            placed.insert(node);
            progressed = true;
        }
        pending = still;
        if full || !progressed || pending.is_empty() {
            break;
        }
    }

    // Whatever is left could not reach three placed nodes; keep ranging
    // the links it has, in priority order.
    let pending: BTreeSet<NodeId> = pending.into_iter().collect();
    for &node in order.iter().filter(|n| pending.contains(n)) {
        let into_placed = ranked_neighbors(g, node, |n| placed.contains(&n), hints.use_link_quality);
        if into_placed.len() >= SUPPORT_EDGES {
            continue; // starved by the budget, not by topology
        }
        sched.excluded.nodes.insert(node, into_placed.clone());
        if full {
            continue;
        }
        let mut responders = into_placed.clone();
        for n in ranked_neighbors(g, node, |n| !into_placed.contains(&n), hints.use_link_quality) {
            if responders.len() >= SUPPORT_EDGES {
                break;
            }
            responders.push(n);
        }
        if responders.is_empty() {
            continue;
        }
        if !sched.push(Session {
            initiator: node,
            responders,
            purpose: SessionPurpose::ExcludedNode,
        }) {
            full = true;
            continue;
        }
        initiated.insert(node);
    }

    if let Some(last) = hints.last_measured {
        let scheduled = sched.pairs();
        let mut stale: Vec<((NodeId, NodeId), f64)> = g
            .active_edges()
            .filter(|(a, b)| placed.contains(a) && placed.contains(b) && !scheduled.contains(&edge_key(*a, *b)))
            .map(|(a, b)| {
                let k = edge_key(a, b);
                (k, last.get(&k).copied().unwrap_or(f64::NEG_INFINITY))
            })
            .collect();
        stale.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
        for ((a, b), _) in stale {
            if sched.budget.remaining() < sched.budget.session_cost(1) {
                break;
            }
            let Some(init) = [a, b].into_iter().find(|n| !initiated.contains(n)) else {
                continue;
            };
            let resp = if init == a { b } else { a };
            if sched.push(Session {
                initiator: init,
                responders: vec![resp],
                purpose: SessionPurpose::Refresh,
            }) {
                initiated.insert(init);
            }
        }
    }
    sched
}

/// Seed for this epoch's rigid graph: an apex plus its lowest-id pair of
/// mutually linked neighbors. The anchor is tried first, then
/// apexes inside `rigid` with partners inside it, then anyone.
fn seed_triangle(
    g: &ConnectivityGraph,
    order: &[NodeId],
    rigid: &BTreeSet<NodeId>,
    hints: SelectionHints<'_>,
) -> Option<(NodeId, NodeId, NodeId)> {
    // Partners by id, not quality, so the ablation leaves initiators alone.
    let best_pair = |apex: NodeId, pool: &dyn Fn(NodeId) -> bool| {
        let ns = ranked_neighbors(g, apex, pool, false);
        for (i, &x) in ns.iter().enumerate() {
            for &y in &ns[i + 1..] {
                if g.is_connected(x, y) {
                    return Some((apex, x, y));
                }
            }
        }
        None
    };
    if let Some(a) = hints.anchor.filter(|a| g.nodes().contains(a)) {
        if let Some(t) = best_pair(a, &|n| rigid.contains(&n)).or_else(|| best_pair(a, &|_| true)) {
            return Some(t);
        }
    }
    for &apex in order.iter().filter(|n| rigid.contains(n)) {
        if let Some(t) = best_pair(apex, &|n| rigid.contains(&n)) {
            return Some(t);
        }
    }
    for &apex in order {
        if let Some(t) = best_pair(apex, &|_| true) {
            return Some(t);
        }
    }
    None
}

/// Group sessions into rounds that can share air time.
///
/// Two sessions conflict if they share a node or any of their members are
/// within `interference_range` of each other; a member without a known
/// position conflicts with everything. Sessions are placed, most expensive
/// first, into the first round without a conflict.
pub fn form_concurrency_rounds(
    schedule: &RangingSchedule,
    interference_range: f64,
    positions: &BTreeMap<NodeId, Point2>,
) -> RangingSchedule {
    let n = schedule.sessions.len();
    let conflict = |i: usize, j: usize| {
        let (si, sj) = (&schedule.sessions[i], &schedule.sessions[j]);
        si.members().any(|a| {
            sj.members().any(|b| {
                a == b
                    || match (positions.get(&a), positions.get(&b)) {
                        (Some(pa), Some(pb)) => pa.distance(*pb) <= interference_range,
                        _ => true,
                    }
            })
        })
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| schedule.session_cost(b).cmp(&schedule.session_cost(a)).then(a.cmp(&b)));
    let mut rounds: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match rounds.iter_mut().find(|r| r.iter().all(|&j| !conflict(i, j))) {
            Some(r) => r.push(i),
            None => rounds.push(vec![i]),
        }
    }
    for r in &mut rounds {
        r.sort_unstable();
    }
    let mut out = schedule.clone();
    out.concurrency_rounds = rounds;
    out
}

/// Persistent position of the round-robin baseline: the last pair ranged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RoundRobinCursor(pub Option<(NodeId, NodeId)>);

/// Pack pairs, in order, as one-responder sessions until the next one does
/// not fit. Returns how many pairs were taken.
///
/// Baselines range pair by pair (four slots each); aggregating responders
/// into one session is part of the proposed protocol, not theirs.
fn pack_pairs(sched: &mut RangingSchedule, pairs: &[(NodeId, NodeId)], purpose: SessionPurpose) -> usize {
    for (taken, &(a, b)) in pairs.iter().enumerate() {
        if !sched.push(Session {
            initiator: a,
            responders: vec![b],
            purpose,
        }) {
            return taken;
        }
    }
    pairs.len()
}

/// Round-robin over every link, blind to mobility, quality and rigidity.
///
/// Starts after the pair stored in `cursor` and advances it to the last
/// pair scheduled. Each pair is taken at most once per epoch.
pub fn baseline_h_agnos(
    g: &ConnectivityGraph,
    budget: &RangingBudget,
    cursor: &mut RoundRobinCursor,
) -> RangingSchedule {
    let mut sched = RangingSchedule::empty(budget);
    let edges: Vec<(NodeId, NodeId)> = g.active_edges().collect();
    if edges.is_empty() {
        return sched;
    }
    let start = match cursor.0 {
        Some(last) => edges.iter().position(|e| *e > last).unwrap_or(0),
        None => 0,
    };
    let ordered: Vec<(NodeId, NodeId)> = edges[start..].iter().chain(&edges[..start]).copied().collect();
    let taken = pack_pairs(&mut sched, &ordered, SessionPurpose::Refresh);
    if taken > 0 {
        cursor.0 = Some(ordered[taken - 1]);
    }
    sched
}

/// Mobility-first selection without rigidity filtering or quality ranking:
/// nodes by descending mobility (then id) range their lowest-id neighbors,
/// up to three, pair by pair.
pub fn baseline_h_dyn(
    g: &ConnectivityGraph,
    telemetry: &BTreeMap<NodeId, NodeTelemetry>,
    budget: &RangingBudget,
) -> RangingSchedule {
    let mut sched = RangingSchedule::empty(budget);
    let mut order: Vec<NodeId> = g.nodes().iter().copied().collect();
    order.sort_by(|&a, &b| mobility_of(telemetry, b).total_cmp(&mobility_of(telemetry, a)).then(a.cmp(&b)));
    let mut pairs: Vec<(NodeId, NodeId)> = Vec::new();
    let mut seen: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();
    for node in order {
        for n in g.neighbors(node).into_iter().take(SUPPORT_EDGES) {
            if seen.insert(edge_key(node, n)) {
                pairs.push((node, n));
            }
        }
    }
    pack_pairs(&mut sched, &pairs, SessionPurpose::Admission);
    sched
}

/// Uniformly shuffled links packed until the budget is full.
pub fn baseline_random<R: Rng + ?Sized>(g: &ConnectivityGraph, budget: &RangingBudget, rng: &mut R) -> RangingSchedule {
    let mut sched = RangingSchedule::empty(budget);
    let mut edges: Vec<(NodeId, NodeId)> = g.active_edges().collect();
    edges.shuffle(rng);
    pack_pairs(&mut sched, &edges, SessionPurpose::Refresh);
    sched
}
