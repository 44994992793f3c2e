//! Deterministic epoch-driven world: scenario description, scripted
//! mobility, the per-epoch ranging and localization loop, and run
//! evaluation.
//!
//! Every random draw comes from a ChaCha stream derived from the scenario
//! seed, and every map is ordered, so equal scenarios give bit-identical
//! records.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use log::{debug, trace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::absloc::{
    align_to_prediction, angle_to_heading, heading_to_angle, rotation_from_headings, transform_for_reference,
    MIN_HEADING_SPEED,
};
use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, procrustes_align, trilaterate, Point2, Segment};
use crate::metrics::{decay_stale_links, link_quality_from_cir, LinkQuality, NodeTelemetry, DEFAULT_LINK_TIMEOUT_S};
use crate::ranging::{
    replay_aggregated_session, simulate_link, synthesize_cir_features, measure_range, tof_from_timestamps,
    ChannelParams, RangeMeasurement, SPEED_OF_LIGHT_M_PER_US,
};
use crate::relloc::{
    cmds_embed, complete_edm, resolve_one_core, resolve_two_core, sequential_multilaterate, shortest_path_fill,
    refine_embedding, smooth_locations, CompletionParams, LocationHistory, PartialEdm, TwoCoreContext, WeightedRange,
};
use crate::scheduler::{
    baseline_h_agnos, baseline_h_dyn, baseline_random, form_concurrency_rounds, select_edges_epoch, RangingBudget,
    RangingSchedule, RoundRobinCursor, SelectionHints, Strategy,
};
use crate::topology::{bootstrap_all_components, edge_key, k_core_decompose, ConnectivityGraph, NodeId};

/// Fastest node the scenario format accepts, m/s.
pub const MAX_SPEED: f64 = 3.0;

/// Link quality above which a range is fully trusted by the refinement.
const LQ_FULL_TRUST: f64 = 50.0;
const REFINE_ITERATIONS: usize = 100;

/// Refinement weight of a range measured at link quality `lq`.
fn range_weight(lq: f64) -> f64 {
    (lq / LQ_FULL_TRUST).clamp(1e-3, 1.0)
}

/// Relative motion (m) after which a cached range is considered stale.
const STALENESS_MOTION_M: f64 = 0.5;
const MAX_RANGE_AGE_EPOCHS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arena {
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WallSpec {
    pub start: [f64; 2],
    pub end: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: NodeId,
    pub position: [f64; 2],
    /// Waypoints visited after `position`; the node then returns to
    /// `position` and repeats.
    #[serde(default)]
    pub path: Vec<[f64; 2]>,
    /// m/s.
    #[serde(default)]
    pub speed: f64,
    #[serde(default)]
    pub is_reference: bool,
    /// Facing of a node that does not move, degrees clockwise from North.
    #[serde(default)]
    pub heading_deg: f64,
}

fn default_refresh_rate() -> f64 {
    1.0
}
fn default_epochs() -> usize {
    40
}
fn default_true() -> bool {
    true
}
fn default_smoothing_window() -> usize {
    3
}
fn default_control_overhead_ms() -> f64 {
    8.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunParams {
    /// Hz.
    #[serde(default = "default_refresh_rate")]
    pub refresh_rate: f64,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Degrees.
    #[serde(default)]
    pub heading_noise_sigma: f64,
    /// Rank support links by link quality (off for the ablation).
    #[serde(default = "default_true")]
    pub use_link_quality: bool,
    /// Seed the tracker with the surveyed deployment positions.
    #[serde(default = "default_true")]
    pub initial_fix: bool,
    #[serde(default = "default_smoothing_window")]
    pub smoothing_window: usize,
    /// Polish each embedding by quality-weighted stress minimization over
    /// its measured ranges.
    #[serde(default = "default_true")]
    pub stress_refinement: bool,
    /// Control traffic charged per session, ms.
    #[serde(default = "default_control_overhead_ms")]
    pub control_overhead_ms: f64,
    /// Defaults to the line-of-sight range limit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interference_range: Option<f64>,
}

impl Default for RunParams {
    fn default() -> Self {
        Self {
            refresh_rate: default_refresh_rate(),
            strategy: Strategy::default(),
            seed: 0,
            epochs: default_epochs(),
            heading_noise_sigma: 0.0,
            use_link_quality: true,
            initial_fix: true,
            smoothing_window: default_smoothing_window(),
            stress_refinement: true,
            control_overhead_ms: default_control_overhead_ms(),
            interference_range: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub arena: Arena,
    #[serde(default)]
    pub walls: Vec<WallSpec>,
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub radio: ChannelParams,
    #[serde(default)]
    pub run: RunParams,
}

/// One failed scenario check, addressed by field path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}", self.path, self.message)
    }
}

fn pt(a: [f64; 2]) -> Point2 {
    Point2::new(a[0], a[1])
}

impl Scenario {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::InvalidArgument(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn walls(&self) -> Vec<Segment> {
        self.walls.iter().map(|w| Segment::new(pt(w.start), pt(w.end))).collect()
    }

    pub fn reference(&self) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.is_reference)
    }

    pub fn mobile_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.speed > 0.0 && !n.path.is_empty()).count()
    }

    /// Schema-level invariants, each reported with its field path.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut bad = |path: String, message: String| out.push(Violation { path, message });
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.arena.width) {
            bad("arena.width".into(), format!("must be positive, got {}", self.arena.width));
        }
        if !positive(self.arena.height) {
            bad("arena.height".into(), format!("must be positive, got {}", self.arena.height));
        }
        let inside = |p: [f64; 2]| {
            p[0].is_finite()
                && p[1].is_finite()
                && (0.0..=self.arena.width).contains(&p[0])
                && (0.0..=self.arena.height).contains(&p[1])
        };
        for (i, w) in self.walls.iter().enumerate() {
            if pt(w.start).distance(pt(w.end)) <= 0.0 {
                bad(format!("walls[{i}]"), "has zero length".into());
            }
        }
        if self.nodes.is_empty() {
            bad("nodes".into(), "must list at least one node".into());
        }
        let mut first_seen: BTreeMap<NodeId, usize> = BTreeMap::new();
        let mut references = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if let Some(j) = first_seen.get(&n.id) {
                bad(format!("nodes[{i}].id"), format!("duplicates nodes[{j}].id"));
            } else {
                first_seen.insert(n.id, i);
            }
            if !(0.0..=MAX_SPEED).contains(&n.speed) {
                bad(format!("nodes[{i}].speed"), format!("must be within [0, {MAX_SPEED}] m/s, got {}", n.speed));
            }
            if !inside(n.position) {
                bad(format!("nodes[{i}].position"), "lies outside the arena".into());
            }
            for (k, w) in n.path.iter().enumerate() {
                if !inside(*w) {
                    bad(format!("nodes[{i}].path[{k}]"), "lies outside the arena".into());
                }
            }
            if n.is_reference {
                references.push(i);
                if n.speed > 0.0 && !n.path.is_empty() {
                    bad(format!("nodes[{i}].speed"), "reference node must be static".into());
                }
            }
        }
        if references.len() > 1 {
            bad(
                format!("nodes[{}].is_reference", references[1]),
                format!("second reference node (first is nodes[{}])", references[0]),
            );
        }
        for (field, msg) in self.radio.violations() {
            bad(format!("radio.{field}"), msg);
        }
        let r = &self.run;
        if !positive(r.refresh_rate) {
            bad("run.refresh_rate".into(), format!("must be positive, got {}", r.refresh_rate));
        }
        if r.epochs == 0 {
            bad("run.epochs".into(), "must be at least 1".into());
        }
        if !(r.heading_noise_sigma >= 0.0 && r.heading_noise_sigma.is_finite()) {
            bad("run.heading_noise_sigma".into(), "must be non-negative".into());
        }
        if !(r.control_overhead_ms >= 0.0 && r.control_overhead_ms.is_finite()) {
            bad("run.control_overhead_ms".into(), "must be non-negative".into());
        }
        if let Some(ir) = r.interference_range {
            if !positive(ir) {
                bad("run.interference_range".into(), "must be positive".into());
            }
        }
        out
    }
}

/// Parameters of the built-in office-floor scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct DeskScale {
    pub nodes: usize,
    pub mobile_fraction: f64,
    pub speed: f64,
    pub run: RunParams,
    pub radio: ChannelParams,
}

impl Default for DeskScale {
    fn default() -> Self {
        Self {
            nodes: 12,
            mobile_fraction: 0.5,
            speed: 1.0,
            run: RunParams::default(),
            radio: ChannelParams::default(),
        }
    }
}

/// Interior walls of the 50 m x 40 m floor: two partial partitions across
/// the middle and four room dividers, leaving a central corridor.
pub fn desk_walls() -> Vec<WallSpec> {
    let w = |a: [f64; 2], b: [f64; 2]| WallSpec { start: a, end: b };
    vec![
        w([0.0, 20.0], [18.0, 20.0]),
        w([32.0, 20.0], [50.0, 20.0]),
        w([18.0, 0.0], [18.0, 12.0]),
        w([32.0, 0.0], [32.0, 12.0]),
        w([18.0, 28.0], [18.0, 40.0]),
        w([32.0, 28.0], [32.0, 40.0]),
    ]
}

impl Scenario {
    /// 50 m x 40 m floor with six walls. Node 0 is a static reference in
    /// the corridor; the layout and routes are drawn from `run.seed`, and
    /// the first `round(nodes * mobile_fraction)` other nodes walk closed
    /// four-waypoint circuits.
    pub fn desk_scale(p: &DeskScale) -> Scenario {
        let arena = Arena {
            width: 50.0,
            height: 40.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(p.run.seed);
        rng.set_stream(0x5ce0);
        let margin = 2.0;
        let draw = |rng: &mut ChaCha8Rng| {
            [
                rng.random_range(margin..arena.width - margin),
                rng.random_range(margin..arena.height - margin),
            ]
        };
        let n_mobile = ((p.nodes as f64) * p.mobile_fraction).round() as usize;
        let mut nodes = vec![NodeSpec {
            id: 0,
            position: [25.0, 20.0],
            path: vec![],
            speed: 0.0,
            is_reference: true,
            heading_deg: 0.0,
        }];
        for i in 1..p.nodes {
            let position = draw(&mut rng);
            let mobile = i <= n_mobile.min(p.nodes - 1);
            let path = if mobile {
                (0..3).map(|_| draw(&mut rng)).collect()
            } else {
                vec![]
            };
            nodes.push(NodeSpec {
                id: i as NodeId,
                position,
                path,
                speed: if mobile { p.speed } else { 0.0 },
                is_reference: false,
                heading_deg: 0.0,
            });
        }
        Scenario {
            arena,
            walls: desk_walls(),
            nodes,
            radio: p.radio.clone(),
            run: p.run.clone(),
        }
    }
}

/// Closed polyline walked at constant speed.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    waypoints: Vec<Point2>,
    /// Arc length at the start of each leg.
    cumulative: Vec<f64>,
    length: f64,
    pub speed: f64,
    static_heading: f64,
}

impl Trajectory {
    pub fn new(spec: &NodeSpec) -> Self {
        let mut waypoints = vec![pt(spec.position)];
        waypoints.extend(spec.path.iter().copied().map(pt));
        let mut cumulative = Vec::with_capacity(waypoints.len());
        let mut length = 0.0;
        for k in 0..waypoints.len() {
            cumulative.push(length);
            length += waypoints[k].distance(waypoints[(k + 1) % waypoints.len()]);
        }
        Self {
            waypoints,
            cumulative,
            length,
            speed: spec.speed,
            static_heading: normalize_angle(spec.heading_deg.to_radians()),
        }
    }

    pub fn is_moving(&self) -> bool {
        self.speed > 0.0 && self.length > 0.0
    }

    /// Current leg index and offset along it.
    fn locate(&self, t: f64) -> (usize, f64) {
        let s = (self.speed * t).rem_euclid(self.length);
        let k = self.cumulative.partition_point(|c| *c <= s).saturating_sub(1);
        (k, s - self.cumulative[k])
    }

    pub fn position_at(&self, t: f64) -> Point2 {
        if !self.is_moving() {
            return self.waypoints[0];
        }
        let (k, off) = self.locate(t);
        let a = self.waypoints[k];
        let b = self.waypoints[(k + 1) % self.waypoints.len()];
        let leg = a.distance(b);
        if leg == 0.0 {
            a
        } else {
            a + (b - a) * (off / leg)
        }
    }

    /// Direction of travel, radians clockwise from North.
    pub fn heading_at(&self, t: f64) -> f64 {
        if !self.is_moving() {
            return self.static_heading;
        }
        let (mut k, _) = self.locate(t);
        for _ in 0..self.waypoints.len() {
            let a = self.waypoints[k];
            let b = self.waypoints[(k + 1) % self.waypoints.len()];
            if a.distance(b) > 0.0 {
                return angle_to_heading((b - a).angle());
            }
            k = (k + 1) % self.waypoints.len();
        }
        self.static_heading
    }
}

/// Ground truth and IMU-level observations after a mobility step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MobilityState {
    pub positions: BTreeMap<NodeId, Point2>,
    /// Measured headings (truth plus noise), radians clockwise from North.
    pub headings: BTreeMap<NodeId, f64>,
    pub speeds: BTreeMap<NodeId, f64>,
    /// Change of speed over the step divided by its length.
    pub accelerations: BTreeMap<NodeId, f64>,
}

/// Advance every node from `t` to `t + dt` along its circuit.
///
/// Motion is evaluated in closed form along the polyline, so the result
/// does not depend on any integration step.
pub fn step_mobility<R: Rng + ?Sized>(
    trajectories: &BTreeMap<NodeId, Trajectory>,
    t: f64,
    dt: f64,
    heading_noise_sigma_rad: f64,
    rng: &mut R,
) -> MobilityState {
    debug_assert!(dt > 0.0);
    let noise = (heading_noise_sigma_rad > 0.0).then(|| Normal::new(0.0, heading_noise_sigma_rad).expect("sigma"));
    let mut out = MobilityState::default();
    for (&id, tr) in trajectories {
        let t1 = t + dt;
        out.positions.insert(id, tr.position_at(t1));
        let mut h = tr.heading_at(t1);
        if tr.is_moving() {
            if let Some(n) = &noise {
                h = normalize_angle(h + n.sample(rng));
            }
        }
        out.headings.insert(id, h);
        let v = if tr.is_moving() { tr.speed } else { 0.0 };
        let v0 = if tr.is_moving() && t > 0.0 { tr.speed } else { 0.0 };
        out.speeds.insert(id, v);
        out.accelerations.insert(id, (v - v0) / dt);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub node_id: NodeId,
    pub truth: Point2,
    /// Current estimate, fresh or carried over.
    pub estimate: Option<Point2>,
    pub error_m: Option<f64>,
    /// Estimate refreshed this epoch.
    pub localized: bool,
    /// Rigid component the node was embedded in, if any.
    pub component_id: Option<usize>,
    /// Core number in this epoch's measurement graph.
    pub core_number: u8,
    pub is_reference: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScheduleSummary {
    pub sessions: usize,
    pub pairs_scheduled: usize,
    pub ranges_measured: usize,
    pub failed_sessions: usize,
    pub excluded_nodes: usize,
    pub rounds: usize,
    /// Slots if every session ran back to back.
    pub sequential_slots: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// End of the epoch, seconds; truth is taken here.
    pub time: f64,
    pub nodes: Vec<NodeRecord>,
    pub slots_used: u32,
    pub total_slots: u32,
    pub rigid_component_sizes: Vec<usize>,
    pub schedule: ScheduleSummary,
    /// RMS error of localized non-reference nodes.
    pub absolute_rmse: Option<f64>,
    /// The same after the best rigid alignment (reflection allowed) to truth.
    pub relative_rmse: Option<f64>,
}

impl EpochRecord {
    pub fn node(&self, id: NodeId) -> Option<&NodeRecord> {
        self.nodes.iter().find(|n| n.node_id == id)
    }
}

/// Per-purpose ChaCha streams derived from one seed.
#[derive(Debug, Clone)]
struct Streams {
    channel: ChaCha8Rng,
    heading: ChaCha8Rng,
    schedule: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> (Self, ChaCha8Rng) {
        let mk = |stream: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(stream);
            r
        };
        (
            Self {
                channel: mk(1),
                heading: mk(2),
                schedule: mk(3),
            },
            mk(4),
        )
    }
}

/// Cached range with the epoch it was taken in.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Cached {
    m: RangeMeasurement,
    epoch: usize,
}

/// Everything the epoch loop owns.
#[derive(Debug, Clone)]
pub struct World {
    scenario: Scenario,
    walls: Vec<Segment>,
    trajectories: BTreeMap<NodeId, Trajectory>,
    reference: Option<(NodeId, Point2)>,
    budget: RangingBudget,
    epoch: usize,
    graph: ConnectivityGraph,
    telemetry: BTreeMap<NodeId, NodeTelemetry>,
    cache: BTreeMap<(NodeId, NodeId), Cached>,
    /// Tracker state: last estimate, or the surveyed fix before the first.
    estimates: BTreeMap<NodeId, Point2>,
    /// Nodes localized at least once; only these report an estimate.
    published: BTreeSet<NodeId>,
    /// Epoch-end time at which each estimate was made.
    estimate_time: BTreeMap<NodeId, f64>,
    history: LocationHistory,
    rigid_members: BTreeSet<NodeId>,
    cursor: RoundRobinCursor,
    /// Per-node clock offset, ppm.
    drift_ppm: BTreeMap<NodeId, f64>,
    prev_theta: Option<f64>,
    /// Mean time of each node's ranges this epoch: the instant its fresh
    /// fix describes.
    fix_time: BTreeMap<NodeId, f64>,
    streams: Streams,
}

impl World {
    pub fn new(scenario: &Scenario) -> Result<World> {
        let violations = scenario.validate();
        if let Some(v) = violations.first() {
            return Err(Error::InvalidArgument(format!("invalid scenario: {v}")));
        }
        let trajectories: BTreeMap<NodeId, Trajectory> =
            scenario.nodes.iter().map(|n| (n.id, Trajectory::new(n))).collect();
        let reference = scenario.reference().map(|n| (n.id, pt(n.position)));
        let budget = RangingBudget::new(scenario.run.refresh_rate, scenario.radio.slot_time_ms())?
            .with_overhead_ms(scenario.run.control_overhead_ms);
        let (streams, mut drift_rng) = Streams::new(scenario.run.seed);
        let ppm = scenario.radio.clock_drift_ppm;
        let drift_ppm = trajectories
            .keys()
            .map(|&n| (n, if ppm > 0.0 { drift_rng.random_range(-ppm..=ppm) } else { 0.0 }))
            .collect();
        let telemetry = trajectories
            .iter()
            .map(|(&n, tr)| (n, NodeTelemetry::with_heading(tr.heading_at(0.0))))
            .collect();
        let estimates = if scenario.run.initial_fix {
            scenario.nodes.iter().map(|n| (n.id, pt(n.position))).collect()
        } else {
            reference.iter().map(|&(n, p)| (n, p)).collect()
        };
        let estimate_time = trajectories.keys().map(|&n| (n, 0.0)).collect();
        Ok(World {
            walls: scenario.walls(),
            graph: ConnectivityGraph::with_nodes(trajectories.keys().copied()),
            trajectories,
            reference,
            budget,
            epoch: 0,
            telemetry,
            cache: BTreeMap::new(),
            estimates,
            published: reference.iter().map(|&(n, _)| n).collect(),
            estimate_time,
            history: LocationHistory::new(scenario.run.smoothing_window),
            rigid_members: BTreeSet::new(),
            cursor: RoundRobinCursor::default(),
            drift_ppm,
            prev_theta: None,
            fix_time: BTreeMap::new(),
            streams,
            scenario: scenario.clone(),
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn budget(&self) -> &RangingBudget {
        &self.budget
    }

    pub fn epoch_duration(&self) -> f64 {
        self.budget.epoch_duration
    }

    pub fn truth_at(&self, t: f64) -> BTreeMap<NodeId, Point2> {
        self.trajectories.iter().map(|(&n, tr)| (n, tr.position_at(t))).collect()
    }

    pub fn estimates(&self) -> &BTreeMap<NodeId, Point2> {
        &self.estimates
    }

    /// Neighbor discovery at `t`: links heard now get a fresh quality
    /// sample, links not heard are dropped.
    fn discover_links(&mut self, t: f64) {
        let truth = self.truth_at(t);
        let ids: Vec<NodeId> = truth.keys().copied().collect();
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                let link = simulate_link(truth[&a], truth[&b], &self.walls, &self.scenario.radio);
                if link.connected {
                    let cir = synthesize_cir_features(link.is_los, link.wall_count, &mut self.streams.channel);
                    self.graph.set_link(a, b, link_quality_from_cir(&cir, t)).expect("distinct ids");
                } else {
                    self.graph.remove_link(a, b);
                }
            }
        }
        self.graph = decay_stale_links(&self.graph, t, DEFAULT_LINK_TIMEOUT_S);
    }

    fn schedule(&mut self, budget: &RangingBudget) -> RangingSchedule {
        let run = &self.scenario.run;
        let sched = match run.strategy {
            Strategy::Dynoloc => {
                let decomp = k_core_decompose(&self.graph);
                let rigid: BTreeSet<NodeId> = if self.rigid_members.is_empty() {
                    decomp.three_core()
                } else {
                    self.rigid_members.clone()
                };
                let last_measured: BTreeMap<(NodeId, NodeId), f64> =
                    self.cache.iter().map(|(k, c)| (*k, c.m.timestamp)).collect();
                select_edges_epoch(
                    &self.graph,
                    &decomp,
                    &rigid,
                    &self.telemetry,
                    budget,
                    SelectionHints {
                        use_link_quality: run.use_link_quality,
                        positions: Some(&self.estimates),
                        last_measured: Some(&last_measured),
                        anchor: self.reference.map(|(r, _)| r),
                    },
                )
            }
            Strategy::HAgnos => baseline_h_agnos(&self.graph, budget, &mut self.cursor),
            Strategy::HDyn => baseline_h_dyn(&self.graph, &self.telemetry, budget),
            Strategy::Random => baseline_random(&self.graph, budget, &mut self.streams.schedule),
        };
        let range = run.interference_range.unwrap_or(self.scenario.radio.los_max_range);
        form_concurrency_rounds(&sched, range, &self.estimates)
    }

    /// Run every session at its slot-midpoint time. Returns measurements
    /// and the number of sessions lost to a missing link.
    fn execute(&mut self, sched: &RangingSchedule, t0: f64) -> (Vec<RangeMeasurement>, usize) {
        let slot_s = self.budget.slot_time / 1000.0;
        let radio = self.scenario.radio.clone();
        let mut out = Vec::new();
        let mut failed = 0;
        let mut start_slot = 0u32;
        let rounds: Vec<Vec<usize>> = if sched.concurrency_rounds.is_empty() {
            (0..sched.sessions.len()).map(|i| vec![i]).collect()
        } else {
            sched.concurrency_rounds.clone()
        };
        for round in rounds {
            let round_cost = round.iter().map(|&i| sched.session_cost(i)).max().unwrap_or(0);
            for &i in &round {
                let s = &sched.sessions[i];
                let t_mid = t0 + (start_slot as f64 + sched.session_cost(i) as f64 / 2.0) * slot_s;
                let truth = self.truth_at(t_mid);
                let links: Vec<_> = s
                    .responders
                    .iter()
                    .map(|r| simulate_link(truth[&s.initiator], truth[r], &self.walls, &radio))
                    .collect();
                if links.iter().any(|l| !l.connected) {
                    failed += 1;
                    for (r, l) in s.responders.iter().zip(&links) {
                        if !l.connected {
                            if let Some(lq) = self.graph.link_mut(s.initiator, *r) {
                                *lq = LinkQuality::new(0.0, t_mid);
                            }
                        }
                    }
                    continue;
                }
                let mut tofs = Vec::with_capacity(s.responders.len());
                let mut drifts = Vec::with_capacity(s.responders.len());
                let mut truths = Vec::with_capacity(s.responders.len());
                for (r, l) in s.responders.iter().zip(&links) {
                    let d = truth[&s.initiator].distance(truth[r]);
                    let biased = measure_range(d, l.is_los, l.wall_count, &radio, &mut self.streams.channel);
                    tofs.push(biased / SPEED_OF_LIGHT_M_PER_US);
                    drifts.push(self.drift_ppm[r] - self.drift_ppm[&s.initiator]);
                    truths.push(d);
                }
                let Ok(replay) = replay_aggregated_session(radio.reply_slot_us, &tofs, &drifts) else {
                    failed += 1;
                    continue;
                };
                for (k, r) in s.responders.iter().enumerate() {
                    let Ok(tof) = tof_from_timestamps(&replay.exchanges[k]) else {
                        continue;
                    };
                    let cir = synthesize_cir_features(links[k].is_los, links[k].wall_count, &mut self.streams.channel);
                    let lq = link_quality_from_cir(&cir, t_mid);
                    if let Some(cur) = self.graph.link_mut(s.initiator, *r) {
                        *cur = lq;
                    }
                    out.push(RangeMeasurement::new(
                        s.initiator,
                        *r,
                        tof * SPEED_OF_LIGHT_M_PER_US,
                        t_mid,
                        lq,
                        truths[k],
                    ));
                }
            }
            start_slot += round_cost;
        }
        (out, failed)
    }

    fn speed(&self, n: NodeId) -> f64 {
        self.telemetry.get(&n).map_or(0.0, |t| t.velocity.abs())
    }

    fn is_mobile(&self, n: NodeId) -> bool {
        self.speed(n) >= MIN_HEADING_SPEED
    }

    /// Cached ranges still trusted this epoch: a pair's ranges live for
    /// `0.5 m / (v_a + v_b)` epochs of motion, clamped to [1, 3].
    fn usable_ranges(&self) -> BTreeMap<(NodeId, NodeId), RangeMeasurement> {
        let dt = self.epoch_duration();
        self.cache
            .iter()
            .filter(|((a, b), c)| {
                let rel = (self.speed(*a) + self.speed(*b)) * dt;
                let max_age = if rel > 0.0 {
                    (STALENESS_MOTION_M / rel).clamp(1.0, MAX_RANGE_AGE_EPOCHS)
                } else {
                    MAX_RANGE_AGE_EPOCHS
                };
                ((self.epoch - c.epoch) as f64) < max_age
            })
            .map(|(k, c)| (*k, c.m))
            .collect()
    }

    /// Expected global position of `n` at `t`, dead-reckoned from its last
    /// estimate along its heading.
    fn predict(&self, n: NodeId, t: f64, headings: &BTreeMap<NodeId, f64>) -> Option<Point2> {
        let t = self.fix_time.get(&n).copied().unwrap_or(t);
        let p = *self.estimates.get(&n)?;
        if !self.is_mobile(n) {
            return Some(p);
        }
        let age = t - self.estimate_time.get(&n).copied().unwrap_or(0.0);
        let h = headings.get(&n).copied().unwrap_or(0.0);
        Some(p + Point2::from_angle(heading_to_angle(h)) * (self.speed(n) * age))
    }

    pub fn run_epoch(&mut self) -> EpochRecord {
        let dt = self.epoch_duration();
        let t0 = self.epoch as f64 * dt;
        let t1 = t0 + dt;
        let sigma = self.scenario.run.heading_noise_sigma.to_radians();

        self.discover_links(t0);

        // IMU: the node's step detector reports its current speed; the
        // telemetry integrates the implied acceleration.
        let imu = step_mobility(&self.trajectories, t0, dt, sigma, &mut self.streams.heading);
        for (n, tel) in self.telemetry.iter_mut() {
            let accel = (imu.speeds[n] - tel.velocity) / dt;
            let mut next = tel.update_mobility(accel, dt);
            next.set_heading(imu.headings[n]);
            *tel = next;
        }

        let budget = self.budget;
        let sched = self.schedule(&budget);
        let (measured, failed) = self.execute(&sched, t0);
        for m in &measured {
            self.cache.insert(m.pair, Cached { m: *m, epoch: self.epoch });
        }

        let usable = self.usable_ranges();
        let fresh: BTreeSet<NodeId> = measured.iter().flat_map(|m| [m.pair.0, m.pair.1]).collect();
        let mut mg = ConnectivityGraph::with_nodes(self.trajectories.keys().copied());
        for ((a, b), m) in &usable {
            mg.set_link(*a, *b, LinkQuality::new(m.lq_at_measure.value.max(1e-9), m.timestamp))
                .expect("distinct ids");
        }
        let decomp = k_core_decompose(&mg);

        let mut spans: BTreeMap<NodeId, (f64, usize)> = BTreeMap::new();
        for m in usable.values() {
            for n in [m.pair.0, m.pair.1] {
                let e = spans.entry(n).or_insert((0.0, 0));
                e.0 += m.timestamp;
                e.1 += 1;
            }
        }
        self.fix_time = spans.into_iter().map(|(n, (sum, k))| (n, sum / k as f64)).collect();

        let mut outcome = self.localize(&mg, &usable, &imu.headings, t1);
        // A fix describes the node when its ranges were taken; carry mobile
        // nodes on to the end of the epoch along their heading.
        for (n, p) in outcome.positions.iter_mut() {
            if self.is_mobile(*n) {
                let lag = t1 - self.fix_time.get(n).copied().unwrap_or(t1);
                *p = *p + Point2::from_angle(heading_to_angle(imu.headings[n])) * (self.speed(*n) * lag);
            }
        }

        // Smooth static nodes; pass mobile nodes through to avoid lag.
        let mut published: BTreeMap<NodeId, Point2> = BTreeMap::new();
        for (&n, &p) in &outcome.positions {
            if self.is_mobile(n) {
                self.history.clear(n);
                published.insert(n, p);
            } else {
                self.history.push(n, p);
            }
        }
        let smoothed = smooth_locations(&self.history, self.scenario.run.smoothing_window);
        for &n in outcome.positions.keys() {
            if !self.is_mobile(n) {
                published.insert(n, smoothed[&n]);
            }
        }
        if let Some((r, p)) = self.reference {
            published.insert(r, p);
        }
        for (&n, &p) in &published {
            self.published.insert(n);
            self.estimates.insert(n, p);
            self.estimate_time.insert(n, t1);
            if fresh.contains(&n) {
                let tel = self.telemetry.get_mut(&n).expect("known node");
                *tel = tel.reset_on_localize();
            }
        }
        self.rigid_members = outcome.rigid_members.clone();

        let truth = self.truth_at(t1);
        let nodes: Vec<NodeRecord> = truth
            .iter()
            .map(|(&n, &p)| {
                let est = self.estimates.get(&n).copied().filter(|_| self.published.contains(&n));
                NodeRecord {
                    node_id: n,
                    truth: p,
                    estimate: est,
                    error_m: est.map(|e| e.distance(p)),
                    localized: published.contains_key(&n),
                    component_id: outcome.component_of.get(&n).copied(),
                    core_number: decomp.core_of(n),
                    is_reference: self.reference.is_some_and(|(r, _)| r == n),
                }
            })
            .collect();
        let (absolute_rmse, relative_rmse) = epoch_rmse(&nodes);
        let record = EpochRecord {
            epoch: self.epoch,
            time: t1,
            slots_used: sched.epoch_cost(),
            total_slots: budget.total_slots,
            rigid_component_sizes: outcome.component_sizes,
            schedule: ScheduleSummary {
                sessions: sched.sessions.len(),
                pairs_scheduled: sched.sessions.iter().map(|s| s.responders.len()).sum(),
                ranges_measured: measured.len(),
                failed_sessions: failed,
                excluded_nodes: sched.excluded.nodes.len(),
                rounds: sched.concurrency_rounds.len(),
                sequential_slots: sched.sequential_cost(),
            },
            nodes,
            absolute_rmse,
            relative_rmse,
        };
        debug!(
            "epoch {} slots {}/{} ranges {} localized {}",
            record.epoch,
            record.slots_used,
            record.total_slots,
            record.schedule.ranges_measured,
            published.len()
        );
        self.epoch += 1;
        record
    }

    /// Relative embeddings per component, then the absolute frame, then
    /// nodes hanging off it by one or two ranges.
    fn localize(
        &mut self,
        mg: &ConnectivityGraph,
        usable: &BTreeMap<(NodeId, NodeId), RangeMeasurement>,
        headings: &BTreeMap<NodeId, f64>,
        t: f64,
    ) -> Localization {
        let range = |a: NodeId, b: NodeId| usable.get(&edge_key(a, b)).map(|m| m.range);
        let embeddings: Vec<(BTreeMap<NodeId, Point2>, bool)> = match self.scenario.run.strategy {
            Strategy::HDyn => naive_embeddings(mg, usable),
            _ => {
                let decomp = k_core_decompose(mg);
                bootstrap_all_components(mg, &decomp, |a, b| range(a, b).unwrap_or(0.0))
                    .iter()
                    .filter_map(|rigid| {
                        let ml = sequential_multilaterate(rigid).ok()?;
                        let ids = rigid.members.clone();
                        let mut e = PartialEdm::new(ids.clone());
                        for (i, &a) in ids.iter().enumerate() {
                            for (j, &b) in ids.iter().enumerate().skip(i + 1) {
                                if let Some(m) = usable.get(&edge_key(a, b)) {
                                    e.set_index(i, j, m.range, m.timestamp);
                                }
                            }
                        }
                        let init: Vec<Point2> = ids.iter().map(|n| ml.positions[n]).collect();
                        let done = complete_edm(&e, &init, CompletionParams::default()).ok()?;
                        let coords = match cmds_embed(&done.edm) {
                            Ok(emb) => emb.coordinates,
                            Err(_) => ids.iter().copied().zip(done.coordinates).collect(),
                        };
                        Some((coords, true))
                    })
                    .collect()
            }
        };
        let embeddings: Vec<(BTreeMap<NodeId, Point2>, bool)> = if self.scenario.run.stress_refinement {
            let use_lq = self.scenario.run.use_link_quality;
            embeddings
                .into_iter()
                .map(|(coords, rigid)| {
                    let ranges: Vec<WeightedRange> = usable
                        .iter()
                        .filter(|((a, b), _)| coords.contains_key(a) && coords.contains_key(b))
                        .map(|((a, b), m)| WeightedRange {
                            a: *a,
                            b: *b,
                            range: m.range,
                            weight: if use_lq { range_weight(m.lq_at_measure.value) } else { 1.0 },
                        })
                        .collect();
                    (refine_embedding(&coords, &ranges, REFINE_ITERATIONS), rigid)
                })
                .collect()
        } else {
            embeddings
        };

        let mut out = Localization::default();
        for (cid, (coords, rigid)) in embeddings.iter().enumerate() {
            out.component_sizes.push(coords.len());
            if *rigid {
                out.rigid_members.extend(coords.keys().copied());
            }
            for &n in coords.keys() {
                out.component_of.insert(n, cid);
            }
        }

        let Some((ref_id, ref_pos)) = self.reference else {
            return out;
        };
        let Some(coords) = embeddings.iter().map(|(c, _)| c).find(|c| c.contains_key(&ref_id)) else {
            return out;
        };

        let predicted: BTreeMap<NodeId, Point2> =
            coords.keys().filter_map(|&n| Some((n, self.predict(n, t, headings)?))).collect();
        let dt = self.epoch_duration();
        let weights: BTreeMap<NodeId, f64> = coords
            .keys()
            .map(|&n| {
                let age = t - self.estimate_time.get(&n).copied().unwrap_or(0.0);
                let spread = 0.3 + self.speed(n) * age.max(dt) * 0.5;
                (n, 1.0 / (spread * spread))
            })
            .collect();
        let transform = if predicted.len() >= 3 {
            align_to_prediction(coords, &predicted, &weights, Some((ref_id, ref_pos))).map(|a| a.transform)
        } else {
            let edges: Vec<(NodeId, NodeId)> = usable
                .keys()
                .copied()
                .filter(|(a, b)| coords.contains_key(a) && coords.contains_key(b))
                .collect();
            let mobile_headings: BTreeMap<NodeId, f64> = headings
                .iter()
                .filter(|(n, _)| self.is_mobile(**n))
                .map(|(n, h)| (*n, *h))
                .collect();
            rotation_from_headings(coords, &edges, &mobile_headings, self.prev_theta)
                .and_then(|theta| transform_for_reference(coords, ref_id, ref_pos, theta, false))
        };
        let Ok(transform) = transform else {
            trace!("epoch {}: no absolute transform", self.epoch);
            return out;
        };
        self.prev_theta = Some(transform.rotation_angle);
        for (&n, &p) in coords {
            out.positions.insert(n, transform.apply(p));
        }

        self.attach_non_rigid(&mut out, usable, headings, t);
        out
    }

    /// Place nodes outside the embedded component from their ranges to
    /// already placed nodes, best-constrained first.
    fn attach_non_rigid(
        &self,
        out: &mut Localization,
        usable: &BTreeMap<(NodeId, NodeId), RangeMeasurement>,
        headings: &BTreeMap<NodeId, f64>,
        t: f64,
    ) {
        let radius = self.scenario.radio.nlos_range_floor;
        loop {
            let mut cands: Vec<(usize, NodeId, Vec<(Point2, f64)>)> = self
                .trajectories
                .keys()
                .filter(|n| !out.positions.contains_key(n))
                .filter_map(|&n| {
                    let anchors: Vec<(Point2, f64)> = out
                        .positions
                        .iter()
                        .filter_map(|(&p, &pos)| usable.get(&edge_key(n, p)).map(|m| (pos, m.range)))
                        .collect();
                    (!anchors.is_empty()).then(|| (anchors.len(), n, anchors))
                })
                .collect();
            if cands.is_empty() {
                return;
            }
            cands.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut placed_any = false;
            for (_, n, anchors) in cands {
                let previous = self.predict(n, t, headings);
                let p = match anchors.len() {
                    0 => None,
                    1 => {
                        let heading = self.is_mobile(n).then(|| headings[&n]);
                        resolve_one_core(n, anchors[0].0, anchors[0].1, heading, previous)
                            .ok()
                            .map(|pl| pl.chosen)
                    }
                    k => {
                        let fix = (k >= 3 && well_spread(&anchors))
                            .then(|| trilaterate(&anchors).ok())
                            .flatten()
                            .filter(|&(_, rms)| rms <= TRILATERATION_MAX_RMS_M)
                            .map(|(p, _)| p);
                        fix.or_else(|| {
                            // Two anchors, or a line of them: fall back to the
                            // widest pair and settle the mirror ambiguity.
                            let pair = widest_pair(&anchors);
                            let unlinked: Vec<Point2> = out
                                .positions
                                .iter()
                                .filter(|(&m, _)| m != n && !self.graph.is_connected(n, m))
                                .map(|(_, &pos)| pos)
                                .collect();
                            let ctx = TwoCoreContext {
                                unlinked,
                                proximity_radius: radius,
                                previous,
                            };
                            Some(resolve_two_core(n, pair, &ctx).chosen)
                        })
                    }
                };
                if let Some(p) = p {
                    out.positions.insert(n, p);
                    placed_any = true;
                }
            }
            if !placed_any {
                return;
            }
        }
    }

    /// Run the configured number of epochs.
    pub fn run(&mut self) -> Vec<EpochRecord> {
        (0..self.scenario.run.epochs).map(|_| self.run_epoch()).collect()
    }
}

/// A multilateration fix with a worse range residual is discarded.
const TRILATERATION_MAX_RMS_M: f64 = 2.0;
/// Anchors whose spread across their principal axis is below this (RMS,
/// metres) are treated as collinear.
const MIN_ANCHOR_SPREAD_M: f64 = 1.0;

fn well_spread(anchors: &[(Point2, f64)]) -> bool {
    let n = anchors.len() as f64;
    let c = anchors.iter().fold(Point2::ORIGIN, |acc, (p, _)| acc + *p) * (1.0 / n);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (p, _) in anchors {
        let d = *p - c;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
    }
    let (sxx, sxy, syy) = (sxx / n, sxy / n, syy / n);
    let minor = 0.5 * (sxx + syy) - (0.25 * (sxx - syy).powi(2) + sxy * sxy).sqrt();
    minor.max(0.0).sqrt() >= MIN_ANCHOR_SPREAD_M
}

fn widest_pair(anchors: &[(Point2, f64)]) -> [(Point2, f64); 2] {
    let mut best = [anchors[0], anchors[anchors.len().min(2) - 1]];
    let mut span = -1.0;
    for (i, a) in anchors.iter().enumerate() {
        for b in &anchors[i + 1..] {
            let d = a.0.distance(b.0);
            if d > span {
                span = d;
                best = [*a, *b];
            }
        }
    }
    best
}

#[derive(Debug, Clone, Default)]
struct Localization {
    /// Global positions of everything placed this epoch.
    positions: BTreeMap<NodeId, Point2>,
    component_of: BTreeMap<NodeId, usize>,
    component_sizes: Vec<usize>,
    rigid_members: BTreeSet<NodeId>,
}

/// Rigidity-blind embedding: every connected measurement component of three
/// or more nodes is completed and embedded whole, whether or not its ranges
/// pin it down. The completion starts from a shortest-path embedding.
fn naive_embeddings(
    mg: &ConnectivityGraph,
    usable: &BTreeMap<(NodeId, NodeId), RangeMeasurement>,
) -> Vec<(BTreeMap<NodeId, Point2>, bool)> {
    let adj = mg.adjacency();
    let mut seen: BTreeSet<NodeId> = BTreeSet::new();
    let mut out = Vec::new();
    for &start in mg.nodes() {
        if !seen.insert(start) {
            continue;
        }
        let mut comp = vec![start];
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in adj.get(&u).into_iter().flatten() {
                if seen.insert(v) {
                    comp.push(v);
                    queue.push_back(v);
                }
            }
        }
        if comp.len() < 3 {
            continue;
        }
        comp.sort_unstable();
        let mut e = PartialEdm::new(comp.clone());
        for (i, &a) in comp.iter().enumerate() {
            for (j, &b) in comp.iter().enumerate().skip(i + 1) {
                if let Some(m) = usable.get(&edge_key(a, b)) {
                    e.set_index(i, j, m.range, m.timestamp);
                }
            }
        }
        let Ok(init) = cmds_embed(&shortest_path_fill(&e)) else {
            continue;
        };
        let init: Vec<Point2> = comp.iter().map(|n| init.coordinates[n]).collect();
        let coords = match complete_edm(&e, &init, CompletionParams::default()) {
            Ok(done) => match cmds_embed(&done.edm) {
                Ok(emb) => emb.coordinates,
                Err(_) => comp.iter().copied().zip(done.coordinates).collect(),
            },
            Err(_) => comp.iter().copied().zip(init).collect(),
        };
        out.push((coords, false));
    }
    out
}

fn epoch_rmse(nodes: &[NodeRecord]) -> (Option<f64>, Option<f64>) {
    let pairs: Vec<(Point2, Point2)> = nodes
        .iter()
        .filter(|n| n.localized && !n.is_reference)
        .filter_map(|n| Some((n.estimate?, n.truth)))
        .collect();
    if pairs.is_empty() {
        return (None, None);
    }
    let abs = (pairs.iter().map(|(e, t)| e.distance(*t).powi(2)).sum::<f64>() / pairs.len() as f64).sqrt();
    let est: Vec<Point2> = pairs.iter().map(|p| p.0).collect();
    let tru: Vec<Point2> = pairs.iter().map(|p| p.1).collect();
    let rel = match procrustes_align(&est, &tru, true) {
        Ok((_, r)) => r.min(abs),
        Err(_) => 0.0,
    };
    (Some(abs), Some(rel))
}

/// Simulate a whole scenario.
pub fn run_scenario(scenario: &Scenario) -> Result<Vec<EpochRecord>> {
    Ok(World::new(scenario)?.run())
}

/// Linear-interpolated quantile of sorted data, `q` in [0, 1].
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(quantile(&v, 0.5))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// Over every non-reference node-epoch that has an estimate, fresh or
    /// carried over.
    pub median_error: f64,
    pub mean_error: f64,
    pub p90_error: f64,
    /// Over node-epochs localized in that epoch only.
    pub median_error_localized: f64,
    /// Fraction of non-reference node-epochs localized, in [0, 1].
    pub pct_localized: f64,
    pub median_relative_rmse: f64,
    pub median_absolute_rmse: f64,
    /// (epoch, median error) pairs.
    pub error_by_epoch: Vec<(usize, f64)>,
    /// (error, cumulative fraction) at 5% steps.
    pub cdf: Vec<(f64, f64)>,
}

/// Aggregate error statistics of a run. Node-epochs without any estimate
/// are left out of the error figures but count against `pct_localized`.
pub fn evaluate_run(records: &[EpochRecord]) -> RunSummary {
    let mut all = Vec::new();
    let mut fresh = Vec::new();
    let mut total = 0usize;
    let mut localized = 0usize;
    let mut by_epoch = Vec::new();
    for r in records {
        let mut this = Vec::new();
        for n in r.nodes.iter().filter(|n| !n.is_reference) {
            total += 1;
            if n.localized {
                localized += 1;
            }
            if let Some(e) = n.error_m {
                all.push(e);
                this.push(e);
                if n.localized {
                    fresh.push(e);
                }
            }
        }
        if let Some(m) = median(&this) {
            by_epoch.push((r.epoch, m));
        }
    }
    all.sort_by(f64::total_cmp);
    let nan_if_empty = |v: &[f64], q: f64| if v.is_empty() { f64::NAN } else { quantile(v, q) };
    let rel: Vec<f64> = records.iter().filter_map(|r| r.relative_rmse).collect();
    let abs: Vec<f64> = records.iter().filter_map(|r| r.absolute_rmse).collect();
    RunSummary {
        median_error: nan_if_empty(&all, 0.5),
        mean_error: if all.is_empty() {
            f64::NAN
        } else {
            all.iter().sum::<f64>() / all.len() as f64
        },
        p90_error: nan_if_empty(&all, 0.9),
        median_error_localized: median(&fresh).unwrap_or(f64::NAN),
        pct_localized: if total == 0 { 0.0 } else { localized as f64 / total as f64 },
        median_relative_rmse: median(&rel).unwrap_or(f64::NAN),
        median_absolute_rmse: median(&abs).unwrap_or(f64::NAN),
        error_by_epoch: by_epoch,
        cdf: if all.is_empty() {
            Vec::new()
        } else {
            (0..=20).map(|k| (quantile(&all, k as f64 / 20.0), k as f64 / 20.0)).collect()
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn static_clique(n: usize) -> Scenario {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let nodes = (0..n)
            .map(|i| NodeSpec {
                id: i as NodeId,
                position: [rng.random_range(1.0..29.0), rng.random_range(1.0..29.0)],
                path: vec![],
                speed: 0.0,
                is_reference: i == 0,
                heading_deg: 0.0,
            })
            .collect();
        Scenario {
            arena: Arena {
                width: 30.0,
                height: 30.0,
            },
            walls: vec![],
            nodes,
            radio: ChannelParams::noiseless(),
            run: RunParams {
                epochs: 5,
                ..Default::default()
            },
        }
    }

    #[test]
    fn trajectory_advances_and_loops() {
        let spec = NodeSpec {
            id: 1,
            position: [0.0, 0.0],
            path: vec![[10.0, 0.0]],
            speed: 1.0,
            is_reference: false,
            heading_deg: 0.0,
        };
        let tr = Trajectory::new(&spec);
        assert!(tr.position_at(1.0).distance(Point2::new(1.0, 0.0)) < 1e-12);
        assert!((tr.heading_at(1.0) - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        // 10 m out, 10 m back, then around again.
        assert!(tr.position_at(12.0).distance(Point2::new(8.0, 0.0)) < 1e-12);
        assert!(tr.position_at(21.0).distance(Point2::new(1.0, 0.0)) < 1e-12);

        let still = Trajectory::new(&NodeSpec { speed: 0.0, ..spec });
        for t in [0.0, 5.0, 100.0] {
            assert_eq!(still.position_at(t), Point2::ORIGIN);
        }
    }

    #[test]
    fn step_mobility_reports_motion() {
        let spec = NodeSpec {
            id: 1,
            position: [0.0, 0.0],
            path: vec![[0.0, 10.0]],
            speed: 1.0,
            is_reference: false,
            heading_deg: 0.0,
        };
        let tr = BTreeMap::from([(1, Trajectory::new(&spec))]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = step_mobility(&tr, 0.0, 1.0, 0.0, &mut rng);
        assert!(s.positions[&1].distance(Point2::new(0.0, 1.0)) < 1e-12);
        assert!(s.headings[&1].abs() < 1e-12);
        assert_eq!(s.speeds[&1], 1.0);
    }

    #[test]
    fn validation_reports_field_paths() {
        let mut s = static_clique(5);
        s.nodes[3].id = s.nodes[1].id;
        s.nodes[2].speed = 5.0;
        let v = s.validate();
        assert!(v.iter().any(|x| x.to_string() == "nodes[3].id duplicates nodes[1].id"), "{v:?}");
        assert!(v.iter().any(|x| x.path == "nodes[2].speed"));
        assert!(static_clique(5).validate().is_empty());
    }

    #[test]
    fn toml_round_trip() {
        let s = Scenario::desk_scale(&DeskScale::default());
        let back = Scenario::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(back, s);
        assert!(s.validate().is_empty());
        assert_eq!(s.walls.len(), 6);
        assert_eq!(s.mobile_count(), 6);
    }

    #[test]
    fn noiseless_static_clique_is_exact() {
        let s = static_clique(12);
        for r in run_scenario(&s).unwrap() {
            for n in &r.nodes {
                assert!(n.localized, "epoch {} node {}", r.epoch, n.node_id);
                assert!(n.error_m.unwrap() < 1e-6, "epoch {} node {} err {:?}", r.epoch, n.node_id, n.error_m);
            }
        }
    }

    #[test]
    fn starved_budget_freezes_estimates() {
        let mut s = static_clique(6);
        s.run.refresh_rate = 200.0; // 5 ms epochs hold no 8 ms slot
        let recs = run_scenario(&s).unwrap();
        for r in &recs {
            assert_eq!(r.total_slots, 0);
            assert_eq!(r.schedule.sessions, 0);
            for n in r.nodes.iter().filter(|n| !n.is_reference) {
                assert!(!n.localized);
                assert_eq!(n.estimate, None, "the surveyed fix is a prior, not an estimate");
            }
        }
    }

    #[test]
    fn evaluation_statistics() {
        let rec = |errs: &[f64]| EpochRecord {
            epoch: 0,
            time: 1.0,
            nodes: errs
                .iter()
                .enumerate()
                .map(|(i, &e)| NodeRecord {
                    node_id: i as NodeId + 1,
                    truth: Point2::ORIGIN,
                    estimate: Some(Point2::new(e, 0.0)),
                    error_m: Some(e),
                    localized: true,
                    component_id: Some(0),
                    core_number: 3,
                    is_reference: false,
                })
                .collect(),
            slots_used: 0,
            total_slots: 0,
            rigid_component_sizes: vec![],
            schedule: ScheduleSummary::default(),
            absolute_rmse: None,
            relative_rmse: None,
        };
        assert_eq!(evaluate_run(&[rec(&[1.0, 1.0, 1.0])]).median_error, 1.0);
        let s = evaluate_run(&[rec(&[0.5, 1.5])]);
        assert_eq!(s.median_error, 1.0);
        assert_eq!(s.mean_error, 1.0);
        assert_eq!(s.pct_localized, 1.0);
    }
}
