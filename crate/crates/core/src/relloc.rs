//! Relative localization: from timestamped partial ranges to a planar
//! embedding in a component-local frame.
//!
//! The rigid part goes through sequential multilateration (initial
//! coordinates), iterative EDM completion, and classical MDS. Nodes hanging
//! off the rigid part by two ranges or one range are placed afterwards with
//! [`resolve_two_core`] and [`resolve_one_core`].

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{circle_intersections, place_triangle, trilaterate, CircleIntersection, Point2};
use crate::topology::{NodeId, RigidGraph};

/// Range residual above which a multilaterated node is flagged.
pub const MULTILATERATION_FLAG_M: f64 = 0.5;

/// Symmetric distance matrix with a measured-entry mask and timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialEdm {
    ids: Vec<NodeId>,
    d: DMatrix<f64>,
    mask: DMatrix<bool>,
    timestamps: BTreeMap<(usize, usize), f64>,
}

impl PartialEdm {
    pub fn new(ids: Vec<NodeId>) -> Self {
        let n = ids.len();
        Self {
            ids,
            d: DMatrix::zeros(n, n),
            mask: DMatrix::from_fn(n, n, |i, j| i == j),
            timestamps: BTreeMap::new(),
        }
    }

    /// Fully measured matrix from coordinates.
    pub fn from_points(ids: Vec<NodeId>, points: &[Point2]) -> Self {
        let mut e = Self::new(ids);
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                e.set_index(i, j, points[i].distance(points[j]), 0.0);
            }
        }
        e
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn index_of(&self, id: NodeId) -> Option<usize> {
        self.ids.iter().position(|&x| x == id)
    }

    pub fn set_index(&mut self, i: usize, j: usize, d: f64, timestamp: f64) {
        assert!(i != j, "diagonal is fixed at zero");
        self.d[(i, j)] = d;
        self.d[(j, i)] = d;
        self.mask[(i, j)] = true;
        self.mask[(j, i)] = true;
        self.timestamps.insert((i.min(j), i.max(j)), timestamp);
    }

    pub fn set(&mut self, a: NodeId, b: NodeId, d: f64, timestamp: f64) -> Result<()> {
        let (Some(i), Some(j)) = (self.index_of(a), self.index_of(b)) else {
            return Err(Error::InvalidArgument(format!("pair ({a},{b}) not in EDM")));
        };
        if i == j {
            return Err(Error::InvalidArgument(format!("self-distance for node {a}")));
        }
        self.set_index(i, j, d, timestamp);
        Ok(())
    }

    pub fn unset_index(&mut self, i: usize, j: usize) {
        self.d[(i, j)] = 0.0;
        self.d[(j, i)] = 0.0;
        self.mask[(i, j)] = false;
        self.mask[(j, i)] = false;
        self.timestamps.remove(&(i.min(j), i.max(j)));
    }

    pub fn get_index(&self, i: usize, j: usize) -> Option<f64> {
        self.mask[(i, j)].then(|| self.d[(i, j)])
    }

    pub fn get(&self, a: NodeId, b: NodeId) -> Option<f64> {
        self.get_index(self.index_of(a)?, self.index_of(b)?)
    }

    pub fn is_measured(&self, i: usize, j: usize) -> bool {
        self.mask[(i, j)]
    }

    pub fn timestamp(&self, i: usize, j: usize) -> Option<f64> {
        self.timestamps.get(&(i.min(j), i.max(j))).copied()
    }

    pub fn is_full(&self) -> bool {
        self.mask.iter().all(|m| *m)
    }

    pub fn measured_count(&self) -> usize {
        let n = self.n();
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).filter(|&(i, j)| self.mask[(i, j)]).count()
    }

    pub fn distances(&self) -> &DMatrix<f64> {
        &self.d
    }
}

/// Component-local coordinates with the centroid at the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeEmbedding {
    pub coordinates: BTreeMap<NodeId, Point2>,
    pub component_id: usize,
    /// CMDS loss, `||X X^T - B||_F`.
    pub strain: f64,
}

impl RelativeEmbedding {
    pub fn point(&self, n: NodeId) -> Option<Point2> {
        self.coordinates.get(&n).copied()
    }

    pub fn ids(&self) -> Vec<NodeId> {
        self.coordinates.keys().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Multilateration {
    pub positions: BTreeMap<NodeId, Point2>,
    /// Members whose support ranges disagree by more than [`MULTILATERATION_FLAG_M`].
    pub flagged: Vec<NodeId>,
}

/// Coordinates for every rigid member, following the admission order.
///
/// The first founder sits at the origin, the second on +x, the third in the
/// upper half-plane; later members are least-squares circle intersections of
/// their support edges.
pub fn sequential_multilaterate(rigid: &RigidGraph) -> Result<Multilateration> {
    let Some([a, b, c]) = rigid.anchor_triangle else {
        return Err(Error::InvalidArgument("rigid graph is empty".into()));
    };
    let range = |x: NodeId, y: NodeId| {
        rigid
            .range(x, y)
            .ok_or_else(|| Error::InvalidArgument(format!("missing range ({x},{y})")))
    };
    let tri = place_triangle(range(a, b)?, range(a, c)?, range(b, c)?);
    let mut out = Multilateration::default();
    out.positions.insert(a, tri[0]);
    out.positions.insert(b, tri[1]);
    out.positions.insert(c, tri[2]);

    for adm in rigid.admissions.iter().filter(|adm| !adm.supports.is_empty()) {
        let anchors: Vec<(Point2, f64)> = adm
            .supports
            .iter()
            .map(|s| Ok((out.positions[s], range(adm.node, *s)?)))
            .collect::<Result<_>>()?;
        let (p, rms) = trilaterate(&anchors)?;
        if rms > MULTILATERATION_FLAG_M {
            out.flagged.push(adm.node);
        }
        out.positions.insert(adm.node, p);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionParams {
    pub max_iter: usize,
    pub delta_lambda: f64,
    /// Stop when a sweep improves the measured-entry stress by less than
    /// this fraction.
    pub min_relative_improvement: f64,
}

impl Default for CompletionParams {
    fn default() -> Self {
        Self {
            max_iter: 200,
            delta_lambda: 0.1,
            min_relative_improvement: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdmCompletion {
    /// Every entry present; measured entries keep their input values and
    /// timestamps.
    pub edm: PartialEdm,
    /// Refined coordinates, indexed like the EDM.
    pub coordinates: Vec<Point2>,
    pub sweeps: usize,
    /// Sum of squared residuals over measured entries at exit.
    pub stress: f64,
}

fn measured_stress(e: &PartialEdm, x: &[Point2]) -> f64 {
    let n = e.n();
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            if e.is_measured(i, j) {
                s += (x[i].distance(x[j]) - e.d[(i, j)]).powi(2);
            }
        }
    }
    s
}

/// Fill the missing entries of `e` by iteratively reconciling coordinates
/// with the measured distances.
///
/// Each sweep visits every pair once, always taking the remaining pair with
/// the largest gap between its current and target distance and moving both
/// endpoints half of `lambda` times the signed correction along their
/// difference vector. After a sweep, missing entries are refreshed from the
/// coordinates and `lambda = 1 / (1 + c * delta_lambda)`.
pub fn complete_edm(e: &PartialEdm, init_coords: &[Point2], params: CompletionParams) -> Result<EdmCompletion> {
    let n = e.n();
    if init_coords.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} initial coordinates for a {n}-node EDM",
            init_coords.len()
        )));
    }
    let mut x = init_coords.to_vec();
    let mut target = e.d.clone();
    let refresh_missing = |target: &mut DMatrix<f64>, x: &[Point2]| {
        for i in 0..n {
            for j in i + 1..n {
                if !e.is_measured(i, j) {
                    let d = x[i].distance(x[j]);
                    target[(i, j)] = d;
                    target[(j, i)] = d;
                }
            }
        }
    };
    refresh_missing(&mut target, &x);

    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let mut lambda = 1.0;
    let mut stress = measured_stress(e, &x);
    let mut sweeps = 0;

    while sweeps < params.max_iter && stress > 1e-24 {
        sweeps += 1;
        let mut remaining = vec![true; pairs.len()];
        for _ in 0..pairs.len() {
            let mut best: Option<(usize, f64)> = None;
            for (k, &(i, j)) in pairs.iter().enumerate() {
                if !remaining[k] {
                    continue;
                }
                let gap = (x[i].distance(x[j]) - target[(i, j)]).abs();
                if best.is_none_or(|(_, g)| gap > g) {
                    best = Some((k, gap));
                }
            }
            let Some((k, _)) = best else { break };
            remaining[k] = false;
            let (i, j) = pairs[k];
            let mut diff = x[i] - x[j];
            if diff.norm() < 1e-9 {
                x[j].x += 1e-6;
                diff = x[i] - x[j];
            }
            let cur = diff.norm();
            let correction = diff * ((target[(i, j)] - cur) / cur);
            x[i] += correction * (lambda / 2.0);
            x[j] -= correction * (lambda / 2.0);
        }
        refresh_missing(&mut target, &x);
        lambda = 1.0 / (1.0 + sweeps as f64 * params.delta_lambda);

        let next = measured_stress(e, &x);
        let improvement = stress - next;
        stress = next;
        if improvement < params.min_relative_improvement * (stress + improvement) {
            break;
        }
    }

    let mut edm = e.clone();
    for i in 0..n {
        for j in i + 1..n {
            if !e.is_measured(i, j) {
                let d = x[i].distance(x[j]);
                edm.d[(i, j)] = d;
                edm.d[(j, i)] = d;
                edm.mask[(i, j)] = true;
                edm.mask[(j, i)] = true;
            }
        }
    }
    Ok(EdmCompletion {
        edm,
        coordinates: x,
        sweeps,
        stress,
    })
}

/// Classical MDS into the plane.
///
/// `B = -1/2 J D^2 J` with `J = I - 11^T/n`; the two largest eigenpairs give
/// `X = Q sqrt(Lambda)`. Negative eigenvalues are discarded. One or two
/// nodes embed trivially on the x-axis.
pub fn cmds_embed(full_edm: &PartialEdm) -> Result<RelativeEmbedding> {
    let n = full_edm.n();
    if !full_edm.is_full() {
        return Err(Error::InvalidArgument("CMDS needs a complete EDM".into()));
    }
    let ids = full_edm.ids();
    match n {
        0 => {
            return Err(Error::Degenerate("empty EDM".into()));
        }
        1 => {
            return Ok(RelativeEmbedding {
                coordinates: BTreeMap::from([(ids[0], Point2::ORIGIN)]),
                component_id: 0,
                strain: 0.0,
            })
        }
        2 => {
            let h = full_edm.d[(0, 1)] / 2.0;
            return Ok(RelativeEmbedding {
                coordinates: BTreeMap::from([(ids[0], Point2::new(-h, 0.0)), (ids[1], Point2::new(h, 0.0))]),
                component_id: 0,
                strain: 0.0,
            });
        }
        _ => {}
    }

    let d2 = full_edm.d.map(|v| v * v);
    let row_means: Vec<f64> = (0..n).map(|i| d2.row(i).sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| -0.5 * (d2[(i, j)] - row_means[i] - row_means[j] + grand));

    let eig = SymmetricEigen::new(b.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&p, &q| eig.eigenvalues[q].total_cmp(&eig.eigenvalues[p]));
    let trace: f64 = (0..n).map(|i| b[(i, i)]).sum();
    let tol = 1e-9 * trace.abs().max(f64::MIN_POSITIVE);
    let (l1, l2) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    if l1 <= tol || l2 <= tol {
        return Err(Error::Degenerate(format!(
            "fewer than two positive eigenvalues ({l1:.3e}, {l2:.3e}); points are collinear"
        )));
    }
    let (s1, s2) = (l1.sqrt(), l2.sqrt());
    let q1 = eig.eigenvectors.column(order[0]);
    let q2 = eig.eigenvectors.column(order[1]);
    let pts: Vec<Point2> = (0..n).map(|i| Point2::new(q1[i] * s1, q2[i] * s2)).collect();

    let gram = DMatrix::from_fn(n, n, |i, j| pts[i].dot(pts[j]));
    let strain = (gram - b).norm();
    Ok(RelativeEmbedding {
        coordinates: ids.iter().copied().zip(pts).collect(),
        component_id: 0,
        strain,
    })
}

/// Replace missing entries by shortest-path distances over measured ones.
///
/// This is the rigidity-agnostic fill used by baselines. Pairs that stay
/// unreachable get the largest finite distance.
pub fn shortest_path_fill(e: &PartialEdm) -> PartialEdm {
    let n = e.n();
    let mut dist = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else if e.is_measured(i, j) {
            e.d[(i, j)]
        } else {
            f64::INFINITY
        }
    });
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = dist[(i, k)] + dist[(k, j)];
                if via < dist[(i, j)] {
                    dist[(i, j)] = via;
                }
            }
        }
    }
    let max_finite = dist.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
    let mut out = e.clone();
    for i in 0..n {
        for j in i + 1..n {
            if !e.is_measured(i, j) {
                let v = if dist[(i, j)].is_finite() { dist[(i, j)] } else { max_finite };
                out.d[(i, j)] = v;
                out.d[(j, i)] = v;
                out.mask[(i, j)] = true;
                out.mask[(j, i)] = true;
            }
        }
    }
    out
}

/// One measured range with its confidence weight, for [`refine_embedding`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedRange {
    pub a: NodeId,
    pub b: NodeId,
    pub range: f64,
    pub weight: f64,
}

/// Weighted stress majorization (SMACOF) over measured ranges only.
///
/// Starts from `coords` (typically the CMDS embedding of the completed
/// EDM) and minimizes sum w (|x_a - x_b| - range)^2, so low-weight ranges
/// bend the layout less than the completion step lets them. Ranges naming
/// unknown nodes are ignored. Stops after `max_iter` Guttman transforms or
/// when the stress improves by less than 1e-6 relative. The result is
/// centered. Returns the input, centered, if the weighted graph is not
/// connected.
pub fn refine_embedding(
    coords: &BTreeMap<NodeId, Point2>,
    ranges: &[WeightedRange],
    max_iter: usize,
) -> BTreeMap<NodeId, Point2> {
    let ids: Vec<NodeId> = coords.keys().copied().collect();
    let n = ids.len();
    let index: BTreeMap<NodeId, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let center = |pts: BTreeMap<NodeId, Point2>| {
        let c = Point2::centroid(&pts.values().copied().collect::<Vec<_>>()).unwrap_or(Point2::ORIGIN);
        pts.into_iter().map(|(k, p)| (k, p - c)).collect::<BTreeMap<_, _>>()
    };
    let edges: Vec<(usize, usize, f64, f64)> = ranges
        .iter()
        .filter(|r| r.weight > 0.0 && r.a != r.b)
        .filter_map(|r| Some((*index.get(&r.a)?, *index.get(&r.b)?, r.range, r.weight)))
        .collect();
    if n < 3 || edges.is_empty() {
        return center(coords.clone());
    }
    let mut v = DMatrix::<f64>::zeros(n, n);
    for &(i, j, _, w) in &edges {
        v[(i, j)] -= w;
        v[(j, i)] -= w;
        v[(i, i)] += w;
        v[(j, j)] += w;
    }
    let ones = DMatrix::<f64>::from_element(n, n, 1.0 / n as f64);
    let Some(v_plus) = (&v + &ones).try_inverse().map(|m| m - &ones) else {
        return center(coords.clone());
    };
    if !v_plus.iter().all(|x| x.is_finite()) {
        return center(coords.clone());
    }

    let mut x = DMatrix::<f64>::from_fn(n, 2, |i, k| if k == 0 { coords[&ids[i]].x } else { coords[&ids[i]].y });
    let stress = |x: &DMatrix<f64>| -> f64 {
        edges
            .iter()
            .map(|&(i, j, d, w)| {
                let dij = ((x[(i, 0)] - x[(j, 0)]).powi(2) + (x[(i, 1)] - x[(j, 1)]).powi(2)).sqrt();
                w * (dij - d).powi(2)
            })
            .sum()
    };
    let mut last = stress(&x);
    for _ in 0..max_iter {
        let mut b = DMatrix::<f64>::zeros(n, n);
        for &(i, j, d, w) in &edges {
            let dij = ((x[(i, 0)] - x[(j, 0)]).powi(2) + (x[(i, 1)] - x[(j, 1)]).powi(2)).sqrt();
            if dij > 1e-12 {
                let bij = -w * d / dij;
                b[(i, j)] += bij;
                b[(j, i)] += bij;
                b[(i, i)] -= bij;
                b[(j, j)] -= bij;
            }
        }
        let next = &v_plus * (&b * &x);
        let s = stress(&next);
        if !s.is_finite() || s > last {
            break;
        }
        x = next;
        let improved = last - s;
        last = s;
        if improved <= 1e-6 * last.max(1e-12) {
            break;
        }
    }
    center(ids.iter().enumerate().map(|(i, &id)| (id, Point2::new(x[(i, 0)], x[(i, 1)]))).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlacementMethod {
    TwoRangeDisambiguation,
    HeadingProjection,
    /// Static one-range node kept on its previous bearing from the anchor.
    PreviousBearing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonRigidPlacement {
    pub node: NodeId,
    pub candidates: Vec<Point2>,
    pub chosen: Point2,
    pub method: PlacementMethod,
    pub low_confidence: bool,
}

/// What a two-range node knows about its surroundings.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TwoCoreContext {
    /// Embedded nodes the placed node has no link to.
    pub unlinked: Vec<Point2>,
    /// A candidate closer than this to an unlinked node contradicts the
    /// missing link.
    pub proximity_radius: f64,
    pub previous: Option<Point2>,
}

/// Place a node known only by two ranges to embedded nodes.
///
/// Of the two circle intersections, one that sits within link range of a
/// node it cannot hear is dropped. If that does not decide, the candidate
/// nearer the previous position wins, then the lower (y, then x) one.
pub fn resolve_two_core(
    node: NodeId,
    anchors: [(Point2, f64); 2],
    ctx: &TwoCoreContext,
) -> NonRigidPlacement {
    let [(c1, r1), (c2, r2)] = anchors;
    match circle_intersections(c1, r1, c2, r2) {
        CircleIntersection::Disjoint(mid) => NonRigidPlacement {
            node,
            candidates: vec![mid],
            chosen: mid,
            method: PlacementMethod::TwoRangeDisambiguation,
            low_confidence: true,
        },
        CircleIntersection::Two(p, q) => {
            let contradicted =
                |c: Point2| ctx.unlinked.iter().any(|u| u.distance(c) < ctx.proximity_radius);
            let chosen = match (contradicted(p), contradicted(q)) {
                (true, false) => q,
                (false, true) => p,
                _ => match ctx.previous {
                    Some(prev) => {
                        if p.distance(prev) <= q.distance(prev) {
                            p
                        } else {
                            q
                        }
                    }
                    None => {
                        let key = |c: Point2| (c.y, c.x);
                        if key(p).partial_cmp(&key(q)) != Some(std::cmp::Ordering::Greater) {
                            p
                        } else {
                            q
                        }
                    }
                },
            };
            NonRigidPlacement {
                node,
                candidates: vec![p, q],
                chosen,
                method: PlacementMethod::TwoRangeDisambiguation,
                low_confidence: false,
            }
        }
    }
}

/// Place a node known only by one range, in a frame whose +y is North.
///
/// A moving node is assumed to travel along the edge, so its heading (or
/// the reverse) is the edge bearing; the sign closer to the previous
/// position wins, otherwise "moving away". A node without a usable heading
/// keeps its previous bearing from the anchor, if it has one.
pub fn resolve_one_core(
    node: NodeId,
    anchor: Point2,
    range: f64,
    heading: Option<f64>,
    previous: Option<Point2>,
) -> Result<NonRigidPlacement> {
    let at = |bearing: f64| anchor + Point2::new(bearing.sin(), bearing.cos()) * range;
    if let Some(h) = heading {
        let away = at(h);
        let toward = at(h + std::f64::consts::PI);
        let chosen = match previous {
            Some(prev) if toward.distance(prev) < away.distance(prev) => toward,
            _ => away,
        };
        return Ok(NonRigidPlacement {
            node,
            candidates: vec![away, toward],
            chosen,
            method: PlacementMethod::HeadingProjection,
            low_confidence: false,
        });
    }
    match previous {
        Some(prev) if prev.distance(anchor) > 1e-9 => {
            let dir = (prev - anchor) * (1.0 / prev.distance(anchor));
            let chosen = anchor + dir * range;
            Ok(NonRigidPlacement {
                node,
                candidates: vec![chosen],
                chosen,
                method: PlacementMethod::PreviousBearing,
                low_confidence: true,
            })
        }
        _ => Err(Error::Unlocalizable(node, "single range and no heading".into())),
    }
}

/// Sliding window of recent positions per node.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LocationHistory {
    window: BTreeMap<NodeId, VecDeque<Point2>>,
    capacity: usize,
}

impl LocationHistory {
    pub fn new(capacity: usize) -> Self {
        Self {
            window: BTreeMap::new(),
            capacity: capacity.max(1),
        }
    }

    pub fn push(&mut self, node: NodeId, p: Point2) {
        let q = self.window.entry(node).or_default();
        q.push_back(p);
        while q.len() > self.capacity {
            q.pop_front();
        }
    }

    pub fn clear(&mut self, node: NodeId) {
        self.window.remove(&node);
    }

    pub fn recent(&self, node: NodeId) -> Option<&VecDeque<Point2>> {
        self.window.get(&node)
    }

    pub fn entries(&self) -> &BTreeMap<NodeId, VecDeque<Point2>> {
        &self.window
    }
}

/// Per-node mean of the `window_len` most recent positions.
pub fn smooth_locations(history: &LocationHistory, window_len: usize) -> BTreeMap<NodeId, Point2> {
    let w = window_len.max(1);
    history
        .entries()
        .iter()
        .filter(|(_, q)| !q.is_empty())
        .map(|(&n, q)| {
            let take = w.min(q.len());
            let pts: Vec<Point2> = q.iter().rev().take(take).copied().collect();
            (n, Point2::centroid(&pts).expect("non-empty window"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::procrustes_align;
    use crate::topology::{bootstrap_rigid_graph, k_core_decompose, ConnectivityGraph};

    fn square() -> Vec<Point2> {
        vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(0.0, 1.0),
        ]
    }

    fn embedding_points(e: &RelativeEmbedding, ids: &[NodeId]) -> Vec<Point2> {
        ids.iter().map(|i| e.coordinates[i]).collect()
    }

    #[test]
    fn multilaterates_square_with_one_diagonal() {
        let pts = square();
        let pos: BTreeMap<NodeId, Point2> = (1..=4).zip(pts.clone()).collect();
        let g = ConnectivityGraph::from_edges(&[(1, 2), (2, 3), (3, 4), (4, 1), (1, 3)]);
        // Square plus one diagonal is only 2-degenerate; build the rigid
        // graph by hand in admission order 1..4.
        let mut rigid = RigidGraph {
            members: vec![1, 2, 3],
            anchor_triangle: Some([1, 2, 3]),
            admissions: vec![],
            ..Default::default()
        };
        for n in [1, 2, 3] {
            rigid.admissions.push(crate::topology::Admission { node: n, supports: vec![] });
        }
        for (a, b) in g.active_edges() {
            rigid.edges.insert((a, b), pos[&a].distance(pos[&b]));
        }
        // Node 4 needs three supports; add its range to 2 as an extra edge.
        rigid.edges.insert((2, 4), pos[&2].distance(pos[&4]));
        rigid.members.push(4);
        rigid.admissions.push(crate::topology::Admission { node: 4, supports: vec![1, 2, 3] });
        let m = sequential_multilaterate(&rigid).unwrap();
        let got: Vec<Point2> = (1..=4).map(|i| m.positions[&i]).collect();
        let (_, rmse) = procrustes_align(&got, &pts, true).unwrap();
        assert!(rmse < 1e-9);
        assert!(m.flagged.is_empty());
    }

    #[test]
    fn founding_triangle_frame() {
        let mut rigid = RigidGraph {
            members: vec![1, 2, 3],
            anchor_triangle: Some([1, 2, 3]),
            ..Default::default()
        };
        rigid.edges.insert((1, 2), 5.0);
        rigid.edges.insert((1, 3), 4.0);
        rigid.edges.insert((2, 3), 3.0);
        let m = sequential_multilaterate(&rigid).unwrap();
        assert_eq!(m.positions.len(), 3);
        assert_eq!(m.positions[&1], Point2::ORIGIN);
        assert_eq!(m.positions[&2], Point2::new(5.0, 0.0));
        assert!(m.positions[&3].distance(Point2::new(3.2, 2.4)) < 1e-12);
    }

    #[test]
    fn completes_missing_square_diagonal() {
        let mut e = PartialEdm::from_points(vec![1, 2, 3, 4], &square());
        e.unset_index(1, 3);
        let c = complete_edm(&e, &square(), CompletionParams::default()).unwrap();
        assert!((c.edm.get_index(1, 3).unwrap() - 2f64.sqrt()).abs() < 0.01);
        assert!(c.edm.is_full());
    }

    #[test]
    fn completion_recovers_diagonal_from_perturbed_start() {
        let mut e = PartialEdm::from_points(vec![1, 2, 3, 4], &square());
        e.unset_index(1, 3);
        let start = vec![
            Point2::new(0.05, -0.03),
            Point2::new(1.04, 0.02),
            Point2::new(0.97, 1.05),
            Point2::new(-0.02, 0.96),
        ];
        let c = complete_edm(&e, &start, CompletionParams::default()).unwrap();
        assert!((c.edm.get_index(1, 3).unwrap() - 2f64.sqrt()).abs() < 0.01, "{:?}", c.edm.get_index(1, 3));
    }

    #[test]
    fn fully_measured_edm_is_returned_untouched() {
        let pts = vec![Point2::new(0.0, 0.0), Point2::new(3.0, 0.1), Point2::new(1.0, 2.0), Point2::new(-1.0, 1.0)];
        let mut e = PartialEdm::from_points(vec![1, 2, 3, 4], &pts);
        // Perturb a measured value so it is inconsistent; it must survive.
        e.set_index(0, 1, 3.5, 7.0);
        let c = complete_edm(&e, &pts, CompletionParams::default()).unwrap();
        assert_eq!(c.edm.distances(), e.distances());
        assert_eq!(c.edm.timestamp(0, 1), Some(7.0));
    }

    #[test]
    fn cmds_recovers_unit_square() {
        let e = PartialEdm::from_points(vec![1, 2, 3, 4], &square());
        let emb = cmds_embed(&e).unwrap();
        let (_, rmse) = procrustes_align(&embedding_points(&emb, &[1, 2, 3, 4]), &square(), true).unwrap();
        assert!(rmse < 1e-9);
        assert!(emb.strain < 1e-12, "strain {}", emb.strain);
        let c = Point2::centroid(emb.coordinates.values()).unwrap();
        assert!(c.norm() < 1e-9);
    }

    #[test]
    fn cmds_rejects_collinear_points() {
        let pts = vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(3.0, 0.0)];
        let e = PartialEdm::from_points(vec![1, 2, 3], &pts);
        assert!(matches!(cmds_embed(&e), Err(Error::Degenerate(_))));
    }

    #[test]
    fn cmds_two_points() {
        let e = PartialEdm::from_points(vec![7, 9], &[Point2::ORIGIN, Point2::new(0.0, 5.0)]);
        let emb = cmds_embed(&e).unwrap();
        assert_eq!(emb.coordinates[&7], Point2::new(-2.5, 0.0));
        assert_eq!(emb.coordinates[&9], Point2::new(2.5, 0.0));
    }

    #[test]
    fn two_core_elimination_and_tie_break() {
        let anchors = [(Point2::ORIGIN, 2.5), (Point2::new(4.0, 0.0), 2.5)];
        let ctx = TwoCoreContext {
            unlinked: vec![Point2::new(2.0, 1.4)],
            proximity_radius: 1.0,
            previous: None,
        };
        let p = resolve_two_core(5, anchors, &ctx);
        assert!(p.chosen.distance(Point2::new(2.0, -1.5)) < 1e-12);
        assert!(p.candidates.contains(&p.chosen));

        let ctx = TwoCoreContext {
            unlinked: vec![],
            proximity_radius: 1.0,
            previous: Some(Point2::new(2.0, 1.2)),
        };
        let p = resolve_two_core(5, anchors, &ctx);
        assert!(p.chosen.distance(Point2::new(2.0, 1.5)) < 1e-12);

        let p = resolve_two_core(5, [(Point2::ORIGIN, 1.0), (Point2::new(4.0, 0.0), 1.0)], &TwoCoreContext::default());
        assert!(p.low_confidence);
        assert!(p.chosen.distance(Point2::new(2.0, 0.0)) < 1e-12);
    }

    #[test]
    fn one_core_projection() {
        let east = resolve_one_core(1, Point2::ORIGIN, 10.0, Some(std::f64::consts::FRAC_PI_2), None).unwrap();
        assert!(east.chosen.distance(Point2::new(10.0, 0.0)) < 1e-9);
        let north = resolve_one_core(1, Point2::ORIGIN, 10.0, Some(0.0), None).unwrap();
        assert!(north.chosen.distance(Point2::new(0.0, 10.0)) < 1e-9);
        // Heading West, but the node was last seen to the East.
        let west = resolve_one_core(
            1,
            Point2::ORIGIN,
            10.0,
            Some(3.0 * std::f64::consts::FRAC_PI_2),
            Some(Point2::new(9.8, 0.1)),
        )
        .unwrap();
        assert!(west.chosen.distance(Point2::new(10.0, 0.0)) < 1e-9);
        assert!(resolve_one_core(1, Point2::ORIGIN, 10.0, None, None).is_err());
    }

    #[test]
    fn smoothing_window() {
        let mut h = LocationHistory::new(3);
        for x in [0.0, 1.0, 2.0] {
            h.push(1, Point2::new(x, 0.0));
        }
        h.push(2, Point2::new(4.0, 4.0));
        for _ in 0..3 {
            h.push(3, Point2::new(-1.0, 2.0));
        }
        let s = smooth_locations(&h, 3);
        assert_eq!(s[&1], Point2::new(1.0, 0.0));
        assert_eq!(s[&2], Point2::new(4.0, 4.0));
        assert_eq!(s[&3], Point2::new(-1.0, 2.0));
    }

    #[test]
    fn bootstrap_then_multilaterate_noiseless() {
        let pts: Vec<Point2> = vec![
            Point2::new(0.0, 0.0),
            Point2::new(8.0, 1.0),
            Point2::new(3.0, 7.0),
            Point2::new(10.0, 9.0),
            Point2::new(-4.0, 5.0),
            Point2::new(5.0, -6.0),
        ];
        let pos: BTreeMap<NodeId, Point2> = (1..=6).zip(pts.clone()).collect();
        let mut edges = vec![];
        for a in 1..=6u32 {
            for b in a + 1..=6 {
                edges.push((a, b));
            }
        }
        let g = ConnectivityGraph::from_edges(&edges);
        let rigid = bootstrap_rigid_graph(&g, &k_core_decompose(&g), |a, b| pos[&a].distance(pos[&b])).unwrap();
        let m = sequential_multilaterate(&rigid).unwrap();
        let got: Vec<Point2> = (1..=6).map(|i| m.positions[&i]).collect();
        let (_, rmse) = procrustes_align(&got, &pts, true).unwrap();
        assert!(rmse < 1e-9);
    }

    fn all_pairs(pos: &BTreeMap<NodeId, Point2>, weight: impl Fn(NodeId, NodeId) -> f64) -> Vec<WeightedRange> {
        let ids: Vec<NodeId> = pos.keys().copied().collect();
        let mut out = vec![];
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                out.push(WeightedRange {
                    a,
                    b,
                    range: pos[&a].distance(pos[&b]),
                    weight: weight(a, b),
                });
            }
        }
        out
    }

    #[test]
    fn refinement_pulls_perturbed_layout_back() {
        let truth: BTreeMap<NodeId, Point2> = square().into_iter().enumerate().map(|(i, p)| (i as NodeId, p * 5.0)).collect();
        let ranges = all_pairs(&truth, |_, _| 1.0);
        let start: BTreeMap<NodeId, Point2> = truth
            .iter()
            .map(|(&n, &p)| (n, p + Point2::new(0.3 * (n as f64).sin(), -0.2 * (n as f64).cos())))
            .collect();
        let out = refine_embedding(&start, &ranges, 500);
        let ids: Vec<NodeId> = truth.keys().copied().collect();
        let got: Vec<Point2> = ids.iter().map(|n| out[n]).collect();
        let want: Vec<Point2> = ids.iter().map(|n| truth[n]).collect();
        let (_, rmse) = procrustes_align(&got, &want, true).unwrap();
        assert!(rmse < 1e-4, "rmse {rmse}");
        let c = Point2::centroid(got.iter()).unwrap();
        assert!(c.norm() < 1e-9);
    }

    #[test]
    fn low_weight_range_bends_layout_least() {
        // Four nodes, all ranges exact except one inflated by 2 m.
        let truth: BTreeMap<NodeId, Point2> = square().into_iter().enumerate().map(|(i, p)| (i as NodeId, p * 6.0)).collect();
        let corrupt = |ranges: &mut Vec<WeightedRange>| {
            for r in ranges.iter_mut().filter(|r| (r.a, r.b) == (0, 2)) {
                r.range += 2.0;
            }
        };
        let mut trusted = all_pairs(&truth, |_, _| 1.0);
        corrupt(&mut trusted);
        let mut discounted = all_pairs(&truth, |a, b| if (a, b) == (0, 2) { 0.01 } else { 1.0 });
        corrupt(&mut discounted);
        let err = |ranges: &[WeightedRange]| {
            let out = refine_embedding(&truth, ranges, 500);
            let ids: Vec<NodeId> = truth.keys().copied().collect();
            let got: Vec<Point2> = ids.iter().map(|n| out[n]).collect();
            let want: Vec<Point2> = ids.iter().map(|n| truth[n]).collect();
            procrustes_align(&got, &want, true).unwrap().1
        };
        assert!(err(&discounted) < 0.5 * err(&trusted));
    }

    #[test]
    fn refinement_ignores_unknown_nodes() {
        let pos: BTreeMap<NodeId, Point2> = square().into_iter().enumerate().map(|(i, p)| (i as NodeId, p)).collect();
        let mut ranges = all_pairs(&pos, |_, _| 1.0);
        ranges.push(WeightedRange {
            a: 0,
            b: 99,
            range: 3.0,
            weight: 1.0,
        });
        let out = refine_embedding(&pos, &ranges, 50);
        assert_eq!(out.len(), 4);
        assert!((out[&0].distance(out[&2]) - 2f64.sqrt()).abs() < 1e-9);
    }
}
