//! Connectivity graph, 3-core peeling, and incremental construction of a
//! rigid graph.
//!
//! A node joins the rigid graph only when it has three ranged edges into it
//! whose endpoints are not collinear, which pins it to a single planar
//! position. Links with zero quality are treated as absent throughout.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{are_collinear, place_triangle, trilaterate, Point2, DEFAULT_COLLINEAR_TOL};
use crate::metrics::LinkQuality;

pub type NodeId = u32;

/// Unordered pair key with the smaller id first.
pub fn edge_key(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConnectivityGraph {
    nodes: BTreeSet<NodeId>,
    links: BTreeMap<(NodeId, NodeId), LinkQuality>,
}

impl ConnectivityGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_nodes<I: IntoIterator<Item = NodeId>>(nodes: I) -> Self {
        Self {
            nodes: nodes.into_iter().collect(),
            links: BTreeMap::new(),
        }
    }

    /// Unit-quality graph from an edge list; handy in tests and examples.
    pub fn from_edges(edges: &[(NodeId, NodeId)]) -> Self {
        let mut g = Self::new();
        for &(a, b) in edges {
            g.set_link(a, b, LinkQuality::new(1.0, 0.0))
                .expect("edge list contains a self-loop");
        }
        g
    }

    pub fn add_node(&mut self, id: NodeId) {
        self.nodes.insert(id);
    }

    pub fn set_link(&mut self, a: NodeId, b: NodeId, lq: LinkQuality) -> Result<()> {
        if a == b {
            return Err(Error::InvalidArgument(format!("self-loop on node {a}")));
        }
        self.nodes.insert(a);
        self.nodes.insert(b);
        self.links.insert(edge_key(a, b), lq);
        Ok(())
    }

    pub fn remove_link(&mut self, a: NodeId, b: NodeId) -> Option<LinkQuality> {
        self.links.remove(&edge_key(a, b))
    }

    pub fn link(&self, a: NodeId, b: NodeId) -> Option<&LinkQuality> {
        self.links.get(&edge_key(a, b))
    }

    pub fn link_mut(&mut self, a: NodeId, b: NodeId) -> Option<&mut LinkQuality> {
        self.links.get_mut(&edge_key(a, b))
    }

    /// Link quality value, 0 when absent.
    pub fn quality(&self, a: NodeId, b: NodeId) -> f64 {
        self.link(a, b).map_or(0.0, |l| l.value)
    }

    pub fn is_connected(&self, a: NodeId, b: NodeId) -> bool {
        self.quality(a, b) > 0.0
    }

    pub fn nodes(&self) -> &BTreeSet<NodeId> {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn links(&self) -> impl Iterator<Item = ((NodeId, NodeId), &LinkQuality)> {
        self.links.iter().map(|(k, v)| (*k, v))
    }

    pub fn links_mut(&mut self) -> impl Iterator<Item = &mut LinkQuality> {
        self.links.values_mut()
    }

    /// Edges with positive quality, in key order.
    pub fn active_edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.links
            .iter()
            .filter(|(_, l)| l.is_reachable())
            .map(|(k, _)| *k)
    }

    pub fn neighbors(&self, a: NodeId) -> Vec<NodeId> {
        self.active_edges()
            .filter_map(|(u, v)| {
                if u == a {
                    Some(v)
                } else if v == a {
                    Some(u)
                } else {
                    None
                }
            })
            .collect()
    }

    pub fn degree(&self, a: NodeId) -> usize {
        self.neighbors(a).len()
    }

    pub fn adjacency(&self) -> BTreeMap<NodeId, BTreeSet<NodeId>> {
        let mut adj: BTreeMap<NodeId, BTreeSet<NodeId>> =
            self.nodes.iter().map(|&n| (n, BTreeSet::new())).collect();
        for (u, v) in self.active_edges() {
            adj.entry(u).or_default().insert(v);
            adj.entry(v).or_default().insert(u);
        }
        adj
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CoreDecomposition {
    /// 1, 2 or 3; 3 means "in the 3-core".
    pub core_number: BTreeMap<NodeId, u8>,
    /// Connected components of the 3-core, sorted by smallest member.
    pub three_core_components: Vec<BTreeSet<NodeId>>,
}

impl CoreDecomposition {
    pub fn core_of(&self, n: NodeId) -> u8 {
        self.core_number.get(&n).copied().unwrap_or(1)
    }

    pub fn three_core(&self) -> BTreeSet<NodeId> {
        self.core_number
            .iter()
            .filter(|(_, &c)| c == 3)
            .map(|(&n, _)| n)
            .collect()
    }

    pub fn component_of(&self, n: NodeId) -> Option<usize> {
        self.three_core_components.iter().position(|c| c.contains(&n))
    }
}

/// Peel degree <= 1 nodes, then degree <= 2 nodes; what is left is the 3-core.
pub fn k_core_decompose(g: &ConnectivityGraph) -> CoreDecomposition {
    let mut adj = g.adjacency();
    let mut core_number = BTreeMap::new();

    for k in 1u8..=2 {
        let mut queue: VecDeque<NodeId> = adj
            .iter()
            .filter(|(_, nb)| nb.len() <= k as usize)
            .map(|(&n, _)| n)
            .collect();
        while let Some(n) = queue.pop_front() {
            let Some(nbrs) = adj.remove(&n) else { continue };
            core_number.insert(n, k);
            for m in nbrs {
                if let Some(set) = adj.get_mut(&m) {
                    set.remove(&n);
                    if set.len() <= k as usize {
                        queue.push_back(m);
                    }
                }
            }
        }
    }

    for &n in adj.keys() {
        core_number.insert(n, 3);
    }

    let mut components = Vec::new();
    let mut seen = BTreeSet::new();
    for &start in adj.keys() {
        if !seen.insert(start) {
            continue;
        }
        let mut comp = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(n) = stack.pop() {
            for &m in &adj[&n] {
                if seen.insert(m) {
                    comp.insert(m);
                    stack.push(m);
                }
            }
        }
        components.push(comp);
    }

    CoreDecomposition {
        core_number,
        three_core_components: components,
    }
}

/// One entry of the admission log. Founders have no supports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Admission {
    pub node: NodeId,
    pub supports: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RigidGraph {
    /// Members in admission order.
    pub members: Vec<NodeId>,
    /// Ranged edges between members, meters.
    pub edges: BTreeMap<(NodeId, NodeId), f64>,
    pub anchor_triangle: Option<[NodeId; 3]>,
    pub admissions: Vec<Admission>,
}

impl RigidGraph {
    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn contains(&self, n: NodeId) -> bool {
        self.members.contains(&n)
    }

    pub fn range(&self, a: NodeId, b: NodeId) -> Option<f64> {
        self.edges.get(&edge_key(a, b)).copied()
    }

    pub fn member_set(&self) -> BTreeSet<NodeId> {
        self.members.iter().copied().collect()
    }
}

/// Accept a ranged triangle only if it satisfies the strict triangle
/// inequality. Thin-but-real triangles pass; the collinearity test decides
/// whether they are usable as geometry.
pub fn triangle_consistent(a: f64, b: f64, c: f64) -> bool {
    triangle_consistent_within(a, b, c, 0.0)
}

/// Triangle inequality with each side allowed to exceed the sum of the
/// other two by `slack`, for measured ranges.
pub fn triangle_consistent_within(a: f64, b: f64, c: f64, slack: f64) -> bool {
    a > 0.0 && b > 0.0 && c > 0.0 && a + b + slack > c && a + c + slack > b && b + c + slack > a
}

/// Triangle-inequality violation tolerated between measured ranges, m.
/// Absorbs ordinary noise on thin triangles; gross NLOS errors still fail.
pub const RANGE_SLACK_M: f64 = 1.0;

/// Best-quality non-collinear triple of edges from `candidate` into `members`.
///
/// Neighbors are ranked by quality (then id) and triples are tried in
/// lexicographic rank order, so the three strongest links win unless they
/// are collinear.
pub fn select_support(
    candidate: NodeId,
    members: &BTreeSet<NodeId>,
    g: &ConnectivityGraph,
    positions: &BTreeMap<NodeId, Point2>,
) -> Option<[NodeId; 3]> {
    support_triples(candidate, members, g, positions).next()
}

fn support_triples<'a>(
    candidate: NodeId,
    members: &BTreeSet<NodeId>,
    g: &ConnectivityGraph,
    positions: &'a BTreeMap<NodeId, Point2>,
) -> impl Iterator<Item = [NodeId; 3]> + 'a {
    let mut ranked: Vec<(f64, NodeId)> = g
        .neighbors(candidate)
        .into_iter()
        .filter(|n| *n != candidate && members.contains(n) && positions.contains_key(n))
        .map(|n| (g.quality(candidate, n), n))
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let ids: Vec<NodeId> = ranked.into_iter().map(|(_, n)| n).collect();
    let k = ids.len();
    (0..k)
        .flat_map(move |i| (i + 1..k).flat_map(move |j| (j + 1..k).map(move |l| (i, j, l))))
        .map(move |(i, j, l)| [ids[i], ids[j], ids[l]])
        .filter(move |t| {
            !are_collinear(
                positions[&t[0]],
                positions[&t[1]],
                positions[&t[2]],
                DEFAULT_COLLINEAR_TOL,
            )
        })
}

/// True iff `candidate` has >= 3 links into the rigid graph with at least
/// one non-collinear triple of endpoints.
pub fn is_rigid_admissible(
    candidate: NodeId,
    rigid: &RigidGraph,
    g: &ConnectivityGraph,
    positions: &BTreeMap<NodeId, Point2>,
) -> bool {
    if rigid.contains(candidate) {
        return false;
    }
    select_support(candidate, &rigid.member_set(), g, positions).is_some()
}

/// Rank nodes of `component` by degree inside it, descending, then by id.
fn rank_by_component_degree(g: &ConnectivityGraph, component: &BTreeSet<NodeId>) -> Vec<NodeId> {
    let mut ranked: Vec<(usize, NodeId)> = component
        .iter()
        .map(|&n| {
            let deg = g.neighbors(n).iter().filter(|m| component.contains(m)).count();
            (deg, n)
        })
        .collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    ranked.into_iter().map(|(_, n)| n).collect()
}

/// Grow a rigid graph inside one 3-core component.
///
/// Founding triangles are mutually linked, range-consistent, non-collinear
/// triples taken in rank order. From each, remaining nodes are admitted
/// greedily until a full pass admits nothing; the largest result wins
/// (earliest on ties). Triangles inside an already grown graph are skipped,
/// since they cannot reach further. `range_oracle` is asked only for the
/// edges the construction needs, at most once per pair.
pub fn bootstrap_component<F>(
    g: &ConnectivityGraph,
    component: &BTreeSet<NodeId>,
    mut range_oracle: F,
) -> Result<RigidGraph>
where
    F: FnMut(NodeId, NodeId) -> f64,
{
    let ranked = rank_by_component_degree(g, component);
    let mut cache: BTreeMap<(NodeId, NodeId), f64> = BTreeMap::new();
    let mut measure = |a: NodeId, b: NodeId| *cache.entry(edge_key(a, b)).or_insert_with(|| range_oracle(a, b));

    let mut best: Option<RigidGraph> = None;
    let mut covered: Vec<BTreeSet<NodeId>> = Vec::new();
    for i in 0..ranked.len() {
        for j in i + 1..ranked.len() {
            if !g.is_connected(ranked[i], ranked[j]) {
                continue;
            }
            for k in j + 1..ranked.len() {
                let (a, b, c) = (ranked[i], ranked[j], ranked[k]);
                if !g.is_connected(a, c) || !g.is_connected(b, c) {
                    continue;
                }
                if covered.iter().any(|s| s.contains(&a) && s.contains(&b) && s.contains(&c)) {
                    continue;
                }
                let dab = measure(a, b);
                let dac = measure(a, c);
                let dbc = measure(b, c);
                if !triangle_consistent_within(dab, dac, dbc, RANGE_SLACK_M) {
                    continue;
                }
                let tri = place_triangle(dab, dac, dbc);
                if are_collinear(tri[0], tri[1], tri[2], DEFAULT_COLLINEAR_TOL) {
                    continue;
                }
                let grown = grow_rigid(g, &ranked, [a, b, c], tri, [dab, dac, dbc], &mut measure);
                let size = grown.members.len();
                covered.push(grown.member_set());
                if best.as_ref().is_none_or(|b| size > b.members.len()) {
                    best = Some(grown);
                }
                if size == component.len() {
                    return Ok(best.expect("just set"));
                }
            }
        }
    }
    best.ok_or(Error::NoRigidSeed)
}

fn grow_rigid(
    g: &ConnectivityGraph,
    ranked: &[NodeId],
    tri_ids: [NodeId; 3],
    tri_pos: [Point2; 3],
    tri_ranges: [f64; 3],
    measure: &mut impl FnMut(NodeId, NodeId) -> f64,
) -> RigidGraph {
    let mut rigid = RigidGraph {
        members: tri_ids.to_vec(),
        anchor_triangle: Some(tri_ids),
        ..Default::default()
    };
    rigid.edges.insert(edge_key(tri_ids[0], tri_ids[1]), tri_ranges[0]);
    rigid.edges.insert(edge_key(tri_ids[0], tri_ids[2]), tri_ranges[1]);
    rigid.edges.insert(edge_key(tri_ids[1], tri_ids[2]), tri_ranges[2]);
    for &n in &tri_ids {
        rigid.admissions.push(Admission {
            node: n,
            supports: Vec::new(),
        });
    }
    let mut positions: BTreeMap<NodeId, Point2> = tri_ids.iter().copied().zip(tri_pos).collect();
    let mut members: BTreeSet<NodeId> = tri_ids.iter().copied().collect();

    loop {
        let mut admitted_any = false;
        for &cand in ranked {
            if members.contains(&cand) {
                continue;
            }
            let triples: Vec<[NodeId; 3]> = support_triples(cand, &members, g, &positions).collect();
            for triple in triples {
                let ranges: Vec<f64> = triple.iter().map(|&s| measure(cand, s)).collect();
                let consistent = (0..3).all(|x| {
                    (x + 1..3).all(|y| match rigid.range(triple[x], triple[y]) {
                        Some(d) => triangle_consistent_within(ranges[x], ranges[y], d, RANGE_SLACK_M),
                        None => ranges[x] > 0.0 && ranges[y] > 0.0,
                    })
                });
                if !consistent {
                    log::trace!("reject {cand} via {triple:?}: {ranges:?}");
                    continue;
                }
                let anchors: Vec<(Point2, f64)> = triple.iter().zip(&ranges).map(|(s, r)| (positions[s], *r)).collect();
                let Ok((pos, _)) = trilaterate(&anchors) else {
                    continue;
                };
                for (s, r) in triple.iter().zip(&ranges) {
                    rigid.edges.insert(edge_key(cand, *s), *r);
                }
                rigid.members.push(cand);
                rigid.admissions.push(Admission {
                    node: cand,
                    supports: triple.to_vec(),
                });
                positions.insert(cand, pos);
                members.insert(cand);
                admitted_any = true;
                break;
            }
        }
        if !admitted_any {
            break;
        }
    }
    rigid
}

/// Rigid graph on the 3-core component holding the best-ranked node that can
/// found one.
pub fn bootstrap_rigid_graph<F>(
    g: &ConnectivityGraph,
    decomp: &CoreDecomposition,
    mut range_oracle: F,
) -> Result<RigidGraph>
where
    F: FnMut(NodeId, NodeId) -> f64,
{
    let mut order: Vec<&BTreeSet<NodeId>> = decomp.three_core_components.iter().collect();
    order.sort_by_key(|c| std::cmp::Reverse(c.len()));
    for comp in order {
        match bootstrap_component(g, comp, &mut range_oracle) {
            Ok(r) => return Ok(r),
            Err(Error::NoRigidSeed) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::NoRigidSeed)
}

/// One rigid graph per 3-core component that can seed one.
pub fn bootstrap_all_components<F>(
    g: &ConnectivityGraph,
    decomp: &CoreDecomposition,
    mut range_oracle: F,
) -> Vec<RigidGraph>
where
    F: FnMut(NodeId, NodeId) -> f64,
{
    decomp
        .three_core_components
        .iter()
        .filter_map(|c| bootstrap_component(g, c, &mut range_oracle).ok())
        .collect()
}

/// Replay the admission log against the current graph and drop members that
/// left the 3-core or lost a support link. Losing a founder dissolves the
/// whole graph; dependents of removed nodes are re-tested in order.
pub fn purge_non_rigid(rigid: &RigidGraph, g: &ConnectivityGraph) -> RigidGraph {
    let decomp = k_core_decompose(g);
    let in_core = |n: NodeId| decomp.core_of(n) == 3;

    let Some(tri) = rigid.anchor_triangle else {
        return RigidGraph::default();
    };
    let founders_ok = tri.iter().all(|&n| in_core(n))
        && g.is_connected(tri[0], tri[1])
        && g.is_connected(tri[0], tri[2])
        && g.is_connected(tri[1], tri[2]);
    if !founders_ok {
        return RigidGraph::default();
    }

    let mut kept: BTreeSet<NodeId> = tri.iter().copied().collect();
    let mut out = RigidGraph {
        members: tri.to_vec(),
        anchor_triangle: Some(tri),
        ..Default::default()
    };
    for adm in &rigid.admissions {
        if adm.supports.is_empty() {
            out.admissions.push(adm.clone());
            continue;
        }
        let ok = in_core(adm.node)
            && adm
                .supports
                .iter()
                .all(|s| kept.contains(s) && g.is_connected(adm.node, *s));
        if ok {
            kept.insert(adm.node);
            out.members.push(adm.node);
            out.admissions.push(adm.clone());
        }
    }
    out.edges = rigid
        .edges
        .iter()
        .filter(|((a, b), _)| kept.contains(a) && kept.contains(b))
        .map(|(k, v)| (*k, *v))
        .collect();
    out
}
