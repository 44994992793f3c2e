//! From component-local coordinates to the global frame.
//!
//! Global frame: +x East, +y North. Headings are clockwise from North, so a
//! heading `h` points along the math angle `pi/2 - h`. A component is
//! reflected (optionally), rotated, then translated so the reference node
//! lands on its known position.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    angle_diff, circular_mean, normalize_angle, normalize_angle_signed, weighted_procrustes_align, Point2,
    RigidTransform,
};
use crate::topology::NodeId;

/// Below this speed (m/s) a heading says nothing about the direction of
/// motion.
pub const MIN_HEADING_SPEED: f64 = 0.3;

/// Relative spread below which a point set has no usable orientation.
const ORDERING_DEGENERACY: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AbsoluteFrame {
    pub reference_node: NodeId,
    pub reference_position: Point2,
    pub per_component_transform: BTreeMap<usize, RigidTransform>,
}

impl AbsoluteFrame {
    pub fn new(reference_node: NodeId, reference_position: Point2) -> Self {
        Self {
            reference_node,
            reference_position,
            per_component_transform: BTreeMap::new(),
        }
    }
}

/// Direction of travel as a math angle (counter-clockwise from +x).
pub fn heading_to_angle(heading: f64) -> f64 {
    normalize_angle(FRAC_PI_2 - heading)
}

pub fn angle_to_heading(angle: f64) -> f64 {
    normalize_angle(FRAC_PI_2 - angle)
}

/// Rotation taking relative coordinates to the global frame, estimated from
/// the headings of mobile nodes joined by ranged edges.
///
/// Each usable edge is taken to lie along the common direction of motion
/// of its endpoints (the circular mean of their headings), which fixes its
/// global slope up to a half turn. The per-edge differences between global
/// and relative slope are averaged as axes; `prior` (typically last epoch's
/// rotation) picks between the two antipodal answers.
pub fn rotation_from_headings(
    coordinates: &BTreeMap<NodeId, Point2>,
    ranged_edges: &[(NodeId, NodeId)],
    headings: &BTreeMap<NodeId, f64>,
    prior: Option<f64>,
) -> Result<f64> {
    let mut doubled = Vec::new();
    for &(a, b) in ranged_edges {
        let (Some(ha), Some(hb), Some(pa), Some(pb)) =
            (headings.get(&a), headings.get(&b), coordinates.get(&a), coordinates.get(&b))
        else {
            continue;
        };
        let Some(global) = circular_mean(&[heading_to_angle(*ha), heading_to_angle(*hb)]) else {
            continue;
        };
        let rel = *pb - *pa;
        if rel.norm() < 1e-9 {
            continue;
        }
        doubled.push(2.0 * (global - rel.angle()));
    }
    if doubled.is_empty() {
        return Err(Error::RotationUnresolvable(
            "no ranged edge between two nodes with usable headings".into(),
        ));
    }
    let axis = circular_mean(&doubled)
        .ok_or_else(|| Error::RotationUnresolvable("edge slopes cancel out".into()))?
        / 2.0;
    let theta = match prior {
        Some(p) if angle_diff(axis + PI, p) < angle_diff(axis, p) => axis + PI,
        _ => axis,
    };
    Ok(normalize_angle_signed(theta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipCheck {
    pub flip: bool,
    pub low_confidence: bool,
}

fn is_degenerate(points: &[Point2]) -> bool {
    let Some(c) = Point2::centroid(points) else {
        return true;
    };
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in points {
        let d = *p - c;
        sxx += d.x * d.x;
        syy += d.y * d.y;
        sxy += d.x * d.y;
    }
    let trace = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    // Smallest over largest eigenvalue of the scatter matrix.
    let disc = ((sxx - syy).powi(2) + 4.0 * sxy * sxy).sqrt();
    let (l1, l2) = ((trace + disc) / 2.0, (trace - disc) / 2.0);
    points.len() < 3 || trace < 1e-18 || det <= 0.0 || l2 / l1 < ORDERING_DEGENERACY
}

/// Clockwise order of `ids` about the centroid of their points.
pub fn clockwise_order(points: &BTreeMap<NodeId, Point2>) -> Vec<NodeId> {
    let Some(c) = Point2::centroid(points.values()) else {
        return Vec::new();
    };
    let mut ids: Vec<(f64, NodeId)> = points.iter().map(|(&n, p)| (-(*p - c).angle(), n)).collect();
    ids.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    ids.into_iter().map(|(_, n)| n).collect()
}

/// Does the relative embedding need a reflection to match `expected`?
///
/// The nodes are walked in clockwise order about the relative centroid;
/// each step is then classified as clockwise or counter-clockwise about the
/// centroid of the `expected` positions. A counter-clockwise majority means
/// the two orderings are reversed. Rotation does not affect the answer.
/// Fewer than three shared nodes, or a collinear layout, yields no flip
/// with `low_confidence` set.
pub fn flip_correction(relative: &BTreeMap<NodeId, Point2>, expected: &BTreeMap<NodeId, Point2>) -> FlipCheck {
    let rel: BTreeMap<NodeId, Point2> = relative
        .iter()
        .filter(|(n, _)| expected.contains_key(n))
        .map(|(n, p)| (*n, *p))
        .collect();
    let exp: Vec<Point2> = rel.keys().map(|n| expected[n]).collect();
    let rel_pts: Vec<Point2> = rel.values().copied().collect();
    if is_degenerate(&rel_pts) || is_degenerate(&exp) {
        return FlipCheck {
            flip: false,
            low_confidence: true,
        };
    }
    let order = clockwise_order(&rel);
    let c = Point2::centroid(&exp).expect("non-empty");
    let angle_of = |n: NodeId| (expected[&n] - c).angle();
    let (mut cw, mut ccw) = (0usize, 0usize);
    for k in 0..order.len() {
        let step = normalize_angle_signed(angle_of(order[(k + 1) % order.len()]) - angle_of(order[k]));
        if step < 0.0 {
            cw += 1;
        } else if step > 0.0 {
            ccw += 1;
        }
    }
    FlipCheck {
        flip: ccw > cw,
        low_confidence: cw == ccw,
    }
}

/// Reflect (if `flip`), rotate by `theta`, then translate so that
/// `reference` lands on `reference_global`.
pub fn transform_for_reference(
    coordinates: &BTreeMap<NodeId, Point2>,
    reference: NodeId,
    reference_global: Point2,
    theta: f64,
    flip: bool,
) -> Result<RigidTransform> {
    let rel = coordinates
        .get(&reference)
        .ok_or_else(|| Error::Unlocalizable(reference, "reference node is not in the component".into()))?;
    let linear = RigidTransform::new(theta, Point2::ORIGIN, flip);
    Ok(RigidTransform::new(
        theta,
        reference_global - linear.apply_linear(*rel),
        flip,
    ))
}

/// Global coordinates for every node of a component.
pub fn to_absolute(
    coordinates: &BTreeMap<NodeId, Point2>,
    frame: &AbsoluteFrame,
    theta: f64,
    flip: bool,
) -> Result<BTreeMap<NodeId, Point2>> {
    let t = transform_for_reference(coordinates, frame.reference_node, frame.reference_position, theta, flip)?;
    Ok(apply_to_all(&t, coordinates))
}

pub fn apply_to_all(t: &RigidTransform, coordinates: &BTreeMap<NodeId, Point2>) -> BTreeMap<NodeId, Point2> {
    coordinates.iter().map(|(n, p)| (*n, t.apply(*p))).collect()
}

/// Alignment of a relative embedding against predicted global positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub transform: RigidTransform,
    pub flip: FlipCheck,
    /// Weighted RMS distance between aligned and predicted positions.
    pub residual: f64,
}

/// Align `relative` to `predicted` (global positions expected this epoch,
/// e.g. last estimates advanced along each node's heading).
///
/// Both orientations get a weighted least-squares rotation and the one with
/// the smaller weighted residual wins; the ordering vote of
/// [`flip_correction`] is kept as a diagnostic, and `low_confidence` is set
/// when it disagrees with the residuals or abstains. With `reference`, that
/// node dominates the fit and the translation pins it to its known
/// position; otherwise the translation is the least-squares one.
pub fn align_to_prediction(
    relative: &BTreeMap<NodeId, Point2>,
    predicted: &BTreeMap<NodeId, Point2>,
    weights: &BTreeMap<NodeId, f64>,
    reference: Option<(NodeId, Point2)>,
) -> Result<Alignment> {
    let mut predicted = predicted.clone();
    let mut weights = weights.clone();
    if let Some((r, global)) = reference {
        if relative.contains_key(&r) {
            let heaviest = weights.values().copied().fold(1.0, f64::max);
            predicted.insert(r, global);
            weights.insert(r, heaviest * 1e6);
        }
    }
    let shared: Vec<NodeId> = relative.keys().copied().filter(|n| predicted.contains_key(n)).collect();
    if shared.len() < 2 {
        return Err(Error::RotationUnresolvable(format!(
            "{} node(s) with a predicted position",
            shared.len()
        )));
    }
    let vote = flip_correction(relative, &predicted);
    let tgt: Vec<Point2> = shared.iter().map(|n| predicted[n]).collect();
    let w: Vec<f64> = shared.iter().map(|n| weights.get(n).copied().unwrap_or(1.0)).collect();
    let wsum: f64 = w.iter().sum();
    let fit = |flip: bool| -> Result<(RigidTransform, f64)> {
        let src: Vec<Point2> = shared
            .iter()
            .map(|n| if flip { relative[n].mirrored() } else { relative[n] })
            .collect();
        let (fit, _) = weighted_procrustes_align(&src, &tgt, Some(&w), false)?;
        let transform = match reference {
            Some((r, global)) if relative.contains_key(&r) => {
                transform_for_reference(relative, r, global, fit.rotation_angle, flip)?
            }
            _ => RigidTransform::new(fit.rotation_angle, fit.translation, flip),
        };
        let sse: f64 = shared
            .iter()
            .zip(&w)
            .map(|(n, wi)| wi * (transform.apply(relative[n]) - predicted[n]).norm_squared())
            .sum();
        Ok((transform, (sse / wsum).sqrt()))
    };
    let (keep, mirror) = (fit(false)?, fit(true)?);
    let flip = mirror.1 < keep.1;
    let (transform, residual) = if flip { mirror } else { keep };
    Ok(Alignment {
        transform,
        flip: FlipCheck {
            flip,
            low_confidence: vote.low_confidence || vote.flip != flip,
        },
        residual,
    })
}
