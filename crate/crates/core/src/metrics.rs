//! Per-node mobility metric and per-link quality metric.
//!
//! The mobility metric `M` accumulates location uncertainty between
//! localizations; the link quality `L` ranks links by how likely they are to
//! deliver an accurate line-of-sight range. Both only steer edge selection,
//! so only their ordering matters.

use serde::{Deserialize, Serialize};

use crate::geometry::normalize_angle;
use crate::topology::ConnectivityGraph;

/// Added to the NLOS product so a perfect CIR does not divide by zero.
pub const LQ_EPSILON: f64 = 0.005;

/// Below this speed (m/s) and acceleration (m/s^2) a node counts as static.
pub const STATIC_THRESHOLD: f64 = 1e-3;

/// Default age after which an un-refreshed link is treated as unreachable.
pub const DEFAULT_LINK_TIMEOUT_S: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NodeTelemetry {
    /// Location uncertainty `M` since the last localization, meters.
    pub mobility: f64,
    /// Dead-reckoned speed, m/s.
    pub velocity: f64,
    /// Radians clockwise from North, in [0, 2pi).
    pub heading: f64,
    /// Time since localization, seconds.
    pub time_since_localization: f64,
    /// Simulation time of the last IMU sample, seconds.
    pub last_imu_read: f64,
}

impl NodeTelemetry {
    pub fn with_heading(heading: f64) -> Self {
        Self {
            heading: normalize_angle(heading),
            ..Self::default()
        }
    }

    pub fn is_static(&self) -> bool {
        self.velocity.abs() < STATIC_THRESHOLD
    }

    pub fn set_heading(&mut self, heading: f64) {
        self.heading = normalize_angle(heading);
    }

    /// Integrate one IMU sample.
    ///
    /// A moving node accumulates `|v| dt`; a static one follows
    /// `M = e^TsL - 1` so it is eventually re-ranged too. `M` never decreases
    /// between resets.
    pub fn update_mobility(self, accel: f64, dt: f64) -> NodeTelemetry {
        debug_assert!(dt > 0.0, "update_mobility needs dt > 0");
        let mut next = self;
        next.velocity = self.velocity + accel * dt;
        next.time_since_localization = self.time_since_localization + dt;
        next.last_imu_read = self.last_imu_read + dt;
        if next.velocity.abs() < STATIC_THRESHOLD && accel.abs() < STATIC_THRESHOLD {
            next.velocity = 0.0;
            next.mobility = self.mobility.max(static_mobility(next.time_since_localization));
        } else {
            next.mobility = self.mobility + next.velocity.abs() * dt;
        }
        next
    }

    pub fn reset_on_localize(self) -> NodeTelemetry {
        NodeTelemetry {
            mobility: 0.0,
            velocity: 0.0,
            time_since_localization: 0.0,
            ..self
        }
    }
}

/// Closed form of the static-node rule.
pub fn static_mobility(time_since_localization: f64) -> f64 {
    time_since_localization.exp_m1()
}

pub fn update_mobility(t: NodeTelemetry, accel: f64, dt: f64) -> NodeTelemetry {
    t.update_mobility(accel, dt)
}

pub fn reset_on_localize(t: NodeTelemetry) -> NodeTelemetry {
    t.reset_on_localize()
}

/// The four scalar channel-impulse-response features that feed `L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CirFeatures {
    /// Mean peak count in the window preceding the detected first path.
    pub f1: f64,
    /// Noise standard deviation over first-path amplitude.
    pub f2: f64,
    /// Peak amplitude over first-path amplitude.
    pub f3: f64,
    /// Total received power over first-path power.
    pub f4: f64,
}

impl CirFeatures {
    pub fn nlos_product(&self) -> f64 {
        self.f1 * self.f2 * self.f3 * self.f4
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LinkQuality {
    /// Zero means unreachable.
    pub value: f64,
    /// Time of the last refresh, seconds.
    pub last_update: f64,
}

impl LinkQuality {
    pub const UNREACHABLE: LinkQuality = LinkQuality {
        value: 0.0,
        last_update: 0.0,
    };

    pub fn new(value: f64, last_update: f64) -> Self {
        Self {
            value: value.max(0.0),
            last_update,
        }
    }

    pub fn is_reachable(&self) -> bool {
        self.value > 0.0
    }
}

/// `L = 1 / (eps + f1 f2 f3 f4)`, stamped with `now`.
pub fn link_quality_from_cir(c: &CirFeatures, now: f64) -> LinkQuality {
    LinkQuality::new(1.0 / (LQ_EPSILON + c.nlos_product().max(0.0)), now)
}

/// Zero every link that has not been refreshed within `threshold` seconds.
pub fn decay_stale_links(g: &ConnectivityGraph, now: f64, threshold: f64) -> ConnectivityGraph {
    let mut out = g.clone();
    for lq in out.links_mut() {
        if now - lq.last_update > threshold {
            lq.value = 0.0;
        }
    }
    out
}
