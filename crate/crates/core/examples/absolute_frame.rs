//! From a relative embedding to global coordinates: the rotation comes from
//! the headings of two walking nodes, the translation from a fixed reference.
//!
//! cargo run --example absolute_frame

use std::collections::BTreeMap;

use dynoloc::absloc::{angle_to_heading, rotation_from_headings, to_absolute, AbsoluteFrame};
use dynoloc::{Point2, RigidTransform};

fn main() -> dynoloc::Result<()> {
    let truth: BTreeMap<u32, Point2> = [
        (0, Point2::new(20.0, 10.0)), // reference
        (1, Point2::new(26.0, 10.0)),
        (2, Point2::new(26.0, 18.0)),
        (3, Point2::new(18.0, 16.0)),
    ]
    .into();
    // What relative localization hands over: same shape, arbitrary pose.
    let pose = RigidTransform::new(1.1, Point2::new(-23.0, 4.0), false);
    let relative: BTreeMap<u32, Point2> = truth.iter().map(|(n, p)| (*n, pose.apply(*p))).collect();

    // Nodes 1 and 2 walk North together, so their link runs North-South.
    let north = angle_to_heading(std::f64::consts::FRAC_PI_2);
    let headings: BTreeMap<u32, f64> = [(1, north), (2, north)].into();
    let theta = rotation_from_headings(&relative, &[(1, 2)], &headings, Some(0.0))?;
    println!("rotation {:.4} rad (pose used {:.4})", theta, -1.1);

    let frame = AbsoluteFrame::new(0, truth[&0]);
    let global = to_absolute(&relative, &frame, theta, false)?;
    for (n, p) in &global {
        println!("node {n}: ({:7.3}, {:7.3})  error {:.1e} m", p.x, p.y, p.distance(truth[n]));
    }
    Ok(())
}
