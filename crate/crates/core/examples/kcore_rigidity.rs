//! Which nodes can be localized rigidly? Peel the connectivity graph to its
//! 3-core, then grow a rigid graph by trilateration admissions.
//!
//! cargo run --example kcore_rigidity

use dynoloc::metrics::LinkQuality;
use dynoloc::topology::{bootstrap_all_components, k_core_decompose, ConnectivityGraph};
use dynoloc::Point2;

fn main() {
    let pos = [
        Point2::new(0.0, 0.0),
        Point2::new(6.0, 0.0),
        Point2::new(3.0, 5.0),
        Point2::new(8.0, 6.0),
        Point2::new(1.0, 8.0),
        Point2::new(15.0, 3.0), // two links only
        Point2::new(20.0, 9.0), // a single link
    ];
    let links = [
        (0, 1), (0, 2), (0, 4), (1, 2), (1, 3), (2, 3), (2, 4), (3, 4), (0, 3),
        (3, 5), (1, 5),
        (5, 6),
    ];
    let mut g = ConnectivityGraph::with_nodes(0..pos.len() as u32);
    for (a, b) in links {
        g.set_link(a, b, LinkQuality::new(10.0, 0.0)).expect("distinct ends");
    }

    let decomp = k_core_decompose(&g);
    for (n, core) in &decomp.core_number {
        println!("node {n}: core {core}");
    }
    let range = |a: u32, b: u32| pos[a as usize].distance(pos[b as usize]);
    for rigid in bootstrap_all_components(&g, &decomp, range) {
        println!("\nrigid graph, founded on {:?}", rigid.anchor_triangle);
        for adm in &rigid.admissions {
            println!("  admitted {:?}", adm);
        }
        println!("  members {:?}", rigid.members);
    }
}
